//! Static SVG of one scenario: AV paths per controller, the VRU path and the
//! clearance circle around the VRU at the closest approach.

use std::fmt::Write;

use wbcvar_core::geom::Vec2;
use wbcvar_core::sim::{ControllerKind, RunMetrics, ScenarioConfig};

use crate::output::controller_label;

const WIDTH: f64 = 900.0;
const MARGIN: f64 = 40.0;
const LEGEND: f64 = 70.0;

fn color(c: ControllerKind) -> &'static str {
    match c {
        ControllerKind::BaselineCbf => "#d62728",
        ControllerKind::WbCvarCbf => "#1f77b4",
    }
}

struct View {
    min: Vec2,
    scale: f64,
    height: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = Vec2>, pad: f64) -> Self {
        let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if !lo.x.is_finite() {
            lo = Vec2::ZERO;
            hi = Vec2::new(1.0, 1.0);
        }
        let min = Vec2::new(lo.x - pad, lo.y - pad);
        let span = Vec2::new(hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
        let scale = (WIDTH - 2.0 * MARGIN) / span.x.max(1e-9);
        Self { min, scale, height: span.y * scale + 2.0 * MARGIN + LEGEND }
    }

    fn px(&self, p: Vec2) -> (f64, f64) {
        let x = MARGIN + (p.x - self.min.x) * self.scale;
        let y = self.height - LEGEND - MARGIN - (p.y - self.min.y) * self.scale;
        (x, y)
    }
}

fn polyline(svg: &mut String, view: &View, pts: impl Iterator<Item = Vec2>, stroke: &str, dash: bool) {
    let coords: Vec<String> = pts
        .map(|p| {
            let (x, y) = view.px(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let dash = if dash { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="{stroke}" stroke-width="2"{dash} points="{}"/>"#,
        coords.join(" ")
    );
}

/// Renders the episodes of one scenario, one per controller.
pub fn scenario_svg(cfg: &ScenarioConfig, episodes: &[(ControllerKind, &RunMetrics)]) -> String {
    let all = episodes.iter().flat_map(|(_, m)| m.trajectory.iter().flat_map(|r| [r.av.pos, r.vru.pos]));
    let view = View::fit(all, cfg.clearance + 3.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{:.0}" viewBox="0 0 {WIDTH} {:.0}" font-family="sans-serif" font-size="13">"#,
        view.height, view.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="24">scenario {} (x East, y North; 1 m = {:.2} px)</text>"#, cfg.name, view.scale);

    let (cx, cy) = view.px(cfg.conflict_point);
    let _ = writeln!(svg, r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="#555"/>"##);

    for (k, (c, m)) in episodes.iter().enumerate() {
        let col = color(*c);
        polyline(&mut svg, &view, m.trajectory.iter().map(|r| r.av.pos), col, false);
        // the VRU path is the same for every controller; draw it once
        if k == 0 {
            polyline(&mut svg, &view, m.trajectory.iter().map(|r| r.vru.pos), "#2ca02c", true);
        }
        if let Some(closest) = m.trajectory.iter().min_by(|a, b| a.distance().total_cmp(&b.distance())) {
            let (vx, vy) = view.px(closest.vru.pos);
            let (ax, ay) = view.px(closest.av.pos);
            let r = cfg.clearance * view.scale;
            let _ = writeln!(
                svg,
                r#"<circle cx="{vx:.2}" cy="{vy:.2}" r="{r:.2}" fill="none" stroke="{col}" stroke-width="1.5" stroke-dasharray="3 3"/>"#
            );
            let _ = writeln!(svg, r#"<circle cx="{ax:.2}" cy="{ay:.2}" r="4" fill="{col}"/>"#);
            let _ = writeln!(svg, r##"<circle cx="{vx:.2}" cy="{vy:.2}" r="4" fill="#2ca02c"/>"##);
        }

        let ly = view.height - LEGEND + 20.0 + 18.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{MARGIN}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{col}" stroke-width="2"/>"#,
            MARGIN + 30.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{} AV, seed {}, min distance {:.2} m</text>"#,
            MARGIN + 38.0,
            ly + 4.0,
            controller_label(*c),
            m.seed,
            m.min_distance
        );
    }
    let ly = view.height - 12.0;
    let _ = writeln!(
        svg,
        r##"<text x="{MARGIN}" y="{ly:.1}" fill="#2ca02c">dashed green: VRU path; dotted circles: {} m clearance at closest approach</text>"##,
        cfg.clearance
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use wbcvar_core::sim::{run_episode, scenario_preset};

    #[test]
    fn svg_has_paths_and_clearance_circle() {
        let cfg = scenario_preset("s1").unwrap().with_controller(ControllerKind::BaselineCbf);
        let m = run_episode(&cfg, 42).unwrap();
        let svg = scenario_svg(&cfg, &[(ControllerKind::BaselineCbf, &m)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray=\"3 3\""));
        assert!(svg.contains("2.8 m clearance"));
    }
}
