use alloc::vec::Vec;

use crate::error::CoreError;
use crate::geom::Vec2;

/// Polyline reference with a target speed per waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    points: Vec<Vec2>,
    speeds: Vec<f64>,
    /// Cumulative arc length at each waypoint.
    arc: Vec<f64>,
}

/// A point on the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub s: f64,
    pub pos: Vec2,
    pub heading: f64,
    pub speed: f64,
}

impl ReferencePath {
    pub fn new(waypoints: &[(Vec2, f64)]) -> Result<Self, CoreError> {
        if waypoints.len() < 2 {
            return Err(CoreError::BadPath);
        }
        let mut arc = Vec::with_capacity(waypoints.len());
        arc.push(0.0);
        for w in waypoints.windows(2) {
            let len = (w[1].0 - w[0].0).norm();
            if !(len > 0.0) {
                return Err(CoreError::BadPath);
            }
            arc.push(arc[arc.len() - 1] + len);
        }
        Ok(Self {
            points: waypoints.iter().map(|w| w.0).collect(),
            speeds: waypoints.iter().map(|w| w.1).collect(),
            arc,
        })
    }

    /// Two-point straight path.
    pub fn straight(from: Vec2, to: Vec2, speed: f64) -> Result<Self, CoreError> {
        Self::new(&[(from, speed), (to, speed)])
    }

    pub fn length(&self) -> f64 {
        self.arc[self.arc.len() - 1]
    }

    pub fn waypoints(&self) -> impl Iterator<Item = (Vec2, f64)> + '_ {
        self.points.iter().copied().zip(self.speeds.iter().copied())
    }

    fn segment_heading(&self, seg: usize) -> f64 {
        let d = self.points[seg + 1] - self.points[seg];
        libm::atan2(d.y, d.x)
    }

    /// Point at arc length `s`; beyond either end the first or last segment
    /// is extended linearly.
    pub fn at(&self, s: f64) -> PathPoint {
        let last = self.points.len() - 2;
        let seg = match self.arc.iter().position(|&a| a > s) {
            Some(0) => 0,
            Some(i) => (i - 1).min(last),
            None => last,
        };
        let len = self.arc[seg + 1] - self.arc[seg];
        let t = (s - self.arc[seg]) / len;
        let pos = self.points[seg] + (self.points[seg + 1] - self.points[seg]) * t;
        let tc = t.clamp(0.0, 1.0);
        let speed = self.speeds[seg] + (self.speeds[seg + 1] - self.speeds[seg]) * tc;
        PathPoint { s, pos, heading: self.segment_heading(seg), speed }
    }

    /// Arc length of the closest point and the signed lateral offset
    /// (positive to the left of the direction of travel).
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let last = self.points.len() - 2;
        for seg in 0..=last {
            let a = self.points[seg];
            let d = self.points[seg + 1] - a;
            let len_sq = d.norm_sq();
            let mut t = (p - a).dot(d) / len_sq;
            // the first and last segments extend to infinity
            if seg > 0 {
                t = t.max(0.0);
            }
            if seg < last {
                t = t.min(1.0);
            }
            let foot = a + d * t;
            let dist = (p - foot).norm();
            if dist < best.0 {
                let rel = p - foot;
                let lateral = (d.x * rel.y - d.y * rel.x) / libm::sqrt(len_sq);
                best = (dist, self.arc[seg] + t * libm::sqrt(len_sq), lateral);
            }
        }
        (best.1, best.2)
    }
}
