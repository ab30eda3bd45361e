//! Arc-length parameterized polylines.

use crate::geometry::{point_segment_distance, segment_param};
use crate::scenario::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Route {
    /// Consecutive duplicate points are dropped.
    pub fn new(points: &[Vec2]) -> Self {
        let mut pts: Vec<Vec2> = Vec::with_capacity(points.len());
        for &p in points {
            if pts.last().is_none_or(|q| (p - *q).norm() > 1e-9) {
                pts.push(p);
            }
        }
        let mut cumulative = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        for (k, p) in pts.iter().enumerate() {
            if k > 0 {
                acc += (p - pts[k - 1]).norm();
            }
            cumulative.push(acc);
        }
        Self {
            points: pts,
            cumulative,
        }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().expect("route is nonempty")
    }

    fn segment_at(&self, s: f64) -> usize {
        if self.points.len() < 2 {
            return 0;
        }
        let k = self.cumulative.partition_point(|&c| c <= s);
        k.saturating_sub(1).min(self.points.len() - 2)
    }

    /// Point at arc length `s`, clamped to the route ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let s = s.clamp(0.0, self.length());
        let k = self.segment_at(s);
        let seg = self.cumulative[k + 1] - self.cumulative[k];
        let u = if seg > 0.0 { (s - self.cumulative[k]) / seg } else { 0.0 };
        self.points[k] + (self.points[k + 1] - self.points[k]) * u
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        if self.points.len() < 2 {
            return Vec2::new(1.0, 0.0);
        }
        let k = self.segment_at(s.clamp(0.0, self.length()));
        (self.points[k + 1] - self.points[k]).normalize()
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let t = self.tangent_at(s);
        t.y.atan2(t.x)
    }

    /// Arc length of the closest route point to `p`, preferring segments
    /// whose direction agrees with `heading` so that nearby opposing lanes of
    /// the same route are not picked.
    pub fn project(&self, p: Vec2, heading: Option<f64>) -> f64 {
        self.project_with_grad(p, heading).0
    }

    /// [`Route::project`] together with the derivative of the arc length
    /// with respect to `p` (zero where the foot point sits on a vertex).
    pub fn project_with_grad(&self, p: Vec2, heading: Option<f64>) -> (f64, Vec2) {
        if self.points.len() < 2 {
            return (0.0, Vec2::zeros());
        }
        let fwd = heading.map(|h| Vec2::new(h.cos(), h.sin()));
        let mut best: Option<(f64, f64, bool, Vec2)> = None;
        for k in 0..self.points.len() - 1 {
            let (a, b) = (self.points[k], self.points[k + 1]);
            let t = segment_param(p, a, b);
            let d = (p - (a + (b - a) * t)).norm();
            let aligned = fwd.is_none_or(|f| (b - a).dot(&f) > 0.0);
            let s = self.cumulative[k] + t * (self.cumulative[k + 1] - self.cumulative[k]);
            let better = match best {
                None => true,
                Some((bd, _, baligned, _)) => (aligned && !baligned) || (aligned == baligned && d < bd),
            };
            if better {
                let grad = if t > 0.0 && t < 1.0 {
                    (b - a).normalize()
                } else {
                    Vec2::zeros()
                };
                best = Some((d, s, aligned, grad));
            }
        }
        best.map_or((0.0, Vec2::zeros()), |(_, s, _, g)| (s, g))
    }

    /// Minimum distance between the two polylines.
    pub fn min_distance_to(&self, other: &Route) -> f64 {
        let segs = |r: &Route| -> Vec<(Vec2, Vec2)> {
            if r.points.len() < 2 {
                vec![(r.points[0], r.points[0])]
            } else {
                r.points.windows(2).map(|w| (w[0], w[1])).collect()
            }
        };
        let (a, b) = (segs(self), segs(other));
        let mut best = f64::INFINITY;
        for &(p0, p1) in &a {
            for &(q0, q1) in &b {
                best = best.min(segment_distance(p0, p1, q0, q1));
            }
        }
        best
    }

    /// Resample at (at most) `spacing` meters.
    pub fn resampled(&self, spacing: f64) -> Route {
        let n = (self.length() / spacing).ceil().max(1.0) as usize;
        let pts: Vec<Vec2> = (0..=n)
            .map(|k| self.point_at(self.length() * k as f64 / n as f64))
            .collect();
        Route::new(&pts)
    }
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_intersect(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> bool {
    let d1 = cross(p1 - p0, q0 - p0);
    let d2 = cross(p1 - p0, q1 - p0);
    let d3 = cross(q1 - q0, p0 - q0);
    let d4 = cross(q1 - q0, p1 - q0);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

fn segment_distance(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> f64 {
    if segments_intersect(p0, p1, q0, q1) {
        return 0.0;
    }
    point_segment_distance(p0, q0, q1)
        .min(point_segment_distance(p1, q0, q1))
        .min(point_segment_distance(q0, p0, p1))
        .min(point_segment_distance(q1, p0, p1))
}
