use serde::{Deserialize, Serialize};

use crate::skeleton::{Limb, NUM_JOINTS};

/// Pixel coordinate, `x` along the frame width and `y` along the height.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }

    pub fn translate(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

/// Joint positions of one frame; `None` marks a missing or occluded joint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub joints: [Option<Point>; NUM_JOINTS],
}

impl Pose {
    pub fn new(joints: [Option<Point>; NUM_JOINTS]) -> Self {
        Pose { joints }
    }

    pub fn limb(&self, limb: Limb) -> [Option<Point>; 3] {
        limb.joints().map(|j| self.joints[j])
    }

    pub fn visible_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Pose {
        Pose {
            joints: self.joints.map(|j| j.map(&f)),
        }
    }
}

/// Position of `p` relative to the segment `a`-`b`.
///
/// Returns `(t, perp)` where `t` is the projection parameter along the
/// segment (0 at `a`, 1 at `b`) and `perp` the distance from `p` to the
/// infinite line through `a` and `b`. `None` for a degenerate segment.
pub fn segment_frame(p: Point, a: Point, b: Point) -> Option<(f64, f64)> {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len_sq = dx * dx + dy * dy;
    if len_sq == 0.0 {
        return None;
    }
    let px = p.x - a.x;
    let py = p.y - a.y;
    let t = (px * dx + py * dy) / len_sq;
    let perp = (px * dy - py * dx).abs() / len_sq.sqrt();
    Some((t, perp))
}

/// Euclidean distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    match segment_frame(p, a, b) {
        None => p.distance(a),
        Some((t, _)) => p.distance(a.lerp(b, t.clamp(0.0, 1.0))),
    }
}

/// Minimum distance between two closed segments.
pub fn segment_segment_distance(a0: Point, a1: Point, b0: Point, b1: Point) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    point_segment_distance(a0, b0, b1)
        .min(point_segment_distance(a1, b0, b1))
        .min(point_segment_distance(b0, a0, a1))
        .min(point_segment_distance(b1, a0, a1))
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_intersect(a0: Point, a1: Point, b0: Point, b1: Point) -> bool {
    let d1 = cross(b0, b1, a0);
    let d2 = cross(b0, b1, a1);
    let d3 = cross(a0, a1, b0);
    let d4 = cross(a0, a1, b1);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}
