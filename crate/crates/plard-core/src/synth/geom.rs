//! Ray casting against the scene primitives: a flat ground plane roughly at
//! z = 0 and upright axis-aligned prisms standing on it.

use serde::{Deserialize, Serialize};

/// Upright rectangular prism standing on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prism {
    /// Footprint center.
    pub x: f64,
    pub y: f64,
    /// Footprint half extents along x and y.
    pub half_depth: f64,
    pub half_width: f64,
    pub height: f64,
    /// Base gray level used when rendering.
    pub shade: f64,
}

impl Prism {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (p[0] - self.x).abs() <= self.half_depth
            && (p[1] - self.y).abs() <= self.half_width
            && p[2] >= 0.0
            && p[2] <= self.height
    }
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ground,
    Road,
    /// Index into the obstacle list.
    Obstacle(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: [f64; 3],
    pub surface: Surface,
}

/// Slab intersection with a prism; returns the entry distance.
fn ray_prism(origin: [f64; 3], dir: [f64; 3], prism: &Prism) -> Option<f64> {
    let lo = [
        prism.x - prism.half_depth,
        prism.y - prism.half_width,
        0.0,
    ];
    let hi = [
        prism.x + prism.half_depth,
        prism.y + prism.half_width,
        prism.height,
    ];
    let mut t_enter = 0.0f64;
    let mut t_exit = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (t0, t1) = {
            let t0 = (lo[a] - origin[a]) * inv;
            let t1 = (hi[a] - origin[a]) * inv;
            if t0 <= t1 {
                (t0, t1)
            } else {
                (t1, t0)
            }
        };
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return None;
        }
    }
    (t_enter > 1e-9).then_some(t_enter)
}

/// First hit along a ray against ground plane plus prisms, out to `max_t`.
/// `is_road` classifies ground hits by their (x, y).
pub fn first_hit<F: Fn(f64, f64) -> bool>(
    origin: [f64; 3],
    dir: [f64; 3],
    prisms: &[Prism],
    max_t: f64,
    is_road: F,
) -> Option<Hit> {
    let mut best: Option<Hit> = None;

    if dir[2] < -1e-12 {
        let t = -origin[2] / dir[2];
        if t > 1e-9 && t <= max_t {
            let p = [
                origin[0] + t * dir[0],
                origin[1] + t * dir[1],
                0.0,
            ];
            let surface = if is_road(p[0], p[1]) {
                Surface::Road
            } else {
                Surface::Ground
            };
            best = Some(Hit {
                t,
                point: p,
                surface,
            });
        }
    }

    for (i, prism) in prisms.iter().enumerate() {
        if let Some(t) = ray_prism(origin, dir, prism) {
            if t <= max_t && best.map_or(true, |b| t < b.t) {
                best = Some(Hit {
                    t,
                    point: [
                        origin[0] + t * dir[0],
                        origin[1] + t * dir[1],
                        origin[2] + t * dir[2],
                    ],
                    surface: Surface::Obstacle(i),
                });
            }
        }
    }
    best
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(x: f64, y: f64, vertices: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = vertices.len();
    for i in 0..n {
        let (x1, y1) = vertices[i];
        let (x2, y2) = vertices[(i + 1) % n];
        if (y1 > y) != (y2 > y) {
            let t = (y - y1) / (y2 - y1);
            if x < x1 + t * (x2 - x1) {
                inside = !inside;
            }
        }
    }
    inside
}
