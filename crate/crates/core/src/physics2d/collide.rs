//! Narrowphase collision: circle-circle, circle-bar, bar-bar (SAT with
//! reference-face clipping for a two-point manifold).

use super::{Body, Shape};
use crate::geom::Vec2;

/// One contact point between a pair of bodies.
///
/// `depth` is the signed overlap along `normal`: positive when the shapes
/// interpenetrate, and allowed down to `-tol` for touching pairs. The normal
/// points from the first body toward the second.
#[derive(Debug, Clone, Copy)]
pub struct ManifoldPoint {
    pub point: Vec2,
    pub normal: Vec2,
    pub depth: f64,
}

#[derive(Clone, Copy)]
struct Rot {
    c: f64,
    s: f64,
}

impl Rot {
    fn new(angle: f64) -> Rot {
        Rot {
            c: angle.cos(),
            s: angle.sin(),
        }
    }

    fn apply(self, v: Vec2) -> Vec2 {
        Vec2::new(self.c * v.x - self.s * v.y, self.s * v.x + self.c * v.y)
    }

    fn apply_t(self, v: Vec2) -> Vec2 {
        Vec2::new(self.c * v.x + self.s * v.y, -self.s * v.x + self.c * v.y)
    }

    fn col_x(self) -> Vec2 {
        Vec2::new(self.c, self.s)
    }

    fn col_y(self) -> Vec2 {
        Vec2::new(-self.s, self.c)
    }
}

/// Contact manifold for a body pair; empty when separated by more than `tol`.
pub fn collide(a: &Body, b: &Body, tol: f64) -> Vec<ManifoldPoint> {
    // Bounding-circle reject.
    let reach = a.shape.bounding_radius() + b.shape.bounding_radius() + tol;
    if (b.position - a.position).length_squared() > reach * reach {
        return Vec::new();
    }
    match (a.shape, b.shape) {
        (Shape::Ball { radius: ra }, Shape::Ball { radius: rb }) => {
            circle_circle(a.position, ra, b.position, rb, tol)
        }
        (Shape::Ball { radius }, Shape::Bar { .. }) => {
            let mut pts = circle_bar(a.position, radius, b, tol);
            for p in &mut pts {
                p.normal = -p.normal;
            }
            pts
        }
        (Shape::Bar { .. }, Shape::Ball { radius }) => circle_bar(b.position, radius, a, tol),
        (Shape::Bar { .. }, Shape::Bar { .. }) => bar_bar(a, b, tol),
    }
}

fn circle_circle(pa: Vec2, ra: f64, pb: Vec2, rb: f64, tol: f64) -> Vec<ManifoldPoint> {
    let delta = pb - pa;
    let dist = delta.length();
    let sep = dist - (ra + rb);
    if sep > tol {
        return Vec::new();
    }
    // Coincident centers degenerate to a fixed fallback normal.
    let normal = delta.normalized_or(Vec2::new(0.0, 1.0));
    vec![ManifoldPoint {
        point: pa + normal * (ra + sep * 0.5),
        normal,
        depth: -sep,
    }]
}

fn bar_extents(b: &Body) -> Vec2 {
    match b.shape {
        Shape::Bar {
            half_length,
            half_thickness,
        } => Vec2::new(half_length, half_thickness),
        Shape::Ball { .. } => unreachable!("bar_extents on ball"),
    }
}

/// Normal points from the bar toward the circle.
fn circle_bar(center: Vec2, radius: f64, bar: &Body, tol: f64) -> Vec<ManifoldPoint> {
    let h = bar_extents(bar);
    let rot = Rot::new(bar.angle);
    let local = rot.apply_t(center - bar.position);
    let clamped = Vec2::new(local.x.clamp(-h.x, h.x), local.y.clamp(-h.y, h.y));

    if local == clamped {
        // Center inside the bar: push out through the nearest face.
        let dx_pos = h.x - local.x;
        let dx_neg = local.x + h.x;
        let dy_pos = h.y - local.y;
        let dy_neg = local.y + h.y;
        let min = dx_pos.min(dx_neg).min(dy_pos).min(dy_neg);
        let (normal_local, face_point) = if min == dy_pos {
            (Vec2::new(0.0, 1.0), Vec2::new(local.x, h.y))
        } else if min == dy_neg {
            (Vec2::new(0.0, -1.0), Vec2::new(local.x, -h.y))
        } else if min == dx_pos {
            (Vec2::new(1.0, 0.0), Vec2::new(h.x, local.y))
        } else {
            (Vec2::new(-1.0, 0.0), Vec2::new(-h.x, local.y))
        };
        return vec![ManifoldPoint {
            point: bar.position + rot.apply(face_point),
            normal: rot.apply(normal_local),
            depth: min + radius,
        }];
    }

    let diff = local - clamped;
    let dist = diff.length();
    let sep = dist - radius;
    if sep > tol {
        return Vec::new();
    }
    let normal_local = diff / dist;
    vec![ManifoldPoint {
        point: bar.position + rot.apply(clamped),
        normal: rot.apply(normal_local),
        depth: -sep,
    }]
}

#[derive(Clone, Copy, PartialEq)]
enum Axis {
    FaceAX,
    FaceAY,
    FaceBX,
    FaceBY,
}

/// SAT over the four face normals, then reference-face clipping.
fn bar_bar(a: &Body, b: &Body, tol: f64) -> Vec<ManifoldPoint> {
    let ha = bar_extents(a);
    let hb = bar_extents(b);
    let rot_a = Rot::new(a.angle);
    let rot_b = Rot::new(b.angle);

    let dp = b.position - a.position;
    let da = rot_a.apply_t(dp);
    let db = rot_b.apply_t(dp);

    // C = Ra^T * Rb, entrywise absolute value.
    let c00 = rot_a.col_x().dot(rot_b.col_x());
    let c01 = rot_a.col_x().dot(rot_b.col_y());
    let c10 = rot_a.col_y().dot(rot_b.col_x());
    let c11 = rot_a.col_y().dot(rot_b.col_y());
    let (a00, a01, a10, a11) = (c00.abs(), c01.abs(), c10.abs(), c11.abs());

    let face_a = Vec2::new(
        da.x.abs() - ha.x - (a00 * hb.x + a01 * hb.y),
        da.y.abs() - ha.y - (a10 * hb.x + a11 * hb.y),
    );
    if face_a.x > tol || face_a.y > tol {
        return Vec::new();
    }
    let face_b = Vec2::new(
        db.x.abs() - hb.x - (a00 * ha.x + a10 * ha.y),
        db.y.abs() - hb.y - (a01 * ha.x + a11 * ha.y),
    );
    if face_b.x > tol || face_b.y > tol {
        return Vec::new();
    }

    // Pick the axis of least overlap with a small bias toward earlier axes,
    // which keeps the choice stable for near-ties.
    const REL: f64 = 0.95;
    const ABS: f64 = 0.01;
    let mut axis = Axis::FaceAX;
    let mut sep = face_a.x;
    if face_a.y > REL * sep + ABS * ha.y {
        axis = Axis::FaceAY;
        sep = face_a.y;
    }
    if face_b.x > REL * sep + ABS * hb.x {
        axis = Axis::FaceBX;
        sep = face_b.x;
    }
    if face_b.y > REL * sep + ABS * hb.y {
        axis = Axis::FaceBY;
    }

    // Reference box and its face normal in world space; the reference face
    // always points at the incident box. `db` holds A->B in B's frame, so
    // B-reference normals take the opposite sign.
    let (ref_body, ref_h, ref_rot, inc_body, inc_h, inc_rot, normal, flip) = match axis {
        Axis::FaceAX => {
            let n = if da.x > 0.0 {
                rot_a.col_x()
            } else {
                -rot_a.col_x()
            };
            (a, ha, rot_a, b, hb, rot_b, n, false)
        }
        Axis::FaceAY => {
            let n = if da.y > 0.0 {
                rot_a.col_y()
            } else {
                -rot_a.col_y()
            };
            (a, ha, rot_a, b, hb, rot_b, n, false)
        }
        Axis::FaceBX => {
            let n = if db.x > 0.0 {
                -rot_b.col_x()
            } else {
                rot_b.col_x()
            };
            (b, hb, rot_b, a, ha, rot_a, n, true)
        }
        Axis::FaceBY => {
            let n = if db.y > 0.0 {
                -rot_b.col_y()
            } else {
                rot_b.col_y()
            };
            (b, hb, rot_b, a, ha, rot_a, n, true)
        }
    };

    // Incident face: the incident-box face whose normal is most anti-parallel
    // to the reference normal.
    let n_inc = inc_rot.apply_t(normal);
    let (inc_axis_local, inc_sign) = if n_inc.x.abs() > n_inc.y.abs() {
        (Vec2::new(1.0, 0.0), -n_inc.x.signum())
    } else {
        (Vec2::new(0.0, 1.0), -n_inc.y.signum())
    };
    let face_normal_local = inc_axis_local * inc_sign;
    // Endpoints of the incident face in incident-local coordinates.
    let (e0, e1) = if face_normal_local.x != 0.0 {
        let x = face_normal_local.x * inc_h.x;
        (Vec2::new(x, -inc_h.y), Vec2::new(x, inc_h.y))
    } else {
        let y = face_normal_local.y * inc_h.y;
        (Vec2::new(-inc_h.x, y), Vec2::new(inc_h.x, y))
    };
    let mut v0 = inc_body.position + inc_rot.apply(e0);
    let mut v1 = inc_body.position + inc_rot.apply(e1);

    // Clip the incident edge against the two side planes of the reference face.
    let tangent = normal.perp();
    let ref_extent_t = {
        // Half-extent of the reference box along its face tangent.
        let t_local = ref_rot.apply_t(tangent);
        (t_local.x.abs() * ref_h.x + t_local.y.abs() * ref_h.y).abs()
    };
    let ref_center_t = tangent.dot(ref_body.position);
    for (side_normal, offset) in [
        (tangent, ref_center_t + ref_extent_t),
        (-tangent, -(ref_center_t - ref_extent_t)),
    ] {
        match clip_segment(v0, v1, side_normal, offset) {
            Some((c0, c1)) => {
                v0 = c0;
                v1 = c1;
            }
            None => return Vec::new(),
        }
    }

    // Keep clipped points at or below the reference face (within tolerance).
    let ref_extent_n = {
        let n_local = ref_rot.apply_t(normal);
        n_local.x.abs() * ref_h.x + n_local.y.abs() * ref_h.y
    };
    let front = normal.dot(ref_body.position) + ref_extent_n;
    let out_normal = if flip { -normal } else { normal };
    let mut points = Vec::with_capacity(2);
    for v in [v0, v1] {
        let separation = normal.dot(v) - front;
        if separation <= tol {
            points.push(ManifoldPoint {
                point: v - normal * (separation * 0.5),
                normal: out_normal,
                depth: -separation,
            });
        }
    }
    points
}

/// Clip segment v0-v1 to the half-plane normal·v <= offset.
fn clip_segment(v0: Vec2, v1: Vec2, normal: Vec2, offset: f64) -> Option<(Vec2, Vec2)> {
    let d0 = normal.dot(v0) - offset;
    let d1 = normal.dot(v1) - offset;
    let mut out = Vec::with_capacity(2);
    if d0 <= 0.0 {
        out.push(v0);
    }
    if d1 <= 0.0 {
        out.push(v1);
    }
    if d0 * d1 < 0.0 {
        let t = d0 / (d0 - d1);
        out.push(v0 + (v1 - v0) * t);
    }
    if out.len() >= 2 {
        Some((out[0], out[1]))
    } else {
        None
    }
}
