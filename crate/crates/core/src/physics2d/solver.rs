//! Sequential-impulse contact solver with positional correction.

use super::collide;
use super::{SolverParams, WorldState, FREEZE_MAX, FREEZE_MIN};
use crate::geom::Vec2;

struct ContactConstraint {
    ia: usize,
    ib: usize,
    point: Vec2,
    normal: Vec2,
    depth: f64,
    /// Target separating speed after the solve; nonzero only for impacts
    /// faster than the restitution threshold.
    bounce: f64,
    normal_mass: f64,
    tangent_mass: f64,
    accumulated_normal: f64,
    accumulated_tangent: f64,
}

/// Advances the world by `dt` in place. Callers must have validated the world.
pub(super) fn step_in_place(world: &mut WorldState, dt: f64, params: &SolverParams) {
    let gravity = world.gravity;

    // Semi-implicit Euler: velocities first, then positions.
    for body in &mut world.bodies {
        if !body.is_movable() {
            continue;
        }
        body.linear_velocity += gravity * dt;
        body.position += body.linear_velocity * dt;
        body.angle += body.angular_velocity * dt;
    }

    // Freeze bodies that left the playable area; they keep their last pose.
    for body in &mut world.bodies {
        if body.is_movable()
            && !(body.position.x >= FREEZE_MIN
                && body.position.x <= FREEZE_MAX
                && body.position.y >= FREEZE_MIN
                && body.position.y <= FREEZE_MAX)
        {
            body.off_world = true;
            body.linear_velocity = Vec2::ZERO;
            body.angular_velocity = 0.0;
        }
    }

    // Narrowphase over pairs with at least one movable body.
    let n = world.bodies.len();
    let mut constraints = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&world.bodies[i], &world.bodies[j]);
            if !a.is_movable() && !b.is_movable() {
                continue;
            }
            for mp in collide::collide(a, b, 0.0) {
                let ra = mp.point - a.position;
                let rb = mp.point - b.position;
                let rna = ra.cross(mp.normal);
                let rnb = rb.cross(mp.normal);
                let kn = a.inv_mass() + b.inv_mass()
                    + rna * rna * a.inv_inertia()
                    + rnb * rnb * b.inv_inertia();
                let tangent = mp.normal.perp();
                let rta = ra.cross(tangent);
                let rtb = rb.cross(tangent);
                let kt = a.inv_mass() + b.inv_mass()
                    + rta * rta * a.inv_inertia()
                    + rtb * rtb * b.inv_inertia();
                let rel_vel = b.velocity_at(mp.point) - a.velocity_at(mp.point);
                let vn = rel_vel.dot(mp.normal);
                let bounce = if vn < -params.restitution_threshold {
                    -params.restitution * vn
                } else {
                    0.0
                };
                constraints.push(ContactConstraint {
                    ia: i,
                    ib: j,
                    point: mp.point,
                    normal: mp.normal,
                    depth: mp.depth,
                    bounce,
                    normal_mass: if kn > 0.0 { 1.0 / kn } else { 0.0 },
                    tangent_mass: if kt > 0.0 { 1.0 / kt } else { 0.0 },
                    accumulated_normal: 0.0,
                    accumulated_tangent: 0.0,
                });
            }
        }
    }

    // Velocity iterations with accumulated impulses and a Coulomb friction cone.
    for _ in 0..params.iterations {
        for c in &mut constraints {
            let (a, b) = (&world.bodies[c.ia], &world.bodies[c.ib]);
            let rel_vel = b.velocity_at(c.point) - a.velocity_at(c.point);
            let vn = rel_vel.dot(c.normal);
            let delta = -(vn - c.bounce) * c.normal_mass;
            let new_total = (c.accumulated_normal + delta).max(0.0);
            let applied = new_total - c.accumulated_normal;
            c.accumulated_normal = new_total;
            apply_impulse(world, c.ia, c.ib, c.point, c.normal * applied);

            let (a, b) = (&world.bodies[c.ia], &world.bodies[c.ib]);
            let tangent = c.normal.perp();
            let rel_vel = b.velocity_at(c.point) - a.velocity_at(c.point);
            let vt = rel_vel.dot(tangent);
            let delta_t = -vt * c.tangent_mass;
            let max_t = params.friction * c.accumulated_normal;
            let new_total_t = (c.accumulated_tangent + delta_t).clamp(-max_t, max_t);
            let applied_t = new_total_t - c.accumulated_tangent;
            c.accumulated_tangent = new_total_t;
            apply_impulse(world, c.ia, c.ib, c.point, tangent * applied_t);
        }
    }

    // Positional correction for penetration beyond the slop.
    for c in &constraints {
        let excess = c.depth - params.slop;
        if excess <= 0.0 {
            continue;
        }
        let (a, b) = (&world.bodies[c.ia], &world.bodies[c.ib]);
        let inv_sum = a.inv_mass() + b.inv_mass();
        if inv_sum <= 0.0 {
            continue;
        }
        let correction = c.normal * (params.baumgarte * excess / inv_sum);
        let inv_a = a.inv_mass();
        let inv_b = b.inv_mass();
        world.bodies[c.ia].position -= correction * inv_a;
        world.bodies[c.ib].position += correction * inv_b;
    }

    // Rest detection: bodies that stay below the sleep threshold for a
    // sustained stretch have their residual motion zeroed, so scenes come to
    // rest instead of creeping indefinitely. Accelerating bodies escape the
    // threshold before the counter fills and are never affected.
    for body in &mut world.bodies {
        if !body.is_movable() {
            continue;
        }
        let below = body.linear_velocity.length() <= params.sleep_speed
            && body.angular_velocity.abs() * body.shape.bounding_radius() <= params.sleep_speed;
        if below {
            body.low_motion_steps = body.low_motion_steps.saturating_add(1);
            if body.low_motion_steps >= params.sleep_steps {
                body.linear_velocity = Vec2::ZERO;
                body.angular_velocity = 0.0;
            }
        } else {
            body.low_motion_steps = 0;
        }
    }

    world.time += dt;
}

fn apply_impulse(world: &mut WorldState, ia: usize, ib: usize, point: Vec2, impulse: Vec2) {
    {
        let a = &mut world.bodies[ia];
        let (inv_m, inv_i) = (a.inv_mass(), a.inv_inertia());
        let r = point - a.position;
        a.linear_velocity -= impulse * inv_m;
        a.angular_velocity -= r.cross(impulse) * inv_i;
    }
    {
        let b = &mut world.bodies[ib];
        let (inv_m, inv_i) = (b.inv_mass(), b.inv_inertia());
        let r = point - b.position;
        b.linear_velocity += impulse * inv_m;
        b.angular_velocity += r.cross(impulse) * inv_i;
    }
}
