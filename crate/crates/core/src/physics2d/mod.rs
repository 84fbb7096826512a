//! Deterministic fixed-timestep 2D rigid-body simulator.
//!
//! The world lives in the unit square. Bodies are balls and oriented bars;
//! black bodies are static, every other color is dynamic. Integration is
//! semi-implicit Euler at 1/60 s, followed by narrowphase collision
//! detection, a fixed number of sequential-impulse iterations with
//! restitution and Coulomb friction, and a positional correction pass.
//! All arithmetic is plain `f64` in a fixed order, so identical inputs
//! produce bit-identical outputs on the same build.

mod collide;
mod solver;

pub use collide::ManifoldPoint;

use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed simulation substep, seconds.
pub const DT: f64 = 1.0 / 60.0;
/// Substeps per second.
pub const SUBSTEPS_PER_SECOND: u32 = 60;
/// Default gravity magnitude, world units per second squared.
pub const GRAVITY: f64 = 2.0;
/// Penetration allowed before positional correction engages.
pub const SLOP: f64 = 1e-3;
/// Separation at or below which two bodies count as touching.
pub const TOUCH_TOLERANCE: f64 = 1e-4;
/// Dynamic bodies whose center leaves this box are frozen in place.
pub const FREEZE_MIN: f64 = -0.5;
pub const FREEZE_MAX: f64 = 1.5;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid rollout request: {0}")]
    InvalidRollout(String),
    #[error("scene decode error: {0}")]
    SceneDecode(String),
}

/// Solver constants. The defaults are the engine's calibrated values;
/// tests override restitution/friction to probe specific behaviors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverParams {
    pub iterations: u32,
    pub restitution: f64,
    pub friction: f64,
    pub baumgarte: f64,
    pub slop: f64,
    /// Normal approach speed below which restitution is not applied,
    /// keeping resting contacts from jittering.
    pub restitution_threshold: f64,
    /// Surface speed below which a body accumulates rest credit.
    pub sleep_speed: f64,
    /// Substeps of sustained low motion before velocities are zeroed.
    pub sleep_steps: u16,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            iterations: 8,
            restitution: 0.2,
            friction: 0.5,
            baumgarte: 0.2,
            slop: SLOP,
            restitution_threshold: 0.05,
            sleep_speed: 0.015,
            sleep_steps: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyColor {
    Red,
    Green,
    Blue,
    Purple,
    Gray,
    Black,
}

impl BodyColor {
    /// Frame channel index; matches the rasterizer's channel order.
    pub fn channel(self) -> usize {
        match self {
            BodyColor::Red => 0,
            BodyColor::Green => 1,
            BodyColor::Blue => 2,
            BodyColor::Purple => 3,
            BodyColor::Gray => 4,
            BodyColor::Black => 5,
        }
    }

    /// Black bodies are static; every other color is dynamic.
    pub fn is_dynamic(self) -> bool {
        !matches!(self, BodyColor::Black)
    }

    pub fn from_channel(c: usize) -> Option<BodyColor> {
        Some(match c {
            0 => BodyColor::Red,
            1 => BodyColor::Green,
            2 => BodyColor::Blue,
            3 => BodyColor::Purple,
            4 => BodyColor::Gray,
            5 => BodyColor::Black,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Ball { radius: f64 },
    Bar { half_length: f64, half_thickness: f64 },
}

impl Shape {
    pub fn area(&self) -> f64 {
        match *self {
            Shape::Ball { radius } => std::f64::consts::PI * radius * radius,
            Shape::Bar {
                half_length,
                half_thickness,
            } => 4.0 * half_length * half_thickness,
        }
    }

    /// Loose radius of a circle containing the shape, for broadphase culling.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Ball { radius } => radius,
            Shape::Bar {
                half_length,
                half_thickness,
            } => (half_length * half_length + half_thickness * half_thickness).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub id: u32,
    pub shape: Shape,
    pub color: BodyColor,
    pub dynamic: bool,
    pub position: Vec2,
    pub angle: f64,
    pub linear_velocity: Vec2,
    pub angular_velocity: f64,
    /// Set once the center leaves the freeze box; the body then keeps its
    /// last pose and no longer participates in dynamics.
    #[serde(default)]
    pub off_world: bool,
    /// Consecutive substeps spent below the sleep threshold; bookkeeping for
    /// the solver's rest detection, not part of the scene schema.
    #[serde(skip)]
    pub low_motion_steps: u16,
}

impl Body {
    /// Body at rest with dynamics derived from the color.
    pub fn new(id: u32, shape: Shape, color: BodyColor, position: Vec2, angle: f64) -> Body {
        Body {
            id,
            shape,
            color,
            dynamic: color.is_dynamic(),
            position,
            angle,
            linear_velocity: Vec2::ZERO,
            angular_velocity: 0.0,
            off_world: false,
            low_motion_steps: 0,
        }
    }

    /// Mass from area at unit density.
    pub fn mass(&self) -> f64 {
        self.shape.area()
    }

    /// Moment of inertia about the center of mass.
    pub fn inertia(&self) -> f64 {
        let m = self.mass();
        match self.shape {
            Shape::Ball { radius } => 0.5 * m * radius * radius,
            Shape::Bar {
                half_length,
                half_thickness,
            } => m * (half_length * half_length + half_thickness * half_thickness) / 3.0,
        }
    }

    pub fn is_movable(&self) -> bool {
        self.dynamic && !self.off_world
    }

    pub fn inv_mass(&self) -> f64 {
        if self.is_movable() {
            1.0 / self.mass()
        } else {
            0.0
        }
    }

    pub fn inv_inertia(&self) -> f64 {
        if self.is_movable() {
            1.0 / self.inertia()
        } else {
            0.0
        }
    }

    /// Velocity of the material point at world position `p`.
    pub fn velocity_at(&self, p: Vec2) -> Vec2 {
        let r = p - self.position;
        self.linear_velocity + r.perp() * self.angular_velocity
    }
}

/// Contact between two bodies, canonically ordered by id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub body_a: u32,
    pub body_b: u32,
    pub point: Vec2,
    /// Unit normal pointing from `body_a` toward `body_b`.
    pub normal: Vec2,
    /// Overlap depth; zero for pairs within touch tolerance but not overlapping.
    pub penetration: f64,
}

impl Contact {
    pub fn involves(&self, a: u32, b: u32) -> bool {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.body_a == lo && self.body_b == hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub gravity: Vec2,
    pub bodies: Vec<Body>,
}

impl WorldState {
    pub fn new(bodies: Vec<Body>) -> WorldState {
        WorldState {
            time: 0.0,
            gravity: Vec2::new(0.0, -GRAVITY),
            bodies,
        }
    }

    pub fn body(&self, id: u32) -> Option<&Body> {
        self.bodies.iter().find(|b| b.id == id)
    }

    pub fn next_body_id(&self) -> u32 {
        self.bodies.last().map(|b| b.id + 1).unwrap_or(0)
    }

    /// Checks the structural invariants: strictly increasing ids, positive
    /// shape extents, and the color/static rule.
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let mut prev: Option<u32> = None;
        for b in &self.bodies {
            if let Some(p) = prev {
                if b.id <= p {
                    return Err(PhysicsError::InvalidWorld(format!(
                        "body ids must be strictly increasing (saw {} after {})",
                        b.id, p
                    )));
                }
            }
            prev = Some(b.id);
            match b.shape {
                Shape::Ball { radius } => {
                    if !(radius > 0.0) {
                        return Err(PhysicsError::InvalidWorld(format!(
                            "body {} has nonpositive radius",
                            b.id
                        )));
                    }
                }
                Shape::Bar {
                    half_length,
                    half_thickness,
                } => {
                    if !(half_length > 0.0 && half_thickness > 0.0) {
                        return Err(PhysicsError::InvalidWorld(format!(
                            "body {} has nonpositive bar extents",
                            b.id
                        )));
                    }
                }
            }
            if b.dynamic != b.color.is_dynamic() {
                return Err(PhysicsError::InvalidWorld(format!(
                    "body {} dynamic flag contradicts color {:?}",
                    b.id, b.color
                )));
            }
        }
        Ok(())
    }
}

/// One simulation substep with default solver parameters.
pub fn step(world: &WorldState, dt: f64) -> Result<WorldState, PhysicsError> {
    step_with_params(world, dt, &SolverParams::default())
}

/// One simulation substep with explicit solver parameters.
pub fn step_with_params(
    world: &WorldState,
    dt: f64,
    params: &SolverParams,
) -> Result<WorldState, PhysicsError> {
    world.validate()?;
    let mut next = world.clone();
    solver::step_in_place(&mut next, dt, params);
    Ok(next)
}

/// Rollout of `duration` seconds sampled at `fps`, stepping internally at 1/60 s.
pub struct Rollout {
    /// `1 + duration * fps` states; index 0 is the input state.
    pub states: Vec<WorldState>,
    /// Contacts at every substep instant, including the initial one
    /// (`1 + duration * 60` entries).
    pub substep_contacts: Vec<Vec<Contact>>,
}

impl Rollout {
    /// Per-substep flags for whether the two given bodies touch.
    pub fn pair_flags(&self, a: u32, b: u32) -> Vec<bool> {
        self.substep_contacts
            .iter()
            .map(|cs| cs.iter().any(|c| c.involves(a, b)))
            .collect()
    }
}

pub fn rollout(world: &WorldState, duration: f64, fps: u32) -> Result<Rollout, PhysicsError> {
    rollout_with_params(world, duration, fps, &SolverParams::default())
}

pub fn rollout_with_params(
    world: &WorldState,
    duration: f64,
    fps: u32,
    params: &SolverParams,
) -> Result<Rollout, PhysicsError> {
    if fps == 0 || SUBSTEPS_PER_SECOND % fps != 0 {
        return Err(PhysicsError::InvalidRollout(format!(
            "fps {fps} must divide {SUBSTEPS_PER_SECOND}"
        )));
    }
    let n_samples_f = duration * fps as f64;
    let n_samples = n_samples_f.round() as u64;
    if duration < 0.0 || (n_samples_f - n_samples as f64).abs() > 1e-9 {
        return Err(PhysicsError::InvalidRollout(format!(
            "duration {duration} must be a nonnegative multiple of 1/{fps}"
        )));
    }
    world.validate()?;

    let stride = (SUBSTEPS_PER_SECOND / fps) as u64;
    let n_substeps = n_samples * stride;
    let mut current = world.clone();
    let mut states = Vec::with_capacity(1 + n_samples as usize);
    let mut contacts = Vec::with_capacity(1 + n_substeps as usize);
    states.push(current.clone());
    contacts.push(detect_contacts_unchecked(&current));
    for i in 1..=n_substeps {
        solver::step_in_place(&mut current, DT, params);
        contacts.push(detect_contacts_unchecked(&current));
        if i % stride == 0 {
            states.push(current.clone());
        }
    }
    Ok(Rollout {
        states,
        substep_contacts: contacts,
    })
}

/// All touching or overlapping pairs, ordered by (min id, max id).
pub fn detect_contacts(world: &WorldState) -> Result<Vec<Contact>, PhysicsError> {
    world.validate()?;
    Ok(detect_contacts_unchecked(world))
}

fn detect_contacts_unchecked(world: &WorldState) -> Vec<Contact> {
    let mut out = Vec::new();
    for i in 0..world.bodies.len() {
        for j in (i + 1)..world.bodies.len() {
            let a = &world.bodies[i];
            let b = &world.bodies[j];
            let points = collide::collide(a, b, TOUCH_TOLERANCE);
            // One contact per pair: keep the deepest manifold point.
            if let Some(best) = points.iter().max_by(|p, q| p.depth.total_cmp(&q.depth)) {
                out.push(Contact {
                    body_a: a.id,
                    body_b: b.id,
                    point: best.point,
                    normal: best.normal,
                    penetration: best.depth.max(0.0),
                });
            }
        }
    }
    out
}

/// Maximum interpenetration depth between two bodies (zero when separated).
pub fn max_overlap(a: &Body, b: &Body) -> f64 {
    collide::collide(a, b, 0.0)
        .iter()
        .map(|p| p.depth)
        .fold(0.0, f64::max)
}

/// Whether two bodies touch under the same tolerance `detect_contacts` uses.
pub fn touching(a: &Body, b: &Body) -> bool {
    !collide::collide(a, b, TOUCH_TOLERANCE).is_empty()
}

/// Touching test with an explicit separation tolerance.
pub fn touching_within(a: &Body, b: &Body, tol: f64) -> bool {
    !collide::collide(a, b, tol).is_empty()
}

/// Signed overlap depth of the deepest manifold point within `tol`
/// (negative when separated), or `None` when farther apart than `tol`.
pub fn pair_depth(a: &Body, b: &Body, tol: f64) -> Option<f64> {
    collide::collide(a, b, tol)
        .iter()
        .map(|p| p.depth)
        .max_by(|x, y| x.total_cmp(y))
}

/// Versioned JSON scene interchange ("scene_v1").
#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    version: String,
    time: f64,
    gravity: Vec2,
    bodies: Vec<Body>,
}

pub const SCENE_VERSION: &str = "scene_v1";

pub fn scene_to_json(world: &WorldState) -> String {
    let file = SceneFile {
        version: SCENE_VERSION.to_string(),
        time: world.time,
        gravity: world.gravity,
        bodies: world.bodies.clone(),
    };
    serde_json::to_string_pretty(&file).expect("scene serialization cannot fail")
}

pub fn scene_from_json(text: &str) -> Result<WorldState, PhysicsError> {
    let file: SceneFile =
        serde_json::from_str(text).map_err(|e| PhysicsError::SceneDecode(e.to_string()))?;
    if file.version != SCENE_VERSION {
        return Err(PhysicsError::SceneDecode(format!(
            "unsupported scene version {:?}",
            file.version
        )));
    }
    let world = WorldState {
        time: file.time,
        gravity: file.gravity,
        bodies: file.bodies,
    };
    world.validate()?;
    Ok(world)
}
