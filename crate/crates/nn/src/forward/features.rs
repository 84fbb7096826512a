//! Object feature vectors and their reconstruction back into scene terms.

use super::ForwardError;
use tumble_core::geom::Vec2;
use tumble_core::physics2d::{Body, BodyColor, Shape, WorldState};
use tumble_core::tasks::GOAL_BAR_HALF_THICKNESS;

/// Feature vector width per object.
pub const FEAT: usize = 14;

/// Column layout within the 14-d object feature vector.
pub mod col {
    pub const TYPE_BALL: usize = 0;
    pub const TYPE_BAR: usize = 1;
    pub const COLOR0: usize = 2; // red, green, blue, purple, gray, black
    pub const X: usize = 8;
    pub const Y: usize = 9;
    pub const SIZE: usize = 10;
    pub const COS: usize = 11;
    pub const SIN: usize = 12;
    pub const DYNAMIC: usize = 13;
}

/// One object's state: type and color one-hots, position, size, orientation,
/// and a dynamic flag. `size` is the radius for balls and the half-length
/// for bars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState(pub [f64; FEAT]);

impl ObjectState {
    pub fn from_body(body: &Body) -> ObjectState {
        let mut f = [0.0; FEAT];
        match body.shape {
            Shape::Ball { radius } => {
                f[col::TYPE_BALL] = 1.0;
                f[col::SIZE] = radius;
            }
            Shape::Bar { half_length, .. } => {
                f[col::TYPE_BAR] = 1.0;
                f[col::SIZE] = half_length;
            }
        }
        f[col::COLOR0 + body.color.channel()] = 1.0;
        f[col::X] = body.position.x;
        f[col::Y] = body.position.y;
        f[col::COS] = body.angle.cos();
        f[col::SIN] = body.angle.sin();
        f[col::DYNAMIC] = if body.dynamic { 1.0 } else { 0.0 };
        ObjectState(f)
    }

    pub fn is_ball(&self) -> bool {
        self.0[col::TYPE_BALL] > 0.5
    }

    pub fn is_bar(&self) -> bool {
        self.0[col::TYPE_BAR] > 0.5
    }

    pub fn is_dynamic(&self) -> bool {
        self.0[col::DYNAMIC] > 0.5
    }

    pub fn x(&self) -> f64 {
        self.0[col::X]
    }

    pub fn y(&self) -> f64 {
        self.0[col::Y]
    }

    pub fn size(&self) -> f64 {
        self.0[col::SIZE]
    }

    pub fn angle(&self) -> f64 {
        self.0[col::SIN].atan2(self.0[col::COS])
    }

    pub fn color(&self) -> Option<BodyColor> {
        (0..6).find_map(|c| {
            if self.0[col::COLOR0 + c] > 0.5 {
                BodyColor::from_channel(c)
            } else {
                None
            }
        })
    }

    /// Geometric shape implied by the features. Bars use the canonical
    /// goal-bar half-thickness, which every goal-colored bar in the
    /// benchmark shares.
    pub fn implied_shape(&self) -> Shape {
        if self.is_bar() {
            Shape::Bar {
                half_length: self.size(),
                half_thickness: GOAL_BAR_HALF_THICKNESS,
            }
        } else {
            Shape::Ball {
                radius: self.size(),
            }
        }
    }

    /// Standalone body reconstruction (used by the contact oracle).
    pub fn to_body(&self, id: u32) -> Result<Body, ForwardError> {
        let color = self
            .color()
            .ok_or_else(|| ForwardError::UnsupportedBody("feature vector lacks a color".into()))?;
        let mut body = Body::new(
            id,
            self.implied_shape(),
            color,
            Vec2::new(self.x(), self.y()),
            self.angle(),
        );
        body.dynamic = self.is_dynamic();
        Ok(body)
    }
}

/// Deterministic per-body encoding, ordered by body id.
pub fn featurize(world: &WorldState) -> Vec<ObjectState> {
    world.bodies.iter().map(ObjectState::from_body).collect()
}

/// Scene whose body poses are overridden by predicted object states.
/// Shapes, colors, and ids come from the base world, so rendering does not
/// depend on reconstructing extents from features.
pub fn world_with_predicted_poses(
    base: &WorldState,
    states: &[ObjectState],
) -> Result<WorldState, ForwardError> {
    if base.bodies.len() != states.len() {
        return Err(ForwardError::Context(format!(
            "prediction has {} objects, world has {}",
            states.len(),
            base.bodies.len()
        )));
    }
    let mut world = base.clone();
    for (body, state) in world.bodies.iter_mut().zip(states) {
        body.position = Vec2::new(state.x(), state.y());
        body.angle = state.angle();
        body.linear_velocity = Vec2::ZERO;
        body.angular_velocity = 0.0;
    }
    Ok(world)
}
