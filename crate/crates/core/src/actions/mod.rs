//! The ball-placement action space: validity, uniform sampling, simulation.

use crate::geom::Vec2;
use crate::physics2d::{
    self, max_overlap, Body, BodyColor, PhysicsError, Shape, WorldState, SLOP,
};
use crate::rng::rng_for;
use crate::tasks::{goal_satisfied, Task};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// Episode length simulated when judging an action.
pub const EPISODE_HORIZON_S: f64 = 16.0;
/// Frame rate at which rollouts are sampled for agents.
pub const EPISODE_FPS: u32 = 1;
/// Action ball radius bounds.
pub const RADIUS_MIN: f64 = 0.0125;
pub const RADIUS_MAX: f64 = 0.1;
/// Actions closer than this in every coordinate count as duplicates.
pub const DEDUP_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("action space exhausted for {task}: {found}/{requested} valid after {draws} draws")]
    ActionSpaceExhausted {
        task: String,
        requested: usize,
        found: usize,
        draws: u64,
    },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("action decode error: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    B,
    TwoB,
}

/// One placed ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBall {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// A tier-B action places one red ball; tier 2B places two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub tier: Tier,
    pub balls: Vec<ActionBall>,
}

impl Action {
    pub fn ball(x: f64, y: f64, radius: f64) -> Action {
        Action {
            tier: Tier::B,
            balls: vec![ActionBall { x, y, radius }],
        }
    }

    pub fn check_shape(&self) -> Result<(), ActionError> {
        let expected = match self.tier {
            Tier::B => 1,
            Tier::TwoB => 2,
        };
        if self.balls.len() != expected {
            return Err(ActionError::InvalidAction(format!(
                "tier {:?} requires {expected} balls, got {}",
                self.tier,
                self.balls.len()
            )));
        }
        for b in &self.balls {
            if !(RADIUS_MIN..=RADIUS_MAX).contains(&b.radius) {
                return Err(ActionError::InvalidAction(format!(
                    "radius {} outside [{RADIUS_MIN}, {RADIUS_MAX}]",
                    b.radius
                )));
            }
            if !((0.0..=1.0).contains(&b.x) && (0.0..=1.0).contains(&b.y)) {
                return Err(ActionError::InvalidAction(format!(
                    "center ({}, {}) outside the unit square",
                    b.x, b.y
                )));
            }
        }
        Ok(())
    }
}

fn red_ball_body(id: u32, ball: &ActionBall) -> Body {
    Body::new(
        id,
        Shape::Ball {
            radius: ball.radius,
        },
        BodyColor::Red,
        Vec2::new(ball.x, ball.y),
        0.0,
    )
}

/// Adds the action's red ball(s) to the task scene at rest.
///
/// Fails when a placed ball penetrates an existing body (or another placed
/// ball) by more than the solver slop, or violates the action box.
pub fn apply_action(task: &Task, action: &Action) -> Result<WorldState, ActionError> {
    action.check_shape()?;
    let mut world = task.initial_scene.clone();
    let mut next_id = world.next_body_id();
    let mut placed: Vec<Body> = Vec::new();
    for ball in &action.balls {
        let body = red_ball_body(next_id, ball);
        for existing in world.bodies.iter().chain(placed.iter()) {
            if max_overlap(existing, &body) > SLOP {
                return Err(ActionError::InvalidAction(format!(
                    "ball at ({}, {}) overlaps body {}",
                    ball.x, ball.y, existing.id
                )));
            }
        }
        placed.push(body);
        next_id += 1;
    }
    world.bodies.extend(placed);
    Ok(world)
}

/// Cheap validity probe used by the sampler; equivalent to
/// `apply_action(..).is_ok()`.
pub fn action_is_valid(task: &Task, action: &Action) -> bool {
    if action.check_shape().is_err() {
        return false;
    }
    let mut placed: Vec<Body> = Vec::new();
    let mut next_id = task.initial_scene.next_body_id();
    for ball in &action.balls {
        let body = red_ball_body(next_id, ball);
        for existing in task.initial_scene.bodies.iter().chain(placed.iter()) {
            if max_overlap(existing, &body) > SLOP {
                return false;
            }
        }
        placed.push(body);
        next_id += 1;
    }
    true
}

/// Draws exactly `k` distinct valid tier-B actions uniformly at random.
///
/// Invalid placements are rejected and redrawn, so callers never observe
/// them. Deterministic in (task id, seed).
pub fn sample_valid_actions(task: &Task, k: usize, seed: u64) -> Result<Vec<Action>, ActionError> {
    let mut rng = rng_for(seed, &[0x616374696f6e, task.id.seed_label()]);
    let mut out = Vec::with_capacity(k);
    let mut seen: HashSet<(i64, i64, i64)> = HashSet::with_capacity(k * 2);
    let max_draws = 10_000u64 * k as u64;
    let mut draws = 0u64;
    while out.len() < k {
        if draws >= max_draws {
            return Err(ActionError::ActionSpaceExhausted {
                task: task.id.to_string(),
                requested: k,
                found: out.len(),
                draws,
            });
        }
        draws += 1;
        let action = Action::ball(
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(RADIUS_MIN..RADIUS_MAX),
        );
        let b = action.balls[0];
        let key = (
            (b.x / DEDUP_RESOLUTION).round() as i64,
            (b.y / DEDUP_RESOLUTION).round() as i64,
            (b.radius / DEDUP_RESOLUTION).round() as i64,
        );
        if seen.contains(&key) || !action_is_valid(task, &action) {
            continue;
        }
        seen.insert(key);
        out.push(action);
    }
    Ok(out)
}

/// Full-horizon simulation of an action: 1 fps sampled states plus whether
/// the goal held for the required contiguous contact time.
pub fn simulate_action(task: &Task, action: &Action) -> Result<(Vec<WorldState>, bool), ActionError> {
    let world = apply_action(task, action)?;
    let rollout = physics2d::rollout(&world, EPISODE_HORIZON_S, EPISODE_FPS)?;
    let flags = rollout.pair_flags(task.goal.subject, task.goal.object);
    let solved = goal_satisfied(&flags, task.goal.min_contact_s);
    Ok((rollout.states, solved))
}

/// Solved flag only, stepping the same trajectory but stopping as soon as
/// the contact requirement is met.
pub fn solve_action_fast(task: &Task, action: &Action) -> Result<bool, ActionError> {
    let world = apply_action(task, action)?;
    let params = physics2d::SolverParams::default();
    let needed = (task.goal.min_contact_s / physics2d::DT).round() as usize;
    let total_steps = (EPISODE_HORIZON_S * 60.0).round() as usize;
    let touching = |w: &WorldState| -> bool {
        let a = w.body(task.goal.subject).expect("goal body present");
        let b = w.body(task.goal.object).expect("goal body present");
        physics2d::touching(a, b)
    };
    let mut current = world;
    let mut run = 0usize;
    if touching(&current) {
        run = 1;
    }
    for _ in 0..total_steps {
        current = physics2d::step_with_params(&current, physics2d::DT, &params)?;
        if touching(&current) {
            run += 1;
            if run > needed {
                return Ok(true);
            }
        } else {
            run = 0;
        }
    }
    Ok(false)
}

/// Persist sampled actions as CSV rows (task_id, index, x, y, r).
pub fn actions_to_csv(task_actions: &[(String, Vec<Action>)]) -> String {
    let mut out = String::from("task_id,index,x,y,r\n");
    for (task_id, actions) in task_actions {
        for (idx, a) in actions.iter().enumerate() {
            let b = a.balls[0];
            out.push_str(&format!("{task_id},{idx},{},{},{}\n", b.x, b.y, b.radius));
        }
    }
    out
}

pub fn actions_from_csv(text: &str) -> Result<Vec<(String, Vec<Action>)>, ActionError> {
    let mut rows: Vec<(String, Vec<Action>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "task_id,index,x,y,r" {
                return Err(ActionError::Decode(format!("bad header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(ActionError::Decode(format!("bad row {line:?}")));
        }
        let parse = |s: &str| -> Result<f64, ActionError> {
            s.parse()
                .map_err(|_| ActionError::Decode(format!("bad number {s:?}")))
        };
        let action = Action::ball(parse(parts[2])?, parse(parts[3])?, parse(parts[4])?);
        match rows.last_mut() {
            Some((tid, actions)) if tid == parts[0] => actions.push(action),
            _ => rows.push((parts[0].to_string(), vec![action])),
        }
    }
    Ok(rows)
}
