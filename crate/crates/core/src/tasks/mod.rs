//! Task templates, task instantiation, goal checking, and evaluation folds.
//!
//! A template is a parameterized scene: each body field is either a fixed
//! number, a uniform range sampled per instance, or (for y positions) a
//! rest-on-support rule. Instantiation is a pure function of
//! (template, instance index, seed). The goal is always "the blue or purple
//! body touches the green body for at least three seconds".

use crate::geom::Vec2;
use crate::physics2d::{detect_contacts, Body, BodyColor, Shape, WorldState, DT, SLOP};
use crate::rng::{derive_seed, rng_for};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Canonical half-thickness for goal-colored bars. Object feature vectors
/// carry a single size per body, so colored bars share this thickness to
/// stay reconstructible from features.
pub const GOAL_BAR_HALF_THICKNESS: f64 = 0.015;

pub const TEMPLATE_VERSION: &str = "template_v1";
pub const SPLIT_VERSION: &str = "split_v1";

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("bad template: {0}")]
    BadTemplate(String),
    #[error("template {template_id} instance {instance} infeasible after {attempts} attempts")]
    TemplateInfeasible {
        template_id: u32,
        instance: u32,
        attempts: u32,
    },
    #[error("split infeasible: {0}")]
    SplitInfeasible(String),
    #[error("split decode error: {0}")]
    SplitDecode(String),
}

/// Task identity: (template id, instance index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId {
    pub template_id: u32,
    pub instance: u32,
}

impl TaskId {
    pub fn new(template_id: u32, instance: u32) -> TaskId {
        TaskId {
            template_id,
            instance,
        }
    }

    pub fn parse(text: &str) -> Option<TaskId> {
        let rest = text.strip_prefix('T')?;
        let (t, i) = rest.split_once(':')?;
        Some(TaskId {
            template_id: t.parse().ok()?,
            instance: i.parse().ok()?,
        })
    }

    /// Stable 64-bit label for seed derivation.
    pub fn seed_label(&self) -> u64 {
        ((self.template_id as u64) << 32) | self.instance as u64
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}:{}", self.template_id, self.instance)
    }
}

/// Goal: `subject` (blue or purple) must touch `object` (green) for at
/// least `min_contact_s` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub subject: u32,
    pub object: u32,
    pub min_contact_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub initial_scene: WorldState,
    pub goal: GoalSpec,
}

impl Task {
    /// Checks the goal invariant: exactly one green body and exactly one
    /// blue-or-purple body, referenced by the goal.
    pub fn validate(&self) -> Result<(), TaskError> {
        let greens: Vec<u32> = self
            .initial_scene
            .bodies
            .iter()
            .filter(|b| b.color == BodyColor::Green)
            .map(|b| b.id)
            .collect();
        let subjects: Vec<u32> = self
            .initial_scene
            .bodies
            .iter()
            .filter(|b| matches!(b.color, BodyColor::Blue | BodyColor::Purple))
            .map(|b| b.id)
            .collect();
        if greens.len() != 1 || subjects.len() != 1 {
            return Err(TaskError::BadTemplate(format!(
                "task {} must contain exactly one green and one blue/purple body",
                self.id
            )));
        }
        if self.goal.object != greens[0] || self.goal.subject != subjects[0] {
            return Err(TaskError::BadTemplate(format!(
                "task {} goal does not reference the goal-colored bodies",
                self.id
            )));
        }
        if self.goal.subject == self.goal.object || self.goal.min_contact_s <= 0.0 {
            return Err(TaskError::BadTemplate(format!("task {} malformed goal", self.id)));
        }
        Ok(())
    }
}

/// A template field: fixed, sampled uniformly, or rested on a prior body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Fixed(f64),
    Range { range: [f64; 2] },
    /// Valid for y positions only: computed so this body rests on top of
    /// the body at the given index (plus a small settle gap).
    OnTopOf { on_top_of: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShapeSpec {
    Ball {
        radius: ParamValue,
    },
    Bar {
        half_length: ParamValue,
        half_thickness: ParamValue,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub shape: ShapeSpec,
    pub color: BodyColor,
    pub position: [ParamValue; 2],
    pub angle: ParamValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalColorSpec {
    pub subject_color: BodyColor,
    pub object_color: BodyColor,
    pub min_contact_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub version: String,
    pub template_id: u32,
    pub name: String,
    pub goal: GoalColorSpec,
    pub bodies: Vec<BodySpec>,
}

impl TaskTemplate {
    pub fn from_json(text: &str) -> Result<TaskTemplate, TaskError> {
        let t: TaskTemplate =
            serde_json::from_str(text).map_err(|e| TaskError::BadTemplate(e.to_string()))?;
        if t.version != TEMPLATE_VERSION {
            return Err(TaskError::BadTemplate(format!(
                "unsupported template version {:?}",
                t.version
            )));
        }
        t.check()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serialization cannot fail")
    }

    /// Number of sampled parameters (range fields).
    pub fn parameter_count(&self) -> usize {
        let count = |p: &ParamValue| matches!(p, ParamValue::Range { .. }) as usize;
        self.bodies
            .iter()
            .map(|b| {
                let shape = match &b.shape {
                    ShapeSpec::Ball { radius } => count(radius),
                    ShapeSpec::Bar {
                        half_length,
                        half_thickness,
                    } => count(half_length) + count(half_thickness),
                };
                shape + count(&b.position[0]) + count(&b.position[1]) + count(&b.angle)
            })
            .sum()
    }

    fn check(&self) -> Result<(), TaskError> {
        let check_value = |p: &ParamValue, what: &str| match p {
            ParamValue::Range { range } if range[0] > range[1] => Err(TaskError::BadTemplate(
                format!("template {}: empty range for {what}", self.template_id),
            )),
            _ => Ok(()),
        };
        for (i, b) in self.bodies.iter().enumerate() {
            match &b.shape {
                ShapeSpec::Ball { radius } => check_value(radius, "radius")?,
                ShapeSpec::Bar {
                    half_length,
                    half_thickness,
                } => {
                    check_value(half_length, "half_length")?;
                    check_value(half_thickness, "half_thickness")?;
                }
            }
            check_value(&b.position[0], "x")?;
            check_value(&b.position[1], "y")?;
            check_value(&b.angle, "angle")?;
            if let ParamValue::OnTopOf { on_top_of } = b.position[1] {
                if on_top_of >= i {
                    return Err(TaskError::BadTemplate(format!(
                        "template {}: body {i} rests on a later body",
                        self.template_id
                    )));
                }
            }
            for p in [&b.position[0], &b.angle] {
                if matches!(p, ParamValue::OnTopOf { .. }) {
                    return Err(TaskError::BadTemplate(format!(
                        "template {}: on_top_of is only valid for y",
                        self.template_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gap left between a rested body and its support so instantiation never
/// starts in penetration.
const REST_GAP: f64 = 0.002;

fn surface_height(support: &Body, x: f64) -> f64 {
    match support.shape {
        Shape::Ball { radius } => {
            let dx = x - support.position.x;
            support.position.y + (radius * radius - dx * dx).max(0.0).sqrt()
        }
        Shape::Bar {
            half_length: _,
            half_thickness,
        } => {
            let dx = x - support.position.x;
            support.position.y + dx * support.angle.tan() + half_thickness / support.angle.cos()
        }
    }
}

fn rest_height(support: &Body, own_shape: &Shape, x: f64) -> f64 {
    match (support.shape, own_shape) {
        (Shape::Ball { radius: rs }, Shape::Ball { radius: r }) => {
            let dx = x - support.position.x;
            let reach = rs + r;
            support.position.y + (reach * reach - dx * dx).max(reach * reach * 0.01).sqrt() + REST_GAP
        }
        // A bar laid across a ball rests on the ball's apex regardless of
        // where the bar's center sits.
        (Shape::Ball { radius: rs }, Shape::Bar { half_thickness, .. }) => {
            support.position.y + rs + half_thickness + REST_GAP
        }
        (Shape::Bar { .. }, Shape::Ball { radius }) => surface_height(support, x) + radius + REST_GAP,
        (Shape::Bar { .. }, Shape::Bar { half_thickness, .. }) => {
            surface_height(support, x) + half_thickness + REST_GAP
        }
    }
}

/// Builds one task deterministically from (template, instance, seed).
///
/// Parameter vectors that leave any body pair penetrating by more than the
/// solver slop are rejected and redrawn, up to 100 attempts.
pub fn instantiate_template(
    template: &TaskTemplate,
    instance: u32,
    seed: u64,
) -> Result<Task, TaskError> {
    const MAX_ATTEMPTS: u32 = 100;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(
            seed,
            &[0x7461736b, template.template_id as u64, instance as u64, attempt as u64],
        );
        let mut draw = |p: &ParamValue| -> f64 {
            match p {
                ParamValue::Fixed(v) => *v,
                ParamValue::Range { range } => {
                    if range[0] == range[1] {
                        range[0]
                    } else {
                        rng.random_range(range[0]..range[1])
                    }
                }
                ParamValue::OnTopOf { .. } => unreachable!("resolved separately"),
            }
        };

        let mut bodies: Vec<Body> = Vec::with_capacity(template.bodies.len());
        let mut ok = true;
        for (i, spec) in template.bodies.iter().enumerate() {
            let shape = match &spec.shape {
                ShapeSpec::Ball { radius } => Shape::Ball {
                    radius: draw(radius),
                },
                ShapeSpec::Bar {
                    half_length,
                    half_thickness,
                } => Shape::Bar {
                    half_length: draw(half_length),
                    half_thickness: draw(half_thickness),
                },
            };
            let x = draw(&spec.position[0]);
            let angle = draw(&spec.angle);
            let y = match spec.position[1] {
                ParamValue::OnTopOf { on_top_of } => rest_height(&bodies[on_top_of], &shape, x),
                ref p => draw(p),
            };
            if spec.color.is_dynamic() && !((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)) {
                ok = false;
                break;
            }
            bodies.push(Body::new(i as u32, shape, spec.color, Vec2::new(x, y), angle));
        }
        if !ok {
            continue;
        }

        let scene = WorldState::new(bodies);
        if scene.validate().is_err() {
            continue;
        }
        let worst = detect_contacts(&scene)
            .map_err(|e| TaskError::BadTemplate(e.to_string()))?
            .into_iter()
            .map(|c| c.penetration)
            .fold(0.0, f64::max);
        if worst > SLOP {
            continue;
        }

        let subject = scene
            .bodies
            .iter()
            .find(|b| b.color == template.goal.subject_color)
            .map(|b| b.id);
        let object = scene
            .bodies
            .iter()
            .find(|b| b.color == template.goal.object_color)
            .map(|b| b.id);
        let (Some(subject), Some(object)) = (subject, object) else {
            return Err(TaskError::BadTemplate(format!(
                "template {} lacks goal-colored bodies",
                template.template_id
            )));
        };
        let task = Task {
            id: TaskId::new(template.template_id, instance),
            initial_scene: scene,
            goal: GoalSpec {
                subject,
                object,
                min_contact_s: template.goal.min_contact_s,
            },
        };
        task.validate()?;
        return Ok(task);
    }
    Err(TaskError::TemplateInfeasible {
        template_id: template.template_id,
        instance,
        attempts: MAX_ATTEMPTS,
    })
}

/// True when some contiguous run of per-substep contact flags spans at
/// least `min_contact_s` seconds. Flags are sampled at 1/60 s instants, so
/// a run of `m` flags covers `(m - 1) / 60` seconds.
pub fn goal_satisfied(flags: &[bool], min_contact_s: f64) -> bool {
    let needed_intervals = (min_contact_s / DT).round() as usize;
    let mut run = 0usize;
    let mut best = 0usize;
    for &f in flags {
        if f {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best > needed_intervals
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSetting {
    WithinTemplate,
    CrossTemplate,
}

impl fmt::Display for SplitSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSetting::WithinTemplate => write!(f, "within"),
            SplitSetting::CrossTemplate => write!(f, "cross"),
        }
    }
}

/// One train/test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub version: String,
    pub setting: SplitSetting,
    pub fold_index: u32,
    pub seed: u64,
    pub train_tasks: Vec<TaskId>,
    pub test_tasks: Vec<TaskId>,
}

impl Split {
    pub fn validate(&self) -> Result<(), TaskError> {
        for t in &self.train_tasks {
            if self.test_tasks.contains(t) {
                return Err(TaskError::SplitInfeasible(format!(
                    "task {t} appears in both train and test"
                )));
            }
        }
        if self.setting == SplitSetting::CrossTemplate {
            for t in &self.train_tasks {
                if self
                    .test_tasks
                    .iter()
                    .any(|u| u.template_id == t.template_id)
                {
                    return Err(TaskError::SplitInfeasible(format!(
                        "cross-template fold shares template {}",
                        t.template_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable fingerprint of the fold, used as the train-contamination guard.
    pub fn manifest_hash(&self) -> u64 {
        let mut labels: Vec<u64> = vec![
            match self.setting {
                SplitSetting::WithinTemplate => 1,
                SplitSetting::CrossTemplate => 2,
            },
            self.fold_index as u64,
            self.seed,
        ];
        labels.extend(self.train_tasks.iter().map(|t| t.seed_label()));
        labels.push(u64::MAX);
        labels.extend(self.test_tasks.iter().map(|t| t.seed_label()));
        derive_seed(0x73706c6974, &labels)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Split, TaskError> {
        let s: Split =
            serde_json::from_str(text).map_err(|e| TaskError::SplitDecode(e.to_string()))?;
        if s.version != SPLIT_VERSION {
            return Err(TaskError::SplitDecode(format!(
                "unsupported split version {:?}",
                s.version
            )));
        }
        s.validate()?;
        Ok(s)
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Builds `n_folds` train/test splits over the given tasks.
///
/// Within-template folds split each template's instances 80/20; cross-template
/// folds split the template set 80/20. Fold k derives its shuffle seed as
/// `seed + k`.
pub fn make_folds(
    tasks: &[Task],
    setting: SplitSetting,
    n_folds: u32,
    seed: u64,
) -> Result<Vec<Split>, TaskError> {
    if n_folds == 0 {
        return Err(TaskError::SplitInfeasible("n_folds must be >= 1".into()));
    }
    let mut templates: Vec<u32> = tasks.iter().map(|t| t.id.template_id).collect();
    templates.sort_unstable();
    templates.dedup();

    match setting {
        SplitSetting::WithinTemplate => {
            for &tid in &templates {
                let n = tasks.iter().filter(|t| t.id.template_id == tid).count();
                if n < 2 {
                    return Err(TaskError::SplitInfeasible(format!(
                        "template {tid} has {n} tasks; within-template splits need at least 2"
                    )));
                }
            }
        }
        SplitSetting::CrossTemplate => {
            if templates.len() < 2 {
                return Err(TaskError::SplitInfeasible(
                    "cross-template splits need at least 2 templates".into(),
                ));
            }
        }
    }

    // Folds rotate through shuffled slices: one shuffle per pass (a pass is
    // as many folds as it takes every item to appear in a test slice once),
    // so running enough folds covers every task in some test set. Pass p of
    // a unit shuffles with derived seed `seed + p`.
    let test_slice = |n: usize, fold: u32| -> (u64, usize, usize) {
        let n_test = ((n as f64 * 0.2).round() as usize).clamp(1, n - 1);
        let slots_per_pass = n.div_ceil(n_test) as u32;
        let pass = fold / slots_per_pass;
        let slot = (fold % slots_per_pass) as usize;
        let lo = (slot * n_test).min(n - n_test);
        (seed.wrapping_add(pass as u64), lo, lo + n_test)
    };

    let mut folds = Vec::with_capacity(n_folds as usize);
    for fold in 0..n_folds {
        let mut train = Vec::new();
        let mut test = Vec::new();
        match setting {
            SplitSetting::WithinTemplate => {
                for &tid in &templates {
                    let mut ids: Vec<TaskId> = tasks
                        .iter()
                        .filter(|t| t.id.template_id == tid)
                        .map(|t| t.id)
                        .collect();
                    ids.sort();
                    let (pass_seed, lo, hi) = test_slice(ids.len(), fold);
                    let mut rng = rng_for(pass_seed, &[0x77697468, tid as u64]);
                    shuffle(&mut ids, &mut rng);
                    test.extend_from_slice(&ids[lo..hi]);
                    train.extend(ids[..lo].iter().chain(ids[hi..].iter()));
                }
            }
            SplitSetting::CrossTemplate => {
                let mut tmpl = templates.clone();
                let (pass_seed, lo, hi) = test_slice(tmpl.len(), fold);
                let mut rng = rng_for(pass_seed, &[0x63726f73]);
                shuffle(&mut tmpl, &mut rng);
                let test_templates = &tmpl[lo..hi];
                for task in tasks {
                    if test_templates.contains(&task.id.template_id) {
                        test.push(task.id);
                    } else {
                        train.push(task.id);
                    }
                }
            }
        }
        train.sort();
        test.sort();
        let split = Split {
            version: SPLIT_VERSION.to_string(),
            setting,
            fold_index: fold,
            seed,
            train_tasks: train,
            test_tasks: test,
        };
        split.validate()?;
        folds.push(split);
    }
    Ok(folds)
}

/// The eight built-in desk templates.
pub fn builtin_templates() -> Vec<TaskTemplate> {
    let sources = [
        include_str!("../../assets/templates/t0_drop_to_cradle.json"),
        include_str!("../../assets/templates/t1_knock_off_platform.json"),
        include_str!("../../assets/templates/t2_seesaw.json"),
        include_str!("../../assets/templates/t3_obstacle_wall.json"),
        include_str!("../../assets/templates/t4_funnel.json"),
        include_str!("../../assets/templates/t5_bridge.json"),
        include_str!("../../assets/templates/t6_rolling_ramp.json"),
        include_str!("../../assets/templates/t7_cup_catch.json"),
    ];
    sources
        .iter()
        .map(|s| TaskTemplate::from_json(s).expect("built-in template must parse"))
        .collect()
}

#[cfg(test)]
mod tests;
