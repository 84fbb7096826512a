//! Teacher-forced one-step training with scheduled noise augmentation.

use super::dataset::Dataset;
use super::features::{col, ObjectState};
use super::{interaction, txmodel, ContextWindow, ForwardError, ForwardModel, ModelKind, TAU};
use crate::tensor::{Graph, GradMap, NodeId, Optimizer, ParameterStore, TensorError};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::collections::BTreeMap;
use tumble_core::rng::rng_for;

/// Standard deviation of the input-noise augmentation.
pub const NOISE_STD: f64 = 0.014435;

/// Fraction of samples that receive input noise at this point in training:
/// 0.2 for the first 2.5%, linearly decaying to 0 by 12.5%, then 0.
pub fn noise_probability(iteration: u64, total_iterations: u64) -> f64 {
    let t = total_iterations as f64;
    let hold_until = 0.025 * t;
    let zero_from = 0.125 * t;
    let it = iteration as f64;
    if it < hold_until {
        0.2
    } else if it < zero_from {
        0.2 * ((zero_from - it) / (zero_from - hold_until))
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct TrainForwardConfig {
    pub iterations: u64,
    pub batch_size: usize,
    /// Defaults to the model family's standard learning rate.
    pub lr: Option<f64>,
    pub seed: u64,
    /// Loss-trace sampling period in iterations.
    pub trace_every: u64,
}

impl Default for TrainForwardConfig {
    fn default() -> Self {
        TrainForwardConfig {
            iterations: 20_000,
            batch_size: 64,
            lr: None,
            seed: 0,
            trace_every: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// (iteration, mean one-step loss on that iteration's batch).
    pub loss_trace: Vec<(u64, f64)>,
}

struct TrainSample {
    window: ContextWindow,
    target: Vec<ObjectState>,
}

/// Builds the batched forward graph for noised windows and attaches the
/// masked squared-error loss: dynamic objects' (x, y) always contribute,
/// dynamic bars additionally contribute the cosine of the orientation.
/// Returns (unnormalized loss node, mask weight).
fn build_loss(
    graph: &mut Graph,
    store: &ParameterStore,
    kind: ModelKind,
    samples: &[TrainSample],
) -> Result<(NodeId, f64), ForwardError> {
    let windows: Vec<ContextWindow> = samples.iter().map(|s| s.window.clone()).collect();
    let out = match kind {
        ModelKind::Interaction => interaction::build_forward(graph, store, &windows)?,
        ModelKind::Transformer => txmodel::build_forward(graph, store, &windows)?,
    };
    let n = windows[0].object_count();
    let rows = samples.len() * n;
    let mut target = Vec::with_capacity(rows * 4);
    let mut mask = Vec::with_capacity(rows * 4);
    let mut weight = 0.0;
    for s in samples {
        for obj in &s.target {
            target.extend_from_slice(&[obj.x(), obj.y(), obj.0[col::COS], 0.0]);
            let dynamic = obj.is_dynamic();
            let m = [
                if dynamic { 1.0 } else { 0.0 },
                if dynamic { 1.0 } else { 0.0 },
                if dynamic && obj.is_bar() { 1.0 } else { 0.0 },
                0.0,
            ];
            weight += m.iter().sum::<f64>();
            mask.extend_from_slice(&m);
        }
    }
    let target = graph.value_node(rows, 4, target)?;
    let mask = graph.value_node(rows, 4, mask)?;
    let diff = graph.sub(out, target)?;
    let masked = graph.mul(diff, mask)?;
    let sq = graph.mul(masked, masked)?;
    Ok((graph.sum_all(sq), weight))
}

/// Teacher-forced training: every input window comes from ground-truth
/// frames sampled at a random starting point of a random rollout; the loss
/// is the one-step prediction error. A scheduled fraction of samples gets
/// Gaussian noise added to the dynamic objects' pose fields in the input
/// frames only.
pub fn train_forward(
    model: &mut ForwardModel,
    dataset: &Dataset,
    cfg: &TrainForwardConfig,
) -> Result<TrainReport, ForwardError> {
    let usable: Vec<usize> = dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.frames.len() > TAU && !r.frames[0].is_empty())
        .map(|(i, _)| i)
        .collect();
    if usable.is_empty() {
        return Err(ForwardError::Dataset(
            "no records with enough frames to train on".into(),
        ));
    }
    let lr = cfg.lr.unwrap_or(model.kind.default_lr());
    let optimizer = Optimizer::adam(lr);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut trace = Vec::new();

    for iter in 0..cfg.iterations {
        let mut rng = rng_for(cfg.seed, &[0x747261696e, iter]);
        let p_noise = noise_probability(iter, cfg.iterations);

        // Materialize the batch sequentially so the RNG stream is stable,
        // then group by object count for batched graphs.
        let mut groups: BTreeMap<usize, Vec<TrainSample>> = BTreeMap::new();
        for _ in 0..cfg.batch_size {
            let record = &dataset.records[usable[rng.random_range(0..usable.len())]];
            let start = rng.random_range(0..=record.frames.len() - TAU - 1);
            let mut frames: Vec<Vec<ObjectState>> =
                record.frames[start..start + TAU].to_vec();
            if rng.random_bool(p_noise) {
                for frame in &mut frames {
                    for obj in frame.iter_mut() {
                        if obj.is_dynamic() {
                            for c in [col::X, col::Y, col::COS, col::SIN] {
                                obj.0[c] += noise.sample(&mut rng);
                            }
                        }
                    }
                }
            }
            let sample = TrainSample {
                window: ContextWindow::new(frames)?,
                target: record.frames[start + TAU].clone(),
            };
            groups.entry(sample.window.object_count()).or_default().push(sample);
        }

        // Groups are split into per-core chunks evaluated in parallel; the
        // reduction below walks chunks in a fixed order for determinism.
        let units: Vec<Vec<TrainSample>> = groups
            .into_values()
            .flat_map(|samples| {
                let half = samples.len().div_ceil(2).max(1);
                let mut it = samples.into_iter();
                let first: Vec<TrainSample> = it.by_ref().take(half).collect();
                let second: Vec<TrainSample> = it.collect();
                [first, second].into_iter().filter(|c| !c.is_empty())
            })
            .collect();
        let results: Vec<Result<(GradMap, f64, f64), ForwardError>> = units
            .par_iter()
            .map(|samples| {
                let mut graph = Graph::new(model.store.precision());
                let (loss, weight) = build_loss(&mut graph, &model.store, model.kind, samples)?;
                graph.evaluate(&model.store).map_err(reframe(iter))?;
                graph.backward(loss)?;
                Ok((graph.param_grads(), graph.value(loss)[0], weight))
            })
            .collect();

        let mut grads: GradMap = GradMap::new();
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for r in results {
            let (g, l, w) = r?;
            for (name, grad) in g {
                match grads.get_mut(&name) {
                    Some(acc) => {
                        for (d, s) in acc.iter_mut().zip(&grad) {
                            *d += s;
                        }
                    }
                    None => {
                        grads.insert(name, grad);
                    }
                }
            }
            loss_sum += l;
            weight_sum += w;
        }
        if weight_sum > 0.0 {
            for grad in grads.values_mut() {
                for g in grad.iter_mut() {
                    *g /= weight_sum;
                }
            }
        }
        let loss = if weight_sum > 0.0 { loss_sum / weight_sum } else { 0.0 };
        if !loss.is_finite() {
            return Err(ForwardError::TrainingDiverged {
                iteration: iter,
                detail: "non-finite batch loss".into(),
            });
        }
        model.store.optimizer_step(&grads, &optimizer)?;

        if iter % cfg.trace_every == 0 || iter + 1 == cfg.iterations {
            trace.push((iter, loss));
        }
    }
    Ok(TrainReport { loss_trace: trace })
}

fn reframe(iteration: u64) -> impl Fn(TensorError) -> ForwardError {
    move |e| match e {
        TensorError::NonFinite(detail) => ForwardError::TrainingDiverged { iteration, detail },
        other => ForwardError::Tensor(other),
    }
}
