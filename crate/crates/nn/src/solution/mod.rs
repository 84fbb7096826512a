//! Task-solution scoring: a learned object-sequence classifier and an exact
//! geometric contact oracle.

use crate::forward::{
    embed_tokens, encoder_layer, final_norm, init_encoder_params, ContextWindow, Dataset,
    ForwardError, ForwardModel, ObjectState, FEAT, TAU,
};
use crate::tensor::{
    Graph, GradMap, Init, NodeId, Optimizer, ParameterStore, Precision, TensorError,
};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;
use tumble_core::physics2d::Body;
use tumble_core::rng::rng_for;
use tumble_core::tasks::GoalSpec;

/// Frame-level touching tolerance: one pixel at the benchmark resolution.
pub const FRAME_CONTACT_TOL: f64 = 1.0 / 256.0;

const EMBED: usize = 128;
const LAYERS: usize = 8;
const HEADS: usize = 16;
const FFN_HIDDEN: usize = 256;
const HEAD_HIDDEN: usize = 128;

#[derive(Debug, Error)]
pub enum SolutionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error("sequence error: {0}")]
    Sequence(String),
    #[error("goal body missing: {0}")]
    GoalBodyMissing(String),
    #[error("classifier training diverged at iteration {iteration}: {detail}")]
    TrainingDiverged { iteration: u64, detail: String },
}

/// Ground-truth context frames followed by predicted frames, with a fixed
/// object roster throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    frames: Vec<Vec<ObjectState>>,
}

impl StateSequence {
    pub fn new(frames: Vec<Vec<ObjectState>>) -> Result<StateSequence, SolutionError> {
        if frames.is_empty() {
            return Err(SolutionError::Sequence("empty sequence".into()));
        }
        let n = frames[0].len();
        if frames.iter().any(|f| f.len() != n) {
            return Err(SolutionError::Sequence(
                "object count varies across the sequence".into(),
            ));
        }
        Ok(StateSequence { frames })
    }

    pub fn frames(&self) -> &[Vec<ObjectState>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn object_count(&self) -> usize {
        self.frames[0].len()
    }
}

/// Transformer sequence classifier emitting the probability that the
/// rollout solves the task.
pub struct Classifier {
    pub store: ParameterStore,
}

impl Classifier {
    pub fn new(seed: u64) -> Classifier {
        let mut store = ParameterStore::new(Precision::F32);
        let mut rng = rng_for(seed, &[0x636c73]);
        init_params(&mut store, &mut rng);
        Classifier { store }
    }

    pub fn from_store(store: ParameterStore) -> Classifier {
        Classifier { store }
    }

    /// Probability in [0, 1] that the sequence ends with the task solved.
    pub fn score(&self, seq: &StateSequence) -> Result<f64, SolutionError> {
        Ok(self.score_batch(std::slice::from_ref(seq))?[0])
    }

    /// Batched scoring; sequences must share object count and length.
    pub fn score_batch(&self, seqs: &[StateSequence]) -> Result<Vec<f64>, SolutionError> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        // Objects enter the encoder in a canonical order keyed by their full
        // trajectories; with mean pooling this makes the score exactly
        // invariant to the caller's object ordering.
        let canon: Vec<StateSequence> = seqs
            .iter()
            .map(|s| {
                let order = canonical_order(s);
                let frames = s
                    .frames
                    .iter()
                    .map(|f| order.iter().map(|&i| f[i]).collect())
                    .collect();
                StateSequence { frames }
            })
            .collect();
        let mut graph = Graph::new(self.store.precision());
        let logits = build_logits(&mut graph, &self.store, &canon)?;
        let probs = graph.sigmoid(logits);
        graph.evaluate(&self.store)?;
        Ok(graph.value(probs).to_vec())
    }
}

fn init_params(store: &mut ParameterStore, rng: &mut rand_chacha::ChaCha8Rng) {
    store.add_param("cls.embed.0.w", FEAT, EMBED, Init::XavierUniform, rng);
    store.add_param("cls.embed.0.b", 1, EMBED, Init::Zeros, rng);
    store.add_param("cls.embed.1.w", EMBED, EMBED, Init::XavierUniform, rng);
    store.add_param("cls.embed.1.b", 1, EMBED, Init::Zeros, rng);
    init_encoder_params(store, rng, "cls", LAYERS, EMBED, FFN_HIDDEN);
    let head = [(EMBED, HEAD_HIDDEN), (HEAD_HIDDEN, HEAD_HIDDEN), (HEAD_HIDDEN, 1)];
    for (l, (hin, hout)) in head.iter().enumerate() {
        store.add_param(&format!("cls.head.{l}.w"), *hin, *hout, Init::XavierUniform, rng);
        store.add_param(&format!("cls.head.{l}.b"), 1, *hout, Init::Zeros, rng);
    }
}

/// Stable object ordering keyed by the full trajectory (ties are
/// interchangeable objects).
fn canonical_order(seq: &StateSequence) -> Vec<usize> {
    let n = seq.object_count();
    let keys: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            seq.frames
                .iter()
                .flat_map(|f| f[i].0.iter().copied())
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .iter()
            .zip(&keys[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// Builds the batched classifier graph up to the logits (B x 1).
pub(crate) fn build_logits(
    graph: &mut Graph,
    store: &ParameterStore,
    seqs: &[StateSequence],
) -> Result<NodeId, TensorError> {
    let b = seqs.len();
    let n = seqs[0].object_count();
    let len = seqs[0].len();
    for s in seqs {
        if s.object_count() != n || s.len() != len {
            return Err(TensorError::Shape(
                "batched sequences must share object count and length".into(),
            ));
        }
    }
    let tokens_per_seq = len * n;

    let mut data = Vec::with_capacity(b * tokens_per_seq * FEAT);
    for s in seqs {
        for frame in &s.frames {
            for obj in frame {
                data.extend_from_slice(&obj.0);
            }
        }
    }
    let tokens = graph.value_node(b * tokens_per_seq, FEAT, data)?;
    let wrap = |e: ForwardError| match e {
        ForwardError::Tensor(t) => t,
        other => TensorError::Usage(other.to_string()),
    };
    let mut x = embed_tokens(graph, store, "cls", tokens, b, len, n, EMBED).map_err(wrap)?;
    for l in 0..LAYERS {
        x = encoder_layer(graph, store, "cls", l, x, b, tokens_per_seq, HEADS).map_err(wrap)?;
    }
    x = final_norm(graph, store, "cls", x).map_err(wrap)?;

    // Mean-pool each sequence's tokens.
    let segments: Vec<usize> = (0..b * tokens_per_seq).map(|r| r / tokens_per_seq).collect();
    let pooled = graph.segment_sum_rows(x, Arc::new(segments), b)?;
    let pooled = graph.scale(pooled, 1.0 / tokens_per_seq as f64);

    let mut h = pooled;
    for l in 0..3 {
        let w = graph.param(store, &format!("cls.head.{l}.w"))?;
        let bias = graph.param(store, &format!("cls.head.{l}.b"))?;
        h = graph.matmul(h, w)?;
        h = graph.add_bias(h, bias)?;
        if l < 2 {
            h = graph.relu(h);
        }
    }
    Ok(h)
}

fn goal_bodies(
    frame: &[ObjectState],
    goal: &GoalSpec,
) -> Result<(usize, usize), SolutionError> {
    use tumble_core::physics2d::BodyColor;
    let find_unique = |pred: &dyn Fn(&ObjectState) -> bool, what: &str| {
        let hits: Vec<usize> = frame
            .iter()
            .enumerate()
            .filter(|(_, o)| pred(o))
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [one] => Ok(*one),
            [] => Err(SolutionError::GoalBodyMissing(format!("no {what} body"))),
            _ => Err(SolutionError::GoalBodyMissing(format!(
                "multiple {what} bodies"
            ))),
        }
    };
    let subject = find_unique(
        &|o: &ObjectState| matches!(o.color(), Some(BodyColor::Blue | BodyColor::Purple)),
        "blue/purple subject",
    )?;
    let object = find_unique(
        &|o: &ObjectState| matches!(o.color(), Some(BodyColor::Green)),
        "green object",
    )?;
    let _ = goal;
    Ok((subject, object))
}

/// Exact geometric goal check on a state sequence: true when the goal pair's
/// shapes intersect within one pixel for enough consecutive frames to cover
/// the goal's contact requirement at 1 fps.
pub fn contact_oracle(seq: &StateSequence, goal: &GoalSpec) -> Result<bool, SolutionError> {
    let (subject_idx, object_idx) = goal_bodies(&seq.frames[0], goal)?;
    let needed = goal.min_contact_s.ceil().max(1.0) as usize;
    let mut run = 0usize;
    for frame in &seq.frames {
        let subject: Body = frame[subject_idx].to_body(0)?;
        let object: Body = frame[object_idx].to_body(1)?;
        // Strict boundary: separation of exactly one pixel does not count.
        let touching = touching_strict(&subject, &object);
        if touching {
            run += 1;
            if run >= needed {
                return Ok(true);
            }
        } else {
            run = 0;
        }
    }
    Ok(false)
}

fn touching_strict(a: &Body, b: &Body) -> bool {
    // The oracle's boundary is exclusive: a separation of exactly one
    // pixel does not count as touching.
    match tumble_core::physics2d::pair_depth(a, b, FRAME_CONTACT_TOL) {
        Some(depth) => depth > -FRAME_CONTACT_TOL,
        None => false,
    }
}

/// Where the classifier's tau-prime frames come from during training.
pub enum RolloutSource<'a> {
    /// Ground-truth frames from the dataset (the simulator acts as a
    /// perfect forward model).
    Simulator,
    /// Autoregressive rollout of a frozen forward model.
    Model(&'a ForwardModel),
}

#[derive(Debug, Clone)]
pub struct TrainClassifierConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Predicted frames appended after the context.
    pub tau_prime: usize,
    pub seed: u64,
    pub trace_every: u64,
}

impl Default for TrainClassifierConfig {
    fn default() -> Self {
        TrainClassifierConfig {
            iterations: 2000,
            batch_size: 16,
            lr: 0.002,
            momentum: 0.9,
            tau_prime: 10,
            seed: 0,
            trace_every: 100,
        }
    }
}

/// Builds the classifier input for one dataset record: context frames from
/// the start of the rollout plus tau-prime frames from the chosen source.
pub fn classifier_sequence(
    record_frames: &[Vec<ObjectState>],
    source: &RolloutSource<'_>,
    tau_prime: usize,
) -> Result<StateSequence, SolutionError> {
    if record_frames.len() < TAU {
        return Err(SolutionError::Sequence(format!(
            "record has {} frames, needs at least {TAU}",
            record_frames.len()
        )));
    }
    let mut frames: Vec<Vec<ObjectState>> = record_frames[..TAU].to_vec();
    match source {
        RolloutSource::Simulator => {
            let have = record_frames.len() - TAU;
            if have < tau_prime {
                return Err(SolutionError::Sequence(format!(
                    "record has {have} frames beyond the context, needs {tau_prime}"
                )));
            }
            frames.extend_from_slice(&record_frames[TAU..TAU + tau_prime]);
        }
        RolloutSource::Model(model) => {
            let ctx = ContextWindow::new(frames.clone())?;
            frames.extend(model.rollout(&ctx, tau_prime)?);
        }
    }
    StateSequence::new(frames)
}

#[derive(Debug, Clone)]
pub struct ClassifierReport {
    pub loss_trace: Vec<(u64, f64)>,
}

/// Binary cross-entropy training of the classifier with SGD + momentum.
/// The forward source is frozen; classifier inputs always start at frame 0.
pub fn train_classifier(
    classifier: &mut Classifier,
    source: &RolloutSource<'_>,
    dataset: &Dataset,
    cfg: &TrainClassifierConfig,
) -> Result<ClassifierReport, SolutionError> {
    let usable: Vec<usize> = dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.frames.len() >= TAU && !r.frames[0].is_empty())
        .map(|(i, _)| i)
        .collect();
    if usable.is_empty() {
        return Err(SolutionError::Sequence("no trainable records".into()));
    }
    let optimizer = Optimizer::sgd_momentum(cfg.lr, cfg.momentum);
    let mut trace = Vec::new();

    for iter in 0..cfg.iterations {
        let mut rng = rng_for(cfg.seed, &[0x636c732d7472, iter]);
        use rand::Rng;
        let mut groups: BTreeMap<(usize, usize), Vec<(StateSequence, f64)>> = BTreeMap::new();
        for _ in 0..cfg.batch_size {
            let record = &dataset.records[usable[rng.random_range(0..usable.len())]];
            let seq = classifier_sequence(&record.frames, source, cfg.tau_prime)?;
            let label = if record.solved { 1.0 } else { 0.0 };
            groups
                .entry((seq.object_count(), seq.len()))
                .or_default()
                .push((seq, label));
        }

        let units: Vec<Vec<(StateSequence, f64)>> = groups
            .into_values()
            .flat_map(|samples| {
                let half = samples.len().div_ceil(2).max(1);
                let mut it = samples.into_iter();
                let first: Vec<(StateSequence, f64)> = it.by_ref().take(half).collect();
                let second: Vec<(StateSequence, f64)> = it.collect();
                [first, second].into_iter().filter(|c| !c.is_empty())
            })
            .collect();
        let results: Vec<Result<(GradMap, f64, usize), SolutionError>> = units
            .par_iter()
            .map(|samples| {
                let seqs: Vec<StateSequence> = samples.iter().map(|(s, _)| s.clone()).collect();
                let labels: Vec<f64> = samples.iter().map(|(_, l)| *l).collect();
                let mut graph = Graph::new(classifier.store.precision());
                let logits = build_logits(&mut graph, &classifier.store, &seqs)?;
                let targets = graph.value_node(seqs.len(), 1, labels)?;
                let bce = graph.bce_with_logits_mean(logits, targets)?;
                // Weight the group loss by its sample count so the batch
                // mean is exact after reduction.
                let loss = graph.scale(bce, seqs.len() as f64);
                graph.evaluate(&classifier.store)?;
                graph.backward(loss)?;
                Ok((graph.param_grads(), graph.value(loss)[0], seqs.len()))
            })
            .collect();

        let mut grads = GradMap::new();
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for r in results {
            let (g, l, c) = r?;
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
            count += c;
        }
        for grad in grads.values_mut() {
            for g in grad.iter_mut() {
                *g /= count as f64;
            }
        }
        let loss = loss_sum / count as f64;
        if !loss.is_finite() {
            return Err(SolutionError::TrainingDiverged {
                iteration: iter,
                detail: "non-finite batch loss".into(),
            });
        }
        classifier.store.optimizer_step(&grads, &optimizer)?;
        if iter % cfg.trace_every == 0 || iter + 1 == cfg.iterations {
            trace.push((iter, loss));
        }
    }
    Ok(ClassifierReport { loss_trace: trace })
}
