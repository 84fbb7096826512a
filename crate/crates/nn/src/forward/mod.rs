//! Object-based forward-prediction models and their training loop.
//!
//! Two dynamics models share one contract: given a window of three past
//! object-state frames at 1 fps, predict the next frame's positions and
//! orientations for dynamic objects. Static objects pass through exactly.

mod dataset;
mod features;
mod interaction;
mod train;
mod txmodel;

#[cfg(test)]
mod tests;

pub use dataset::{read_dataset, write_dataset, Dataset, DatasetRecord, DATASET_MAGIC};
pub use features::{col, featurize, world_with_predicted_poses, ObjectState, FEAT};
pub use train::{noise_probability, train_forward, TrainForwardConfig, TrainReport, NOISE_STD};

pub(crate) use txmodel::{embed_tokens, encoder_layer, final_norm, init_encoder_params};

use crate::tensor::{Graph, NodeId, ParameterStore, Precision, TensorError};
use thiserror::Error;

/// Context frames consumed per prediction.
pub const TAU: usize = 3;

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unsupported body: {0}")]
    UnsupportedBody(String),
    #[error("context error: {0}")]
    Context(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    TrainingDiverged { iteration: u64, detail: String },
    #[error("dataset error: {0}")]
    Dataset(String),
}

/// A window of `TAU` consecutive frames with a constant object roster.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    frames: Vec<Vec<ObjectState>>,
}

impl ContextWindow {
    /// Builds a window from exactly `TAU` frames.
    pub fn new(frames: Vec<Vec<ObjectState>>) -> Result<ContextWindow, ForwardError> {
        if frames.len() != TAU {
            return Err(ForwardError::Context(format!(
                "context needs {TAU} frames, got {}",
                frames.len()
            )));
        }
        let n = frames[0].len();
        if frames.iter().any(|f| f.len() != n) {
            return Err(ForwardError::Context(
                "object count varies across the context window".into(),
            ));
        }
        Ok(ContextWindow { frames })
    }

    /// Builds a window from up to `TAU` trailing frames, left-padding with
    /// all-zero frames (the tau = 1 variant pads two empty frames).
    pub fn padded(frames: &[Vec<ObjectState>]) -> Result<ContextWindow, ForwardError> {
        if frames.is_empty() || frames.len() > TAU {
            return Err(ForwardError::Context(format!(
                "padded context needs 1..={TAU} frames, got {}",
                frames.len()
            )));
        }
        let n = frames[0].len();
        let zero = vec![ObjectState([0.0; FEAT]); n];
        let mut full = vec![zero; TAU - frames.len()];
        full.extend_from_slice(frames);
        ContextWindow::new(full)
    }

    pub fn object_count(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frames(&self) -> &[Vec<ObjectState>] {
        &self.frames
    }

    pub fn newest(&self) -> &[ObjectState] {
        &self.frames[TAU - 1]
    }

    /// Window advanced by one predicted frame.
    pub fn advanced(&self, next: Vec<ObjectState>) -> Result<ContextWindow, ForwardError> {
        if next.len() != self.object_count() {
            return Err(ForwardError::Context(
                "prediction changed the object count".into(),
            ));
        }
        let mut frames = self.frames.clone();
        frames.remove(0);
        frames.push(next);
        ContextWindow::new(frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Paired interaction networks over two temporal offsets.
    Interaction,
    /// Transformer encoder over object-time tokens.
    Transformer,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Interaction => "in",
            ModelKind::Transformer => "tx",
        }
    }

    /// Training step size used by default for this model family.
    pub fn default_lr(self) -> f64 {
        match self {
            ModelKind::Interaction => 1e-3,
            ModelKind::Transformer => 1e-4,
        }
    }
}

/// A trainable forward-dynamics model.
pub struct ForwardModel {
    pub kind: ModelKind,
    pub store: ParameterStore,
}

impl ForwardModel {
    pub fn new(kind: ModelKind, seed: u64) -> ForwardModel {
        let mut store = ParameterStore::new(Precision::F32);
        let mut rng = tumble_core::rng::rng_for(seed, &[0x6d6f64656c, kind as u64]);
        match kind {
            ModelKind::Interaction => interaction::init_params(&mut store, &mut rng),
            ModelKind::Transformer => txmodel::init_params(&mut store, &mut rng),
        }
        ForwardModel { kind, store }
    }

    pub fn from_store(kind: ModelKind, store: ParameterStore) -> ForwardModel {
        ForwardModel { kind, store }
    }

    /// Next-frame prediction for one context window.
    pub fn predict(&self, ctx: &ContextWindow) -> Result<Vec<ObjectState>, ForwardError> {
        Ok(self
            .predict_batch(std::slice::from_ref(ctx))?
            .pop()
            .expect("one window in, one out"))
    }

    /// Batched next-frame prediction. All windows must share one object
    /// count (they are stacked into a single graph).
    pub fn predict_batch(
        &self,
        windows: &[ContextWindow],
    ) -> Result<Vec<Vec<ObjectState>>, ForwardError> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let n = windows[0].object_count();
        if windows.iter().any(|w| w.object_count() != n) {
            return Err(ForwardError::Context(
                "batched windows must share an object count".into(),
            ));
        }
        if n == 0 {
            return Ok(windows.iter().map(|_| Vec::new()).collect());
        }
        match self.kind {
            ModelKind::Interaction => self.predict_raw(windows),
            ModelKind::Transformer => {
                // Objects are fed through the attention stack in a canonical
                // order derived from their trajectories, which makes the
                // model's permutation equivariance exact in floating point,
                // not just mathematical.
                let perms: Vec<Vec<usize>> = windows.iter().map(canonical_order).collect();
                let permuted: Vec<ContextWindow> = windows
                    .iter()
                    .zip(&perms)
                    .map(|(w, perm)| {
                        let frames = w
                            .frames()
                            .iter()
                            .map(|f| perm.iter().map(|&i| f[i]).collect())
                            .collect();
                        ContextWindow::new(frames)
                    })
                    .collect::<Result<_, _>>()?;
                let canon = self.predict_raw(&permuted)?;
                Ok(canon
                    .into_iter()
                    .zip(&perms)
                    .map(|(frame, perm)| {
                        let mut out = vec![ObjectState([0.0; FEAT]); frame.len()];
                        for (k, state) in frame.into_iter().enumerate() {
                            out[perm[k]] = state;
                        }
                        out
                    })
                    .collect())
            }
        }
    }

    fn predict_raw(&self, windows: &[ContextWindow]) -> Result<Vec<Vec<ObjectState>>, ForwardError> {
        let mut graph = Graph::new(self.store.precision());
        let out = match self.kind {
            ModelKind::Interaction => {
                interaction::build_forward(&mut graph, &self.store, windows)?
            }
            ModelKind::Transformer => txmodel::build_forward(&mut graph, &self.store, windows)?,
        };
        graph.evaluate(&self.store)?;
        Ok(assemble_predictions(&graph, out, windows))
    }

    /// Autoregressive rollout: each prediction is appended to the context
    /// and the oldest frame dropped.
    pub fn rollout(
        &self,
        ctx: &ContextWindow,
        steps: usize,
    ) -> Result<Vec<Vec<ObjectState>>, ForwardError> {
        let mut out = self.rollout_batch(std::slice::from_ref(ctx), steps)?;
        Ok(out.pop().expect("one window in, one out"))
    }

    /// Batched autoregressive rollout over windows with a shared object
    /// count; returns per-window predicted frame lists.
    pub fn rollout_batch(
        &self,
        windows: &[ContextWindow],
        steps: usize,
    ) -> Result<Vec<Vec<Vec<ObjectState>>>, ForwardError> {
        let mut contexts: Vec<ContextWindow> = windows.to_vec();
        let mut out: Vec<Vec<Vec<ObjectState>>> = vec![Vec::with_capacity(steps); windows.len()];
        for _ in 0..steps {
            let predictions = self.predict_batch(&contexts)?;
            for ((ctx, frames), next) in contexts.iter_mut().zip(out.iter_mut()).zip(predictions) {
                frames.push(next.clone());
                *ctx = ctx.advanced(next)?;
            }
        }
        Ok(out)
    }
}

/// Stable object ordering keyed by the full per-object trajectory across
/// the window. Objects with identical trajectories are interchangeable, so
/// ties resolved by index cannot break permutation invariance.
fn canonical_order(window: &ContextWindow) -> Vec<usize> {
    let n = window.object_count();
    let key = |i: usize| -> Vec<f64> {
        window
            .frames()
            .iter()
            .flat_map(|f| f[i].0.iter().copied())
            .collect()
    };
    let keys: Vec<Vec<f64>> = (0..n).map(key).collect();
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

/// Shared decoder tail: adds the predicted delta to the newest frame's
/// pose, clipping positions to the unit square. Returns a (B*N, 4) node of
/// [x, y, cos, sin].
pub(crate) fn pose_update(
    graph: &mut Graph,
    newest_frame: NodeId,
    delta: NodeId,
) -> Result<NodeId, ForwardError> {
    let pos_prev = graph.slice_cols(newest_frame, col::X, col::Y + 1)?;
    let ori_prev = graph.slice_cols(newest_frame, col::COS, col::SIN + 1)?;
    let dpos = graph.slice_cols(delta, 0, 2)?;
    let dori = graph.slice_cols(delta, 2, 4)?;
    let pos = graph.add(pos_prev, dpos)?;
    let pos = graph.hard_tanh01(pos);
    let ori = graph.add(ori_prev, dori)?;
    Ok(graph.concat_cols(&[pos, ori])?)
}

/// Turns raw graph outputs (one row of [x, y, cos, sin] per object) into
/// object states: dynamic objects take the predicted pose with the
/// orientation renormalized onto the unit circle; static objects pass
/// through bit-exactly.
fn assemble_predictions(
    graph: &Graph,
    out_node: NodeId,
    windows: &[ContextWindow],
) -> Vec<Vec<ObjectState>> {
    let n = windows[0].object_count();
    let values = graph.value(out_node);
    let mut result = Vec::with_capacity(windows.len());
    for (w, window) in windows.iter().enumerate() {
        let newest = window.newest();
        let mut frame = Vec::with_capacity(n);
        for (i, prev) in newest.iter().enumerate() {
            if !prev.is_dynamic() {
                frame.push(*prev);
                continue;
            }
            let row = &values[(w * n + i) * 4..(w * n + i) * 4 + 4];
            let mut f = prev.0;
            f[col::X] = row[0];
            f[col::Y] = row[1];
            let norm = (row[2] * row[2] + row[3] * row[3]).sqrt();
            if norm < 1e-6 {
                f[col::COS] = 1.0;
                f[col::SIN] = 0.0;
            } else {
                f[col::COS] = row[2] / norm;
                f[col::SIN] = row[3] / norm;
            }
            frame.push(ObjectState(f));
        }
        result.push(frame);
    }
    result
}
