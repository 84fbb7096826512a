//! Paired interaction networks over two temporal offsets.
//!
//! Each net sees two consecutive frames: object features are the
//! concatenation of both frames' state vectors, a relation is built for
//! every ordered object pair as [sender, receiver, sender static/dynamic
//! one-hot], relations are embedded by a five-layer MLP into 50-d effects,
//! effects are summed per receiver and combined with the receiver's newest
//! state and a constant external-effect (gravity) term through a three-layer
//! MLP. The two nets' outputs are merged with the newest state by a final
//! MLP into a per-object pose delta.

use super::features::FEAT;
use super::{ContextWindow, ForwardError};
use crate::tensor::{Graph, Init, NodeId, ParameterStore};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use tumble_core::physics2d::GRAVITY;

const RELATION_IN: usize = 2 * 2 * FEAT + 2; // sender + receiver over two frames, one-hot
const RELATION_HIDDEN: usize = 100;
const EFFECT: usize = 50;
// Aggregation sees the object's own two-frame state (its velocity lives in
// the frame difference) plus the summed effects and the gravity constant.
const AGG_IN: usize = EFFECT + 2 * FEAT + 2;
const AGG_HIDDEN: usize = 150;
const DELTA: usize = 4; // dx, dy, dcos, dsin
const COMBINE_IN: usize = 2 * DELTA + FEAT;
const COMBINE_HIDDEN: usize = 64;

pub(super) fn init_params(store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
    for net in ["a", "b"] {
        let rel = [
            (RELATION_IN, RELATION_HIDDEN),
            (RELATION_HIDDEN, RELATION_HIDDEN),
            (RELATION_HIDDEN, RELATION_HIDDEN),
            (RELATION_HIDDEN, RELATION_HIDDEN),
            (RELATION_HIDDEN, EFFECT),
        ];
        for (l, (rin, rout)) in rel.iter().enumerate() {
            store.add_param(&format!("in.{net}.rel.{l}.w"), *rin, *rout, Init::XavierUniform, rng);
            store.add_param(&format!("in.{net}.rel.{l}.b"), 1, *rout, Init::Zeros, rng);
        }
        let agg = [(AGG_IN, AGG_HIDDEN), (AGG_HIDDEN, AGG_HIDDEN), (AGG_HIDDEN, DELTA)];
        for (l, (ain, aout)) in agg.iter().enumerate() {
            store.add_param(&format!("in.{net}.agg.{l}.w"), *ain, *aout, Init::XavierUniform, rng);
            store.add_param(&format!("in.{net}.agg.{l}.b"), 1, *aout, Init::Zeros, rng);
        }
    }
    let comb = [
        (COMBINE_IN, COMBINE_HIDDEN),
        (COMBINE_HIDDEN, COMBINE_HIDDEN),
        (COMBINE_HIDDEN, DELTA),
    ];
    for (l, (cin, cout)) in comb.iter().enumerate() {
        // The delta head starts at zero so initial predictions equal the
        // last frame; otherwise random deltas saturate the position clip
        // and blank out most of the gradient.
        let init = if l + 1 == comb.len() { Init::Zeros } else { Init::XavierUniform };
        store.add_param(&format!("in.comb.{l}.w"), *cin, *cout, init, rng);
        store.add_param(&format!("in.comb.{l}.b"), 1, *cout, Init::Zeros, rng);
    }
}

fn mlp(
    graph: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    layers: usize,
    mut x: NodeId,
) -> Result<NodeId, ForwardError> {
    for l in 0..layers {
        let w = graph.param(store, &format!("{prefix}.{l}.w"))?;
        let b = graph.param(store, &format!("{prefix}.{l}.b"))?;
        x = graph.matmul(x, w)?;
        x = graph.add_bias(x, b)?;
        if l + 1 < layers {
            x = graph.relu(x);
        }
    }
    Ok(x)
}

/// Stacks one frame across all windows into a (B*N, FEAT) value node.
fn frame_node(
    graph: &mut Graph,
    windows: &[ContextWindow],
    t: usize,
) -> Result<NodeId, ForwardError> {
    let n = windows[0].object_count();
    let mut data = Vec::with_capacity(windows.len() * n * FEAT);
    for w in windows {
        for obj in &w.frames()[t] {
            data.extend_from_slice(&obj.0);
        }
    }
    Ok(graph.value_node(windows.len() * n, FEAT, data)?)
}

fn one_interaction_net(
    graph: &mut Graph,
    store: &ParameterStore,
    net: &str,
    f_old: NodeId,
    f_new: NodeId,
    flags: NodeId,
    send_idx: &Arc<Vec<usize>>,
    recv_idx: &Arc<Vec<usize>>,
    rows: usize,
    gravity: NodeId,
) -> Result<NodeId, ForwardError> {
    let x = graph.concat_cols(&[f_old, f_new])?;
    let send = graph.gather_rows(x, Arc::clone(send_idx))?;
    let recv = graph.gather_rows(x, Arc::clone(recv_idx))?;
    let send_flags = graph.gather_rows(flags, Arc::clone(send_idx))?;
    let relations = graph.concat_cols(&[send, recv, send_flags])?;
    let effects = mlp(graph, store, &format!("in.{net}.rel"), 5, relations)?;
    let summed = graph.segment_sum_rows(effects, Arc::clone(recv_idx), rows)?;
    let agg_in = graph.concat_cols(&[summed, x, gravity])?;
    mlp(graph, store, &format!("in.{net}.agg"), 3, agg_in)
}

/// Builds the batched forward pass; returns a (B*N, 4) node holding the
/// predicted [x, y, cos, sin] per object, with positions clipped to [0, 1].
pub(super) fn build_forward(
    graph: &mut Graph,
    store: &ParameterStore,
    windows: &[ContextWindow],
) -> Result<NodeId, ForwardError> {
    let b = windows.len();
    let n = windows[0].object_count();
    let rows = b * n;

    let f0 = frame_node(graph, windows, 0)?;
    let f1 = frame_node(graph, windows, 1)?;
    let f2 = frame_node(graph, windows, 2)?;

    // Static/dynamic one-hot per object, from the newest frame.
    let mut flag_data = Vec::with_capacity(rows * 2);
    for w in windows {
        for obj in w.newest() {
            let d = obj.is_dynamic();
            flag_data.push(if d { 0.0 } else { 1.0 });
            flag_data.push(if d { 1.0 } else { 0.0 });
        }
    }
    let flags = graph.value_node(rows, 2, flag_data)?;

    let mut send = Vec::with_capacity(rows * (n - 1).max(1));
    let mut recv = Vec::with_capacity(rows * (n - 1).max(1));
    for w in 0..b {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    send.push(w * n + i);
                    recv.push(w * n + j);
                }
            }
        }
    }
    let send_idx = Arc::new(send);
    let recv_idx = Arc::new(recv);

    let gravity_vec: Vec<f64> = (0..rows).flat_map(|_| [0.0, -GRAVITY]).collect();
    let gravity = graph.value_node(rows, 2, gravity_vec)?;

    // One net on the last two context frames, one on the first two.
    let v_a = one_interaction_net(
        graph, store, "a", f1, f2, flags, &send_idx, &recv_idx, rows, gravity,
    )?;
    let v_b = one_interaction_net(
        graph, store, "b", f0, f1, flags, &send_idx, &recv_idx, rows, gravity,
    )?;

    let comb_in = graph.concat_cols(&[v_a, v_b, f2])?;
    let delta = mlp(graph, store, "in.comb", 3, comb_in)?;
    super::pose_update(graph, f2, delta)
}
