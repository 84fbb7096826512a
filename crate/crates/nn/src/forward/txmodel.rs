//! Transformer dynamics model: object-time tokens through a 6-layer,
//! 8-head encoder; the last timestep's tokens decode to pose deltas.

use super::features::FEAT;
use super::{ContextWindow, ForwardError, TAU};
use crate::tensor::{sinusoidal_encoding_table, Graph, Init, NodeId, ParameterStore};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub(super) const EMBED: usize = 128;
pub(super) const LAYERS: usize = 6;
pub(super) const HEADS: usize = 8;
pub(super) const FFN_HIDDEN: usize = 256;
const DECODE_HIDDEN: usize = 100;
const DELTA: usize = 4;

pub(super) fn init_params(store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
    store.add_param("tx.embed.0.w", FEAT, EMBED, Init::XavierUniform, rng);
    store.add_param("tx.embed.0.b", 1, EMBED, Init::Zeros, rng);
    store.add_param("tx.embed.1.w", EMBED, EMBED, Init::XavierUniform, rng);
    store.add_param("tx.embed.1.b", 1, EMBED, Init::Zeros, rng);
    init_encoder_params(store, rng, "tx", LAYERS, EMBED, FFN_HIDDEN);
    let dec = [(EMBED, DECODE_HIDDEN), (DECODE_HIDDEN, DECODE_HIDDEN), (DECODE_HIDDEN, DELTA)];
    for (l, (din, dout)) in dec.iter().enumerate() {
        // Zero delta head: see the interaction net's initializer.
        let init = if l + 1 == dec.len() { Init::Zeros } else { Init::XavierUniform };
        store.add_param(&format!("tx.dec.{l}.w"), *din, *dout, init, rng);
        store.add_param(&format!("tx.dec.{l}.b"), 1, *dout, Init::Zeros, rng);
    }
}

/// Parameters for a post-norm transformer encoder stack under `prefix`.
pub(crate) fn init_encoder_params(
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    layers: usize,
    embed: usize,
    ffn_hidden: usize,
) {
    for l in 0..layers {
        for proj in ["wq", "wk", "wv", "wo"] {
            store.add_param(&format!("{prefix}.l{l}.{proj}"), embed, embed, Init::XavierUniform, rng);
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            store.add_param(&format!("{prefix}.l{l}.{bias}"), 1, embed, Init::Zeros, rng);
        }
        store.add_param(&format!("{prefix}.l{l}.ffn.0.w"), embed, ffn_hidden, Init::XavierUniform, rng);
        store.add_param(&format!("{prefix}.l{l}.ffn.0.b"), 1, ffn_hidden, Init::Zeros, rng);
        store.add_param(&format!("{prefix}.l{l}.ffn.1.w"), ffn_hidden, embed, Init::XavierUniform, rng);
        store.add_param(&format!("{prefix}.l{l}.ffn.1.b"), 1, embed, Init::Zeros, rng);
        store.add_param(&format!("{prefix}.l{l}.ln1.g"), 1, embed, Init::Const(1.0), rng);
        store.add_param(&format!("{prefix}.l{l}.ln1.b"), 1, embed, Init::Zeros, rng);
        store.add_param(&format!("{prefix}.l{l}.ln2.g"), 1, embed, Init::Const(1.0), rng);
        store.add_param(&format!("{prefix}.l{l}.ln2.b"), 1, embed, Init::Zeros, rng);
    }
    store.add_param(&format!("{prefix}.lnf.g"), 1, embed, Init::Const(1.0), rng);
    store.add_param(&format!("{prefix}.lnf.b"), 1, embed, Init::Zeros, rng);
}

fn layer_norm(
    graph: &mut Graph,
    store: &ParameterStore,
    name_g: &str,
    name_b: &str,
    x: NodeId,
) -> Result<NodeId, ForwardError> {
    let normed = graph.layer_norm_rows(x);
    let gain = graph.param(store, name_g)?;
    let bias = graph.param(store, name_b)?;
    let scaled = graph.scale_rows(normed, gain)?;
    Ok(graph.add_bias(scaled, bias)?)
}

/// One pre-norm encoder layer over tokens grouped into `windows` blocks of
/// `tokens_per_window` rows; attention is confined to each block.
#[allow(clippy::too_many_arguments)]
pub(crate) fn encoder_layer(
    graph: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    layer: usize,
    x: NodeId,
    n_windows: usize,
    tokens_per_window: usize,
    heads: usize,
) -> Result<NodeId, ForwardError> {
    let embed = graph.cols(x);
    let head_dim = embed / heads;
    let p = |s: &str| format!("{prefix}.l{layer}.{s}");

    let normed = layer_norm(graph, store, &p("ln1.g"), &p("ln1.b"), x)?;
    let wq = graph.param(store, &p("wq"))?;
    let bq = graph.param(store, &p("bq"))?;
    let wk = graph.param(store, &p("wk"))?;
    let bk = graph.param(store, &p("bk"))?;
    let wv = graph.param(store, &p("wv"))?;
    let bv = graph.param(store, &p("bv"))?;
    let q = graph.matmul(normed, wq)?;
    let q = graph.add_bias(q, bq)?;
    let k = graph.matmul(normed, wk)?;
    let k = graph.add_bias(k, bk)?;
    let v = graph.matmul(normed, wv)?;
    let v = graph.add_bias(v, bv)?;

    let mut window_outputs = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let lo = w * tokens_per_window;
        let hi = lo + tokens_per_window;
        let qw = graph.slice_rows(q, lo, hi)?;
        let kw = graph.slice_rows(k, lo, hi)?;
        let vw = graph.slice_rows(v, lo, hi)?;
        let mut heads_out = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = graph.slice_cols(qw, h * head_dim, (h + 1) * head_dim)?;
            let kh = graph.slice_cols(kw, h * head_dim, (h + 1) * head_dim)?;
            let vh = graph.slice_cols(vw, h * head_dim, (h + 1) * head_dim)?;
            heads_out.push(graph.attention(qh, kh, vh)?);
        }
        window_outputs.push(graph.concat_cols(&heads_out)?);
    }
    let attn = graph.concat_rows(&window_outputs)?;
    let wo = graph.param(store, &p("wo"))?;
    let bo = graph.param(store, &p("bo"))?;
    let attn = graph.matmul(attn, wo)?;
    let attn = graph.add_bias(attn, bo)?;
    let x = graph.add(x, attn)?;

    let normed = layer_norm(graph, store, &p("ln2.g"), &p("ln2.b"), x)?;
    let w1 = graph.param(store, &p("ffn.0.w"))?;
    let b1 = graph.param(store, &p("ffn.0.b"))?;
    let w2 = graph.param(store, &p("ffn.1.w"))?;
    let b2 = graph.param(store, &p("ffn.1.b"))?;
    let ffn = graph.matmul(normed, w1)?;
    let ffn = graph.add_bias(ffn, b1)?;
    let ffn = graph.relu(ffn);
    let ffn = graph.matmul(ffn, w2)?;
    let ffn = graph.add_bias(ffn, b2)?;
    Ok(graph.add(x, ffn)?)
}

/// Closing norm after a pre-norm encoder stack.
pub(crate) fn final_norm(
    graph: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, ForwardError> {
    layer_norm(graph, store, &format!("{prefix}.lnf.g"), &format!("{prefix}.lnf.b"), x)
}

/// Embeds object-time tokens (2-layer MLP plus a sinusoidal encoding of the
/// frame time) for `windows` of `n` objects over `tau` frames.
pub(crate) fn embed_tokens(
    graph: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    token_features: NodeId,
    n_windows: usize,
    tau: usize,
    n_objects: usize,
    embed: usize,
) -> Result<NodeId, ForwardError> {
    let w0 = graph.param(store, &format!("{prefix}.embed.0.w"))?;
    let b0 = graph.param(store, &format!("{prefix}.embed.0.b"))?;
    let w1 = graph.param(store, &format!("{prefix}.embed.1.w"))?;
    let b1 = graph.param(store, &format!("{prefix}.embed.1.b"))?;
    let h = graph.matmul(token_features, w0)?;
    let h = graph.add_bias(h, b0)?;
    let h = graph.relu(h);
    let h = graph.matmul(h, w1)?;
    let h = graph.add_bias(h, b1)?;

    let table = sinusoidal_encoding_table(tau, embed);
    let mut pe = Vec::with_capacity(n_windows * tau * n_objects * embed);
    for _ in 0..n_windows {
        for t in 0..tau {
            for _ in 0..n_objects {
                pe.extend_from_slice(&table[t * embed..(t + 1) * embed]);
            }
        }
    }
    let pe_node = graph.value_node(n_windows * tau * n_objects, embed, pe)?;
    Ok(graph.add(h, pe_node)?)
}

/// Builds the batched forward pass; returns a (B*N, 4) pose node.
pub(super) fn build_forward(
    graph: &mut Graph,
    store: &ParameterStore,
    windows: &[ContextWindow],
) -> Result<NodeId, ForwardError> {
    let b = windows.len();
    let n = windows[0].object_count();
    let tokens_per_window = TAU * n;

    // Token features: window-major, then frame-major, then object order.
    let mut data = Vec::with_capacity(b * tokens_per_window * FEAT);
    for w in windows {
        for frame in w.frames() {
            for obj in frame {
                data.extend_from_slice(&obj.0);
            }
        }
    }
    let tokens = graph.value_node(b * tokens_per_window, FEAT, data)?;
    let mut x = embed_tokens(graph, store, "tx", tokens, b, TAU, n, EMBED)?;
    for l in 0..LAYERS {
        x = encoder_layer(graph, store, "tx", l, x, b, tokens_per_window, HEADS)?;
    }
    x = final_norm(graph, store, "tx", x)?;

    // Tokens of the newest frame decode to deltas.
    let mut last_idx = Vec::with_capacity(b * n);
    for w in 0..b {
        for i in 0..n {
            last_idx.push(w * tokens_per_window + (TAU - 1) * n + i);
        }
    }
    let last = graph.gather_rows(x, Arc::new(last_idx))?;
    let mut d = last;
    let dec = ["tx.dec.0", "tx.dec.1", "tx.dec.2"];
    for (l, name) in dec.iter().enumerate() {
        let w = graph.param(store, &format!("{name}.w"))?;
        let bias = graph.param(store, &format!("{name}.b"))?;
        d = graph.matmul(d, w)?;
        d = graph.add_bias(d, bias)?;
        if l + 1 < dec.len() {
            d = graph.relu(d);
        }
    }

    let f2 = {
        let mut newest = Vec::with_capacity(b * n * FEAT);
        for w in windows {
            for obj in w.newest() {
                newest.extend_from_slice(&obj.0);
            }
        }
        graph.value_node(b * n, FEAT, newest)?
    };
    super::pose_update(graph, f2, d)
}
