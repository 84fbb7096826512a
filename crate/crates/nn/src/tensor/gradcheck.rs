//! Central-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::store::ParameterStore;
use super::{Precision, TensorError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
/// Above this many coordinates only a deterministic 1% sample is checked.
const FULL_CHECK_LIMIT: usize = 10_000;

/// Compares the analytic gradient of `build_loss` against central finite
/// differences over every parameter coordinate (or a 1% sample for large
/// stores). Runs in 64-bit regardless of the store's training precision.
/// Returns the maximum relative error.
pub fn gradient_check<F>(
    store: &ParameterStore,
    seed: u64,
    build_loss: F,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<NodeId, TensorError>,
{
    let mut store64 = store.with_precision(Precision::F64);

    let analytic = {
        let mut g = Graph::new(Precision::F64);
        let loss = build_loss(&mut g, &store64)?;
        g.evaluate(&store64)?;
        g.backward(loss)?;
        g.param_grads()
    };

    let eval_loss = |store64: &ParameterStore| -> Result<f64, TensorError> {
        let mut g = Graph::new(Precision::F64);
        let loss = build_loss(&mut g, store64)?;
        g.evaluate(store64)?;
        Ok(g.value(loss)[0])
    };

    let names: Vec<String> = store64.names().map(|s| s.to_string()).collect();
    let total: usize = store64.total_coords();
    let mut coords: Vec<(String, usize)> = Vec::new();
    if total <= FULL_CHECK_LIMIT {
        for name in &names {
            let n = store64.get(name).unwrap().data.len();
            coords.extend((0..n).map(|i| (name.clone(), i)));
        }
    } else {
        let sample = (total / 100).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..sample {
            let name = &names[rng.random_range(0..names.len())];
            let n = store64.get(name).unwrap().data.len();
            coords.push((name.clone(), rng.random_range(0..n)));
        }
    }

    let mut max_rel = 0.0f64;
    for (name, idx) in coords {
        let original = store64.get(&name).unwrap().data[idx];
        store64.get_mut(&name).unwrap().data[idx] = original + STEP;
        let plus = eval_loss(&store64)?;
        store64.get_mut(&name).unwrap().data[idx] = original - STEP;
        let minus = eval_loss(&store64)?;
        store64.get_mut(&name).unwrap().data[idx] = original;

        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic
            .get(&name)
            .ok_or_else(|| TensorError::Usage(format!("no gradient for {name:?}")))?[idx];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
