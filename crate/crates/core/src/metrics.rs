//! Success curves, AUCCESS, success@k, and per-template comparisons.

use crate::tasks::TaskId;
use std::collections::BTreeMap;
use thiserror::Error;

/// Attempts allowed per task.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty evaluation: no attempt records")]
    EmptyEvaluation,
    #[error("evaluation mismatch: {0}")]
    EvaluationMismatch(String),
}

/// Outcome of evaluating one task: the 1-based attempt index of the first
/// solving action, or `None` if the task was never solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptRecord {
    pub task: TaskId,
    pub first_solve_attempt: Option<u32>,
}

impl AttemptRecord {
    pub fn new(task: TaskId, first_solve_attempt: Option<u32>) -> AttemptRecord {
        if let Some(a) = first_solve_attempt {
            assert!(a >= 1, "attempt indices are 1-based");
        }
        AttemptRecord {
            task,
            first_solve_attempt,
        }
    }
}

/// Percentage of tasks solved within k attempts, for k = 1..=100.
pub fn success_curve(records: &[AttemptRecord]) -> Result<Vec<f64>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let n = records.len() as f64;
    let curve = (1..=MAX_ATTEMPTS as u32)
        .map(|k| {
            let solved = records
                .iter()
                .filter(|r| matches!(r.first_solve_attempt, Some(a) if a <= k))
                .count();
            100.0 * solved as f64 / n
        })
        .collect();
    Ok(curve)
}

/// Log-spaced attempt weights: w_k = ln(k+1) - ln(k). They telescope to
/// ln(101), so early attempts dominate the area.
pub fn attempt_weights() -> Vec<f64> {
    (1..=MAX_ATTEMPTS)
        .map(|k| ((k + 1) as f64).ln() - (k as f64).ln())
        .collect()
}

/// Weighted area under the success curve, in [0, 100].
pub fn auccess(curve: &[f64]) -> f64 {
    assert_eq!(curve.len(), MAX_ATTEMPTS);
    let weights = attempt_weights();
    // Weighting the solved fraction (not the percentage) keeps the all-solved
    // and none-solved cases exact: the two sums are then term-for-term equal.
    let num: f64 = weights.iter().zip(curve).map(|(w, s)| w * (s / 100.0)).sum();
    let den: f64 = weights.iter().sum();
    100.0 * (num / den)
}

/// AUCCESS straight from attempt records.
pub fn auccess_of(records: &[AttemptRecord]) -> Result<f64, MetricsError> {
    Ok(auccess(&success_curve(records)?))
}

/// Percentage of tasks solved within `k` attempts.
pub fn success_at(records: &[AttemptRecord], k: u32) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let solved = records
        .iter()
        .filter(|r| matches!(r.first_solve_attempt, Some(a) if a <= k))
        .count();
    Ok(100.0 * solved as f64 / records.len() as f64)
}

/// One row of the per-template comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRow {
    pub template_id: u32,
    pub auccess: f64,
    pub delta_auccess: f64,
    pub object_count: usize,
}

/// Per-template AUCCESS of an agent against a baseline, sorted by ascending
/// improvement. `object_counts` maps template id to the body count of the
/// template's canonical instance.
pub fn per_template_report(
    agent: &[AttemptRecord],
    baseline: &[AttemptRecord],
    object_counts: &BTreeMap<u32, usize>,
) -> Result<Vec<TemplateRow>, MetricsError> {
    let mut agent_tasks: Vec<TaskId> = agent.iter().map(|r| r.task).collect();
    let mut baseline_tasks: Vec<TaskId> = baseline.iter().map(|r| r.task).collect();
    agent_tasks.sort();
    baseline_tasks.sort();
    if agent_tasks != baseline_tasks {
        return Err(MetricsError::EvaluationMismatch(
            "agent and baseline were evaluated on different task sets".into(),
        ));
    }

    let group = |records: &[AttemptRecord]| {
        let mut by_template: BTreeMap<u32, Vec<AttemptRecord>> = BTreeMap::new();
        for r in records {
            by_template.entry(r.task.template_id).or_default().push(*r);
        }
        by_template
    };
    let agent_groups = group(agent);
    let baseline_groups = group(baseline);

    let mut rows = Vec::new();
    for (tid, records) in &agent_groups {
        let a = auccess_of(records)?;
        let b = auccess_of(&baseline_groups[tid])?;
        rows.push(TemplateRow {
            template_id: *tid,
            auccess: a,
            delta_auccess: a - b,
            object_count: object_counts.get(tid).copied().unwrap_or(0),
        });
    }
    rows.sort_by(|x, y| {
        x.delta_auccess
            .total_cmp(&y.delta_auccess)
            .then(x.template_id.cmp(&y.template_id))
    });
    Ok(rows)
}

/// Spearman rank correlation; used for observational reports only.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mean = (n as f64 + 1.0) / 2.0;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for k in 0..n {
        num += (rx[k] - mean) * (ry[k] - mean);
        dx += (rx[k] - mean).powi(2);
        dy += (ry[k] - mean).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        0.0
    } else {
        num / (dx * dy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(template: u32, instance: u32, attempt: Option<u32>) -> AttemptRecord {
        AttemptRecord::new(TaskId::new(template, instance), attempt)
    }

    #[test]
    fn curve_for_half_solved_at_one() {
        let curve =
            success_curve(&[rec(0, 0, Some(1)), rec(0, 1, None)]).unwrap();
        assert!(curve.iter().all(|&s| s == 50.0));
    }

    #[test]
    fn curve_step_at_attempt_ten() {
        let curve = success_curve(&[rec(0, 0, Some(10))]).unwrap();
        for (i, &s) in curve.iter().enumerate() {
            let k = i + 1;
            assert_eq!(s, if k >= 10 { 100.0 } else { 0.0 }, "k={k}");
        }
    }

    #[test]
    fn auccess_extremes() {
        assert_eq!(auccess(&vec![100.0; 100]), 100.0);
        assert_eq!(auccess(&vec![0.0; 100]), 0.0);
    }

    #[test]
    fn auccess_single_solve_at_ten_matches_weighted_sum_oracle() {
        // Independent oracle: the weights telescope, so the value is
        // (ln 101 - ln 10) / ln 101 * 100.
        let expect = (101f64.ln() - 10f64.ln()) / 101f64.ln() * 100.0;
        let curve = success_curve(&[rec(0, 0, Some(10))]).unwrap();
        assert!((auccess(&curve) - expect).abs() < 1e-6);
        assert!((expect - 50.108).abs() < 1e-3);
    }

    #[test]
    fn weights_sum_to_ln_101_and_decrease() {
        let w = attempt_weights();
        let sum: f64 = w.iter().sum();
        assert!((sum - 101f64.ln()).abs() < 1e-12);
        for pair in w.windows(2) {
            assert!(pair[0] > pair[1]);
        }
    }

    #[test]
    fn success_at_examples() {
        let all = vec![rec(0, 0, Some(1)), rec(0, 1, Some(1))];
        assert_eq!(success_at(&all, 10).unwrap(), 100.0);
        let none = vec![rec(0, 0, None)];
        assert_eq!(success_at(&none, 10).unwrap(), 0.0);
        let late = vec![rec(0, 0, Some(11))];
        assert_eq!(success_at(&late, 10).unwrap(), 0.0);
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(matches!(
            success_curve(&[]),
            Err(MetricsError::EmptyEvaluation)
        ));
    }

    #[test]
    fn per_template_report_zero_delta_for_identical_agents() {
        let records = vec![rec(0, 0, Some(2)), rec(1, 0, Some(5)), rec(1, 1, None)];
        let counts = BTreeMap::from([(0, 3), (1, 5)]);
        let rows = per_template_report(&records, &records, &counts).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.delta_auccess == 0.0));
    }

    #[test]
    fn per_template_report_sorts_improvement_last() {
        let baseline = vec![rec(0, 0, Some(1)), rec(1, 0, Some(50))];
        let agent = vec![rec(0, 0, Some(1)), rec(1, 0, Some(2))];
        let counts = BTreeMap::from([(0, 2), (1, 2)]);
        let rows = per_template_report(&agent, &baseline, &counts).unwrap();
        assert_eq!(rows.last().unwrap().template_id, 1);
        assert!(rows.last().unwrap().delta_auccess > 0.0);
    }

    #[test]
    fn per_template_report_rejects_mismatched_tasks() {
        let a = vec![rec(0, 0, Some(1))];
        let b = vec![rec(0, 1, Some(1))];
        assert!(per_template_report(&a, &b, &BTreeMap::new()).is_err());
    }

    #[test]
    fn spearman_detects_monotone_relation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&xs, &[2.0, 4.0, 5.0, 9.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &[9.0, 5.0, 4.0, 2.0]) + 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Pointwise curve dominance implies AUCCESS dominance.
        #[test]
        fn auccess_monotone_in_curve_dominance(
            base in proptest::collection::vec(0.0f64..100.0, 100),
            bumps in proptest::collection::vec(0.0f64..20.0, 100),
        ) {
            let better: Vec<f64> = base
                .iter()
                .zip(&bumps)
                .map(|(s, b)| (s + b).min(100.0))
                .collect();
            prop_assert!(auccess(&better) >= auccess(&base));
        }

        #[test]
        fn success_curve_is_monotone_and_permutation_invariant(
            attempts in proptest::collection::vec(
                proptest::option::of(1u32..=100), 1..40
            ),
            seed in any::<u64>(),
        ) {
            let records: Vec<AttemptRecord> = attempts
                .iter()
                .enumerate()
                .map(|(i, &a)| rec(0, i as u32, a))
                .collect();
            let curve = success_curve(&records).unwrap();
            for pair in curve.windows(2) {
                prop_assert!(pair[0] <= pair[1]);
            }
            // Shuffle deterministically and compare.
            let mut shuffled = records.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                let j = (s >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            prop_assert_eq!(success_curve(&shuffled).unwrap(), curve);
        }
    }
}
