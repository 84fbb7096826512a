use super::*;
use crate::tensor::gradient_check;
use tumble_core::geom::Vec2;
use tumble_core::physics2d::{Body, BodyColor, Shape, WorldState};
use tumble_core::tasks::TaskId;

fn gray_ball(id: u32, x: f64, y: f64, r: f64) -> Body {
    Body::new(id, Shape::Ball { radius: r }, BodyColor::Gray, Vec2::new(x, y), 0.0)
}

fn black_bar(id: u32, x: f64, y: f64) -> Body {
    Body::new(
        id,
        Shape::Bar {
            half_length: 0.2,
            half_thickness: 0.02,
        },
        BodyColor::Black,
        Vec2::new(x, y),
        0.0,
    )
}

fn window_of(world: &WorldState) -> ContextWindow {
    let f = featurize(world);
    ContextWindow::new(vec![f.clone(), f.clone(), f]).unwrap()
}

#[test]
fn featurize_matches_documented_layout() {
    let world = WorldState::new(vec![gray_ball(0, 0.5, 0.5, 0.1)]);
    let feats = featurize(&world);
    assert_eq!(
        feats[0].0,
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.1, 1.0, 0.0, 1.0]
    );
}

#[test]
fn featurize_static_bar_has_zero_flag() {
    let world = WorldState::new(vec![black_bar(0, 0.5, 0.1)]);
    let f = featurize(&world)[0];
    assert!(f.is_bar());
    assert!(!f.is_dynamic());
    assert_eq!(f.0[col::DYNAMIC], 0.0);
    assert_eq!(f.size(), 0.2);
}

#[test]
fn featurize_is_deterministic() {
    let world = WorldState::new(vec![black_bar(0, 0.5, 0.1), gray_ball(1, 0.3, 0.6, 0.05)]);
    assert_eq!(featurize(&world), featurize(&world));
}

#[test]
fn static_objects_are_exact_fixed_points_of_both_models() {
    let world = WorldState::new(vec![
        black_bar(0, 0.5, 0.05),
        gray_ball(1, 0.4, 0.6, 0.05),
        gray_ball(2, 0.6, 0.3, 0.04),
    ]);
    let ctx = window_of(&world);
    for kind in [ModelKind::Interaction, ModelKind::Transformer] {
        let model = ForwardModel::new(kind, 3);
        let next = model.predict(&ctx).unwrap();
        assert_eq!(next.len(), 3);
        assert_eq!(next[0], ctx.newest()[0], "{kind:?} moved a static body");
        assert!(next[1] != ctx.newest()[1] || next[2] != ctx.newest()[2]);
    }
}

#[test]
fn predictions_stay_in_the_unit_square_even_when_forced_out() {
    let world = WorldState::new(vec![gray_ball(0, 0.9, 0.1, 0.05)]);
    let ctx = window_of(&world);
    let mut model = ForwardModel::new(ModelKind::Interaction, 3);
    // Blow up the final combine bias so the raw delta exits [0, 1].
    model.store.get_mut("in.comb.2.b").unwrap().data = vec![10.0, -10.0, 0.0, 0.0];
    let next = model.predict(&ctx).unwrap();
    assert_eq!(next[0].x(), 1.0);
    assert_eq!(next[0].y(), 0.0);
}

#[test]
fn prediction_preserves_layout_fields() {
    let world = WorldState::new(vec![
        black_bar(0, 0.5, 0.05),
        gray_ball(1, 0.4, 0.6, 0.05),
    ]);
    let ctx = window_of(&world);
    let model = ForwardModel::new(ModelKind::Interaction, 1);
    let next = model.predict(&ctx).unwrap();
    let prev = &ctx.newest()[1];
    let out = &next[1];
    assert_eq!(out.size(), prev.size());
    assert_eq!(out.color(), prev.color());
    assert!(out.is_ball());
    assert!(out.is_dynamic());
    let cs = out.0[col::COS];
    let sn = out.0[col::SIN];
    assert!((cs * cs + sn * sn - 1.0).abs() < 1e-6);
}

#[test]
fn transformer_is_exactly_permutation_equivariant() {
    let world = WorldState::new(vec![
        black_bar(0, 0.5, 0.05),
        gray_ball(1, 0.4, 0.6, 0.05),
        gray_ball(2, 0.6, 0.3, 0.04),
        gray_ball(3, 0.2, 0.8, 0.06),
    ]);
    let ctx = window_of(&world);
    let model = ForwardModel::new(ModelKind::Transformer, 7);
    let base = model.predict(&ctx).unwrap();

    let perm = [2usize, 0, 3, 1];
    let frames: Vec<Vec<ObjectState>> = ctx
        .frames()
        .iter()
        .map(|f| perm.iter().map(|&i| f[i]).collect())
        .collect();
    let permuted_ctx = ContextWindow::new(frames).unwrap();
    let permuted_out = model.predict(&permuted_ctx).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(permuted_out[k], base[i], "object {i} diverged under permutation");
    }
}

#[test]
fn noise_schedule_matches_endpoints_exactly() {
    let total = 1000;
    assert_eq!(noise_probability(0, total), 0.2);
    assert_eq!(noise_probability(75, total), 0.1);
    assert_eq!(noise_probability(125, total), 0.0);
    assert_eq!(noise_probability(500, total), 0.0);
    assert_eq!(noise_probability(999, total), 0.0);
}

/// Constant-velocity synthetic rollouts with a closed-form next frame.
pub(crate) fn linear_motion_dataset(n_records: usize, seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = tumble_core::rng::rng_for(seed, &[0x6c696e]);
    let mut records = Vec::new();
    for k in 0..n_records {
        let n_objects = 2 + (k % 2);
        let colors = [BodyColor::Gray, BodyColor::Blue, BodyColor::Green];
        let mut pos: Vec<(f64, f64)> = Vec::new();
        let mut vel: Vec<(f64, f64)> = Vec::new();
        let mut radius: Vec<f64> = Vec::new();
        for _ in 0..n_objects {
            pos.push((rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)));
            vel.push((rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)));
            radius.push(rng.random_range(0.02..0.08));
        }
        let mut frames = Vec::new();
        for t in 0..7 {
            let frame: Vec<ObjectState> = pos
                .iter()
                .zip(&vel)
                .zip(&radius)
                .enumerate()
                .map(|(i, ((&(x, y), &(vx, vy)), &r))| {
                    let body = Body::new(
                        0,
                        Shape::Ball { radius: r },
                        colors[i % colors.len()],
                        Vec2::new(x + vx * t as f64, y + vy * t as f64),
                        0.0,
                    );
                    ObjectState::from_body(&body)
                })
                .collect();
            frames.push(frame);
        }
        records.push(DatasetRecord {
            task: TaskId::new(99, k as u32),
            action: tumble_core::actions::Action::ball(0.5, 0.5, 0.05),
            solved: k % 2 == 0,
            frames,
        });
    }
    Dataset { records }
}

pub(crate) fn one_step_mse(model: &ForwardModel, dataset: &Dataset) -> (f64, f64) {
    // Returns (model mse, copy-last-frame mse) over all windows.
    let mut model_se = 0.0;
    let mut copy_se = 0.0;
    let mut count = 0.0;
    for r in &dataset.records {
        for start in 0..r.frames.len() - TAU {
            let ctx = ContextWindow::new(r.frames[start..start + TAU].to_vec()).unwrap();
            let target = &r.frames[start + TAU];
            let pred = model.predict(&ctx).unwrap();
            for ((p, t), last) in pred.iter().zip(target).zip(ctx.newest()) {
                if !t.is_dynamic() {
                    continue;
                }
                model_se += (p.x() - t.x()).powi(2) + (p.y() - t.y()).powi(2);
                copy_se += (last.x() - t.x()).powi(2) + (last.y() - t.y()).powi(2);
                count += 2.0;
            }
        }
    }
    (model_se / count, copy_se / count)
}

#[test]
fn interaction_net_learns_linear_motion() {
    let train = linear_motion_dataset(150, 1);
    let held_out = linear_motion_dataset(40, 2);
    let mut model = ForwardModel::new(ModelKind::Interaction, 5);
    let cfg = TrainForwardConfig {
        iterations: 2500,
        batch_size: 16,
        seed: 4,
        ..TrainForwardConfig::default()
    };
    train_forward(&mut model, &train, &cfg).unwrap();
    let (model_mse, copy_mse) = one_step_mse(&model, &held_out);
    assert!(
        model_mse < 0.1 * copy_mse,
        "model {model_mse} vs copy-last {copy_mse}"
    );
}

#[test]
fn transformer_training_reduces_loss() {
    // At desk-scale iteration counts the transformer does not reach the
    // interaction net's one-step accuracy; this asserts the training
    // contract instead: a large, finite, deterministic loss reduction.
    let train = linear_motion_dataset(60, 3);
    let mut model = ForwardModel::new(ModelKind::Transformer, 6);
    let cfg = TrainForwardConfig {
        iterations: 700,
        batch_size: 16,
        lr: Some(2e-4),
        seed: 8,
        trace_every: 100,
    };
    let report = train_forward(&mut model, &train, &cfg).unwrap();
    // The zero-initialized delta head starts exactly at the copy-last-frame
    // baseline, so descending well below the first trace point means the
    // model beats that baseline.
    let first = report.loss_trace.first().unwrap().1;
    let last = report.loss_trace.last().unwrap().1;
    assert!(last.is_finite() && first.is_finite());
    assert!(last < 0.5 * first, "loss went {first} -> {last}");
}

#[test]
fn zero_iterations_leave_parameters_unchanged() {
    let dataset = linear_motion_dataset(4, 9);
    let mut model = ForwardModel::new(ModelKind::Interaction, 11);
    let before = model.store.clone();
    let cfg = TrainForwardConfig {
        iterations: 0,
        batch_size: 8,
        seed: 1,
        ..TrainForwardConfig::default()
    };
    train_forward(&mut model, &dataset, &cfg).unwrap();
    assert_eq!(model.store, before);
}

#[test]
fn training_is_bit_deterministic_across_runs() {
    let dataset = linear_motion_dataset(8, 13);
    let cfg = TrainForwardConfig {
        iterations: 40,
        batch_size: 8,
        seed: 21,
        trace_every: 10,
        ..TrainForwardConfig::default()
    };
    let mut a = ForwardModel::new(ModelKind::Interaction, 17);
    let ra = train_forward(&mut a, &dataset, &cfg).unwrap();
    let mut b = ForwardModel::new(ModelKind::Interaction, 17);
    let rb = train_forward(&mut b, &dataset, &cfg).unwrap();
    assert_eq!(ra.loss_trace, rb.loss_trace);
    assert_eq!(a.store, b.store);
}

#[test]
fn loss_ignores_static_object_targets() {
    // Records are truncated to one window each (context frames 0-2, target
    // frame 3), so perturbing a static object in frame 3 only ever touches
    // targets; training must evolve identically.
    let make = |shift: f64| -> Dataset {
        let mut d = linear_motion_dataset(6, 31);
        for r in &mut d.records {
            r.frames.truncate(TAU + 1);
            for (t, frame) in r.frames.iter_mut().enumerate() {
                let x = if t == TAU { 0.5 + shift } else { 0.5 };
                let world = WorldState::new(vec![black_bar(0, x, 0.08)]);
                frame.push(featurize(&world)[0]);
            }
        }
        d
    };
    let cfg = TrainForwardConfig {
        iterations: 12,
        batch_size: 8,
        seed: 2,
        trace_every: 1,
        ..TrainForwardConfig::default()
    };
    let mut a = ForwardModel::new(ModelKind::Interaction, 23);
    let ra = train_forward(&mut a, &make(0.0), &cfg).unwrap();
    let mut b = ForwardModel::new(ModelKind::Interaction, 23);
    let rb = train_forward(&mut b, &make(0.01), &cfg).unwrap();
    assert_eq!(ra.loss_trace, rb.loss_trace);
    assert_eq!(a.store, b.store);
}

#[test]
fn rollout_lengths_and_consistency() {
    let world = WorldState::new(vec![
        black_bar(0, 0.5, 0.05),
        gray_ball(1, 0.4, 0.6, 0.05),
    ]);
    let ctx = window_of(&world);
    let model = ForwardModel::new(ModelKind::Interaction, 29);
    assert!(model.rollout(&ctx, 0).unwrap().is_empty());
    let ten = model.rollout(&ctx, 10).unwrap();
    assert_eq!(ten.len(), 10);
    for frame in &ten {
        for obj in frame {
            assert!((0.0..=1.0).contains(&obj.x()) && (0.0..=1.0).contains(&obj.y()));
        }
    }
    // rollout(a + b) equals rollout(a) then continuing for b more steps.
    let first = model.rollout(&ctx, 4).unwrap();
    let mut cont = ctx.clone();
    for f in &first {
        cont = cont.advanced(f.clone()).unwrap();
    }
    let rest = model.rollout(&cont, 6).unwrap();
    let joined: Vec<_> = first.into_iter().chain(rest).collect();
    assert_eq!(joined, ten);
}

#[test]
fn interaction_gradients_match_finite_differences() {
    let world = WorldState::new(vec![
        black_bar(0, 0.5, 0.05),
        gray_ball(1, 0.4, 0.6, 0.05),
        gray_ball(2, 0.6, 0.3, 0.04),
    ]);
    let ctx = window_of(&world);
    let target: Vec<ObjectState> = ctx.newest().to_vec();
    let model = ForwardModel::new(ModelKind::Interaction, 37);
    let windows = vec![ctx];
    let err = gradient_check(&model.store, 41, |g, s| {
        let out = interaction::build_forward(g, s, &windows).map_err(as_tensor)?;
        let mut t = Vec::new();
        for obj in &target {
            t.extend_from_slice(&[obj.x(), obj.y(), obj.0[col::COS], obj.0[col::SIN]]);
        }
        let tgt = g.value_node(target.len(), 4, t)?;
        g.mse(out, tgt)
    })
    .unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

fn as_tensor(e: ForwardError) -> crate::tensor::TensorError {
    match e {
        ForwardError::Tensor(t) => t,
        other => crate::tensor::TensorError::Usage(other.to_string()),
    }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dataset = linear_motion_dataset(5, 43);
    let mut bytes = Vec::new();
    write_dataset(&dataset, &mut bytes).unwrap();
    assert_eq!(&bytes[..8], DATASET_MAGIC);
    let back = read_dataset(&mut bytes.as_slice()).unwrap();
    let mut bytes2 = Vec::new();
    write_dataset(&back, &mut bytes2).unwrap();
    assert_eq!(bytes, bytes2);
    let again = read_dataset(&mut bytes2.as_slice()).unwrap();
    assert_eq!(back, again);
}

#[test]
fn predicted_poses_render_through_base_world() {
    let world = WorldState::new(vec![
        black_bar(0, 0.5, 0.05),
        gray_ball(1, 0.4, 0.6, 0.05),
    ]);
    let mut states = featurize(&world);
    states[1].0[col::X] = 0.7;
    let rendered = world_with_predicted_poses(&world, &states).unwrap();
    assert_eq!(rendered.bodies[1].position.x, 0.7);
    assert_eq!(rendered.bodies[0].shape, world.bodies[0].shape);
    assert!(world_with_predicted_poses(&world, &states[..1]).is_err());
}

#[test]
fn padded_context_fills_leading_zero_frames() {
    let world = WorldState::new(vec![gray_ball(0, 0.5, 0.5, 0.05)]);
    let f = featurize(&world);
    let ctx = ContextWindow::padded(&[f.clone()]).unwrap();
    assert_eq!(ctx.frames()[0][0].0, [0.0; FEAT]);
    assert_eq!(ctx.frames()[1][0].0, [0.0; FEAT]);
    assert_eq!(&ctx.frames()[2], &f);
}

