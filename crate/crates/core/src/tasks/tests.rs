use super::*;
use proptest::prelude::*;

fn templates() -> Vec<TaskTemplate> {
    builtin_templates()
}

fn desk_tasks(instances: u32, seed: u64) -> Vec<Task> {
    templates()
        .iter()
        .flat_map(|t| {
            (0..instances).map(move |i| instantiate_template(t, i, seed).expect("instantiable"))
        })
        .collect()
}

#[test]
fn builtin_templates_parse_and_have_parameters() {
    let ts = templates();
    assert_eq!(ts.len(), 8);
    for t in &ts {
        assert!(t.parameter_count() > 0, "template {} has no ranges", t.template_id);
    }
    let names: Vec<&str> = ts.iter().map(|t| t.name.as_str()).collect();
    assert!(names.contains(&"knock_off_platform"));
    assert!(names.contains(&"seesaw"));
}

#[test]
fn instantiation_is_deterministic() {
    let t = &templates()[0];
    let a = instantiate_template(t, 3, 99).unwrap();
    let b = instantiate_template(t, 3, 99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn instances_differ_in_some_body_position() {
    let t = &templates()[0];
    let a = instantiate_template(t, 0, 7).unwrap();
    let b = instantiate_template(t, 1, 7).unwrap();
    let moved = a
        .initial_scene
        .bodies
        .iter()
        .zip(&b.initial_scene.bodies)
        .any(|(x, y)| x.position != y.position);
    assert!(moved);
}

#[test]
fn knock_off_platform_instances_all_satisfy_goal_invariant() {
    let t = templates()
        .into_iter()
        .find(|t| t.name == "knock_off_platform")
        .unwrap();
    for i in 0..25 {
        let task = instantiate_template(&t, i, 11).unwrap();
        task.validate().unwrap();
    }
}

#[test]
fn all_builtin_templates_instantiate_collision_free() {
    for task in desk_tasks(10, 5) {
        let worst = detect_contacts(&task.initial_scene)
            .unwrap()
            .into_iter()
            .map(|c| c.penetration)
            .fold(0.0, f64::max);
        assert!(worst <= SLOP, "task {} starts penetrating {worst}", task.id);
        // The goal pair must not start in contact.
        let subject = task.initial_scene.body(task.goal.subject).unwrap();
        let object = task.initial_scene.body(task.goal.object).unwrap();
        assert!(
            !crate::physics2d::touching(subject, object),
            "task {} starts solved",
            task.id
        );
    }
}

#[test]
fn goal_satisfied_contiguous_run_examples() {
    let n = 16 * 60 + 1;
    let window = |lo: f64, hi: f64| -> Vec<bool> {
        (0..n)
            .map(|i| {
                let t = i as f64 * DT;
                t >= lo && t <= hi
            })
            .collect()
    };
    // Contact over [1.0, 4.5]: 3.5 s.
    assert!(goal_satisfied(&window(1.0, 4.5), 3.0));
    // Two short windows never qualify.
    let mut flags = window(1.0, 3.5);
    for (i, f) in window(4.0, 6.0).iter().enumerate() {
        flags[i] = flags[i] || *f;
    }
    assert!(!goal_satisfied(&flags, 3.0));
    // Exactly [2.0, 5.0] is inclusive.
    assert!(goal_satisfied(&window(2.0, 5.0), 3.0));
    // One substep short of 3 s fails.
    assert!(!goal_satisfied(&window(2.0, 5.0 - DT), 3.0));
}

#[test]
fn folds_are_deterministic_and_disjoint() {
    let tasks = desk_tasks(10, 3);
    let a = make_folds(&tasks, SplitSetting::WithinTemplate, 10, 42).unwrap();
    let b = make_folds(&tasks, SplitSetting::WithinTemplate, 10, 42).unwrap();
    assert_eq!(a, b);
    for split in &a {
        split.validate().unwrap();
        assert_eq!(
            split.train_tasks.len() + split.test_tasks.len(),
            tasks.len()
        );
    }
}

#[test]
fn cross_folds_partition_templates() {
    let tasks = desk_tasks(4, 3);
    let folds = make_folds(&tasks, SplitSetting::CrossTemplate, 10, 1).unwrap();
    for split in &folds {
        let train: std::collections::BTreeSet<u32> =
            split.train_tasks.iter().map(|t| t.template_id).collect();
        let test: std::collections::BTreeSet<u32> =
            split.test_tasks.iter().map(|t| t.template_id).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 8);
        assert_eq!(test.len(), 2);
    }
}

#[test]
fn within_folds_cover_every_task_in_some_test_set() {
    let tasks = desk_tasks(10, 3);
    let folds = make_folds(&tasks, SplitSetting::WithinTemplate, 10, 42).unwrap();
    for task in &tasks {
        assert!(
            folds.iter().any(|f| f.test_tasks.contains(&task.id)),
            "task {} never appears in a test fold",
            task.id
        );
    }
}

#[test]
fn split_json_round_trip_and_manifest_stability() {
    let tasks = desk_tasks(4, 3);
    let folds = make_folds(&tasks, SplitSetting::CrossTemplate, 2, 9).unwrap();
    let text = folds[0].to_json();
    let back = Split::from_json(&text).unwrap();
    assert_eq!(folds[0], back);
    assert_eq!(folds[0].manifest_hash(), back.manifest_hash());
    assert_ne!(folds[0].manifest_hash(), folds[1].manifest_hash());
}

#[test]
fn within_split_needs_two_tasks_per_template() {
    let tasks = desk_tasks(1, 3);
    assert!(matches!(
        make_folds(&tasks, SplitSetting::WithinTemplate, 2, 0),
        Err(TaskError::SplitInfeasible(_))
    ));
}

#[test]
fn template_json_round_trip() {
    for t in templates() {
        let back = TaskTemplate::from_json(&t.to_json()).unwrap();
        assert_eq!(t, back);
    }
}

#[test]
fn task_id_display_and_parse() {
    let id = TaskId::new(3, 17);
    assert_eq!(id.to_string(), "T3:17");
    assert_eq!(TaskId::parse("T3:17"), Some(id));
    assert_eq!(TaskId::parse("3:17"), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Monotonicity: turning extra substeps on never flips a satisfied goal off.
    #[test]
    fn goal_satisfied_is_monotone(
        flags in proptest::collection::vec(any::<bool>(), 200..600),
        extra in proptest::collection::vec(any::<u16>(), 1..20),
    ) {
        let before = goal_satisfied(&flags, 1.0);
        let mut more = flags.clone();
        for e in extra {
            let idx = e as usize % more.len();
            more[idx] = true;
        }
        if before {
            prop_assert!(goal_satisfied(&more, 1.0));
        }
    }

    #[test]
    fn folds_disjoint_over_random_seeds(seed in any::<u64>(), n_folds in 1u32..6) {
        let tasks = desk_tasks(3, 5);
        for setting in [SplitSetting::WithinTemplate, SplitSetting::CrossTemplate] {
            let folds = make_folds(&tasks, setting, n_folds, seed).unwrap();
            for f in &folds {
                prop_assert!(f.validate().is_ok());
            }
        }
    }
}
