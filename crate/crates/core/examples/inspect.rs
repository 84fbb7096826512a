//! Frame-by-frame goal-pair proximity for one (template, instance, action).
use tumble_core::actions::{sample_valid_actions, simulate_action};
use tumble_core::physics2d::{max_overlap, touching_within, Shape};
use tumble_core::tasks::{builtin_templates, instantiate_template};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let tid: usize = args[1].parse().unwrap();
    let inst: u32 = args[2].parse().unwrap();
    let aidx: usize = args[3].parse().unwrap();
    let t = &builtin_templates()[tid];
    let task = instantiate_template(t, inst, 7).unwrap();
    let actions = sample_valid_actions(&task, 200, 7).unwrap();
    let a = &actions[aidx];
    println!("action ({:.4},{:.4},r{:.4})", a.balls[0].x, a.balls[0].y, a.balls[0].radius);
    let (states, solved) = simulate_action(&task, a).unwrap();
    println!("solved={solved}");
    for (k, s) in states.iter().enumerate() {
        let subject = s.body(task.goal.subject).unwrap();
        let object = s.body(task.goal.object).unwrap();
        let touch = touching_within(subject, object, 1.0/256.0);
        let overlap = max_overlap(subject, object);
        // center distance and rough gap for context
        let d = (subject.position - object.position).length();
        let gap = match (subject.shape, object.shape) {
            (Shape::Ball { radius: r1 }, Shape::Ball { radius: r2 }) => d - r1 - r2,
            _ => f64::NAN,
        };
        println!(
            "t={k:2}  subj=({:.4},{:.4}) obj=({:.4},{:.4}) gap={gap:+.5} overlap={overlap:.5} touch256={touch}",
            subject.position.x, subject.position.y, object.position.x, object.position.y
        );
    }
}
