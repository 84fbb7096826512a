//! Scratch probe: where does the subject ball end up per action?
use tumble_core::actions::{sample_valid_actions, simulate_action};
use tumble_core::tasks::{builtin_templates, instantiate_template};
use rayon::prelude::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let tid: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let inst: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let t = &builtin_templates()[tid];
    let task = instantiate_template(t, inst, 7).unwrap();
    let subject = task.goal.subject;
    println!("task {} subject {}", task.id, subject);
    for b in &task.initial_scene.bodies {
        println!("  body {} {:?} {:?} pos ({:.3},{:.3})", b.id, b.color, b.shape, b.position.x, b.position.y);
    }
    let actions = sample_valid_actions(&task, 200, 7).unwrap();
    let rows: Vec<String> = actions.par_iter().enumerate().map(|(i, a)| {
        let (states, solved) = simulate_action(&task, a).unwrap();
        let last = states.last().unwrap().body(subject).unwrap();
        let maxx = states.iter().map(|s| s.body(subject).unwrap().position.x)
            .fold(f64::MIN, f64::max);
        format!("{i:3} act=({:.2},{:.2},r{:.3}) end=({:.3},{:.3}) maxx={maxx:.3} solved={solved}",
            a.balls[0].x, a.balls[0].y, a.balls[0].radius, last.position.x, last.position.y)
    }).collect();
    let moved: Vec<&String> = rows.iter().filter(|r| !r.contains("maxx=0.3")).collect();
    println!("moved: {}", moved.len());
    for r in moved.iter().take(25) { println!("{r}"); }
}
