//! Emits a linear-quadratic problem document from a generator config.
//!
//! ```text
//! cargo run --example gen_lq -- problems/lq_generator.json > lq.json
//! ```
//!
//! The config is JSON with fields `seed`, `n`, `m` and
//! `p` ("invertible" or "zero"); the output is a problem document in
//! the format the CLI consumes.

use extremal::problem::{generate_lq, LqConfig};

fn main() {
    let path = match std::env::args().nth(1) {
        Some(p) => p,
        None => {
            eprintln!("usage: gen_lq <config.json>");
            std::process::exit(1);
        }
    };
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {path}: {e}");
            std::process::exit(1);
        }
    };
    let config: LqConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {e}");
            std::process::exit(1);
        }
    };
    let problem = generate_lq(&config);

    let dynamics: Vec<String> = problem.dynamics.iter().map(|e| e.to_string()).collect();
    let doc = serde_json::json!({
        "name": problem.name,
        "states": problem.states,
        "controls": problem.controls,
        "dynamics": dynamics,
        "cost": problem.cost.to_string(),
        "boundary": {
            "t0": problem.boundary.t0,
            "tf": problem.boundary.tf,
            "q0": problem.boundary.q0,
            "qf": problem.boundary.qf,
        },
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
}
