//! Double Q-learning with a periodically refreshed target table on a small
//! MDP, compared with value iteration.
//!
//! cargo run --example double_q

use lpirec::estimators::{value_iteration, TabularInstance};
use lpirec::objectives::{fit_tabular_double_q, TdSchedule};

fn main() -> lpirec::Result<()> {
    let mdp = TabularInstance {
        context_dist: vec![1.0, 0.0, 0.0],
        logging_policy: vec![vec![0.5, 0.5]; 3],
        rewards: vec![vec![0.0, 1.0], vec![0.5, 0.0], vec![1.0, 0.2]],
        transitions: Some(vec![
            vec![vec![0.0, 1.0, 0.0], vec![0.7, 0.0, 0.3]],
            vec![vec![0.0, 0.2, 0.8], vec![1.0, 0.0, 0.0]],
            vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]],
        ]),
        gamma: Some(0.9),
    };
    let q_star = value_iteration(&mdp)?;
    for steps in [50, 200, 1000, 20_000] {
        let q = fit_tabular_double_q(&mdp, &TdSchedule { steps, ..Default::default() })?;
        let err = (0..3)
            .flat_map(|x| (0..2).map(move |a| (x, a)))
            .map(|(x, a)| (q.get(x, a) - q_star[x][a]).abs())
            .fold(0.0, f64::max);
        println!("{steps:>6} steps: max |Q - Q*| = {err:.2e}");
    }
    for (x, row) in q_star.iter().enumerate() {
        println!("Q*(x{x}) = [{:.4}, {:.4}]", row[0], row[1]);
    }
    Ok(())
}
