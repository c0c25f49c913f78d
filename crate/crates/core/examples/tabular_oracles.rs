//! Closed-form optimal policies on a small tabular bandit, checked against
//! the generic simplex maximizer, plus the improvement bound across beta.
//!
//! cargo run --example tabular_oracles

use lpirec::estimators::{
    expected_kl, kl_penalized_value, lmu_surrogate, policy_improvement_check, simplex_oracle_lmu, simplex_oracle_lpi,
    tabular_optimal_lmu, tabular_optimal_lpi, tabular_value, Baseline, TabularInstance,
};

fn main() -> lpirec::Result<()> {
    let inst = TabularInstance {
        context_dist: vec![0.5, 0.3, 0.2],
        logging_policy: vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.2, 0.6], vec![1.0 / 3.0; 3]],
        rewards: vec![vec![0.1, 0.5, 0.9], vec![0.8, 0.2, 0.3], vec![0.0, 0.4, 0.6]],
        transitions: None,
        gamma: None,
    };
    inst.validate()?;

    let lmu = tabular_optimal_lmu(&inst)?;
    let lmu_gap = lmu_surrogate(&inst, &lmu) - lmu_surrogate(&inst, &simplex_oracle_lmu(&inst));
    println!("log-surrogate optimum: J = {:.4}, gap to oracle {lmu_gap:.1e}", tabular_value(&inst, &lmu)?);

    println!("J(mu) = {:.4}", tabular_value(&inst, &inst.logging_policy)?);
    for beta in [0.05, 0.2, 1.0, 5.0] {
        let pi = tabular_optimal_lpi(&inst, beta, Baseline::LoggingMean)?;
        let oracle = simplex_oracle_lpi(&inst, beta);
        let gap = kl_penalized_value(&inst, &pi, beta)? - kl_penalized_value(&inst, &oracle, beta)?;
        let report = policy_improvement_check(&inst, beta)?;
        println!(
            "beta {beta:>4}: J = {:.4}, KL = {:.4}, oracle gap {gap:.1e}, improvement bound holds: {}",
            tabular_value(&inst, &pi)?,
            expected_kl(&inst, &pi),
            report.holds(1e-12)
        );
    }
    Ok(())
}
