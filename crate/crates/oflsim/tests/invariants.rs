//! Cross-module invariants exercised through the public API.

use oflsim::config::ExperimentConfig;
use oflsim::data::generate_synthetic;
use oflsim::experiments::{run_budget_comparison, run_impact_tau};
use oflsim::factorization::{build_prefix_workload, factorize_sqrt_normalized};
use oflsim::metrics::{
    build_report, gradient_norm_identity_diagnostic, solve_global_oracle, solve_per_round_oracles,
    OracleOptions,
};
use oflsim::privacy::{NoiseMechanism, PrivacyBudget};
use oflsim::sim::{run_simulation, SimConfig};

fn smoke_budget_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
experiment = "budget_comparison"
seed = {seed}
trials = 2

[sim]
learners = 2
rounds = 30
tau = 2
dim = 3
eta_tilde = 0.1

[budget]
epsilon = 5.0
delta = 1e-3

[budget_comparison]
epsilons = [5.0]
deltas = [1e-3]
"#
    ))
    .unwrap()
}

#[test]
fn budget_comparison_results_reproduce_exactly() {
    let cfg = smoke_budget_config(404);
    let dir_a = std::env::temp_dir().join(format!("oflsim-inv-a-{}", std::process::id()));
    let dir_b = std::env::temp_dir().join(format!("oflsim-inv-b-{}", std::process::id()));
    let a = run_budget_comparison(&cfg, &dir_a).unwrap();
    let b = run_budget_comparison(&cfg, &dir_b).unwrap();
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra.label, rb.label);
        assert_eq!(ra.mean, rb.mean);
        assert_eq!(ra.std, rb.std);
    }
    std::fs::remove_dir_all(&dir_a).ok();
    std::fs::remove_dir_all(&dir_b).ok();
}

#[test]
fn impact_tau_series_pair_with_shared_streams() {
    // tau settings re-partition the same arrival streams, so round 1 of the
    // tau=1 curve and round 1 of the tau=2 curve start from the same x^0 = 0
    // and the series lengths match the settings.
    let cfg = ExperimentConfig::from_toml_str(
        r#"
experiment = "impact_tau"
seed = 77
trials = 2

[sim]
learners = 2
rounds = 12
tau = 1
dim = 3
eta_tilde = 0.05

[budget]
epsilon = 5.0
delta = 1e-3

[impact_tau]
tau_list = [1, 2]
rounds_list = [12, 6]
"#,
    )
    .unwrap();
    let dir = std::env::temp_dir().join(format!("oflsim-inv-tau-{}", std::process::id()));
    let results = run_impact_tau(&cfg, &dir).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(results[0].rounds, 12);
    assert_eq!(results[1].rounds, 6);
    assert!(results[0].mean.iter().all(|v| v.is_finite()));
}

#[test]
fn regret_report_on_a_noisy_run_is_consistent() {
    let mut dataset = generate_synthetic(3, 15, 2, 3, 0.1, 0.1, 7171).unwrap();
    dataset.normalize_features();
    let workload = build_prefix_workload(15).unwrap();
    let fact = factorize_sqrt_normalized(&workload);
    let config = SimConfig::from_eta_tilde(
        3,
        15,
        2,
        3,
        0.05,
        1.0,
        1.0,
        dataset.smoothness_estimate(),
        7171,
        PrivacyBudget::new(5.0, 1e-3).unwrap(),
        NoiseMechanism::CorrelatedMf,
        1,
    );
    let trace = run_simulation(&config, &dataset, Some(&fact)).unwrap();
    let global = solve_global_oracle(&dataset, OracleOptions::default());
    assert!(global.converged);
    let per_round = solve_per_round_oracles(&dataset, OracleOptions::default()).unwrap();
    assert!(per_round.iter().all(|o| o.converged));
    let report = build_report(&trace, &dataset, global, per_round).unwrap();
    assert_eq!(report.loss_error_series.len(), 15);
    // Dynamic dominates static up to the oracle slack.
    assert!(report.dynamic_regret >= report.static_regret - 15.0 * 2.0 * 2e-6);
    // Loss error is bounded below by the oracle slack everywhere.
    assert!(report.loss_error_series.iter().all(|&v| v >= -1e-6));
}

#[test]
fn step_size_warning_surfaces_through_the_trace() {
    let dataset = generate_synthetic(2, 5, 1, 2, 0.0, 0.0, 9).unwrap();
    let config = SimConfig::from_eta_tilde(
        2,
        5,
        1,
        2,
        // Far above 1/(8 L_hat) for this data.
        50.0,
        1.0,
        1.0,
        dataset.smoothness_estimate(),
        9,
        PrivacyBudget::new(5.0, 1e-3).unwrap(),
        NoiseMechanism::None,
        1,
    );
    let trace = run_simulation(&config, &dataset, None).unwrap();
    assert_eq!(trace.warnings.len(), 1);
    assert!(trace.warnings[0].contains("eta_tilde"));
}

#[test]
fn gradient_norm_identity_holds_with_true_smoothness() {
    let mut dataset = generate_synthetic(2, 6, 2, 3, 0.1, 0.1, 555).unwrap();
    dataset.normalize_features();
    let warnings =
        gradient_norm_identity_diagnostic(&dataset, dataset.smoothness_estimate(), 20, 555)
            .unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
}
