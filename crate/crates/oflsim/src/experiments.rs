//! Experiment harness: repeated seeded trials, mean/std aggregation, and
//! plot-ready CSV output.
//!
//! Every experiment is a pure function of its resolved config and master
//! seed. Trials derive their own data and noise seeds, run concurrently, and
//! are aggregated in trial order, so output files are byte-identical across
//! reruns regardless of thread scheduling.

use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::csvio;
use crate::data::{generate_synthetic, StreamDataset};
use crate::error::{Error, Result};
use crate::factorization::{
    bnorm_study, build_prefix_workload, factorize, read_bundle, write_bundle, Factorization,
    FactorizationMethod,
};
use crate::metrics::{
    build_report, loss_error, loss_error_series, solve_global_oracle, solve_per_round_oracles,
    OracleOptions, OracleSolution,
};
use crate::privacy::NoiseMechanism;
use crate::seed::{derive_seed, DOMAIN_CURVE, DOMAIN_DATA, DOMAIN_TRIAL};
use crate::sim::{run_simulation, SimConfig, SimulationTrace};

/// Runs `f` inside a rayon pool with `jobs` threads (0 = rayon default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// Default effective step when none is configured: `1 / (8 L_hat)`, the
/// largest step that passes the step-size check without a warning.
pub fn resolve_eta_tilde(explicit: Option<f64>, smoothness: f64) -> f64 {
    explicit.unwrap_or(1.0 / (8.0 * smoothness))
}

/// Mean and sample standard deviation (n-1 denominator) across series.
pub fn aggregate_series(series: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let trials = series.len();
    let len = series.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; len];
    for s in series {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= trials as f64;
    }
    let mut std = vec![0.0; len];
    if trials > 1 {
        for s in series {
            for ((sd, v), m) in std.iter_mut().zip(s).zip(&mean) {
                *sd += (v - m) * (v - m);
            }
        }
        for sd in std.iter_mut() {
            *sd = (*sd / (trials - 1) as f64).sqrt();
        }
    }
    (mean, std)
}

/// One aggregated loss-error curve.
#[derive(Debug, Clone)]
pub struct AggregateResult {
    pub label: String,
    pub rounds: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub meta: BTreeMap<String, String>,
}

impl AggregateResult {
    fn from_series(label: String, series: &[Vec<f64>], meta: BTreeMap<String, String>) -> Self {
        let (mean, std) = aggregate_series(series);
        let final_mean = *mean.last().unwrap_or(&f64::NAN);
        let final_std = *std.last().unwrap_or(&f64::NAN);
        AggregateResult {
            label,
            rounds: mean.len(),
            mean,
            std,
            final_mean,
            final_std,
            meta,
        }
    }

    /// CSV: (round, mean, std) for released rounds 1..R.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut rows = Vec::with_capacity(self.rounds);
        for r in 0..self.rounds {
            rows.push(vec![
                (r + 1).to_string(),
                csvio::fmt_f64(self.mean[r]),
                csvio::fmt_f64(self.std[r]),
            ]);
        }
        csvio::write_csv(path, &["round", "mean_loss_error", "std_loss_error"], &rows)
    }
}

/// Per-trial shared state: the data stream and its offline oracle.
struct TrialData {
    dataset: StreamDataset,
    oracle: OracleSolution,
    smoothness: f64,
}

/// Generates the raw per-trial stream as a flat (rounds = slots, tau = 1)
/// arrival sequence; experiments reshape it to their (R, tau) schedule.
fn generate_trial_stream(
    cfg: &ExperimentConfig,
    slots_per_learner: usize,
    trial: usize,
) -> StreamDataset {
    let trial_seed = derive_seed(cfg.seed, DOMAIN_TRIAL, trial as u64);
    let data_seed = derive_seed(trial_seed, DOMAIN_DATA, 0);
    generate_synthetic(
        cfg.sim.learners,
        slots_per_learner,
        1,
        cfg.sim.dim,
        cfg.data.alpha,
        cfg.data.beta,
        data_seed,
    )
    .expect("validated dimensions")
}

/// Normalizes (when configured) and solves the trial's offline oracle.
fn finish_trial_data(cfg: &ExperimentConfig, mut dataset: StreamDataset) -> TrialData {
    if cfg.data.normalize {
        dataset.normalize_features();
    }
    let oracle = solve_global_oracle(&dataset, OracleOptions::default());
    let smoothness = dataset.smoothness_estimate();
    TrialData {
        dataset,
        oracle,
        smoothness,
    }
}

fn build_trial_data(cfg: &ExperimentConfig, slots_per_learner: usize, trial: usize) -> TrialData {
    finish_trial_data(cfg, generate_trial_stream(cfg, slots_per_learner, trial))
}

fn noise_seed_for(cfg: &ExperimentConfig, trial: usize, curve: u64) -> u64 {
    let trial_seed = derive_seed(cfg.seed, DOMAIN_TRIAL, trial as u64);
    derive_seed(trial_seed, DOMAIN_CURVE, curve)
}

/// Loads the factorization from the cache directory when possible, otherwise
/// computes it (and populates the cache when a directory is configured).
pub fn obtain_factorization(
    method: FactorizationMethod,
    rounds: usize,
    cache_dir: Option<&Path>,
    max_iters: usize,
    tol: f64,
) -> Result<Factorization> {
    let bundle_dir = cache_dir.map(|d| d.join(format!("{}_r{}", method.tag(), rounds)));
    if let Some(dir) = &bundle_dir {
        if dir.join("factorization_meta.csv").exists() {
            let fact = read_bundle(dir)?;
            if fact.method == method && fact.dim() == rounds {
                return Ok(fact);
            }
            return Err(Error::Config(format!(
                "cache bundle at {} does not match requested {} R={rounds}",
                dir.display(),
                method.tag()
            )));
        }
    }
    let workload = build_prefix_workload(rounds)?;
    let fact = factorize(&workload, method, max_iters, tol)?;
    if let Some(dir) = &bundle_dir {
        write_bundle(&fact, dir)?;
    }
    Ok(fact)
}

fn write_resolved_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("resolved_config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

fn write_calibration_rows(out_dir: &Path, rows: &[Vec<String>]) -> Result<()> {
    csvio::write_csv(
        &out_dir.join("calibrations.csv"),
        &[
            "curve",
            "mechanism",
            "epsilon",
            "delta",
            "variance",
            "std",
            "gamma",
            "clip_bound",
            "eta",
            "eta_g",
            "eta_tilde",
            "baseline_step_denom",
            "smoothness_estimate",
        ],
        rows,
    )
}

fn write_summary(out_dir: &Path, results: &[AggregateResult]) -> Result<()> {
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(vec![
            r.label.clone(),
            r.rounds.to_string(),
            csvio::fmt_f64(r.final_mean),
            csvio::fmt_f64(r.final_std),
        ]);
    }
    csvio::write_csv(
        &out_dir.join("summary.csv"),
        &[
            "curve",
            "rounds",
            "final_mean_loss_error",
            "final_std_loss_error",
        ],
        &rows,
    )
}

/// The Fig.-2 style study: `||B||_F^2` and its ratio to `R^2` per method.
pub fn run_bnorm_study(
    r_list: &[usize],
    methods: &[FactorizationMethod],
    out_dir: &Path,
) -> Result<Vec<(FactorizationMethod, Vec<crate::factorization::BnormRow>)>> {
    std::fs::create_dir_all(out_dir)?;
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for &method in methods {
        let table = bnorm_study(r_list, method)?;
        for row in &table {
            rows.push(vec![
                row.rounds.to_string(),
                method.tag().to_string(),
                csvio::fmt_f64(row.frob_sq_b),
                csvio::fmt_f64(row.ratio_to_r_sq),
            ]);
        }
        all.push((method, table));
    }
    csvio::write_csv(
        &out_dir.join("bnorm_study.csv"),
        &["rounds", "method", "frob_sq_b", "ratio_to_r_sq"],
        &rows,
    )?;
    Ok(all)
}

#[allow(clippy::too_many_arguments)]
fn sim_config_for(
    cfg: &ExperimentConfig,
    rounds: usize,
    tau: usize,
    eta_tilde: f64,
    smoothness: f64,
    mechanism: NoiseMechanism,
    epsilon: f64,
    delta: f64,
    noise_seed: u64,
) -> SimConfig {
    let mut sim = SimConfig::from_eta_tilde(
        cfg.sim.learners,
        rounds,
        tau,
        cfg.sim.dim,
        eta_tilde,
        cfg.sim.eta_g,
        cfg.sim.clip_bound,
        smoothness,
        noise_seed,
        crate::privacy::PrivacyBudget { epsilon, delta },
        mechanism,
        cfg.trials,
    );
    sim.sensitivity_scale = cfg.sim.sensitivity_scale;
    sim
}

/// First experiment: correlated mechanism at fixed budget over the
/// equal-total-data (tau, R) settings. Returns one aggregate per setting.
pub fn run_impact_tau(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<AggregateResult>> {
    let section = cfg
        .impact_tau
        .as_ref()
        .ok_or_else(|| Error::Config("impact_tau section is required".into()))?
        .clone();
    cfg.validate()?;
    let slots = section.tau_list[0] * section.rounds_list[0];
    let method = cfg.factorization_method()?;

    // Data streams and oracles are shared across the tau settings: each
    // setting sees the same arrival sequence, only re-partitioned.
    let trials: Vec<TrialData> = (0..cfg.trials)
        .into_par_iter()
        .map(|j| build_trial_data(cfg, slots, j))
        .collect();

    // The step sizes are the same in all settings; resolve once from the
    // first trial's smoothness estimate.
    let eta_tilde = resolve_eta_tilde(cfg.sim.eta_tilde, trials[0].smoothness);

    write_resolved_config(cfg, out_dir)?;
    let mut results = Vec::new();
    let mut calib_rows = Vec::new();

    for (setting, (&tau, &rounds)) in section
        .tau_list
        .iter()
        .zip(&section.rounds_list)
        .enumerate()
    {
        let fact = obtain_factorization(
            method,
            rounds,
            cfg.factorization.cache_dir.as_deref(),
            cfg.factorization.max_iters,
            cfg.factorization.tol,
        )?;
        let curve_id = setting as u64;
        let series: Vec<Vec<f64>> = trials
            .par_iter()
            .enumerate()
            .map(|(j, trial)| -> Result<Vec<f64>> {
                let dataset = trial.dataset.reshape(rounds, tau)?;
                let sim = sim_config_for(
                    cfg,
                    rounds,
                    tau,
                    eta_tilde,
                    trial.smoothness,
                    NoiseMechanism::CorrelatedMf,
                    cfg.budget.epsilon,
                    cfg.budget.delta,
                    noise_seed_for(cfg, j, curve_id),
                );
                let trace = run_simulation(&sim, &dataset, Some(&fact))?;
                Ok(loss_error_series(&trace, &dataset, &trial.oracle))
            })
            .collect::<Result<_>>()?;

        let mut meta = BTreeMap::new();
        meta.insert("tau".into(), tau.to_string());
        meta.insert("rounds".into(), rounds.to_string());
        meta.insert("eta_tilde".into(), csvio::fmt_f64(eta_tilde));
        meta.insert("factorization".into(), method.tag().into());
        let label = format!("tau{tau}");
        let agg = AggregateResult::from_series(label.clone(), &series, meta);
        agg.export_csv(&out_dir.join(format!("impact_tau_{label}.csv")))?;

        let calib = sim_config_for(
            cfg,
            rounds,
            tau,
            eta_tilde,
            trials[0].smoothness,
            NoiseMechanism::CorrelatedMf,
            cfg.budget.epsilon,
            cfg.budget.delta,
            0,
        )
        .calibration(Some(&fact))?;
        calib_rows.push(vec![
            label,
            calib.mechanism.tag().into(),
            csvio::fmt_f64(cfg.budget.epsilon),
            csvio::fmt_f64(cfg.budget.delta),
            csvio::fmt_f64(calib.variance),
            csvio::fmt_f64(calib.std),
            csvio::fmt_f64(calib.gamma),
            csvio::fmt_f64(calib.clip_bound),
            csvio::fmt_f64(eta_tilde / (cfg.sim.eta_g * tau as f64)),
            csvio::fmt_f64(cfg.sim.eta_g),
            csvio::fmt_f64(eta_tilde),
            "-".into(),
            csvio::fmt_f64(trials[0].smoothness),
        ]);
        results.push(agg);
    }

    write_calibration_rows(out_dir, &calib_rows)?;
    write_summary(out_dir, &results)?;
    Ok(results)
}

/// Second experiment: correlated mechanism vs the independent baseline under
/// each configured budget. The correlated algorithm uses the same step sizes
/// under every budget; the baseline's step divides the policy's base step by
/// each grid denominator and keeps whichever gives the best final mean loss
/// error at that budget.
pub fn run_budget_comparison(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<AggregateResult>> {
    let section = cfg
        .budget_comparison
        .as_ref()
        .ok_or_else(|| Error::Config("budget_comparison section is required".into()))?
        .clone();
    cfg.validate()?;
    let rounds = cfg.sim.rounds;
    let tau = cfg.sim.tau;
    let slots = rounds * tau;
    let method = cfg.factorization_method()?;
    let fact = obtain_factorization(
        method,
        rounds,
        cfg.factorization.cache_dir.as_deref(),
        cfg.factorization.max_iters,
        cfg.factorization.tol,
    )?;

    let trials: Vec<TrialData> = (0..cfg.trials)
        .into_par_iter()
        .map(|j| build_trial_data(cfg, slots, j))
        .collect();
    let eta_tilde = resolve_eta_tilde(cfg.sim.eta_tilde, trials[0].smoothness);

    write_resolved_config(cfg, out_dir)?;
    let mut results = Vec::new();
    let mut calib_rows = Vec::new();

    for (k, (&epsilon, &delta)) in section.epsilons.iter().zip(&section.deltas).enumerate() {
        // Correlated curve: same steps under every budget.
        let corr_curve = (k as u64) * 64;
        let corr_series: Vec<Vec<f64>> = trials
            .par_iter()
            .enumerate()
            .map(|(j, trial)| -> Result<Vec<f64>> {
                let dataset = trial.dataset.reshape(rounds, tau)?;
                let sim = sim_config_for(
                    cfg,
                    rounds,
                    tau,
                    eta_tilde,
                    trial.smoothness,
                    NoiseMechanism::CorrelatedMf,
                    epsilon,
                    delta,
                    noise_seed_for(cfg, j, corr_curve),
                );
                let trace = run_simulation(&sim, &dataset, Some(&fact))?;
                Ok(loss_error_series(&trace, &dataset, &trial.oracle))
            })
            .collect::<Result<_>>()?;
        let label = format!("eps{epsilon}_correlated");
        let mut meta = BTreeMap::new();
        meta.insert("epsilon".into(), csvio::fmt_f64(epsilon));
        meta.insert("delta".into(), csvio::fmt_f64(delta));
        meta.insert("mechanism".into(), "correlated_mf".into());
        meta.insert("eta_tilde".into(), csvio::fmt_f64(eta_tilde));
        let agg = AggregateResult::from_series(label.clone(), &corr_series, meta);
        agg.export_csv(&out_dir.join(format!("budget_{label}.csv")))?;
        let corr_calib = sim_config_for(
            cfg,
            rounds,
            tau,
            eta_tilde,
            trials[0].smoothness,
            NoiseMechanism::CorrelatedMf,
            epsilon,
            delta,
            0,
        )
        .calibration(Some(&fact))?;
        calib_rows.push(vec![
            label,
            "correlated_mf".into(),
            csvio::fmt_f64(epsilon),
            csvio::fmt_f64(delta),
            csvio::fmt_f64(corr_calib.variance),
            csvio::fmt_f64(corr_calib.std),
            csvio::fmt_f64(corr_calib.gamma),
            csvio::fmt_f64(corr_calib.clip_bound),
            csvio::fmt_f64(eta_tilde / (cfg.sim.eta_g * tau as f64)),
            csvio::fmt_f64(cfg.sim.eta_g),
            csvio::fmt_f64(eta_tilde),
            "-".into(),
            csvio::fmt_f64(trials[0].smoothness),
        ]);
        results.push(agg);

        // Baseline: literal batch update with its own step eta. The grid is
        // fair to the baseline: it keeps whichever step gives the lowest
        // final mean loss error at this budget.
        let matched_eta = match section.baseline_step_policy {
            crate::config::BaselineStepPolicy::ServerMatched => eta_tilde,
            crate::config::BaselineStepPolicy::LocalMatched => eta_tilde / tau as f64,
        };
        let mut best: Option<(usize, f64)> = None;
        for (gi, &denom) in section.baseline_grid_denoms.iter().enumerate() {
            let grid_curve = (k as u64) * 64 + 1 + gi as u64;
            let finals: Vec<f64> = trials
                .par_iter()
                .enumerate()
                .map(|(j, trial)| -> Result<f64> {
                    let dataset = trial.dataset.reshape(rounds, tau)?;
                    let sim = baseline_sim_config(
                        cfg,
                        rounds,
                        tau,
                        matched_eta / denom as f64,
                        trial.smoothness,
                        epsilon,
                        delta,
                        noise_seed_for(cfg, j, grid_curve),
                    );
                    let trace = run_simulation(&sim, &dataset, None)?;
                    Ok(loss_error(trace.final_model(), &dataset, &trial.oracle))
                })
                .collect::<Result<_>>()?;
            let mean_final = finals.iter().sum::<f64>() / finals.len() as f64;
            if best.is_none_or(|(_, b)| mean_final < b) {
                best = Some((gi, mean_final));
            }
        }
        let (best_gi, _) = best.expect("grid is nonempty");
        let best_denom = section.baseline_grid_denoms[best_gi];
        let best_curve = (k as u64) * 64 + 1 + best_gi as u64;

        let ind_series: Vec<Vec<f64>> = trials
            .par_iter()
            .enumerate()
            .map(|(j, trial)| -> Result<Vec<f64>> {
                let dataset = trial.dataset.reshape(rounds, tau)?;
                let sim = baseline_sim_config(
                    cfg,
                    rounds,
                    tau,
                    matched_eta / best_denom as f64,
                    trial.smoothness,
                    epsilon,
                    delta,
                    noise_seed_for(cfg, j, best_curve),
                );
                let trace = run_simulation(&sim, &dataset, None)?;
                Ok(loss_error_series(&trace, &dataset, &trial.oracle))
            })
            .collect::<Result<_>>()?;
        let label = format!("eps{epsilon}_independent");
        let mut meta = BTreeMap::new();
        meta.insert("epsilon".into(), csvio::fmt_f64(epsilon));
        meta.insert("delta".into(), csvio::fmt_f64(delta));
        meta.insert("mechanism".into(), "independent_zcdp".into());
        meta.insert("baseline_step_denom".into(), best_denom.to_string());
        meta.insert(
            "eta".into(),
            csvio::fmt_f64(matched_eta / best_denom as f64),
        );
        let agg = AggregateResult::from_series(label.clone(), &ind_series, meta);
        agg.export_csv(&out_dir.join(format!("budget_{label}.csv")))?;
        let ind_calib = baseline_sim_config(
            cfg,
            rounds,
            tau,
            matched_eta / best_denom as f64,
            trials[0].smoothness,
            epsilon,
            delta,
            0,
        )
        .calibration(None)?;
        calib_rows.push(vec![
            label,
            "independent_zcdp".into(),
            csvio::fmt_f64(epsilon),
            csvio::fmt_f64(delta),
            csvio::fmt_f64(ind_calib.variance),
            csvio::fmt_f64(ind_calib.std),
            csvio::fmt_f64(ind_calib.gamma),
            csvio::fmt_f64(ind_calib.clip_bound),
            csvio::fmt_f64(matched_eta / best_denom as f64),
            csvio::fmt_f64(cfg.sim.eta_g),
            csvio::fmt_f64(eta_tilde),
            best_denom.to_string(),
            csvio::fmt_f64(trials[0].smoothness),
        ]);
        results.push(agg);
    }

    write_calibration_rows(out_dir, &calib_rows)?;
    write_summary(out_dir, &results)?;
    Ok(results)
}

/// Config for one baseline run: batch-update dynamics with the given literal step.
#[allow(clippy::too_many_arguments)]
fn baseline_sim_config(
    cfg: &ExperimentConfig,
    rounds: usize,
    tau: usize,
    eta: f64,
    smoothness: f64,
    epsilon: f64,
    delta: f64,
    noise_seed: u64,
) -> SimConfig {
    // eta_tilde is stored as the exact product for validation; the baseline
    // update itself only consumes eta.
    sim_config_for(
        cfg,
        rounds,
        tau,
        eta * cfg.sim.eta_g * tau as f64,
        smoothness,
        NoiseMechanism::IndependentZcdp,
        epsilon,
        delta,
        noise_seed,
    )
}

/// Output of a single `simulate` invocation.
pub struct SimulateOutput {
    pub trace: SimulationTrace,
    pub loss_error_final: f64,
    pub dynamic_regret: f64,
    pub static_regret: f64,
}

/// Runs one simulation from a config (trial 0's derived seeds), writing the
/// trace CSV, optional model dump, and a regret/loss-error report.
pub fn run_single_simulation(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    dump_models: bool,
) -> Result<SimulateOutput> {
    cfg.validate()?;
    let mechanism = cfg.mechanism()?;
    let method = cfg.factorization_method()?;
    let rounds = cfg.sim.rounds;
    let tau = cfg.sim.tau;

    // The data cache stores the raw stream exactly as generated;
    // normalization is applied after loading so both paths see identical
    // bits.
    let trial = if let Some(cache) = &cfg.data.cache {
        let raw = if cache.exists() {
            let raw = StreamDataset::import_csv(cache)?;
            if raw.learners() != cfg.sim.learners
                || raw.rounds() * raw.tau() != rounds * tau
                || raw.dim() != cfg.sim.dim
            {
                return Err(Error::Config(format!(
                    "cached dataset at {} is {}x{} in dimension {}, config needs {}x{} in dimension {}",
                    cache.display(),
                    raw.learners(),
                    raw.rounds() * raw.tau(),
                    raw.dim(),
                    cfg.sim.learners,
                    rounds * tau,
                    cfg.sim.dim
                )));
            }
            raw
        } else {
            let raw = generate_trial_stream(cfg, rounds * tau, 0);
            raw.export_csv(cache)?;
            raw
        };
        finish_trial_data(cfg, raw)
    } else {
        build_trial_data(cfg, rounds * tau, 0)
    };
    let dataset = trial.dataset.reshape(rounds, tau)?;

    let eta_tilde = resolve_eta_tilde(cfg.sim.eta_tilde, trial.smoothness);
    let factorization = if mechanism == NoiseMechanism::CorrelatedMf {
        Some(obtain_factorization(
            method,
            rounds,
            cfg.factorization.cache_dir.as_deref(),
            cfg.factorization.max_iters,
            cfg.factorization.tol,
        )?)
    } else {
        None
    };

    let sim = match mechanism {
        NoiseMechanism::IndependentZcdp => baseline_sim_config(
            cfg,
            rounds,
            tau,
            eta_tilde / tau as f64,
            trial.smoothness,
            cfg.budget.epsilon,
            cfg.budget.delta,
            noise_seed_for(cfg, 0, 0),
        ),
        _ => sim_config_for(
            cfg,
            rounds,
            tau,
            eta_tilde,
            trial.smoothness,
            mechanism,
            cfg.budget.epsilon,
            cfg.budget.delta,
            noise_seed_for(cfg, 0, 0),
        ),
    };

    let trace = run_simulation(&sim, &dataset, factorization.as_ref())?;
    write_resolved_config(cfg, out_dir)?;
    trace.export_csv(&out_dir.join("trace.csv"))?;
    if dump_models {
        trace.export_models_csv(&out_dir.join("models.csv"))?;
    }

    let per_round = solve_per_round_oracles(&dataset, OracleOptions::default())?;
    let report = build_report(&trace, &dataset, trial.oracle, per_round)?;
    report.export_csv(&out_dir.join("metrics.csv"))?;

    let calib = sim.calibration(factorization.as_ref())?;
    write_calibration_rows(
        out_dir,
        &[vec![
            "simulate".into(),
            calib.mechanism.tag().into(),
            csvio::fmt_f64(cfg.budget.epsilon),
            csvio::fmt_f64(cfg.budget.delta),
            csvio::fmt_f64(calib.variance),
            csvio::fmt_f64(calib.std),
            csvio::fmt_f64(calib.gamma),
            csvio::fmt_f64(calib.clip_bound),
            csvio::fmt_f64(sim.eta),
            csvio::fmt_f64(sim.eta_g),
            csvio::fmt_f64(sim.eta_tilde),
            "-".into(),
            csvio::fmt_f64(trial.smoothness),
        ]],
    )?;

    let loss_error_final = *report.loss_error_series.last().expect("at least one round");
    Ok(SimulateOutput {
        trace,
        loss_error_final,
        dynamic_regret: report.dynamic_regret,
        static_regret: report.static_regret,
    })
}

/// Dispatches a config to its experiment runner. `out_dir` overrides the
/// config's own output directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<AggregateResult>> {
    let dir: PathBuf = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory configured".into()))?;
    match cfg.experiment {
        ExperimentKind::ImpactTau => with_jobs(cfg.jobs, || run_impact_tau(cfg, &dir)),
        ExperimentKind::BudgetComparison => {
            with_jobs(cfg.jobs, || run_budget_comparison(cfg, &dir))
        }
        ExperimentKind::BnormStudy => {
            let section = cfg
                .bnorm
                .as_ref()
                .ok_or_else(|| Error::Config("bnorm section is required".into()))?;
            let methods: Vec<FactorizationMethod> = section
                .methods
                .iter()
                .map(|m| FactorizationMethod::parse(m))
                .collect::<Result<_>>()?;
            write_resolved_config(cfg, &dir)?;
            run_bnorm_study(&section.rounds_list, &methods, &dir)?;
            Ok(Vec::new())
        }
        ExperimentKind::Custom => {
            with_jobs(cfg.jobs, || run_single_simulation(cfg, &dir, false))?;
            Ok(Vec::new())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_mean_std() {
        let series = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let (mean, std) = aggregate_series(&series);
        assert_eq!(mean, vec![2.0, 3.0]);
        let expect = 2.0_f64.sqrt();
        assert!((std[0] - expect).abs() <= 1e-12);
        assert!((std[1] - expect).abs() <= 1e-12);
    }

    #[test]
    fn single_trial_has_zero_std() {
        let series = vec![vec![1.0, 2.0]];
        let (mean, std) = aggregate_series(&series);
        assert_eq!(mean, vec![1.0, 2.0]);
        assert_eq!(std, vec![0.0, 0.0]);
    }

    #[test]
    fn eta_tilde_resolution() {
        assert_eq!(resolve_eta_tilde(Some(0.3), 0.25), 0.3);
        assert_eq!(resolve_eta_tilde(None, 0.25), 0.5);
    }

    #[test]
    fn bnorm_study_empty_list_writes_header_only() {
        let dir = std::env::temp_dir().join(format!("oflsim-bnorm-{}", std::process::id()));
        run_bnorm_study(&[], &[FactorizationMethod::SqrtNormalized], &dir).unwrap();
        let text = std::fs::read_to_string(dir.join("bnorm_study.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2); // schema comment + header
        std::fs::remove_dir_all(&dir).ok();
    }
}
