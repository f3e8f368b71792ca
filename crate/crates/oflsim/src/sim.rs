//! The online federated learning loop.
//!
//! Each round, every learner starts from the released global model, takes
//! tau clipped-gradient steps on its streaming data, and sends its local
//! model back; the server recovers the averaged gradient direction and adds
//! either the correlated noise row `(b^{r+1} - b^r) xi` or a fresh
//! independent row, depending on the mechanism.
//!
//! Three identities are verified online for every correlated run:
//!
//! - server-quotient equivalence: `(x^r - mean_i z_i) / (eta tau)` equals the
//!   averaged gradient `g^r`;
//! - the virtual-iterate recursion: `x_xi^{r+1} = x_xi^r - eta_tilde g^r`
//!   with `x_xi^r = x^r + eta_tilde b^r xi`;
//! - the drift bound `||z_i^{r,tau} - x^r|| <= eta tau Bg`.
//!
//! A fourth, the stacked matrix form, is recomputed from scratch by
//! [`verify_stacked_form`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::csvio;
use crate::data::{logistic_gradient_clipped, round_losses, ClientDatum, StreamDataset};
use crate::error::{Error, Result};
use crate::factorization::{Factorization, WorkloadMatrix};
use crate::mathx::is_positive_finite;
use crate::privacy::{
    calibrate_correlated, calibrate_independent_zcdp, sample_noise_matrix, zero_calibration,
    NoiseCalibration, NoiseMechanism, PrivacyBudget,
};
use crate::seed::{derive_seed, DOMAIN_NOISE};

/// Relative tolerance for the virtual-iterate recursion residual.
pub const VIRTUAL_RTOL: f64 = 1e-9;
/// Relative tolerance for the stacked-form residual.
pub const STACKED_RTOL: f64 = 1e-9;
/// Relative tolerance for the server-quotient / averaged-gradient equivalence.
pub const SERVER_EQUIV_RTOL: f64 = 1e-10;

/// Every hyperparameter of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub learners: usize,
    pub rounds: usize,
    pub tau: usize,
    pub dim: usize,
    /// Local step size eta.
    pub eta: f64,
    /// Global step size eta_g.
    pub eta_g: f64,
    /// eta_tilde = eta * eta_g * tau, stored and checked exactly.
    pub eta_tilde: f64,
    /// Gradient clip bound Bg.
    pub clip_bound: f64,
    /// Plug-in smoothness estimate, used only for step-size warnings.
    pub smoothness_estimate: f64,
    pub seed: u64,
    pub budget: PrivacyBudget,
    pub mechanism: NoiseMechanism,
    pub trials: usize,
    /// Multiplier on the calibrated noise std; 1.0 is the literal
    /// sensitivity reading of the closed forms.
    pub sensitivity_scale: f64,
}

impl SimConfig {
    /// Builds a config from `eta_tilde`, deriving `eta = eta_tilde / (eta_g tau)`
    /// and re-storing the exact product.
    #[allow(clippy::too_many_arguments)]
    pub fn from_eta_tilde(
        learners: usize,
        rounds: usize,
        tau: usize,
        dim: usize,
        eta_tilde: f64,
        eta_g: f64,
        clip_bound: f64,
        smoothness_estimate: f64,
        seed: u64,
        budget: PrivacyBudget,
        mechanism: NoiseMechanism,
        trials: usize,
    ) -> SimConfig {
        let eta = eta_tilde / (eta_g * tau as f64);
        SimConfig {
            learners,
            rounds,
            tau,
            dim,
            eta,
            eta_g,
            eta_tilde: eta * eta_g * tau as f64,
            clip_bound,
            smoothness_estimate,
            seed,
            budget,
            mechanism,
            trials,
            sensitivity_scale: 1.0,
        }
    }

    /// Validates the config and returns non-fatal warnings (the step-size
    /// condition `eta_tilde <= 1/(8 L_hat)` is surfaced as a warning).
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.learners == 0 || self.rounds == 0 || self.tau == 0 || self.dim == 0 {
            return Err(Error::InvalidDimension(
                "learners, rounds, tau, dim must all be at least 1".into(),
            ));
        }
        if !self.eta.is_finite()
            || self.eta < 0.0
            || !is_positive_finite(self.eta_g)
            || !is_positive_finite(self.clip_bound)
        {
            return Err(Error::InvalidParameter(
                "eta must be nonnegative; eta_g and clip_bound must be positive".into(),
            ));
        }
        if !is_positive_finite(self.smoothness_estimate) {
            return Err(Error::InvalidParameter(
                "smoothness_estimate must be positive".into(),
            ));
        }
        if !self.sensitivity_scale.is_finite() || self.sensitivity_scale < 0.0 {
            return Err(Error::InvalidParameter(
                "sensitivity_scale must be nonnegative".into(),
            ));
        }
        let product = self.eta * self.eta_g * self.tau as f64;
        if product != self.eta_tilde {
            return Err(Error::InvalidParameter(format!(
                "eta_tilde must equal eta * eta_g * tau exactly ({} vs {})",
                self.eta_tilde, product
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        self.budget.validate()?;
        let mut warnings = Vec::new();
        let step_cap = 1.0 / (8.0 * self.smoothness_estimate);
        if self.eta_tilde > step_cap {
            warnings.push(format!(
                "eta_tilde = {} exceeds 1/(8 L_hat) = {}; the convergence analysis assumes smaller steps",
                self.eta_tilde, step_cap
            ));
        }
        Ok(warnings)
    }

    /// The noise calibration this config implies, including the
    /// sensitivity-scale override.
    pub fn calibration(&self, factorization: Option<&Factorization>) -> Result<NoiseCalibration> {
        let base = match self.mechanism {
            NoiseMechanism::CorrelatedMf => {
                let fact = factorization.ok_or(Error::MissingFactorization)?;
                calibrate_correlated(self.budget, self.clip_bound, fact.gamma)?
            }
            NoiseMechanism::IndependentZcdp => {
                calibrate_independent_zcdp(self.budget, self.clip_bound)?
            }
            NoiseMechanism::None => zero_calibration(self.clip_bound),
        };
        Ok(base.scaled(self.sensitivity_scale))
    }
}

/// Full record of one simulation run.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    /// x^0 .. x^R.
    pub models: Vec<Array1<f64>>,
    /// Rows g^r (the averaged directions actually applied, before noise).
    pub gradient_stack: Array2<f64>,
    /// The noise rows applied each round: `(b^{r+1}-b^r) xi` for the
    /// correlated mechanism, the fresh row `zeta^r` for the baseline, zeros
    /// otherwise.
    pub noise_rows: Vec<Array1<f64>>,
    /// The underlying noise pool: xi (R x d) for correlated, the stacked
    /// zeta rows for the baseline, zeros for mechanism `none`.
    pub noise_matrix: Array2<f64>,
    /// x_xi^0 .. x_xi^R (equal to `models` when no correlated noise is used).
    pub virtual_iterates: Vec<Array1<f64>>,
    /// f^r(x^r), the mean round loss at the model the round's clients saw.
    pub round_mean_losses: Vec<f64>,
    /// Per-round virtual-iterate recursion residual (relative).
    pub virtual_residuals: Vec<f64>,
    /// Per-round max_i ||z_i^{r,tau} - x^r||.
    pub drift_max: Vec<f64>,
    /// Per-round drift bound eta * tau * Bg.
    pub drift_bound: f64,
    pub calibration: NoiseCalibration,
    pub config: SimConfig,
    pub warnings: Vec<String>,
}

impl SimulationTrace {
    pub fn final_model(&self) -> ArrayView1<'_, f64> {
        self.models.last().expect("trace has R+1 models").view()
    }

    /// Trace CSV: (round, mean_round_loss, grad_norm, noise_row_norm,
    /// virtual_residual). Rounds are 0-based update indices.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut rows = Vec::with_capacity(self.config.rounds);
        for r in 0..self.config.rounds {
            let grad_norm = self
                .gradient_stack
                .row(r)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let noise_norm = self.noise_rows[r].iter().map(|v| v * v).sum::<f64>().sqrt();
            rows.push(vec![
                r.to_string(),
                csvio::fmt_f64(self.round_mean_losses[r]),
                csvio::fmt_f64(grad_norm),
                csvio::fmt_f64(noise_norm),
                csvio::fmt_f64(self.virtual_residuals[r]),
            ]);
        }
        csvio::write_csv(
            path,
            &[
                "round",
                "mean_round_loss",
                "grad_norm",
                "noise_row_norm",
                "virtual_residual",
            ],
            &rows,
        )
    }

    /// Optional full model dump: (round, coord_1..coord_d).
    pub fn export_models_csv(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = vec!["round".into()];
        for j in 1..=self.config.dim {
            header.push(format!("coord_{j}"));
        }
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut rows = Vec::with_capacity(self.models.len());
        for (r, m) in self.models.iter().enumerate() {
            let mut row = vec![r.to_string()];
            row.extend(m.iter().map(|v| csvio::fmt_f64(*v)));
            rows.push(row);
        }
        csvio::write_csv(path, &header_refs, &rows)
    }
}

/// tau sequential clipped-gradient steps from `z^{r,0} = x_r`; returns the
/// final local model and the tau gradients evaluated along the trajectory.
pub fn local_round(
    x_r: ArrayView1<f64>,
    features: ArrayView2<f64>,
    labels: &[f64],
    eta: f64,
    clip_bound: f64,
) -> (Array1<f64>, Array2<f64>) {
    let tau = labels.len();
    let dim = x_r.len();
    let mut z = x_r.to_owned();
    let mut grads = Array2::<f64>::zeros((tau, dim));
    for (t, &label) in labels.iter().enumerate() {
        let g = logistic_gradient_clipped(z.view(), features.row(t), label, clip_bound);
        for j in 0..dim {
            z[j] -= eta * g[j];
        }
        grads.row_mut(t).assign(&g);
    }
    (z, grads)
}

/// The server's update for the correlated mechanism. `g_r` is the
/// averaged gradient recomputed from the learners' trajectories; when
/// `eta > 0` the quotient form `(x^r - mean z) / (eta tau)` is used for the
/// update and must agree with `g_r` to [`SERVER_EQUIV_RTOL`]; disagreement is an
/// internal-consistency error, never an expected condition.
pub fn server_step_correlated(
    x_r: ArrayView1<f64>,
    z_mean: ArrayView1<f64>,
    g_r: ArrayView1<f64>,
    noise_row: ArrayView1<f64>,
    eta: f64,
    tau: usize,
    eta_tilde: f64,
) -> Result<Array1<f64>> {
    let direction = if eta > 0.0 {
        let quotient = (&x_r - &z_mean) / (eta * tau as f64);
        let diff_norm = (&quotient - &g_r).iter().map(|v| v * v).sum::<f64>().sqrt();
        let g_norm = g_r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if diff_norm > SERVER_EQUIV_RTOL * (1.0 + g_norm) {
            return Err(Error::invariant(
                "sim.server_quotient_equivalence",
                format!(
                    "(x - mean z)/(eta tau) deviates from averaged gradient by {diff_norm:.3e}"
                ),
            ));
        }
        quotient
    } else {
        g_r.to_owned()
    };
    Ok(&x_r - &((&direction + &noise_row) * eta_tilde))
}

/// The baseline's server update: batch gradients at `x_r`, summed over local
/// steps (not averaged), averaged over learners, step `eta`, plus the fresh
/// noise row. `grad_sum_avg` is `(1/n) sum_i sum_t grad f_i^{r,t}(x^r)`.
pub fn server_step_independent(
    x_r: ArrayView1<f64>,
    grad_sum_avg: ArrayView1<f64>,
    eta: f64,
    noise_row: ArrayView1<f64>,
) -> Array1<f64> {
    &x_r - &((&grad_sum_avg + &noise_row) * eta)
}

fn rel_norm(num: &Array1<f64>, reference: &Array1<f64>) -> f64 {
    let n = num.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    n / (1.0 + d)
}

/// Runs the local-update loop (or the independent baseline) over the
/// dataset and returns the full trace. The correlated mechanism requires a
/// factorization; mechanism `none` runs the same loop with zero noise.
pub fn run_simulation(
    config: &SimConfig,
    dataset: &StreamDataset,
    factorization: Option<&Factorization>,
) -> Result<SimulationTrace> {
    let mut warnings = config.validate()?;
    if dataset.learners() != config.learners
        || dataset.rounds() != config.rounds
        || dataset.tau() != config.tau
        || dataset.dim() != config.dim
    {
        return Err(Error::ShapeMismatch(format!(
            "dataset is {}x{}x{} in dimension {}, config expects {}x{}x{} in dimension {}",
            dataset.learners(),
            dataset.rounds(),
            dataset.tau(),
            dataset.dim(),
            config.learners,
            config.rounds,
            config.tau,
            config.dim
        )));
    }
    let correlated = config.mechanism == NoiseMechanism::CorrelatedMf;
    if correlated {
        match factorization {
            None => return Err(Error::MissingFactorization),
            Some(f) if f.dim() != config.rounds => {
                return Err(Error::ShapeMismatch(format!(
                    "factorization is for R = {}, config has R = {}",
                    f.dim(),
                    config.rounds
                )))
            }
            _ => {}
        }
    }

    let calibration = config.calibration(factorization)?;
    let noise_seed = derive_seed(config.seed, DOMAIN_NOISE, 0);
    // The full noise pool is materialized up front, exactly as the algorithm
    // prescribes.
    let noise_matrix = sample_noise_matrix(config.rounds, config.dim, &calibration, noise_seed);

    let n = config.learners;
    let tau = config.tau;
    let dim = config.dim;
    let eta_tilde = config.eta_tilde;
    let drift_bound = config.eta * tau as f64 * config.clip_bound;

    let mut x = Array1::<f64>::zeros(dim);
    let mut models = Vec::with_capacity(config.rounds + 1);
    models.push(x.clone());
    let mut gradient_stack = Array2::<f64>::zeros((config.rounds, dim));
    let mut noise_rows = Vec::with_capacity(config.rounds);
    let mut round_mean_losses = Vec::with_capacity(config.rounds);
    let mut virtual_residuals = Vec::with_capacity(config.rounds);
    let mut drift_max_all = Vec::with_capacity(config.rounds);

    // Virtual iterate x_xi^r = x^r + eta_tilde b^r xi; with b^0 = 0 it starts
    // at x^0 and must follow the noise-free recursion.
    let mut virtual_iterates = Vec::with_capacity(config.rounds + 1);
    virtual_iterates.push(x.clone());
    let mut x_xi_prev = x.clone();

    for r in 0..config.rounds {
        let (_, mean_loss_r) = round_losses(x.view(), dataset, r)?;
        round_mean_losses.push(mean_loss_r);

        let (g_r, z_mean, drift_max) = if correlated || config.mechanism == NoiseMechanism::None {
            // Learner results are combined in fixed index order so
            // floating-point output is independent of any parallelism.
            let mut g_sum = Array1::<f64>::zeros(dim);
            let mut z_sum = Array1::<f64>::zeros(dim);
            let mut drift_max = 0.0_f64;
            for i in 0..n {
                let (feats, labels) = dataset.learner_round(i, r);
                let (z_i, grads) =
                    local_round(x.view(), feats, labels, config.eta, config.clip_bound);
                let drift = (&z_i - &x).iter().map(|v| v * v).sum::<f64>().sqrt();
                drift_max = drift_max.max(drift);
                for t in 0..tau {
                    g_sum += &grads.row(t);
                }
                z_sum += &z_i;
            }
            if drift_max > drift_bound * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::invariant(
                    "sim.drift_bound",
                    format!(
                        "round {r}: max local drift {drift_max} exceeds eta*tau*Bg = {drift_bound}"
                    ),
                ));
            }
            (g_sum / (n * tau) as f64, Some(z_sum / n as f64), drift_max)
        } else {
            // Baseline: all gradients evaluated at x^r, summed over t and
            // averaged over learners. No local trajectory, no drift.
            let mut g_sum = Array1::<f64>::zeros(dim);
            for i in 0..n {
                let (feats, labels) = dataset.learner_round(i, r);
                for (row, &label) in feats.rows().into_iter().zip(labels) {
                    let g = logistic_gradient_clipped(x.view(), row, label, config.clip_bound);
                    g_sum += &g;
                }
            }
            (g_sum / n as f64, None, 0.0)
        };
        drift_max_all.push(drift_max);

        let x_next = match config.mechanism {
            NoiseMechanism::CorrelatedMf | NoiseMechanism::None => {
                let noise_row = if correlated {
                    let fact = factorization.expect("checked above");
                    let delta_b = &fact.b_row(r + 1) - &fact.b_row(r);
                    delta_b.dot(&noise_matrix)
                } else {
                    Array1::zeros(dim)
                };
                let x_next = server_step_correlated(
                    x.view(),
                    z_mean.as_ref().expect("local path computes z_mean").view(),
                    g_r.view(),
                    noise_row.view(),
                    config.eta,
                    tau,
                    eta_tilde,
                )?;
                noise_rows.push(noise_row);
                x_next
            }
            NoiseMechanism::IndependentZcdp => {
                let noise_row = noise_matrix.row(r).to_owned();
                let x_next =
                    server_step_independent(x.view(), g_r.view(), config.eta, noise_row.view());
                noise_rows.push(noise_row);
                x_next
            }
        };
        gradient_stack.row_mut(r).assign(&g_r);

        // Virtual-iterate recursion check. For the correlated mechanism the
        // virtual sequence strips the noise; for mechanism `none` it is the
        // model sequence itself and the same recursion applies. The baseline
        // follows different dynamics, so no residual is defined for it.
        let x_xi_next = if correlated {
            let fact = factorization.expect("checked above");
            &x_next + &(fact.b_row(r + 1).dot(&noise_matrix) * eta_tilde)
        } else {
            x_next.clone()
        };
        let residual = if config.mechanism == NoiseMechanism::IndependentZcdp {
            0.0
        } else {
            let residual_vec = &x_xi_next - &x_xi_prev + &(&g_r * eta_tilde);
            rel_norm(&residual_vec, &x_xi_next)
        };
        if correlated && residual > VIRTUAL_RTOL {
            return Err(Error::invariant(
                "sim.virtual_iterate",
                format!(
                    "round {r}: virtual-iterate residual {residual:.3e} exceeds {VIRTUAL_RTOL:.1e}"
                ),
            ));
        }
        virtual_residuals.push(residual);
        virtual_iterates.push(x_xi_next.clone());
        x_xi_prev = x_xi_next;

        models.push(x_next.clone());
        x = x_next;
    }

    let trace = SimulationTrace {
        models,
        gradient_stack,
        noise_rows,
        noise_matrix,
        virtual_iterates,
        round_mean_losses,
        virtual_residuals,
        drift_max: drift_max_all,
        drift_bound,
        calibration,
        config: config.clone(),
        warnings: Vec::new(),
    };

    if correlated {
        let fact = factorization.expect("checked above");
        let workload = crate::factorization::build_prefix_workload(config.rounds)?;
        let residual =
            verify_stacked_form(&trace, &workload, &fact.b_matrix, trace.noise_matrix.view());
        if residual > STACKED_RTOL {
            return Err(Error::invariant(
                "sim.stacked_form",
                format!("stacked-form residual {residual:.3e} exceeds {STACKED_RTOL:.1e}"),
            ));
        }
    }

    let mut trace = trace;
    trace.warnings.append(&mut warnings);
    Ok(trace)
}

/// Recomputes the whole trajectory in one shot from the stacked matrix form
/// `x = x^0 - eta_tilde (A G + B xi)` and returns the maximum relative
/// deviation from the streamed models. This is an independent recomputation:
/// it uses the dense workload product, not the streaming recursion.
pub fn verify_stacked_form(
    trace: &SimulationTrace,
    workload: &WorkloadMatrix,
    b_matrix: &Array2<f64>,
    xi: ArrayView2<f64>,
) -> f64 {
    let ag = workload.entries().dot(&trace.gradient_stack);
    let bxi = b_matrix.dot(&xi);
    let eta_tilde = trace.config.eta_tilde;
    let x0 = &trace.models[0];
    let mut worst = 0.0_f64;
    for r in 1..=trace.config.rounds {
        let stacked = x0 - &((&ag.row(r - 1) + &bxi.row(r - 1)) * eta_tilde);
        let diff = &stacked - &trace.models[r];
        worst = worst.max(rel_norm(&diff, &trace.models[r]));
    }
    worst
}

/// Builds the gradient stacks of a neighboring pair for the sensitivity
/// check: the base run's stack `G`, and `G'` from re-executing round `r`
/// from the same released model with the datum at (i, r, t) replaced.
///
/// The full perturbed stream is also run end to end with the same noise to
/// assert that every row before `r` is bit-identical (the replaced datum
/// cannot influence earlier rounds); rows after `r` are taken from the
/// coupled execution, as the adaptive continuous-release game prescribes.
pub fn neighboring_gradient_stacks(
    config: &SimConfig,
    dataset: &StreamDataset,
    slot: (usize, usize, usize),
    replacement: &ClientDatum,
    factorization: Option<&Factorization>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (i, r, t) = slot;
    let base = run_simulation(config, dataset, factorization)?;

    let mut perturbed = dataset.clone();
    perturbed.replace_datum(i, r, t, replacement)?;
    let full_perturbed = run_simulation(config, &perturbed, factorization)?;
    for rr in 0..r {
        if base.gradient_stack.row(rr) != full_perturbed.gradient_stack.row(rr) {
            return Err(Error::invariant(
                "sensitivity.prefix_unchanged",
                format!("row {rr} changed although the replaced datum is at round {r}"),
            ));
        }
    }

    // Re-execute round r only, from the shared released model x^r.
    let x_r = base.models[r].view();
    let n = config.learners;
    let tau = config.tau;
    let mut g_sum = Array1::<f64>::zeros(config.dim);
    for li in 0..n {
        let (feats, labels) = perturbed.learner_round(li, r);
        let (_, grads) = local_round(x_r, feats, labels, config.eta, config.clip_bound);
        for tt in 0..tau {
            g_sum += &grads.row(tt);
        }
    }
    let g_r_prime = g_sum / (n * tau) as f64;

    let mut g_prime = base.gradient_stack.clone();
    g_prime.row_mut(r).assign(&g_r_prime);
    Ok((base.gradient_stack, g_prime))
}
