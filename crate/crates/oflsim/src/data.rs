//! Synthetic heterogeneous logistic-regression streams and the clipped
//! loss/gradient they feed to the simulator.
//!
//! A stream serves one datum per (learner i, round r, local step t) slot.
//! The generator follows the two-parameter heterogeneity recipe: per learner
//! draw `u_i ~ N(0, alpha)` and `c_i ~ N(0, beta)`, then a learner weight
//! vector with coordinates `N(u_i, 1)` and a feature-mean vector with
//! coordinates `N(c_i, 1)`; features are `N(v_i, Sigma)` with diagonal
//! `Sigma_jj = j^{-1.2}` and labels are sampled (not thresholded) from the
//! learner's own logistic model. Every learner consumes its own derived
//! seed substream, so regeneration is bit-identical.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};
use crate::mathx;
use crate::privacy::GaussianStream;
use crate::seed::{derive_seed, DOMAIN_LEARNER};

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDatum {
    pub features: Array1<f64>,
    /// Either -1 or +1.
    pub label: i8,
}

impl ClientDatum {
    pub fn new(features: Array1<f64>, label: i8) -> Result<Self> {
        if label != 1 && label != -1 {
            return Err(Error::InvalidParameter(format!(
                "label must be -1 or +1, got {label}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("features must be finite".into()));
        }
        Ok(ClientDatum { features, label })
    }
}

/// Generation parameters recorded for bit-identical regeneration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub normalized: bool,
}

/// The full indexed collection of data for n learners x R rounds x tau steps.
///
/// Features are stored as one `(n * R * tau) x d` matrix with flat index
/// `(i * R + r) * tau + t`, so a learner's round is a contiguous block.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamDataset {
    learners: usize,
    rounds: usize,
    tau: usize,
    dim: usize,
    features: Array2<f64>,
    labels: Vec<f64>,
    pub gen_params: Option<GenParams>,
}

impl StreamDataset {
    pub fn learners(&self) -> usize {
        self.learners
    }
    pub fn rounds(&self) -> usize {
        self.rounds
    }
    pub fn tau(&self) -> usize {
        self.tau
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn features_view(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn flat_index(&self, i: usize, r: usize, t: usize) -> usize {
        (i * self.rounds + r) * self.tau + t
    }

    /// The datum served at slot (i, r, t).
    pub fn datum(&self, i: usize, r: usize, t: usize) -> (ArrayView1<'_, f64>, f64) {
        let idx = self.flat_index(i, r, t);
        (self.features.row(idx), self.labels[idx])
    }

    /// Contiguous block of learner i's data for round r: (tau x d, labels).
    pub fn learner_round(&self, i: usize, r: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let start = self.flat_index(i, r, 0);
        (
            self.features.slice(s![start..start + self.tau, ..]),
            &self.labels[start..start + self.tau],
        )
    }

    /// Gathers all n*tau data of round r into owned arrays (learner-major).
    pub fn round_data(&self, r: usize) -> Result<(Array2<f64>, Vec<f64>)> {
        if r >= self.rounds {
            return Err(Error::InvalidParameter(format!(
                "round {r} out of range (R = {})",
                self.rounds
            )));
        }
        let mut feats = Array2::<f64>::zeros((self.learners * self.tau, self.dim));
        let mut labels = Vec::with_capacity(self.learners * self.tau);
        for i in 0..self.learners {
            let (block, lb) = self.learner_round(i, r);
            feats
                .slice_mut(s![i * self.tau..(i + 1) * self.tau, ..])
                .assign(&block);
            labels.extend_from_slice(lb);
        }
        Ok((feats, labels))
    }

    /// Replaces the datum at (i, r, t); used to build neighboring streams.
    pub fn replace_datum(
        &mut self,
        i: usize,
        r: usize,
        t: usize,
        datum: &ClientDatum,
    ) -> Result<()> {
        if datum.features.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "replacement datum has dimension {}, dataset has {}",
                datum.features.len(),
                self.dim
            )));
        }
        let idx = self.flat_index(i, r, t);
        self.features.row_mut(idx).assign(&datum.features);
        self.labels[idx] = datum.label as f64;
        self.gen_params = None;
        Ok(())
    }

    /// Rescales every feature vector to norm at most 1, making the clipped
    /// gradient provably inactive at the default clip bound of 1.
    pub fn normalize_features(&mut self) {
        for mut row in self.features.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        if let Some(p) = self.gen_params.as_mut() {
            p.normalized = true;
        }
    }

    /// Re-partitions the same arrival stream into a different (rounds, tau)
    /// schedule with the same total data per learner. Slot s = r*tau + t is
    /// preserved, so the tau-settings of the equal-total-data experiment see
    /// identical streams.
    pub fn reshape(&self, rounds: usize, tau: usize) -> Result<StreamDataset> {
        if rounds * tau != self.rounds * self.tau {
            return Err(Error::InvalidDimension(format!(
                "cannot reshape {}x{} slots into {}x{}",
                self.rounds, self.tau, rounds, tau
            )));
        }
        Ok(StreamDataset {
            learners: self.learners,
            rounds,
            tau,
            dim: self.dim,
            features: self.features.clone(),
            labels: self.labels.clone(),
            gen_params: self.gen_params,
        })
    }

    /// A stationary stream: round 0's data repeated in every round.
    pub fn make_stationary(&self) -> StreamDataset {
        let mut features = Array2::<f64>::zeros(self.features.raw_dim());
        let mut labels = vec![0.0; self.labels.len()];
        for i in 0..self.learners {
            let (block, lb) = self.learner_round(i, 0);
            for r in 0..self.rounds {
                let start = self.flat_index(i, r, 0);
                features
                    .slice_mut(s![start..start + self.tau, ..])
                    .assign(&block);
                labels[start..start + self.tau].copy_from_slice(lb);
            }
        }
        StreamDataset {
            learners: self.learners,
            rounds: self.rounds,
            tau: self.tau,
            dim: self.dim,
            features,
            labels,
            gen_params: None,
        }
    }

    /// Largest squared feature norm; `L_hat = max ||a||^2 / 4` is the plug-in
    /// smoothness estimate for the per-datum logistic loss.
    pub fn max_feature_sq_norm(&self) -> f64 {
        self.features
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn smoothness_estimate(&self) -> f64 {
        self.max_feature_sq_norm() / 4.0
    }

    /// Writes the dataset as CSV: learner, round, step, label, f_1..f_d.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = vec![
            "learner".into(),
            "round".into(),
            "step".into(),
            "label".into(),
        ];
        for j in 1..=self.dim {
            header.push(format!("f_{j}"));
        }
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut rows = Vec::with_capacity(self.len());
        for i in 0..self.learners {
            for r in 0..self.rounds {
                for t in 0..self.tau {
                    let (feats, label) = self.datum(i, r, t);
                    let mut row = vec![
                        i.to_string(),
                        r.to_string(),
                        t.to_string(),
                        (label as i64).to_string(),
                    ];
                    row.extend(feats.iter().map(|v| csvio::fmt_f64(*v)));
                    rows.push(row);
                }
            }
        }
        csvio::write_csv(path, &header_refs, &rows)
    }

    /// Reads a dataset written by [`export_csv`], checking that every slot is
    /// present exactly once.
    pub fn import_csv(path: &Path) -> Result<StreamDataset> {
        let (header, rows) = csvio::read_csv(path)?;
        if header.len() < 5 || header[..4] != ["learner", "round", "step", "label"] {
            return Err(Error::Parse(format!(
                "{}: unexpected header",
                path.display()
            )));
        }
        let dim = header.len() - 4;
        let mut learners = 0usize;
        let mut rounds = 0usize;
        let mut tau = 0usize;
        let mut parsed = Vec::with_capacity(rows.len());
        for row in &rows {
            if row.len() != 4 + dim {
                return Err(Error::Parse(format!("{}: ragged row", path.display())));
            }
            let i = csvio::parse_usize(&row[0])?;
            let r = csvio::parse_usize(&row[1])?;
            let t = csvio::parse_usize(&row[2])?;
            let label = csvio::parse_f64(&row[3])?;
            if label != 1.0 && label != -1.0 {
                return Err(Error::Parse(format!(
                    "{}: label must be -1 or 1",
                    path.display()
                )));
            }
            let feats: Vec<f64> = row[4..]
                .iter()
                .map(|s| csvio::parse_f64(s))
                .collect::<Result<_>>()?;
            learners = learners.max(i + 1);
            rounds = rounds.max(r + 1);
            tau = tau.max(t + 1);
            parsed.push((i, r, t, label, feats));
        }
        let total = learners * rounds * tau;
        if parsed.len() != total {
            return Err(Error::Parse(format!(
                "{}: expected {total} rows for {learners}x{rounds}x{tau}, got {}",
                path.display(),
                parsed.len()
            )));
        }
        let mut features = Array2::<f64>::zeros((total, dim));
        let mut labels = vec![f64::NAN; total];
        for (i, r, t, label, feats) in parsed {
            let idx = (i * rounds + r) * tau + t;
            if !labels[idx].is_nan() {
                return Err(Error::Parse(format!(
                    "{}: duplicate slot ({i}, {r}, {t})",
                    path.display()
                )));
            }
            labels[idx] = label;
            for (j, v) in feats.into_iter().enumerate() {
                features[[idx, j]] = v;
            }
        }
        if labels.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse(format!("{}: missing slots", path.display())));
        }
        Ok(StreamDataset {
            learners,
            rounds,
            tau,
            dim,
            features,
            labels,
            gen_params: None,
        })
    }
}

/// Generates the synthetic heterogeneous stream. `alpha` and `beta` are the
/// variances of the learner-level mean shifts; `alpha = beta = 0` is the
/// homogeneous regime.
pub fn generate_synthetic(
    learners: usize,
    rounds: usize,
    tau: usize,
    dim: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> Result<StreamDataset> {
    if learners == 0 || rounds == 0 || tau == 0 || dim == 0 {
        return Err(Error::InvalidDimension(
            "learners, rounds, tau, and dim must all be at least 1".into(),
        ));
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::InvalidParameter(
            "alpha and beta must be nonnegative".into(),
        ));
    }
    let total = learners * rounds * tau;
    let mut features = Array2::<f64>::zeros((total, dim));
    let mut labels = vec![0.0; total];
    // Sigma_jj = j^{-1.2} for 1-based j, so the per-coordinate std decays.
    let coord_std: Vec<f64> = (1..=dim).map(|j| (j as f64).powf(-0.6)).collect();

    for i in 0..learners {
        let mut stream = GaussianStream::new(derive_seed(seed, DOMAIN_LEARNER, i as u64));
        let u_i = stream.standard_normal() * alpha.sqrt();
        let c_i = stream.standard_normal() * beta.sqrt();
        let weights: Vec<f64> = (0..dim).map(|_| u_i + stream.standard_normal()).collect();
        let means: Vec<f64> = (0..dim).map(|_| c_i + stream.standard_normal()).collect();
        for r in 0..rounds {
            for t in 0..tau {
                let idx = (i * rounds + r) * tau + t;
                let mut margin = 0.0;
                for j in 0..dim {
                    let a = means[j] + coord_std[j] * stream.standard_normal();
                    features[[idx, j]] = a;
                    margin += a * weights[j];
                }
                let p = mathx::sigmoid(margin);
                labels[idx] = if stream.uniform() < p { 1.0 } else { -1.0 };
            }
        }
    }
    Ok(StreamDataset {
        learners,
        rounds,
        tau,
        dim,
        features,
        labels,
        gen_params: Some(GenParams {
            alpha,
            beta,
            seed,
            normalized: false,
        }),
    })
}

/// The learner-level feature-mean vectors used by the heterogeneity check.
pub fn learner_feature_means(dataset: &StreamDataset) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((dataset.learners(), dataset.dim()));
    let per_learner = (dataset.rounds() * dataset.tau()) as f64;
    for i in 0..dataset.learners() {
        for r in 0..dataset.rounds() {
            let (block, _) = dataset.learner_round(i, r);
            for row in block.rows() {
                for j in 0..dataset.dim() {
                    out[[i, j]] += row[j];
                }
            }
        }
        for j in 0..dataset.dim() {
            out[[i, j]] /= per_learner;
        }
    }
    out
}

/// `log(1 + exp(-<x, a> b))`, stable for large margins.
#[inline]
pub fn logistic_loss(x: ArrayView1<f64>, features: ArrayView1<f64>, label: f64) -> f64 {
    mathx::softplus_neg(x.dot(&features) * label)
}

/// Raw (unclipped) gradient: `-b a sigmoid(-b <x, a>)`.
pub fn logistic_gradient(x: ArrayView1<f64>, features: ArrayView1<f64>, label: f64) -> Array1<f64> {
    let margin = x.dot(&features) * label;
    let coeff = -label * mathx::sigmoid(-margin);
    features.mapv(|a| coeff * a)
}

/// Gradient clipped to norm `clip_bound`; the zero gradient stays zero.
pub fn logistic_gradient_clipped(
    x: ArrayView1<f64>,
    features: ArrayView1<f64>,
    label: f64,
    clip_bound: f64,
) -> Array1<f64> {
    let mut g = logistic_gradient(x, features, label);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > clip_bound {
        g.mapv_inplace(|v| v * (clip_bound / norm));
    }
    g
}

/// All n*tau losses of round r at `x` (learner-major, step-minor) and their
/// mean `f^r(x)`.
pub fn round_losses(
    x: ArrayView1<f64>,
    dataset: &StreamDataset,
    r: usize,
) -> Result<(Vec<f64>, f64)> {
    if r >= dataset.rounds() {
        return Err(Error::InvalidParameter(format!(
            "round {r} out of range (R = {})",
            dataset.rounds()
        )));
    }
    let mut losses = Vec::with_capacity(dataset.learners() * dataset.tau());
    let mut sum = 0.0;
    for i in 0..dataset.learners() {
        let (feats, labels) = dataset.learner_round(i, r);
        for (row, &label) in feats.rows().into_iter().zip(labels) {
            let loss = logistic_loss(x, row, label);
            losses.push(loss);
            sum += loss;
        }
    }
    let mean = sum / losses.len() as f64;
    Ok((losses, mean))
}

/// Mean loss of `x` over the entire dataset, summed in flat index order.
pub fn mean_loss(x: ArrayView1<f64>, dataset: &StreamDataset) -> f64 {
    let mut sum = 0.0;
    for (row, &label) in dataset
        .features_view()
        .rows()
        .into_iter()
        .zip(dataset.labels())
    {
        sum += logistic_loss(x, row, label);
    }
    sum / dataset.len() as f64
}

/// Mean gradient of the loss over the entire dataset.
pub fn mean_gradient(x: ArrayView1<f64>, features: ArrayView2<f64>, labels: &[f64]) -> Array1<f64> {
    let mut g = Array1::<f64>::zeros(x.len());
    for (row, &label) in features.rows().into_iter().zip(labels) {
        let margin = x.dot(&row) * label;
        let coeff = -label * mathx::sigmoid(-margin);
        for (gj, aj) in g.iter_mut().zip(row.iter()) {
            *gj += coeff * aj;
        }
    }
    g / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn small_dataset() -> StreamDataset {
        generate_synthetic(2, 3, 2, 3, 0.1, 0.1, 99).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(3, 4, 2, 5, 0.1, 0.1, 7).unwrap();
        let b = generate_synthetic(3, 4, 2, 5, 0.1, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(3, 4, 2, 5, 0.1, 0.1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn homogeneous_regime_centers_means() {
        // With alpha = beta = 0 the learner mean vectors are iid around zero;
        // with positive (alpha, beta) they spread further apart. Compare mean
        // pairwise distances across 20 seeds.
        let mut spread_homog = 0.0;
        let mut spread_hetero = 0.0;
        for seed in 0..20u64 {
            for (alpha, beta, acc) in [
                (0.0, 0.0, &mut spread_homog),
                (0.1, 0.1, &mut spread_hetero),
            ] {
                let ds = generate_synthetic(10, 4, 2, 4, alpha, beta, seed).unwrap();
                let means = learner_feature_means(&ds);
                let mut dist = 0.0;
                let mut count = 0;
                for i in 0..10 {
                    for k in (i + 1)..10 {
                        let d: f64 = (0..4)
                            .map(|j| (means[[i, j]] - means[[k, j]]).powi(2))
                            .sum();
                        dist += d.sqrt();
                        count += 1;
                    }
                }
                *acc += dist / count as f64;
            }
        }
        assert!(
            spread_hetero > spread_homog,
            "heterogeneous spread {spread_hetero} should exceed homogeneous {spread_homog}"
        );
    }

    #[test]
    fn labels_are_plus_minus_one() {
        let ds = small_dataset();
        assert!(ds.labels().iter().all(|&l| l == 1.0 || l == -1.0));
    }

    #[test]
    fn loss_at_zero_is_ln2() {
        let ds = small_dataset();
        let x = Array1::<f64>::zeros(3);
        let (feats, label) = ds.datum(0, 0, 0);
        assert!((logistic_loss(x.view(), feats, label) - LN2).abs() <= 1e-15);
        let (_, mean) = round_losses(x.view(), &ds, 0).unwrap();
        assert_eq!(mean, LN2);
    }

    #[test]
    fn loss_is_stable_at_large_margins() {
        let a = array![1.0];
        let x = array![20.0];
        let loss_pos = logistic_loss(x.view(), a.view(), 1.0);
        assert!((loss_pos - 2.0611536181902037e-9).abs() <= 1e-15);
        let loss_neg = logistic_loss(x.view(), a.view(), -1.0);
        assert!((loss_neg - 20.000000002061153).abs() <= 1e-9);
        let huge = array![1e4];
        assert!(logistic_loss(huge.view(), a.view(), -1.0).is_finite());
        assert!(logistic_loss(huge.view(), a.view(), 1.0) >= 0.0);
    }

    #[test]
    fn gradient_at_zero_is_half_label_features() {
        let a = array![0.4, -1.2, 0.3];
        let x = Array1::<f64>::zeros(3);
        for label in [-1.0, 1.0] {
            let g = logistic_gradient(x.view(), a.view(), label);
            for j in 0..3 {
                assert!((g[j] - (-0.5 * label * a[j])).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn clipping_preserves_direction() {
        let a = array![2.0, 0.0];
        let x = Array1::<f64>::zeros(2);
        // Raw gradient has norm 1 here; shrink the bound to force clipping.
        let g = logistic_gradient_clipped(x.view(), a.view(), -1.0, 0.5);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 0.5).abs() <= 1e-12);
        assert!(g[0] > 0.0 && g[1] == 0.0);
    }

    #[test]
    fn clipping_inactive_for_unit_features() {
        // ||grad|| <= ||a|| since |sigmoid| <= 1, so ||a|| <= Bg never clips.
        let mut stream = GaussianStream::new(4242);
        for _ in 0..100 {
            let mut a = Array1::<f64>::zeros(4);
            for v in a.iter_mut() {
                *v = stream.standard_normal();
            }
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                a.mapv_inplace(|v| v / norm);
            }
            let mut x = Array1::<f64>::zeros(4);
            for v in x.iter_mut() {
                *v = 3.0 * stream.standard_normal();
            }
            let label = if stream.uniform() < 0.5 { -1.0 } else { 1.0 };
            let raw = logistic_gradient(x.view(), a.view(), label);
            let clipped = logistic_gradient_clipped(x.view(), a.view(), label, 1.0);
            assert_eq!(raw, clipped);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut stream = GaussianStream::new(31337);
        let h = 1e-5;
        for _ in 0..100 {
            let a = Array1::from_iter((0..5).map(|_| stream.standard_normal()));
            let x = Array1::from_iter((0..5).map(|_| 0.8 * stream.standard_normal()));
            let label = if stream.uniform() < 0.5 { -1.0 } else { 1.0 };
            let g = logistic_gradient(x.view(), a.view(), label);
            for j in 0..5 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (logistic_loss(xp.view(), a.view(), label)
                    - logistic_loss(xm.view(), a.view(), label))
                    / (2.0 * h);
                let scale = g[j].abs().max(1e-3);
                assert!(
                    (fd - g[j]).abs() <= 1e-6 * scale,
                    "finite difference {fd} vs gradient {} at coord {j}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn round_losses_match_brute_force() {
        let ds = small_dataset();
        let mut stream = GaussianStream::new(5);
        let x = Array1::from_iter((0..3).map(|_| stream.standard_normal()));
        let (losses, mean) = round_losses(x.view(), &ds, 1).unwrap();
        assert_eq!(losses.len(), 4);
        // Independent summation order: step-major instead of learner-major.
        let mut acc = 0.0;
        for t in 0..ds.tau() {
            for i in 0..ds.learners() {
                let (f, l) = ds.datum(i, 1, t);
                acc += logistic_loss(x.view(), f, l);
            }
        }
        assert!((mean - acc / 4.0).abs() <= 1e-12);
        assert!(round_losses(x.view(), &ds, 3).is_err());
    }

    #[test]
    fn single_slot_round_mean_is_the_loss() {
        let ds = generate_synthetic(1, 2, 1, 2, 0.0, 0.0, 3).unwrap();
        let x = array![0.3, -0.1];
        let (losses, mean) = round_losses(x.view(), &ds, 0).unwrap();
        assert_eq!(losses.len(), 1);
        assert_eq!(losses[0], mean);
    }

    #[test]
    fn normalize_caps_feature_norms() {
        let mut ds = generate_synthetic(3, 5, 2, 6, 0.5, 0.5, 11).unwrap();
        ds.normalize_features();
        assert!(ds.max_feature_sq_norm() <= 1.0 + 1e-12);
        assert!(ds.gen_params.unwrap().normalized);
        assert!((ds.smoothness_estimate() - 0.25).abs() <= 1e-6);
    }

    #[test]
    fn reshape_preserves_stream_order() {
        let ds = generate_synthetic(2, 6, 2, 3, 0.1, 0.1, 21).unwrap();
        let reshaped = ds.reshape(4, 3).unwrap();
        for i in 0..2 {
            for slot in 0..12 {
                let (f_old, l_old) = ds.datum(i, slot / 2, slot % 2);
                let (f_new, l_new) = reshaped.datum(i, slot / 3, slot % 3);
                assert_eq!(f_old, f_new);
                assert_eq!(l_old, l_new);
            }
        }
        assert!(ds.reshape(5, 2).is_err());
    }

    #[test]
    fn stationary_repeats_round_zero() {
        let ds = small_dataset();
        let st = ds.make_stationary();
        for i in 0..ds.learners() {
            for r in 0..ds.rounds() {
                for t in 0..ds.tau() {
                    let (f0, l0) = ds.datum(i, 0, t);
                    let (fr, lr) = st.datum(i, r, t);
                    assert_eq!(f0, fr);
                    assert_eq!(l0, lr);
                }
            }
        }
    }

    #[test]
    fn csv_roundtrip_preserves_dataset() {
        let path = std::env::temp_dir().join(format!("oflsim-data-{}.csv", std::process::id()));
        let ds = small_dataset();
        ds.export_csv(&path).unwrap();
        let got = StreamDataset::import_csv(&path).unwrap();
        assert_eq!(got.features, ds.features);
        assert_eq!(got.labels, ds.labels);
        assert_eq!(
            (got.learners, got.rounds, got.tau, got.dim),
            (ds.learners, ds.rounds, ds.tau, ds.dim)
        );
        std::fs::remove_file(&path).ok();
    }

    proptest! {
        #[test]
        fn clipped_gradient_never_exceeds_bound(
            xs in proptest::collection::vec(-50.0f64..50.0, 3),
            fs in proptest::collection::vec(-50.0f64..50.0, 3),
            label in prop_oneof![Just(-1.0), Just(1.0)],
            bound in 0.01f64..5.0,
        ) {
            let x = Array1::from_vec(xs);
            let a = Array1::from_vec(fs);
            let g = logistic_gradient_clipped(x.view(), a.view(), label, bound);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= bound * (1.0 + 1e-12));
        }
    }
}
