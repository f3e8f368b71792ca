//! Prefix-sum workload matrix and its factorizations `A = BC`.
//!
//! The released model sequence of the correlated-noise algorithm is, in
//! stacked form, `x = x0 - eta_tilde * B (C G + xi)`, so the workload here is
//! always the R x R lower-triangular all-ones matrix whose rows are prefix
//! sums. A factorization exposes the two quantities that matter downstream:
//! `gamma` (the largest column norm of `C`, which scales the calibrated noise
//! variance) and `||B||_F^2` (which scales the noise seen by the iterates).
//!
//! The default factorization takes `M`, the unique lower-triangular square
//! root of `A` with positive diagonal, and rescales the pair so that
//! `gamma(C) = 1`. `M` is Toeplitz with band coefficients
//! `c_0 = 1, c_k = c_{k-1} (2k-1) / (2k)`, i.e. the series of
//! `(1 - z)^{-1/2}`. An optional projected-gradient refinement lowers
//! `||B||_F^2` further and never does worse than its starting point.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};

/// Relative Frobenius tolerance for `||A - BC||_F / ||A||_F`.
pub const RECONSTRUCTION_RTOL: f64 = 1e-8;
/// Absolute tolerance on `|gamma(C) - 1|` for normalized factorizations.
pub const GAMMA_ATOL: f64 = 1e-6;
/// Relative tolerance when recomputing stored scalars from the matrices.
pub const RECOMPUTE_RTOL: f64 = 1e-12;
/// Entrywise tolerance for the square-root identity `M * M = A`.
pub const SQRT_IDENTITY_ATOL: f64 = 1e-10;

pub const DEFAULT_OPTIMIZE_MAX_ITERS: usize = 200;
pub const DEFAULT_OPTIMIZE_TOL: f64 = 1e-9;

/// The R x R lower-triangular all-ones prefix-sum workload.
#[derive(Debug, Clone)]
pub struct WorkloadMatrix {
    dim: usize,
    entries: Array2<f64>,
}

impl WorkloadMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Builds the prefix-sum workload: 1s on and below the diagonal.
pub fn build_prefix_workload(rounds: usize) -> Result<WorkloadMatrix> {
    if rounds == 0 {
        return Err(Error::InvalidDimension(
            "workload dimension must be at least 1".into(),
        ));
    }
    let mut entries = Array2::<f64>::zeros((rounds, rounds));
    for i in 0..rounds {
        for j in 0..=i {
            entries[[i, j]] = 1.0;
        }
    }
    Ok(WorkloadMatrix {
        dim: rounds,
        entries,
    })
}

/// Which trivial factorization to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrivialKind {
    /// `B = A`, `C = I`: independent noise added after the cumulative sum.
    CIdentity,
    /// `B = sqrt(R) I`, `C = A / sqrt(R)`: noise on raw gradients, rescaled
    /// so `gamma(C) = 1` (the first column of `A` has norm `sqrt(R)`).
    BIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorizationMethod {
    TrivialIdentityC,
    TrivialIdentityB,
    SqrtNormalized,
    Optimized,
}

impl FactorizationMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            FactorizationMethod::TrivialIdentityC => "trivial_identity_c",
            FactorizationMethod::TrivialIdentityB => "trivial_identity_b",
            FactorizationMethod::SqrtNormalized => "sqrt_normalized",
            FactorizationMethod::Optimized => "optimized",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trivial_identity_c" | "c_identity" => Ok(FactorizationMethod::TrivialIdentityC),
            "trivial_identity_b" | "b_identity" => Ok(FactorizationMethod::TrivialIdentityB),
            "sqrt_normalized" | "sqrt" => Ok(FactorizationMethod::SqrtNormalized),
            "optimized" => Ok(FactorizationMethod::Optimized),
            other => Err(Error::InvalidParameter(format!(
                "unknown factorization method `{other}`"
            ))),
        }
    }

    /// Methods whose contract includes `gamma(C) = 1` up to [`GAMMA_ATOL`].
    pub fn is_normalized(&self) -> bool {
        matches!(
            self,
            FactorizationMethod::SqrtNormalized | FactorizationMethod::Optimized
        )
    }
}

impl fmt::Display for FactorizationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A factorization `A = BC` together with the scalars consumed downstream.
///
/// Row `r` of `b_matrix` is the combination row `b^{r}` for round `r` in
/// 1-based round numbering; the convention `b^0 = 0` is handled by consumers.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub b_matrix: Array2<f64>,
    pub c_matrix: Array2<f64>,
    /// Largest column norm of `c_matrix` (first index wins ties).
    pub gamma: f64,
    /// Squared Frobenius norm of `b_matrix`.
    pub frob_sq_b: f64,
    pub method: FactorizationMethod,
    /// False only when the optimizer hit its iteration cap before its
    /// stopping tolerance; the matrices are still the best iterate found.
    pub converged: bool,
}

impl Factorization {
    fn from_parts(
        b_matrix: Array2<f64>,
        c_matrix: Array2<f64>,
        method: FactorizationMethod,
        converged: bool,
    ) -> Self {
        let gamma = max_column_norm(&c_matrix);
        let frob_sq_b = frobenius_sq(&b_matrix);
        Factorization {
            b_matrix,
            c_matrix,
            gamma,
            frob_sq_b,
            method,
            converged,
        }
    }

    pub fn dim(&self) -> usize {
        self.b_matrix.nrows()
    }

    /// Row `b^r` for 1-based round numbering; `r = 0` is the zero row.
    pub fn b_row(&self, r: usize) -> Array1<f64> {
        if r == 0 {
            Array1::zeros(self.dim())
        } else {
            self.b_matrix.row(r - 1).to_owned()
        }
    }

    /// Checks the type invariants against a workload: reconstruction,
    /// gamma recomputation, normalization for normalized methods, and the
    /// stored Frobenius norm.
    pub fn validate_against(&self, workload: &WorkloadMatrix) -> Result<()> {
        let rel = reconstruction_error(workload, &self.b_matrix, &self.c_matrix);
        if rel > RECONSTRUCTION_RTOL {
            return Err(Error::invariant(
                "factorization.reconstruction",
                format!(
                    "||A - BC||_F / ||A||_F = {rel:.3e} exceeds {RECONSTRUCTION_RTOL:.1e} \
                     (method {})",
                    self.method
                ),
            ));
        }
        let gamma = max_column_norm(&self.c_matrix);
        if (gamma - self.gamma).abs() > RECOMPUTE_RTOL * gamma.max(1.0) {
            return Err(Error::invariant(
                "factorization.gamma_recompute",
                format!("stored gamma {} vs recomputed {}", self.gamma, gamma),
            ));
        }
        if self.method.is_normalized() && (gamma - 1.0).abs() > GAMMA_ATOL {
            return Err(Error::invariant(
                "factorization.gamma_normalized",
                format!("gamma = {gamma} is not 1 within {GAMMA_ATOL:.1e}"),
            ));
        }
        let frob = frobenius_sq(&self.b_matrix);
        if (frob - self.frob_sq_b).abs() > RECOMPUTE_RTOL * frob.max(1.0) {
            return Err(Error::invariant(
                "factorization.frob_recompute",
                format!("stored ||B||_F^2 {} vs recomputed {}", self.frob_sq_b, frob),
            ));
        }
        Ok(())
    }
}

/// `||A - BC||_F / ||A||_F`.
pub fn reconstruction_error(
    workload: &WorkloadMatrix,
    b_matrix: &Array2<f64>,
    c_matrix: &Array2<f64>,
) -> f64 {
    let product = b_matrix.dot(c_matrix);
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, a) in product.iter().zip(workload.entries().iter()) {
        num += (p - a) * (p - a);
        den += a * a;
    }
    (num / den).sqrt()
}

pub fn max_column_norm(m: &Array2<f64>) -> f64 {
    let mut best = 0.0_f64;
    for col in m.columns() {
        let norm_sq: f64 = col.iter().map(|v| v * v).sum();
        // First index wins ties; only the value is consumed downstream.
        if norm_sq > best {
            best = norm_sq;
        }
    }
    best.sqrt()
}

pub fn frobenius_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Baseline factorizations used as comparison yardsticks.
pub fn factorize_trivial(workload: &WorkloadMatrix, which: TrivialKind) -> Factorization {
    let r = workload.dim();
    match which {
        TrivialKind::CIdentity => {
            let b = workload.entries().clone();
            let c = Array2::eye(r);
            Factorization::from_parts(b, c, FactorizationMethod::TrivialIdentityC, true)
        }
        TrivialKind::BIdentity => {
            let scale = (r as f64).sqrt();
            let b = Array2::eye(r) * scale;
            let c = workload.entries() / scale;
            Factorization::from_parts(b, c, FactorizationMethod::TrivialIdentityB, true)
        }
    }
}

/// Band coefficients of the lower-triangular Toeplitz square root of the
/// prefix-sum workload: the series of `(1 - z)^{-1/2}`.
pub fn sqrt_band_coefficients(rounds: usize) -> Vec<f64> {
    let mut coeffs = Vec::with_capacity(rounds);
    let mut c = 1.0_f64;
    coeffs.push(c);
    for k in 1..rounds {
        c *= (2 * k - 1) as f64 / (2 * k) as f64;
        coeffs.push(c);
    }
    coeffs
}

/// The lower-triangular Toeplitz matrix with the given band coefficients.
fn lower_toeplitz(coeffs: &[f64]) -> Array2<f64> {
    let r = coeffs.len();
    let mut m = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        for j in 0..=i {
            m[[i, j]] = coeffs[i - j];
        }
    }
    m
}

/// The unique lower-triangular square root of the workload with positive
/// diagonal, so `M * M = A`.
pub fn workload_sqrt(workload: &WorkloadMatrix) -> Array2<f64> {
    lower_toeplitz(&sqrt_band_coefficients(workload.dim()))
}

/// Square-root factorization normalized to `gamma(C) = 1`:
/// `C = M / gamma0`, `B = gamma0 * M` with `gamma0 = max_col_norm(M)`.
pub fn factorize_sqrt_normalized(workload: &WorkloadMatrix) -> Factorization {
    let m = workload_sqrt(workload);
    let gamma0 = max_column_norm(&m);
    let c = &m / gamma0;
    let b = &m * gamma0;
    Factorization::from_parts(b, c, FactorizationMethod::SqrtNormalized, true)
}

/// `X = Y * C^{-1}` for lower-triangular `C`, solved row by row.
fn right_div_lower(y: &Array2<f64>, c: &Array2<f64>) -> Result<Array2<f64>> {
    let r = c.nrows();
    let mut x = Array2::<f64>::zeros(y.raw_dim());
    for (yrow, mut xrow) in y.rows().into_iter().zip(x.rows_mut()) {
        for j in (0..r).rev() {
            let mut acc = yrow[j];
            for k in (j + 1)..r {
                acc -= xrow[k] * c[[k, j]];
            }
            let pivot = c[[j, j]];
            if pivot.abs() < 1e-300 {
                return Err(Error::InvalidParameter(
                    "triangular solve hit a zero pivot".into(),
                ));
            }
            xrow[j] = acc / pivot;
        }
    }
    Ok(x)
}

/// `X = Y * C^{-T}` for lower-triangular `C`, solved row by row.
fn right_div_lower_transpose(y: &Array2<f64>, c: &Array2<f64>) -> Result<Array2<f64>> {
    let r = c.nrows();
    let mut x = Array2::<f64>::zeros(y.raw_dim());
    for (yrow, mut xrow) in y.rows().into_iter().zip(x.rows_mut()) {
        for j in 0..r {
            let mut acc = yrow[j];
            for k in 0..j {
                acc -= xrow[k] * c[[j, k]];
            }
            let pivot = c[[j, j]];
            if pivot.abs() < 1e-300 {
                return Err(Error::InvalidParameter(
                    "triangular solve hit a zero pivot".into(),
                ));
            }
            xrow[j] = acc / pivot;
        }
    }
    Ok(x)
}

/// Projects onto the feasible set: lower-triangular with column norms <= 1.
fn project_feasible(c: &mut Array2<f64>) {
    let r = c.nrows();
    for i in 0..r {
        for j in (i + 1)..r {
            c[[i, j]] = 0.0;
        }
    }
    for j in 0..r {
        let norm: f64 = c.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            for i in 0..r {
                c[[i, j]] /= norm;
            }
        }
    }
}

fn objective(workload: &WorkloadMatrix, c: &Array2<f64>) -> Option<(f64, Array2<f64>)> {
    match right_div_lower(workload.entries(), c) {
        Ok(b) => Some((frobenius_sq(&b), b)),
        Err(_) => None,
    }
}

/// Projected gradient descent on `||A C^{-1}||_F^2` over lower-triangular `C`
/// with column norms capped at 1, started from the square-root factorization.
///
/// The returned pair is re-normalized so `gamma(C) = 1`; its `||B||_F^2` is
/// never worse than the starting point plus `tol`. Hitting `max_iters` before
/// the stopping tolerance flags `converged = false` rather than erroring.
pub fn factorize_optimized(
    workload: &WorkloadMatrix,
    max_iters: usize,
    tol: f64,
) -> Result<Factorization> {
    if tol <= 0.0 {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    if max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be positive".into()));
    }

    let start = factorize_sqrt_normalized(workload);
    let mut c = start.c_matrix.clone();
    let (mut f_cur, mut b_cur) = objective(workload, &c).expect("square-root factor is invertible");

    let mut step = 1.0 / (workload.dim() as f64);
    let mut converged = false;

    // Only strict decreases are accepted, so the current iterate is always
    // the best one seen and the final objective cannot exceed the start.
    for _ in 0..max_iters {
        // grad of ||A C^{-1}||_F^2 wrt C is -2 B^T B C^{-T}, restricted to the
        // lower-triangular subspace by the projection below.
        let bt_b = b_cur.t().dot(&b_cur);
        let grad = right_div_lower_transpose(&bt_b, &c)? * -2.0;

        let f_prev = f_cur;
        let mut advanced = false;
        for _ in 0..40 {
            let mut cand = &c - &(&grad * step);
            project_feasible(&mut cand);
            if let Some((f_new, b_new)) = objective(workload, &cand) {
                if f_new < f_cur {
                    c = cand;
                    f_cur = f_new;
                    b_cur = b_new;
                    advanced = true;
                    break;
                }
            }
            step *= 0.5;
        }

        if !advanced || f_prev - f_cur < tol {
            converged = true;
            break;
        }
        step *= 2.0;
    }

    // Re-normalize so gamma(C) = 1 exactly; scaling C up by 1/gamma0
    // (gamma0 <= 1 after projection) scales B down by gamma0.
    let gamma0 = max_column_norm(&c);
    let c_final = &c / gamma0;
    let b_final = right_div_lower(workload.entries(), &c_final)?;
    let fact =
        Factorization::from_parts(b_final, c_final, FactorizationMethod::Optimized, converged);

    debug_assert!(
        fact.frob_sq_b <= start.frob_sq_b + tol,
        "optimizer regressed past its starting point"
    );
    Ok(fact)
}

/// Dispatches on method; `max_iters`/`tol` apply to the optimized method only.
pub fn factorize(
    workload: &WorkloadMatrix,
    method: FactorizationMethod,
    max_iters: usize,
    tol: f64,
) -> Result<Factorization> {
    Ok(match method {
        FactorizationMethod::TrivialIdentityC => {
            factorize_trivial(workload, TrivialKind::CIdentity)
        }
        FactorizationMethod::TrivialIdentityB => {
            factorize_trivial(workload, TrivialKind::BIdentity)
        }
        FactorizationMethod::SqrtNormalized => factorize_sqrt_normalized(workload),
        FactorizationMethod::Optimized => factorize_optimized(workload, max_iters, tol)?,
    })
}

/// One row of the `||B||_F^2` study.
#[derive(Debug, Clone, PartialEq)]
pub struct BnormRow {
    pub rounds: usize,
    pub frob_sq_b: f64,
    pub ratio_to_r_sq: f64,
}

/// For each R, builds the workload, factorizes, and reports `||B||_F^2` and
/// its ratio to `R^2`.
pub fn bnorm_study(r_list: &[usize], method: FactorizationMethod) -> Result<Vec<BnormRow>> {
    let mut rows = Vec::with_capacity(r_list.len());
    for &r in r_list {
        let workload = build_prefix_workload(r)?;
        let fact = factorize(
            &workload,
            method,
            DEFAULT_OPTIMIZE_MAX_ITERS,
            DEFAULT_OPTIMIZE_TOL,
        )?;
        rows.push(BnormRow {
            rounds: r,
            frob_sq_b: fact.frob_sq_b,
            ratio_to_r_sq: fact.frob_sq_b / (r as f64 * r as f64),
        });
    }
    Ok(rows)
}

/// Writes the factorization as a CSV bundle: `b_matrix.csv`, `c_matrix.csv`,
/// and `factorization_meta.csv` carrying (R, gamma, frob_sq_b, method_tag).
pub fn write_bundle(fact: &Factorization, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    csvio::write_matrix(&dir.join("b_matrix.csv"), &fact.b_matrix)?;
    csvio::write_matrix(&dir.join("c_matrix.csv"), &fact.c_matrix)?;
    let rows = vec![vec![
        fact.dim().to_string(),
        csvio::fmt_f64(fact.gamma),
        csvio::fmt_f64(fact.frob_sq_b),
        fact.method.tag().to_string(),
        fact.converged.to_string(),
    ]];
    csvio::write_csv(
        &dir.join("factorization_meta.csv"),
        &["rounds", "gamma", "frob_sq_b", "method_tag", "converged"],
        &rows,
    )?;
    Ok(())
}

/// Reads a bundle written by [`write_bundle`] and re-validates it against a
/// freshly built workload of the recorded dimension.
pub fn read_bundle(dir: &Path) -> Result<Factorization> {
    let b_matrix = csvio::read_matrix(&dir.join("b_matrix.csv"))?;
    let c_matrix = csvio::read_matrix(&dir.join("c_matrix.csv"))?;
    let (_, rows) = csvio::read_csv(&dir.join("factorization_meta.csv"))?;
    let row = rows
        .first()
        .ok_or_else(|| Error::Parse("empty factorization_meta.csv".into()))?;
    if row.len() != 5 {
        return Err(Error::Parse("malformed factorization_meta.csv".into()));
    }
    let rounds: usize = row[0]
        .parse()
        .map_err(|_| Error::Parse("bad rounds in meta".into()))?;
    let method = FactorizationMethod::parse(&row[3])?;
    let converged: bool = row[4]
        .parse()
        .map_err(|_| Error::Parse("bad converged flag in meta".into()))?;
    if b_matrix.nrows() != rounds
        || b_matrix.ncols() != rounds
        || c_matrix.raw_dim() != b_matrix.raw_dim()
    {
        return Err(Error::ShapeMismatch(format!(
            "bundle matrices do not match recorded dimension {rounds}"
        )));
    }
    let fact = Factorization::from_parts(b_matrix, c_matrix, method, converged);
    let workload = build_prefix_workload(rounds)?;
    fact.validate_against(&workload)?;
    Ok(fact)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob_of_workload(r: usize) -> f64 {
        (r * (r + 1)) as f64 / 2.0
    }

    #[test]
    fn prefix_workload_rejects_zero() {
        assert!(build_prefix_workload(0).is_err());
    }

    #[test]
    fn prefix_workload_smallest_case() {
        let w = build_prefix_workload(1).unwrap();
        assert_eq!(w.entries()[[0, 0]], 1.0);
    }

    #[test]
    fn prefix_workload_r3() {
        let w = build_prefix_workload(3).unwrap();
        let expected = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w.entries()[[i, j]], expected[i][j]);
            }
        }
    }

    #[test]
    fn prefix_workload_r4_row_sums_and_frobenius() {
        let w = build_prefix_workload(4).unwrap();
        for (i, row) in w.entries().rows().into_iter().enumerate() {
            assert_eq!(row.sum(), (i + 1) as f64);
        }
        assert_eq!(frobenius_sq(w.entries()), 10.0);
        assert_eq!(frobenius_sq(w.entries()), frob_of_workload(4));
    }

    #[test]
    fn trivial_c_identity_r3() {
        let w = build_prefix_workload(3).unwrap();
        let f = factorize_trivial(&w, TrivialKind::CIdentity);
        assert_eq!(f.gamma, 1.0);
        assert_eq!(f.frob_sq_b, 6.0);
        f.validate_against(&w).unwrap();
    }

    #[test]
    fn trivial_b_identity_r3() {
        let w = build_prefix_workload(3).unwrap();
        let f = factorize_trivial(&w, TrivialKind::BIdentity);
        assert!((f.gamma - 1.0).abs() <= GAMMA_ATOL);
        assert!((f.frob_sq_b - 9.0).abs() <= 1e-12);
        f.validate_against(&w).unwrap();
    }

    #[test]
    fn trivial_r1_both_kinds() {
        let w = build_prefix_workload(1).unwrap();
        for kind in [TrivialKind::CIdentity, TrivialKind::BIdentity] {
            let f = factorize_trivial(&w, kind);
            assert!((f.b_matrix[[0, 0]] - 1.0).abs() <= 1e-15);
            assert!((f.c_matrix[[0, 0]] - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn sqrt_factor_r2_hand_values() {
        let w = build_prefix_workload(2).unwrap();
        let m = workload_sqrt(&w);
        assert_eq!(m[[0, 0]], 1.0);
        assert_eq!(m[[1, 0]], 0.5);
        assert_eq!(m[[1, 1]], 1.0);
        let mm = m.dot(&m);
        for i in 0..2 {
            for j in 0..2 {
                assert!((mm[[i, j]] - w.entries()[[i, j]]).abs() <= 1e-15);
            }
        }
        let gamma0 = max_column_norm(&m);
        assert!((gamma0 - 5.0_f64.sqrt() / 2.0).abs() <= 1e-15);
        assert!((gamma0 - 1.118034).abs() <= 1e-6);
    }

    #[test]
    fn sqrt_factor_r3_hand_values() {
        let w = build_prefix_workload(3).unwrap();
        let m = workload_sqrt(&w);
        assert_eq!(m[[2, 0]], 0.375); // 3/8
        assert_eq!(m[[2, 1]], 0.5);
        // (M*M)[3,1] = 3/8 + 1/4 + 3/8 = 1, checked by hand.
        let mm = m.dot(&m);
        assert!((mm[[2, 0]] - 1.0).abs() <= 1e-15);
        let gamma0 = max_column_norm(&m);
        assert!((gamma0 - (89.0_f64).sqrt() / 8.0).abs() <= 1e-15);
        assert!((gamma0 - 1.179248).abs() <= 1e-6);
    }

    #[test]
    fn sqrt_factor_r1_is_identity() {
        let w = build_prefix_workload(1).unwrap();
        let f = factorize_sqrt_normalized(&w);
        assert!((f.b_matrix[[0, 0]] - 1.0).abs() <= 1e-15);
        assert!((f.c_matrix[[0, 0]] - 1.0).abs() <= 1e-15);
        assert!((f.gamma - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn sqrt_identity_entrywise_up_to_256() {
        for r in (1..=64).chain([128, 256]) {
            let w = build_prefix_workload(r).unwrap();
            let m = workload_sqrt(&w);
            let mm = m.dot(&m);
            for i in 0..r {
                for j in 0..r {
                    assert!(
                        (mm[[i, j]] - w.entries()[[i, j]]).abs() <= SQRT_IDENTITY_ATOL,
                        "M*M deviates from A at ({i},{j}) for R={r}"
                    );
                }
            }
        }
    }

    #[test]
    fn normalized_methods_have_unit_gamma() {
        for r in [1, 2, 3, 16, 64] {
            let w = build_prefix_workload(r).unwrap();
            let fs = factorize_sqrt_normalized(&w);
            assert!((fs.gamma - 1.0).abs() <= GAMMA_ATOL, "sqrt gamma at R={r}");
            fs.validate_against(&w).unwrap();
            let fo = factorize_optimized(&w, 50, 1e-9).unwrap();
            assert!(
                (fo.gamma - 1.0).abs() <= GAMMA_ATOL,
                "optimized gamma at R={r}"
            );
            fo.validate_against(&w).unwrap();
        }
    }

    #[test]
    fn optimized_r1_objective_is_one() {
        let w = build_prefix_workload(1).unwrap();
        let f = factorize_optimized(&w, 50, 1e-9).unwrap();
        assert!((f.frob_sq_b - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn optimized_never_worse_than_sqrt_start_r3() {
        let w = build_prefix_workload(3).unwrap();
        // Starting objective evaluated by hand:
        // gamma0^2 * ||M||_F^2 = (89/64) * (1 + (1 + 1/4) + (1 + 1/4 + 9/64)).
        let start = (89.0 / 64.0) * (1.0 + 1.25 + 1.390625);
        let fs = factorize_sqrt_normalized(&w);
        assert!((fs.frob_sq_b - start).abs() <= 1e-12);
        let fo = factorize_optimized(&w, 200, 1e-9).unwrap();
        assert!(fo.frob_sq_b <= start + 1e-9);
    }

    #[test]
    fn optimized_beats_trivial_at_r16() {
        let w = build_prefix_workload(16).unwrap();
        let fo = factorize_optimized(&w, 200, 1e-9).unwrap();
        assert!(fo.frob_sq_b < frob_of_workload(16)); // 136
    }

    #[test]
    fn dominance_and_growth() {
        for r in [16usize, 32, 64, 128, 256] {
            let w = build_prefix_workload(r).unwrap();
            let fs = factorize_sqrt_normalized(&w);
            assert!(
                fs.frob_sq_b < frob_of_workload(r),
                "sqrt vs c_identity at R={r}"
            );
            assert!(fs.frob_sq_b <= (r * r) as f64, "growth bound at R={r}");
            let fo = factorize_optimized(&w, 30, 1e-9).unwrap();
            assert!(
                fo.frob_sq_b <= fs.frob_sq_b + 1e-9,
                "optimized vs sqrt at R={r}"
            );
        }
    }

    #[test]
    fn scale_invariance_of_product() {
        let w = build_prefix_workload(8).unwrap();
        let f = factorize_sqrt_normalized(&w);
        let alpha = 3.7;
        let b = &f.b_matrix * alpha;
        let c = &f.c_matrix / alpha;
        let mut num = 0.0;
        for (p, a) in b.dot(&c).iter().zip(w.entries().iter()) {
            num += (p - a) * (p - a);
        }
        assert!((num / frob_of_workload(8)).sqrt() <= RECONSTRUCTION_RTOL);
    }

    #[test]
    fn bnorm_study_trivial_cases() {
        let rows = bnorm_study(&[1], FactorizationMethod::TrivialIdentityC).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].frob_sq_b, 1.0);
        assert_eq!(rows[0].ratio_to_r_sq, 1.0);

        let rows = bnorm_study(&[3], FactorizationMethod::TrivialIdentityC).unwrap();
        assert_eq!(rows[0].frob_sq_b, 6.0);
        assert!((rows[0].ratio_to_r_sq - 2.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn bnorm_study_sqrt_ratio_decreases() {
        let rows = bnorm_study(&[16, 32, 64], FactorizationMethod::SqrtNormalized).unwrap();
        assert!(rows[0].ratio_to_r_sq > rows[1].ratio_to_r_sq);
        assert!(rows[1].ratio_to_r_sq > rows[2].ratio_to_r_sq);
    }

    #[test]
    fn bundle_roundtrip() {
        let dir = std::env::temp_dir().join(format!("oflsim-bundle-{}", std::process::id()));
        let w = build_prefix_workload(12).unwrap();
        let f = factorize_sqrt_normalized(&w);
        write_bundle(&f, &dir).unwrap();
        let g = read_bundle(&dir).unwrap();
        assert_eq!(g.method, f.method);
        assert_eq!(g.b_matrix, f.b_matrix);
        assert_eq!(g.c_matrix, f.c_matrix);
        assert!((g.gamma - f.gamma).abs() <= 1e-15);
        std::fs::remove_dir_all(&dir).ok();
    }
}
