//! Exact dynamic mode decomposition of per-beam intensity matrices.
//!
//! Each beam's intensity history is treated as snapshots of a linear system
//! `i_{t+1} = A i_t`. The best-fit operator is projected onto the leading left
//! singular vectors of the snapshot matrix, its eigenpairs give the DMD modes,
//! and the modes whose eigenvalue sits at 1 (neither growing, decaying nor
//! rotating) reconstruct the static background of the beam.

use nalgebra::{Complex, DMatrix, DVector, Schur, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{build_st_matrix, Channel, PolarFrame};

pub type C64 = Complex<f64>;

/// Singular values below this fraction of the largest one are always dropped.
const SINGULAR_FLOOR: f64 = 1e-12;

fn default_svd_energy() -> f64 {
    0.9999
}
fn default_eigen_tol() -> f64 {
    0.01
}
fn default_intensity_threshold() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdConfig {
    /// Cumulative squared singular value energy kept by the rank truncation.
    #[serde(default = "default_svd_energy")]
    pub svd_energy: f64,
    /// Modes with `|lambda - 1| <= eigen_tol` are background.
    #[serde(default = "default_eigen_tol")]
    pub eigen_tol: f64,
    /// Intensity deviation from the background above which a return is foreground.
    #[serde(default = "default_intensity_threshold")]
    pub intensity_threshold: f64,
}

impl Default for DmdConfig {
    fn default() -> Self {
        DmdConfig {
            svd_energy: default_svd_energy(),
            eigen_tol: default_eigen_tol(),
            intensity_threshold: default_intensity_threshold(),
        }
    }
}

impl DmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.svd_energy > 0.0 && self.svd_energy <= 1.0) {
            return Err(Error::InvalidConfig("svd_energy must be in (0, 1]".into()));
        }
        if !(self.eigen_tol > 0.0) {
            return Err(Error::InvalidConfig("eigen_tol must be positive".into()));
        }
        if !(self.intensity_threshold >= 0.0) {
            return Err(Error::InvalidConfig("intensity_threshold must be >= 0".into()));
        }
        Ok(())
    }
}

/// Split snapshots into the "current" and "next" matrices: columns `0..m-1` and `1..m`.
pub fn shift_split(data: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = data.ncols();
    if m < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: m });
    }
    Ok((data.columns(0, m - 1).into_owned(), data.columns(1, m - 1).into_owned()))
}

/// Truncated SVD of the current snapshots and the operator projected onto its
/// left singular subspace.
#[derive(Debug, Clone)]
pub struct ReducedOperator {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
    pub atilde: DMatrix<f64>,
}

impl ReducedOperator {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

/// Smallest rank whose cumulative squared singular value share reaches `energy`,
/// never counting values below the relative floor. `sigma` is sorted descending.
pub fn select_rank(sigma: &[f64], energy: f64) -> usize {
    let Some(&top) = sigma.first() else {
        return 0;
    };
    let usable = sigma.iter().take_while(|&&s| s > SINGULAR_FLOOR * top).count();
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    for (k, s) in sigma[..usable].iter().enumerate() {
        acc += s * s;
        if acc / total >= energy {
            return k + 1;
        }
    }
    usable
}

/// Thin SVD; tall inputs are reduced by QR first so the iteration runs on a square factor.
fn thin_svd(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let fail = || Error::NumericalFailure("SVD did not converge".into());
    if x.nrows() > 2 * x.ncols() {
        let qr = x.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let svd = SVD::try_new(r, true, true, f64::EPSILON, 0).ok_or_else(fail)?;
        let u = q * svd.u.expect("u requested");
        return Ok((u, svd.singular_values, svd.v_t.expect("v_t requested")));
    }
    let svd = SVD::try_new(x.clone(), true, true, f64::EPSILON, 0).ok_or_else(fail)?;
    Ok((svd.u.expect("u requested"), svd.singular_values, svd.v_t.expect("v_t requested")))
}

pub fn fit_reduced_operator(
    current: &DMatrix<f64>,
    next: &DMatrix<f64>,
    svd_energy: f64,
) -> Result<ReducedOperator> {
    if current.shape() != next.shape() {
        return Err(Error::ShapeMismatch(format!(
            "snapshot matrices {:?} and {:?}",
            current.shape(),
            next.shape()
        )));
    }
    if current.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateMatrix("snapshot matrix is all zero".into()));
    }
    if current.iter().any(|v| !v.is_finite()) || next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite snapshot values".into()));
    }
    let (u_all, singular_values, vt_all) = thin_svd(current)?;
    let mut order: Vec<usize> = (0..singular_values.len()).collect();
    order.sort_by(|&a, &b| singular_values[b].total_cmp(&singular_values[a]));
    let sorted: Vec<f64> = order.iter().map(|&k| singular_values[k]).collect();
    let r = select_rank(&sorted, svd_energy);
    if r == 0 {
        return Err(Error::DegenerateMatrix("no usable singular values".into()));
    }

    let n = current.nrows();
    let cols = current.ncols();
    let mut u = DMatrix::zeros(n, r);
    let mut v = DMatrix::zeros(cols, r);
    for (j, &k) in order[..r].iter().enumerate() {
        u.set_column(j, &u_all.column(k));
        v.set_column(j, &vt_all.row(k).transpose());
    }
    let sigma = DVector::from_column_slice(&sorted[..r]);
    // U^T X' V Sigma^-1
    let mut projected = u.transpose() * next * &v;
    for (j, s) in sigma.iter().enumerate() {
        projected.column_mut(j).unscale_mut(*s);
    }
    Ok(ReducedOperator { u, sigma, v, atilde: projected })
}

/// Eigen-decomposition of a small square matrix via complex Schur form and
/// back substitution on the triangular factor. Eigenvectors have unit norm.
pub fn eigen_decompose(a: &DMatrix<f64>) -> Result<(DVector<C64>, DMatrix<C64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::ShapeMismatch("eigen decomposition needs a square matrix".into()));
    }
    let ac: DMatrix<C64> = a.map(|x| C64::new(x, 0.0));
    let schur = Schur::try_new(ac, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let small = scale * f64::EPSILON;

    let values = DVector::from_fn(n, |k, _| t[(k, k)]);
    let mut y = DMatrix::<C64>::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        y[(k, k)] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for j in i + 1..=k {
                acc += t[(i, j)] * y[(j, k)];
            }
            let mut denom = t[(i, i)] - lambda;
            if denom.norm() < small {
                denom = C64::new(small, 0.0);
            }
            y[(i, k)] = -acc / denom;
        }
    }
    let mut vectors = q * y;
    for mut col in vectors.column_iter_mut() {
        let norm = col.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NumericalFailure("eigenvector is not finite".into()));
        }
        col.unscale_mut(norm);
    }
    Ok((values, vectors))
}

/// Modes written as `basis * coeffs`, with a real basis, so least squares can
/// run in the small coefficient space.
struct FactoredModes {
    basis: DMatrix<f64>,
    coeffs: DMatrix<C64>,
}

impl FactoredModes {
    fn expand(&self) -> DMatrix<C64> {
        let re = &self.basis * self.coeffs.map(|z| z.re);
        let im = &self.basis * self.coeffs.map(|z| z.im);
        DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| C64::new(re[(i, j)], im[(i, j)]))
    }
}

fn factored_modes(op: &ReducedOperator, next: &DMatrix<f64>) -> Result<(FactoredModes, DVector<C64>)> {
    let (lambda, w) = eigen_decompose(&op.atilde)?;
    let mut lifted = next * &op.v;
    for (j, s) in op.sigma.iter().enumerate() {
        lifted.column_mut(j).unscale_mut(*s);
    }
    let r = w.ncols();
    let lifted_w = FactoredModes { basis: lifted.clone(), coeffs: w.clone() }.expand();
    let reference = lifted.norm().max(f64::MIN_POSITIVE);
    let norms: Vec<f64> = lifted_w.column_iter().map(|c| c.norm()).collect();
    let degenerate: Vec<bool> = norms.iter().map(|&n| n <= 1e-12 * reference).collect();
    let any_degenerate = degenerate.iter().any(|&d| d);
    let basis = if any_degenerate {
        let mut b = DMatrix::zeros(lifted.nrows(), 2 * r);
        b.columns_mut(0, r).copy_from(&lifted);
        b.columns_mut(r, r).copy_from(&op.u);
        b
    } else {
        lifted
    };
    let mut coeffs = DMatrix::<C64>::zeros(basis.ncols(), r);
    for j in 0..r {
        // a zero eigenvalue annihilates the exact mode; use the projected one
        let (offset, norm) = if degenerate[j] { (r, w.column(j).norm()) } else { (0, norms[j]) };
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NumericalFailure(format!("mode {j} has zero norm")));
        }
        for i in 0..r {
            coeffs[(offset + i, j)] = w[(i, j)].unscale(norm);
        }
    }
    Ok((FactoredModes { basis, coeffs }, lambda))
}

/// Exact DMD modes `X' V Sigma^-1 W` (unit columns) and their eigenvalues.
pub fn eig_modes(op: &ReducedOperator, next: &DMatrix<f64>) -> Result<(DMatrix<C64>, DVector<C64>)> {
    let (f, lambda) = factored_modes(op, next)?;
    Ok((f.expand(), lambda))
}

fn solve_least_squares(a: DMatrix<C64>, target: &DVector<C64>) -> Result<DVector<C64>> {
    let svd = SVD::try_new(a, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("mode SVD did not converge".into()))?;
    let top = svd.singular_values.max();
    svd.solve(target, top * 1e-12)
        .map_err(|e| Error::NumericalFailure(e.to_string()))
}

/// [`amplitudes`] for factored modes: with `basis = Q R`, minimizing
/// `|Q R C b - x|` is the same as minimizing `|R C b - Q^T x|`.
fn factored_amplitudes(modes: &FactoredModes, first: &[f64]) -> Result<DVector<C64>> {
    let qr = modes.basis.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let projected = q.transpose() * DVector::from_column_slice(first);
    let target = projected.map(|x| C64::new(x, 0.0));
    let reduced = r.map(|x| C64::new(x, 0.0)) * &modes.coeffs;
    solve_least_squares(reduced, &target)
}

/// Least-squares amplitudes fitting the modes to the first snapshot.
pub fn amplitudes(phi: &DMatrix<C64>, first: &[f64]) -> Result<DVector<C64>> {
    let target = DVector::from_iterator(first.len(), first.iter().map(|&x| C64::new(x, 0.0)));
    solve_least_squares(phi.clone(), &target)
}

/// Indices of modes with `|lambda - 1| <= eigen_tol`.
pub fn static_indices(lambda: &DVector<C64>, eigen_tol: f64) -> Vec<usize> {
    lambda
        .iter()
        .enumerate()
        .filter(|(_, l)| (*l - C64::new(1.0, 0.0)).norm() <= eigen_tol)
        .map(|(j, _)| j)
        .collect()
}

/// Real part of the static-mode superposition, plus the chosen mode indices.
pub fn background_vector(
    phi: &DMatrix<C64>,
    lambda: &DVector<C64>,
    b: &DVector<C64>,
    eigen_tol: f64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let indices = static_indices(lambda, eigen_tol);
    if indices.is_empty() {
        return Err(Error::NoStaticMode);
    }
    let combo = combine(phi, b, &indices, |_| C64::new(1.0, 0.0));
    Ok((combo.iter().map(|z| z.re).collect(), indices))
}

fn combine(
    phi: &DMatrix<C64>,
    b: &DVector<C64>,
    modes: &[usize],
    weight: impl Fn(usize) -> C64,
) -> DVector<C64> {
    let mut out = DVector::<C64>::zeros(phi.nrows());
    for &j in modes {
        out.axpy(b[j] * weight(j), &phi.column(j), C64::new(1.0, 0.0));
    }
    out
}

/// Where the background vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackgroundSource {
    Dmd,
    /// No eigenvalue near 1; per-bin temporal median used instead.
    MedianFallback,
}

/// Fitted decomposition of one beam's intensity history.
#[derive(Debug, Clone)]
pub struct DmdModel {
    pub beam: usize,
    pub modes: DMatrix<C64>,
    pub eigenvalues: DVector<C64>,
    pub amplitudes: DVector<C64>,
    pub background_indices: Vec<usize>,
    pub background: Vec<f64>,
    pub source: BackgroundSource,
}

impl DmdModel {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Snapshot estimate at 1-based time `t` from the given modes:
    /// `sum_j b_j phi_j lambda_j^(t-1)`.
    pub fn reconstruct(&self, t: usize, modes: &[usize]) -> DVector<C64> {
        assert!(t >= 1, "time index is 1-based");
        let power = (t - 1) as i32;
        combine(&self.modes, &self.amplitudes, modes, |j| self.eigenvalues[j].powi(power))
    }

    pub fn all_modes(&self) -> Vec<usize> {
        (0..self.rank()).collect()
    }
}

/// Per-row median over all columns.
pub fn temporal_median(data: &DMatrix<f64>) -> Vec<f64> {
    data.row_iter()
        .map(|row| {
            let mut v: Vec<f64> = row.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        })
        .collect()
}

/// Full DMD of a snapshot matrix (rows = azimuth bins, columns = frames).
pub fn fit_dmd(beam: usize, data: &DMatrix<f64>, cfg: &DmdConfig) -> Result<DmdModel> {
    let (current, next) = shift_split(data)?;
    let op = fit_reduced_operator(&current, &next, cfg.svd_energy)?;
    let (factored, eigenvalues) = factored_modes(&op, &next)?;
    let b = factored_amplitudes(&factored, current.column(0).as_slice())?;
    let modes = factored.expand();
    let (background, background_indices, source) =
        match background_vector(&modes, &eigenvalues, &b, cfg.eigen_tol) {
            Ok((v, idx)) => (v, idx, BackgroundSource::Dmd),
            Err(Error::NoStaticMode) => (temporal_median(data), Vec::new(), BackgroundSource::MedianFallback),
            Err(e) => return Err(e),
        };
    if background.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(format!("beam {beam}: non-finite background")));
    }
    Ok(DmdModel {
        beam,
        modes,
        eigenvalues,
        amplitudes: b,
        background_indices,
        background,
        source,
    })
}

/// Fit the intensity model of one beam over a sequence of frames.
pub fn train_intensity_model(frames: &[PolarFrame], beam: usize, cfg: &DmdConfig) -> Result<DmdModel> {
    if frames.len() < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: frames.len() });
    }
    let st = build_st_matrix(frames, beam, Channel::Intensity)?;
    fit_dmd(beam, &st.data, cfg)
}

/// `true` where a return deviates from the background intensity by more than `tau`.
pub fn intensity_foreground_mask(intensity: &[f64], range: &[f64], background: &[f64], tau: f64) -> Vec<bool> {
    assert_eq!(intensity.len(), background.len());
    assert_eq!(intensity.len(), range.len());
    intensity
        .iter()
        .zip(range)
        .zip(background)
        .map(|((&i, &r), &bg)| r > 0.0 && (i - bg).abs() > tau)
        .collect()
}
