//! Sparse polynomial chaos expansion surrogates.
//!
//! The expansion is a sum of orthonormal (probabilists') Hermite polynomial
//! products over a truncated multi-index set (q-norm and interaction-order
//! truncation). Raw inputs are mapped dimension-wise to standard normal
//! variates through an empirical quantile map, coefficients are estimated
//! by least squares on a subspace-pursuit-selected sparse support, and
//! bootstrap replication on the design of experiments yields coefficient
//! ensembles for confidence bands.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::seeds;
use crate::stats;

// ---------------------------------------------------------------------------
// Multi-index sets
// ---------------------------------------------------------------------------

/// Truncated set of multivariate polynomial degrees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    pub dim: usize,
    pub indices: Vec<Vec<u32>>,
}

/// All multi-indices with q-norm `(sum alpha_i^q)^(1/q) <= max_degree` and
/// at most `max_interaction` nonzero entries, in lexicographic order.
pub fn build_index_set(
    dim: usize,
    max_degree: usize,
    q: f64,
    max_interaction: usize,
) -> Result<MultiIndexSet> {
    if dim == 0 {
        return Err(Error::Config("index set needs dim >= 1".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("q-norm must be in (0,1], got {q}")));
    }
    if max_interaction == 0 {
        return Err(Error::Config("max interaction must be >= 1".into()));
    }
    let budget = (max_degree as f64).powf(q);
    let mut indices = Vec::new();
    let mut current = vec![0u32; dim];
    fn recurse(
        pos: usize,
        qsum: f64,
        nonzero: usize,
        current: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
        dim: usize,
        max_degree: usize,
        q: f64,
        budget: f64,
        max_interaction: usize,
    ) {
        if pos == dim {
            out.push(current.clone());
            return;
        }
        for a in 0..=max_degree as u32 {
            let nz = nonzero + usize::from(a > 0);
            if nz > max_interaction {
                break;
            }
            let qs = qsum + if a > 0 { (a as f64).powf(q) } else { 0.0 };
            if qs > budget + 1e-12 {
                break;
            }
            current[pos] = a;
            recurse(pos + 1, qs, nz, current, out, dim, max_degree, q, budget, max_interaction);
        }
        current[pos] = 0;
    }
    recurse(0, 0.0, 0, &mut current, &mut indices, dim, max_degree, q, budget, max_interaction);
    Ok(MultiIndexSet { dim, indices })
}

impl MultiIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.indices.iter().flat_map(|a| a.iter().copied()).max().unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Orthonormal Hermite basis
// ---------------------------------------------------------------------------

/// Orthonormal probabilists' Hermite values psi_0..psi_max at `x`.
pub fn hermite_orthonormal(x: f64, max_deg: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(max_deg + 1);
    v.push(1.0);
    if max_deg == 0 {
        return v;
    }
    v.push(x);
    for k in 1..max_deg {
        let next = (x * v[k] - (k as f64).sqrt() * v[k - 1]) / ((k + 1) as f64).sqrt();
        v.push(next);
    }
    v
}

/// Values of every basis function of `set` at one (transformed) point.
pub fn eval_basis(set: &MultiIndexSet, point: &[f64]) -> Result<Vec<f64>> {
    if point.len() != set.dim {
        return Err(Error::Dimension(format!(
            "point has {} dims, basis expects {}",
            point.len(),
            set.dim
        )));
    }
    let max_deg = set.max_degree() as usize;
    let tables: Vec<Vec<f64>> =
        point.iter().map(|x| hermite_orthonormal(*x, max_deg)).collect();
    Ok(set
        .indices
        .iter()
        .map(|alpha| {
            alpha
                .iter()
                .enumerate()
                .filter(|(_, a)| **a > 0)
                .map(|(d, a)| tables[d][*a as usize])
                .product::<f64>()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Isoprobabilistic input transform
// ---------------------------------------------------------------------------

/// Piecewise-linear empirical quantile map of one dimension to standard
/// normal, with linear tail extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimMap {
    pub knots_x: Vec<f64>,
    pub knots_z: Vec<f64>,
}

impl DimMap {
    fn fit(values: &[f64]) -> Result<DimMap> {
        let n = values.len();
        if n < 2 {
            return Err(Error::Fit("quantile map needs >= 2 samples".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = Normal::new(0.0, 1.0).unwrap();
        // Collapse ties to one knot at the average normal score.
        let mut knots_x = Vec::new();
        let mut knots_z = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let z_avg = (i..=j)
                .map(|k| normal.inverse_cdf((k as f64 + 0.5) / n as f64))
                .sum::<f64>()
                / (j - i + 1) as f64;
            knots_x.push(sorted[i]);
            knots_z.push(z_avg);
            i = j + 1;
        }
        if knots_x.len() < 2 {
            return Err(Error::Fit("quantile map needs >= 2 distinct values".into()));
        }
        Ok(DimMap { knots_x, knots_z })
    }

    fn apply(&self, x: f64) -> f64 {
        let k = &self.knots_x;
        let z = &self.knots_z;
        let m = k.len();
        if x <= k[0] {
            let slope = (z[1] - z[0]) / (k[1] - k[0]);
            return z[0] + slope * (x - k[0]);
        }
        if x >= k[m - 1] {
            let slope = (z[m - 1] - z[m - 2]) / (k[m - 1] - k[m - 2]);
            return z[m - 1] + slope * (x - k[m - 1]);
        }
        let idx = k.partition_point(|v| *v <= x).min(m - 1);
        let (x0, x1) = (k[idx - 1], k[idx]);
        let (z0, z1) = (z[idx - 1], z[idx]);
        z0 + (z1 - z0) * (x - x0) / (x1 - x0)
    }
}

/// Per-dimension quantile maps from raw inputs to standard-normal space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub maps: Vec<DimMap>,
}

impl InputTransform {
    pub fn fit(rows: &[Vec<f64>]) -> Result<InputTransform> {
        if rows.is_empty() {
            return Err(Error::Sizing("transform needs at least one row".into()));
        }
        let dim = rows[0].len();
        let maps = (0..dim)
            .map(|d| {
                let col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
                DimMap::fit(&col)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(InputTransform { maps })
    }

    pub fn dim(&self) -> usize {
        self.maps.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.maps.len() {
            return Err(Error::Dimension(format!(
                "row has {} dims, transform expects {}",
                row.len(),
                self.maps.len()
            )));
        }
        Ok(row.iter().zip(&self.maps).map(|(x, m)| m.apply(*x)).collect())
    }
}

// ---------------------------------------------------------------------------
// Least squares with leverage
// ---------------------------------------------------------------------------

struct LsFit {
    coeffs: DVector<f64>,
    /// Diagonal of the hat matrix.
    leverage: Vec<f64>,
}

/// QR least squares; falls back to ridge-regularized normal equations when
/// the triangular factor is numerically singular.
fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<LsFit> {
    let (n, p) = (a.nrows(), a.ncols());
    if n < p {
        return Err(Error::Fit(format!("least squares needs n >= p, got {n} < {p}")));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let maxdiag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    let ill = (0..p).any(|i| r[(i, i)].abs() < 1e-10 * maxdiag.max(1e-300));
    if !ill {
        let q = qr.q();
        let rhs = q.transpose() * y;
        if let Some(coeffs) = r.solve_upper_triangular(&rhs) {
            let leverage = (0..n).map(|i| q.row(i).norm_squared()).collect();
            return Ok(LsFit { coeffs, leverage });
        }
    }
    // Ridge retry.
    let mut gram = a.transpose() * a;
    for i in 0..p {
        gram[(i, i)] += 1e-8;
    }
    let rhs = a.transpose() * y;
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Fit("normal equations singular even with ridge".into()))?;
    let coeffs = chol.solve(&rhs);
    let inv = chol.inverse();
    let leverage = (0..n)
        .map(|i| {
            let row = a.row(i).transpose();
            (row.transpose() * &inv * &row)[(0, 0)]
        })
        .collect();
    Ok(LsFit { coeffs, leverage })
}

// ---------------------------------------------------------------------------
// Subspace pursuit
// ---------------------------------------------------------------------------

/// Result of one subspace-pursuit run on a normalized dictionary.
struct SpSelection {
    support: Vec<usize>,
    #[cfg_attr(not(test), allow(dead_code))]
    residual_norms: Vec<f64>,
}

fn top_k_abs(values: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().partial_cmp(&values[a].abs()).unwrap());
    idx.truncate(k);
    idx
}

/// Classical subspace pursuit with sparsity target `k` on the (internally
/// column-normalized) dictionary. Residual norms are non-increasing across
/// accepted iterations.
fn subspace_pursuit(psi: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<SpSelection> {
    let (n, p) = (psi.nrows(), psi.ncols());
    let k = k.min(p).min(n.saturating_sub(1)).max(1);
    // Normalize columns so correlation and coefficient magnitudes compare.
    let norms: Vec<f64> = (0..p).map(|j| psi.column(j).norm().max(1e-300)).collect();
    let mut a = psi.clone();
    for j in 0..p {
        let nj = norms[j];
        for i in 0..n {
            a[(i, j)] /= nj;
        }
    }
    let corr = a.transpose() * y;
    let mut support = top_k_abs(&corr, k);
    support.sort_unstable();

    let fit_on = |sup: &[usize]| -> Result<(DVector<f64>, f64)> {
        let sub = a.select_columns(sup.iter());
        let fit = least_squares(&sub, y)?;
        let resid = y - sub * &fit.coeffs;
        Ok((fit.coeffs, resid.norm()))
    };

    let (_, mut best_norm) = fit_on(&support)?;
    let mut norms_hist = vec![best_norm];
    for _ in 0..30 {
        let sub = a.select_columns(support.iter());
        let fit = least_squares(&sub, y)?;
        let resid = y - &sub * &fit.coeffs;
        let corr = a.transpose() * resid;
        let extra = top_k_abs(&corr, k);
        let mut union: Vec<usize> = support.iter().copied().chain(extra).collect();
        union.sort_unstable();
        union.dedup();
        let union_mat = a.select_columns(union.iter());
        let ufit = least_squares(&union_mat, y)?;
        let mut ranked: Vec<usize> = (0..union.len()).collect();
        ranked.sort_by(|&x, &z| {
            ufit.coeffs[z].abs().partial_cmp(&ufit.coeffs[x].abs()).unwrap()
        });
        let mut new_support: Vec<usize> = ranked.iter().take(k).map(|&r| union[r]).collect();
        new_support.sort_unstable();
        let (_, new_norm) = fit_on(&new_support)?;
        if new_norm >= best_norm - 1e-14 * best_norm.max(1e-300) {
            break;
        }
        support = new_support;
        best_norm = new_norm;
        norms_hist.push(best_norm);
    }
    Ok(SpSelection { support, residual_norms: norms_hist })
}

// ---------------------------------------------------------------------------
// Model fitting
// ---------------------------------------------------------------------------

/// Solver and truncation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PceSettings {
    /// Degrees 1..=max_degree are tried; the one minimizing the LOO error
    /// wins (ties to the lower degree).
    pub max_degree: usize,
    pub q_norm: f64,
    pub max_interaction: usize,
    /// Number of sparsity targets swept over [N/10, N/3].
    pub sp_k_grid: usize,
    /// Fixed sparsity target (used by bootstrap replicates); `None` sweeps.
    pub fixed_k: Option<usize>,
    /// Fixed degree; `None` adapts.
    pub fixed_degree: Option<usize>,
    /// Skip subspace pursuit and regress on the full candidate basis.
    pub full_ls: bool,
}

impl Default for PceSettings {
    fn default() -> Self {
        PceSettings {
            max_degree: 5,
            q_norm: 0.5,
            max_interaction: 2,
            sp_k_grid: 8,
            fixed_k: None,
            fixed_degree: None,
            full_ls: false,
        }
    }
}

/// A fitted sparse expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceModel {
    pub dim: usize,
    pub degree: usize,
    /// Selected multi-indices (support of the expansion).
    pub indices: Vec<Vec<u32>>,
    pub coeffs: Vec<f64>,
    pub transform: InputTransform,
    pub n_train: usize,
    pub eps_emp: f64,
    /// Leave-one-out error by the closed-form leverage formula; infinite
    /// when some leverage reaches one (exact interpolation at a point).
    pub eps_loo: f64,
    /// Sparsity target used by the solver (candidate count for full LS).
    pub sp_k: usize,
}

impl PceModel {
    fn index_set(&self) -> MultiIndexSet {
        MultiIndexSet { dim: self.dim, indices: self.indices.clone() }
    }

    /// Point evaluation on raw (untransformed) inputs.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        let zeta = self.transform.apply(row)?;
        let set = self.index_set();
        let basis = eval_basis(&set, &zeta)?;
        Ok(basis.iter().zip(&self.coeffs).map(|(b, c)| b * c).sum())
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let set = self.index_set();
        rows.iter()
            .map(|r| {
                let zeta = self.transform.apply(r)?;
                let basis = eval_basis(&set, &zeta)?;
                Ok(basis.iter().zip(&self.coeffs).map(|(b, c)| b * c).sum())
            })
            .collect()
    }
}

fn design_matrix(set: &MultiIndexSet, zeta_rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = zeta_rows.len();
    let p = set.len();
    let mut m = DMatrix::zeros(n, p);
    for (i, z) in zeta_rows.iter().enumerate() {
        let basis = eval_basis(set, z)?;
        for (j, b) in basis.into_iter().enumerate() {
            m[(i, j)] = b;
        }
    }
    Ok(m)
}

/// Empirical and leverage-form LOO errors of a fixed-support LS fit.
fn errors_from_fit(
    y: &DVector<f64>,
    yhat: &DVector<f64>,
    leverage: &[f64],
) -> (f64, f64) {
    let n = y.len();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let denom: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let denom = if denom > 0.0 { denom } else { f64::MIN_POSITIVE };
    let mut emp = 0.0;
    let mut loo = 0.0;
    let mut degenerate = false;
    for i in 0..n {
        let r = y[i] - yhat[i];
        emp += r * r;
        let h = leverage[i];
        if h >= 1.0 - 1e-12 {
            degenerate = true;
        } else {
            let rl = r / (1.0 - h);
            loo += rl * rl;
        }
    }
    (emp / denom, if degenerate { f64::INFINITY } else { loo / denom })
}

struct CandidateFit {
    support: Vec<usize>,
    coeffs: Vec<f64>,
    eps_emp: f64,
    eps_loo: f64,
    sp_k: usize,
}

fn fit_support(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    support: &[usize],
    sp_k: usize,
) -> Result<CandidateFit> {
    let sub = psi.select_columns(support.iter());
    let fit = least_squares(&sub, y)?;
    let yhat = &sub * &fit.coeffs;
    let (eps_emp, eps_loo) = errors_from_fit(y, &yhat, &fit.leverage);
    Ok(CandidateFit {
        support: support.to_vec(),
        coeffs: fit.coeffs.iter().cloned().collect(),
        eps_emp,
        eps_loo,
        sp_k,
    })
}

fn sparsity_grid(n: usize, n_candidates: usize, settings: &PceSettings) -> Vec<usize> {
    if let Some(k) = settings.fixed_k {
        return vec![k.min(n_candidates).min(n.saturating_sub(1)).max(1)];
    }
    let lo = (n as f64 / 10.0).ceil() as usize;
    let hi = (n as f64 / 3.0).ceil() as usize;
    let cap = n_candidates.min(n.saturating_sub(1));
    let lo = lo.clamp(1, cap);
    let hi = hi.clamp(lo, cap);
    let m = settings.sp_k_grid.max(1);
    let mut ks: Vec<usize> = (0..m)
        .map(|i| {
            let f = if m == 1 { 0.0 } else { i as f64 / (m - 1) as f64 };
            (lo as f64 + f * (hi - lo) as f64).round() as usize
        })
        .collect();
    ks.dedup();
    ks
}

/// Fit with an externally supplied transform (bootstrap replicates reuse
/// the full-design transform).
pub fn fit_pce_with_transform(
    x_raw: &[Vec<f64>],
    y: &[f64],
    transform: &InputTransform,
    settings: &PceSettings,
) -> Result<PceModel> {
    let n = x_raw.len();
    if n == 0 || n != y.len() {
        return Err(Error::Sizing(format!(
            "design needs matching x ({n}) and y ({}) rows",
            y.len()
        )));
    }
    let dim = transform.dim();
    let zeta: Vec<Vec<f64>> =
        x_raw.iter().map(|r| transform.apply(r)).collect::<Result<Vec<_>>>()?;
    let yv = DVector::from_row_slice(y);

    let degrees: Vec<usize> = match settings.fixed_degree {
        Some(d) => vec![d],
        None => (1..=settings.max_degree.max(1)).collect(),
    };
    let mut best: Option<(usize, CandidateFit, MultiIndexSet)> = None;
    for degree in degrees {
        let set = build_index_set(dim, degree, settings.q_norm, settings.max_interaction)?;
        if set.len() < 2 {
            continue;
        }
        let psi = design_matrix(&set, &zeta)?;
        let candidates: Vec<CandidateFit> = if settings.full_ls || set.len() + 1 >= n {
            if set.len() > n {
                continue;
            }
            let support: Vec<usize> = (0..set.len()).collect();
            vec![fit_support(&psi, &yv, &support, support.len())?]
        } else {
            sparsity_grid(n, set.len(), settings)
                .into_iter()
                .map(|k| {
                    let sel = subspace_pursuit(&psi, &yv, k)?;
                    fit_support(&psi, &yv, &sel.support, k)
                })
                .collect::<Result<Vec<_>>>()?
        };
        for cand in candidates {
            let better = match &best {
                None => true,
                // Strict improvement only: ties resolve to the lower degree
                // and the earlier (smaller) sparsity target.
                Some((_, b, _)) => cand.eps_loo < b.eps_loo,
            };
            if better {
                best = Some((degree, cand, set.clone()));
            }
        }
    }
    let (degree, cand, set) =
        best.ok_or_else(|| Error::Fit("no admissible PCE candidate".into()))?;
    Ok(PceModel {
        dim,
        degree,
        indices: cand.support.iter().map(|&j| set.indices[j].clone()).collect(),
        coeffs: cand.coeffs,
        transform: transform.clone(),
        n_train: n,
        eps_emp: cand.eps_emp,
        eps_loo: cand.eps_loo,
        sp_k: cand.sp_k,
    })
}

/// Fit a sparse expansion on raw input/output pairs.
pub fn fit_pce(x_raw: &[Vec<f64>], y: &[f64], settings: &PceSettings) -> Result<PceModel> {
    let transform = InputTransform::fit(x_raw)?;
    fit_pce_with_transform(x_raw, y, &transform, settings)
}

/// Error triple of a fitted model on its design (and optional validation set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps_emp: f64,
    pub eps_loo: f64,
    pub eps_gen: Option<f64>,
}

/// Recompute the error measures of `model` on the design and optionally a
/// validation set (relative generalization error).
pub fn compute_errors(
    model: &PceModel,
    x_raw: &[Vec<f64>],
    y: &[f64],
    validation: Option<(&[Vec<f64>], &[f64])>,
) -> Result<ErrorReport> {
    let zeta: Vec<Vec<f64>> =
        x_raw.iter().map(|r| model.transform.apply(r)).collect::<Result<Vec<_>>>()?;
    let set = MultiIndexSet { dim: model.dim, indices: model.indices.clone() };
    let psi = design_matrix(&set, &zeta)?;
    let coeffs = DVector::from_row_slice(&model.coeffs);
    let yhat = &psi * &coeffs;
    let yv = DVector::from_row_slice(y);
    // Leverages of the fixed-support LS problem.
    let fit = least_squares(&psi, &yv)?;
    let (eps_emp, eps_loo) = errors_from_fit(&yv, &yhat, &fit.leverage);
    let eps_gen = match validation {
        None => None,
        Some((xv, yval)) => {
            let pred = model.predict_batch(xv)?;
            let mu = stats::mean(yval);
            let denom: f64 = yval.iter().map(|v| (v - mu) * (v - mu)).sum();
            let num: f64 =
                pred.iter().zip(yval).map(|(p, v)| (p - v) * (p - v)).sum();
            Some(num / if denom > 0.0 { denom } else { f64::MIN_POSITIVE })
        }
    };
    Ok(ErrorReport { eps_emp, eps_loo, eps_gen })
}

// ---------------------------------------------------------------------------
// Bootstrap replication
// ---------------------------------------------------------------------------

/// Bootstrap ensemble: replicates share the transform and the full fit's
/// truncation settings (degree and sparsity target); each replicate runs
/// its own support selection on its resample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPce {
    pub full: PceModel,
    pub replicates: Vec<PceModel>,
    pub b_requested: usize,
}

impl BootstrapPce {
    pub fn b_effective(&self) -> usize {
        self.replicates.len()
    }

    /// Per-replicate predictions at one point.
    pub fn predict_ensemble(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.replicates.iter().map(|m| m.predict_row(row)).collect()
    }

    /// Pointwise quantiles of the replicate predictions for a batch.
    pub fn predict_quantiles(&self, rows: &[Vec<f64>], qs: &[f64]) -> Result<Vec<Vec<f64>>> {
        let preds: Vec<Vec<f64>> = self
            .replicates
            .par_iter()
            .map(|m| m.predict_batch(rows))
            .collect::<Result<Vec<_>>>()?;
        let mut out = vec![vec![0.0; qs.len()]; rows.len()];
        let mut buf = vec![0.0; preds.len()];
        for (i, row_out) in out.iter_mut().enumerate() {
            for (b, p) in preds.iter().enumerate() {
                buf[b] = p[i];
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (j, q) in qs.iter().enumerate() {
                row_out[j] = stats::quantile_sorted(&buf, *q);
            }
        }
        Ok(out)
    }
}

/// Fit the full model, then `b` replicates on resamples (with replacement,
/// same size). Replicate fit failures retry up to 3 fresh resamples, then
/// the replicate is dropped.
pub fn bootstrap_fit(
    x_raw: &[Vec<f64>],
    y: &[f64],
    settings: &PceSettings,
    b: usize,
    seed: u64,
) -> Result<BootstrapPce> {
    if b < 2 {
        return Err(Error::Sizing("bootstrap needs B >= 2".into()));
    }
    let transform = InputTransform::fit(x_raw)?;
    let full = fit_pce_with_transform(x_raw, y, &transform, settings)?;
    let rep_settings = PceSettings {
        fixed_degree: Some(full.degree),
        fixed_k: Some(full.sp_k),
        ..*settings
    };
    let n = x_raw.len();
    let replicates: Vec<Option<PceModel>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            for attempt in 0..=3u64 {
                let mut rng =
                    seeds::rng_from_seed(seeds::child_seed(seed, "boot", rep as u64 * 16 + attempt));
                let idx: Vec<usize> =
                    (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..n)).collect();
                let xb: Vec<Vec<f64>> = idx.iter().map(|&i| x_raw[i].clone()).collect();
                let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                if let Ok(m) = fit_pce_with_transform(&xb, &yb, &transform, &rep_settings) {
                    return Some(m);
                }
            }
            None
        })
        .collect();
    let replicates: Vec<PceModel> = replicates.into_iter().flatten().collect();
    if replicates.len() < 2 {
        return Err(Error::Fit("fewer than 2 bootstrap replicates survived".into()));
    }
    Ok(BootstrapPce { full, replicates, b_requested: b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeds::rng_from_seed(seed);
        (0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    #[test]
    fn index_set_counts_match_total_degree() {
        let set = build_index_set(2, 2, 1.0, 2).unwrap();
        let expected: Vec<Vec<u32>> =
            vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 0], vec![1, 1], vec![2, 0]];
        assert_eq!(set.indices, expected);
    }

    #[test]
    fn hyperbolic_norm_excludes_interactions() {
        let set = build_index_set(2, 2, 0.5, 2).unwrap();
        assert_eq!(set.len(), 5);
        assert!(!set.indices.contains(&vec![1, 1]), "(1,1) has q-norm 4 > 2");
    }

    #[test]
    fn interaction_one_keeps_only_univariate_terms() {
        let set = build_index_set(3, 4, 1.0, 1).unwrap();
        for alpha in &set.indices {
            assert!(alpha.iter().filter(|a| **a > 0).count() <= 1);
        }
        assert_eq!(set.len(), 1 + 3 * 4);
    }

    #[test]
    fn hermite_values_and_gramian() {
        assert_eq!(hermite_orthonormal(0.7, 0), vec![1.0]);
        let v = hermite_orthonormal(0.0, 2);
        assert_relative_eq!(v[2], -1.0 / 2.0f64.sqrt(), epsilon = 1e-15);
        // Monte Carlo Gramian over standard normal points. High-degree
        // products have heavy-tailed variance, so the sample is sized for
        // a ~2-sigma margin at the 0.02 tolerance.
        let mut rng = seeds::rng_from_seed(5);
        let deg = 4;
        let mut gram = vec![vec![0.0; deg + 1]; deg + 1];
        let n = 2_000_000;
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let h = hermite_orthonormal(x, deg);
            for i in 0..=deg {
                for j in 0..=deg {
                    gram[i][j] += h[i] * h[j];
                }
            }
        }
        for i in 0..=deg {
            for j in 0..=deg {
                let g = gram[i][j] / n as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g - target).abs() < 0.02, "gram[{i}][{j}] = {g}");
            }
        }
    }

    #[test]
    fn quantile_map_is_monotone_with_zero_median() {
        let mut rng = seeds::rng_from_seed(6);
        let rows: Vec<Vec<f64>> =
            (0..501).map(|_| vec![rng.gen_range(2.0..9.0f64).powi(2)]).collect();
        let tr = InputTransform::fit(&rows).unwrap();
        let mut col: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = col[col.len() / 2];
        let z_med = tr.apply(&[median]).unwrap()[0];
        assert!(z_med.abs() < 0.05, "median maps to {z_med}");
        let mut prev = f64::NEG_INFINITY;
        for x in (0..200).map(|i| i as f64 * 0.5) {
            let z = tr.apply(&[x]).unwrap()[0];
            assert!(z >= prev);
            prev = z;
        }
        // Tails extrapolate linearly (finite, strictly ordered).
        let lo = tr.apply(&[-100.0]).unwrap()[0];
        let hi = tr.apply(&[1e6]).unwrap()[0];
        assert!(lo.is_finite() && hi.is_finite() && lo < hi);
    }

    #[test]
    fn analytic_target_is_recovered_exactly() {
        // y = 2 + 3 zeta1^2 - zeta1 zeta2 lies in the degree-2, q=1 span.
        let dim = 3;
        let rows = normal_rows(300, dim, 7);
        let transform = InputTransform::fit(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let z = transform.apply(r).unwrap();
                2.0 + 3.0 * z[0] * z[0] - z[0] * z[1]
            })
            .collect();
        let settings = PceSettings {
            max_degree: 2,
            q_norm: 1.0,
            max_interaction: 2,
            full_ls: true,
            ..Default::default()
        };
        let model = fit_pce_with_transform(&rows, &y, &transform, &settings).unwrap();
        let held = normal_rows(100, dim, 8);
        for r in &held {
            let z = transform.apply(r).unwrap();
            let truth = 2.0 + 3.0 * z[0] * z[0] - z[0] * z[1];
            let pred = model.predict_row(r).unwrap();
            assert!(
                (pred - truth).abs() <= 1e-8 * truth.abs().max(1.0),
                "pred {pred} vs {truth}"
            );
        }
        assert!(model.eps_emp < 1e-16);
    }

    #[test]
    fn interpolation_limit_has_zero_empirical_error() {
        let rows = normal_rows(4, 1, 9);
        let transform = InputTransform::fit(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| r[0].powi(3) - r[0] + 0.5).collect();
        let settings = PceSettings {
            max_degree: 3,
            q_norm: 1.0,
            max_interaction: 1,
            fixed_degree: Some(3),
            full_ls: true,
            ..Default::default()
        };
        let model = fit_pce_with_transform(&rows, &y, &transform, &settings).unwrap();
        assert_eq!(model.indices.len(), 4);
        assert!(model.eps_emp < 1e-16, "eps_emp = {}", model.eps_emp);
        assert!(model.eps_loo.is_infinite(), "interpolation flags LOO infinite");
    }

    #[test]
    fn closed_form_loo_matches_explicit_refits() {
        let n = 50;
        let rows = normal_rows(n, 2, 10);
        let mut rng = seeds::rng_from_seed(11);
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                1.0 + r[0] + 0.5 * r[1] * r[1] + 0.1 * e
            })
            .collect();
        let settings = PceSettings {
            max_degree: 2,
            q_norm: 1.0,
            max_interaction: 2,
            full_ls: true,
            ..Default::default()
        };
        let model = fit_pce(&rows, &y, &settings).unwrap();

        // Explicit N-refit leave-one-out on the same fixed support.
        let set = MultiIndexSet { dim: 2, indices: model.indices.clone() };
        let zeta: Vec<Vec<f64>> =
            rows.iter().map(|r| model.transform.apply(r).unwrap()).collect();
        let psi = design_matrix(&set, &zeta).unwrap();
        let mut num = 0.0;
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|j| *j != i).collect();
            let sub = psi.select_rows(keep.iter());
            let ysub =
                DVector::from_iterator(n - 1, keep.iter().map(|&j| y[j]));
            let fit = least_squares(&sub, &ysub).unwrap();
            let pred: f64 =
                (0..set.len()).map(|c| psi[(i, c)] * fit.coeffs[c]).sum();
            num += (y[i] - pred) * (y[i] - pred);
        }
        let ybar = stats::mean(&y);
        let den: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
        let loo_explicit = num / den;
        assert_relative_eq!(model.eps_loo, loo_explicit, max_relative = 1e-8);
    }

    #[test]
    fn constant_predictor_has_unit_empirical_error() {
        let rows = normal_rows(80, 1, 12);
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let transform = InputTransform::fit(&rows).unwrap();
        let model = PceModel {
            dim: 1,
            degree: 0,
            indices: vec![vec![0]],
            coeffs: vec![stats::mean(&y)],
            transform,
            n_train: rows.len(),
            eps_emp: f64::NAN,
            eps_loo: f64::NAN,
            sp_k: 1,
        };
        let report = compute_errors(&model, &rows, &y, None).unwrap();
        assert_relative_eq!(report.eps_emp, 1.0, max_relative = 0.05);
    }

    #[test]
    fn perfect_model_reports_zero_errors() {
        let rows = normal_rows(60, 2, 13);
        let transform = InputTransform::fit(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let z = transform.apply(r).unwrap();
                0.3 + 2.0 * z[1]
            })
            .collect();
        let settings = PceSettings {
            max_degree: 1,
            q_norm: 1.0,
            max_interaction: 1,
            full_ls: true,
            ..Default::default()
        };
        let model = fit_pce_with_transform(&rows, &y, &transform, &settings).unwrap();
        let report =
            compute_errors(&model, &rows, &y, Some((&rows, &y))).unwrap();
        assert!(report.eps_emp < 1e-16);
        assert!(report.eps_loo < 1e-16);
        assert!(report.eps_gen.unwrap() < 1e-16);
    }

    #[test]
    fn ls_linearity_in_the_target() {
        let rows = normal_rows(120, 2, 14);
        let mut rng = seeds::rng_from_seed(15);
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                r[0] - 0.3 * r[1] + 0.05 * e
            })
            .collect();
        let (a, b) = (2.5, -1.0);
        let y2: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let settings = PceSettings {
            max_degree: 2,
            q_norm: 1.0,
            max_interaction: 2,
            full_ls: true,
            fixed_degree: Some(2),
            ..Default::default()
        };
        let m1 = fit_pce(&rows, &y, &settings).unwrap();
        let m2 = fit_pce(&rows, &y2, &settings).unwrap();
        assert_eq!(m1.indices, m2.indices);
        for (i, (alpha, c1)) in m1.indices.iter().zip(&m1.coeffs).enumerate() {
            let expected = if alpha.iter().all(|v| *v == 0) { a * c1 + b } else { a * c1 };
            assert_relative_eq!(m2.coeffs[i], expected, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn sp_support_size_and_residual_monotonicity() {
        let n = 120;
        let p_true = [3usize, 7, 11];
        let rows = normal_rows(n, 1, 16);
        let mut rng = seeds::rng_from_seed(17);
        // Dictionary: random normal matrix with a sparse ground truth.
        let p = 30;
        let mut psi = DMatrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                psi[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        let mut y = DVector::zeros(n);
        for i in 0..n {
            y[i] = 2.0 * psi[(i, p_true[0])] - 1.5 * psi[(i, p_true[1])]
                + 0.8 * psi[(i, p_true[2])];
        }
        let k = 5;
        let sel = subspace_pursuit(&psi, &y, k).unwrap();
        assert!(sel.support.len() <= k);
        for w in sel.residual_norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for t in p_true {
            assert!(sel.support.contains(&t), "true atom {t} not recovered");
        }
        let _ = rows;
    }

    #[test]
    fn degree_adaptation_prefers_minimal_loo_and_low_degree() {
        let rows = normal_rows(200, 2, 18);
        let transform = InputTransform::fit(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let z = transform.apply(r).unwrap();
                1.0 + z[0] + z[1]
            })
            .collect();
        let settings = PceSettings {
            max_degree: 4,
            q_norm: 1.0,
            max_interaction: 2,
            full_ls: true,
            ..Default::default()
        };
        let model = fit_pce_with_transform(&rows, &y, &transform, &settings).unwrap();
        // A purely linear target is fit exactly at degree 1; larger degrees
        // cannot strictly improve the (already ~0) LOO, so ties keep 1.
        assert_eq!(model.degree, 1);
    }

    #[test]
    fn bootstrap_replicates_agree_on_noiseless_linear_data() {
        let rows = normal_rows(60, 2, 19);
        let transform = InputTransform::fit(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let z = transform.apply(r).unwrap();
                0.7 + 1.3 * z[0] - 0.4 * z[1]
            })
            .collect();
        let settings = PceSettings {
            max_degree: 1,
            q_norm: 1.0,
            max_interaction: 1,
            full_ls: true,
            ..Default::default()
        };
        let boot = bootstrap_fit(&rows, &y, &settings, 2, 99).unwrap();
        assert_eq!(boot.b_effective(), 2);
        let (r1, r2) = (&boot.replicates[0], &boot.replicates[1]);
        assert_eq!(r1.indices, r2.indices);
        for (a, b) in r1.coeffs.iter().zip(&r2.coeffs) {
            assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-8);
        }
        // Determinism of the whole ensemble.
        let boot2 = bootstrap_fit(&rows, &y, &settings, 2, 99).unwrap();
        assert_eq!(boot, boot2);
    }

    #[test]
    fn replicate_predictions_bracket_the_full_fit() {
        let rows = normal_rows(150, 2, 20);
        let mut rng = seeds::rng_from_seed(21);
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                1.0 + r[0] + 0.5 * r[1] + 0.3 * e
            })
            .collect();
        let settings = PceSettings {
            max_degree: 2,
            q_norm: 1.0,
            max_interaction: 2,
            full_ls: true,
            ..Default::default()
        };
        let boot = bootstrap_fit(&rows, &y, &settings, 40, 7).unwrap();
        let mut bracketed = 0usize;
        for r in &rows {
            let full = boot.full.predict_row(r).unwrap();
            let ens = boot.predict_ensemble(r).unwrap();
            let lo = ens.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ens.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if full >= lo && full <= hi {
                bracketed += 1;
            }
        }
        assert!(
            bracketed as f64 >= 0.8 * rows.len() as f64,
            "only {bracketed}/{} bracketed",
            rows.len()
        );
    }

    #[test]
    fn mean_identity_of_the_constant_coefficient() {
        let rows = normal_rows(4000, 2, 22);
        let mut rng = seeds::rng_from_seed(23);
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                2.0 + r[0] * r[0] + 0.2 * e
            })
            .collect();
        let settings = PceSettings {
            max_degree: 2,
            q_norm: 1.0,
            max_interaction: 1,
            full_ls: true,
            ..Default::default()
        };
        let model = fit_pce(&rows, &y, &settings).unwrap();
        let preds = model.predict_batch(&rows).unwrap();
        let c0 = model
            .indices
            .iter()
            .zip(&model.coeffs)
            .find(|(a, _)| a.iter().all(|v| *v == 0))
            .map(|(_, c)| *c)
            .unwrap();
        assert_relative_eq!(c0, stats::mean(&preds), max_relative = 1e-2);
    }

    #[test]
    fn ensemble_quantiles_are_sorted() {
        let rows = normal_rows(100, 2, 24);
        let mut rng = seeds::rng_from_seed(25);
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                r[0] + 0.4 * e
            })
            .collect();
        let settings = PceSettings {
            max_degree: 1,
            q_norm: 1.0,
            max_interaction: 1,
            full_ls: true,
            ..Default::default()
        };
        let boot = bootstrap_fit(&rows, &y, &settings, 25, 31).unwrap();
        let test_rows = normal_rows(20, 2, 26);
        let qs = [0.01, 0.10, 0.50, 0.90, 0.99];
        let bands = boot.predict_quantiles(&test_rows, &qs).unwrap();
        for row in bands {
            for w in row.windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
        }
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn index_sets_satisfy_their_constraints(
                dim in 1usize..5,
                degree in 0usize..5,
                q in prop::sample::select(vec![0.25, 0.5, 0.75, 1.0]),
                r in 1usize..4,
            ) {
                let set = build_index_set(dim, degree, q, r).unwrap();
                prop_assert!(set.indices.contains(&vec![0u32; dim]));
                let mut seen = std::collections::HashSet::new();
                for alpha in &set.indices {
                    prop_assert!(seen.insert(alpha.clone()), "duplicate index");
                    let nz = alpha.iter().filter(|a| **a > 0).count();
                    prop_assert!(nz <= r);
                    let qs: f64 = alpha.iter().filter(|a| **a > 0)
                        .map(|a| (*a as f64).powf(q)).sum();
                    prop_assert!(qs.powf(1.0 / q) <= degree as f64 + 1e-9);
                }
            }
        }
    }
}
