//! Correlation-matrix PCA of the IM matrix, producing the low-dimensional
//! pseudo-IM input for the surrogates.
//!
//! Columns are standardized before the eigendecomposition since the IMs
//! span many units and scales. Component signs follow the convention that
//! the largest-magnitude loading of each component is positive.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::im::ImVector;

/// A fitted PCA model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Column-major loadings, `dims x k` (orthonormal columns).
    pub loadings: Vec<Vec<f64>>,
    /// Explained-variance ratios, non-increasing.
    pub explained: Vec<f64>,
    pub k: usize,
    /// Input columns dropped for zero variance (indices into the original
    /// matrix); their loadings are zero rows.
    pub dropped: Vec<usize>,
}

/// How many components to retain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Retention {
    Fixed(usize),
    /// Smallest k with cumulative explained variance >= the target, capped.
    Cumulative { target: f64, cap: usize },
}

impl Default for Retention {
    fn default() -> Self {
        Retention::Fixed(10)
    }
}

/// Fit PCA on the standardized columns of an n x d matrix (rows of data).
pub fn fit_pca_matrix(data: &[Vec<f64>], retention: Retention) -> Result<PcaModel> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Sizing("PCA needs at least 2 rows".into()));
    }
    let d = data[0].len();
    if data.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("ragged PCA input".into()));
    }
    let mut means = vec![0.0; d];
    let mut sds = vec![0.0; d];
    for j in 0..d {
        let col: Vec<f64> = data.iter().map(|r| r[j]).collect();
        means[j] = crate::stats::mean(&col);
        sds[j] = crate::stats::std_dev(&col);
    }
    let dropped: Vec<usize> = (0..d).filter(|j| sds[*j] <= 0.0).collect();
    let active: Vec<usize> = (0..d).filter(|j| !dropped.contains(j)).collect();
    let m = active.len();
    if m == 0 {
        return Err(Error::Fit("all PCA columns are degenerate".into()));
    }

    // Correlation matrix of the standardized active columns.
    let mut corr = DMatrix::zeros(m, m);
    for (a, &ja) in active.iter().enumerate() {
        for (b, &jb) in active.iter().enumerate().skip(a) {
            let mut acc = 0.0;
            for row in data {
                acc += (row[ja] - means[ja]) / sds[ja] * ((row[jb] - means[jb]) / sds[jb]);
            }
            let r = acc / (n - 1) as f64;
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
    }

    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let ratios: Vec<f64> =
        order.iter().map(|&i| eig.eigenvalues[i].max(0.0) / total).collect();

    let k = match retention {
        Retention::Fixed(k) => k.min(m),
        Retention::Cumulative { target, cap } => {
            let mut cum = 0.0;
            let mut k = m.min(cap);
            for (i, r) in ratios.iter().enumerate().take(cap.min(m)) {
                cum += r;
                if cum >= target {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    if k == 0 {
        return Err(Error::Config("retention must keep at least one component".into()));
    }

    let mut loadings = vec![vec![0.0; k]; d];
    for (comp, &ei) in order.iter().enumerate().take(k) {
        let mut col: Vec<f64> = eig.eigenvectors.column(ei).iter().cloned().collect();
        // Sign convention: largest-magnitude loading positive.
        let (mut best, mut best_abs) = (0usize, 0.0f64);
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            for v in &mut col {
                *v = -*v;
            }
        }
        for (a, &j) in active.iter().enumerate() {
            loadings[j][comp] = col[a];
        }
    }

    Ok(PcaModel { means, sds, loadings, explained: ratios.into_iter().take(k).collect(), k, dropped })
}

/// Fit on IM rows.
pub fn fit_pca(rows: &[ImVector], retention: Retention) -> Result<PcaModel> {
    let data: Vec<Vec<f64>> = rows.iter().map(|r| r.0.to_vec()).collect();
    if data.len() <= 41 {
        return Err(Error::Sizing(format!(
            "PCA on the 41-IM matrix needs more rows than columns, got {}",
            data.len()
        )));
    }
    fit_pca_matrix(&data, retention)
}

impl PcaModel {
    pub fn dims(&self) -> usize {
        self.means.len()
    }

    /// Project one raw row onto the retained components.
    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dims() {
            return Err(Error::Dimension(format!(
                "expected {} dims, got {}",
                self.dims(),
                row.len()
            )));
        }
        let mut scores = vec![0.0; self.k];
        for (j, x) in row.iter().enumerate() {
            if self.sds[j] <= 0.0 {
                continue;
            }
            let z = (x - self.means[j]) / self.sds[j];
            for (c, s) in scores.iter_mut().enumerate() {
                *s += z * self.loadings[j][c];
            }
        }
        Ok(scores)
    }

    pub fn transform_im(&self, im: &ImVector) -> Result<Vec<f64>> {
        self.transform(&im.0)
    }

    /// Reconstruct a raw row from scores (exact when all components are
    /// retained and no column was dropped).
    pub fn inverse_transform(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.k {
            return Err(Error::Dimension(format!("expected {} scores, got {}", self.k, scores.len())));
        }
        let mut row = vec![0.0; self.dims()];
        for (j, r) in row.iter_mut().enumerate() {
            let z: f64 = (0..self.k).map(|c| self.loadings[j][c] * scores[c]).sum();
            *r = self.means[j] + z * self.sds[j];
        }
        Ok(row)
    }

    /// Gramian deviation from identity, for orthonormality checks.
    pub fn loading_gram_error(&self) -> f64 {
        let d = self.dims();
        let l = DMatrix::from_fn(d, self.k, |i, j| self.loadings[i][j]);
        let g = l.transpose() * &l;
        let mut worst = 0.0f64;
        for i in 0..self.k {
            for j in 0..self.k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Loadings of the top components with their column labels, for biplots.
pub fn biplot_data(model: &PcaModel, names: &[&str], n_pcs: usize) -> Vec<(String, Vec<f64>)> {
    let k = n_pcs.min(model.k);
    names
        .iter()
        .enumerate()
        .map(|(j, name)| (name.to_string(), model.loadings[j][..k].to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn transform_all(model: &PcaModel, data: &[Vec<f64>]) -> Vec<Vec<f64>> {
        data.iter().map(|r| model.transform(r).unwrap()).collect()
    }

    #[test]
    fn perfectly_correlated_pair_is_one_component() {
        let mut rng = seeds::rng_from_seed(1);
        let data: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                vec![x, 3.0 * x + 1.0]
            })
            .collect();
        let model = fit_pca_matrix(&data, Retention::Fixed(2)).unwrap();
        assert!(model.explained[0] > 1.0 - 1e-9);
    }

    #[test]
    fn isotropic_input_spreads_evenly() {
        let mut rng = seeds::rng_from_seed(2);
        let d = 41;
        let data: Vec<Vec<f64>> = (0..6000)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let model = fit_pca_matrix(&data, Retention::Fixed(d)).unwrap();
        for r in &model.explained {
            assert!(*r < 2.0 / d as f64 && *r > 0.4 / d as f64, "ratio {r}");
        }
    }

    #[test]
    fn loadings_are_orthonormal_and_ratios_sum_to_one() {
        let mut rng = seeds::rng_from_seed(3);
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                vec![x, x + 0.1 * y, y, z, 2.0 * z - y]
            })
            .collect();
        let model = fit_pca_matrix(&data, Retention::Fixed(5)).unwrap();
        assert!(model.loading_gram_error() < 1e-10);
        let sum: f64 = model.explained.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-10);
        for w in model.explained.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn column_means_map_to_zero_scores() {
        let mut rng = seeds::rng_from_seed(4);
        let data: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.gen_range(0.0..5.0)).collect())
            .collect();
        let model = fit_pca_matrix(&data, Retention::Fixed(4)).unwrap();
        let scores = model.transform(&model.means.clone()).unwrap();
        for s in scores {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let mut rng = seeds::rng_from_seed(5);
        let data: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let model = fit_pca_matrix(&data, Retention::Fixed(6)).unwrap();
        for row in data.iter().take(20) {
            let rec = model.inverse_transform(&model.transform(row).unwrap()).unwrap();
            for (a, b) in row.iter().zip(&rec) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn scores_are_uncorrelated_on_training_data() {
        let mut rng = seeds::rng_from_seed(6);
        let data: Vec<Vec<f64>> = (0..800)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                vec![x, 0.8 * x + 0.6 * y, y, x - y]
            })
            .collect();
        let model = fit_pca_matrix(&data, Retention::Fixed(4)).unwrap();
        let scores = transform_all(&model, &data);
        for a in 0..model.k {
            for b in a + 1..model.k {
                let ca: Vec<f64> = scores.iter().map(|s| s[a]).collect();
                let cb: Vec<f64> = scores.iter().map(|s| s[b]).collect();
                let n = ca.len() as f64;
                let cov: f64 = ca
                    .iter()
                    .zip(&cb)
                    .map(|(x, y)| (x - crate::stats::mean(&ca)) * (y - crate::stats::mean(&cb)))
                    .sum::<f64>()
                    / (n - 1.0);
                assert!(cov.abs() < 1e-8, "cov({a},{b}) = {cov}");
            }
        }
    }

    #[test]
    fn reconstruction_error_matches_eigenvalue_tail() {
        let mut rng = seeds::rng_from_seed(7);
        // Correlated data with a genuine low-dimensional core.
        let data: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                let mut eps = || -> f64 {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    0.05 * e
                };
                vec![
                    a + eps(),
                    2.0 * a + eps(),
                    b + eps(),
                    a + b + eps(),
                    a - b + eps(),
                    3.0 * b + eps(),
                ]
            })
            .collect();
        let full = fit_pca_matrix(&data, Retention::Fixed(6)).unwrap();
        let k = 2;
        let reduced = fit_pca_matrix(&data, Retention::Fixed(k)).unwrap();
        // Standardized reconstruction error fraction == eigenvalue tail sum.
        let mut err = 0.0;
        let mut tot = 0.0;
        for row in &data {
            let rec = reduced.inverse_transform(&reduced.transform(row).unwrap()).unwrap();
            for j in 0..row.len() {
                let z = (row[j] - reduced.means[j]) / reduced.sds[j];
                let zr = (rec[j] - reduced.means[j]) / reduced.sds[j];
                err += (z - zr) * (z - zr);
                tot += z * z;
            }
        }
        let tail: f64 = full.explained[k..].iter().sum();
        assert_relative_eq!(err / tot, tail, max_relative = 1e-6);
    }

    #[test]
    fn sign_convention_and_determinism() {
        let mut rng = seeds::rng_from_seed(8);
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let m1 = fit_pca_matrix(&data, Retention::Fixed(5)).unwrap();
        let m2 = fit_pca_matrix(&data, Retention::Fixed(5)).unwrap();
        assert_eq!(m1, m2);
        for c in 0..m1.k {
            let col: Vec<f64> = (0..5).map(|j| m1.loadings[j][c]).collect();
            let max = col.iter().cloned().fold(f64::MIN, f64::max);
            let min = col.iter().cloned().fold(f64::MAX, f64::min);
            assert!(max >= min.abs() - 1e-12, "largest loading must be positive");
        }
    }

    #[test]
    fn biplot_loadings_have_unit_norm_per_component() {
        let mut rng = seeds::rng_from_seed(9);
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let model = fit_pca_matrix(&data, Retention::Fixed(3)).unwrap();
        let table = biplot_data(&model, &["a", "b", "c", "d"], 3);
        for c in 0..3 {
            let ss: f64 = table.iter().map(|(_, l)| l[c] * l[c]).sum();
            assert_relative_eq!(ss, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn cumulative_retention_selects_smallest_k() {
        let mut rng = seeds::rng_from_seed(10);
        let data: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                let e: f64 = StandardNormal.sample(&mut rng);
                vec![x, x + 1e-3 * e, 0.5 * x]
            })
            .collect();
        let model =
            fit_pca_matrix(&data, Retention::Cumulative { target: 0.99, cap: 10 }).unwrap();
        assert_eq!(model.k, 1);
    }
}
