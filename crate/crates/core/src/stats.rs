//! Small shared numerics: moments, quantiles, quadrature, isotonic
//! regression.

/// Arithmetic mean. Empty slices return 0.
pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (n-1 denominator).
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics
/// (the common "type 7" rule: index = p * (n - 1)).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let p = p.clamp(0.0, 1.0);
    let idx = p * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = idx - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Quantile of an unsorted slice (copies and sorts).
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, p)
}

/// Trapezoid integral of uniformly sampled `y` with step `dt`.
pub fn trapz(y: &[f64], dt: f64) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    let interior: f64 = y[1..y.len() - 1].iter().sum();
    dt * (0.5 * (y[0] + y[y.len() - 1]) + interior)
}

/// Cumulative trapezoid integral; output has the same length, starts at 0.
pub fn cumtrapz(y: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in y.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Pearson correlation. Returns `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Weighted isotonic regression (pool-adjacent-violators).
///
/// Returns the non-decreasing sequence closest to `y` in the weighted
/// least-squares sense. Zero-weight entries follow their pooled block.
pub fn isotonic(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    let n = y.len();
    if n == 0 {
        return Vec::new();
    }
    // Blocks of (weighted mean, weight, count), merged while decreasing.
    let mut means: Vec<f64> = Vec::with_capacity(n);
    let mut weights: Vec<f64> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        means.push(y[i]);
        weights.push(w[i]);
        counts.push(1);
        while means.len() > 1 {
            let k = means.len();
            if means[k - 2] <= means[k - 1] && weights[k - 1] > 0.0 && weights[k - 2] > 0.0 {
                break;
            }
            // Merge when order is violated or a block carries no weight.
            if means[k - 2] > means[k - 1] || weights[k - 1] == 0.0 || weights[k - 2] == 0.0 {
                let wt = weights[k - 2] + weights[k - 1];
                let m = if wt > 0.0 {
                    (means[k - 2] * weights[k - 2] + means[k - 1] * weights[k - 1]) / wt
                } else {
                    0.5 * (means[k - 2] + means[k - 1])
                };
                means[k - 2] = m;
                weights[k - 2] = wt;
                counts[k - 2] += counts[k - 1];
                means.pop();
                weights.pop();
                counts.pop();
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for (m, c) in means.iter().zip(&counts) {
        for _ in 0..*c {
            out.push(*m);
        }
    }
    out
}

/// Slope and intercept of the least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile(&v, 0.0), 1.0);
        assert_relative_eq!(quantile(&v, 1.0), 4.0);
        assert_relative_eq!(quantile(&v, 0.5), 2.5);
    }

    #[test]
    fn trapz_matches_closed_form() {
        // integral of t over [0,1]
        let y: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        assert_relative_eq!(trapz(&y, 0.01), 0.5, epsilon = 1e-12);
        let c = cumtrapz(&y, 0.01);
        assert_relative_eq!(c[100], 0.5, epsilon = 1e-12);
        assert_eq!(c[0], 0.0);
    }

    #[test]
    fn isotonic_projects_onto_monotone() {
        let y = [1.0, 3.0, 2.0, 4.0];
        let w = [1.0, 1.0, 1.0, 1.0];
        let z = isotonic(&y, &w);
        assert_eq!(z, vec![1.0, 2.5, 2.5, 4.0]);
        // already monotone input is untouched
        let y2 = [0.0, 0.5, 0.5, 1.0];
        assert_eq!(isotonic(&y2, &w), y2.to_vec());
    }

    #[test]
    fn isotonic_preserves_pointwise_order() {
        // f <= g pointwise with equal weights => PAV(f) <= PAV(g).
        let f = [0.3, 0.1, 0.5, 0.2, 0.9];
        let g = [0.4, 0.3, 0.6, 0.6, 0.9];
        let w = [1.0, 2.0, 1.0, 3.0, 1.0];
        let pf = isotonic(&f, &w);
        let pg = isotonic(&g, &w);
        for (a, b) in pf.iter().zip(&pg) {
            assert!(a <= &(b + 1e-12));
        }
    }

    #[test]
    fn pearson_of_identical_series_is_one() {
        let x = [1.0, 2.0, 5.0, 7.0];
        assert_relative_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let flat = [2.0, 2.0, 2.0, 2.0];
        assert!(pearson(&x, &flat).is_none());
    }
}
