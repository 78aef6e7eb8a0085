//! State-dependent fragility estimation: transition clustering, IM
//! efficiency ranking, nonparametric curve fitting and validation metrics.
//!
//! Exceedance curves are estimated by sliding-window binomial fractions on
//! a log-spaced IM grid followed by isotonic (pool-adjacent-violators)
//! projection; attainment-form curves are differences of consecutive
//! exceedance curves, so the closure identity holds by construction.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::im::ImVector;
use crate::pca::PcaModel;
use crate::pce::BootstrapPce;
use crate::stats;
use crate::structure::{classify_damage, DamageState, DamageThresholds, SequenceResponse};

/// Ordered (initial, final) damage pair of one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub from: DamageState,
    pub to: DamageState,
}

impl Transition {
    pub const fn new(from: DamageState, to: DamageState) -> Self {
        Transition { from, to }
    }

    /// The five observable (non-absorbing) transitions.
    pub const OBSERVABLE: [Transition; 5] = [
        Transition::new(DamageState::DS0, DamageState::DS0),
        Transition::new(DamageState::DS0, DamageState::DS1),
        Transition::new(DamageState::DS0, DamageState::DS2),
        Transition::new(DamageState::DS1, DamageState::DS1),
        Transition::new(DamageState::DS1, DamageState::DS2),
    ];
}

impl std::fmt::Display for Transition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.from.index(), self.to.index())
    }
}

impl std::str::FromStr for Transition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("bad transition '{s}', expected like '0-1'")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .ok()
                .and_then(DamageState::from_index)
                .ok_or_else(|| Error::Config(format!("bad damage state '{t}'")))
        };
        Ok(Transition::new(parse(a)?, parse(b)?))
    }
}

/// One event with its damage labels, response and input intensity measures.
#[derive(Debug, Clone)]
pub struct TransitionRecord {
    pub seq_id: String,
    pub event_idx: usize,
    pub gm_index: usize,
    pub ds_init: DamageState,
    pub ds_final: DamageState,
    pub edp: f64,
    pub im: ImVector,
}

impl TransitionRecord {
    pub fn transition(&self) -> Transition {
        Transition::new(self.ds_init, self.ds_final)
    }
}

/// 3x3 counts over (initial, final) damage states.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl TransitionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn percentages(&self) -> [[f64; 3]; 3] {
        let total = self.total().max(1) as f64;
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = 100.0 * self.counts[i][j] as f64 / total;
            }
        }
        out
    }

    /// Recovery (lower-triangle) entries must be empty.
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..i {
                if self.counts[i][j] != 0 {
                    return Err(Error::Numerical(format!(
                        "recovery transition {i}-{j} observed; labels must be monotone"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Clustered batch: per-event records and the tally matrix.
#[derive(Debug, Clone)]
pub struct Clustered {
    pub records: Vec<TransitionRecord>,
    pub matrix: TransitionMatrix,
}

/// Cluster sequence responses into transition records; `ims[gm_index]` is
/// the IM vector of the motion driving each event.
pub fn cluster_transitions(responses: &[SequenceResponse], ims: &[ImVector]) -> Result<Clustered> {
    if responses.is_empty() {
        return Err(Error::Sizing("cluster needs a nonempty batch".into()));
    }
    let mut records = Vec::new();
    let mut matrix = TransitionMatrix::default();
    for resp in responses {
        for (idx, ev) in resp.events.iter().enumerate() {
            let im = *ims.get(ev.gm_index).ok_or_else(|| {
                Error::MissingData(format!("no IM vector for motion index {}", ev.gm_index))
            })?;
            matrix.counts[ev.ds_init.index()][ev.ds_final.index()] += 1;
            records.push(TransitionRecord {
                seq_id: resp.sequence_id.clone(),
                event_idx: idx,
                gm_index: ev.gm_index,
                ds_init: ev.ds_init,
                ds_final: ev.ds_final,
                edp: ev.edp,
                im,
            });
        }
    }
    matrix.validate()?;
    Ok(Clustered { records, matrix })
}

/// Input/output pairs for surrogate training, clustered by initial state.
/// Absorbing-state events never appear (their initial state is DS2).
#[derive(Debug, Clone)]
pub struct DesignOfExperiments {
    pub state: DamageState,
    /// Pseudo-IM scores per event.
    pub x: Vec<Vec<f64>>,
    /// Event EDP per row.
    pub y: Vec<f64>,
    /// IM value used as fragility abscissa per row.
    pub im_values: Vec<f64>,
}

pub fn design_of_experiments(
    records: &[TransitionRecord],
    state: DamageState,
    pca: &PcaModel,
    im_name: &str,
) -> Result<DesignOfExperiments> {
    let im_idx = crate::im::im_index(im_name)
        .ok_or_else(|| Error::Config(format!("unknown IM '{im_name}'")))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut im_values = Vec::new();
    for rec in records.iter().filter(|r| r.ds_init == state) {
        x.push(pca.transform_im(&rec.im)?);
        y.push(rec.edp);
        im_values.push(rec.im.0[im_idx]);
    }
    Ok(DesignOfExperiments { state, x, y, im_values })
}

// ---------------------------------------------------------------------------
// IM efficiency criterion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSettings {
    /// Relative half-width of the window around each IM quantile.
    pub window: f64,
    /// Records required per window before accepting it.
    pub min_records: usize,
    /// Doublings attempted before giving up on a sparse window.
    pub max_widenings: usize,
}

impl Default for BetaSettings {
    fn default() -> Self {
        BetaSettings { window: 0.10, min_records: 30, max_widenings: 6 }
    }
}

/// Conditional-dispersion efficiency index of one IM on one transition
/// cluster: at the 25/50/75% quantiles of the IM marginal, the 10-90%
/// inter-quantile range of EDP inside a relative window around the
/// quantile, normalized by the window median EDP, summed over the three
/// quantiles. Zero means the IM explains the EDP without scatter.
pub fn beta_eff(pairs: &[(f64, f64)], settings: &BetaSettings) -> Result<f64> {
    if pairs.len() < 50 {
        return Err(Error::Sizing(format!(
            "beta_eff needs >= 50 records, got {}",
            pairs.len()
        )));
    }
    let mut by_im = pairs.to_vec();
    by_im.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let ims: Vec<f64> = by_im.iter().map(|p| p.0).collect();
    let span = ims[ims.len() - 1] - ims[0];
    let mut total = 0.0;
    for q in [0.25, 0.50, 0.75] {
        let xq = stats::quantile_sorted(&ims, q);
        let mut w = settings.window;
        let mut widenings = 0usize;
        let edps: Vec<f64> = loop {
            let (lo, hi) = if xq.abs() > 0.0 {
                (xq - w * xq.abs(), xq + w * xq.abs())
            } else {
                (xq - w * span, xq + w * span)
            };
            let start = ims.partition_point(|v| *v < lo);
            let end = ims.partition_point(|v| *v <= hi);
            let count = end - start;
            if count >= settings.min_records || widenings >= settings.max_widenings {
                if count == 0 {
                    return Err(Error::UndefinedIm(format!(
                        "empty window around IM quantile {q} after widening"
                    )));
                }
                break by_im[start..end].iter().map(|p| p.1).collect();
            }
            w *= 2.0;
            widenings += 1;
        };
        let mut sorted = edps;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let iqr = stats::quantile_sorted(&sorted, 0.90) - stats::quantile_sorted(&sorted, 0.10);
        let med = stats::quantile_sorted(&sorted, 0.50);
        total += if med > 0.0 { iqr / med } else if iqr > 0.0 { iqr } else { 0.0 };
    }
    Ok(total)
}

/// Global efficiency: per transition, each IM's index normalized by the
/// transition's total over all IMs, then summed across transitions. Lower
/// is better; the argmin is the global optimal IM.
pub fn beta_eff_global(
    tables: &BTreeMap<Transition, Vec<f64>>,
    required: &[Transition],
) -> Result<Vec<f64>> {
    let missing: Vec<String> =
        required.iter().filter(|t| !tables.contains_key(t)).map(|t| t.to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingData(format!(
            "beta_eff tables missing transitions: {}",
            missing.join(", ")
        )));
    }
    let n_ims = tables.values().next().map(|v| v.len()).unwrap_or(0);
    if tables.values().any(|v| v.len() != n_ims) || n_ims == 0 {
        return Err(Error::Dimension("beta tables must share the IM axis".into()));
    }
    let mut global = vec![0.0; n_ims];
    for t in required {
        let row = &tables[t];
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Numerical(format!("transition {t} has zero total beta")));
        }
        for (g, b) in global.iter_mut().zip(row) {
            *g += b / sum;
        }
    }
    Ok(global)
}

// ---------------------------------------------------------------------------
// Nonparametric curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSettings {
    pub grid_cells: usize,
    /// Window half-width in grid cells.
    pub window_cells: usize,
    /// Records required per window before adaptive widening stops.
    pub min_count: usize,
}

impl Default for CurveSettings {
    fn default() -> Self {
        CurveSettings { grid_cells: 200, window_cells: 20, min_count: 10 }
    }
}

/// Log-spaced grid between lo and hi (falls back to linear when lo <= 0).
pub fn im_grid(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    assert!(cells >= 2 && hi > lo);
    if lo > 0.0 {
        let (a, b) = (lo.ln(), hi.ln());
        (0..cells).map(|i| (a + (b - a) * i as f64 / (cells - 1) as f64).exp()).collect()
    } else {
        (0..cells).map(|i| lo + (hi - lo) * i as f64 / (cells - 1) as f64).collect()
    }
}

/// Precomputed sliding windows over records sorted by IM. The window of a
/// grid cell spans `window_cells` cells on each side, widened until it
/// holds `min_count` records (or covers everything). Window geometry is
/// independent of the exceedance flags, so one estimator serves many
/// replicate flag vectors.
pub struct WindowedEstimator {
    /// Sort permutation: sorted position -> original record index.
    order: Vec<usize>,
    /// Half-open index ranges into the sorted order, one per grid cell.
    windows: Vec<(usize, usize)>,
    pub grid: Vec<f64>,
    counts: Vec<f64>,
}

impl WindowedEstimator {
    pub fn new(ims: &[f64], grid: Vec<f64>, settings: &CurveSettings) -> Result<Self> {
        if ims.is_empty() {
            return Err(Error::Sizing("windowed estimator needs records".into()));
        }
        let mut order: Vec<usize> = (0..ims.len()).collect();
        order.sort_by(|&a, &b| ims[a].partial_cmp(&ims[b]).unwrap());
        let sorted: Vec<f64> = order.iter().map(|&i| ims[i]).collect();
        let cells = grid.len();
        let mut windows = Vec::with_capacity(cells);
        let mut counts = Vec::with_capacity(cells);
        for k in 0..cells {
            let mut half = settings.window_cells;
            let (start, end) = loop {
                let lo = grid[k.saturating_sub(half)];
                let hi = grid[(k + half).min(cells - 1)];
                let start = sorted.partition_point(|v| *v < lo);
                let end = sorted.partition_point(|v| *v <= hi);
                if end - start >= settings.min_count || (half >= cells && start == 0) {
                    break (start, end);
                }
                half *= 2;
            };
            counts.push((end - start) as f64);
            windows.push((start, end));
        }
        Ok(WindowedEstimator { order, windows, grid, counts })
    }

    /// Windowed binomial fractions of `exceed` (indexed like the original
    /// records), isotonically projected to a non-decreasing curve.
    pub fn curve(&self, exceed: &[bool]) -> Vec<f64> {
        // Prefix sums over the sorted order make each window O(1).
        let mut prefix = Vec::with_capacity(self.order.len() + 1);
        prefix.push(0u32);
        let mut acc = 0u32;
        for &i in &self.order {
            acc += u32::from(exceed[i]);
            prefix.push(acc);
        }
        let raw: Vec<f64> = self
            .windows
            .iter()
            .map(|&(s, e)| {
                if e > s {
                    f64::from(prefix[e] - prefix[s]) / (e - s) as f64
                } else {
                    0.0
                }
            })
            .collect();
        stats::isotonic(&raw, &self.counts)
    }
}

/// Monotone probability-vs-IM curve with optional quantile bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragilityCurve {
    pub im_name: String,
    pub transition: Transition,
    pub grid: Vec<f64>,
    /// Point estimate (the median curve for ensembles).
    pub p: Vec<f64>,
    /// Percent level -> pointwise quantile curve (e.g. 1, 10, 50, 90, 99).
    pub bands: BTreeMap<u8, Vec<f64>>,
}

impl FragilityCurve {
    pub fn validate_monotone(&self) -> Result<()> {
        for w in self.p.windows(2) {
            if w[1] < w[0] - 1e-9 {
                return Err(Error::Numerical("fragility curve is not monotone".into()));
            }
        }
        Ok(())
    }
}

/// Pointwise quantile bands over an ensemble of curves; the 50% band is the
/// point estimate.
pub fn aggregate_curves(
    curves: &[Vec<f64>],
    band_percents: &[u8],
) -> (Vec<f64>, BTreeMap<u8, Vec<f64>>) {
    assert!(!curves.is_empty());
    let cells = curves[0].len();
    let mut bands: BTreeMap<u8, Vec<f64>> =
        band_percents.iter().map(|p| (*p, vec![0.0; cells])).collect();
    let mut median = vec![0.0; cells];
    let mut buf = vec![0.0; curves.len()];
    for k in 0..cells {
        for (b, c) in curves.iter().enumerate() {
            buf[b] = c[k];
        }
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        median[k] = stats::quantile_sorted(&buf, 0.5);
        for (p, band) in bands.iter_mut() {
            band[k] = stats::quantile_sorted(&buf, f64::from(*p) / 100.0);
        }
    }
    (median, bands)
}

/// Exceedance-form empirical fragility: probability that an event starting
/// in `transition.from` ends at or beyond `transition.to`, as a function of
/// the chosen IM.
pub fn empirical_fragility(
    records: &[TransitionRecord],
    transition: Transition,
    im_name: &str,
    grid: &[f64],
    settings: &CurveSettings,
) -> Result<FragilityCurve> {
    let im_idx = crate::im::im_index(im_name)
        .ok_or_else(|| Error::Config(format!("unknown IM '{im_name}'")))?;
    let pool: Vec<&TransitionRecord> =
        records.iter().filter(|r| r.ds_init == transition.from).collect();
    if pool.len() < 100 {
        return Err(Error::Sizing(format!(
            "empirical fragility needs >= 100 records with initial state {}, got {}",
            transition.from,
            pool.len()
        )));
    }
    let ims: Vec<f64> = pool.iter().map(|r| r.im.0[im_idx]).collect();
    let exceed: Vec<bool> = pool.iter().map(|r| r.ds_final >= transition.to).collect();
    let est = WindowedEstimator::new(&ims, grid.to_vec(), settings)?;
    let p = est.curve(&exceed);
    Ok(FragilityCurve {
        im_name: im_name.to_string(),
        transition,
        grid: grid.to_vec(),
        p,
        bands: BTreeMap::new(),
    })
}

/// Attainment-form curves for one initial state from its exceedance curves:
/// `P[DS = j | i] = P[DS >= j | i] - P[DS >= j+1 | i]`, with the permanence
/// curve `P[DS = i | i] = 1 - P[DS >= i+1 | i]`. The rows sum to one at
/// every grid point by construction.
pub fn attainment_from_exceedance(
    initial: DamageState,
    exceedance: &BTreeMap<DamageState, Vec<f64>>,
) -> Result<BTreeMap<DamageState, Vec<f64>>> {
    let cells = exceedance
        .values()
        .next()
        .map(|v| v.len())
        .ok_or_else(|| Error::MissingData("no exceedance curves".into()))?;
    let zero = vec![0.0; cells];
    let curve_for = |s: usize| -> &Vec<f64> {
        DamageState::from_index(s).and_then(|ds| exceedance.get(&ds)).unwrap_or(&zero)
    };
    let mut out = BTreeMap::new();
    for j in initial.index()..3 {
        let values: Vec<f64> = if j == initial.index() {
            curve_for(j + 1).iter().map(|g| 1.0 - g).collect()
        } else {
            let g = curve_for(j);
            let g_next = curve_for(j + 1);
            g.iter().zip(g_next).map(|(a, b)| a - b).collect()
        };
        out.insert(DamageState::from_index(j).unwrap(), values);
    }
    Ok(out)
}

/// One Monte Carlo draw for the surrogate path: pseudo-IM input plus the
/// fragility abscissa value.
#[derive(Debug, Clone)]
pub struct SurrogateDraw {
    pub scores: Vec<f64>,
    pub im_value: f64,
}

/// Final state implied by a predicted event EDP given the initial state.
pub fn final_state(initial: DamageState, edp: f64, thresholds: &DamageThresholds) -> DamageState {
    let from_edp = classify_damage(edp, thresholds);
    from_edp.max(initial)
}

/// Per-replicate exceedance curves of the surrogate path: each bootstrap
/// replicate predicts the EDP of every draw, classifies the outcome and
/// yields one windowed-binomial isotonic curve.
pub fn surrogate_exceedance_members(
    boot: &BootstrapPce,
    draws: &[SurrogateDraw],
    thresholds: &DamageThresholds,
    transition: Transition,
    grid: &[f64],
    settings: &CurveSettings,
) -> Result<Vec<Vec<f64>>> {
    if draws.len() < 10_000 {
        return Err(Error::Sizing(format!(
            "surrogate fragility needs >= 1e4 draws, got {}",
            draws.len()
        )));
    }
    let ims: Vec<f64> = draws.iter().map(|d| d.im_value).collect();
    let est = WindowedEstimator::new(&ims, grid.to_vec(), settings)?;
    let x: Vec<Vec<f64>> = draws.iter().map(|d| d.scores.clone()).collect();
    boot.replicates
        .par_iter()
        .map(|model| {
            let pred = model.predict_batch(&x)?;
            let exceed: Vec<bool> = pred
                .iter()
                .map(|y| final_state(transition.from, *y, thresholds) >= transition.to)
                .collect();
            Ok(est.curve(&exceed))
        })
        .collect()
}

/// Surrogate-based fragility with bootstrap bands: pointwise quantiles
/// across the replicate curves, the median as the point estimate.
pub fn surrogate_fragility(
    boot: &BootstrapPce,
    draws: &[SurrogateDraw],
    thresholds: &DamageThresholds,
    transition: Transition,
    im_name: &str,
    grid: &[f64],
    settings: &CurveSettings,
    band_percents: &[u8],
) -> Result<FragilityCurve> {
    let curves =
        surrogate_exceedance_members(boot, draws, thresholds, transition, grid, settings)?;
    let (median, bands) = aggregate_curves(&curves, band_percents);
    Ok(FragilityCurve {
        im_name: im_name.to_string(),
        transition,
        grid: grid.to_vec(),
        p: median,
        bands,
    })
}

// ---------------------------------------------------------------------------
// Distribution distances
// ---------------------------------------------------------------------------

fn curve_to_pmf(curve: &[f64]) -> Result<Vec<f64>> {
    if curve.len() < 2 {
        return Err(Error::Sizing("curve must have >= 2 points".into()));
    }
    for w in curve.windows(2) {
        if w[1] < w[0] - 1e-9 {
            return Err(Error::Numerical(
                "KL needs monotone curves; apply the isotonic step first".into(),
            ));
        }
    }
    if curve.iter().any(|p| !(-1e-9..=1.0 + 1e-9).contains(p)) {
        return Err(Error::Numerical("curve values must lie in [0, 1]".into()));
    }
    // Masses: below-grid head, per-cell increments, above-grid tail;
    // additive smoothing keeps the logarithms finite.
    let mut pmf = Vec::with_capacity(curve.len() + 1);
    pmf.push(curve[0].clamp(0.0, 1.0));
    for w in curve.windows(2) {
        pmf.push((w[1] - w[0]).max(0.0));
    }
    pmf.push((1.0 - curve[curve.len() - 1]).clamp(0.0, 1.0));
    let smoothed: Vec<f64> = pmf.iter().map(|m| m + 1e-12).collect();
    let total: f64 = smoothed.iter().sum();
    Ok(smoothed.into_iter().map(|m| m / total).collect())
}

/// Discrete Kullback-Leibler divergence between the probability masses
/// obtained by differencing two monotone curves along their shared grid.
pub fn kl_divergence(p_curve: &[f64], q_curve: &[f64]) -> Result<f64> {
    if p_curve.len() != q_curve.len() {
        return Err(Error::Dimension("KL curves must share the grid".into()));
    }
    let p = curve_to_pmf(p_curve)?;
    let q = curve_to_pmf(q_curve)?;
    Ok(p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum())
}

/// Kolmogorov-Smirnov distance: sup-norm of the pointwise difference.
pub fn ks_distance(f1: &[f64], f2: &[f64]) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::Dimension("KS curves must share the grid".into()));
    }
    Ok(f1.iter().zip(f2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn im_with(pga: f64) -> ImVector {
        let mut v = [0.0; 41];
        v[0] = pga;
        ImVector(v)
    }

    fn record(ds_init: DamageState, ds_final: DamageState, edp: f64, pga: f64) -> TransitionRecord {
        TransitionRecord {
            seq_id: "s".into(),
            event_idx: 0,
            gm_index: 0,
            ds_init,
            ds_final,
            edp,
            im: im_with(pga),
        }
    }

    #[test]
    fn transition_parsing_round_trips() {
        for t in Transition::OBSERVABLE {
            let s = t.to_string();
            let back: Transition = s.parse().unwrap();
            assert_eq!(t, back);
        }
        assert!("3-1".parse::<Transition>().is_err());
        assert!("x".parse::<Transition>().is_err());
    }

    #[test]
    fn matrix_percentages_sum_to_hundred() {
        let mut m = TransitionMatrix::default();
        m.counts[0][0] = 3;
        m.counts[0][1] = 5;
        m.counts[1][2] = 9;
        m.counts[2][2] = 2;
        let sum: f64 = m.percentages().iter().flatten().sum();
        assert!((sum - 100.0).abs() < 0.01);
        m.validate().unwrap();
        m.counts[1][0] = 1;
        assert!(m.validate().is_err());
    }

    #[test]
    fn beta_eff_is_zero_for_deterministic_atoms() {
        // IM takes three distinct values; EDP is a deterministic function of
        // IM, so each quantile window holds one atom with zero scatter.
        let mut pairs = Vec::new();
        for im in [1.0, 2.0, 3.0] {
            for _ in 0..40 {
                pairs.push((im, 0.004 * im));
            }
        }
        let beta = beta_eff(&pairs, &BetaSettings::default()).unwrap();
        assert_eq!(beta, 0.0);
    }

    #[test]
    fn beta_eff_ranks_informative_ims_first() {
        let mut rng = seeds::rng_from_seed(1);
        let n = 600;
        let edp: Vec<f64> = (0..n).map(|_| rng.gen_range(0.002..0.03)).collect();
        // Perfect IM: proportional to EDP. Noisy IM: weak signal.
        // Useless IM: independent of EDP.
        let perfect: Vec<(f64, f64)> = edp.iter().map(|y| (y * 100.0, *y)).collect();
        let noisy: Vec<(f64, f64)> = edp
            .iter()
            .map(|y| {
                let e: f64 = StandardNormal.sample(&mut rng);
                ((y * 100.0 * (1.0 + 0.2 * e)).abs(), *y)
            })
            .collect();
        let useless: Vec<(f64, f64)> =
            edp.iter().map(|y| (rng.gen_range(0.5..3.0), *y)).collect();
        let s = BetaSettings::default();
        let b_perfect = beta_eff(&perfect, &s).unwrap();
        let b_noisy = beta_eff(&noisy, &s).unwrap();
        let b_useless = beta_eff(&useless, &s).unwrap();
        assert!(b_perfect < b_noisy, "{b_perfect} !< {b_noisy}");
        assert!(b_noisy < b_useless, "{b_noisy} !< {b_useless}");
    }

    #[test]
    fn beta_eff_requires_enough_records() {
        let pairs = vec![(1.0, 0.01); 49];
        assert!(matches!(beta_eff(&pairs, &BetaSettings::default()), Err(Error::Sizing(_))));
    }

    #[test]
    fn global_beta_normalizes_per_transition() {
        use DamageState::*;
        let mut tables = BTreeMap::new();
        // All IMs identical within each transition: every normalized entry
        // is 1/n, so the global index is (#transitions)/n for each IM.
        let n = 41;
        for t in Transition::OBSERVABLE {
            tables.insert(t, vec![2.5; n]);
        }
        let global = beta_eff_global(&tables, &Transition::OBSERVABLE).unwrap();
        for g in &global {
            assert_relative_eq!(*g, 5.0 / 41.0, epsilon = 1e-10);
        }
        // Missing transition is an error listing it.
        tables.remove(&Transition::new(DS1, DS2));
        let err = beta_eff_global(&tables, &Transition::OBSERVABLE).unwrap_err();
        assert!(err.to_string().contains("1-2"));
    }

    #[test]
    fn global_beta_single_transition_matches_local_ranking() {
        let mut tables = BTreeMap::new();
        let local = vec![0.3, 0.1, 0.6];
        let t = Transition::new(DamageState::DS0, DamageState::DS1);
        tables.insert(t, local.clone());
        let global = beta_eff_global(&tables, &[t]).unwrap();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            idx
        };
        assert_eq!(rank(&global), rank(&local));
    }

    #[test]
    fn cluster_counts_the_four_event_example() {
        use crate::structure::{label_events, DamageThresholds, EventRecord};
        let th = DamageThresholds::default();
        let edps = [0.001, 0.006, 0.003, 0.025];
        let labels = label_events(&edps, &th);
        let events: Vec<EventRecord> = edps
            .iter()
            .zip(&labels)
            .enumerate()
            .map(|(i, (edp, (a, b)))| EventRecord {
                gm_index: i,
                gm_id: format!("g{i}"),
                edp: *edp,
                ds_init: *a,
                ds_final: *b,
            })
            .collect();
        let resp = SequenceResponse {
            sequence_id: "s0".into(),
            events,
            envelope: vec![],
            states: vec![],
        };
        let ims: Vec<ImVector> = (0..4).map(|i| im_with(1.0 + i as f64)).collect();
        let clustered = cluster_transitions(&[resp], &ims).unwrap();
        use DamageState::*;
        assert_eq!(clustered.matrix.counts[DS0.index()][DS0.index()], 1);
        assert_eq!(clustered.matrix.counts[DS0.index()][DS1.index()], 1);
        assert_eq!(clustered.matrix.counts[DS1.index()][DS1.index()], 1);
        assert_eq!(clustered.matrix.counts[DS1.index()][DS2.index()], 1);
        assert_eq!(clustered.matrix.total(), 4);
    }

    #[test]
    fn exceedance_extremes() {
        use DamageState::*;
        let mut records = Vec::new();
        let mut rng = seeds::rng_from_seed(2);
        for _ in 0..200 {
            let pga = rng.gen_range(0.5..5.0);
            records.push(record(DS0, DS2, 0.03, pga));
        }
        let grid = im_grid(0.5, 5.0, 50);
        let s = CurveSettings { grid_cells: 50, window_cells: 5, min_count: 5 };
        let all = empirical_fragility(
            &records,
            Transition::new(DS0, DS1),
            "PGA",
            &grid,
            &s,
        )
        .unwrap();
        assert!(all.p.iter().all(|p| (*p - 1.0).abs() < 1e-12));
        for r in &mut records {
            r.ds_final = DS0;
        }
        let none =
            empirical_fragility(&records, Transition::new(DS0, DS1), "PGA", &grid, &s).unwrap();
        assert!(none.p.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn attainment_rows_close_to_one_and_order() {
        use DamageState::*;
        let mut rng = seeds::rng_from_seed(3);
        let mut records = Vec::new();
        for _ in 0..3000 {
            let pga: f64 = rng.gen_range(0.2..6.0);
            // Larger PGA drives larger drift with scatter.
            let e: f64 = StandardNormal.sample(&mut rng);
            let edp = (0.004 * pga * (1.0 + 0.35 * e).abs()).max(1e-5);
            let th = DamageThresholds::default();
            records.push(record(DS0, classify_damage(edp, &th), edp, pga));
        }
        let grid = im_grid(0.2, 6.0, 120);
        let s = CurveSettings { grid_cells: 120, window_cells: 12, min_count: 10 };
        let g1 = empirical_fragility(&records, Transition::new(DS0, DS1), "PGA", &grid, &s)
            .unwrap()
            .p;
        let g2 = empirical_fragility(&records, Transition::new(DS0, DS2), "PGA", &grid, &s)
            .unwrap()
            .p;
        // Ordering: exceeding DS2 implies exceeding DS1.
        for (a, b) in g2.iter().zip(&g1) {
            assert!(a <= &(b + 1e-12));
        }
        let mut exc = BTreeMap::new();
        exc.insert(DS1, g1);
        exc.insert(DS2, g2);
        let att = attainment_from_exceedance(DS0, &exc).unwrap();
        for k in 0..grid.len() {
            let total: f64 = att.values().map(|c| c[k]).sum();
            assert!((total - 1.0).abs() <= 1e-12);
            for c in att.values() {
                assert!(c[k] >= -1e-12);
            }
        }
    }

    #[test]
    fn windowed_curve_matches_naive_recount() {
        // Production sliding windows + isotonic vs an exhaustive per-grid
        // point recount of the same windows, on a smooth synthetic set.
        let mut rng = seeds::rng_from_seed(4);
        let n = 2000;
        let ims: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1f64..4.0)).collect();
        let exceed: Vec<bool> = ims
            .iter()
            .map(|x| {
                let p = 1.0 / (1.0 + (-3.0 * (x - 2.0)).exp());
                rng.gen::<f64>() < p
            })
            .collect();
        let settings = CurveSettings { grid_cells: 100, window_cells: 10, min_count: 10 };
        let grid = im_grid(0.1, 4.0, settings.grid_cells);
        let est = WindowedEstimator::new(&ims, grid.clone(), &settings).unwrap();
        let curve = est.curve(&exceed);

        // Naive oracle: re-scan every record for every grid cell.
        let mut naive = Vec::new();
        for k in 0..grid.len() {
            let mut half = settings.window_cells;
            let (mut cnt, mut exc);
            loop {
                let lo = grid[k.saturating_sub(half)];
                let hi = grid[(k + half).min(grid.len() - 1)];
                cnt = 0usize;
                exc = 0usize;
                for (x, e) in ims.iter().zip(&exceed) {
                    if *x >= lo && *x <= hi {
                        cnt += 1;
                        exc += usize::from(*e);
                    }
                }
                if cnt >= settings.min_count || half >= grid.len() {
                    break;
                }
                half *= 2;
            }
            naive.push(exc as f64 / cnt.max(1) as f64);
        }
        let sup = curve
            .iter()
            .zip(&naive)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 0.02, "sup deviation {sup}");
        // And the curve is monotone.
        for w in curve.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn kl_and_ks_basics() {
        let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let f1: Vec<f64> = grid.iter().map(|x| x.powi(2)).collect();
        assert_eq!(kl_divergence(&f1, &f1).unwrap(), 0.0);
        assert_eq!(ks_distance(&f1, &f1).unwrap(), 0.0);
        let f2: Vec<f64> = grid.iter().map(|x| x.sqrt()).collect();
        assert!(kl_divergence(&f1, &f2).unwrap() >= 0.0);
        assert!(kl_divergence(&f2, &f1).unwrap() >= 0.0);
        // Unit steps at different grid points are KS distance 1.
        let step_a: Vec<f64> = (0..50).map(|i| if i >= 10 { 1.0 } else { 0.0 }).collect();
        let step_b: Vec<f64> = (0..50).map(|i| if i >= 40 { 1.0 } else { 0.0 }).collect();
        assert_eq!(ks_distance(&step_a, &step_b).unwrap(), 1.0);
        // Non-monotone input is rejected.
        let bad = vec![0.0, 0.5, 0.3, 1.0];
        assert!(kl_divergence(&bad, &bad).is_err());
    }

    #[test]
    fn kl_nonnegative_on_random_monotone_pairs() {
        let mut rng = seeds::rng_from_seed(5);
        for _ in 0..50 {
            let mut a: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
            let mut b: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let kl = kl_divergence(&a, &b).unwrap();
            assert!(kl >= -1e-12, "KL = {kl}");
        }
    }

    #[test]
    fn final_state_respects_absorption_and_initial() {
        use DamageState::*;
        let th = DamageThresholds::default();
        assert_eq!(final_state(DS0, 0.001, &th), DS0);
        assert_eq!(final_state(DS0, 0.006, &th), DS1);
        assert_eq!(final_state(DS1, 0.001, &th), DS1);
        assert_eq!(final_state(DS1, 0.03, &th), DS2);
        assert_eq!(final_state(DS2, 0.0, &th), DS2);
    }

    #[test]
    fn surrogate_bands_are_nested_and_collapse_when_noiseless() {
        use crate::pce::{bootstrap_fit, InputTransform, PceSettings};
        use DamageState::*;
        let mut rng = seeds::rng_from_seed(6);
        let n_train = 150;
        // Deterministic EDP inside the basis span (linear in the
        // transformed input): every bootstrap replicate recovers the exact
        // model, so the ensemble degenerates.
        let x: Vec<Vec<f64>> = (0..n_train).map(|_| vec![rng.gen_range(0.1f64..4.0)]).collect();
        let tr = InputTransform::fit(&x).unwrap();
        let truth = |row: &[f64]| 0.004 * (tr.apply(row).unwrap()[0] + 3.0);
        let y: Vec<f64> = x.iter().map(|r| truth(r)).collect();
        let settings = PceSettings {
            max_degree: 1,
            q_norm: 1.0,
            max_interaction: 1,
            full_ls: true,
            ..Default::default()
        };
        let boot = bootstrap_fit(&x, &y, &settings, 12, 7).unwrap();
        let draws: Vec<SurrogateDraw> = (0..12_000)
            .map(|_| {
                let v = rng.gen_range(0.1f64..4.0);
                SurrogateDraw { scores: vec![v], im_value: v }
            })
            .collect();
        let grid = im_grid(0.1, 4.0, 80);
        let cs = CurveSettings { grid_cells: 80, window_cells: 8, min_count: 10 };
        let th = DamageThresholds::default();
        let curve = surrogate_fragility(
            &boot,
            &draws,
            &th,
            Transition::new(DS0, DS1),
            "PGA",
            &grid,
            &cs,
            &[1, 10, 50, 90, 99],
        )
        .unwrap();
        curve.validate_monotone().unwrap();
        // Nested bands.
        let order = [1u8, 10, 50, 90, 99];
        for k in 0..grid.len() {
            for w in order.windows(2) {
                assert!(curve.bands[&w[0]][k] <= curve.bands[&w[1]][k] + 1e-12);
            }
        }
        // Degenerate ensemble: bands collapse onto the median.
        let max_spread: f64 = (0..grid.len())
            .map(|k| curve.bands[&99][k] - curve.bands[&1][k])
            .fold(0.0, f64::max);
        assert!(max_spread < 1e-9, "noiseless bands spread {max_spread}");
        // And the median coincides with the empirical curve of the same
        // generator on the same draws.
        let records: Vec<TransitionRecord> = draws
            .iter()
            .map(|d| {
                let edp = truth(&d.scores);
                record(DS0, classify_damage(edp, &th), edp, d.im_value)
            })
            .collect();
        let emp =
            empirical_fragility(&records, Transition::new(DS0, DS1), "PGA", &grid, &cs).unwrap();
        let ks = ks_distance(&curve.p, &emp.p).unwrap();
        assert!(ks < 1e-9, "noiseless surrogate vs empirical KS = {ks}");
    }
}
