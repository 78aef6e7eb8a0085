//! Intensity measures: the 41-component IM vector of a ground motion,
//! marginal distribution fits and the IM correlation map.
//!
//! Spectral quantities use the pseudo-spectral convention `Sv = w Sd`,
//! `Sa = w^2 Sd` at 5% damping. Integrals are trapezoid on the record
//! grid; frequency-domain measures come from the discrete Fourier
//! transform of the full record (no zero padding, so harmonic test
//! signals land on exact bins).

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gm::{GroundMotion, GRAVITY};
use crate::stats;

/// Spectral periods T1..T5 [s] for rows 4-18.
pub const SPECTRAL_PERIODS: [f64; 5] = [0.50, 0.35, 0.25, 0.15, 0.10];

/// Frequency-drop percentages of the equipment relative average spectral
/// acceleration family (rows 36-41).
pub const EASA_DROPS: [f64; 6] = [40.0, 67.0, 80.0, 100.0, 150.0, 200.0];

/// Spectral damping used for every spectral IM.
pub const SPECTRAL_DAMPING: f64 = 0.05;

/// Canonical column names of the IM vector, in table order.
pub const IM_NAMES: [&str; 41] = [
    "PGA", "PGV", "PGD", "Sd_T1", "Sd_T2", "Sd_T3", "Sd_T4", "Sd_T5", "Sv_T1", "Sv_T2", "Sv_T3",
    "Sv_T4", "Sv_T5", "Sa_T1", "Sa_T2", "Sa_T3", "Sa_T4", "Sa_T5", "IA", "Ecum", "IRGa", "IRGv",
    "Td", "RMSa", "IC", "CAV", "ICM", "ASA40", "ASI", "EPA", "Iva", "IF", "Fm", "dFm", "FASarea",
    "EASA_R40", "EASA_R67", "EASA_R80", "EASA_R100", "EASA_R150", "EASA_R200",
];

pub fn im_index(name: &str) -> Option<usize> {
    IM_NAMES.iter().position(|n| *n == name)
}

/// The 41 named intensity measures of one ground motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImVector(pub [f64; 41]);

impl ImVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        im_index(name).map(|i| self.0[i])
    }
}

// ---------------------------------------------------------------------------
// Linear SDOF response (piecewise-exact recurrence)
// ---------------------------------------------------------------------------

/// Displacement response of `u'' + 2 zeta w u' + w^2 u = -a(t)` sampled on
/// the input grid, exact for piecewise-linear `a(t)` (Nigam-Jennings
/// recurrence).
pub fn sdof_response_samples(accel: &[f64], dt: f64, omega: f64, zeta: f64) -> Vec<f64> {
    let n = accel.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    let wd = omega * (1.0 - zeta * zeta).sqrt();
    let k = omega * omega;
    let e = (-zeta * omega * dt).exp();
    let s = (wd * dt).sin();
    let c = (wd * dt).cos();
    let zq = zeta / (1.0 - zeta * zeta).sqrt();

    let a11 = e * (zq * s + c);
    let a12 = e * s / wd;
    let a21 = -e * omega / (1.0 - zeta * zeta).sqrt() * s;
    let a22 = e * (c - zq * s);

    let two_z_w_dt = 2.0 * zeta / (omega * dt);
    let b11 = (two_z_w_dt
        + e * (((1.0 - 2.0 * zeta * zeta) / (wd * dt) - zq) * s - (1.0 + two_z_w_dt) * c))
        / k;
    let b12 = (1.0 - two_z_w_dt
        + e * ((2.0 * zeta * zeta - 1.0) / (wd * dt) * s + two_z_w_dt * c))
        / k;
    let b21 = (-1.0 / dt
        + e * ((omega / (1.0 - zeta * zeta).sqrt() + zeta / (dt * (1.0 - zeta * zeta).sqrt()))
            * s
            + c / dt))
        / k;
    let b22 = (1.0 - e * (zq * s + c)) / (k * dt);

    let mut u = 0.0f64;
    let mut v = 0.0f64;
    out[0] = 0.0;
    for i in 0..n - 1 {
        let p0 = -accel[i];
        let p1 = -accel[i + 1];
        let u1 = a11 * u + a12 * v + b11 * p0 + b12 * p1;
        let v1 = a21 * u + a22 * v + b21 * p0 + b22 * p1;
        u = u1;
        v = v1;
        out[i + 1] = u;
    }
    out
}

/// Peak relative displacement and the pseudo-spectral velocity and
/// acceleration of a linear SDOF under the record.
pub fn response_spectrum(gm: &GroundMotion, period: f64, damping: f64) -> Result<(f64, f64, f64)> {
    if !(period > 0.0) {
        return Err(Error::Config(format!("period must be > 0, got {period}")));
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::Config(format!("damping must be in (0,1), got {damping}")));
    }
    let omega = std::f64::consts::TAU / period;
    let u = sdof_response_samples(&gm.samples, gm.dt, omega, damping);
    let sd = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((sd, omega * sd, omega * omega * sd))
}

fn spectral_accel_at_freq(gm: &GroundMotion, freq_hz: f64, damping: f64) -> f64 {
    let omega = std::f64::consts::TAU * freq_hz;
    let u = sdof_response_samples(&gm.samples, gm.dt, omega, damping);
    let sd = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    omega * omega * sd
}

/// Trapezoid integral of `f` over [lo, hi] with `n` nodes.
fn integrate_band(lo: f64, hi: f64, n: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    debug_assert!(n >= 2 && hi > lo);
    let h = (hi - lo) / (n - 1) as f64;
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..n - 1 {
        acc += f(lo + i as f64 * h);
    }
    acc * h
}

// ---------------------------------------------------------------------------
// Husid curve
// ---------------------------------------------------------------------------

/// Cumulative Arias integral and the crossing time of fraction `p`.
fn husid_crossing(cum: &[f64], dt: f64, p: f64) -> f64 {
    let total = *cum.last().unwrap();
    let target = p * total;
    let i = cum.iter().position(|c| *c >= target).unwrap_or(cum.len() - 1);
    if i == 0 {
        return 0.0;
    }
    let (c0, c1) = (cum[i - 1], cum[i]);
    if c1 > c0 {
        dt * ((i - 1) as f64 + (target - c0) / (c1 - c0))
    } else {
        dt * i as f64
    }
}

/// Significant duration: time between fractions `lo` and `hi` of the final
/// cumulative Arias integral.
pub fn husid_duration(gm: &GroundMotion, lo: f64, hi: f64) -> Result<f64> {
    let a2: Vec<f64> = gm.samples.iter().map(|a| a * a).collect();
    let cum = stats::cumtrapz(&a2, gm.dt);
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::UndefinedIm(format!(
            "Husid duration of zero-energy motion {}",
            gm.id
        )));
    }
    Ok(husid_crossing(&cum, gm.dt, hi) - husid_crossing(&cum, gm.dt, lo))
}

// ---------------------------------------------------------------------------
// Fourier quantities
// ---------------------------------------------------------------------------

struct Spectrum {
    /// One-sided amplitudes scaled by dt (continuous-transform convention).
    amp: Vec<f64>,
    /// Bin frequencies [Hz].
    freq: Vec<f64>,
}

fn one_sided_spectrum(samples: &[f64], dt: f64) -> Spectrum {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> =
        samples.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2 + 1;
    let df = 1.0 / (n as f64 * dt);
    let amp = buf[..half].iter().map(|c| c.norm() * dt).collect();
    let freq = (0..half).map(|k| k as f64 * df).collect();
    Spectrum { amp, freq }
}

/// Power-weighted mean frequency of the one-sided spectrum, DC excluded.
fn mean_frequency(spec: &Spectrum) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (f, a) in spec.freq.iter().zip(&spec.amp).skip(1) {
        let p = a * a;
        num += f * p;
        den += p;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Slope of the least-squares line through the short-time mean frequency,
/// 1 s windows whose midpoints fall inside [t05, t95].
fn mean_frequency_rate(gm: &GroundMotion, t05: f64, t95: f64) -> f64 {
    let win = (1.0 / gm.dt).round() as usize;
    if win < 4 || gm.samples.len() < 2 * win {
        return 0.0;
    }
    let mut ts = Vec::new();
    let mut fs = Vec::new();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(win);
    let df = 1.0 / (win as f64 * gm.dt);
    let mut start = 0;
    while start + win <= gm.samples.len() {
        let mid = (start as f64 + 0.5 * win as f64) * gm.dt;
        if mid >= t05 && mid <= t95 {
            let mut buf: Vec<Complex<f64>> =
                gm.samples[start..start + win].iter().map(|v| Complex::new(*v, 0.0)).collect();
            fft.process(&mut buf);
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, c) in buf.iter().enumerate().take(win / 2 + 1).skip(1) {
                let p = c.norm_sqr();
                num += k as f64 * df * p;
                den += p;
            }
            if den > 0.0 {
                ts.push(mid);
                fs.push(num / den);
            }
        }
        start += win;
    }
    if ts.len() < 2 {
        return 0.0;
    }
    stats::linear_fit(&ts, &fs).0
}

// ---------------------------------------------------------------------------
// The 41-component vector
// ---------------------------------------------------------------------------

/// Band edge ratio X_f of the E-ASA family. The printed `X_f = 1 - R/100`
/// is non-positive for R >= 100; those rows use the period-elongation
/// reading `X_f = 1 / (1 + R/100)` instead.
pub fn easa_band_ratio(drop_percent: f64) -> f64 {
    if drop_percent < 100.0 {
        1.0 - drop_percent / 100.0
    } else {
        1.0 / (1.0 + drop_percent / 100.0)
    }
}

const BAND_NODES: usize = 25;

/// Compute all 41 intensity measures. `f1_hz` is the fundamental frequency
/// of the structural model the motion will excite.
pub fn compute_im_vector(gm: &GroundMotion, f1_hz: f64, damping: f64) -> Result<ImVector> {
    gm.validate()?;
    if !(f1_hz > 0.0) {
        return Err(Error::Config(format!("f1 must be > 0, got {f1_hz}")));
    }
    let dt = gm.dt;
    let a = &gm.samples;
    let pga = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if pga == 0.0 {
        return Err(Error::UndefinedIm(format!("IM vector of zero motion {}", gm.id)));
    }
    let vel = stats::cumtrapz(a, dt);
    let disp = stats::cumtrapz(&vel, dt);
    let pgv = vel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pgd = disp.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let a2: Vec<f64> = a.iter().map(|x| x * x).collect();
    let cum = stats::cumtrapz(&a2, dt);
    let total_a2 = *cum.last().unwrap();
    let arias = std::f64::consts::PI / (2.0 * GRAVITY) * total_a2;
    let ecum = total_a2;
    let t05 = husid_crossing(&cum, dt, 0.05);
    let t95 = husid_crossing(&cum, dt, 0.95);
    let td = t95 - t05;
    let rms = (a2.iter().sum::<f64>() / a.len() as f64).sqrt();
    let ic = rms.powf(1.5) * td.sqrt();
    let abs_a: Vec<f64> = a.iter().map(|x| x.abs()).collect();
    let cav = stats::trapz(&abs_a, dt);
    let icm = 2.0 * GRAVITY / std::f64::consts::PI * arias / (pga * pgv);

    let mut sd = [0.0f64; 5];
    let mut sv = [0.0f64; 5];
    let mut sa = [0.0f64; 5];
    for (i, t) in SPECTRAL_PERIODS.iter().enumerate() {
        let (d, v, acc) = response_spectrum(gm, *t, damping)?;
        sd[i] = d;
        sv[i] = v;
        sa[i] = acc;
    }

    // Period-band integral shared by ASI and EPA (rows 29-30, same band).
    let asi = integrate_band(0.1, 0.5, 21, |t| {
        let omega = std::f64::consts::TAU / t;
        let u = sdof_response_samples(a, dt, omega, damping);
        omega * omega * u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    });
    let epa = asi / 2.5;

    // Frequency-band averages.
    let asa40 = 2.5 / f1_hz
        * integrate_band(0.6 * f1_hz, f1_hz, 17, |f| spectral_accel_at_freq(gm, f, damping));
    let mut easa = [0.0f64; 6];
    for (i, r) in EASA_DROPS.iter().enumerate() {
        let xf = easa_band_ratio(*r);
        let lo = xf * f1_hz;
        let integral =
            integrate_band(lo, f1_hz, BAND_NODES, |f| spectral_accel_at_freq(gm, f, damping));
        easa[i] = integral / (f1_hz * (1.0 - xf)).abs();
    }

    let spec = one_sided_spectrum(a, dt);
    let fm = mean_frequency(&spec);
    let dfm = mean_frequency_rate(gm, t05, t95);
    let fas_df = 0.5;
    let fas_lo = (f1_hz - 2.0 * fas_df).max(spec.freq[0]);
    let fas_hi = (f1_hz + 2.0 * fas_df).min(*spec.freq.last().unwrap());
    let mut fas_int = 0.0;
    for k in 0..spec.freq.len() - 1 {
        let (f0, f1b) = (spec.freq[k], spec.freq[k + 1]);
        if f1b < fas_lo || f0 > fas_hi {
            continue;
        }
        let lo = f0.max(fas_lo);
        let hi = f1b.min(fas_hi);
        let y0 = spec.amp[k] + (spec.amp[k + 1] - spec.amp[k]) * (lo - f0) / (f1b - f0);
        let y1 = spec.amp[k] + (spec.amp[k + 1] - spec.amp[k]) * (hi - f0) / (f1b - f0);
        fas_int += 0.5 * (y0 + y1) * (hi - lo);
    }
    let fas_area = fas_int / (4.0 * fas_df);

    let mut v = [0.0f64; 41];
    v[0] = pga;
    v[1] = pgv;
    v[2] = pgd;
    v[3..8].copy_from_slice(&sd);
    v[8..13].copy_from_slice(&sv);
    v[13..18].copy_from_slice(&sa);
    v[18] = arias;
    v[19] = ecum;
    v[20] = pga * td.powf(1.0 / 3.0);
    v[21] = pgv.powf(2.0 / 3.0) * td.powf(1.0 / 3.0);
    v[22] = td;
    v[23] = rms;
    v[24] = ic;
    v[25] = cav;
    v[26] = icm;
    v[27] = asa40;
    v[28] = asi;
    v[29] = epa;
    v[30] = pgv / pga;
    v[31] = pgv * td.powf(0.25);
    v[32] = fm;
    v[33] = dfm;
    v[34] = fas_area;
    v[35..41].copy_from_slice(&easa);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite IM for motion {}", gm.id)));
    }
    Ok(ImVector(v))
}

// ---------------------------------------------------------------------------
// Marginal fits (Appendix-style distribution models per IM)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginalFamily {
    Gaussian,
    LogNormal,
    Gamma,
    Gumbel,
    GumbelMin,
    Exponential,
}

impl MarginalFamily {
    pub const ALL: [MarginalFamily; 6] = [
        MarginalFamily::Gaussian,
        MarginalFamily::LogNormal,
        MarginalFamily::Gamma,
        MarginalFamily::Gumbel,
        MarginalFamily::GumbelMin,
        MarginalFamily::Exponential,
    ];
}

/// A fitted marginal: family, its natural parameters and the sample moments
/// the parameters were matched to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    pub family: MarginalFamily,
    pub params: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub log_likelihood: f64,
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn log_likelihood(family: MarginalFamily, params: &[f64], data: &[f64]) -> f64 {
    let mut ll = 0.0;
    match family {
        MarginalFamily::Gaussian => {
            let (mu, sigma) = (params[0], params[1]);
            let c = -(sigma.ln()) - 0.5 * (std::f64::consts::TAU).ln();
            for x in data {
                let z = (x - mu) / sigma;
                ll += c - 0.5 * z * z;
            }
        }
        MarginalFamily::LogNormal => {
            let (mu, sigma) = (params[0], params[1]);
            let c = -(sigma.ln()) - 0.5 * (std::f64::consts::TAU).ln();
            for x in data {
                let lx = x.ln();
                let z = (lx - mu) / sigma;
                ll += c - lx - 0.5 * z * z;
            }
        }
        MarginalFamily::Gamma => {
            let (rate, shape) = (params[0], params[1]);
            let c = shape * rate.ln() - ln_gamma(shape);
            for x in data {
                ll += c + (shape - 1.0) * x.ln() - rate * x;
            }
        }
        MarginalFamily::Gumbel => {
            let (mu, beta) = (params[0], params[1]);
            for x in data {
                let z = (x - mu) / beta;
                ll += -beta.ln() - z - (-z).exp();
            }
        }
        MarginalFamily::GumbelMin => {
            let (mu, beta) = (params[0], params[1]);
            for x in data {
                let z = (x - mu) / beta;
                ll += -beta.ln() + z - z.exp();
            }
        }
        MarginalFamily::Exponential => {
            let rate = params[0];
            for x in data {
                ll += rate.ln() - rate * x;
            }
        }
    }
    ll
}

/// Moment-matched parameters of one family; `None` when the family does not
/// support the sample (e.g. non-positive data for lognormal).
fn moment_match(family: MarginalFamily, mean: f64, sd: f64, min: f64) -> Option<Vec<f64>> {
    match family {
        MarginalFamily::Gaussian => Some(vec![mean, sd]),
        MarginalFamily::LogNormal => {
            if min <= 0.0 || mean <= 0.0 {
                return None;
            }
            let s2 = (1.0 + (sd / mean).powi(2)).ln();
            Some(vec![mean.ln() - 0.5 * s2, s2.sqrt()])
        }
        MarginalFamily::Gamma => {
            if min <= 0.0 || mean <= 0.0 {
                return None;
            }
            let shape = (mean / sd).powi(2);
            let rate = mean / (sd * sd);
            Some(vec![rate, shape])
        }
        MarginalFamily::Gumbel => {
            let beta = sd * 6.0f64.sqrt() / std::f64::consts::PI;
            Some(vec![mean - EULER_GAMMA * beta, beta])
        }
        MarginalFamily::GumbelMin => {
            let beta = sd * 6.0f64.sqrt() / std::f64::consts::PI;
            Some(vec![mean + EULER_GAMMA * beta, beta])
        }
        MarginalFamily::Exponential => {
            if min < 0.0 || mean <= 0.0 {
                return None;
            }
            Some(vec![1.0 / mean])
        }
    }
}

/// Fit all candidate families by moment matching, select by maximum
/// log-likelihood over the sample.
pub fn fit_marginal(data: &[f64]) -> Result<MarginalFit> {
    if data.len() < 2 {
        return Err(Error::Fit("marginal fit needs at least 2 samples".into()));
    }
    let mean = stats::mean(data);
    let sd = stats::std_dev(data);
    if !(sd > 0.0) {
        return Err(Error::Fit("degenerate (zero-variance) column".into()));
    }
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut best: Option<MarginalFit> = None;
    for family in MarginalFamily::ALL {
        if let Some(params) = moment_match(family, mean, sd, min) {
            let ll = log_likelihood(family, &params, data);
            if !ll.is_finite() {
                continue;
            }
            if best.as_ref().map_or(true, |b| ll > b.log_likelihood) {
                best = Some(MarginalFit { family, params, mean, sd, log_likelihood: ll });
            }
        }
    }
    best.ok_or_else(|| Error::Fit("no candidate family admits the sample".into()))
}

/// Moments implied by the stored parameters (used to verify consistency).
pub fn implied_moments(fit: &MarginalFit) -> (f64, f64) {
    match fit.family {
        MarginalFamily::Gaussian => (fit.params[0], fit.params[1]),
        MarginalFamily::LogNormal => {
            let (mu, s) = (fit.params[0], fit.params[1]);
            let m = (mu + 0.5 * s * s).exp();
            (m, m * ((s * s).exp() - 1.0).sqrt())
        }
        MarginalFamily::Gamma => {
            let (rate, shape) = (fit.params[0], fit.params[1]);
            (shape / rate, shape.sqrt() / rate)
        }
        MarginalFamily::Gumbel => {
            let (mu, beta) = (fit.params[0], fit.params[1]);
            (mu + EULER_GAMMA * beta, std::f64::consts::PI * beta / 6.0f64.sqrt())
        }
        MarginalFamily::GumbelMin => {
            let (mu, beta) = (fit.params[0], fit.params[1]);
            (mu - EULER_GAMMA * beta, std::f64::consts::PI * beta / 6.0f64.sqrt())
        }
        MarginalFamily::Exponential => (1.0 / fit.params[0], 1.0 / fit.params[0]),
    }
}

/// Fit every IM column; degenerate columns report their error.
pub fn fit_marginals(rows: &[ImVector]) -> Result<Vec<(String, Result<MarginalFit>)>> {
    if rows.len() < 100 {
        return Err(Error::Sizing(format!(
            "marginal fits need >= 100 rows, got {}",
            rows.len()
        )));
    }
    Ok((0..41)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
            (IM_NAMES[j].to_string(), fit_marginal(&col))
        })
        .collect())
}

/// Pearson correlation matrix of the IM columns. Zero-variance columns are
/// flagged and their entries set to NaN.
pub struct CorrelationMatrix {
    pub values: Vec<Vec<f64>>,
    pub degenerate: Vec<usize>,
}

pub fn correlation_matrix(rows: &[ImVector]) -> Result<CorrelationMatrix> {
    if rows.len() < 2 {
        return Err(Error::Sizing("correlation needs >= 2 rows".into()));
    }
    let cols: Vec<Vec<f64>> =
        (0..41).map(|j| rows.iter().map(|r| r.0[j]).collect()).collect();
    let degenerate: Vec<usize> =
        (0..41).filter(|j| stats::variance(&cols[*j]) <= 0.0).collect();
    let mut values = vec![vec![f64::NAN; 41]; 41];
    for i in 0..41 {
        for j in i..41 {
            let v = if i == j && !degenerate.contains(&i) {
                Some(1.0)
            } else {
                stats::pearson(&cols[i], &cols[j])
            };
            if let Some(r) = v {
                values[i][j] = r;
                values[j][i] = r;
            }
        }
    }
    Ok(CorrelationMatrix { values, degenerate })
}
