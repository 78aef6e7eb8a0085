//! Artifact encodings: CSV for tabular data, JSON for models and maps.
//! All encoders are deterministic byte-for-byte for a given input.

use fragsurr_core::fragility::{FragilityCurve, TransitionMatrix};
use fragsurr_core::gm::{GmmParams, GroundMotion};
use fragsurr_core::im::{ImVector, IM_NAMES};
use fragsurr_core::structure::DamageState;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

fn fmt(v: f64) -> String {
    // Shortest round-trip form keeps files compact and reread-exact.
    format!("{v}")
}

// ---------------------------------------------------------------------------
// Ground motions
// ---------------------------------------------------------------------------

pub fn motion_to_csv(gm: &GroundMotion) -> Vec<u8> {
    let mut out = String::with_capacity(gm.samples.len() * 16);
    out.push_str("t,accel_ms2\n");
    for (i, a) in gm.samples.iter().enumerate() {
        out.push_str(&fmt(gm.time(i)));
        out.push(',');
        out.push_str(&fmt(*a));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn motion_from_csv(id: &str, seed: u64, bytes: &[u8]) -> Result<GroundMotion> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Data(format!("motion {id}: {e}")))?;
        let t: f64 = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PipelineError::Data(format!("motion {id}: bad t field")))?;
        let a: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PipelineError::Data(format!("motion {id}: bad accel field")))?;
        times.push(t);
        samples.push(a);
    }
    if samples.len() < 2 {
        return Err(PipelineError::Data(format!("motion {id}: fewer than 2 samples")));
    }
    let dt = times[1] - times[0];
    let gm = GroundMotion { id: id.to_string(), dt, samples, seed };
    gm.validate().map_err(PipelineError::from)?;
    Ok(gm)
}

/// Per-motion entry of the pool manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionMeta {
    pub id: String,
    pub dataset: usize,
    pub index: usize,
    pub param_seed: u64,
    pub noise_seed: u64,
    pub dt: f64,
    pub n_samples: usize,
    pub params: GmmParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolManifest {
    pub master_seed: u64,
    pub dataset_seeds: Vec<u64>,
    pub motions: Vec<MotionMeta>,
}

// ---------------------------------------------------------------------------
// Event records
// ---------------------------------------------------------------------------

/// One simulated event row of `events.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub dataset: usize,
    pub seq_id: String,
    pub event_idx: usize,
    pub ds_init: DamageState,
    pub ds_final: DamageState,
    pub edp_peak: f64,
    pub gm_id: String,
    /// Pool index of the motion within its dataset.
    pub gm_index: usize,
}

pub fn events_to_csv(rows: &[EventRow]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("dataset,seq_id,event_idx,ds_init,ds_final,edp_peak,gm_id,gm_index\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.seq_id,
            r.event_idx,
            r.ds_init.index(),
            r.ds_final.index(),
            fmt(r.edp_peak),
            r.gm_id,
            r.gm_index
        ));
    }
    out.into_bytes()
}

pub fn events_from_csv(bytes: &[u8]) -> Result<Vec<EventRow>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Data(format!("events.csv: {e}")))?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| PipelineError::Data(format!("events.csv: missing column {i}")))
        };
        let ds = |s: &str| -> Result<DamageState> {
            s.parse::<usize>()
                .ok()
                .and_then(DamageState::from_index)
                .ok_or_else(|| PipelineError::Data(format!("events.csv: bad damage state '{s}'")))
        };
        rows.push(EventRow {
            dataset: field(0)?.parse().map_err(|e| PipelineError::Data(format!("{e}")))?,
            seq_id: field(1)?.to_string(),
            event_idx: field(2)?.parse().map_err(|e| PipelineError::Data(format!("{e}")))?,
            ds_init: ds(field(3)?)?,
            ds_final: ds(field(4)?)?,
            edp_peak: field(5)?.parse().map_err(|e| PipelineError::Data(format!("{e}")))?,
            gm_id: field(6)?.to_string(),
            gm_index: field(7)?.parse().map_err(|e| PipelineError::Data(format!("{e}")))?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// IM matrix
// ---------------------------------------------------------------------------

pub fn im_matrix_to_csv(ids: &[String], rows: &[ImVector]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("gm_id,");
    out.push_str(&IM_NAMES.join(","));
    out.push('\n');
    for (id, row) in ids.iter().zip(rows) {
        out.push_str(id);
        for v in row.0 {
            out.push(',');
            out.push_str(&fmt(v));
        }
        out.push('\n');
    }
    out.into_bytes()
}

pub fn im_matrix_from_csv(bytes: &[u8]) -> Result<(Vec<String>, Vec<ImVector>)> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr.headers().map_err(|e| PipelineError::Data(format!("im csv: {e}")))?;
    if headers.len() != 42 || &headers[0] != "gm_id" {
        return Err(PipelineError::Data("im csv: unexpected header".into()));
    }
    for (k, name) in IM_NAMES.iter().enumerate() {
        if &headers[k + 1] != *name {
            return Err(PipelineError::Data(format!(
                "im csv: column {} is '{}', expected '{name}'",
                k + 1,
                &headers[k + 1]
            )));
        }
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Data(format!("im csv: {e}")))?;
        ids.push(rec[0].to_string());
        let mut v = [0.0f64; 41];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k + 1]
                .parse()
                .map_err(|e| PipelineError::Data(format!("im csv: {e}")))?;
        }
        rows.push(ImVector(v));
    }
    Ok((ids, rows))
}

// ---------------------------------------------------------------------------
// Fragility curves, rankings, matrices
// ---------------------------------------------------------------------------

pub fn curve_to_csv(curve: &FragilityCurve) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("im_value,p,q01,q10,q50,q90,q99\n");
    let band = |p: u8, k: usize| -> String {
        curve.bands.get(&p).map(|b| fmt(b[k])).unwrap_or_default()
    };
    for k in 0..curve.grid.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt(curve.grid[k]),
            fmt(curve.p[k]),
            band(1, k),
            band(10, k),
            band(50, k),
            band(90, k),
            band(99, k)
        ));
    }
    out.into_bytes()
}

pub fn ranking_to_csv(names: &[&str], global: &[f64]) -> Vec<u8> {
    let mut order: Vec<usize> = (0..global.len()).collect();
    order.sort_by(|&a, &b| global[a].partial_cmp(&global[b]).unwrap());
    let mut out = String::new();
    out.push_str("rank,im,beta_eff_global\n");
    for (rank, &i) in order.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", rank + 1, names[i], fmt(global[i])));
    }
    out.into_bytes()
}

pub fn beta_table_to_csv(
    names: &[&str],
    tables: &std::collections::BTreeMap<fragsurr_core::fragility::Transition, Vec<f64>>,
) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("im");
    for t in tables.keys() {
        out.push_str(&format!(",beta_{t}"));
    }
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for table in tables.values() {
            out.push(',');
            out.push_str(&fmt(table[i]));
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionMatrixJson {
    pub counts: [[u64; 3]; 3],
    pub percentages: [[f64; 3]; 3],
    pub total: u64,
}

impl From<&TransitionMatrix> for TransitionMatrixJson {
    fn from(m: &TransitionMatrix) -> Self {
        TransitionMatrixJson { counts: m.counts, percentages: m.percentages(), total: m.total() }
    }
}

/// Validation row (one transition): distances between brute-force and
/// surrogate median exceedance curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRow {
    pub transition: String,
    pub im: String,
    pub ks: f64,
    pub kl: f64,
}

pub fn validation_to_csv(rows: &[ValidationRow]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("transition,im,ks,kl\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.transition, r.im, fmt(r.ks), fmt(r.kl)));
    }
    out.into_bytes()
}

pub fn validation_from_csv(bytes: &[u8]) -> Result<Vec<ValidationRow>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Data(format!("validation.csv: {e}")))?;
        rows.push(ValidationRow {
            transition: rec[0].to_string(),
            im: rec[1].to_string(),
            ks: rec[2].parse().map_err(|e| PipelineError::Data(format!("{e}")))?,
            kl: rec[3].parse().map_err(|e| PipelineError::Data(format!("{e}")))?,
        });
    }
    Ok(rows)
}
