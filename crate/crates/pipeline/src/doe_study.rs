//! Error-vs-DoE-size study: refit the surrogate on nested training sizes
//! and track empirical, leave-one-out and generalization errors against a
//! held-out validation slice.

use fragsurr_core::pce;
use fragsurr_core::seeds;
use fragsurr_core::structure::DamageState;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::manifest;
use crate::plots;
use crate::stages::Runner;

pub const DEFAULT_SIZES: [usize; 7] = [50, 100, 150, 200, 250, 350, 500];
const VALIDATION_CAP: usize = 5000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoeStudyRow {
    pub state: String,
    pub n: usize,
    pub eps_emp: f64,
    pub eps_loo: f64,
    pub eps_gen: f64,
    pub repeats: usize,
}

pub fn rows_to_csv(rows: &[DoeStudyRow]) -> Vec<u8> {
    let mut out = String::from("state,n,eps_emp,eps_loo,eps_gen,repeats\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.state, r.n, r.eps_emp, r.eps_loo, r.eps_gen, r.repeats
        ));
    }
    out.into_bytes()
}

/// Run the study for both initial states on the artifacts of a finished
/// `train`-stage run. Returns the averaged rows (also written to
/// `doe_study/` with a plot per state).
pub fn run_doe_study(runner: &Runner, sizes: &[usize], repeats: usize) -> Result<Vec<DoeStudyRow>> {
    let dir = runner.dir("doe_study");
    let mut man = runner.new_manifest("doe_study");
    let events = runner.load_events(&mut man)?;
    let (ids, ims) = runner.load_im_matrix(&mut man)?;
    let pca_model = runner.load_pca(&mut man)?;
    let records = runner.build_records(&events, &ids, &ims)?;
    let settings = runner.pce_settings();

    let mut all_rows = Vec::new();
    for state in [DamageState::DS0, DamageState::DS1] {
        let pool: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].ds_init == state)
            .collect();
        let max_n = sizes.iter().copied().max().unwrap_or(0);
        if pool.len() < max_n + 50 {
            return Err(PipelineError::Data(format!(
                "DoE study for state {state} needs >= {} rows plus validation, found {}",
                max_n,
                pool.len()
            )));
        }
        let x_all: Vec<Vec<f64>> = pool
            .iter()
            .map(|&i| pca_model.transform_im(&records[i].im).map_err(PipelineError::from))
            .collect::<Result<Vec<_>>>()?;
        let y_all: Vec<f64> = pool.iter().map(|&i| records[i].edp).collect();

        for &n in sizes {
            let mut acc = (0.0, 0.0, 0.0);
            let mut used = 0usize;
            for rep in 0..repeats {
                let seed = seeds::child_seed(
                    runner.config.master_seed,
                    "doe_study",
                    (state.index() * 1000 + rep) as u64 * 4096 + n as u64,
                );
                let mut rng = seeds::rng_from_seed(seed);
                let mut order: Vec<usize> = (0..pool.len()).collect();
                for i in (1..order.len()).rev() {
                    let j = rand::Rng::gen_range(&mut rng, 0..=i);
                    order.swap(i, j);
                }
                let train_idx = &order[..n];
                let val_idx = &order[n..(n + VALIDATION_CAP).min(order.len())];
                let xt: Vec<Vec<f64>> = train_idx.iter().map(|&i| x_all[i].clone()).collect();
                let yt: Vec<f64> = train_idx.iter().map(|&i| y_all[i]).collect();
                let xv: Vec<Vec<f64>> = val_idx.iter().map(|&i| x_all[i].clone()).collect();
                let yv: Vec<f64> = val_idx.iter().map(|&i| y_all[i]).collect();
                let model = match pce::fit_pce(&xt, &yt, &settings) {
                    Ok(m) => m,
                    Err(_) => continue,
                };
                let report = pce::compute_errors(&model, &xt, &yt, Some((&xv, &yv)))?;
                if report.eps_loo.is_finite() {
                    acc.0 += report.eps_emp;
                    acc.1 += report.eps_loo;
                    acc.2 += report.eps_gen.unwrap_or(f64::NAN);
                    used += 1;
                }
            }
            if used == 0 {
                return Err(PipelineError::Numerical(format!(
                    "every repeat failed for state {state} at N={n}"
                )));
            }
            all_rows.push(DoeStudyRow {
                state: format!("DS{state}"),
                n,
                eps_emp: acc.0 / used as f64,
                eps_loo: acc.1 / used as f64,
                eps_gen: acc.2 / used as f64,
                repeats: used,
            });
        }
    }

    manifest::emit(&mut man, &dir, "errors.csv", &rows_to_csv(&all_rows))?;
    for state in ["DS0", "DS1"] {
        let rows: Vec<&DoeStudyRow> = all_rows.iter().filter(|r| r.state == state).collect();
        if rows.is_empty() {
            continue;
        }
        let series = vec![
            ("eps_emp".to_string(), rows.iter().map(|r| r.eps_emp).collect::<Vec<_>>()),
            ("eps_loo".to_string(), rows.iter().map(|r| r.eps_loo).collect::<Vec<_>>()),
            ("eps_gen".to_string(), rows.iter().map(|r| r.eps_gen).collect::<Vec<_>>()),
        ];
        let svg = plots::error_vs_doe(
            sizes,
            &series,
            0.10,
            &format!("surrogate errors vs DoE size ({state})"),
        );
        manifest::emit(&mut man, &dir, &format!("errors_{state}.svg"), svg.as_bytes())?;
    }
    man.save(&dir)?;
    Ok(all_rows)
}
