//! Stage runners. Each stage reads verified upstream artifacts (or
//! regenerates motions from recorded seeds when the pool was not
//! persisted), writes its outputs atomically and saves a provenance
//! manifest. `all` chains every stage.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use fragsurr_core::fragility::{
    self, aggregate_curves, attainment_from_exceedance, beta_eff, beta_eff_global,
    cluster_transitions, empirical_fragility, im_grid, BetaSettings, Clustered, CurveSettings,
    FragilityCurve, SurrogateDraw, Transition, TransitionRecord,
};
use fragsurr_core::gm::{self, GroundMotion};
use fragsurr_core::im::{self, ImVector, IM_NAMES};
use fragsurr_core::pca::{self, PcaModel, Retention};
use fragsurr_core::pce::{self, BootstrapPce, PceSettings};
use fragsurr_core::seeds;
use fragsurr_core::structure::{self, DamageState, ShearModel};
use rayon::prelude::*;

use crate::artifacts::*;
use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::manifest::{self, RunManifest};
use crate::plots;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Gm,
    Sim,
    Im,
    Pca,
    Train,
    Frag,
    Validate,
    All,
}

impl std::str::FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Stage> {
        Ok(match s {
            "gm" => Stage::Gm,
            "sim" => Stage::Sim,
            "im" => Stage::Im,
            "pca" => Stage::Pca,
            "train" => Stage::Train,
            "frag" => Stage::Frag,
            "validate" => Stage::Validate,
            "all" => Stage::All,
            other => return Err(PipelineError::Config(format!("unknown stage '{other}'"))),
        })
    }
}

pub struct Runner {
    pub config: PipelineConfig,
    pub out_root: PathBuf,
    config_hash: String,
}

impl Runner {
    pub fn new(config: PipelineConfig, out_root: impl Into<PathBuf>) -> Result<Runner> {
        config.validate()?;
        let hash = manifest::sha256_hex(
            toml::to_string(&config)
                .map_err(|e| PipelineError::Config(format!("config re-encode: {e}")))?
                .as_bytes(),
        );
        Ok(Runner { config, out_root: out_root.into(), config_hash: hash })
    }

    pub(crate) fn dir(&self, stage: &str) -> PathBuf {
        self.out_root.join(stage)
    }

    pub(crate) fn new_manifest(&self, stage: &str) -> RunManifest {
        RunManifest::new(stage, &self.config_hash)
    }

    /// Load the manifest of an upstream stage, verifying it was produced
    /// under the same configuration.
    fn upstream(&self, stage: &str) -> Result<RunManifest> {
        let m = RunManifest::load(&self.dir(stage))?;
        if m.config_hash != self.config_hash {
            return Err(PipelineError::StaleInput(format!(
                "{stage} artifacts were produced under a different config; rerun the {stage} stage"
            )));
        }
        Ok(m)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Gm => self.run_gm(),
            Stage::Sim => self.run_sim(),
            Stage::Im => self.run_im(),
            Stage::Pca => self.run_pca(),
            Stage::Train => self.run_train(),
            Stage::Frag => self.run_frag(),
            Stage::Validate => self.run_validate(),
            Stage::All => {
                self.run_gm()?;
                self.run_sim()?;
                self.run_im()?;
                self.run_pca()?;
                self.run_train()?;
                self.run_frag()?;
                self.run_validate()
            }
        }
    }

    // -- seeds ------------------------------------------------------------

    fn dataset_seed(&self, dataset: usize) -> u64 {
        seeds::child_seed(self.config.master_seed, "dataset", dataset as u64)
    }

    // -- gm ----------------------------------------------------------------

    fn build_pool_manifest(&self) -> PoolManifest {
        let cfg = &self.config;
        let pool_size = cfg.pool_size();
        let mut metas = Vec::with_capacity(pool_size * cfg.sequences.n_datasets);
        let mut dataset_seeds = Vec::new();
        for d in 0..cfg.sequences.n_datasets {
            let ds_seed = self.dataset_seed(d);
            dataset_seeds.push(ds_seed);
            let dataset_metas: Vec<MotionMeta> = (0..pool_size)
                .into_par_iter()
                .map(|i| {
                    let (param_seed, noise_seed) = gm::motion_seeds(ds_seed, i as u64);
                    let mut prng = seeds::rng_from_seed(param_seed);
                    let params = gm::sample_gmm_params(&cfg.gmm, &mut prng)
                        .expect("priors validated at config load");
                    let n_samples =
                        (gm::total_duration(&params) / cfg.synth.dt).round() as usize + 1;
                    MotionMeta {
                        id: format!("d{d:02}_g{i:06}"),
                        dataset: d,
                        index: i,
                        param_seed,
                        noise_seed,
                        dt: cfg.synth.dt,
                        n_samples,
                        params,
                    }
                })
                .collect();
            metas.extend(dataset_metas);
        }
        PoolManifest { master_seed: cfg.master_seed, dataset_seeds, motions: metas }
    }

    fn synthesize_from_meta(&self, meta: &MotionMeta) -> Result<GroundMotion> {
        gm::synthesize_motion(&meta.params, &self.config.synth, meta.id.clone(), meta.noise_seed)
            .map_err(PipelineError::from)
    }

    fn assemble_dataset_sequences(&self, dataset: usize) -> Result<Vec<gm::SeismicSequence>> {
        let cfg = &self.config;
        let seq_seed = seeds::child_seed(self.dataset_seed(dataset), "sequences", 0);
        let mut rng = seeds::rng_from_seed(seq_seed);
        gm::assemble_sequences(
            cfg.pool_size(),
            cfg.sequences.events_per_sequence,
            cfg.sequences.sequences_per_dataset,
            &mut rng,
            &format!("d{dataset:02}_"),
        )
        .map_err(PipelineError::from)
    }

    pub fn run_gm(&self) -> Result<()> {
        let dir = self.dir("gm");
        let mut man = self.new_manifest("gm");
        let pool = self.build_pool_manifest();
        for (d, s) in pool.dataset_seeds.iter().enumerate() {
            man.derived_seeds.insert(format!("dataset{d}"), *s);
        }
        let sequences: Vec<Vec<gm::SeismicSequence>> = (0..self.config.sequences.n_datasets)
            .map(|d| self.assemble_dataset_sequences(d))
            .collect::<Result<Vec<_>>>()?;

        if self.config.sequences.persist_motions {
            for meta in &pool.motions {
                let motion = self.synthesize_from_meta(meta)?;
                manifest::emit(
                    &mut man,
                    &dir,
                    &format!("motions/{}.csv", meta.id),
                    &motion_to_csv(&motion),
                )?;
            }
        }
        let pool_bytes = serde_json::to_vec(&pool)
            .map_err(|e| PipelineError::Data(format!("pool manifest encode: {e}")))?;
        manifest::emit(&mut man, &dir, "pool_manifest.json", &pool_bytes)?;
        let seq_bytes = serde_json::to_vec_pretty(&sequences)
            .map_err(|e| PipelineError::Data(format!("sequences encode: {e}")))?;
        manifest::emit(&mut man, &dir, "sequences.json", &seq_bytes)?;
        man.save(&dir)
    }

    fn load_pool_manifest(&self, man: &mut RunManifest) -> Result<PoolManifest> {
        let gm_man = self.upstream("gm")?;
        let bytes =
            manifest::read_verified(man, &gm_man, &self.dir("gm"), "pool_manifest.json")?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Data(format!("pool manifest decode: {e}")))
    }

    fn load_sequences(&self, man: &mut RunManifest) -> Result<Vec<Vec<gm::SeismicSequence>>> {
        let gm_man = self.upstream("gm")?;
        let bytes = manifest::read_verified(man, &gm_man, &self.dir("gm"), "sequences.json")?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Data(format!("sequences decode: {e}")))
    }

    /// Load a persisted motion (verified) or regenerate it from its seeds.
    fn motion_for(
        &self,
        gm_man: &RunManifest,
        meta: &MotionMeta,
    ) -> Result<GroundMotion> {
        let rel = format!("motions/{}.csv", meta.id);
        if let Some(expected) = gm_man.outputs.get(&rel) {
            let path = self.dir("gm").join(&rel);
            let bytes = std::fs::read(&path)
                .map_err(|_| PipelineError::Data(format!("missing artifact {}", path.display())))?;
            if manifest::sha256_hex(&bytes) != *expected {
                return Err(PipelineError::StaleInput(format!(
                    "{} does not match the gm manifest",
                    path.display()
                )));
            }
            motion_from_csv(&meta.id, meta.noise_seed, &bytes)
        } else {
            self.synthesize_from_meta(meta)
        }
    }

    // -- sim ----------------------------------------------------------------

    fn model(&self) -> Result<ShearModel> {
        structure::assemble_shear_model(self.config.structure.clone()).map_err(PipelineError::from)
    }

    pub fn run_sim(&self) -> Result<()> {
        let dir = self.dir("sim");
        let mut man = self.new_manifest("sim");
        let gm_man = self.upstream("gm")?;
        let pool = self.load_pool_manifest(&mut man)?;
        let sequences = self.load_sequences(&mut man)?;
        let model = self.model()?;
        let pool_size = self.config.pool_size();
        let thresholds = self.config.thresholds;

        let mut all_rows: Vec<EventRow> = Vec::new();
        for (d, seqs) in sequences.iter().enumerate() {
            let base = d * pool_size;
            let rows: Vec<Vec<EventRow>> = seqs
                .par_iter()
                .map(|seq| -> Result<Vec<EventRow>> {
                    let motions = seq
                        .gm_indices
                        .iter()
                        .map(|&i| self.motion_for(&gm_man, &pool.motions[base + i]))
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&GroundMotion> = motions.iter().collect();
                    let resp = structure::simulate_sequence(
                        &model,
                        &refs,
                        &seq.gm_indices,
                        &seq.id,
                        &thresholds,
                    )?;
                    Ok(resp
                        .events
                        .iter()
                        .enumerate()
                        .map(|(k, ev)| EventRow {
                            dataset: d,
                            seq_id: seq.id.clone(),
                            event_idx: k,
                            ds_init: ev.ds_init,
                            ds_final: ev.ds_final,
                            edp_peak: ev.edp,
                            gm_id: ev.gm_id.clone(),
                            gm_index: ev.gm_index,
                        })
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?;
            all_rows.extend(rows.into_iter().flatten());
        }
        manifest::emit(&mut man, &dir, "events.csv", &events_to_csv(&all_rows))?;
        man.save(&dir)
    }

    // -- im -----------------------------------------------------------------

    pub fn run_im(&self) -> Result<()> {
        let dir = self.dir("im");
        let mut man = self.new_manifest("im");
        let gm_man = self.upstream("gm")?;
        let pool = self.load_pool_manifest(&mut man)?;
        let model = self.model()?;
        let f1 = model.f1_hz();

        let rows: Vec<(String, ImVector)> = pool
            .motions
            .par_iter()
            .map(|meta| -> Result<(String, ImVector)> {
                let motion = self.motion_for(&gm_man, meta)?;
                let v = im::compute_im_vector(&motion, f1, im::SPECTRAL_DAMPING)?;
                Ok((meta.id.clone(), v))
            })
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = rows.iter().map(|(id, _)| id.clone()).collect();
        let ims: Vec<ImVector> = rows.iter().map(|(_, v)| *v).collect();
        manifest::emit(&mut man, &dir, "im_matrix.csv", &im_matrix_to_csv(&ids, &ims))?;

        // Marginal fits and correlation map.
        let fits = im::fit_marginals(&ims)?;
        #[derive(serde::Serialize)]
        struct FitJson<'a> {
            im: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            fit: Option<&'a im::MarginalFit>,
            #[serde(skip_serializing_if = "Option::is_none")]
            error: Option<String>,
        }
        let fit_rows: Vec<FitJson> = fits
            .iter()
            .map(|(name, res)| match res {
                Ok(f) => FitJson { im: name, fit: Some(f), error: None },
                Err(e) => FitJson { im: name, fit: None, error: Some(e.to_string()) },
            })
            .collect();
        let bytes = serde_json::to_vec_pretty(&fit_rows)
            .map_err(|e| PipelineError::Data(format!("marginals encode: {e}")))?;
        manifest::emit(&mut man, &dir, "marginals.json", &bytes)?;

        let corr = im::correlation_matrix(&ims)?;
        #[derive(serde::Serialize)]
        struct CorrJson {
            names: Vec<String>,
            values: Vec<Vec<f64>>,
            degenerate: Vec<usize>,
        }
        let corr_json = CorrJson {
            names: IM_NAMES.iter().map(|s| s.to_string()).collect(),
            values: corr.values,
            degenerate: corr.degenerate,
        };
        let bytes = serde_json::to_vec(&corr_json)
            .map_err(|e| PipelineError::Data(format!("correlation encode: {e}")))?;
        manifest::emit(&mut man, &dir, "correlation.json", &bytes)?;
        man.save(&dir)
    }

    pub(crate) fn load_im_matrix(&self, man: &mut RunManifest) -> Result<(Vec<String>, Vec<ImVector>)> {
        let im_man = self.upstream("im")?;
        let bytes = manifest::read_verified(man, &im_man, &self.dir("im"), "im_matrix.csv")?;
        im_matrix_from_csv(&bytes)
    }

    // -- pca ----------------------------------------------------------------

    pub fn run_pca(&self) -> Result<()> {
        let dir = self.dir("pca");
        let mut man = self.new_manifest("pca");
        let (ids, ims) = self.load_im_matrix(&mut man)?;
        let retention = if self.config.pca.auto_retention {
            Retention::Cumulative {
                target: self.config.pca.retention_target,
                cap: self.config.pca.components,
            }
        } else {
            Retention::Fixed(self.config.pca.components)
        };
        let model = pca::fit_pca(&ims, retention)?;
        let bytes = serde_json::to_vec(&model)
            .map_err(|e| PipelineError::Data(format!("pca encode: {e}")))?;
        manifest::emit(&mut man, &dir, "pca_model.json", &bytes)?;

        let mut scores_csv = String::from("gm_id");
        for c in 0..model.k {
            scores_csv.push_str(&format!(",PC{}", c + 1));
        }
        scores_csv.push('\n');
        for (id, row) in ids.iter().zip(&ims) {
            let s = model.transform_im(row)?;
            scores_csv.push_str(id);
            for v in s {
                scores_csv.push_str(&format!(",{v}"));
            }
            scores_csv.push('\n');
        }
        manifest::emit(&mut man, &dir, "scores.csv", scores_csv.as_bytes())?;

        manifest::emit(&mut man, &dir, "scree.svg", plots::scree_plot(&model).as_bytes())?;
        manifest::emit(&mut man, &dir, "biplot.svg", plots::biplot(&model, &IM_NAMES).as_bytes())?;
        man.save(&dir)
    }

    pub(crate) fn load_pca(&self, man: &mut RunManifest) -> Result<PcaModel> {
        let pca_man = self.upstream("pca")?;
        let bytes = manifest::read_verified(man, &pca_man, &self.dir("pca"), "pca_model.json")?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Data(format!("pca decode: {e}")))
    }

    pub(crate) fn load_events(&self, man: &mut RunManifest) -> Result<Vec<EventRow>> {
        let sim_man = self.upstream("sim")?;
        let bytes = manifest::read_verified(man, &sim_man, &self.dir("sim"), "events.csv")?;
        events_from_csv(&bytes)
    }

    /// Join events with IM rows into transition records (per dataset).
    pub(crate) fn build_records(
        &self,
        events: &[EventRow],
        ids: &[String],
        ims: &[ImVector],
    ) -> Result<Vec<TransitionRecord>> {
        let index: HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        events
            .iter()
            .map(|ev| {
                let im_row = index.get(ev.gm_id.as_str()).copied().ok_or_else(|| {
                    PipelineError::Data(format!("event {} references unknown motion {}", ev.seq_id, ev.gm_id))
                })?;
                Ok(TransitionRecord {
                    seq_id: ev.seq_id.clone(),
                    event_idx: ev.event_idx,
                    gm_index: im_row,
                    ds_init: ev.ds_init,
                    ds_final: ev.ds_final,
                    edp: ev.edp_peak,
                    im: ims[im_row],
                })
            })
            .collect()
    }

    // -- train --------------------------------------------------------------

    pub(crate) fn pce_settings(&self) -> PceSettings {
        PceSettings {
            max_degree: self.config.pce.max_degree,
            q_norm: self.config.pce.q_norm,
            max_interaction: self.config.pce.max_interaction,
            sp_k_grid: self.config.pce.sp_k_grid,
            fixed_k: None,
            fixed_degree: None,
            full_ls: false,
        }
    }

    /// Deterministic training subsample of the rows with the given initial
    /// state: a seeded shuffle of the row indices, truncated to the DoE size.
    fn doe_subsample(
        &self,
        records: &[TransitionRecord],
        state: DamageState,
        pca: &PcaModel,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<usize>)> {
        let rows: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].ds_init == state && records[i].ds_init != DamageState::DS2)
            .collect();
        if rows.is_empty() {
            return Err(PipelineError::Data(format!(
                "no events start in damage state {state}; cannot train its surrogate"
            )));
        }
        let mut order = rows;
        let seed = seeds::child_seed(self.config.master_seed, "doe", state.index() as u64);
        let mut rng = seeds::rng_from_seed(seed);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
        order.truncate(self.config.pce.doe_size.min(order.len()));
        let x = order
            .iter()
            .map(|&i| pca.transform_im(&records[i].im).map_err(PipelineError::from))
            .collect::<Result<Vec<_>>>()?;
        let y = order.iter().map(|&i| records[i].edp).collect();
        Ok((x, y, order))
    }

    pub fn run_train(&self) -> Result<()> {
        let dir = self.dir("train");
        let mut man = self.new_manifest("train");
        let events = self.load_events(&mut man)?;
        let (ids, ims) = self.load_im_matrix(&mut man)?;
        let pca_model = self.load_pca(&mut man)?;
        let records = self.build_records(&events, &ids, &ims)?;
        let settings = self.pce_settings();

        for state in [DamageState::DS0, DamageState::DS1] {
            let (x, y, order) = self.doe_subsample(&records, state, &pca_model)?;
            let seed =
                seeds::child_seed(self.config.master_seed, "pce", state.index() as u64);
            man.derived_seeds.insert(format!("pce_ds{state}"), seed);
            let boot = pce::bootstrap_fit(
                &x,
                &y,
                &settings,
                self.config.pce.bootstrap_replicates,
                seed,
            )?;
            let bytes = serde_json::to_vec(&boot)
                .map_err(|e| PipelineError::Data(format!("pce encode: {e}")))?;
            manifest::emit(&mut man, &dir, &format!("pce_ds{state}.json"), &bytes)?;

            let mut doe_csv = String::from("row,seq_id,event_idx,y_edp");
            for c in 0..pca_model.k {
                doe_csv.push_str(&format!(",PC{}", c + 1));
            }
            doe_csv.push('\n');
            for (row, &rec_idx) in order.iter().enumerate() {
                let rec = &records[rec_idx];
                doe_csv.push_str(&format!(
                    "{row},{},{},{}",
                    rec.seq_id, rec.event_idx, rec.edp
                ));
                for v in &x[row] {
                    doe_csv.push_str(&format!(",{v}"));
                }
                doe_csv.push('\n');
            }
            manifest::emit(&mut man, &dir, &format!("doe_ds{state}.csv"), doe_csv.as_bytes())?;
        }
        man.save(&dir)
    }

    fn load_bootstrap(&self, man: &mut RunManifest, state: DamageState) -> Result<BootstrapPce> {
        let train_man = self.upstream("train")?;
        let bytes = manifest::read_verified(
            man,
            &train_man,
            &self.dir("train"),
            &format!("pce_ds{state}.json"),
        )?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Data(format!("pce decode: {e}")))
    }

    // -- frag ---------------------------------------------------------------

    fn curve_settings(&self) -> CurveSettings {
        CurveSettings {
            grid_cells: self.config.fragility.grid_cells,
            window_cells: self.config.fragility.window_cells,
            min_count: self.config.fragility.min_window_count,
        }
    }

    pub fn run_frag(&self) -> Result<()> {
        let dir = self.dir("frag");
        let mut man = self.new_manifest("frag");
        let events = self.load_events(&mut man)?;
        let (ids, ims) = self.load_im_matrix(&mut man)?;
        let pca_model = self.load_pca(&mut man)?;
        let records = self.build_records(&events, &ids, &ims)?;
        let im_name = self.config.fragility.im.clone();
        let im_idx = im::im_index(&im_name)
            .ok_or_else(|| PipelineError::Config(format!("unknown IM '{im_name}'")))?;

        // Transition matrix over all events. Event rows are regrouped into
        // responses with motion references resolved to IM-matrix rows.
        let responses = regroup_into_responses(&events, &ids)?;
        let clustered: Clustered = cluster_transitions(&responses, &ims)?;
        let tm_json: TransitionMatrixJson = (&clustered.matrix).into();
        let bytes = serde_json::to_vec_pretty(&tm_json)
            .map_err(|e| PipelineError::Data(format!("matrix encode: {e}")))?;
        manifest::emit(&mut man, &dir, "transition_matrix.json", &bytes)?;
        manifest::emit(
            &mut man,
            &dir,
            "transition_matrix.svg",
            plots::transition_matrix(&tm_json).as_bytes(),
        )?;

        // Efficiency tables over the 41 IMs for the five transitions.
        let beta_settings = BetaSettings::default();
        let mut tables: BTreeMap<Transition, Vec<f64>> = BTreeMap::new();
        for t in Transition::OBSERVABLE {
            let recs: Vec<&TransitionRecord> =
                records.iter().filter(|r| r.transition() == t).collect();
            if recs.len() < 50 {
                return Err(PipelineError::Data(format!(
                    "transition {t} holds only {} records; beta ranking needs >= 50",
                    recs.len()
                )));
            }
            let betas: Vec<f64> = (0..41)
                .into_par_iter()
                .map(|k| {
                    let pairs: Vec<(f64, f64)> =
                        recs.iter().map(|r| (r.im.0[k], r.edp)).collect();
                    beta_eff(&pairs, &beta_settings).map_err(PipelineError::from)
                })
                .collect::<Result<Vec<_>>>()?;
            tables.insert(t, betas);
        }
        manifest::emit(&mut man, &dir, "beta_table.csv", &beta_table_to_csv(&IM_NAMES, &tables))?;
        let global = beta_eff_global(&tables, &Transition::OBSERVABLE)?;
        manifest::emit(&mut man, &dir, "beta_global.csv", &ranking_to_csv(&IM_NAMES, &global))?;

        // Shared IM grid across every curve of this run.
        let im_values: Vec<f64> = records.iter().map(|r| r.im.0[im_idx]).collect();
        let lo = im_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = im_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let grid = im_grid(lo, hi, self.config.fragility.grid_cells);
        let cs = self.curve_settings();
        let bands = self.config.fragility.band_percents.clone();

        // Brute-force curves: one per dataset (seed), aggregated bands.
        let exceedance_targets: [(DamageState, DamageState); 3] = [
            (DamageState::DS0, DamageState::DS1),
            (DamageState::DS0, DamageState::DS2),
            (DamageState::DS1, DamageState::DS2),
        ];
        let per_dataset: Vec<Vec<TransitionRecord>> = (0..self.config.sequences.n_datasets)
            .map(|d| {
                let prefix = format!("d{d:02}_");
                records
                    .iter()
                    .filter(|r| r.seq_id.starts_with(&prefix))
                    .cloned()
                    .collect()
            })
            .collect();
        let mut mcs_exceedance: BTreeMap<Transition, Vec<Vec<f64>>> = BTreeMap::new();
        for &(from, to) in &exceedance_targets {
            let t = Transition::new(from, to);
            let mut curves = Vec::new();
            for recs in &per_dataset {
                let c = empirical_fragility(recs, t, &im_name, &grid, &cs)?;
                curves.push(c.p);
            }
            mcs_exceedance.insert(t, curves);
        }
        let mcs_att =
            self.emit_curve_family(&mut man, &dir, "mcs", &grid, &mcs_exceedance, &bands, &im_name)?;

        // Surrogate curves: bootstrap ensembles against pool draws.
        let draws = self.surrogate_draws(&ims, &pca_model, im_idx)?;
        let mut pce_exceedance: BTreeMap<Transition, Vec<Vec<f64>>> = BTreeMap::new();
        let mut loaded: BTreeMap<DamageState, BootstrapPce> = BTreeMap::new();
        for &(from, to) in &exceedance_targets {
            let t = Transition::new(from, to);
            if !loaded.contains_key(&from) {
                loaded.insert(from, self.load_bootstrap(&mut man, from)?);
            }
            let members = fragility::surrogate_exceedance_members(
                &loaded[&from],
                &draws,
                &self.config.thresholds,
                t,
                &grid,
                &cs,
            )?;
            pce_exceedance.insert(t, members);
        }
        let pce_att =
            self.emit_curve_family(&mut man, &dir, "pce", &grid, &pce_exceedance, &bands, &im_name)?;

        // Fragility grid plots (five attainment panels each).
        manifest::emit(
            &mut man,
            &dir,
            "fragility_grid_mcs.svg",
            plots::fragility_grid(&grid, &mcs_att, &im_name, "brute-force MCS").as_bytes(),
        )?;
        manifest::emit(
            &mut man,
            &dir,
            "fragility_grid_pce.svg",
            plots::fragility_grid(&grid, &pce_att, &im_name, "bootstrap-PCE MCS").as_bytes(),
        )?;
        man.save(&dir)
    }

    /// Emit one curve family in exceedance and attainment forms (members
    /// banded pointwise); returns the attainment families for plotting.
    #[allow(clippy::too_many_arguments)]
    fn emit_curve_family(
        &self,
        man: &mut RunManifest,
        dir: &Path,
        prefix: &str,
        grid: &[f64],
        exceedance: &BTreeMap<Transition, Vec<Vec<f64>>>,
        band_percents: &[u8],
        im_name: &str,
    ) -> Result<BTreeMap<Transition, plots::CurveFamily>> {
        for (t, curves) in exceedance {
            let (median, bands) = aggregate_curves(curves, band_percents);
            let curve = FragilityCurve {
                im_name: im_name.to_string(),
                transition: *t,
                grid: grid.to_vec(),
                p: median,
                bands,
            };
            let name = format!("curves/{prefix}_exc_{t}.csv");
            manifest::emit(man, dir, &name, &curve_to_csv(&curve))?;
        }
        // Attainment per member, then aggregate.
        let mut families = BTreeMap::new();
        for from in [DamageState::DS0, DamageState::DS1] {
            let states: Vec<&Transition> =
                exceedance.keys().filter(|t| t.from == from).collect();
            if states.is_empty() {
                continue;
            }
            let n_members = exceedance[states[0]].len();
            let mut per_state: BTreeMap<DamageState, Vec<Vec<f64>>> = BTreeMap::new();
            for m in 0..n_members {
                let mut exc = BTreeMap::new();
                for (t, curves) in exceedance.iter().filter(|(t, _)| t.from == from) {
                    exc.insert(t.to, curves[m].clone());
                }
                let att = attainment_from_exceedance(from, &exc)?;
                for (to, p) in att {
                    per_state.entry(to).or_default().push(p);
                }
            }
            for (to, curves) in per_state {
                let (median, bands) = aggregate_curves(&curves, band_percents);
                let t = Transition::new(from, to);
                let curve = FragilityCurve {
                    im_name: im_name.to_string(),
                    transition: t,
                    grid: grid.to_vec(),
                    p: median.clone(),
                    bands: bands.clone(),
                };
                let name = format!("curves/{prefix}_att_{t}.csv");
                manifest::emit(man, dir, &name, &curve_to_csv(&curve))?;
                families.insert(t, plots::CurveFamily { members: curves, median, bands });
            }
        }
        Ok(families)
    }

    /// Monte Carlo inputs for the surrogate path: pool IM vectors projected
    /// onto the PCA basis, subsampled (with replacement when the pool is
    /// smaller than the requested draw count).
    fn surrogate_draws(
        &self,
        ims: &[ImVector],
        pca_model: &PcaModel,
        im_idx: usize,
    ) -> Result<Vec<SurrogateDraw>> {
        let want = self.config.fragility.mcs_draws.max(10_000);
        let seed = seeds::child_seed(self.config.master_seed, "mcsdraws", 0);
        let mut rng = seeds::rng_from_seed(seed);
        let mut draws = Vec::with_capacity(want);
        for _ in 0..want {
            let i = rand::Rng::gen_range(&mut rng, 0..ims.len());
            draws.push(SurrogateDraw {
                scores: pca_model.transform_im(&ims[i]).map_err(PipelineError::from)?,
                im_value: ims[i].0[im_idx],
            });
        }
        Ok(draws)
    }

    // -- validate -----------------------------------------------------------

    pub fn run_validate(&self) -> Result<()> {
        let dir = self.dir("validate");
        let mut man = self.new_manifest("validate");
        let frag_man = self.upstream("frag")?;
        let im_name = &self.config.fragility.im;
        let mut rows = Vec::new();
        let mut plots_data = Vec::new();
        for tname in &self.config.validate.transitions {
            let t: Transition = tname.parse().map_err(PipelineError::Core)?;
            let mcs = self.read_curve(&mut man, &frag_man, &format!("curves/mcs_exc_{t}.csv"))?;
            let pce = self.read_curve(&mut man, &frag_man, &format!("curves/pce_exc_{t}.csv"))?;
            if mcs.0 != pce.0 {
                return Err(PipelineError::Data(format!(
                    "curves for {t} are not on a common grid"
                )));
            }
            let ks = fragility::ks_distance(&mcs.1, &pce.1)?;
            let kl = fragility::kl_divergence(&pce.1, &mcs.1)?;
            rows.push(ValidationRow { transition: t.to_string(), im: im_name.clone(), ks, kl });
            plots_data.push((t, mcs.0.clone(), mcs.1.clone(), pce.1.clone()));
        }
        manifest::emit(&mut man, &dir, "validation.csv", &validation_to_csv(&rows))?;
        manifest::emit(
            &mut man,
            &dir,
            "comparison.svg",
            plots::validation_comparison(&plots_data, im_name).as_bytes(),
        )?;
        man.save(&dir)
    }

    fn read_curve(
        &self,
        man: &mut RunManifest,
        producer: &RunManifest,
        name: &str,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let bytes = manifest::read_verified(man, producer, &self.dir("frag"), name)?;
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let mut grid = Vec::new();
        let mut p = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| PipelineError::Data(format!("{name}: {e}")))?;
            grid.push(rec[0].parse().map_err(|e| PipelineError::Data(format!("{e}")))?);
            p.push(rec[1].parse().map_err(|e| PipelineError::Data(format!("{e}")))?);
        }
        Ok((grid, p))
    }
}

/// Rebuild per-sequence responses from flat event rows, resolving motion
/// references to IM-matrix row indices (pool indices repeat across
/// datasets, so the join must go through the globally unique motion id).
fn regroup_into_responses(
    events: &[EventRow],
    ids: &[String],
) -> Result<Vec<structure::SequenceResponse>> {
    let index: HashMap<&str, usize> =
        ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut by_seq: BTreeMap<&str, Vec<&EventRow>> = BTreeMap::new();
    for ev in events {
        by_seq.entry(ev.seq_id.as_str()).or_default().push(ev);
    }
    by_seq
        .into_iter()
        .map(|(seq_id, mut rows)| {
            rows.sort_by_key(|r| r.event_idx);
            let events = rows
                .iter()
                .map(|r| {
                    let row = index.get(r.gm_id.as_str()).copied().ok_or_else(|| {
                        PipelineError::Data(format!(
                            "event references unknown motion {}",
                            r.gm_id
                        ))
                    })?;
                    Ok(structure::EventRecord {
                        gm_index: row,
                        gm_id: r.gm_id.clone(),
                        edp: r.edp_peak,
                        ds_init: r.ds_init,
                        ds_final: r.ds_final,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(structure::SequenceResponse {
                sequence_id: seq_id.to_string(),
                events,
                envelope: Vec::new(),
                states: Vec::new(),
            })
        })
        .collect()
}
