use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fragsurr_pipeline::doe_study;
use fragsurr_pipeline::stages::{Runner, Stage};
use fragsurr_pipeline::{PipelineConfig, PipelineError};

/// State-dependent seismic fragility pipeline.
#[derive(Parser)]
#[command(name = "fragsurr", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct StageArgs {
    /// TOML configuration file; omitted means built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run output root directory.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
    /// Override the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: FRAGSURR_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ground-motion generation.
    Gm {
        #[command(subcommand)]
        sub: GmCmd,
    },
    /// Nonlinear time-history simulation of the assembled sequences.
    Sim(StageArgs),
    /// Intensity-measure extraction, marginal fits and correlation map.
    Im(StageArgs),
    /// PCA reduction of the IM matrix.
    Pca(StageArgs),
    /// Train the bootstrap surrogates (alias of `pce train`).
    Train(StageArgs),
    /// Polynomial-chaos surrogate commands.
    Pce {
        #[command(subcommand)]
        sub: PceCmd,
    },
    /// Transition clustering, IM ranking and fragility curves.
    Frag(StageArgs),
    /// Brute-force vs surrogate validation metrics.
    Validate(StageArgs),
    /// Run every stage in order.
    All(StageArgs),
    /// Error-vs-DoE-size study on a finished run.
    DoeStudy {
        #[command(flatten)]
        stage: StageArgs,
        /// Training sizes to evaluate.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Repeats per size (subsample reshuffles).
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Re-emit a plot from existing artifacts.
    Plot {
        #[command(flatten)]
        stage: StageArgs,
        /// One of: scree, biplot, transition_matrix, fragility_grid, error_vs_doe.
        #[arg(long)]
        kind: String,
    },
}

#[derive(Subcommand)]
enum GmCmd {
    /// Generate the motion pool and sequence assignments.
    Gen(StageArgs),
}

#[derive(Subcommand)]
enum PceCmd {
    /// Fit the per-state bootstrap surrogates from simulated artifacts.
    Train(StageArgs),
    /// Evaluate a stored surrogate on a CSV of pseudo-IM score rows.
    Predict {
        /// Stored model JSON (train stage output).
        #[arg(long)]
        model: PathBuf,
        /// Input CSV: one row per point, `PC1,...,PCk` columns.
        #[arg(long)]
        input: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads(requested: Option<usize>) {
    let n = requested
        .or_else(|| std::env::var("FRAGSURR_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_config(args: &StageArgs) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn run_stage(args: &StageArgs, stage: Stage) -> Result<(), PipelineError> {
    init_threads(args.threads);
    let cfg = load_config(args)?;
    let runner = Runner::new(cfg, &args.out)?;
    runner.run(stage)
}

fn predict(model: &PathBuf, input: &PathBuf, out: &PathBuf) -> Result<(), PipelineError> {
    let bytes = std::fs::read(model)
        .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", model.display())))?;
    let boot: fragsurr_core::pce::BootstrapPce = serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Data(format!("model decode: {e}")))?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", input.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("PC") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| PipelineError::Data(format!("input line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    let preds = boot.full.predict_batch(&rows)?;
    let quantiles = boot.predict_quantiles(&rows, &[0.01, 0.10, 0.50, 0.90, 0.99])?;
    let mut csv = String::from("prediction,q01,q10,q50,q90,q99\n");
    for (p, q) in preds.iter().zip(&quantiles) {
        csv.push_str(&format!("{p},{},{},{},{},{}\n", q[0], q[1], q[2], q[3], q[4]));
    }
    fragsurr_pipeline::manifest::write_atomic(out, csv.as_bytes())
}

fn replot(args: &StageArgs, kind: &str) -> Result<(), PipelineError> {
    use fragsurr_pipeline::{artifacts, manifest, plots};
    let cfg = load_config(args)?;
    let runner = Runner::new(cfg, &args.out)?;
    match kind {
        "scree" | "biplot" => {
            let mut man = runner.new_manifest("plot");
            let model = runner.load_pca(&mut man)?;
            let svg = if kind == "scree" {
                plots::scree_plot(&model)
            } else {
                plots::biplot(&model, &fragsurr_core::im::IM_NAMES)
            };
            manifest::write_atomic(&args.out.join(format!("{kind}.svg")), svg.as_bytes())
        }
        "transition_matrix" => {
            let path = args.out.join("frag/transition_matrix.json");
            let bytes = std::fs::read(&path)
                .map_err(|_| PipelineError::Data(format!("missing artifact {}", path.display())))?;
            let m: artifacts::TransitionMatrixJson = serde_json::from_slice(&bytes)
                .map_err(|e| PipelineError::Data(format!("decode: {e}")))?;
            manifest::write_atomic(
                &args.out.join("transition_matrix.svg"),
                plots::transition_matrix(&m).as_bytes(),
            )
        }
        "fragility_grid" => {
            // Median-only panels rebuilt from the stored attainment curves.
            let mut families = std::collections::BTreeMap::new();
            let mut grid = Vec::new();
            for t in fragsurr_core::fragility::Transition::OBSERVABLE {
                let path = args.out.join(format!("frag/curves/mcs_att_{t}.csv"));
                let Ok(text) = std::fs::read_to_string(&path) else { continue };
                let mut g = Vec::new();
                let mut p = Vec::new();
                for line in text.lines().skip(1) {
                    let mut it = line.split(',');
                    if let (Some(a), Some(b)) = (it.next(), it.next()) {
                        g.push(a.parse().unwrap_or(f64::NAN));
                        p.push(b.parse().unwrap_or(f64::NAN));
                    }
                }
                grid = g;
                families.insert(
                    t,
                    plots::CurveFamily {
                        members: Vec::new(),
                        median: p,
                        bands: Default::default(),
                    },
                );
            }
            if families.is_empty() {
                return Err(PipelineError::Data(
                    "no stored fragility curves; run the frag stage first".into(),
                ));
            }
            let svg = plots::fragility_grid(
                &grid,
                &families,
                &runner.config.fragility.im,
                "stored medians",
            );
            manifest::write_atomic(&args.out.join("fragility_grid.svg"), svg.as_bytes())
        }
        "error_vs_doe" => {
            let path = args.out.join("doe_study/errors.csv");
            let text = std::fs::read_to_string(&path)
                .map_err(|_| PipelineError::Data(format!("missing artifact {}", path.display())))?;
            let mut sizes = Vec::new();
            let mut emp = Vec::new();
            let mut loo = Vec::new();
            let mut gen = Vec::new();
            for line in text.lines().skip(1).filter(|l| l.starts_with("DS0")) {
                let f: Vec<&str> = line.split(',').collect();
                sizes.push(f[1].parse().unwrap_or(0));
                emp.push(f[2].parse().unwrap_or(f64::NAN));
                loo.push(f[3].parse().unwrap_or(f64::NAN));
                gen.push(f[4].parse().unwrap_or(f64::NAN));
            }
            if sizes.is_empty() {
                return Err(PipelineError::Data("errors.csv holds no DS0 rows".into()));
            }
            let svg = plots::error_vs_doe(
                &sizes,
                &[("eps_emp".into(), emp), ("eps_loo".into(), loo), ("eps_gen".into(), gen)],
                0.10,
                "surrogate errors vs DoE size (DS0)",
            );
            manifest::write_atomic(&args.out.join("error_vs_doe.svg"), svg.as_bytes())
        }
        other => Err(PipelineError::Config(format!("unknown plot kind '{other}'"))),
    }
}

fn run() -> Result<(), PipelineError> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Gm { sub: GmCmd::Gen(args) } => run_stage(&args, Stage::Gm),
        Cmd::Sim(args) => run_stage(&args, Stage::Sim),
        Cmd::Im(args) => run_stage(&args, Stage::Im),
        Cmd::Pca(args) => run_stage(&args, Stage::Pca),
        Cmd::Train(args) | Cmd::Pce { sub: PceCmd::Train(args) } => run_stage(&args, Stage::Train),
        Cmd::Pce { sub: PceCmd::Predict { model, input, out } } => predict(&model, &input, &out),
        Cmd::Frag(args) => run_stage(&args, Stage::Frag),
        Cmd::Validate(args) => run_stage(&args, Stage::Validate),
        Cmd::All(args) => run_stage(&args, Stage::All),
        Cmd::DoeStudy { stage, sizes, repeats } => {
            init_threads(stage.threads);
            let cfg = load_config(&stage)?;
            let runner = Runner::new(cfg, &stage.out)?;
            let sizes = sizes.unwrap_or_else(|| doe_study::DEFAULT_SIZES.to_vec());
            doe_study::run_doe_study(&runner, &sizes, repeats).map(|_| ())
        }
        Cmd::Plot { stage, kind } => replot(&stage, &kind),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("fragsurr: {e}");
        std::process::exit(e.exit_code());
    }
}
