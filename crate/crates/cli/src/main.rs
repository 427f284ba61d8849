//! `groundfit`: generate synthetic scenarios, fit them and evaluate the fits.
//!
//! Exit codes: 0 ok, 1 other I/O failure, 2 configuration error, 3 numerical
//! failure, 4 input mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use groundfit_core::config::RunConfig;
use groundfit_core::error::{ConfigError, EnergyError, IoError, MetricsError, OptimError};
use groundfit_core::io::{self, Bundle};
use groundfit_core::metrics::{EvalContext, MetricsReport};
use groundfit_core::optimizer::{run_pipeline, Block, Problem, SequenceEstimate, StageSchedule};
use groundfit_core::scene::SpatialIndex;
use groundfit_core::synth::generate;
use serde_json::json;

#[derive(Parser)]
#[command(name = "groundfit", version, about = "Scene-grounded body sequence fitting")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one value, e.g. `--set scenario.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario bundle.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a bundle. Uses the bundle's config unless `--config` is given.
    Fit {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-frame body OBJ files and a combined scene OBJ.
        #[arg(long)]
        export_obj: bool,
    },
    /// Evaluate an estimate against the bundle truth, or run the ablation.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        /// Estimate directory written by `fit`.
        #[arg(long, required_unless_present = "ablation")]
        estimate: Option<PathBuf>,
        /// Fit and evaluate the four term combinations instead.
        #[arg(long)]
        ablation: bool,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; defaults to the estimate directory.
        #[arg(long, required_if_eq("ablation", "true"))]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(2, e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let code = match &e {
            IoError::Config(_) => 2,
            IoError::Format { .. } | IoError::Scene(_) => 4,
            IoError::File { .. } => 1,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<EnergyError> for Failure {
    fn from(e: EnergyError) -> Self {
        let code = match e {
            EnergyError::NonFiniteEnergy { .. } | EnergyError::NonPositiveScale(_) => 3,
            _ => 4,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<OptimError> for Failure {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::Energy(e) => e.into(),
            OptimError::InvalidSchedule(m) => Failure::new(2, format!("invalid schedule: {m}")),
            e => Failure::new(3, e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::new(4, e.to_string())
    }
}

fn resolve(args: &ConfigArgs, fallback: Option<&Path>) -> Result<RunConfig, Failure> {
    match args.config.as_deref().or(fallback) {
        Some(path) => Ok(io::read_config(path, &args.overrides)?),
        None => Ok(RunConfig::with_overrides(&args.overrides)?),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))
}

fn problem_for(bundle: &Bundle, config: &RunConfig) -> Result<Problem, Failure> {
    let skel = config.skeleton_def();
    if let Some(bad) = bundle.observations.iter().position(|o| o.keypoints.len() != skel.joint_count()) {
        return Err(Failure::new(
            4,
            format!("observation frame {bad} has {} joints, skeleton has {}", bundle.observations[bad].keypoints.len(), skel.joint_count()),
        ));
    }
    if bundle.cameras.len() != bundle.frames() {
        return Err(Failure::new(
            4,
            format!("{} camera poses for {} observation frames", bundle.cameras.len(), bundle.frames()),
        ));
    }
    let mut problem = Problem::new(skel, bundle.intrinsics(), bundle.observations.clone());
    config.configure(&mut problem);
    problem.scene = Some(SpatialIndex::build(&bundle.scene).map_err(|e| Failure::new(4, e.to_string()))?);
    Ok(problem)
}

fn fit_bundle(bundle: &Bundle, config: &RunConfig, schedule: &StageSchedule) -> Result<(Problem, SequenceEstimate), Failure> {
    let problem = problem_for(bundle, config)?;
    let estimate = run_pipeline(&problem, &bundle.cameras, schedule)?;
    Ok((problem, estimate))
}

fn evaluate(bundle: &Bundle, problem: &Problem, label: &str, estimate: &groundfit_core::energy::SequenceState) -> Result<MetricsReport, Failure> {
    let truth = bundle
        .truth
        .as_ref()
        .ok_or_else(|| Failure::new(4, format!("bundle has no {}", io::TRUTH_FILE)))?;
    let index = problem.scene.as_ref().expect("problem built with a scene");
    let ctx = EvalContext {
        skeleton: &problem.skeleton,
        intrinsics: &problem.intrinsics,
        image_size: bundle.image_size(),
        observations: &bundle.observations,
        truth,
        scene: index,
        scale_mode: problem.model.scale_mode,
    };
    Ok(ctx.evaluate(label, estimate)?)
}

fn write_metrics(dir: &Path, reports: &[MetricsReport], config: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::new(1, format!("{}: {e}", dir.display())))?;
    write(&dir.join("metrics.csv"), &MetricsReport::to_csv(reports))?;
    let doc = json!({
        "reports": reports,
        "seed": config.scenario.seed,
        "config": config,
    });
    write(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&doc).expect("serializable") + "\n"))
}

/// Term combinations for the ablation, each derived from `full`.
fn ablation_schedules(full: &StageSchedule) -> Vec<(&'static str, StageSchedule)> {
    let mut data_only = full.clone();
    data_only.stages.truncate(1);
    let mut contact = full.clone();
    for s in contact.stages.iter_mut().skip(1) {
        s.lambda_temporal = 0.0;
        s.free.retain(|b| *b != Block::Camera);
    }
    let mut temporal = full.clone();
    for s in temporal.stages.iter_mut().skip(1) {
        // Without contact nothing pins the scale.
        s.lambda_contact = 0.0;
        s.free.retain(|b| *b != Block::Scale);
    }
    vec![
        ("E_M", data_only),
        ("E_M+E_C", contact),
        ("E_M+E_T", temporal),
        ("full", full.clone()),
    ]
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { config, out } => {
            let config = resolve(&config, None)?;
            let bundle = generate(&config.scenario).map_err(|e| Failure::new(2, e.to_string()))?;
            io::write_bundle(&out, &bundle, &config)?;
            eprintln!("wrote {} frames to {}", bundle.observations.len(), out.display());
        }
        Command::Fit {
            bundle,
            config,
            out,
            export_obj,
        } => {
            let data = io::read_bundle(&bundle)?;
            let config = resolve(&config, Some(&bundle.join(io::CONFIG_FILE)))?;
            let (problem, estimate) = fit_bundle(&data, &config, &config.schedule)?;
            io::write_estimate(&out, &estimate, &config)?;
            if export_obj {
                io::write_body_objs(&out.join("obj"), &problem.skeleton, &estimate.state, problem.model.scale_mode, &data.scene)?;
            }
            for s in &estimate.stages {
                eprintln!(
                    "stage {}: {} -> {} over {} iterations{}",
                    s.name,
                    s.initial_energy,
                    s.final_energy,
                    s.iterations,
                    if s.monotone { "" } else { " (energy increased)" }
                );
            }
            eprintln!("scale {}", estimate.state.scale);
        }
        Command::Eval {
            bundle,
            estimate,
            ablation,
            config,
            out,
        } => {
            let data = io::read_bundle(&bundle)?;
            if ablation {
                let config = resolve(&config, Some(&bundle.join(io::CONFIG_FILE)))?;
                let mut reports = Vec::new();
                for (label, schedule) in ablation_schedules(&config.schedule) {
                    let (problem, est) = fit_bundle(&data, &config, &schedule)?;
                    reports.push(evaluate(&data, &problem, label, &est.state)?);
                }
                let out = out.expect("required with --ablation");
                write_metrics(&out, &reports, &config)?;
                print!("{}", MetricsReport::to_csv(&reports));
            } else {
                let dir = estimate.expect("required without --ablation");
                let (state, record) = io::read_estimate(&dir)?;
                if state.frames() != data.frames() {
                    return Err(MetricsError::FrameCountMismatch {
                        bundle: data.frames(),
                        estimate: state.frames(),
                    }
                    .into());
                }
                let problem = problem_for(&data, &record.config)?;
                state.check(&problem.skeleton)?;
                let report = evaluate(&data, &problem, "estimate", &state)?;
                write_metrics(out.as_deref().unwrap_or(&dir), std::slice::from_ref(&report), &record.config)?;
                print!("{}", MetricsReport::to_csv(std::slice::from_ref(&report)));
            }
        }
        Command::Config { config } => {
            print!("{}", resolve(&config, None)?.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is configured once");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
