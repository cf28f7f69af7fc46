//! Argument parsing and the subcommands.

use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};
use xgap_core::bounds::SurrogateVariance;
use xgap_core::metrics::{Normalizer, PiSoftRule};
use xgap_core::simulate::{derive_seed, pi_recovery_experiment, PiRecoveryConfig};

use crate::analyze::{analyze, AnalyzeOptions};
use crate::experiment::{self, Experiment, Spec};
use crate::ingest::{
    self, fill_derived, group_records, parse_response_log, DefaultNormalizer, MappingNormalizer,
    ResponseRecord,
};
use crate::output::{Document, Format, Table};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "xgap",
    version,
    about = "Cross-lingual response gap simulator and log analyser"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo experiment from a preset or spec file.
    Simulate(SimulateArgs),
    /// Tabulate the closed-form bounds over a grid.
    Bounds(BoundsArgs),
    /// Compute metrics over response logs.
    Analyze(AnalyzeArgs),
    /// Check both mixing-coefficient estimators on synthetic datasets.
    PiRecovery(PiRecoveryArgs),
    /// List the shipped presets.
    Presets,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SpecSource {
    /// Name of a shipped preset (see `xgap presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Path to a TOML spec file.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

impl SpecSource {
    fn load(&self) -> Result<(Spec, String), CliError> {
        match (&self.preset, &self.grid) {
            (Some(name), _) => Ok((Spec::preset(name)?, format!("preset:{name}"))),
            (None, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                Ok((Spec::parse(&text)?, path.display().to_string()))
            }
            (None, None) => Err(CliError::Usage(
                "one of --preset or --grid is required".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub spec: SpecSource,
    /// Master seed; defaults to the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo trials per point (at least 100).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Use this Gumbel surrogate variance in every bound.
    #[arg(long)]
    pub gumbel_surrogate_variance: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub spec: SpecSource,
    /// Recorded in the output metadata; bounds involve no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gumbel_surrogate_variance: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Appendix,
    Reconciled,
}

impl From<RuleArg> for PiSoftRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Appendix => PiSoftRule::Appendix,
            RuleArg::Reconciled => PiSoftRule::Reconciled,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// JSON Lines response logs.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// JSON object mapping answer variants to canonical answers.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "reconciled")]
    pub pi_soft_rule: RuleArg,
    /// Confidence bins on [0, 1].
    #[arg(long, default_value_t = 5)]
    pub bins: usize,
    /// Ensemble size compared against single responses.
    #[arg(long, default_value_t = 10)]
    pub ensemble: usize,
    /// Seed for bootstrap intervals.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the normalised, grouped records as `grouped.jsonl`.
    #[arg(long)]
    pub emit_grouped: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PiRecoveryArgs {
    /// Comma-separated true mixing coefficients.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub true_pi: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub questions: usize,
    /// Voted responses per question and language.
    #[arg(long, default_value_t = 200)]
    pub draws: usize,
    #[arg(long, default_value_t = 10)]
    pub ensemble: usize,
    /// Gaussian jitter on one-hot answer embeddings.
    #[arg(long, default_value_t = xgap_core::simulate::DEFAULT_JITTER)]
    pub jitter: f64,
    #[arg(long, value_enum, default_value = "reconciled")]
    pub pi_soft_rule: RuleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Parses `args`, runs the command and reports errors on stderr. Returns the
/// process exit code on failure.
pub fn main_with_args<I, T>(args: I) -> Result<(), u8>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.exit_code() {
                0 => Ok(()),
                _ => Err(2),
            };
        }
    };
    run(cli).map_err(|e| {
        eprintln!("xgap: {e}");
        e.exit_code()
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(report_paths),
        Command::Bounds(a) => cmd_bounds(&a).map(report_paths),
        Command::Analyze(a) => cmd_analyze(&a).map(report_paths),
        Command::PiRecovery(a) => cmd_pi_recovery(&a).map(report_paths),
        Command::Presets => {
            for name in experiment::preset_names() {
                let spec = Spec::preset(name)?;
                println!("{name:14} {}", spec.description);
            }
            Ok(())
        }
    }
}

fn report_paths(paths: Vec<PathBuf>) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn surrogate(flag: Option<f64>) -> Result<SurrogateVariance, CliError> {
    match flag {
        None => Ok(SurrogateVariance::default()),
        Some(v) => SurrogateVariance::uniform(v).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn write(doc: &Document<'_>, out: &OutputArgs, stem: &str) -> Result<PathBuf, CliError> {
    doc.write(&out.out, stem, out.format)
        .map_err(|e| CliError::io(&out.out, e))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>, CliError> {
    let (mut spec, source) = args.spec.load()?;
    if let Some(t) = args.trials {
        if t < xgap_core::simulate::MIN_TRIALS {
            return Err(CliError::Usage(format!(
                "--trials must be at least {}",
                xgap_core::simulate::MIN_TRIALS
            )));
        }
        spec.override_trials(t);
    }
    let seed = args.seed.unwrap_or(spec.seed);
    spec.seed = seed;
    let surrogate = surrogate(args.gumbel_surrogate_variance)?;
    let pool = experiment::thread_pool()?;
    let outcome = experiment::run(&spec, seed, &surrogate, &pool)?;

    let config = json!({ "source": source, "spec": spec, "surrogate_variance": surrogate });
    let mut paths = Vec::new();
    let mut emit = |table: Table, stem: &str| -> Result<(), CliError> {
        let doc = Document {
            command: "simulate",
            seed,
            config: config.clone(),
            results: table.to_json(),
            table,
        };
        paths.push(write(&doc, &args.output, stem)?);
        Ok(())
    };
    emit(outcome.table, "simulate")?;
    if let Some((name, table)) = outcome.extra {
        emit(table, &format!("simulate-{name}"))?;
    }
    Ok(paths)
}

pub fn cmd_bounds(args: &BoundsArgs) -> Result<Vec<PathBuf>, CliError> {
    let (spec, source) = args.spec.load()?;
    let Experiment::Grid(grid) = &spec.experiment else {
        return Err(CliError::Config("bounds need a grid experiment".into()));
    };
    let surrogate = surrogate(args.gumbel_surrogate_variance)?;
    let table = experiment::bounds_table(grid, &surrogate)?;
    let seed = args.seed.unwrap_or(spec.seed);
    let doc = Document {
        command: "bounds",
        seed,
        config: json!({ "source": source, "grid": grid, "surrogate_variance": surrogate }),
        results: table.to_json(),
        table,
    };
    Ok(vec![write(&doc, &args.output, "bounds")?])
}

fn read_log(path: &Path) -> Result<Vec<ResponseRecord>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_response_log(BufReader::new(file)).map_err(|source| CliError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Vec<PathBuf>, CliError> {
    if args.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let normalizer: Box<dyn Normalizer + Sync> = match &args.mapping {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Box::new(
                MappingNormalizer::from_json(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            )
        }
        None => Box::new(DefaultNormalizer),
    };
    let pool = experiment::thread_pool()?;
    let per_file = pool.install(|| {
        args.logs
            .par_iter()
            .map(|p| read_log(p))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let records: Vec<ResponseRecord> = per_file.into_iter().flatten().collect();
    if args.logs.len() > 1 {
        ingest::validate_records(&records).map_err(|source| CliError::Ingest {
            path: args
                .logs
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
                .into(),
            source,
        })?;
    }
    let mut groups = group_records(records).map_err(|source| CliError::Ingest {
        path: args.logs[0].clone(),
        source,
    })?;
    fill_derived(&mut groups, normalizer.as_ref());

    let options = AnalyzeOptions {
        rule: args.pi_soft_rule.into(),
        n_bins: args.bins,
        ensemble_size: args.ensemble,
        seed: args.seed,
        ..AnalyzeOptions::default()
    };
    let report = analyze(&groups, &options).map_err(|e| CliError::Config(e.to_string()))?;
    let results = serde_json::to_value(&report).expect("reports serialise");
    let logs: Vec<String> = args.logs.iter().map(|p| p.display().to_string()).collect();
    let doc = Document {
        command: "analyze",
        seed: args.seed,
        config: json!({
            "logs": logs,
            "mapping": args.mapping.as_ref().map(|p| p.display().to_string()),
            "options": options,
        }),
        table: Table::flatten(&results),
        results,
    };
    let mut paths = vec![write(&doc, &args.output, "analyze")?];
    if args.emit_grouped {
        let path = args.output.out.join("grouped.jsonl");
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        ingest::write_grouped(&groups, std::io::BufWriter::new(file))
            .map_err(|e| CliError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn cmd_pi_recovery(args: &PiRecoveryArgs) -> Result<Vec<PathBuf>, CliError> {
    if args.true_pi.is_empty() {
        return Err(CliError::Usage("--true-pi needs at least one value".into()));
    }
    let configs: Vec<PiRecoveryConfig> = args
        .true_pi
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let mut c = PiRecoveryConfig::new(pi, derive_seed(args.seed, &[i as u64]));
            c.n_questions = args.questions;
            c.per_question_draws = args.draws;
            c.ensemble_size = args.ensemble;
            c.jitter = args.jitter;
            c.rule = args.pi_soft_rule.into();
            c
        })
        .collect();
    let pool = experiment::thread_pool()?;
    let reports = pool.install(|| {
        configs
            .par_iter()
            .map(|c| pi_recovery_experiment(c).map_err(|e| CliError::Usage(e.to_string())))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut table = Table::new([
        "true_pi",
        "realized_pi",
        "pi_hat_categorical",
        "pi_hat_continuous",
        "abs_error_categorical",
        "abs_error_continuous",
        "warnings",
    ]);
    for r in &reports {
        table.push(vec![
            json!(r.true_pi),
            json!(r.realized_pi),
            json!(r.pi_categorical),
            json!(r.pi_continuous),
            json!((r.pi_categorical - r.true_pi).abs()),
            json!((r.pi_continuous - r.true_pi).abs()),
            Value::String(r.warnings.join("; ")),
        ]);
    }
    let template = &configs[0];
    let doc = Document {
        command: "pi-recovery",
        seed: args.seed,
        config: json!({
            "true_pi": args.true_pi,
            "n_questions": template.n_questions,
            "per_question_draws": template.per_question_draws,
            "ensemble_size": template.ensemble_size,
            "jitter": template.jitter,
            "rule": template.rule,
            "generator": template.generator,
        }),
        results: table.to_json(),
        table,
    };
    Ok(vec![write(&doc, &args.output, "pi-recovery")?])
}
