use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tsda::adaptation::{InputDomain, VariantSpec};
use tsda_cli::config::{ExperimentConfig, ReportFormat};
use tsda_cli::error::{CliError, Result};
use tsda_cli::{experiment, report};

#[derive(Parser)]
#[command(
    name = "tsda",
    version,
    about = "Teacher-student domain adaptation experiments"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Detect peaks in waveform-only records and write windowed features.
    Prepare,
    /// Replace each subject's target with an HMM perturbation of its source.
    Shift,
    /// Generate the toy study as subject records.
    Toy,
    /// Pre-train and calibrate the teacher.
    Pretrain,
    /// Train a student against a saved teacher.
    Adapt {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value = "teacher_student_domain_adaptation")]
        variant: String,
    },
    /// Score a saved model on the cohort.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "target")]
        domain: DomainArg,
    },
    /// Run every configured variant under leave-one-subject-out and write the report.
    Run,
    /// Re-emit a report file in registry order.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',')]
        format: Vec<FormatArg>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let path =
        path.ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    ExperimentConfig::load(path)
}

fn execute(cli: Cli) -> Result<()> {
    if let Command::Report { input, format } = &cli.command {
        let cfg = cli
            .config
            .as_deref()
            .map(ExperimentConfig::load)
            .transpose()?;
        let mut formats: Vec<ReportFormat> = format
            .iter()
            .map(|f| {
                if matches!(f, FormatArg::Csv) {
                    ReportFormat::Csv
                } else {
                    ReportFormat::Json
                }
            })
            .collect();
        if formats.is_empty() {
            formats = cfg.as_ref().map_or_else(
                || vec![ReportFormat::Csv, ReportFormat::Json],
                |c| c.output.formats.clone(),
            );
        }
        let out = cli
            .out
            .or_else(|| cfg.map(|c| c.output.dir))
            .unwrap_or_else(|| PathBuf::from("."));
        let r = report::read_report(input)?;
        for p in report::emit_report(&r, &out, &formats)? {
            println!("{}", p.display());
        }
        return Ok(());
    }
    let cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    match cli.command {
        Command::Prepare => experiment::cmd_prepare(&cfg, seed, &out)?,
        Command::Shift => experiment::cmd_shift(&cfg, seed, &out)?,
        Command::Toy => experiment::cmd_toy(&cfg, seed, &out)?,
        Command::Pretrain => println!("{}", experiment::cmd_pretrain(&cfg, seed, &out)?.display()),
        Command::Adapt { teacher, variant } => {
            let spec = VariantSpec::parse(&variant)?;
            println!(
                "{}",
                experiment::cmd_adapt(&cfg, seed, &out, &teacher, &spec)?.display()
            );
        }
        Command::Evaluate { model, domain } => {
            let d = match domain {
                DomainArg::Source => InputDomain::Source,
                DomainArg::Target => InputDomain::Target,
            };
            println!(
                "{}",
                experiment::cmd_evaluate(&cfg, seed, &out, &model, d)?.display()
            );
        }
        Command::Run => {
            for p in experiment::cmd_run(&cfg, seed, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
