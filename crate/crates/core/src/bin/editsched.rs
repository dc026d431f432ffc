//! `editsched` command-line front end.
//!
//! Exit status: 0 on success, 1 for configuration or input errors, 2 when a
//! suite ran but some rows failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use editsched::card::{allocate, classify_instruction, ComplexityLevels, Lexicon};
use editsched::harness::config::GlobalParams;
use editsched::harness::suite::{build_backbone, build_scenario, run_configuration, run_seed};
use editsched::harness::{
    evaluate_edit, load_config, render_report, run_suite, Overrides, ReportFormat, SuiteConfig,
};
use editsched::latent::NoiseSource;
use editsched::sampler::{CostLedger, PILOT_NOISE_STREAM};
use editsched::srm::{compute_srm, mask_coverage};
use editsched::Error;

#[derive(Parser)]
#[command(
    name = "editsched",
    version,
    about = "Complexity-adaptive reasoning schedules for frame-based editing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario under every configuration and write a report.
    Run {
        #[command(flatten)]
        suite: SuiteArgs,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Run one scenario under every configuration and print per-run details as JSON.
    Edit {
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the spatial mask computed for one scenario and its coverage.
    Mask {
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict complexity and reasoning allocation for an instruction.
    Classify {
        #[arg(long)]
        instruction: String,
        /// Keyword file replacing the built-in lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Total sampling steps used for the cost estimate.
        #[arg(long, default_value_t = 30)]
        steps: usize,
    },
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Enable reference-prior injection on adaptive configurations.
    #[arg(long)]
    rpfi: bool,
    #[arg(long)]
    rpfi_beta: Option<f64>,
    /// Reasoning steps for baseline configurations.
    #[arg(long)]
    baseline_nr: Option<usize>,
    /// Reasoning frames for baseline configurations.
    #[arg(long)]
    baseline_r: Option<usize>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

impl SuiteArgs {
    fn load(&self, scenario: Option<&str>) -> Result<SuiteConfig, Error> {
        let mut config = load_config(&self.config)?;
        config.apply_overrides(&Overrides {
            seed: self.seed,
            jobs: self.jobs,
            rpfi: self.rpfi,
            rpfi_beta: self.rpfi_beta,
            baseline_steps: self.baseline_nr,
            baseline_frames: self.baseline_r,
            lexicon: self.lexicon.clone(),
            scenario: scenario.map(str::to_owned),
        })?;
        Ok(config)
    }
}

enum Failure {
    Usage(Error),
    Rows(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(suite: &SuiteArgs, out: Option<&Path>, format: ReportFormat) -> Result<(), Failure> {
    let config = suite.load(None)?;
    let report = run_suite(&config)?;
    write_output(out, &render_report(&report, format)?)?;

    for b in &report.buckets {
        let speedup = b.speedup.map_or("-".to_owned(), |s| format!("{s:.3}x"));
        eprintln!(
            "{:<16} {:<8} runs={:<3} mean_frame_steps={:<8.2} speedup={speedup}",
            b.config, b.bucket, b.runs, b.mean_frame_steps
        );
    }
    for w in &report.weighted {
        let speedup = w.speedup.map_or("-".to_owned(), |s| format!("{s:.3}x"));
        eprintln!(
            "{:<16} weighted mean_frame_steps={:.2} speedup={speedup}",
            w.config, w.weighted_mean_frame_steps
        );
    }
    eprintln!(
        "complexity prediction: {}/{} correct",
        report.confusion.correct(),
        report.confusion.total()
    );
    match report.failures() {
        0 => Ok(()),
        n => Err(Failure::Rows(n)),
    }
}

fn cmd_edit(suite: &SuiteArgs, name: &str, out: Option<&Path>) -> Result<(), Failure> {
    let config = suite.load(Some(name))?;
    let entry = &config.scenarios[0];
    let scenario = Arc::new(build_scenario(entry)?);
    let mut runs = Vec::new();
    let mut failures = 0;
    for run in &config.configurations {
        let outcome = run_configuration(&config, entry, Arc::clone(&scenario), run)
            .and_then(|r| evaluate_edit(&r, &scenario).map(|m| (r, m)));
        runs.push(match outcome {
            Ok((r, m)) => json!({
                "config": run.name,
                "reasoning_steps": r.config.reasoning_steps,
                "reasoning_frames": r.config.reasoning_frames,
                "distribution": r.distribution.map(|d| d.probs()),
                "cost": r.cost,
                "frame_steps": r.cost.total(),
                "metrics": m,
                "warnings": r.warnings,
            }),
            Err(e) => {
                failures += 1;
                json!({ "config": run.name, "error": e.to_string() })
            }
        });
    }
    let doc = json!({ "scenario": entry.name, "instruction": entry.instruction, "runs": runs });
    let mut text = serde_json::to_string_pretty(&doc).expect("json value serializes");
    text.push('\n');
    write_output(out, &text)?;
    match failures {
        0 => Ok(()),
        n => Err(Failure::Rows(n)),
    }
}

fn cmd_mask(
    suite: &SuiteArgs,
    name: &str,
    format: ReportFormat,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let config = suite.load(Some(name))?;
    let entry = &config.scenarios[0];
    let g: &GlobalParams = &config.global;
    let scenario = Arc::new(build_scenario(entry)?);
    let backbone = build_backbone(&config, entry, Arc::clone(&scenario));
    let mut noise = NoiseSource::with_stream(run_seed(g.seed, entry.seed), PILOT_NOISE_STREAM);
    let srm = compute_srm(
        backbone.as_ref(),
        scenario.instruction(),
        scenario.reference(),
        g.t_max,
        &g.srm_params(),
        &mut noise,
    )?;
    let mask = srm.mask;
    let coverage = mask_coverage(&mask);
    let rows: Vec<&[f64]> = mask.values().chunks(mask.width()).collect();
    let text = match format {
        ReportFormat::Csv => rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(",")
                    + "\n"
            })
            .collect(),
        ReportFormat::Json => {
            let doc = json!({
                "scenario": entry.name,
                "height": mask.height(),
                "width": mask.width(),
                "coverage": coverage,
                "mask": rows,
            });
            serde_json::to_string_pretty(&doc).expect("json value serializes") + "\n"
        }
    };
    write_output(out, &text)?;
    eprintln!("coverage={coverage:.6}");
    Ok(())
}

fn cmd_classify(instruction: &str, lexicon: Option<&Path>, steps: usize) -> Result<(), Failure> {
    let lexicon = match lexicon {
        Some(p) => Lexicon::from_path(p)?,
        None => Lexicon::builtin(),
    };
    let levels = ComplexityLevels::default();
    levels.validate(steps)?;
    let dist = classify_instruction(instruction, &lexicon)?;
    let allocation = allocate(&dist, &levels);
    let cost = CostLedger::planned(allocation, steps, true);
    let doc = json!({
        "instruction": instruction,
        "level": dist.most_likely(),
        "distribution": dist.probs(),
        "reasoning_steps": allocation.reasoning_steps,
        "reasoning_frames": allocation.reasoning_frames,
        "frame_steps": cost.total(),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&doc).expect("json value serializes")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run { suite, out, format } => cmd_run(suite, out.as_deref(), *format),
        Command::Edit {
            suite,
            scenario,
            out,
        } => cmd_edit(suite, scenario, out.as_deref()),
        Command::Mask {
            suite,
            scenario,
            format,
            out,
        } => cmd_mask(suite, scenario, *format, out.as_deref()),
        Command::Classify {
            instruction,
            lexicon,
            steps,
        } => cmd_classify(instruction, lexicon.as_deref(), *steps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Rows(n)) => {
            eprintln!("error: {n} run(s) failed");
            ExitCode::from(2)
        }
    }
}
