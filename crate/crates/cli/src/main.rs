use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use speechmine::corpus_model::{read_manifest, LangCode};
use speechmine::pipeline::{
    exit_code, run_all, run_stage, ChrfFiles, MiningMode, PipelineConfig, RunOptions, Stage,
    StageSummary,
};
use speechmine::quality::{histogram_csv, score_histogram};
use speechmine::{Error, Result};

/// Exit status for usage and configuration errors.
const EXIT_CONFIG: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "speechmine", version, about = "Mine timestamped speech-translation pairs from aligned documents")]
struct Cli {
    /// Pipeline config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Stop at the first document that fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads; 0 = all logical cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Config values settable from the command line.
#[derive(clap::Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true)]
    vad_on: Option<f64>,
    #[arg(long, global = true)]
    vad_off: Option<f64>,
    #[arg(long, global = true)]
    max_chunk_s: Option<f64>,
    /// Treat each recording as one speech span.
    #[arg(long, global = true)]
    no_vad: bool,
    #[arg(long, global = true)]
    skip_penalty: Option<f64>,
    #[arg(long, global = true, value_enum)]
    mining_mode: Option<ModeArg>,
    #[arg(long, global = true)]
    sigma_min: Option<f64>,
    #[arg(long, global = true)]
    tau_min: Option<f64>,
    /// TOML thresholds file: optional `sigma_min`/`tau_min` plus `[overrides.<lang>]` tables.
    #[arg(long, global = true)]
    overrides: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    target_seconds: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Greedy,
    Dp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StatsFormat {
    Csv,
    Txt,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean, punctuate and sentence-split transcripts and translations.
    Normalize,
    /// Split recordings into speech chunks.
    Chunk,
    /// CTC forced alignment of source sentences.
    Align,
    /// Alignment score per aligned sentence.
    Score,
    /// Pair source and target sentences into scored records.
    Mine,
    /// Threshold mined records on sigma and tau.
    Filter,
    /// Draw the per-direction test set.
    Sample,
    /// Hours and utterance counts per language, direction and split.
    Stats {
        /// Table printed to stdout; both files are always written.
        #[arg(long, value_enum, default_value = "csv")]
        format: StatsFormat,
    },
    /// chrF++ of a hypothesis file against a reference file.
    Chrf {
        #[arg(long, requires = "reference")]
        hyp: Option<PathBuf>,
        #[arg(long = "ref", requires = "hyp")]
        reference: Option<PathBuf>,
        #[arg(long)]
        per_segment: bool,
    },
    /// Every stage in order; chrf only when configured.
    RunAll,
    /// Mining-score histogram of a manifest as CSV.
    Histogram {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Only records whose non-English side is this language.
        #[arg(long)]
        language: Option<LangCode>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(v) = o.vad_on {
        cfg.vad.on_threshold = v;
    }
    if let Some(v) = o.vad_off {
        cfg.vad.off_threshold = v;
    }
    if let Some(v) = o.max_chunk_s {
        cfg.vad.max_chunk_s = v;
    }
    if o.no_vad {
        cfg.vad_enabled = false;
    }
    if let Some(v) = o.skip_penalty {
        cfg.skip_penalty = v;
    }
    if let Some(m) = o.mining_mode {
        cfg.mining_mode = match m {
            ModeArg::Greedy => MiningMode::Greedy,
            ModeArg::Dp => MiningMode::Dp,
        };
    }
    if let Some(v) = o.sigma_min {
        cfg.filter.sigma_min = v;
    }
    if let Some(v) = o.tau_min {
        cfg.filter.tau_min = v;
    }
    if let Some(p) = &o.overrides {
        cfg.filter = cfg.filter.clone().with_overrides_file(p)?;
    }
    if let Some(v) = o.seed {
        cfg.sample.seed = v;
    }
    if let Some(v) = o.target_seconds {
        cfg.sample.target_seconds = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Progress events go to stderr; summaries to stdout unless the command
/// prints its own result there.
fn report(summaries: &[StageSummary], summary_to_stdout: bool) {
    for s in summaries {
        for e in &s.events {
            eprintln!("{}", serde_json::to_string(e).expect("event serializes"));
        }
        let line = serde_json::to_string(s).expect("summary serializes");
        if summary_to_stdout {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
}

fn options(cli: &Cli) -> RunOptions {
    RunOptions {
        strict: cli.strict,
        jobs: cli.jobs,
    }
}

fn stage(cli: &Cli, cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    let summary = run_stage(stage, cfg, &options(cli))?;
    report(std::slice::from_ref(&summary), !matches!(stage, Stage::Stats | Stage::Chrf));
    Ok(())
}

fn read_to_string(p: &std::path::Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Normalize => stage(cli, &cfg, Stage::Normalize),
        Command::Chunk => stage(cli, &cfg, Stage::Chunk),
        Command::Align => stage(cli, &cfg, Stage::Align),
        Command::Score => stage(cli, &cfg, Stage::Score),
        Command::Mine => stage(cli, &cfg, Stage::Mine),
        Command::Filter => stage(cli, &cfg, Stage::Filter),
        Command::Sample => stage(cli, &cfg, Stage::Sample),
        Command::Stats { format } => {
            stage(cli, &cfg, Stage::Stats)?;
            let name = match format {
                StatsFormat::Csv => "stats.csv",
                StatsFormat::Txt => "stats.txt",
            };
            print!("{}", read_to_string(&cfg.output(name))?);
            Ok(())
        }
        Command::Chrf {
            hyp,
            reference,
            per_segment,
        } => {
            if let (Some(h), Some(r)) = (hyp, reference) {
                let averaging = cfg.chrf.as_ref().map(|c| c.averaging).unwrap_or_default();
                cfg.chrf = Some(ChrfFiles {
                    hyp: h.clone(),
                    reference: r.clone(),
                    averaging,
                });
            }
            stage(cli, &cfg, Stage::Chrf)?;
            let text = read_to_string(&cfg.output("chrf.json"))?;
            let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                location: cfg.output("chrf.json").display().to_string(),
                message: e.to_string(),
            })?;
            print_chrf(&report, *per_segment);
            Ok(())
        }
        Command::RunAll => {
            report(&run_all(&cfg, &options(cli))?, true);
            Ok(())
        }
        Command::Histogram {
            manifest,
            bins,
            language,
        } => {
            if *bins == 0 {
                return Err(Error::Config("--bins must be positive".into()));
            }
            let m = read_manifest(manifest)?;
            let sigmas: Vec<f64> = m
                .records
                .iter()
                .filter(|r| language.is_none_or(|l| r.direction.indic() == l))
                .filter_map(|r| r.scores.map(|s| s.sigma))
                .collect();
            print!("{}", histogram_csv(&score_histogram(&sigmas, *bins)));
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn print_chrf(report: &serde_json::Value, per_segment: bool) {
    let score = report["corpus_score"].as_f64().unwrap_or(0.0);
    let signature = report["signature"].as_str().unwrap_or_default();
    println!("chrF2++ = {score:.2} ({signature})");
    if per_segment {
        if let Some(segs) = report["per_segment"].as_array() {
            for (i, s) in segs.iter().enumerate() {
                println!("{}\t{:.2}", i + 1, s.as_f64().unwrap_or(0.0));
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
