//! Thin CLI over the library's report operations. Exit codes:
//! 0 success, 2 input error, 3 infeasible budget, 4 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use compressnas::report::{
    cmd_describe, cmd_rewrite, cmd_search, cmd_verify, preset_names, ModelSource, OutputFormat,
    RewriteKind, SearchOpts,
};

#[derive(Parser)]
#[command(name = "compressnas", version, about = "Rank-search model compression for flash-constrained devices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Path to a model graph JSON file.
    model: Option<PathBuf>,
    /// Built-in preset name instead of a file.
    #[arg(long, value_parser = preset_parser)]
    preset: Option<String>,
}

fn preset_parser(s: &str) -> Result<String, String> {
    if preset_names().contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("unknown preset (expected one of {:?})", preset_names()))
    }
}

impl Source {
    fn resolve(&self) -> Result<ModelSource, String> {
        match (&self.model, &self.preset) {
            (Some(path), None) => Ok(ModelSource::Path(path.clone())),
            (None, Some(name)) => Ok(ModelSource::Preset(name.clone())),
            _ => Err("provide exactly one of MODEL or --preset".into()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer table and size/RAM accounting of a model.
    Describe {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "text")]
        format: OutputFormat,
    },
    /// Run the rank search under a flash budget and write the artifacts.
    Search {
        #[command(flatten)]
        source: Source,
        /// Budget on the compressed model size, in parameter counts.
        #[arg(long)]
        flash_max: u64,
        /// Rank grid step.
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(4..=8))]
        step: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Calibration batch size.
        #[arg(long, default_value_t = 8)]
        calib: usize,
        /// Knapsack savings quantization, in parameter counts.
        #[arg(long, default_value_t = 256)]
        granularity: u64,
        /// Output directory for lookup.csv / selection.json / compressed.json.
        #[arg(long, short, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Apply a graph rewrite and report parameter / peak-RAM deltas.
    Rewrite {
        #[command(flatten)]
        source: Source,
        /// Move the stem's channel-restoring projection past the first pool.
        #[arg(long, conflicts_with = "neck_taps")]
        projection_stem: bool,
        /// Comma-separated `layer:channels` taps, e.g. `l3b2_add:128,l4b2_add:256`.
        #[arg(long)]
        neck_taps: Option<String>,
        /// Write the rewritten model here instead of printing it.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check every built-in preset against its reference figures.
    Verify {
        /// Emit machine-readable JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn parse_taps(spec: &str) -> Result<Vec<(String, usize)>, String> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (id, ch) = pair
                .split_once(':')
                .ok_or_else(|| format!("bad tap '{pair}', expected layer:channels"))?;
            let channels: usize = ch
                .trim()
                .parse()
                .map_err(|_| format!("bad channel count in tap '{pair}'"))?;
            Ok((id.trim().to_string(), channels))
        })
        .collect()
}

fn run() -> Result<String, (String, i32)> {
    let cli = Cli::parse();
    let input_err = |msg: String| (msg, 2);
    match cli.command {
        Command::Describe { source, format } => {
            let source = source.resolve().map_err(input_err)?;
            cmd_describe(&source, format).map_err(|e| (e.to_string(), e.exit_code()))
        }
        Command::Search {
            source,
            flash_max,
            step,
            seed,
            calib,
            granularity,
            out_dir,
        } => {
            let source = source.resolve().map_err(input_err)?;
            let opts = SearchOpts {
                flash_max,
                step: step as usize,
                seed,
                calib_batch: calib,
                granularity,
                out_dir,
            };
            cmd_search(&source, &opts).map_err(|e| (e.to_string(), e.exit_code()))
        }
        Command::Rewrite {
            source,
            projection_stem,
            neck_taps,
            output,
        } => {
            let source = source.resolve().map_err(input_err)?;
            let kind = match (projection_stem, neck_taps) {
                (true, None) => RewriteKind::ProjectionStem,
                (false, Some(spec)) => RewriteKind::NeckTaps(parse_taps(&spec).map_err(input_err)?),
                _ => {
                    return Err(input_err(
                        "provide exactly one of --projection-stem or --neck-taps".into(),
                    ))
                }
            };
            cmd_rewrite(&source, &kind, output.as_deref())
                .map_err(|e| (e.to_string(), e.exit_code()))
        }
        Command::Verify { json } => {
            let format = if json { OutputFormat::Json } else { OutputFormat::Text };
            cmd_verify(format).map_err(|e| (e.to_string(), e.exit_code()))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err((message, code)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
