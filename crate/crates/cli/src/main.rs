//! `selinet`: train, evaluate, quantize and inspect emotion/sentiment heads
//! over precomputed backbone feature maps.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use selinet_core::data::Split;
use selinet_core::Topology;

#[derive(Debug, Parser)]
#[command(name = "selinet", version, about = "Multitask emotion/sentiment head over frozen feature maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the train split, keeping the epoch with the best validation mean AP.
    Train {
        /// Training configuration (JSON; unknown keys are rejected).
        #[arg(long)]
        config: PathBuf,
        /// Annotation file, or a directory containing annotations.jsonl.
        #[arg(long)]
        data: PathBuf,
        /// Output model file (.slnm).
        #[arg(long)]
        out: PathBuf,
        /// Write the per-epoch history as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a model on one split; prints a table and writes a JSON report.
    Eval {
        /// Model file, fp32 (.slnm) or int8 (.slnq).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
        /// Boost the top-5 emotions by their sentiment confidence.
        #[arg(long)]
        boost: bool,
        /// Emotion → sentiment map (JSON); defaults to the bundled map.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Print scores for one feature file as JSON.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Feature file (.slnf) with "body" and "aesthetic" tensors.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        boost: bool,
        /// Only list the K highest-scoring emotions.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Convert dense weight matrices to int8.
    Quantize {
        /// fp32 model (.slnm).
        #[arg(long)]
        model: PathBuf,
        /// Output int8 model (.slnq).
        #[arg(long)]
        out: PathBuf,
        /// Emit the size report as JSON, to the given file or to standard output.
        #[arg(long, num_args = 0..=1, value_name = "PATH")]
        report: Option<Option<PathBuf>>,
    },
    /// Compare backprop against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// "full" or a comma list of body, aesthetics, attention, sentiment.
        #[arg(long, default_value = "full", value_parser = parse_topology)]
        topology: Topology,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Samples per split.
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Signal-to-noise scale; 0 gives pure noise.
        #[arg(long, default_value_t = 10.0)]
        separability: f64,
    },
    /// Train and score the ablation grid on the test split.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Show a model's schema, parameter count and sizes.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn parse_topology(s: &str) -> Result<Topology, String> {
    Topology::parse(s).map_err(|e| e.to_string())
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            data,
            out,
            history,
        } => commands::train(&config, &data, &out, history.as_deref()),
        Command::Eval {
            model,
            data,
            split,
            report,
            boost,
            map,
        } => commands::eval(&model, &data, split, &report, boost, map.as_deref()),
        Command::Predict {
            model,
            features,
            boost,
            top,
        } => commands::predict(&model, &features, boost, top),
        Command::Quantize { model, out, report } => {
            commands::quantize(&model, &out, report.as_ref().map(|r| r.as_deref()))
        }
        Command::Gradcheck { seed, topology } => commands::gradcheck(seed, topology),
        Command::Synth {
            out,
            n,
            seed,
            separability,
        } => commands::synth(&out, n, seed, separability),
        Command::Ablate { config, data } => commands::ablate(&config, &data),
        Command::Inspect { model } => commands::inspect(&model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
