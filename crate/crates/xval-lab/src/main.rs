//! Single binary tying generation, training, evaluation, and probes into
//! reproducible, config-driven runs.

mod cli;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "xval-lab",
    about = "Number-encoding laboratory for transformer language models",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus (split 80/10/10) plus metadata and optional OOD sets
    Generate {
        /// mult3|mult4|mult5|tree2|tree3|tree4|planets|weather|lenprobe
        dataset: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Inline JSON {"field","grid","per_value"} or @path to a file
        #[arg(long)]
        ood_spec: Option<String>,
    },
    /// Train a model on a generated corpus under one encoding scheme
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// p10|p1000|b1999|fp15|xval
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest checkpoint in the run directory
        #[arg(long)]
        resume: bool,
        /// Stop after this step (schedule still spans total_steps)
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Masked-field metrics and probes against a run directory
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Corpus split file to read (train|val|test)
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated field names (e.g. stepsize,a1,e1,m1)
        #[arg(long, value_delimiter = ',')]
        fields: Vec<String>,
        /// ood|logits|pca|length
        #[arg(long)]
        probe: Option<String>,
        /// Field for the ood/logits probes
        #[arg(long)]
        field: Option<String>,
        /// Cap on evaluated samples (0 = all)
        #[arg(long, default_value_t = 0)]
        limit: usize,
        /// Length probe only: also train the variable-length model this many steps
        #[arg(long, default_value_t = 0)]
        probe_train_steps: u64,
    },
    /// Print a token stream or corpus sequence-length statistics
    Tokenize {
        #[arg(long, default_value = "xval")]
        scheme: String,
        /// Literal text to tokenize
        #[arg(long, name = "in")]
        input: Option<String>,
        /// Corpus directory for --stats
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        stats: bool,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.command {
        Command::Generate {
            dataset,
            count,
            seed,
            out,
            ood_spec,
        } => cli::cmd_generate(&dataset, count, seed, &out, ood_spec.as_deref()),
        Command::Train {
            config,
            data,
            scheme,
            out,
            resume,
            stop_at,
        } => cli::cmd_train(&config, &data, &scheme, &out, resume, stop_at),
        Command::Eval {
            run,
            data,
            split,
            fields,
            probe,
            field,
            limit,
            probe_train_steps,
        } => cli::cmd_eval(
            &run,
            &data,
            &split,
            &fields,
            probe.as_deref(),
            field.as_deref(),
            limit,
            probe_train_steps,
        ),
        Command::Tokenize {
            scheme,
            input,
            data,
            stats,
        } => cli::cmd_tokenize(&scheme, input.as_deref(), data.as_deref(), stats),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
