//! `psyn`: fixtures, training, generation, evaluation and benchmarking runs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use psyn_core::train::Task;
use psyn_core::Error;

use commands::Command;
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "psyn", version, about = "Conditional GAN pipeline for synthetic polyp frames")]
struct Cli {
    /// Config file of key=value lines
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Parent directory for run directories (run.out)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Seed (seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset root holding images/, masks/ and id_map.csv
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a small synthetic dataset
    Fixtures {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        size: Option<u32>,
        #[arg(long)]
        ids: Option<usize>,
    },
    /// Train the polyp-to-negative inpainting network
    TrainP2n {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the negative-to-polyp synthesis network
    TrainN2p {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate a labeled synthetic corpus
    Generate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "PATH")]
        p2n: Option<String>,
        #[arg(long, value_name = "PATH")]
        n2p: Option<String>,
        #[arg(long, value_name = "DIR")]
        negatives: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        /// assigned or a fixed 0-255 value
        #[arg(long)]
        value: Option<String>,
    },
    /// Detection precision, recall and F1
    EvalDet {
        #[arg(long, value_name = "PATH")]
        counts: Option<String>,
        #[arg(long, value_name = "PATH")]
        detections: Option<String>,
        #[arg(long, value_name = "DIR")]
        gt: Option<String>,
    },
    /// Segmentation Jaccard and Dice
    EvalSeg {
        #[arg(long, value_name = "DIR")]
        pred: Option<String>,
        #[arg(long, value_name = "DIR")]
        gt: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Metrics against the number of synthetic training samples
    Sweep {
        #[arg(long, value_name = "PATH")]
        input: Option<String>,
    },
    /// Generator inference latency
    Bench {
        /// Comma list of frame sides
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
}

type Overrides = Vec<(&'static str, Option<String>)>;

fn data_overrides(d: DataArgs) -> Overrides {
    let sub = |name: &str| d.data.as_ref().map(|p| p.join(name));
    let show = |p: Option<PathBuf>| p.map(|p| p.display().to_string());
    vec![
        ("data.images", show(sub("images"))),
        ("data.masks", show(sub("masks"))),
        // a dataset root without an id map means one polyp per frame
        ("data.id_map", show(sub("id_map.csv").filter(|p| p.is_file()))),
    ]
}

fn s<T: ToString>(v: Option<T>) -> Option<String> {
    v.map(|v| v.to_string())
}

impl Cmd {
    fn split(self) -> (Command, Overrides) {
        match self {
            Cmd::Fixtures { n, size, ids } => (
                Command::Fixtures,
                vec![("fixtures.n", s(n)), ("fixtures.size", s(size)), ("fixtures.ids", s(ids))],
            ),
            Cmd::TrainP2n { data, steps } => train(Task::P2n, data, steps),
            Cmd::TrainN2p { data, steps } => train(Task::N2p, data, steps),
            Cmd::Generate {
                data,
                p2n,
                n2p,
                negatives,
                count,
                value,
            } => {
                let mut o = data_overrides(data);
                o.extend([
                    ("gen.p2n", p2n),
                    ("gen.n2p", n2p),
                    ("gen.negatives", negatives),
                    ("gen.count", s(count)),
                    ("gen.value", value),
                ]);
                (Command::Generate, o)
            }
            Cmd::EvalDet { counts, detections, gt } => (
                Command::EvalDet,
                vec![("eval.counts", counts), ("eval.detections", detections), ("eval.gt", gt)],
            ),
            Cmd::EvalSeg { pred, gt, threshold } => (
                Command::EvalSeg,
                vec![("eval.pred", pred), ("eval.gt", gt), ("eval.threshold", s(threshold))],
            ),
            Cmd::Sweep { input } => (Command::Sweep, vec![("eval.sweep", input)]),
            Cmd::Bench { sizes, runs, warmup } => (
                Command::Bench,
                vec![("bench.sizes", sizes), ("bench.runs", s(runs)), ("bench.warmup", s(warmup))],
            ),
        }
    }
}

fn train(task: Task, data: DataArgs, steps: Option<usize>) -> (Command, Overrides) {
    let mut o = data_overrides(data);
    o.push(("train.total_steps", s(steps)));
    (Command::Train(task), o)
}

fn exit_code(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Checkpoint(_) => (2, "config"),
        Error::Numeric(_) => (4, "numeric"),
        Error::Data(_) | Error::Io { .. } | Error::Image { .. } | Error::Csv(_) | Error::Shape { .. } => (3, "data"),
    }
}

fn fail(kind: &str, code: u8, msg: &str) -> ExitCode {
    let line = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{kind}]: {line}");
    ExitCode::from(code)
}

/// Caps rayon workers at `PSYN_THREADS`.
fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("PSYN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("PSYN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("PSYN_THREADS: {e}")))
}

fn resolve(cli: Cli) -> Result<(Command, RunConfig), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    let (cmd, overrides) = cli.cmd.split();
    let global = [("run.out", cli.out), ("seed", s(cli.seed))];
    for (k, v) in global.into_iter().chain(overrides) {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    Ok((cmd, cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().after_help(config::keys_help()).try_get_matches();
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("config", 2, first);
        }
    };
    let result = init_threads().and_then(|_| resolve(cli)).and_then(|(cmd, cfg)| commands::run(cmd, cfg));
    match result {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (code, kind) = exit_code(&e);
            let msg = e.to_string();
            let msg = ["config error: ", "data error: ", "numeric failure: "]
                .iter()
                .find_map(|p| msg.strip_prefix(p))
                .unwrap_or(&msg);
            fail(kind, code, msg)
        }
    }
}
