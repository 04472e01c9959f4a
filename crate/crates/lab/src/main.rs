use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use shadingnet_core::metrics::MetricReport;
use shadingnet_lab::dataset::{self, Split};
use shadingnet_lab::error::exit;
use shadingnet_lab::{compare, decompose, eval, report, train, Result, RunConfig};

/// Fine-grained intrinsic image decomposition: synthesize data, train,
/// evaluate and decompose.
#[derive(Parser)]
#[command(name = "shadingnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with full ground truth.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// HxW, or a single extent for square images.
        #[arg(long, value_parser = parse_resolution, default_value = "64")]
        res: [usize; 2],
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch; flags override values from --config.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Report directory; defaults to eval_<split> beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose one image into reflectance and shading layers.
    Decompose {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted maps with ground truth, no network involved.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report directory; defaults to the prediction directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file whose keys mirror the run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_resolution)]
    res: Option<[usize; 2]>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_halve_every: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the checkpoint of every epoch.
    #[arg(long)]
    keep_checkpoints: bool,
}

fn parse_resolution(s: &str) -> std::result::Result<[usize; 2], String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad extent {v:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok([parse(h)?, parse(w)?]),
        None => {
            let v = parse(s)?;
            Ok([v, v])
        }
    }
}

impl TrainArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.dataset {
            c.dataset_dir = v;
        }
        if let Some(v) = self.out {
            c.output_dir = v;
        }
        if let Some(v) = self.res {
            c.resolution = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.lr_halve_every {
            c.lr_halve_every = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.keep_checkpoints |= self.keep_checkpoints;
        c.validate()?;
        Ok(c)
    }
}

fn emit(dir: &std::path::Path, value: &impl Serialize, metrics: &MetricReport, footer: &str) -> Result<()> {
    let text = format!("{}{footer}", report::table(metrics));
    print!("{text}");
    report::write(dir, value, &text)?;
    eprintln!("wrote {}", dir.join(report::JSON_FILE).display());
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { n, seed, res, out } => {
            let m = dataset::generate(n, seed, res, &out)?;
            let train = m.split(Split::Train).count();
            eprintln!("wrote {n} samples to {} ({train} train, {} test)", out.display(), n - train);
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let (_, summary) = train::train(&cfg, |e| {
                eprintln!("epoch {:>4}  lr {:.3e}  mean loss {:.6}  steps {}", e.epoch, e.lr, e.mean_total, e.steps);
            })?;
            eprintln!("final checkpoint {}", summary.final_checkpoint.display());
        }
        Command::Eval { dataset, checkpoint, split, out } => {
            let mut net = train::load_network(&checkpoint)?;
            let mut r = eval::evaluate(&mut net, &dataset, split)?;
            r.checkpoint = Some(checkpoint.clone());
            let dir = out.unwrap_or_else(|| {
                let parent = checkpoint.parent().map(PathBuf::from).unwrap_or_default();
                parent.join(format!("eval_{}", if split == Split::Train { "train" } else { "test" }))
            });
            emit(&dir, &r, &r.metrics, &format!("skipped {}\n", r.skipped))?;
        }
        Command::Decompose { image, checkpoint, out } => {
            let mut net = train::load_network(&checkpoint)?;
            for p in decompose::decompose_image(&mut net, &image, &out)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Metrics { pred, gt, out } => {
            let r = compare::compare_dirs(&pred, &gt)?;
            emit(&out.unwrap_or(pred), &r, &r, "")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
