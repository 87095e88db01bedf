use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ghr::commands;
use ghr::config::{cli_override, RunConfig};
use ghr::data::Split;
use ghr::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "ghr", version, about = "Graph hierarchical recurrence on random geometric shortest paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (defaults to the small_oor preset).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[arg(long = "t-low", global = true)]
    t_low: Option<usize>,
    #[arg(long = "t-high", global = true)]
    t_high: Option<usize>,
    #[arg(long, global = true)]
    r: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory, overriding `paths.dataset`.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits and a manifest.
    Gen,
    /// Train the configured variant; writes the best-validation checkpoint and logs.
    Train {
        /// Variant to train instead of the configured one.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint and write JSON and CSV reports.
    Eval {
        /// Checkpoint file, overriding `paths.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Per-graph diameters of the low and pooled graphs.
    PoolStats {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 10)]
        bin_width: usize,
    },
    /// Train and evaluate every configured variant and seed.
    Ablate,
    /// Gradient, pooling, equivariance and fixed-point checks.
    Selfcheck,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, fallback: &Path) -> PathBuf {
    common.out.clone().unwrap_or_else(|| fallback.to_path_buf())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = load_config(c)?;
    let dataset = c.dataset.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
    match cli.command {
        Command::Gen => {
            let out = c.out.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
            let m = commands::cmd_gen(&cfg, &out)?;
            println!("{}", m.description);
            println!(
                "wrote {} train, {} val, {} test instances to {}",
                m.train.instances,
                m.val.instances,
                m.test.instances,
                out.display()
            );
        }
        Command::Train { variant } => {
            let variant = variant.unwrap_or_else(|| cfg.variant.clone());
            let fallback = cfg.paths.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
            let out = out_dir(c, &fallback);
            let s = commands::cmd_train(&cfg, &variant, cfg.seed, &dataset, &out, |r| {
                println!("epoch {:>3}  train_loss {:.5}  val_mae {:.5}  {:.1}s", r.epoch, r.train_loss, r.val_mae, r.seconds);
            })?;
            println!("final validation MAE {:.6}", s.final_val_mae);
            println!("best validation MAE {:.6} at epoch {} -> {}", s.best_val_mae, s.best_epoch, s.checkpoint.display());
        }
        Command::Eval { checkpoint, split } => {
            let ck = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let out = out_dir(c, &cfg.paths.reports);
            let o = cli_override(c.r, c.t_high, c.t_low);
            let r = commands::cmd_eval(&ck, &dataset, split.into(), o, c.workers, &out)?;
            let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            println!(
                "{} (r={}, t_high={}, t_low={}): test {}  id {}  oor {}  max_pred {}  over {} nodes",
                r.model_variant,
                r.iterations.r,
                r.iterations.t_high,
                r.iterations.t_low,
                show(r.test_mae),
                show(r.id_mae),
                show(r.oor_mae),
                show(r.max_pred),
                r.nodes
            );
            for d in &r.per_distance {
                println!("  distance {:>3}: mae {:.4} ({} nodes)", d.distance, d.mae, d.count);
            }
        }
        Command::PoolStats { split, bin_width } => {
            let out = out_dir(c, &cfg.paths.reports);
            let rows = commands::cmd_pool_stats(&cfg, &dataset, split.into(), bin_width, &out)?;
            print!("{}", commands::binned_pool_stats(&rows, bin_width.max(1)));
        }
        Command::Ablate => {
            let out = out_dir(c, &cfg.paths.reports);
            let rows = commands::cmd_ablate(&cfg, &dataset, c.workers, &out, |v, s, r| {
                println!("{v} seed {s} epoch {:>3}  train_loss {:.5}  val_mae {:.5}", r.epoch, r.train_loss, r.val_mae);
            })?;
            print!("{}", ghr::eval::ablation_summary_csv(&rows));
        }
        Command::Selfcheck => {
            let results = commands::cmd_selfcheck(cfg.seed)?;
            let mut failed = 0;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::Config(format!("{failed} self-check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
