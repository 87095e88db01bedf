//! Command implementations behind the `ghr` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checks;
use crate::config::RunConfig;
use crate::data::{self, Manifest, Split};
use crate::error::{Error, Result};
use crate::eval::{self, ablation_runs_csv, ablation_summary_csv, AblationRow, EvalReport};
use crate::layers::Backbone;
use crate::model::{GhrConfig, IterationOverride};
use crate::network::{Network, NetworkConfig};
use crate::train::{self, EpochRecord, TrainLog};

/// Generates all splits into `out`.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let data_cfg = data::RggConfig { seed: cfg.seed, ..cfg.data.clone() };
    let ds = data::build_splits(&data_cfg)?;
    data::write_dataset(out, &ds)?;
    Ok(ds.manifest)
}

/// Files written by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model_variant: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub final_val_mae: f64,
    pub checkpoint: PathBuf,
}

/// Writes `checkpoint.bin`, `train_log.csv`, `train_log.jsonl` and
/// `train_timing.csv` to `out`. Everything except the timing file is a
/// pure function of the configuration and dataset.
pub fn write_training(out: &Path, checkpoint: &[u8], log: &TrainLog) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let ck = out.join("checkpoint.bin");
    fs::write(&ck, checkpoint)?;
    fs::write(out.join("train_log.csv"), log.to_csv())?;
    fs::write(out.join("train_log.jsonl"), log.to_jsonl())?;
    fs::write(out.join("train_timing.csv"), log.timing_csv())?;
    Ok(ck)
}

/// Trains `variant` with `seed` on the dataset in `dataset` and writes
/// the artifacts to `out`.
pub fn cmd_train(
    cfg: &RunConfig,
    variant: &str,
    seed: u64,
    dataset: &Path,
    out: &Path,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    let train_set = data::read_split(dataset, Split::Train)?;
    let val_set = data::read_split(dataset, Split::Val)?;
    let mut net = Network::new(cfg.network(variant)?, seed)?;
    let tcfg = train::TrainConfig { seed, ..cfg.train.clone() };
    let outcome = train::train(&mut net, &train_set, &val_set, &tcfg, on_epoch)?;
    let ck = write_training(out, &outcome.best_checkpoint, &outcome.log)?;
    let summary = TrainSummary {
        model_variant: net.variant_name(),
        seed,
        best_epoch: outcome.best_epoch,
        best_val_mae: outcome.best_val_mae,
        final_val_mae: outcome.log.records.last().map_or(f64::NAN, |r| r.val_mae),
        checkpoint: ck,
    };
    fs::write(out.join("train_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Training cap of a dataset: the configured cap, else the largest training
/// label.
pub fn train_cap(manifest: &Manifest) -> Result<usize> {
    manifest
        .config
        .distance_cap
        .or(manifest.train.max_label)
        .filter(|&c| c > 0)
        .ok_or_else(|| Error::Config("dataset has no positive training distance cap".into()))
}

/// Evaluates a checkpoint on one split. Flag overrides are applied on top of
/// the checkpoint's own inference settings.
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    split: Split,
    overrides: IterationOverride,
    workers: usize,
    out: &Path,
) -> Result<EvalReport> {
    let mut net = Network::from_checkpoint(&fs::read(checkpoint)?)?;
    net.set_inference(overrides);
    let manifest = data::read_manifest(dataset)?;
    let instances = data::read_split(dataset, split)?;
    let report = eval::evaluate(&net, &instances, net.inference_iterations(), train_cap(&manifest)?, workers)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("eval_{}.json", split.name())), report.to_json() + "\n")?;
    fs::write(out.join(format!("eval_{}.csv", split.name())), report.to_csv())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub graph_id: usize,
    pub n_low: usize,
    pub n_high: usize,
    pub diam_low: usize,
    pub diam_high: usize,
    /// `diam_high / diam_low`, 1 when both are 0.
    pub ratio: f64,
}

/// Per-graph low/high sizes and diameters of the hierarchies built with the
/// configured pooling, written as `pool_stats.csv` plus a summary binned by
/// graph size (`pool_stats_binned.csv`, bins of `bin_width` nodes).
pub fn cmd_pool_stats(cfg: &RunConfig, dataset: &Path, split: Split, bin_width: usize, out: &Path) -> Result<Vec<PoolRow>> {
    let instances = data::read_split(dataset, split)?;
    let mut rows = Vec::with_capacity(instances.len());
    for (graph_id, inst) in instances.iter().enumerate() {
        let h = cfg.ghr.pooling.build(&inst.graph)?;
        let diam_low = h.low.diameter().unwrap_or(0);
        let diam_high = h.high.diameter().unwrap_or(0);
        let ratio = if diam_low == 0 { 1.0 } else { diam_high as f64 / diam_low as f64 };
        rows.push(PoolRow {
            graph_id,
            n_low: h.low.num_nodes(),
            n_high: h.high.num_nodes(),
            diam_low,
            diam_high,
            ratio,
        });
    }
    fs::create_dir_all(out)?;
    let mut csv = String::from("graph_id,n_low,n_high,diam_low,diam_high,ratio\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.graph_id, r.n_low, r.n_high, r.diam_low, r.diam_high, r.ratio);
    }
    fs::write(out.join("pool_stats.csv"), csv)?;
    fs::write(out.join("pool_stats_binned.csv"), binned_pool_stats(&rows, bin_width.max(1)))?;
    Ok(rows)
}

/// `bin_start,bin_end,graphs,mean_diam_low,mean_diam_high,mean_ratio`.
pub fn binned_pool_stats(rows: &[PoolRow], bin_width: usize) -> String {
    let mut bins: BTreeMap<usize, Vec<&PoolRow>> = BTreeMap::new();
    for r in rows {
        bins.entry(r.n_low / bin_width).or_default().push(r);
    }
    let mut s = String::from("bin_start,bin_end,graphs,mean_diam_low,mean_diam_high,mean_ratio\n");
    for (b, group) in bins {
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&PoolRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            b * bin_width,
            (b + 1) * bin_width - 1,
            group.len(),
            mean(&|r| r.diam_low as f64),
            mean(&|r| r.diam_high as f64),
            mean(&|r| r.ratio),
        );
    }
    s
}

/// Trains and evaluates every configured variant for every configured seed.
/// Each run lands in `out/<variant>/seed<k>/`; the tables go to
/// `out/ablation_runs.csv` and `out/ablation_summary.csv`.
pub fn cmd_ablate(
    cfg: &RunConfig,
    dataset: &Path,
    workers: usize,
    out: &Path,
    mut progress: impl FnMut(&str, u64, &EpochRecord),
) -> Result<Vec<AblationRow>> {
    let manifest = data::read_manifest(dataset)?;
    let cap = train_cap(&manifest)?;
    let test = data::read_split(dataset, Split::Test)?;
    let mut rows = Vec::new();
    for variant in &cfg.variants {
        for &seed in &cfg.seeds {
            let run_dir = out.join(variant).join(format!("seed{seed}"));
            let summary = cmd_train(cfg, variant, seed, dataset, &run_dir, |r| progress(variant, seed, r))?;
            let net = Network::from_checkpoint(&fs::read(&summary.checkpoint)?)?;
            let report = eval::evaluate(&net, &test, net.inference_iterations(), cap, workers)?;
            fs::write(run_dir.join("eval_test.json"), report.to_json() + "\n")?;
            fs::write(run_dir.join("eval_test.csv"), report.to_csv())?;
            rows.push(AblationRow::from_report(variant, seed, &report));
            fs::write(out.join("ablation_runs.csv"), ablation_runs_csv(&rows))?;
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("ablation_runs.csv"), ablation_runs_csv(&rows))?;
    fs::write(out.join("ablation_summary.csv"), ablation_summary_csv(&rows))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name: name.to_string(), passed, detail }
}

/// Gradient, pooling, equivariance and fixed-point checks.
pub fn cmd_selfcheck(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for bb in [Backbone::GatedGine, Backbone::Gine] {
        let r = checks::layer_grad_check(bb, seed)?;
        out.push(outcome(
            &format!("layer gradient ({})", bb.as_str()),
            r.max_rel_error <= 1e-6,
            format!("max relative error {:.3e}", r.max_rel_error),
        ));
        let r = checks::model_grad_check(bb, seed)?;
        out.push(outcome(
            &format!("model gradient ({})", bb.as_str()),
            r.max_rel_error <= 1e-4,
            format!("max relative error {:.3e} over {} entries", r.max_rel_error, r.entries_checked),
        ));
    }
    let pooling = GhrConfig::default().pooling;
    let lip = checks::lipschitz_sweep(50, seed, &pooling)?;
    out.push(outcome(
        "pooling contracts distances",
        lip.passed(),
        format!(
            "{} graphs, {} pairs, {} pair violations, {} diameter violations",
            lip.graphs, lip.pairs, lip.pair_violations, lip.diameter_violations
        ),
    ));
    let cfg = GhrConfig { m: 8, r: 2, t_high: 2, t_low: 3, ..GhrConfig::default() };
    let net = Network::new(NetworkConfig::Ghr(cfg), seed)?;
    let mut worst_perm = 0.0f64;
    let mut worst_zero = 0.0f64;
    for k in 0..5u64 {
        let mut rng = crate::seeding::stream(seed, "check.instances", k);
        let g = data::sample_rgg(20, 40, 6.0, &mut rng)?;
        let h = pooling.build(&g)?;
        worst_perm = worst_perm.max(checks::permutation_deviation(&net, &h, seed + k)?);
        worst_zero = worst_zero.max(checks::zero_weight_predictions(&net, &h)?);
    }
    out.push(outcome("permutation equivariance", worst_perm <= 1e-9, format!("max deviation {worst_perm:.3e}")));
    out.push(outcome("zero-weight fixed point", worst_zero == 0.0, format!("max |prediction| {worst_zero:.3e}")));
    Ok(out)
}
