//! Distance-stratified error, in-range / out-of-range reports and the
//! ablation summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::data::SsspInstance;
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::model::Iterations;
use crate::network::Network;
use crate::train::{prepare_all, Prepared};

/// Final-step prediction per low-level node.
pub fn predict_final(net: &Network, h: &Hierarchy, iters: Iterations) -> Result<Vec<f64>> {
    let preds = net.predict(h, iters)?;
    let last = preds.last().ok_or_else(|| Error::Config("model produced no predictions".into()))?;
    Ok(last.data().to_vec())
}

/// Final predictions for every item, split over `workers` threads.
/// Output order follows input order regardless of `workers`.
pub fn predict_all(net: &Network, items: &[Prepared], iters: Iterations, workers: usize) -> Result<Vec<Vec<f64>>> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(|p| predict_final(net, &p.hierarchy, iters)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let parts: Vec<Result<Vec<Vec<f64>>>> = thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|p| predict_final(net, &p.hierarchy, iters)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Running sums of absolute error keyed by integer label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Strata {
    groups: BTreeMap<usize, (f64, usize)>,
}

impl Strata {
    pub fn add(&mut self, preds: &[f64], labels: &[Option<usize>], mask: &[bool]) -> Result<()> {
        if preds.len() != labels.len() || labels.len() != mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "stratified MAE: {} predictions, {} labels, {} mask entries",
                preds.len(),
                labels.len(),
                mask.len()
            )));
        }
        for ((&p, &l), &m) in preds.iter().zip(labels).zip(mask) {
            if let (true, Some(d)) = (m, l) {
                let e = self.groups.entry(d).or_insert((0.0, 0));
                e.0 += (p - d as f64).abs();
                e.1 += 1;
            }
        }
        Ok(())
    }

    /// distance → (MAE, count).
    pub fn mae_map(&self) -> BTreeMap<usize, (f64, usize)> {
        self.groups.iter().map(|(&d, &(s, c))| (d, (s / c as f64, c))).collect()
    }

    pub fn count(&self) -> usize {
        self.groups.values().map(|g| g.1).sum()
    }

    fn mean_where(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let (s, c) = self
            .groups
            .iter()
            .filter(|(&d, _)| keep(d))
            .fold((0.0, 0usize), |(s, c), (_, &(gs, gc))| (s + gs, c + gc));
        (c > 0).then(|| s / c as f64)
    }
}

/// Stratified MAE of a single prediction vector.
pub fn stratified_mae(preds: &[f64], labels: &[Option<usize>], mask: &[bool]) -> Result<BTreeMap<usize, (f64, usize)>> {
    let mut s = Strata::default();
    s.add(preds, labels, mask)?;
    Ok(s.mae_map())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub distance: usize,
    pub mae: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_variant: String,
    pub iterations: Iterations,
    pub train_cap: usize,
    pub per_distance: Vec<DistanceRow>,
    pub test_mae: Option<f64>,
    pub id_mae: Option<f64>,
    pub oor_mae: Option<f64>,
    pub max_pred: Option<f64>,
    pub nodes: usize,
}

impl EvalReport {
    pub fn mae_at(&self, distance: usize) -> Option<f64> {
        self.per_distance.iter().find(|r| r.distance == distance).map(|r| r.mae)
    }

    /// `distance,mae,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("distance,mae,count\n");
        for r in &self.per_distance {
            let _ = writeln!(s, "{},{},{}", r.distance, r.mae, r.count);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Builds a report from final predictions; nodes with `label <= train_cap`
/// are in range, the rest out of range.
pub fn id_oor_report(
    preds: &[Vec<f64>],
    instances: &[SsspInstance],
    train_cap: usize,
    model_variant: &str,
    iterations: Iterations,
) -> Result<EvalReport> {
    if train_cap == 0 {
        return Err(Error::Config("train_cap must be positive".into()));
    }
    if preds.len() != instances.len() {
        return Err(Error::ShapeMismatch(format!("{} prediction vectors for {} instances", preds.len(), instances.len())));
    }
    let mut strata = Strata::default();
    let mut max_pred: Option<f64> = None;
    for (p, inst) in preds.iter().zip(instances) {
        strata.add(p, &inst.labels, &inst.mask)?;
        for (&y, &m) in p.iter().zip(&inst.mask) {
            if m {
                max_pred = Some(max_pred.map_or(y, |cur| cur.max(y)));
            }
        }
    }
    let per_distance =
        strata.mae_map().into_iter().map(|(distance, (mae, count))| DistanceRow { distance, mae, count }).collect();
    Ok(EvalReport {
        model_variant: model_variant.to_string(),
        iterations,
        train_cap,
        per_distance,
        test_mae: strata.mean_where(|_| true),
        id_mae: strata.mean_where(|d| d <= train_cap),
        oor_mae: strata.mean_where(|d| d > train_cap),
        max_pred,
        nodes: strata.count(),
    })
}

/// Runs `net` on `instances` at `iters` and reports.
pub fn evaluate(
    net: &Network,
    instances: &[SsspInstance],
    iters: Iterations,
    train_cap: usize,
    workers: usize,
) -> Result<EvalReport> {
    let items = prepare_all(net, instances)?;
    let preds = predict_all(net, &items, iters, workers)?;
    id_oor_report(&preds, instances, train_cap, &net.variant_name(), iters)
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model_variant: String,
    pub seed: u64,
    pub test_mae: Option<f64>,
    pub id_mae: Option<f64>,
    pub oor_mae: Option<f64>,
    pub max_pred: Option<f64>,
}

impl AblationRow {
    pub fn from_report(variant: &str, seed: u64, r: &EvalReport) -> Self {
        AblationRow {
            model_variant: variant.to_string(),
            seed,
            test_mae: r.test_mae,
            id_mae: r.id_mae,
            oor_mae: r.oor_mae,
            max_pred: r.max_pred,
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-run rows: `model_variant,seed,test_mae,id_mae,oor_mae,max_pred`.
pub fn ablation_runs_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("model_variant,seed,test_mae,id_mae,oor_mae,max_pred\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.model_variant,
            r.seed,
            cell(r.test_mae),
            cell(r.id_mae),
            cell(r.oor_mae),
            cell(r.max_pred)
        );
    }
    s
}

/// Cross-run means per variant, in first-appearance order:
/// `model_variant,runs,test_mae,id_mae,oor_mae,max_pred`.
pub fn ablation_summary_csv(rows: &[AblationRow]) -> String {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.model_variant.as_str()) {
            order.push(&r.model_variant);
        }
    }
    let mean = |vals: Vec<Option<f64>>| {
        let present: Vec<f64> = vals.into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    };
    let mut s = String::from("model_variant,runs,test_mae,id_mae,oor_mae,max_pred\n");
    for v in order {
        let group: Vec<&AblationRow> = rows.iter().filter(|r| r.model_variant == v).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            v,
            group.len(),
            cell(mean(group.iter().map(|r| r.test_mae).collect())),
            cell(mean(group.iter().map(|r| r.id_mae).collect())),
            cell(mean(group.iter().map(|r| r.oor_mae).collect())),
            cell(mean(group.iter().map(|r| r.max_pred).collect())),
        );
    }
    s
}
