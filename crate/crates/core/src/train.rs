//! Discounted-loss training through the full unrolled recurrence.
//!
//! A mini-batch is packed into one disjoint-union graph. Each node's loss
//! weight is `1 / (masked nodes in its graph)`, so the weighted mean equals
//! the average over graphs of the per-graph masked mean.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_check, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::data::SsspInstance;
use crate::error::{Error, Result};
use crate::eval::predict_final;
use crate::hierarchy::Hierarchy;
use crate::model::Iterations;
use crate::network::Network;
use crate::seeding;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_kind: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub seed: u64,
    pub gradient_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 20,
            loss_kind: LossKind::L1,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            seed: 0,
            gradient_clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c >= 0.0) {
                return Err(Error::Config(format!("gradient_clip_norm must be >= 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// `Σ_r γ^(R-r) L(ŷ_r, y)` with `L` the weighted masked mean.
pub fn discounted_loss(
    tape: &mut Tape,
    preds: &[Var],
    target: Var,
    mask: &Arc<[f64]>,
    gamma: f64,
    kind: LossKind,
) -> Result<Var> {
    let steps = preds.len();
    if steps == 0 {
        return Err(Error::Config("discounted loss needs at least one prediction".into()));
    }
    let mut total: Option<Var> = None;
    for (k, &p) in preds.iter().enumerate() {
        let l = match kind {
            LossKind::L1 => tape.l1_masked(p, target, mask)?,
            LossKind::Mse => tape.mse_masked(p, target, mask)?,
        };
        let weight = gamma.powi((steps - 1 - k) as i32);
        let l = if weight == 1.0 { l } else { tape.scale(l, weight)? };
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    Ok(total.expect("at least one step"))
}

/// Clips, applies one Adam update and zeroes the gradients.
pub fn optimizer_step(store: &mut ParamStore, cfg: &TrainConfig, step: u64) {
    if let Some(bound) = cfg.gradient_clip_norm {
        let norm = store.grad_norm();
        if norm > bound {
            store.scale_grad(bound / norm);
        }
    }
    store.adam_step(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_opt, step);
    store.zero_grad();
}

/// An instance together with its cached hierarchy.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub hierarchy: Hierarchy,
    pub target: Tensor,
    pub mask: Vec<bool>,
}

/// Builds the model's hierarchy (or a trivial one for flat models).
pub fn prepare(net: &Network, inst: &SsspInstance) -> Result<Prepared> {
    let hierarchy = match net.pooling() {
        Some(p) => p.build(&inst.graph)?,
        None => Hierarchy::identity(inst.graph.clone(), crate::hierarchy::Reduce::Sum),
    };
    Ok(Prepared { hierarchy, target: inst.target_column(), mask: inst.mask.clone() })
}

pub fn prepare_all(net: &Network, instances: &[SsspInstance]) -> Result<Vec<Prepared>> {
    instances.iter().map(|i| prepare(net, i)).collect()
}

/// Disjoint union of a batch with per-graph-normalised loss weights.
pub fn pack_batch(items: &[&Prepared]) -> Result<(Hierarchy, Tensor, Arc<[f64]>)> {
    let hs: Vec<&Hierarchy> = items.iter().map(|p| &p.hierarchy).collect();
    let union = Hierarchy::disjoint_union(&hs)?;
    let mut target = Vec::new();
    let mut weights = Vec::new();
    for p in items {
        let count = p.mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let w = 1.0 / count as f64;
        target.extend_from_slice(p.target.data());
        weights.extend(p.mask.iter().map(|&m| if m { w } else { 0.0 }));
    }
    Ok((union, Tensor::column(&target), weights.into()))
}

/// Records forward and loss for one packed batch.
pub fn batch_loss(tape: &mut Tape, net: &Network, items: &[&Prepared], kind: LossKind) -> Result<Var> {
    let (union, target, weights) = pack_batch(items)?;
    let preds = net.forward(tape, &union, net.training_iterations())?;
    let target = tape.constant(target);
    discounted_loss(tape, &preds, target, &weights, net.gamma(), kind)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// `epoch,train_loss,val_mae`; deterministic for a fixed seed.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_mae\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_mae);
        }
        s
    }

    /// `epoch,seconds` wall-clock timings.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:.3}", r.epoch, r.seconds);
        }
        s
    }

    /// One JSON object per epoch without timings.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let v = serde_json::json!({"epoch": r.epoch, "train_loss": r.train_loss, "val_mae": r.val_mae});
            s.push_str(&v.to_string());
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub best_checkpoint: Vec<u8>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

/// Mean absolute error of final-step predictions over all masked-in nodes.
pub fn mae(net: &Network, items: &[Prepared], iters: Iterations) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in items {
        let y = predict_final(net, &p.hierarchy, iters)?;
        for (i, &m) in p.mask.iter().enumerate() {
            if m {
                total += (y[i] - p.target.get(i, 0)).abs();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Trains `net` in place. Afterwards `net` holds the final parameters; the
/// best-validation parameters are returned as checkpoint bytes.
pub fn train(
    net: &mut Network,
    train_set: &[SsspInstance],
    val_set: &[SsspInstance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let train_items = prepare_all(net, train_set)?;
    let val_items = prepare_all(net, val_set)?;
    net.store_mut().zero_grad();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Vec<u8>)> = None;
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        order.shuffle(&mut seeding::stream(cfg.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &train_items[i]).collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, net, &items, cfg.loss_kind)?;
            loss_sum += tape.value(loss).get(0, 0);
            batches += 1;
            tape.backward(loss, net.store_mut())?;
            drop(tape);
            step += 1;
            optimizer_step(net.store_mut(), cfg, step);
        }
        let val_mae = if val_items.is_empty() { f64::NAN } else { mae(net, &val_items, net.training_iterations())? };
        let record = EpochRecord { epoch, train_loss: loss_sum / batches as f64, val_mae, seconds: start.elapsed().as_secs_f64() };
        on_epoch(&record);
        log.records.push(record);
        let better = match &best {
            None => true,
            Some((b, _, _)) => val_mae < *b,
        };
        if better {
            best = Some((val_mae, epoch, net.to_checkpoint()));
        }
    }
    let (best_val_mae, best_epoch, best_checkpoint) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, net.to_checkpoint()),
    };
    Ok(TrainOutcome { log, best_checkpoint, best_epoch, best_val_mae })
}

/// Finite-difference check of the discounted loss through the full forward
/// pass on one instance.
pub fn full_model_grad_check(net: &Network, inst: &SsspInstance, kind: LossKind, step: f64) -> Result<GradCheckReport> {
    let item = prepare(net, inst)?;
    finite_difference_check(
        |tape, store| {
            let mut local = net.clone();
            *local.store_mut() = store.clone();
            batch_loss(tape, &local, &[&item], kind)
        },
        net.store(),
        step,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn losses(tape: &mut Tape, values: &[f64]) -> (Vec<Var>, Var, Arc<[f64]>) {
        let preds = values.iter().map(|&v| tape.constant(Tensor::column(&[v]))).collect();
        let target = tape.constant(Tensor::column(&[0.0]));
        (preds, target, Arc::from(vec![1.0]))
    }

    #[test]
    fn discounted_loss_identities() {
        let mut tape = Tape::new();
        let (p, t, m) = losses(&mut tape, &[1.0, 2.0]);
        let l = discounted_loss(&mut tape, &p, t, &m, 1.0, LossKind::L1).unwrap();
        assert_eq!(tape.value(l).get(0, 0), 3.0);
        let l = discounted_loss(&mut tape, &p, t, &m, 0.5, LossKind::L1).unwrap();
        assert_eq!(tape.value(l).get(0, 0), 2.5);
        let l = discounted_loss(&mut tape, &p[..1], t, &m, 0.5, LossKind::L1).unwrap();
        assert_eq!(tape.value(l).get(0, 0), 1.0);
    }

    #[test]
    fn optimizer_degenerate_cases() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[0.5, -1.5]), true);
        let before = store.value(id).clone();
        let cfg = TrainConfig { gradient_clip_norm: Some(0.0), ..TrainConfig::default() };
        store.accumulate_grad(id, &Tensor::row_vector(&[2.0, 3.0]));
        optimizer_step(&mut store, &cfg, 1);
        assert_eq!(store.value(id), &before);
        assert_eq!(store.grad(id).data(), &[0.0, 0.0]);

        let cfg = TrainConfig { gradient_clip_norm: None, ..TrainConfig::default() };
        optimizer_step(&mut store, &cfg, 2);
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0), true);
        store.accumulate_grad(id, &Tensor::scalar(-0.37));
        let cfg = TrainConfig { learning_rate: 0.01, gradient_clip_norm: None, ..TrainConfig::default() };
        optimizer_step(&mut store, &cfg, 1);
        assert!((store.value(id).get(0, 0) - 1.01).abs() < 1e-7);
    }
}
