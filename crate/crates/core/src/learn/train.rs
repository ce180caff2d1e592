use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetSplit, LabeledExample};
use super::metrics::evaluate;
use super::net::{argmax, ConvNetModel, Grads};
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Stop after this many epochs without a better validation score
    /// (0 disables early stopping).
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            weight_decay: 1e-4,
            momentum: 0.9,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return invalid("batch_size and epochs must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return invalid("weight_decay must be >= 0 and momentum in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the predictions made while the epoch's batches were fitted.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Momentum SGD on mean cross-entropy. After every epoch the validation set
/// is scored; the returned model is the snapshot with the best validation
/// accuracy (ties broken by lower validation loss).
pub fn train(model: &ConvNetModel, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(ConvNetModel, TrainLog)> {
    cfg.validate()?;
    model.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return invalid("training needs non-empty train and validation sets");
    }
    let mut m = model.clone();
    let mut velocity = m.zero_grads();
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut best = (m.clone(), f64::NEG_INFINITY, f64::INFINITY, 0usize);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let feats: Vec<&[f64]> = idx.iter().map(|&i| split.train[i].features.as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| split.train[i].label).collect();
            let (loss, grads, logits) = m.loss_and_grads(&feats, &labels)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            loss_sum += loss * idx.len() as f64;
            correct += logits.iter().zip(&labels).filter(|(l, &y)| argmax(l) == y).count();
            step(&mut m, &mut velocity, &grads, cfg);
        }
        let n = split.train.len() as f64;
        let val = evaluate(&m, &split.val)?;
        let val_loss = mean_loss(&m, &split.val)?;
        if !val_loss.is_finite() || m.params.iter().any(|p| p.data.iter().any(|w| !w.is_finite())) {
            return Err(Error::TrainingDiverged { epoch, loss: val_loss });
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy: val.accuracy,
        });
        if val.accuracy > best.1 || (val.accuracy == best.1 && val_loss < best.2) {
            best = (m.clone(), val.accuracy, val_loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    let (model, best_val_accuracy, _, best_epoch) = best;
    Ok((
        model,
        TrainLog {
            epochs: log,
            best_epoch,
            best_val_accuracy,
        },
    ))
}

fn step(m: &mut ConvNetModel, velocity: &mut Grads, grads: &Grads, cfg: &TrainConfig) {
    for ((p, v), g) in m.params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        let wd = if p.is_weight() { cfg.weight_decay } else { 0.0 };
        for ((w, v), &g) in p.data.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = cfg.momentum * *v + g + wd * *w;
            *w -= cfg.learning_rate * *v;
        }
    }
}

/// Mean cross-entropy of `model` over `examples`.
pub fn mean_loss(model: &ConvNetModel, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return invalid("no examples");
    }
    let mut total = 0.0;
    for chunk in examples.chunks(64) {
        let feats: Vec<&[f64]> = chunk.iter().map(|e| e.features.as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        total += model.loss(&feats, &labels)? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Minimum number of weights compared by [`grad_check`].
pub const GRAD_CHECK_SAMPLES: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Draws rejected because a perturbation flipped some ReLU.
    pub kink_skips: usize,
}

/// Compare back-propagated gradients of the single-example loss against
/// central differences on randomly drawn weights (every tensor at least
/// once). Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(model: &ConvNetModel, example: &LabeledExample, epsilon: f64) -> Result<GradCheckReport> {
    let feats = [example.features.as_slice()];
    let labels = [example.label];
    let (_, grads, _) = model.loss_and_grads(&feats, &labels)?;
    grad_check_against(model, example, epsilon, &grads)
}

pub(crate) fn grad_check_against(
    model: &ConvNetModel,
    example: &LabeledExample,
    epsilon: f64,
    analytic: &Grads,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return invalid(format!("epsilon must lie in [1e-6, 1e-3], got {epsilon}"));
    }
    let feats = [example.features.as_slice()];
    let labels = [example.label];
    let (_, base_pattern) = model.loss_and_pattern(&feats, &labels)?;
    let mut r = rng::stream(0x6772_6164, "grad-check", example.label as u64);
    let total = model.num_weights();
    let mut picks: Vec<(usize, usize)> = model
        .params
        .iter()
        .enumerate()
        .map(|(t, p)| (t, r.random_range(0..p.data.len())))
        .collect();
    let offsets: Vec<usize> = model
        .params
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.data.len();
            Some(o)
        })
        .collect();
    let locate = |flat: usize| {
        let t = offsets.partition_point(|&o| o <= flat) - 1;
        (t, flat - offsets[t])
    };
    let mut m = model.clone();
    let (mut checked, mut kink_skips, mut worst) = (0, 0, 0.0f64);
    let mut tries = 0;
    while checked < GRAD_CHECK_SAMPLES.max(picks.len()) {
        tries += 1;
        if tries > 50 * GRAD_CHECK_SAMPLES {
            return invalid("grad check could not find enough kink-free weights");
        }
        let (t, i) = if picks.is_empty() {
            locate(r.random_range(0..total))
        } else {
            picks.remove(0)
        };
        let w0 = m.params[t].data[i];
        m.params[t].data[i] = w0 + epsilon;
        let (lp, pat_p) = m.loss_and_pattern(&feats, &labels)?;
        m.params[t].data[i] = w0 - epsilon;
        let (lm, pat_m) = m.loss_and_pattern(&feats, &labels)?;
        m.params[t].data[i] = w0;
        if pat_p != base_pattern || pat_m != base_pattern {
            kink_skips += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * epsilon);
        let a = analytic[t][i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked,
        kink_skips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::dataset::SceneMeta;
    use crate::learn::net::Arch;
    use crate::learn::Task;

    fn example(len: usize, label: usize, seed: u64) -> LabeledExample {
        let mut r = rng::stream(seed, "gc", 0);
        LabeledExample {
            features: (0..len).map(|_| r.random_range(-1.0..1.0)).collect(),
            shape: [1, len],
            label,
            meta: SceneMeta::synthetic(seed),
        }
    }

    #[test]
    fn grad_check_small_models() {
        let m = ConvNetModel::new(Task::AppId, Arch::for_task(Task::AppId, [1, 96], 5), 1).unwrap();
        let rep = grad_check(&m, &example(96, 2, 1), 1e-5).unwrap();
        assert!(rep.checked >= 100);
        assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
        let m = ConvNetModel::new(Task::Activity, Arch::for_task(Task::Activity, [16, 32], 4), 2).unwrap();
        let mut ex = example(512, 1, 2);
        ex.shape = [16, 32];
        let rep = grad_check(&m, &ex, 1e-5).unwrap();
        assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let m = ConvNetModel::new(Task::AppId, Arch::for_task(Task::AppId, [1, 96], 5), 1).unwrap();
        let ex = example(96, 0, 3);
        let (_, mut g, _) = m.loss_and_grads(&[ex.features.as_slice()], &[ex.label]).unwrap();
        for t in &mut g {
            if let Some(v) = t.first_mut() {
                *v = *v * 1.5 + 1e-3;
            }
            t.iter_mut().for_each(|v| *v *= 1.1);
        }
        let rep = grad_check_against(&m, &ex, 1e-5, &g).unwrap();
        assert!(rep.max_rel_error > 1e-2, "{rep:?}");
    }

    #[test]
    fn zero_model_zero_input_agrees() {
        let m = ConvNetModel::zeros(Task::AppId, Arch::for_task(Task::AppId, [1, 64], 3)).unwrap();
        let mut ex = example(64, 1, 0);
        ex.features.iter_mut().for_each(|v| *v = 0.0);
        let (_, g, _) = m.loss_and_grads(&[ex.features.as_slice()], &[1]).unwrap();
        let hidden: f64 = g[..g.len() - 2].iter().flatten().map(|v| v.abs()).sum();
        assert_eq!(hidden, 0.0);
        let rep = grad_check(&m, &ex, 1e-4).unwrap();
        assert!(rep.max_rel_error <= 1e-4);
    }

    #[test]
    fn epsilon_range_enforced() {
        let m = ConvNetModel::zeros(Task::AppId, Arch::for_task(Task::AppId, [1, 64], 3)).unwrap();
        assert!(grad_check(&m, &example(64, 0, 0), 1e-2).is_err());
    }
}
