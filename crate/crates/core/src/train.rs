//! Minibatch training loop and its CSV log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{GradientSet, Loss, Network};
use crate::optim::OptimizerState;
use crate::rng::Rng;

pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub loss: Loss,
    /// Stop after this many optimizer steps, even mid-epoch.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Epoch number given to the evaluation row written before training.
    #[serde(default)]
    pub start_epoch: usize,
}

fn default_batch() -> usize {
    64
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, loss: Loss) -> Self {
        Self {
            epochs,
            batch_size,
            loss,
            max_steps: None,
            start_epoch: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub seed: u64,
    /// Free-form tags, e.g. the transfer plan a run resumed from.
    pub meta: BTreeMap<String, String>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch,step,train_loss,test_loss,test_acc,seed";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                r.step,
                r.train_loss,
                opt(r.test_loss),
                opt(r.test_acc),
                self.seed
            );
        }
        s
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

/// Mean loss over `data` and, for labelled data, argmax accuracy.
pub fn evaluate(net: &Network, data: &Dataset, loss: Loss) -> Result<(f64, Option<f64>)> {
    if data.is_empty() {
        return Err(Error::Param("cannot evaluate on an empty dataset".into()));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        data.input_into(i, &mut x);
        data.target_into(i, &mut y);
        let out = net.forward(&x)?;
        total += loss.value(&out, &y);
        if let Some(label) = data.label(i) {
            if argmax(&out) == label {
                correct += 1;
            }
        }
    }
    let n = data.len() as f64;
    let acc = data.label(0).map(|_| correct as f64 / n);
    Ok((total / n, acc))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_loss(step: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss.abs() > DIVERGENCE_THRESHOLD {
        return Err(Error::Divergence {
            step,
            loss,
            context: String::new(),
        });
    }
    Ok(())
}

/// Mean minibatch gradient of `batch` (dataset indices), in index order.
pub fn batch_gradient(
    net: &Network,
    data: &Dataset,
    batch: &[usize],
    loss: Loss,
    acc: &mut GradientSet,
) -> Result<f64> {
    acc.fill_zero();
    let w = 1.0 / batch.len() as f64;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for &i in batch {
        data.input_into(i, &mut x);
        data.target_into(i, &mut y);
        let (l, _) = net.backward_into(&x, &y, loss, w, acc)?;
        total += l;
    }
    Ok(total * w)
}

/// Trains `net` in place. Writes an evaluation row before the first step
/// and one row per epoch after it.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    test: Option<&Dataset>,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainingLog> {
    if data.is_empty() {
        return Err(Error::Param("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Param("batch_size must be >= 1".into()));
    }
    let mut log = TrainingLog {
        seed: rng.seed(),
        ..Default::default()
    };
    let eval_test = |net: &Network| -> Result<(Option<f64>, Option<f64>)> {
        match test {
            Some(t) => {
                let (l, a) = evaluate(net, t, cfg.loss)?;
                Ok((Some(l), a))
            }
            None => Ok((None, None)),
        }
    };
    let (train0, _) = evaluate(net, data, cfg.loss)?;
    check_loss(0, train0)?;
    let (tl, ta) = eval_test(net)?;
    log.rows.push(LogRow {
        epoch: cfg.start_epoch,
        step: 0,
        train_loss: train0,
        test_loss: tl,
        test_acc: ta,
    });

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = GradientSet::zeros_like(net);
    let mut step = 0usize;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let l = batch_gradient(net, data, batch, cfg.loss, &mut grads)?;
            check_loss(step, l)?;
            opt.apply(net, &grads)?;
            step += 1;
            sum += l;
            batches += 1;
        }
        if batches > 0 {
            let (tl, ta) = eval_test(net)?;
            log.rows.push(LogRow {
                epoch: cfg.start_epoch + epoch,
                step,
                train_loss: sum / batches as f64,
                test_loss: tl,
                test_acc: ta,
            });
        }
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    Ok(log)
}
