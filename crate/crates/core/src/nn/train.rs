//! Alternating-loss training with semi-online noise injection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{detection_loss, estimation_loss};
use super::net::{Architecture, Head, MultiTaskNet, Scaling};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::sim::dataset::{generate_dataset, DatasetOptions};
use crate::sim::task::{LabeledImage, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_present: usize,
    pub batch_absent: usize,
    pub batches: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Overwritten by the experiment seed when run from a config.
    #[serde(default)]
    pub seed: u64,
    /// Fresh noise on every draw from a noiseless pool.
    #[serde(default = "yes")]
    pub semi_online: bool,
    /// Batches between validation evaluations; 0 evaluates only at the end.
    #[serde(default)]
    pub validation_every: usize,
    /// When false the estimation loss trains only its own branch and the
    /// shared trunk is left to the detection loss.
    #[serde(default = "yes")]
    pub estimation_updates_trunk: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(batch_present: usize, batch_absent: usize, batches: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            batch_present,
            batch_absent,
            batches,
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            seed,
            semi_online: true,
            validation_every: 0,
            estimation_updates_trunk: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_present == 0 || self.batch_absent == 0 {
            return Err(Error::invalid(
                "train.batch",
                "both classes need at least one image per batch",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train.learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("train.beta", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("train.eps", "must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Training pool and held-out validation set.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub pool: Vec<LabeledImage>,
    /// Pool images carry no noise; each draw adds a fresh realization.
    pub noiseless: bool,
    pub validation: Vec<LabeledImage>,
}

impl TrainingData {
    /// Simulates `n_present + n_absent` pool images and a noisy validation
    /// set of `n_val` images per class.
    pub fn simulate(
        task: &TaskSpec,
        n_present: usize,
        n_absent: usize,
        n_val: usize,
        seed: u64,
        noiseless: bool,
    ) -> Result<Self> {
        let opts = DatasetOptions {
            noiseless,
            keep_background: false,
        };
        let pool = generate_dataset(task, n_present, n_absent, seed, Purpose::TrainPool, opts)?;
        let validation = generate_dataset(task, n_val, n_val, seed, Purpose::Validation, DatasetOptions::default())?;
        Ok(TrainingData {
            pool,
            noiseless,
            validation,
        })
    }
}

/// Input standardization from pool statistics (noise variance included for
/// a noiseless pool) and an output map centred on the prior.
pub fn scaling_for(task: &TaskSpec, data: &TrainingData) -> Scaling {
    let n: usize = data.pool.iter().map(|im| im.pixels.len()).sum();
    let mut mean = 0.0;
    for im in &data.pool {
        mean += im.pixels.sum();
    }
    mean /= n.max(1) as f64;
    let mut var = 0.0;
    for im in &data.pool {
        var += im.pixels.pixels().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    var /= n.max(1) as f64;
    if data.noiseless {
        var += task.noise.variance();
    }
    Scaling {
        input_mean: mean,
        input_scale: if var > 0.0 { var.sqrt() } else { 1.0 },
        output_offset: task.prior.initial(),
        output_scale: task.prior.scale(),
    }
}

/// Validation losses after a given number of mini-batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub batch: usize,
    pub detection_loss: f64,
    pub estimation_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub validation: Vec<ValidationPoint>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&ValidationPoint> {
        self.validation.last()
    }
}

/// Validation cross-entropy and negative mean utility (present images only).
pub fn evaluate(net: &MultiTaskNet, task: &TaskSpec, set: &[LabeledImage]) -> Result<ValidationPoint> {
    use rayon::prelude::*;
    let outs: Vec<_> = set
        .par_iter()
        .map(|im| net.forward(&im.pixels))
        .collect::<Result<_>>()?;
    let p: Vec<f64> = outs.iter().map(|o| o.p).collect();
    let y: Vec<f64> = set.iter().map(|im| f64::from(im.label())).collect();
    let mut est = Vec::new();
    let mut truth = Vec::new();
    for (o, im) in outs.iter().zip(set) {
        if let Some(t) = &im.theta {
            est.push(o.estimate.clone());
            truth.push(t.0.clone());
        }
    }
    let e = if est.is_empty() {
        0.0
    } else {
        estimation_loss(&est, &truth, &task.utility)?
    };
    Ok(ValidationPoint {
        batch: 0,
        detection_loss: detection_loss(&p, &y),
        estimation_loss: e,
    })
}

/// Fresh network with seeded weights and scaling from the training pool.
pub fn init_net(task: &TaskSpec, arch: Architecture, data: &TrainingData, seed: u64) -> Result<MultiTaskNet> {
    let mut net = MultiTaskNet::new(arch, scaling_for(task, data))?;
    if net.theta_dim() != task.theta_dim() {
        return Err(Error::DimensionMismatch {
            expected: task.theta_dim(),
            got: net.theta_dim(),
        });
    }
    net.init_weights(&mut stream(seed, Purpose::WeightInit, 0));
    Ok(net)
}

/// Per mini-batch: draw with replacement from each class of the pool, add
/// fresh noise when the pool is noiseless, take one Adam step on the
/// estimation loss and then one on the detection loss.
pub fn train(net: &mut MultiTaskNet, task: &TaskSpec, data: &TrainingData, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with_progress(net, task, data, cfg, |_| {})
}

pub fn train_with_progress<F>(
    net: &mut MultiTaskNet,
    task: &TaskSpec,
    data: &TrainingData,
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<TrainHistory>
where
    F: FnMut(&ValidationPoint),
{
    cfg.validate()?;
    let present: Vec<&LabeledImage> = data.pool.iter().filter(|im| im.present).collect();
    let absent: Vec<&LabeledImage> = data.pool.iter().filter(|im| !im.present).collect();
    if present.is_empty() || absent.is_empty() {
        return Err(Error::Empty("training pool class"));
    }
    let n = net.param_count();
    let est_ranges = if cfg.estimation_updates_trunk {
        net.trainable(Head::Estimation)
    } else {
        vec![net.partitions()[2].clone()]
    };
    let mut opt_est = Adam::new(cfg.adam(), n, est_ranges);
    let mut opt_det = Adam::new(cfg.adam(), n, net.trainable(Head::Detection));
    let mut history = TrainHistory::default();
    let sigma = task.noise.std;

    let mut record = |net: &MultiTaskNet, batch: usize, history: &mut TrainHistory| -> Result<()> {
        if data.validation.is_empty() {
            return Ok(());
        }
        let mut v = evaluate(net, task, &data.validation)?;
        v.batch = batch;
        if !v.detection_loss.is_finite() || !v.estimation_loss.is_finite() {
            return Err(Error::Divergence {
                batch,
                detail: format!("validation losses {} / {}", v.detection_loss, v.estimation_loss),
            });
        }
        progress(&v);
        history.validation.push(v);
        Ok(())
    };

    for b in 0..cfg.batches {
        let mut pick = stream(cfg.seed, Purpose::TrainBatch, b as u64);
        let mut noise = stream(cfg.seed, Purpose::TrainNoise, b as u64);
        let mut draw = |im: &LabeledImage| -> Vec<f64> {
            let mut x: Vec<f64> = im.pixels.pixels().to_vec();
            if data.noiseless {
                for v in &mut x {
                    let z: f64 = noise.sample(rand_distr::StandardNormal);
                    *v += sigma * z;
                }
            }
            net.standardize(&x)
        };
        let mut p_in = Vec::with_capacity(cfg.batch_present);
        let mut p_theta = Vec::with_capacity(cfg.batch_present);
        for _ in 0..cfg.batch_present {
            let im = present[pick.random_range(0..present.len())];
            p_in.push(draw(im));
            p_theta.push(im.theta.as_ref().map(|t| t.0.clone()).unwrap_or_default());
        }
        let mut a_in = Vec::with_capacity(cfg.batch_absent);
        for _ in 0..cfg.batch_absent {
            a_in.push(draw(absent[pick.random_range(0..absent.len())]));
        }

        let mut grad = vec![0.0; n];
        let le = net.estimation_gradient(&p_in, &p_theta, &task.utility, &mut grad);
        check(b, "estimation", le, &grad)?;
        opt_est.step(net.params_mut(), &grad);

        let mut inputs = p_in;
        inputs.extend(a_in);
        let mut labels = vec![1.0; cfg.batch_present];
        labels.resize(inputs.len(), 0.0);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let ld = net.detection_gradient(&inputs, &labels, &mut grad);
        check(b, "detection", ld, &grad)?;
        opt_det.step(net.params_mut(), &grad);

        if cfg.validation_every > 0 && (b + 1) % cfg.validation_every == 0 {
            record(net, b + 1, &mut history)?;
        }
    }
    if cfg.validation_every == 0 || !cfg.batches.is_multiple_of(cfg.validation_every) {
        record(net, cfg.batches, &mut history)?;
    }
    Ok(history)
}

fn check(batch: usize, which: &str, loss: f64, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            batch,
            detail: format!("{which} loss {loss} or its gradient is not finite"),
        });
    }
    Ok(())
}
