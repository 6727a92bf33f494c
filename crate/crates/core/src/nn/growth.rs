//! Architecture growth: add convolutional layers one at a time while the
//! validation loss keeps improving by a relative threshold.

use serde::{Deserialize, Serialize};

use super::net::Architecture;
use super::train::{init_net, train, TrainConfig, TrainingData};
use crate::error::{Error, Result};
use crate::sim::task::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthConfig {
    /// Minimum relative improvement that keeps a new layer.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub max_shared: usize,
    pub max_estimation: usize,
    pub filters: usize,
    pub kernel: usize,
}

fn default_threshold() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    Shared,
    Estimation,
}

/// One trained candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthStep {
    pub block: Block,
    pub shared_convs: usize,
    pub estimation_convs: usize,
    /// Validation cross-entropy for the shared block, validation estimation
    /// loss for the estimation block.
    pub loss: f64,
    /// Relative decrease against the previous kept candidate.
    pub improvement: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthOutcome {
    pub architecture: Architecture,
    pub audit: Vec<GrowthStep>,
}

/// Number of candidates kept: the length of the leading run of
/// improvements at or above `threshold`.
pub fn accepted_candidates(improvements: &[f64], threshold: f64) -> usize {
    improvements.iter().take_while(|i| **i >= threshold).count()
}

/// Relative decrease from `prev` to `next`.
pub fn relative_improvement(prev: f64, next: f64) -> f64 {
    if prev == 0.0 {
        return 0.0;
    }
    (prev - next) / prev.abs()
}

/// Grows the shared block against validation cross-entropy, then the
/// estimation block against validation estimation loss, starting from one
/// convolution in each. Every candidate is trained from scratch with `cfg`.
pub fn grow_architecture(
    task: &TaskSpec,
    data: &TrainingData,
    cfg: &TrainConfig,
    growth: &GrowthConfig,
) -> Result<GrowthOutcome> {
    if growth.max_shared == 0 || growth.max_estimation == 0 {
        return Err(Error::invalid("growth.max", "each block needs at least one layer"));
    }
    if data.validation.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let fit = |shared: usize, est: usize| -> Result<(f64, f64)> {
        let arch = Architecture::standard(
            task.width(),
            task.height(),
            shared,
            est,
            growth.filters,
            growth.kernel,
            task.theta_dim(),
        );
        let mut net = init_net(task, arch, data, cfg.seed)?;
        let h = train(&mut net, task, data, cfg)?;
        let v = h.last().copied().ok_or(Error::Empty("validation history"))?;
        Ok((v.detection_loss, v.estimation_loss))
    };

    let mut audit = Vec::new();
    let (mut best_det, mut best_est) = fit(1, 1)?;
    audit.push(GrowthStep {
        block: Block::Shared,
        shared_convs: 1,
        estimation_convs: 1,
        loss: best_det,
        improvement: None,
        accepted: true,
    });
    let mut shared = 1;
    while shared < growth.max_shared {
        let (det, est) = fit(shared + 1, 1)?;
        let imp = relative_improvement(best_det, det);
        let accepted = accepted_candidates(&[imp], growth.threshold) == 1;
        audit.push(GrowthStep {
            block: Block::Shared,
            shared_convs: shared + 1,
            estimation_convs: 1,
            loss: det,
            improvement: Some(imp),
            accepted,
        });
        if !accepted {
            break;
        }
        shared += 1;
        best_det = det;
        best_est = est;
    }

    let mut est_convs = 1;
    while est_convs < growth.max_estimation {
        let (_, est) = fit(shared, est_convs + 1)?;
        let imp = relative_improvement(best_est, est);
        let accepted = accepted_candidates(&[imp], growth.threshold) == 1;
        audit.push(GrowthStep {
            block: Block::Estimation,
            shared_convs: shared,
            estimation_convs: est_convs + 1,
            loss: est,
            improvement: Some(imp),
            accepted,
        });
        if !accepted {
            break;
        }
        est_convs += 1;
        best_est = est;
    }
    let architecture = Architecture::standard(
        task.width(),
        task.height(),
        shared,
        est_convs,
        growth.filters,
        growth.kernel,
        task.theta_dim(),
    );
    Ok(GrowthOutcome { architecture, audit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_keeps_the_last_candidate_above_threshold() {
        assert_eq!(accepted_candidates(&[0.10, 0.05, 0.005], 0.01), 2);
        assert_eq!(accepted_candidates(&[0.005, 0.5], 0.01), 0);
        assert_eq!(accepted_candidates(&[], 0.01), 0);
        assert_eq!(accepted_candidates(&[0.01], 0.01), 1);
    }

    #[test]
    fn improvement_handles_negative_losses() {
        // Estimation losses are negative utilities.
        assert!((relative_improvement(-0.5, -0.6) - 0.2).abs() < 1e-12);
        assert!((relative_improvement(0.5, 0.4) - 0.2).abs() < 1e-12);
        assert!(relative_improvement(0.5, 0.6) < 0.0);
    }
}
