//! Closed-form ideal observer for a known-location signal of Gaussian
//! random amplitude on a zero background in Gaussian noise.

use super::{Observer, ObserverOutput};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::StreamRng;
use crate::sim::task::{BackgroundModel, SignalPrior, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticOutput {
    /// `T = mu t'g + sigma_A^2 / (2 sigma_n^2) (t'g)^2`.
    pub t: f64,
    /// Posterior mean of the amplitude.
    pub amplitude: f64,
}

/// Precomputed template `t = s(A = 1)` and its energy.
#[derive(Debug, Clone)]
pub struct AnalyticIo {
    template: Image,
    tt: f64,
    mean: f64,
    var_a: f64,
    var_n: f64,
}

impl AnalyticIo {
    pub fn new(task: &TaskSpec) -> Result<Self> {
        task.validate()?;
        let (mean, std) = match (&task.background, &task.prior) {
            (BackgroundModel::Zero, SignalPrior::GaussianAmplitude { mean, std }) => (*mean, *std),
            _ => {
                return Err(Error::UnsupportedTask(
                    "the analytic ideal observer needs a zero background and a Gaussian amplitude prior".into(),
                ))
            }
        };
        let template = task.amplitude_template().expect("amplitude prior");
        let tt = template.dot(&template);
        Ok(AnalyticIo {
            template,
            tt,
            mean,
            var_a: std * std,
            var_n: task.noise.variance(),
        })
    }

    /// `t't`.
    pub fn template_energy(&self) -> f64 {
        self.tt
    }

    pub fn evaluate(&self, g: &Image) -> Result<AnalyticOutput> {
        g.check_grid(&self.template)?;
        let tg = self.template.dot(g);
        Ok(AnalyticOutput {
            t: self.mean * tg + self.var_a / (2.0 * self.var_n) * tg * tg,
            amplitude: (self.var_a * tg + self.var_n * self.mean) / (self.var_n + self.var_a * self.tt),
        })
    }
}

impl Observer for AnalyticIo {
    fn name(&self) -> &'static str {
        "analytic-io"
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn observe(&self, g: &Image, _rng: &mut StreamRng) -> Result<ObserverOutput> {
        let out = self.evaluate(g)?;
        Ok(ObserverOutput::new(out.t, vec![out.amplitude]))
    }
}

pub fn analytic_io(g: &Image, task: &TaskSpec) -> Result<AnalyticOutput> {
    AnalyticIo::new(task)?.evaluate(g)
}
