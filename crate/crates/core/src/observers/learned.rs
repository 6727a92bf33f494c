//! Observers built on a trained multi-task network.

use super::{exp_continued, product_statistic, Observer, ObserverOutput};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mcmc::{sample_h1_posterior, utility_weighted_posterior_mean, McmcSettings};
use crate::nn::MultiTaskNet;
use crate::rng::StreamRng;
use crate::sim::task::TaskSpec;
use crate::utility::UtilityFn;

fn check_net(net: &MultiTaskNet, task: &TaskSpec) -> Result<()> {
    let a = net.architecture();
    if a.input_width != task.width() || a.input_height != task.height() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", task.width(), task.height()),
            got: format!("{}x{}", a.input_width, a.input_height),
        });
    }
    if net.theta_dim() != task.theta_dim() {
        return Err(Error::DimensionMismatch {
            expected: task.theta_dim(),
            got: net.theta_dim(),
        });
    }
    Ok(())
}

/// Network-only observer: `T = p / (1 - p)` and the estimation head's
/// output.
#[derive(Debug, Clone)]
pub struct SubIdealNo {
    pub net: MultiTaskNet,
    /// Subtracted from the network log-odds; zero for balanced training.
    pub prior_log_odds: f64,
}

impl SubIdealNo {
    pub fn new(net: MultiTaskNet) -> Self {
        SubIdealNo {
            net,
            prior_log_odds: 0.0,
        }
    }
}

impl Observer for SubIdealNo {
    fn name(&self) -> &'static str {
        "sub-ideal"
    }

    fn theta_dim(&self) -> usize {
        self.net.theta_dim()
    }

    fn observe(&self, g: &Image, _rng: &mut StreamRng) -> Result<ObserverOutput> {
        let out = self.net.forward(g)?;
        let log_lambda = out.log_odds - self.prior_log_odds;
        let mut o = ObserverOutput::new(exp_continued(log_lambda), out.estimate);
        o.log_lambda = Some(log_lambda);
        Ok(o)
    }
}

/// Network likelihood ratio and estimate combined with an MCMC estimate of
/// the posterior-mean utility: `T = Lambda_hat * U_hat`.
#[derive(Debug, Clone)]
pub struct HybridIo {
    pub net: MultiTaskNet,
    pub task: TaskSpec,
    pub settings: McmcSettings,
    pub prior_log_odds: f64,
}

impl HybridIo {
    pub fn new(net: MultiTaskNet, task: TaskSpec, settings: McmcSettings) -> Result<Self> {
        check_net(&net, &task)?;
        settings.chain.validate()?;
        Ok(HybridIo {
            net,
            task,
            settings,
            prior_log_odds: 0.0,
        })
    }
}

impl Observer for HybridIo {
    fn name(&self) -> &'static str {
        "hybrid"
    }

    fn theta_dim(&self) -> usize {
        self.net.theta_dim()
    }

    fn observe(&self, g: &Image, rng: &mut StreamRng) -> Result<ObserverOutput> {
        let out = self.net.forward(g)?;
        let log_lambda = out.log_odds - self.prior_log_odds;
        let (u_hat, flagged) = if self.task.utility == UtilityFn::Constant {
            (1.0, false)
        } else {
            let trace = sample_h1_posterior(g, &self.task, &self.settings, rng)?;
            (
                utility_weighted_posterior_mean(&out.estimate, &self.task.utility, &trace)?,
                trace.is_flagged(),
            )
        };
        let mut o = ObserverOutput::new(product_statistic(log_lambda, u_hat), out.estimate);
        o.log_lambda = Some(log_lambda);
        o.u_hat = Some(u_hat);
        o.chain_flagged = flagged;
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::ChainConfig;
    use crate::nn::{Architecture, Scaling};
    use crate::rng::{stream, Purpose};
    use crate::sim::noise::NoiseModel;
    use crate::sim::system::{GaussianSignal, ImagingSystem};
    use crate::sim::task::{BackgroundModel, SignalPrior};

    fn setup(u: UtilityFn) -> (MultiTaskNet, TaskSpec) {
        let task = TaskSpec {
            system: ImagingSystem::new(16.0, 3.87, 8, 8).unwrap(),
            signal: GaussianSignal {
                amplitude: 9.0,
                width_px: 1.0,
                center_px: [4.0, 4.0],
            },
            prior: SignalPrior::GaussianAmplitude { mean: 9.0, std: 4.0 },
            background: BackgroundModel::Zero,
            noise: NoiseModel::new(10.0).unwrap(),
            utility: u,
        };
        let arch = Architecture::standard(8, 8, 1, 1, 2, 3, 1);
        let mut net = MultiTaskNet::new(arch, Scaling::identity(1)).unwrap();
        net.init_weights(&mut stream(9, Purpose::WeightInit, 0));
        (net, task)
    }

    #[test]
    fn unit_utility_hybrid_equals_sub_ideal() {
        let (net, task) = setup(UtilityFn::Constant);
        let h = HybridIo::new(net.clone(), task.clone(), McmcSettings::default()).unwrap();
        let s = SubIdealNo::new(net);
        let mut g = task.system.blank();
        task.noise.add_to(&mut g, &mut stream(1, Purpose::Generic, 0));
        let a = h.observe(&g, &mut stream(1, Purpose::Observer, 0)).unwrap();
        let b = s.observe(&g, &mut stream(1, Purpose::Observer, 0)).unwrap();
        assert_eq!(a.t, b.t);
        assert_eq!(a.estimate, b.estimate);
    }

    #[test]
    fn hybrid_is_reproducible_per_stream() {
        let (net, task) = setup(UtilityFn::Gaussian { sigma: 3.0 });
        let settings = McmcSettings {
            chain: ChainConfig::new(500, 100),
            ..Default::default()
        };
        let h = HybridIo::new(net, task.clone(), settings).unwrap();
        let g = task.render_signal(&[9.0]).unwrap();
        let a = h.observe(&g, &mut stream(2, Purpose::Observer, 3)).unwrap();
        let b = h.observe(&g, &mut stream(2, Purpose::Observer, 3)).unwrap();
        assert_eq!(a, b);
        let u = a.u_hat.unwrap();
        assert!(u > 0.0 && u <= 1.0);
    }

    #[test]
    fn mismatched_net_rejected() {
        let (_, task) = setup(UtilityFn::Constant);
        let arch = Architecture::standard(6, 6, 1, 1, 2, 3, 1);
        let net = MultiTaskNet::new(arch, Scaling::identity(1)).unwrap();
        assert!(HybridIo::new(net, task, McmcSettings::default()).is_err());
    }
}
