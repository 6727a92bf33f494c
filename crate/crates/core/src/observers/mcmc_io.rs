//! Reference ideal observer with every quantity estimated by MCMC. Limited
//! to quadratic utilities, where the ideal estimate is the posterior mean.

use super::{product_statistic, Observer, ObserverOutput};
use crate::error::Result;
use crate::image::Image;
use crate::mcmc::{mcmc_io_likelihood_ratio, sample_h1_posterior, utility_weighted_posterior_mean, McmcSettings};
use crate::rng::StreamRng;
use crate::sim::task::TaskSpec;

#[derive(Debug, Clone)]
pub struct McmcIo {
    pub task: TaskSpec,
    pub settings: McmcSettings,
}

impl McmcIo {
    pub fn new(task: TaskSpec, settings: McmcSettings) -> Result<Self> {
        task.validate()?;
        crate::mcmc::io::require_quadratic(&task)?;
        settings.chain.validate()?;
        settings.proposal(&task)?;
        Ok(McmcIo { task, settings })
    }
}

impl Observer for McmcIo {
    fn name(&self) -> &'static str {
        "mcmc-io"
    }

    fn theta_dim(&self) -> usize {
        self.task.theta_dim()
    }

    /// One H1 chain gives both the posterior-mean estimate and `U_hat` at
    /// that estimate; the likelihood ratio uses its own draws.
    fn observe(&self, g: &Image, rng: &mut StreamRng) -> Result<ObserverOutput> {
        let trace = sample_h1_posterior(g, &self.task, &self.settings, rng)?;
        let estimate = trace.theta_mean();
        let u_hat = utility_weighted_posterior_mean(&estimate, &self.task.utility, &trace)?;
        let log_lambda = mcmc_io_likelihood_ratio(g, &self.task, &self.settings, rng)?;
        let mut o = ObserverOutput::new(product_statistic(log_lambda, u_hat), estimate);
        o.log_lambda = Some(log_lambda);
        o.u_hat = Some(u_hat);
        o.chain_flagged = trace.is_flagged();
        Ok(o)
    }
}
