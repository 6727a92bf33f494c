//! MCMC approximation of the ideal observer: likelihood ratio by averaging
//! background-and-signal-known-exactly ratios over `p(alpha | g, H0) p(theta)`,
//! and the ideal estimate as a posterior mean under a quadratic utility.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::engine::{run_chain, ChainConfig, ChainTrace, GaussianRandomWalk};
use super::posterior::{
    default_proposal_std, sample_posterior_theta, sample_posterior_theta_alpha, AlphaMoves, BackgroundPosterior,
    LumpWalk,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::sim::lumpy::{render_lumpy_into, sample_lumpy, LumpyBackground};
use crate::sim::noise::NoiseModel;
use crate::sim::task::{BackgroundModel, SignalParams, TaskSpec};
use crate::stats::log_sum_exp;

/// Chain lengths and proposal scales for the MCMC-backed observers.
#[derive(Default, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    #[serde(default)]
    pub chain: ChainConfig,
    /// θ random-walk std; the task default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_std: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha: AlphaMoves,
}

impl McmcSettings {
    pub fn proposal(&self, task: &TaskSpec) -> Result<GaussianRandomWalk> {
        let std = self
            .proposal_std
            .clone()
            .unwrap_or_else(|| default_proposal_std(&task.prior));
        let p = GaussianRandomWalk::new(std)?;
        if p.dim() != task.theta_dim() {
            return Err(Error::DimensionMismatch {
                expected: task.theta_dim(),
                got: p.dim(),
            });
        }
        Ok(p)
    }
}

/// `ln Lambda_BSKE = (s^T (g - b) - s^T s / 2) / sigma^2`.
pub fn log_lambda_bske(g: &Image, s: &Image, b: &Image, noise: &NoiseModel) -> Result<f64> {
    g.check_grid(s)?;
    g.check_grid(b)?;
    noise.validate()?;
    let mut sr = 0.0;
    let mut ss = 0.0;
    for ((g, s), b) in g.pixels().iter().zip(s.pixels()).zip(b.pixels()) {
        sr += s * (g - b);
        ss += s * s;
    }
    Ok((sr - 0.5 * ss) / noise.variance())
}

/// Per-draw BSKE ratio with the signal drawn from its prior.
struct BskeAverager<'a> {
    task: &'a TaskSpec,
    template: Option<(Image, f64)>,
    scratch: Image,
}

impl<'a> BskeAverager<'a> {
    fn new(task: &'a TaskSpec) -> Self {
        let template = task.amplitude_template().map(|t| {
            let tt = t.dot(&t);
            (t, tt)
        });
        BskeAverager {
            task,
            template,
            scratch: task.system.blank(),
        }
    }

    /// `ln Lambda_BSKE(g | b, s(theta))` given the residual `r = g - b`.
    fn log_ratio(&mut self, residual: &Image, tr: Option<f64>, theta: &[f64]) -> f64 {
        let var = self.task.noise.variance();
        if let (Some((_, tt)), Some(tr)) = (&self.template, tr) {
            let a = theta[0];
            return (a * tr - 0.5 * a * a * tt) / var;
        }
        self.scratch.pixels_mut().iter_mut().for_each(|v| *v = 0.0);
        if self.task.render_signal_into(theta, &mut self.scratch).is_err() {
            return f64::NEG_INFINITY;
        }
        let (mut sr, mut ss) = (0.0, 0.0);
        for (s, r) in self.scratch.pixels().iter().zip(residual.pixels()) {
            sr += s * r;
            ss += s * s;
        }
        (sr - 0.5 * ss) / var
    }

    fn template_dot(&self, residual: &Image) -> Option<f64> {
        self.template.as_ref().map(|(t, _)| t.dot(residual))
    }
}

/// `ln Lambda_hat(g)`, a log-sum-exp average of `J = chain.n_samples` BSKE
/// ratios. θ is drawn i.i.d. from its prior. For a known background the α
/// chain is skipped; for a lumpy background α follows an H0 chain over lump
/// centers with the lump count fixed at a prior draw.
pub fn mcmc_io_likelihood_ratio<R: Rng + ?Sized>(
    g: &Image,
    task: &TaskSpec,
    settings: &McmcSettings,
    rng: &mut R,
) -> Result<f64> {
    settings.chain.validate()?;
    g.check_grid(&task.system.blank())?;
    let j = settings.chain.n_samples;
    let mut avg = BskeAverager::new(task);
    let mut logs = Vec::with_capacity(j);
    match &task.background {
        BackgroundModel::Zero => {
            let b = task.system.blank();
            let mut r = g.clone();
            r.sub_assign(&b);
            let tr = avg.template_dot(&r);
            for _ in 0..j {
                let theta = task.prior.sample(rng);
                logs.push(avg.log_ratio(&r, tr, &theta));
            }
        }
        BackgroundModel::Lumpy(model) => {
            let alpha0 = sample_lumpy(&task.system, model, rng)?;
            let trace = sample_background_h0(g, task, &alpha0, settings, rng)?;
            let mut r = g.clone();
            let mut b = task.system.blank();
            let mut last: Option<&[f64]> = None;
            let mut tr = None;
            for k in 0..trace.len() {
                let alpha = trace.sample(k);
                if last != Some(alpha) {
                    b.pixels_mut().iter_mut().for_each(|v| *v = 0.0);
                    let centers: Vec<[f64; 2]> = alpha.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
                    render_lumpy_into(&task.system, model, &centers, &mut b);
                    for ((rv, gv), bv) in r.pixels_mut().iter_mut().zip(g.pixels()).zip(b.pixels()) {
                        *rv = gv - bv;
                    }
                    tr = avg.template_dot(&r);
                    last = Some(alpha);
                }
                let theta = task.prior.sample(rng);
                logs.push(avg.log_ratio(&r, tr, &theta));
            }
        }
        BackgroundModel::Clb(_) => {
            return Err(Error::UnsupportedTask(
                "MCMC likelihood ratio is not available for clustered lumpy backgrounds".into(),
            ))
        }
    }
    Ok(log_sum_exp(&logs) - (logs.len() as f64).ln())
}

/// H0 chain over lump centers from `alpha0`.
pub fn sample_background_h0<R: Rng + ?Sized>(
    g: &Image,
    task: &TaskSpec,
    alpha0: &LumpyBackground,
    settings: &McmcSettings,
    rng: &mut R,
) -> Result<ChainTrace> {
    let n = alpha0.lump_count();
    let mut target = BackgroundPosterior::new(task, g, n)?;
    let prop = LumpWalk {
        n_lumps: n,
        step_px: settings.alpha.step_px,
    };
    let x0: Vec<f64> = alpha0.centers.iter().flat_map(|c| [c[0], c[1]]).collect();
    run_chain(&mut target, &prop, &x0, 0, &settings.chain, rng, None)
}

/// H1 posterior chain: θ only for a known background, joint (θ, α)
/// otherwise.
pub fn sample_h1_posterior<R: Rng + ?Sized>(
    g: &Image,
    task: &TaskSpec,
    settings: &McmcSettings,
    rng: &mut R,
) -> Result<ChainTrace> {
    let prop = settings.proposal(task)?;
    match &task.background {
        BackgroundModel::Zero => sample_posterior_theta(g, task, None, &prop, &settings.chain, rng),
        BackgroundModel::Lumpy(model) => {
            let alpha0 = sample_lumpy(&task.system, model, rng)?;
            sample_posterior_theta_alpha(g, task, &prop, &settings.alpha, &alpha0, &settings.chain, rng)
        }
        BackgroundModel::Clb(_) => Err(Error::UnsupportedTask(
            "posterior sampling is not available for clustered lumpy backgrounds".into(),
        )),
    }
}

/// Posterior mean of θ, the ideal estimate under a quadratic utility.
pub fn mcmc_io_ideal_estimate<R: Rng + ?Sized>(
    g: &Image,
    task: &TaskSpec,
    settings: &McmcSettings,
    rng: &mut R,
) -> Result<SignalParams> {
    require_quadratic(task)?;
    let trace = sample_h1_posterior(g, task, settings, rng)?;
    Ok(SignalParams(trace.theta_mean()))
}

pub(crate) fn require_quadratic(task: &TaskSpec) -> Result<()> {
    if !task.utility.is_quadratic() {
        return Err(Error::UnsupportedUtility(format!(
            "the posterior mean is the ideal estimate only for a quadratic utility, got {}",
            task.utility
        )));
    }
    Ok(())
}
