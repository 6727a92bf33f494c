//! Posterior targets for the imaging tasks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::engine::{run_chain, ChainConfig, ChainTrace, GaussianRandomWalk, Proposal, Target};
use crate::error::{Error, Result};
use crate::image::{dot, Image};
use crate::sim::lumpy::{render_lumpy_into, LumpyBackground, LumpyModel};
use crate::sim::noise::NoiseModel;
use crate::sim::task::{BackgroundModel, SignalPrior, TaskSpec};
use crate::utility::UtilityFn;

/// `-|g - b - s|^2 / (2 sigma^2)`; the Gaussian normalizer is dropped.
pub fn log_likelihood(g: &Image, s: &Image, b: &Image, noise: &NoiseModel) -> Result<f64> {
    noise.validate()?;
    g.check_grid(s)?;
    g.check_grid(b)?;
    let sq: f64 = g
        .pixels()
        .iter()
        .zip(s.pixels())
        .zip(b.pixels())
        .map(|((g, s), b)| {
            let r = g - b - s;
            r * r
        })
        .sum();
    Ok(-sq / (2.0 * noise.variance()))
}

/// Per-task random-walk scales: 3 for amplitude, 4 per location
/// coordinate, 0.5 for width.
pub fn default_proposal_std(prior: &SignalPrior) -> Vec<f64> {
    match prior {
        SignalPrior::GaussianAmplitude { .. } => vec![3.0],
        SignalPrior::UniformLocation { .. } => vec![4.0, 4.0],
        SignalPrior::UniformWidth { .. } => vec![0.5],
    }
}

/// Gaussian likelihood of `theta` given a fixed residual `r = g - b`.
#[derive(Debug, Clone)]
pub(crate) struct ResidualLikelihood {
    residual: Image,
    rr: f64,
    inv_two_var: f64,
    /// Unit template `t` with `t^T t` and `t^T r`, for amplitude tasks.
    amplitude: Option<(Image, f64, f64)>,
    scratch: Image,
}

impl ResidualLikelihood {
    pub(crate) fn new(task: &TaskSpec, g: &Image, b: &Image) -> Result<Self> {
        let blank = task.system.blank();
        g.check_grid(&blank)?;
        b.check_grid(&blank)?;
        let amplitude = task.amplitude_template().map(|t| {
            let tt = t.dot(&t);
            (t, tt, 0.0)
        });
        let mut out = ResidualLikelihood {
            residual: blank.clone(),
            rr: 0.0,
            inv_two_var: 1.0 / (2.0 * task.noise.variance()),
            amplitude,
            scratch: blank,
        };
        out.set_background(g, b);
        Ok(out)
    }

    pub(crate) fn set_background(&mut self, g: &Image, b: &Image) {
        for ((r, g), b) in self.residual.pixels_mut().iter_mut().zip(g.pixels()).zip(b.pixels()) {
            *r = g - b;
        }
        self.rr = self.residual.dot(&self.residual);
        if let Some((t, _, tr)) = &mut self.amplitude {
            *tr = dot(t.pixels(), self.residual.pixels());
        }
    }

    pub(crate) fn log_likelihood(&mut self, task: &TaskSpec, theta: &[f64]) -> f64 {
        if let Some((_, tt, tr)) = self.amplitude {
            let a = theta[0];
            return -(self.rr - 2.0 * a * tr + a * a * tt) * self.inv_two_var;
        }
        self.scratch.pixels_mut().iter_mut().for_each(|v| *v = 0.0);
        if task.render_signal_into(theta, &mut self.scratch).is_err() {
            return f64::NEG_INFINITY;
        }
        let sq: f64 = self
            .residual
            .pixels()
            .iter()
            .zip(self.scratch.pixels())
            .map(|(r, s)| (r - s) * (r - s))
            .sum();
        -sq * self.inv_two_var
    }
}

/// `p(theta | g, H1)` with the background known.
pub struct ThetaPosterior<'a> {
    task: &'a TaskSpec,
    lik: ResidualLikelihood,
}

impl<'a> ThetaPosterior<'a> {
    pub fn new(task: &'a TaskSpec, g: &Image, background: &Image) -> Result<Self> {
        Ok(ThetaPosterior {
            task,
            lik: ResidualLikelihood::new(task, g, background)?,
        })
    }
}

impl Target for ThetaPosterior<'_> {
    fn dim(&self) -> usize {
        self.task.theta_dim()
    }

    fn log_prior(&mut self, x: &[f64]) -> f64 {
        self.task.prior.log_density(x)
    }

    fn log_likelihood(&mut self, x: &[f64]) -> f64 {
        self.lik.log_likelihood(self.task, x)
    }
}

fn initial_theta(task: &TaskSpec, cfg: &ChainConfig) -> Result<Vec<f64>> {
    match &cfg.initial {
        Some(v) if v.len() != task.theta_dim() => Err(Error::DimensionMismatch {
            expected: task.theta_dim(),
            got: v.len(),
        }),
        Some(v) => Ok(v.clone()),
        None => Ok(task.prior.initial()),
    }
}

fn check_proposal(task: &TaskSpec, prop: &GaussianRandomWalk) -> Result<()> {
    if prop.dim() != task.theta_dim() {
        return Err(Error::DimensionMismatch {
            expected: task.theta_dim(),
            got: prop.dim(),
        });
    }
    Ok(())
}

/// RWMH chain on `p(theta | g, H1)` for a known background. `background`
/// overrides the task's own known background (needed for BKS tasks whose
/// background is fixed for an oracle).
pub fn sample_posterior_theta<R: Rng + ?Sized>(
    g: &Image,
    task: &TaskSpec,
    background: Option<&Image>,
    prop: &GaussianRandomWalk,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<ChainTrace> {
    check_proposal(task, prop)?;
    let known;
    let b = match background {
        Some(b) => b,
        None => {
            known = task.known_background().ok_or_else(|| {
                Error::UnsupportedTask("background is random; use the joint (theta, alpha) sampler".into())
            })?;
            &known
        }
    };
    let x0 = initial_theta(task, cfg)?;
    let mut target = ThetaPosterior::new(task, g, b)?;
    run_chain(&mut target, prop, &x0, task.theta_dim(), cfg, rng, None)
}

/// Moves of the lump centers in the joint chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaMoves {
    /// Std of the Gaussian step applied to one uniformly chosen lump.
    pub step_px: f64,
    /// Keep α at its initial value.
    pub frozen: bool,
}

impl Default for AlphaMoves {
    fn default() -> Self {
        AlphaMoves {
            step_px: 2.0,
            frozen: false,
        }
    }
}

/// Symmetric joint proposal: Gaussian step on θ plus one lump-center step.
pub struct JointProposal {
    theta: GaussianRandomWalk,
    theta_dim: usize,
    n_lumps: usize,
    moves: AlphaMoves,
}

impl Proposal for JointProposal {
    fn propose<R: Rng + ?Sized>(&self, current: &[f64], out: &mut [f64], rng: &mut R) {
        let d = self.theta_dim;
        self.theta.propose(&current[..d], &mut out[..d], rng);
        out[d..].copy_from_slice(&current[d..]);
        if !self.moves.frozen && self.n_lumps > 0 {
            let k = rng.random_range(0..self.n_lumps);
            for c in 0..2 {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                out[d + 2 * k + c] += self.moves.step_px * z;
            }
        }
    }

    fn log_q(&self, _to: &[f64], _from: &[f64]) -> f64 {
        0.0
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

fn centers_of(flat: &[f64]) -> Vec<[f64; 2]> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn lumpy_model(task: &TaskSpec) -> Result<LumpyModel> {
    match task.background {
        BackgroundModel::Lumpy(m) => Ok(m),
        _ => Err(Error::UnsupportedTask(
            "joint (theta, alpha) sampling needs a lumpy background".into(),
        )),
    }
}

/// Renders `b(alpha)` and refreshes the residual when α differs from the
/// cached one.
struct BackgroundCache {
    model: LumpyModel,
    alpha: Option<Vec<f64>>,
    image: Image,
}

impl BackgroundCache {
    fn new(task: &TaskSpec, model: LumpyModel) -> Self {
        BackgroundCache {
            model,
            alpha: None,
            image: task.system.blank(),
        }
    }

    /// Returns true when the image was re-rendered.
    fn update(&mut self, task: &TaskSpec, alpha: &[f64]) -> bool {
        if self.alpha.as_deref() == Some(alpha) {
            return false;
        }
        self.alpha = Some(alpha.to_vec());
        self.image.pixels_mut().iter_mut().for_each(|v| *v = 0.0);
        render_lumpy_into(&task.system, &self.model, &centers_of(alpha), &mut self.image);
        true
    }
}

/// `p(theta, alpha | g, H1)` for a lumpy background with a fixed lump count.
pub struct JointPosterior<'a> {
    task: &'a TaskSpec,
    g: Image,
    lik: ResidualLikelihood,
    bg: BackgroundCache,
    n_lumps: usize,
}

impl<'a> JointPosterior<'a> {
    pub fn new(task: &'a TaskSpec, g: &Image, n_lumps: usize) -> Result<Self> {
        let model = lumpy_model(task)?;
        let lik = ResidualLikelihood::new(task, g, &task.system.blank())?;
        Ok(JointPosterior {
            task,
            g: g.clone(),
            lik,
            bg: BackgroundCache::new(task, model),
            n_lumps,
        })
    }
}

impl Target for JointPosterior<'_> {
    fn dim(&self) -> usize {
        self.task.theta_dim() + 2 * self.n_lumps
    }

    fn log_prior(&mut self, x: &[f64]) -> f64 {
        let d = self.task.theta_dim();
        let lp = self.task.prior.log_density(&x[..d]);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.bg.model.log_prior_centers(&self.task.system, &centers_of(&x[d..]))
    }

    fn log_likelihood(&mut self, x: &[f64]) -> f64 {
        let d = self.task.theta_dim();
        if self.bg.update(self.task, &x[d..]) {
            self.lik.set_background(&self.g, &self.bg.image);
        }
        self.lik.log_likelihood(self.task, &x[..d])
    }
}

/// Joint RWMH chain on `(theta, alpha)` for a lumpy background, started at
/// `alpha0`. The lump count stays at `alpha0`'s value. The trace's leading
/// `theta_dim` columns hold θ.
#[allow(clippy::too_many_arguments)]
pub fn sample_posterior_theta_alpha<R: Rng + ?Sized>(
    g: &Image,
    task: &TaskSpec,
    prop: &GaussianRandomWalk,
    moves: &AlphaMoves,
    alpha0: &LumpyBackground,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<ChainTrace> {
    check_proposal(task, prop)?;
    if !(moves.step_px > 0.0) {
        return Err(Error::invalid("mcmc.alpha_step_px", "must be positive"));
    }
    let n_lumps = alpha0.lump_count();
    let mut x0 = initial_theta(task, cfg)?;
    x0.extend(alpha0.centers.iter().flat_map(|c| [c[0], c[1]]));
    let mut target = JointPosterior::new(task, g, n_lumps)?;
    let proposal = JointProposal {
        theta: prop.clone(),
        theta_dim: task.theta_dim(),
        n_lumps,
        moves: *moves,
    };
    run_chain(&mut target, &proposal, &x0, task.theta_dim(), cfg, rng, None)
}

/// `p(alpha | g, H0)` over lump centers with a fixed lump count.
pub struct BackgroundPosterior<'a> {
    task: &'a TaskSpec,
    g: Image,
    bg: BackgroundCache,
    n_lumps: usize,
    inv_two_var: f64,
}

impl<'a> BackgroundPosterior<'a> {
    pub fn new(task: &'a TaskSpec, g: &Image, n_lumps: usize) -> Result<Self> {
        let model = lumpy_model(task)?;
        g.check_grid(&task.system.blank())?;
        Ok(BackgroundPosterior {
            task,
            g: g.clone(),
            bg: BackgroundCache::new(task, model),
            n_lumps,
            inv_two_var: 1.0 / (2.0 * task.noise.variance()),
        })
    }
}

impl Target for BackgroundPosterior<'_> {
    fn dim(&self) -> usize {
        2 * self.n_lumps
    }

    fn log_prior(&mut self, x: &[f64]) -> f64 {
        self.bg.model.log_prior_centers(&self.task.system, &centers_of(x))
    }

    fn log_likelihood(&mut self, x: &[f64]) -> f64 {
        self.bg.update(self.task, x);
        let sq: f64 = self
            .g
            .pixels()
            .iter()
            .zip(self.bg.image.pixels())
            .map(|(g, b)| (g - b) * (g - b))
            .sum();
        -sq * self.inv_two_var
    }
}

/// Random walk on lump centers only (one lump per step).
pub(crate) struct LumpWalk {
    pub(crate) n_lumps: usize,
    pub(crate) step_px: f64,
}

impl Proposal for LumpWalk {
    fn propose<R: Rng + ?Sized>(&self, current: &[f64], out: &mut [f64], rng: &mut R) {
        out.copy_from_slice(current);
        if self.n_lumps > 0 {
            let k = rng.random_range(0..self.n_lumps);
            for c in 0..2 {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                out[2 * k + c] += self.step_px * z;
            }
        }
    }

    fn log_q(&self, _to: &[f64], _from: &[f64]) -> f64 {
        0.0
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

/// `U(g) ~ (1/J) sum_j u(theta_hat, theta_j)` over the θ-columns of `trace`.
pub fn utility_weighted_posterior_mean(theta_hat: &[f64], u: &UtilityFn, trace: &ChainTrace) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Empty("chain trace"));
    }
    if theta_hat.len() != trace.theta_dim {
        return Err(Error::DimensionMismatch {
            expected: trace.theta_dim,
            got: theta_hat.len(),
        });
    }
    let total: f64 = (0..trace.len())
        .map(|j| u.evaluate_unchecked(theta_hat, trace.theta(j)))
        .sum();
    Ok(total / trace.len() as f64)
}
