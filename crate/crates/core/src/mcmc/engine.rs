//! Random-walk Metropolis-Hastings over real vectors.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-likelihood and log-prior of one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_likelihood: f64,
    pub log_prior: f64,
}

impl Evaluation {
    pub fn log_target(&self) -> f64 {
        self.log_likelihood + self.log_prior
    }
}

/// Unnormalized target density. The likelihood is only requested for states
/// with finite prior.
pub trait Target {
    fn dim(&self) -> usize;
    fn log_prior(&mut self, x: &[f64]) -> f64;
    fn log_likelihood(&mut self, x: &[f64]) -> f64;

    fn evaluate(&mut self, x: &[f64]) -> Evaluation {
        let log_prior = self.log_prior(x);
        let log_likelihood = if log_prior == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.log_likelihood(x)
        };
        Evaluation {
            log_likelihood,
            log_prior,
        }
    }
}

pub trait Proposal {
    fn propose<R: Rng + ?Sized>(&self, current: &[f64], out: &mut [f64], rng: &mut R);

    /// `ln q(to | from)`, up to a constant shared by all pairs.
    fn log_q(&self, to: &[f64], from: &[f64]) -> f64;

    /// When true the sampler skips the `q` terms, which cancel.
    fn is_symmetric(&self) -> bool {
        false
    }
}

/// `min(1, exp(new - old + ln q(old|new) - ln q(new|old)))`; 0 for NaN.
pub fn acceptance_probability(log_target_new: f64, log_target_old: f64, log_q_forward: f64, log_q_reverse: f64) -> f64 {
    if log_target_new == f64::NEG_INFINITY {
        return 0.0;
    }
    let r = log_target_new - log_target_old + log_q_reverse - log_q_forward;
    if r.is_nan() {
        0.0
    } else if r >= 0.0 {
        1.0
    } else {
        r.exp()
    }
}

/// Gaussian random walk, either diagonal or with a full covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRandomWalk {
    std: Vec<f64>,
    chol: Option<DMatrix<f64>>,
}

impl GaussianRandomWalk {
    pub fn new(std: Vec<f64>) -> Result<Self> {
        if std.is_empty() || std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("proposal.std", "all entries must be positive"));
        }
        Ok(GaussianRandomWalk { std, chol: None })
    }

    pub fn isotropic(dim: usize, std: f64) -> Result<Self> {
        Self::new(vec![std; dim])
    }

    /// Correlated steps `L z` with `K = L L^T`.
    pub fn with_covariance(k: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() || k.nrows() == 0 {
            return Err(Error::invalid("proposal.covariance", "must be square"));
        }
        let std = (0..k.nrows()).map(|i| k[(i, i)].sqrt()).collect();
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::invalid("proposal.covariance", "not positive definite"))?
            .l();
        Ok(GaussianRandomWalk { std, chol: Some(chol) })
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

impl Proposal for GaussianRandomWalk {
    fn propose<R: Rng + ?Sized>(&self, current: &[f64], out: &mut [f64], rng: &mut R) {
        match &self.chol {
            None => {
                for ((o, c), s) in out.iter_mut().zip(current).zip(&self.std) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = c + s * z;
                }
            }
            Some(l) => {
                let z = DVector::from_fn(self.std.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let step = l * z;
                for ((o, c), d) in out.iter_mut().zip(current).zip(step.iter()) {
                    *o = c + d;
                }
            }
        }
    }

    fn log_q(&self, to: &[f64], from: &[f64]) -> f64 {
        match &self.chol {
            None => to
                .iter()
                .zip(from)
                .zip(&self.std)
                .map(|((t, f), s)| {
                    let z = (t - f) / s;
                    -0.5 * z * z
                })
                .sum(),
            Some(l) => {
                let d = DVector::from_iterator(to.len(), to.iter().zip(from).map(|(t, f)| t - f));
                let z = l.solve_lower_triangular(&d).expect("nonsingular factor");
                -0.5 * z.norm_squared()
            }
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Kept samples `J`.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Starting state; task-level samplers fill in a default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_samples: 10_000,
            burn_in: 1_000,
            thin: 1,
            initial: None,
        }
    }
}

impl ChainConfig {
    pub fn new(n_samples: usize, burn_in: usize) -> Self {
        ChainConfig {
            n_samples,
            burn_in,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("chain.n_samples", "must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("chain.thin", "must be at least 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.burn_in + self.n_samples * self.thin
    }
}

/// Kept states (row-major, `dim` per row) with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub dim: usize,
    /// Leading components that hold θ; the rest (if any) hold α.
    pub theta_dim: usize,
    pub samples: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub accepted: usize,
    pub steps: usize,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.log_likelihood.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_likelihood.is_empty()
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        &self.samples[j * self.dim..(j + 1) * self.dim]
    }

    pub fn theta(&self, j: usize) -> &[f64] {
        &self.sample(j)[..self.theta_dim]
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    /// Acceptance rate outside `[0.05, 0.95]`.
    pub fn is_flagged(&self) -> bool {
        let a = self.acceptance_rate();
        !(0.05..=0.95).contains(&a)
    }

    pub fn theta_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.theta_dim];
        for j in 0..self.len() {
            for (acc, v) in m.iter_mut().zip(self.theta(j)) {
                *acc += v;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.sample(j)[k]).collect()
    }
}

/// Receives every step of a chain, burn-in included.
pub trait TraceSink {
    fn record(&mut self, step: u64, log_likelihood: f64, accepted: bool, state: &[f64]) -> Result<()>;
}

const TRACE_MAGIC: &[u8; 8] = b"EROCTRC1";

/// Binary trace stream: magic, then per step
/// `step u64 | log_likelihood f64 | accepted u8 | dim u32 | dim * f64` (LE).
pub struct TraceWriter<W: Write> {
    inner: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut inner: W) -> Result<Self> {
        inner.write_all(TRACE_MAGIC)?;
        Ok(TraceWriter { inner })
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> TraceSink for TraceWriter<W> {
    fn record(&mut self, step: u64, log_likelihood: f64, accepted: bool, state: &[f64]) -> Result<()> {
        self.inner.write_all(&step.to_le_bytes())?;
        self.inner.write_all(&log_likelihood.to_le_bytes())?;
        self.inner.write_all(&[u8::from(accepted)])?;
        self.inner.write_all(&(state.len() as u32).to_le_bytes())?;
        for v in state {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub log_likelihood: f64,
    pub accepted: bool,
    pub state: Vec<f64>,
}

pub fn read_trace<R: Read>(mut r: R) -> Result<Vec<TraceRecord>> {
    let bad = |reason: &str| Error::Format {
        kind: "trace",
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != TRACE_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut out = Vec::new();
    let mut head = [0u8; 21];
    loop {
        match r.read_exact(&mut head) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let step = u64::from_le_bytes(head[0..8].try_into().unwrap());
        let log_likelihood = f64::from_le_bytes(head[8..16].try_into().unwrap());
        let accepted = head[16] != 0;
        let dim = u32::from_le_bytes(head[17..21].try_into().unwrap()) as usize;
        let mut buf = vec![0u8; dim * 8];
        r.read_exact(&mut buf).map_err(|_| bad("truncated record"))?;
        let state = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(TraceRecord {
            step,
            log_likelihood,
            accepted,
            state,
        });
    }
    Ok(out)
}

/// Runs `cfg.total_steps()` Metropolis-Hastings steps from `x0`.
///
/// A uniform variate is drawn only when the acceptance probability lies
/// strictly between 0 and 1, so chains whose targets agree consume identical
/// random streams.
pub fn run_chain<T, P, R>(
    target: &mut T,
    proposal: &P,
    x0: &[f64],
    theta_dim: usize,
    cfg: &ChainConfig,
    rng: &mut R,
    mut sink: Option<&mut dyn TraceSink>,
) -> Result<ChainTrace>
where
    T: Target,
    P: Proposal,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let dim = target.dim();
    if x0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    let mut ex = target.evaluate(&x);
    if !ex.log_target().is_finite() {
        return Err(Error::Chain(format!(
            "initial state has zero probability (log prior {}, log likelihood {})",
            ex.log_prior, ex.log_likelihood
        )));
    }
    let mut y = vec![0.0; dim];
    let mut trace = ChainTrace {
        dim,
        theta_dim,
        samples: Vec::with_capacity(cfg.n_samples * dim),
        log_likelihood: Vec::with_capacity(cfg.n_samples),
        accepted: 0,
        steps: 0,
    };
    let total = cfg.total_steps();
    for step in 0..total {
        proposal.propose(&x, &mut y, rng);
        let ey = target.evaluate(&y);
        let (qf, qr) = if proposal.is_symmetric() {
            (0.0, 0.0)
        } else {
            (proposal.log_q(&y, &x), proposal.log_q(&x, &y))
        };
        // Likelihood and prior differences are taken separately so that
        // constant prior terms cancel exactly.
        let a = if ey.log_target() == f64::NEG_INFINITY {
            0.0
        } else {
            let delta = (ey.log_likelihood - ex.log_likelihood) + (ey.log_prior - ex.log_prior);
            acceptance_probability(delta, 0.0, qf, qr)
        };
        let accept = if a >= 1.0 {
            true
        } else if a <= 0.0 {
            false
        } else {
            rng.random::<f64>() < a
        };
        if accept {
            std::mem::swap(&mut x, &mut y);
            ex = ey;
            trace.accepted += 1;
        }
        trace.steps += 1;
        if let Some(s) = sink.as_deref_mut() {
            s.record(step as u64, ex.log_likelihood, accept, &x)?;
        }
        if step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == cfg.thin - 1 {
            trace.samples.extend_from_slice(&x);
            trace.log_likelihood.push(ex.log_likelihood);
        }
    }
    if trace.is_flagged() {
        log::warn!(
            "chain acceptance rate {:.3} outside [0.05, 0.95]",
            trace.acceptance_rate()
        );
    }
    Ok(trace)
}
