//! Observers map an image to a test statistic and a parameter estimate.
//!
//! Every observer assumes equal class priors, so the likelihood ratio is
//! recovered from a posterior probability as `p / (1 - p)`.

mod analytic;
mod learned;
mod mcmc_io;
mod scores;
pub mod slo;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use analytic::{analytic_io, AnalyticIo, AnalyticOutput};
pub use learned::{HybridIo, SubIdealNo};
pub use mcmc_io::McmcIo;
pub use scores::{read_scores_csv, write_scores_csv, ScoreRow, ScoreTable};
pub use slo::{build_slo, SloGridSpec, SloModel, SloObserver};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{stream, Purpose, StreamRng};
use crate::sim::task::{LabeledImage, SignalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverOutput {
    /// `T(g)`; larger favours signal presence.
    pub t: f64,
    pub estimate: SignalParams,
    /// `ln Lambda_hat(g)` for observers that form it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_lambda: Option<f64>,
    /// Utility-weighted posterior mean at the estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_hat: Option<f64>,
    /// Set when a chain's acceptance rate left the healthy band.
    #[serde(default)]
    pub chain_flagged: bool,
}

impl ObserverOutput {
    pub fn new(t: f64, estimate: Vec<f64>) -> Self {
        ObserverOutput {
            t,
            estimate: SignalParams(estimate),
            log_lambda: None,
            u_hat: None,
            chain_flagged: false,
        }
    }
}

pub trait Observer: Sync {
    fn name(&self) -> &'static str;

    fn theta_dim(&self) -> usize;

    /// Evaluates one image. Deterministic observers ignore `rng`.
    fn observe(&self, g: &Image, rng: &mut StreamRng) -> Result<ObserverOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverKind {
    AnalyticIo,
    Hybrid,
    SubIdeal,
    McmcIo,
    Slo,
}

impl ObserverKind {
    pub const ALL: [ObserverKind; 5] = [
        ObserverKind::AnalyticIo,
        ObserverKind::Hybrid,
        ObserverKind::SubIdeal,
        ObserverKind::McmcIo,
        ObserverKind::Slo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObserverKind::AnalyticIo => "analytic-io",
            ObserverKind::Hybrid => "hybrid",
            ObserverKind::SubIdeal => "sub-ideal",
            ObserverKind::McmcIo => "mcmc-io",
            ObserverKind::Slo => "slo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ObserverKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid("observer", format!("unknown observer `{s}`")))
    }
}

impl std::fmt::Display for ObserverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Largest exponent taken literally when forming `Lambda_hat * U_hat`.
pub const LOG_LAMBDA_CAP: f64 = 600.0;

/// `exp(x)` below the cap and `exp(cap) (1 + ln(1 + x - cap))` above it:
/// finite for every finite `x` and strictly increasing.
pub fn exp_continued(x: f64) -> f64 {
    if x <= LOG_LAMBDA_CAP {
        x.exp()
    } else {
        LOG_LAMBDA_CAP.exp() * (1.0 + (x - LOG_LAMBDA_CAP).ln_1p())
    }
}

/// `T = Lambda_hat * U_hat` in linear space; `U_hat` may be negative.
pub fn product_statistic(log_lambda: f64, u_hat: f64) -> f64 {
    exp_continued(log_lambda) * u_hat
}

/// Scores every image with its own observer stream `(seed, Observer, i)`.
pub fn score_images(
    observer: &dyn Observer,
    images: &[LabeledImage],
    u: &crate::utility::UtilityFn,
    seed: u64,
) -> Result<ScoreTable> {
    let rows: Vec<ScoreRow> = images
        .par_iter()
        .enumerate()
        .map(|(i, im)| {
            let mut rng = stream(seed, Purpose::Observer, i as u64);
            let out = observer.observe(&im.pixels, &mut rng)?;
            if out.estimate.len() != observer.theta_dim() || out.t.is_nan() {
                return Err(Error::invalid("observer output", format!("image {i}: t = {}", out.t)));
            }
            let utility = match &im.theta {
                Some(theta) => Some(u.evaluate(&out.estimate, theta)?),
                None => None,
            };
            Ok(ScoreRow {
                image_id: i,
                label: im.present,
                t: out.t,
                estimate: out.estimate.0,
                theta: im.theta.as_ref().map(|t| t.0.clone()),
                utility,
                log_lambda: out.log_lambda,
                u_hat: out.u_hat,
                chain_flagged: out.chain_flagged,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ScoreTable {
        observer: observer.name().to_string(),
        theta_dim: observer.theta_dim(),
        rows,
    })
}
