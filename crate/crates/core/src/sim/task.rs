use std::ops::Deref;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::clb::{render_clb_background, sample_clb, ClbModel, ClusteredLumpyBackground};
use super::lumpy::{render_lumpy_background, sample_lumpy, LumpyBackground, LumpyModel};
use super::noise::NoiseModel;
use super::system::{render_signal_image, render_signal_into, GaussianSignal, ImagingSystem};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::utility::UtilityFn;

/// Signal parameter vector θ: `[A]`, `[x, y]` or `[w]` depending on the
/// prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalParams(pub Vec<f64>);

impl Deref for SignalParams {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for SignalParams {
    fn from(v: Vec<f64>) -> Self {
        SignalParams(v)
    }
}

/// Prior over the random signal component; the remaining components of the
/// task's base signal are known constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalPrior {
    GaussianAmplitude { mean: f64, std: f64 },
    UniformLocation { lo: [f64; 2], hi: [f64; 2] },
    UniformWidth { lo: f64, hi: f64 },
}

impl SignalPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SignalPrior::GaussianAmplitude { mean, std } => {
                if !(std > 0.0) || !mean.is_finite() {
                    return Err(Error::invalid("signal.prior.std", "must be positive"));
                }
            }
            SignalPrior::UniformLocation { lo, hi } => {
                if !(lo[0] < hi[0] && lo[1] < hi[1]) {
                    return Err(Error::invalid("signal.prior", "lo must be below hi"));
                }
            }
            SignalPrior::UniformWidth { lo, hi } => {
                if !(lo < hi) || !(lo > 0.0) {
                    return Err(Error::invalid("signal.prior", "need 0 < lo < hi"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            SignalPrior::UniformLocation { .. } => 2,
            _ => 1,
        }
    }

    pub fn component_names(&self) -> &'static [&'static str] {
        match self {
            SignalPrior::GaussianAmplitude { .. } => &["amplitude"],
            SignalPrior::UniformLocation { .. } => &["x", "y"],
            SignalPrior::UniformWidth { .. } => &["width"],
        }
    }

    /// Normalized log density; `-inf` outside the support.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match *self {
            SignalPrior::GaussianAmplitude { mean, std } => {
                let z = (theta[0] - mean) / std;
                -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            SignalPrior::UniformLocation { lo, hi } => {
                let inside = (0..2).all(|i| theta[i] >= lo[i] && theta[i] <= hi[i]);
                if inside {
                    -((hi[0] - lo[0]) * (hi[1] - lo[1])).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            SignalPrior::UniformWidth { lo, hi } => {
                if theta[0] >= lo && theta[0] <= hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SignalParams {
        let v = match *self {
            SignalPrior::GaussianAmplitude { mean, std } => {
                vec![Normal::new(mean, std).expect("positive std").sample(rng)]
            }
            SignalPrior::UniformLocation { lo, hi } => {
                vec![rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])]
            }
            SignalPrior::UniformWidth { lo, hi } => vec![rng.random_range(lo..hi)],
        };
        SignalParams(v)
    }

    /// Chain starting point: prior mean or support midpoint.
    pub fn initial(&self) -> Vec<f64> {
        match *self {
            SignalPrior::GaussianAmplitude { mean, .. } => vec![mean],
            SignalPrior::UniformLocation { lo, hi } => vec![0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])],
            SignalPrior::UniformWidth { lo, hi } => vec![0.5 * (lo + hi)],
        }
    }

    /// Per-component prior spread, used to scale estimates.
    pub fn scale(&self) -> Vec<f64> {
        match *self {
            SignalPrior::GaussianAmplitude { std, .. } => vec![std],
            SignalPrior::UniformLocation { lo, hi } => {
                vec![(hi[0] - lo[0]) / 12f64.sqrt(), (hi[1] - lo[1]) / 12f64.sqrt()]
            }
            SignalPrior::UniformWidth { lo, hi } => vec![(hi - lo) / 12f64.sqrt()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackgroundModel {
    /// Known, all-zero background.
    Zero,
    Lumpy(LumpyModel),
    Clb(ClbModel),
}

/// Realized background parameters α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackgroundParams {
    Zero,
    Lumpy(LumpyBackground),
    Clb(ClusteredLumpyBackground),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    BkeAmplitude,
    LbLocation,
    ClbWidth,
    Custom,
}

/// Full generative description of one detection-estimation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub system: ImagingSystem,
    /// Base signal; the component under the prior is overwritten by θ.
    pub signal: GaussianSignal,
    pub prior: SignalPrior,
    pub background: BackgroundModel,
    pub noise: NoiseModel,
    pub utility: UtilityFn,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.signal.validate(&self.system)?;
        self.prior.validate()?;
        self.noise.validate()?;
        self.utility.validate()?;
        match &self.background {
            BackgroundModel::Zero => {}
            BackgroundModel::Lumpy(m) => m.validate()?,
            BackgroundModel::Clb(m) => m.validate()?,
        }
        if let SignalPrior::UniformLocation { lo, hi } = self.prior {
            let probe = GaussianSignal {
                center_px: lo,
                ..self.signal
            };
            probe.validate(&self.system)?;
            GaussianSignal {
                center_px: hi,
                ..self.signal
            }
            .validate(&self.system)?;
        }
        Ok(())
    }

    pub fn family(&self) -> TaskFamily {
        match (&self.prior, &self.background) {
            (SignalPrior::GaussianAmplitude { .. }, BackgroundModel::Zero) => TaskFamily::BkeAmplitude,
            (SignalPrior::UniformLocation { .. }, BackgroundModel::Lumpy(_)) => TaskFamily::LbLocation,
            (SignalPrior::UniformWidth { .. }, BackgroundModel::Clb(_)) => TaskFamily::ClbWidth,
            _ => TaskFamily::Custom,
        }
    }

    pub fn theta_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn width(&self) -> usize {
        self.system.grid_width_px
    }

    pub fn height(&self) -> usize {
        self.system.grid_height_px
    }

    pub fn signal_for(&self, theta: &[f64]) -> GaussianSignal {
        let mut s = self.signal;
        match self.prior {
            SignalPrior::GaussianAmplitude { .. } => s.amplitude = theta[0],
            SignalPrior::UniformLocation { .. } => s.center_px = [theta[0], theta[1]],
            SignalPrior::UniformWidth { .. } => s.width_px = theta[0],
        }
        s
    }

    pub fn render_signal(&self, theta: &[f64]) -> Result<Image> {
        if theta.len() != self.theta_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.theta_dim(),
                got: theta.len(),
            });
        }
        render_signal_image(&self.system, &self.signal_for(theta))
    }

    pub fn render_signal_into(&self, theta: &[f64], img: &mut Image) -> Result<()> {
        render_signal_into(&self.system, &self.signal_for(theta), img)
    }

    /// Unit-amplitude signal image when the signal is linear in θ.
    pub fn amplitude_template(&self) -> Option<Image> {
        match self.prior {
            SignalPrior::GaussianAmplitude { .. } => self.render_signal(&[1.0]).ok(),
            _ => None,
        }
    }

    /// The background image when it is known exactly.
    pub fn known_background(&self) -> Option<Image> {
        match self.background {
            BackgroundModel::Zero => Some(self.system.blank()),
            _ => None,
        }
    }

    pub fn sample_background<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Image, BackgroundParams)> {
        match &self.background {
            BackgroundModel::Zero => Ok((self.system.blank(), BackgroundParams::Zero)),
            BackgroundModel::Lumpy(m) => {
                let bg = sample_lumpy(&self.system, m, rng)?;
                Ok((render_lumpy_background(&self.system, &bg), BackgroundParams::Lumpy(bg)))
            }
            BackgroundModel::Clb(m) => {
                let bg = sample_clb(&self.system, m, rng)?;
                let out = render_clb_background(self.width(), self.height(), &bg);
                Ok((out.image, BackgroundParams::Clb(bg)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub pixels: Image,
    /// `true` for signal-present (H1).
    pub present: bool,
    /// Present iff `present`.
    pub theta: Option<SignalParams>,
    pub background: Option<BackgroundParams>,
}

impl LabeledImage {
    pub fn label(&self) -> u8 {
        u8::from(self.present)
    }
}

/// `g = b + s (under H1) + n`. Passing `noise = None` gives the noiseless
/// image.
pub fn simulate_measurement<R: Rng + ?Sized>(
    system: &ImagingSystem,
    signal: Option<(&GaussianSignal, SignalParams)>,
    background: &Image,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<LabeledImage> {
    if background.width() != system.grid_width_px || background.height() != system.grid_height_px {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", system.grid_width_px, system.grid_height_px),
            got: format!("{}x{}", background.width(), background.height()),
        });
    }
    let mut g = background.clone();
    let (present, theta) = match signal {
        Some((sig, theta)) => {
            render_signal_into(system, sig, &mut g)?;
            (true, Some(theta))
        }
        None => (false, None),
    };
    if let Some(n) = noise {
        n.add_to(&mut g, rng);
    }
    Ok(LabeledImage {
        pixels: g,
        present,
        theta,
        background: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn bke() -> TaskSpec {
        TaskSpec {
            system: ImagingSystem::new(16.0, 3.87, 64, 64).unwrap(),
            signal: GaussianSignal {
                amplitude: 9.0,
                width_px: 1.0,
                center_px: [32.0, 32.0],
            },
            prior: SignalPrior::GaussianAmplitude { mean: 9.0, std: 4.0 },
            background: BackgroundModel::Zero,
            noise: NoiseModel::new(40.0).unwrap(),
            utility: UtilityFn::Gaussian { sigma: 3.0 },
        }
    }

    #[test]
    fn noiseless_absent_equals_background() {
        let task = bke();
        let mut rng = stream(1, Purpose::Generic, 0);
        let (b, _) = task.sample_background(&mut rng).unwrap();
        let li = simulate_measurement(&task.system, None, &b, None, &mut rng).unwrap();
        assert_eq!(li.pixels, b);
        assert!(!li.present && li.theta.is_none());
    }

    #[test]
    fn grid_mismatch_rejected() {
        let task = bke();
        let b = Image::zeros(32, 32);
        let mut rng = stream(1, Purpose::Generic, 0);
        assert!(simulate_measurement(&task.system, None, &b, Some(&task.noise), &mut rng).is_err());
    }

    #[test]
    fn noise_variance_and_signal_mean() {
        let task = bke();
        let b = task.system.blank();
        let theta = SignalParams(vec![9.0]);
        let sig = task.signal_for(&theta);
        let s = task.render_signal(&theta).unwrap();
        let mut rng = stream(2, Purpose::Generic, 0);
        // 10^5 residual samples drawn over ~25 images.
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut mean_diff = 0.0;
        let reps = 25;
        for _ in 0..reps {
            let li = simulate_measurement(
                &task.system,
                Some((&sig, theta.clone())),
                &b,
                Some(&task.noise),
                &mut rng,
            )
            .unwrap();
            mean_diff += li.pixels.mean() - b.mean();
            for ((g, bb), ss) in li.pixels.pixels().iter().zip(b.pixels()).zip(s.pixels()) {
                let r = g - bb - ss;
                sum += r;
                sum2 += r * r;
                n += 1;
            }
        }
        assert!(n >= 100_000);
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!((var / 1600.0 - 1.0).abs() < 0.01, "var {var}");
        // mean(g) - mean(b) estimates mean(s); noise std of the average is 40/sqrt(n).
        let md = mean_diff / reps as f64;
        assert!(
            (md - s.mean()).abs() < 4.0 * 40.0 / (n as f64).sqrt(),
            "{md} vs {}",
            s.mean()
        );
    }

    #[test]
    fn prior_support_and_density() {
        let p = SignalPrior::UniformLocation {
            lo: [16.0, 16.0],
            hi: [48.0, 48.0],
        };
        assert_eq!(p.log_density(&[10.0, 20.0]), f64::NEG_INFINITY);
        assert!((p.log_density(&[20.0, 20.0]) + (1024f64).ln()).abs() < 1e-12);
        assert_eq!(p.initial(), vec![32.0, 32.0]);
        let g = SignalPrior::GaussianAmplitude { mean: 9.0, std: 4.0 };
        let expected = -0.5 * 0.25 - 4f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((g.log_density(&[11.0]) - expected).abs() < 1e-14);
        assert!(SignalPrior::UniformWidth { lo: 6.0, hi: 1.0 }.validate().is_err());
        assert!(SignalPrior::GaussianAmplitude { mean: 9.0, std: 0.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn family_detection() {
        assert_eq!(bke().family(), TaskFamily::BkeAmplitude);
        let mut t = bke();
        t.prior = SignalPrior::UniformWidth { lo: 1.0, hi: 6.0 };
        assert_eq!(t.family(), TaskFamily::Custom);
    }
}
