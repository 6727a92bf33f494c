//! Lumpy background: a Poisson number of Gaussian lumps with uniformly
//! distributed centers.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::system::{add_gaussian, ImagingSystem};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumpyModel {
    pub mean_lump_count: f64,
    pub lump_amplitude: f64,
    pub lump_width_px: f64,
}

impl LumpyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_lump_count > 0.0) {
            return Err(Error::invalid("background.mean_lump_count", "must be positive"));
        }
        if !(self.lump_width_px > 0.0) {
            return Err(Error::invalid("background.lump_width_px", "must be positive"));
        }
        if !self.lump_amplitude.is_finite() {
            return Err(Error::invalid("background.lump_amplitude", "must be finite"));
        }
        Ok(())
    }

    /// Log prior of a center configuration with the lump count held fixed:
    /// uniform over the support, `-inf` outside it.
    pub fn log_prior_centers(&self, system: &ImagingSystem, centers: &[[f64; 2]]) -> f64 {
        let (w, h) = support(system);
        let inside = centers
            .iter()
            .all(|c| c[0] >= w.0 && c[0] < w.1 && c[1] >= h.0 && c[1] < h.1);
        if inside {
            -(centers.len() as f64) * ((w.1 - w.0) * (h.1 - h.0)).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// A realized lumpy background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpyBackground {
    pub model: LumpyModel,
    pub centers: Vec<[f64; 2]>,
}

impl LumpyBackground {
    pub fn lump_count(&self) -> usize {
        self.centers.len()
    }
}

/// Spatial support of the image: the union of pixel areas.
pub(crate) fn support(system: &ImagingSystem) -> ((f64, f64), (f64, f64)) {
    (
        (-0.5, system.grid_width_px as f64 - 0.5),
        (-0.5, system.grid_height_px as f64 - 0.5),
    )
}

pub(crate) fn uniform_point<R: Rng + ?Sized>(system: &ImagingSystem, rng: &mut R) -> [f64; 2] {
    let ((x0, x1), (y0, y1)) = support(system);
    [rng.random_range(x0..x1), rng.random_range(y0..y1)]
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive Poisson mean");
    dist.sample(rng) as usize
}

/// Draws `N_b ~ Poisson(mean)` and i.i.d. uniform centers.
pub fn sample_lumpy<R: Rng + ?Sized>(
    system: &ImagingSystem,
    model: &LumpyModel,
    rng: &mut R,
) -> Result<LumpyBackground> {
    model.validate()?;
    let n = poisson_count(model.mean_lump_count, rng);
    let centers = (0..n).map(|_| uniform_point(system, rng)).collect();
    Ok(LumpyBackground { model: *model, centers })
}

/// Background image through the PRF:
/// `b_m = a h w_b^2 / (w_m^2 + w_b^2) * sum_n exp(-|r_n - r_m|^2 / (2 (w_m^2 + w_b^2)))`.
pub fn render_lumpy_background(system: &ImagingSystem, bg: &LumpyBackground) -> Image {
    let mut img = system.blank();
    render_lumpy_into(system, &bg.model, &bg.centers, &mut img);
    img
}

pub(crate) fn render_lumpy_into(system: &ImagingSystem, model: &LumpyModel, centers: &[[f64; 2]], img: &mut Image) {
    let wb2 = model.lump_width_px * model.lump_width_px;
    let var = system.prf_width_px * system.prf_width_px + wb2;
    let peak = model.lump_amplitude * system.prf_height * wb2 / var;
    for &c in centers {
        add_gaussian(img, peak, c, var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn lb_system() -> ImagingSystem {
        ImagingSystem::new(40.0, 0.5, 64, 64).unwrap()
    }

    fn lb_model() -> LumpyModel {
        LumpyModel {
            mean_lump_count: 5.0,
            lump_amplitude: 10.0,
            lump_width_px: 7.0,
        }
    }

    #[test]
    fn empty_background_is_zero() {
        let bg = LumpyBackground {
            model: lb_model(),
            centers: vec![],
        };
        let img = render_lumpy_background(&lb_system(), &bg);
        assert!(img.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_lump_peak() {
        let bg = LumpyBackground {
            model: lb_model(),
            centers: vec![[32.0, 32.0]],
        };
        let img = render_lumpy_background(&lb_system(), &bg);
        let expected = 10.0 * 40.0 * 49.0 / (0.25 + 49.0);
        assert!((img.get(32, 32) - expected).abs() < 1e-10);
        assert!((expected - 397.97).abs() < 0.01);
    }

    #[test]
    fn superposition_of_lumps() {
        let sys = lb_system();
        let a = [12.3, 40.1];
        let b = [50.0, 7.7];
        let both = render_lumpy_background(
            &sys,
            &LumpyBackground {
                model: lb_model(),
                centers: vec![a, b],
            },
        );
        let mut sum = render_lumpy_background(
            &sys,
            &LumpyBackground {
                model: lb_model(),
                centers: vec![a],
            },
        );
        sum.add_assign(&render_lumpy_background(
            &sys,
            &LumpyBackground {
                model: lb_model(),
                centers: vec![b],
            },
        ));
        for (x, y) in both.pixels().iter().zip(sum.pixels()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn lump_count_is_poisson() {
        let sys = lb_system();
        let mut rng = stream(7, Purpose::Generic, 0);
        let n = 100_000;
        let mut total = 0usize;
        let mut zeros = 0usize;
        for _ in 0..n {
            let k = poisson_count(5.0, &mut rng);
            total += k;
            zeros += usize::from(k == 0);
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 5.0).abs() < 0.05, "mean {mean}");
        let p0 = zeros as f64 / n as f64;
        assert!((p0 - (-5.0f64).exp()).abs() < 0.0015, "p0 {p0}");
        let bg = sample_lumpy(&sys, &lb_model(), &mut rng).unwrap();
        assert!(bg
            .centers
            .iter()
            .all(|c| c[0] >= -0.5 && c[0] < 63.5 && c[1] >= -0.5 && c[1] < 63.5));
    }

    #[test]
    fn seeded_replay() {
        let sys = lb_system();
        let a = sample_lumpy(&sys, &lb_model(), &mut stream(3, Purpose::Generic, 9)).unwrap();
        let b = sample_lumpy(&sys, &lb_model(), &mut stream(3, Purpose::Generic, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn center_prior_rejects_outside() {
        let sys = lb_system();
        let m = lb_model();
        assert!(m.log_prior_centers(&sys, &[[10.0, 10.0]]).is_finite());
        assert_eq!(m.log_prior_centers(&sys, &[[10.0, 70.0]]), f64::NEG_INFINITY);
    }
}
