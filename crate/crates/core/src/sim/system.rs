use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Parallel-hole collimator with a Gaussian point response of height `h`
/// and width `w_m`, sampled on an integer pixel lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagingSystem {
    pub prf_height: f64,
    pub prf_width_px: f64,
    pub grid_width_px: usize,
    pub grid_height_px: usize,
}

impl ImagingSystem {
    pub fn new(prf_height: f64, prf_width_px: f64, grid_width_px: usize, grid_height_px: usize) -> Result<Self> {
        let sys = ImagingSystem {
            prf_height,
            prf_width_px,
            grid_width_px,
            grid_height_px,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prf_height > 0.0) || !self.prf_height.is_finite() {
            return Err(Error::invalid("prf_height", "must be positive and finite"));
        }
        if !(self.prf_width_px > 0.0) || !self.prf_width_px.is_finite() {
            return Err(Error::invalid("prf_width_px", "must be positive and finite"));
        }
        if self.grid_width_px == 0 || self.grid_height_px == 0 {
            return Err(Error::invalid("grid", "dimensions must be non-zero"));
        }
        Ok(())
    }

    /// Measurement dimension N.
    pub fn pixel_count(&self) -> usize {
        self.grid_width_px * self.grid_height_px
    }

    pub fn blank(&self) -> Image {
        Image::zeros(self.grid_width_px, self.grid_height_px)
    }
}

/// 2D Gaussian object `A exp(-|r - r_s|^2 / (2 w_s^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSignal {
    pub amplitude: f64,
    pub width_px: f64,
    pub center_px: [f64; 2],
}

impl GaussianSignal {
    pub fn validate(&self, system: &ImagingSystem) -> Result<()> {
        if !(self.width_px > 0.0) || !self.width_px.is_finite() {
            return Err(Error::invalid("signal.width_px", "must be positive and finite"));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("signal.amplitude", "must be finite"));
        }
        let [x, y] = self.center_px;
        let (w, h) = (system.grid_width_px as f64, system.grid_height_px as f64);
        if !(x >= -0.5 && x <= w - 0.5 && y >= -0.5 && y <= h - 0.5) {
            return Err(Error::invalid(
                "signal.center_px",
                format!("({x}, {y}) lies outside the {w}x{h} grid"),
            ));
        }
        Ok(())
    }
}

/// Adds `amplitude * exp(-|r_m - c|^2 / (2 var))` to every pixel. The
/// Gaussian factorizes over the axes, so only `W + H` exponentials are
/// evaluated.
pub(crate) fn add_gaussian(img: &mut Image, amplitude: f64, center: [f64; 2], var: f64) {
    let (w, h) = (img.width(), img.height());
    let inv = -0.5 / var;
    let ex: Vec<f64> = (0..w)
        .map(|x| {
            let d = x as f64 - center[0];
            (inv * d * d).exp()
        })
        .collect();
    let pixels = img.pixels_mut();
    for y in 0..h {
        let d = y as f64 - center[1];
        let ry = amplitude * (inv * d * d).exp();
        if ry == 0.0 {
            continue;
        }
        let row = &mut pixels[y * w..(y + 1) * w];
        for (p, e) in row.iter_mut().zip(&ex) {
            *p += ry * e;
        }
    }
}

/// Signal image through the Gaussian PRF:
/// `s_m = A h w_s^2 / (w_m^2 + w_s^2) * exp(-|r_m - r_s|^2 / (2 (w_m^2 + w_s^2)))`.
pub fn render_signal_image(system: &ImagingSystem, sig: &GaussianSignal) -> Result<Image> {
    let mut img = system.blank();
    render_signal_into(system, sig, &mut img)?;
    Ok(img)
}

/// Accumulates the signal render into `img` (which must be on the system grid).
pub fn render_signal_into(system: &ImagingSystem, sig: &GaussianSignal, img: &mut Image) -> Result<()> {
    system.validate()?;
    if !(sig.width_px > 0.0) {
        return Err(Error::invalid("signal.width_px", "must be positive"));
    }
    if img.width() != system.grid_width_px || img.height() != system.grid_height_px {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", system.grid_width_px, system.grid_height_px),
            got: format!("{}x{}", img.width(), img.height()),
        });
    }
    if sig.amplitude == 0.0 {
        return Ok(());
    }
    let ws2 = sig.width_px * sig.width_px;
    let var = system.prf_width_px * system.prf_width_px + ws2;
    let peak = sig.amplitude * system.prf_height * ws2 / var;
    add_gaussian(img, peak, sig.center_px, var);
    Ok(())
}
