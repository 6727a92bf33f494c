//! Clustered lumpy background: Poisson clusters of Poisson-many oriented
//! blobs, rendered directly on the pixel lattice and min-max normalized.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lumpy::{poisson_count, uniform_point};
use super::system::ImagingSystem;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClbModel {
    pub mean_cluster_count: f64,
    pub mean_blobs_per_cluster: f64,
    /// Ellipse half-axes `[L_x, L_y]`.
    pub half_axes_px: [f64; 2],
    pub shape_exponent: f64,
    pub decay_exponent: f64,
    pub cluster_spread_px: f64,
}

impl ClbModel {
    /// Reference clustered-lumpy parameters.
    pub fn reference() -> Self {
        ClbModel {
            mean_cluster_count: 70.0,
            mean_blobs_per_cluster: 20.0,
            half_axes_px: [5.0, 2.0],
            shape_exponent: 2.1,
            decay_exponent: 0.5,
            cluster_spread_px: 12.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_cluster_count > 0.0) || !(self.mean_blobs_per_cluster > 0.0) {
            return Err(Error::invalid("background.clb", "mean counts must be positive"));
        }
        if !(self.half_axes_px[0] > 0.0 && self.half_axes_px[1] > 0.0) {
            return Err(Error::invalid("background.half_axes_px", "must be positive"));
        }
        if !(self.cluster_spread_px > 0.0) {
            return Err(Error::invalid("background.cluster_spread_px", "must be positive"));
        }
        if !(self.decay_exponent > 0.0) || !self.shape_exponent.is_finite() {
            return Err(Error::invalid("background.decay_exponent", "must be positive"));
        }
        Ok(())
    }

    /// Blob profile `exp(-alpha |R r|^beta / L(R r))` for a blob rotated by
    /// `angle`, where `L(u)` is the radius of the `L_x` x `L_y` ellipse along
    /// the direction of `u`.
    pub fn blob(&self, r: [f64; 2], angle: f64) -> f64 {
        let (s, c) = angle.sin_cos();
        self.blob_rotated(r, c, s)
    }

    #[inline]
    fn blob_rotated(&self, r: [f64; 2], cos: f64, sin: f64) -> f64 {
        let ux = cos * r[0] - sin * r[1];
        let uy = sin * r[0] + cos * r[1];
        let n2 = ux * ux + uy * uy;
        if n2 == 0.0 {
            return 1.0;
        }
        let [lx, ly] = self.half_axes_px;
        // |u|^beta / L(u) = |u|^(beta - 1) * sqrt((L_y u_x)^2 + (L_x u_y)^2) / (L_x L_y)
        let ellipse = ((ly * ux).powi(2) + (lx * uy).powi(2)).sqrt() / (lx * ly);
        let radial = if self.decay_exponent == 0.5 {
            1.0 / n2.sqrt().sqrt()
        } else {
            n2.powf(0.5 * (self.decay_exponent - 1.0))
        };
        (-self.shape_exponent * radial * ellipse).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClbBlob {
    /// Offset from the cluster center.
    pub offset: [f64; 2],
    /// Orientation in `[0, 2 pi)`.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClbCluster {
    pub center: [f64; 2],
    pub blobs: Vec<ClbBlob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredLumpyBackground {
    pub model: ClbModel,
    pub clusters: Vec<ClbCluster>,
}

impl ClusteredLumpyBackground {
    pub fn blob_count(&self) -> usize {
        self.clusters.iter().map(|c| c.blobs.len()).sum()
    }
}

/// Normalized CLB render. `degenerate` is set when the raw render was
/// constant (e.g. no clusters) and normalization produced an all-zero image.
#[derive(Debug, Clone)]
pub struct ClbImage {
    pub image: Image,
    pub degenerate: bool,
}

pub fn sample_clb<R: Rng + ?Sized>(
    system: &ImagingSystem,
    model: &ClbModel,
    rng: &mut R,
) -> Result<ClusteredLumpyBackground> {
    model.validate()?;
    let spread = Normal::new(0.0, model.cluster_spread_px).expect("positive spread");
    let k = poisson_count(model.mean_cluster_count, rng);
    let mut clusters = Vec::with_capacity(k);
    for _ in 0..k {
        let center = uniform_point(system, rng);
        let n = poisson_count(model.mean_blobs_per_cluster, rng);
        let blobs = (0..n)
            .map(|_| {
                let offset = [spread.sample(rng), spread.sample(rng)];
                let angle = rng.random_range(0.0..TAU);
                ClbBlob { offset, angle }
            })
            .collect();
        clusters.push(ClbCluster { center, blobs });
    }
    Ok(ClusteredLumpyBackground {
        model: *model,
        clusters,
    })
}

/// Raw sum of blob profiles on a `width` x `height` lattice.
pub fn render_clb_raw(width: usize, height: usize, bg: &ClusteredLumpyBackground) -> Image {
    let mut img = Image::zeros(width, height);
    let model = &bg.model;
    let px = img.pixels_mut();
    for cluster in &bg.clusters {
        for blob in &cluster.blobs {
            let cx = cluster.center[0] + blob.offset[0];
            let cy = cluster.center[1] + blob.offset[1];
            let (s, c) = blob.angle.sin_cos();
            for y in 0..height {
                let dy = y as f64 - cy;
                let row = &mut px[y * width..(y + 1) * width];
                for (x, p) in row.iter_mut().enumerate() {
                    *p += model.blob_rotated([x as f64 - cx, dy], c, s);
                }
            }
        }
    }
    img
}

/// Rescales to `[0, 1]` in place. Returns `false` (and zeroes the image)
/// when the input is constant.
pub fn normalize_min_max(img: &mut Image) -> bool {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        img.pixels_mut().iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    for v in img.pixels_mut() {
        *v = (*v - lo) / range;
    }
    true
}

pub fn render_clb_background(width: usize, height: usize, bg: &ClusteredLumpyBackground) -> ClbImage {
    let mut image = render_clb_raw(width, height, bg);
    let ok = normalize_min_max(&mut image);
    if !ok {
        log::warn!(
            "constant clustered lumpy background ({} clusters); normalized to zero",
            bg.clusters.len()
        );
    }
    ClbImage { image, degenerate: !ok }
}
