use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// I.i.d. zero-mean Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub std: f64,
}

impl NoiseModel {
    pub fn new(std: f64) -> Result<Self> {
        let n = NoiseModel { std };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0) || !self.std.is_finite() {
            return Err(Error::invalid("noise.std", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.std * self.std
    }

    pub fn add_to<R: Rng + ?Sized>(&self, img: &mut Image, rng: &mut R) {
        for v in img.pixels_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += self.std * z;
        }
    }
}
