//! Dataset generation and the on-disk image container.
//!
//! Container layout (little endian):
//!
//! ```text
//! magic "EROCDSET" | version u32 | width u32 | height u32 | count u64
//! | theta_dim u32 | flags u32
//! | count * width * height f32 pixels
//! | count u8 labels
//! | count * theta_dim f64 parameters (NaN for signal-absent images)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::system::render_signal_into;
use super::task::{BackgroundParams, LabeledImage, SignalParams, TaskSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{stream, Purpose};

const MAGIC: &[u8; 8] = b"EROCDSET";
const VERSION: u32 = 1;
const FLAG_NOISELESS: u32 = 1;

#[derive(Debug, Clone, Copy, Default)]
pub struct DatasetOptions {
    /// Skip the noise term (semi-online training pools, SLO statistics).
    pub noiseless: bool,
    /// Keep the realized background parameters on each image.
    pub keep_background: bool,
}

/// Draws `n_present` signal-present images followed by `n_absent`
/// signal-absent ones. Image `i` uses stream `i` of `(seed, purpose)`, so the
/// result does not depend on the thread count.
pub fn generate_dataset(
    task: &TaskSpec,
    n_present: usize,
    n_absent: usize,
    seed: u64,
    purpose: Purpose,
    opts: DatasetOptions,
) -> Result<Vec<LabeledImage>> {
    task.validate()?;
    (0..n_present + n_absent)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, purpose, i as u64);
            let present = i < n_present;
            let theta = present.then(|| task.prior.sample(&mut rng));
            let (mut g, alpha) = task.sample_background(&mut rng)?;
            if let Some(t) = &theta {
                render_signal_into(&task.system, &task.signal_for(t), &mut g)?;
            }
            if !opts.noiseless {
                task.noise.add_to(&mut g, &mut rng);
            }
            Ok(LabeledImage {
                pixels: g,
                present,
                theta,
                background: opts.keep_background.then_some(alpha),
            })
        })
        .collect()
}

/// Images on one grid plus the container flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub theta_dim: usize,
    pub noiseless: bool,
    pub images: Vec<LabeledImage>,
}

impl Dataset {
    pub fn new(
        width: usize,
        height: usize,
        theta_dim: usize,
        noiseless: bool,
        images: Vec<LabeledImage>,
    ) -> Result<Self> {
        for im in &images {
            if im.pixels.width() != width || im.pixels.height() != height {
                return Err(Error::ShapeMismatch {
                    expected: format!("{width}x{height}"),
                    got: format!("{}x{}", im.pixels.width(), im.pixels.height()),
                });
            }
            if let Some(t) = &im.theta {
                if t.len() != theta_dim {
                    return Err(Error::DimensionMismatch {
                        expected: theta_dim,
                        got: t.len(),
                    });
                }
            }
        }
        Ok(Dataset {
            width,
            height,
            theta_dim,
            noiseless,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn count_present(&self) -> usize {
        self.images.iter().filter(|i| i.present).count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.images.len() as u64).to_le_bytes())?;
        w.write_all(&(self.theta_dim as u32).to_le_bytes())?;
        let flags = if self.noiseless { FLAG_NOISELESS } else { 0 };
        w.write_all(&flags.to_le_bytes())?;
        for im in &self.images {
            for &v in im.pixels.pixels() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        for im in &self.images {
            w.write_all(&[im.label()])?;
        }
        for im in &self.images {
            for k in 0..self.theta_dim {
                let v = im.theta.as_ref().map_or(f64::NAN, |t| t[k]);
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let fmt = |reason: &str| Error::Format {
            kind: "dataset",
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let width = read_u32(&mut r)? as usize;
        let height = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let theta_dim = read_u32(&mut r)? as usize;
        let flags = read_u32(&mut r)?;
        let npx = width * height;
        let mut buf = vec![0u8; npx * 4];
        let mut pixels = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(|_| fmt("truncated pixel block"))?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            pixels.push(Image::from_vec(width, height, data)?);
        }
        let mut labels = vec![0u8; count];
        r.read_exact(&mut labels).map_err(|_| fmt("truncated labels"))?;
        let mut images = Vec::with_capacity(count);
        for (px, label) in pixels.into_iter().zip(labels) {
            let mut theta = Vec::with_capacity(theta_dim);
            for _ in 0..theta_dim {
                theta.push(read_f64(&mut r).map_err(|_| fmt("truncated parameters"))?);
            }
            let present = match label {
                0 => false,
                1 => true,
                _ => return Err(fmt("label outside {0, 1}")),
            };
            images.push(LabeledImage {
                pixels: px,
                present,
                theta: present.then_some(SignalParams(theta)),
                background: None,
            });
        }
        Dataset::new(width, height, theta_dim, flags & FLAG_NOISELESS != 0, images)
    }

    /// One JSON object per image, for inspection.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            id: usize,
            label: u8,
            theta: Option<&'a [f64]>,
            #[serde(skip_serializing_if = "Option::is_none")]
            n_lumps: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            n_blobs: Option<usize>,
            min: f64,
            max: f64,
            mean: f64,
        }
        let mut w = BufWriter::new(File::create(path)?);
        for (id, im) in self.images.iter().enumerate() {
            let (min, max) = im.pixels.min_max();
            let (n_lumps, n_blobs) = match &im.background {
                Some(BackgroundParams::Lumpy(b)) => (Some(b.lump_count()), None),
                Some(BackgroundParams::Clb(b)) => (None, Some(b.blob_count())),
                _ => (None, None),
            };
            let row = Row {
                id,
                label: im.label(),
                theta: im.theta.as_deref(),
                n_lumps,
                n_blobs,
                min,
                max,
                mean: im.pixels.mean(),
            };
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
