//! Scanning linear observer: a grid search for the pseudo-MAP estimate with
//! a Gaussian approximation of the data, `g ~ N(g_bar(theta), K_g)`.
//!
//! `K_g = K_b + sigma_n^2 I`, with `K_b` the sample covariance of noiseless
//! backgrounds, and `g_bar(theta) = b_bar + s(theta)`.

use std::path::Path;

use log::{info, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Observer, ObserverOutput};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::gemm;
use crate::rng::{stream, Purpose, StreamRng};
use crate::sim::task::{SignalPrior, TaskSpec};

/// Eigenvalues below this fraction of the largest are raised to it.
pub const EIGEN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloGridSpec {
    #[serde(default = "d257")]
    pub amplitude_points: usize,
    /// Amplitude grid spans the prior mean plus or minus this many stds.
    #[serde(default = "d4")]
    pub amplitude_span_std: f64,
    #[serde(default = "d257")]
    pub width_points: usize,
    /// Spacing of the location lattice in pixels.
    #[serde(default = "d1")]
    pub location_step: f64,
}

fn d257() -> usize {
    257
}
fn d4() -> f64 {
    4.0
}
fn d1() -> f64 {
    1.0
}

impl Default for SloGridSpec {
    fn default() -> Self {
        SloGridSpec {
            amplitude_points: d257(),
            amplitude_span_std: d4(),
            width_points: d257(),
            location_step: d1(),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl SloGridSpec {
    /// Grid points in scan order.
    pub fn points(&self, prior: &SignalPrior) -> Result<Vec<Vec<f64>>> {
        let pts = match *prior {
            SignalPrior::GaussianAmplitude { mean, std } => {
                if self.amplitude_points == 0 {
                    return Err(Error::invalid("slo.amplitude_points", "must be positive"));
                }
                let h = self.amplitude_span_std * std;
                linspace(mean - h, mean + h, self.amplitude_points)
                    .into_iter()
                    .map(|a| vec![a])
                    .collect()
            }
            SignalPrior::UniformWidth { lo, hi } => {
                if self.width_points == 0 {
                    return Err(Error::invalid("slo.width_points", "must be positive"));
                }
                linspace(lo, hi, self.width_points)
                    .into_iter()
                    .map(|w| vec![w])
                    .collect()
            }
            SignalPrior::UniformLocation { lo, hi } => {
                if !(self.location_step > 0.0) {
                    return Err(Error::invalid("slo.location_step", "must be positive"));
                }
                let axis = |lo: f64, hi: f64| -> Vec<f64> {
                    let start = (lo / self.location_step).ceil() as i64;
                    let end = (hi / self.location_step).floor() as i64;
                    (start..=end).map(|k| k as f64 * self.location_step).collect()
                };
                let (xs, ys) = (axis(lo[0], hi[0]), axis(lo[1], hi[1]));
                let mut v = Vec::with_capacity(xs.len() * ys.len());
                for y in &ys {
                    for x in &xs {
                        v.push(vec![*x, *y]);
                    }
                }
                v
            }
        };
        if pts.is_empty() {
            return Err(Error::invalid("slo.grid", "empty grid"));
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SloSolver {
    /// Eigendecomposition up to 1024 pixels, Cholesky above.
    #[default]
    Auto,
    Eigen,
    Cholesky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloBuild {
    pub n_present: usize,
    pub n_absent: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: SloGridSpec,
    #[serde(default)]
    pub solver: SloSolver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloInfo {
    pub build: SloBuild,
    /// Solver actually used.
    pub solver: SloSolver,
    /// Eigenvalues raised to the floor (eigen solver only).
    pub floored: usize,
}

/// Per grid point `k`: template `m_k = K_g^-1 g_bar_k` and offset
/// `c_k = g_bar_k' K_g^-1 g_bar_k / 2 - ln p(theta_k)`, so that the scan
/// objective is `m_k' g - c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SloModel {
    pub width: usize,
    pub height: usize,
    pub grid: Vec<Vec<f64>>,
    templates: Vec<f64>,
    offsets: Vec<f64>,
    pub info: SloInfo,
}

/// Noiseless background draws, matching the signal-present/absent pool
/// streams of `(seed, SloPool)`; signals are not rendered.
fn pool_background(task: &TaskSpec, n_present: usize, i: usize, seed: u64) -> Result<Image> {
    let mut rng = stream(seed, Purpose::SloPool, i as u64);
    if i < n_present {
        let _ = task.prior.sample(&mut rng);
    }
    Ok(task.sample_background(&mut rng)?.0)
}

/// Sample mean and covariance of the pooled backgrounds.
fn background_moments(task: &TaskSpec, build: &SloBuild) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = build.n_present + build.n_absent;
    if n < 2 {
        return Err(Error::invalid("slo.samples", "need at least two images"));
    }
    let p = task.width() * task.height();
    const CHUNK: usize = 256;
    let mut shift: Option<Vec<f64>> = None;
    let mut sum = vec![0.0; p];
    let mut gram = vec![0.0; p * p];
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let imgs: Vec<Image> = (start..end)
            .into_par_iter()
            .map(|i| pool_background(task, build.n_present, i, build.seed))
            .collect::<Result<_>>()?;
        let c = shift.get_or_insert_with(|| {
            let mut m = vec![0.0; p];
            for im in &imgs {
                for (a, b) in m.iter_mut().zip(im.pixels()) {
                    *a += b;
                }
            }
            m.iter_mut().for_each(|v| *v /= imgs.len() as f64);
            m
        });
        let rows = end - start;
        let mut x = Vec::with_capacity(rows * p);
        for im in &imgs {
            x.extend(im.pixels().iter().zip(c.iter()).map(|(v, c)| v - c));
        }
        for row in x.chunks_exact(p) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        // gram += X' X
        gemm(p, rows, p, &x, 1, p as isize, &x, p as isize, 1, 1.0, &mut gram);
    }
    let c = shift.expect("at least one chunk");
    let nf = n as f64;
    let d: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let mut cov = gram;
    for i in 0..p {
        for j in 0..p {
            cov[i * p + j] = (cov[i * p + j] - nf * d[i] * d[j]) / (nf - 1.0);
        }
    }
    let mean = d.iter().zip(&c).map(|(d, c)| d + c).collect();
    Ok((mean, cov))
}

/// Solves `K X = G` for a symmetric positive semi-definite `K` with the
/// eigenvalue floor. Returns the solution and the floored count.
fn solve_eigen(k: DMatrix<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(k);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = EIGEN_FLOOR * max;
    let mut floored = 0;
    let inv: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l < floor {
                floored += 1;
                1.0 / floor
            } else {
                1.0 / l
            }
        })
        .collect();
    let mut y = eig.eigenvectors.transpose() * g;
    for (i, mut row) in y.row_iter_mut().enumerate() {
        row *= inv[i];
    }
    (&eig.eigenvectors * y, floored)
}

pub fn build_slo(task: &TaskSpec, build: &SloBuild) -> Result<SloModel> {
    task.validate()?;
    let grid = build.grid.points(&task.prior)?;
    let p = task.width() * task.height();
    let (mean, mut cov) = background_moments(task, build)?;
    let var = task.noise.variance();
    for i in 0..p {
        cov[i * p + i] += var;
    }
    let k = DMatrix::from_row_slice(p, p, &cov);
    drop(cov);

    // Columns of G are g_bar(theta_k).
    let mut gbar = DMatrix::<f64>::zeros(p, grid.len());
    let cols: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|theta| {
            let mut img = Image::from_vec(task.width(), task.height(), mean.clone())?;
            task.render_signal_into(theta, &mut img)?;
            Ok(img.into_vec())
        })
        .collect::<Result<_>>()?;
    for (j, c) in cols.iter().enumerate() {
        gbar.set_column(j, &nalgebra::DVector::from_column_slice(c));
    }

    let use_eigen = match build.solver {
        SloSolver::Eigen => true,
        SloSolver::Cholesky => false,
        SloSolver::Auto => p <= 1024,
    };
    let (m, solver, floored) = if use_eigen {
        let (m, f) = solve_eigen(k, &gbar);
        (m, SloSolver::Eigen, f)
    } else {
        match k.clone().cholesky() {
            Some(ch) => (ch.solve(&gbar), SloSolver::Cholesky, 0),
            None => {
                warn!("covariance is not positive definite; falling back to the floored eigendecomposition");
                let (m, f) = solve_eigen(k, &gbar);
                (m, SloSolver::Eigen, f)
            }
        }
    };
    if floored > 0 {
        info!("slo: {floored} covariance eigenvalues raised to the floor");
    }
    let mut templates = Vec::with_capacity(grid.len() * p);
    let mut offsets = Vec::with_capacity(grid.len());
    for (j, theta) in grid.iter().enumerate() {
        let mj = m.column(j);
        let quad = mj.dot(&gbar.column(j));
        offsets.push(0.5 * quad - task.prior.log_density(theta));
        templates.extend(mj.iter());
    }
    Ok(SloModel {
        width: task.width(),
        height: task.height(),
        grid,
        templates,
        offsets,
        info: SloInfo {
            build: build.clone(),
            solver,
            floored,
        },
    })
}

impl SloModel {
    pub fn theta_dim(&self) -> usize {
        self.grid[0].len()
    }

    pub fn template(&self, k: usize) -> &[f64] {
        let p = self.width * self.height;
        &self.templates[k * p..(k + 1) * p]
    }

    /// Scan objective at every grid point.
    pub fn grid_scores(&self, g: &Image) -> Result<Vec<f64>> {
        if g.width() != self.width || g.height() != self.height {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.width, self.height),
                got: format!("{}x{}", g.width(), g.height()),
            });
        }
        Ok((0..self.grid.len())
            .map(|k| crate::image::dot(self.template(k), g.pixels()) - self.offsets[k])
            .collect())
    }

    /// `(T, index)` of the best grid point; ties go to the lowest index.
    pub fn scan(&self, g: &Image) -> Result<(f64, usize)> {
        let s = self.grid_scores(g)?;
        let mut best = 0;
        for (k, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = k;
            }
        }
        Ok((s[best], best))
    }

    /// Adds a constant to every grid log-prior.
    pub fn shift_log_prior(&mut self, c: f64) {
        self.offsets.iter_mut().for_each(|o| *o -= c);
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let header = serde_json::to_vec(&Header {
            width: self.width,
            height: self.height,
            grid: self.grid.clone(),
            info: self.info.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(SLO_MAGIC);
        out.extend_from_slice(&SLO_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.templates.iter().chain(&self.offsets) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        std::fs::write(path, &out)?;
        Ok(crate::nn::persist::to_hex(&digest))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |r: &str| Error::Format {
            kind: "slo model",
            reason: r.to_string(),
        };
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact {
                    path: path.to_path_buf(),
                    hint: "run `eroc train` for the slo observer first".into(),
                }
            } else {
                e.into()
            }
        })?;
        if bytes.len() < 20 + 32 {
            return Err(bad("file too short"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(bad("checksum mismatch"));
        }
        if &body[..8] != SLO_MAGIC || u32::from_le_bytes(body[8..12].try_into().unwrap()) != SLO_VERSION {
            return Err(bad("bad magic or version"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let h: Header = serde_json::from_slice(body.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?)?;
        let n = h.grid.len();
        let p = h.width * h.height;
        let data = &body[20 + hlen..];
        if data.len() != 8 * (n * p + n) {
            return Err(bad("payload size does not match the header"));
        }
        let vals: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (templates, offsets) = vals.split_at(n * p);
        Ok(SloModel {
            width: h.width,
            height: h.height,
            grid: h.grid,
            templates: templates.to_vec(),
            offsets: offsets.to_vec(),
            info: h.info,
        })
    }
}

const SLO_MAGIC: &[u8; 8] = b"EROCSLO1";
const SLO_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    grid: Vec<Vec<f64>>,
    info: SloInfo,
}

#[derive(Debug, Clone)]
pub struct SloObserver {
    pub model: SloModel,
}

impl Observer for SloObserver {
    fn name(&self) -> &'static str {
        "slo"
    }

    fn theta_dim(&self) -> usize {
        self.model.theta_dim()
    }

    fn observe(&self, g: &Image, _rng: &mut StreamRng) -> Result<ObserverOutput> {
        let (t, k) = self.model.scan(g)?;
        Ok(ObserverOutput::new(t, self.model.grid[k].clone()))
    }
}
