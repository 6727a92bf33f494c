//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use eroc_core::eroc::PresentScore;
use eroc_core::image::Image;
use eroc_core::sim::{BackgroundModel, GaussianSignal, ImagingSystem, NoiseModel, SignalPrior, TaskSpec};
use eroc_core::utility::UtilityFn;

/// Known-background amplitude task on an `n x n` grid.
pub fn bke_task(n: usize, utility: UtilityFn) -> TaskSpec {
    let c = n as f64 / 2.0;
    TaskSpec {
        system: ImagingSystem::new(16.0, 3.87, n, n).unwrap(),
        signal: GaussianSignal {
            amplitude: 9.0,
            width_px: 1.0,
            center_px: [c, c],
        },
        prior: SignalPrior::GaussianAmplitude { mean: 9.0, std: 4.0 },
        background: BackgroundModel::Zero,
        noise: NoiseModel::new(40.0).unwrap(),
        utility,
    }
}

/// Unit-amplitude signal image, computed pixel by pixel from the Gaussian
/// point-response convolution formula.
pub fn unit_template(task: &TaskSpec) -> Vec<f64> {
    let sys = &task.system;
    let ws2 = task.signal.width_px.powi(2);
    let wm2 = sys.prf_width_px.powi(2);
    let [cx, cy] = task.signal.center_px;
    let mut t = Vec::with_capacity(sys.grid_width_px * sys.grid_height_px);
    for y in 0..sys.grid_height_px {
        for x in 0..sys.grid_width_px {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            t.push(sys.prf_height * ws2 / (wm2 + ws2) * (-d2 / (2.0 * (wm2 + ws2))).exp());
        }
    }
    t
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate Gaussian posterior of the amplitude: `(mean, variance)`.
pub fn amplitude_posterior(task: &TaskSpec, g: &Image) -> (f64, f64) {
    let SignalPrior::GaussianAmplitude { mean, std } = task.prior else {
        panic!("amplitude prior expected")
    };
    let t = unit_template(task);
    let (tg, tt) = (dot(&t, g.pixels()), dot(&t, &t));
    let (va, vn) = (std * std, task.noise.variance());
    let precision = 1.0 / va + tt / vn;
    ((mean / va + tg / vn) / precision, 1.0 / precision)
}

/// Nodes and weights of `n`-point Gauss-Hermite quadrature for weight
/// `exp(-x^2)`, found by Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pi_m4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        // Standard initial guesses for the largest roots first.
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pi_m4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `ln` of the known-background marginal likelihood ratio, integrated over
/// the amplitude prior by Gauss-Hermite quadrature.
pub fn bke_log_lambda_quadrature(task: &TaskSpec, g: &Image, nodes: usize) -> f64 {
    let SignalPrior::GaussianAmplitude { mean, std } = task.prior else {
        panic!("amplitude prior expected")
    };
    let t = unit_template(task);
    let (tg, tt) = (dot(&t, g.pixels()), dot(&t, &t));
    let vn = task.noise.variance();
    let (x, w) = gauss_hermite(nodes);
    let logs: Vec<f64> = x
        .iter()
        .zip(&w)
        .map(|(xi, wi)| {
            let a = mean + std::f64::consts::SQRT_2 * std * xi;
            wi.ln() + (a * tg - 0.5 * a * a * tt) / vn
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - 0.5 * std::f64::consts::PI.ln()
}

/// Posterior mean of a Gaussian utility under a Gaussian posterior
/// `N(m, v)`: `sigma / sqrt(sigma^2 + v) * exp(-(theta_hat - m)^2 / (2 (sigma^2 + v)))`.
pub fn gaussian_utility_posterior_mean(theta_hat: f64, sigma: f64, m: f64, v: f64) -> f64 {
    let s2 = sigma * sigma + v;
    sigma / s2.sqrt() * (-(theta_hat - m).powi(2) / (2.0 * s2)).exp()
}

/// Double-loop AEROC: ties between classes count one half.
pub fn brute_force_aeroc(present: &[PresentScore], absent: &[f64]) -> f64 {
    let mut total = 0.0;
    for p in present {
        for &a in absent {
            if p.t > a {
                total += p.u;
            } else if p.t == a {
                total += 0.5 * p.u;
            }
        }
    }
    total / (present.len() * absent.len()) as f64
}

/// Wilcoxon-Mann-Whitney AUC by double loop.
pub fn wmw_auc(present: &[f64], absent: &[f64]) -> f64 {
    let mut total = 0.0;
    for &p in present {
        for &a in absent {
            if p > a {
                total += 1.0;
            } else if p == a {
                total += 0.5;
            }
        }
    }
    total / (present.len() * absent.len()) as f64
}

/// Spearman rank correlation without tie correction beyond average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
