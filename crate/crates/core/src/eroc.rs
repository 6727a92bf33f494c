//! EROC curves and the nonparametric AEROC estimator.
//!
//! The area estimator is the utility-weighted Mann-Whitney U statistic
//!
//! ```text
//! AEROC = 1/(n1 n0) sum_i sum_j u_i [ 1(T1_i > T0_j) + 1/2 1(T1_i = T0_j) ]
//! ```
//!
//! which reduces to the WMW AUC when every `u_i = 1`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::stats::quantile_sorted;

/// One operating point: decide "present" when `T > tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErocPoint {
    pub tau: f64,
    pub fpf: f64,
    pub u_tp: f64,
}

/// Operating points ordered by increasing threshold; the first point has
/// `tau = -inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErocCurve {
    pub points: Vec<ErocPoint>,
}

/// A signal-present case: test statistic and utility of its estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresentScore {
    pub t: f64,
    pub u: f64,
}

impl From<(f64, f64)> for PresentScore {
    fn from((t, u): (f64, f64)) -> Self {
        PresentScore { t, u }
    }
}

fn check_inputs(present: &[PresentScore], absent: &[f64]) -> Result<()> {
    if present.is_empty() {
        return Err(Error::Empty("signal-present scores"));
    }
    if absent.is_empty() {
        return Err(Error::Empty("signal-absent scores"));
    }
    if present.iter().any(|p| p.t.is_nan() || !p.u.is_finite()) || absent.iter().any(|t| t.is_nan()) {
        return Err(Error::invalid("scores", "NaN test statistic or non-finite utility"));
    }
    Ok(())
}

fn sorted(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Sweeps `tau` over `-inf` and every distinct score.
///
/// `U_TP(tau) = (1/n1) sum_i u_i 1(T1_i > tau)` divides by all signal-present
/// cases, not only the detected ones.
pub fn eroc_curve(present: &[PresentScore], absent: &[f64]) -> Result<ErocCurve> {
    check_inputs(present, absent)?;
    let n1 = present.len() as f64;
    let n0 = absent.len() as f64;
    let mut pres: Vec<PresentScore> = present.to_vec();
    pres.sort_by(|a, b| a.t.total_cmp(&b.t));
    let abs = sorted(absent.iter().copied());

    let mut thresholds = sorted(pres.iter().map(|p| p.t).chain(abs.iter().copied()));
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len() + 1);
    let mut u_above: f64 = pres.iter().map(|p| p.u).sum();
    let mut n_abs_above = abs.len();
    points.push(ErocPoint {
        tau: f64::NEG_INFINITY,
        fpf: 1.0,
        u_tp: u_above / n1,
    });
    let (mut ip, mut ia) = (0, 0);
    for tau in thresholds {
        while ip < pres.len() && pres[ip].t <= tau {
            u_above -= pres[ip].u;
            ip += 1;
        }
        while ia < abs.len() && abs[ia] <= tau {
            n_abs_above -= 1;
            ia += 1;
        }
        // Recompute the tail sum exactly once it is empty to avoid drift.
        if ip == pres.len() {
            u_above = 0.0;
        }
        points.push(ErocPoint {
            tau,
            fpf: n_abs_above as f64 / n0,
            u_tp: u_above / n1,
        });
    }
    Ok(ErocCurve { points })
}

impl ErocCurve {
    /// Trapezoidal area over FPF. Tied present/absent scores produce a
    /// diagonal segment, which is exactly the half-weight tie term.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[0].fpf - w[1].fpf) * 0.5 * (w[0].u_tp + w[1].u_tp))
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau,fpf,u_tp")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.tau, p.fpf, p.u_tp)?;
        }
        Ok(())
    }
}

/// Trapezoidal cross-check of [`aeroc_value`].
pub fn aeroc_from_curve(curve: &ErocCurve) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::Empty("EROC curve"));
    }
    Ok(curve.area())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Two-sided coverage, e.g. 0.9.
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 2000,
            level: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AerocEstimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    #[serde(rename = "n1")]
    pub n_present: usize,
    #[serde(rename = "n0")]
    pub n_absent: usize,
    pub n_bootstrap: usize,
    pub level: f64,
    pub seed: u64,
}

impl AerocEstimate {
    pub fn ci_overlaps(&self, other: &AerocEstimate) -> bool {
        self.ci_lo <= other.ci_hi && other.ci_lo <= self.ci_hi
    }
}

/// Per present case: number of absent scores strictly below and equal.
struct Ranks {
    lower: Vec<usize>,
    upper: Vec<usize>,
}

fn ranks(present: &[PresentScore], abs_sorted: &[f64]) -> Ranks {
    let lower = present
        .iter()
        .map(|p| abs_sorted.partition_point(|&a| a < p.t))
        .collect();
    let upper = present
        .iter()
        .map(|p| abs_sorted.partition_point(|&a| a <= p.t))
        .collect();
    Ranks { lower, upper }
}

/// Point estimate of the AEROC, `O((n1 + n0) log n0)`.
pub fn aeroc_value(present: &[PresentScore], absent: &[f64]) -> Result<f64> {
    check_inputs(present, absent)?;
    let abs = sorted(absent.iter().copied());
    let r = ranks(present, &abs);
    let total: f64 = present
        .iter()
        .enumerate()
        .map(|(i, p)| p.u * (r.lower[i] as f64 + 0.5 * (r.upper[i] - r.lower[i]) as f64))
        .sum();
    Ok(total / (present.len() as f64 * abs.len() as f64))
}

/// Point estimate plus a percentile-bootstrap interval. Both classes are
/// resampled independently; resample `b` uses its own random stream.
pub fn aeroc(present: &[PresentScore], absent: &[f64], cfg: &BootstrapConfig) -> Result<AerocEstimate> {
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::invalid("bootstrap.level", "must lie in (0, 1)"));
    }
    let value = aeroc_value(present, absent)?;
    let abs = sorted(absent.iter().copied());
    let r = ranks(present, &abs);
    let n1 = present.len();
    let n0 = abs.len();

    let mut reps: Vec<f64> = (0..cfg.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.seed, Purpose::Bootstrap, b as u64);
            let mut mult = vec![0u32; n0 + 1];
            for _ in 0..n0 {
                mult[rng.random_range(0..n0) + 1] += 1;
            }
            // Prefix counts: prefix[k] = resampled absent scores among the k smallest.
            for k in 1..=n0 {
                mult[k] += mult[k - 1];
            }
            let mut total = 0.0;
            for _ in 0..n1 {
                let i = rng.random_range(0..n1);
                let less = mult[r.lower[i]] as f64;
                let eq = (mult[r.upper[i]] - mult[r.lower[i]]) as f64;
                total += present[i].u * (less + 0.5 * eq);
            }
            total / (n1 as f64 * n0 as f64)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - cfg.level);
    let (ci_lo, ci_hi) = if reps.is_empty() {
        (value, value)
    } else {
        (
            quantile_sorted(&reps, alpha).min(value),
            quantile_sorted(&reps, 1.0 - alpha).max(value),
        )
    };
    Ok(AerocEstimate {
        value,
        ci_lo,
        ci_hi,
        n_present: n1,
        n_absent: n0,
        n_bootstrap: cfg.resamples,
        level: cfg.level,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(v: &[(f64, f64)]) -> Vec<PresentScore> {
        v.iter().copied().map(PresentScore::from).collect()
    }

    #[test]
    fn perfect_separation() {
        let p = ps(&[(3.0, 1.0), (4.0, 1.0)]);
        let a = [1.0, 2.0];
        assert_eq!(aeroc_value(&p, &a).unwrap(), 1.0);
        let c = eroc_curve(&p, &a).unwrap();
        assert!(c.points.iter().any(|q| q.fpf == 0.0 && q.u_tp == 1.0));
    }

    #[test]
    fn single_pair_area_is_its_utility() {
        let p = ps(&[(1.0, 0.7)]);
        let c = eroc_curve(&p, &[0.0]).unwrap();
        assert!((aeroc_from_curve(&c).unwrap() - 0.7).abs() < 1e-15);
        assert!((aeroc_value(&p, &[0.0]).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn hand_enumerated_three_by_three() {
        // present (T, u): (0.2, 0.5), (0.6, 1.0), (0.9, -0.2); absent 0.1, 0.5, 0.7
        let p = ps(&[(0.2, 0.5), (0.6, 1.0), (0.9, -0.2)]);
        let a = [0.1, 0.5, 0.7];
        let c = eroc_curve(&p, &a).unwrap();
        let expect = [
            (f64::NEG_INFINITY, 1.0, 1.3 / 3.0),
            (0.1, 2.0 / 3.0, 1.3 / 3.0),
            (0.2, 2.0 / 3.0, 0.8 / 3.0),
            (0.5, 1.0 / 3.0, 0.8 / 3.0),
            (0.6, 1.0 / 3.0, -0.2 / 3.0),
            (0.7, 0.0, -0.2 / 3.0),
            (0.9, 0.0, 0.0),
        ];
        assert_eq!(c.points.len(), expect.len());
        for (q, e) in c.points.iter().zip(expect) {
            assert_eq!(q.tau, e.0);
            assert!((q.fpf - e.1).abs() < 1e-15 && (q.u_tp - e.2).abs() < 1e-15, "{q:?}");
        }
        // 0.5*1 + 1.0*2 + (-0.2)*3, over 9
        let v = aeroc_value(&p, &a).unwrap();
        assert!((v - 1.9 / 9.0).abs() < 1e-15);
        assert!((c.area() - v).abs() < 1e-15);
    }

    #[test]
    fn ties_get_half_weight() {
        let p = ps(&[(1.0, 1.0)]);
        assert_eq!(aeroc_value(&p, &[1.0]).unwrap(), 0.5);
        let c = eroc_curve(&p, &[1.0]).unwrap();
        assert_eq!(c.area(), 0.5);
    }

    #[test]
    fn empty_and_nan_inputs_rejected() {
        assert!(aeroc_value(&[], &[1.0]).is_err());
        assert!(aeroc_value(&ps(&[(1.0, 1.0)]), &[]).is_err());
        assert!(eroc_curve(&ps(&[(f64::NAN, 1.0)]), &[0.0]).is_err());
    }

    #[test]
    fn bootstrap_interval_brackets_estimate() {
        let p: Vec<PresentScore> = (0..200)
            .map(|i| PresentScore {
                t: i as f64 * 0.013 + 0.5,
                u: 0.8,
            })
            .collect();
        let a: Vec<f64> = (0..200).map(|i| i as f64 * 0.011).collect();
        let cfg = BootstrapConfig {
            resamples: 500,
            level: 0.9,
            seed: 4,
        };
        let e = aeroc(&p, &a, &cfg).unwrap();
        assert!(e.ci_lo <= e.value && e.value <= e.ci_hi);
        assert!(e.ci_hi - e.ci_lo > 0.0);
        assert_eq!(aeroc(&p, &a, &cfg).unwrap(), e);
        let json = serde_json::to_value(e).unwrap();
        assert!(json.get("n1").is_some() && json.get("n0").is_some());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let c = eroc_curve(&ps(&[(1.0, 1.0)]), &[0.0]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("tau,fpf,u_tp\n-inf,1,1\n"));
        assert_eq!(s.lines().count(), 4);
    }
}
