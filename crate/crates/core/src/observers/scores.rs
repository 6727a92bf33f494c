//! Per-image score tables and their CSV form.
//!
//! Columns: `image_id,label,T,theta_hat_0..,theta_0..,utility,log_lambda,u_hat`.
//! Fields that do not apply to an image are left empty.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eroc::PresentScore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub image_id: usize,
    pub label: bool,
    pub t: f64,
    pub estimate: Vec<f64>,
    pub theta: Option<Vec<f64>>,
    /// `u(theta_hat, theta)` for signal-present images.
    pub utility: Option<f64>,
    pub log_lambda: Option<f64>,
    pub u_hat: Option<f64>,
    #[serde(default)]
    pub chain_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub observer: String,
    pub theta_dim: usize,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Signal-present `(T, utility)` pairs and signal-absent `T` values.
    pub fn eroc_inputs(&self) -> Result<(Vec<PresentScore>, Vec<f64>)> {
        let mut present = Vec::new();
        let mut absent = Vec::new();
        for r in &self.rows {
            if r.label {
                let u = r
                    .utility
                    .ok_or_else(|| Error::invalid("scores", format!("present image {} has no utility", r.image_id)))?;
                present.push(PresentScore { t: r.t, u });
            } else {
                absent.push(r.t);
            }
        }
        Ok((present, absent))
    }

    pub fn statistics(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// Recomputes the utility column under `u`; `Constant` turns the EROC
    /// analysis into an ROC analysis.
    pub fn with_utility(&self, u: &crate::utility::UtilityFn) -> Result<ScoreTable> {
        let mut out = self.clone();
        for r in &mut out.rows {
            if let Some(theta) = &r.theta {
                r.utility = Some(u.evaluate(&r.estimate, theta)?);
            }
        }
        Ok(out)
    }

    pub fn flagged_chains(&self) -> usize {
        self.rows.iter().filter(|r| r.chain_flagged).count()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn write_scores_csv<W: Write>(table: &ScoreTable, mut w: W) -> Result<()> {
    let d = table.theta_dim;
    let mut header = vec!["image_id".to_string(), "label".into(), "T".into()];
    header.extend((0..d).map(|i| format!("theta_hat_{i}")));
    header.extend((0..d).map(|i| format!("theta_{i}")));
    header.extend(["utility".into(), "log_lambda".into(), "u_hat".into()]);
    writeln!(w, "{}", header.join(","))?;
    for r in &table.rows {
        let mut f = vec![
            r.image_id.to_string(),
            u8::from(r.label).to_string(),
            format!("{:e}", r.t),
        ];
        f.extend(r.estimate.iter().map(|v| format!("{v:e}")));
        match &r.theta {
            Some(t) => f.extend(t.iter().map(|v| format!("{v:e}"))),
            None => f.extend(std::iter::repeat_n(String::new(), d)),
        }
        f.extend([opt(r.utility), opt(r.log_lambda), opt(r.u_hat)]);
        writeln!(w, "{}", f.join(","))?;
    }
    Ok(())
}

pub fn read_scores_csv(path: &Path, observer: &str) -> Result<ScoreTable> {
    let bad = |line: usize, reason: String| Error::Format {
        kind: "scores",
        reason: format!("line {line}: {reason}"),
    };
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.iter().filter(|c| c.starts_with("theta_hat_")).count();
    if cols.len() != 6 + 2 * d || cols[..3] != ["image_id", "label", "T"] {
        return Err(bad(1, "unexpected header".into()));
    }
    let num = |s: &str, line: usize| -> Result<f64> { s.parse().map_err(|_| bad(line, format!("bad number `{s}`"))) };
    let opt_num = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, line).map(Some)
        }
    };
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let ln = k + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(ln, format!("expected {} fields, got {}", cols.len(), f.len())));
        }
        let label = match f[1] {
            "1" => true,
            "0" => false,
            other => return Err(bad(ln, format!("bad label `{other}`"))),
        };
        let estimate = (0..d).map(|i| num(f[3 + i], ln)).collect::<Result<Vec<_>>>()?;
        let theta = if f[3 + d].is_empty() {
            None
        } else {
            Some((0..d).map(|i| num(f[3 + d + i], ln)).collect::<Result<Vec<_>>>()?)
        };
        rows.push(ScoreRow {
            image_id: f[0].parse().map_err(|_| bad(ln, "bad image id".into()))?,
            label,
            t: num(f[2], ln)?,
            estimate,
            theta,
            utility: opt_num(f[3 + 2 * d], ln)?,
            log_lambda: opt_num(f[4 + 2 * d], ln)?,
            u_hat: opt_num(f[5 + 2 * d], ln)?,
            chain_flagged: false,
        });
    }
    Ok(ScoreTable {
        observer: observer.to_string(),
        theta_dim: d,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let table = ScoreTable {
            observer: "x".into(),
            theta_dim: 2,
            rows: vec![
                ScoreRow {
                    image_id: 0,
                    label: true,
                    t: 1.25,
                    estimate: vec![30.5, 31.0],
                    theta: Some(vec![30.0, 32.0]),
                    utility: Some(0.9),
                    log_lambda: Some(0.1),
                    u_hat: None,
                    chain_flagged: false,
                },
                ScoreRow {
                    image_id: 1,
                    label: false,
                    t: -3e-7,
                    estimate: vec![20.0, 21.0],
                    theta: None,
                    utility: None,
                    log_lambda: None,
                    u_hat: None,
                    chain_flagged: false,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_scores_csv(&table, std::fs::File::create(&p).unwrap()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image_id,label,T,theta_hat_0,theta_hat_1,theta_0,theta_1,utility,log_lambda,u_hat\n"));
        assert_eq!(read_scores_csv(&p, "x").unwrap(), table);
        let roc = table.with_utility(&crate::utility::UtilityFn::Constant).unwrap();
        assert_eq!(roc.rows[0].utility, Some(1.0));
        assert_eq!(roc.rows[1].utility, None);
        let (pr, ab) = table.eroc_inputs().unwrap();
        assert_eq!(pr, vec![PresentScore { t: 1.25, u: 0.9 }]);
        assert_eq!(ab, vec![-3e-7]);
    }
}
