//! The experiment pipeline: test set, trained or loaded models, observer
//! scores, EROC curves and a result manifest.
//!
//! Outputs are staged in `<out>.partial` and moved into place only when
//! every stage succeeds; a failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::eroc::{aeroc, eroc_curve, AerocEstimate, BootstrapConfig, ErocCurve};
use crate::error::{Error, Result};
use crate::nn::persist::to_hex;
use crate::nn::{
    grow_architecture, init_net, load_model, save_model, train_with_progress, GrowthStep, ModelManifest, MultiTaskNet,
    TrainHistory, TrainingData,
};
use crate::observers::{
    build_slo, score_images, write_scores_csv, AnalyticIo, HybridIo, McmcIo, Observer, ObserverKind, ScoreTable,
    SloModel, SloObserver, SubIdealNo,
};
use crate::rng::Purpose;
use crate::sim::dataset::{generate_dataset, Dataset, DatasetOptions};

pub const TOOL_NAME: &str = "eroc";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CONFIG_FILE: &str = "config.toml";
pub const TEST_SET_FILE: &str = "testset.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const MODEL_MANIFEST_FILE: &str = "model.json";
pub const SLO_FILE: &str = "slo.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn scores_file(kind: ObserverKind) -> String {
    format!("scores-{kind}.csv")
}

pub fn curve_file(kind: ObserverKind) -> String {
    format!("eroc-{kind}.csv")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(to_hex(&Sha256::digest(std::fs::read(path)?)))
}

/// Human-readable list of the stages `run_experiment` would execute.
pub fn plan(cfg: &ExperimentConfig) -> Vec<String> {
    let mut steps = vec![format!(
        "generate test set: {}+{} images, {}x{}, seed {}",
        cfg.data.test_present,
        cfg.data.test_absent,
        cfg.task.width(),
        cfg.task.height(),
        cfg.seed
    )];
    if let Some(n) = cfg.network.as_ref().filter(|_| needs_network(cfg)) {
        match &n.model_path {
            Some(p) => steps.push(format!("load network from {}", p.display())),
            None => {
                if n.growth.is_some() {
                    steps.push("search shared and estimation block depths".into());
                }
                steps.push(format!(
                    "train network: {}+{} conv layers, {} filters {}x{}, pool {}+{}, {} batches of {}+{}, lr {:e}",
                    n.shared_convs,
                    n.estimation_convs,
                    n.filters,
                    n.kernel,
                    n.kernel,
                    n.train_present,
                    n.train_absent,
                    n.train.batches,
                    n.train.batch_present,
                    n.train.batch_absent,
                    n.train.learning_rate
                ));
            }
        }
    }
    if let Some(s) = cfg.slo.as_ref().filter(|_| cfg.observers.contains(&ObserverKind::Slo)) {
        match &s.model_path {
            Some(p) => steps.push(format!("load SLO from {}", p.display())),
            None => steps.push(format!(
                "build SLO from {}+{} noiseless images",
                s.n_present, s.n_absent
            )),
        }
    }
    for o in &cfg.observers {
        steps.push(format!("score with {o}"));
    }
    steps.push(format!(
        "EROC and AEROC with {} bootstrap resamples at level {}",
        cfg.bootstrap.resamples, cfg.bootstrap.level
    ));
    steps
}

fn needs_network(cfg: &ExperimentConfig) -> bool {
    cfg.observers
        .iter()
        .any(|o| matches!(o, ObserverKind::Hybrid | ObserverKind::SubIdeal))
}

/// Test images for the configured task; image `i` uses stream
/// `(seed, TestSet, i)`.
pub fn generate_test_set(cfg: &ExperimentConfig) -> Result<Dataset> {
    let images = generate_dataset(
        &cfg.task,
        cfg.data.test_present,
        cfg.data.test_absent,
        cfg.seed,
        Purpose::TestSet,
        DatasetOptions::default(),
    )?;
    Dataset::new(cfg.task.width(), cfg.task.height(), cfg.task.theta_dim(), false, images)
}

/// A network trained from scratch, with its history and growth audit.
pub struct TrainedNetwork {
    pub net: MultiTaskNet,
    pub history: TrainHistory,
    pub growth: Vec<GrowthStep>,
}

pub fn train_network(cfg: &ExperimentConfig) -> Result<TrainedNetwork> {
    let n = cfg
        .network
        .as_ref()
        .ok_or_else(|| Error::config("network", "the config has no [network] table"))?;
    let tc = cfg.train_config().expect("network present");
    let data = TrainingData::simulate(
        &cfg.task,
        n.train_present,
        n.train_absent,
        n.validation_per_class,
        cfg.seed,
        tc.semi_online,
    )?;
    let (arch, growth) = match &n.growth {
        Some(g) => {
            let out = grow_architecture(&cfg.task, &data, &tc, g)?;
            (out.architecture, out.audit)
        }
        None => (n.architecture(&cfg.task), Vec::new()),
    };
    let mut net = init_net(&cfg.task, arch, &data, cfg.seed)?;
    let history = train_with_progress(&mut net, &cfg.task, &data, &tc, |v| {
        log::info!(
            "batch {}: validation cross-entropy {:.5}, estimation loss {:.5}",
            v.batch,
            v.detection_loss,
            v.estimation_loss
        );
    })?;
    Ok(TrainedNetwork { net, history, growth })
}

/// Writes the model and its JSON manifest into `dir`; returns the model
/// checksum.
pub fn save_network(cfg: &ExperimentConfig, t: &TrainedNetwork, dir: &Path) -> Result<String> {
    let sha256 = save_model(&t.net, &dir.join(MODEL_FILE))?;
    ModelManifest {
        train: cfg.train_config().expect("network present"),
        architecture: t.net.architecture().clone(),
        param_count: t.net.param_count(),
        sha256: sha256.clone(),
        history: t.history.clone(),
        growth: t.growth.clone(),
    }
    .write(&dir.join(MODEL_MANIFEST_FILE))?;
    Ok(sha256)
}

pub fn build_observer(
    kind: ObserverKind,
    cfg: &ExperimentConfig,
    net: Option<&MultiTaskNet>,
    slo: Option<&SloModel>,
) -> Result<Box<dyn Observer>> {
    let need_net = || {
        net.cloned()
            .ok_or_else(|| Error::config("network", format!("observer `{kind}` needs a network")))
    };
    Ok(match kind {
        ObserverKind::AnalyticIo => Box::new(AnalyticIo::new(&cfg.task)?),
        ObserverKind::McmcIo => Box::new(McmcIo::new(cfg.task.clone(), cfg.mcmc.clone())?),
        ObserverKind::SubIdeal => Box::new(SubIdealNo::new(need_net()?)),
        ObserverKind::Hybrid => Box::new(HybridIo::new(need_net()?, cfg.task.clone(), cfg.mcmc.clone())?),
        ObserverKind::Slo => {
            let model = slo
                .cloned()
                .ok_or_else(|| Error::config("slo", "observer `slo` needs an SLO model"))?;
            if model.width != cfg.task.width() || model.height != cfg.task.height() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}x{}", cfg.task.width(), cfg.task.height()),
                    got: format!("{}x{}", model.width, model.height),
                });
            }
            Box::new(SloObserver { model })
        }
    })
}

/// Writes a single file through `<path>.partial`, removing the partial file
/// if `write` fails.
pub fn write_file_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    match write(&tmp) {
        Ok(()) => Ok(std::fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Trains a network and writes the model and its manifest into `out`.
pub fn train_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    cfg.validate()?;
    let staging = Staging::new(out, MODEL_MANIFEST_FILE)?;
    std::fs::write(staging.dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    let trained = train_network(cfg)?;
    let sha = save_network(cfg, &trained, &staging.dir)?;
    staging.commit()?;
    Ok(sha)
}

/// Per-observer entry of the result manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverResult {
    pub observer: ObserverKind,
    pub aeroc: AerocEstimate,
    /// Images whose chain acceptance rate left the healthy band.
    pub flagged_chains: usize,
    /// Variance of `U_hat` over the signal-present test images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_hat_variance: Option<f64>,
}

pub fn u_hat_variance(table: &ScoreTable) -> Option<f64> {
    let v: Vec<f64> = table.rows.iter().filter(|r| r.label).filter_map(|r| r.u_hat).collect();
    (v.len() > 1).then(|| crate::stats::variance(&v))
}

pub fn evaluate_scores(table: &ScoreTable, boot: &BootstrapConfig) -> Result<(ErocCurve, AerocEstimate)> {
    let (present, absent) = table.eroc_inputs()?;
    Ok((eroc_curve(&present, &absent)?, aeroc(&present, &absent, boot)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub tool: String,
    pub version: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    /// The resolved configuration; rerunning it reproduces every output.
    pub config: ExperimentConfig,
    /// Class priors are taken as equal when recovering likelihood ratios.
    pub equal_priors: bool,
    /// SHA-256 of externally supplied artifacts.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written by the run.
    pub outputs: BTreeMap<String, String>,
    pub observers: Vec<ObserverResult>,
    pub runtime_seconds: f64,
}

impl ResultManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `eroc run` to produce a result directory".into(),
            },
            _ => e.into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn observer(&self, kind: ObserverKind) -> Option<&ObserverResult> {
        self.observers.iter().find(|o| o.observer == kind)
    }
}

/// Staging directory removed on drop unless committed.
struct Staging {
    dir: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl Staging {
    /// `marker` identifies a directory this tool wrote earlier, which may
    /// be replaced.
    fn new(target: &Path, marker: &str) -> Result<Self> {
        if target.exists() {
            let ours = target.join(marker).exists();
            let empty = target.read_dir()?.next().is_none();
            if !ours && !empty {
                return Err(Error::config(
                    "out",
                    format!("{} exists and is not a previous result directory", target.display()),
                ));
            }
        }
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        let dir = target.with_file_name(name);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(Staging {
            dir,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    fn commit(mut self) -> Result<()> {
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target)?;
        }
        std::fs::rename(&self.dir, &self.target)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.dir);
        }
    }
}

fn record(outputs: &mut BTreeMap<String, String>, dir: &Path, name: &str) -> Result<()> {
    outputs.insert(name.to_string(), sha256_file(&dir.join(name))?);
    Ok(())
}

/// Runs every stage and writes the result directory `out`.
pub fn run_experiment(cfg: &ExperimentConfig, profile: Option<&str>, out: &Path) -> Result<ResultManifest> {
    let start = Instant::now();
    cfg.validate()?;
    let staging = Staging::new(out, MANIFEST_FILE)?;
    let dir = staging.dir.clone();
    let mut inputs = BTreeMap::new();
    let mut outputs = BTreeMap::new();

    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    record(&mut outputs, &dir, CONFIG_FILE)?;

    log::info!(
        "generating {}+{} test images",
        cfg.data.test_present,
        cfg.data.test_absent
    );
    generate_test_set(cfg)?.write(&dir.join(TEST_SET_FILE))?;
    record(&mut outputs, &dir, TEST_SET_FILE)?;
    // Score the stored container so staged and one-shot runs see the same
    // pixels.
    let test = Dataset::read(&dir.join(TEST_SET_FILE))?;

    let net = match cfg.network.as_ref().filter(|_| needs_network(cfg)) {
        Some(n) => Some(match &n.model_path {
            Some(p) => {
                inputs.insert(p.display().to_string(), sha256_file(p)?);
                load_model(p)?
            }
            None => {
                log::info!("training network");
                let t = train_network(cfg)?;
                save_network(cfg, &t, &dir)?;
                record(&mut outputs, &dir, MODEL_FILE)?;
                record(&mut outputs, &dir, MODEL_MANIFEST_FILE)?;
                t.net
            }
        }),
        None => None,
    };

    let slo = match cfg.slo.as_ref().filter(|_| cfg.observers.contains(&ObserverKind::Slo)) {
        Some(s) => Some(match &s.model_path {
            Some(p) => {
                inputs.insert(p.display().to_string(), sha256_file(p)?);
                SloModel::load(p)?
            }
            None => {
                log::info!("building SLO from {}+{} noiseless images", s.n_present, s.n_absent);
                let m = build_slo(&cfg.task, &s.build(cfg.seed))?;
                m.save(&dir.join(SLO_FILE))?;
                record(&mut outputs, &dir, SLO_FILE)?;
                m
            }
        }),
        None => None,
    };

    let boot = cfg.bootstrap_config();
    let mut results = Vec::new();
    for &kind in &cfg.observers {
        log::info!("scoring with {kind}");
        let obs = build_observer(kind, cfg, net.as_ref(), slo.as_ref())?;
        let mut table = score_images(obs.as_ref(), &test.images, &cfg.task.utility, cfg.seed)?;
        table.observer = kind.to_string();
        write_scores_csv(&table, BufWriter::new(File::create(dir.join(scores_file(kind)))?))?;
        record(&mut outputs, &dir, &scores_file(kind))?;
        let (curve, estimate) = evaluate_scores(&table, &boot)?;
        curve.write_csv(BufWriter::new(File::create(dir.join(curve_file(kind)))?))?;
        record(&mut outputs, &dir, &curve_file(kind))?;
        let flagged = table.flagged_chains();
        if flagged > 0 {
            log::warn!("{kind}: {flagged} chains outside the healthy acceptance band");
        }
        results.push(ObserverResult {
            observer: kind,
            aeroc: estimate,
            flagged_chains: flagged,
            u_hat_variance: u_hat_variance(&table),
        });
    }

    let manifest = ResultManifest {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        name: cfg.name.clone(),
        profile: profile.map(str::to_string),
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        config: cfg.clone(),
        equal_priors: true,
        inputs,
        outputs,
        observers: results,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(dir.join(SUMMARY_FILE), summary_table(std::slice::from_ref(&manifest)))?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    staging.commit()?;
    Ok(manifest)
}

/// Plain-text comparison table, one row per run and one column per
/// observer.
pub fn summary_table(runs: &[ResultManifest]) -> String {
    let mut kinds: Vec<ObserverKind> = Vec::new();
    for m in runs {
        for o in &m.observers {
            if !kinds.contains(&o.observer) {
                kinds.push(o.observer);
            }
        }
    }
    let mut s = String::new();
    let _ = write!(s, "{:<20}", "experiment");
    for k in &kinds {
        let _ = write!(s, " {:>24}", k.as_str());
    }
    s.push('\n');
    for m in runs {
        let _ = write!(s, "{:<20}", m.name);
        for k in &kinds {
            match m.observer(*k) {
                Some(o) => {
                    let a = &o.aeroc;
                    let _ = write!(s, " {:>24}", format!("{:.3} [{:.3}, {:.3}]", a.value, a.ci_lo, a.ci_hi));
                }
                None => {
                    let _ = write!(s, " {:>24}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Outcome of one `expect` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub observer: ObserverKind,
    pub target: f64,
    pub tolerance: f64,
    pub measured: Option<f64>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.measured.is_some_and(|m| (m - self.target).abs() <= self.tolerance)
    }
}

/// Compares a finished run against the configuration's targets.
pub fn verify(manifest: &ResultManifest) -> Vec<Check> {
    manifest
        .config
        .expect
        .iter()
        .map(|e| Check {
            observer: e.observer,
            target: e.aeroc,
            tolerance: e.tolerance,
            measured: manifest.observer(e.observer).map(|o| o.aeroc.value),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::load("bke", None).unwrap();
        c.task.system.grid_width_px = 16;
        c.task.system.grid_height_px = 16;
        c.task.signal.center_px = [8.0, 8.0];
        c.data.test_present = 60;
        c.data.test_absent = 60;
        c.bootstrap.resamples = 50;
        c
    }

    #[test]
    fn run_writes_a_complete_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("r");
        let m = run_experiment(&small(), None, &out).unwrap();
        assert!(m.equal_priors);
        for f in m.outputs.keys() {
            assert!(out.join(f).exists(), "{f}");
        }
        assert!(out.join(MANIFEST_FILE).exists());
        assert!(!tmp.path().join("r.partial").exists());
        assert_eq!(ResultManifest::read(&out.join(MANIFEST_FILE)).unwrap(), m);
        let a = m.observer(ObserverKind::AnalyticIo).unwrap().aeroc;
        assert!(a.value > 0.0 && a.value < 1.0);
    }

    #[test]
    fn failure_leaves_no_output() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("r");
        let bogus = tmp.path().join("model.bin");
        std::fs::write(&bogus, b"not a model").unwrap();
        let mut c = ExperimentConfig::load("bke-hybrid", None).unwrap();
        c.data.test_present = 10;
        c.data.test_absent = 10;
        c.network.as_mut().unwrap().model_path = Some(bogus);
        assert!(run_experiment(&c, None, &out).is_err());
        assert!(!out.exists());
        assert!(!tmp.path().join("r.partial").exists());
    }

    #[test]
    fn refuses_to_clobber_foreign_directories() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("keep.txt"), "x").unwrap();
        let e = run_experiment(&small(), None, tmp.path()).unwrap_err();
        assert!(e.is_config_error());
        assert!(tmp.path().join("keep.txt").exists());
    }

    #[test]
    fn verify_reports_misses() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = small();
        c.expect[0].aeroc = 2.0;
        let m = run_experiment(&c, None, &tmp.path().join("r")).unwrap();
        let checks = verify(&m);
        assert_eq!(checks.len(), 1);
        assert!(!checks[0].passed());
    }

    #[test]
    fn plan_lists_every_observer() {
        let c = ExperimentConfig::load("lb-l1", None).unwrap();
        let p = plan(&c);
        assert!(p.iter().any(|s| s.starts_with("train network")));
        assert!(p.iter().any(|s| s.starts_with("build SLO")));
        assert_eq!(p.iter().filter(|s| s.starts_with("score with")).count(), 3);
    }
}
