//! `eroc`: experiment driver for joint detection-estimation studies.
//!
//! Settings resolve as command-line flag, then environment variable, then
//! config file.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime failure, 4 a `verify`
//! target was missed.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eroc_core::config::ExperimentConfig;
use eroc_core::error::{Error, Result};
use eroc_core::experiment::{
    self, build_observer, evaluate_scores, plan, run_experiment, summary_table, train_to_dir, verify,
    write_file_atomic, ResultManifest, MANIFEST_FILE,
};
use eroc_core::nn::load_model;
use eroc_core::observers::{build_slo, read_scores_csv, score_images, write_scores_csv, ObserverKind, SloModel};
use eroc_core::sim::Dataset;
use eroc_core::utility::UtilityFn;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

impl Profile {
    fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "eroc",
    version,
    about = "Task-based image quality: EROC analysis of ideal, hybrid and learned observers"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file or bundled preset name (bke, lb, clb, bke-hybrid, ...).
    #[arg(long, global = true, visible_alias = "preset", env = "EROC_CONFIG")]
    config: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true, env = "EROC_SEED")]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "EROC_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "desk", env = "EROC_PROFILE")]
    profile: Profile,
    /// Validate and print the plan without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true, env = "EROC_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a test-image container.
    Generate {
        /// Images per class; defaults to the config's test-set sizes.
        #[arg(long)]
        count: Option<usize>,
        /// Also write a JSON-lines description of each image.
        #[arg(long)]
        sidecar: bool,
    },
    /// Train the multi-task network into an output directory.
    Train,
    /// Score an image container with one observer.
    Score {
        #[arg(long, value_parser = parse_observer)]
        observer: ObserverKind,
        /// Image container from `generate`.
        #[arg(long)]
        images: PathBuf,
        /// Model file from `train`; falls back to the config's model path.
        #[arg(long)]
        model: Option<PathBuf>,
        /// SLO file; built from the config when absent.
        #[arg(long)]
        slo: Option<PathBuf>,
    },
    /// EROC curve and AEROC for a score table.
    Eroc {
        #[arg(long)]
        scores: PathBuf,
        /// Re-evaluate estimates under this utility, e.g. `constant` for
        /// ROC/AUC or `gaussian:3`.
        #[arg(long)]
        utility: Option<String>,
        #[arg(long, default_value_t = 2000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
    },
    /// Comparison table over finished result directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Run every stage and write a result directory.
    Run,
    /// Check a result directory (or a fresh run) against the config targets.
    Verify { run: Option<PathBuf> },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let src = c
        .config
        .as_deref()
        .ok_or_else(|| Error::config("--config", "pass a config file or preset name"))?;
    let mut cfg = ExperimentConfig::load(src, Some(c.profile.name()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Output directory: flag or environment, then the config, then `default`.
fn out_or(c: &Common, cfg: &ExperimentConfig, default: &str) -> PathBuf {
    c.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}

fn print_plan(cfg: &ExperimentConfig) {
    println!(
        "plan for `{}` (config hash {}):",
        cfg.name,
        cfg.hash().unwrap_or_default()
    );
    for (i, step) in plan(cfg).iter().enumerate() {
        println!("  {}. {step}", i + 1);
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match &cli.command {
        Command::Generate { count, sidecar } => {
            let mut cfg = load_config(c)?;
            if let Some(n) = count {
                cfg.data.test_present = *n;
                cfg.data.test_absent = *n;
                cfg.validate()?;
            }
            let out = c.out.clone().unwrap_or_else(|| PathBuf::from("testset.bin"));
            if c.dry_run {
                println!(
                    "would write {}+{} images to {}",
                    cfg.data.test_present,
                    cfg.data.test_absent,
                    out.display()
                );
                return Ok(ExitCode::SUCCESS);
            }
            let data = experiment::generate_test_set(&cfg)?;
            write_file_atomic(&out, |p| data.write(p))?;
            if *sidecar {
                let side = out.with_extension("jsonl");
                write_file_atomic(&side, |p| data.write_sidecar(p))?;
            }
            println!(
                "{} images ({} present) -> {}",
                data.len(),
                data.count_present(),
                out.display()
            );
        }
        Command::Train => {
            let cfg = load_config(c)?;
            if cfg.network.is_none() {
                return Err(Error::config("network", "the config has no [network] table"));
            }
            if c.dry_run {
                print_plan(&cfg);
                return Ok(ExitCode::SUCCESS);
            }
            let out = out_or(c, &cfg, &format!("{}-model", cfg.name));
            let sha = train_to_dir(&cfg, &out)?;
            println!("model {} -> {}", sha, out.display());
        }
        Command::Score {
            observer,
            images,
            model,
            slo,
        } => {
            let cfg = load_config(c)?;
            let out = c
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("scores-{observer}.csv")));
            if c.dry_run {
                println!(
                    "would score {} with {observer} into {}",
                    images.display(),
                    out.display()
                );
                return Ok(ExitCode::SUCCESS);
            }
            let data = read_images(images)?;
            let net = match observer {
                ObserverKind::Hybrid | ObserverKind::SubIdeal => {
                    let path = model
                        .clone()
                        .or_else(|| cfg.network.as_ref().and_then(|n| n.model_path.clone()))
                        .ok_or_else(|| Error::MissingArtifact {
                            path: PathBuf::from(experiment::MODEL_FILE),
                            hint: "run `eroc train` first and pass --model".into(),
                        })?;
                    Some(load_model(&path)?)
                }
                _ => None,
            };
            let slo_model = match observer {
                ObserverKind::Slo => Some(
                    match slo
                        .clone()
                        .or_else(|| cfg.slo.as_ref().and_then(|s| s.model_path.clone()))
                    {
                        Some(p) => SloModel::load(&p)?,
                        None => {
                            let s = cfg
                                .slo
                                .as_ref()
                                .ok_or_else(|| Error::config("slo", "no [slo] table and no --slo file"))?;
                            build_slo(&cfg.task, &s.build(cfg.seed))?
                        }
                    },
                ),
                _ => None,
            };
            let obs = build_observer(*observer, &cfg, net.as_ref(), slo_model.as_ref())?;
            let mut table = score_images(obs.as_ref(), &data.images, &cfg.task.utility, cfg.seed)?;
            table.observer = observer.to_string();
            write_file_atomic(&out, |p| write_scores_csv(&table, BufWriter::new(File::create(p)?)))?;
            println!("{} rows -> {}", table.rows.len(), out.display());
        }
        Command::Eroc {
            scores,
            utility,
            resamples,
            level,
        } => {
            let mut table =
                read_scores_csv(scores, "scores").map_err(|e| missing(e, scores, "run `eroc score` first"))?;
            if let Some(u) = utility {
                table = table.with_utility(&UtilityFn::parse(u)?)?;
            }
            let seed = c.seed.unwrap_or(0);
            let boot = eroc_core::eroc::BootstrapConfig {
                resamples: *resamples,
                level: *level,
                seed,
            };
            let (curve, est) = evaluate_scores(&table, &boot)?;
            let roc = utility.as_deref().is_some_and(|u| u.trim() == "constant");
            let label = if roc { "AUC" } else { "AEROC" };
            println!(
                "{label} {:.4} ({:.0}% CI {:.4} to {:.4}), {}+{} images",
                est.value,
                est.level * 100.0,
                est.ci_lo,
                est.ci_hi,
                est.n_present,
                est.n_absent
            );
            if let Some(out) = &c.out {
                write_file_atomic(out, |p| curve.write_csv(BufWriter::new(File::create(p)?)))?;
            }
        }
        Command::Report { runs } => {
            let manifests = runs
                .iter()
                .map(|r| ResultManifest::read(&r.join(MANIFEST_FILE)))
                .collect::<Result<Vec<_>>>()?;
            let table = summary_table(&manifests);
            print!("{table}");
            if let Some(out) = &c.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("summary.txt"), &table)?;
                std::fs::write(out.join("plot.gp"), gnuplot_script(runs, &manifests))?;
            }
        }
        Command::Run => {
            let cfg = load_config(c)?;
            if c.dry_run {
                print_plan(&cfg);
                return Ok(ExitCode::SUCCESS);
            }
            let out = out_or(c, &cfg, &format!("results/{}", cfg.name));
            let m = run_experiment(&cfg, Some(c.profile.name()), &out)?;
            print!("{}", summary_table(std::slice::from_ref(&m)));
            println!("results -> {}", out.display());
        }
        Command::Verify { run } => {
            let m = match run {
                Some(dir) => ResultManifest::read(&dir.join(MANIFEST_FILE))?,
                None => {
                    let cfg = load_config(c)?;
                    if c.dry_run {
                        print_plan(&cfg);
                        return Ok(ExitCode::SUCCESS);
                    }
                    let out = out_or(c, &cfg, &format!("results/{}", cfg.name));
                    run_experiment(&cfg, Some(c.profile.name()), &out)?
                }
            };
            let checks = verify(&m);
            if checks.is_empty() {
                println!("no targets declared for `{}`", m.name);
            }
            let mut ok = true;
            for ch in &checks {
                let measured = ch.measured.map_or("missing".to_string(), |v| format!("{v:.4}"));
                let verdict = if ch.passed() { "PASS" } else { "MISS" };
                ok &= ch.passed();
                println!(
                    "{verdict} {}: {measured} vs {:.3} +/- {:.3}",
                    ch.observer, ch.target, ch.tolerance
                );
            }
            if !ok {
                return Ok(ExitCode::from(EXIT_VERIFY));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_observer(s: &str) -> std::result::Result<ObserverKind, String> {
    ObserverKind::parse(s).map_err(|e| e.to_string())
}

fn missing(e: Error, path: &Path, hint: &str) -> Error {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.into(),
        },
        other => other,
    }
}

fn read_images(path: &Path) -> Result<Dataset> {
    Dataset::read(path).map_err(|e| missing(e, path, "run `eroc generate` first"))
}

/// Gnuplot commands overlaying every EROC curve of the given runs.
fn gnuplot_script(runs: &[PathBuf], manifests: &[ResultManifest]) -> String {
    let mut plots = Vec::new();
    for (dir, m) in runs.iter().zip(manifests) {
        for o in &m.observers {
            let file = dir.join(experiment::curve_file(o.observer));
            plots.push(format!(
                "'{}' every ::1 using 2:3 with steps title '{} {} ({:.3})'",
                file.display(),
                m.name,
                o.observer,
                o.aeroc.value
            ));
        }
    }
    format!(
        "set datafile separator ','\nset xlabel 'FPF'\nset ylabel 'expected utility of true positives'\nset xrange [0:1]\nplot {}\n",
        plots.join(", \\\n     ")
    )
}
