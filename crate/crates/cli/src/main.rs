//! `cossim-lab`: runs the numerical studies and writes plot-ready CSV/JSON.
//!
//! Exit codes: 0 success, 1 a checked property was violated, 2 usage or
//! validation error.

mod angle;
mod error;
mod jobs;
mod output;

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cossim_core::dynamics::{BoundCheckConfig, SweepConfig};
use cossim_core::losses::GradCheckConfig;
use cossim_core::toynet::{ArchConfig, DatasetConfig, TrainConfig, TrainMode};

use crate::error::CliError;
use crate::jobs::{Job, MonteCarloJob, SweepJob, TrainJob};
use crate::output::{extra_path, manifest_path, read_manifest, write_file, Format, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "cossim-lab",
    version,
    about = "Cosine-similarity optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Base seed. Falls back to COSSIM_LAB_SEED, then 42.
    #[arg(long, env = "COSSIM_LAB_SEED", default_value_t = 42)]
    seed: u64,
    /// Output file. A `<out>.manifest.json` sidecar is written next to it.
    /// Without it the primary output goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn angle(s: &str) -> Result<f64, String> {
    angle::parse_value(s)
}

/// Comma-separated values; a newtype so clap treats the list as one value.
#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

fn grid(s: &str) -> Result<Grid, String> {
    angle::parse_grid(s).map(Grid)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    AttractionOnly,
    Infonce,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::AttractionOnly => TrainMode::AttractionOnly,
            ModeArg::Infonce => TrainMode::InfoNce,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare analytic loss gradients with central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Fixed dimension. Without it each trial draws d from [dim-min, dim-max].
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 2)]
        dim_min: usize,
        #[arg(long, default_value_t = 64)]
        dim_max: usize,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Steps until mean pair cosine exceeds a threshold, over a rho x phi grid.
    Sweep {
        /// Comma-separated norms.
        #[arg(long, value_parser = grid, default_value = "1,10")]
        rho_grid: Grid,
        /// Comma-separated angles; `pi` is understood, e.g. `pi/2,pi-0.1`.
        #[arg(long, value_parser = grid, default_value = "pi/2")]
        phi_grid: Grid,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 0.999)]
        threshold: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_iters: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        common: Common,
    },
    /// Cosine moments and tail rates of random Gaussian pairs.
    Montecarlo {
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        /// Comma-separated epsilons in (0, 1).
        #[arg(long, value_parser = grid, default_value = "0.3,0.5,0.7")]
        eps: Grid,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        common: Common,
    },
    /// Train the toy network and record per-epoch metrics.
    Train(TrainArgs),
    /// Sample symmetric steps and test dcos < 2 gamma sin^2(phi) / rho^2.
    BoundCheck {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        rho_min: f64,
        #[arg(long, default_value_t = 100.0)]
        rho_max: f64,
        #[arg(long, value_parser = angle, default_value = "0.01")]
        phi_min: f64,
        #[arg(long, value_parser = angle, default_value = "pi-0.01")]
        phi_max: f64,
        /// Use collinear pairs (z_j = z_i on even trials, -z_i on odd).
        #[arg(long)]
        collinear: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run the job recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Write here instead of the recorded output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Infonce)]
    mode: ModeArg,
    /// Cut constant: every initial weight is divided by it.
    #[arg(long, default_value_t = 1.0)]
    cut: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    ema_tau: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    #[arg(long, default_value_t = 4)]
    n_classes: usize,
    #[arg(long, default_value_t = 96)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    eval_per_class: usize,
    #[arg(long, default_value_t = 16)]
    d_in: usize,
    #[arg(long, default_value_t = 3.0)]
    cluster_radius: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    /// Dataset seed; defaults to the run seed.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    proj_dim: usize,
    #[arg(long, default_value_t = 8)]
    pred_hidden: usize,
    /// Batch-norm on the projector output.
    #[arg(long)]
    head_bn: bool,
    /// Also write `<stem>.latent.<ext>` with per-epoch 2-d positive-pair
    /// segments. Needs --proj-dim 2 and --out.
    #[arg(long)]
    latent2d: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(flatten)]
    common: Common,
}

fn resolve(command: Command) -> Result<(Job, Option<PathBuf>), CliError> {
    Ok(match command {
        Command::GradCheck {
            trials,
            dim,
            dim_min,
            dim_max,
            h,
            tolerance,
            common,
        } => {
            let (dim_min, dim_max) = dim.map_or((dim_min, dim_max), |d| (d, d));
            let cfg = GradCheckConfig {
                trials,
                dim_min,
                dim_max,
                h,
                tolerance,
                seed: common.seed,
            };
            (Job::GradCheck(cfg), common.out)
        }
        Command::Sweep {
            rho_grid,
            phi_grid,
            dim,
            pairs,
            gamma,
            threshold,
            max_iters,
            format,
            common,
        } => {
            let config = SweepConfig {
                dim,
                n_pairs: pairs,
                gamma,
                threshold,
                max_iters,
                rho_grid: rho_grid.0,
                phi_grid: phi_grid.0,
                seed: common.seed,
            };
            (Job::Sweep(SweepJob { config, format }), common.out)
        }
        Command::Montecarlo {
            dim,
            samples,
            eps,
            format,
            common,
        } => (
            Job::Montecarlo(MonteCarloJob {
                dim,
                samples,
                epsilons: eps.0,
                seed: common.seed,
                format,
            }),
            common.out,
        ),
        Command::Train(a) => {
            let seed = a.common.seed;
            let job = TrainJob {
                dataset: DatasetConfig {
                    n_classes: a.n_classes,
                    per_class: a.per_class,
                    d_in: a.d_in,
                    cluster_radius: a.cluster_radius,
                    spread: a.spread,
                    noise_sigma: a.noise_sigma,
                    seed: a.data_seed.unwrap_or(seed),
                },
                eval_per_class: a.eval_per_class,
                arch: ArchConfig {
                    d_in: a.d_in,
                    hidden: a.hidden,
                    proj_dim: a.proj_dim,
                    pred_hidden: a.pred_hidden,
                    head_bn: a.head_bn,
                },
                train: TrainConfig {
                    mode: a.mode.into(),
                    learning_rate: a.lr,
                    weight_decay: a.weight_decay,
                    momentum: a.momentum,
                    ema_tau: a.ema_tau,
                    cut_constant: a.cut,
                    epochs: a.epochs,
                    batch_size: a.batch_size,
                    knn_k: a.knn_k,
                    seed,
                },
                latent2d: a.latent2d,
                format: a.format,
            };
            (Job::Train(job), a.common.out)
        }
        Command::BoundCheck {
            trials,
            dim,
            rho_min,
            rho_max,
            phi_min,
            phi_max,
            collinear,
            common,
        } => (
            Job::BoundCheck(BoundCheckConfig {
                trials,
                dim,
                rho_min,
                rho_max,
                phi_min: phi_min.clamp(0.0, PI),
                phi_max: phi_max.clamp(0.0, PI),
                collinear,
                seed: common.seed,
            }),
            common.out,
        ),
        Command::Replay { manifest, out } => {
            let m = read_manifest(&manifest)?;
            let job = Job::from_parts(&m.subcommand, m.config)?;
            let out = out.or_else(|| m.outputs.first().cloned());
            (job, out)
        }
    })
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (job, out) = resolve(cli.command)?;
    job.validate()?;
    if let Job::Train(t) = &job {
        if t.latent2d && out.is_none() {
            return Err(CliError::Usage("--latent2d needs --out".into()));
        }
    }
    let rendered = job.execute()?;
    match &out {
        Some(path) => {
            let mut outputs = vec![path.clone()];
            write_file(path, &rendered.primary)?;
            for (kind, body) in &rendered.extras {
                let p = extra_path(path, kind, job.extension());
                write_file(&p, body)?;
                outputs.push(p);
            }
            write_manifest(&job, path, outputs)?;
        }
        None => {
            std::io::stdout()
                .write_all(rendered.primary.as_bytes())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
        }
    }
    if let Some(v) = &rendered.violation {
        eprintln!("cossim-lab {}: {v}", job.name());
        return Ok(false);
    }
    Ok(true)
}

fn write_manifest(job: &Job, out: &Path, outputs: Vec<PathBuf>) -> Result<(), CliError> {
    let manifest = RunManifest {
        subcommand: job.name().to_string(),
        config: job.config_value()?,
        seed: job.seed(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
    };
    write_file(&manifest_path(out), &output::render_json(&manifest)?)
}

fn exit_code(result: Result<bool, CliError>) -> u8 {
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("cossim-lab: error: {e}");
            2
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(exit_code(run(Cli::parse())))
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;

    fn code(args: &[&str]) -> u8 {
        let argv = std::iter::once("cossim-lab").chain(args.iter().copied());
        match Cli::try_parse_from(argv) {
            Ok(cli) => exit_code(run(cli)),
            Err(e) => e.exit_code() as u8,
        }
    }

    fn json(path: &Path) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
    }

    #[test]
    fn grad_check_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("g.json");
        let o = out.to_str().unwrap();
        assert_eq!(code(&["grad-check", "--seed", "1", "--out", o]), 0);
        let r = json(&out);
        for k in ["worst_cos_sim", "worst_infonce", "worst_strong_cos"] {
            assert!(r[k].as_f64().unwrap() < 1e-6, "{k}");
        }
        assert_eq!(
            code(&["grad-check", "--seed", "1", "--h", "1", "--out", o]),
            1
        );
        assert_eq!(json(&out)["passed"], false);
        assert_eq!(code(&["grad-check", "--seed", "1", "--trials", "0"]), 2);
        assert_eq!(code(&["grad-check", "--bogus"]), 2);
    }

    #[test]
    fn sweep_two_cells_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        for p in [&a, &b] {
            let args = [
                "sweep",
                "--seed",
                "3",
                "--pairs",
                "20",
                "--phi-grid",
                "pi/2,pi-0.1",
                "--rho-grid",
                "1",
            ];
            let mut v = args.to_vec();
            v.extend(["--out", p.to_str().unwrap()]);
            assert_eq!(code(&v), 0);
        }
        let text = fs::read_to_string(&a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "rho,phi,gamma,steps,converged");
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let m = json(&manifest_path(&a));
        assert_eq!(m["subcommand"], "sweep");
        assert_eq!(m["seed"], 3);
        assert_eq!(code(&["sweep", "--seed", "3", "--phi-grid", "pi"]), 2);
        assert_eq!(code(&["sweep", "--seed", "3", "--rho-grid", "1,oops"]), 2);
    }

    #[test]
    fn montecarlo_columns_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("mc.csv");
        let o = out.to_str().unwrap();
        assert_eq!(
            code(&[
                "montecarlo",
                "--seed",
                "5",
                "--samples",
                "20000",
                "--eps",
                "0.5",
                "--out",
                o
            ]),
            0
        );
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "d,n,epsilon,empirical_rate,bound,mean,variance"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "20");
        assert_eq!(row[1], "20000");
        assert_eq!(row[4].parse::<f64>().unwrap(), 0.1);
        assert_eq!(code(&["montecarlo", "--seed", "5", "--eps", "1"]), 2);
        assert_eq!(code(&["montecarlo", "--seed", "5", "--samples", "0"]), 2);
    }

    #[test]
    fn train_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.csv");
        let o = out.to_str().unwrap();
        assert_eq!(
            code(&["train", "--seed", "2", "--epochs", "0", "--out", o]),
            0
        );
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(
            "epoch,mean_norm,knn_acc,opp_halves_rate_pi2,opp_halves_rate_7pi8,mean_loss\n0,"
        ));

        assert_eq!(
            code(&[
                "train",
                "--seed",
                "2",
                "--epochs",
                "1",
                "--latent2d",
                "--out",
                o
            ]),
            2
        );
        assert_eq!(
            code(&[
                "train",
                "--seed",
                "2",
                "--epochs",
                "1",
                "--latent2d",
                "--proj-dim",
                "2"
            ]),
            2
        );
        assert_eq!(
            code(&[
                "train",
                "--seed",
                "2",
                "--epochs",
                "1",
                "--latent2d",
                "--proj-dim",
                "2",
                "--out",
                o
            ]),
            0
        );
        let latent = fs::read_to_string(dir.path().join("t.latent.csv")).unwrap();
        let mut lines = latent.lines();
        assert_eq!(lines.next().unwrap(), "epoch,x1,y1,x2,y2,cos");
        // 4 classes x 32 held-out samples, for epochs 0 and 1.
        assert_eq!(lines.count(), 2 * 128);
        let m = json(&manifest_path(&out));
        assert_eq!(m["outputs"].as_array().unwrap().len(), 2);

        assert_eq!(code(&["train", "--seed", "2", "--lr", "0"]), 2);
        assert_eq!(
            code(&[
                "train",
                "--seed",
                "2",
                "--mode",
                "infonce",
                "--batch-size",
                "2"
            ]),
            2
        );
        assert_eq!(code(&["train", "--seed", "2", "--mode", "sideways"]), 2);
    }

    #[test]
    fn bound_check_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("b.json");
        let o = out.to_str().unwrap();
        assert_eq!(
            code(&[
                "bound-check",
                "--seed",
                "4",
                "--trials",
                "1",
                "--collinear",
                "--out",
                o
            ]),
            0
        );
        assert_eq!(json(&out)["violations"], 0);
        assert_eq!(
            code(&[
                "bound-check",
                "--seed",
                "4",
                "--phi-max",
                "pi/2",
                "--out",
                o
            ]),
            0
        );
        // Over the full angle range the bound is exceeded at obtuse angles.
        assert_eq!(code(&["bound-check", "--seed", "4", "--out", o]), 1);
        let r = json(&out);
        assert!(r["violations"].as_u64().unwrap() > 0);
        assert!(r["smallest_violating_phi"].as_f64().unwrap() > PI / 2.0);
        assert_eq!(code(&["bound-check", "--seed", "4", "--trials", "0"]), 2);
    }

    #[test]
    fn replay_reproduces_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.json");
        let again = dir.path().join("again.json");
        assert_eq!(
            code(&[
                "sweep",
                "--seed",
                "8",
                "--pairs",
                "10",
                "--format",
                "json",
                "--out",
                out.to_str().unwrap()
            ]),
            0
        );
        let manifest = manifest_path(&out);
        assert_eq!(
            code(&[
                "replay",
                manifest.to_str().unwrap(),
                "--out",
                again.to_str().unwrap()
            ]),
            0
        );
        assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
        assert_eq!(
            code(&["replay", dir.path().join("missing.json").to_str().unwrap()]),
            2
        );
    }

    #[test]
    fn seed_precedence() {
        let parsed = |args: &[&str]| match Cli::try_parse_from(args).unwrap().command {
            Command::Sweep { common, .. } => common.seed,
            _ => unreachable!(),
        };
        // Only this test touches the variable; every other test passes --seed.
        std::env::remove_var("COSSIM_LAB_SEED");
        assert_eq!(parsed(&["x", "sweep"]), 42);
        std::env::set_var("COSSIM_LAB_SEED", "9");
        assert_eq!(parsed(&["x", "sweep"]), 9);
        assert_eq!(parsed(&["x", "sweep", "--seed", "11"]), 11);
        std::env::remove_var("COSSIM_LAB_SEED");
    }
}
