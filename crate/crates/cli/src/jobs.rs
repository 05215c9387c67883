//! Fully resolved subcommand configurations and their execution.
//!
//! A [`Job`] is what a manifest records; replaying it renders the same bytes.

use serde::{Deserialize, Serialize};

use cossim_core::dynamics::{
    check_step_bound, sweep_convergence, BoundCheckConfig, SweepCell, SweepConfig,
};
use cossim_core::losses::{check_gradients, GradCheckConfig};
use cossim_core::rng::stream_rng;
use cossim_core::theory::{monte_carlo_cos_stats, TailCheck};
use cossim_core::toynet::{
    export_latent_2d, make_synthetic_dataset, train_with_observer, ArchConfig, DatasetConfig,
    LatentSegment, MetricsRow, SslModel, TrainConfig,
};
use cossim_core::Error;

use crate::error::CliError;
use crate::output::{float, render, render_json, Format, Rendered, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepJob {
    #[serde(flatten)]
    pub config: SweepConfig,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloJob {
    pub dim: usize,
    pub samples: u64,
    pub epsilons: Vec<f64>,
    pub seed: u64,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub dataset: DatasetConfig,
    pub eval_per_class: usize,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub latent2d: bool,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", content = "config", rename_all = "kebab-case")]
pub enum Job {
    GradCheck(GradCheckConfig),
    Sweep(SweepJob),
    Montecarlo(MonteCarloJob),
    Train(TrainJob),
    BoundCheck(BoundCheckConfig),
}

#[derive(Serialize)]
struct SweepRow {
    rho: f64,
    phi: f64,
    gamma: f64,
    steps: u64,
    converged: bool,
}

impl Table for SweepRow {
    const HEADER: &'static [&'static str] = &["rho", "phi", "gamma", "steps", "converged"];
    fn cells(&self) -> Vec<String> {
        vec![
            float(self.rho),
            float(self.phi),
            float(self.gamma),
            self.steps.to_string(),
            self.converged.to_string(),
        ]
    }
}

#[derive(Serialize)]
struct TailRow {
    d: usize,
    n: u64,
    epsilon: f64,
    empirical_rate: f64,
    bound: f64,
    mean: f64,
    variance: f64,
}

impl Table for TailRow {
    const HEADER: &'static [&'static str] = &[
        "d",
        "n",
        "epsilon",
        "empirical_rate",
        "bound",
        "mean",
        "variance",
    ];
    fn cells(&self) -> Vec<String> {
        vec![
            self.d.to_string(),
            self.n.to_string(),
            float(self.epsilon),
            float(self.empirical_rate),
            float(self.bound),
            float(self.mean),
            float(self.variance),
        ]
    }
}

impl From<&TailCheck> for TailRow {
    fn from(t: &TailCheck) -> Self {
        Self {
            d: t.d,
            n: t.n_samples,
            epsilon: t.epsilon,
            empirical_rate: t.empirical_rate,
            bound: t.bound,
            mean: t.mean,
            variance: t.variance,
        }
    }
}

#[derive(Serialize)]
struct MetricsOut {
    epoch: usize,
    mean_norm: f64,
    knn_acc: f64,
    opp_halves_rate_pi2: f64,
    opp_halves_rate_7pi8: f64,
    mean_loss: f64,
}

impl Table for MetricsOut {
    const HEADER: &'static [&'static str] = &[
        "epoch",
        "mean_norm",
        "knn_acc",
        "opp_halves_rate_pi2",
        "opp_halves_rate_7pi8",
        "mean_loss",
    ];
    fn cells(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            float(self.mean_norm),
            float(self.knn_acc),
            float(self.opp_halves_rate_pi2),
            float(self.opp_halves_rate_7pi8),
            float(self.mean_loss),
        ]
    }
}

impl From<&MetricsRow> for MetricsOut {
    fn from(r: &MetricsRow) -> Self {
        Self {
            epoch: r.epoch,
            mean_norm: r.mean_embedding_norm,
            knn_acc: r.knn_accuracy,
            opp_halves_rate_pi2: r.opposite_halves_rate,
            opp_halves_rate_7pi8: r.opposite_halves_rate_strict,
            mean_loss: r.mean_loss,
        }
    }
}

impl Table for LatentSegment {
    const HEADER: &'static [&'static str] = &["epoch", "x1", "y1", "x2", "y2", "cos"];
    fn cells(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            float(self.x1),
            float(self.y1),
            float(self.x2),
            float(self.y2),
            float(self.cos),
        ]
    }
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::GradCheck(_) => "grad-check",
            Job::Sweep(_) => "sweep",
            Job::Montecarlo(_) => "montecarlo",
            Job::Train(_) => "train",
            Job::BoundCheck(_) => "bound-check",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Job::GradCheck(c) => c.seed,
            Job::Sweep(j) => j.config.seed,
            Job::Montecarlo(j) => j.seed,
            Job::Train(j) => j.train.seed,
            Job::BoundCheck(c) => c.seed,
        }
    }

    /// Extension of the primary output.
    pub fn extension(&self) -> &'static str {
        match self {
            Job::Sweep(j) => j.format.extension(),
            Job::Montecarlo(j) => j.format.extension(),
            Job::Train(j) => j.format.extension(),
            Job::GradCheck(_) | Job::BoundCheck(_) => "json",
        }
    }

    pub fn config_value(&self) -> Result<serde_json::Value, CliError> {
        let mut v = serde_json::to_value(self)?;
        Ok(v["config"].take())
    }

    pub fn from_parts(subcommand: &str, config: serde_json::Value) -> Result<Self, CliError> {
        Ok(serde_json::from_value(serde_json::json!({
            "subcommand": subcommand,
            "config": config,
        }))?)
    }

    /// Checks everything that can be checked before doing any work.
    pub fn validate(&self) -> Result<(), CliError> {
        match self {
            Job::GradCheck(c) => c.validate()?,
            Job::Sweep(j) => j.config.validate()?,
            Job::Montecarlo(j) => {
                if j.samples == 0 {
                    return Err(Error::InvalidConfig("samples must be >= 1".into()).into());
                }
                if j.epsilons.is_empty() {
                    return Err(Error::InvalidConfig("need at least one epsilon".into()).into());
                }
                for &e in &j.epsilons {
                    cossim_core::theory::chebyshev_bound(j.dim, e)?;
                }
            }
            Job::Train(j) => {
                j.train.validate()?;
                if j.arch.d_in != j.dataset.d_in {
                    return Err(Error::InvalidConfig(format!(
                        "encoder input dim {} does not match data dim {}",
                        j.arch.d_in, j.dataset.d_in
                    ))
                    .into());
                }
                if j.latent2d && j.arch.proj_dim != 2 {
                    return Err(Error::WrongOutputDim(j.arch.proj_dim).into());
                }
            }
            Job::BoundCheck(c) => c.validate()?,
        }
        Ok(())
    }

    pub fn execute(&self) -> Result<Rendered, CliError> {
        self.validate()?;
        match self {
            Job::GradCheck(c) => {
                let report = check_gradients(c)?;
                let violation = (!report.passed).then(|| {
                    format!(
                        "gradient check failed: worst relative errors cos_sim {:e}, infonce {:e}, strong_cos {:e} (tolerance {:e})",
                        report.worst_cos_sim, report.worst_infonce, report.worst_strong_cos, report.tolerance
                    )
                });
                Ok(Rendered {
                    primary: render_json(&report)?,
                    extras: vec![],
                    violation,
                })
            }
            Job::Sweep(j) => {
                let cells = sweep_convergence(&j.config)?;
                let rows: Vec<SweepRow> = cells
                    .iter()
                    .map(|c: &SweepCell| SweepRow {
                        rho: c.rho,
                        phi: c.phi,
                        gamma: j.config.gamma,
                        steps: c.steps,
                        converged: c.converged,
                    })
                    .collect();
                Ok(Rendered {
                    primary: render(&rows, j.format)?,
                    ..Rendered::default()
                })
            }
            Job::Montecarlo(j) => {
                let checks = monte_carlo_cos_stats(j.dim, j.samples, &j.epsilons, j.seed)?;
                let bad: Vec<String> = checks
                    .iter()
                    .filter(|c| !c.within_bound())
                    .map(|c| {
                        format!(
                            "epsilon {}: rate {} > bound {}",
                            c.epsilon, c.empirical_rate, c.bound
                        )
                    })
                    .collect();
                let rows: Vec<TailRow> = checks.iter().map(TailRow::from).collect();
                Ok(Rendered {
                    primary: render(&rows, j.format)?,
                    extras: vec![],
                    violation: (!bad.is_empty())
                        .then(|| format!("tail bound violated: {}", bad.join("; "))),
                })
            }
            Job::Train(j) => {
                let data = make_synthetic_dataset(&j.dataset)?;
                let (train_set, eval_set) = data.split(j.eval_per_class)?;
                let mut model =
                    SslModel::new(&j.arch, j.train.mode, j.train.cut_constant, j.train.seed)?;
                let mut segments = Vec::new();
                let rows = train_with_observer(
                    &mut model,
                    &train_set,
                    &eval_set,
                    &j.train,
                    |epoch, m| {
                        if j.latent2d {
                            let mut rng = stream_rng(j.train.seed, 2, epoch as u64);
                            segments.extend(export_latent_2d(m, &eval_set, epoch, &mut rng)?);
                        }
                        Ok(())
                    },
                )?;
                let rows: Vec<MetricsOut> = rows.iter().map(MetricsOut::from).collect();
                let extras = if j.latent2d {
                    vec![("latent", render(&segments, j.format)?)]
                } else {
                    vec![]
                };
                Ok(Rendered {
                    primary: render(&rows, j.format)?,
                    extras,
                    violation: None,
                })
            }
            Job::BoundCheck(c) => {
                let report = check_step_bound(c)?;
                let violation = (report.violations > 0).then(|| {
                    let first = report.first_violation.expect("recorded with the first violation");
                    format!(
                        "{} of {} steps exceeded the bound; first at rho {}, phi {}, gamma {}: dcos {} vs bound {}",
                        report.violations, report.trials, first.rho, first.phi, first.gamma, first.dcos, first.bound
                    )
                });
                Ok(Rendered {
                    primary: render_json(&report)?,
                    extras: vec![],
                    violation,
                })
            }
        }
    }
}
