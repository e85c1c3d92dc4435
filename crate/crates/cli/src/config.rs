use clap::ValueEnum;
use gbp_calib::distsim::ScenarioConfig;
use gbp_calib::eval::mrclam::MrClamConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// GBP with and without auto-calibration against LM.
    Table1,
    /// Iteration-wise convergence of batch GBP, block GS and block SOR.
    DsolverCompare,
    DropoutSweep,
    OutlierSweep,
    RangeSweep,
    Mrclam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Gbp,
    /// GBP with the extrinsics held at their initial values.
    GbpNoCalib,
    Lm,
    Gs,
    Sor,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Gbp => "gbp",
            SolverKind::GbpNoCalib => "gbp_no_calib",
            SolverKind::Lm => "lm",
            SolverKind::Gs => "gs",
            SolverKind::Sor => "sor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Inter-robot message drop probability.
    Dropout,
    OutlierFrac,
    /// Communication range in metres; `inf` is unlimited.
    CommRange,
}

impl SweepAxis {
    pub fn kind(self) -> ScenarioKind {
        match self {
            SweepAxis::Dropout => ScenarioKind::DropoutSweep,
            SweepAxis::OutlierFrac => ScenarioKind::OutlierSweep,
            SweepAxis::CommRange => ScenarioKind::RangeSweep,
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Dropout => (0..=10).map(|i| i as f64 / 10.0).collect(),
            SweepAxis::OutlierFrac => vec![0.0, 0.1, 0.2, 0.3, 0.4],
            SweepAxis::CommRange => vec![0.0, 4.0, 6.0, 8.0, 10.0, 20.0, f64::INFINITY],
        }
    }

    pub fn apply(self, cfg: &mut ScenarioConfig, value: f64) {
        match self {
            SweepAxis::Dropout => cfg.channel.drop_prob = value,
            SweepAxis::OutlierFrac => cfg.noise.outlier_frac = value,
            SweepAxis::CommRange => cfg.channel.comm_range = value.is_finite().then_some(value),
        }
    }

    fn check(self, value: f64) -> bool {
        match self {
            SweepAxis::Dropout | SweepAxis::OutlierFrac => (0.0..=1.0).contains(&value),
            SweepAxis::CommRange => value >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// LM iterations, GS/SOR sweeps and batch GBP iterations in solver comparisons.
    pub max_iterations: usize,
    pub lm_lambda0: f64,
    pub lm_tol: f64,
    pub sor_omega: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            max_iterations: 100,
            lm_lambda0: 1e-4,
            lm_tol: 1e-8,
            sor_omega: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrClamSection {
    /// Dataset directories, resolved against the config file's directory.
    pub datasets: Vec<PathBuf>,
    pub subsample_dt: f64,
    pub obs_tolerance: f64,
    pub estimator: MrClamConfig,
}

impl Default for MrClamSection {
    fn default() -> Self {
        MrClamSection {
            datasets: Vec::new(),
            subsample_dt: 1.0,
            obs_tolerance: 0.1,
            estimator: MrClamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Solvers to run; each kind has its own default set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solvers: Option<Vec<SolverKind>>,
    #[serde(default)]
    pub baselines: BaselineConfig,
    /// Shared by every run; `seed` is replaced by each entry of `seeds`.
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub mrclam: MrClamSection,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(kind: ScenarioKind) -> Self {
        ExperimentConfig {
            kind,
            seeds: default_seeds(),
            output: default_output(),
            solvers: None,
            baselines: BaselineConfig::default(),
            scenario: ScenarioConfig::default(),
            sweep: None,
            mrclam: MrClamSection::default(),
        }
    }

    /// Parses and validates; relative dataset paths are taken from `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(base) = base {
            for d in &mut cfg.mrclam.datasets {
                if d.is_relative() {
                    *d = base.join(&*d);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn solvers(&self) -> Vec<SolverKind> {
        self.solvers.clone().unwrap_or_else(|| match self.kind {
            ScenarioKind::Table1 => vec![SolverKind::Gbp, SolverKind::GbpNoCalib, SolverKind::Lm],
            ScenarioKind::DsolverCompare => vec![SolverKind::Gbp, SolverKind::Gs, SolverKind::Sor],
            _ => vec![SolverKind::Gbp],
        })
    }

    /// Axis and values of a sweep kind; the `[sweep]` section overrides the defaults.
    pub fn sweep_plan(&self) -> Option<(SweepAxis, Vec<f64>)> {
        let axis = match self.kind {
            ScenarioKind::DropoutSweep => SweepAxis::Dropout,
            ScenarioKind::OutlierSweep => SweepAxis::OutlierFrac,
            ScenarioKind::RangeSweep => SweepAxis::CommRange,
            _ => return None,
        };
        let values = match &self.sweep {
            Some(s) if !s.values.is_empty() => s.values.clone(),
            _ => axis.default_values(),
        };
        Some((axis, values))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: String| Err(CliError::Config(format!("{key}: {why}")));
        if self.seeds.is_empty() {
            return bad("seeds", "must not be empty".into());
        }
        if let Some(s) = &self.solvers {
            if s.is_empty() {
                return bad("solvers", "must not be empty".into());
            }
        }
        let sc = &self.scenario;
        if sc.n_robots < 2 {
            return bad("scenario.n_robots", format!("needs at least 2 robots, got {}", sc.n_robots));
        }
        if sc.iterations_per_motion == 0 {
            return bad("scenario.iterations_per_motion", "must be positive".into());
        }
        if let Err(field) = sc.noise.validate() {
            return bad(&format!("scenario.noise.{field}"), "must be a finite non-negative value (a fraction for outlier_frac)".into());
        }
        if !(0.0..=1.0).contains(&sc.channel.drop_prob) {
            return bad("scenario.channel.drop_prob", format!("{} is not a probability", sc.channel.drop_prob));
        }
        if !(0.0..=1.0).contains(&sc.solver.internal_drop) {
            return bad("scenario.solver.internal_drop", format!("{} is not a probability", sc.solver.internal_drop));
        }
        if matches!(sc.channel.comm_range, Some(r) if r.is_nan() || r < 0.0) {
            return bad("scenario.channel.comm_range", "must be non-negative".into());
        }
        let w = &sc.world;
        if !(w.fov_deg > 0.0 && w.fov_deg <= 180.0) {
            return bad("scenario.world.fov_deg", format!("{} is outside (0, 180]", w.fov_deg));
        }
        let b = &self.baselines;
        if !(b.sor_omega > 0.0 && b.sor_omega <= 2.0) {
            return bad("baselines.sor_omega", format!("{} is outside (0, 2]", b.sor_omega));
        }
        if b.max_iterations == 0 {
            return bad("baselines.max_iterations", "must be positive".into());
        }
        if let Some((axis, values)) = self.sweep_plan() {
            if let Some(s) = &self.sweep {
                if s.axis != axis {
                    return bad("sweep.axis", format!("{:?} does not match kind {:?}", s.axis, self.kind));
                }
            }
            if let Some(v) = values.iter().find(|v| !axis.check(**v)) {
                return bad("sweep.values", format!("{v} is out of range for {axis:?}"));
            }
        }
        if self.kind == ScenarioKind::Mrclam {
            let m = &self.mrclam;
            if m.datasets.is_empty() {
                return bad("mrclam.datasets", "must list at least one directory".into());
            }
            if let Some(d) = m.datasets.iter().find(|d| !d.is_dir()) {
                return bad("mrclam.datasets", format!("{} does not exist", d.display()));
            }
            if !(m.subsample_dt > 0.0) {
                return bad("mrclam.subsample_dt", "must be positive".into());
            }
            if m.estimator.window < 2 {
                return bad("mrclam.estimator.window", "must be at least 2".into());
            }
        }
        Ok(())
    }
}
