use crate::config::{ExperimentConfig, ScenarioKind, SolverKind};
use crate::CliError;
use gbp_calib::baselines::{solve_block_gs, solve_lm, BlockOptions, Estimates, LmOptions, SolverReport};
use gbp_calib::distsim::{centralized_problem, run_scenario, scenario_metrics, ScenarioConfig, Schedule};
use gbp_calib::eval::mrclam::{load_mrclam_with, run_mrclam, CalibNoise, LoadOptions, MrClamConfig};
use gbp_calib::eval::{MetricsRecord, PoseMetrics};

/// One metrics row tagged with the solver variant and, for sweeps and MR.CLAM,
/// the swept value or dataset number.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub variant: String,
    pub value: Option<f64>,
    pub record: MetricsRecord,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    /// Every recorded iteration of every run.
    pub rows: Vec<Row>,
    /// Last row of each run.
    pub finals: Vec<Row>,
}

impl ExperimentOutput {
    fn push_run(&mut self, variant: &str, value: Option<f64>, records: Vec<MetricsRecord>) {
        let tagged: Vec<Row> = records
            .into_iter()
            .map(|record| Row {
                variant: variant.to_string(),
                value,
                record,
            })
            .collect();
        if let Some(last) = tagged.last() {
            self.finals.push(last.clone());
        }
        self.rows.extend(tagged);
    }

    pub fn finals_of<'a>(&'a self, variant: &'a str, value: Option<f64>) -> impl Iterator<Item = &'a MetricsRecord> + 'a {
        self.finals
            .iter()
            .filter(move |r| r.variant == variant && same_value(r.value, value))
            .map(|r| &r.record)
    }
}

fn same_value(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y || (x.is_nan() && y.is_nan()),
        (None, None) => true,
        _ => false,
    }
}

fn runtime<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{what}: {e}"))
}

fn record(seed: u64, motion: usize, iteration: usize, m: &PoseMetrics, energy: f64) -> MetricsRecord {
    MetricsRecord {
        seed,
        motion: motion as u32,
        iteration: iteration as u32,
        ate_twb_m: m.ate_twb_m,
        are_twb_deg: m.are_twb_deg,
        ate_tbs_m: m.ate_tbs_m,
        are_tbs_deg: m.are_tbs_deg,
        ate_tbm_m: m.ate_tbm_m,
        energy,
        msgs_sent: 0,
        msgs_dropped: 0,
    }
}

/// Runs one solver on one scenario instance and returns its per-iteration records.
pub fn run_solver(
    solver: SolverKind,
    scenario: &ScenarioConfig,
    cfg: &ExperimentConfig,
) -> Result<Vec<MetricsRecord>, CliError> {
    let b = &cfg.baselines;
    match solver {
        SolverKind::Gbp | SolverKind::GbpNoCalib => {
            let mut sc = *scenario;
            sc.solver.auto_calib = solver == SolverKind::Gbp;
            if cfg.kind == ScenarioKind::DsolverCompare {
                sc.schedule = Schedule::Batch;
                sc.iterations_per_motion = b.max_iterations;
            }
            let out = run_scenario(&sc).map_err(runtime("gbp"))?;
            Ok(out.records)
        }
        SolverKind::Lm | SolverKind::Gs | SolverKind::Sor => {
            let (world, graph) = centralized_problem(scenario).map_err(runtime("building the problem"))?;
            let n = scenario.n_motions;
            let metric = |est: &Estimates| {
                scenario_metrics(&world, n, &|k| est.get(k).cloned()).unwrap_or_default()
            };
            let report: SolverReport = match solver {
                SolverKind::Lm => {
                    let opts = LmOptions {
                        max_iters: b.max_iterations,
                        lambda0: b.lm_lambda0,
                        tol: b.lm_tol,
                    };
                    solve_lm(&graph, &opts, Some(&metric)).map_err(runtime("lm"))?.report
                }
                _ => {
                    let opts = BlockOptions {
                        max_sweeps: b.max_iterations,
                        omega: if solver == SolverKind::Sor { b.sor_omega } else { 1.0 },
                        tol: 1e-9,
                    };
                    solve_block_gs(&graph, &opts, Some(&metric)).map_err(runtime(solver.name()))?.report
                }
            };
            Ok(report
                .metrics
                .iter()
                .zip(&report.energy)
                .enumerate()
                .map(|(i, (m, &e))| record(scenario.seed, n, i + 1, m, e))
                .collect())
        }
    }
}

/// Number of leading records before the T_WB ATE first drops to `threshold` or below
/// (1-based); `None` if it never does.
pub fn iterations_to_reach(records: &[MetricsRecord], threshold: f64) -> Option<usize> {
    records.iter().position(|r| r.ate_twb_m <= threshold).map(|i| i + 1)
}

/// Runs every seed, solver and swept value of the experiment.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentOutput, CliError> {
    cfg.validate()?;
    if cfg.kind == ScenarioKind::Mrclam {
        return run_mrclam_experiment(cfg, progress);
    }
    let mut out = ExperimentOutput::default();
    let plan: Vec<Option<f64>> = match cfg.sweep_plan() {
        Some((_, values)) => values.into_iter().map(Some).collect(),
        None => vec![None],
    };
    for value in plan {
        for &seed in &cfg.seeds {
            let mut sc = cfg.scenario;
            sc.seed = seed;
            if let (Some(v), Some((axis, _))) = (value, cfg.sweep_plan()) {
                axis.apply(&mut sc, v);
            }
            for solver in cfg.solvers() {
                let records = run_solver(solver, &sc, cfg)?;
                if let Some(last) = records.last() {
                    progress(&format!(
                        "{} seed {seed}{}: ate {:.4} m",
                        solver.name(),
                        value.map(|v| format!(" value {v}")).unwrap_or_default(),
                        last.ate_twb_m
                    ));
                }
                out.push_run(solver.name(), value, records);
            }
        }
    }
    Ok(out)
}

/// The four Table II cells: with or without injected calibration noise, with
/// auto-calibration on or off.
pub fn mrclam_variants() -> [(&'static str, Option<CalibNoise>, bool); 4] {
    [
        ("fixed", None, false),
        ("auto", None, true),
        ("noisy_fixed", Some(CalibNoise::default()), false),
        ("noisy_auto", Some(CalibNoise::default()), true),
    ]
}

fn run_mrclam_experiment(
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentOutput, CliError> {
    let m = &cfg.mrclam;
    let mut out = ExperimentOutput::default();
    for (i, dir) in m.datasets.iter().enumerate() {
        let data = load_mrclam_with(
            dir,
            &LoadOptions {
                subsample_dt: m.subsample_dt,
                obs_tolerance: m.obs_tolerance,
            },
        )
        .map_err(runtime("loading MR.CLAM"))?;
        let value = Some(i as f64 + 1.0);
        for (name, noise, auto_calib) in mrclam_variants() {
            // without injected noise the seed has no effect
            let seeds: &[u64] = if noise.is_some() { &cfg.seeds } else { &cfg.seeds[..1] };
            for &seed in seeds {
                let run = MrClamConfig {
                    calib_noise: noise.map(|n| m.estimator.calib_noise.unwrap_or(n)),
                    auto_calib,
                    seed,
                    ..m.estimator
                };
                let o = run_mrclam(&data, &run).map_err(runtime("MR.CLAM run"))?;
                progress(&format!("{} dataset {} seed {seed}: ate {:.4} m", name, i + 1, o.record.ate_twb_m));
                out.push_run(name, value, vec![o.record]);
            }
        }
    }
    Ok(out)
}
