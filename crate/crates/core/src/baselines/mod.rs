//! Reference solvers over the same factor graph: Levenberg-Marquardt on the
//! whole problem, and block Gauss-Seidel / SOR with one block per robot.

use crate::eval::PoseMetrics;
use crate::factors::{energy, linearize, FactorModel};
use crate::graph::{Graph, RobotId, VarKey};
use crate::manifold::ManifoldPoint;
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("normal equations are not positive definite at iteration {iteration} (damping {damping:e})")]
    Singular { iteration: usize, damping: f64 },
    #[error("factor {0} cannot be evaluated at the initial estimates")]
    Evaluation(String),
    #[error("omega must lie in (0, 2], got {0}")]
    InvalidOmega(f64),
}

pub type Estimates = BTreeMap<VarKey, ManifoldPoint>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub initial_energy: f64,
    /// Energy after every iteration.
    pub energy: Vec<f64>,
    /// Metrics after every iteration, when a metric function was supplied.
    pub metrics: Vec<PoseMetrics>,
    pub wall_time_s: f64,
    pub converged: bool,
    /// Blocks whose system was singular and left unchanged, summed over sweeps.
    pub skipped_blocks: usize,
}

impl SolverReport {
    pub fn iterations(&self) -> usize {
        self.energy.len()
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub report: SolverReport,
    pub estimates: Estimates,
}

struct ProblemFactor {
    model: FactorModel,
    info: DMatrix<f64>,
    vars: Vec<usize>,
}

/// Variable prior, held in the tangent space at the initial estimate.
struct TangentPrior {
    anchor: ManifoldPoint,
    lambda: DMatrix<f64>,
    mean: DVector<f64>,
}

/// Flattened copy of a graph's variables and factors. Fixed and frozen variables
/// are constants; robust kernels and regularisers are not part of the objective.
struct Problem {
    keys: Vec<VarKey>,
    owners: Vec<RobotId>,
    x: Vec<ManifoldPoint>,
    free: Vec<bool>,
    priors: Vec<Option<TangentPrior>>,
    factors: Vec<ProblemFactor>,
}

/// Block-sparse normal equations `H δ = g` over the free variables.
struct Normal {
    diag: Vec<DMatrix<f64>>,
    off: BTreeMap<(usize, usize), DMatrix<f64>>,
    g: Vec<DVector<f64>>,
}

impl Problem {
    fn from_graph(graph: &Graph) -> Self {
        let mut index = BTreeMap::new();
        let mut keys = Vec::new();
        let mut owners = Vec::new();
        let mut x = Vec::new();
        let mut free = Vec::new();
        let mut priors = Vec::new();
        for v in graph.variables() {
            priors.push(v.prior.as_ref().map(|p| TangentPrior {
                anchor: v.estimate.clone(),
                lambda: p.lambda.clone(),
                mean: p
                    .lambda
                    .clone()
                    .pseudo_inverse(1e-12)
                    .map(|c| c * &p.eta)
                    .unwrap_or_else(|_| DVector::zeros(p.eta.len())),
            }));
            index.insert(v.key, keys.len());
            keys.push(v.key);
            owners.push(v.owner);
            x.push(v.estimate.clone());
            free.push(!v.fixed && !v.frozen);
        }
        let factors = graph
            .factors()
            .iter()
            .map(|f| ProblemFactor {
                model: match &f.model {
                    FactorModel::RangeBearing { measured, .. } => FactorModel::RangeBearing {
                        measured: *measured,
                        dcs: None,
                    },
                    m => m.clone(),
                },
                info: f.noise_lambda.clone(),
                vars: f
                    .adjacency()
                    .map(|k| *index.get(&k).expect("baselines need the whole graph"))
                    .collect(),
            })
            .collect();
        Problem {
            keys,
            owners,
            x,
            free,
            priors,
            factors,
        }
    }

    /// Offset of `x` from the prior's mean, in the prior's tangent space.
    fn prior_residual(p: &TangentPrior, x: &ManifoldPoint) -> DVector<f64> {
        let d = x.ominus(&p.anchor).map(|t| t.into_inner()).unwrap_or_else(|_| DVector::zeros(p.mean.len()));
        d - &p.mean
    }

    fn points<'a>(&'a self, x: &'a [ManifoldPoint], f: &ProblemFactor) -> Vec<&'a ManifoldPoint> {
        f.vars.iter().map(|&i| &x[i]).collect()
    }

    fn energy(&self, x: &[ManifoldPoint]) -> Result<f64, SolverError> {
        let mut e = 0.0;
        for f in &self.factors {
            let r = f
                .model
                .residual(&self.points(x, f))
                .map_err(|err| SolverError::Evaluation(err.to_string()))?;
            e += energy(&r, &f.info);
        }
        for (p, xi) in self.priors.iter().zip(x) {
            if let Some(p) = p {
                e += energy(&Self::prior_residual(p, xi), &p.lambda);
            }
        }
        Ok(e)
    }

    fn normal(&self, x: &[ManifoldPoint]) -> Result<Normal, SolverError> {
        let mut diag: Vec<DMatrix<f64>> = x
            .iter()
            .map(|p| DMatrix::zeros(p.tangent_dim(), p.tangent_dim()))
            .collect();
        let mut g: Vec<DVector<f64>> = x.iter().map(|p| DVector::zeros(p.tangent_dim())).collect();
        let mut off: BTreeMap<(usize, usize), DMatrix<f64>> = BTreeMap::new();
        for f in &self.factors {
            let active: Vec<bool> = f.vars.iter().map(|&i| self.free[i]).collect();
            if !active.iter().any(|&a| a) {
                continue;
            }
            let lin = linearize(&f.model, &f.info, &self.points(x, f), &active, None)
                .map_err(|err| SolverError::Evaluation(err.to_string()))?;
            let pot = &lin.potential;
            for (a, ba) in lin.blocks.iter().enumerate() {
                let Some((oa, da)) = *ba else { continue };
                let va = f.vars[a];
                g[va] += pot.eta.rows(oa, da);
                for (b, bb) in lin.blocks.iter().enumerate() {
                    let Some((ob, db)) = *bb else { continue };
                    let vb = f.vars[b];
                    let blk = pot.lambda.view((oa, ob), (da, db));
                    if va == vb {
                        diag[va] += blk;
                    } else if va > vb {
                        *off.entry((va, vb)).or_insert_with(|| DMatrix::zeros(da, db)) += blk;
                    }
                }
            }
        }
        for (i, p) in self.priors.iter().enumerate() {
            if let (Some(p), true) = (p, self.free[i]) {
                let r = Self::prior_residual(p, &x[i]);
                g[i] -= &p.lambda * r;
                diag[i] += &p.lambda;
            }
        }
        Ok(Normal { diag, off, g })
    }

    fn retract(&self, x: &[ManifoldPoint], delta: &[Option<DVector<f64>>]) -> Vec<ManifoldPoint> {
        x.iter()
            .zip(delta)
            .map(|(p, d)| match d {
                Some(d) => p.oplus(d.as_slice()).unwrap_or_else(|_| p.clone()),
                None => p.clone(),
            })
            .collect()
    }

    fn estimates(&self, x: &[ManifoldPoint]) -> Estimates {
        self.keys.iter().copied().zip(x.iter().cloned()).collect()
    }
}

/// Solves the sparse SPD system restricted to `vars` (damped by `λ·diag`), returning
/// one tangent step per variable in `vars`. Off-diagonal blocks leaving the set are ignored.
fn solve_subsystem(
    n: &Normal,
    vars: &[usize],
    rhs: &[DVector<f64>],
    damping: f64,
) -> Option<Vec<DVector<f64>>> {
    let mut offset = BTreeMap::new();
    let mut dim = 0usize;
    for &v in vars {
        offset.insert(v, dim);
        dim += n.diag[v].nrows();
    }
    if dim == 0 {
        return Some(Vec::new());
    }
    let mut trip = Vec::new();
    for &v in vars {
        let o = offset[&v];
        let d = &n.diag[v];
        for c in 0..d.ncols() {
            for r in c..d.nrows() {
                let mut val = d[(r, c)];
                if r == c {
                    val += damping * val.abs();
                }
                if val != 0.0 || r == c {
                    trip.push(Triplet::new(o + r, o + c, val));
                }
            }
        }
    }
    for (&(a, b), blk) in &n.off {
        let (Some(&oa), Some(&ob)) = (offset.get(&a), offset.get(&b)) else {
            continue;
        };
        // a > b in the global order; keep the lower triangle of the local system
        let (row0, col0, m) = if oa > ob { (oa, ob, blk.clone()) } else { (ob, oa, blk.transpose()) };
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != 0.0 {
                    trip.push(Triplet::new(row0 + r, col0 + c, m[(r, c)]));
                }
            }
        }
    }
    let h = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &trip).ok()?;
    let llt = h.sp_cholesky(Side::Lower).ok()?;
    let mut b = Mat::<f64>::zeros(dim, 1);
    for (k, &v) in vars.iter().enumerate() {
        let o = offset[&v];
        for i in 0..rhs[k].len() {
            b[(o + i, 0)] = rhs[k][i];
        }
    }
    llt.solve_in_place(b.as_mut());
    let out: Vec<DVector<f64>> = vars
        .iter()
        .map(|v| {
            let o = offset[v];
            DVector::from_fn(n.diag[*v].nrows(), |i, _| b[(o + i, 0)])
        })
        .collect();
    out.iter()
        .all(|d| d.iter().all(|x| x.is_finite()))
        .then_some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Initial Marquardt damping, relative to the diagonal of the normal matrix.
    pub lambda0: f64,
    /// Stop when the relative energy decrease of an accepted step falls below this.
    pub tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iters: 100,
            lambda0: 1e-4,
            tol: 1e-8,
        }
    }
}

/// Levenberg-Marquardt over the stacked tangent space of all free variables.
pub fn solve_lm(
    graph: &Graph,
    opts: &LmOptions,
    metric: Option<&dyn Fn(&Estimates) -> PoseMetrics>,
) -> Result<Solution, SolverError> {
    let start = Instant::now();
    let p = Problem::from_graph(graph);
    let free: Vec<usize> = (0..p.x.len()).filter(|&i| p.free[i]).collect();
    let mut x = p.x.clone();
    let mut e = p.energy(&x)?;
    let mut report = SolverReport {
        initial_energy: e,
        ..Default::default()
    };
    let mut lambda = opts.lambda0;
    for iteration in 0..opts.max_iters {
        let n = p.normal(&x)?;
        let rhs: Vec<DVector<f64>> = free.iter().map(|&v| n.g[v].clone()).collect();
        let mut accepted = None;
        for _ in 0..20 {
            let Some(step) = solve_subsystem(&n, &free, &rhs, lambda) else {
                if lambda == 0.0 {
                    lambda = 1e-6;
                    continue;
                }
                return Err(SolverError::Singular {
                    iteration,
                    damping: lambda,
                });
            };
            let mut delta = vec![None; x.len()];
            for (k, &v) in free.iter().enumerate() {
                delta[v] = Some(step[k].clone());
            }
            let cand = p.retract(&x, &delta);
            let ec = p.energy(&cand).unwrap_or(f64::INFINITY);
            if ec <= e {
                let max_step = step.iter().map(|d| d.amax()).fold(0.0, f64::max);
                accepted = Some((cand, ec, max_step));
                lambda /= 10.0;
                break;
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
        }
        let Some((cand, ec, max_step)) = accepted else {
            // no damping level lowers the energy: at a minimum to working precision
            report.converged = true;
            break;
        };
        let decrease = (e - ec) / e.max(f64::MIN_POSITIVE);
        x = cand;
        e = ec;
        report.energy.push(e);
        if let Some(m) = metric {
            report.metrics.push(m(&p.estimates(&x)));
        }
        if decrease < opts.tol || max_step < opts.tol || e < 1e-14 {
            report.converged = true;
            break;
        }
    }
    if report.energy.is_empty() {
        report.energy.push(e);
        if let Some(m) = metric {
            report.metrics.push(m(&p.estimates(&x)));
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(Solution {
        estimates: p.estimates(&x),
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    pub max_sweeps: usize,
    /// Relaxation factor; 1 is Gauss-Seidel.
    pub omega: f64,
    /// Converged when no block moves by more than this in a sweep.
    pub tol: f64,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            max_sweeps: 100,
            omega: 1.0,
            tol: 1e-9,
        }
    }
}

/// Block Gauss-Seidel / SOR with one block per variable owner, visited in ascending
/// owner order. The problem is relinearised at the start of every sweep.
pub fn solve_block_gs(
    graph: &Graph,
    opts: &BlockOptions,
    metric: Option<&dyn Fn(&Estimates) -> PoseMetrics>,
) -> Result<Solution, SolverError> {
    if !(opts.omega > 0.0 && opts.omega <= 2.0) {
        return Err(SolverError::InvalidOmega(opts.omega));
    }
    let start = Instant::now();
    let p = Problem::from_graph(graph);
    let mut blocks: BTreeMap<RobotId, Vec<usize>> = BTreeMap::new();
    for i in (0..p.x.len()).filter(|&i| p.free[i]) {
        blocks.entry(p.owners[i]).or_default().push(i);
    }
    let mut x = p.x.clone();
    let mut report = SolverReport {
        initial_energy: p.energy(&x)?,
        ..Default::default()
    };
    for _ in 0..opts.max_sweeps {
        let n = p.normal(&x)?;
        let mut delta: Vec<Option<DVector<f64>>> = vec![None; x.len()];
        let mut max_step: f64 = 0.0;
        for vars in blocks.values() {
            // g_b - Σ_{c ∉ b} H_bc δ_c with the steps already taken this sweep
            let mut rhs: Vec<DVector<f64>> = vars.iter().map(|&v| n.g[v].clone()).collect();
            let local: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(k, &v)| (v, k)).collect();
            for (&(a, b), blk) in &n.off {
                match (local.get(&a), local.get(&b)) {
                    (Some(&ka), None) => {
                        if let Some(d) = &delta[b] {
                            rhs[ka] -= blk * d;
                        }
                    }
                    (None, Some(&kb)) => {
                        if let Some(d) = &delta[a] {
                            rhs[kb] -= blk.transpose() * d;
                        }
                    }
                    _ => {}
                }
            }
            let Some(step) = solve_subsystem(&n, vars, &rhs, 0.0) else {
                report.skipped_blocks += 1;
                continue;
            };
            for (k, &v) in vars.iter().enumerate() {
                let d = &step[k] * opts.omega;
                max_step = max_step.max(d.amax());
                delta[v] = Some(d);
            }
        }
        x = p.retract(&x, &delta);
        report.energy.push(p.energy(&x)?);
        if let Some(m) = metric {
            report.metrics.push(m(&p.estimates(&x)));
        }
        if max_step < opts.tol {
            report.converged = true;
            break;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(Solution {
        estimates: p.estimates(&x),
        report,
    })
}

/// Block successive over-relaxation; [`solve_block_gs`] with the given `omega`.
pub fn solve_block_sor(
    graph: &Graph,
    max_sweeps: usize,
    omega: f64,
    metric: Option<&dyn Fn(&Estimates) -> PoseMetrics>,
) -> Result<Solution, SolverError> {
    solve_block_gs(
        graph,
        &BlockOptions {
            max_sweeps,
            omega,
            ..Default::default()
        },
        metric,
    )
}

#[cfg(test)]
mod tests;
