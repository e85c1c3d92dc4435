//! Factor graph and the synchronous Gaussian belief propagation engine.
//!
//! A [`Graph`] holds the variables and factors owned by one executor. Edges
//! to variables or factors that live in another graph are *remote*: messages
//! on them are placed in the outbox and must be handed to the other graph
//! with [`Graph::deliver`]. A graph containing every node is the centralised
//! solver; one graph per robot is the distributed one.
//!
//! Messages are expressed in the tangent space at a linearisation point. A
//! receiver whose estimate differs from that point transports the message
//! with `η' = η - Λ (x ⊖ x̄)` before storing it. Variables keep their inbox and
//! prior in the tangent space at their current estimate and shift them when
//! the estimate moves.

mod keys;
mod snapshot;

pub use keys::{keyed_uniform, mix, splitmix64, FactorKey, NodeRef, RobotId, VarKey};
pub use snapshot::{FactorSnapshot, GraphSnapshot, MessageSnapshot, VariableSnapshot};

use crate::factors::{linearize, AdaptiveReg, FactorError, FactorModel};
use crate::gaussian::CanonicalGaussian;
use crate::manifold::{ManifoldError, ManifoldPoint};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("variable {0} already exists")]
    DuplicateVariable(VarKey),
    #[error("factor {0} already exists")]
    DuplicateFactor(FactorKey),
    #[error("unknown variable {0}")]
    UnknownVariable(VarKey),
    #[error("unknown factor {0}")]
    UnknownFactor(FactorKey),
    #[error("factor {key}: {source}")]
    Factor { key: FactorKey, source: FactorError },
    #[error("message {from} -> {to} does not match this graph")]
    Misrouted { from: NodeRef, to: NodeRef },
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

/// A directed message. Both directions carry the linearisation point whose
/// tangent space the Gaussian is expressed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbpMessage {
    pub from: NodeRef,
    pub to: NodeRef,
    pub gaussian: CanonicalGaussian,
    pub lin_point: ManifoldPoint,
    pub iteration: u64,
}

/// Decides whether a message reaches its receiver.
pub trait Delivery {
    fn delivers(
        &self,
        iteration: u64,
        from: NodeRef,
        to: NodeRef,
        from_owner: RobotId,
        to_owner: RobotId,
    ) -> bool;
}

/// Independent Bernoulli dropout keyed on `(seed, iteration, edge, direction)`,
/// with separate probabilities for same-owner and cross-owner edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyedDropout {
    pub seed: u64,
    pub internal: f64,
    pub external: f64,
}

impl KeyedDropout {
    pub fn uniform(seed: u64, prob: f64) -> Self {
        KeyedDropout {
            seed,
            internal: prob,
            external: prob,
        }
    }

    pub fn none() -> Self {
        Self::uniform(0, 0.0)
    }

    pub fn dropped(&self, iteration: u64, from: NodeRef, to: NodeRef, cross: bool) -> bool {
        let p = if cross { self.external } else { self.internal };
        if p <= 0.0 {
            return false;
        }
        keyed_uniform(&[self.seed, iteration, from.code(), to.code()]) < p
    }
}

impl Delivery for KeyedDropout {
    fn delivers(
        &self,
        iteration: u64,
        from: NodeRef,
        to: NodeRef,
        from_owner: RobotId,
        to_owner: RobotId,
    ) -> bool {
        !self.dropped(iteration, from, to, from_owner != to_owner)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InboxEntry {
    pub factor: FactorKey,
    pub factor_owner: RobotId,
    /// Index of the factor when it lives in the same graph, and the slot the variable occupies in it.
    pub local: Option<(usize, usize)>,
    /// Latest factor-to-variable message, in the tangent space at the variable's estimate.
    pub message: CanonicalGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableNode {
    pub key: VarKey,
    pub owner: RobotId,
    pub estimate: ManifoldPoint,
    pub belief: CanonicalGaussian,
    /// Optional prior in the tangent space at `estimate`.
    pub prior: Option<CanonicalGaussian>,
    pub inbox: Vec<InboxEntry>,
    /// Held constant: adjacent factors condition on the estimate and no messages flow.
    pub fixed: bool,
    /// No longer updated; the last messages it sent keep acting on its factors.
    pub frozen: bool,
    /// Something in the inbox or prior changed since the last update.
    pub dirty: bool,
}

impl VariableNode {
    pub fn dim(&self) -> usize {
        self.estimate.tangent_dim()
    }

    /// Product of the prior and every stored factor-to-variable message.
    pub fn compute_belief(&self) -> CanonicalGaussian {
        let mut b = self
            .prior
            .clone()
            .unwrap_or_else(|| CanonicalGaussian::zeros(self.dim()));
        for e in &self.inbox {
            b.product_assign(&e.message);
        }
        b
    }

    /// `belief / inbox[factor]`.
    pub fn message_to(&self, factor: usize) -> CanonicalGaussian {
        let e = &self.inbox[factor].message;
        CanonicalGaussian {
            eta: &self.belief.eta - &e.eta,
            lambda: &self.belief.lambda - &e.lambda,
        }
    }

    fn shift(&mut self, mu: &DVector<f64>) {
        for e in &mut self.inbox {
            e.message.eta -= &e.message.lambda * mu;
        }
        if let Some(p) = &mut self.prior {
            p.eta -= &p.lambda * mu;
        }
        self.belief.eta -= &self.belief.lambda * mu;
    }
}

/// A received variable-to-factor message.
#[derive(Debug, Clone, PartialEq)]
pub struct VarMessage {
    pub gaussian: CanonicalGaussian,
    pub lin_point: ManifoldPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSlot {
    pub var: VarKey,
    pub var_owner: RobotId,
    pub dim: usize,
    /// Index of the variable when it lives in the same graph, and this factor's position in its inbox.
    pub local: Option<(usize, usize)>,
    pub message: Option<VarMessage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorNode {
    pub key: FactorKey,
    pub owner: RobotId,
    pub model: FactorModel,
    pub noise_lambda: DMatrix<f64>,
    pub slots: Vec<FactorSlot>,
    pub reg: Option<AdaptiveReg>,
    pub energy_prev: Option<f64>,
}

impl FactorNode {
    pub fn adjacency(&self) -> impl Iterator<Item = VarKey> + '_ {
        self.slots.iter().map(|s| s.var)
    }
}

/// Description of a factor to insert.
#[derive(Debug, Clone)]
pub struct FactorSpec {
    pub key: FactorKey,
    pub owner: RobotId,
    pub model: FactorModel,
    pub noise_lambda: DMatrix<f64>,
    pub adjacency: Vec<VarKey>,
    pub reg: Option<AdaptiveReg>,
}

/// Potential of a factor over the stacked tangent space of its active slots.
#[derive(Debug, Clone)]
pub struct LinearizedFactor {
    pub potential: CanonicalGaussian,
    pub energy: f64,
    pub blocks: Vec<Option<(usize, usize)>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStats {
    /// Messages handed to a receiver in this graph (dropped ones included).
    pub sent: u64,
    pub dropped: u64,
    /// Messages placed in the outbox for another graph.
    pub outgoing: u64,
    /// Factors that could not produce messages (dormant, singular or degenerate).
    pub skipped_factors: u64,
}

impl std::ops::AddAssign for PhaseStats {
    fn add_assign(&mut self, o: PhaseStats) {
        self.sent += o.sent;
        self.dropped += o.dropped;
        self.outgoing += o.outgoing;
        self.skipped_factors += o.skipped_factors;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u64,
    pub energy: f64,
    pub stats: PhaseStats,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    vars: Vec<VariableNode>,
    var_index: HashMap<VarKey, usize>,
    factors: Vec<FactorNode>,
    factor_index: HashMap<FactorKey, usize>,
    outbox: Vec<GbpMessage>,
}

fn transport(g: &mut CanonicalGaussian, now: &ManifoldPoint, frame: &ManifoldPoint) -> Result<(), ManifoldError> {
    if now == frame {
        return Ok(());
    }
    let d = now.ominus(frame)?;
    g.eta -= &g.lambda * &*d;
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn variables(&self) -> &[VariableNode] {
        &self.vars
    }

    pub fn factors(&self) -> &[FactorNode] {
        &self.factors
    }

    pub fn variable(&self, key: &VarKey) -> Option<&VariableNode> {
        self.var_index.get(key).map(|&i| &self.vars[i])
    }

    pub fn variable_mut(&mut self, key: &VarKey) -> Option<&mut VariableNode> {
        self.var_index.get(key).map(|&i| &mut self.vars[i])
    }

    pub fn factor(&self, key: &FactorKey) -> Option<&FactorNode> {
        self.factor_index.get(key).map(|&i| &self.factors[i])
    }

    pub fn estimate(&self, key: &VarKey) -> Option<&ManifoldPoint> {
        self.variable(key).map(|v| &v.estimate)
    }

    pub fn contains_variable(&self, key: &VarKey) -> bool {
        self.var_index.contains_key(key)
    }

    pub fn add_variable(
        &mut self,
        key: VarKey,
        owner: RobotId,
        estimate: ManifoldPoint,
    ) -> Result<usize, GraphError> {
        if self.var_index.contains_key(&key) {
            return Err(GraphError::DuplicateVariable(key));
        }
        let dim = estimate.tangent_dim();
        let idx = self.vars.len();
        self.vars.push(VariableNode {
            key,
            owner,
            estimate,
            belief: CanonicalGaussian::zeros(dim),
            prior: None,
            inbox: Vec::new(),
            fixed: false,
            frozen: false,
            dirty: false,
        });
        self.var_index.insert(key, idx);
        Ok(idx)
    }

    fn var_idx(&self, key: &VarKey) -> Result<usize, GraphError> {
        self.var_index
            .get(key)
            .copied()
            .ok_or(GraphError::UnknownVariable(*key))
    }

    /// Sets a prior expressed in the tangent space at the variable's current estimate.
    pub fn set_prior(&mut self, key: &VarKey, prior: CanonicalGaussian) -> Result<(), GraphError> {
        let i = self.var_idx(key)?;
        self.vars[i].prior = Some(prior);
        self.vars[i].belief = self.vars[i].compute_belief();
        self.vars[i].dirty = true;
        Ok(())
    }

    pub fn set_fixed(&mut self, key: &VarKey, fixed: bool) -> Result<(), GraphError> {
        let i = self.var_idx(key)?;
        self.vars[i].fixed = fixed;
        Ok(())
    }

    pub fn set_frozen(&mut self, key: &VarKey, frozen: bool) -> Result<(), GraphError> {
        let i = self.var_idx(key)?;
        self.vars[i].frozen = frozen;
        Ok(())
    }

    /// Inserts a factor. Adjacent variables missing from this graph become remote
    /// slots; their owner is taken from the key and their dimension from the model.
    pub fn add_factor(&mut self, spec: FactorSpec) -> Result<usize, GraphError> {
        if self.factor_index.contains_key(&spec.key) {
            return Err(GraphError::DuplicateFactor(spec.key));
        }
        if spec.adjacency.len() != spec.model.arity() {
            return Err(GraphError::Factor {
                key: spec.key,
                source: FactorError::Arity {
                    expected: spec.model.arity(),
                    got: spec.adjacency.len(),
                },
            });
        }
        let fi = self.factors.len();
        let mut slots = Vec::with_capacity(spec.adjacency.len());
        for (s, var) in spec.adjacency.iter().enumerate() {
            let slot = match self.var_index.get(var) {
                Some(&vi) => {
                    let v = &mut self.vars[vi];
                    let pos = v.inbox.len();
                    v.inbox.push(InboxEntry {
                        factor: spec.key,
                        factor_owner: spec.owner,
                        local: Some((fi, s)),
                        message: CanonicalGaussian::zeros(v.dim()),
                    });
                    FactorSlot {
                        var: *var,
                        var_owner: v.owner,
                        dim: v.dim(),
                        local: Some((vi, pos)),
                        message: None,
                    }
                }
                None => {
                    let owner = var.robot().ok_or(GraphError::UnknownVariable(*var))?;
                    let dim = remote_slot_dim(&spec.model, s).ok_or(GraphError::UnknownVariable(*var))?;
                    FactorSlot {
                        var: *var,
                        var_owner: owner,
                        dim,
                        local: None,
                        message: None,
                    }
                }
            };
            slots.push(slot);
        }
        self.factors.push(FactorNode {
            key: spec.key,
            owner: spec.owner,
            model: spec.model,
            noise_lambda: spec.noise_lambda,
            slots,
            reg: spec.reg,
            energy_prev: None,
        });
        self.factor_index.insert(spec.key, fi);
        Ok(fi)
    }

    /// Registers a factor living in another graph as a neighbour of a local variable.
    pub fn attach_remote_factor(
        &mut self,
        var: &VarKey,
        factor: FactorKey,
        factor_owner: RobotId,
    ) -> Result<(), GraphError> {
        let vi = self.var_idx(var)?;
        let v = &mut self.vars[vi];
        v.inbox.push(InboxEntry {
            factor,
            factor_owner,
            local: None,
            message: CanonicalGaussian::zeros(v.dim()),
        });
        Ok(())
    }

    /// Belief of a variable recomputed from its prior and inbox.
    pub fn compute_belief(&self, key: &VarKey) -> Result<CanonicalGaussian, GraphError> {
        Ok(self.vars[self.var_idx(key)?].compute_belief())
    }

    /// Message the variable would currently send to `factor`.
    pub fn variable_to_factor(&self, var: &VarKey, factor: &FactorKey) -> Result<GbpMessage, GraphError> {
        let v = &self.vars[self.var_idx(var)?];
        let pos = v
            .inbox
            .iter()
            .position(|e| e.factor == *factor)
            .ok_or(GraphError::UnknownFactor(*factor))?;
        let belief = v.compute_belief();
        let e = &v.inbox[pos].message;
        Ok(GbpMessage {
            from: NodeRef::Var(*var),
            to: NodeRef::Factor(*factor),
            gaussian: CanonicalGaussian {
                eta: &belief.eta - &e.eta,
                lambda: &belief.lambda - &e.lambda,
            },
            lin_point: v.estimate.clone(),
            iteration: 0,
        })
    }

    fn factor_idx(&self, key: &FactorKey) -> Result<usize, GraphError> {
        self.factor_index
            .get(key)
            .copied()
            .ok_or(GraphError::UnknownFactor(*key))
    }

    /// Linearisation point and activity of every slot; `None` while some active slot has
    /// not received a linearisation point yet.
    fn lin_points<'a>(&'a self, f: &'a FactorNode) -> Option<(Vec<&'a ManifoldPoint>, Vec<bool>)> {
        let mut points = Vec::with_capacity(f.slots.len());
        let mut active = Vec::with_capacity(f.slots.len());
        for s in &f.slots {
            if let Some((vi, _)) = s.local {
                if self.vars[vi].fixed {
                    points.push(&self.vars[vi].estimate);
                    active.push(false);
                    continue;
                }
            }
            points.push(&s.message.as_ref()?.lin_point);
            active.push(true);
        }
        Some((points, active))
    }

    /// Linearises a factor at explicit points, with its current regulariser strength.
    pub fn linearize_factor(
        &self,
        key: &FactorKey,
        points: &[&ManifoldPoint],
    ) -> Result<LinearizedFactor, GraphError> {
        let f = &self.factors[self.factor_idx(key)?];
        let active: Vec<bool> = f
            .slots
            .iter()
            .map(|s| s.local.is_none_or(|(vi, _)| !self.vars[vi].fixed))
            .collect();
        let lin = linearize(
            &f.model,
            &f.noise_lambda,
            points,
            &active,
            f.reg.map(|r| r.lambda_reg),
        )
        .map_err(|source| GraphError::Factor { key: *key, source })?;
        Ok(LinearizedFactor {
            potential: lin.potential,
            energy: lin.energy,
            blocks: lin.blocks,
        })
    }

    /// Messages from factor `fi` to each of its active slots, computed from the stored
    /// variable-to-factor messages. Updates the adaptive regulariser.
    fn compute_factor_messages(
        &mut self,
        fi: usize,
    ) -> Option<Vec<(usize, Option<CanonicalGaussian>)>> {
        let f = &self.factors[fi];
        let (points, active) = self.lin_points(f)?;
        let lin = linearize(&f.model, &f.noise_lambda, &points, &active, None).ok()?;
        drop(points);
        let f = &mut self.factors[fi];
        let mut potential = lin.potential;
        if let Some(reg) = f.reg.as_mut() {
            if let Some(prev) = f.energy_prev {
                *reg = reg.updated(lin.energy, prev);
            }
            for i in 0..potential.dim() {
                potential.lambda[(i, i)] += reg.lambda_reg;
            }
        }
        f.energy_prev = Some(lin.energy);
        let f = &self.factors[fi];
        Some(factor_messages(f, &potential, &lin.blocks, |vi| self.vars[vi].frozen))
    }

    /// Factor-to-variable message for `target` at the stored linearisation points.
    pub fn factor_to_variable(
        &self,
        factor: &FactorKey,
        target: &VarKey,
    ) -> Result<Option<GbpMessage>, GraphError> {
        let fi = self.factor_idx(factor)?;
        let f = &self.factors[fi];
        let slot = f
            .slots
            .iter()
            .position(|s| s.var == *target)
            .ok_or(GraphError::UnknownVariable(*target))?;
        let Some((points, active)) = self.lin_points(f) else {
            return Ok(None);
        };
        let lin = linearize(
            &f.model,
            &f.noise_lambda,
            &points,
            &active,
            f.reg.map(|r| r.lambda_reg),
        )
        .map_err(|source| GraphError::Factor { key: *factor, source })?;
        let msgs = factor_messages(f, &lin.potential, &lin.blocks, |_| false);
        Ok(msgs
            .into_iter()
            .find(|(s, _)| *s == slot)
            .and_then(|(_, g)| g)
            .map(|gaussian| GbpMessage {
                from: NodeRef::Factor(*factor),
                to: NodeRef::Var(*target),
                gaussian,
                lin_point: points[slot].clone(),
                iteration: 0,
            }))
    }

    /// Every factor linearises at its freshest linearisation points and sends to its variables.
    pub fn factor_phase(&mut self, iteration: u64, delivery: &dyn Delivery) -> PhaseStats {
        let mut stats = PhaseStats::default();
        for fi in 0..self.factors.len() {
            let all_frozen = self.factors[fi].slots.iter().all(|s| match s.local {
                Some((vi, _)) => self.vars[vi].frozen || self.vars[vi].fixed,
                None => false,
            });
            if all_frozen {
                continue;
            }
            let Some(msgs) = self.compute_factor_messages(fi) else {
                stats.skipped_factors += 1;
                continue;
            };
            let f = &self.factors[fi];
            let from = NodeRef::Factor(f.key);
            let mut remote = Vec::new();
            let mut local = Vec::new();
            for (s, gaussian) in msgs {
                let Some(gaussian) = gaussian else { continue };
                let slot = &f.slots[s];
                let to = NodeRef::Var(slot.var);
                let frame = slot
                    .message
                    .as_ref()
                    .map(|m| &m.lin_point)
                    .expect("active slot has a linearisation point");
                match slot.local {
                    Some((vi, pos)) => {
                        stats.sent += 1;
                        if !delivery.delivers(iteration, from, to, f.owner, slot.var_owner) {
                            stats.dropped += 1;
                            continue;
                        }
                        local.push((vi, pos, gaussian, frame.clone()));
                    }
                    None => {
                        stats.outgoing += 1;
                        remote.push(GbpMessage {
                            from,
                            to,
                            gaussian,
                            lin_point: frame.clone(),
                            iteration,
                        });
                    }
                }
            }
            for (vi, pos, mut gaussian, frame) in local {
                let v = &mut self.vars[vi];
                if transport(&mut gaussian, &v.estimate, &frame).is_ok() {
                    v.inbox[pos].message = gaussian;
                    v.dirty = true;
                }
            }
            self.outbox.extend(remote);
        }
        stats
    }

    /// Every variable recomputes its belief, moves its estimate to the belief mean
    /// when the belief is positive definite, and sends to its factors.
    pub fn variable_phase(&mut self, iteration: u64, delivery: &dyn Delivery) -> PhaseStats {
        let mut stats = PhaseStats::default();
        for vi in 0..self.vars.len() {
            let v = &mut self.vars[vi];
            if v.fixed || v.frozen {
                continue;
            }
            if v.dirty {
                v.dirty = false;
                v.belief = v.compute_belief();
                if let Some(chol) = Cholesky::new(v.belief.lambda.clone()) {
                    let mu = chol.solve(&v.belief.eta);
                    if mu.iter().all(|m| m.is_finite()) {
                        if let Ok(next) = v.estimate.oplus(mu.as_slice()) {
                            v.estimate = next;
                            v.shift(&mu);
                        }
                    }
                }
            }
            let v = &self.vars[vi];
            let from = NodeRef::Var(v.key);
            let mut local = Vec::new();
            let mut remote = Vec::new();
            for (pos, e) in v.inbox.iter().enumerate() {
                let to = NodeRef::Factor(e.factor);
                match e.local {
                    Some((fi, s)) => {
                        stats.sent += 1;
                        if !delivery.delivers(iteration, from, to, v.owner, e.factor_owner) {
                            stats.dropped += 1;
                            continue;
                        }
                        local.push((fi, s, v.message_to(pos)));
                    }
                    None => {
                        stats.outgoing += 1;
                        remote.push(GbpMessage {
                            from,
                            to,
                            gaussian: v.message_to(pos),
                            lin_point: v.estimate.clone(),
                            iteration,
                        });
                    }
                }
            }
            let lin_point = v.estimate.clone();
            for (fi, s, gaussian) in local {
                self.factors[fi].slots[s].message = Some(VarMessage {
                    gaussian,
                    lin_point: lin_point.clone(),
                });
            }
            self.outbox.extend(remote);
        }
        stats
    }

    /// One synchronous sweep: factor phase then variable phase.
    pub fn iterate(&mut self, iteration: u64, delivery: &dyn Delivery) -> IterationReport {
        let mut stats = self.factor_phase(iteration, delivery);
        stats += self.variable_phase(iteration, delivery);
        IterationReport {
            iteration,
            energy: self.total_energy(),
            stats,
        }
    }

    pub fn take_outbox(&mut self) -> Vec<GbpMessage> {
        std::mem::take(&mut self.outbox)
    }

    pub fn outbox(&self) -> &[GbpMessage] {
        &self.outbox
    }

    /// Stores a message coming from another graph.
    pub fn deliver(&mut self, msg: GbpMessage) -> Result<(), GraphError> {
        let misrouted = GraphError::Misrouted {
            from: msg.from,
            to: msg.to,
        };
        match (msg.from, msg.to) {
            (NodeRef::Factor(fk), NodeRef::Var(vk)) => {
                let vi = self.var_idx(&vk)?;
                let v = &mut self.vars[vi];
                if v.fixed || v.frozen {
                    return Ok(());
                }
                let pos = v
                    .inbox
                    .iter()
                    .position(|e| e.factor == fk && e.local.is_none())
                    .ok_or(misrouted)?;
                let mut g = msg.gaussian;
                transport(&mut g, &v.estimate, &msg.lin_point)?;
                v.inbox[pos].message = g;
                v.dirty = true;
                Ok(())
            }
            (NodeRef::Var(vk), NodeRef::Factor(fk)) => {
                let fi = self.factor_idx(&fk)?;
                let slot = self.factors[fi]
                    .slots
                    .iter_mut()
                    .find(|s| s.var == vk && s.local.is_none())
                    .ok_or(misrouted)?;
                slot.message = Some(VarMessage {
                    gaussian: msg.gaussian,
                    lin_point: msg.lin_point,
                });
                Ok(())
            }
            _ => Err(misrouted),
        }
    }

    /// Raw energy of one factor at the current estimates of local variables and the
    /// last received linearisation points of remote ones.
    pub fn factor_energy(&self, fi: usize) -> Option<f64> {
        self.factor_energy_with(fi, &|_| None)
    }

    fn factor_energy_with(
        &self,
        fi: usize,
        remote: &dyn Fn(&VarKey) -> Option<ManifoldPoint>,
    ) -> Option<f64> {
        let f = &self.factors[fi];
        let mut owned = Vec::new();
        let mut idx = Vec::with_capacity(f.slots.len());
        for s in &f.slots {
            match s.local {
                Some((vi, _)) => idx.push(Ok(vi)),
                None => {
                    let p = remote(&s.var).or_else(|| s.message.as_ref().map(|m| m.lin_point.clone()))?;
                    owned.push(p);
                    idx.push(Err(owned.len() - 1));
                }
            }
        }
        let points: Vec<&ManifoldPoint> = idx
            .iter()
            .map(|i| match i {
                Ok(vi) => &self.vars[*vi].estimate,
                Err(k) => &owned[*k],
            })
            .collect();
        let r = f.model.residual(&points).ok()?;
        Some(crate::factors::energy(&r, &f.noise_lambda))
    }

    /// Sum of raw factor energies; factors whose residual is undefined contribute nothing.
    pub fn total_energy(&self) -> f64 {
        (0..self.factors.len())
            .filter_map(|fi| self.factor_energy(fi))
            .sum()
    }

    /// As [`total_energy`](Self::total_energy), with remote variables resolved by `remote`.
    pub fn total_energy_with(&self, remote: &dyn Fn(&VarKey) -> Option<ManifoldPoint>) -> f64 {
        (0..self.factors.len())
            .filter_map(|fi| self.factor_energy_with(fi, remote))
            .sum()
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot::of(self)
    }
}

fn remote_slot_dim(model: &FactorModel, slot: usize) -> Option<usize> {
    match (model, slot) {
        (FactorModel::RangeBearing { measured, .. }, 1) => Some(measured.dim()),
        _ => None,
    }
}

/// Combines the potential with incoming messages and marginalises onto each active
/// slot in turn. Slots whose elimination is singular get `None`.
fn factor_messages(
    f: &FactorNode,
    potential: &CanonicalGaussian,
    blocks: &[Option<(usize, usize)>],
    skip_target: impl Fn(usize) -> bool,
) -> Vec<(usize, Option<CanonicalGaussian>)> {
    let mut joint = potential.clone();
    for (s, b) in blocks.iter().enumerate() {
        if let (Some((off, d)), Some(m)) = (b, &f.slots[s].message) {
            let mut eta = joint.eta.rows_mut(*off, *d);
            eta += &m.gaussian.eta;
            let mut lam = joint.lambda.view_mut((*off, *off), (*d, *d));
            lam += &m.gaussian.lambda;
        }
    }
    let active: Vec<usize> = (0..blocks.len()).filter(|&s| blocks[s].is_some()).collect();
    let mut out = Vec::with_capacity(active.len());
    for &s in &active {
        if let Some((vi, _)) = f.slots[s].local {
            if skip_target(vi) {
                continue;
            }
        }
        let (off, d) = blocks[s].unwrap();
        if active.len() == 1 {
            out.push((s, Some(potential.clone())));
            continue;
        }
        // remove the target's own incoming message, then eliminate the rest
        let mut eta = potential.eta.clone();
        let mut lambda = joint.lambda.clone();
        for &o in &active {
            if o == s {
                continue;
            }
            if let (Some((oo, od)), Some(m)) = (blocks[o], &f.slots[o].message) {
                let mut e = eta.rows_mut(oo, od);
                e += &m.gaussian.eta;
            }
        }
        if let Some(m) = &f.slots[s].message {
            let mut lam = lambda.view_mut((off, off), (d, d));
            lam -= &m.gaussian.lambda;
        }
        let g = CanonicalGaussian { eta, lambda };
        out.push((s, g.marginalize_block(off, d).ok()));
    }
    out
}

#[cfg(test)]
mod tests;
