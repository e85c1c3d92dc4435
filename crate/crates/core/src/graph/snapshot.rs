use super::{FactorKey, Graph, RobotId, VarKey};
use crate::factors::FactorKind;
use crate::gaussian::CanonicalGaussian;
use crate::manifold::ManifoldPoint;
use serde::{Deserialize, Serialize};

/// JSON-friendly dump of a graph: nodes, beliefs and every stored message.
///
/// ```json
/// {
///   "variables": [{"key": {...}, "owner": 0, "estimate": {...}, "belief": {"eta": [...], "lambda": [[...]]},
///                  "fixed": false, "frozen": false,
///                  "inbox": [{"from": {...}, "gaussian": {...}, "lin_point": null}]}],
///   "factors":   [{"key": {...}, "owner": 0, "kind": "odometry", "adjacency": [...],
///                  "lambda_reg": 10.0, "energy_prev": 1.5,
///                  "inbox": [{"from": {...}, "gaussian": {...}, "lin_point": {...}}]}]
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub variables: Vec<VariableSnapshot>,
    pub factors: Vec<FactorSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSnapshot {
    pub key: VarKey,
    pub owner: RobotId,
    pub estimate: ManifoldPoint,
    pub belief: CanonicalGaussian,
    pub fixed: bool,
    pub frozen: bool,
    pub inbox: Vec<MessageSnapshot<FactorKey>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSnapshot {
    pub key: FactorKey,
    pub owner: RobotId,
    pub kind: FactorKind,
    pub adjacency: Vec<VarKey>,
    pub lambda_reg: Option<f64>,
    pub energy_prev: Option<f64>,
    pub inbox: Vec<MessageSnapshot<VarKey>>,
}

/// A stored incoming message. Factor-to-variable entries are already in the
/// tangent space at the variable's estimate and carry no linearisation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageSnapshot<K> {
    pub from: K,
    pub gaussian: CanonicalGaussian,
    pub lin_point: Option<ManifoldPoint>,
}

impl GraphSnapshot {
    pub fn of(graph: &Graph) -> Self {
        let variables = graph
            .variables()
            .iter()
            .map(|v| VariableSnapshot {
                key: v.key,
                owner: v.owner,
                estimate: v.estimate.clone(),
                belief: v.belief.clone(),
                fixed: v.fixed,
                frozen: v.frozen,
                inbox: v
                    .inbox
                    .iter()
                    .map(|e| MessageSnapshot {
                        from: e.factor,
                        gaussian: e.message.clone(),
                        lin_point: None,
                    })
                    .collect(),
            })
            .collect();
        let factors = graph
            .factors()
            .iter()
            .map(|f| FactorSnapshot {
                key: f.key,
                owner: f.owner,
                kind: f.model.kind(),
                adjacency: f.adjacency().collect(),
                lambda_reg: f.reg.map(|r| r.lambda_reg),
                energy_prev: f.energy_prev,
                inbox: f
                    .slots
                    .iter()
                    .filter_map(|s| {
                        s.message.as_ref().map(|m| MessageSnapshot {
                            from: s.var,
                            gaussian: m.gaussian.clone(),
                            lin_point: Some(m.lin_point.clone()),
                        })
                    })
                    .collect(),
            })
            .collect();
        GraphSnapshot { variables, factors }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot is always serialisable")
    }
}
