pub mod baselines;
pub mod distsim;
pub mod eval;
pub mod factors;
pub mod gaussian;
pub mod graph;
pub mod manifold;
