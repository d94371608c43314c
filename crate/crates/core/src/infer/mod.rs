//! The factor graph, weight learning, and marginal inference.

mod graph;
mod learn;
mod sample;

pub use graph::{
    Factor, FactorBody, FactorGraph, FactorKind, Feature, FixedWeights, HardAtom, HardTerm, MarginalTable,
    TrainingExample, VarKind, Variable, WeightKey, WeightTable, NULL_STATE,
};
pub use learn::{learn_weights, LearnConfig, LearnError, LearnOutcome, Objective};
pub use sample::{
    closed_form_marginals, exact_marginals, gibbs_marginals, GibbsConfig, InferError, EXACT_STATE_LIMIT,
};
