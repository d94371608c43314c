use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::constraints::{ConstraintId, Op};
use crate::dataset::CellRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FactorKind {
    Cooc,
    Prior,
    Dict,
    RelaxedDc,
    HardDc,
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactorKind::Cooc => "COOC",
            FactorKind::Prior => "PRIOR",
            FactorKind::Dict => "DICT",
            FactorKind::RelaxedDc => "RELAXED_DC",
            FactorKind::HardDc => "HARD_DC",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    /// Another attribute of the same tuple holding a given initial value.
    Cooc { attr: usize, value: String },
    /// The tuple's provenance.
    Source(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WeightKey {
    Feature { attr: usize, value: String, feature: Feature },
    Dict(String),
    RelaxedDc { constraint: ConstraintId, position: usize },
    Prior,
    HardDc,
}

impl WeightKey {
    pub fn is_fixed(&self) -> bool {
        matches!(self, WeightKey::Prior | WeightKey::HardDc)
    }

    pub fn describe(&self, attributes: &[String]) -> String {
        match self {
            WeightKey::Feature { attr, value, feature } => {
                let f = match feature {
                    Feature::Cooc { attr, value } => format!("{}={value}", attributes[*attr]),
                    Feature::Source(s) => format!("SRC={s}"),
                };
                format!("w({}={value} | {f})", attributes[*attr])
            }
            WeightKey::Dict(k) => format!("w(dict {k})"),
            WeightKey::RelaxedDc { constraint, position } => format!("w({constraint}#{position})"),
            WeightKey::Prior => "w(prior)".into(),
            WeightKey::HardDc => "w(hard dc)".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Evidence,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub id: usize,
    pub cell: CellRef,
    pub domain: Vec<String>,
    pub kind: VarKind,
    /// Position of the initial value in `domain`.
    pub init: Option<usize>,
}

impl Variable {
    pub fn is_query(&self) -> bool {
        self.kind == VarKind::Query
    }

    /// State an evidence variable is fixed to, or the initial state of a
    /// query variable. `NULL_STATE` marks a NULL evidence cell.
    pub fn initial_state(&self) -> usize {
        self.init.unwrap_or(if self.is_query() { 0 } else { NULL_STATE })
    }
}

pub const NULL_STATE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HardTerm {
    /// Index into the factor's variable list.
    Var(usize),
    Const(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAtom {
    pub op: Op,
    pub lhs: HardTerm,
    pub rhs: HardTerm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorBody {
    /// `h(d) = m` for each listed `(candidate, m)`, 0 for other candidates.
    /// An entry with multiplicity `m` stands for `m` identical 0/1 factors.
    Unary { active: Vec<(usize, f64)> },
    /// `h = -1` when any clause has all atoms true, `+1` otherwise.
    HardDc {
        constraint: ConstraintId,
        tuples: (usize, usize),
        clauses: Vec<Vec<HardAtom>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor<W = usize> {
    pub kind: FactorKind,
    pub weight: W,
    pub vars: Vec<usize>,
    pub body: FactorBody,
}

impl<W> Factor<W> {
    pub fn unary(kind: FactorKind, weight: W, var: usize, active: Vec<(usize, f64)>) -> Self {
        Factor {
            kind,
            weight,
            vars: vec![var],
            body: FactorBody::Unary { active },
        }
    }

    fn map_weight<V>(self, f: impl FnOnce(W) -> V) -> Factor<V> {
        Factor {
            kind: self.kind,
            weight: f(self.weight),
            vars: self.vars,
            body: self.body,
        }
    }
}

/// An evidence cell used for learning: its unary factors over a candidate
/// list whose `label` entry is the observed value.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample<W = usize> {
    pub cell: CellRef,
    pub candidates: Vec<String>,
    pub label: usize,
    pub factors: Vec<Factor<W>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedWeights {
    pub prior: f64,
    pub hard_dc: f64,
}

impl Default for FixedWeights {
    fn default() -> Self {
        FixedWeights {
            prior: 1.0,
            hard_dc: 10.0,
        }
    }
}

/// Learned and fixed weights by key. Keys never seen read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightTable {
    pub weights: BTreeMap<WeightKey, f64>,
}

impl WeightTable {
    pub fn get(&self, key: &WeightKey) -> f64 {
        self.weights.get(key).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, key: WeightKey, value: f64) {
        self.weights.insert(key, value);
    }
}

#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub variables: Vec<Variable>,
    /// Sorted weight keys; factors refer to them by index.
    pub keys: Vec<WeightKey>,
    pub factors: Vec<Factor>,
    /// Factor indices touching each variable.
    pub adjacency: Vec<Vec<usize>>,
    pub examples: Vec<TrainingExample>,
    pub fixed: FixedWeights,
    pub sim_threshold: f64,
}

impl FactorGraph {
    pub fn new(
        variables: Vec<Variable>,
        factors: Vec<Factor<WeightKey>>,
        examples: Vec<TrainingExample<WeightKey>>,
        fixed: FixedWeights,
        sim_threshold: f64,
    ) -> Self {
        debug_assert!(variables.iter().enumerate().all(|(i, v)| v.id == i));
        let keys: Vec<WeightKey> = factors
            .iter()
            .map(|f| &f.weight)
            .chain(examples.iter().flat_map(|e| e.factors.iter().map(|f| &f.weight)))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = |k: WeightKey| keys.binary_search(&k).expect("key collected above");
        let mut factors: Vec<Factor> = factors.into_iter().map(|f| f.map_weight(index)).collect();
        factors.sort_by(|a, b| (&a.vars, a.kind, a.weight).cmp(&(&b.vars, b.kind, b.weight)));
        let examples = examples
            .into_iter()
            .map(|e| TrainingExample {
                cell: e.cell,
                candidates: e.candidates,
                label: e.label,
                factors: e.factors.into_iter().map(|f| f.map_weight(index)).collect(),
            })
            .collect();
        let mut adjacency = vec![Vec::new(); variables.len()];
        for (i, f) in factors.iter().enumerate() {
            for &v in &f.vars {
                adjacency[v].push(i);
            }
        }
        FactorGraph {
            variables,
            keys,
            factors,
            adjacency,
            examples,
            fixed,
            sim_threshold,
        }
    }

    pub fn query_variables(&self) -> impl Iterator<Item = &Variable> {
        self.variables.iter().filter(|v| v.is_query())
    }

    pub fn num_query(&self) -> usize {
        self.query_variables().count()
    }

    pub fn count_kind(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind == kind).count()
    }

    pub fn weight_of(&self, key: &WeightKey, table: &WeightTable) -> f64 {
        match key {
            WeightKey::Prior => self.fixed.prior,
            WeightKey::HardDc => self.fixed.hard_dc,
            other => table.get(other),
        }
    }

    /// Weights aligned with `keys`, fixed keys at their configured values.
    pub fn resolve(&self, table: &WeightTable) -> Vec<f64> {
        self.keys.iter().map(|k| self.weight_of(k, table)).collect()
    }

    pub fn initial_assignment(&self) -> Vec<usize> {
        self.variables.iter().map(Variable::initial_state).collect()
    }

    pub fn value<'a>(&'a self, var: usize, state: usize) -> Option<&'a str> {
        self.variables[var].domain.get(state).map(String::as_str)
    }

    /// `h` of one factor under an assignment of every variable.
    pub fn factor_value(&self, factor: &Factor, assignment: &[usize]) -> f64 {
        match &factor.body {
            FactorBody::Unary { active } => {
                let state = assignment[factor.vars[0]];
                active.iter().find(|(d, _)| *d == state).map_or(0.0, |&(_, m)| m)
            }
            FactorBody::HardDc { clauses, .. } => {
                let violated = clauses.iter().any(|clause| {
                    clause.iter().all(|a| {
                        let lhs = self.hard_term(factor, &a.lhs, assignment);
                        let rhs = self.hard_term(factor, &a.rhs, assignment);
                        a.op.holds(lhs, rhs, self.sim_threshold)
                    })
                });
                if violated {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }

    fn hard_term<'a>(&'a self, factor: &Factor, term: &'a HardTerm, assignment: &[usize]) -> Option<&'a str> {
        match term {
            HardTerm::Var(i) => {
                let v = factor.vars[*i];
                self.value(v, assignment[v])
            }
            HardTerm::Const(c) => Some(c),
        }
    }

    /// `sum theta h` over every factor.
    pub fn total_score(&self, weights: &[f64], assignment: &[usize]) -> f64 {
        self.factors
            .iter()
            .map(|f| weights[f.weight] * self.factor_value(f, assignment))
            .sum()
    }

    /// Score of each candidate of an example under its unary factors.
    pub fn example_scores(&self, example: &TrainingExample, weights: &[f64]) -> Vec<f64> {
        let mut scores = vec![0.0; example.candidates.len()];
        for f in &example.factors {
            if let FactorBody::Unary { active } = &f.body {
                for &(d, m) in active {
                    scores[d] += weights[f.weight] * m;
                }
            }
        }
        scores
    }

    /// Per-candidate score of a variable from its single-variable factors.
    pub fn unary_scores(&self, var: usize, weights: &[f64]) -> Vec<f64> {
        let mut scores = vec![0.0; self.variables[var].domain.len()];
        for &fi in &self.adjacency[var] {
            let f = &self.factors[fi];
            if let FactorBody::Unary { active } = &f.body {
                for &(d, m) in active {
                    scores[d] += weights[f.weight] * m;
                }
            }
        }
        scores
    }

    pub fn has_coupling(&self) -> bool {
        self.factors.iter().any(|f| f.vars.len() > 1)
    }
}

/// Per query variable: probability of each candidate, in domain order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarginalTable {
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl MarginalTable {
    pub fn get(&self, var: usize) -> Option<&[f64]> {
        self.rows.get(&var).map(Vec::as_slice)
    }

    pub fn max_abs_diff(&self, other: &MarginalTable) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, row) in &self.rows {
            let Some(o) = other.rows.get(v) else {
                return f64::INFINITY;
            };
            for (a, b) in row.iter().zip(o) {
                worst = worst.max((a - b).abs());
            }
        }
        if self.rows.len() != other.rows.len() {
            return f64::INFINITY;
        }
        worst
    }
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub(crate) fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}
