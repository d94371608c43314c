//! Grounding: one variable per cell, unary feature factors, and either
//! coupled denial-constraint factors or their relaxed per-cell rewrites.

mod partition;
mod relax;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use partition::{partition_groups, Group, PartitionPlan};
pub use relax::{relax_dc, Atom, RelaxedRule, Slot, Term};

use crate::constraints::{BoundConstraint, BoundOperand, ConstraintId, DenialConstraint};
use crate::dataset::{CellRef, DataError, Dataset};
use crate::detect::DetectionResult;
use crate::domain::{cell_candidates, CandidateDomain, CoocTable};
use crate::extdict::MatchedFact;
use crate::infer::{
    Factor, FactorBody, FactorGraph, FactorKind, Feature, FixedWeights, HardAtom, HardTerm, TrainingExample,
    VarKind, Variable, WeightKey,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Relaxed constraint features only; variables stay independent.
    #[default]
    Feats,
    /// Coupled constraint factors only.
    Factors,
    Both,
}

impl Mode {
    pub fn relaxed(self) -> bool {
        matches!(self, Mode::Feats | Mode::Both)
    }

    pub fn hard(self) -> bool {
        matches!(self, Mode::Factors | Mode::Both)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "feats" => Ok(Mode::Feats),
            "factors" => Ok(Mode::Factors),
            "both" => Ok(Mode::Both),
            other => Err(format!("unknown mode {other:?}; expected feats, factors or both")),
        }
    }
}

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("noisy cell {0} has no candidate domain")]
    MissingDomain(CellRef),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One variable per cell in row-major order. Clean cells, and noisy cells
/// left with fewer than two candidates, are evidence at their initial value.
pub fn build_variables(
    dataset: &Dataset,
    detection: &DetectionResult,
    domains: &BTreeMap<CellRef, CandidateDomain>,
) -> Result<Vec<Variable>, GroundError> {
    dataset
        .cells()
        .map(|cell| {
            let id = dataset.cell_index(cell);
            let init = dataset.value(cell);
            let evidence = || Variable {
                id,
                cell,
                domain: init.map(str::to_string).into_iter().collect(),
                kind: VarKind::Evidence,
                init: init.map(|_| 0),
            };
            if !detection.is_noisy(cell) {
                return Ok(evidence());
            }
            let dom = domains.get(&cell).ok_or(GroundError::MissingDomain(cell))?;
            if dom.len() < 2 {
                return Ok(evidence());
            }
            Ok(Variable {
                id,
                cell,
                domain: dom.candidates.clone(),
                kind: VarKind::Query,
                init: init.and_then(|v| dom.position(v)),
            })
        })
        .collect()
}

/// Appends matched dictionary values missing from a noisy cell's domain.
pub fn extend_domains(domains: &mut BTreeMap<CellRef, CandidateDomain>, facts: &[MatchedFact]) {
    for fact in facts {
        if let Some(dom) = domains.get_mut(&fact.cell) {
            if !dom.contains(&fact.value) {
                dom.candidates.push(fact.value.clone());
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundConfig {
    pub mode: Mode,
    pub sim_threshold: f64,
    /// Pruning threshold used for training-cell candidates.
    pub tau: f64,
    pub fixed: FixedWeights,
    /// Random rivals added to a training cell with no other candidate.
    pub neg_samples: usize,
    pub max_examples: usize,
    pub seed: u64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig {
            mode: Mode::Feats,
            sim_threshold: 0.8,
            tau: 0.5,
            fixed: FixedWeights::default(),
            neg_samples: 3,
            max_examples: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundStats {
    pub query_variables: usize,
    pub evidence_variables: usize,
    pub training_examples: usize,
    pub factors: BTreeMap<String, usize>,
    /// `(variable, partner)` bindings whose relaxed-rule body held.
    pub relaxed_bindings: usize,
    /// Coupled factors grounded, and the `sum |g|^2` bound they must respect.
    pub hard_factors: usize,
    pub pair_bound: usize,
}

pub struct GroundInput<'a> {
    pub dataset: &'a Dataset,
    pub table: &'a CoocTable,
    pub detection: &'a DetectionResult,
    /// Candidate domains of noisy cells, already extended with matches.
    pub domains: &'a BTreeMap<CellRef, CandidateDomain>,
    pub constraints: &'a [DenialConstraint],
    pub plan: &'a PartitionPlan,
    pub facts: &'a [MatchedFact],
}

pub struct Grounded {
    pub graph: FactorGraph,
    pub stats: GroundStats,
    pub rules: Vec<RelaxedRule>,
}

/// Shared machinery for the unary factors of a cell, used for query
/// variables and training cells alike.
struct Grounder<'a> {
    ds: &'a Dataset,
    sim: f64,
    rules_by_attr: Vec<Vec<RelaxedRule>>,
    /// Per constraint, the group index of each tuple.
    group_of: HashMap<ConstraintId, Vec<Option<u32>>>,
    index: Vec<HashMap<&'a str, Vec<usize>>>,
    facts_by_cell: HashMap<CellRef, Vec<&'a MatchedFact>>,
}

impl<'a> Grounder<'a> {
    fn new(
        ds: &'a Dataset,
        bound: &[BoundConstraint],
        plan: &PartitionPlan,
        facts: &'a [MatchedFact],
        relaxed: bool,
        sim: f64,
    ) -> Self {
        let mut rules_by_attr = vec![Vec::new(); ds.num_attributes()];
        if relaxed {
            for rule in bound.iter().flat_map(relax_dc) {
                rules_by_attr[rule.target_attr].push(rule);
            }
        }
        let mut group_of: HashMap<ConstraintId, Vec<Option<u32>>> = HashMap::new();
        for (gi, g) in plan.groups.iter().enumerate() {
            let slots = group_of
                .entry(g.constraint)
                .or_insert_with(|| vec![None; ds.num_tuples()]);
            for &t in &g.tuples {
                slots[t] = Some(gi as u32);
            }
        }
        let index = (0..ds.num_attributes())
            .map(|a| {
                let mut m: HashMap<&str, Vec<usize>> = HashMap::new();
                for (t, v) in ds.column(a).enumerate() {
                    if let Some(v) = v {
                        m.entry(v).or_default().push(t);
                    }
                }
                m
            })
            .collect();
        let mut facts_by_cell: HashMap<CellRef, Vec<&MatchedFact>> = HashMap::new();
        for f in facts {
            facts_by_cell.entry(f.cell).or_default().push(f);
        }
        Grounder {
            ds,
            sim,
            rules_by_attr,
            group_of,
            index,
            facts_by_cell,
        }
    }

    fn rules(&self) -> Vec<RelaxedRule> {
        let mut all: Vec<RelaxedRule> = self.rules_by_attr.iter().flatten().cloned().collect();
        all.sort_by_key(|r| (r.constraint, r.position));
        all
    }

    /// COOC, provenance, PRIOR and DICT factors.
    fn features(&self, var: usize, cell: CellRef, domain: &[String]) -> Vec<Factor<WeightKey>> {
        let mut out = Vec::new();
        let a = cell.attr;
        let add_feature = |feature: Feature, out: &mut Vec<Factor<WeightKey>>| {
            for (i, d) in domain.iter().enumerate() {
                let key = WeightKey::Feature {
                    attr: a,
                    value: d.clone(),
                    feature: feature.clone(),
                };
                out.push(Factor::unary(FactorKind::Cooc, key, var, vec![(i, 1.0)]));
            }
        };
        for b in (0..self.ds.num_attributes()).filter(|&b| b != a) {
            if let Some(v) = self.ds.value(CellRef::new(cell.tuple, b)) {
                add_feature(
                    Feature::Cooc {
                        attr: b,
                        value: v.to_string(),
                    },
                    &mut out,
                );
            }
        }
        if let Some(src) = self.ds.provenance(cell.tuple) {
            add_feature(Feature::Source(src.to_string()), &mut out);
        }
        if let Some(i) = self.ds.value(cell).and_then(|v| domain.iter().position(|d| d == v)) {
            out.push(Factor::unary(FactorKind::Prior, WeightKey::Prior, var, vec![(i, 1.0)]));
        }
        for fact in self.facts_by_cell.get(&cell).into_iter().flatten() {
            if let Some(i) = domain.iter().position(|d| *d == fact.value) {
                out.push(Factor::unary(FactorKind::Dict, WeightKey::Dict(fact.dict.clone()), var, vec![(i, 1.0)]));
            }
        }
        out
    }

    /// One aggregated factor per applicable rule; returns the factors and
    /// the number of bindings whose body held.
    fn relaxed(&self, var: usize, cell: CellRef, domain: &[String]) -> (Vec<Factor<WeightKey>>, usize) {
        let t = cell.tuple;
        let mut out = Vec::new();
        let mut bindings = 0;
        for rule in &self.rules_by_attr[cell.attr] {
            let mut counts = vec![0usize; domain.len()];
            let tally = |partner: usize, counts: &mut [usize]| -> bool {
                if !rule.conditions_hold(self.ds, t, partner, self.sim) {
                    return false;
                }
                for (i, d) in domain.iter().enumerate() {
                    if rule.violates(self.ds, d, t, partner, self.sim) {
                        counts[i] += 1;
                    }
                }
                true
            };
            if rule.arity == 1 {
                bindings += usize::from(tally(t, &mut counts));
            } else {
                let Some(group) = self.group_of.get(&rule.constraint).and_then(|g| g[t]) else {
                    continue;
                };
                let in_scope = |p: usize| p != t && self.group_of[&rule.constraint][p] == Some(group);
                for p in self.partners(rule, cell, domain).into_iter().filter(|&p| in_scope(p)) {
                    bindings += usize::from(tally(p, &mut counts));
                }
            }
            let active: Vec<(usize, f64)> = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (i, c as f64))
                .collect();
            if !active.is_empty() {
                let key = WeightKey::RelaxedDc {
                    constraint: rule.constraint,
                    position: rule.position,
                };
                out.push(Factor::unary(FactorKind::RelaxedDc, key, var, active));
            }
        }
        (out, bindings)
    }

    /// Tuples that can possibly satisfy the rule body with `cell`'s tuple,
    /// narrowed through an equality when the rule has one.
    fn partners(&self, rule: &RelaxedRule, cell: CellRef, domain: &[String]) -> Vec<usize> {
        if let Some((own, other)) = rule.condition_join() {
            return self
                .ds
                .value(CellRef::new(cell.tuple, own))
                .and_then(|v| self.index[other].get(v))
                .cloned()
                .unwrap_or_default();
        }
        if let Some(other) = rule.target_join() {
            return domain
                .iter()
                .filter_map(|d| self.index[other].get(d.as_str()))
                .flatten()
                .copied()
                .collect();
        }
        (0..self.ds.num_tuples()).collect()
    }

    fn unary(&self, var: usize, cell: CellRef, domain: &[String]) -> (Vec<Factor<WeightKey>>, usize) {
        let mut factors = self.features(var, cell, domain);
        let (relaxed, bindings) = self.relaxed(var, cell, domain);
        factors.extend(relaxed);
        (factors, bindings)
    }
}

/// COOC, provenance, PRIOR and DICT factors of every query variable.
pub fn extract_features(dataset: &Dataset, variables: &[Variable], facts: &[MatchedFact]) -> Vec<Factor<WeightKey>> {
    let g = Grounder::new(dataset, &[], &PartitionPlan::default(), facts, false, 0.8);
    variables
        .iter()
        .filter(|v| v.is_query())
        .flat_map(|v| g.features(v.id, v.cell, &v.domain))
        .collect()
}

/// Denial-constraint factors: coupled factors per within-group tuple pair,
/// relaxed unary factors per query variable, or both.
pub fn ground_factors(
    dataset: &Dataset,
    variables: &[Variable],
    constraints: &[DenialConstraint],
    plan: &PartitionPlan,
    mode: Mode,
    sim_threshold: f64,
) -> Result<Vec<Factor<WeightKey>>, GroundError> {
    let bound = bind_all(dataset, constraints)?;
    let mut out = Vec::new();
    if mode.relaxed() {
        let g = Grounder::new(dataset, &bound, plan, &[], true, sim_threshold);
        for v in variables.iter().filter(|v| v.is_query()) {
            out.extend(g.relaxed(v.id, v.cell, &v.domain).0);
        }
    }
    if mode.hard() {
        out.extend(hard_factors(dataset, variables, &bound, plan, sim_threshold));
    }
    Ok(out)
}

fn bind_all(dataset: &Dataset, constraints: &[DenialConstraint]) -> Result<Vec<BoundConstraint>, DataError> {
    constraints.iter().map(|dc| dc.bind(dataset)).collect()
}

fn hard_factors(
    ds: &Dataset,
    variables: &[Variable],
    bound: &[BoundConstraint],
    plan: &PartitionPlan,
    sim: f64,
) -> Vec<Factor<WeightKey>> {
    let by_id: HashMap<ConstraintId, &BoundConstraint> = bound.iter().map(|b| (b.id, b)).collect();
    plan.groups
        .par_iter()
        .flat_map_iter(|group| {
            let dc = by_id[&group.constraint];
            let pairs: Vec<(usize, usize)> = if dc.arity == 1 {
                group.tuples.iter().map(|&t| (t, t)).collect()
            } else {
                let g = &group.tuples;
                (0..g.len())
                    .flat_map(|i| (i + 1..g.len()).map(move |j| (g[i], g[j])))
                    .collect()
            };
            pairs.into_iter().filter_map(move |(ti, tj)| {
                let vars: Vec<usize> = dc
                    .cells_under(ti, tj)
                    .chain(dc.cells_under(tj, ti))
                    .map(|c| ds.cell_index(c))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let unfixed = vars.iter().any(|&v| variables[v].is_query());
                if !unfixed && !dc.violated_by(ds, ti, tj, sim) && !dc.violated_by(ds, tj, ti, sim) {
                    return None;
                }
                let slot = |c: CellRef| HardTerm::Var(vars.binary_search(&ds.cell_index(c)).expect("cell collected"));
                let clause = |a: usize, b: usize| -> Vec<HardAtom> {
                    dc.predicates
                        .iter()
                        .map(|p| HardAtom {
                            op: p.op,
                            lhs: slot(CellRef::new(p.lhs.tuple(a, b), p.lhs.attr)),
                            rhs: match &p.rhs {
                                BoundOperand::Cell(c) => slot(CellRef::new(c.tuple(a, b), c.attr)),
                                BoundOperand::Const(s) => HardTerm::Const(s.clone()),
                            },
                        })
                        .collect()
                };
                let clauses = if ti == tj {
                    vec![clause(ti, tj)]
                } else {
                    vec![clause(ti, tj), clause(tj, ti)]
                };
                Some(Factor {
                    kind: FactorKind::HardDc,
                    weight: WeightKey::HardDc,
                    vars,
                    body: FactorBody::HardDc {
                        constraint: dc.id,
                        tuples: (ti, tj),
                        clauses,
                    },
                })
            })
        })
        .collect()
}

/// Evidence cells, including noisy cells left with a single candidate,
/// with an observed value in attributes that have at least
/// two distinct values, each with candidates pruned as if it were noisy.
fn training_examples(
    grounder: &Grounder<'_>,
    input: &GroundInput<'_>,
    variables: &[Variable],
    config: &GroundConfig,
) -> (Vec<TrainingExample<WeightKey>>, usize) {
    let ds = input.dataset;
    let values: Vec<Vec<&str>> = (0..ds.num_attributes())
        .map(|a| {
            let mut v: Vec<&str> = input.table.values(a).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let mut eligible: Vec<&Variable> = variables
        .iter()
        .filter(|v| !v.is_query() && v.init.is_some() && values[v.cell.attr].len() >= 2)
        .collect();
    if eligible.len() > config.max_examples {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut keep = index::sample(&mut rng, eligible.len(), config.max_examples).into_vec();
        keep.sort_unstable();
        eligible = keep.into_iter().map(|i| eligible[i]).collect();
    }
    let built: Vec<(TrainingExample<WeightKey>, usize)> = eligible
        .par_iter()
        .map(|v| {
            let label_value = v.domain[0].as_str();
            let mut candidates = cell_candidates(ds, input.table, v.cell, config.tau).candidates;
            for f in grounder.facts_by_cell.get(&v.cell).into_iter().flatten() {
                if !candidates.contains(&f.value) {
                    candidates.push(f.value.clone());
                }
            }
            if candidates.len() == 1 && config.neg_samples > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(v.id as u64 + 1);
                let rivals: Vec<&str> = values[v.cell.attr]
                    .iter()
                    .copied()
                    .filter(|&x| x != label_value)
                    .collect();
                candidates.extend(
                    rivals
                        .choose_multiple(&mut rng, config.neg_samples)
                        .map(|s| s.to_string()),
                );
            }
            let label = candidates
                .iter()
                .position(|c| c == label_value)
                .expect("initial value is always a candidate");
            let (factors, bindings) = grounder.unary(v.id, v.cell, &candidates);
            (
                TrainingExample {
                    cell: v.cell,
                    candidates,
                    label,
                    factors,
                },
                bindings,
            )
        })
        .collect();
    let bindings = built.iter().map(|(_, b)| b).sum();
    (built.into_iter().map(|(e, _)| e).collect(), bindings)
}

/// Builds the variables, factors and training set of the repair model.
pub fn ground(input: &GroundInput<'_>, config: &GroundConfig) -> Result<Grounded, GroundError> {
    let ds = input.dataset;
    let bound = bind_all(ds, input.constraints)?;
    let variables = build_variables(ds, input.detection, input.domains)?;
    let grounder = Grounder::new(ds, &bound, input.plan, input.facts, config.mode.relaxed(), config.sim_threshold);

    let per_var: Vec<(Vec<Factor<WeightKey>>, usize)> = variables
        .par_iter()
        .filter(|v| v.is_query())
        .map(|v| grounder.unary(v.id, v.cell, &v.domain))
        .collect();
    let mut relaxed_bindings: usize = per_var.iter().map(|(_, b)| b).sum();
    let mut factors: Vec<Factor<WeightKey>> = per_var.into_iter().flat_map(|(f, _)| f).collect();
    let mut hard = 0;
    if config.mode.hard() {
        let h = hard_factors(ds, &variables, &bound, input.plan, config.sim_threshold);
        hard = h.len();
        factors.extend(h);
    }
    let (examples, train_bindings) = training_examples(&grounder, input, &variables, config);
    relaxed_bindings += train_bindings;

    let mut stats = GroundStats {
        query_variables: variables.iter().filter(|v| v.is_query()).count(),
        evidence_variables: variables.iter().filter(|v| !v.is_query()).count(),
        training_examples: examples.len(),
        relaxed_bindings,
        hard_factors: hard,
        pair_bound: input.plan.pair_bound(),
        ..Default::default()
    };
    for f in &factors {
        *stats.factors.entry(f.kind.to_string()).or_default() += 1;
    }
    let graph = FactorGraph::new(variables, factors, examples, config.fixed, config.sim_threshold);
    Ok(Grounded {
        graph,
        stats,
        rules: grounder.rules(),
    })
}

/// Human-readable listing of the grounded program, for inspection.
pub fn render_program(dataset: &Dataset, constraints: &[DenialConstraint], grounded: &Grounded) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# constraints");
    for dc in constraints {
        let _ = writeln!(out, "{}: {}", dc.id, dc.render());
    }
    let _ = writeln!(out, "\n# relaxed rules");
    for r in &grounded.rules {
        let _ = writeln!(out, "{}", r.render(dataset));
    }
    let s = &grounded.stats;
    let _ = writeln!(out, "\n# grounding");
    let _ = writeln!(
        out,
        "variables: {} query, {} evidence; training cells: {}",
        s.query_variables, s.evidence_variables, s.training_examples
    );
    for (kind, n) in &s.factors {
        let _ = writeln!(out, "{kind}: {n}");
    }
    let _ = writeln!(out, "relaxed bindings: {}", s.relaxed_bindings);
    let _ = writeln!(out, "hard factors: {} (bound {})", s.hard_factors, s.pair_bound);
    let g = &grounded.graph;
    let names = dataset.attributes();
    let _ = writeln!(out, "\n# factors");
    for f in &g.factors {
        let key = g.keys[f.weight].describe(names);
        match &f.body {
            FactorBody::Unary { active } => {
                let v = &g.variables[f.vars[0]];
                let on: Vec<String> = active
                    .iter()
                    .map(|&(d, m)| {
                        if m == 1.0 {
                            v.domain[d].clone()
                        } else {
                            format!("{} x{m}", v.domain[d])
                        }
                    })
                    .collect();
                let _ = writeln!(
                    out,
                    "{} {} t{}.{} on [{}]",
                    f.kind,
                    key,
                    dataset.tuple_id(v.cell.tuple),
                    names[v.cell.attr],
                    on.join(", ")
                );
            }
            FactorBody::HardDc { constraint, tuples, .. } => {
                let _ = writeln!(
                    out,
                    "{} {} over t{}, t{} ({} cells)",
                    f.kind,
                    constraint,
                    dataset.tuple_id(tuples.0),
                    dataset.tuple_id(tuples.1),
                    f.vars.len()
                );
            }
        }
    }
    out
}
