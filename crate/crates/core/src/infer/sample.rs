use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::graph::{log_sum_exp, softmax, FactorBody, FactorGraph, MarginalTable, WeightTable};

/// Joint state spaces above this size are refused by [`exact_marginals`].
pub const EXACT_STATE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferError {
    #[error("joint state space of {0:.0} assignments exceeds the enumeration limit")]
    StateSpaceTooLarge(f64),
    #[error("{0} factors couple several variables; closed form needs independent variables")]
    Coupled(usize),
    #[error("gibbs sampling needs at least one sample")]
    NoSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub samples: usize,
    pub burnin: usize,
    pub seed: u64,
    pub chains: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            samples: 2000,
            burnin: 200,
            seed: 0,
            chains: 1,
        }
    }
}

/// Precomputed per-variable scores from weights that stay fixed during
/// sampling, plus the couplings to re-evaluate.
struct Conditionals {
    base: Vec<Vec<f64>>,
    coupled: Vec<Vec<usize>>,
}

impl Conditionals {
    fn new(graph: &FactorGraph, weights: &[f64]) -> Self {
        let n = graph.variables.len();
        let mut base = vec![Vec::new(); n];
        let mut coupled = vec![Vec::new(); n];
        for v in graph.query_variables() {
            base[v.id] = graph.unary_scores(v.id, weights);
            coupled[v.id] = graph.adjacency[v.id]
                .iter()
                .copied()
                .filter(|&f| !matches!(graph.factors[f].body, FactorBody::Unary { .. }))
                .collect();
        }
        Conditionals { base, coupled }
    }

    /// Unnormalized log-probabilities of each candidate of `var` given the
    /// rest of the assignment.
    fn scores(&self, graph: &FactorGraph, weights: &[f64], var: usize, assignment: &mut [usize]) -> Vec<f64> {
        let mut scores = self.base[var].clone();
        if !self.coupled[var].is_empty() {
            let keep = assignment[var];
            for (d, s) in scores.iter_mut().enumerate() {
                assignment[var] = d;
                for &fi in &self.coupled[var] {
                    let f = &graph.factors[fi];
                    *s += weights[f.weight] * graph.factor_value(f, assignment);
                }
            }
            assignment[var] = keep;
        }
        scores
    }
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Systematic-scan Gibbs sampling over the query variables; one sample is
/// one full sweep.
pub fn gibbs_marginals(
    graph: &FactorGraph,
    table: &WeightTable,
    config: &GibbsConfig,
) -> Result<MarginalTable, InferError> {
    if config.samples == 0 {
        return Err(InferError::NoSamples);
    }
    let weights = graph.resolve(table);
    let cond = Conditionals::new(graph, &weights);
    let query: Vec<usize> = graph.query_variables().map(|v| v.id).collect();
    let chains = config.chains.max(1);

    let per_chain: Vec<Vec<Vec<u64>>> = (0..chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(chain as u64);
            let mut assignment = graph.initial_assignment();
            let mut counts: Vec<Vec<u64>> = query
                .iter()
                .map(|&v| vec![0; graph.variables[v].domain.len()])
                .collect();
            for sweep in 0..config.burnin + config.samples {
                for (qi, &v) in query.iter().enumerate() {
                    let probs = softmax(&cond.scores(graph, &weights, v, &mut assignment));
                    let d = draw(&probs, &mut rng);
                    assignment[v] = d;
                    if sweep >= config.burnin {
                        counts[qi][d] += 1;
                    }
                }
            }
            counts
        })
        .collect();

    let total = (config.samples * chains) as f64;
    let mut rows = std::collections::BTreeMap::new();
    for (qi, &v) in query.iter().enumerate() {
        let mut sum = vec![0u64; graph.variables[v].domain.len()];
        for counts in &per_chain {
            for (s, c) in sum.iter_mut().zip(&counts[qi]) {
                *s += c;
            }
        }
        rows.insert(v, sum.into_iter().map(|c| c as f64 / total).collect());
    }
    Ok(MarginalTable { rows })
}

/// Marginals by enumerating every joint assignment of the query variables.
pub fn exact_marginals(graph: &FactorGraph, table: &WeightTable) -> Result<MarginalTable, InferError> {
    let query: Vec<usize> = graph.query_variables().map(|v| v.id).collect();
    let sizes: Vec<usize> = query.iter().map(|&v| graph.variables[v].domain.len()).collect();
    let space: f64 = sizes.iter().map(|&s| s as f64).product();
    if space > EXACT_STATE_LIMIT {
        return Err(InferError::StateSpaceTooLarge(space));
    }
    let weights = graph.resolve(table);
    let base: Vec<Vec<f64>> = query.iter().map(|&v| graph.unary_scores(v, &weights)).collect();
    let coupled: Vec<usize> = (0..graph.factors.len())
        .filter(|&f| {
            let f = &graph.factors[f];
            !matches!(f.body, FactorBody::Unary { .. }) && f.vars.iter().any(|&v| graph.variables[v].is_query())
        })
        .collect();

    let mut assignment = graph.initial_assignment();
    let mut digits = vec![0usize; query.len()];
    let mut states: Vec<(Vec<usize>, f64)> = Vec::with_capacity(space as usize);
    loop {
        for (&v, &d) in query.iter().zip(&digits) {
            assignment[v] = d;
        }
        let mut score: f64 = digits.iter().zip(&base).map(|(&d, b)| b[d]).sum();
        for &fi in &coupled {
            let f = &graph.factors[fi];
            score += weights[f.weight] * graph.factor_value(f, &assignment);
        }
        states.push((digits.clone(), score));
        // Odometer increment.
        let mut i = 0;
        while i < digits.len() {
            digits[i] += 1;
            if digits[i] < sizes[i] {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        if i == digits.len() {
            break;
        }
    }

    let scores: Vec<f64> = states.iter().map(|(_, s)| *s).collect();
    let log_z = log_sum_exp(&scores);
    let mut rows: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    for (digits, score) in &states {
        let p = (score - log_z).exp();
        for (row, &d) in rows.iter_mut().zip(digits) {
            row[d] += p;
        }
    }
    Ok(MarginalTable {
        rows: query.into_iter().zip(rows).collect(),
    })
}

/// Per-variable softmax of unary scores; valid only without couplings.
pub fn closed_form_marginals(graph: &FactorGraph, table: &WeightTable) -> Result<MarginalTable, InferError> {
    let coupled = graph.factors.iter().filter(|f| f.vars.len() > 1).count();
    if coupled > 0 {
        return Err(InferError::Coupled(coupled));
    }
    let weights = graph.resolve(table);
    let cond = Conditionals::new(graph, &weights);
    let mut assignment = graph.initial_assignment();
    Ok(MarginalTable {
        rows: graph
            .query_variables()
            .map(|v| (v.id, softmax(&cond.scores(graph, &weights, v.id, &mut assignment))))
            .collect(),
    })
}
