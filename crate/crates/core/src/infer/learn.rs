use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::graph::{log_sum_exp, softmax, FactorBody, FactorGraph, TrainingExample, WeightTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            epochs: 20,
            learning_rate: 0.1,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("non-finite loss {loss} at epoch {epoch} on training cell {cell}")]
    NonFinite { epoch: usize, cell: String, loss: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutcome {
    pub weights: WeightTable,
    /// Full training objective after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Regularized mean negative log-likelihood of the training cells under the
/// unary submodel, over a weight vector aligned with the graph's keys.
pub struct Objective<'a> {
    graph: &'a FactorGraph,
    l2: f64,
    learnable: Vec<bool>,
}

impl<'a> Objective<'a> {
    pub fn new(graph: &'a FactorGraph, l2: f64) -> Self {
        Objective {
            graph,
            l2,
            learnable: graph.keys.iter().map(|k| !k.is_fixed()).collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.learnable.len()
    }

    pub fn is_learnable(&self, i: usize) -> bool {
        self.learnable[i]
    }

    /// Starting point: learnable weights 0, fixed ones at their values.
    pub fn initial_point(&self) -> Vec<f64> {
        self.graph.resolve(&WeightTable::default())
    }

    fn pinned(&self, w: &[f64]) -> Vec<f64> {
        let fixed = self.initial_point();
        w.iter()
            .zip(&fixed)
            .zip(&self.learnable)
            .map(|((&w, &f), &l)| if l { w } else { f })
            .collect()
    }

    fn regularizer(&self, w: &[f64]) -> f64 {
        0.5 * self.l2
            * w.iter()
                .zip(&self.learnable)
                .filter(|(_, &l)| l)
                .map(|(w, _)| w * w)
                .sum::<f64>()
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let w = self.pinned(w);
        let n = self.graph.examples.len();
        if n == 0 {
            return self.regularizer(&w);
        }
        let nll: f64 = self
            .graph
            .examples
            .iter()
            .map(|e| example_loss(self.graph, e, &w))
            .sum();
        nll / n as f64 + self.regularizer(&w)
    }

    /// Gradient with respect to every key; fixed keys get 0.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let w = self.pinned(w);
        let mut g = vec![0.0; w.len()];
        let n = self.graph.examples.len();
        if n > 0 {
            for e in &self.graph.examples {
                example_gradient(self.graph, e, &w, 1.0 / n as f64, &mut |k, v| g[k] += v);
            }
        }
        for (i, gi) in g.iter_mut().enumerate() {
            if self.learnable[i] {
                *gi += self.l2 * w[i];
            } else {
                *gi = 0.0;
            }
        }
        g
    }
}

fn example_loss(graph: &FactorGraph, e: &TrainingExample, w: &[f64]) -> f64 {
    let scores = graph.example_scores(e, w);
    log_sum_exp(&scores) - scores[e.label]
}

/// Calls `sink(key, scale * dNLL/dw_key)` for each factor of the example.
fn example_gradient(graph: &FactorGraph, e: &TrainingExample, w: &[f64], scale: f64, sink: &mut dyn FnMut(usize, f64)) {
    let p = softmax(&graph.example_scores(e, w));
    for f in &e.factors {
        if let FactorBody::Unary { active } = &f.body {
            let g: f64 = active
                .iter()
                .map(|&(d, m)| m * (p[d] - if d == e.label { 1.0 } else { 0.0 }))
                .sum();
            sink(f.weight, scale * g);
        }
    }
}

/// Single-example SGD in a seeded shuffled order, with the L2 term applied
/// to the keys each example touches.
pub fn learn_weights(graph: &FactorGraph, config: &LearnConfig) -> Result<LearnOutcome, LearnError> {
    let objective = Objective::new(graph, config.l2);
    let mut w = objective.initial_point();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    if graph.examples.is_empty() {
        log::warn!("no training cells; learnable weights stay at 0");
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..graph.examples.len()).collect();
        let mut touched: Vec<(usize, f64)> = Vec::new();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let e = &graph.examples[i];
                let loss = example_loss(graph, e, &w);
                if !loss.is_finite() {
                    return Err(LearnError::NonFinite {
                        epoch,
                        cell: e.cell.to_string(),
                        loss,
                    });
                }
                touched.clear();
                example_gradient(graph, e, &w, 1.0, &mut |k, v| touched.push((k, v)));
                touched.sort_by_key(|&(k, _)| k);
                let mut j = 0;
                while j < touched.len() {
                    let k = touched[j].0;
                    let mut g = 0.0;
                    while j < touched.len() && touched[j].0 == k {
                        g += touched[j].1;
                        j += 1;
                    }
                    if objective.is_learnable(k) {
                        w[k] -= config.learning_rate * (g + config.l2 * w[k]);
                    }
                }
            }
            let loss = objective.value(&w);
            if !loss.is_finite() {
                return Err(LearnError::NonFinite {
                    epoch,
                    cell: "<all>".into(),
                    loss,
                });
            }
            log::debug!("epoch {epoch}: objective {loss:.6}");
            epoch_losses.push(loss);
        }
    }
    let mut weights = WeightTable::default();
    for (i, key) in graph.keys.iter().enumerate() {
        if objective.is_learnable(i) {
            weights.set(key.clone(), w[i]);
        }
    }
    Ok(LearnOutcome { weights, epoch_losses })
}
