//! End-to-end orchestration: load, detect, prune, match, partition, ground,
//! learn, infer, repair.

use std::collections::BTreeSet;
use std::error::Error as StdError;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::constraints::{parse_dc_file, parse_md_file, DenialConstraint, MatchingDependency};
use crate::dataset::{load_cell_list, load_groundtruth, CellRef, Dataset, LoadOptions};
use crate::detect::{detect_violations, split_noisy_clean};
use crate::domain::{prune_domain, CoocTable};
use crate::extdict::{match_dependencies, DictRegistry};
use crate::ground::{extend_domains, ground, partition_groups, GroundConfig, GroundInput, Grounded, Mode, PartitionPlan};
use crate::infer::{
    closed_form_marginals, exact_marginals, gibbs_marginals, learn_weights, FixedWeights, GibbsConfig, LearnConfig,
    LearnOutcome, MarginalTable,
};
use crate::repair::{apply_repairs, evaluate, map_decisions, map_repairs, write_report, Decision, EvalResult, GroundTruth, Repair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Inference {
    #[default]
    Gibbs,
    Exact,
    ClosedForm,
}

impl FromStr for Inference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gibbs" => Ok(Inference::Gibbs),
            "exact" => Ok(Inference::Exact),
            "closed-form" => Ok(Inference::ClosedForm),
            other => Err(format!("unknown inference {other:?}; expected gibbs, exact or closed-form")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub tau: f64,
    pub mode: Mode,
    pub sim_threshold: f64,
    pub prior_weight: f64,
    pub dc_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub samples: usize,
    pub burnin: usize,
    pub chains: usize,
    pub seed: u64,
    pub inference: Inference,
    /// Restrict coupled grounding to conflict components.
    pub partition: bool,
    pub neg_samples: usize,
    pub max_examples: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let learn = LearnConfig::default();
        let gibbs = GibbsConfig::default();
        let fixed = FixedWeights::default();
        let ground = GroundConfig::default();
        Settings {
            tau: ground.tau,
            mode: ground.mode,
            sim_threshold: ground.sim_threshold,
            prior_weight: fixed.prior,
            dc_weight: fixed.hard_dc,
            epochs: learn.epochs,
            learning_rate: learn.learning_rate,
            l2: learn.l2,
            samples: gibbs.samples,
            burnin: gibbs.burnin,
            chains: gibbs.chains,
            seed: 0,
            inference: Inference::Gibbs,
            partition: true,
            neg_samples: ground.neg_samples,
            max_examples: ground.max_examples,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must lie in [0, 1], got {v}"))
            }
        };
        unit("tau", self.tau)?;
        unit("sim-threshold", self.sim_threshold)?;
        for (name, v) in [
            ("prior-weight", self.prior_weight),
            ("dc-weight", self.dc_weight),
            ("lr", self.learning_rate),
            ("l2", self.l2),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.samples == 0 {
            return Err("samples must be positive".into());
        }
        if self.chains == 0 {
            return Err("chains must be positive".into());
        }
        Ok(())
    }

    fn fixed(&self) -> FixedWeights {
        FixedWeights {
            prior: self.prior_weight,
            hard_dc: self.dc_weight,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct InputPaths {
    pub input: PathBuf,
    pub dcs: PathBuf,
    pub dicts: Vec<(String, PathBuf)>,
    pub mds: Option<PathBuf>,
    pub noisy_cells: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
    pub tid_column: Option<String>,
    pub provenance_column: Option<String>,
}

pub struct Inputs {
    pub dataset: Dataset,
    pub constraints: Vec<DenialConstraint>,
    pub dicts: DictRegistry,
    pub mds: Vec<MatchingDependency>,
    /// Cells flagged by an external detector, on top of violations.
    pub noisy_cells: BTreeSet<CellRef>,
    pub groundtruth: Option<GroundTruth>,
}

impl Inputs {
    pub fn new(dataset: Dataset, constraints: Vec<DenialConstraint>) -> Self {
        Inputs {
            dataset,
            constraints,
            dicts: DictRegistry::new(),
            mds: Vec::new(),
            noisy_cells: BTreeSet::new(),
            groundtruth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Detect,
    Prune,
    Match,
    Ground,
    Learn,
    Infer,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Detect => "detect",
            Stage::Prune => "prune",
            Stage::Match => "match",
            Stage::Ground => "ground",
            Stage::Learn => "learn",
            Stage::Infer => "infer",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn StdError + Send + Sync>,
}

fn at<E: StdError + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        source: Box::new(e),
    }
}

fn read(stage: Stage, path: &PathBuf) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError {
        stage,
        source: format!("cannot read {}: {e}", path.display()).into(),
    })
}

pub fn load_inputs(paths: &InputPaths) -> Result<Inputs, PipelineError> {
    let load = Stage::Load;
    let options = LoadOptions {
        tid_column: paths.tid_column.clone(),
        provenance_column: paths.provenance_column.clone(),
    };
    let dataset = Dataset::load_csv(&paths.input, &options).map_err(at(load))?;
    let constraints = parse_dc_file(&read(load, &paths.dcs)?).map_err(at(load))?;
    let mut inputs = Inputs::new(dataset, constraints);
    for (id, path) in &paths.dicts {
        inputs.dicts.load_dict(path, id).map_err(at(load))?;
    }
    if let Some(p) = &paths.mds {
        inputs.mds = parse_md_file(&read(load, p)?).map_err(at(load))?;
    }
    if let Some(p) = &paths.noisy_cells {
        inputs.noisy_cells = load_cell_list(p, &inputs.dataset).map_err(at(load))?;
    }
    if let Some(p) = &paths.groundtruth {
        inputs.groundtruth = Some(load_groundtruth(p, &inputs.dataset).map_err(at(load))?);
    }
    Ok(inputs)
}

/// Wall-clock split: violation detection, compilation (pruning, matching,
/// partitioning, grounding), and learning plus inference.
#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub detection: Duration,
    pub compile: Duration,
    pub repair: Duration,
}

pub struct RepairOutcome {
    pub learned: LearnOutcome,
    pub marginals: MarginalTable,
    pub decisions: Vec<Decision>,
    pub repairs: Vec<Repair>,
    pub repaired: Dataset,
    pub evaluation: Option<EvalResult>,
}

pub struct Outcome {
    pub violations: usize,
    pub noisy_cells: usize,
    pub matched_facts: usize,
    pub plan: PartitionPlan,
    pub grounded: Grounded,
    /// `None` for a dry run.
    pub repair: Option<RepairOutcome>,
    pub timings: Timings,
}

impl Outcome {
    pub fn report(&self, inputs: &Inputs) -> Vec<u8> {
        let mut buf = Vec::new();
        if let Some(r) = &self.repair {
            write_report(
                &mut buf,
                &inputs.dataset,
                &r.decisions,
                inputs.groundtruth.as_ref(),
                r.evaluation.as_ref(),
            )
            .expect("writing to memory");
        }
        buf
    }

    /// Grounding counts and timings, for stderr.
    pub fn summary(&self) -> String {
        let s = &self.grounded.stats;
        let mut lines = vec![
            format!("violations: {}", self.violations),
            format!("noisy cells: {}", self.noisy_cells),
            format!("matched facts: {}", self.matched_facts),
            format!("groups: {} (pair bound {})", self.plan.groups.len(), s.pair_bound),
            format!(
                "variables: {} query, {} evidence; training cells: {}",
                s.query_variables, s.evidence_variables, s.training_examples
            ),
        ];
        for (kind, n) in &s.factors {
            lines.push(format!("factors {kind}: {n}"));
        }
        lines.push(format!("HARD_DC factors: {} (bound {})", s.hard_factors, s.pair_bound));
        if let Some(r) = &self.repair {
            lines.push(format!("repairs: {}", r.repairs.len()));
            if let Some(e) = &r.evaluation {
                lines.push(format!(
                    "precision {:.4} recall {:.4} f1 {:.4} ({} correct of {} repairs, {} errors)",
                    e.precision, e.recall, e.f1, e.counts.correct, e.counts.repairs, e.counts.errors
                ));
            }
        }
        let t = &self.timings;
        lines.push(format!(
            "time: detection {:.3}s, compile {:.3}s, repair {:.3}s",
            t.detection.as_secs_f64(),
            t.compile.as_secs_f64(),
            t.repair.as_secs_f64()
        ));
        lines.join("\n")
    }
}

/// Runs every stage; with `dry_run` it stops after grounding.
pub fn run(inputs: &Inputs, settings: &Settings, dry_run: bool) -> Result<Outcome, PipelineError> {
    settings.validate().map_err(|e| PipelineError {
        stage: Stage::Load,
        source: e.into(),
    })?;
    let ds = &inputs.dataset;
    let sim = settings.sim_threshold;

    let clock = Instant::now();
    let (violations, hypergraph) = detect_violations(ds, &inputs.constraints, sim).map_err(at(Stage::Detect))?;
    let detection = split_noisy_clean(ds, &hypergraph, &inputs.noisy_cells);
    let detection_time = clock.elapsed();
    log::info!("{} violations, {} noisy cells", violations.len(), detection.noisy.len());

    let clock = Instant::now();
    let table = CoocTable::build(ds);
    let mut domains = prune_domain(ds, &table, &detection.noisy, settings.tau).map_err(at(Stage::Prune))?;
    let facts = match_dependencies(ds, &inputs.dicts, &inputs.mds, sim).map_err(at(Stage::Match))?;
    extend_domains(&mut domains, &facts);
    let plan = if settings.partition {
        partition_groups(&hypergraph, &inputs.constraints)
    } else {
        PartitionPlan::unpartitioned(&inputs.constraints, ds.num_tuples())
    };
    let config = GroundConfig {
        mode: settings.mode,
        sim_threshold: sim,
        tau: settings.tau,
        fixed: settings.fixed(),
        neg_samples: settings.neg_samples,
        max_examples: settings.max_examples,
        seed: settings.seed,
    };
    let input = GroundInput {
        dataset: ds,
        table: &table,
        detection: &detection,
        domains: &domains,
        constraints: &inputs.constraints,
        plan: &plan,
        facts: &facts,
    };
    let grounded = ground(&input, &config).map_err(at(Stage::Ground))?;
    let compile_time = clock.elapsed();

    let mut outcome = Outcome {
        violations: violations.len(),
        noisy_cells: detection.noisy.len(),
        matched_facts: facts.len(),
        plan,
        grounded,
        repair: None,
        timings: Timings {
            detection: detection_time,
            compile: compile_time,
            repair: Duration::ZERO,
        },
    };
    if dry_run {
        return Ok(outcome);
    }

    let clock = Instant::now();
    let graph = &outcome.grounded.graph;
    let learned = learn_weights(
        graph,
        &LearnConfig {
            epochs: settings.epochs,
            learning_rate: settings.learning_rate,
            l2: settings.l2,
            seed: settings.seed,
        },
    )
    .map_err(at(Stage::Learn))?;
    let marginals = match settings.inference {
        Inference::Gibbs => gibbs_marginals(
            graph,
            &learned.weights,
            &GibbsConfig {
                samples: settings.samples,
                burnin: settings.burnin,
                seed: settings.seed,
                chains: settings.chains,
            },
        ),
        Inference::Exact => exact_marginals(graph, &learned.weights),
        Inference::ClosedForm => closed_form_marginals(graph, &learned.weights),
    }
    .map_err(at(Stage::Infer))?;
    let decisions = map_decisions(graph, &marginals);
    let repairs = map_repairs(&decisions);
    let repaired = apply_repairs(ds, &repairs);
    let evaluation = inputs.groundtruth.as_ref().map(|gt| evaluate(&repairs, ds, gt));
    outcome.timings.repair = clock.elapsed();
    outcome.repair = Some(RepairOutcome {
        learned,
        marginals,
        decisions,
        repairs,
        repaired,
        evaluation,
    });
    Ok(outcome)
}
