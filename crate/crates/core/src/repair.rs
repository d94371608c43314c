//! MAP repairs from marginals, scoring against ground truth, and the
//! line-delimited report.

use std::collections::HashMap;
use std::io::{self, Write};

use serde::Serialize;

use crate::dataset::{CellRef, Dataset};
use crate::infer::{FactorGraph, MarginalTable};

/// The MAP value of one query variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub cell: CellRef,
    pub old: Option<String>,
    pub value: String,
    pub marginal: f64,
}

impl Decision {
    pub fn is_repair(&self) -> bool {
        self.old.as_deref() != Some(self.value.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub cell: CellRef,
    pub old: Option<String>,
    pub new: String,
    pub marginal: f64,
}

/// Argmax per query variable. Ties go to the initial value, then to the
/// lexicographically smallest candidate.
///
/// # Panics
/// If a query variable has no marginal row.
pub fn map_decisions(graph: &FactorGraph, marginals: &MarginalTable) -> Vec<Decision> {
    graph
        .query_variables()
        .map(|v| {
            let row = marginals
                .get(v.id)
                .unwrap_or_else(|| panic!("no marginals for {}", v.cell));
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..row.len()).filter(|&d| row[d] == best).collect();
            let pick = tied
                .iter()
                .copied()
                .find(|&d| Some(d) == v.init)
                .or_else(|| tied.iter().copied().min_by(|&a, &b| v.domain[a].cmp(&v.domain[b])))
                .expect("non-empty domain");
            Decision {
                cell: v.cell,
                old: v.init.map(|i| v.domain[i].clone()),
                value: v.domain[pick].clone(),
                marginal: row[pick],
            }
        })
        .collect()
}

pub fn map_repairs(decisions: &[Decision]) -> Vec<Repair> {
    decisions
        .iter()
        .filter(|d| d.is_repair())
        .map(|d| Repair {
            cell: d.cell,
            old: d.old.clone(),
            new: d.value.clone(),
            marginal: d.marginal,
        })
        .collect()
}

pub fn apply_repairs(dataset: &Dataset, repairs: &[Repair]) -> Dataset {
    dataset.with_values(repairs.iter().map(|r| (r.cell, Some(r.new.clone()))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EvalCounts {
    pub repairs: usize,
    pub correct: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: EvalCounts,
    pub no_repairs: bool,
}

impl EvalResult {
    pub fn from_counts(counts: EvalCounts) -> Self {
        let no_repairs = counts.repairs == 0;
        let precision = if no_repairs {
            0.0
        } else {
            counts.correct as f64 / counts.repairs as f64
        };
        let recall = if counts.errors == 0 {
            1.0
        } else {
            counts.correct as f64 / counts.errors as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalResult {
            precision,
            recall,
            f1,
            counts,
            no_repairs,
        }
    }
}

pub type GroundTruth = HashMap<CellRef, Option<String>>;

/// Scores repairs on the cells the ground truth covers. Errors are all
/// covered cells whose initial value is wrong, detected or not.
pub fn evaluate(repairs: &[Repair], dataset: &Dataset, truth: &GroundTruth) -> EvalResult {
    let mut counts = EvalCounts {
        errors: truth
            .iter()
            .filter(|(cell, v)| dataset.value(**cell) != v.as_deref())
            .count(),
        ..Default::default()
    };
    let mut uncovered = 0;
    for r in repairs {
        match truth.get(&r.cell) {
            Some(v) => {
                counts.repairs += 1;
                counts.correct += usize::from(v.as_deref() == Some(r.new.as_str()));
            }
            None => uncovered += 1,
        }
    }
    if uncovered > 0 {
        log::warn!("{uncovered} repairs fall outside the ground truth and are not scored");
    }
    EvalResult::from_counts(counts)
}

/// Lower edges of the report buckets; the last one is closed at 1.
pub const BUCKET_EDGES: [f64; 6] = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9];

pub fn bucket_of(marginal: f64) -> usize {
    BUCKET_EDGES.iter().filter(|&&e| marginal >= e).count().max(1) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub lower: f64,
    pub upper: f64,
    /// Query variables whose MAP marginal falls here.
    pub count: usize,
    pub repairs: usize,
    /// Repairs matching the ground truth, when one was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<usize>,
}

impl Bucket {
    pub fn precision(&self) -> Option<f64> {
        match (self.correct, self.repairs) {
            (Some(c), r) if r > 0 => Some(c as f64 / r as f64),
            _ => None,
        }
    }
}

pub fn buckets(decisions: &[Decision], truth: Option<&GroundTruth>) -> Vec<Bucket> {
    let mut out: Vec<Bucket> = BUCKET_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lower)| Bucket {
            lower,
            upper: BUCKET_EDGES.get(i + 1).copied().unwrap_or(1.0),
            count: 0,
            repairs: 0,
            correct: truth.map(|_| 0),
        })
        .collect();
    for d in decisions {
        let b = &mut out[bucket_of(d.marginal)];
        b.count += 1;
        if d.is_repair() {
            b.repairs += 1;
            if let (Some(c), Some(t)) = (b.correct.as_mut(), truth) {
                *c += usize::from(t.get(&d.cell).is_some_and(|v| v.as_deref() == Some(d.value.as_str())));
            }
        }
    }
    out
}

#[derive(Serialize)]
struct Record<'a> {
    tid: &'a str,
    attribute: &'a str,
    old: Option<&'a str>,
    new: &'a str,
    marginal: f64,
    repaired: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    query_variables: usize,
    repairs: usize,
    buckets: &'a [Bucket],
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluation: Option<&'a EvalResult>,
}

/// One JSON object per query variable, then a `{"summary": ...}` line.
pub fn write_report<W: Write>(
    mut out: W,
    dataset: &Dataset,
    decisions: &[Decision],
    truth: Option<&GroundTruth>,
    evaluation: Option<&EvalResult>,
) -> io::Result<()> {
    for d in decisions {
        let rec = Record {
            tid: dataset.tuple_id(d.cell.tuple),
            attribute: dataset.attribute_name(d.cell.attr),
            old: d.old.as_deref(),
            new: &d.value,
            marginal: d.marginal,
            repaired: d.is_repair(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    let buckets = buckets(decisions, truth);
    let summary = Summary {
        query_variables: decisions.len(),
        repairs: decisions.iter().filter(|d| d.is_repair()).count(),
        buckets: &buckets,
        evaluation,
    };
    serde_json::to_writer(&mut out, &serde_json::json!({ "summary": summary }))?;
    out.write_all(b"\n")?;
    out.flush()
}
