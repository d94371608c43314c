//! Violation detection, the conflict hypergraph, and the noisy/clean split.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;

use crate::constraints::{BoundConstraint, ConstraintId, DenialConstraint};
use crate::dataset::{CellRef, DataError, Dataset};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub constraint: ConstraintId,
    /// Binding `(t1, t2)`; equal for single-tuple constraints.
    pub tuples: (usize, usize),
    pub cells: BTreeSet<CellRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hyperedge {
    pub constraint: ConstraintId,
    pub cells: BTreeSet<CellRef>,
}

impl Hyperedge {
    pub fn tuples(&self) -> BTreeSet<usize> {
        self.cells.iter().map(|c| c.tuple).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConflictHypergraph {
    pub nodes: BTreeSet<CellRef>,
    pub edges: Vec<Hyperedge>,
}

impl ConflictHypergraph {
    pub fn from_violations(violations: &[Violation]) -> Self {
        let mut graph = ConflictHypergraph::default();
        for v in violations {
            graph.nodes.extend(v.cells.iter().copied());
            graph.edges.push(Hyperedge {
                constraint: v.constraint,
                cells: v.cells.clone(),
            });
        }
        graph
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DetectionResult {
    pub noisy: BTreeSet<CellRef>,
    pub clean: BTreeSet<CellRef>,
}

impl DetectionResult {
    pub fn is_noisy(&self, cell: CellRef) -> bool {
        self.noisy.contains(&cell)
    }
}

/// Finds every binding under which all predicates of a constraint hold.
pub fn detect_violations(
    dataset: &Dataset,
    constraints: &[DenialConstraint],
    sim_threshold: f64,
) -> Result<(Vec<Violation>, ConflictHypergraph), DataError> {
    let bound = constraints
        .iter()
        .map(|dc| dc.bind(dataset))
        .collect::<Result<Vec<_>, _>>()?;
    let mut violations: Vec<Violation> = bound
        .par_iter()
        .map(|dc| scan(dataset, dc, sim_threshold))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    violations.sort();
    let graph = ConflictHypergraph::from_violations(&violations);
    Ok((violations, graph))
}

fn scan(dataset: &Dataset, dc: &BoundConstraint, sim: f64) -> Vec<Violation> {
    let n = dataset.num_tuples();
    // Keyed by cell set so both orientations of a pair collapse; the first
    // binding found in (t1, t2) order is kept.
    let mut found: BTreeMap<BTreeSet<CellRef>, (usize, usize)> = BTreeMap::new();
    let mut record = |t1: usize, t2: usize| {
        if dc.violated_by(dataset, t1, t2, sim) {
            let cells: BTreeSet<CellRef> = dc.cells_under(t1, t2).collect();
            found.entry(cells).or_insert((t1, t2));
        }
    };

    if dc.arity == 1 {
        (0..n).for_each(|t| record(t, t));
    } else if let Some((a1, a2)) = dc.equi_join() {
        let mut index: HashMap<&str, Vec<usize>> = HashMap::new();
        for t in 0..n {
            if let Some(v) = dataset.value(CellRef::new(t, a2)) {
                index.entry(v).or_default().push(t);
            }
        }
        for t1 in 0..n {
            let Some(v) = dataset.value(CellRef::new(t1, a1)) else {
                continue;
            };
            for &t2 in index.get(v).into_iter().flatten() {
                if t2 != t1 {
                    record(t1, t2);
                }
            }
        }
    } else {
        for t1 in 0..n {
            for t2 in (0..n).filter(|&t2| t2 != t1) {
                record(t1, t2);
            }
        }
    }

    found
        .into_iter()
        .map(|(cells, tuples)| Violation {
            constraint: dc.id,
            tuples,
            cells,
        })
        .collect()
}

pub fn split_noisy_clean(
    dataset: &Dataset,
    hypergraph: &ConflictHypergraph,
    extra_noisy: &BTreeSet<CellRef>,
) -> DetectionResult {
    let noisy: BTreeSet<CellRef> = hypergraph.nodes.union(extra_noisy).copied().collect();
    let clean = dataset.cells().filter(|c| !noisy.contains(c)).collect();
    DetectionResult { noisy, clean }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{parse_dc, parse_dc_file};
    use crate::synthetic::inspection;
    use proptest::prelude::*;

    fn snippet() -> Dataset {
        Dataset::from_reader(inspection().data.as_bytes(), &Default::default()).unwrap()
    }

    fn cells(ds: &Dataset, list: &[(usize, &str)]) -> BTreeSet<CellRef> {
        list.iter()
            .map(|&(t, a)| CellRef::new(t, ds.attribute_index(a).unwrap()))
            .collect()
    }

    const C1: &str = "t1&t2&EQ(t1.DBAName,t2.DBAName)&IQ(t1.Zip,t2.Zip)";
    const C2_CITY: &str = "t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.City,t2.City)";

    #[test]
    fn inspection_dba_zip_violations() {
        let ds = snippet();
        let (v, _) = detect_violations(&ds, &[parse_dc(C1).unwrap()], 0.8).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].tuples, (0, 1));
        assert_eq!(v[1].tuples, (0, 2));
        assert_eq!(v[0].cells, cells(&ds, &[(0, "DBAName"), (1, "DBAName"), (0, "Zip"), (1, "Zip")]));
    }

    #[test]
    fn inspection_zip_city_violation() {
        let ds = snippet();
        let (v, _) = detect_violations(&ds, &[parse_dc(C2_CITY).unwrap()], 0.8).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].tuples, (0, 3));
        assert_eq!(v[0].cells, cells(&ds, &[(0, "Zip"), (3, "Zip"), (0, "City"), (3, "City")]));
    }

    #[test]
    fn inspection_noisy_split() {
        let ds = snippet();
        let dcs = parse_dc_file(&format!("{C1}\n{C2_CITY}\n")).unwrap();
        let (_, graph) = detect_violations(&ds, &dcs, 0.8).unwrap();
        let split = split_noisy_clean(&ds, &graph, &BTreeSet::new());
        assert_eq!(split.noisy.len(), 9);
        assert_eq!(split.clean.len(), 15);
        let expected = cells(
            &ds,
            &[
                (0, "DBAName"),
                (0, "Zip"),
                (0, "City"),
                (1, "DBAName"),
                (1, "Zip"),
                (2, "DBAName"),
                (2, "Zip"),
                (3, "Zip"),
                (3, "City"),
            ],
        );
        assert_eq!(split.noisy, expected);
        let extra = cells(&ds, &[(3, "DBAName")]);
        assert_eq!(split_noisy_clean(&ds, &graph, &extra).noisy.len(), 10);
    }

    #[test]
    fn clean_data_has_no_violations() {
        let ds = Dataset::from_rows(&["Zip", "City"], &vec![vec![Some("1"), Some("a")]; 5]).unwrap();
        let (v, g) = detect_violations(&ds, &[parse_dc("t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.City,t2.City)").unwrap()], 0.8)
            .unwrap();
        assert!(v.is_empty() && g.is_empty());
        assert!(split_noisy_clean(&ds, &g, &BTreeSet::new()).noisy.is_empty());
    }

    #[test]
    fn single_tuple_and_unknown_attribute() {
        let ds = snippet();
        let dc = parse_dc("t1&EQ(t1.City,\"Cicago\")").unwrap();
        let (v, _) = detect_violations(&ds, &[dc], 0.8).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].tuples, (3, 3));
        let bad = parse_dc("t1&EQ(t1.Nope,\"x\")").unwrap();
        assert!(detect_violations(&ds, &[bad], 0.8).is_err());
    }

    /// Exhaustive ordered-pair scan without the join shortcut.
    fn oracle(ds: &Dataset, dc: &DenialConstraint) -> BTreeSet<BTreeSet<CellRef>> {
        let b = dc.bind(ds).unwrap();
        let n = ds.num_tuples();
        let mut out = BTreeSet::new();
        for t1 in 0..n {
            for t2 in 0..n {
                if (b.arity == 2 && t1 == t2) || (b.arity == 1 && t1 != t2) {
                    continue;
                }
                if b.violated_by(ds, t1, t2, 0.8) {
                    out.insert(b.cells_under(t1, t2).collect());
                }
            }
        }
        out
    }

    fn table() -> impl Strategy<Value = Vec<Vec<Option<&'static str>>>> {
        let cell = prop_oneof![
            1 => Just(None),
            6 => prop::sample::select(vec!["1", "2", "3", "ab", "abc"]).prop_map(Some),
        ];
        prop::collection::vec(prop::collection::vec(cell, 3), 0..12)
    }

    const DCS: &[&str] = &[
        "t1&t2&EQ(t1.A,t2.A)&IQ(t1.B,t2.B)",
        "t1&t2&EQ(t1.A,t2.B)&LT(t1.C,t2.C)",
        "t1&t2&IQ(t1.A,t2.A)&SIM(t1.B,t2.C)",
        "t1&t2&LTE(t1.A,t2.A)&GT(t1.B,t2.B)&EQ(t1.C,\"ab\")",
        "t1&GTE(t1.A,2)&IQ(t1.B,t1.C)",
    ];

    proptest! {
        #[test]
        fn matches_exhaustive_oracle(rows in table(), which in 0..DCS.len()) {
            let ds = Dataset::from_rows(&["A", "B", "C"], &rows).unwrap();
            let dc = parse_dc(DCS[which]).unwrap();
            let (v, _) = detect_violations(&ds, std::slice::from_ref(&dc), 0.8).unwrap();
            let got: BTreeSet<_> = v.iter().map(|v| v.cells.clone()).collect();
            prop_assert_eq!(got.len(), v.len());
            prop_assert_eq!(got, oracle(&ds, &dc));
        }

        #[test]
        fn permutation_invariant(rows in table(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let ds = Dataset::from_rows(&["A", "B", "C"], &rows).unwrap();
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<_> = order.iter().map(|&i| rows[i].clone()).collect();
            let permuted = Dataset::from_rows(&["A", "B", "C"], &shuffled).unwrap();
            let dcs = parse_dc_file(&DCS.join("\n")).unwrap();
            // Map cells back to original row positions before comparing.
            let canon = |v: Vec<Violation>, map: &dyn Fn(usize) -> usize| -> BTreeSet<(ConstraintId, BTreeSet<CellRef>)> {
                v.into_iter()
                    .map(|v| (v.constraint, v.cells.into_iter().map(|c| CellRef::new(map(c.tuple), c.attr)).collect()))
                    .collect()
            };
            let a = canon(detect_violations(&ds, &dcs, 0.8).unwrap().0, &|t| t);
            let b = canon(detect_violations(&permuted, &dcs, 0.8).unwrap().0, &|t| order[t]);
            prop_assert_eq!(a, b);
        }
    }
}
