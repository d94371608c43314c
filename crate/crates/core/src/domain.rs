//! Co-occurrence statistics and candidate-domain pruning.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use indexmap::IndexSet;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{CellRef, Dataset};

/// Cells whose initial value is NULL and that gain no candidates from their
/// co-cells fall back to this many of the attribute's most frequent values.
pub const NULL_FALLBACK_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("value {value:?} never appears in attribute {attr}; conditional undefined")]
    UndefinedConditional { attr: usize, value: String },
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
}

/// Unary and pairwise value counts over non-NULL initial values.
#[derive(Debug, Clone)]
pub struct CoocTable {
    n_attrs: usize,
    values: Vec<IndexSet<String>>,
    unary: Vec<Vec<u32>>,
    /// `pair[a * n_attrs + b][id of v' in b]` lists `(id of v in a, #(v, v'))`.
    pair: Vec<Vec<Vec<(u32, u32)>>>,
}

impl CoocTable {
    pub fn build(dataset: &Dataset) -> Self {
        let n_attrs = dataset.num_attributes();
        let mut values: Vec<IndexSet<String>> = vec![IndexSet::new(); n_attrs];
        let mut ids: Vec<Vec<Option<u32>>> = vec![Vec::with_capacity(dataset.num_tuples()); n_attrs];
        for (a, column) in ids.iter_mut().enumerate() {
            for v in dataset.column(a) {
                column.push(v.map(|v| values[a].insert_full(v.to_string()).0 as u32));
            }
        }
        let mut unary: Vec<Vec<u32>> = values.iter().map(|s| vec![0; s.len()]).collect();
        for (a, column) in ids.iter().enumerate() {
            for id in column.iter().flatten() {
                unary[a][*id as usize] += 1;
            }
        }
        let pair = (0..n_attrs * n_attrs)
            .into_par_iter()
            .map(|ab| {
                let (a, b) = (ab / n_attrs, ab % n_attrs);
                if a == b {
                    return Vec::new();
                }
                let mut counts: Vec<HashMap<u32, u32>> = vec![HashMap::new(); values[b].len()];
                for (va, vb) in ids[a].iter().zip(&ids[b]) {
                    if let (Some(va), Some(vb)) = (va, vb) {
                        *counts[*vb as usize].entry(*va).or_default() += 1;
                    }
                }
                counts
                    .into_iter()
                    .map(|m| {
                        let mut row: Vec<(u32, u32)> = m.into_iter().collect();
                        row.sort_unstable();
                        row
                    })
                    .collect()
            })
            .collect();
        CoocTable {
            n_attrs,
            values,
            unary,
            pair,
        }
    }

    pub fn count(&self, attr: usize, value: &str) -> u32 {
        self.values[attr]
            .get_index_of(value)
            .map_or(0, |i| self.unary[attr][i])
    }

    /// `#(v, v')`: tuples with `attr_a = v` and `attr_b = v'`.
    pub fn pair_count(&self, attr_a: usize, v: &str, attr_b: usize, v_prime: &str) -> u32 {
        if attr_a == attr_b {
            return if v == v_prime { self.count(attr_a, v) } else { 0 };
        }
        let (Some(ia), Some(ib)) = (
            self.values[attr_a].get_index_of(v),
            self.values[attr_b].get_index_of(v_prime),
        ) else {
            return 0;
        };
        let row = &self.pair[attr_a * self.n_attrs + attr_b][ib];
        row.binary_search_by_key(&(ia as u32), |&(id, _)| id)
            .map_or(0, |k| row[k].1)
    }

    /// Values of `attr_a` co-occurring with `v'` in `attr_b`, with counts.
    fn cooccurring(&self, attr_a: usize, attr_b: usize, v_prime: &str) -> impl Iterator<Item = (&str, u32)> {
        let row = self.values[attr_b]
            .get_index_of(v_prime)
            .map(|ib| self.pair[attr_a * self.n_attrs + attr_b][ib].as_slice())
            .unwrap_or(&[]);
        row.iter()
            .map(move |&(ia, n)| (self.values[attr_a][ia as usize].as_str(), n))
    }

    /// Distinct values of an attribute in first-seen order.
    pub fn values(&self, attr: usize) -> impl Iterator<Item = &str> {
        self.values[attr].iter().map(String::as_str)
    }

    /// The `k` most frequent values of an attribute, ties lexicographic.
    pub fn most_frequent(&self, attr: usize, k: usize) -> Vec<String> {
        let mut all: Vec<(u32, &str)> = self.values[attr]
            .iter()
            .zip(&self.unary[attr])
            .map(|(v, &n)| (n, v.as_str()))
            .collect();
        all.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(y.1)));
        all.into_iter().take(k).map(|(_, v)| v.to_string()).collect()
    }
}

/// `Pr[v | v'] = #(v, v') / #v'`.
pub fn cooc_prob(
    table: &CoocTable,
    attr_a: usize,
    v: &str,
    attr_b: usize,
    v_prime: &str,
) -> Result<f64, DomainError> {
    let denom = table.count(attr_b, v_prime);
    if denom == 0 {
        return Err(DomainError::UndefinedConditional {
            attr: attr_b,
            value: v_prime.to_string(),
        });
    }
    Ok(f64::from(table.pair_count(attr_a, v, attr_b, v_prime)) / f64::from(denom))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateDomain {
    pub cell: CellRef,
    pub candidates: Vec<String>,
}

impl CandidateDomain {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn position(&self, value: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c == value)
    }

    pub fn contains(&self, value: &str) -> bool {
        self.position(value).is_some()
    }
}

/// Candidate repairs for one cell: every value of the cell's attribute whose
/// conditional probability given some non-NULL co-cell reaches `tau`, plus
/// the initial value.
pub fn cell_candidates(dataset: &Dataset, table: &CoocTable, cell: CellRef, tau: f64) -> CandidateDomain {
    let a = cell.attr;
    // Best conditional seen for each value, used for ordering.
    let mut best: HashMap<&str, f64> = HashMap::new();
    let mut admitted: BTreeSet<&str> = BTreeSet::new();
    let mut any_cocell = false;
    for b in (0..dataset.num_attributes()).filter(|&b| b != a) {
        let Some(v_prime) = dataset.value(CellRef::new(cell.tuple, b)) else {
            continue;
        };
        let denom = table.count(b, v_prime);
        if denom == 0 {
            continue;
        }
        any_cocell = true;
        for (v, n) in table.cooccurring(a, b, v_prime) {
            let p = f64::from(n) / f64::from(denom);
            let slot = best.entry(v).or_insert(0.0);
            *slot = slot.max(p);
            if p >= tau {
                admitted.insert(v);
            }
        }
    }
    if tau <= 0.0 && any_cocell {
        admitted.extend(table.values(a));
    }

    let init = dataset.value(cell);
    if let Some(v) = init {
        admitted.insert(v);
    } else if admitted.is_empty() {
        return CandidateDomain {
            cell,
            candidates: table.most_frequent(a, NULL_FALLBACK_CAP),
        };
    }

    let mut ordered: Vec<(&str, f64)> = admitted
        .into_iter()
        .map(|v| (v, best.get(v).copied().unwrap_or(0.0)))
        .collect();
    ordered.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(Ordering::Equal).then(x.0.cmp(y.0)));
    CandidateDomain {
        cell,
        candidates: ordered.into_iter().map(|(v, _)| v.to_string()).collect(),
    }
}

pub fn prune_domain(
    dataset: &Dataset,
    table: &CoocTable,
    noisy: &BTreeSet<CellRef>,
    tau: f64,
) -> Result<BTreeMap<CellRef, CandidateDomain>, DomainError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(DomainError::BadThreshold(tau));
    }
    let cells: Vec<CellRef> = noisy.iter().copied().collect();
    Ok(cells
        .par_iter()
        .map(|&c| (c, cell_candidates(dataset, table, c, tau)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::inspection;
    use proptest::prelude::*;

    fn snippet() -> Dataset {
        Dataset::from_reader(inspection().data.as_bytes(), &Default::default()).unwrap()
    }

    #[test]
    fn inspection_conditionals() {
        let ds = snippet();
        let t = CoocTable::build(&ds);
        let (zip, city, state) = (5, 3, 4);
        assert_eq!(cooc_prob(&t, zip, "60609", city, "Chicago").unwrap(), 2.0 / 3.0);
        assert_eq!(cooc_prob(&t, city, "Chicago", state, "IL").unwrap(), 0.75);
        assert_eq!(cooc_prob(&t, zip, "60609", city, "Cicago").unwrap(), 0.0);
        assert!(cooc_prob(&t, zip, "60609", city, "Springfield").is_err());
    }

    #[test]
    fn inspection_pruning() {
        let ds = snippet();
        let t = CoocTable::build(&ds);
        let cell = ds.cell("1", "Zip").unwrap();
        let noisy = BTreeSet::from([cell]);
        let at = |tau| prune_domain(&ds, &t, &noisy, tau).unwrap()[&cell].candidates.clone();
        assert_eq!(at(0.5), vec!["60609", "60608"]);
        assert_eq!(at(0.7), vec!["60608"]);
        let mut full = at(0.0);
        full.sort();
        assert_eq!(full, vec!["60608", "60609"]);
        assert!(prune_domain(&ds, &t, &noisy, 1.5).is_err());
    }

    #[test]
    fn null_cell_falls_back_to_frequent_values() {
        let ds = Dataset::from_rows(
            &["A", "B"],
            &[
                vec![Some("x"), None],
                vec![Some("y"), Some("p")],
                vec![Some("y"), Some("q")],
                vec![Some("z"), Some("q")],
            ],
        )
        .unwrap();
        let t = CoocTable::build(&ds);
        let cell = CellRef::new(0, 1);
        // x never co-occurs with a B value, so the fallback applies.
        assert_eq!(cell_candidates(&ds, &t, cell, 0.5).candidates, vec!["q", "p"]);
        let cell = CellRef::new(0, 0);
        assert_eq!(cell_candidates(&ds, &t, cell, 0.5).candidates, vec!["x"]);
    }

    fn table() -> impl Strategy<Value = Vec<Vec<Option<&'static str>>>> {
        let cell = prop_oneof![
            1 => Just(None),
            5 => prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(Some),
        ];
        prop::collection::vec(prop::collection::vec(cell, 3), 1..15)
    }

    proptest! {
        #[test]
        fn tau_monotone(rows in table()) {
            let ds = Dataset::from_rows(&["A", "B", "C"], &rows).unwrap();
            let t = CoocTable::build(&ds);
            let noisy: BTreeSet<CellRef> = ds.cells().collect();
            let grid = [0.0, 0.3, 0.5, 0.7, 0.9];
            let doms: Vec<_> = grid.iter().map(|&tau| prune_domain(&ds, &t, &noisy, tau).unwrap()).collect();
            // The NULL fallback is deliberately outside the threshold rule.
            for w in doms.windows(2) {
                for c in noisy.iter().filter(|c| ds.value(**c).is_some()) {
                    let lo: BTreeSet<_> = w[0][c].candidates.iter().collect();
                    let hi: BTreeSet<_> = w[1][c].candidates.iter().collect();
                    prop_assert!(hi.is_subset(&lo));
                }
            }
            for c in &noisy {
                if let Some(v) = ds.value(*c) {
                    prop_assert!(doms[4][c].contains(v));
                }
            }
        }
    }
}
