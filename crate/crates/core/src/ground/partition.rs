//! Per-constraint tuple groups: connected components of the violations of
//! each constraint, projected to tuples.

use std::collections::{BTreeMap, BTreeSet};

use crate::constraints::{ConstraintId, DenialConstraint};
use crate::detect::ConflictHypergraph;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Group {
    pub constraint: ConstraintId,
    /// Sorted tuple indices.
    pub tuples: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartitionPlan {
    pub groups: Vec<Group>,
}

impl PartitionPlan {
    /// One group holding every tuple for each constraint, i.e. grounding
    /// without partitioning.
    pub fn unpartitioned(constraints: &[DenialConstraint], num_tuples: usize) -> Self {
        PartitionPlan {
            groups: constraints
                .iter()
                .map(|dc| Group {
                    constraint: dc.id,
                    tuples: (0..num_tuples).collect(),
                })
                .collect(),
        }
    }

    pub fn groups_for(&self, constraint: ConstraintId) -> impl Iterator<Item = &Group> {
        self.groups.iter().filter(move |g| g.constraint == constraint)
    }

    /// `sum |g|^2` over all groups.
    pub fn pair_bound(&self) -> usize {
        self.groups.iter().map(|g| g.tuples.len() * g.tuples.len()).sum()
    }

    /// Unordered within-group pairs `sum |g| (|g| - 1) / 2`.
    pub fn unordered_pairs(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.tuples.len() * g.tuples.len().saturating_sub(1) / 2)
            .sum()
    }
}

struct Dsu {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b,
            std::cmp::Ordering::Greater => self.parent[b] = a,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
    }
}

pub fn partition_groups(hypergraph: &ConflictHypergraph, constraints: &[DenialConstraint]) -> PartitionPlan {
    let mut groups = Vec::new();
    for dc in constraints {
        let edges: Vec<BTreeSet<usize>> = hypergraph
            .edges
            .iter()
            .filter(|e| e.constraint == dc.id)
            .map(|e| e.tuples())
            .collect();
        let tuples: Vec<usize> = edges.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let local: BTreeMap<usize, usize> = tuples.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let mut dsu = Dsu::new(tuples.len());
        for edge in &edges {
            let mut it = edge.iter().map(|t| local[t]);
            if let Some(first) = it.next() {
                it.for_each(|other| dsu.union(first, other));
            }
        }
        let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &t) in tuples.iter().enumerate() {
            components.entry(dsu.find(i)).or_default().push(t);
        }
        let mut own: Vec<Group> = components
            .into_values()
            .map(|tuples| Group {
                constraint: dc.id,
                tuples,
            })
            .collect();
        own.sort();
        groups.extend(own);
    }
    PartitionPlan { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::parse_dc_file;
    use crate::dataset::Dataset;
    use crate::detect::detect_violations;
    use crate::synthetic::inspection;

    #[test]
    fn inspection_groups() {
        let ds = Dataset::from_reader(inspection().data.as_bytes(), &Default::default()).unwrap();
        let dcs = parse_dc_file(
            "t1&t2&EQ(t1.DBAName,t2.DBAName)&IQ(t1.Zip,t2.Zip)\nt1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.City,t2.City)\n",
        )
        .unwrap();
        let (_, graph) = detect_violations(&ds, &dcs, 0.8).unwrap();
        let plan = partition_groups(&graph, &dcs);
        assert_eq!(
            plan.groups,
            vec![
                Group {
                    constraint: ConstraintId(0),
                    tuples: vec![0, 1, 2]
                },
                Group {
                    constraint: ConstraintId(1),
                    tuples: vec![0, 3]
                },
            ]
        );
        assert_eq!(plan.pair_bound(), 13);
        assert_eq!(plan.unordered_pairs(), 4);
    }

    #[test]
    fn empty_hypergraph_gives_empty_plan() {
        let dcs = parse_dc_file("t1&t2&EQ(t1.A,t2.A)&IQ(t1.B,t2.B)\n").unwrap();
        assert!(partition_groups(&ConflictHypergraph::default(), &dcs).groups.is_empty());
    }
}
