//! Rewriting a denial constraint into per-cell rules whose other cells are
//! read from initial values, so every grounded factor touches one variable.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::constraints::{BoundCell, BoundConstraint, BoundOperand, ConstraintId, Op};
use crate::dataset::{CellRef, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    /// The tuple owning the target cell.
    Own,
    Partner,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// The candidate value of the target cell.
    Target,
    Init(Slot, usize),
    Const(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub op: Op,
    pub lhs: Term,
    pub rhs: Term,
}

impl Atom {
    fn normalized(op: Op, lhs: Term, rhs: Term) -> Atom {
        match op {
            Op::Gt | Op::Gte => Atom {
                op: op.flipped(),
                lhs: rhs,
                rhs: lhs,
            },
            _ if op.is_symmetric() && rhs < lhs => Atom { op, lhs: rhs, rhs: lhs },
            _ => Atom { op, lhs, rhs },
        }
    }

    fn mentions_target(&self) -> bool {
        self.lhs == Term::Target || self.rhs == Term::Target
    }

    pub fn holds<'a>(&'a self, ds: &'a Dataset, candidate: &'a str, own: usize, partner: usize, sim: f64) -> bool {
        let eval = |t: &'a Term| -> Option<&'a str> {
            match t {
                Term::Target => Some(candidate),
                Term::Init(Slot::Own, a) => ds.value(CellRef::new(own, *a)),
                Term::Init(Slot::Partner, a) => ds.value(CellRef::new(partner, *a)),
                Term::Const(c) => Some(c),
            }
        };
        self.op.holds(eval(&self.lhs), eval(&self.rhs), sim)
    }
}

/// Penalizes candidates of `target_attr` that, together with the initial
/// values of the other cells, would complete a violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelaxedRule {
    pub constraint: ConstraintId,
    /// Index of the cell occurrence (in predicate order) this rule releases.
    pub position: usize,
    pub arity: u8,
    pub target_attr: usize,
    /// Atoms over initial values only.
    pub conditions: Vec<Atom>,
    /// Atoms involving the candidate value.
    pub target_atoms: Vec<Atom>,
}

impl RelaxedRule {
    pub fn conditions_hold(&self, ds: &Dataset, own: usize, partner: usize, sim: f64) -> bool {
        self.conditions.iter().all(|a| a.holds(ds, "", own, partner, sim))
    }

    pub fn violates(&self, ds: &Dataset, candidate: &str, own: usize, partner: usize, sim: f64) -> bool {
        self.target_atoms
            .iter()
            .all(|a| a.holds(ds, candidate, own, partner, sim))
    }

    /// `(own attribute, partner attribute)` of an equality condition, which
    /// lets partners be looked up by value.
    pub fn condition_join(&self) -> Option<(usize, usize)> {
        self.conditions.iter().find_map(|a| match (a.op, &a.lhs, &a.rhs) {
            (Op::Eq, Term::Init(Slot::Own, x), Term::Init(Slot::Partner, y)) => Some((*x, *y)),
            _ => None,
        })
    }

    /// Partner attribute compared for equality with the candidate.
    pub fn target_join(&self) -> Option<usize> {
        self.target_atoms.iter().find_map(|a| match (a.op, &a.lhs, &a.rhs) {
            (Op::Eq, Term::Target, Term::Init(Slot::Partner, y)) => Some(*y),
            _ => None,
        })
    }

    pub fn render(&self, ds: &Dataset) -> String {
        let term = |t: &Term| match t {
            Term::Target => format!("Value(t1.{})", ds.attribute_name(self.target_attr)),
            Term::Init(Slot::Own, a) => format!("Init(t1.{})", ds.attribute_name(*a)),
            Term::Init(Slot::Partner, a) => format!("Init(t2.{})", ds.attribute_name(*a)),
            Term::Const(c) => format!("{c:?}"),
        };
        let mut out = format!(
            "{}#{}: penalize Value(t1.{}) when",
            self.constraint,
            self.position,
            ds.attribute_name(self.target_attr)
        );
        let atoms: Vec<String> = self
            .target_atoms
            .iter()
            .chain(&self.conditions)
            .map(|a| format!("{}({}, {})", a.op, term(&a.lhs), term(&a.rhs)))
            .collect();
        let _ = write!(out, " {}", atoms.join(" & "));
        if self.arity == 2 {
            out.push_str(" for t2 != t1");
        }
        out
    }
}

/// One rule per cell occurrence of the constraint, relabelled so the target
/// sits in `t1`, with rules identical up to the t1/t2 swap merged.
pub fn relax_dc(dc: &BoundConstraint) -> Vec<RelaxedRule> {
    let occurrences: Vec<BoundCell> = dc.predicates.iter().flat_map(|p| p.cells().collect::<Vec<_>>()).collect();
    let mut seen = BTreeSet::new();
    let mut rules = Vec::new();
    for (position, target) in occurrences.iter().enumerate() {
        let term = |c: &BoundCell| -> Term {
            if c == target {
                Term::Target
            } else if c.var == target.var {
                Term::Init(Slot::Own, c.attr)
            } else {
                Term::Init(Slot::Partner, c.attr)
            }
        };
        let mut atoms: Vec<Atom> = dc
            .predicates
            .iter()
            .map(|p| {
                let rhs = match &p.rhs {
                    BoundOperand::Cell(c) => term(c),
                    BoundOperand::Const(s) => Term::Const(s.clone()),
                };
                Atom::normalized(p.op, term(&p.lhs), rhs)
            })
            .collect();
        atoms.sort();
        atoms.dedup();
        if !seen.insert((target.attr, atoms.clone())) {
            continue;
        }
        let (target_atoms, conditions): (Vec<Atom>, Vec<Atom>) = atoms.into_iter().partition(Atom::mentions_target);
        rules.push(RelaxedRule {
            constraint: dc.id,
            position,
            arity: dc.arity,
            target_attr: target.attr,
            conditions,
            target_atoms,
        });
    }
    rules
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::parse_dc;
    use crate::synthetic::inspection;

    fn snippet() -> Dataset {
        Dataset::from_reader(inspection().data.as_bytes(), &Default::default()).unwrap()
    }

    fn rules(ds: &Dataset, line: &str) -> Vec<RelaxedRule> {
        relax_dc(&parse_dc(line).unwrap().bind(ds).unwrap())
    }

    #[test]
    fn zip_state_constraint_gives_two_rules() {
        let ds = snippet();
        let zip = ds.attribute_index("Zip").unwrap();
        let state = ds.attribute_index("State").unwrap();
        let r = rules(&ds, "t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.State,t2.State)");
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].target_attr, zip);
        assert_eq!(
            r[0].target_atoms,
            vec![Atom {
                op: Op::Eq,
                lhs: Term::Target,
                rhs: Term::Init(Slot::Partner, zip)
            }]
        );
        assert_eq!(
            r[0].conditions,
            vec![Atom {
                op: Op::Iq,
                lhs: Term::Init(Slot::Own, state),
                rhs: Term::Init(Slot::Partner, state)
            }]
        );
        assert_eq!(r[1].target_attr, state);
        assert_eq!(r[1].condition_join(), Some((zip, zip)));
    }

    #[test]
    fn single_tuple_constant_rule() {
        let ds = snippet();
        let r = rules(&ds, "t1&EQ(t1.State,\"XX\")");
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].arity, 1);
        assert!(r[0].conditions.is_empty());
        assert!(r[0].violates(&ds, "XX", 0, 0, 0.8));
        assert!(!r[0].violates(&ds, "IL", 0, 0, 0.8));
    }

    #[test]
    fn k_predicates_give_k_rules() {
        let ds = snippet();
        let r = rules(
            &ds,
            "t1&t2&EQ(t1.City,t2.City)&EQ(t1.State,t2.State)&EQ(t1.Address,t2.Address)&IQ(t1.Zip,t2.Zip)",
        );
        assert_eq!(r.len(), 4);
        // Order comparisons are not symmetric, so nothing merges.
        let r = rules(&ds, "t1&t2&LT(t1.Zip,t2.Zip)&GT(t1.State,t2.State)");
        assert_eq!(r.len(), 4);
    }

    #[test]
    fn city_rule_on_inspection() {
        let ds = snippet();
        let r = rules(&ds, "t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.City,t2.City)");
        let city = r.iter().find(|r| r.target_attr == 3).unwrap();
        // t1 and t4 share zip 60608; t4's city is Cicago.
        assert!(city.conditions_hold(&ds, 0, 3, 0.8));
        assert!(city.violates(&ds, "Chicago", 0, 3, 0.8));
        assert!(!city.violates(&ds, "Cicago", 0, 3, 0.8));
        assert!(!city.conditions_hold(&ds, 0, 1, 0.8));
    }
}
