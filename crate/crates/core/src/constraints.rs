//! Denial constraints and matching dependencies.
//!
//! Denial constraints use one line per constraint:
//!
//! ```text
//! t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.City,t2.City)
//! t1&EQ(t1.State,"XX")
//! ```
//!
//! Matching dependencies map dataset attributes onto dictionary attributes:
//!
//! ```text
//! dict=addr: City~Ext_City & State=Ext_State => Zip:=Ext_Zip
//! ```
//!
//! Lines starting with `#` and blank lines are skipped by the file parsers.

use std::fmt;

use thiserror::Error;

use crate::dataset::{parse_decimal, DataError, Dataset};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {column}: {message}")]
pub struct ParseError {
    /// 1-based character offset into the line.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {source}")]
pub struct FileParseError {
    pub line: usize,
    #[source]
    pub source: ParseError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Op {
    Eq,
    Iq,
    Lt,
    Gt,
    Lte,
    Gte,
    Sim,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Eq => "EQ",
            Op::Iq => "IQ",
            Op::Lt => "LT",
            Op::Gt => "GT",
            Op::Lte => "LTE",
            Op::Gte => "GTE",
            Op::Sim => "SIM",
        }
    }

    pub fn from_name(name: &str) -> Option<Op> {
        Some(match name {
            "EQ" => Op::Eq,
            "IQ" => Op::Iq,
            "LT" => Op::Lt,
            "GT" => Op::Gt,
            "LTE" => Op::Lte,
            "GTE" => Op::Gte,
            "SIM" => Op::Sim,
            _ => return None,
        })
    }

    /// Operator obtained by exchanging the two operands.
    pub fn flipped(self) -> Op {
        match self {
            Op::Lt => Op::Gt,
            Op::Gt => Op::Lt,
            Op::Lte => Op::Gte,
            Op::Gte => Op::Lte,
            other => other,
        }
    }

    pub fn is_symmetric(self) -> bool {
        matches!(self, Op::Eq | Op::Iq | Op::Sim)
    }

    /// Evaluates the operator. NULL operands never satisfy a predicate, and
    /// order comparisons need both sides to be decimals.
    pub fn holds(self, lhs: Option<&str>, rhs: Option<&str>, sim_threshold: f64) -> bool {
        let (Some(a), Some(b)) = (lhs, rhs) else {
            return false;
        };
        match self {
            Op::Eq => a == b,
            Op::Iq => a != b,
            Op::Sim => similarity(a, b) >= sim_threshold,
            Op::Lt | Op::Gt | Op::Lte | Op::Gte => {
                let (Some(x), Some(y)) = (parse_decimal(a), parse_decimal(b)) else {
                    return false;
                };
                match self {
                    Op::Lt => x < y,
                    Op::Gt => x > y,
                    Op::Lte => x <= y,
                    _ => x >= y,
                }
            }
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Normalized Levenshtein similarity, `1 - dist / max(len)` over characters.
pub fn similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TupleVar {
    T1,
    T2,
}

impl TupleVar {
    pub fn swapped(self) -> TupleVar {
        match self {
            TupleVar::T1 => TupleVar::T2,
            TupleVar::T2 => TupleVar::T1,
        }
    }
}

impl fmt::Display for TupleVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TupleVar::T1 => "t1",
            TupleVar::T2 => "t2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellOperand {
    pub var: TupleVar,
    pub attr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Literal {
    Str(String),
    Num(String),
}

impl Literal {
    pub fn text(&self) -> &str {
        match self {
            Literal::Str(s) | Literal::Num(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    Cell(CellOperand),
    Const(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub op: Op,
    pub lhs: CellOperand,
    pub rhs: Operand,
}

impl Predicate {
    /// Cell operands in left-to-right order.
    pub fn cells(&self) -> impl Iterator<Item = &CellOperand> {
        std::iter::once(&self.lhs).chain(match &self.rhs {
            Operand::Cell(c) => Some(c),
            Operand::Const(_) => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ConstraintId(pub usize);

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dc{}", self.0)
    }
}

/// `forall t1, t2: not (P_1 and ... and P_K)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DenialConstraint {
    pub id: ConstraintId,
    pub arity: u8,
    pub predicates: Vec<Predicate>,
}

impl DenialConstraint {
    /// Canonical single-line form accepted by [`parse_dc`].
    pub fn render(&self) -> String {
        let mut out = String::from(if self.arity == 2 { "t1&t2" } else { "t1" });
        for p in &self.predicates {
            out.push('&');
            out.push_str(&format!("{}({}.{},", p.op, p.lhs.var, p.lhs.attr));
            match &p.rhs {
                Operand::Cell(c) => out.push_str(&format!("{}.{}", c.var, c.attr)),
                Operand::Const(Literal::Str(s)) => out.push_str(&format!("\"{s}\"")),
                Operand::Const(Literal::Num(n)) => out.push_str(n),
            }
            out.push(')');
        }
        out
    }

    /// Attribute names referenced by any predicate, deduplicated in order.
    pub fn attributes(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for cell in self.predicates.iter().flat_map(Predicate::cells) {
            if !seen.contains(&cell.attr.as_str()) {
                seen.push(cell.attr.as_str());
            }
        }
        seen
    }

    pub fn bind(&self, dataset: &Dataset) -> Result<BoundConstraint, DataError> {
        let bind_cell = |c: &CellOperand| -> Result<BoundCell, DataError> {
            Ok(BoundCell {
                var: c.var,
                attr: dataset.attribute_index(&c.attr)?,
            })
        };
        let predicates = self
            .predicates
            .iter()
            .map(|p| {
                Ok(BoundPredicate {
                    op: p.op,
                    lhs: bind_cell(&p.lhs)?,
                    rhs: match &p.rhs {
                        Operand::Cell(c) => BoundOperand::Cell(bind_cell(c)?),
                        Operand::Const(l) => BoundOperand::Const(l.text().to_string()),
                    },
                })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(BoundConstraint {
            id: self.id,
            arity: self.arity,
            predicates,
        })
    }
}

impl fmt::Display for DenialConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BoundCell {
    pub var: TupleVar,
    pub attr: usize,
}

impl BoundCell {
    pub fn tuple(&self, t1: usize, t2: usize) -> usize {
        match self.var {
            TupleVar::T1 => t1,
            TupleVar::T2 => t2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundOperand {
    Cell(BoundCell),
    Const(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundPredicate {
    pub op: Op,
    pub lhs: BoundCell,
    pub rhs: BoundOperand,
}

impl BoundPredicate {
    pub fn cells(&self) -> impl Iterator<Item = BoundCell> + '_ {
        std::iter::once(self.lhs).chain(match &self.rhs {
            BoundOperand::Cell(c) => Some(*c),
            BoundOperand::Const(_) => None,
        })
    }
}

/// A denial constraint with attribute names resolved against a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundConstraint {
    pub id: ConstraintId,
    pub arity: u8,
    pub predicates: Vec<BoundPredicate>,
}

impl BoundConstraint {
    /// True when every predicate holds for the binding `t1 -> t1, t2 -> t2`,
    /// i.e. the binding violates the constraint.
    pub fn violated_by(&self, dataset: &Dataset, t1: usize, t2: usize, sim: f64) -> bool {
        self.predicates.iter().all(|p| {
            let lhs = dataset.value(crate::CellRef::new(p.lhs.tuple(t1, t2), p.lhs.attr));
            let rhs = match &p.rhs {
                BoundOperand::Cell(c) => dataset.value(crate::CellRef::new(c.tuple(t1, t2), c.attr)),
                BoundOperand::Const(s) => Some(s.as_str()),
            };
            p.op.holds(lhs, rhs, sim)
        })
    }

    /// Cells referenced by the predicates under a binding.
    pub fn cells_under(&self, t1: usize, t2: usize) -> impl Iterator<Item = crate::CellRef> + '_ {
        self.predicates
            .iter()
            .flat_map(|p| p.cells().collect::<Vec<_>>())
            .map(move |c| crate::CellRef::new(c.tuple(t1, t2), c.attr))
    }

    /// First `t1.A = t2.B` predicate, normalized so the first attribute
    /// belongs to `t1`.
    pub fn equi_join(&self) -> Option<(usize, usize)> {
        self.predicates.iter().find_map(|p| match (&p.op, &p.rhs) {
            (Op::Eq, BoundOperand::Cell(r)) if r.var != p.lhs.var => Some(match p.lhs.var {
                TupleVar::T1 => (p.lhs.attr, r.attr),
                TupleVar::T2 => (r.attr, p.lhs.attr),
            }),
            _ => None,
        })
    }
}

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    _src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            _src: src,
        }
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        self.error_at(self.pos, message)
    }

    fn error_at<T>(&self, pos: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            column: pos + 1,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.chars.len()
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        let tok: Vec<char> = token.chars().collect();
        if self.chars[self.pos..].starts_with(&tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), ParseError> {
        if self.eat(token) {
            Ok(())
        } else {
            self.error(format!("expected '{token}'"))
        }
    }

    /// Consumes characters up to (not including) any of `stops`, trimmed.
    fn take_until(&mut self, stops: &[char]) -> (usize, String) {
        self.skip_ws();
        let start = self.pos;
        while self.chars.get(self.pos).is_some_and(|c| !stops.contains(c)) {
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        (start, text.trim().to_string())
    }
}

pub fn parse_dc(line: &str) -> Result<DenialConstraint, ParseError> {
    let mut cur = Cursor::new(line);
    if !(cur.eat("t1") && cur.eat("&")) {
        return Cursor::new(line).error("constraint must start with 't1&t2&' or 't1&'");
    }
    // Predicates start with an operator name, so a leading t2 is unambiguous.
    let arity = if cur.eat("t2") {
        cur.expect("&")?;
        2
    } else {
        1
    };

    let mut predicates = Vec::new();
    loop {
        if cur.at_end() {
            return cur.error("expected a predicate");
        }
        predicates.push(parse_predicate(&mut cur, arity)?);
        if cur.at_end() {
            break;
        }
        cur.expect("&")?;
    }
    Ok(DenialConstraint {
        id: ConstraintId::default(),
        arity,
        predicates,
    })
}

fn parse_predicate(cur: &mut Cursor<'_>, arity: u8) -> Result<Predicate, ParseError> {
    cur.skip_ws();
    let start = cur.pos;
    let (_, name) = cur.take_until(&['(', '&']);
    let op = Op::from_name(&name)
        .map_or_else(|| cur.error_at(start, format!("unknown operator {name:?}")), Ok)?;
    cur.expect("(")?;
    let lhs_pos = cur.pos;
    let lhs = parse_operand(cur, arity)?;
    if !cur.eat(",") {
        return cur.error(format!("{op} takes two operands"));
    }
    let rhs_pos = cur.pos;
    let rhs = parse_operand(cur, arity)?;
    if !cur.eat(")") {
        return cur.error("expected ')'");
    }
    let lhs = match lhs {
        Operand::Cell(c) => c,
        Operand::Const(_) => return cur.error_at(lhs_pos, "left operand must be a tuple attribute"),
    };
    if op == Op::Sim {
        if let Operand::Const(Literal::Num(_)) = rhs {
            return cur.error_at(rhs_pos, "SIM compares strings, not numbers");
        }
    }
    Ok(Predicate { op, lhs, rhs })
}

fn parse_operand(cur: &mut Cursor<'_>, arity: u8) -> Result<Operand, ParseError> {
    let start = {
        cur.skip_ws();
        cur.pos
    };
    match cur.peek() {
        Some('"') => {
            cur.pos += 1;
            let begin = cur.pos;
            while cur.chars.get(cur.pos).is_some_and(|&c| c != '"') {
                cur.pos += 1;
            }
            if cur.pos >= cur.chars.len() {
                return cur.error_at(start, "unterminated string literal");
            }
            let text: String = cur.chars[begin..cur.pos].iter().collect();
            cur.pos += 1;
            if text.is_empty() {
                return cur.error_at(start, "empty string literal");
            }
            Ok(Operand::Const(Literal::Str(text)))
        }
        Some(_) => {
            for (prefix, var) in [("t1.", TupleVar::T1), ("t2.", TupleVar::T2)] {
                if cur.eat(prefix) {
                    if var == TupleVar::T2 && arity == 1 {
                        return cur.error_at(start, "t2 referenced in a single-tuple constraint");
                    }
                    let (_, attr) = cur.take_until(&[',', ')', '&', '(', '"']);
                    if attr.is_empty() {
                        return cur.error(format!("expected attribute name after '{prefix}'"));
                    }
                    return Ok(Operand::Cell(CellOperand { var, attr }));
                }
            }
            let (_, text) = cur.take_until(&[',', ')', '&', '(']);
            if parse_decimal(&text).is_some() {
                Ok(Operand::Const(Literal::Num(text)))
            } else if text.is_empty() {
                cur.error_at(start, "expected an operand")
            } else {
                cur.error_at(start, format!("invalid operand {text:?}"))
            }
        }
        None => cur.error("expected an operand"),
    }
}

/// Parses a constraint file; constraint ids follow file order.
pub fn parse_dc_file(text: &str) -> Result<Vec<DenialConstraint>, FileParseError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut dc = parse_dc(line).map_err(|source| FileParseError { line: n + 1, source })?;
        dc.id = ConstraintId(out.len());
        out.push(dc);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchOp {
    Exact,
    Similar,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MatchCondition {
    pub attr: String,
    pub op: MatchOp,
    pub dict_attr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MatchingDependency {
    pub dict: String,
    pub conditions: Vec<MatchCondition>,
    /// `(dataset attribute, dictionary attribute)` receiving the lookup.
    pub assign: (String, String),
}

impl MatchingDependency {
    pub fn render(&self) -> String {
        let conds: Vec<String> = self
            .conditions
            .iter()
            .map(|c| {
                let op = match c.op {
                    MatchOp::Exact => '=',
                    MatchOp::Similar => '~',
                };
                format!("{}{}{}", c.attr, op, c.dict_attr)
            })
            .collect();
        format!(
            "dict={}: {} => {}:={}",
            self.dict,
            conds.join(" & "),
            self.assign.0,
            self.assign.1
        )
    }
}

impl fmt::Display for MatchingDependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn parse_md(line: &str) -> Result<MatchingDependency, ParseError> {
    let err = |pos: usize, message: &str| ParseError {
        column: line[..pos].chars().count() + 1,
        message: message.to_string(),
    };
    let lead = line.len() - line.trim_start().len();
    let body = line.trim_start();
    let Some(rest) = body.strip_prefix("dict=") else {
        return Err(err(lead, "expected 'dict=' prefix"));
    };
    let rest_at = lead + "dict=".len();
    let colon = rest.find(':').ok_or_else(|| err(rest_at, "expected ':' after dictionary id"))?;
    let dict = rest[..colon].trim();
    if dict.is_empty() {
        return Err(err(rest_at, "empty dictionary id"));
    }
    let conds_at = rest_at + colon + 1;
    let tail = &line[conds_at..];
    let arrow = tail.find("=>").ok_or_else(|| err(conds_at, "expected '=>'"))?;
    let conds_text = &tail[..arrow];

    let mut conditions = Vec::new();
    let mut offset = conds_at;
    for part in conds_text.split('&') {
        let here = offset;
        offset += part.len() + 1;
        if part.trim().is_empty() {
            return Err(err(here, "empty matching condition"));
        }
        let split = part.find(['=', '~']).ok_or_else(|| err(here, "condition needs '=' or '~'"))?;
        let op = if part.as_bytes()[split] == b'~' {
            MatchOp::Similar
        } else {
            MatchOp::Exact
        };
        let attr = part[..split].trim();
        let dict_attr = part[split + 1..].trim();
        if attr.is_empty() || dict_attr.is_empty() || dict_attr.contains(['=', '~']) {
            return Err(err(here, "malformed matching condition"));
        }
        conditions.push(MatchCondition {
            attr: attr.to_string(),
            op,
            dict_attr: dict_attr.to_string(),
        });
    }

    let assign_at = conds_at + arrow + 2;
    let assign = &line[assign_at..];
    let eq = assign.find(":=").ok_or_else(|| err(assign_at, "expected ':=' in assignment"))?;
    let target = assign[..eq].trim();
    let source = assign[eq + 2..].trim();
    if target.is_empty() || source.is_empty() {
        return Err(err(assign_at, "malformed assignment"));
    }
    Ok(MatchingDependency {
        dict: dict.to_string(),
        conditions,
        assign: (target.to_string(), source.to_string()),
    })
}

pub fn parse_md_file(text: &str) -> Result<Vec<MatchingDependency>, FileParseError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_md(line).map_err(|source| FileParseError { line: n + 1, source })?);
    }
    Ok(out)
}
