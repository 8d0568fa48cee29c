//! Symbolic expressions and equations.
//!
//! Equations enter the framework as strings in a small infix grammar with
//! function-call operator heads (`Der`, `Conservative`, `Skew`,
//! `KroneckerDelta`, `LeviCivita`, and elementary functions). This module
//! owns the expression tree those strings parse into, exact rational
//! literals, named substitutions (with index renaming), the canonical
//! simplifier, and the LaTeX renderer. Index expansion itself lives in
//! [`crate::einstein`]; grid-aware lowering in [`crate::discretize`].
//!
//! Two leaf kinds never come out of the parser and only appear after
//! expansion passes: [`Expr::Field`] (a concrete grid array reference with
//! integer offsets) and [`Expr::Derivative`] (a discrete derivative awaiting
//! a stencil).

mod latex;
mod parse;
mod rational;

pub use latex::render_latex;
pub use parse::parse_equation;
pub use rational::Rational;

use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use indexmap::IndexMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("operator {head} expects {expected} argument(s), got {got}")]
    Arity {
        head: String,
        expected: String,
        got: usize,
    },
    #[error("value error: {0}")]
    Value(String),
    #[error("substitution for {0} did not terminate (cycle or depth > {1})")]
    Cycle(String, usize),
}

/// Wrapper giving floating literals bitwise equality and hashing so the
/// whole expression tree can be used as a map key.
#[derive(Clone, Copy, Debug)]
pub struct Real(pub f64);

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}
impl Eq for Real {}
impl Hash for Real {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

/// Operator and function heads accepted in call position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    /// General spatial/temporal derivative; product and chain rules apply.
    Der,
    /// Flux-form derivative: the operand is differentiated as a unit.
    Conservative,
    /// Skew-symmetric split of a convective derivative.
    Skew,
    KroneckerDelta,
    LeviCivita,
    Sin,
    Cos,
    Exp,
    Tanh,
    Sqrt,
}

impl Head {
    pub fn name(&self) -> &'static str {
        match self {
            Head::Der => "Der",
            Head::Conservative => "Conservative",
            Head::Skew => "Skew",
            Head::KroneckerDelta => "KroneckerDelta",
            Head::LeviCivita => "LeviCivita",
            Head::Sin => "sin",
            Head::Cos => "cos",
            Head::Exp => "exp",
            Head::Tanh => "tanh",
            Head::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Head> {
        Some(match name {
            "Der" => Head::Der,
            "Conservative" => Head::Conservative,
            "Skew" => Head::Skew,
            "KroneckerDelta" => Head::KroneckerDelta,
            "LeviCivita" => Head::LeviCivita,
            "sin" => Head::Sin,
            "cos" => Head::Cos,
            "exp" => Head::Exp,
            "tanh" => Head::Tanh,
            "sqrt" => Head::Sqrt,
            _ => return None,
        })
    }

    pub fn is_elementary(&self) -> bool {
        matches!(
            self,
            Head::Sin | Head::Cos | Head::Exp | Head::Tanh | Head::Sqrt
        )
    }
}

/// A named symbol with optional index suffixes as written in equation
/// sources: `rho`, `u_j`, `tau_i_j`, `x0`, `t`.
///
/// Indices are single characters: lowercase letters while symbolic, digits
/// once an expansion pass has assigned them values.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EinsteinTerm {
    pub base: String,
    pub indices: Vec<char>,
    /// Grid-independent named value (declared in the setup's constants).
    pub is_constant: bool,
    /// A coordinate: base `x` with an index, or a literal `x0`/`x1`/`x2`.
    pub is_coordinate: bool,
    /// The time symbol `t` (valid only as a `Der` direction).
    pub is_time: bool,
}

impl EinsteinTerm {
    pub fn plain(base: &str) -> Self {
        EinsteinTerm {
            base: base.to_string(),
            indices: Vec::new(),
            is_constant: false,
            is_coordinate: false,
            is_time: false,
        }
    }

    pub fn constant(base: &str) -> Self {
        EinsteinTerm {
            is_constant: true,
            ..Self::plain(base)
        }
    }

    /// Concrete name once all indices are digits: base with digits appended.
    pub fn concrete_name(&self) -> Option<String> {
        if self.indices.iter().all(|c| c.is_ascii_digit()) {
            let mut s = self.base.clone();
            s.extend(self.indices.iter());
            Some(s)
        } else {
            None
        }
    }

    /// For a fully resolved coordinate, the axis it refers to
    /// (`x0` -> 0, base `x` + digit index -> that digit).
    pub fn coordinate_axis(&self) -> Option<usize> {
        if !self.is_coordinate {
            return None;
        }
        let name = self.concrete_name()?;
        let digits = name.strip_prefix('x')?;
        digits.parse::<usize>().ok()
    }
}

/// Reference to a concrete grid array. `offsets` is empty until the
/// discretiser assigns relative grid offsets (then one entry per direction).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FieldRef {
    pub name: String,
    pub offsets: Vec<i64>,
}

impl FieldRef {
    pub fn new(name: impl Into<String>) -> Self {
        FieldRef {
            name: name.into(),
            offsets: Vec::new(),
        }
    }
}

/// A discrete derivative awaiting a stencil. `dirs` is one direction for a
/// first derivative, the same direction twice for a collapsed second
/// derivative. Mixed second derivatives stay nested (the operand is itself
/// a `Derivative`). `depth` is the nesting depth assigned by
/// [`crate::einstein::resolve_nesting`]: innermost leaves are 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DerivativeLeaf {
    pub operand: Expr,
    pub dirs: Vec<usize>,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Rational(Rational),
    Float(Real),
    Term(EinsteinTerm),
    Field(FieldRef),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Power(Box<Expr>, Box<Expr>),
    Apply(Head, Vec<Expr>),
    Derivative(Box<DerivativeLeaf>),
}

impl Expr {
    pub fn integer(n: i64) -> Expr {
        Expr::Rational(Rational::integer(n))
    }

    pub fn rational(num: i64, den: i64) -> Expr {
        Expr::Rational(Rational::new(num, den))
    }

    pub fn float(v: f64) -> Expr {
        Expr::Float(Real(v))
    }

    pub fn field(name: &str) -> Expr {
        Expr::Field(FieldRef::new(name))
    }

    pub fn zero() -> Expr {
        Expr::integer(0)
    }

    pub fn one() -> Expr {
        Expr::integer(1)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Rational(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Rational(r) if r.is_one())
    }

    pub fn sum(terms: Vec<Expr>) -> Expr {
        simplify(Expr::Sum(terms))
    }

    pub fn product(factors: Vec<Expr>) -> Expr {
        simplify(Expr::Product(factors))
    }

    pub fn neg(self) -> Expr {
        Expr::product(vec![Expr::integer(-1), self])
    }

    pub fn derivative(operand: Expr, dirs: Vec<usize>) -> Expr {
        Expr::Derivative(Box::new(DerivativeLeaf {
            operand,
            dirs,
            depth: 0,
        }))
    }

    /// True when the value has no grid dependence: built only from literals
    /// and constant-flagged terms. Coordinates and fields are grid-dependent.
    pub fn is_grid_independent(&self) -> bool {
        match self {
            Expr::Rational(_) | Expr::Float(_) => true,
            Expr::Term(t) => t.is_constant,
            Expr::Field(_) | Expr::Derivative(_) => false,
            Expr::Sum(cs) | Expr::Product(cs) => cs.iter().all(|c| c.is_grid_independent()),
            Expr::Power(a, b) => a.is_grid_independent() && b.is_grid_independent(),
            Expr::Apply(h, args) => match h {
                Head::Der | Head::Conservative | Head::Skew => false,
                Head::KroneckerDelta | Head::LeviCivita => true,
                _ => args.iter().all(|a| a.is_grid_independent()),
            },
        }
    }

    /// All field names read by this expression.
    pub fn collect_field_names(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Field(f) => {
                out.insert(f.name.clone());
            }
            Expr::Sum(cs) | Expr::Product(cs) | Expr::Apply(_, cs) => {
                for c in cs {
                    c.collect_field_names(out);
                }
            }
            Expr::Power(a, b) => {
                a.collect_field_names(out);
                b.collect_field_names(out);
            }
            Expr::Derivative(d) => d.operand.collect_field_names(out),
            _ => {}
        }
    }
}

/// An equation `Eq(lhs, rhs)`. For prognostic equations the lhs is a single
/// `Der(term, t)`; for formulas and substitutions it is a bare term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Equation {
    pub lhs: Expr,
    pub rhs: Expr,
}

/// Letters in index position anywhere under `e` (term suffixes and
/// KroneckerDelta/LeviCivita arguments).
pub fn collect_index_letters(e: &Expr, out: &mut BTreeSet<char>) {
    match e {
        Expr::Term(t) => {
            for &c in &t.indices {
                if c.is_ascii_lowercase() {
                    out.insert(c);
                }
            }
        }
        Expr::Sum(cs) | Expr::Product(cs) => {
            for c in cs {
                collect_index_letters(c, out);
            }
        }
        Expr::Power(a, b) => {
            collect_index_letters(a, out);
            collect_index_letters(b, out);
        }
        Expr::Apply(h, args) => {
            if matches!(h, Head::KroneckerDelta | Head::LeviCivita) {
                for a in args {
                    if let Some(c) = index_arg_letter(a) {
                        out.insert(c);
                    }
                }
            } else {
                for a in args {
                    collect_index_letters(a, out);
                }
            }
        }
        Expr::Derivative(d) => collect_index_letters(&d.operand, out),
        _ => {}
    }
}

/// A KroneckerDelta/LeviCivita argument that is still a symbolic index
/// reference: a bare single-letter term.
pub fn index_arg_letter(e: &Expr) -> Option<char> {
    match e {
        Expr::Term(t) if t.indices.is_empty() && t.base.len() == 1 => {
            let c = t.base.chars().next().unwrap();
            c.is_ascii_lowercase().then_some(c)
        }
        _ => None,
    }
}

/// Rename index letters throughout an expression (used when a substitution
/// body is instantiated). `map` sends old letters to new ones.
pub fn rename_index_letters(e: &Expr, map: &IndexMap<char, char>) -> Expr {
    match e {
        Expr::Term(t) => {
            let mut t = t.clone();
            for c in t.indices.iter_mut() {
                if let Some(&n) = map.get(c) {
                    *c = n;
                }
            }
            Expr::Term(t)
        }
        Expr::Sum(cs) => Expr::Sum(cs.iter().map(|c| rename_index_letters(c, map)).collect()),
        Expr::Product(cs) => {
            Expr::Product(cs.iter().map(|c| rename_index_letters(c, map)).collect())
        }
        Expr::Power(a, b) => Expr::Power(
            Box::new(rename_index_letters(a, map)),
            Box::new(rename_index_letters(b, map)),
        ),
        Expr::Apply(h, args) => {
            if matches!(h, Head::KroneckerDelta | Head::LeviCivita) {
                let args = args
                    .iter()
                    .map(|a| match index_arg_letter(a) {
                        Some(c) => match map.get(&c) {
                            Some(&n) => Expr::Term(EinsteinTerm::plain(&n.to_string())),
                            None => a.clone(),
                        },
                        None => rename_index_letters(a, map),
                    })
                    .collect();
                Expr::Apply(*h, args)
            } else {
                Expr::Apply(
                    *h,
                    args.iter().map(|a| rename_index_letters(a, map)).collect(),
                )
            }
        }
        Expr::Derivative(d) => Expr::Derivative(Box::new(DerivativeLeaf {
            operand: rename_index_letters(&d.operand, map),
            dirs: d.dirs.clone(),
            depth: d.depth,
        })),
        _ => e.clone(),
    }
}

// ---------------------------------------------------------------------------
// Simplification
// ---------------------------------------------------------------------------

/// Canonical light normalization: flattens nested sums/products, folds exact
/// rational (and separately float) constants, prunes algebraic zeros and
/// units, evaluates KroneckerDelta/LeviCivita once their arguments are
/// numeric, and unwraps trivial nodes. Association order of the surviving
/// symbolic operands is preserved; nothing is ever reordered or distributed.
pub fn simplify(e: Expr) -> Expr {
    match e {
        Expr::Sum(children) => {
            let mut rat = Rational::zero();
            let mut flo = 0.0f64;
            let mut has_flo = false;
            let mut rest: Vec<Expr> = Vec::new();
            let mut stack: Vec<Expr> = children.into_iter().rev().collect();
            while let Some(c) = stack.pop() {
                match simplify(c) {
                    Expr::Sum(inner) => stack.extend(inner.into_iter().rev()),
                    Expr::Rational(r) => rat = &rat + &r,
                    Expr::Float(f) => {
                        flo += f.0;
                        has_flo = true;
                    }
                    other => rest.push(other),
                }
            }
            // Once a float literal participates, the whole constant part
            // commits to one float (canonical: at most one numeric leaf per
            // sum). Float-free sums keep an exact rational.
            if has_flo {
                let shift = if rat.is_zero() {
                    flo
                } else {
                    rat.to_f64() + flo
                };
                if shift != 0.0 || rest.is_empty() {
                    rest.push(Expr::float(shift));
                }
            } else if !rat.is_zero() {
                rest.push(Expr::Rational(rat));
            }
            match rest.len() {
                0 => Expr::zero(),
                1 => rest.pop().unwrap(),
                _ => Expr::Sum(rest),
            }
        }
        Expr::Product(children) => {
            let mut rat = Rational::one();
            let mut flo = 1.0f64;
            let mut has_flo = false;
            let mut rest: Vec<Expr> = Vec::new();
            let mut stack: Vec<Expr> = children.into_iter().rev().collect();
            while let Some(c) = stack.pop() {
                match simplify(c) {
                    Expr::Product(inner) => stack.extend(inner.into_iter().rev()),
                    Expr::Rational(r) => rat = &rat * &r,
                    Expr::Float(f) => {
                        flo *= f.0;
                        has_flo = true;
                    }
                    other => rest.push(other),
                }
            }
            if rat.is_zero() {
                return Expr::zero();
            }
            let mut out: Vec<Expr> = Vec::with_capacity(rest.len() + 1);
            // Same canonicalization as sums: any float literal absorbs the
            // rational part into a single leading float coefficient.
            if has_flo {
                let coeff = if rat.is_one() {
                    flo
                } else {
                    rat.to_f64() * flo
                };
                if coeff != 1.0 || rest.is_empty() {
                    out.push(Expr::float(coeff));
                }
            } else if !rat.is_one() {
                out.push(Expr::Rational(rat));
            }
            out.extend(rest);
            match out.len() {
                0 => Expr::one(),
                1 => out.pop().unwrap(),
                _ => Expr::Product(out),
            }
        }
        Expr::Power(a, b) => {
            let a = simplify(*a);
            let b = simplify(*b);
            if let Expr::Rational(e) = &b {
                if e.is_one() {
                    return a;
                }
                if e.is_zero() {
                    return Expr::one();
                }
                if let (Expr::Rational(base), Some(exp)) = (&a, e.as_integer()) {
                    if let Some(v) = base.pow(exp) {
                        return Expr::Rational(v);
                    }
                }
            }
            Expr::Power(Box::new(a), Box::new(b))
        }
        Expr::Apply(head, args) => {
            let args: Vec<Expr> = args.into_iter().map(simplify).collect();
            match head {
                Head::KroneckerDelta => {
                    if let (Expr::Rational(a), Expr::Rational(b)) = (&args[0], &args[1]) {
                        return if a == b { Expr::one() } else { Expr::zero() };
                    }
                    Expr::Apply(head, args)
                }
                Head::LeviCivita => {
                    let vals: Option<Vec<i64>> = args
                        .iter()
                        .map(|a| match a {
                            Expr::Rational(r) => r.as_integer(),
                            _ => None,
                        })
                        .collect();
                    match vals {
                        Some(v) => Expr::integer(levi_civita_sign(&v)),
                        None => Expr::Apply(head, args),
                    }
                }
                _ => Expr::Apply(head, args),
            }
        }
        Expr::Derivative(d) => Expr::Derivative(Box::new(DerivativeLeaf {
            operand: simplify(d.operand),
            dirs: d.dirs,
            depth: d.depth,
        })),
        other => other,
    }
}

/// Sign of the permutation given by index values: 0 on any repetition,
/// otherwise the parity of the number of inversions.
pub fn levi_civita_sign(vals: &[i64]) -> i64 {
    let n = vals.len();
    let mut inversions = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if vals[i] == vals[j] {
                return 0;
            }
            if vals[i] > vals[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

// ---------------------------------------------------------------------------
// Substitutions
// ---------------------------------------------------------------------------

const MAX_SUBSTITUTION_PASSES: usize = 8;

/// Named substitution definitions keyed by (base name, index count), e.g.
/// `tau_i_j` -> stress-tensor body with formal indices `i`, `j`.
#[derive(Clone, Debug, Default)]
pub struct SubstitutionSet {
    defs: IndexMap<(String, usize), SubstitutionDef>,
}

#[derive(Clone, Debug)]
struct SubstitutionDef {
    params: Vec<char>,
    body: Expr,
}

impl SubstitutionSet {
    /// Build from equations whose lhs is a bare (possibly indexed) term.
    pub fn from_equations(eqs: &[Equation]) -> Result<Self, ExprError> {
        let mut defs = IndexMap::new();
        for eq in eqs {
            let term = match &eq.lhs {
                Expr::Term(t) if !t.is_coordinate && !t.is_time => t.clone(),
                other => {
                    return Err(ExprError::Value(format!(
                        "substitution lhs must be a named term, got {other}"
                    )))
                }
            };
            let mut seen = BTreeSet::new();
            for &c in &term.indices {
                if !c.is_ascii_lowercase() || !seen.insert(c) {
                    return Err(ExprError::Value(format!(
                        "substitution {} needs distinct letter indices",
                        term.base
                    )));
                }
            }
            let key = (term.base.clone(), term.indices.len());
            if defs
                .insert(
                    key.clone(),
                    SubstitutionDef {
                        params: term.indices.clone(),
                        body: eq.rhs.clone(),
                    },
                )
                .is_some()
            {
                return Err(ExprError::Value(format!(
                    "duplicate substitution for {}",
                    key.0
                )));
            }
        }
        Ok(SubstitutionSet { defs })
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    fn matches(&self, t: &EinsteinTerm) -> bool {
        !t.is_constant
            && !t.is_coordinate
            && !t.is_time
            && self.defs.contains_key(&(t.base.clone(), t.indices.len()))
    }
}

/// Replace every occurrence of a defined substitution term with its body,
/// renaming the body's formal indices to the occurrence's indices and its
/// internal dummy letters to letters fresh in the host equation. Repeats
/// until no occurrence remains; definitions that keep reintroducing
/// themselves fail with [`ExprError::Cycle`].
pub fn substitute(eq: &Equation, defs: &SubstitutionSet) -> Result<Equation, ExprError> {
    if defs.is_empty() {
        return Ok(eq.clone());
    }
    let mut lhs = eq.lhs.clone();
    let mut rhs = eq.rhs.clone();
    for _pass in 0..MAX_SUBSTITUTION_PASSES {
        let mut used = BTreeSet::new();
        collect_index_letters(&lhs, &mut used);
        collect_index_letters(&rhs, &mut used);
        let mut changed = false;
        rhs = substitute_once(&rhs, defs, &mut used, &mut changed)?;
        if !changed {
            return Ok(Equation {
                lhs,
                rhs: simplify(rhs),
            });
        }
        lhs = simplify(lhs);
        rhs = simplify(rhs);
    }
    let name = defs.defs.keys().next().map(|k| k.0.clone()).unwrap_or_default();
    Err(ExprError::Cycle(name, MAX_SUBSTITUTION_PASSES))
}

fn substitute_once(
    e: &Expr,
    defs: &SubstitutionSet,
    used: &mut BTreeSet<char>,
    changed: &mut bool,
) -> Result<Expr, ExprError> {
    match e {
        Expr::Term(t) if defs.matches(t) => {
            let def = &defs.defs[&(t.base.clone(), t.indices.len())];
            *changed = true;
            let mut map: IndexMap<char, char> = IndexMap::new();
            for (&p, &a) in def.params.iter().zip(t.indices.iter()) {
                map.insert(p, a);
            }
            // Rename body-local dummies to letters unused in the host.
            let mut body_letters = BTreeSet::new();
            collect_index_letters(&def.body, &mut body_letters);
            for c in body_letters {
                if !def.params.contains(&c) {
                    let fresh = pick_fresh_letter(used, &map)?;
                    used.insert(fresh);
                    map.insert(c, fresh);
                }
            }
            Ok(rename_index_letters(&def.body, &map))
        }
        Expr::Sum(cs) => Ok(Expr::Sum(
            cs.iter()
                .map(|c| substitute_once(c, defs, used, changed))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Product(cs) => Ok(Expr::Product(
            cs.iter()
                .map(|c| substitute_once(c, defs, used, changed))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Power(a, b) => Ok(Expr::Power(
            Box::new(substitute_once(a, defs, used, changed)?),
            Box::new(substitute_once(b, defs, used, changed)?),
        )),
        Expr::Apply(h, _) if matches!(h, Head::KroneckerDelta | Head::LeviCivita) => {
            Ok(e.clone())
        }
        Expr::Apply(h, args) => Ok(Expr::Apply(
            *h,
            args.iter()
                .map(|a| substitute_once(a, defs, used, changed))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Derivative(d) => Ok(Expr::Derivative(Box::new(DerivativeLeaf {
            operand: substitute_once(&d.operand, defs, used, changed)?,
            dirs: d.dirs.clone(),
            depth: d.depth,
        }))),
        _ => Ok(e.clone()),
    }
}

fn pick_fresh_letter(
    used: &BTreeSet<char>,
    pending: &IndexMap<char, char>,
) -> Result<char, ExprError> {
    for c in "abcdefghijklmnopqrsuvwyz".chars() {
        if !used.contains(&c) && !pending.values().any(|&v| v == c) {
            return Ok(c);
        }
    }
    Err(ExprError::Value(
        "ran out of fresh index letters during substitution".into(),
    ))
}

// ---------------------------------------------------------------------------
// Printing (grammar-faithful; parse(print(e)) == e for parser-built trees)
// ---------------------------------------------------------------------------

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f, 1)
    }
}

fn is_negative_atom(e: &Expr) -> bool {
    match e {
        Expr::Rational(r) => r.is_negative(),
        Expr::Float(v) => v.0.is_sign_negative(),
        Expr::Product(cs) => cs.first().map(is_negative_atom).unwrap_or(false),
        _ => false,
    }
}

/// Clone of `e` with the leading sign stripped (only valid when
/// `is_negative_atom(e)`).
fn strip_leading_sign(e: &Expr) -> Expr {
    match e {
        Expr::Rational(r) => Expr::Rational(-r),
        Expr::Float(v) => Expr::float(-v.0),
        Expr::Product(cs) => {
            let mut cs = cs.clone();
            let head = strip_leading_sign(&cs[0]);
            if head.is_one() {
                cs.remove(0);
                if cs.len() == 1 {
                    cs.pop().unwrap()
                } else {
                    Expr::Product(cs)
                }
            } else {
                cs[0] = head;
                Expr::Product(cs)
            }
        }
        _ => e.clone(),
    }
}

/// Precedence levels: 1 sum, 2 product, 3 power operand, 4 atom.
fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
    let node_prec = match e {
        Expr::Sum(_) => 1,
        Expr::Product(_) => 2,
        Expr::Power(..) => 3,
        Expr::Rational(r) if r.is_negative() || !r.is_integer() => 2,
        Expr::Float(v) if v.0.is_sign_negative() => 2,
        _ => 4,
    };
    let parens = node_prec < prec;
    if parens {
        write!(f, "(")?;
    }
    match e {
        Expr::Rational(r) => write!(f, "{r}")?,
        Expr::Float(v) => write!(f, "{:?}", v.0)?,
        Expr::Term(t) => {
            write!(f, "{}", t.base)?;
            for c in &t.indices {
                write!(f, "_{c}")?;
            }
        }
        Expr::Field(fr) => {
            write!(f, "{}", fr.name)?;
            if !fr.offsets.is_empty() {
                write!(f, "[")?;
                for (i, o) in fr.offsets.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{o}")?;
                }
                write!(f, "]")?;
            }
        }
        Expr::Sum(cs) => {
            for (i, c) in cs.iter().enumerate() {
                if i == 0 {
                    write_expr(c, f, 2)?;
                } else if is_negative_atom(c) {
                    write!(f, " - ")?;
                    write_expr(&strip_leading_sign(c), f, 2)?;
                } else {
                    write!(f, " + ")?;
                    write_expr(c, f, 2)?;
                }
            }
        }
        Expr::Product(cs) => {
            let mut rest: &[Expr] = cs;
            if let Some(Expr::Rational(r)) = cs.first() {
                if r == &Rational::integer(-1) && cs.len() > 1 {
                    write!(f, "-")?;
                    rest = &cs[1..];
                }
            }
            for (i, c) in rest.iter().enumerate() {
                if i > 0 {
                    write!(f, "*")?;
                }
                // The leading factor may be a bare (possibly fractional)
                // coefficient; `1/2*a` re-parses to the same tree, so it can
                // print without parentheses. Later factors cannot.
                write_expr(c, f, if i == 0 { 2 } else { 3 })?;
            }
        }
        Expr::Power(a, b) => {
            write_expr(a, f, 4)?;
            write!(f, "**")?;
            write_expr(b, f, 4)?;
        }
        Expr::Apply(h, args) => {
            write!(f, "{}(", h.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write_expr(a, f, 1)?;
            }
            write!(f, ")")?;
        }
        Expr::Derivative(d) => {
            write!(f, "D({}; ", d.operand)?;
            for (i, dir) in d.dirs.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "x{dir}")?;
            }
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Eq({}, {})", self.lhs, self.rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn parse(src: &str) -> Equation {
        parse_equation(src, &HashSet::new()).unwrap()
    }

    #[test]
    fn simplify_folds_rationals_and_prunes() {
        let e = Expr::sum(vec![
            Expr::rational(1, 3),
            Expr::rational(1, 6),
            Expr::field("a"),
            Expr::zero(),
        ]);
        assert_eq!(
            e,
            Expr::Sum(vec![Expr::field("a"), Expr::rational(1, 2)])
        );
        let z = Expr::product(vec![Expr::zero(), Expr::field("a")]);
        assert!(z.is_zero());
        let unit = Expr::product(vec![Expr::one(), Expr::field("a")]);
        assert_eq!(unit, Expr::field("a"));
    }

    #[test]
    fn float_literals_absorb_the_rational_coefficient() {
        let e = Expr::product(vec![
            Expr::rational(1, 2),
            Expr::float(2.0),
            Expr::field("a"),
            Expr::float(3.0),
        ]);
        assert_eq!(e, Expr::Product(vec![Expr::float(3.0), Expr::field("a")]));
        // A float-free product keeps its coefficient exact.
        let e = Expr::product(vec![
            Expr::rational(1, 3),
            Expr::field("a"),
            Expr::rational(1, 2),
        ]);
        assert_eq!(
            e,
            Expr::Product(vec![Expr::rational(1, 6), Expr::field("a")])
        );
        // A coefficient that folds to exactly one vanishes.
        let e = Expr::product(vec![Expr::integer(2), Expr::float(0.5), Expr::field("a")]);
        assert_eq!(e, Expr::field("a"));
    }

    #[test]
    fn kronecker_delta_evaluates_on_numeric_args() {
        let kd = |a: i64, b: i64| {
            simplify(Expr::Apply(
                Head::KroneckerDelta,
                vec![Expr::integer(a), Expr::integer(b)],
            ))
        };
        assert!(kd(1, 1).is_one());
        assert!(kd(0, 2).is_zero());
    }

    #[test]
    fn levi_civita_sign_matches_permutation_parity() {
        assert_eq!(levi_civita_sign(&[0, 1, 2]), 1);
        assert_eq!(levi_civita_sign(&[0, 2, 1]), -1);
        assert_eq!(levi_civita_sign(&[2, 0, 1]), 1);
        assert_eq!(levi_civita_sign(&[1, 1, 2]), 0);
        assert_eq!(levi_civita_sign(&[0, 1]), 1);
        assert_eq!(levi_civita_sign(&[1, 0]), -1);
    }

    #[test]
    fn substitution_renames_formal_and_dummy_indices() {
        let stress = parse("Eq(tau_i_j, Der(u_i, x_j) + KroneckerDelta(i, j)*Der(u_k, x_k))");
        let defs = SubstitutionSet::from_equations(&[stress]).unwrap();
        let eq = parse("Eq(Der(m_a, t), Der(tau_a_b, x_b))");
        let out = substitute(&eq, &defs).unwrap();
        let printed = out.rhs.to_string();
        // Formal i,j became a,b; the body dummy k must have been renamed to a
        // letter not already in use (a, b, k are fine to reuse only if free).
        assert!(printed.contains("u_a"), "{printed}");
        assert!(printed.contains("x_b"), "{printed}");
        assert!(printed.contains("KroneckerDelta(a, b)"), "{printed}");
        // The dummy pair must still be a repeated letter distinct from a/b.
        let mut letters = BTreeSet::new();
        collect_index_letters(&out.rhs, &mut letters);
        assert!(letters.len() >= 3, "{printed}");
    }

    #[test]
    fn substitution_cycle_is_detected() {
        let cyc = parse("Eq(tau, tau + 1)");
        let defs = SubstitutionSet::from_equations(&[cyc]).unwrap();
        let eq = parse("Eq(phi, tau)");
        match substitute(&eq, &defs) {
            Err(ExprError::Cycle(..)) => {}
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn display_round_trips_through_parser() {
        let sources = [
            "Eq(Der(rho, t), -Conservative(rho*u_j, x_j))",
            "Eq(phi, a + 1/2 - 3*b*c)",
            "Eq(phi, -1/2*a + b**2 - c**(-1))",
            "Eq(phi, sin(2.0*x0)*cos(x1) + sqrt(p))",
            "Eq(phi, Skew(rho*u_j, x_j) + KroneckerDelta(i, j)*u_i)",
            "Eq(phi, 0)",
        ];
        for src in sources {
            let e1 = parse(src);
            let printed = e1.to_string();
            let e2 = parse(&printed);
            assert_eq!(e1, e2, "round trip failed for {src} -> {printed}");
        }
    }
}
