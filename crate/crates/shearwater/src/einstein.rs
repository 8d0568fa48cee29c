//! Index-notation expansion.
//!
//! Turns equations written with repeated (summed) and free indices into
//! per-component equations over concrete grid fields, and applies the
//! derivative operators down to discrete [`Derivative`](crate::expr::Expr)
//! leaves:
//!
//! 1. `Skew` operators are rewritten into their split form while indices
//!    are still symbolic (the velocity factor is identified by its index).
//! 2. Index occurrences are validated: a letter may appear once (free) or
//!    twice (contracted); three or more occurrences are an error, and both
//!    sides of an equation must agree on their free letters.
//! 3. Each free-index assignment produces one component equation; each
//!    contracted letter expands, innermost scope first, into an explicit
//!    sum over directions, re-simplifying after every substitution so
//!    Kronecker deltas and Levi-Civita symbols collapse as soon as their
//!    arguments are numeric.
//! 4. Named terms become concrete field references (`u_j` with `j = 0`
//!    becomes the field `u0`), and `Der`/`Conservative` are applied with
//!    product, chain, and linearity rules, leaving only derivative leaves.
//! 5. Directly nested derivatives in the same direction collapse into one
//!    second-derivative leaf; mixed nests stay nested and are labelled
//!    with their evaluation depth (innermost = 0).

use crate::expr::{
    index_arg_letter, simplify, DerivativeLeaf, Equation, Expr, FieldRef, Head,
    Rational,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EinsteinError {
    #[error("index error: {0}")]
    Index(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unsupported construct: {0}")]
    Unsupported(String),
}

/// Expand a system of equations over `ndim` directions. Each input equation
/// yields one output per assignment of its free indices (so a free index
/// produces `ndim` component equations). The left-hand side pattern
/// `Der(target, t)` is preserved; everything else is reduced to arithmetic
/// over fields, constants, coordinates, and derivative leaves.
pub fn expand_system(equations: &[Equation], ndim: usize) -> Result<Vec<Equation>, EinsteinError> {
    if !(1..=3).contains(&ndim) {
        return Err(EinsteinError::Shape(format!(
            "ndim must be 1, 2, or 3, got {ndim}"
        )));
    }
    let mut out = Vec::new();
    for eq in equations {
        let lhs = rewrite_skew(&eq.lhs)?;
        let rhs = rewrite_skew(&eq.rhs)?;
        validate_levi_civita_arity(&lhs, ndim)?;
        validate_levi_civita_arity(&rhs, ndim)?;
        let free = free_letters(&lhs, &rhs)?;
        for assignment in index_assignments(free.len(), ndim) {
            let mut l = lhs.clone();
            let mut r = rhs.clone();
            for (&letter, &value) in free.iter().zip(assignment.iter()) {
                l = assign_letter(&l, letter, value);
                r = assign_letter(&r, letter, value);
            }
            l = expand_contractions(simplify(l), ndim)?;
            r = expand_contractions(simplify(r), ndim)?;
            l = concretize(&l, ndim)?;
            r = concretize(&r, ndim)?;
            l = apply_lhs_operators(&l)?;
            r = resolve_nesting(apply_operators(&r)?);
            out.push(Equation {
                lhs: simplify(l),
                rhs: simplify(r),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Occurrence counting and validation
// ---------------------------------------------------------------------------

/// Occurrences of `letter` in index position. Products add their factors'
/// counts (a pair across factors is a contraction); sums take the maximum,
/// since summands carry the same index structure in parallel.
fn count_letter(e: &Expr, letter: char) -> usize {
    match e {
        Expr::Term(t) => t.indices.iter().filter(|&&c| c == letter).count(),
        Expr::Sum(cs) => cs.iter().map(|c| count_letter(c, letter)).max().unwrap_or(0),
        Expr::Product(cs) => cs.iter().map(|c| count_letter(c, letter)).sum(),
        Expr::Power(a, b) => count_letter(a, letter) + count_letter(b, letter),
        Expr::Apply(h, args) => {
            if matches!(h, Head::KroneckerDelta | Head::LeviCivita) {
                args.iter()
                    .filter(|a| index_arg_letter(a) == Some(letter))
                    .count()
            } else {
                args.iter().map(|a| count_letter(a, letter)).sum()
            }
        }
        Expr::Derivative(d) => count_letter(&d.operand, letter),
        _ => 0,
    }
}

/// Index letters in depth-first encounter order (deduplicated), which fixes
/// the deterministic expansion order.
fn letters_in_order(e: &Expr, out: &mut Vec<char>) {
    let push = |c: char, out: &mut Vec<char>| {
        if c.is_ascii_lowercase() && !out.contains(&c) {
            out.push(c);
        }
    };
    match e {
        Expr::Term(t) => {
            for &c in &t.indices {
                push(c, out);
            }
        }
        Expr::Sum(cs) | Expr::Product(cs) => {
            for c in cs {
                letters_in_order(c, out);
            }
        }
        Expr::Power(a, b) => {
            letters_in_order(a, out);
            letters_in_order(b, out);
        }
        Expr::Apply(h, args) => {
            if matches!(h, Head::KroneckerDelta | Head::LeviCivita) {
                for a in args {
                    if let Some(c) = index_arg_letter(a) {
                        push(c, out);
                    }
                }
            } else {
                for a in args {
                    letters_in_order(a, out);
                }
            }
        }
        Expr::Derivative(d) => letters_in_order(&d.operand, out),
        _ => {}
    }
}

/// Free letters of the equation (count one on a side), validated: no letter
/// occurs more than twice on a side, and both sides agree on free letters.
fn free_letters(lhs: &Expr, rhs: &Expr) -> Result<Vec<char>, EinsteinError> {
    // Left-hand-side letters first, so components are ordered by the
    // target's own index.
    let mut letters = Vec::new();
    letters_in_order(lhs, &mut letters);
    letters_in_order(rhs, &mut letters);
    let mut free = Vec::new();
    let mut seen = Vec::new();
    for &l in &letters {
        if seen.contains(&l) {
            continue;
        }
        seen.push(l);
        let on_lhs = count_letter(lhs, l);
        let on_rhs = count_letter(rhs, l);
        if on_lhs > 2 || on_rhs > 2 {
            return Err(EinsteinError::Index(format!(
                "index {l} appears {} times; an index may appear at most twice",
                on_lhs.max(on_rhs)
            )));
        }
        let free_lhs = on_lhs == 1;
        let free_rhs = on_rhs == 1;
        if free_lhs != free_rhs {
            return Err(EinsteinError::Index(format!(
                "free index {l} must appear on both sides of the equation"
            )));
        }
        if free_lhs {
            free.push(l);
        }
    }
    Ok(free)
}

fn validate_levi_civita_arity(e: &Expr, ndim: usize) -> Result<(), EinsteinError> {
    match e {
        Expr::Apply(Head::LeviCivita, args) if args.len() != ndim => Err(EinsteinError::Index(
            format!(
                "LeviCivita takes exactly {ndim} indices in {ndim} dimensions, got {}",
                args.len()
            ),
        )),
        Expr::Sum(cs) | Expr::Product(cs) | Expr::Apply(_, cs) => {
            cs.iter().try_for_each(|c| validate_levi_civita_arity(c, ndim))
        }
        Expr::Power(a, b) => {
            validate_levi_civita_arity(a, ndim)?;
            validate_levi_civita_arity(b, ndim)
        }
        Expr::Derivative(d) => validate_levi_civita_arity(&d.operand, ndim),
        _ => Ok(()),
    }
}

/// All assignments of `n` indices to values `0..ndim`, first index slowest.
fn index_assignments(n: usize, ndim: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * ndim);
        for prefix in &out {
            for v in 0..ndim {
                let mut a = prefix.clone();
                a.push(v);
                next.push(a);
            }
        }
        out = next;
    }
    out
}

// ---------------------------------------------------------------------------
// Index assignment
// ---------------------------------------------------------------------------

/// Substitute one index letter with a concrete direction everywhere. A term
/// whose indices become all digits folds them into its name (`u_0` becomes
/// `u0`), so component fields get their concrete spelling immediately.
fn assign_letter(e: &Expr, letter: char, value: usize) -> Expr {
    let digit = (b'0' + value as u8) as char;
    match e {
        Expr::Term(t) => {
            if !t.indices.contains(&letter) {
                return e.clone();
            }
            let mut t = t.clone();
            for c in t.indices.iter_mut() {
                if *c == letter {
                    *c = digit;
                }
            }
            if t.indices.iter().all(|c| c.is_ascii_digit()) {
                t.base.extend(t.indices.drain(..));
            }
            Expr::Term(t)
        }
        Expr::Sum(cs) => Expr::Sum(cs.iter().map(|c| assign_letter(c, letter, value)).collect()),
        Expr::Product(cs) => {
            Expr::Product(cs.iter().map(|c| assign_letter(c, letter, value)).collect())
        }
        Expr::Power(a, b) => Expr::Power(
            Box::new(assign_letter(a, letter, value)),
            Box::new(assign_letter(b, letter, value)),
        ),
        Expr::Apply(h, args) => {
            if matches!(h, Head::KroneckerDelta | Head::LeviCivita) {
                let args = args
                    .iter()
                    .map(|a| {
                        if index_arg_letter(a) == Some(letter) {
                            Expr::integer(value as i64)
                        } else {
                            a.clone()
                        }
                    })
                    .collect();
                Expr::Apply(*h, args)
            } else {
                Expr::Apply(
                    *h,
                    args.iter().map(|a| assign_letter(a, letter, value)).collect(),
                )
            }
        }
        Expr::Derivative(d) => Expr::Derivative(Box::new(DerivativeLeaf {
            operand: assign_letter(&d.operand, letter, value),
            dirs: d.dirs.clone(),
            depth: d.depth,
        })),
        _ => e.clone(),
    }
}

// ---------------------------------------------------------------------------
// Contraction expansion
// ---------------------------------------------------------------------------

/// Expand every contracted letter into an explicit sum over directions,
/// re-entering after each substitution (a substitution can expose further
/// contractions once deltas collapse).
fn expand_contractions(mut e: Expr, ndim: usize) -> Result<Expr, EinsteinError> {
    loop {
        let mut letters = Vec::new();
        letters_in_order(&e, &mut letters);
        let dummy = letters.iter().copied().find(|&l| count_letter(&e, l) == 2);
        match dummy {
            Some(l) => {
                e = simplify(expand_letter(&e, l, ndim));
            }
            None => {
                if let Some(&l) = letters.iter().find(|&&l| count_letter(&e, l) > 2) {
                    return Err(EinsteinError::Index(format!(
                        "index {l} appears more than twice after expansion"
                    )));
                }
                return Ok(e);
            }
        }
    }
}

/// Replace the contraction scope of `letter` (the smallest node containing
/// both occurrences) with an explicit sum over `0..ndim`.
fn expand_letter(e: &Expr, letter: char, ndim: usize) -> Expr {
    // Descend while a single child still holds both occurrences.
    match e {
        Expr::Sum(cs) | Expr::Product(cs) | Expr::Apply(_, cs) => {
            if let Some(pos) = child_with_pair(cs, letter, e) {
                let mut cs = cs.clone();
                cs[pos] = expand_letter(&cs[pos], letter, ndim);
                return rebuild(e, cs);
            }
        }
        Expr::Power(a, b) => {
            if count_letter(a, letter) == 2 {
                return Expr::Power(
                    Box::new(expand_letter(a, letter, ndim)),
                    Box::new((**b).clone()),
                );
            }
            if count_letter(b, letter) == 2 {
                return Expr::Power(
                    Box::new((**a).clone()),
                    Box::new(expand_letter(b, letter, ndim)),
                );
            }
        }
        Expr::Derivative(d) => {
            if count_letter(&d.operand, letter) == 2 {
                return Expr::Derivative(Box::new(DerivativeLeaf {
                    operand: expand_letter(&d.operand, letter, ndim),
                    dirs: d.dirs.clone(),
                    depth: d.depth,
                }));
            }
        }
        _ => {}
    }
    Expr::Sum((0..ndim).map(|v| assign_letter(e, letter, v)).collect())
}

/// Index of the unique child carrying both occurrences of `letter`, if any.
/// For KroneckerDelta/LeviCivita the arguments are index slots, not
/// subexpressions, so there is never a child to descend into.
fn child_with_pair(children: &[Expr], letter: char, parent: &Expr) -> Option<usize> {
    if let Expr::Apply(Head::KroneckerDelta | Head::LeviCivita, _) = parent {
        return None;
    }
    children
        .iter()
        .position(|c| count_letter(c, letter) == 2)
}

fn rebuild(template: &Expr, children: Vec<Expr>) -> Expr {
    match template {
        Expr::Sum(_) => Expr::Sum(children),
        Expr::Product(_) => Expr::Product(children),
        Expr::Apply(h, _) => Expr::Apply(*h, children),
        _ => unreachable!("rebuild is only called for n-ary nodes"),
    }
}

// ---------------------------------------------------------------------------
// Concretization: named terms -> field references
// ---------------------------------------------------------------------------

/// After all indices are assigned, turn every remaining named term into a
/// grid field reference. Constants, coordinates, and the time symbol stay
/// symbolic terms; leftover letter indices mean the equation was ill-formed.
fn concretize(e: &Expr, ndim: usize) -> Result<Expr, EinsteinError> {
    match e {
        Expr::Term(t) => {
            if t.indices.iter().any(|c| c.is_ascii_lowercase()) {
                return Err(EinsteinError::Index(format!(
                    "index on {} was never assigned a direction",
                    t.base
                )));
            }
            if let Some(axis) = t.coordinate_axis() {
                if axis >= ndim {
                    return Err(EinsteinError::Shape(format!(
                        "coordinate x{axis} is out of range for {ndim} dimension(s)"
                    )));
                }
            }
            if t.is_constant || t.is_coordinate || t.is_time {
                return Ok(e.clone());
            }
            let name = t.concrete_name().expect("digit indices fold on assignment");
            Ok(Expr::Field(FieldRef::new(name)))
        }
        Expr::Sum(cs) => Ok(Expr::Sum(
            cs.iter().map(|c| concretize(c, ndim)).collect::<Result<_, _>>()?,
        )),
        Expr::Product(cs) => Ok(Expr::Product(
            cs.iter().map(|c| concretize(c, ndim)).collect::<Result<_, _>>()?,
        )),
        Expr::Power(a, b) => Ok(Expr::Power(
            Box::new(concretize(a, ndim)?),
            Box::new(concretize(b, ndim)?),
        )),
        Expr::Apply(h, args) => {
            if matches!(h, Head::KroneckerDelta | Head::LeviCivita) {
                return Err(EinsteinError::Index(format!(
                    "{} still has symbolic indices after expansion",
                    h.name()
                )));
            }
            if matches!(h, Head::Der | Head::Conservative | Head::Skew) {
                // Keep the direction argument symbolic; concretize the rest.
                let mut out = Vec::with_capacity(args.len());
                out.push(concretize(&args[0], ndim)?);
                for a in &args[1..] {
                    match a {
                        Expr::Term(t) if t.is_coordinate || t.is_time => {
                            if let Some(axis) = t.coordinate_axis() {
                                if axis >= ndim {
                                    return Err(EinsteinError::Shape(format!(
                                        "direction x{axis} is out of range for {ndim} dimension(s)"
                                    )));
                                }
                            }
                            out.push(a.clone());
                        }
                        other => {
                            return Err(EinsteinError::Shape(format!(
                                "derivative direction {other} is not a coordinate"
                            )))
                        }
                    }
                }
                return Ok(Expr::Apply(*h, out));
            }
            Ok(Expr::Apply(
                *h,
                args.iter().map(|a| concretize(a, ndim)).collect::<Result<_, _>>()?,
            ))
        }
        Expr::Derivative(d) => Ok(Expr::Derivative(Box::new(DerivativeLeaf {
            operand: concretize(&d.operand, ndim)?,
            dirs: d.dirs.clone(),
            depth: d.depth,
        }))),
        _ => Ok(e.clone()),
    }
}

// ---------------------------------------------------------------------------
// Skew rewriting
// ---------------------------------------------------------------------------

/// Rewrite `Skew(phi * u_j, x_j)` into the stability-motivated split
///
/// ```text
/// 1/2 * ( Conservative(phi*u_j, x_j) + u_j*Conservative(phi, x_j)
///         + phi*Conservative(u_j, x_j) )
/// ```
///
/// The advecting-velocity factor is identified structurally: it is the
/// unique factor whose index list is exactly the contracted direction
/// letter. A bare `Skew(u_j, x_j)` treats the transported quantity as one.
fn rewrite_skew(e: &Expr) -> Result<Expr, EinsteinError> {
    match e {
        Expr::Apply(Head::Skew, args) => {
            let operand = rewrite_skew(&args[0])?;
            let dir = args[1].clone();
            let letter = match &dir {
                Expr::Term(t) if t.is_coordinate && t.indices.len() == 1 => {
                    let c = t.indices[0];
                    if c.is_ascii_lowercase() {
                        c
                    } else {
                        return Err(EinsteinError::Shape(
                            "Skew direction must carry a contraction index".into(),
                        ));
                    }
                }
                _ => {
                    return Err(EinsteinError::Shape(
                        "Skew direction must carry a contraction index".into(),
                    ))
                }
            };
            let factors = match operand {
                Expr::Product(fs) => fs,
                single => vec![single],
            };
            let is_velocity = |f: &Expr| {
                matches!(f, Expr::Term(t) if t.indices.as_slice() == [letter] && !t.is_coordinate)
            };
            let count = factors.iter().filter(|f| is_velocity(f)).count();
            if count != 1 {
                return Err(EinsteinError::Shape(format!(
                    "Skew operand must contain exactly one factor indexed by {letter}, found {count}"
                )));
            }
            let pos = factors.iter().position(is_velocity).unwrap();
            let velocity = factors[pos].clone();
            let mut rest = factors;
            rest.remove(pos);
            let transported = match rest.len() {
                0 => Expr::one(),
                1 => rest.pop().unwrap(),
                _ => Expr::Product(rest),
            };
            let flux = simplify(Expr::Product(vec![transported.clone(), velocity.clone()]));
            Ok(Expr::Product(vec![
                Expr::rational(1, 2),
                Expr::Sum(vec![
                    Expr::Apply(Head::Conservative, vec![flux, dir.clone()]),
                    Expr::Product(vec![
                        velocity.clone(),
                        Expr::Apply(Head::Conservative, vec![transported.clone(), dir.clone()]),
                    ]),
                    Expr::Product(vec![
                        transported,
                        Expr::Apply(Head::Conservative, vec![velocity, dir]),
                    ]),
                ]),
            ]))
        }
        Expr::Sum(cs) => Ok(Expr::Sum(
            cs.iter().map(rewrite_skew).collect::<Result<_, _>>()?,
        )),
        Expr::Product(cs) => Ok(Expr::Product(
            cs.iter().map(rewrite_skew).collect::<Result<_, _>>()?,
        )),
        Expr::Power(a, b) => Ok(Expr::Power(
            Box::new(rewrite_skew(a)?),
            Box::new(rewrite_skew(b)?),
        )),
        Expr::Apply(h, args) => Ok(Expr::Apply(
            *h,
            args.iter().map(rewrite_skew).collect::<Result<_, _>>()?,
        )),
        Expr::Derivative(d) => Ok(Expr::Derivative(Box::new(DerivativeLeaf {
            operand: rewrite_skew(&d.operand)?,
            dirs: d.dirs.clone(),
            depth: d.depth,
        }))),
        _ => Ok(e.clone()),
    }
}

// ---------------------------------------------------------------------------
// Operator application
// ---------------------------------------------------------------------------

/// The left-hand side keeps the `Der(target, t)` shape; any other lhs is
/// treated like a right-hand side expression.
fn apply_lhs_operators(e: &Expr) -> Result<Expr, EinsteinError> {
    if let Expr::Apply(Head::Der, args) = e {
        if matches!(&args[1], Expr::Term(t) if t.is_time) {
            return Ok(e.clone());
        }
    }
    apply_operators(e)
}

/// Eliminate `Der` and `Conservative`, bottom-up, leaving derivative leaves.
fn apply_operators(e: &Expr) -> Result<Expr, EinsteinError> {
    match e {
        Expr::Apply(Head::Der, args) => {
            let operand = apply_operators(&args[0])?;
            let axis = direction_axis(&args[1])?;
            Ok(simplify(differentiate(&operand, axis)?))
        }
        Expr::Apply(Head::Conservative, args) => {
            let operand = apply_operators(&args[0])?;
            let axis = direction_axis(&args[1])?;
            Ok(simplify(conservative(&operand, axis)))
        }
        Expr::Apply(Head::Skew, _) => Err(EinsteinError::Unsupported(
            "Skew survived rewriting; this is a bug".into(),
        )),
        Expr::Apply(h, args) => Ok(Expr::Apply(
            *h,
            args.iter().map(apply_operators).collect::<Result<_, _>>()?,
        )),
        Expr::Sum(cs) => Ok(Expr::Sum(
            cs.iter().map(apply_operators).collect::<Result<_, _>>()?,
        )),
        Expr::Product(cs) => Ok(Expr::Product(
            cs.iter().map(apply_operators).collect::<Result<_, _>>()?,
        )),
        Expr::Power(a, b) => Ok(Expr::Power(
            Box::new(apply_operators(a)?),
            Box::new(apply_operators(b)?),
        )),
        Expr::Derivative(d) => Ok(Expr::Derivative(Box::new(DerivativeLeaf {
            operand: apply_operators(&d.operand)?,
            dirs: d.dirs.clone(),
            depth: d.depth,
        }))),
        _ => Ok(e.clone()),
    }
}

fn direction_axis(dir: &Expr) -> Result<usize, EinsteinError> {
    match dir {
        Expr::Term(t) if t.is_time => Err(EinsteinError::Unsupported(
            "time derivatives may only appear alone on the left-hand side".into(),
        )),
        Expr::Term(t) => t.coordinate_axis().ok_or_else(|| {
            EinsteinError::Shape(format!("derivative direction {dir} is not a coordinate"))
        }),
        other => Err(EinsteinError::Shape(format!(
            "derivative direction {other} is not a coordinate"
        ))),
    }
}

/// Symbolic spatial derivative with product and chain rules. Returns an
/// expression over derivative leaves; grid-independent subtrees vanish.
fn differentiate(e: &Expr, axis: usize) -> Result<Expr, EinsteinError> {
    if e.is_grid_independent() {
        return Ok(Expr::zero());
    }
    match e {
        Expr::Term(t) if t.is_coordinate => {
            let a = t.coordinate_axis().expect("resolved coordinate");
            Ok(if a == axis { Expr::one() } else { Expr::zero() })
        }
        Expr::Term(t) if t.is_time => Err(EinsteinError::Unsupported(
            "the time symbol cannot appear inside spatial expressions".into(),
        )),
        Expr::Field(_) | Expr::Derivative(_) => Ok(Expr::derivative(e.clone(), vec![axis])),
        Expr::Sum(cs) => Ok(Expr::Sum(
            cs.iter()
                .map(|c| differentiate(c, axis))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Product(fs) => {
            let mut terms = Vec::new();
            for (i, f) in fs.iter().enumerate() {
                if f.is_grid_independent() {
                    continue;
                }
                let mut factors = fs.clone();
                factors[i] = differentiate(f, axis)?;
                terms.push(Expr::Product(factors));
            }
            Ok(Expr::Sum(terms))
        }
        Expr::Power(b, e2) => {
            if !e2.is_grid_independent() {
                return Err(EinsteinError::Unsupported(
                    "cannot differentiate a power with a grid-dependent exponent".into(),
                ));
            }
            let em1 = exponent_minus_one(e2);
            Ok(Expr::Product(vec![
                (**e2).clone(),
                Expr::Power(b.clone(), Box::new(em1)),
                differentiate(b, axis)?,
            ]))
        }
        Expr::Apply(h, args) => {
            let u = &args[0];
            let du = differentiate(u, axis)?;
            let outer = match h {
                Head::Sin => Expr::Apply(Head::Cos, vec![u.clone()]),
                Head::Cos => Expr::Product(vec![
                    Expr::integer(-1),
                    Expr::Apply(Head::Sin, vec![u.clone()]),
                ]),
                Head::Exp => Expr::Apply(Head::Exp, vec![u.clone()]),
                Head::Tanh => Expr::Sum(vec![
                    Expr::one(),
                    Expr::Product(vec![
                        Expr::integer(-1),
                        Expr::Power(
                            Box::new(Expr::Apply(Head::Tanh, vec![u.clone()])),
                            Box::new(Expr::integer(2)),
                        ),
                    ]),
                ]),
                Head::Sqrt => Expr::Product(vec![
                    Expr::rational(1, 2),
                    Expr::Power(Box::new(u.clone()), Box::new(Expr::rational(-1, 2))),
                ]),
                other => {
                    return Err(EinsteinError::Unsupported(format!(
                        "cannot differentiate through {}",
                        other.name()
                    )))
                }
            };
            Ok(Expr::Product(vec![outer, du]))
        }
        other => Err(EinsteinError::Unsupported(format!(
            "cannot differentiate {other}"
        ))),
    }
}

fn exponent_minus_one(e: &Expr) -> Expr {
    match e {
        Expr::Rational(r) => Expr::Rational(r - &Rational::one()),
        Expr::Float(v) => Expr::float(v.0 - 1.0),
        other => Expr::Sum(vec![other.clone(), Expr::integer(-1)]),
    }
}

/// Flux-form derivative: linear over sums, hoists grid-independent factors,
/// and differentiates the remaining core as a single unit.
fn conservative(e: &Expr, axis: usize) -> Expr {
    if e.is_grid_independent() {
        return Expr::zero();
    }
    match e {
        Expr::Sum(cs) => Expr::Sum(cs.iter().map(|c| conservative(c, axis)).collect()),
        Expr::Product(fs) => {
            let (hoisted, core): (Vec<Expr>, Vec<Expr>) =
                fs.iter().cloned().partition(|f| f.is_grid_independent());
            let core = match core.len() {
                0 => return Expr::zero(),
                1 => core.into_iter().next().unwrap(),
                _ => Expr::Product(core),
            };
            let mut out = hoisted;
            out.push(Expr::derivative(core, vec![axis]));
            Expr::Product(out)
        }
        other => Expr::derivative(other.clone(), vec![axis]),
    }
}

// ---------------------------------------------------------------------------
// Nested-derivative resolution
// ---------------------------------------------------------------------------

/// Collapse `D(D(f; xa); xa)` into a single second-derivative leaf and label
/// every surviving leaf with its nesting depth (innermost leaves are 0), so
/// the discretiser can schedule inner derivatives into temporaries first.
fn resolve_nesting(e: Expr) -> Expr {
    match e {
        Expr::Sum(cs) => Expr::Sum(cs.into_iter().map(resolve_nesting).collect()),
        Expr::Product(cs) => Expr::Product(cs.into_iter().map(resolve_nesting).collect()),
        Expr::Power(a, b) => Expr::Power(
            Box::new(resolve_nesting(*a)),
            Box::new(resolve_nesting(*b)),
        ),
        Expr::Apply(h, args) => {
            Expr::Apply(h, args.into_iter().map(resolve_nesting).collect())
        }
        Expr::Derivative(d) => {
            let operand = resolve_nesting(d.operand);
            if d.dirs.len() == 1 {
                if let Expr::Derivative(inner) = &operand {
                    if inner.dirs.len() == 1 && inner.dirs[0] == d.dirs[0] {
                        let dir = d.dirs[0];
                        let core = inner.operand.clone();
                        return Expr::Derivative(Box::new(DerivativeLeaf {
                            depth: max_leaf_depth(&core).map_or(0, |m| m + 1),
                            operand: core,
                            dirs: vec![dir, dir],
                        }));
                    }
                }
            }
            Expr::Derivative(Box::new(DerivativeLeaf {
                depth: max_leaf_depth(&operand).map_or(0, |m| m + 1),
                operand,
                dirs: d.dirs,
            }))
        }
        other => other,
    }
}

/// Deepest derivative leaf contained in `e`, if any.
pub(crate) fn max_leaf_depth(e: &Expr) -> Option<usize> {
    match e {
        Expr::Derivative(d) => Some(d.depth),
        Expr::Sum(cs) | Expr::Product(cs) | Expr::Apply(_, cs) => {
            cs.iter().filter_map(max_leaf_depth).max()
        }
        Expr::Power(a, b) => max_leaf_depth(a).max(max_leaf_depth(b)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_equation;
    use std::collections::HashSet;

    fn expand(src: &str, ndim: usize) -> Vec<Equation> {
        expand_with_constants(src, ndim, &[])
    }

    fn expand_with_constants(src: &str, ndim: usize, constants: &[&str]) -> Vec<Equation> {
        let cs: HashSet<String> = constants.iter().map(|s| s.to_string()).collect();
        let eq = parse_equation(src, &cs).unwrap();
        expand_system(&[eq], ndim).unwrap()
    }

    fn expand_err(src: &str, ndim: usize) -> EinsteinError {
        let eq = parse_equation(src, &HashSet::new()).unwrap();
        expand_system(&[eq], ndim).unwrap_err()
    }

    fn count_leaves(e: &Expr) -> usize {
        match e {
            Expr::Derivative(d) => 1 + count_leaves(&d.operand),
            Expr::Sum(cs) | Expr::Product(cs) | Expr::Apply(_, cs) => {
                cs.iter().map(count_leaves).sum()
            }
            Expr::Power(a, b) => count_leaves(a) + count_leaves(b),
            _ => 0,
        }
    }

    #[test]
    fn contraction_expands_to_component_sum() {
        let out = expand("Eq(a, u_j*v_j)", 3);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rhs.to_string(), "u0*v0 + u1*v1 + u2*v2");
    }

    #[test]
    fn free_index_produces_component_equations() {
        let out = expand("Eq(Der(m_i, t), -Der(p, x_i))", 2);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].lhs.to_string(), "Der(m0, t)");
        assert_eq!(out[0].rhs.to_string(), "-D(p; x0)");
        assert_eq!(out[1].rhs.to_string(), "-D(p; x1)");
    }

    #[test]
    fn scoped_contraction_does_not_leak_across_sum_branches() {
        // Each branch carries its own contraction of j.
        let out = expand("Eq(a, u_j*v_j + w_j*z_j)", 2);
        assert_eq!(
            out[0].rhs.to_string(),
            "u0*v0 + u1*v1 + w0*z0 + w1*z1"
        );
        // A term without the index is not replicated by the sum.
        let out = expand("Eq(a, u_j*v_j + c)", 2);
        assert_eq!(out[0].rhs.to_string(), "u0*v0 + u1*v1 + c");
    }

    #[test]
    fn kronecker_delta_contracts_exactly() {
        let out = expand("Eq(a, delta_i_j*u_i*v_j)", 2);
        assert_eq!(out[0].rhs.to_string(), "u0*v0 + u1*v1");
        let out = expand("Eq(a, KroneckerDelta(i, i))", 3);
        assert_eq!(out[0].rhs.to_string(), "3");
    }

    #[test]
    fn levi_civita_contraction_carries_signs() {
        // epsilon_ijk u_j v_k for each i; in 2D epsilon_ij u_i v_j.
        let out = expand("Eq(a, epsilon_i_j*u_i*v_j)", 2);
        assert_eq!(out[0].rhs.to_string(), "u0*v1 - u1*v0");
        let out = expand("Eq(w_i, epsilon_i_j_k*u_j*v_k)", 3);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].rhs.to_string(), "u1*v2 - u2*v1");
        assert_eq!(out[1].rhs.to_string(), "-u0*v2 + u2*v0");
        assert_eq!(out[2].rhs.to_string(), "u0*v1 - u1*v0");
    }

    #[test]
    fn coordinate_derivative_is_kronecker_delta() {
        let out = expand("Eq(a, Der(x0, x1))", 2);
        assert!(out[0].rhs.is_zero());
        let out = expand("Eq(a, Der(x0, x0))", 2);
        assert!(out[0].rhs.is_one());
        // Divergence of the coordinate vector is the dimension.
        let out = expand("Eq(a, Der(x_j, x_j))", 3);
        assert_eq!(out[0].rhs.to_string(), "3");
    }

    #[test]
    fn der_applies_product_rule_conservative_does_not() {
        let der = expand("Eq(a, Der(rho*u0, x0))", 1);
        assert_eq!(
            der[0].rhs.to_string(),
            "D(rho; x0)*u0 + rho*D(u0; x0)"
        );
        let cons = expand("Eq(a, Conservative(rho*u0, x0))", 1);
        assert_eq!(cons[0].rhs.to_string(), "D(rho*u0; x0)");
    }

    #[test]
    fn constants_hoist_out_of_derivatives() {
        let out = expand_with_constants("Eq(a, Der(c*phi, x0))", 1, &["c"]);
        assert_eq!(out[0].rhs.to_string(), "c*D(phi; x0)");
        let out = expand_with_constants("Eq(a, Conservative(c*phi, x0))", 1, &["c"]);
        assert_eq!(out[0].rhs.to_string(), "c*D(phi; x0)");
        let out = expand_with_constants("Eq(a, Der(c, x0))", 1, &["c"]);
        assert!(out[0].rhs.is_zero());
    }

    #[test]
    fn chain_rules_for_elementary_functions() {
        let cases = [
            ("sin(phi)", "cos(phi)*D(phi; x0)"),
            ("cos(phi)", "-sin(phi)*D(phi; x0)"),
            ("exp(phi)", "exp(phi)*D(phi; x0)"),
            ("tanh(phi)", "(-tanh(phi)**2 + 1)*D(phi; x0)"),
            ("sqrt(phi)", "1/2*phi**(-1/2)*D(phi; x0)"),
            ("phi**3", "3*phi**2*D(phi; x0)"),
        ];
        for (inner, want) in cases {
            let out = expand(&format!("Eq(a, Der({inner}, x0))"), 1);
            assert_eq!(out[0].rhs.to_string(), want, "d/dx {inner}");
        }
    }

    #[test]
    fn same_direction_nesting_collapses_to_second_derivative() {
        let out = expand("Eq(a, Der(Der(phi, x0), x0))", 2);
        match &out[0].rhs {
            Expr::Derivative(d) => {
                assert_eq!(d.dirs, vec![0, 0]);
                assert_eq!(d.depth, 0);
                assert_eq!(d.operand, Expr::field("phi"));
            }
            other => panic!("expected collapsed leaf, got {other}"),
        }
    }

    #[test]
    fn mixed_direction_nesting_stays_nested_with_depths() {
        let out = expand("Eq(a, Der(Der(phi, x0), x1))", 2);
        match &out[0].rhs {
            Expr::Derivative(outer) => {
                assert_eq!(outer.dirs, vec![1]);
                assert_eq!(outer.depth, 1);
                match &outer.operand {
                    Expr::Derivative(inner) => {
                        assert_eq!(inner.dirs, vec![0]);
                        assert_eq!(inner.depth, 0);
                    }
                    other => panic!("expected nested leaf, got {other}"),
                }
            }
            other => panic!("expected derivative, got {other}"),
        }
    }

    #[test]
    fn skew_splits_into_three_conservative_pieces() {
        let out = expand("Eq(Der(phi, t), Skew(phi*u_j, x_j))", 2);
        // Per direction: D(phi*u), u*D(phi), phi*D(u) -> 3 leaves x 2 dirs.
        // The last piece keeps its contraction scoped inside the product.
        assert_eq!(count_leaves(&out[0].rhs), 6);
        assert_eq!(
            out[0].rhs.to_string(),
            "1/2*(D(phi*u0; x0) + D(phi*u1; x1) + u0*D(phi; x0) + u1*D(phi; x1) \
             + phi*(D(u0; x0) + D(u1; x1)))"
        );
    }

    #[test]
    fn pure_velocity_skew_reduces_to_divergence() {
        // With nothing transported, two of the three pieces coincide and the
        // constant piece vanishes; like terms are kept (never collected).
        let out = expand("Eq(Der(phi, t), Skew(u_j, x_j))", 2);
        assert_eq!(
            out[0].rhs.to_string(),
            "1/2*(D(u0; x0) + D(u1; x1) + D(u0; x0) + D(u1; x1))"
        );
    }

    #[test]
    fn skew_requires_identifiable_velocity() {
        let err = expand_err("Eq(Der(phi, t), Skew(rho*q, x_j))", 2);
        assert!(matches!(err, EinsteinError::Shape(_)), "{err}");
        // Two candidate factors carrying the direction index.
        let err = expand_err("Eq(Der(phi, t), Skew(tau_j*u_j*u_j, x_j))", 2);
        assert!(matches!(err, EinsteinError::Shape(_)), "{err}");
    }

    #[test]
    fn index_validation_errors() {
        let err = expand_err("Eq(a, u_j*v_j*w_j)", 2);
        assert!(matches!(err, EinsteinError::Index(_)), "{err}");
        let err = expand_err("Eq(a, u_i)", 2);
        assert!(matches!(err, EinsteinError::Index(_)), "{err}");
        let err = expand_err("Eq(m_i, u_j)", 2);
        assert!(matches!(err, EinsteinError::Index(_)), "{err}");
        let err = expand_err("Eq(a, epsilon_i_j*u_i*v_j)", 3);
        assert!(matches!(err, EinsteinError::Index(_)), "{err}");
    }

    #[test]
    fn time_derivative_on_rhs_is_rejected() {
        let err = expand_err("Eq(a, Der(phi, t) + phi)", 2);
        assert!(matches!(err, EinsteinError::Unsupported(_)), "{err}");
    }

    #[test]
    fn mass_equation_full_pipeline() {
        let out = expand_with_constants(
            "Eq(Der(rho, t), -Skew(rho*u_j, x_j))",
            2,
            &[],
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].lhs.to_string(), "Der(rho, t)");
        assert_eq!(count_leaves(&out[0].rhs), 6);
    }

    #[test]
    fn viscous_style_second_derivatives_collapse_through_substitution_shape() {
        // d/dx0 of (k * d phi/dx0) with constant k collapses to a single
        // second-derivative leaf times k.
        let out = expand_with_constants("Eq(a, Der(k*Der(phi, x0), x0))", 1, &["k"]);
        assert_eq!(out[0].rhs.to_string(), "k*D(phi; x0, x0)");
    }
}
