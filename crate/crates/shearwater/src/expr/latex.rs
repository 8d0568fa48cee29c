//! LaTeX rendering of equations, for inspecting what the expansion passes
//! produced. Output is a complete compilable document with one numbered
//! equation per input.

use super::{DerivativeLeaf, EinsteinTerm, Equation, Expr, Head, Rational};
use std::fmt::Write;

/// Render equations as a standalone LaTeX document.
pub fn render_latex(equations: &[Equation]) -> String {
    let mut out = String::new();
    out.push_str("\\documentclass{article}\n");
    out.push_str("\\usepackage{amsmath}\n");
    out.push_str("\\allowdisplaybreaks\n");
    out.push_str("\\begin{document}\n");
    for eq in equations {
        out.push_str("\\begin{equation}\n");
        let _ = writeln!(out, "{} = {}", math(&eq.lhs, 1), math(&eq.rhs, 1));
        out.push_str("\\end{equation}\n");
    }
    out.push_str("\\end{document}\n");
    out
}

const GREEK: &[(&str, &str)] = &[
    ("alpha", "\\alpha"),
    ("beta", "\\beta"),
    ("gamma", "\\gamma"),
    ("gama", "\\gamma"),
    ("delta", "\\delta"),
    ("epsilon", "\\varepsilon"),
    ("zeta", "\\zeta"),
    ("eta", "\\eta"),
    ("theta", "\\theta"),
    ("kappa", "\\kappa"),
    ("lambda", "\\lambda"),
    ("mu", "\\mu"),
    ("nu", "\\nu"),
    ("xi", "\\xi"),
    ("pi", "\\pi"),
    ("rho", "\\rho"),
    ("sigma", "\\sigma"),
    ("tau", "\\tau"),
    ("phi", "\\phi"),
    ("chi", "\\chi"),
    ("psi", "\\psi"),
    ("omega", "\\omega"),
];

fn base_symbol(base: &str) -> String {
    for (name, tex) in GREEK {
        if base == *name {
            return (*tex).to_string();
        }
    }
    base.to_string()
}

/// A name with trailing digits renders as base with a numeric subscript
/// (`u0` -> `u_{0}`, `rho` -> `\rho`).
fn name_symbol(name: &str) -> String {
    let split = name.len() - name.chars().rev().take_while(|c| c.is_ascii_digit()).count();
    let (base, digits) = name.split_at(split);
    if base.is_empty() || digits.is_empty() {
        base_symbol(name)
    } else {
        format!("{}_{{{}}}", base_symbol(base), digits)
    }
}

fn term_symbol(t: &EinsteinTerm) -> String {
    if t.indices.is_empty() {
        name_symbol(&t.base)
    } else {
        let idx: String = t.indices.iter().collect();
        format!("{}_{{{}}}", base_symbol(&t.base), idx)
    }
}

fn rational_tex(r: &Rational) -> String {
    if r.is_integer() {
        format!("{r}")
    } else if r.is_negative() {
        let abs = r.abs();
        format!("-\\frac{{{}}}{{{}}}", abs.numerator(), abs.denominator())
    } else {
        format!("\\frac{{{}}}{{{}}}", r.numerator(), r.denominator())
    }
}

fn direction_tex(dir: &Expr) -> String {
    match dir {
        Expr::Term(t) if t.is_time => "t".to_string(),
        Expr::Term(t) => term_symbol(t),
        other => math(other, 4),
    }
}

/// Is the expression compact enough to sit in a derivative numerator?
fn is_simple_operand(e: &Expr) -> bool {
    matches!(e, Expr::Term(_) | Expr::Field(_))
}

fn partial_fraction(operand: &Expr, dir_tex: &str) -> String {
    if is_simple_operand(operand) {
        format!(
            "\\frac{{\\partial {}}}{{\\partial {}}}",
            math(operand, 1),
            dir_tex
        )
    } else {
        format!(
            "\\frac{{\\partial}}{{\\partial {}}} \\left( {} \\right)",
            dir_tex,
            math(operand, 1)
        )
    }
}

/// Precedence: 1 sum, 2 product, 3 power/atom.
fn math(e: &Expr, prec: u8) -> String {
    let (body, node_prec) = match e {
        Expr::Rational(r) => {
            let p = if r.is_negative() { 2 } else { 3 };
            (rational_tex(r), p)
        }
        Expr::Float(v) => {
            let s = format!("{:?}", v.0);
            let p = if v.0.is_sign_negative() { 2 } else { 3 };
            (s.replace('e', "\\mathrm{e}"), p)
        }
        Expr::Term(t) => (term_symbol(t), 3),
        Expr::Field(f) => {
            let mut s = name_symbol(&f.name);
            if !f.offsets.is_empty() {
                let offs: Vec<String> = f.offsets.iter().map(|o| o.to_string()).collect();
                s = format!("{}[{}]", s, offs.join(","));
            }
            (s, 3)
        }
        Expr::Sum(cs) => {
            let mut s = String::new();
            for (i, c) in cs.iter().enumerate() {
                if i == 0 {
                    s.push_str(&math(c, 2));
                } else if super::is_negative_atom(c) {
                    s.push_str(" - ");
                    s.push_str(&math(&super::strip_leading_sign(c), 2));
                } else {
                    s.push_str(" + ");
                    s.push_str(&math(c, 2));
                }
            }
            (s, 1)
        }
        Expr::Product(cs) => {
            let mut rest: &[Expr] = cs;
            let mut s = String::new();
            if let Some(Expr::Rational(r)) = cs.first() {
                if *r == Rational::integer(-1) && cs.len() > 1 {
                    s.push('-');
                    rest = &cs[1..];
                }
            }
            for (i, c) in rest.iter().enumerate() {
                if i > 0 {
                    s.push_str(" \\, ");
                }
                s.push_str(&math(c, if i == 0 { 2 } else { 3 }));
            }
            (s, 2)
        }
        Expr::Power(a, b) => {
            let base = math(a, 3);
            let exp = match b.as_ref() {
                Expr::Rational(r) => format!("{r}"),
                other => math(other, 1),
            };
            (format!("{}^{{{}}}", base, exp), 3)
        }
        Expr::Apply(head, args) => match head {
            Head::Der | Head::Conservative | Head::Skew => {
                (partial_fraction(&args[0], &direction_tex(&args[1])), 2)
            }
            Head::KroneckerDelta | Head::LeviCivita => {
                let sym = if matches!(head, Head::KroneckerDelta) {
                    "\\delta"
                } else {
                    "\\varepsilon"
                };
                let idx: Vec<String> = args
                    .iter()
                    .map(|a| match a {
                        Expr::Term(t) => t.base.clone(),
                        other => math(other, 3),
                    })
                    .collect();
                (format!("{}_{{{}}}", sym, idx.concat()), 3)
            }
            Head::Sqrt => (format!("\\sqrt{{{}}}", math(&args[0], 1)), 3),
            Head::Sin | Head::Cos | Head::Exp | Head::Tanh => (
                format!("\\{}\\left( {} \\right)", head.name(), math(&args[0], 1)),
                3,
            ),
        },
        Expr::Derivative(d) => (derivative_tex(d), 2),
    };
    if node_prec < prec {
        format!("\\left( {} \\right)", body)
    } else {
        body
    }
}

fn derivative_tex(d: &DerivativeLeaf) -> String {
    let dir = format!("x_{{{}}}", d.dirs[0]);
    if d.dirs.len() == 2 && d.dirs[0] == d.dirs[1] {
        if is_simple_operand(&d.operand) {
            format!(
                "\\frac{{\\partial^{{2}} {}}}{{\\partial {}^{{2}}}}",
                math(&d.operand, 1),
                dir
            )
        } else {
            format!(
                "\\frac{{\\partial^{{2}}}}{{\\partial {}^{{2}}}} \\left( {} \\right)",
                dir,
                math(&d.operand, 1)
            )
        }
    } else {
        partial_fraction(&d.operand, &dir)
    }
}
