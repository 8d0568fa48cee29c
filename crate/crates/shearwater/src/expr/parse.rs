//! Equation-string parser.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! equation := "Eq" "(" expr "," expr ")"
//! expr     := term (("+" | "-") term)*
//! term     := unary (("*" | "/") unary)*
//! unary    := ("-" | "+") unary | power
//! power    := atom (("**" | "^") unary)?
//! atom     := number | name | head "(" expr ("," expr)* ")" | "(" expr ")"
//! name     := ident ("_" ident)*        -- suffixes are single-char indices
//! number   := digits ("." digits?)? (("e"|"E") ("+"|"-")? digits)?
//! ```
//!
//! Integer literals become exact rationals; anything with a decimal point or
//! exponent becomes a float literal. `a/b` with both sides rational folds
//! exactly (zero denominators are rejected); otherwise division becomes
//! multiplication by a reciprocal power. `delta_i_j` and `epsilon_i_j(_k)`
//! are shorthand for `KroneckerDelta`/`LeviCivita` calls, whose arguments
//! must be index letters or integers.

use std::collections::HashSet;

use super::{index_arg_letter, simplify, EinsteinTerm, Equation, Expr, ExprError, Head};

/// Parse one equation string. `constants` holds the names declared as
/// grid-independent constants; a term is flagged constant when its base
/// matches a declared name directly or a declared name with trailing digits
/// stripped (so `u_j` is constant when `u0`, `u1` are declared).
pub fn parse_equation(src: &str, constants: &HashSet<String>) -> Result<Equation, ExprError> {
    let tokens = lex(src)?;
    let stripped: HashSet<String> = constants
        .iter()
        .map(|c| c.trim_end_matches(|ch: char| ch.is_ascii_digit()))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let mut p = Parser {
        tokens,
        pos: 0,
        constants,
        stripped_constants: &stripped,
    };
    p.expect_ident("Eq")?;
    p.expect(Token::LParen)?;
    let lhs = p.parse_expr()?;
    p.expect(Token::Comma)?;
    let rhs = p.parse_expr()?;
    p.expect(Token::RParen)?;
    if p.pos != p.tokens.len() {
        return Err(p.err_here("trailing input after equation"));
    }
    Ok(Equation {
        lhs: simplify(lhs),
        rhs: simplify(rhs),
    })
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Number(String),
    Plus,
    Minus,
    Star,
    Slash,
    DoubleStar,
    LParen,
    RParen,
    Comma,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Ident(s) => format!("identifier `{s}`"),
            Token::Number(s) => format!("number `{s}`"),
            Token::Plus => "`+`".into(),
            Token::Minus => "`-`".into(),
            Token::Star => "`*`".into(),
            Token::Slash => "`/`".into(),
            Token::DoubleStar => "`**`".into(),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::Comma => "`,`".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((Token::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Token::Minus, i));
                i += 1;
            }
            '*' => {
                if bytes.get(i + 1) == Some(&b'*') {
                    out.push((Token::DoubleStar, i));
                    i += 2;
                } else {
                    out.push((Token::Star, i));
                    i += 1;
                }
            }
            '^' => {
                out.push((Token::DoubleStar, i));
                i += 1;
            }
            '/' => {
                out.push((Token::Slash, i));
                i += 1;
            }
            '(' => {
                out.push((Token::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Token::RParen, i));
                i += 1;
            }
            ',' => {
                out.push((Token::Comma, i));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                out.push((Token::Number(src[start..i].to_string()), start));
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Token::Ident(src[start..i].to_string()), start));
            }
            other => {
                return Err(ExprError::Syntax(format!(
                    "unexpected character `{other}` at byte {i}"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    constants: &'a HashSet<String>,
    stripped_constants: &'a HashSet<String>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Result<Token, ExprError> {
        match self.tokens.get(self.pos) {
            Some((t, _)) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => Err(ExprError::Syntax("unexpected end of input".into())),
        }
    }

    fn err_here(&self, what: &str) -> ExprError {
        match self.tokens.get(self.pos) {
            Some((t, at)) => {
                ExprError::Syntax(format!("{what}, found {} at byte {at}", t.describe()))
            }
            None => ExprError::Syntax(format!("{what}, found end of input")),
        }
    }

    fn expect(&mut self, want: Token) -> Result<(), ExprError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err_here(&format!("expected {}", want.describe())))
        }
    }

    fn expect_ident(&mut self, want: &str) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token::Ident(s)) if s == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err_here(&format!("expected `{want}`"))),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.parse_term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    acc = Expr::Sum(vec![acc, rhs]);
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    acc = Expr::Sum(vec![acc, Expr::Product(vec![Expr::integer(-1), rhs])]);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    let rhs = self.parse_unary()?;
                    acc = Expr::Product(vec![acc, rhs]);
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    let rhs = self.parse_unary()?;
                    acc = Expr::Product(vec![acc, reciprocal(rhs)?]);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                let inner = self.parse_unary()?;
                // Negated literals fold immediately so `-0.5` is a single
                // float leaf regardless of where it appears.
                Ok(match inner {
                    Expr::Rational(r) => Expr::Rational(-&r),
                    Expr::Float(v) => Expr::float(-v.0),
                    other => Expr::Product(vec![Expr::integer(-1), other]),
                })
            }
            Some(Token::Plus) => {
                self.pos += 1;
                self.parse_unary()
            }
            _ => self.parse_power(),
        }
    }

    fn parse_power(&mut self) -> Result<Expr, ExprError> {
        let base = self.parse_atom()?;
        if self.peek() == Some(&Token::DoubleStar) {
            self.pos += 1;
            let exp = self.parse_unary()?;
            Ok(Expr::Power(Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn parse_atom(&mut self) -> Result<Expr, ExprError> {
        match self.next()? {
            Token::LParen => {
                let e = self.parse_expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Token::Number(text) => parse_number(&text),
            Token::Ident(name) => {
                if self.peek() == Some(&Token::LParen) {
                    self.parse_call(&name)
                } else {
                    self.classify_name(&name)
                }
            }
            other => {
                self.pos -= 1;
                let _ = other;
                Err(self.err_here("expected a value"))
            }
        }
    }

    fn parse_call(&mut self, name: &str) -> Result<Expr, ExprError> {
        let head = Head::from_name(name).ok_or_else(|| {
            ExprError::Syntax(format!("unknown operator or function `{name}`"))
        })?;
        self.expect(Token::LParen)?;
        let mut args = vec![self.parse_expr()?];
        while self.peek() == Some(&Token::Comma) {
            self.pos += 1;
            args.push(self.parse_expr()?);
        }
        self.expect(Token::RParen)?;
        check_arity(head, args.len())?;
        match head {
            Head::Der => {
                let dir = &args[1];
                if !is_direction(dir, true) {
                    return Err(ExprError::Value(format!(
                        "Der direction must be a coordinate or t, got {dir}"
                    )));
                }
            }
            Head::Conservative | Head::Skew => {
                let dir = &args[1];
                if !is_direction(dir, false) {
                    return Err(ExprError::Value(format!(
                        "{} direction must be a coordinate, got {dir}",
                        head.name()
                    )));
                }
            }
            Head::KroneckerDelta | Head::LeviCivita => {
                for a in &args {
                    if index_arg_letter(a).is_none() && !matches!(a, Expr::Rational(r) if r.is_integer())
                    {
                        return Err(ExprError::Value(format!(
                            "{} arguments must be index letters or integers, got {a}",
                            head.name()
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(Expr::Apply(head, args))
    }

    /// Split a lexed identifier into base and single-character index
    /// suffixes, then classify it (time / coordinate / constant / plain).
    fn classify_name(&self, name: &str) -> Result<Expr, ExprError> {
        let mut parts = name.split('_');
        let base = parts.next().unwrap_or_default().to_string();
        if base.is_empty() || !base.chars().next().unwrap().is_ascii_alphabetic() {
            return Err(ExprError::Syntax(format!("malformed identifier `{name}`")));
        }
        if base == "Eq" {
            return Err(ExprError::Syntax("`Eq` is only valid at top level".into()));
        }
        let mut indices = Vec::new();
        for part in parts {
            let mut chars = part.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii_lowercase() || c.is_ascii_digit() => {
                    indices.push(c)
                }
                _ => {
                    return Err(ExprError::Syntax(format!(
                        "index suffix `_{part}` in `{name}` must be a single letter or digit"
                    )))
                }
            }
        }
        // delta_i_j / epsilon_i_j_k shorthand for the symbols themselves.
        if !indices.is_empty() && (base == "delta" || base == "epsilon") {
            let head = if base == "delta" {
                check_arity(Head::KroneckerDelta, indices.len())?;
                Head::KroneckerDelta
            } else {
                check_arity(Head::LeviCivita, indices.len())?;
                Head::LeviCivita
            };
            let args = indices
                .into_iter()
                .map(|c| {
                    if c.is_ascii_digit() {
                        Expr::integer((c as u8 - b'0') as i64)
                    } else {
                        Expr::Term(EinsteinTerm::plain(&c.to_string()))
                    }
                })
                .collect();
            return Ok(Expr::Apply(head, args));
        }
        let is_time = name == "t";
        let is_coordinate = (base == "x" && indices.len() == 1)
            || (indices.is_empty()
                && base.len() > 1
                && base.starts_with('x')
                && base[1..].chars().all(|c| c.is_ascii_digit()));
        let is_constant = !is_time
            && !is_coordinate
            && (self.constants.contains(&base) || self.stripped_constants.contains(&base));
        Ok(Expr::Term(EinsteinTerm {
            base,
            indices,
            is_constant,
            is_coordinate,
            is_time,
        }))
    }
}

fn check_arity(head: Head, got: usize) -> Result<(), ExprError> {
    let ok = match head {
        Head::Der | Head::Conservative | Head::Skew | Head::KroneckerDelta => got == 2,
        Head::LeviCivita => got == 2 || got == 3,
        _ => got == 1,
    };
    if ok {
        Ok(())
    } else {
        Err(ExprError::Arity {
            head: head.name().to_string(),
            expected: match head {
                Head::LeviCivita => "2 or 3".to_string(),
                Head::Der | Head::Conservative | Head::Skew | Head::KroneckerDelta => {
                    "2".to_string()
                }
                _ => "1".to_string(),
            },
            got,
        })
    }
}

fn is_direction(e: &Expr, allow_time: bool) -> bool {
    match e {
        Expr::Term(t) => t.is_coordinate || (allow_time && t.is_time),
        _ => false,
    }
}

fn reciprocal(e: Expr) -> Result<Expr, ExprError> {
    match e {
        Expr::Rational(r) => match r.recip() {
            Some(r) => Ok(Expr::Rational(r)),
            None => Err(ExprError::Value("division by zero".into())),
        },
        other => Ok(Expr::Power(Box::new(other), Box::new(Expr::integer(-1)))),
    }
}

fn parse_number(text: &str) -> Result<Expr, ExprError> {
    if text.contains(['.', 'e', 'E']) {
        let v: f64 = text
            .parse()
            .map_err(|_| ExprError::Syntax(format!("bad number literal `{text}`")))?;
        Ok(Expr::float(v))
    } else {
        let n: i64 = text
            .parse()
            .map_err(|_| ExprError::Value(format!("integer literal `{text}` out of range")))?;
        Ok(Expr::integer(n))
    }
}
