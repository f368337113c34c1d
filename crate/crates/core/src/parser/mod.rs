//! Polynomial expression grammar and TOML model configuration.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := ('-')? atom ("'")*
//! atom   := number | '(' re ',' im ')' | ident | 'adj' '(' expr ')' | '(' expr ')'
//! ```

mod config;

pub use config::{
    format_complex, load_config, matrix_to_csv, parse_config, parse_config_with_base, parse_csv_matrix,
    Config, McConfig, SolveConfig,
};

use std::fmt;

use thiserror::Error;

use crate::model::{Factor, Monomial, Polynomial};
use crate::numerics::{c64, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    SyntaxError { pos: usize, msg: String },
    #[error("unbalanced parentheses at byte {pos}")]
    UnbalancedParens { pos: usize },
    #[error("missing section or key `{0}`")]
    MissingSection(String),
    #[error("matrix `{name}` has bad shape: {detail}")]
    BadMatrixShape { name: String, detail: String },
    #[error("name `{0}` declared more than once")]
    DuplicateName(String),
    #[error("invalid value for `{key}`: {detail}")]
    BadValue { key: String, detail: String },
    #[error("cannot read `{path}`: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Sum(Vec<ExprAst>),
    Product(Vec<ExprAst>),
    Adjoint(Box<ExprAst>),
    SymbolRef(String),
    Scalar(C64),
}

impl ExprAst {
    pub fn adjoint(self) -> ExprAst {
        ExprAst::Adjoint(Box::new(self))
    }

    /// Pushes adjoints down to the leaves.
    pub fn normalize(&self) -> ExprAst {
        match self {
            ExprAst::Sum(xs) => ExprAst::Sum(xs.iter().map(ExprAst::normalize).collect()),
            ExprAst::Product(xs) => ExprAst::Product(xs.iter().map(ExprAst::normalize).collect()),
            ExprAst::Adjoint(inner) => inner.normalized_adjoint(),
            leaf => leaf.clone(),
        }
    }

    fn normalized_adjoint(&self) -> ExprAst {
        match self {
            ExprAst::Sum(xs) => ExprAst::Sum(xs.iter().map(ExprAst::normalized_adjoint).collect()),
            ExprAst::Product(xs) => {
                ExprAst::Product(xs.iter().rev().map(ExprAst::normalized_adjoint).collect())
            }
            ExprAst::Adjoint(inner) => inner.normalize(),
            ExprAst::Scalar(z) => ExprAst::Scalar(z.conj()),
            ExprAst::SymbolRef(_) => self.clone().adjoint(),
        }
    }

    /// Expands into a sum of monomials (no merging of like terms).
    pub fn to_polynomial(&self) -> Polynomial {
        Polynomial::new(
            self.normalize()
                .expand()
                .into_iter()
                .map(|(c, w)| Monomial::new(c, w))
                .collect(),
        )
    }

    fn expand(&self) -> Vec<(C64, Vec<Factor>)> {
        match self {
            ExprAst::Scalar(z) => vec![(*z, vec![])],
            ExprAst::SymbolRef(name) => vec![(c64(1.0, 0.0), vec![Factor::new(name, false)])],
            ExprAst::Adjoint(inner) => match inner.as_ref() {
                ExprAst::SymbolRef(name) => vec![(c64(1.0, 0.0), vec![Factor::new(name, true)])],
                other => other.normalized_adjoint().expand(),
            },
            ExprAst::Sum(xs) => xs.iter().flat_map(ExprAst::expand).collect(),
            ExprAst::Product(xs) => {
                let mut acc = vec![(c64(1.0, 0.0), Vec::new())];
                for x in xs {
                    let terms = x.expand();
                    let mut next = Vec::with_capacity(acc.len() * terms.len());
                    for (c1, w1) in &acc {
                        for (c2, w2) in &terms {
                            let mut w = w1.clone();
                            w.extend(w2.iter().cloned());
                            next.push((c1 * c2, w));
                        }
                    }
                    acc = next;
                }
                acc
            }
        }
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn nested(e: &ExprAst) -> String {
            match e {
                ExprAst::Sum(_) | ExprAst::Product(_) => format!("({e})"),
                _ => e.to_string(),
            }
        }
        match self {
            ExprAst::Scalar(z) => write!(f, "{}", format_scalar(*z)),
            ExprAst::SymbolRef(name) => write!(f, "{name}"),
            ExprAst::Adjoint(inner) => write!(f, "{}'", nested(inner)),
            ExprAst::Sum(xs) => {
                let parts: Vec<String> = xs.iter().map(nested).collect();
                write!(f, "{}", parts.join(" + "))
            }
            ExprAst::Product(xs) => {
                let parts: Vec<String> = xs.iter().map(nested).collect();
                write!(f, "{}", parts.join("*"))
            }
        }
    }
}

fn format_scalar(z: C64) -> String {
    format!("({:?},{:?})", z.re, z.im)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
}

const MAX_DEPTH: usize = 256;

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::SyntaxError {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn expr(&mut self) -> Result<ExprAst, ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.err("expression nested too deeply"));
        }
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    terms.push(self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let t = self.term()?;
                    terms.push(negate(t));
                }
                _ => break,
            }
        }
        self.depth -= 1;
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            ExprAst::Sum(terms)
        })
    }

    fn term(&mut self) -> Result<ExprAst, ParseError> {
        let mut factors = vec![self.factor()?];
        while self.peek() == Some(b'*') {
            self.pos += 1;
            factors.push(self.factor()?);
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            ExprAst::Product(factors)
        })
    }

    fn factor(&mut self) -> Result<ExprAst, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(negate(self.factor()?));
        }
        let mut atom = self.atom()?;
        while self.peek() == Some(b'\'') {
            self.pos += 1;
            atom = atom.adjoint();
        }
        Ok(atom)
    }

    fn atom(&mut self) -> Result<ExprAst, ParseError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                let open = self.pos;
                self.pos += 1;
                if let Some(z) = self.try_complex_literal() {
                    return Ok(ExprAst::Scalar(z));
                }
                let inner = self.expr()?;
                match self.peek() {
                    Some(b')') => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    None => Err(ParseError::UnbalancedParens { pos: open }),
                    Some(_) => Err(self.err("expected `)`")),
                }
            }
            Some(b')') => Err(ParseError::UnbalancedParens { pos: self.pos }),
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let x = self.number()?;
                Ok(ExprAst::Scalar(c64(x, 0.0)))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric()
                        || self.src[self.pos] == b'_'
                        || self.src[self.pos] == b'@')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                if name == "adj" && self.peek() == Some(b'(') {
                    let open = self.pos;
                    self.pos += 1;
                    let inner = self.expr()?;
                    return match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            Ok(inner.adjoint())
                        }
                        None => Err(ParseError::UnbalancedParens { pos: open }),
                        Some(_) => Err(self.err("expected `)`")),
                    };
                }
                Ok(ExprAst::SymbolRef(name.to_string()))
            }
            Some(c) => Err(self.err(format!("unexpected character `{}`", c.escape_ascii()))),
        }
    }

    /// Tries `re , im )` after an opening parenthesis; rewinds on failure.
    fn try_complex_literal(&mut self) -> Option<C64> {
        let save = self.pos;
        let parsed = (|| {
            let re = self.signed_number().ok()?;
            (self.peek() == Some(b',')).then_some(())?;
            self.pos += 1;
            let im = self.signed_number().ok()?;
            (self.peek() == Some(b')')).then_some(())?;
            self.pos += 1;
            Some(c64(re, im))
        })();
        if parsed.is_none() {
            self.pos = save;
        }
        parsed
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let neg = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                true
            }
            Some(b'+') => {
                self.pos += 1;
                false
            }
            _ => false,
        };
        let x = self.number()?;
        Ok(if neg { -x } else { x })
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            let b = *p;
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
            *p > b
        };
        let mut p = self.pos;
        let mut any = digits(&mut p);
        if p < s.len() && s[p] == b'.' {
            p += 1;
            any |= digits(&mut p);
        }
        if !any {
            return Err(self.err("expected a number"));
        }
        if p < s.len() && (s[p] == b'e' || s[p] == b'E') {
            let mut q = p + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) {
                p = q;
            }
        }
        let text = std::str::from_utf8(&s[start..p]).unwrap();
        let x: f64 = text.parse().map_err(|_| self.err("malformed number"))?;
        self.pos = p;
        Ok(x)
    }
}

fn negate(e: ExprAst) -> ExprAst {
    ExprAst::Product(vec![ExprAst::Scalar(c64(-1.0, 0.0)), e])
}

/// Parses an expression. Subtraction `a - b` becomes `a + (-1)*b`.
pub fn parse_polynomial(text: &str) -> Result<ExprAst, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        depth: 0,
    };
    if p.peek().is_none() {
        return Err(p.err("empty expression"));
    }
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(b')') => Err(ParseError::UnbalancedParens { pos: p.pos }),
        Some(_) => Err(p.err("unexpected trailing input")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(s: &str) -> ExprAst {
        ExprAst::SymbolRef(s.into())
    }

    #[test]
    fn q_model_expression() {
        let e = parse_polynomial("R1*T1*R1' + R2*T2*R2'").unwrap();
        let expected = ExprAst::Sum(vec![
            ExprAst::Product(vec![sym("R1"), sym("T1"), sym("R1").adjoint()]),
            ExprAst::Product(vec![sym("R2"), sym("T2"), sym("R2").adjoint()]),
        ]);
        assert_eq!(e, expected);
    }

    #[test]
    fn adjoint_of_sum_distributes() {
        let e = parse_polynomial("(A+B)'").unwrap().normalize();
        assert_eq!(e, ExprAst::Sum(vec![sym("A").adjoint(), sym("B").adjoint()]));
        let f = parse_polynomial("adj(A+B)").unwrap().normalize();
        assert_eq!(e, f);
    }

    #[test]
    fn adjoint_of_product_reverses() {
        let e = parse_polynomial("((0,2)*A*B)'").unwrap().normalize();
        assert_eq!(
            e,
            ExprAst::Product(vec![
                sym("B").adjoint(),
                sym("A").adjoint(),
                ExprAst::Scalar(c64(0.0, -2.0))
            ])
        );
    }

    #[test]
    fn wishart_word() {
        let e = parse_polynomial("c*c'").unwrap();
        assert_eq!(e, ExprAst::Product(vec![sym("c"), sym("c").adjoint()]));
    }

    #[test]
    fn scalars_and_subtraction() {
        let p = parse_polynomial("0.5*A - (0,1)*B + 2").unwrap().to_polynomial();
        let coeffs: Vec<C64> = p.monomials.iter().map(|m| m.coeff).collect();
        assert_eq!(coeffs, vec![c64(0.5, 0.0), c64(0.0, -1.0), c64(2.0, 0.0)]);
        assert!(p.monomials[2].word.is_empty());
        let q = parse_polynomial("-A").unwrap().to_polynomial();
        assert_eq!(q.monomials[0].coeff, c64(-1.0, 0.0));
        assert_eq!(
            parse_polynomial("(-1.5e-3, 2E2)").unwrap(),
            ExprAst::Scalar(c64(-1.5e-3, 200.0))
        );
    }

    #[test]
    fn distributes_products_over_sums() {
        let p = parse_polynomial("(A+B)*(C+D)").unwrap().to_polynomial();
        let words: Vec<String> = p.monomials.iter().map(|m| crate::model::format_word(&m.word)).collect();
        assert_eq!(words, vec!["A*C", "A*D", "B*C", "B*D"]);
    }

    #[test]
    fn error_positions() {
        assert_eq!(
            parse_polynomial("A*(B+C"),
            Err(ParseError::UnbalancedParens { pos: 2 })
        );
        assert!(matches!(parse_polynomial("A+B)"), Err(ParseError::UnbalancedParens { pos: 3 })));
        assert!(matches!(
            parse_polynomial("A + * B"),
            Err(ParseError::SyntaxError { pos: 4, .. })
        ));
        assert!(matches!(parse_polynomial(""), Err(ParseError::SyntaxError { .. })));
        assert!(matches!(parse_polynomial("A $ B"), Err(ParseError::SyntaxError { pos: 2, .. })));
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let text = "(".repeat(10_000) + "A" + &")".repeat(10_000);
        assert!(parse_polynomial(&text).is_err());
    }

    fn arb_ast() -> impl Strategy<Value = ExprAst> {
        let leaf = prop_oneof![
            "[A-Za-z][A-Za-z0-9_]{0,3}"
                .prop_filter("reserved", |s| s != "adj")
                .prop_map(ExprAst::SymbolRef),
            (-1e3f64..1e3, -1e3f64..1e3).prop_map(|(a, b)| ExprAst::Scalar(c64(a, b))),
        ];
        leaf.prop_recursive(4, 32, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 2..4).prop_map(ExprAst::Sum),
                prop::collection::vec(inner.clone(), 2..4).prop_map(ExprAst::Product),
                inner.prop_map(ExprAst::adjoint),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_ast()) {
            let text = e.to_string();
            prop_assert_eq!(parse_polynomial(&text).unwrap(), e);
        }

        #[test]
        fn normalization_is_a_fixpoint(e in arb_ast()) {
            let once = e.normalize();
            prop_assert_eq!(once.normalize(), once);
        }

        #[test]
        fn never_panics_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_polynomial(&text);
        }

        #[test]
        fn never_panics_on_grammar_soup(text in "[A-Za-z0-9()'*+,. -]{0,40}") {
            let _ = parse_polynomial(&text);
        }
    }
}
