//! Arithmetic expressions in `x1..x_k` for graph functions.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numbers, `pi`, and the
//! functions `sin cos exp sqrt ln`. `^` binds tighter than unary minus and
//! associates to the right, so `-x1^2^2 = -(x1^(2^2))`.
//!
//! Derivatives are evaluated with second-order forward-mode jets rather
//! than finite differences, so a quadratic gets an exact Hessian.

use carnot_core::surfaces::GraphFunction;
use carnot_core::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected character {0:?} at offset {1}")]
    BadChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token {0:?}")]
    Unexpected(String),
    #[error("unknown identifier {0:?}")]
    Unknown(String),
    #[error("variable x{0} is outside x1..x{1}")]
    VariableRange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (off, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '+' | '*' | '/' | '^' | '(' | ')' | '-' => {
                out.push(Tok::Op(c));
                i += 1;
            }
            '\u{2212}' => {
                out.push(Tok::Op('-'));
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                    i += 1;
                }
                // exponent part, only when followed by digits
                if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].1.is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].1.is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().map(|p| p.1).collect();
                let v = text.parse::<f64>().map_err(|_| ParseError::Unexpected(text.clone()))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].1.is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().map(|p| p.1).collect()));
            }
            _ => return Err(ParseError::BadChar(c, off)),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Result<Tok, ParseError> {
        let t = self.toks.get(self.pos).cloned().ok_or(ParseError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        match self.next()? {
            Tok::Op(c) if c == op => Ok(()),
            t => Err(ParseError::Unexpected(format!("{t:?}"))),
        }
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(c)) if *c == '+' || *c == '-' => *c,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(c)) if *c == '*' || *c == '/' => *c,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.next()? {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Op('(') => {
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "pi" => return Ok(Node::Num(std::f64::consts::PI)),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "sqrt" => Func::Sqrt,
                    "ln" | "log" => Func::Ln,
                    _ => {
                        return match name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                            Some(k) if k >= 1 => Ok(Node::Var(k - 1)),
                            _ => Err(ParseError::Unknown(name)),
                        }
                    }
                };
                self.expect('(')?;
                let arg = self.sum()?;
                self.expect(')')?;
                Ok(Node::Call(func, Box::new(arg)))
            }
            t => Err(ParseError::Unexpected(format!("{t:?}"))),
        }
    }
}

/// Value, gradient and Hessian of an expression at a point.
#[derive(Debug, Clone)]
struct Jet {
    v: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

impl Jet {
    fn constant(v: f64, d: usize) -> Self {
        Self { v, g: vec![0.0; d], h: vec![0.0; d * d] }
    }

    fn var(x: f64, k: usize, d: usize) -> Self {
        let mut j = Self::constant(x, d);
        j.g[k] = 1.0;
        j
    }

    fn d(&self) -> usize {
        self.g.len()
    }

    fn add(&self, o: &Jet, sign: f64) -> Jet {
        Jet {
            v: self.v + sign * o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a + sign * b).collect(),
            h: self.h.iter().zip(&o.h).map(|(a, b)| a + sign * b).collect(),
        }
    }

    fn mul(&self, o: &Jet) -> Jet {
        let d = self.d();
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                h[i * d + j] = self.v * o.h[i * d + j]
                    + o.v * self.h[i * d + j]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
            }
        }
        Jet { v: self.v * o.v, g: self.g.iter().zip(&o.g).map(|(a, b)| self.v * b + o.v * a).collect(), h }
    }

    /// `f ∘ self` given `f, f', f''` at `self.v`.
    fn chain(&self, f: f64, f1: f64, f2: f64) -> Jet {
        let d = self.d();
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                h[i * d + j] = f1 * self.h[i * d + j] + f2 * self.g[i] * self.g[j];
            }
        }
        Jet { v: f, g: self.g.iter().map(|a| f1 * a).collect(), h }
    }

    fn recip(&self) -> Jet {
        let x = self.v;
        self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    fn powf(&self, c: f64) -> Jet {
        let x = self.v;
        if c == 0.0 {
            return Jet::constant(1.0, self.d());
        }
        self.chain(x.powf(c), c * x.powf(c - 1.0), c * (c - 1.0) * x.powf(c - 2.0))
    }

    fn call(&self, f: Func) -> Jet {
        let x = self.v;
        match f {
            Func::Sin => self.chain(x.sin(), x.cos(), -x.sin()),
            Func::Cos => self.chain(x.cos(), -x.sin(), -x.cos()),
            Func::Exp => self.chain(x.exp(), x.exp(), x.exp()),
            Func::Sqrt => {
                let r = x.sqrt();
                self.chain(r, 0.5 / r, -0.25 / (r * x))
            }
            Func::Ln => self.chain(x.ln(), 1.0 / x, -1.0 / (x * x)),
        }
    }
}

impl Node {
    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Num(_) => None,
            Node::Var(k) => Some(*k),
            Node::Neg(a) | Node::Call(_, a) => a.max_var(),
            Node::Bin(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    fn jet(&self, x: &[f64]) -> Jet {
        let d = x.len();
        match self {
            Node::Num(v) => Jet::constant(*v, d),
            Node::Var(k) => Jet::var(x[*k], *k, d),
            Node::Neg(a) => Jet::constant(0.0, d).add(&a.jet(x), -1.0),
            Node::Call(f, a) => a.jet(x).call(*f),
            Node::Bin(op, a, b) => {
                let ja = a.jet(x);
                match op {
                    '+' => ja.add(&b.jet(x), 1.0),
                    '-' => ja.add(&b.jet(x), -1.0),
                    '*' => ja.mul(&b.jet(x)),
                    '/' => ja.mul(&b.jet(x).recip()),
                    _ => {
                        if b.max_var().is_none() {
                            ja.powf(b.jet(x).v)
                        } else {
                            // a^b = exp(b ln a)
                            b.jet(x).mul(&ja.call(Func::Ln)).call(Func::Exp)
                        }
                    }
                }
            }
        }
    }
}

/// A parsed graph function `u: R^{2n} → R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    dim: usize,
    source: String,
}

impl Expr {
    /// Parses `src` as a function of `x1..x_dim`.
    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        let mut p = Parser { toks: tokenize(src)?, pos: 0 };
        let root = p.sum()?;
        if let Some(t) = p.peek() {
            return Err(ParseError::Unexpected(format!("{t:?}")));
        }
        if let Some(k) = root.max_var() {
            if k >= dim {
                return Err(ParseError::VariableRange(k + 1, dim));
            }
        }
        Ok(Self { root, dim, source: src.to_string() })
    }

    /// Highest variable index used, 1-based (0 for a constant).
    pub fn variables_used(src: &str) -> Result<usize, ParseError> {
        let mut p = Parser { toks: tokenize(src)?, pos: 0 };
        let root = p.sum()?;
        Ok(root.max_var().map_or(0, |k| k + 1))
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl GraphFunction for Expr {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.root.jet(x).v
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.root.jet(x).g)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.root.jet(x).h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(s: &str, d: usize) -> Expr {
        Expr::parse(s, d).unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(e("1+2*3", 1).value(&[0.0]), 7.0);
        assert_eq!(e("-2^2", 1).value(&[0.0]), -4.0);
        assert_eq!(e("2^3^2", 1).value(&[0.0]), 512.0);
        assert_eq!(e("(1+2)*3", 1).value(&[0.0]), 9.0);
        assert_eq!(e("8/4/2", 1).value(&[0.0]), 1.0);
        assert_eq!(e("2e-1 * 10", 1).value(&[0.0]), 2.0);
        assert_eq!(e("x1 \u{2212} 1", 1).value(&[3.0]), 2.0);
    }

    #[test]
    fn quadratic_derivatives_are_exact() {
        let u = e("0.25*(x1^2+x2^2-x3^2-x4^2)", 4);
        let x = [0.3, -1.2, 0.7, 2.0];
        assert_eq!(u.gradient(&x), DVector::from_vec(vec![0.15, -0.6, -0.35, -1.0]));
        let h = u.hessian(&x);
        assert_eq!(h, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, -0.5, -0.5])));
    }

    #[test]
    fn transcendental_derivatives_match_closed_form() {
        // u = sin(x1) exp(x2) + x1 / x2
        let u = e("sin(x1)*exp(x2) + x1/x2", 2);
        let (a, b) = (0.4, 1.3);
        let g = u.gradient(&[a, b]);
        assert!((g[0] - (a.cos() * b.exp() + 1.0 / b)).abs() < 1e-14);
        assert!((g[1] - (a.sin() * b.exp() - a / (b * b))).abs() < 1e-14);
        let h = u.hessian(&[a, b]);
        assert!((h[(0, 0)] + a.sin() * b.exp()).abs() < 1e-14);
        assert!((h[(0, 1)] - (a.cos() * b.exp() - 1.0 / (b * b))).abs() < 1e-14);
        assert!((h[(1, 0)] - h[(0, 1)]).abs() < 1e-15);
        assert!((h[(1, 1)] - (a.sin() * b.exp() + 2.0 * a / (b * b * b))).abs() < 1e-14);
    }

    #[test]
    fn variable_exponent() {
        // x1^x2 = exp(x2 ln x1)
        let u = e("x1^x2", 2);
        let (a, b) = (1.7f64, 0.6f64);
        let g = u.gradient(&[a, b]);
        assert!((u.value(&[a, b]) - a.powf(b)).abs() < 1e-14);
        assert!((g[0] - b * a.powf(b - 1.0)).abs() < 1e-14);
        assert!((g[1] - a.powf(b) * a.ln()).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Expr::parse("x3", 2), Err(ParseError::VariableRange(3, 2))));
        assert!(matches!(Expr::parse("y1", 2), Err(ParseError::Unknown(_))));
        assert!(matches!(Expr::parse("1 +", 2), Err(ParseError::UnexpectedEnd)));
        assert!(matches!(Expr::parse("(1", 2), Err(ParseError::UnexpectedEnd)));
        assert!(matches!(Expr::parse("1 2", 2), Err(ParseError::Unexpected(_))));
        assert!(matches!(Expr::parse("x1 $ 2", 2), Err(ParseError::BadChar('$', 3))));
        assert!(matches!(Expr::parse("x0", 2), Err(ParseError::Unknown(_))));
        assert_eq!(Expr::variables_used("x1 + sin(x4)").unwrap(), 4);
    }
}
