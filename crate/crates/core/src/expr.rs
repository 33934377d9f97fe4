//! Arithmetic expressions over named scalar variables.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus and is right associative, so `-x^2`
//! is `-(x^2)` and `2^3^2` is `2^(3^2)`. The only functions are `sin`,
//! `cos`, `exp`, `log`, `sqrt` and `tanh`; nonsmooth primitives are not
//! part of the language.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use log::warn;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::dual::Dual;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown function `{name}` at position {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Source of variable values during evaluation.
pub trait Env {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl Env for HashMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Env for HashMap<&str, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Env for [(&str, f64)] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Env for [(&str, f64); N] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.as_slice().lookup(name)
    }
}

/// Parallel name/value slices; the allocation-free environment used by the
/// integrators.
#[derive(Debug, Clone, Copy)]
pub struct Bindings<'a> {
    pub names: &'a [String],
    pub values: &'a [f64],
}

impl<'a> Bindings<'a> {
    pub fn new(names: &'a [String], values: &'a [f64]) -> Self {
        debug_assert_eq!(names.len(), values.len());
        Self { names, values }
    }
}

impl Env for Bindings<'_> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        end: text.chars().count(),
    };
    let expr = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax {
            pos: tok.pos,
            message: format!("unexpected {}", tok.kind.describe()),
        });
    }
    Ok(expr)
}

impl Expr {
    pub fn eval(&self, env: &(impl Env + ?Sized)) -> Result<f64, ExprError> {
        Ok(self.eval_inner(env, None)?.re)
    }

    /// Value and partial derivative with respect to `seed`.
    pub fn eval_dual(&self, env: &(impl Env + ?Sized), seed: &str) -> Result<(f64, f64), ExprError> {
        let d = self.eval_inner(env, Some(seed))?;
        Ok((d.re, d.eps))
    }

    /// Names of all variables referenced by the expression.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub fn references(&self, name: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => v == name,
            Expr::Neg(e) | Expr::Call(_, e) => e.references(name),
            Expr::Binary(_, a, b) => a.references(name) || b.references(name),
        }
    }

    /// Rename variables through `map`; names absent from the map are kept.
    pub fn rename(&self, map: &HashMap<String, String>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(v) => Expr::Var(map.get(v).cloned().unwrap_or_else(|| v.clone())),
            Expr::Neg(e) => Expr::Neg(Box::new(e.rename(map))),
            Expr::Call(f, e) => Expr::Call(*f, Box::new(e.rename(map))),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.rename(map)), Box::new(b.rename(map))),
        }
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    fn eval_inner(&self, env: &(impl Env + ?Sized), seed: Option<&str>) -> Result<Dual, ExprError> {
        let out = match self {
            Expr::Num(v) => Dual::constant(*v),
            Expr::Var(name) => {
                let value = env
                    .lookup(name)
                    .ok_or_else(|| ExprError::Unbound(name.clone()))?;
                if seed == Some(name.as_str()) {
                    Dual::variable(value)
                } else {
                    Dual::constant(value)
                }
            }
            Expr::Neg(e) => -e.eval_inner(env, seed)?,
            Expr::Binary(op, a, b) => {
                let a = a.eval_inner(env, seed)?;
                let b = b.eval_inner(env, seed)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.re == 0.0 {
                            return Err(domain("division", format!("{} / 0", a.re)));
                        }
                        a / b
                    }
                    BinOp::Pow => power(a, b)?,
                }
            }
            Expr::Call(f, arg) => {
                let x = arg.eval_inner(env, seed)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Tanh => x.tanh(),
                    Func::Log => {
                        if x.re <= 0.0 {
                            return Err(domain("log", format!("argument {} is not positive", x.re)));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x.re < 0.0 {
                            return Err(domain("sqrt", format!("argument {} is negative", x.re)));
                        }
                        if x.re == 0.0 && x.eps != 0.0 {
                            return Err(domain("sqrt", "derivative is unbounded at 0".to_string()));
                        }
                        if x.re == 0.0 {
                            Dual::constant(0.0)
                        } else {
                            x.sqrt()
                        }
                    }
                }
            }
        };
        if !out.re.is_finite() || !out.eps.is_finite() {
            return Err(domain("evaluation", format!("non-finite result in `{self}`")));
        }
        Ok(out)
    }
}

fn domain(op: &'static str, detail: String) -> ExprError {
    ExprError::Domain { op, detail }
}

fn power(a: Dual, b: Dual) -> Result<Dual, ExprError> {
    if b.eps == 0.0 {
        let k = b.re;
        if a.re == 0.0 && k == 0.0 {
            warn!("0^0 evaluated as 1");
            return Ok(Dual::constant(1.0));
        }
        if a.re == 0.0 && k < 0.0 {
            return Err(domain("power", format!("0 raised to negative exponent {k}")));
        }
        if k.fract() != 0.0 && a.re <= 0.0 {
            return Err(domain(
                "power",
                format!("non-integer exponent {k} needs a positive base, got {}", a.re),
            ));
        }
        Ok(a.powf_const(k))
    } else {
        if a.re <= 0.0 {
            return Err(domain(
                "power",
                format!("variable exponent needs a positive base, got {}", a.re),
            ));
        }
        Ok(a.pow(b))
    }
}

/// Matrix of partials: row `i`, column `j` is `d exprs[i] / d vars[j]`.
pub fn jacobian(
    exprs: &[Expr],
    vars: &[&str],
    env: &(impl Env + ?Sized),
) -> Result<DMatrix<f64>, ExprError> {
    let mut out = DMatrix::zeros(exprs.len(), vars.len());
    for (i, e) in exprs.iter().enumerate() {
        for (j, v) in vars.iter().enumerate() {
            if e.references(v) {
                out[(i, j)] = e.eval_dual(env, v)?.1;
            }
        }
    }
    Ok(out)
}

/// Fully parenthesised form; parsing it yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(c) => format!("operator `{c}`"),
            TokenKind::LParen => "`(`".to_string(),
            TokenKind::RParen => "`)`".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let literal: String = chars[start..i].iter().collect();
            let value = literal.parse::<f64>().map_err(|_| ExprError::Syntax {
                pos: start,
                message: format!("malformed number `{literal}`"),
            })?;
            TokenKind::Num(value)
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            TokenKind::Ident(chars[start..i].iter().collect())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                _ => {
                    return Err(ExprError::Syntax {
                        pos: start,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            }
        };
        out.push(Token { kind, pos: start });
    }
    Ok(out)
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token { kind: TokenKind::Op(c), .. }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token { kind: TokenKind::RParen, .. }) => {
                self.pos += 1;
                Ok(())
            }
            Some(tok) => Err(ExprError::Syntax {
                pos: tok.pos,
                message: format!("expected `)`, found {}", tok.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                pos: self.end,
                message: "expected `)`, found end of input".to_string(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.eat_op(&['^']).is_some() {
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax {
                pos: self.end,
                message: "unexpected end of input".to_string(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Num(v)),
            TokenKind::Ident(name) => {
                if matches!(self.peek(), Some(Token { kind: TokenKind::LParen, .. })) {
                    let func = Func::from_name(&name).ok_or(ExprError::UnknownFunction {
                        name: name.clone(),
                        pos: tok.pos,
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            other => Err(ExprError::Syntax {
                pos: self.here().min(tok.pos),
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, env: &[(&str, f64)]) -> Result<f64, ExprError> {
        parse(src)?.eval(env)
    }

    #[test]
    fn literal_arithmetic() {
        assert_eq!(ev("2+3", &[]).unwrap(), 5.0);
        assert_eq!(ev("x1*u1", &[("x1", 2.0), ("u1", 3.0)]).unwrap(), 6.0);
        assert_eq!(ev("sin(t)", &[("t", 0.0)]).unwrap(), 0.0);
        assert_eq!(ev("x1^2", &[("x1", 3.0)]).unwrap(), 9.0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("-2^2", &[]).unwrap(), -4.0);
        assert_eq!(ev("2^3^2", &[]).unwrap(), 512.0);
        assert_eq!(ev("8/4/2", &[]).unwrap(), 1.0);
        assert_eq!(ev("1-2-3", &[]).unwrap(), -4.0);
        assert_eq!(ev("2*-3", &[]).unwrap(), -6.0);
        assert_eq!(ev("2^-1", &[]).unwrap(), 0.5);
        assert_eq!(ev("1.5e1 + 2E-1", &[]).unwrap(), 15.2);
    }

    #[test]
    fn unclosed_paren_reports_position() {
        match parse("(x1") {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_function_is_rejected() {
        assert_eq!(
            parse("1 + abs(x1)"),
            Err(ExprError::UnknownFunction { name: "abs".into(), pos: 4 })
        );
    }

    #[test]
    fn domain_errors_are_reported() {
        assert!(matches!(ev("log(x1)", &[("x1", 0.0)]), Err(ExprError::Domain { .. })));
        assert!(matches!(ev("1/x1", &[("x1", 0.0)]), Err(ExprError::Domain { .. })));
        assert!(matches!(ev("sqrt(0-1)", &[]), Err(ExprError::Domain { .. })));
        assert!(matches!(ev("x1^0.5", &[("x1", -1.0)]), Err(ExprError::Domain { .. })));
        assert!(matches!(ev("exp(1000)", &[]), Err(ExprError::Domain { .. })));
        assert_eq!(ev("x1^3", &[("x1", -2.0)]).unwrap(), -8.0);
    }

    #[test]
    fn zero_to_zero_is_one() {
        assert_eq!(ev("x1^0", &[("x1", 0.0)]).unwrap(), 1.0);
    }

    #[test]
    fn unbound_variable() {
        assert_eq!(ev("x2 + 1", &[("x1", 0.0)]), Err(ExprError::Unbound("x2".into())));
    }

    #[test]
    fn dual_examples() {
        let e = parse("x1^2").unwrap();
        assert_eq!(e.eval_dual(&[("x1", 3.0)], "x1").unwrap(), (9.0, 6.0));
        let e = parse("sin(u1)").unwrap();
        assert_eq!(e.eval_dual(&[("u1", 0.0)], "u1").unwrap(), (0.0, 1.0));
        let e = parse("t*0+5").unwrap();
        assert_eq!(e.eval_dual(&[("t", 2.0)], "t").unwrap(), (5.0, 0.0));
    }

    #[test]
    fn jacobian_examples() {
        let es = vec![parse("x2").unwrap(), parse("u1").unwrap()];
        let j = jacobian(&es, &["x1", "x2"], &[("x1", 0.0), ("x2", 0.0), ("u1", 0.0)]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));

        let es = vec![parse("x1*u1").unwrap()];
        let j = jacobian(&es, &["x1"], &[("x1", 2.0), ("u1", 3.0)]).unwrap();
        assert_eq!(j[(0, 0)], 3.0);

        let es = vec![parse("exp(x1)").unwrap()];
        let j = jacobian(&es, &["x1"], &[("x1", 1.0)]).unwrap();
        let h = 1e-6;
        let fd = ((1.0f64 + h).exp() - (1.0f64 - h).exp()) / (2.0 * h);
        assert!((j[(0, 0)] - fd).abs() < 1e-6);
        assert!((j[(0, 0)] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn printer_round_trip() {
        for src in ["-x1^2 + 3*sin(t)/u1", "2^3^2", "x1 - (x2 - 1e-7)", "-(-x1)", "exp(-t)*x1"] {
            let e = parse(src).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{src} -> {printed}");
        }
    }

    #[test]
    fn rename_substitutes_names() {
        let e = parse("x1 + t").unwrap();
        let map = HashMap::from([("t".to_string(), "x1".to_string()), ("x1".to_string(), "x2".to_string())]);
        assert_eq!(e.rename(&map).to_string(), "(x2 + x1)");
    }
}
