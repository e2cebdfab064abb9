//! Step/swap condition expressions.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! or       := and ( "||" and )*
//! and      := equality ( "&&" equality )*
//! equality := relation ( ("==" | "!=") relation )*
//! relation := additive ( ("<" | "<=" | ">" | ">=") additive )*
//! additive := term ( ("+" | "-") term )*
//! term     := unary ( ("*" | "/") unary )*
//! unary    := ("!" | "-") unary | atom
//! atom     := "true" | "false" | number | ident "." ident | "(" or ")"
//! ```
//!
//! Variables are always `instance.variable`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::value::{Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConditionError {
    #[error("lex error at offset {offset}: {message}")]
    Lex { offset: usize, message: String },
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("type error at offset {offset}: {message}")]
    Type { offset: usize, message: String },
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("type mismatch: {0}")]
    Mismatch(String),
}

/// A reference to `instance.variable`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarRef {
    pub instance: String,
    pub variable: String,
}

impl VarRef {
    pub fn new(instance: impl Into<String>, variable: impl Into<String>) -> Self {
        VarRef {
            instance: instance.into(),
            variable: variable.into(),
        }
    }

    pub fn key(&self) -> String {
        format!("{}.{}", self.instance, self.variable)
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.instance, self.variable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "||",
            BinaryOp::And => "&&",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }
}

/// Condition AST. Structural equality ignores source offsets.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionExpr {
    Bool(bool),
    Number(f64),
    Var(VarRef),
    Unary(UnaryOp, Box<ConditionExpr>),
    Binary(BinaryOp, Box<ConditionExpr>, Box<ConditionExpr>),
}

impl ConditionExpr {
    /// All variables referenced, deduplicated and sorted.
    pub fn variables(&self) -> Vec<VarRef> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<VarRef>) {
        match self {
            ConditionExpr::Var(v) => out.push(v.clone()),
            ConditionExpr::Unary(_, e) => e.collect_vars(out),
            ConditionExpr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            ConditionExpr::Bool(_) | ConditionExpr::Number(_) => {}
        }
    }

    /// Type-checks against known variable types. Unknown variables are
    /// accepted with any type.
    pub fn check_types(&self, types: &dyn Fn(&VarRef) -> Option<ValueType>) -> Result<(), ConditionError> {
        match self.infer(types)? {
            Ty::Bool | Ty::Any => Ok(()),
            other => Err(ConditionError::Type {
                offset: 0,
                message: format!("condition must be boolean, found {other}"),
            }),
        }
    }

    fn infer(&self, types: &dyn Fn(&VarRef) -> Option<ValueType>) -> Result<Ty, ConditionError> {
        let type_err = |message: String| ConditionError::Type { offset: 0, message };
        Ok(match self {
            ConditionExpr::Bool(_) => Ty::Bool,
            ConditionExpr::Number(_) => Ty::Num,
            ConditionExpr::Var(v) => match types(v) {
                None => Ty::Any,
                Some(ValueType::Boolean) => Ty::Bool,
                Some(ValueType::Real | ValueType::Integer) => Ty::Num,
                Some(ValueType::String) => Ty::Str,
            },
            ConditionExpr::Unary(op, e) => {
                let t = e.infer(types)?;
                let want = if *op == UnaryOp::Not { Ty::Bool } else { Ty::Num };
                if !t.fits(want) {
                    return Err(type_err(format!("operand of {op:?} must be {want}, found {t}")));
                }
                want
            }
            ConditionExpr::Binary(op, l, r) => {
                let (lt, rt) = (l.infer(types)?, r.infer(types)?);
                match op {
                    BinaryOp::Or | BinaryOp::And => {
                        if !lt.fits(Ty::Bool) || !rt.fits(Ty::Bool) {
                            return Err(type_err(format!(
                                "operands of '{}' must be boolean, found {lt} and {rt}",
                                op.symbol()
                            )));
                        }
                        Ty::Bool
                    }
                    BinaryOp::Eq | BinaryOp::Ne => {
                        if !lt.compatible(rt) {
                            return Err(type_err(format!(
                                "operands of '{}' differ in type: {lt} and {rt}",
                                op.symbol()
                            )));
                        }
                        Ty::Bool
                    }
                    BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                        if !lt.fits(Ty::Num) || !rt.fits(Ty::Num) {
                            return Err(type_err(format!(
                                "operands of '{}' must be numeric, found {lt} and {rt}",
                                op.symbol()
                            )));
                        }
                        Ty::Bool
                    }
                    BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
                        if !lt.fits(Ty::Num) || !rt.fits(Ty::Num) {
                            return Err(type_err(format!(
                                "operands of '{}' must be numeric, found {lt} and {rt}",
                                op.symbol()
                            )));
                        }
                        Ty::Num
                    }
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Bool,
    Num,
    Str,
    Any,
}

impl Ty {
    fn fits(self, want: Ty) -> bool {
        self == Ty::Any || self == want
    }

    fn compatible(self, other: Ty) -> bool {
        self == Ty::Any || other == Ty::Any || self == other
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Bool => "boolean",
            Ty::Num => "numeric",
            Ty::Str => "string",
            Ty::Any => "any",
        })
    }
}

/// Prints a fully parenthesised form that reparses to the same tree.
impl fmt::Display for ConditionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionExpr::Bool(b) => write!(f, "{b}"),
            ConditionExpr::Number(n) => write!(f, "{n:?}"),
            ConditionExpr::Var(v) => write!(f, "{v}"),
            ConditionExpr::Unary(UnaryOp::Not, e) => write!(f, "!{e}"),
            ConditionExpr::Unary(UnaryOp::Neg, e) => write!(f, "-{e}"),
            ConditionExpr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    True,
    False,
    Num(f64),
    Ident(String),
    Dot,
    LParen,
    RParen,
    Not,
    Minus,
    Plus,
    Star,
    Slash,
    AndAnd,
    OrOr,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ConditionError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let two = |s: &[u8; 2]| bytes.get(i..i + 2) == Some(&s[..]);
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'.' => Tok::Dot,
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'&' if two(b"&&") => {
                i += 1;
                Tok::AndAnd
            }
            b'|' if two(b"||") => {
                i += 1;
                Tok::OrOr
            }
            b'=' if two(b"==") => {
                i += 1;
                Tok::EqEq
            }
            b'!' if two(b"!=") => {
                i += 1;
                Tok::NotEq
            }
            b'!' => Tok::Not,
            b'<' if two(b"<=") => {
                i += 1;
                Tok::Le
            }
            b'<' => Tok::Lt,
            b'>' if two(b">=") => {
                i += 1;
                Tok::Ge
            }
            b'>' => Tok::Gt,
            b'0'..=b'9' => {
                let (n, end) = lex_number(text, i)?;
                out.push((Tok::Num(n), start));
                i = end;
                continue;
            }
            c if c == b'_' || c.is_ascii_alphabetic() => {
                let mut end = i + 1;
                while end < bytes.len() && (bytes[end] == b'_' || bytes[end].is_ascii_alphanumeric()) {
                    end += 1;
                }
                let word = &text[i..end];
                let tok = match word {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((tok, start));
                i = end;
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(ConditionError::Lex {
                    offset: i,
                    message: format!("unexpected character '{ch}'"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

fn lex_number(text: &str, start: usize) -> Result<(f64, usize), ConditionError> {
    let bytes = text.as_bytes();
    let digits = |mut j: usize| {
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        j
    };
    let mut end = digits(start);
    if end < bytes.len() && bytes[end] == b'.' && end + 1 < bytes.len() && bytes[end + 1].is_ascii_digit() {
        end = digits(end + 1);
    }
    if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
        let mut j = end + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        let after = digits(j);
        if after == j {
            return Err(ConditionError::Lex {
                offset: end,
                message: "malformed exponent".into(),
            });
        }
        end = after;
    }
    let n = text[start..end].parse::<f64>().map_err(|e| ConditionError::Lex {
        offset: start,
        message: e.to_string(),
    })?;
    Ok((n, end))
}

/// Rejects ill-typed operator nodes at construction, reporting the operator offset.
fn typed(node: ConditionExpr, offset: usize) -> Result<ConditionExpr, ConditionError> {
    match node.infer(&|_| None) {
        Ok(_) => Ok(node),
        Err(ConditionError::Type { message, .. }) => Err(ConditionError::Type { offset, message }),
        Err(e) => Err(e),
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn err(&self, message: impl Into<String>) -> ConditionError {
        ConditionError::Parse {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn binary_level(
        &mut self,
        ops: &[(Tok, BinaryOp)],
        sub: fn(&mut Parser) -> Result<ConditionExpr, ConditionError>,
    ) -> Result<ConditionExpr, ConditionError> {
        let mut lhs = sub(self)?;
        'outer: loop {
            for (tok, op) in ops {
                if self.peek() == Some(tok) {
                    let at = self.offset();
                    self.pos += 1;
                    let rhs = sub(self)?;
                    lhs = typed(ConditionExpr::Binary(*op, Box::new(lhs), Box::new(rhs)), at)?;
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn or(&mut self) -> Result<ConditionExpr, ConditionError> {
        self.binary_level(&[(Tok::OrOr, BinaryOp::Or)], Parser::and)
    }

    fn and(&mut self) -> Result<ConditionExpr, ConditionError> {
        self.binary_level(&[(Tok::AndAnd, BinaryOp::And)], Parser::equality)
    }

    fn equality(&mut self) -> Result<ConditionExpr, ConditionError> {
        self.binary_level(
            &[(Tok::EqEq, BinaryOp::Eq), (Tok::NotEq, BinaryOp::Ne)],
            Parser::relation,
        )
    }

    fn relation(&mut self) -> Result<ConditionExpr, ConditionError> {
        self.binary_level(
            &[
                (Tok::Le, BinaryOp::Le),
                (Tok::Lt, BinaryOp::Lt),
                (Tok::Ge, BinaryOp::Ge),
                (Tok::Gt, BinaryOp::Gt),
            ],
            Parser::additive,
        )
    }

    fn additive(&mut self) -> Result<ConditionExpr, ConditionError> {
        self.binary_level(&[(Tok::Plus, BinaryOp::Add), (Tok::Minus, BinaryOp::Sub)], Parser::term)
    }

    fn term(&mut self) -> Result<ConditionExpr, ConditionError> {
        self.binary_level(
            &[(Tok::Star, BinaryOp::Mul), (Tok::Slash, BinaryOp::Div)],
            Parser::unary,
        )
    }

    fn unary(&mut self) -> Result<ConditionExpr, ConditionError> {
        match self.peek() {
            Some(Tok::Not) => {
                let at = self.offset();
                self.pos += 1;
                typed(ConditionExpr::Unary(UnaryOp::Not, Box::new(self.unary()?)), at)
            }
            Some(Tok::Minus) => {
                let at = self.offset();
                self.pos += 1;
                typed(ConditionExpr::Unary(UnaryOp::Neg, Box::new(self.unary()?)), at)
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<ConditionExpr, ConditionError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::True) => Ok(ConditionExpr::Bool(true)),
            Some(Tok::False) => Ok(ConditionExpr::Bool(false)),
            Some(Tok::Num(n)) => Ok(ConditionExpr::Number(n)),
            Some(Tok::Ident(instance)) => {
                if self.next() != Some(Tok::Dot) {
                    self.pos -= 1;
                    return Err(self.err(format!("expected '.' after '{instance}'")));
                }
                match self.next() {
                    Some(Tok::Ident(variable)) => Ok(ConditionExpr::Var(VarRef { instance, variable })),
                    _ => {
                        self.pos -= 1;
                        Err(self.err("expected variable name after '.'"))
                    }
                }
            }
            Some(Tok::LParen) => {
                let inner = self.or()?;
                if self.next() != Some(Tok::RParen) {
                    self.pos -= 1;
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(_) => Err(ConditionError::Parse {
                offset: at,
                message: "unexpected token".into(),
            }),
            None => Err(ConditionError::Parse {
                offset: at,
                message: "unexpected end of input".into(),
            }),
        }
    }
}

/// Parses condition text and checks literal types.
pub fn parse_condition(text: &str) -> Result<ConditionExpr, ConditionError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let expr = p.or()?;
    if p.pos < p.toks.len() {
        return Err(p.err("trailing input"));
    }
    expr.check_types(&|_| None)?;
    Ok(expr)
}

/// Variable bindings keyed by `instance.variable`.
pub type Scope = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Bool(bool),
    Num(f64),
    Str(String),
}

fn eval_val(expr: &ConditionExpr, scope: &Scope) -> Result<Val, ConditionError> {
    Ok(match expr {
        ConditionExpr::Bool(b) => Val::Bool(*b),
        ConditionExpr::Number(n) => Val::Num(*n),
        ConditionExpr::Var(v) => match scope.get(&v.key()) {
            None => return Err(ConditionError::Unbound(v.key())),
            Some(Value::Boolean(b)) => Val::Bool(*b),
            Some(Value::Real(r)) => Val::Num(*r),
            Some(Value::Integer(i)) => Val::Num(*i as f64),
            Some(Value::String(s)) => Val::Str(s.clone()),
        },
        ConditionExpr::Unary(op, e) => match (op, eval_val(e, scope)?) {
            (UnaryOp::Not, Val::Bool(b)) => Val::Bool(!b),
            (UnaryOp::Neg, Val::Num(n)) => Val::Num(-n),
            (op, v) => return Err(ConditionError::Mismatch(format!("{op:?} applied to {v:?}"))),
        },
        ConditionExpr::Binary(op, l, r) => {
            if matches!(op, BinaryOp::And | BinaryOp::Or) {
                // Strict: both sides are always evaluated.
                let (a, b) = (eval_val(l, scope)?, eval_val(r, scope)?);
                return match (a, b) {
                    (Val::Bool(a), Val::Bool(b)) => Ok(Val::Bool(if *op == BinaryOp::And { a && b } else { a || b })),
                    (a, b) => Err(ConditionError::Mismatch(format!(
                        "'{}' on {a:?} and {b:?}",
                        op.symbol()
                    ))),
                };
            }
            let (a, b) = (eval_val(l, scope)?, eval_val(r, scope)?);
            match (op, a, b) {
                (BinaryOp::Eq, a, b) => Val::Bool(equal(a, b, op)?),
                (BinaryOp::Ne, a, b) => Val::Bool(!equal(a, b, op)?),
                (_, Val::Num(a), Val::Num(b)) => match op {
                    BinaryOp::Lt => Val::Bool(a < b),
                    BinaryOp::Le => Val::Bool(a <= b),
                    BinaryOp::Gt => Val::Bool(a > b),
                    BinaryOp::Ge => Val::Bool(a >= b),
                    BinaryOp::Add => Val::Num(a + b),
                    BinaryOp::Sub => Val::Num(a - b),
                    BinaryOp::Mul => Val::Num(a * b),
                    BinaryOp::Div => Val::Num(a / b),
                    _ => unreachable!("logical and equality handled above"),
                },
                (op, a, b) => {
                    return Err(ConditionError::Mismatch(format!(
                        "'{}' on {a:?} and {b:?}",
                        op.symbol()
                    )))
                }
            }
        }
    })
}

fn equal(a: Val, b: Val, op: &BinaryOp) -> Result<bool, ConditionError> {
    match (a, b) {
        (Val::Bool(a), Val::Bool(b)) => Ok(a == b),
        (Val::Num(a), Val::Num(b)) => Ok(a == b),
        (Val::Str(a), Val::Str(b)) => Ok(a == b),
        (a, b) => Err(ConditionError::Mismatch(format!(
            "'{}' on {a:?} and {b:?}",
            op.symbol()
        ))),
    }
}

/// Evaluates a condition to a boolean.
pub fn evaluate(expr: &ConditionExpr, scope: &Scope) -> Result<bool, ConditionError> {
    match eval_val(expr, scope)? {
        Val::Bool(b) => Ok(b),
        other => Err(ConditionError::Mismatch(format!("condition evaluated to {other:?}"))),
    }
}

/// A trigger condition: once it has evaluated to true it stays true.
#[derive(Debug, Clone, PartialEq)]
pub struct LatchedCondition {
    expr: ConditionExpr,
    latched: bool,
}

impl LatchedCondition {
    pub fn new(expr: ConditionExpr) -> Self {
        LatchedCondition { expr, latched: false }
    }

    pub fn expr(&self) -> &ConditionExpr {
        &self.expr
    }

    pub fn is_latched(&self) -> bool {
        self.latched
    }

    pub(crate) fn set_latched(&mut self, latched: bool) {
        self.latched = latched;
    }

    /// `latched <- latched || eval(expr)`. The expression is evaluated even
    /// when already latched so that scope errors still surface.
    pub fn update(&mut self, scope: &Scope) -> Result<bool, ConditionError> {
        let now = evaluate(&self.expr, scope)?;
        self.latched = self.latched || now;
        Ok(self.latched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope(pairs: &[(&str, Value)]) -> Scope {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn parses_literal_true() {
        assert_eq!(parse_condition("(true)").unwrap(), ConditionExpr::Bool(true));
    }

    #[test]
    fn constant_relation_is_true_everywhere() {
        let e = parse_condition("(1 < 2)").unwrap();
        assert!(matches!(e, ConditionExpr::Binary(BinaryOp::Lt, _, _)));
        assert!(evaluate(&e, &Scope::new()).unwrap());
    }

    #[test]
    fn equality_over_two_variables() {
        let e = parse_condition("(controller.valve == leak_controller.valve)").unwrap();
        assert_eq!(
            e,
            ConditionExpr::Binary(
                BinaryOp::Eq,
                Box::new(ConditionExpr::Var(VarRef::new("controller", "valve"))),
                Box::new(ConditionExpr::Var(VarRef::new("leak_controller", "valve"))),
            )
        );
    }

    #[test]
    fn evaluates_examples() {
        assert!(evaluate(&parse_condition("(true)").unwrap(), &Scope::new()).unwrap());
        let e = parse_condition("(a.x < 2.0)").unwrap();
        assert!(evaluate(&e, &scope(&[("a.x", Value::Real(1.5))])).unwrap());
        let e = parse_condition("(a.x < 2.0 && b.ok)").unwrap();
        let s = scope(&[("a.x", Value::Real(3.0)), ("b.ok", Value::Boolean(true))]);
        assert!(!evaluate(&e, &s).unwrap());
    }

    #[test]
    fn precedence() {
        let e = parse_condition("1 + 2 * 3 == 7 && !false || false").unwrap();
        assert!(evaluate(&e, &Scope::new()).unwrap());
        let e = parse_condition("-2 - -3 > 0").unwrap();
        assert!(evaluate(&e, &Scope::new()).unwrap());
        let e = parse_condition("a.x + 1 >= 2").unwrap();
        assert_eq!(e.to_string(), "((a.x + 1.0) >= 2.0)");
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(
            parse_condition("(a.x # 1)"),
            Err(ConditionError::Lex {
                offset: 5,
                message: "unexpected character '#'".into()
            })
        );
        match parse_condition("(a.x < )") {
            Err(ConditionError::Parse { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
        match parse_condition("(tank < 1)") {
            Err(ConditionError::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_condition("(true"), Err(ConditionError::Parse { .. })));
        match parse_condition("(1 && true)") {
            Err(ConditionError::Type { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_condition("(1 + 2)"), Err(ConditionError::Type { .. })));
        assert!(matches!(
            parse_condition("(true < 2)"),
            Err(ConditionError::Type { .. })
        ));
        assert!(matches!(parse_condition(""), Err(ConditionError::Parse { .. })));
    }

    #[test]
    fn typed_check_uses_variable_types() {
        let e = parse_condition("(a.flag && a.x > 1)").unwrap();
        let ok = |v: &VarRef| match v.variable.as_str() {
            "flag" => Some(ValueType::Boolean),
            _ => Some(ValueType::Real),
        };
        assert!(e.check_types(&ok).is_ok());
        let bad = |_: &VarRef| Some(ValueType::Real);
        assert!(e.check_types(&bad).is_err());
    }

    #[test]
    fn evaluation_errors() {
        let e = parse_condition("(a.x > 1)").unwrap();
        assert_eq!(evaluate(&e, &Scope::new()), Err(ConditionError::Unbound("a.x".into())));
        let s = scope(&[("a.x", Value::Boolean(true))]);
        assert!(matches!(evaluate(&e, &s), Err(ConditionError::Mismatch(_))));
    }

    #[test]
    fn latch_examples() {
        let mut l = LatchedCondition::new(parse_condition("(false)").unwrap());
        assert!(!l.update(&Scope::new()).unwrap());
        l.set_latched(true);
        assert!(l.update(&Scope::new()).unwrap());

        let mut l = LatchedCondition::new(parse_condition("(a.x >= 1)").unwrap());
        assert!(l.update(&scope(&[("a.x", Value::Real(1.0))])).unwrap());
        assert!(l.update(&scope(&[("a.x", Value::Real(0.0))])).unwrap());
    }

    #[test]
    fn constant_latches() {
        let mut t = LatchedCondition::new(parse_condition("(true)").unwrap());
        assert!(t.update(&Scope::new()).unwrap());
        let mut f = LatchedCondition::new(parse_condition("(false)").unwrap());
        for _ in 0..10 {
            assert!(!f.update(&Scope::new()).unwrap());
        }
    }
}
