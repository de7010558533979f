//! MPL integer expressions.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! or      := and ("||" and)*
//! and     := cmp ("&&" cmp)*
//! cmp     := sum (("==" | "!=" | "<" | "<=" | ">" | ">=") sum)?
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/" | "%") unary)*
//! unary   := ("-" | "!") unary | atom
//! atom    := integer | identifier | "(" or ")"
//! ```
//!
//! Comparisons and logical operators yield 0 or 1. Division and modulo
//! truncate toward zero, as in C.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Var(String),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Mul,
    Div,
    Rem,
    Add,
    Sub,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("variable `{0}` is not initialized")]
    Uninitialized(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(text)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.or()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Parse(format!("unexpected `{tok}`")));
        }
        Ok(expr)
    }

    /// Evaluates against a variable table. Any reference to a missing
    /// name fails with [`ExprError::Uninitialized`].
    pub fn eval(&self, vars: &BTreeMap<String, i64>) -> Result<i64, ExprError> {
        match self {
            Expr::Int(v) => Ok(*v),
            Expr::Var(name) => vars
                .get(name)
                .copied()
                .ok_or_else(|| ExprError::Uninitialized(name.clone())),
            Expr::Neg(e) => e.eval(vars)?.checked_neg().ok_or(ExprError::Overflow),
            Expr::Not(e) => Ok((e.eval(vars)? == 0) as i64),
            Expr::Binary(op, l, r) => {
                let a = l.eval(vars)?;
                // && and || short-circuit like C
                match op {
                    BinOp::And if a == 0 => return Ok(0),
                    BinOp::Or if a != 0 => return Ok(1),
                    _ => {}
                }
                let b = r.eval(vars)?;
                apply(*op, a, b)
            }
        }
    }

    /// Names referenced anywhere in the expression.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Int(_) => {}
            Expr::Var(name) => out.push(name),
            Expr::Neg(e) | Expr::Not(e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }
}

fn apply(op: BinOp, a: i64, b: i64) -> Result<i64, ExprError> {
    let v = match op {
        BinOp::Mul => a.checked_mul(b).ok_or(ExprError::Overflow)?,
        BinOp::Div | BinOp::Rem if b == 0 => return Err(ExprError::DivisionByZero),
        BinOp::Div => a.checked_div(b).ok_or(ExprError::Overflow)?,
        BinOp::Rem => a.checked_rem(b).ok_or(ExprError::Overflow)?,
        BinOp::Add => a.checked_add(b).ok_or(ExprError::Overflow)?,
        BinOp::Sub => a.checked_sub(b).ok_or(ExprError::Overflow)?,
        BinOp::Eq => (a == b) as i64,
        BinOp::Ne => (a != b) as i64,
        BinOp::Lt => (a < b) as i64,
        BinOp::Le => (a <= b) as i64,
        BinOp::Gt => (a > b) as i64,
        BinOp::Ge => (a >= b) as i64,
        BinOp::And => (a != 0 && b != 0) as i64,
        BinOp::Or => (a != 0 || b != 0) as i64,
    };
    Ok(v)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Not(e) => write!(f, "!({e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Int(u64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Int(v) => write!(f, "{v}"),
            Token::Ident(s) => f.write_str(s),
            Token::Op(s) => f.write_str(s),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
        }
    }
}

const OPERATORS: [&str; 15] = [
    "==", "!=", "<=", ">=", "&&", "||", "<", ">", "+", "-", "*", "/", "%", "!", "=",
];

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let lit = &text[start..i];
            let v = lit
                .parse::<u64>()
                .map_err(|_| ExprError::Parse(format!("integer literal `{lit}` out of range")))?;
            out.push(Token::Int(v));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token::Ident(text[start..i].to_string()));
        } else if c == b'(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == b')' {
            out.push(Token::RParen);
            i += 1;
        } else {
            let rest = &text[i..];
            let op = OPERATORS
                .iter()
                .find(|op| rest.starts_with(**op))
                .ok_or_else(|| {
                    ExprError::Parse(format!("unexpected character `{}`", rest.chars().next().unwrap()))
                })?;
            if *op == "=" {
                return Err(ExprError::Parse("`=` is not an operator, use `==`".into()));
            }
            out.push(Token::Op(op));
            i += op.len();
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, ops: &[&'static str]) -> Option<&'static str> {
        match self.peek() {
            Some(Token::Op(op)) if ops.contains(op) => {
                let op = *op;
                self.pos += 1;
                Some(op)
            }
            _ => None,
        }
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and()?;
        while self.eat_op(&["||"]).is_some() {
            let rhs = self.and()?;
            lhs = Expr::Binary(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.cmp()?;
        while self.eat_op(&["&&"]).is_some() {
            let rhs = self.cmp()?;
            lhs = Expr::Binary(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.sum()?;
        let op = match self.eat_op(&["==", "!=", "<=", ">=", "<", ">"]) {
            Some("==") => BinOp::Eq,
            Some("!=") => BinOp::Ne,
            Some("<=") => BinOp::Le,
            Some(">=") => BinOp::Ge,
            Some("<") => BinOp::Lt,
            Some(">") => BinOp::Gt,
            _ => return Ok(lhs),
        };
        let rhs = self.sum()?;
        Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        while let Some(op) = self.eat_op(&["+", "-"]) {
            let op = if op == "+" { BinOp::Add } else { BinOp::Sub };
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&["*", "/", "%"]) {
            let op = match op {
                "*" => BinOp::Mul,
                "/" => BinOp::Div,
                _ => BinOp::Rem,
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.eat_op(&["-", "!"]) {
            Some("-") => {
                // fold negative literals so that i64::MIN is expressible
                if let Some(Token::Int(v)) = self.peek() {
                    let v = i64::try_from(-(*v as i128))
                        .map_err(|_| ExprError::Parse(format!("integer literal -{v} out of range")))?;
                    self.pos += 1;
                    return Ok(Expr::Int(v));
                }
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(_) => Ok(Expr::Not(Box::new(self.unary()?))),
            None => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| ExprError::Parse("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Token::Int(v) => i64::try_from(v)
                .map(Expr::Int)
                .map_err(|_| ExprError::Parse(format!("integer literal {v} out of range"))),
            Token::Ident(name) => Ok(Expr::Var(name)),
            Token::LParen => {
                let inner = self.or()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(ExprError::Parse("missing `)`".into())),
                }
            }
            other => Err(ExprError::Parse(format!("unexpected `{other}`"))),
        }
    }
}
