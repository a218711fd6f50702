//! Arithmetic expressions over `u`, `v`, `r`, `t` for user-supplied coefficients.
//!
//! Grammar (all binary operators left-associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := operand ('^' exponent)*
//! exponent:= '-' exponent | operand
//! operand := number | variable | function '(' expr ')' | '(' expr ')'
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::ParseError;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    U,
    V,
    R,
    /// `t = u + v`
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::U => "u",
            Var::V => "v",
            Var::R => "r",
            Var::T => "t",
        }
    }

    fn from_name(s: &str) -> Option<Var> {
        Some(match s {
            "u" => Var::U,
            "v" => Var::V,
            "r" => Var::R,
            "t" => Var::T,
            _ => return None,
        })
    }
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Tanh => x.tanh(),
        }
    }
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

const NEG_PRECEDENCE: u8 = 3;
const ATOM_PRECEDENCE: u8 = 5;

/// Point at which an expression is evaluated; `t` is derived as `u + v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint<T> {
    pub u: T,
    pub v: T,
    pub r: T,
}

impl Expr {
    pub fn eval<T: Real>(&self, p: &EvalPoint<T>) -> T {
        match self {
            Expr::Num(x) => T::lit(*x),
            Expr::Var(Var::U) => p.u,
            Expr::Var(Var::V) => p.v,
            Expr::Var(Var::R) => p.r,
            Expr::Var(Var::T) => p.u + p.v,
            Expr::Neg(a) => -a.eval(p),
            Expr::Call(f, a) => f.apply(a.eval(p)),
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval(p), b.eval(p));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                }
            }
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(x) => *x == var,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses(var),
            Expr::Bin(_, a, b) => a.uses(var) || b.uses(var),
        }
    }

    /// Value of a variable-free expression.
    pub fn constant_value(&self) -> Option<f64> {
        let vars = [Var::U, Var::V, Var::R, Var::T];
        if vars.iter().any(|&v| self.uses(v)) {
            return None;
        }
        Some(self.eval(&EvalPoint { u: 0.0, v: 0.0, r: 0.0 }))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Neg(_) => NEG_PRECEDENCE,
            _ => ATOM_PRECEDENCE,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let paren = self.precedence() < min;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Expr::Num(x) => write!(f, "{x:?}")?,
            Expr::Var(v) => f.write_str(v.name())?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.write_at(f, NEG_PRECEDENCE)?;
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_at(f, 0)?;
                f.write_str(")")?;
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                a.write_at(f, p)?;
                if *op == BinOp::Pow {
                    f.write_str("^")?;
                } else {
                    write!(f, " {} ", op.symbol())?;
                }
                b.write_at(f, p + 1)?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

/// A parsed coefficient expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialExpression {
    pub source: String,
    pub ast: Expr,
}

impl PotentialExpression {
    pub fn eval<T: Real>(&self, u: T, v: T, r: T) -> T {
        self.ast.eval(&EvalPoint { u, v, r })
    }

    /// True when the expression depends on the point only through `r`.
    pub fn radial_only(&self) -> bool {
        !(self.ast.uses(Var::U) || self.ast.uses(Var::V) || self.ast.uses(Var::T))
    }
}

impl fmt::Display for PotentialExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.fmt(f)
    }
}

impl FromStr for PotentialExpression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_potential(s)
    }
}

pub fn parse_potential(text: &str) -> Result<PotentialExpression, ParseError> {
    let tokens = tokenize(text)?;
    if tokens.len() == 1 {
        return Err(ParseError::Empty);
    }
    let mut parser = Parser { tokens, at: 0 };
    let ast = parser.expr()?;
    let tok = parser.peek();
    if tok.kind != Tok::End {
        return Err(ParseError::UnexpectedToken {
            pos: tok.pos,
            expected: "operator or end of input".into(),
            found: tok.kind.describe(),
        });
    }
    Ok(PotentialExpression { source: text.to_string(), ast })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(x) => format!("number {x}"),
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Op(c) => format!("'{c}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if !c.is_ascii() {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(ParseError::UnexpectedChar { pos: i, ch });
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let slice = &text[start..i];
            let value = slice
                .parse::<f64>()
                .map_err(|_| ParseError::BadNumber { pos: start, text: slice.to_string() })?;
            out.push(Token { kind: Tok::Num(value), pos: start });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: Tok::Ident(text[start..i].to_string()), pos: start });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => return Err(ParseError::UnexpectedChar { pos: i, ch: c }),
            };
            out.push(Token { kind, pos: i });
            i += 1;
        }
    }
    out.push(Token { kind: Tok::End, pos: text.len() });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek().kind {
            Tok::Op(c) if ops.contains(&c) => {
                self.bump();
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.operand()?;
        while self.eat_op(&['^']).is_some() {
            let rhs = self.exponent()?;
            lhs = Expr::Bin(BinOp::Pow, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn exponent(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.exponent()?)));
        }
        self.operand()
    }

    fn operand(&mut self) -> Result<Expr, ParseError> {
        let tok = self.bump();
        match tok.kind {
            Tok::Num(x) => Ok(Expr::Num(x)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peek().kind == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| ParseError::UnknownFunction { pos: tok.pos, name: name.clone() })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Var::from_name(&name)
                        .map(Expr::Var)
                        .ok_or(ParseError::UnknownVariable { pos: tok.pos, name })
                }
            }
            other => Err(ParseError::UnexpectedToken {
                pos: tok.pos,
                expected: "number, variable, function or '('".into(),
                found: other.describe(),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let tok = self.bump();
        if tok.kind == Tok::RParen {
            Ok(())
        } else {
            Err(ParseError::UnexpectedToken { pos: tok.pos, expected: "')'".into(), found: tok.kind.describe() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(u: f64, v: f64, r: f64) -> EvalPoint<f64> {
        EvalPoint { u, v, r }
    }

    #[test]
    fn oscillating_example() {
        let e = parse_potential("sin(u + log(r))").unwrap();
        let x: f64 = e.eval(1.0, 5.0, std::f64::consts::E);
        assert!((x - 2f64.sin()).abs() < 1e-15);
        assert!(!e.radial_only());
    }

    #[test]
    fn constant_one() {
        let e = parse_potential("1").unwrap();
        assert_eq!(e.ast, Expr::Num(1.0));
        assert_eq!(e.ast.constant_value(), Some(1.0));
        assert!(e.radial_only());
    }

    #[test]
    fn dangling_operator_reports_position() {
        let err = parse_potential("2 +").unwrap_err();
        assert_eq!(err.position(), Some(3));
    }

    #[test]
    fn unknown_identifier_is_named() {
        match parse_potential("x + 1").unwrap_err() {
            ParseError::UnknownVariable { name, pos } => {
                assert_eq!(name, "x");
                assert_eq!(pos, 0);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(parse_potential("foo(r)"), Err(ParseError::UnknownFunction { .. })));
        assert!(matches!(parse_potential("   "), Err(ParseError::Empty)));
        assert!(matches!(parse_potential("(r"), Err(ParseError::UnexpectedToken { pos: 2, .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        let p = at(2.0, 3.0, 4.0);
        let cases = [
            ("-r^2", -16.0),
            ("2^3^2", 64.0),
            ("8 / 4 / 2", 1.0),
            ("8 - 4 - 2", 2.0),
            ("1 + 2 * 3", 7.0),
            ("r^-1", 0.25),
            ("t", 5.0),
            ("-(u - v) * 2", 2.0),
            ("1.5e1 + 2E-1", 15.2),
        ];
        for (src, want) in cases {
            let got: f64 = parse_potential(src).unwrap().ast.eval(&p);
            assert!((got - want).abs() < 1e-12, "{src}: {got} vs {want}");
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000, 0u32..4).prop_map(|(m, k)| Expr::Num(m as f64 / 10f64.powi(k as i32))),
            Just(Expr::Var(Var::U)),
            Just(Expr::Var(Var::V)),
            Just(Expr::Var(Var::R)),
            Just(Expr::Var(Var::T)),
            (1e-9f64..1e9).prop_map(Expr::Num),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            let ops = prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div),
                Just(BinOp::Pow)
            ];
            let funcs = prop_oneof![
                Just(Func::Sin),
                Just(Func::Cos),
                Just(Func::Exp),
                Just(Func::Log),
                Just(Func::Sqrt),
                Just(Func::Tanh)
            ];
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (funcs, inner.clone()).prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
                (ops, inner.clone(), inner).prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let text = e.to_string();
            let back = parse_potential(&text).unwrap();
            prop_assert_eq!(&back.ast, &e, "printed as {}", text);
            let again = back.to_string();
            prop_assert_eq!(again, text);
        }
    }
}
