//! Small expression language for drivers and terminal values.
//!
//! Driver expressions may use `t`, `y`, `yp`, `i`, `ip` (states are
//! 1-based here), components `z1..zN` and `zp1..zpN`, the seminorms
//! `snorm(z)` and `snorm_p(zp)`, the operators `+ - * /` and unary minus,
//! and the functions `min`, `max`, `abs`, `sin`, `cos`, `tanh`.
//!
//! Terminal expressions are functions of the state `i` alone and may also
//! use `exp`, `sqrt`, `pow(a, b)` and `a ^ b`.

use std::fmt;

use thiserror::Error;

use crate::meanfield_bsde::{Driver, DriverPoint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("syntax error at position {position}: expected {}", expected.join(" or "))]
    SyntaxError {
        position: usize,
        expected: Vec<String>,
    },
    #[error("unknown variable {name:?} at position {position}")]
    UnknownVariable { name: String, position: usize },
    #[error("unknown function {name:?} at position {position}")]
    UnknownFunction { name: String, position: usize },
    #[error("{name} takes {expected} argument(s), got {got} at position {position}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        position: usize,
    },
    #[error("component {name} does not exist for {n} states")]
    IndexOutOfRange { name: String, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    Driver,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    Y,
    Yp,
    I,
    Ip,
    /// `z<k>`, stored 1-based.
    Z(usize),
    Zp(usize),
    Snorm,
    SnormP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Abs,
    Sin,
    Cos,
    Tanh,
    Exp,
    Sqrt,
    Pow,
}

impl Func {
    fn lookup(name: &str, dialect: Dialect) -> Option<Func> {
        let f = match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "abs" => Func::Abs,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "pow" => Func::Pow,
            _ => return None,
        };
        match (dialect, f) {
            (Dialect::Driver, Func::Exp | Func::Sqrt | Func::Pow) => None,
            _ => Some(f),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Values of the driver variables; states are 0-based here and shifted to
/// 1-based on lookup.
pub trait Env {
    fn var(&self, v: Var) -> f64;
}

impl Env for DriverPoint<'_> {
    fn var(&self, v: Var) -> f64 {
        match v {
            Var::T => self.t,
            Var::Y => self.y,
            Var::Yp => self.yp,
            Var::I => (self.i + 1) as f64,
            Var::Ip => (self.ip + 1) as f64,
            Var::Z(k) => self.z.get(k - 1).copied().unwrap_or(f64::NAN),
            Var::Zp(k) => self.zp.get(k - 1).copied().unwrap_or(f64::NAN),
            Var::Snorm => self.z_norm,
            Var::SnormP => self.zp_norm,
        }
    }
}

impl Expr {
    pub fn eval<E: Env + ?Sized>(&self, env: &E) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Var(v) => env.var(*v),
            Expr::Neg(a) => -a.eval(env),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(env), b.eval(env));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(env);
                match f {
                    Func::Min => a.min(args[1].eval(env)),
                    Func::Max => a.max(args[1].eval(env)),
                    Func::Pow => a.powf(args[1].eval(env)),
                    Func::Abs => a.abs(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tanh => a.tanh(),
                    Func::Exp => a.exp(),
                    Func::Sqrt => a.sqrt(),
                }
            }
        }
    }

    /// Visit every variable.
    pub fn for_each_var(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) => a.for_each_var(f),
            Expr::Bin(_, a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.for_each_var(f)),
        }
    }

    /// Check that every `z<k>`/`zp<k>` exists for `n` states.
    pub fn check_components(&self, n: usize) -> Result<(), DslError> {
        let mut bad = None;
        self.for_each_var(&mut |v| match v {
            Var::Z(k) if k > n => bad = bad.take().or(Some(format!("z{k}"))),
            Var::Zp(k) if k > n => bad = bad.take().or(Some(format!("zp{k}"))),
            _ => {}
        });
        match bad {
            Some(name) => Err(DslError::IndexOutOfRange { name, n }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => f.write_str("t"),
            Var::Y => f.write_str("y"),
            Var::Yp => f.write_str("yp"),
            Var::I => f.write_str("i"),
            Var::Ip => f.write_str("ip"),
            Var::Z(k) => write!(f, "z{k}"),
            Var::Zp(k) => write!(f, "zp{k}"),
            Var::Snorm => f.write_str("snorm(z)"),
            Var::SnormP => f.write_str("snorm_p(zp)"),
        }
    }
}

/// Fully parenthesized; parsing the output gives back the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    tok_pos: usize,
    dialect: Dialect,
}

fn syntax(position: usize, expected: &[&str]) -> DslError {
    DslError::SyntaxError {
        position,
        expected: expected.iter().map(|s| s.to_string()).collect(),
    }
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, dialect: Dialect) -> Result<Self, DslError> {
        let mut p = Self {
            src,
            pos: 0,
            tok: Tok::End,
            tok_pos: 0,
            dialect,
        };
        p.advance()?;
        Ok(p)
    }

    fn advance(&mut self) -> Result<(), DslError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_pos = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && matches!(bytes[self.pos], b'e' | b'E') {
                let mut q = self.pos + 1;
                if q < bytes.len() && matches!(bytes[q], b'+' | b'-') {
                    q += 1;
                }
                if q < bytes.len() && bytes[q].is_ascii_digit() {
                    while q < bytes.len() && bytes[q].is_ascii_digit() {
                        q += 1;
                    }
                    self.pos = q;
                }
            }
            let text = &self.src[start..self.pos];
            let v = text.parse::<f64>().map_err(|_| syntax(start, &["number"]))?;
            self.tok = Tok::Num(v);
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            self.tok = Tok::Ident(self.src[start..self.pos].to_string());
        } else if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            self.tok = Tok::Sym(c as char);
        } else {
            return Err(syntax(self.pos, &["number", "identifier", "operator", "("]));
        }
        Ok(())
    }

    fn eat(&mut self, sym: char) -> Result<bool, DslError> {
        if self.tok == Tok::Sym(sym) {
            self.advance()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn expect(&mut self, sym: char) -> Result<(), DslError> {
        if self.eat(sym)? {
            Ok(())
        } else {
            Err(syntax(self.tok_pos, &[&format!("'{sym}'")]))
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.eat('-')? {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.tok == Tok::Sym('^') {
            if self.dialect == Dialect::Driver {
                return Err(syntax(self.tok_pos, &["operator", "end of input"]));
            }
            self.advance()?;
            // Right associative, binds tighter than unary minus on the left.
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, DslError> {
        let pos = self.tok_pos;
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::Sym('(') => {
                self.advance()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.advance()?;
                if self.tok == Tok::Sym('(') {
                    self.call(name, pos)
                } else {
                    self.variable(name, pos)
                }
            }
            _ => Err(syntax(pos, &["number", "identifier", "'('", "'-'"])),
        }
    }

    fn variable(&self, name: String, position: usize) -> Result<Expr, DslError> {
        let unknown = || DslError::UnknownVariable {
            name: name.clone(),
            position,
        };
        let component = |prefix: &str| -> Option<usize> {
            let digits = name.strip_prefix(prefix)?;
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
                return None;
            }
            digits.parse().ok()
        };
        let var = match name.as_str() {
            "i" => Var::I,
            _ if self.dialect == Dialect::Terminal => return Err(unknown()),
            "t" => Var::T,
            "y" => Var::Y,
            "yp" => Var::Yp,
            "ip" => Var::Ip,
            _ => {
                if let Some(k) = component("zp") {
                    Var::Zp(k)
                } else if let Some(k) = component("z") {
                    Var::Z(k)
                } else {
                    return Err(unknown());
                }
            }
        };
        Ok(Expr::Var(var))
    }

    fn call(&mut self, name: String, position: usize) -> Result<Expr, DslError> {
        if self.dialect == Dialect::Driver && (name == "snorm" || name == "snorm_p") {
            let (arg, var) = if name == "snorm" {
                ("z", Var::Snorm)
            } else {
                ("zp", Var::SnormP)
            };
            self.advance()?;
            let arg_pos = self.tok_pos;
            if self.tok != Tok::Ident(arg.into()) {
                return Err(syntax(arg_pos, &[arg]));
            }
            self.advance()?;
            self.expect(')')?;
            return Ok(Expr::Var(var));
        }
        let func = Func::lookup(&name, self.dialect).ok_or(DslError::UnknownFunction {
            name: name.clone(),
            position,
        })?;
        self.advance()?;
        let mut args = Vec::new();
        if self.tok != Tok::Sym(')') {
            loop {
                args.push(self.expr()?);
                if !self.eat(',')? {
                    break;
                }
            }
        }
        if self.tok != Tok::Sym(')') {
            return Err(syntax(self.tok_pos, &["','", "')'"]));
        }
        self.advance()?;
        if args.len() != func.arity() {
            return Err(DslError::Arity {
                name,
                expected: func.arity(),
                got: args.len(),
                position,
            });
        }
        Ok(Expr::Call(func, args))
    }

    fn finish(mut self) -> Result<Expr, DslError> {
        if self.tok == Tok::End {
            return Err(syntax(self.tok_pos, &["expression"]));
        }
        let e = self.expr()?;
        if self.tok != Tok::End {
            return Err(syntax(self.tok_pos, &["operator", "end of input"]));
        }
        Ok(e)
    }
}

pub fn parse_expr(text: &str, dialect: Dialect) -> Result<Expr, DslError> {
    Parser::new(text, dialect)?.finish()
}

/// Parsed driver with its declared Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverExpr {
    pub expr: Expr,
    pub lipschitz: f64,
}

impl DriverExpr {
    pub fn eval(&self, p: &DriverPoint<'_>) -> f64 {
        self.expr.eval(p)
    }

    pub fn to_driver(&self) -> Driver {
        let expr = self.expr.clone();
        Driver::new(self.lipschitz, self.expr.to_string(), move |p| expr.eval(p))
    }
}

impl fmt::Display for DriverExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

/// Parse a driver expression; the Lipschitz constant defaults to 0 and is
/// set by the caller.
pub fn parse_driver(text: &str) -> Result<DriverExpr, DslError> {
    Ok(DriverExpr {
        expr: parse_expr(text, Dialect::Driver)?,
        lipschitz: 0.0,
    })
}

struct StateEnv(usize);

impl Env for StateEnv {
    fn var(&self, v: Var) -> f64 {
        match v {
            Var::I => self.0 as f64,
            _ => f64::NAN,
        }
    }
}

/// Parse a terminal expression in `i` and tabulate it over states `1..=n`.
pub fn terminal_vector(text: &str, n: usize) -> Result<Vec<f64>, DslError> {
    let e = parse_expr(text, Dialect::Terminal)?;
    Ok((1..=n).map(|i| e.eval(&StateEnv(i))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point<'a>(z: &'a [f64], zp: &'a [f64]) -> DriverPoint<'a> {
        DriverPoint {
            t: 0.25,
            ip: 1,
            yp: 1.5,
            zp,
            zp_norm: 0.75,
            i: 0,
            y: -2.0,
            z,
            z_norm: 0.5,
        }
    }

    #[test]
    fn single_variable() {
        let d = parse_driver("yp").unwrap();
        assert_eq!(d.expr, Expr::Var(Var::Yp));
        assert_eq!(d.eval(&point(&[0.0], &[0.0])), 1.5);
    }

    #[test]
    fn catalog_expression() {
        let d = parse_driver("max(y, 0) - 0.5*snorm(z)").unwrap();
        assert_eq!(d.eval(&point(&[0.0], &[0.0])), -0.25);
    }

    #[test]
    fn unknown_variable_position() {
        assert_eq!(
            parse_driver("y + q"),
            Err(DslError::UnknownVariable {
                name: "q".into(),
                position: 4
            })
        );
    }

    #[test]
    fn precedence_and_associativity() {
        let z = [2.0, 3.0];
        let p = point(&z, &z);
        let cases = [
            ("1 - 2 - 3", -4.0),
            ("8 / 4 / 2", 1.0),
            ("1 + 2 * 3", 7.0),
            ("-2 * 3", -6.0),
            ("--y", -2.0),
            ("(1 + 2) * 3", 9.0),
            ("z1 * zp2 + i + ip", 2.0 * 3.0 + 1.0 + 2.0),
            ("min(t, 1) + abs(-1) + tanh(0) + cos(0) + sin(0)", 2.25),
            ("2.5e-1 * 4", 1.0),
            ("snorm_p(zp)", 0.75),
        ];
        for (text, expected) in cases {
            let v = parse_driver(text).unwrap().eval(&p);
            assert!((v - expected).abs() < 1e-15, "{text}: {v}");
        }
    }

    #[test]
    fn syntax_errors() {
        let err = |s: &str| match parse_driver(s) {
            Err(DslError::SyntaxError { position, .. }) => position,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(err("y +"), 3);
        assert_eq!(err("(y"), 2);
        assert_eq!(err("y y"), 2);
        assert_eq!(err(""), 0);
        assert_eq!(err("y # 2"), 2);
        assert_eq!(err("snorm(y)"), 6);
        assert!(matches!(parse_driver("exp(y)"), Err(DslError::UnknownFunction { .. })));
        assert!(matches!(parse_driver("y ^ 2"), Err(DslError::SyntaxError { position: 2, .. })));
        assert!(matches!(parse_driver("min(y)"), Err(DslError::Arity { .. })));
        assert!(matches!(parse_driver("z0"), Err(DslError::UnknownVariable { .. })));
    }

    #[test]
    fn component_range() {
        let d = parse_driver("z3 + zp1").unwrap();
        assert!(d.expr.check_components(3).is_ok());
        assert_eq!(
            d.expr.check_components(2),
            Err(DslError::IndexOutOfRange {
                name: "z3".into(),
                n: 2
            })
        );
    }

    #[test]
    fn terminal_dialect() {
        let g = terminal_vector("2 ^ i - sqrt(i) + exp(0) + pow(i, 2)", 3).unwrap();
        for (k, v) in g.iter().enumerate() {
            let i = (k + 1) as f64;
            assert!((v - (2f64.powf(i) - i.sqrt() + 1.0 + i * i)).abs() < 1e-12);
        }
        assert!(matches!(
            terminal_vector("y", 2),
            Err(DslError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn driver_conversion() {
        let d = DriverExpr {
            lipschitz: 1.0,
            ..parse_driver("sin(yp) - y").unwrap()
        };
        let f = d.to_driver();
        assert_eq!(f.lipschitz(), 1.0);
        let z = [0.0];
        assert_eq!(f.eval(&point(&z, &z)), 1.5f64.sin() + 2.0);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0..100.0f64).prop_map(Expr::Num),
            prop_oneof![
                Just(Var::T),
                Just(Var::Y),
                Just(Var::Yp),
                Just(Var::I),
                Just(Var::Ip),
                Just(Var::Snorm),
                Just(Var::SnormP),
                (1usize..12).prop_map(Var::Z),
                (1usize..12).prop_map(Var::Zp),
            ]
            .prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (
                    prop_oneof![Just(Func::Abs), Just(Func::Sin), Just(Func::Cos), Just(Func::Tanh)],
                    inner.clone()
                )
                    .prop_map(|(f, a)| Expr::Call(f, vec![a])),
                (prop_oneof![Just(Func::Min), Just(Func::Max)], inner.clone(), inner)
                    .prop_map(|(f, a, b)| Expr::Call(f, vec![a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn format_then_parse_round_trips(e in arb_expr()) {
            let text = e.to_string();
            let back = parse_expr(&text, Dialect::Driver).unwrap();
            prop_assert_eq!(back, e);
        }
    }
}
