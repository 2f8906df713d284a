//! Text grammar for expressions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | name | name '(' args ')' | '(' expr ')'
//! name    := [A-Za-z_][A-Za-z0-9_]* | '`' any text without backticks '`'
//! ```
//!
//! Names resolve through the environment first; `pi` is the only built-in
//! constant.

use std::collections::HashMap;

use thiserror::Error;

use super::{complex, pow, Expr, Parameter, UnaryOp, Variable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), got {got}")]
    WrongArgumentCount {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid operand for `{0}`")]
    InvalidOperand(String),
}

impl ParseError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::UnknownFunction { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

/// Something a name in expression text can refer to.
#[derive(Debug, Clone)]
pub enum Binding {
    Param(Parameter),
    Var(Variable),
    Expr(Expr),
}

impl Binding {
    fn to_expr(&self) -> Expr {
        match self {
            Binding::Param(p) => Expr::param(p),
            Binding::Var(v) => Expr::var(v),
            Binding::Expr(e) => e.clone(),
        }
    }
}

/// Name table used by [`parse`].
#[derive(Debug, Clone, Default)]
pub struct Env {
    names: HashMap<String, Binding>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn param(&mut self, p: &Parameter) -> &mut Self {
        self.names.insert(p.name(), Binding::Param(p.clone()));
        self
    }

    pub fn var(&mut self, v: &Variable) -> &mut Self {
        self.names.insert(v.name().to_string(), Binding::Var(v.clone()));
        self
    }

    pub fn expr(&mut self, name: impl Into<String>, e: Expr) -> &mut Self {
        self.names.insert(name.into(), Binding::Expr(e));
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, b: Binding) -> &mut Self {
        self.names.insert(name.into(), b);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Binding> {
        self.names.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains_key(name)
    }

    /// Environment holding every parameter and variable of `e` by name.
    pub fn from_expr(e: &Expr) -> Env {
        let mut env = Env::new();
        for p in e.parameters() {
            env.param(&p);
        }
        for v in e.free_variables() {
            env.var(&v);
        }
        env
    }
}

/// Names referenced by `text`, in order of appearance (function names excluded).
pub fn referenced_names(text: &str) -> Result<Vec<String>, ParseError> {
    let tokens = tokenize(text)?;
    let mut out: Vec<String> = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if let Tok::Ident(name) = &t.tok {
            let is_call = matches!(tokens.get(i + 1).map(|t| &t.tok), Some(Tok::LParen));
            if !is_call && !out.contains(name) {
                out.push(name.clone());
            }
        }
    }
    Ok(out)
}

pub fn parse(text: &str, env: &Env) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        env,
    };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        other => Err(ParseError::Syntax {
            offset: p.offset(),
            message: format!("unexpected {}", other.describe()),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(x) => format!("number {x}"),
            Tok::Ident(s) => format!("name `{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' | b'.' => {
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
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{s}`"),
                })?;
                out.push(Token {
                    tok: Tok::Num(v),
                    offset: start,
                });
                continue;
            }
            b'`' => {
                let end = text[i + 1..].find('`').ok_or(ParseError::Syntax {
                    offset: start,
                    message: "unterminated quoted name".into(),
                })?;
                let name = &text[i + 1..i + 1 + end];
                out.push(Token {
                    tok: Tok::Ident(name.to_string()),
                    offset: start,
                });
                i += end + 2;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => out.push(Token {
                tok: Tok::Op(c as char),
                offset: start,
            }),
            b'(' => out.push(Token {
                tok: Tok::LParen,
                offset: start,
            }),
            b')' => out.push(Token {
                tok: Tok::RParen,
                offset: start,
            }),
            b',' => out.push(Token {
                tok: Tok::Comma,
                offset: start,
            }),
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
        i += 1;
    }
    out.push(Token {
        tok: Tok::End,
        offset: text.len(),
    });
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    env: &'a Env,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].offset
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset: self.offset(),
                message: format!("expected {}, found {}", tok.describe(), self.peek().describe()),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.bump();
                    lhs = lhs + self.term()?;
                }
                Tok::Op('-') => {
                    self.bump();
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.bump();
                    lhs = lhs * self.unary()?;
                }
                Tok::Op('/') => {
                    self.bump();
                    lhs = lhs / self.unary()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(-self.unary()?)
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(pow(base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.bump();
        match t.tok {
            Tok::Num(v) => Ok(Expr::constant(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let args = self.args()?;
                    return call(&name, t.offset, args);
                }
                if let Some(b) = self.env.get(&name) {
                    return Ok(b.to_expr());
                }
                match name.as_str() {
                    "pi" => Ok(Expr::constant(std::f64::consts::PI)),
                    _ => Err(ParseError::UnknownIdentifier {
                        name,
                        offset: t.offset,
                    }),
                }
            }
            other => Err(ParseError::Syntax {
                offset: t.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut args = Vec::new();
        if *self.peek() == Tok::RParen {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RParen => {
                    self.bump();
                    return Ok(args);
                }
                other => {
                    return Err(ParseError::Syntax {
                        offset: self.offset(),
                        message: format!("expected `,` or `)`, found {}", other.describe()),
                    })
                }
            }
        }
    }
}

fn call(name: &str, offset: usize, mut args: Vec<Expr>) -> Result<Expr, ParseError> {
    let arity = |expected: usize, args: &[Expr]| {
        if args.len() == expected {
            Ok(())
        } else {
            Err(ParseError::WrongArgumentCount {
                name: name.to_string(),
                expected,
                got: args.len(),
            })
        }
    };
    match name {
        "pow" => {
            arity(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(pow(a, b))
        }
        "complex" => {
            arity(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            complex(a, b).map_err(|e| ParseError::InvalidOperand(e.to_string()))
        }
        _ => match UnaryOp::from_name(name) {
            Some(op) => {
                arity(1, &args)?;
                Expr::unary(op, args.pop().unwrap())
                    .map_err(|e| ParseError::InvalidOperand(e.to_string()))
            }
            None => Err(ParseError::UnknownFunction {
                name: name.to_string(),
                offset,
            }),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{EvalCtx, Overrides};

    fn eval_with(e: &Expr, bind: &[(&Variable, f64)]) -> f64 {
        let ov = Overrides::new();
        let mut ctx = EvalCtx::new(&ov);
        for (v, x) in bind {
            ctx.bind(v, *x);
        }
        e.eval_real(&ctx).unwrap()
    }

    #[test]
    fn arithmetic_precedence() {
        let env = Env::new();
        assert_eq!(parse("2*(3+4)", &env).unwrap().value().unwrap(), 14.0);
        assert_eq!(parse("2+3*4", &env).unwrap().value().unwrap(), 14.0);
        assert_eq!(parse("-2^2", &env).unwrap().value().unwrap(), -4.0);
        assert_eq!(parse("2^3^2", &env).unwrap().value().unwrap(), 512.0);
        assert_eq!(parse("8/4/2", &env).unwrap().value().unwrap(), 1.0);
        assert_eq!(parse("1.5e2 + .5", &env).unwrap().value().unwrap(), 150.5);
    }

    #[test]
    fn sphere_form_factor_small_q() {
        let q = Variable::new("q");
        let r = Parameter::new("R", 7.5);
        let mut env = Env::new();
        env.var(&q).param(&r);
        let e = parse("3*(sin(q*R)-q*R*cos(q*R))/pow(q*R,3)", &env).unwrap();
        let v = eval_with(&e, &[(&q, 1e-4)]);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn error_reporting() {
        let q = Variable::new("q");
        let mut env = Env::new();
        env.var(&q);
        let err = parse("sin(q", &env).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 5, .. }), "{err:?}");
        assert!(matches!(
            parse("q + zz", &env),
            Err(ParseError::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(
            parse("foo(q)", &env),
            Err(ParseError::UnknownFunction { .. })
        ));
        assert!(matches!(
            parse("pow(q)", &env),
            Err(ParseError::WrongArgumentCount { expected: 2, got: 1, .. })
        ));
        assert!(matches!(parse("q $ 2", &env), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("(q))", &env), Err(ParseError::Syntax { offset: 3, .. })));
    }

    #[test]
    fn quoted_names_and_printing() {
        let p = Parameter::new("Fe SLD", 8.0);
        let mut env = Env::new();
        env.param(&p);
        let e = parse("`Fe SLD` * 2 - 1", &env).unwrap();
        assert_eq!(e.value().unwrap(), 15.0);
        let printed = e.to_string();
        let again = parse(&printed, &Env::from_expr(&e)).unwrap();
        assert_eq!(again.value().unwrap(), 15.0);
    }

    #[test]
    fn referenced_names_skip_functions() {
        let names = referenced_names("sin(q*R) + pow(B, 2) + q").unwrap();
        assert_eq!(names, vec!["q", "R", "B"]);
    }
}
