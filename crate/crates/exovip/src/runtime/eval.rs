//! Tiny expression evaluator behind the symbolic EVAL op.
//!
//! Expressions support numbers, double-quoted strings, booleans, arithmetic,
//! comparisons, `and`/`or`/`not`, parentheses, and the conditional form
//! `A if COND else B`. Variables are substituted before evaluation: `{VAR}`
//! is replaced with the bound value's literal rendering.

use thiserror::Error;

use super::env::Environment;
use super::value::Value;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("unknown variable `{0}` in expression")]
    UnknownVariable(String),
    #[error("variable `{0}` cannot be rendered into an expression")]
    Unrenderable(String),
    #[error("parse error in expression: {0}")]
    Parse(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("division by zero")]
    DivisionByZero,
}

/// Substitutes `{VAR}` occurrences from the environment, then evaluates.
pub fn eval_expr(expr: &str, env: &Environment) -> Result<Value, EvalError> {
    let substituted = substitute(expr, env)?;
    let tokens = tokenize(&substituted)?;
    let mut p = Parser { tokens, pos: 0 };
    let v = p.ternary()?;
    if p.pos != p.tokens.len() {
        return Err(EvalError::Parse(format!(
            "trailing tokens after expression: {:?}",
            &p.tokens[p.pos..]
        )));
    }
    Ok(match v {
        Ev::Num(n) => Value::Number(n),
        Ev::Str(s) => Value::Text(s),
        Ev::Bool(b) => Value::Bool(b),
    })
}

fn substitute(expr: &str, env: &Environment) -> Result<String, EvalError> {
    let mut out = String::new();
    let mut rest = expr;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| EvalError::Parse("unclosed `{` in expression".into()))?;
        let name = &after[..end];
        let value = env
            .lookup(name)
            .ok_or_else(|| EvalError::UnknownVariable(name.to_string()))?;
        match value {
            Value::Number(n) => out.push_str(&n.to_string()),
            Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Value::Text(t) => {
                out.push('"');
                out.push_str(t);
                out.push('"');
            }
            Value::List(items) => out.push_str(&items.len().to_string()),
            _ => return Err(EvalError::Unrenderable(name.to_string())),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Tok>, EvalError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    s.push(chars[i]);
                    i += 1;
                }
                if i == chars.len() {
                    return Err(EvalError::Parse("unterminated string".into()));
                }
                i += 1;
                out.push(Tok::Str(s));
            }
            '+' | '-' | '*' | '/' => {
                out.push(Tok::Op(match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    _ => "/",
                }));
                i += 1;
            }
            '=' | '!' | '<' | '>' => {
                let two = i + 1 < chars.len() && chars[i + 1] == '=';
                let op = match (c, two) {
                    ('=', true) => "==",
                    ('!', true) => "!=",
                    ('<', true) => "<=",
                    ('>', true) => ">=",
                    ('<', false) => "<",
                    ('>', false) => ">",
                    _ => return Err(EvalError::Parse(format!("stray `{c}`"))),
                };
                out.push(Tok::Op(op));
                i += if two { 2 } else { 1 };
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = text
                    .parse()
                    .map_err(|_| EvalError::Parse(format!("bad number `{text}`")))?;
                out.push(Tok::Num(n));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(EvalError::Parse(format!("unexpected `{other}`"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Ev {
    Num(f64),
    Str(String),
    Bool(bool),
}

impl Ev {
    fn truthy(&self) -> bool {
        match self {
            Ev::Num(n) => *n != 0.0,
            Ev::Str(s) => !s.is_empty(),
            Ev::Bool(b) => *b,
        }
    }
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn peek_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w == word)
    }

    fn ternary(&mut self) -> Result<Ev, EvalError> {
        let then_val = self.or_expr()?;
        if self.peek_ident("if") {
            self.pos += 1;
            let cond = self.or_expr()?;
            if !self.peek_ident("else") {
                return Err(EvalError::Parse("conditional missing `else`".into()));
            }
            self.pos += 1;
            let else_val = self.ternary()?;
            return Ok(if cond.truthy() { then_val } else { else_val });
        }
        Ok(then_val)
    }

    fn or_expr(&mut self) -> Result<Ev, EvalError> {
        let mut left = self.and_expr()?;
        while self.peek_ident("or") {
            self.pos += 1;
            let right = self.and_expr()?;
            left = Ev::Bool(left.truthy() || right.truthy());
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Ev, EvalError> {
        let mut left = self.not_expr()?;
        while self.peek_ident("and") {
            self.pos += 1;
            let right = self.not_expr()?;
            left = Ev::Bool(left.truthy() && right.truthy());
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Ev, EvalError> {
        if self.peek_ident("not") {
            self.pos += 1;
            let v = self.not_expr()?;
            return Ok(Ev::Bool(!v.truthy()));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Ev, EvalError> {
        let left = self.additive()?;
        let op = match self.peek() {
            Some(Tok::Op(op @ ("==" | "!=" | "<" | "<=" | ">" | ">="))) => *op,
            _ => return Ok(left),
        };
        self.pos += 1;
        let right = self.additive()?;
        let ord = match (&left, &right) {
            (Ev::Num(a), Ev::Num(b)) => a.partial_cmp(b),
            (Ev::Str(a), Ev::Str(b)) => Some(a.cmp(b)),
            (Ev::Bool(a), Ev::Bool(b)) => Some(a.cmp(b)),
            _ => {
                if matches!(op, "==" ) {
                    return Ok(Ev::Bool(false));
                }
                if matches!(op, "!=") {
                    return Ok(Ev::Bool(true));
                }
                return Err(EvalError::Type(format!(
                    "cannot order {left:?} and {right:?}"
                )));
            }
        };
        let ord = ord.ok_or_else(|| EvalError::Type("incomparable numbers".into()))?;
        Ok(Ev::Bool(match op {
            "==" => ord.is_eq(),
            "!=" => !ord.is_eq(),
            "<" => ord.is_lt(),
            "<=" => ord.is_le(),
            ">" => ord.is_gt(),
            _ => ord.is_ge(),
        }))
    }

    fn additive(&mut self) -> Result<Ev, EvalError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(op @ ("+" | "-"))) => *op,
                _ => break,
            };
            self.pos += 1;
            let right = self.multiplicative()?;
            left = match (left, right, op) {
                (Ev::Num(a), Ev::Num(b), "+") => Ev::Num(a + b),
                (Ev::Num(a), Ev::Num(b), _) => Ev::Num(a - b),
                (Ev::Str(a), Ev::Str(b), "+") => Ev::Str(a + &b),
                (l, r, op) => {
                    return Err(EvalError::Type(format!("cannot apply `{op}` to {l:?}, {r:?}")))
                }
            };
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> Result<Ev, EvalError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(op @ ("*" | "/"))) => *op,
                _ => break,
            };
            self.pos += 1;
            let right = self.unary()?;
            left = match (left, right, op) {
                (Ev::Num(a), Ev::Num(b), "*") => Ev::Num(a * b),
                (Ev::Num(_), Ev::Num(b), _) if b == 0.0 => return Err(EvalError::DivisionByZero),
                (Ev::Num(a), Ev::Num(b), _) => Ev::Num(a / b),
                (l, r, op) => {
                    return Err(EvalError::Type(format!("cannot apply `{op}` to {l:?}, {r:?}")))
                }
            };
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Ev, EvalError> {
        if matches!(self.peek(), Some(Tok::Op("-"))) {
            self.pos += 1;
            let v = self.unary()?;
            return match v {
                Ev::Num(n) => Ok(Ev::Num(-n)),
                other => Err(EvalError::Type(format!("cannot negate {other:?}"))),
            };
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Ev, EvalError> {
        match self.peek().cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Ev::Num(n))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Ev::Str(s))
            }
            Some(Tok::Ident(w)) if w == "true" || w == "True" => {
                self.pos += 1;
                Ok(Ev::Bool(true))
            }
            Some(Tok::Ident(w)) if w == "false" || w == "False" => {
                self.pos += 1;
                Ok(Ev::Bool(false))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let v = self.ternary()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(v)
                    }
                    _ => Err(EvalError::Parse("missing `)`".into())),
                }
            }
            Some(Tok::Ident(w)) => Err(EvalError::Parse(format!("unexpected identifier `{w}`"))),
            other => Err(EvalError::Parse(format!("unexpected token {other:?}"))),
        }
    }
}
