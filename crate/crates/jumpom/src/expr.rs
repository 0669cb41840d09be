//! Arithmetic expressions for model fields.
//!
//! Drift components, jump rates, jump maps and Lévy densities are given as
//! strings such as `"-x + 0.25*x^3"`. They are parsed once into an immutable
//! [`ExpressionAst`] which can be evaluated and differentiated symbolically,
//! so divergences and gradients used by the action functionals are exact.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' ['-'|'+'] integer)*
//! primary := number | variable | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | tanh | sqrt | abs | sign
//! ```
//!
//! Exponents are integer literals only. `sign` is accepted because it is the
//! derivative of `abs` (with `sign(0) = 0`), which keeps printed derivatives
//! parseable.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("function `{func}` takes exactly one argument (position {pos})")]
    Arity { func: String, pos: usize },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("empty expression")]
    Empty,
    #[error("expected {expected} arguments, got {found}")]
    ArgumentCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Tanh => v.tanh(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
            Func::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => vars[*i],
            Node::Neg(a) => -a.eval(vars),
            Node::Add(a, b) => a.eval(vars) + b.eval(vars),
            Node::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Node::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Node::Div(a, b) => a.eval(vars) / b.eval(vars),
            Node::Pow(a, n) => a.eval(vars).powi(*n),
            Node::Call(f, a) => f.apply(a.eval(vars)),
        }
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn uses_var(&self, idx: usize) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(i) => *i == idx,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.uses_var(idx),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.uses_var(idx) || b.uses_var(idx)
            }
        }
    }
}

// Smart constructors doing constant folding and trivial identities.

fn c(v: f64) -> Node {
    Node::Const(v)
}

fn neg(a: Node) -> Node {
    match a {
        Node::Const(v) => c(-v),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn add(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => c(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => c(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => c(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => c(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        (Some(x), _) if x == -1.0 => neg(b),
        (_, Some(y)) if y == -1.0 => neg(a),
        _ => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => c(x / y),
        (Some(x), _) if x == 0.0 => c(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Node::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Node, n: i32) -> Node {
    match (a.as_const(), n) {
        (Some(x), _) => c(x.powi(n)),
        (_, 0) => c(1.0),
        (_, 1) => a,
        _ => Node::Pow(Box::new(a), n),
    }
}

fn call(f: Func, a: Node) -> Node {
    match a.as_const() {
        Some(x) => c(f.apply(x)),
        None => Node::Call(f, Box::new(a)),
    }
}

fn derive(node: &Node, idx: usize) -> Node {
    if !node.uses_var(idx) {
        return c(0.0);
    }
    match node {
        Node::Const(_) => c(0.0),
        Node::Var(i) => c(if *i == idx { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derive(a, idx)),
        Node::Add(a, b) => add(derive(a, idx), derive(b, idx)),
        Node::Sub(a, b) => sub(derive(a, idx), derive(b, idx)),
        Node::Mul(a, b) => add(
            mul(derive(a, idx), (**b).clone()),
            mul((**a).clone(), derive(b, idx)),
        ),
        Node::Div(a, b) => {
            let num = sub(
                mul(derive(a, idx), (**b).clone()),
                mul((**a).clone(), derive(b, idx)),
            );
            div(num, pow((**b).clone(), 2))
        }
        Node::Pow(a, n) => mul(
            mul(c(*n as f64), pow((**a).clone(), n - 1)),
            derive(a, idx),
        ),
        Node::Call(f, a) => {
            let inner = (**a).clone();
            let outer = match f {
                Func::Sin => call(Func::Cos, inner),
                Func::Cos => neg(call(Func::Sin, inner)),
                Func::Exp => call(Func::Exp, inner),
                Func::Tanh => sub(c(1.0), pow(call(Func::Tanh, inner), 2)),
                Func::Sqrt => div(c(0.5), call(Func::Sqrt, inner)),
                // a.e. derivative, sign(0) = 0
                Func::Abs => call(Func::Sign, inner),
                Func::Sign => c(0.0),
            };
            mul(outer, derive(a, idx))
        }
    }
}

/// Parsed expression over an ordered list of named variables.
///
/// Cloning is cheap; the tree is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionAst {
    root: Arc<Node>,
    vars: Arc<[String]>,
}

impl ExpressionAst {
    pub fn parse(text: &str, variables: &[&str]) -> Result<Self, ExprError> {
        parse_expression(text, variables)
    }

    pub fn constant(value: f64, variables: &[&str]) -> Self {
        ExpressionAst {
            root: Arc::new(Node::Const(value)),
            vars: variables.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn free_variables(&self) -> &[String] {
        &self.vars
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Evaluates with `values[i]` bound to `free_variables()[i]`.
    #[inline]
    pub fn eval(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.vars.len());
        self.root.eval(values)
    }

    pub fn try_eval(&self, values: &[f64]) -> Result<f64, ExprError> {
        if values.len() != self.vars.len() {
            return Err(ExprError::ArgumentCount {
                expected: self.vars.len(),
                found: values.len(),
            });
        }
        Ok(self.root.eval(values))
    }

    /// Value if the tree folded to a constant.
    pub fn as_constant(&self) -> Option<f64> {
        self.root.as_const()
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    pub fn differentiate(&self, var: &str) -> Result<ExpressionAst, ExprError> {
        let idx = self
            .vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| ExprError::UnknownVariable(var.to_string()))?;
        Ok(self.differentiate_index(idx))
    }

    pub fn differentiate_index(&self, idx: usize) -> ExpressionAst {
        ExpressionAst {
            root: Arc::new(derive(&self.root, idx)),
            vars: self.vars.clone(),
        }
    }

    /// Builds `self + other * scale`; both must share the variable list.
    pub fn add_scaled(&self, other: &ExpressionAst, scale: f64) -> ExpressionAst {
        assert_eq!(self.vars, other.vars, "variable lists differ");
        ExpressionAst {
            root: Arc::new(add(
                (*self.root).clone(),
                mul(c(scale), (*other.root).clone()),
            )),
            vars: self.vars.clone(),
        }
    }
}

impl fmt::Display for ExpressionAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, &self.vars, f)
    }
}

fn write_node(node: &Node, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Const(v) => {
            if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                write!(f, "(-{:?})", -v)
            } else {
                write!(f, "{v:?}")
            }
        }
        Node::Var(i) => write!(f, "{}", vars[*i]),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            let op = match node {
                Node::Add(..) => '+',
                Node::Sub(..) => '-',
                Node::Mul(..) => '*',
                _ => '/',
            };
            write!(f, "(")?;
            write_node(a, vars, f)?;
            write!(f, " {op} ")?;
            write_node(b, vars, f)?;
            write!(f, ")")
        }
        Node::Pow(a, n) => {
            write!(f, "(")?;
            write_node(a, vars, f)?;
            write!(f, ")^{n}")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
    }
}

/// Parses `text` over the ordered variable list.
pub fn parse_expression(text: &str, variables: &[&str]) -> Result<ExpressionAst, ExprError> {
    for (i, v) in variables.iter().enumerate() {
        if variables[..i].contains(v) {
            return Err(ExprError::DuplicateVariable(v.to_string()));
        }
    }
    if text.trim().is_empty() {
        return Err(ExprError::Empty);
    }
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        vars: variables,
    };
    let root = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(ExpressionAst {
        root: Arc::new(root),
        vars: variables.iter().map(|s| s.to_string()).collect(),
    })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn syntax(&self, msg: &str) -> ExprError {
        ExprError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, ch: u8) -> Result<(), ExprError> {
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", ch as char)))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let mut base = self.primary()?;
        while self.peek() == Some(b'^') {
            self.pos += 1;
            let n = self.integer_exponent()?;
            base = Node::Pow(Box::new(base), n);
        }
        Ok(base)
    }

    fn integer_exponent(&mut self) -> Result<i32, ExprError> {
        let parenthesized = self.peek() == Some(b'(');
        if parenthesized {
            self.pos += 1;
        }
        let mut sign = 1i64;
        match self.peek() {
            Some(b'-') => {
                sign = -1;
                self.pos += 1;
            }
            Some(b'+') => self.pos += 1,
            _ => {}
        }
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("exponent must be an integer literal"));
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'.' | b'e' | b'E') {
            return Err(self.syntax("exponent must be an integer literal"));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let n: i64 = digits
            .parse()
            .map_err(|_| self.syntax("exponent out of range"))?;
        let n = i32::try_from(sign * n).map_err(|_| self.syntax("exponent out of range"))?;
        if parenthesized {
            self.expect(b')')?;
        }
        Ok(n)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(ch) if ch.is_ascii_digit() || ch == b'.' => self.number(),
            Some(ch) if ch.is_ascii_alphabetic() || ch == b'_' => self.identifier(),
            Some(ch) => Err(self.syntax(&format!("unexpected character `{}`", ch as char))),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && matches!(s[self.pos], b'e' | b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < s.len() && matches!(s[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if digits == self.pos {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap();
        text.parse::<f64>().map(Node::Const).map_err(|_| ExprError::Syntax {
            pos: start,
            msg: format!("malformed number `{text}`"),
        })
    }

    fn identifier(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if let Some(idx) = self.vars.iter().position(|v| *v == name) {
            return Ok(Node::Var(idx));
        }
        let Some(func) = Func::from_name(name) else {
            return Err(ExprError::UnknownIdentifier {
                name: name.to_string(),
                pos: start,
            });
        };
        if self.peek() != Some(b'(') {
            return Err(ExprError::Arity {
                func: name.to_string(),
                pos: start,
            });
        }
        self.pos += 1;
        if self.peek() == Some(b')') {
            return Err(ExprError::Arity {
                func: name.to_string(),
                pos: start,
            });
        }
        let arg = self.expr()?;
        if self.peek() == Some(b',') {
            return Err(ExprError::Arity {
                func: name.to_string(),
                pos: start,
            });
        }
        self.expect(b')')?;
        Ok(Node::Call(func, Box::new(arg)))
    }
}
