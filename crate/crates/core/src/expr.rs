//! Closed-form scalar expressions: parsing, evaluation and exact symbolic
//! differentiation.
//!
//! Metric coefficients (`a(r)`, `f(r)`, `φ(r)` or `φ(x, y, z)`) arrive from
//! configuration files as text. They are parsed once into an immutable
//! [`Expr`] tree whose variables are resolved to positional slots, so
//! evaluation does no name lookup and no allocation.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' powrhs)?          right-associative
//! powrhs := '-' powrhs | power
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! func   := exp | log | sqrt | abs
//! ```
//!
//! Named parameters are replaced by constants while parsing. The printed
//! form is fully parenthesised infix and parses back to an expression with
//! bit-identical evaluation.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    fn from_function(name: &str) -> Option<Self> {
        match name {
            "exp" => Some(UnaryOp::Exp),
            "log" => Some(UnaryOp::Log),
            "sqrt" => Some(UnaryOp::Sqrt),
            "abs" => Some(UnaryOp::Abs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

#[derive(Debug)]
enum Node {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Arc<Node>),
    Binary(BinaryOp, Arc<Node>, Arc<Node>),
}

/// Immutable expression tree over a declared, ordered set of variables.
#[derive(Clone)]
pub struct Expr {
    root: Arc<Node>,
    vars: Arc<[String]>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{function}` takes {expected} argument(s), got {found} (offset {offset})")]
    Arity {
        function: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("parameter `{0}` is also declared as a variable")]
    ParamShadowsVariable(String),
    #[error("parameter `{name}` is not finite ({value})")]
    NonFiniteParam { name: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in `{subtree}`: {reason}")]
    Domain { reason: String, subtree: String },
    #[error("expected {expected} variable value(s), got {found}")]
    Arity { expected: usize, found: usize },
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    #[error("variable `{0}` is not declared")]
    Undeclared(String),
}

impl Expr {
    /// Parses `src` with the declared variables `vars`; every identifier in
    /// `params` is substituted by its value.
    pub fn parse(src: &str, vars: &[&str], params: &HashMap<String, f64>) -> Result<Expr, ParseError> {
        if src.trim().is_empty() {
            return Err(ParseError::Empty);
        }
        for (name, value) in params {
            if vars.iter().any(|v| v == name) {
                return Err(ParseError::ParamShadowsVariable(name.clone()));
            }
            if !value.is_finite() {
                return Err(ParseError::NonFiniteParam { name: name.clone(), value: *value });
            }
        }
        let vars: Arc<[String]> = vars.iter().map(|v| v.to_string()).collect::<Vec<_>>().into();
        let tokens = tokenize(src)?;
        let mut parser = Parser { tokens: &tokens, pos: 0, vars: &vars, params, src_len: src.len() };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ParseError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Expr { root, vars })
    }

    /// A constant expression over the given variable set.
    pub fn constant(value: f64, vars: &[&str]) -> Expr {
        Expr {
            root: Arc::new(Node::Const(value)),
            vars: vars.iter().map(|v| v.to_string()).collect::<Vec<_>>().into(),
        }
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    /// The constant value, if the whole tree folded to a constant.
    pub fn as_constant(&self) -> Option<f64> {
        match *self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Evaluates with positional variable values, in declaration order.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        if values.len() != self.vars.len() {
            return Err(EvalError::Arity { expected: self.vars.len(), found: values.len() });
        }
        eval_node(&self.root, values, &self.vars)
    }

    /// Evaluates with values bound by name.
    pub fn eval_env(&self, env: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let values = self
            .vars
            .iter()
            .map(|v| env.get(v).copied().ok_or_else(|| EvalError::Unbound(v.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        self.eval(&values)
    }

    /// Exact derivative with respect to `var`, constant-folded.
    pub fn differentiate(&self, var: &str) -> Result<Expr, EvalError> {
        let index = self
            .vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| EvalError::Undeclared(var.to_string()))?;
        Ok(self.wrap(diff_node(&self.root, index)))
    }

    /// Replaces every occurrence of `var` by `replacement` (same variable set).
    pub fn substitute(&self, var: &str, replacement: &Expr) -> Result<Expr, EvalError> {
        self.check_compatible(replacement);
        let index = self
            .vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| EvalError::Undeclared(var.to_string()))?;
        Ok(self.wrap(subst_node(&self.root, index, &replacement.root)))
    }

    pub fn powf(&self, exponent: f64) -> Expr {
        self.wrap(binary(BinaryOp::Pow, self.root.clone(), konst(exponent)))
    }

    pub fn pow(&self, exponent: &Expr) -> Expr {
        self.check_compatible(exponent);
        self.wrap(binary(BinaryOp::Pow, self.root.clone(), exponent.root.clone()))
    }

    pub fn sqrt(&self) -> Expr {
        self.wrap(unary(UnaryOp::Sqrt, self.root.clone()))
    }

    pub fn exp(&self) -> Expr {
        self.wrap(unary(UnaryOp::Exp, self.root.clone()))
    }

    pub fn log(&self) -> Expr {
        self.wrap(unary(UnaryOp::Log, self.root.clone()))
    }

    pub fn scale(&self, factor: f64) -> Expr {
        self.wrap(binary(BinaryOp::Mul, konst(factor), self.root.clone()))
    }

    /// Number of nodes, shared subtrees counted once per reference.
    pub fn size(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Const(_) | Node::Var(_) => 1,
                Node::Unary(_, a) => 1 + count(a),
                Node::Binary(_, a, b) => 1 + count(a) + count(b),
            }
        }
        count(&self.root)
    }

    fn wrap(&self, root: Arc<Node>) -> Expr {
        Expr { root, vars: self.vars.clone() }
    }

    fn check_compatible(&self, other: &Expr) {
        assert!(
            self.vars == other.vars,
            "expressions over different variable sets: {:?} vs {:?}",
            self.vars,
            other.vars
        );
    }

    fn combine(&self, op: BinaryOp, other: &Expr) -> Expr {
        self.check_compatible(other);
        self.wrap(binary(op, self.root.clone(), other.root.clone()))
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl std::ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                self.combine($op, rhs)
            }
        }
        impl std::ops::$trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                self.wrap(binary($op, self.root.clone(), konst(rhs)))
            }
        }
        impl std::ops::$trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                rhs.wrap(binary($op, konst(self), rhs.root.clone()))
            }
        }
    };
}

impl_binop!(Add, add, BinaryOp::Add);
impl_binop!(Sub, sub, BinaryOp::Sub);
impl_binop!(Mul, mul, BinaryOp::Mul);
impl_binop!(Div, div, BinaryOp::Div);

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.wrap(unary(UnaryOp::Neg, self.root.clone()))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, &self.vars, f)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

fn write_node(node: &Node, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Const(c) => {
            if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                write!(f, "(-{:?})", -c)
            } else {
                write!(f, "{c:?}")
            }
        }
        Node::Var(i) => f.write_str(&vars[*i]),
        Node::Unary(UnaryOp::Neg, a) => {
            f.write_str("(-")?;
            write_node(a, vars, f)?;
            f.write_str(")")
        }
        Node::Unary(op, a) => {
            write!(f, "{}(", op.name())?;
            write_node(a, vars, f)?;
            f.write_str(")")
        }
        Node::Binary(op, a, b) => {
            f.write_str("(")?;
            write_node(a, vars, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(b, vars, f)?;
            f.write_str(")")
        }
    }
}

fn subtree_string(node: &Node, vars: &[String]) -> String {
    struct Show<'a>(&'a Node, &'a [String]);
    impl fmt::Display for Show<'_> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write_node(self.0, self.1, f)
        }
    }
    Show(node, vars).to_string()
}

// ---------------------------------------------------------------------------
// constructors with constant folding

fn konst(c: f64) -> Arc<Node> {
    Arc::new(Node::Const(c))
}

fn const_of(n: &Node) -> Option<f64> {
    match n {
        Node::Const(c) => Some(*c),
        _ => None,
    }
}

fn unary(op: UnaryOp, a: Arc<Node>) -> Arc<Node> {
    if let Some(c) = const_of(&a) {
        if let Ok(v) = apply_unary(op, c) {
            return konst(v);
        }
    }
    if op == UnaryOp::Neg {
        if let Node::Unary(UnaryOp::Neg, inner) = &*a {
            return inner.clone();
        }
    }
    Arc::new(Node::Unary(op, a))
}

fn binary(op: BinaryOp, a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    let (ca, cb) = (const_of(&a), const_of(&b));
    if let (Some(x), Some(y)) = (ca, cb) {
        if let Ok(v) = apply_binary(op, x, y) {
            return konst(v);
        }
    }
    match op {
        BinaryOp::Add if ca == Some(0.0) => return b,
        BinaryOp::Add | BinaryOp::Sub if cb == Some(0.0) => return a,
        BinaryOp::Sub if ca == Some(0.0) => return unary(UnaryOp::Neg, b),
        BinaryOp::Mul if ca == Some(0.0) || cb == Some(0.0) => return konst(0.0),
        BinaryOp::Mul if ca == Some(1.0) => return b,
        BinaryOp::Mul | BinaryOp::Div if cb == Some(1.0) => return a,
        BinaryOp::Pow if cb == Some(1.0) => return a,
        BinaryOp::Pow if cb == Some(0.0) => return konst(1.0),
        _ => {}
    }
    Arc::new(Node::Binary(op, a, b))
}

// ---------------------------------------------------------------------------
// evaluation

fn apply_unary(op: UnaryOp, x: f64) -> Result<f64, String> {
    let v = match op {
        UnaryOp::Neg => -x,
        UnaryOp::Exp => x.exp(),
        UnaryOp::Log => {
            if x <= 0.0 {
                return Err(format!("log of non-positive value {x}"));
            }
            x.ln()
        }
        UnaryOp::Sqrt => {
            if x < 0.0 {
                return Err(format!("sqrt of negative value {x}"));
            }
            x.sqrt()
        }
        UnaryOp::Abs => x.abs(),
    };
    finite(v)
}

fn apply_binary(op: BinaryOp, x: f64, y: f64) -> Result<f64, String> {
    let v = match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => {
            if y == 0.0 {
                return Err("division by zero".to_string());
            }
            x / y
        }
        BinaryOp::Pow => power(x, y)?,
    };
    finite(v)
}

fn power(base: f64, exponent: f64) -> Result<f64, String> {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        if base == 0.0 && exponent < 0.0 {
            return Err("zero raised to a negative power".to_string());
        }
        return Ok(base.powi(exponent as i32));
    }
    if base > 0.0 {
        Ok((exponent * base.ln()).exp())
    } else if base == 0.0 && exponent > 0.0 {
        Ok(0.0)
    } else {
        Err(format!("non-integer power {exponent} of non-positive base {base}"))
    }
}

fn finite(v: f64) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite result {v}"))
    }
}

fn eval_node(node: &Node, values: &[f64], vars: &[String]) -> Result<f64, EvalError> {
    let domain = |reason: String| EvalError::Domain { reason, subtree: subtree_string(node, vars) };
    match node {
        Node::Const(c) => Ok(*c),
        Node::Var(i) => Ok(values[*i]),
        Node::Unary(op, a) => {
            let x = eval_node(a, values, vars)?;
            apply_unary(*op, x).map_err(domain)
        }
        Node::Binary(op, a, b) => {
            let x = eval_node(a, values, vars)?;
            let y = eval_node(b, values, vars)?;
            apply_binary(*op, x, y).map_err(domain)
        }
    }
}

// ---------------------------------------------------------------------------
// differentiation and substitution

fn diff_node(node: &Arc<Node>, var: usize) -> Arc<Node> {
    use BinaryOp::*;
    match &**node {
        Node::Const(_) => konst(0.0),
        Node::Var(i) => konst(if *i == var { 1.0 } else { 0.0 }),
        Node::Unary(op, a) => {
            let da = diff_node(a, var);
            if const_of(&da) == Some(0.0) {
                return konst(0.0);
            }
            match op {
                UnaryOp::Neg => unary(UnaryOp::Neg, da),
                UnaryOp::Exp => binary(Mul, node.clone(), da),
                UnaryOp::Log => binary(Div, da, a.clone()),
                UnaryOp::Sqrt => binary(Div, da, binary(Mul, konst(2.0), node.clone())),
                UnaryOp::Abs => binary(Div, binary(Mul, a.clone(), da), node.clone()),
            }
        }
        Node::Binary(op, a, b) => {
            let da = diff_node(a, var);
            let db = diff_node(b, var);
            match op {
                Add => binary(Add, da, db),
                Sub => binary(Sub, da, db),
                Mul => binary(Add, binary(Mul, da, b.clone()), binary(Mul, a.clone(), db)),
                Div => binary(
                    Div,
                    binary(Sub, binary(Mul, da, b.clone()), binary(Mul, a.clone(), db)),
                    binary(Mul, b.clone(), b.clone()),
                ),
                Pow => {
                    if let Some(c) = const_of(b) {
                        binary(
                            Mul,
                            binary(Mul, konst(c), binary(Pow, a.clone(), konst(c - 1.0))),
                            da,
                        )
                    } else {
                        let log_term = binary(Mul, db, unary(UnaryOp::Log, a.clone()));
                        let ratio_term = binary(Div, binary(Mul, b.clone(), da), a.clone());
                        binary(Mul, node.clone(), binary(Add, log_term, ratio_term))
                    }
                }
            }
        }
    }
}

fn subst_node(node: &Arc<Node>, var: usize, replacement: &Arc<Node>) -> Arc<Node> {
    match &**node {
        Node::Const(_) => node.clone(),
        Node::Var(i) if *i == var => replacement.clone(),
        Node::Var(_) => node.clone(),
        Node::Unary(op, a) => unary(*op, subst_node(a, var, replacement)),
        Node::Binary(op, a, b) => {
            binary(*op, subst_node(a, var, replacement), subst_node(b, var, replacement))
        }
    }
}

// ---------------------------------------------------------------------------
// lexer

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(c) => format!("`{c}`"),
            TokenKind::LParen => "`(`".to_string(),
            TokenKind::RParen => "`)`".to_string(),
            TokenKind::Comma => "`,`".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                tokens.push(Token { kind: TokenKind::Op(c as char), offset: start });
                i += 1;
            }
            b'(' => {
                tokens.push(Token { kind: TokenKind::LParen, offset: start });
                i += 1;
            }
            b')' => {
                tokens.push(Token { kind: TokenKind::RParen, offset: start });
                i += 1;
            }
            b',' => {
                tokens.push(Token { kind: TokenKind::Comma, offset: start });
                i += 1;
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
                    } else {
                        return Err(ParseError::Syntax {
                            offset: j.min(bytes.len()),
                            message: "malformed exponent in numeric literal".to_string(),
                        });
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed numeric literal `{text}`"),
                })?;
                if !value.is_finite() {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: format!("numeric literal `{text}` is not finite"),
                    });
                }
                tokens.push(Token { kind: TokenKind::Number(value), offset: start });
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token { kind: TokenKind::Ident(src[start..i].to_string()), offset: start });
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax { offset: start, message: format!("unexpected character `{ch}`") });
            }
        }
    }
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// recursive-descent parser

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a [String],
    params: &'a HashMap<String, f64>,
    src_len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token { kind: TokenKind::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.src_len, |t| t.offset)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let message = match self.peek() {
            Some(t) => format!("expected {wanted}, found {}", t.kind.describe()),
            None => format!("expected {wanted}, found end of input"),
        };
        ParseError::Syntax { offset: self.offset(), message }
    }

    fn expr(&mut self) -> Result<Arc<Node>, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = binary(if op == '+' { BinaryOp::Add } else { BinaryOp::Sub }, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Arc<Node>, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = binary(if op == '*' { BinaryOp::Mul } else { BinaryOp::Div }, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Arc<Node>, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(unary(UnaryOp::Neg, inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Arc<Node>, ParseError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.power_rhs()?;
            return Ok(binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn power_rhs(&mut self) -> Result<Arc<Node>, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            let inner = self.power_rhs()?;
            return Ok(unary(UnaryOp::Neg, inner));
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Arc<Node>, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected("an operand"));
        };
        match tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(konst(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if matches!(self.peek(), Some(Token { kind: TokenKind::LParen, .. })) {
                    return self.call(&name, tok.offset);
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Arc::new(Node::Var(i)));
                }
                if let Some(v) = self.params.get(&name) {
                    return Ok(konst(*v));
                }
                Err(ParseError::UnknownIdentifier { name, offset: tok.offset })
            }
            _ => Err(self.unexpected("an operand")),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Arc<Node>, ParseError> {
        let Some(op) = UnaryOp::from_function(name) else {
            return Err(ParseError::UnknownIdentifier { name: name.to_string(), offset });
        };
        self.pos += 1; // '('
        let mut args = Vec::new();
        if !matches!(self.peek(), Some(Token { kind: TokenKind::RParen, .. })) {
            args.push(self.expr()?);
            while matches!(self.peek(), Some(Token { kind: TokenKind::Comma, .. })) {
                self.pos += 1;
                args.push(self.expr()?);
            }
        }
        self.expect_rparen()?;
        if args.len() != 1 {
            return Err(ParseError::Arity {
                function: name.to_string(),
                expected: 1,
                found: args.len(),
                offset,
            });
        }
        Ok(unary(op, args.pop().expect("one argument")))
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token { kind: TokenKind::RParen, .. }) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected("`)`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn r(src: &str) -> Expr {
        Expr::parse(src, &["r"], &HashMap::new()).unwrap()
    }

    #[test]
    fn substitutes_parameters() {
        let e = Expr::parse("1 + m/(2*r)", &["r"], &params(&[("m", 1.0)])).unwrap();
        assert_eq!(e.eval(&[0.5]).unwrap(), 2.0);
    }

    #[test]
    fn doubled_caret_is_a_syntax_error_at_offset_two() {
        let err = Expr::parse("r^^2", &["r"], &HashMap::new()).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 2, .. }), "{err:?}");
    }

    #[test]
    fn undeclared_name_is_reported() {
        let err = Expr::parse("1 + q/r", &["r"], &params(&[("m", 1.0)])).unwrap_err();
        assert_eq!(err, ParseError::UnknownIdentifier { name: "q".into(), offset: 4 });
    }

    #[test]
    fn arity_and_shadowing_errors() {
        let err = Expr::parse("exp(r, 2)", &["r"], &HashMap::new()).unwrap_err();
        assert!(matches!(err, ParseError::Arity { found: 2, .. }));
        let err = Expr::parse("r", &["r"], &params(&[("r", 1.0)])).unwrap_err();
        assert_eq!(err, ParseError::ParamShadowsVariable("r".into()));
        assert_eq!(Expr::parse("  ", &["r"], &HashMap::new()).unwrap_err(), ParseError::Empty);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(r("-r^2").eval(&[3.0]).unwrap(), -9.0);
        assert_eq!(r("2^3^2").eval(&[0.0]).unwrap(), 512.0);
        assert_eq!(r("2^-1").eval(&[0.0]).unwrap(), 0.5);
        assert_eq!(r("1 - 2 - 3").eval(&[0.0]).unwrap(), -4.0);
        assert_eq!(r("8 / 4 / 2").eval(&[0.0]).unwrap(), 1.0);
        assert_eq!(r("1 + 2 * 3").eval(&[0.0]).unwrap(), 7.0);
        assert_eq!(r("1.5e1 + .5").eval(&[0.0]).unwrap(), 15.5);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(r("1 - 1/r").eval(&[2.0]).unwrap(), 0.5);
        assert_eq!(r("(1 + 1/(2*r))^4").eval(&[0.5]).unwrap(), 16.0);
        assert!(matches!(r("sqrt(r - 1)").eval(&[0.0]), Err(EvalError::Domain { .. })));
        assert!(matches!(r("log(r)").eval(&[0.0]), Err(EvalError::Domain { .. })));
        assert!(matches!(r("1/(r - 2)").eval(&[2.0]), Err(EvalError::Domain { .. })));
        assert!(matches!(r("r^0.5").eval(&[-1.0]), Err(EvalError::Domain { .. })));
        assert_eq!(r("r^3").eval(&[-2.0]).unwrap(), -8.0);
    }

    #[test]
    fn domain_error_names_the_subtree() {
        match r("1 + sqrt(r - 1)").eval(&[0.0]) {
            Err(EvalError::Domain { subtree, .. }) => assert_eq!(subtree, "sqrt((r - 1.0))"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn derivative_examples() {
        let d = r("1/r").differentiate("r").unwrap();
        assert_eq!(d.eval(&[2.0]).unwrap(), -0.25);
        let d = r("r^1.5").differentiate("r").unwrap();
        assert!((d.eval(&[4.0]).unwrap() - 3.0).abs() < 1e-15);
        let d = r("exp(-r)").differentiate("r").unwrap();
        assert_eq!(d.eval(&[0.0]).unwrap(), -1.0);
        assert!(r("r").differentiate("x").is_err());
    }

    #[test]
    fn abs_derivative_fails_only_at_zero() {
        let d = r("abs(r - 1)").differentiate("r").unwrap();
        assert_eq!(d.eval(&[3.0]).unwrap(), 1.0);
        assert_eq!(d.eval(&[0.0]).unwrap(), -1.0);
        assert!(matches!(d.eval(&[1.0]), Err(EvalError::Domain { .. })));
    }

    #[test]
    fn variable_exponent_derivative() {
        // d/dr r^r = r^r (log r + 1)
        let d = r("r^r").differentiate("r").unwrap();
        let x: f64 = 1.7;
        assert!((d.eval(&[x]).unwrap() - x.powf(x) * (x.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_folding_collapses_parameters() {
        let e = Expr::parse("2*m + 3", &["r"], &params(&[("m", 1.5)])).unwrap();
        assert_eq!(e.as_constant(), Some(6.0));
        assert_eq!(e.differentiate("r").unwrap().as_constant(), Some(0.0));
    }

    #[test]
    fn building_and_substitution() {
        let phi = r("1 + 1/(2*r)");
        let a = phi.powf(4.0);
        assert_eq!(a.eval(&[0.5]).unwrap(), 16.0);
        let half = r("r/2");
        let shifted = phi.substitute("r", &half).unwrap();
        assert_eq!(shifted.eval(&[1.0]).unwrap(), 2.0);
        let sum = &(&phi * 2.0) + &a;
        assert_eq!(sum.eval(&[0.5]).unwrap(), 20.0);
    }

    #[test]
    fn eval_env_reports_unbound() {
        let e = Expr::parse("x + y", &["x", "y"], &HashMap::new()).unwrap();
        let mut env = HashMap::new();
        env.insert("x".to_string(), 1.0);
        assert_eq!(e.eval_env(&env), Err(EvalError::Unbound("y".into())));
        env.insert("y".to_string(), 2.0);
        assert_eq!(e.eval_env(&env), Ok(3.0));
        assert!(matches!(e.eval(&[1.0]), Err(EvalError::Arity { .. })));
    }

    #[test]
    fn printing_is_parenthesised_and_reparses() {
        let e = r("-2.5*r^-1 + exp(r)/3");
        let text = e.to_string();
        assert_eq!(text, "(((-2.5) * (r ^ (-1.0))) + (exp(r) / 3.0))");
        let back = r(&text);
        for x in [0.3, 1.0, 7.25] {
            assert_eq!(back.eval(&[x]).unwrap(), e.eval(&[x]).unwrap());
        }
    }
}
