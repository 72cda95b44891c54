//! The tilde-notation model language.
//!
//! ```text
//! model linreg(X, y) {
//!   d = size(X, 2)
//!   w ~ MvNormal(zeros(d), 1)
//!   s ~ Gamma(1, 1)
//!   y .~ Normal.(X * w, s)
//! }
//! ```

mod lexer;
mod parser;
mod pretty;

use std::fmt;

use thiserror::Error;

pub use lexer::lex;
pub use parser::{parse_file, parse_model, parse_tokens};
pub use pretty::pretty_print;

use crate::distributions::Family;

/// Source position of a token or node.
///
/// Spans compare equal regardless of position so that derived equality on
/// AST nodes is structural.
#[derive(Debug, Clone, Copy, Default, Eq)]
pub struct Span {
    /// 1-based.
    pub line: u32,
    /// 1-based, in characters.
    pub col: u32,
    /// Byte offset.
    pub offset: usize,
    /// Byte length.
    pub len: usize,
}

impl PartialEq for Span {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl Span {
    /// Smallest span covering both.
    pub fn to(self, end: Span) -> Span {
        Span {
            len: (end.offset + end.len).saturating_sub(self.offset),
            ..self
        }
    }

    pub fn same_position(&self, other: &Span) -> bool {
        self.offset == other.offset && self.len == other.len
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Int(i64),
    Real(f64),
    Model,
    If,
    Reject,
    Missing,
    Tilde,
    DotTilde,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Quote,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Lt,
    Gt,
    Le,
    Ge,
    EqEq,
    Dot,
    Eof,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Ident(name) => return write!(f, "identifier `{name}`"),
            TokenKind::Int(i) => return write!(f, "number `{i}`"),
            TokenKind::Real(x) => return write!(f, "number `{x:?}`"),
            TokenKind::Model => "`model`",
            TokenKind::If => "`if`",
            TokenKind::Reject => "`reject`",
            TokenKind::Missing => "`missing`",
            TokenKind::Tilde => "`~`",
            TokenKind::DotTilde => "`.~`",
            TokenKind::Assign => "`=`",
            TokenKind::Plus => "`+`",
            TokenKind::Minus => "`-`",
            TokenKind::Star => "`*`",
            TokenKind::Slash => "`/`",
            TokenKind::Caret => "`^`",
            TokenKind::Quote => "`'`",
            TokenKind::LParen => "`(`",
            TokenKind::RParen => "`)`",
            TokenKind::LBracket => "`[`",
            TokenKind::RBracket => "`]`",
            TokenKind::LBrace => "`{`",
            TokenKind::RBrace => "`}`",
            TokenKind::Comma => "`,`",
            TokenKind::Lt => "`<`",
            TokenKind::Gt => "`>`",
            TokenKind::Le => "`<=`",
            TokenKind::Ge => "`>=`",
            TokenKind::EqEq => "`==`",
            TokenKind::Dot => "`.`",
            TokenKind::Eof => "end of input",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Lex,
    Syntax,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}:{}: {message}", span.line, span.col)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub message: String,
    pub span: Span,
}

impl ParseError {
    pub(crate) fn new(kind: ParseErrorKind, message: impl Into<String>, span: Span) -> Self {
        Self {
            kind,
            message: message.into(),
            span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Number {
    Int(i64),
    Real(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "<=",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge | BinOp::Eq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Logistic,
    Exp,
    Log,
    Sqrt,
    Size,
    Zeros,
    Ones,
    Sum,
}

impl Builtin {
    pub const ALL: [Builtin; 8] = [
        Builtin::Logistic,
        Builtin::Exp,
        Builtin::Log,
        Builtin::Sqrt,
        Builtin::Size,
        Builtin::Zeros,
        Builtin::Ones,
        Builtin::Sum,
    ];

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Logistic => "logistic",
            Builtin::Exp => "exp",
            Builtin::Log => "log",
            Builtin::Sqrt => "sqrt",
            Builtin::Size => "size",
            Builtin::Zeros => "zeros",
            Builtin::Ones => "ones",
            Builtin::Sum => "sum",
        }
    }

    /// Accepted argument counts, inclusive.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Builtin::Size => (1, 2),
            _ => (1, 1),
        }
    }

    /// Acts independently on each element of a vector argument.
    pub fn is_elementwise(self) -> bool {
        matches!(
            self,
            Builtin::Logistic | Builtin::Exp | Builtin::Log | Builtin::Sqrt
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number { value: Number, span: Span },
    Missing { span: Span },
    Ident { name: String, span: Span },
    /// `[a, b, c]`, a column vector.
    Array { elems: Vec<Expr>, span: Span },
    Index { base: Box<Expr>, indices: Vec<Expr>, span: Span },
    Transpose { base: Box<Expr>, span: Span },
    Unary { op: UnaryOp, expr: Box<Expr>, span: Span },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr>, span: Span },
    Call { name: String, args: Vec<Expr>, span: Span },
    /// `name.(args)`.
    BroadcastCall { name: String, args: Vec<Expr>, span: Span },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Number { span, .. }
            | Expr::Missing { span }
            | Expr::Ident { span, .. }
            | Expr::Array { span, .. }
            | Expr::Index { span, .. }
            | Expr::Transpose { span, .. }
            | Expr::Unary { span, .. }
            | Expr::Binary { span, .. }
            | Expr::Call { span, .. }
            | Expr::BroadcastCall { span, .. } => *span,
        }
    }

    /// The distribution family named by a tilde right-hand side.
    pub fn distribution_family(&self) -> Option<Family> {
        match self {
            Expr::Call { name, .. } | Expr::BroadcastCall { name, .. } => Family::from_name(name),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LValue {
    pub name: String,
    pub indices: Vec<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign { target: String, value: Expr, span: Span },
    Tilde { lhs: LValue, dist: Expr, span: Span },
    DotTilde { lhs: LValue, dist: Expr, span: Span },
    If { cond: Expr, body: Vec<Stmt>, span: Span },
    Reject { span: Span },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::Assign { span, .. }
            | Stmt::Tilde { span, .. }
            | Stmt::DotTilde { span, .. }
            | Stmt::If { span, .. }
            | Stmt::Reject { span } => *span,
        }
    }
}

/// Number of statements in `body`, counting nested ones.
pub fn count_statements(body: &[Stmt]) -> usize {
    body.iter()
        .map(|s| match s {
            Stmt::If { body, .. } => 1 + count_statements(body),
            _ => 1,
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDecl {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

impl ModelDecl {
    /// Symbols appearing on the left of `~` or `.~`, in first-appearance order.
    pub fn tilde_symbols(&self) -> Vec<String> {
        fn walk(body: &[Stmt], out: &mut Vec<String>) {
            for s in body {
                match s {
                    Stmt::Tilde { lhs, .. } | Stmt::DotTilde { lhs, .. } => {
                        if !out.contains(&lhs.name) {
                            out.push(lhs.name.clone());
                        }
                    }
                    Stmt::If { body, .. } => walk(body, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }
}
