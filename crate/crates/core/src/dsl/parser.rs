use std::collections::HashSet;

use super::{
    lex, BinOp, Builtin, Expr, LValue, ModelDecl, Number, ParseError, ParseErrorKind, Span, Stmt, Token,
    TokenKind, UnaryOp,
};
use crate::distributions::Family;

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

fn syntax(message: impl Into<String>, span: Span) -> ParseError {
    ParseError::new(ParseErrorKind::Syntax, message, span)
}

fn semantic(message: impl Into<String>, span: Span) -> ParseError {
    ParseError::new(ParseErrorKind::Semantic, message, span)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &'a Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_at(&self, k: usize) -> &'a TokenKind {
        &self.tokens[(self.pos + k).min(self.tokens.len() - 1)].kind
    }

    fn bump(&mut self) -> &'a Token {
        let t = self.peek();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if &self.peek().kind == kind {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind) -> Result<Span, ParseError> {
        let t = self.peek();
        if t.kind == kind {
            self.bump();
            Ok(t.span)
        } else {
            Err(syntax(format!("expected {kind}, found {}", t.kind), t.span))
        }
    }

    fn ident(&mut self) -> Result<(String, Span), ParseError> {
        let t = self.peek();
        match &t.kind {
            TokenKind::Ident(name) => {
                self.bump();
                Ok((name.clone(), t.span))
            }
            other => Err(syntax(format!("expected identifier, found {other}"), t.span)),
        }
    }

    fn prev_span(&self) -> Span {
        self.tokens[self.pos.saturating_sub(1)].span
    }

    fn model(&mut self) -> Result<ModelDecl, ParseError> {
        let start = self.expect(TokenKind::Model)?;
        let (name, _) = self.ident()?;
        self.expect(TokenKind::LParen)?;
        let mut params = Vec::new();
        if !self.eat(&TokenKind::RParen) {
            loop {
                let (p, span) = self.ident()?;
                if params.contains(&p) {
                    return Err(semantic(format!("duplicate parameter `{p}`"), span));
                }
                params.push(p);
                if self.eat(&TokenKind::RParen) {
                    break;
                }
                self.expect(TokenKind::Comma)?;
            }
        }
        let body = self.block()?;
        Ok(ModelDecl {
            name,
            params,
            body,
            span: start.to(self.prev_span()),
        })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(TokenKind::LBrace)?;
        let mut body = Vec::new();
        while !self.eat(&TokenKind::RBrace) {
            body.push(self.stmt()?);
        }
        Ok(body)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let t = self.peek();
        match &t.kind {
            TokenKind::Reject => {
                self.bump();
                Ok(Stmt::Reject { span: t.span })
            }
            TokenKind::If => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block()?;
                Ok(Stmt::If {
                    cond,
                    body,
                    span: t.span.to(self.prev_span()),
                })
            }
            TokenKind::Ident(name) => {
                if self.peek_at(1) == &TokenKind::Assign {
                    self.bump();
                    self.bump();
                    let value = self.expr()?;
                    return Ok(Stmt::Assign {
                        target: name.clone(),
                        value,
                        span: t.span.to(self.prev_span()),
                    });
                }
                let lhs = self.lvalue()?;
                let op = self.bump();
                let dot = match op.kind {
                    TokenKind::Tilde => false,
                    TokenKind::DotTilde => true,
                    ref other => {
                        return Err(syntax(format!("expected `=`, `~` or `.~`, found {other}"), op.span))
                    }
                };
                let dist = self.expr()?;
                let span = t.span.to(self.prev_span());
                Ok(if dot {
                    Stmt::DotTilde { lhs, dist, span }
                } else {
                    Stmt::Tilde { lhs, dist, span }
                })
            }
            other => Err(syntax(format!("expected a statement, found {other}"), t.span)),
        }
    }

    fn lvalue(&mut self) -> Result<LValue, ParseError> {
        let (name, start) = self.ident()?;
        let mut indices = Vec::new();
        if self.eat(&TokenKind::LBracket) {
            indices = self.expr_list(TokenKind::RBracket)?;
        }
        Ok(LValue {
            name,
            indices,
            span: start.to(self.prev_span()),
        })
    }

    /// Comma-separated, at least one element, consuming `close`.
    fn expr_list(&mut self, close: TokenKind) -> Result<Vec<Expr>, ParseError> {
        let mut items = vec![self.expr()?];
        while !self.eat(&close) {
            self.expect(TokenKind::Comma)?;
            items.push(self.expr()?);
        }
        Ok(items)
    }

    /// Possibly empty argument list after an opening parenthesis.
    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        if self.eat(&TokenKind::RParen) {
            return Ok(Vec::new());
        }
        self.expr_list(TokenKind::RParen)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add()?;
        let op = match self.peek().kind {
            TokenKind::Lt => BinOp::Lt,
            TokenKind::Gt => BinOp::Gt,
            TokenKind::Le => BinOp::Le,
            TokenKind::Ge => BinOp::Ge,
            TokenKind::EqEq => BinOp::Eq,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add()?;
        if let TokenKind::Lt | TokenKind::Gt | TokenKind::Le | TokenKind::Ge | TokenKind::EqEq = self.peek().kind {
            return Err(syntax("comparisons cannot be chained", self.peek().span));
        }
        Ok(binary(op, lhs, rhs))
    }

    fn add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Plus => BinOp::Add,
                TokenKind::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Star => BinOp::Mul,
                TokenKind::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().kind == TokenKind::Minus {
            let start = self.bump().span;
            let expr = self.unary()?;
            let span = start.to(expr.span());
            return Ok(Expr::Unary {
                op: UnaryOp::Neg,
                expr: Box::new(expr),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if self.eat(&TokenKind::Caret) {
            let exp = self.unary()?;
            return Ok(binary(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        loop {
            if self.eat(&TokenKind::Quote) {
                let span = e.span().to(self.prev_span());
                e = Expr::Transpose {
                    base: Box::new(e),
                    span,
                };
            } else if self.eat(&TokenKind::LBracket) {
                let indices = self.expr_list(TokenKind::RBracket)?;
                let span = e.span().to(self.prev_span());
                e = Expr::Index {
                    base: Box::new(e),
                    indices,
                    span,
                };
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.bump();
        let span = t.span;
        match &t.kind {
            TokenKind::Int(i) => Ok(Expr::Number {
                value: Number::Int(*i),
                span,
            }),
            TokenKind::Real(x) => Ok(Expr::Number {
                value: Number::Real(*x),
                span,
            }),
            TokenKind::Missing => Ok(Expr::Missing { span }),
            TokenKind::Ident(name) => match self.peek().kind {
                TokenKind::LParen => {
                    self.bump();
                    check_callee(name, span)?;
                    let args = self.args()?;
                    Ok(Expr::Call {
                        name: name.clone(),
                        args,
                        span: span.to(self.prev_span()),
                    })
                }
                TokenKind::Dot => {
                    self.bump();
                    self.expect(TokenKind::LParen)?;
                    check_callee(name, span)?;
                    let args = self.args()?;
                    Ok(Expr::BroadcastCall {
                        name: name.clone(),
                        args,
                        span: span.to(self.prev_span()),
                    })
                }
                _ => Ok(Expr::Ident {
                    name: name.clone(),
                    span,
                }),
            },
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(e)
            }
            TokenKind::LBracket => {
                let elems = if self.eat(&TokenKind::RBracket) {
                    Vec::new()
                } else {
                    self.expr_list(TokenKind::RBracket)?
                };
                Ok(Expr::Array {
                    elems,
                    span: span.to(self.prev_span()),
                })
            }
            other => Err(syntax(format!("expected an expression, found {other}"), span)),
        }
    }
}

fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    let span = lhs.span().to(rhs.span());
    Expr::Binary {
        op,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
        span,
    }
}

fn check_callee(name: &str, span: Span) -> Result<(), ParseError> {
    if Builtin::from_name(name).is_some() || Family::from_name(name).is_some() {
        Ok(())
    } else {
        Err(semantic(format!("unknown function `{name}`"), span))
    }
}

/// Checks that need the whole model: call arities, distribution placement.
fn check_model(m: &ModelDecl) -> Result<(), ParseError> {
    fn expr(e: &Expr, tilde_rhs: bool) -> Result<(), ParseError> {
        match e {
            Expr::Number { .. } | Expr::Missing { .. } | Expr::Ident { .. } => Ok(()),
            Expr::Array { elems, .. } => elems.iter().try_for_each(|e| expr(e, false)),
            Expr::Index { base, indices, .. } => {
                expr(base, false)?;
                indices.iter().try_for_each(|e| expr(e, false))
            }
            Expr::Transpose { base, .. } => expr(base, false),
            Expr::Unary { expr: inner, .. } => expr(inner, false),
            Expr::Binary { lhs, rhs, .. } => {
                expr(lhs, false)?;
                expr(rhs, false)
            }
            Expr::Call { name, args, span } | Expr::BroadcastCall { name, args, span } => {
                let broadcast = matches!(e, Expr::BroadcastCall { .. });
                if let Some(family) = Family::from_name(name) {
                    if !tilde_rhs {
                        return Err(semantic(
                            format!("distribution `{name}` may only appear on the right of `~` or `.~`"),
                            *span,
                        ));
                    }
                    if args.len() != family.arity() {
                        return Err(semantic(
                            format!("{name} takes {} argument(s), got {}", family.arity(), args.len()),
                            *span,
                        ));
                    }
                    if broadcast && family.is_multivariate() {
                        return Err(semantic(format!("{name} cannot be broadcast"), *span));
                    }
                } else if let Some(b) = Builtin::from_name(name) {
                    let (lo, hi) = b.arity();
                    if args.len() < lo || args.len() > hi {
                        return Err(semantic(
                            format!("`{name}` takes {lo}..={hi} argument(s), got {}", args.len()),
                            *span,
                        ));
                    }
                }
                args.iter().try_for_each(|a| expr(a, false))
            }
        }
    }
    fn body(stmts: &[Stmt]) -> Result<(), ParseError> {
        for s in stmts {
            match s {
                Stmt::Assign { value, .. } => expr(value, false)?,
                Stmt::Tilde { lhs, dist, .. } | Stmt::DotTilde { lhs, dist, .. } => {
                    lhs.indices.iter().try_for_each(|e| expr(e, false))?;
                    if dist.distribution_family().is_none() {
                        return Err(semantic(
                            "tilde right-hand side must be a distribution call",
                            dist.span(),
                        ));
                    }
                    expr(dist, true)?;
                    if let (Stmt::Tilde { .. }, Expr::BroadcastCall { span, .. }) = (s, dist) {
                        return Err(semantic("a broadcast distribution needs `.~`", *span));
                    }
                    if let (Stmt::DotTilde { .. }, false) = (s, lhs.indices.is_empty()) {
                        return Err(semantic("`.~` takes an unindexed left-hand side", lhs.span));
                    }
                }
                Stmt::If { cond, body: inner, .. } => {
                    expr(cond, false)?;
                    body(inner)?;
                }
                Stmt::Reject { .. } => {}
            }
        }
        Ok(())
    }
    body(&m.body)
}

/// Parses a token stream holding exactly one model.
pub fn parse_tokens(tokens: &[Token]) -> Result<ModelDecl, ParseError> {
    if tokens.is_empty() {
        return Err(syntax("empty token stream", Span::default()));
    }
    let mut p = Parser { tokens, pos: 0 };
    let m = p.model()?;
    let t = p.peek();
    if t.kind != TokenKind::Eof {
        return Err(syntax(format!("expected end of input, found {}", t.kind), t.span));
    }
    check_model(&m)?;
    Ok(m)
}

pub fn parse_model(src: &str) -> Result<ModelDecl, ParseError> {
    parse_tokens(&lex(src)?)
}

/// Parses every model in a source file.
pub fn parse_file(src: &str) -> Result<Vec<ModelDecl>, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser { tokens: &tokens, pos: 0 };
    let mut models: Vec<ModelDecl> = Vec::new();
    let mut names = HashSet::new();
    loop {
        let m = p.model()?;
        if !names.insert(m.name.clone()) {
            return Err(semantic(format!("model `{}` defined twice", m.name), m.span));
        }
        check_model(&m)?;
        models.push(m);
        if p.peek().kind == TokenKind::Eof {
            return Ok(models);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINREG: &str = "model linreg(X, y) {
  d = size(X, 2)
  w ~ MvNormal(zeros(d), 1)
  s ~ Gamma(1, 1)
  y .~ Normal.(X * w, s)
}";

    #[test]
    fn linreg_structure() {
        let m = parse_model(LINREG).unwrap();
        assert_eq!(m.name, "linreg");
        assert_eq!(m.params, ["X", "y"]);
        assert_eq!(m.body.len(), 4);
        assert!(matches!(&m.body[0], Stmt::Assign { target, .. } if target == "d"));
        assert!(matches!(&m.body[1], Stmt::Tilde { lhs, .. } if lhs.name == "w"));
        assert!(matches!(&m.body[2], Stmt::Tilde { lhs, .. } if lhs.name == "s"));
        assert!(matches!(&m.body[3], Stmt::DotTilde { lhs, dist: Expr::BroadcastCall { name, .. }, .. }
            if lhs.name == "y" && name == "Normal"));
        assert_eq!(m.tilde_symbols(), ["w", "s", "y"]);
    }

    #[test]
    fn tilde_to_literal_is_semantic_error() {
        let err = parse_model("model m() { x ~ 3 }").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Semantic);
        assert!(err.message.contains("tilde right-hand side must be a distribution"));
        assert_eq!(err.span.col, 17);
    }

    #[test]
    fn precedence() {
        let e = |src: &str| match parse_model(&format!("model m() {{ z = {src} }}")).unwrap().body.remove(0) {
            Stmt::Assign { value, .. } => value,
            _ => unreachable!(),
        };
        let num = |i| Expr::Number {
            value: Number::Int(i),
            span: Span::default(),
        };
        let id = |s: &str| Expr::Ident {
            name: s.into(),
            span: Span::default(),
        };
        assert_eq!(e("1 + 2 * 3"), binary(BinOp::Add, num(1), binary(BinOp::Mul, num(2), num(3))));
        assert_eq!(
            e("-2 ^ 2"),
            Expr::Unary {
                op: UnaryOp::Neg,
                expr: Box::new(binary(BinOp::Pow, num(2), num(2))),
                span: Span::default()
            }
        );
        assert_eq!(e("2 ^ 3 ^ 4"), binary(BinOp::Pow, num(2), binary(BinOp::Pow, num(3), num(4))));
        assert_eq!(e("1 - 2 - 3"), binary(BinOp::Sub, binary(BinOp::Sub, num(1), num(2)), num(3)));
        let t = Expr::Transpose {
            base: Box::new(id("X")),
            span: Span::default(),
        };
        assert_eq!(e("X' * w"), binary(BinOp::Mul, t, id("w")));
        assert_eq!(e("a + 1 < b"), binary(BinOp::Lt, binary(BinOp::Add, id("a"), num(1)), id("b")));
    }

    #[test]
    fn syntax_errors_are_positioned() {
        for src in [
            "model m( { }",
            "model m() { x ~ }",
            "model m() { x = 1 < 2 < 3 }",
            "model m() { x + 1 }",
            "model m() { x ~ Normal(0, 1)",
            "model m() { x ~ foo(1) }",
            "model m(a, a) { }",
            "model m() { d = Normal(0, 1) }",
            "model m() { x ~ Normal(0) }",
            "model m() { x ~ Normal.(0, 1) }",
            "model m() { x .~ MvNormal.(0, 1) }",
            "model m() { x[1] .~ Normal(0, 1) }",
            "model m() { x = size(1, 2, 3) }",
            "model m() { } model m() { }",
            "",
        ] {
            let err = parse_file(src).unwrap_err();
            assert!(err.span.offset <= src.len(), "{src}: {err}");
        }
    }

    #[test]
    fn if_reject() {
        let m = parse_model("model g(y) { s ~ Gamma(1, 1)\n if s < 0 { reject }\n y .~ Normal(0, sqrt(s)) }").unwrap();
        assert!(matches!(&m.body[1], Stmt::If { body, .. } if body == &[Stmt::Reject { span: Span::default() }]));
        assert_eq!(super::super::count_statements(&m.body), 4);
    }
}
