//! Random well-formed model ASTs for round-trip testing.

use rand::prelude::*;
use trace_ppl::distributions::Family;
use trace_ppl::dsl::{BinOp, Builtin, Expr, LValue, ModelDecl, Number, Span, Stmt, UnaryOp};

const NAMES: [&str; 6] = ["a", "b", "x", "mu", "s2", "w_1"];
const OPS: [BinOp; 10] = [
    BinOp::Add,
    BinOp::Sub,
    BinOp::Mul,
    BinOp::Div,
    BinOp::Pow,
    BinOp::Lt,
    BinOp::Gt,
    BinOp::Le,
    BinOp::Ge,
    BinOp::Eq,
];

fn sp() -> Span {
    Span::default()
}

fn name<R: Rng>(rng: &mut R) -> String {
    NAMES.choose(rng).unwrap().to_string()
}

fn leaf<R: Rng>(rng: &mut R) -> Expr {
    match rng.random_range(0..10) {
        0..=2 => Expr::Number {
            value: Number::Int(rng.random_range(0..1000)),
            span: sp(),
        },
        3..=5 => {
            // a mix of short decimals and full-precision values
            let x: f64 = if rng.random() {
                rng.random_range(0..10_000) as f64 / 100.0
            } else {
                rng.random::<f64>() * 10f64.powi(rng.random_range(-8..8))
            };
            Expr::Number {
                value: Number::Real(x),
                span: sp(),
            }
        }
        6 => Expr::Missing { span: sp() },
        _ => Expr::Ident {
            name: name(rng),
            span: sp(),
        },
    }
}

fn exprs<R: Rng>(rng: &mut R, n: usize, depth: usize) -> Vec<Expr> {
    (0..n).map(|_| expr(rng, depth)).collect()
}

/// An expression of nesting depth at most `depth`.
pub fn expr<R: Rng>(rng: &mut R, depth: usize) -> Expr {
    if depth <= 1 || rng.random_range(0..4) == 0 {
        return leaf(rng);
    }
    let d = depth - 1;
    match rng.random_range(0..7) {
        0 => {
            let n = rng.random_range(0..4);
            Expr::Array {
                elems: exprs(rng, n, d),
                span: sp(),
            }
        }
        1 => {
            let n = rng.random_range(1..3);
            Expr::Index {
                base: Box::new(expr(rng, d)),
                indices: exprs(rng, n, d),
                span: sp(),
            }
        }
        2 => Expr::Transpose {
            base: Box::new(expr(rng, d)),
            span: sp(),
        },
        3 => Expr::Unary {
            op: UnaryOp::Neg,
            expr: Box::new(expr(rng, d)),
            span: sp(),
        },
        4 | 5 => Expr::Binary {
            op: *OPS.choose(rng).unwrap(),
            lhs: Box::new(expr(rng, d)),
            rhs: Box::new(expr(rng, d)),
            span: sp(),
        },
        _ => {
            let b = *Builtin::ALL.choose(rng).unwrap();
            let (lo, hi) = b.arity();
            let n = rng.random_range(lo..=hi);
            let args = exprs(rng, n, d);
            if b.is_elementwise() && rng.random() {
                Expr::BroadcastCall {
                    name: b.name().to_string(),
                    args,
                    span: sp(),
                }
            } else {
                Expr::Call {
                    name: b.name().to_string(),
                    args,
                    span: sp(),
                }
            }
        }
    }
}

fn dist<R: Rng>(rng: &mut R, depth: usize, broadcast: bool) -> Expr {
    let candidates: Vec<Family> = Family::ALL
        .into_iter()
        .filter(|f| !broadcast || !f.is_multivariate())
        .collect();
    let f = *candidates.choose(rng).unwrap();
    let args = exprs(rng, f.arity(), depth.saturating_sub(1).max(1));
    let name = f.name().to_string();
    if broadcast {
        Expr::BroadcastCall { name, args, span: sp() }
    } else {
        Expr::Call { name, args, span: sp() }
    }
}

fn stmt<R: Rng>(rng: &mut R, depth: usize) -> Stmt {
    match rng.random_range(0..9) {
        0..=2 => Stmt::Assign {
            target: name(rng),
            value: expr(rng, depth),
            span: sp(),
        },
        3 | 4 => {
            let n = rng.random_range(0..3);
            Stmt::Tilde {
                lhs: LValue {
                    name: name(rng),
                    indices: exprs(rng, n, depth.saturating_sub(1).max(1)),
                    span: sp(),
                },
                dist: dist(rng, depth, false),
                span: sp(),
            }
        }
        5 => {
            let broadcast = rng.random();
            Stmt::DotTilde {
                lhs: LValue {
                    name: name(rng),
                    indices: Vec::new(),
                    span: sp(),
                },
                dist: dist(rng, depth, broadcast),
                span: sp(),
            }
        }
        6 | 7 if depth > 1 => {
            let n = rng.random_range(0..3);
            Stmt::If {
                cond: expr(rng, depth - 1),
                body: (0..n).map(|_| stmt(rng, depth - 1)).collect(),
                span: sp(),
            }
        }
        _ => Stmt::Reject { span: sp() },
    }
}

/// A model whose statements and expressions nest at most `depth` deep.
pub fn random_model<R: Rng>(rng: &mut R, depth: usize) -> ModelDecl {
    let n_params = rng.random_range(0..3);
    let mut params: Vec<String> = Vec::new();
    for _ in 0..n_params {
        let p = name(rng);
        if !params.contains(&p) {
            params.push(p);
        }
    }
    let n = rng.random_range(1..6);
    ModelDecl {
        name: format!("m{}", rng.random_range(0..100)),
        params,
        body: (0..n).map(|_| stmt(rng, depth)).collect(),
        span: sp(),
    }
}
