use std::fmt::Write;

use super::{BinOp, Expr, LValue, ModelDecl, Number, Stmt};

const CMP: u8 = 1;
const ADD: u8 = 2;
const MUL: u8 = 3;
const UNARY: u8 = 4;
const POW: u8 = 5;
const POSTFIX: u8 = 6;
const PRIMARY: u8 = 7;

fn level(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => match op {
            BinOp::Add | BinOp::Sub => ADD,
            BinOp::Mul | BinOp::Div => MUL,
            BinOp::Pow => POW,
            _ => CMP,
        },
        Expr::Unary { .. } => UNARY,
        Expr::Index { .. } | Expr::Transpose { .. } => POSTFIX,
        _ => PRIMARY,
    }
}

fn list(out: &mut String, items: &[Expr]) {
    for (i, e) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        expr(out, e, CMP);
    }
}

/// Writes `e`, parenthesized when its level is below `min`.
fn expr(out: &mut String, e: &Expr, min: u8) {
    let paren = level(e) < min;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Number { value, .. } => match value {
            Number::Int(i) => write!(out, "{i}").unwrap(),
            Number::Real(x) => write!(out, "{x:?}").unwrap(),
        },
        Expr::Missing { .. } => out.push_str("missing"),
        Expr::Ident { name, .. } => out.push_str(name),
        Expr::Array { elems, .. } => {
            out.push('[');
            list(out, elems);
            out.push(']');
        }
        Expr::Index { base, indices, .. } => {
            expr(out, base, POSTFIX);
            out.push('[');
            list(out, indices);
            out.push(']');
        }
        Expr::Transpose { base, .. } => {
            expr(out, base, POSTFIX);
            out.push('\'');
        }
        Expr::Unary { expr: inner, .. } => {
            out.push('-');
            expr(out, inner, UNARY);
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            let (l, r) = match level(e) {
                CMP => (ADD, ADD),
                ADD => (ADD, MUL),
                MUL => (MUL, UNARY),
                _ => (POSTFIX, UNARY),
            };
            expr(out, lhs, l);
            write!(out, " {} ", op.symbol()).unwrap();
            expr(out, rhs, r);
        }
        Expr::Call { name, args, .. } => {
            write!(out, "{name}(").unwrap();
            list(out, args);
            out.push(')');
        }
        Expr::BroadcastCall { name, args, .. } => {
            write!(out, "{name}.(").unwrap();
            list(out, args);
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}

fn lvalue(out: &mut String, lv: &LValue) {
    out.push_str(&lv.name);
    if !lv.indices.is_empty() {
        out.push('[');
        list(out, &lv.indices);
        out.push(']');
    }
}

fn block(out: &mut String, body: &[Stmt], depth: usize) {
    for s in body {
        out.push_str(&"  ".repeat(depth));
        match s {
            Stmt::Assign { target, value, .. } => {
                write!(out, "{target} = ").unwrap();
                expr(out, value, CMP);
            }
            Stmt::Tilde { lhs, dist, .. } => {
                lvalue(out, lhs);
                out.push_str(" ~ ");
                expr(out, dist, CMP);
            }
            Stmt::DotTilde { lhs, dist, .. } => {
                lvalue(out, lhs);
                out.push_str(" .~ ");
                expr(out, dist, CMP);
            }
            Stmt::If { cond, body, .. } => {
                out.push_str("if ");
                expr(out, cond, CMP);
                out.push_str(" {\n");
                block(out, body, depth + 1);
                out.push_str(&"  ".repeat(depth));
                out.push('}');
            }
            Stmt::Reject { .. } => out.push_str("reject"),
        }
        out.push('\n');
    }
}

/// Canonical source text for a model.
pub fn pretty_print(m: &ModelDecl) -> String {
    let mut out = format!("model {}({}) {{\n", m.name, m.params.join(", "));
    block(&mut out, &m.body, 1);
    out.push_str("}\n");
    out
}
