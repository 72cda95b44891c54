use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::{fixed_variate, trace_err, Context, EvalError, EvalOptions, Instrumentation, Matrix, Model, Value};
use crate::addressing::VarName;
use crate::autodiff::{Buf, NodeId, Op, Tape};
use crate::distributions::{Bijector, Distribution, Family, Variate};
use crate::dsl::{count_statements, BinOp, Builtin, Expr, LValue, Number, Span, Stmt};
use crate::numeric::{self, Arith, Shape, Unary};
use crate::trace::{SlotValue, TraceError, VarInfo};

/// Run-time value. Arrays are reference-counted so that data arguments are
/// never copied per evaluation; `Node` values live on the gradient tape.
#[derive(Debug, Clone)]
pub(crate) enum Val {
    Real(f64),
    Int(i64),
    Bool(bool),
    RVec(Arc<Vec<f64>>),
    IVec(Arc<Vec<i64>>),
    Mat(Arc<Matrix>),
    Missing,
    Node(NodeId, Shape),
}

impl Val {
    pub(crate) fn from_value(v: &Value) -> Val {
        match v {
            Value::Real(x) => Val::Real(*x),
            Value::Int(i) => Val::Int(*i),
            Value::Bool(b) => Val::Bool(*b),
            Value::RealVector(v) => Val::RVec(Arc::new(v.clone())),
            Value::IntVector(v) => Val::IVec(Arc::new(v.clone())),
            Value::RealMatrix(m) => Val::Mat(Arc::new(m.clone())),
            Value::Missing => Val::Missing,
        }
    }

    pub(crate) fn to_value(&self) -> Value {
        match self {
            Val::Real(x) => Value::Real(*x),
            Val::Int(i) => Value::Int(*i),
            Val::Bool(b) => Value::Bool(*b),
            Val::RVec(v) => Value::RealVector(v.to_vec()),
            Val::IVec(v) => Value::IntVector(v.to_vec()),
            Val::Mat(m) => Value::RealMatrix((**m).clone()),
            Val::Missing => Value::Missing,
            Val::Node(..) => unreachable!("tape values never escape an evaluation"),
        }
    }

    fn from_variate(v: Variate) -> Val {
        match v {
            Variate::Real(x) => Val::Real(x),
            Variate::Int(i) => Val::Int(i),
            Variate::Vector(v) => Val::RVec(Arc::new(v)),
        }
    }

    fn from_shape(shape: Shape, data: Vec<f64>) -> Val {
        match shape {
            Shape::Scalar => Val::Real(data[0]),
            Shape::Vector(_) => Val::RVec(Arc::new(data)),
            Shape::Matrix(r, c) => Val::Mat(Arc::new(Matrix::new(r, c, data).expect("shape matches data"))),
        }
    }

    fn shape(&self) -> Option<Shape> {
        match self {
            Val::Real(_) | Val::Int(_) => Some(Shape::Scalar),
            Val::RVec(v) => Some(Shape::Vector(v.len())),
            Val::IVec(v) => Some(Shape::Vector(v.len())),
            Val::Mat(m) => Some(Shape::Matrix(m.rows(), m.cols())),
            Val::Node(_, s) => Some(*s),
            Val::Bool(_) | Val::Missing => None,
        }
    }

    fn is_node(&self) -> bool {
        matches!(self, Val::Node(..))
    }

    fn describe(&self) -> String {
        match self {
            Val::Bool(_) => "a bool".into(),
            Val::Missing => "missing".into(),
            Val::Int(_) => "an integer".into(),
            other => format!("a {}", other.shape().expect("numeric")),
        }
    }
}

/// Numeric contents of a value, borrowing where possible.
fn slice<'v>(tape: Option<&'v Tape>, v: &'v Val) -> Option<Cow<'v, [f64]>> {
    Some(match v {
        Val::Real(x) => Cow::Borrowed(std::slice::from_ref(x)),
        Val::Int(i) => Cow::Owned(vec![*i as f64]),
        Val::RVec(a) => Cow::Borrowed(&a[..]),
        Val::IVec(a) => Cow::Owned(a.iter().map(|&i| i as f64).collect()),
        Val::Mat(m) => Cow::Borrowed(m.data()),
        Val::Node(id, _) => Cow::Borrowed(tape.expect("node without tape").value(*id)),
        Val::Bool(_) | Val::Missing => return None,
    })
}

fn eval_err(message: impl Into<String>, span: Span) -> EvalError {
    EvalError::Eval {
        message: message.into(),
        span,
    }
}

fn domain_err(message: impl Into<String>, span: Span) -> EvalError {
    EvalError::ModelDomain {
        message: message.into(),
        span,
    }
}

enum Flow {
    Next,
    Halt,
}

struct Eval<'a, V: ?Sized, R: ?Sized> {
    model: &'a Model,
    trace: &'a mut V,
    ctx: Context,
    rng: &'a mut R,
    fixed: Option<&'a HashMap<String, Value>>,
    instr: Option<&'a mut Instrumentation>,
    tape: Option<&'a mut Tape>,
    env: HashMap<String, Val>,
}

pub(super) fn run<V, R>(
    model: &Model,
    trace: &mut V,
    ctx: Context,
    rng: &mut R,
    opts: EvalOptions<'_>,
    tape: Option<&mut Tape>,
) -> Result<f64, EvalError>
where
    V: VarInfo + ?Sized,
    R: Rng + ?Sized,
{
    trace.reset_logp();
    let mut env = HashMap::with_capacity(model.args.len() + 8);
    for (name, v) in &model.args {
        env.insert(name.clone(), v.clone());
    }
    let mut ev = Eval {
        model,
        trace,
        ctx,
        rng,
        fixed: opts.fixed,
        instr: opts.instrumentation,
        tape,
        env,
    };
    ev.block(&model.decl.body, 0)?;
    Ok(ev.trace.logp())
}

fn bijector_of(family: Family) -> Option<Bijector> {
    match family {
        Family::Normal => Some(Bijector::Identity),
        Family::Gamma => Some(Bijector::Log),
        Family::Beta => Some(Bijector::Logit),
        _ => None,
    }
}

/// Element `i` of each broadcast parameter.
#[inline]
fn params_at(ps: &[Cow<'_, [f64]>], i: usize) -> [f64; 2] {
    let mut p = [0.0; 2];
    for (k, q) in ps.iter().enumerate() {
        p[k] = q[numeric::bidx(q.len(), i)];
    }
    p
}

impl<V, R> Eval<'_, V, R>
where
    V: VarInfo + ?Sized,
    R: Rng + ?Sized,
{
    fn block(&mut self, body: &[Stmt], first_id: usize) -> Result<Flow, EvalError> {
        let mut id = first_id;
        for stmt in body {
            if let Some(ins) = self.instr.as_deref_mut() {
                ins.executed[id] += 1;
            }
            match stmt {
                Stmt::Assign { target, value, span } => {
                    if self.model.decl.params.contains(target) {
                        return Err(eval_err(format!("cannot assign to model argument `{target}`"), *span));
                    }
                    let v = self.expr(value)?;
                    self.env.insert(target.clone(), v);
                }
                Stmt::Tilde { lhs, dist, span } => self.tilde(lhs, dist, *span)?,
                Stmt::DotTilde { lhs, dist, span } => self.dot_tilde(lhs, dist, *span)?,
                Stmt::If { cond, body, .. } => {
                    match self.expr(cond)? {
                        Val::Bool(true) => {
                            if let Flow::Halt = self.block(body, id + 1)? {
                                return Ok(Flow::Halt);
                            }
                        }
                        Val::Bool(false) => {}
                        other => {
                            return Err(eval_err(
                                format!("condition must be a bool, found {}", other.describe()),
                                cond.span(),
                            ))
                        }
                    }
                    if self.instr.is_some() {
                        id += count_statements(body);
                    }
                }
                Stmt::Reject { .. } => {
                    self.trace.reject();
                    return Ok(Flow::Halt);
                }
            }
            id += 1;
        }
        Ok(Flow::Next)
    }

    // -- expressions ------------------------------------------------------

    fn tape_ref(&self) -> Option<&Tape> {
        self.tape.as_deref()
    }

    fn tape(&mut self) -> &mut Tape {
        self.tape.as_deref_mut().expect("tape mode")
    }

    fn node_of(&mut self, v: &Val) -> NodeId {
        let (buf, shape) = match v {
            Val::Node(id, _) => return *id,
            Val::Real(x) => (Buf::Owned(vec![*x]), Shape::Scalar),
            Val::Int(i) => (Buf::Owned(vec![*i as f64]), Shape::Scalar),
            Val::RVec(a) => (Buf::Shared(a.clone()), Shape::Vector(a.len())),
            Val::IVec(a) => (Buf::Owned(a.iter().map(|&i| i as f64).collect()), Shape::Vector(a.len())),
            Val::Mat(m) => (Buf::Matrix(m.clone()), Shape::Matrix(m.rows(), m.cols())),
            Val::Bool(_) | Val::Missing => unreachable!("non-numeric value on tape"),
        };
        self.tape().constant(buf, shape)
    }

    fn record(&mut self, op: Op, value: Vec<f64>, shape: Shape) -> Val {
        let id = self.tape().push(op, Buf::Owned(value), shape);
        Val::Node(id, shape)
    }

    fn numeric<'v>(&'v self, v: &'v Val, span: Span) -> Result<(Shape, Cow<'v, [f64]>), EvalError> {
        match (v.shape(), slice(self.tape_ref(), v)) {
            (Some(s), Some(data)) => Ok((s, data)),
            _ => Err(eval_err(format!("expected a number or array, found {}", v.describe()), span)),
        }
    }

    fn scalar(&self, v: &Val, span: Span) -> Result<f64, EvalError> {
        match v {
            Val::Real(x) => Ok(*x),
            Val::Int(i) => Ok(*i as f64),
            Val::Node(id, Shape::Scalar) => Ok(self.tape_ref().expect("tape").value(*id)[0]),
            other => Err(eval_err(format!("expected a scalar, found {}", other.describe()), span)),
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<Val, EvalError> {
        match e {
            Expr::Number { value, .. } => Ok(match value {
                Number::Int(i) => Val::Int(*i),
                Number::Real(x) => Val::Real(*x),
            }),
            Expr::Missing { .. } => Ok(Val::Missing),
            Expr::Ident { name, span } => self
                .env
                .get(name)
                .cloned()
                .ok_or_else(|| eval_err(format!("undefined identifier `{name}`"), *span)),
            Expr::Array { elems, span } => {
                let vals = elems.iter().map(|e| self.expr(e)).collect::<Result<Vec<_>, _>>()?;
                self.array(vals, *span)
            }
            Expr::Index { base, indices, span } => {
                let b = self.expr(base)?;
                let idx = indices.iter().map(|e| self.expr(e)).collect::<Result<Vec<_>, _>>()?;
                self.index(b, &idx, *span)
            }
            Expr::Transpose { base, span } => {
                let b = self.expr(base)?;
                self.transpose(b, *span)
            }
            Expr::Unary { expr, span, .. } => {
                let v = self.expr(expr)?;
                self.unary(Unary::Neg, v, *span)
            }
            Expr::Binary { op, lhs, rhs, span } => {
                let a = self.expr(lhs)?;
                let b = self.expr(rhs)?;
                self.binary(*op, a, b, *span)
            }
            Expr::Call { name, args, span } | Expr::BroadcastCall { name, args, span } => {
                let broadcast = matches!(e, Expr::BroadcastCall { .. });
                let Some(b) = Builtin::from_name(name) else {
                    return Err(eval_err(format!("`{name}` is not a function"), *span));
                };
                if broadcast && !b.is_elementwise() {
                    return Err(eval_err(format!("`{name}` cannot be broadcast"), *span));
                }
                let vals = args.iter().map(|e| self.expr(e)).collect::<Result<Vec<_>, _>>()?;
                self.builtin(b, vals, *span)
            }
        }
    }

    fn array(&mut self, vals: Vec<Val>, span: Span) -> Result<Val, EvalError> {
        if vals.iter().all(|v| matches!(v, Val::Int(_))) {
            return Ok(Val::IVec(Arc::new(
                vals.iter()
                    .map(|v| if let Val::Int(i) = v { *i } else { unreachable!() })
                    .collect(),
            )));
        }
        let data = vals.iter().map(|v| self.scalar(v, span)).collect::<Result<Vec<f64>, _>>()?;
        if vals.iter().any(Val::is_node) {
            let ids = vals.iter().map(|v| self.node_of(v)).collect();
            let n = data.len();
            return Ok(self.record(Op::Stack(ids), data, Shape::Vector(n)));
        }
        Ok(Val::RVec(Arc::new(data)))
    }

    fn int_indices(&self, v: &Val, span: Span) -> Result<(Vec<usize>, bool), EvalError> {
        let conv = |i: i64| {
            usize::try_from(i)
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| eval_err(format!("index {i} is not positive"), span))
        };
        match v {
            Val::Int(i) => Ok((vec![conv(*i)?], true)),
            Val::IVec(is) => Ok((is.iter().map(|&i| conv(i)).collect::<Result<_, _>>()?, false)),
            other => Err(eval_err(format!("indices must be integers, found {}", other.describe()), span)),
        }
    }

    fn index(&mut self, base: Val, idx: &[Val], span: Span) -> Result<Val, EvalError> {
        let shape = base
            .shape()
            .ok_or_else(|| eval_err(format!("cannot index {}", base.describe()), span))?;
        let (flat, scalar) = match (shape, idx) {
            (Shape::Vector(n), [i]) => {
                let (is, scalar) = self.int_indices(i, span)?;
                if let Some(bad) = is.iter().find(|&&k| k > n) {
                    return Err(eval_err(format!("index {bad} out of bounds for length {n}"), span));
                }
                (is.into_iter().map(|k| k - 1).collect::<Vec<_>>(), scalar)
            }
            (Shape::Matrix(r, c), [i, j]) => {
                let ((i, si), (j, sj)) = (self.int_indices(i, span)?, self.int_indices(j, span)?);
                if !(si && sj) {
                    return Err(eval_err("matrix indexing takes two integers", span));
                }
                if i[0] > r || j[0] > c {
                    return Err(eval_err(format!("index [{}, {}] out of bounds for {r}x{c}", i[0], j[0]), span));
                }
                (vec![(i[0] - 1) * c + j[0] - 1], true)
            }
            _ => return Err(eval_err(format!("cannot index a {shape} with {} indices", idx.len()), span)),
        };
        let out_shape = if scalar { Shape::Scalar } else { Shape::Vector(flat.len()) };
        Ok(match &base {
            Val::IVec(v) if scalar => Val::Int(v[flat[0]]),
            Val::IVec(v) => Val::IVec(Arc::new(flat.iter().map(|&k| v[k]).collect())),
            Val::Node(id, _) => {
                let data: Vec<f64> = {
                    let src = self.tape_ref().expect("tape").value(*id);
                    flat.iter().map(|&k| src[k]).collect()
                };
                let id = *id;
                self.record(Op::Gather(id, flat), data, out_shape)
            }
            other => {
                let src = slice(None, other).expect("numeric");
                Val::from_shape(out_shape, flat.iter().map(|&k| src[k]).collect())
            }
        })
    }

    fn transpose(&mut self, v: Val, span: Span) -> Result<Val, EvalError> {
        Ok(match v {
            Val::Real(_) | Val::Int(_) => v,
            Val::RVec(a) => Val::Mat(Arc::new(Matrix::new(1, a.len(), a.to_vec()).expect("row"))),
            Val::IVec(a) => Val::Mat(Arc::new(
                Matrix::new(1, a.len(), a.iter().map(|&i| i as f64).collect()).expect("row"),
            )),
            Val::Mat(m) => Val::Mat(Arc::new(m.transpose())),
            Val::Node(id, shape) => {
                let data = match shape {
                    Shape::Matrix(r, c) => numeric::transpose(r, c, self.tape_ref().expect("tape").value(id)),
                    _ => self.tape_ref().expect("tape").value(id).to_vec(),
                };
                self.record(Op::Transpose(id), data, numeric::transpose_shape(shape))
            }
            other => return Err(eval_err(format!("cannot transpose {}", other.describe()), span)),
        })
    }

    fn unary(&mut self, f: Unary, v: Val, span: Span) -> Result<Val, EvalError> {
        match (&v, f) {
            (Val::Int(i), Unary::Neg) => {
                return i
                    .checked_neg()
                    .map(Val::Int)
                    .ok_or_else(|| eval_err("integer overflow", span))
            }
            (Val::Real(x), _) => return numeric::unary_scalar(f, *x).map(Val::Real).map_err(|m| domain_err(m, span)),
            _ => {}
        }
        let (shape, data) = self.numeric(&v, span)?;
        let out = numeric::unary_forward(f, &data).map_err(|m| domain_err(m, span))?;
        if let Val::Node(id, _) = v {
            return Ok(self.record(Op::Unary(f, id), out, shape));
        }
        Ok(Val::from_shape(shape, out))
    }

    fn binary(&mut self, op: BinOp, a: Val, b: Val, span: Span) -> Result<Val, EvalError> {
        if op.is_comparison() {
            let (x, y) = (self.scalar(&a, span)?, self.scalar(&b, span)?);
            return Ok(Val::Bool(match op {
                BinOp::Lt => x < y,
                BinOp::Gt => x > y,
                BinOp::Le => x <= y,
                BinOp::Ge => x >= y,
                _ => x == y,
            }));
        }
        let arith = match op {
            BinOp::Add => Arith::Add,
            BinOp::Sub => Arith::Sub,
            BinOp::Mul => Arith::Mul,
            BinOp::Div => Arith::Div,
            _ => Arith::Pow,
        };
        match (&a, &b) {
            (Val::Int(x), Val::Int(y)) if matches!(arith, Arith::Add | Arith::Sub | Arith::Mul) => {
                let r = match arith {
                    Arith::Add => x.checked_add(*y),
                    Arith::Sub => x.checked_sub(*y),
                    _ => x.checked_mul(*y),
                };
                return r.map(Val::Int).ok_or_else(|| eval_err("integer overflow", span));
            }
            (Val::Real(_) | Val::Int(_), Val::Real(_) | Val::Int(_)) => {
                let (x, y) = (self.scalar(&a, span)?, self.scalar(&b, span)?);
                return Ok(Val::Real(numeric::arith(arith, x, y)));
            }
            _ => {}
        }
        let tracked = a.is_node() || b.is_node();
        let (sa, da) = self.numeric(&a, span)?;
        let (sb, db) = self.numeric(&b, span)?;
        if let (Arith::Mul, Shape::Matrix(rows, cols), Shape::Vector(n)) = (arith, sa, sb) {
            if cols != n {
                return Err(eval_err(format!("cannot multiply a {sa} by a {sb}"), span));
            }
            let out = numeric::matvec(rows, cols, &da, &db);
            if tracked {
                let (na, nb) = (self.node_of(&a), self.node_of(&b));
                return Ok(self.record(Op::MatVec(na, nb), out, Shape::Vector(rows)));
            }
            return Ok(Val::RVec(Arc::new(out)));
        }
        let shape = numeric::elementwise_shape(arith, sa, sb).map_err(|m| eval_err(m, span))?;
        let out = numeric::binary_forward(arith, &da, &db, shape.len());
        if tracked {
            let (na, nb) = (self.node_of(&a), self.node_of(&b));
            return Ok(self.record(Op::Binary(arith, na, nb), out, shape));
        }
        Ok(Val::from_shape(shape, out))
    }

    fn builtin(&mut self, b: Builtin, mut args: Vec<Val>, span: Span) -> Result<Val, EvalError> {
        let (lo, hi) = b.arity();
        if args.len() < lo || args.len() > hi {
            return Err(eval_err(format!("`{}` takes {lo}..={hi} argument(s)", b.name()), span));
        }
        let arg = args.remove(0);
        let count = |v: &Val| match v {
            Val::Int(n) if *n >= 0 => Ok(*n as usize),
            other => Err(eval_err(
                format!("`{}` needs a non-negative integer, found {}", b.name(), other.describe()),
                span,
            )),
        };
        match b {
            Builtin::Logistic => self.unary(Unary::Logistic, arg, span),
            Builtin::Exp => self.unary(Unary::Exp, arg, span),
            Builtin::Log => self.unary(Unary::Log, arg, span),
            Builtin::Sqrt => self.unary(Unary::Sqrt, arg, span),
            Builtin::Zeros => Ok(Val::RVec(Arc::new(vec![0.0; count(&arg)?]))),
            Builtin::Ones => Ok(Val::RVec(Arc::new(vec![1.0; count(&arg)?]))),
            Builtin::Sum => {
                if let Val::Int(i) = arg {
                    return Ok(Val::Int(i));
                }
                if let Val::IVec(v) = &arg {
                    return v
                        .iter()
                        .try_fold(0i64, |s, &x| s.checked_add(x))
                        .map(Val::Int)
                        .ok_or_else(|| eval_err("integer overflow", span));
                }
                let (_, data) = self.numeric(&arg, span)?;
                let mut s = 0.0;
                for x in data.iter() {
                    s += x;
                }
                if let Val::Node(id, _) = arg {
                    return Ok(self.record(Op::Sum(id), vec![s], Shape::Scalar));
                }
                Ok(Val::Real(s))
            }
            Builtin::Size => {
                let shape = arg
                    .shape()
                    .ok_or_else(|| eval_err(format!("`size` of {}", arg.describe()), span))?;
                let dims = match shape {
                    Shape::Scalar => return Err(eval_err("`size` of a scalar", span)),
                    Shape::Vector(n) => [n, 1],
                    Shape::Matrix(r, c) => [r, c],
                };
                let d = match args.first() {
                    None if matches!(shape, Shape::Vector(_)) => dims[0],
                    None => return Err(eval_err("`size` of a matrix needs a dimension", span)),
                    Some(Val::Int(1)) => dims[0],
                    Some(Val::Int(2)) => dims[1],
                    Some(other) => return Err(eval_err(format!("bad dimension {}", other.describe()), span)),
                };
                Ok(Val::Int(d as i64))
            }
        }
    }

    // -- tilde statements -------------------------------------------------

    fn dist_args(&mut self, dist: &Expr) -> Result<(Family, bool, Vec<Val>), EvalError> {
        let (name, args, broadcast) = match dist {
            Expr::Call { name, args, .. } => (name, args, false),
            Expr::BroadcastCall { name, args, .. } => (name, args, true),
            other => return Err(eval_err("tilde right-hand side must be a distribution call", other.span())),
        };
        let family = Family::from_name(name)
            .ok_or_else(|| eval_err(format!("`{name}` is not a distribution"), dist.span()))?;
        if args.len() != family.arity() {
            return Err(eval_err(format!("{name} takes {} argument(s)", family.arity()), dist.span()));
        }
        let vals = args.iter().map(|e| self.expr(e)).collect::<Result<Vec<_>, _>>()?;
        for (v, e) in vals.iter().zip(args) {
            match v.shape() {
                None => return Err(eval_err(format!("{name} parameter is {}", v.describe()), e.span())),
                Some(Shape::Matrix(..)) => {
                    return Err(eval_err(format!("{name} parameter cannot be a matrix"), e.span()))
                }
                Some(Shape::Vector(_)) if !broadcast && !family.is_multivariate() => {
                    return Err(eval_err(
                        format!("{name} takes scalar parameters; broadcast with `{name}.(...)` and `.~`"),
                        e.span(),
                    ))
                }
                _ => {}
            }
        }
        if family == Family::MvNormal && vals[1].shape() != Some(Shape::Scalar) {
            return Err(eval_err("MvNormal standard deviation must be a scalar", dist.span()));
        }
        if matches!(family, Family::Categorical | Family::Dirichlet) && !matches!(vals[0].shape(), Some(Shape::Vector(_))) {
            return Err(eval_err(format!("{name} takes a vector parameter"), dist.span()));
        }
        Ok((family, broadcast, vals))
    }

    fn param_slices<'v>(tape: Option<&'v Tape>, args: &'v [Val]) -> Vec<Cow<'v, [f64]>> {
        args.iter().map(|v| slice(tape, v).expect("validated numeric")).collect()
    }

    /// Records the density of `x` as a logp term with `weight`.
    fn density_term(&mut self, family: Family, x: &Val, args: &[Val], weight: f64, span: Span) -> Result<(), EvalError> {
        let lp = {
            let tape = self.tape_ref();
            let xs = slice(tape, x).expect("numeric");
            let ps = Self::param_slices(tape, args);
            let refs: Vec<&[f64]> = ps.iter().map(|c| &c[..]).collect();
            numeric::density(family, &xs, &refs)
        };
        self.trace
            .acc_logp(if weight == 1.0 { lp } else { weight * lp })
            .map_err(trace_err(span))?;
        if x.is_node() || args.iter().any(Val::is_node) {
            let xn = self.node_of(x);
            let params = args.iter().map(|a| self.node_of(a)).collect();
            let id = self.tape().push(
                Op::Density { family, x: xn, params },
                Buf::Owned(vec![lp]),
                Shape::Scalar,
            );
            self.tape().add_term(id, weight);
        }
        Ok(())
    }

    fn check_params(&self, family: Family, args: &[Val], n: usize, span: Span) -> Result<(), EvalError> {
        let ps = Self::param_slices(self.tape_ref(), args);
        let refs: Vec<&[f64]> = ps.iter().map(|c| &c[..]).collect();
        numeric::check_params(family, &refs, n).map_err(|e| domain_err(e.to_string(), span))
    }

    fn observation(&self, name: &str, index: &[usize], span: Span) -> Result<Val, EvalError> {
        let data = self.env.get(name).cloned().expect("observed symbols are bound");
        if index.is_empty() {
            return Ok(data);
        }
        let ints: Vec<Val> = index.iter().map(|&i| Val::Int(i as i64)).collect();
        // observed data is never on the tape, so indexing needs no recording
        match data {
            Val::RVec(v) if index.len() == 1 => v
                .get(index[0] - 1)
                .map(|x| Val::Real(*x))
                .ok_or_else(|| eval_err(format!("index {} out of bounds", index[0]), span)),
            Val::IVec(v) if index.len() == 1 => v
                .get(index[0] - 1)
                .map(|x| Val::Int(*x))
                .ok_or_else(|| eval_err(format!("index {} out of bounds", index[0]), span)),
            Val::Mat(m) if index.len() == 2 => m
                .get(index[0], index[1])
                .map(Val::Real)
                .ok_or_else(|| eval_err(format!("index {ints:?} out of bounds"), span)),
            other => Err(eval_err(format!("cannot index {} with {} indices", other.describe(), index.len()), span)),
        }
    }

    fn tilde(&mut self, lhs: &LValue, dist: &Expr, span: Span) -> Result<(), EvalError> {
        let (family, _, args) = self.dist_args(dist)?;
        let mut index = Vec::with_capacity(lhs.indices.len());
        for e in &lhs.indices {
            let v = self.expr(e)?;
            match self.int_indices(&v, e.span())? {
                (is, true) => index.push(is[0]),
                _ => return Err(eval_err("left-hand side indices must be integers", e.span())),
            }
        }
        if self.model.is_observed(&lhs.name) {
            let x = self.observation(&lhs.name, &index, span)?;
            let vector_valued = matches!(family, Family::MvNormal | Family::Dirichlet);
            let n = match (x.shape(), vector_valued) {
                (Some(Shape::Scalar), false) => 1,
                (Some(Shape::Vector(n)), true) => n,
                (Some(Shape::Matrix(r, c)), true) if r == 1 || c == 1 => r * c,
                _ => {
                    return Err(eval_err(
                        format!("observation {} does not fit {family}", x.describe()),
                        lhs.span,
                    ))
                }
            };
            self.check_params(family, &args, n, dist.span())?;
            if let Some(w) = self.ctx.observe_weight() {
                self.density_term(family, &x, &args, w, span)?;
            }
            return Ok(());
        }
        self.assume(lhs, &index, family, &args, dist.span(), span)
    }

    fn fixed_insert(&mut self, vn: &VarName, symbol: &str, d: &Distribution, span: Span) -> Result<(), EvalError> {
        let Some(fixed) = self.fixed else {
            return Ok(());
        };
        if self.trace.contains(vn) {
            return Ok(());
        }
        let value = fixed
            .get(symbol)
            .ok_or_else(|| eval_err(format!("parameter `{vn}` has no bound value"), span))?;
        let x = fixed_variate(value, vn, d).map_err(|m| eval_err(m, span))?;
        self.trace.insert(vn.clone(), d.clone(), x).map_err(trace_err(span))
    }

    fn assume(
        &mut self,
        lhs: &LValue,
        index: &[usize],
        family: Family,
        args: &[Val],
        dspan: Span,
        span: Span,
    ) -> Result<(), EvalError> {
        let vn = if index.is_empty() {
            VarName::symbol_only(lhs.name.as_str())
        } else {
            VarName::symbol_only(lhs.name.as_str()).child(index)
        };
        let dim = self.env.get(&lhs.name).and_then(|v| match v.shape() {
            Some(Shape::Vector(n)) if index.is_empty() => Some(n),
            _ => None,
        });
        let d = {
            let ps = Self::param_slices(self.tape_ref(), args);
            let refs: Vec<&[f64]> = ps.iter().map(|c| &c[..]).collect();
            Distribution::from_params(family, &refs, dim).map_err(|e| domain_err(e.to_string(), dspan))?
        };
        self.fixed_insert(&vn, &lhs.name, &d, span)?;
        let taping = self.tape.is_some();
        let flat = if taping { self.trace.flat_range(&vn) } else { None };
        let stored = self
            .trace
            .revisit(&vn, d.clone())
            .map_err(trace_err(span))?
            .map(|slot| (slot.value.as_slice().to_vec(), matches!(slot.value, SlotValue::Int(_)), slot.value.to_variate(), slot.bijector));
        let (x, jac): (Val, Option<(f64, Option<NodeId>)>) = match stored {
            None => {
                let draw = d.sample(self.rng);
                self.trace.insert(vn.clone(), d.clone(), draw.clone()).map_err(trace_err(span))?;
                (Val::from_variate(draw), None)
            }
            Some((_, true, variate, _)) => {
                if taping {
                    return Err(trace_err(span)(TraceError::NotDifferentiable(vn)));
                }
                (Val::from_variate(variate), None)
            }
            Some((y, false, variate, bij)) => {
                let shape = if d.is_vector_valued() { Shape::Vector(y.len()) } else { Shape::Scalar };
                let input = if taping {
                    let range = flat.ok_or_else(|| eval_err(format!("{vn} has no gradient slot"), span))?;
                    Some(self.tape().input(range.start, y.clone(), shape))
                } else {
                    None
                };
                match bij {
                    None | Some(Bijector::Identity) => {
                        let jac = bij.map(|_| (0.0, None));
                        let x = match input {
                            Some(id) => Val::Node(id, shape),
                            None => Val::from_variate(variate),
                        };
                        (x, jac)
                    }
                    Some(b) => {
                        let xs = b.inverse(&y);
                        let j = b.log_abs_det_jacobian_inverse(&y);
                        let xshape = if d.is_vector_valued() { Shape::Vector(xs.len()) } else { Shape::Scalar };
                        match input {
                            Some(id) => {
                                let xn = self.tape().push(Op::BijInverse(b, id), Buf::Owned(xs), xshape);
                                let jn = self.tape().push(Op::LogJac(b, id), Buf::Owned(vec![j]), Shape::Scalar);
                                (Val::Node(xn, xshape), Some((j, Some(jn))))
                            }
                            None => (Val::from_shape(xshape, xs), Some((j, None))),
                        }
                    }
                }
            }
        };
        if self.ctx.accumulates_assume() {
            self.density_term(family, &x, args, 1.0, span)?;
            if let Some((j, node)) = jac {
                self.trace.acc_logp(j).map_err(trace_err(span))?;
                if let Some(n) = node {
                    self.tape().add_term(n, 1.0);
                }
            }
        }
        self.bind(&lhs.name, index, x, span)
    }

    fn bind(&mut self, name: &str, index: &[usize], x: Val, span: Span) -> Result<(), EvalError> {
        if index.is_empty() {
            self.env.insert(name.to_string(), x);
            return Ok(());
        }
        let Some(current) = self.env.get(name).cloned() else {
            return Ok(());
        };
        let at = match (current.shape(), index) {
            (Some(Shape::Vector(n)), [i]) if *i <= n => i - 1,
            (Some(Shape::Matrix(r, c)), [i, j]) if *i <= r && *j <= c => (i - 1) * c + j - 1,
            _ => return Ok(()),
        };
        let updated = match (current, x) {
            (Val::RVec(mut v), Val::Real(x)) => {
                Arc::make_mut(&mut v)[at] = x;
                Val::RVec(v)
            }
            (Val::IVec(mut v), Val::Int(x)) => {
                Arc::make_mut(&mut v)[at] = x;
                Val::IVec(v)
            }
            (Val::Mat(mut m), Val::Real(x)) => {
                Arc::make_mut(&mut m).data[at] = x;
                Val::Mat(m)
            }
            (base, value) if self.tape.is_some() => {
                let shape = base.shape().expect("numeric");
                let mut data = slice(self.tape_ref(), &base).expect("numeric").into_owned();
                data[at] = self.scalar(&value, span)?;
                let (b, v) = (self.node_of(&base), self.node_of(&value));
                self.record(Op::SetIndex { base: b, value: v, at }, data, shape)
            }
            (base, value) => {
                return Err(eval_err(
                    format!("cannot store {} into {}", value.describe(), base.describe()),
                    span,
                ))
            }
        };
        self.env.insert(name.to_string(), updated);
        Ok(())
    }

    fn dot_tilde(&mut self, lhs: &LValue, dist: &Expr, span: Span) -> Result<(), EvalError> {
        let (family, _, args) = self.dist_args(dist)?;
        if family.is_multivariate() {
            return Err(eval_err(format!("`.~` needs a univariate family, found {family}"), dist.span()));
        }
        let observed = self.model.is_observed(&lhs.name);
        let lhs_len = match self.env.get(&lhs.name).map(|v| (v.shape(), v)) {
            Some((Some(Shape::Vector(n)), _)) => Some(n),
            Some((Some(Shape::Matrix(r, c)), _)) if observed && (r == 1 || c == 1) => Some(r * c),
            Some((_, v)) if observed => {
                return Err(eval_err(format!("`.~` needs a vector, found {}", v.describe()), lhs.span))
            }
            _ => None,
        };
        let arg_len = args.iter().find_map(|v| match v.shape() {
            Some(Shape::Vector(n)) => Some(n),
            _ => None,
        });
        let n = lhs_len
            .or(arg_len)
            .ok_or_else(|| eval_err(format!("cannot infer the length of `{}`", lhs.name), lhs.span))?;
        for v in &args {
            if let Some(Shape::Vector(k)) = v.shape() {
                if k != n {
                    return Err(eval_err(
                        format!("broadcast length mismatch: `{}` has {n} elements, parameter has {k}", lhs.name),
                        dist.span(),
                    ));
                }
            }
        }
        self.check_params(family, &args, n, dist.span())?;
        if observed {
            if let Some(w) = self.ctx.observe_weight() {
                let x = self.env[&lhs.name].clone();
                self.density_term(family, &x, &args, w, span)?;
            }
            return Ok(());
        }
        if !self.assume_dense(&lhs.name, n, family, &args, span)? {
            self.assume_elements(&lhs.name, n, family, &args, span)?;
        }
        Ok(())
    }

    /// Typed fast path over a contiguous `sym[1..=n]` run. Returns `false`
    /// when the trace has no such run.
    fn assume_dense(&mut self, sym: &str, n: usize, family: Family, args: &[Val], span: Span) -> Result<bool, EvalError> {
        if self.fixed.is_some() || n == 0 {
            return Ok(false);
        }
        let taping = self.tape.is_some();
        let tape = self.tape.as_deref();
        let ps = Self::param_slices(tape, args);
        let Some(dense) = self.trace.dense(sym, n) else {
            return Ok(false);
        };
        let linked = dense.linked[0];
        if dense.linked.iter().any(|&l| l != linked) || (taping && dense.flat_start.is_none()) {
            return Ok(false);
        }
        let bij = if linked { bijector_of(family) } else { None };
        if linked {
            let stored = dense.dists[0].bijector().ok();
            if bij.is_none() || stored != bij {
                return Err(trace_err(span)(TraceError::State {
                    name: VarName::indexed(sym, 1),
                    message: format!("distribution changed to {family} while linked"),
                }));
            }
        }
        for (i, d) in dense.dists.iter_mut().enumerate() {
            *d = Distribution::from_scalar_params(family, params_at(&ps, i));
        }
        let y = dense.values;
        let (xs, jac) = match bij {
            Some(b) if b != Bijector::Identity => (b.inverse(y), Some(b.log_abs_det_jacobian_inverse(y))),
            Some(b) => (y.to_vec(), Some(b.log_abs_det_jacobian_inverse(y))),
            None => (y.to_vec(), None),
        };
        let y = taping.then(|| y.to_vec());
        let flat_start = dense.flat_start;
        drop(ps);
        self.finish_vector_assume(sym, family, args, xs, jac, y.map(|y| (y, flat_start.unwrap())), bij, span)?;
        Ok(true)
    }

    /// Accumulates and binds a vector parameter whose constrained values are
    /// `xs`. In tape mode `input` carries the unconstrained values and their
    /// position in θ.
    #[allow(clippy::too_many_arguments)]
    fn finish_vector_assume(
        &mut self,
        sym: &str,
        family: Family,
        args: &[Val],
        xs: Vec<f64>,
        jac: Option<f64>,
        input: Option<(Vec<f64>, usize)>,
        bij: Option<Bijector>,
        span: Span,
    ) -> Result<(), EvalError> {
        let n = xs.len();
        let shape = Shape::Vector(n);
        let (x, jac_node) = match input {
            Some((y, start)) => {
                let yn = self.tape().input(start, y, shape);
                match bij {
                    Some(b) if b != Bijector::Identity => {
                        let xn = self.tape().push(Op::BijInverse(b, yn), Buf::Owned(xs), shape);
                        let jn = self
                            .tape()
                            .push(Op::LogJac(b, yn), Buf::Owned(vec![jac.expect("linked")]), Shape::Scalar);
                        (Val::Node(xn, shape), Some(jn))
                    }
                    _ => (Val::Node(yn, shape), None),
                }
            }
            None => (Val::RVec(Arc::new(xs)), None),
        };
        if self.ctx.accumulates_assume() {
            self.density_term(family, &x, args, 1.0, span)?;
            if let Some(j) = jac {
                self.trace.acc_logp(j).map_err(trace_err(span))?;
                if let Some(node) = jac_node {
                    self.tape().add_term(node, 1.0);
                }
            }
        }
        self.env.insert(sym.to_string(), x);
        Ok(())
    }

    /// General path: one trace lookup per element.
    fn assume_elements(&mut self, sym: &str, n: usize, family: Family, args: &[Val], span: Span) -> Result<(), EvalError> {
        let taping = self.tape.is_some();
        let discrete = family.is_discrete();
        let mut ys = Vec::with_capacity(n);
        let mut linked = Vec::with_capacity(n);
        let mut starts = Vec::new();
        let mut bij = None;
        let mut sampled = false;
        for i in 0..n {
            let vn = VarName::indexed(sym, i + 1);
            let d = {
                let ps = Self::param_slices(self.tape_ref(), args);
                Distribution::from_scalar_params(family, params_at(&ps, i))
            };
            self.fixed_insert(&vn, sym, &d, span)?;
            if taping {
                let r = self
                    .trace
                    .flat_range(&vn)
                    .ok_or_else(|| eval_err(format!("{vn} has no gradient slot"), span))?;
                starts.push(r.start);
            }
            let slot = self.trace.revisit(&vn, d.clone()).map_err(trace_err(span))?;
            match slot {
                Some(slot) => {
                    if slot.linked {
                        bij = slot.bijector;
                    }
                    linked.push(slot.linked);
                    ys.push(match slot.value {
                        SlotValue::Real(y) => y,
                        SlotValue::Int(k) => k as f64,
                        SlotValue::Vector(_) => {
                            return Err(eval_err(format!("{vn} holds a vector, expected a scalar"), span))
                        }
                    });
                }
                None => {
                    let draw = d.sample(self.rng);
                    ys.push(draw.as_real().expect("scalar family"));
                    self.trace.insert(vn, d, draw).map_err(trace_err(span))?;
                    linked.push(false);
                    sampled = true;
                }
            }
        }
        if discrete {
            if taping {
                return Err(trace_err(span)(TraceError::NotDifferentiable(VarName::indexed(sym, 1))));
            }
            let x = Val::IVec(Arc::new(ys.iter().map(|&y| y as i64).collect()));
            if self.ctx.accumulates_assume() {
                self.density_term(family, &x, args, 1.0, span)?;
            }
            self.env.insert(sym.to_string(), x);
            return Ok(());
        }
        let all_linked = linked.iter().all(|&l| l);
        let any_linked = linked.iter().any(|&l| l);
        let (xs, jac) = if all_linked && n > 0 {
            let b = bij.expect("linked entries carry a bijector");
            (b.inverse(&ys), Some(b.log_abs_det_jacobian_inverse(&ys)))
        } else if any_linked {
            if taping {
                return Err(eval_err(format!("`{sym}` is only partly linked"), span));
            }
            let b = bij.expect("linked entries carry a bijector");
            let mut j = 0.0;
            let xs = ys
                .iter()
                .zip(&linked)
                .map(|(&y, &l)| {
                    if l {
                        j += b.logjac_scalar(y);
                        b.inverse_scalar(y)
                    } else {
                        y
                    }
                })
                .collect();
            (xs, Some(j))
        } else {
            (ys.clone(), None)
        };
        let input = if taping && !sampled {
            let contiguous = starts.windows(2).all(|w| w[1] == w[0] + 1);
            if !contiguous {
                return self.finish_scattered(sym, family, args, xs, jac, ys, starts, bij, span);
            }
            Some((ys, starts.first().copied().unwrap_or(0)))
        } else {
            None
        };
        self.finish_vector_assume(sym, family, args, xs, jac, input, if all_linked { bij } else { None }, span)
    }

    /// Tape path for elements whose θ positions are not contiguous.
    #[allow(clippy::too_many_arguments)]
    fn finish_scattered(
        &mut self,
        sym: &str,
        family: Family,
        args: &[Val],
        xs: Vec<f64>,
        jac: Option<f64>,
        ys: Vec<f64>,
        starts: Vec<usize>,
        bij: Option<Bijector>,
        span: Span,
    ) -> Result<(), EvalError> {
        let n = ys.len();
        let shape = Shape::Vector(n);
        let ids: Vec<NodeId> = ys
            .iter()
            .zip(&starts)
            .map(|(&y, &s)| self.tape().input(s, vec![y], Shape::Scalar))
            .collect();
        let yn = self.tape().push(Op::Stack(ids), Buf::Owned(ys), shape);
        let (x, jac_node) = match bij {
            Some(b) if b != Bijector::Identity && jac.is_some() => {
                let xn = self.tape().push(Op::BijInverse(b, yn), Buf::Owned(xs), shape);
                let jn = self
                    .tape()
                    .push(Op::LogJac(b, yn), Buf::Owned(vec![jac.unwrap()]), Shape::Scalar);
                (Val::Node(xn, shape), Some(jn))
            }
            _ => (Val::Node(yn, shape), None),
        };
        if self.ctx.accumulates_assume() {
            self.density_term(family, &x, args, 1.0, span)?;
            if let Some(j) = jac {
                self.trace.acc_logp(j).map_err(trace_err(span))?;
                if let Some(node) = jac_node {
                    self.tape().add_term(node, 1.0);
                }
            }
        }
        self.env.insert(sym.to_string(), x);
        Ok(())
    }
}
