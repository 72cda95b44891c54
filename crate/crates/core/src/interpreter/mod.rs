//! Model evaluation: binds data to a parsed model and executes its body
//! against a trace under a [`Context`].

mod data;
mod eval;
#[cfg(test)]
mod tests;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

pub use data::{parse_data_json, DataError};

use crate::addressing::{IndexAtom, VarName};
use crate::distributions::{Distribution, Variate};
use crate::dsl::{count_statements, ModelDecl, Span, Stmt};
use crate::trace::{TraceError, VarInfo};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Option<Matrix> {
        (rows * cols == data.len()).then_some(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// 1-based element access.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (i >= 1 && j >= 1 && i <= self.rows && j <= self.cols).then(|| self.data[(i - 1) * self.cols + j - 1])
    }

    pub fn transpose(&self) -> Matrix {
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: crate::numeric::transpose(self.rows, self.cols, &self.data),
        }
    }

    /// The data of a single-row or single-column matrix.
    pub fn as_vector(&self) -> Option<&[f64]> {
        (self.rows == 1 || self.cols == 1).then_some(&self.data[..])
    }
}

/// Data argument values and evaluation results.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(i64),
    Bool(bool),
    RealVector(Vec<f64>),
    IntVector(Vec<i64>),
    RealMatrix(Matrix),
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    /// Real-valued view of a vector, or of a single-row or single-column
    /// matrix.
    pub fn as_real_vector(&self) -> Option<Vec<f64>> {
        match self {
            Value::RealVector(v) => Some(v.clone()),
            Value::IntVector(v) => Some(v.iter().map(|&i| i as f64).collect()),
            Value::RealMatrix(m) => m.as_vector().map(<[f64]>::to_vec),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Real(_) => "real",
            Value::Int(_) => "integer",
            Value::Bool(_) => "bool",
            Value::RealVector(_) => "real vector",
            Value::IntVector(_) => "integer vector",
            Value::RealMatrix(_) => "matrix",
            Value::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseContext {
    Default,
    Likelihood,
    Prior,
}

/// Selects which tilde statements contribute to the log-probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Context {
    /// Log joint: priors and observations.
    Default,
    /// Observations only.
    Likelihood,
    /// Parameters only.
    Prior,
    /// `inner`, with observation terms scaled by `weight`.
    MiniBatch { inner: BaseContext, weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("minibatch weight must be positive and finite, got {0}")]
pub struct ContextError(pub f64);

impl Context {
    pub fn minibatch(inner: BaseContext, weight: f64) -> Result<Context, ContextError> {
        if weight.is_finite() && weight > 0.0 {
            Ok(Context::MiniBatch { inner, weight })
        } else {
            Err(ContextError(weight))
        }
    }

    fn base(self) -> BaseContext {
        match self {
            Context::Default => BaseContext::Default,
            Context::Likelihood => BaseContext::Likelihood,
            Context::Prior => BaseContext::Prior,
            Context::MiniBatch { inner, .. } => inner,
        }
    }

    /// Whether parameter (assume) terms are added.
    pub fn accumulates_assume(self) -> bool {
        self.base() != BaseContext::Likelihood
    }

    /// Weight applied to observation terms; `None` when they are skipped.
    pub fn observe_weight(self) -> Option<f64> {
        if self.base() == BaseContext::Prior {
            return None;
        }
        match self {
            Context::MiniBatch { weight, .. } => Some(weight),
            _ => Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("arguments for model `{model}` do not match its signature (missing: {missing:?}, unexpected: {extra:?})")]
pub struct InstantiateError {
    pub model: String,
    pub missing: Vec<String>,
    pub extra: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{span}: {message}")]
    Eval { message: String, span: Span },
    /// Invalid distribution parameters or function arguments computed at run
    /// time. Samplers treat this as a rejected state.
    #[error("{span}: model domain error: {message}")]
    ModelDomain { message: String, span: Span },
    #[error("{span}: {error}")]
    Trace { error: TraceError, span: Span },
}

impl EvalError {
    /// Errors that make the current state invalid rather than the model:
    /// bad run-time parameters or a NaN density from numeric overflow.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            EvalError::ModelDomain { .. }
                | EvalError::Trace {
                    error: TraceError::NanLogp,
                    ..
                }
        )
    }

    pub fn span(&self) -> Span {
        match self {
            EvalError::Eval { span, .. } | EvalError::ModelDomain { span, .. } | EvalError::Trace { span, .. } => {
                *span
            }
        }
    }
}

/// Per-statement execution counts, indexed by pre-order statement position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Instrumentation {
    pub executed: Vec<u64>,
}

impl Instrumentation {
    pub fn new(model: &Model) -> Self {
        Self {
            executed: vec![0; count_statements(&model.decl.body)],
        }
    }

    pub fn total(&self) -> u64 {
        self.executed.iter().sum()
    }

    /// Executions of statements positioned after the first `reject` that
    /// ran, or `None` when no `reject` ran.
    pub fn after_reject(&self, decl: &ModelDecl) -> Option<u64> {
        let mut ids = Vec::new();
        reject_ids(&decl.body, 0, &mut ids);
        let first = ids.into_iter().find(|&id| self.executed[id] > 0)?;
        Some(self.executed[first + 1..].iter().sum())
    }
}

fn reject_ids(body: &[Stmt], mut id: usize, out: &mut Vec<usize>) -> usize {
    for stmt in body {
        match stmt {
            Stmt::Reject { .. } => out.push(id),
            Stmt::If { body, .. } => id = reject_ids(body, id + 1, out) - 1,
            _ => {}
        }
        id += 1;
    }
    id
}

/// Optional evaluation inputs.
#[derive(Debug, Default)]
pub struct EvalOptions<'a> {
    /// Values for parameters absent from the trace, keyed by symbol. When
    /// set, a parameter that is neither in the trace nor listed here is an
    /// error rather than a fresh prior draw.
    pub fixed: Option<&'a HashMap<String, Value>>,
    pub instrumentation: Option<&'a mut Instrumentation>,
}

/// A model declaration with its arguments bound.
#[derive(Debug, Clone)]
pub struct Model {
    decl: Arc<ModelDecl>,
    args: Vec<(String, eval::Val)>,
    observed: BTreeSet<String>,
}

/// Binds `args` to the model's parameters. Tilde targets that are bound to
/// a non-missing value become observations; all others are parameters.
pub fn instantiate(decl: &ModelDecl, args: HashMap<String, Value>) -> Result<Model, InstantiateError> {
    let mut missing: Vec<String> = decl.params.iter().filter(|p| !args.contains_key(*p)).cloned().collect();
    let mut extra: Vec<String> = args.keys().filter(|k| !decl.params.contains(k)).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        missing.sort();
        extra.sort();
        return Err(InstantiateError {
            model: decl.name.clone(),
            missing,
            extra,
        });
    }
    let observed = decl
        .params
        .iter()
        .filter(|p| !args[*p].is_missing())
        .cloned()
        .collect();
    let args = decl
        .params
        .iter()
        .map(|p| (p.clone(), eval::Val::from_value(&args[p])))
        .collect();
    Ok(Model {
        decl: Arc::new(decl.clone()),
        args,
        observed,
    })
}

impl Model {
    pub fn decl(&self) -> &ModelDecl {
        &self.decl
    }

    pub fn name(&self) -> &str {
        &self.decl.name
    }

    /// Whether `symbol` is a data argument bound to a non-missing value.
    pub fn is_observed(&self, symbol: &str) -> bool {
        self.observed.contains(symbol)
    }

    /// Tilde targets that are sampled rather than observed.
    pub fn parameter_symbols(&self) -> Vec<String> {
        self.decl
            .tilde_symbols()
            .into_iter()
            .filter(|s| !self.is_observed(s))
            .collect()
    }

    pub fn data(&self, name: &str) -> Option<Value> {
        self.args.iter().find(|(n, _)| n == name).map(|(_, v)| v.to_value())
    }

    /// Executes the model body, returning the trace's final log-probability.
    pub fn evaluate<V, R>(&self, t: &mut V, ctx: Context, rng: &mut R) -> Result<f64, EvalError>
    where
        V: VarInfo + ?Sized,
        R: Rng + ?Sized,
    {
        eval::run(self, t, ctx, rng, EvalOptions::default(), None)
    }

    pub fn evaluate_with<V, R>(
        &self,
        t: &mut V,
        ctx: Context,
        rng: &mut R,
        opts: EvalOptions<'_>,
    ) -> Result<f64, EvalError>
    where
        V: VarInfo + ?Sized,
        R: Rng + ?Sized,
    {
        eval::run(self, t, ctx, rng, opts, None)
    }

    pub(crate) fn evaluate_on_tape<V, R>(
        &self,
        t: &mut V,
        ctx: Context,
        rng: &mut R,
        tape: &mut crate::autodiff::Tape,
    ) -> Result<f64, EvalError>
    where
        V: VarInfo + ?Sized,
        R: Rng + ?Sized,
    {
        eval::run(self, t, ctx, rng, EvalOptions::default(), Some(tape))
    }
}

fn trace_err(span: Span) -> impl Fn(TraceError) -> EvalError {
    move |error| EvalError::Trace { error, span }
}

/// Handles a parameter: reuses the stored value (inverse-linking it and
/// adding the log-Jacobian when linked) or draws a fresh one from `d`.
/// Returns the constrained value.
pub fn tilde_assume<V, R>(
    ctx: Context,
    t: &mut V,
    vn: &VarName,
    d: &Distribution,
    rng: &mut R,
) -> Result<Variate, TraceError>
where
    V: VarInfo + ?Sized,
    R: Rng + ?Sized,
{
    let stored = t.revisit(vn, d.clone())?.map(|slot| {
        let value = slot.value.to_variate();
        match (slot.bijector, value) {
            (Some(b), Variate::Real(y)) => {
                (Variate::Real(b.inverse(&[y])[0]), Some(b.log_abs_det_jacobian_inverse(&[y])))
            }
            (Some(b), Variate::Vector(y)) => (Variate::Vector(b.inverse(&y)), Some(b.log_abs_det_jacobian_inverse(&y))),
            (_, v) => (v, None),
        }
    });
    let (x, jac) = match stored {
        Some(pair) => pair,
        None => {
            let x = d.sample(rng);
            t.insert(vn.clone(), d.clone(), x.clone())?;
            (x, None)
        }
    };
    if ctx.accumulates_assume() {
        t.acc_logp(d.logpdf(&x)?)?;
        if let Some(j) = jac {
            t.acc_logp(j)?;
        }
    }
    Ok(x)
}

/// Adds the (weighted) log-density of an observed value.
pub fn tilde_observe<V>(ctx: Context, t: &mut V, d: &Distribution, x: &Variate) -> Result<(), TraceError>
where
    V: VarInfo + ?Sized,
{
    if let Some(w) = ctx.observe_weight() {
        let lp = d.logpdf(x)?;
        t.acc_logp(if w == 1.0 { lp } else { w * lp })?;
    }
    Ok(())
}

/// Converts a bound query value into a variate for `d`, or picks element
/// `path` out of it when the variable is an element of a larger array.
pub(crate) fn fixed_variate(value: &Value, vn: &VarName, d: &Distribution) -> Result<Variate, String> {
    let groups = vn.path().groups();
    let element = match groups {
        [] => value.clone(),
        [g] => {
            let idx: Vec<usize> = g
                .iter()
                .map(|a| match a {
                    IndexAtom::Int(i) => Ok(*i),
                    IndexAtom::All => Err(format!("cannot bind {vn} with a wildcard")),
                })
                .collect::<Result<_, _>>()?;
            let out_of_range = || format!("{vn} is out of range for the bound value");
            match (value, idx.as_slice()) {
                (Value::RealVector(v), [i]) => Value::Real(*v.get(i - 1).ok_or_else(out_of_range)?),
                (Value::IntVector(v), [i]) => Value::Int(*v.get(i - 1).ok_or_else(out_of_range)?),
                (Value::RealMatrix(m), [i]) if m.as_vector().is_some() => {
                    Value::Real(*m.as_vector().unwrap().get(i - 1).ok_or_else(out_of_range)?)
                }
                (Value::RealMatrix(m), [i, j]) => Value::Real(m.get(*i, *j).ok_or_else(out_of_range)?),
                _ => return Err(format!("cannot index a bound {} with {vn}", value.type_name())),
            }
        }
        _ => return Err(format!("cannot bind nested index {vn}")),
    };
    let mismatch = || format!("bound {} does not fit {} for {vn}", element.type_name(), d.family());
    if d.is_vector_valued() {
        let v = element.as_real_vector().ok_or_else(mismatch)?;
        if v.len() != d.dimension() {
            return Err(format!("{vn} needs {} elements, got {}", d.dimension(), v.len()));
        }
        return Ok(Variate::Vector(v));
    }
    match (&element, d.is_discrete()) {
        (Value::Int(i), true) => Ok(Variate::Int(*i)),
        (Value::Real(x), true) if x.fract() == 0.0 && x.abs() < 9e15 => Ok(Variate::Int(*x as i64)),
        (Value::Int(i), false) => Ok(Variate::Real(*i as f64)),
        (Value::Real(x), false) => Ok(Variate::Real(*x)),
        _ => Err(mismatch()),
    }
}
