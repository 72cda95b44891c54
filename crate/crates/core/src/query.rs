//! Probability queries of the form `lhs | rhs`.
//!
//! Each side is a comma-separated list of `name = literal` bindings. The
//! right-hand side names either a model (`model = linreg`) or a chain
//! (`chain = <handle or path>`), whose metadata names the model.
//!
//! ```text
//! X = [1.0, 2.0]', y = [2.0] | w = [0.5, 0.0], s = 1.0, model = linreg
//! ```

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::addressing::{IndexAtom, VarName};
use crate::chain::{Chain, ChainError};
use crate::corpus::CorpusModel;
use crate::dsl::ModelDecl;
use crate::inference::chain_rng;
use crate::interpreter::{instantiate, Context, EvalError, EvalOptions, InstantiateError, Matrix, Value};
use crate::trace::UntypedTrace;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("column {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("cannot classify query: {0}")]
    Classify(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("{0}")]
    Binding(String),
    #[error(transparent)]
    Instantiate(#[from] InstantiateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryExpr {
    pub lhs: Vec<(String, Value)>,
    /// Right-hand bindings other than `model` and `chain`.
    pub rhs: Vec<(String, Value)>,
    pub model: Option<String>,
    pub chain: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Prior,
    Likelihood,
    Joint,
    PosteriorPredictive,
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryKind::Prior => "prior",
            QueryKind::Likelihood => "likelihood",
            QueryKind::Joint => "joint",
            QueryKind::PosteriorPredictive => "posterior_predictive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryValue {
    pub kind: QueryKind,
    pub logp: f64,
}

// -- parsing --------------------------------------------------------------

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Parse {
            pos: self.pos + 1,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), QueryError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        self.skip_ws();
        let start = self.pos;
        if !self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
            return self.err("expected an identifier");
        }
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn path(&mut self) -> Result<String, QueryError> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| !c.is_whitespace() && c != ',') {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected a chain handle or path");
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn number(&mut self) -> Result<Value, QueryError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.pos += 1;
        }
        let mut real = false;
        while let Some(c) = self.peek() {
            match c {
                '0'..='9' => {}
                '.' => real = true,
                'e' | 'E' => {
                    real = true;
                    if matches!(self.chars.get(self.pos + 1), Some('-' | '+')) {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let parsed = if real {
            text.parse::<f64>().ok().filter(|x| x.is_finite()).map(Value::Real)
        } else {
            text.parse::<i64>().ok().map(Value::Int)
        };
        match parsed {
            Some(v) => Ok(v),
            None => {
                self.pos = start;
                self.err(format!("malformed number `{text}`"))
            }
        }
    }

    fn literal(&mut self) -> Result<Value, QueryError> {
        self.skip_ws();
        let value = match self.peek() {
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                if !self.eat(']') {
                    loop {
                        items.push(self.number()?);
                        if self.eat(']') {
                            break;
                        }
                        self.expect(',')?;
                    }
                }
                if items.iter().all(|v| matches!(v, Value::Int(_))) && !items.is_empty() {
                    Value::IntVector(items.iter().map(|v| if let Value::Int(i) = v { *i } else { 0 }).collect())
                } else {
                    Value::RealVector(
                        items
                            .iter()
                            .map(|v| match v {
                                Value::Int(i) => *i as f64,
                                Value::Real(x) => *x,
                                _ => unreachable!("numbers only"),
                            })
                            .collect(),
                    )
                }
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                let word = self.ident()?;
                if word != "missing" {
                    self.pos = start;
                    return self.err(format!("expected a literal, found `{word}`"));
                }
                return Ok(Value::Missing);
            }
            Some(_) => self.number()?,
            None => return self.err("expected a literal"),
        };
        if self.eat('\'') {
            return Ok(match value {
                Value::RealVector(v) => Value::RealMatrix(Matrix::new(1, v.len(), v).expect("row")),
                Value::IntVector(v) => {
                    let n = v.len();
                    Value::RealMatrix(Matrix::new(1, n, v.into_iter().map(|i| i as f64).collect()).expect("row"))
                }
                scalar => scalar,
            });
        }
        Ok(value)
    }
}

/// Parses `bindings | bindings`. Errors carry a 1-based column.
pub fn parse_query(s: &str) -> Result<QueryExpr, QueryError> {
    let mut p = Parser {
        chars: s.chars().collect(),
        pos: 0,
    };
    let mut q = QueryExpr {
        lhs: Vec::new(),
        rhs: Vec::new(),
        model: None,
        chain: None,
    };
    let mut seen = BTreeSet::new();
    for rhs in [false, true] {
        loop {
            let start = {
                p.skip_ws();
                p.pos
            };
            let name = p.ident()?;
            if !seen.insert(name.clone()) {
                p.pos = start;
                return p.err(format!("`{name}` is bound twice"));
            }
            p.expect('=')?;
            match name.as_str() {
                "model" | "chain" if !rhs => {
                    p.pos = start;
                    return p.err(format!("`{name}` belongs on the right of `|`"));
                }
                "model" => q.model = Some(p.ident()?),
                "chain" => q.chain = Some(p.path()?),
                _ => {
                    let v = p.literal()?;
                    if rhs { &mut q.rhs } else { &mut q.lhs }.push((name, v));
                }
            }
            if !p.eat(',') {
                break;
            }
        }
        if !rhs {
            p.expect('|')?;
        }
    }
    p.skip_ws();
    if p.peek().is_some() {
        return p.err("expected `,` or end of query");
    }
    match (&q.model, &q.chain) {
        (None, None) => p.err("the right-hand side needs `model = ...` or `chain = ...`"),
        (Some(_), Some(_)) => p.err("give either `model` or `chain`, not both"),
        _ => Ok(q),
    }
}

// -- classification -------------------------------------------------------

struct Roles {
    /// Arguments that appear on the left of a tilde.
    observables: BTreeSet<String>,
    /// Other arguments.
    covariates: BTreeSet<String>,
    /// Tilde targets that are not arguments.
    latent: BTreeSet<String>,
}

fn roles(decl: &ModelDecl) -> Roles {
    let tilde: BTreeSet<String> = decl.tilde_symbols().into_iter().collect();
    let args: BTreeSet<String> = decl.params.iter().cloned().collect();
    Roles {
        observables: args.intersection(&tilde).cloned().collect(),
        covariates: args.difference(&tilde).cloned().collect(),
        latent: tilde.difference(&args).cloned().collect(),
    }
}

fn names(b: &[(String, Value)]) -> BTreeSet<String> {
    b.iter().map(|(n, _)| n.clone()).collect()
}

fn list(s: &BTreeSet<String>) -> String {
    s.iter().cloned().collect::<Vec<_>>().join(", ")
}

pub fn classify(q: &QueryExpr, decl: &ModelDecl) -> Result<QueryKind, QueryError> {
    let r = roles(decl);
    let (lhs, rhs) = (names(&q.lhs), names(&q.rhs));
    let known = |n: &String| r.observables.contains(n) || r.covariates.contains(n) || r.latent.contains(n);
    let unknown: BTreeSet<String> = lhs.iter().chain(&rhs).filter(|n| !known(n)).cloned().collect();
    if !unknown.is_empty() {
        return Err(QueryError::Classify(format!(
            "unknown identifiers for model `{}`: {}",
            decl.name,
            list(&unknown)
        )));
    }
    let data: BTreeSet<String> = r.observables.union(&r.covariates).cloned().collect();
    if q.chain.is_some() {
        if !rhs.is_empty() {
            return Err(QueryError::Classify(format!(
                "a chain query conditions only on the chain, found: {}",
                list(&rhs)
            )));
        }
        if !lhs.is_subset(&data) {
            return Err(QueryError::Classify(format!(
                "a chain query binds data only, found: {}",
                list(&lhs.difference(&data).cloned().collect())
            )));
        }
        return Ok(QueryKind::PosteriorPredictive);
    }
    if rhs.is_empty() {
        if !lhs.is_empty() && lhs.is_subset(&r.latent) {
            return Ok(QueryKind::Prior);
        }
        let needed: BTreeSet<String> = r.observables.union(&r.latent).cloned().collect();
        if lhs.is_superset(&needed) {
            return Ok(QueryKind::Joint);
        }
        return Err(QueryError::Classify(format!(
            "the left-hand side lacks: {}",
            list(&needed.difference(&lhs).cloned().collect())
        )));
    }
    let missing_data: BTreeSet<String> = r.observables.difference(&lhs).cloned().collect();
    let missing_params: BTreeSet<String> = r.latent.difference(&rhs).cloned().collect();
    let misplaced: BTreeSet<String> = lhs.intersection(&r.latent).cloned().chain(rhs.intersection(&r.observables).cloned()).collect();
    if !misplaced.is_empty() {
        return Err(QueryError::Classify(format!("bindings on the wrong side: {}", list(&misplaced))));
    }
    if !missing_data.is_empty() {
        return Err(QueryError::Classify(format!("unbound observations: {}", list(&missing_data))));
    }
    if !missing_params.is_empty() {
        return Err(QueryError::Classify(format!("unbound parameters: {}", list(&missing_params))));
    }
    Ok(QueryKind::Likelihood)
}

// -- evaluation -----------------------------------------------------------

struct Entry {
    decl: ModelDecl,
    defaults: HashMap<String, Value>,
}

/// Models (with default arguments for unbound data) and named chains that
/// queries can refer to.
#[derive(Default)]
pub struct ModelRegistry {
    models: HashMap<String, Entry>,
    chains: HashMap<String, Chain>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The bundled corpus with small default datasets.
    pub fn with_corpus() -> Self {
        let mut r = Self::new();
        for m in CorpusModel::ALL {
            r.register(m.decl(), m.query_defaults());
        }
        r
    }

    pub fn register(&mut self, decl: ModelDecl, defaults: HashMap<String, Value>) {
        self.models.insert(decl.name.clone(), Entry { decl, defaults });
    }

    pub fn register_chain(&mut self, handle: impl Into<String>, chain: Chain) {
        self.chains.insert(handle.into(), chain);
    }

    pub fn decl(&self, name: &str) -> Option<&ModelDecl> {
        self.models.get(name).map(|e| &e.decl)
    }

    /// A registered chain, or else a chain file at `handle`.
    pub fn resolve_chain(&self, handle: &str) -> Result<Cow<'_, Chain>, QueryError> {
        match self.chains.get(handle) {
            Some(c) => Ok(Cow::Borrowed(c)),
            None => Ok(Cow::Owned(Chain::load_csv(Path::new(handle))?)),
        }
    }

    fn entry(&self, name: &str) -> Result<&Entry, QueryError> {
        self.models.get(name).ok_or_else(|| QueryError::UnknownModel(name.to_string()))
    }
}

/// Log density of the model with arguments from `bound` (falling back to
/// registry defaults) and parameters fixed from `fixed`.
fn fixed_logp(
    entry: &Entry,
    bound: &[(String, Value)],
    fixed: &HashMap<String, Value>,
    ctx: Context,
) -> Result<f64, QueryError> {
    let mut args = HashMap::new();
    for p in &entry.decl.params {
        let v = bound
            .iter()
            .find(|(n, _)| n == p)
            .map(|(_, v)| v)
            .or_else(|| entry.defaults.get(p))
            .ok_or_else(|| QueryError::Binding(format!("argument `{p}` has no value")))?;
        args.insert(p.clone(), v.clone());
    }
    let model = instantiate(&entry.decl, args)?;
    let opts = EvalOptions {
        fixed: Some(fixed),
        instrumentation: None,
    };
    Ok(model.evaluate_with(&mut UntypedTrace::new(), ctx, &mut chain_rng(0, 0), opts)?)
}

fn split_bindings(
    bindings: impl IntoIterator<Item = (String, Value)>,
    latent: &BTreeSet<String>,
) -> (Vec<(String, Value)>, HashMap<String, Value>) {
    let mut data = Vec::new();
    let mut fixed = HashMap::new();
    for (n, v) in bindings {
        if latent.contains(&n) {
            fixed.insert(n, v);
        } else {
            data.push((n, v));
        }
    }
    (data, fixed)
}

/// `log(mean(exp(ls)))`, shifted by the maximum so that very negative
/// values neither underflow nor lose precision.
pub fn log_mean_exp(ls: &[f64]) -> f64 {
    let m = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || ls.is_empty() {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return m;
    }
    let s: f64 = ls.iter().map(|l| (l - m).exp()).sum();
    m + (s.ln() - (ls.len() as f64).ln())
}

/// Groups chain columns such as `w[1], w[2], s` into per-symbol values.
struct ColumnMap {
    /// (symbol, element index) per column; index is 0-based.
    cols: Vec<(String, Option<usize>)>,
}

impl ColumnMap {
    fn new(names: &[String]) -> Result<Self, QueryError> {
        let cols = names
            .iter()
            .map(|n| {
                let vn = VarName::parse(n).map_err(|e| QueryError::Binding(format!("chain column `{n}`: {e}")))?;
                match vn.path().groups() {
                    [] => Ok((vn.symbol().to_string(), None)),
                    [g] => match g.as_slice() {
                        [IndexAtom::Int(i)] if *i >= 1 => Ok((vn.symbol().to_string(), Some(i - 1))),
                        _ => Err(QueryError::Binding(format!("unsupported chain column `{n}`"))),
                    },
                    _ => Err(QueryError::Binding(format!("unsupported chain column `{n}`"))),
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(ColumnMap { cols })
    }

    fn values(&self, row: &[f64]) -> HashMap<String, Value> {
        let mut out: HashMap<String, Value> = HashMap::new();
        for ((sym, idx), &x) in self.cols.iter().zip(row) {
            match idx {
                None => {
                    out.insert(sym.clone(), Value::Real(x));
                }
                Some(i) => {
                    let entry = out.entry(sym.clone()).or_insert_with(|| Value::RealVector(Vec::new()));
                    if let Value::RealVector(v) = entry {
                        if v.len() <= *i {
                            v.resize(i + 1, f64::NAN);
                        }
                        v[*i] = x;
                    }
                }
            }
        }
        out
    }
}

pub fn evaluate_query(q: &QueryExpr, registry: &ModelRegistry) -> Result<QueryValue, QueryError> {
    if let Some(handle) = &q.chain {
        let chain = registry.resolve_chain(handle)?;
        let entry = registry.entry(&chain.meta.model)?;
        let kind = classify(q, &entry.decl)?;
        let map = ColumnMap::new(chain.names())?;
        let ls = (0..chain.n_iters())
            .map(|i| fixed_logp(entry, &q.lhs, &map.values(chain.row(i)), Context::Likelihood))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(QueryValue {
            kind,
            logp: log_mean_exp(&ls),
        });
    }
    let entry = registry.entry(q.model.as_deref().expect("parser guarantees a model or chain"))?;
    let kind = classify(q, &entry.decl)?;
    let latent = roles(&entry.decl).latent;
    let all = q.lhs.iter().chain(&q.rhs).cloned();
    let (data, fixed) = split_bindings(all, &latent);
    let ctx = match kind {
        QueryKind::Prior => Context::Prior,
        QueryKind::Likelihood => Context::Likelihood,
        _ => Context::Default,
    };
    Ok(QueryValue {
        kind,
        logp: fixed_logp(entry, &data, &fixed, ctx)?,
    })
}

/// Parses and evaluates in one step.
pub fn query(s: &str, registry: &ModelRegistry) -> Result<QueryValue, QueryError> {
    evaluate_query(&parse_query(s)?, registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainMeta;
    use proptest::prelude::*;

    const LIKELIHOOD: &str = "X = [1.0, 2.0]', y = [2.0] | w = [0.5, 0.0], s = 1.0, model = linreg";
    const PRIOR: &str = "w = [1.0, 1.0]', s = 1.0 | model = linreg";
    const JOINT: &str = "X = [1.0, 2.0]', y = [2.0], w = [0.0, 0.0], s = 1.0 | model = linreg";

    fn row2(a: f64, b: f64) -> Value {
        Value::RealMatrix(Matrix::new(1, 2, vec![a, b]).unwrap())
    }

    #[test]
    fn parses_the_likelihood_query() {
        let q = parse_query(LIKELIHOOD).unwrap();
        assert_eq!(
            q.lhs,
            vec![
                ("X".to_string(), row2(1.0, 2.0)),
                ("y".to_string(), Value::RealVector(vec![2.0]))
            ]
        );
        assert_eq!(
            q.rhs,
            vec![
                ("w".to_string(), Value::RealVector(vec![0.5, 0.0])),
                ("s".to_string(), Value::Real(1.0))
            ]
        );
        assert_eq!(q.model.as_deref(), Some("linreg"));
    }

    #[test]
    fn parse_errors_are_positioned() {
        let e = parse_query("x = 1 x = 2 | model = m").unwrap_err();
        assert!(matches!(e, QueryError::Parse { pos: 7, .. }), "{e}");
        assert!(matches!(parse_query("x = 1, x = 2 | model = m"), Err(QueryError::Parse { pos: 8, .. })));
        assert!(matches!(parse_query("x = 1"), Err(QueryError::Parse { .. })));
        assert!(matches!(parse_query("x = [1, | model = m"), Err(QueryError::Parse { .. })));
        assert!(matches!(parse_query("x = 1 | s = 2"), Err(QueryError::Parse { .. })));
        assert!(matches!(parse_query("x = 1e | model = m"), Err(QueryError::Parse { pos: 5, .. })));
    }

    #[test]
    fn classification() {
        let decl = CorpusModel::Linreg.decl();
        let kind = |s: &str| classify(&parse_query(s).unwrap(), &decl);
        assert_eq!(kind(PRIOR).unwrap(), QueryKind::Prior);
        assert_eq!(kind(JOINT).unwrap(), QueryKind::Joint);
        assert_eq!(kind(LIKELIHOOD).unwrap(), QueryKind::Likelihood);
        assert!(matches!(kind("X = [1.0]', y = [2.0] | w = [0.0, 0.0], model = linreg"), Err(QueryError::Classify(_))));
        assert!(matches!(kind("q = 1 | model = linreg"), Err(QueryError::Classify(_))));
    }

    #[test]
    fn paper_queries_evaluate() {
        let reg = ModelRegistry::with_corpus();
        let l = query(LIKELIHOOD, &reg).unwrap();
        assert_eq!(l.kind, QueryKind::Likelihood);
        assert!((l.logp - -2.0439385332046727).abs() < 1e-10);
        let p = query(PRIOR, &reg).unwrap();
        assert!((p.logp - -3.8378770664093453).abs() < 1e-10);
        let p0 = query("w = [0, 0]', s = 1 | model = linreg", &reg).unwrap();
        assert!((p0.logp - -2.8378770664093453).abs() < 1e-10);
        let j = query(JOINT, &reg).unwrap();
        assert_eq!(j.kind, QueryKind::Joint);
        assert!((j.logp - -5.756815599614018).abs() < 1e-10);
    }

    #[test]
    fn unknown_model_and_strict_bindings() {
        let reg = ModelRegistry::with_corpus();
        assert!(matches!(query("w = 1 | model = nope", &reg), Err(QueryError::UnknownModel(_))));
        // a prior query that leaves a parameter unbound
        assert!(matches!(query("w = [0.0, 0.0] | model = linreg", &reg), Err(QueryError::Eval(_))));
        // dimension mismatch with the model's expectation
        assert!(matches!(query("w = [0.0, 0.0, 1.0], s = 1.0 | model = linreg", &reg), Err(QueryError::Eval(_))));
    }

    fn two_row_chain() -> Chain {
        let meta = ChainMeta {
            sampler: "hmc".into(),
            seed: 0,
            model: "linreg".into(),
        };
        let mut c = Chain::new(vec!["w[1]".into(), "w[2]".into(), "s".into()], meta).unwrap();
        c.push(&[0.5, 0.0, 1.0], 0.0).unwrap();
        c.push(&[0.2, 0.4, 0.7], 0.0).unwrap();
        c
    }

    #[test]
    fn posterior_predictive_is_log_mean_exp() {
        let mut reg = ModelRegistry::with_corpus();
        reg.register_chain("chain_instance", two_row_chain());
        let pp = query("X = [1.0, 1.0]', y = [2.0] | chain = chain_instance", &reg).unwrap();
        assert_eq!(pp.kind, QueryKind::PosteriorPredictive);
        let l1 = query("X = [1.0, 1.0]', y = [2.0] | w = [0.5, 0.0], s = 1.0, model = linreg", &reg).unwrap();
        let l2 = query("X = [1.0, 1.0]', y = [2.0] | w = [0.2, 0.4], s = 0.7, model = linreg", &reg).unwrap();
        let brute = ((l1.logp.exp() + l2.logp.exp()) / 2.0).ln();
        assert!((pp.logp - brute).abs() <= 4.0 * f64::EPSILON * brute.abs());
    }

    #[test]
    fn identical_rows_give_the_likelihood_exactly() {
        let meta = ChainMeta {
            sampler: "hmc".into(),
            seed: 0,
            model: "linreg".into(),
        };
        let mut c = Chain::new(vec!["w[1]".into(), "w[2]".into(), "s".into()], meta).unwrap();
        for _ in 0..5 {
            c.push(&[0.5, 0.0, 1.0], 0.0).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        c.save_csv(&path).unwrap();
        let reg = ModelRegistry::with_corpus();
        let pp = query(&format!("X = [1.0, 2.0]', y = [2.0] | chain = {}", path.display()), &reg).unwrap();
        let l = query(LIKELIHOOD, &reg).unwrap();
        assert_eq!(pp.logp, l.logp);
    }

    #[test]
    fn log_mean_exp_is_overflow_safe() {
        let v = log_mean_exp(&[-1.0e4, -1.0e4 - 1.0]);
        assert!(v.is_finite());
        assert!((v - (-1.0e4 + ((1.0 + (-1f64).exp()) / 2.0).ln())).abs() < 1e-9);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn joint_is_prior_plus_likelihood(w1 in -3.0f64..3.0, w2 in -3.0f64..3.0, s in 0.1f64..4.0, y in -5.0f64..5.0) {
            let reg = ModelRegistry::with_corpus();
            let data = format!("X = [1.0, 2.0]', y = [{y:?}]");
            let params = format!("w = [{w1:?}, {w2:?}], s = {s:?}");
            let j = query(&format!("{data}, {params} | model = linreg"), &reg).unwrap().logp;
            let p = query(&format!("{params} | model = linreg"), &reg).unwrap().logp;
            let l = query(&format!("{data} | {params}, model = linreg"), &reg).unwrap().logp;
            prop_assert!((j - (p + l)).abs() < 1e-10);
        }

        #[test]
        fn parser_never_panics(s in "[a-z0-9_ =|,\\[\\]'.eE+-]{0,40}") {
            match parse_query(&s) {
                Ok(_) => {}
                Err(QueryError::Parse { pos, .. }) => prop_assert!(pos >= 1 && pos <= s.chars().count() + 1),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
