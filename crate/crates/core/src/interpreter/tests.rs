use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::distributions::Distribution;
use crate::dsl::parse_model;
use crate::trace::{specialize, TypedTrace, UntypedTrace};

const LINREG: &str = "model linreg(X, y) {
  d = size(X, 2)
  w ~ MvNormal(zeros(d), 1)
  s ~ Gamma(1, 1)
  y .~ Normal.(X * w, s)
}";

const GUARDED: &str = "model guarded(y) {
  s ~ Normal(0.0, 1.0)
  if s < 0 {
    reject
  }
  y ~ Normal(s, 1.0)
}";

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn model(src: &str, args: &[(&str, Value)]) -> Model {
    let decl = parse_model(src).unwrap();
    instantiate(&decl, args.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()).unwrap()
}

fn row(xs: &[f64]) -> Value {
    Value::RealMatrix(Matrix::from_rows(&[xs.to_vec()]).unwrap())
}

fn linreg_fixed(ctx: Context) -> f64 {
    let m = model(LINREG, &[("X", row(&[1.0, 2.0])), ("y", Value::RealVector(vec![2.0]))]);
    let fixed: HashMap<String, Value> = [
        ("w".to_string(), Value::RealVector(vec![0.5, 0.0])),
        ("s".to_string(), Value::Real(1.0)),
    ]
    .into();
    let mut t = UntypedTrace::new();
    let opts = EvalOptions {
        fixed: Some(&fixed),
        instrumentation: None,
    };
    m.evaluate_with(&mut t, ctx, &mut rng(), opts).unwrap()
}

#[test]
fn instantiate_classifies_observations() {
    let x = Value::RealMatrix(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
    let m = model(LINREG, &[("X", x.clone()), ("y", Value::RealVector(vec![1.0, 2.0, 3.0]))]);
    assert!(m.is_observed("y"));
    assert_eq!(m.parameter_symbols(), vec!["w".to_string(), "s".to_string()]);

    let m = model(LINREG, &[("X", x.clone()), ("y", Value::Missing)]);
    assert!(!m.is_observed("y"));
    assert_eq!(m.parameter_symbols(), vec!["w".to_string(), "s".to_string(), "y".to_string()]);

    let decl = parse_model(LINREG).unwrap();
    let err = instantiate(&decl, [("X".to_string(), x)].into()).unwrap_err();
    assert_eq!(err.missing, vec!["y".to_string()]);
    let err = instantiate(
        &decl,
        [
            ("X".to_string(), Value::Int(1)),
            ("y".to_string(), Value::Int(1)),
            ("z".to_string(), Value::Int(1)),
        ]
        .into(),
    )
    .unwrap_err();
    assert_eq!(err.extra, vec!["z".to_string()]);
}

#[test]
fn linreg_default_and_likelihood() {
    assert!((linreg_fixed(Context::Default) - -5.0068155996140185).abs() < 1e-12);
    assert!((linreg_fixed(Context::Likelihood) - -2.0439385332046727).abs() < 1e-12);
    let prior = linreg_fixed(Context::Prior);
    assert!((prior - -2.9628770664093453).abs() < 1e-12);
}

#[test]
fn reject_halts_evaluation() {
    let m = model(GUARDED, &[("y", Value::Real(0.3))]);
    let mut u = UntypedTrace::new();
    u.insert(VarName::symbol_only("s"), Distribution::normal(0.0, 1.0).unwrap(), Variate::Real(-0.5))
        .unwrap();
    let mut ins = Instrumentation::new(&m);
    let opts = EvalOptions {
        fixed: None,
        instrumentation: Some(&mut ins),
    };
    let lp = m.evaluate_with(&mut u, Context::Default, &mut rng(), opts).unwrap();
    assert_eq!(lp, f64::NEG_INFINITY);
    // s ~, if, reject run; the final tilde does not
    assert_eq!(ins.executed, vec![1, 1, 1, 0]);

    u.set_value(&VarName::symbol_only("s"), Variate::Real(0.5)).unwrap();
    let mut ins = Instrumentation::new(&m);
    let opts = EvalOptions {
        fixed: None,
        instrumentation: Some(&mut ins),
    };
    assert!(m.evaluate_with(&mut u, Context::Default, &mut rng(), opts).unwrap().is_finite());
    assert_eq!(ins.executed, vec![1, 1, 0, 1]);
}

#[test]
fn tilde_assume_samples_or_reuses() {
    let d = Distribution::normal(0.0, 1.0).unwrap();
    let vn = VarName::symbol_only("x");
    let mut t = UntypedTrace::new();
    let x = tilde_assume(Context::Default, &mut t, &vn, &d, &mut rng()).unwrap();
    assert!(t.contains(&vn));
    assert_eq!(t.logp(), d.logpdf(&x).unwrap());

    t.reset_logp();
    let again = tilde_assume(Context::Likelihood, &mut t, &vn, &d, &mut rng()).unwrap();
    assert_eq!(again, x);
    assert_eq!(t.logp(), 0.0);
}

#[test]
fn linked_gamma_adds_jacobian() {
    let d = Distribution::gamma(2.0, 1.0).unwrap();
    let vn = VarName::symbol_only("s");
    let mut u = UntypedTrace::new();
    u.insert(vn.clone(), d.clone(), Variate::Real(2.0)).unwrap();
    let mut t = specialize(&u).unwrap();
    t.link(&["s"]).unwrap();
    assert!((t.get_value(&vn).unwrap().as_real().unwrap() - 2f64.ln()).abs() < 1e-15);
    let x = tilde_assume(Context::Default, &mut t, &vn, &d, &mut rng()).unwrap();
    assert!((x.as_real().unwrap() - 2.0).abs() < 1e-15);
    assert!((t.logp() - -0.6137056388801093).abs() < 1e-12);
}

#[test]
fn tilde_observe_by_context() {
    let mut t = UntypedTrace::new();
    let n = Distribution::normal(0.0, 1.0).unwrap();
    tilde_observe(Context::Default, &mut t, &n, &Variate::Real(0.0)).unwrap();
    assert!((t.logp() - -0.9189385332046727).abs() < 1e-15);

    t.reset_logp();
    tilde_observe(Context::Prior, &mut t, &n, &Variate::Real(3.0)).unwrap();
    assert_eq!(t.logp(), 0.0);

    let ctx = Context::minibatch(BaseContext::Default, 10.0).unwrap();
    let b = Distribution::bernoulli(0.5).unwrap();
    tilde_observe(ctx, &mut t, &b, &Variate::Int(1)).unwrap();
    assert!((t.logp() - 10.0 * 0.5f64.ln()).abs() < 1e-12);
    assert!(Context::minibatch(BaseContext::Default, 0.0).is_err());
}

#[test]
fn evaluation_errors() {
    let bad = |src: &str| {
        let m = model(src, &[]);
        m.evaluate(&mut UntypedTrace::new(), Context::Default, &mut rng()).unwrap_err()
    };
    assert!(matches!(bad("model m() { x ~ Normal(mu, 1.0) }"), EvalError::Eval { .. }));
    assert!(matches!(bad("model m() { x = [1.0, 2.0] + [1.0] }"), EvalError::Eval { .. }));
    assert!(matches!(bad("model m() { if 1.0 { reject } }"), EvalError::Eval { .. }));
    assert!(bad("model m() { x ~ Normal(0.0, -1.0) }").is_domain());
    assert!(bad("model m() { x = log(-1.0) }").is_domain());
    let err = bad("model m() {\n  x = zeros(2)\n  x .~ Normal.([0.0, 1.0, 2.0], 1.0)\n}");
    assert_eq!(err.span().line, 3);
    assert!(matches!(err, EvalError::Eval { .. }));
}

#[test]
fn broadcast_vector_parameters() {
    let m = model(
        "model m() {\n  x = zeros(3)\n  x .~ Normal.([0.0, 1.0, 2.0], 1.0)\n}",
        &[],
    );
    let mut t = UntypedTrace::new();
    m.evaluate(&mut t, Context::Default, &mut rng()).unwrap();
    let snap = t.snapshot();
    assert_eq!(snap.len(), 3);
    assert_eq!(snap[2].0, VarName::indexed("x", 3));
    let want: f64 = snap
        .iter()
        .zip([0.0, 1.0, 2.0])
        .map(|((_, v), mu)| Distribution::normal(mu, 1.0).unwrap().logpdf(v).unwrap())
        .sum();
    assert!((t.logp() - want).abs() < 1e-12);
}

#[test]
fn indexed_tilde_updates_local_vector() {
    let m = model(
        "model m(y) {\n  z = zeros(2)\n  z[1] ~ Normal(0.0, 1.0)\n  z[2] ~ Normal(z[1], 1.0)\n  y ~ Normal(z[2], 1.0)\n}",
        &[("y", Value::Real(0.4))],
    );
    let mut t = UntypedTrace::new();
    let lp = m.evaluate(&mut t, Context::Default, &mut rng()).unwrap();
    let z1 = t.get_value(&VarName::indexed("z", 1)).unwrap().as_real().unwrap();
    let z2 = t.get_value(&VarName::indexed("z", 2)).unwrap().as_real().unwrap();
    let n = |mu: f64, x: f64| Distribution::normal(mu, 1.0).unwrap().logpdf(&Variate::Real(x)).unwrap();
    assert!((lp - (n(0.0, z1) + n(z1, z2) + n(z2, 0.4))).abs() < 1e-12);
}

fn hier() -> Model {
    let src = "model hier_poisson(y, x, idx, ns) {
  a0 ~ Normal(0, 10)
  a1 ~ Normal(0, 1)
  a0_sig ~ Gamma(1, 1)
  a0s = zeros(ns)
  a0s .~ Normal(0, a0_sig)
  lambda = exp(a0 + a0s[idx] + a1 * x)
  y .~ Poisson.(lambda)
}";
    model(
        src,
        &[
            ("y", Value::IntVector(vec![1, 0, 3, 2, 5, 1])),
            ("x", Value::RealVector(vec![0.1, -0.4, 0.8, 0.3, 1.1, -0.2])),
            ("idx", Value::IntVector(vec![1, 1, 2, 2, 3, 3])),
            ("ns", Value::Int(3)),
        ],
    )
}

fn typed_from(m: &Model, seed: u64) -> TypedTrace {
    let mut u = UntypedTrace::new();
    m.evaluate(&mut u, Context::Default, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    specialize(&u).unwrap()
}

#[test]
fn untyped_and_typed_agree() {
    let m = hier();
    let mut u = UntypedTrace::new();
    let lu = m.evaluate(&mut u, Context::Default, &mut rng()).unwrap();
    let mut t = specialize(&u).unwrap();
    let lt = m.evaluate(&mut t, Context::Default, &mut rng()).unwrap();
    assert!((lu - lt).abs() < 1e-12);
    // linked evaluation is the unlinked one plus the log-Jacobian of a0_sig
    let sig = t.get_value(&VarName::symbol_only("a0_sig")).unwrap().as_real().unwrap();
    t.link_all().unwrap();
    let ll = m.evaluate(&mut t, Context::Default, &mut rng()).unwrap();
    assert!((ll - (lt + sig.ln())).abs() < 1e-10);
}

#[test]
fn minibatch_partitions_average_to_full_likelihood() {
    let ys = [0.3, -1.2, 2.2, 0.7, 0.0, -0.4];
    let src = "model nn(y) {\n  m ~ Normal(0.0, 1.0)\n  y .~ Normal(m, 1.0)\n}";
    let full = model(src, &[("y", Value::RealVector(ys.to_vec()))]);
    let mut t = typed_from(&full, 3);
    let l_full = full.evaluate(&mut t, Context::Likelihood, &mut rng()).unwrap();
    let ctx = Context::minibatch(BaseContext::Likelihood, 3.0).unwrap();
    let mut total = 0.0;
    for chunk in ys.chunks(2) {
        let part = model(src, &[("y", Value::RealVector(chunk.to_vec()))]);
        total += part.evaluate(&mut t, ctx, &mut rng()).unwrap();
    }
    assert!((total / 3.0 - l_full).abs() < 1e-10);
}

proptest! {
    #[test]
    fn default_is_prior_plus_likelihood(seed in 0u64..500) {
        let m = hier();
        let mut t = typed_from(&m, seed);
        let d = m.evaluate(&mut t, Context::Default, &mut rng()).unwrap();
        let p = m.evaluate(&mut t, Context::Prior, &mut rng()).unwrap();
        let l = m.evaluate(&mut t, Context::Likelihood, &mut rng()).unwrap();
        prop_assert!((d - (p + l)).abs() < 1e-10);
    }

    #[test]
    fn evaluation_is_deterministic(seed in 0u64..500) {
        let m = hier();
        let mut t = typed_from(&m, seed);
        let a = m.evaluate(&mut t, Context::Default, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = m.evaluate(&mut t, Context::Default, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
