//! Reverse-mode gradients of a model's log density in unconstrained space.
//!
//! One forward evaluation records a [`Tape`]; one reverse sweep over it
//! yields the gradient with respect to the flattened parameter vector θ.

mod tape;

pub use tape::Tape;
pub(crate) use tape::{Buf, NodeId, Op};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::addressing::VarName;
use crate::interpreter::{Context, EvalError, Model};
use crate::trace::{TraceError, TypedTrace};

#[derive(Debug, Error)]
pub enum GradientError {
    #[error("not differentiable: `{0}` is discrete")]
    NotDifferentiable(VarName),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("log density is -inf at a stencil point for component {0}")]
    Boundary(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub logp: f64,
    /// Absent when `logp` is −∞.
    pub grad: Option<Vec<f64>>,
    pub forward_sweeps: u32,
    pub reverse_sweeps: u32,
    pub tape_nodes: usize,
}

fn check_continuous(t: &TypedTrace) -> Result<(), GradientError> {
    match t.first_discrete() {
        Some(vn) => Err(GradientError::NotDifferentiable(vn.clone())),
        None => Ok(()),
    }
}

/// Sets `t` to θ and returns logp together with ∇θ logp. Parameters that
/// should be differentiated in unconstrained space must be linked first.
pub fn gradient_logp(
    model: &Model,
    t: &mut TypedTrace,
    ctx: Context,
    theta: &[f64],
) -> Result<GradientResult, GradientError> {
    check_continuous(t)?;
    t.unflatten(theta)?;
    let mut tape = Tape::new(theta.len());
    // every parameter is present, so the evaluator never draws
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logp = match model.evaluate_on_tape(t, ctx, &mut rng, &mut tape) {
        Ok(lp) => lp,
        Err(e) if e.is_domain() => f64::NEG_INFINITY,
        Err(EvalError::Trace {
            error: TraceError::NotDifferentiable(vn),
            ..
        }) => return Err(GradientError::NotDifferentiable(vn)),
        Err(e) => return Err(e.into()),
    };
    if logp == f64::NEG_INFINITY {
        return Ok(GradientResult {
            logp,
            grad: None,
            forward_sweeps: 1,
            reverse_sweeps: 0,
            tape_nodes: tape.len(),
        });
    }
    let grad = tape.reverse();
    Ok(GradientResult {
        logp,
        grad: Some(grad),
        forward_sweeps: 1,
        reverse_sweeps: 1,
        tape_nodes: tape.len(),
    })
}

/// Log density at θ through the plain evaluator. Domain errors give −∞.
pub fn logp_at(model: &Model, t: &mut TypedTrace, ctx: Context, theta: &[f64]) -> Result<f64, GradientError> {
    t.unflatten(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match model.evaluate(t, ctx, &mut rng) {
        Ok(lp) => Ok(lp),
        Err(e) if e.is_domain() => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e.into()),
    }
}

/// Central differences with step `h`. Leaves `t` holding θ.
pub fn finite_diff_gradient(
    model: &Model,
    t: &mut TypedTrace,
    ctx: Context,
    theta: &[f64],
    h: f64,
) -> Result<Vec<f64>, GradientError> {
    check_continuous(t)?;
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let up = logp_at(model, t, ctx, &point)?;
        point[i] = theta[i] - h;
        let down = logp_at(model, t, ctx, &point)?;
        point[i] = theta[i];
        if up == f64::NEG_INFINITY || down == f64::NEG_INFINITY {
            return Err(GradientError::Boundary(i));
        }
        grad.push((up - down) / (2.0 * h));
    }
    t.unflatten(theta)?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;
    use crate::interpreter::{instantiate, Value};
    use crate::trace::{specialize, UntypedTrace};
    use std::collections::HashMap;

    fn setup(src: &str, args: &[(&str, Value)]) -> (Model, TypedTrace) {
        let decl = parse_model(src).unwrap();
        let args: HashMap<String, Value> = args.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let m = instantiate(&decl, args).unwrap();
        let mut u = UntypedTrace::new();
        m.evaluate(&mut u, Context::Default, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut t = specialize(&u).unwrap();
        t.link_all().unwrap();
        (m, t)
    }

    #[test]
    fn standard_normal_gradient() {
        let (m, mut t) = setup("model n() { x ~ Normal(0.0, 1.0) }", &[]);
        let r = gradient_logp(&m, &mut t, Context::Default, &[1.0]).unwrap();
        assert!((r.logp + 1.4189385332046727).abs() < 1e-12);
        assert_eq!(r.grad.unwrap(), vec![-1.0]);
        assert_eq!((r.forward_sweeps, r.reverse_sweeps), (1, 1));
    }

    #[test]
    fn gamma_prior_includes_jacobian() {
        let (m, mut t) = setup("model g() { s ~ Gamma(2.0, 1.0) }", &[]);
        // logp(y) = log Gamma(e^y; 2, 1) + y = 2y - e^y, so d/dy = 2 - e^y = 1 at 0
        let r = gradient_logp(&m, &mut t, Context::Default, &[0.0]).unwrap();
        assert!((r.grad.as_ref().unwrap()[0] - 1.0).abs() < 1e-12);
        let fd = finite_diff_gradient(&m, &mut t, Context::Default, &[0.0], 1e-5).unwrap();
        assert!((fd[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn discrete_parameter_is_rejected() {
        let (m, mut t) = {
            let decl = parse_model("model b() { z ~ Bernoulli(0.3) }").unwrap();
            let m = instantiate(&decl, HashMap::new()).unwrap();
            let mut u = UntypedTrace::new();
            m.evaluate(&mut u, Context::Default, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            (m, specialize(&u).unwrap())
        };
        let err = gradient_logp(&m, &mut t, Context::Default, &[]).unwrap_err();
        assert!(matches!(err, GradientError::NotDifferentiable(_)));
    }

    #[test]
    fn finite_differences_on_quadratic_and_even_functions() {
        let (m, mut t) = setup("model n() { x ~ Normal(0.0, 1.0) }", &[]);
        let fd = finite_diff_gradient(&m, &mut t, Context::Default, &[2.0], 1e-5).unwrap();
        assert!((fd[0] + 2.0).abs() < 1e-9);
        let fd = finite_diff_gradient(&m, &mut t, Context::Default, &[0.0], 1e-5).unwrap();
        assert!(fd[0].abs() < 1e-10);
    }

    #[test]
    fn boundary_stencil_is_an_error() {
        // the guard rejects once x exceeds 1
        let (m, mut t) = setup("model r() { x ~ Normal(0.0, 1.0)\n if x > 1.0 { reject } }", &[]);
        let err = finite_diff_gradient(&m, &mut t, Context::Default, &[1.0 - 1e-6], 1e-5).unwrap_err();
        assert!(matches!(err, GradientError::Boundary(0)));
    }

    #[test]
    fn rejected_point_has_no_gradient() {
        let (m, mut t) = setup("model r() { x ~ Normal(0.0, 1.0)\n if x > 1.0 { reject } }", &[]);
        let r = gradient_logp(&m, &mut t, Context::Default, &[2.0]).unwrap();
        assert_eq!(r.logp, f64::NEG_INFINITY);
        assert!(r.grad.is_none());
    }

    #[test]
    fn linreg_gradient_matches_differences_and_plain_logp() {
        let src = "model linreg(X, y) {\n  d = size(X, 2)\n  w ~ MvNormal(zeros(d), 1)\n  s ~ Gamma(1, 1)\n  y .~ Normal.(X * w, s)\n}";
        let x = crate::interpreter::Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![-0.3, 0.7]]).unwrap();
        let (m, mut t) = setup(
            src,
            &[("X", Value::RealMatrix(x)), ("y", Value::RealVector(vec![2.0, -0.5, 0.4]))],
        );
        let theta = [0.3, -0.2, 0.1];
        let r = gradient_logp(&m, &mut t, Context::Default, &theta).unwrap();
        let plain = logp_at(&m, &mut t, Context::Default, &theta).unwrap();
        assert_eq!(r.logp, plain);
        let fd = finite_diff_gradient(&m, &mut t, Context::Default, &theta, 1e-5).unwrap();
        for (g, f) in r.grad.unwrap().iter().zip(&fd) {
            assert!((g - f).abs() / f.abs().max(1.0) < 1e-6, "{g} vs {f}");
        }
    }
}
