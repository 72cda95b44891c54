//! Array kernels shared by plain evaluation and the gradient tape.

use crate::distributions::kernels::{
    categorical_logpmf, dirichlet_logpdf, dirichlet_partials, mvnormal_logpdf, mvnormal_partials,
    scalar_logpdf, scalar_partials,
};
use crate::distributions::{DistError, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Shape {
    Scalar,
    Vector(usize),
    /// Rows, columns; data is row-major.
    Matrix(usize, usize),
}

impl Shape {
    pub(crate) fn len(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Scalar => f.write_str("scalar"),
            Shape::Vector(n) => write!(f, "{n}-vector"),
            Shape::Matrix(r, c) => write!(f, "{r}x{c} matrix"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Arith {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[inline]
pub(crate) fn arith(op: Arith, a: f64, b: f64) -> f64 {
    match op {
        Arith::Add => a + b,
        Arith::Sub => a - b,
        Arith::Mul => a * b,
        Arith::Div => a / b,
        Arith::Pow => a.powf(b),
    }
}

/// Result shape of an element-wise operation. A scalar operand extends over
/// the other; otherwise shapes must agree exactly.
pub(crate) fn elementwise_shape(op: Arith, a: Shape, b: Shape) -> Result<Shape, String> {
    let symbol = match op {
        Arith::Add => "+",
        Arith::Sub => "-",
        Arith::Mul => "*",
        Arith::Div => "/",
        Arith::Pow => "^",
    };
    match (a, b) {
        (s, Shape::Scalar) => Ok(s),
        (Shape::Scalar, s) if matches!(op, Arith::Add | Arith::Sub | Arith::Mul) => Ok(s),
        (x, y) if x == y && matches!(op, Arith::Add | Arith::Sub) => Ok(x),
        _ => Err(format!("cannot apply `{symbol}` to a {a} and a {b}")),
    }
}

#[inline]
pub(crate) fn bidx(len: usize, i: usize) -> usize {
    if len == 1 {
        0
    } else {
        i
    }
}

pub(crate) fn binary_forward(op: Arith, a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| arith(op, a[bidx(a.len(), i)], b[bidx(b.len(), i)]))
        .collect()
}

/// Adds the contributions of `g` (the output adjoint) to `ga` and `gb`.
pub(crate) fn binary_vjp(
    op: Arith,
    a: &[f64],
    b: &[f64],
    out: &[f64],
    g: &[f64],
    mut ga: Option<&mut [f64]>,
    mut gb: Option<&mut [f64]>,
) {
    for i in 0..g.len() {
        let (ia, ib) = (bidx(a.len(), i), bidx(b.len(), i));
        let (x, y, gi) = (a[ia], b[ib], g[i]);
        let (da, db) = match op {
            Arith::Add => (gi, gi),
            Arith::Sub => (gi, -gi),
            Arith::Mul => (gi * y, gi * x),
            Arith::Div => (gi / y, -gi * x / (y * y)),
            Arith::Pow => (
                gi * y * x.powf(y - 1.0),
                if x > 0.0 { gi * x.ln() * out[i] } else { 0.0 },
            ),
        };
        if let Some(ga) = ga.as_deref_mut() {
            ga[ia] += da;
        }
        if let Some(gb) = gb.as_deref_mut() {
            gb[ib] += db;
        }
    }
}

pub(crate) fn matvec(rows: usize, cols: usize, m: &[f64], v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            let row = &m[i * cols..(i + 1) * cols];
            let mut s = 0.0;
            for (a, b) in row.iter().zip(v) {
                s += a * b;
            }
            s
        })
        .collect()
}

pub(crate) fn transpose_shape(s: Shape) -> Shape {
    match s {
        Shape::Scalar => Shape::Scalar,
        Shape::Vector(n) => Shape::Matrix(1, n),
        Shape::Matrix(r, c) => Shape::Matrix(c, r),
    }
}

/// Row-major data of the transpose of an `r x c` matrix.
pub(crate) fn transpose(rows: usize, cols: usize, m: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = m[i * cols + j];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unary {
    Neg,
    Exp,
    Log,
    Sqrt,
    Logistic,
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn unary_scalar(f: Unary, x: f64) -> Result<f64, &'static str> {
    Ok(match f {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Log if x < 0.0 => return Err("log of a negative number"),
        Unary::Log => x.ln(),
        Unary::Sqrt if x < 0.0 => return Err("sqrt of a negative number"),
        Unary::Sqrt => x.sqrt(),
        Unary::Logistic => logistic(x),
    })
}

pub(crate) fn unary_forward(f: Unary, a: &[f64]) -> Result<Vec<f64>, &'static str> {
    a.iter().map(|&x| unary_scalar(f, x)).collect()
}

pub(crate) fn unary_vjp(f: Unary, a: &[f64], out: &[f64], g: &[f64], ga: &mut [f64]) {
    for i in 0..g.len() {
        ga[i] += match f {
            Unary::Neg => -g[i],
            Unary::Exp => g[i] * out[i],
            Unary::Log => g[i] / a[i],
            Unary::Sqrt => g[i] * 0.5 / out[i],
            Unary::Logistic => g[i] * out[i] * (1.0 - out[i]),
        };
    }
}

/// Validates broadcast parameters for `n` draws of a scalar-parameter
/// family, or the single parameter set of a vector family.
pub(crate) fn check_params(family: Family, params: &[&[f64]], x_len: usize) -> Result<(), DistError> {
    use crate::distributions::kernels::{check_categorical, check_dirichlet, check_mvnormal, check_scalar};
    match family {
        Family::MvNormal => {
            let sigma = scalar_param(family, params[1])?;
            check_mvnormal(params[0], sigma)?;
            if params[0].len() != 1 && params[0].len() != x_len {
                return Err(DistError::DimensionMismatch {
                    expected: params[0].len(),
                    actual: x_len,
                });
            }
            Ok(())
        }
        Family::Dirichlet => {
            check_dirichlet(params[0])?;
            if params[0].len() != x_len {
                return Err(DistError::DimensionMismatch {
                    expected: params[0].len(),
                    actual: x_len,
                });
            }
            Ok(())
        }
        Family::Categorical => check_categorical(params[0]),
        _ => {
            let mut p = [0.0; 2];
            let all_scalar = params.iter().all(|q| q.len() == 1);
            let n = if all_scalar { 1 } else { x_len };
            for i in 0..n {
                for (k, q) in params.iter().enumerate() {
                    p[k] = q[bidx(q.len(), i)];
                }
                check_scalar(family, &p[..params.len()])?;
            }
            Ok(())
        }
    }
}

fn scalar_param(family: Family, p: &[f64]) -> Result<f64, DistError> {
    match p {
        [v] => Ok(*v),
        _ => Err(DistError::InvalidParameter {
            family,
            message: "expected a scalar parameter".into(),
        }),
    }
}

/// Summed log-density of `x` under `family`. Scalar families broadcast
/// length-1 parameters over `x`; the sum starts from 0 and runs in order.
pub(crate) fn density(family: Family, x: &[f64], params: &[&[f64]]) -> f64 {
    match family {
        Family::MvNormal => mvnormal_logpdf(x, params[0], params[1][0]),
        Family::Dirichlet => dirichlet_logpdf(x, params[0]),
        Family::Categorical => categorical_logpmf(x[0], params[0]),
        _ => {
            let mut s = 0.0;
            let mut p = [0.0; 2];
            for (i, &xi) in x.iter().enumerate() {
                for (k, q) in params.iter().enumerate() {
                    p[k] = q[bidx(q.len(), i)];
                }
                s += scalar_logpdf(family, xi, &p);
            }
            s
        }
    }
}

/// Cotangents of [`density`] with respect to `x` and each parameter, scaled
/// by `g`. Discrete `x` receives zeros.
pub(crate) fn density_vjp(family: Family, x: &[f64], params: &[&[f64]], g: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    match family {
        Family::MvNormal => {
            let (dx, dm, ds) = mvnormal_partials(x, params[0], params[1][0]);
            (
                dx.into_iter().map(|v| v * g).collect(),
                vec![dm.into_iter().map(|v| v * g).collect(), vec![ds * g]],
            )
        }
        Family::Dirichlet => {
            let (dx, da) = dirichlet_partials(x, params[0]);
            (
                dx.into_iter().map(|v| v * g).collect(),
                vec![da.into_iter().map(|v| v * g).collect()],
            )
        }
        Family::Categorical => {
            let mut dp = vec![0.0; params[0].len()];
            let k = x[0] as usize;
            if k >= 1 && k <= dp.len() {
                dp[k - 1] = g / params[0][k - 1];
            }
            (vec![0.0], vec![dp])
        }
        _ => {
            let mut gx = vec![0.0; x.len()];
            let mut gp: Vec<Vec<f64>> = params.iter().map(|q| vec![0.0; q.len()]).collect();
            let mut p = [0.0; 2];
            for (i, &xi) in x.iter().enumerate() {
                for (k, q) in params.iter().enumerate() {
                    p[k] = q[bidx(q.len(), i)];
                }
                let (dx, dp) = scalar_partials(family, xi, &p);
                gx[i] = dx * g;
                for (k, q) in params.iter().enumerate() {
                    gp[k][bidx(q.len(), i)] += dp[k] * g;
                }
            }
            (gx, gp)
        }
    }
}
