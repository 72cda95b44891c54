//! Raw log-density kernels and their partial derivatives.
//!
//! The interpreter's plain path and the gradient tape both call these, so a
//! density evaluated with or without differentiation yields identical bits.

use statrs::function::gamma::{digamma, ln_gamma};

use super::{invalid, DistError, Family};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

const SIMPLEX_TOL: f64 = 1e-12;

pub(crate) fn check_scalar(family: Family, p: &[f64]) -> Result<(), DistError> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(invalid(family, "parameters must be finite"));
    }
    let ok = match family {
        Family::Normal => p[1] > 0.0,
        Family::Gamma | Family::Beta => p[0] > 0.0 && p[1] > 0.0,
        Family::Bernoulli => (0.0..=1.0).contains(&p[0]),
        Family::Poisson => p[0] > 0.0,
        _ => return Err(invalid(family, "not a scalar-parameter family")),
    };
    if ok {
        Ok(())
    } else {
        Err(invalid(family, format!("parameters {p:?} out of range")))
    }
}

pub(crate) fn check_mvnormal(mean: &[f64], sigma: f64) -> Result<(), DistError> {
    if mean.iter().any(|m| !m.is_finite()) || !sigma.is_finite() || sigma <= 0.0 {
        return Err(invalid(Family::MvNormal, "mean must be finite and sigma > 0"));
    }
    Ok(())
}

pub(crate) fn check_categorical(probs: &[f64]) -> Result<(), DistError> {
    if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(invalid(Family::Categorical, "probabilities must be non-negative"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid(
            Family::Categorical,
            format!("probabilities sum to {total}, not 1"),
        ));
    }
    Ok(())
}

pub(crate) fn check_dirichlet(alpha: &[f64]) -> Result<(), DistError> {
    if alpha.len() < 2 || alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(invalid(
            Family::Dirichlet,
            "needs at least two positive concentrations",
        ));
    }
    Ok(())
}

fn is_count(x: f64) -> bool {
    x >= 0.0 && x.fract() == 0.0 && x.is_finite()
}

/// Log-density of a scalar family at `x`. Parameters are assumed valid.
pub(crate) fn scalar_logpdf(family: Family, x: f64, p: &[f64]) -> f64 {
    match family {
        Family::Normal => {
            let z = (x - p[0]) / p[1];
            -0.5 * z * z - p[1].ln() - HALF_LN_2PI
        }
        Family::Gamma => {
            let (k, theta) = (p[0], p[1]);
            if x <= 0.0 || x.is_nan() {
                return f64::NEG_INFINITY;
            }
            (k - 1.0) * x.ln() - x / theta - ln_gamma(k) - k * theta.ln()
        }
        Family::Beta => {
            let (a, b) = (p[0], p[1]);
            if !(x > 0.0 && x < 1.0) {
                return f64::NEG_INFINITY;
            }
            (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
        }
        Family::Bernoulli => {
            if x == 1.0 {
                p[0].ln()
            } else if x == 0.0 {
                (-p[0]).ln_1p()
            } else {
                f64::NEG_INFINITY
            }
        }
        Family::Poisson => {
            if !is_count(x) {
                return f64::NEG_INFINITY;
            }
            x * p[0].ln() - p[0] - ln_gamma(x + 1.0)
        }
        _ => unreachable!("{family} is not a scalar family"),
    }
}

/// Partial derivatives `(d/dx, [d/dp1, d/dp2])` of [`scalar_logpdf`]. Only
/// meaningful where the density is finite.
pub(crate) fn scalar_partials(family: Family, x: f64, p: &[f64]) -> (f64, [f64; 2]) {
    match family {
        Family::Normal => {
            let (mu, sigma) = (p[0], p[1]);
            let z = (x - mu) / sigma;
            let dx = -z / sigma;
            (dx, [-dx, (z * z - 1.0) / sigma])
        }
        Family::Gamma => {
            let (k, theta) = (p[0], p[1]);
            (
                (k - 1.0) / x - 1.0 / theta,
                [x.ln() - digamma(k) - theta.ln(), x / (theta * theta) - k / theta],
            )
        }
        Family::Beta => {
            let (a, b) = (p[0], p[1]);
            let dab = digamma(a + b);
            (
                (a - 1.0) / x - (b - 1.0) / (1.0 - x),
                [x.ln() - digamma(a) + dab, (-x).ln_1p() - digamma(b) + dab],
            )
        }
        Family::Bernoulli => {
            let dp = if x == 1.0 { 1.0 / p[0] } else { -1.0 / (1.0 - p[0]) };
            (0.0, [dp, 0.0])
        }
        Family::Poisson => (0.0, [x / p[0] - 1.0, 0.0]),
        _ => unreachable!("{family} is not a scalar family"),
    }
}

pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `mean` may have length 1 (repeated) or match `x`.
pub(crate) fn mvnormal_logpdf(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let n = x.len() as f64;
    let mut ss = 0.0;
    for (i, xi) in x.iter().enumerate() {
        let d = xi - mean[if mean.len() == 1 { 0 } else { i }];
        ss += d * d;
    }
    -0.5 * ss / (sigma * sigma) - n * sigma.ln() - n * HALF_LN_2PI
}

/// Returns `(d/dx, d/dmean, d/dsigma)`; `d/dmean` has the length of `mean`.
pub(crate) fn mvnormal_partials(x: &[f64], mean: &[f64], sigma: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let s2 = sigma * sigma;
    let mut dx = Vec::with_capacity(x.len());
    let mut dmean = vec![0.0; mean.len()];
    let mut ss = 0.0;
    for (i, xi) in x.iter().enumerate() {
        let j = if mean.len() == 1 { 0 } else { i };
        let d = xi - mean[j];
        ss += d * d;
        dx.push(-d / s2);
        dmean[j] += d / s2;
    }
    let dsigma = ss / (s2 * sigma) - x.len() as f64 / sigma;
    (dx, dmean, dsigma)
}

/// Log-mass of category `k` (1-based).
pub(crate) fn categorical_logpmf(k: f64, probs: &[f64]) -> f64 {
    if k >= 1.0 && k.fract() == 0.0 && k <= probs.len() as f64 {
        probs[k as usize - 1].ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub(crate) fn dirichlet_logpdf(x: &[f64], alpha: &[f64]) -> f64 {
    let total: f64 = x.iter().sum();
    if x.iter().any(|v| v.is_nan() || *v <= 0.0) || (total - 1.0).abs() > 1e-9 {
        return f64::NEG_INFINITY;
    }
    let a0: f64 = alpha.iter().sum();
    let mut lp = ln_gamma(a0);
    for (xi, ai) in x.iter().zip(alpha) {
        lp += (ai - 1.0) * xi.ln() - ln_gamma(*ai);
    }
    lp
}

/// Returns `(d/dx, d/dalpha)`.
pub(crate) fn dirichlet_partials(x: &[f64], alpha: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a0: f64 = alpha.iter().sum();
    let da0 = digamma(a0);
    let dx = x.iter().zip(alpha).map(|(xi, ai)| (ai - 1.0) / xi).collect();
    let dalpha = x
        .iter()
        .zip(alpha)
        .map(|(xi, ai)| da0 - digamma(*ai) + xi.ln())
        .collect();
    (dx, dalpha)
}
