use super::DistError;

/// Maps a constrained support onto unconstrained reals.
///
/// `forward` goes constrained -> unconstrained; `inverse` goes back.
/// `log_abs_det_jacobian_inverse(y)` is `log |det d inverse(y) / dy|`, so
/// that `logpdf_unconstrained(y) = logpdf(inverse(y)) + logjac(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bijector {
    Identity,
    /// Positive reals, `y = ln x`.
    Log,
    /// Unit interval, `y = logit x`.
    Logit,
    /// K-simplex to `R^(K-1)`: `y_k = logit(z_k) + ln(K - k)` where `z_k` is
    /// the fraction of the remaining stick taken by component `k`.
    StickBreaking { k: usize },
}

fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^y)` without overflow.
fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

impl Bijector {
    /// Whether the map acts independently on each scalar element.
    pub fn is_elementwise(self) -> bool {
        !matches!(self, Bijector::StickBreaking { .. })
    }

    pub fn unconstrained_len(self, constrained_len: usize) -> usize {
        match self {
            Bijector::StickBreaking { k } => k - 1,
            _ => constrained_len,
        }
    }

    pub fn constrained_len(self, unconstrained_len: usize) -> usize {
        match self {
            Bijector::StickBreaking { k } => k,
            _ => unconstrained_len,
        }
    }

    pub fn forward_scalar(self, x: f64) -> Result<f64, DistError> {
        match self {
            Bijector::Identity => Ok(x),
            Bijector::Log if x > 0.0 => Ok(x.ln()),
            Bijector::Logit if x > 0.0 && x < 1.0 => Ok((x / (1.0 - x)).ln()),
            Bijector::Log => Err(DistError::DomainViolation("positive reals")),
            Bijector::Logit => Err(DistError::DomainViolation("the open unit interval")),
            Bijector::StickBreaking { .. } => Err(DistError::DomainViolation("the simplex")),
        }
    }

    /// Element-wise inverse; only valid when [`Bijector::is_elementwise`].
    pub fn inverse_scalar(self, y: f64) -> f64 {
        match self {
            Bijector::Identity => y,
            Bijector::Log => y.exp(),
            Bijector::Logit => logistic(y),
            Bijector::StickBreaking { .. } => panic!("stick-breaking is not element-wise"),
        }
    }

    pub fn logjac_scalar(self, y: f64) -> f64 {
        match self {
            Bijector::Identity => 0.0,
            Bijector::Log => y,
            Bijector::Logit => -softplus(-y) - softplus(y),
            Bijector::StickBreaking { .. } => panic!("stick-breaking is not element-wise"),
        }
    }

    pub fn forward(self, x: &[f64]) -> Result<Vec<f64>, DistError> {
        match self {
            Bijector::StickBreaking { k } => stick_forward(k, x),
            b => x.iter().map(|&v| b.forward_scalar(v)).collect(),
        }
    }

    pub fn inverse(self, y: &[f64]) -> Vec<f64> {
        match self {
            Bijector::StickBreaking { k } => stick_inverse(k, y).0,
            b => y.iter().map(|&v| b.inverse_scalar(v)).collect(),
        }
    }

    pub fn log_abs_det_jacobian_inverse(self, y: &[f64]) -> f64 {
        match self {
            Bijector::Identity => 0.0,
            Bijector::StickBreaking { k } => {
                let (x, z) = stick_inverse(k, y);
                let mut rem = 1.0;
                let mut lj = 0.0;
                for i in 0..k - 1 {
                    lj += z[i].ln() + (1.0 - z[i]).ln() + f64::ln(rem);
                    rem -= x[i];
                }
                lj
            }
            b => y.iter().fold(0.0, |acc, &v| acc + b.logjac_scalar(v)),
        }
    }

    /// `(forward(x), log_abs_det_jacobian_inverse(forward(x)))`.
    pub fn apply(self, x: &[f64]) -> Result<(Vec<f64>, f64), DistError> {
        let y = self.forward(x)?;
        let lj = self.log_abs_det_jacobian_inverse(&y);
        Ok((y, lj))
    }

    /// Vector-Jacobian product of `inverse` at `y`: maps a cotangent on the
    /// constrained value to one on `y`.
    pub fn inverse_vjp(self, y: &[f64], gx: &[f64]) -> Vec<f64> {
        match self {
            Bijector::Identity => gx.to_vec(),
            Bijector::Log => y.iter().zip(gx).map(|(v, g)| g * v.exp()).collect(),
            Bijector::Logit => y
                .iter()
                .zip(gx)
                .map(|(v, g)| {
                    let s = logistic(*v);
                    g * s * (1.0 - s)
                })
                .collect(),
            Bijector::StickBreaking { k } => {
                let (x, z) = stick_inverse(k, y);
                let mut rems = Vec::with_capacity(k);
                let mut rem = 1.0;
                for xi in &x[..k - 1] {
                    rems.push(rem);
                    rem -= xi;
                }
                let mut g_rem = gx[k - 1];
                let mut gy = vec![0.0; k - 1];
                for i in (0..k - 1).rev() {
                    let g_z = (gx[i] - g_rem) * rems[i];
                    g_rem = gx[i] * z[i] + g_rem * (1.0 - z[i]);
                    gy[i] = g_z * z[i] * (1.0 - z[i]);
                }
                gy
            }
        }
    }

    /// Gradient of `log_abs_det_jacobian_inverse` at `y`.
    pub fn logjac_gradient(self, y: &[f64]) -> Vec<f64> {
        match self {
            Bijector::Identity => vec![0.0; y.len()],
            Bijector::Log => vec![1.0; y.len()],
            Bijector::Logit => y.iter().map(|&v| 1.0 - 2.0 * logistic(v)).collect(),
            Bijector::StickBreaking { k } => {
                let (_, z) = stick_inverse(k, y);
                (0..k - 1)
                    .map(|i| (1.0 - z[i]) - (k - 1 - i) as f64 * z[i])
                    .collect()
            }
        }
    }
}

fn stick_forward(k: usize, x: &[f64]) -> Result<Vec<f64>, DistError> {
    let total: f64 = x.iter().sum();
    if x.len() != k || x.iter().any(|v| v.is_nan() || *v <= 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(DistError::DomainViolation("the simplex"));
    }
    let mut rem = 1.0;
    let mut y = Vec::with_capacity(k - 1);
    for (i, xi) in x[..k - 1].iter().enumerate() {
        let z = xi / rem;
        y.push((z / (1.0 - z)).ln() + ((k - 1 - i) as f64).ln());
        rem -= xi;
    }
    Ok(y)
}

/// Returns the simplex point and the per-step fractions `z`.
fn stick_inverse(k: usize, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(y.len(), k - 1, "stick-breaking expects {} coordinates", k - 1);
    let mut x = Vec::with_capacity(k);
    let mut z = Vec::with_capacity(k - 1);
    let mut rem = 1.0;
    for (i, yi) in y.iter().enumerate() {
        let zi = logistic(yi - ((k - 1 - i) as f64).ln());
        let xi = rem * zi;
        x.push(xi);
        z.push(zi);
        rem -= xi;
    }
    x.push(rem);
    (x, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_example() {
        let (y, lj) = Bijector::Log.apply(&[2.0]).unwrap();
        assert!((y[0] - 2f64.ln()).abs() < 1e-15);
        assert!((lj - 2f64.ln()).abs() < 1e-15);
        assert_eq!(Bijector::Identity.apply(&[5.0]).unwrap(), (vec![5.0], 0.0));
        assert!(Bijector::Log.apply(&[-1.0]).is_err());
        assert!(Bijector::Logit.apply(&[1.0]).is_err());
    }

    // Scripted independently: logit(z_k) = ln(x_k / sum_{j>k} x_j).
    fn stick_oracle(x: &[f64]) -> Vec<f64> {
        let k = x.len();
        (0..k - 1)
            .map(|i| {
                let tail: f64 = x[i + 1..].iter().sum();
                (x[i] / tail).ln() + ((k - 1 - i) as f64).ln()
            })
            .collect()
    }

    #[test]
    fn stick_breaking_fixed_point_and_oracle() {
        let b = Bijector::StickBreaking { k: 3 };
        let third = 1.0 / 3.0;
        let y = b.forward(&[third, third, third]).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-15), "{y:?}");
        let x = [0.1, 0.6, 0.3];
        let y = b.forward(&x).unwrap();
        let o = stick_oracle(&x);
        for (a, e) in y.iter().zip(&o) {
            assert!((a - e).abs() < 1e-14);
        }
        // frozen from the oracle above: ln(0.1/0.9)+ln 2, ln(0.6/0.3)
        assert!((y[0] - -1.504_077_396_776_274).abs() < 1e-14);
        assert!((y[1] - std::f64::consts::LN_2).abs() < 1e-14);
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, y: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..y.len())
            .map(|i| {
                let mut a = y.to_vec();
                let mut b = y.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases = [
            (Bijector::Log, vec![0.3, -1.2]),
            (Bijector::Logit, vec![0.8, -2.0]),
            (Bijector::StickBreaking { k: 4 }, vec![0.3, -0.7, 1.1]),
        ];
        for (b, y) in cases {
            let g = b.logjac_gradient(&y);
            let num = fd_grad(|v| b.log_abs_det_jacobian_inverse(v), &y);
            for (a, e) in g.iter().zip(&num) {
                assert!((a - e).abs() < 1e-6, "{b:?} logjac {g:?} vs {num:?}");
            }
            let k = b.constrained_len(y.len());
            let weights: Vec<f64> = (0..k).map(|i| 0.5 + i as f64).collect();
            let vjp = b.inverse_vjp(&y, &weights);
            let num = fd_grad(
                |v| b.inverse(v).iter().zip(&weights).map(|(x, w)| x * w).sum(),
                &y,
            );
            for (a, e) in vjp.iter().zip(&num) {
                assert!((a - e).abs() < 1e-6, "{b:?} vjp {vjp:?} vs {num:?}");
            }
        }
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn scalar_round_trips(x in 1e-3f64..1e3, u in 1e-3f64..0.999) {
            let y = Bijector::Log.forward_scalar(x).unwrap();
            prop_assert!((Bijector::Log.inverse_scalar(y) - x).abs() <= 1e-12 * x.max(1.0));
            let y = Bijector::Logit.forward_scalar(u).unwrap();
            prop_assert!((Bijector::Logit.inverse_scalar(y) - u).abs() < 1e-12);
        }

        #[test]
        fn simplex_round_trips(x in simplex(5)) {
            let b = Bijector::StickBreaking { k: 5 };
            let back = b.inverse(&b.forward(&x).unwrap());
            for (a, e) in back.iter().zip(&x) {
                prop_assert!((a - e).abs() < 1e-12);
            }
        }
    }
}
