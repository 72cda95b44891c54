//! Probability distributions used by models: log-densities, sampling, and the
//! bijectors that map constrained supports onto unconstrained space.

mod bijector;
pub(crate) mod kernels;

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use thiserror::Error;

pub use bijector::Bijector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid parameter for {family}: {message}")]
    InvalidParameter { family: Family, message: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{0} is discrete and has no bijector")]
    NotDifferentiable(Family),
    #[error("value outside the constrained domain of {0}")]
    DomainViolation(&'static str),
    #[error("{family} expects {expected}")]
    WrongVariate {
        family: Family,
        expected: &'static str,
    },
}

/// Distribution families recognised by the model language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Normal,
    MvNormal,
    Gamma,
    Beta,
    Bernoulli,
    Poisson,
    Categorical,
    Dirichlet,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Normal,
        Family::MvNormal,
        Family::Gamma,
        Family::Beta,
        Family::Bernoulli,
        Family::Poisson,
        Family::Categorical,
        Family::Dirichlet,
    ];

    pub fn from_name(name: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "Normal",
            Family::MvNormal => "MvNormal",
            Family::Gamma => "Gamma",
            Family::Beta => "Beta",
            Family::Bernoulli => "Bernoulli",
            Family::Poisson => "Poisson",
            Family::Categorical => "Categorical",
            Family::Dirichlet => "Dirichlet",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Family::Normal | Family::MvNormal | Family::Gamma | Family::Beta => 2,
            Family::Bernoulli | Family::Poisson | Family::Categorical | Family::Dirichlet => 1,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            Family::Bernoulli | Family::Poisson | Family::Categorical
        )
    }

    /// Families whose variates or parameters are vectors; these cannot be
    /// broadcast element-wise.
    pub fn is_multivariate(self) -> bool {
        matches!(
            self,
            Family::MvNormal | Family::Categorical | Family::Dirichlet
        )
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A value in the support of some distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Variate {
    Real(f64),
    Int(i64),
    Vector(Vec<f64>),
}

impl Variate {
    pub fn len(&self) -> usize {
        match self {
            Variate::Vector(v) => v.len(),
            _ => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_real(&self) -> Option<f64> {
        match *self {
            Variate::Real(x) => Some(x),
            Variate::Int(i) => Some(i as f64),
            Variate::Vector(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Normal { mu: f64, sigma: f64 },
    /// Isotropic multivariate normal with covariance `sigma² I`.
    MvNormalIso { mean: Vec<f64>, sigma: f64 },
    /// Shape/scale parameterisation: mean is `shape * scale`.
    Gamma { shape: f64, scale: f64 },
    Beta { alpha: f64, beta: f64 },
    Bernoulli { p: f64 },
    Poisson { lambda: f64 },
    /// Outcomes are 1-based category indices.
    Categorical { probs: Vec<f64> },
    Dirichlet { alpha: Vec<f64> },
}

fn invalid(family: Family, message: impl Into<String>) -> DistError {
    DistError::InvalidParameter {
        family,
        message: message.into(),
    }
}

impl Distribution {
    pub fn normal(mu: f64, sigma: f64) -> Result<Self, DistError> {
        kernels::check_scalar(Family::Normal, &[mu, sigma])?;
        Ok(Distribution::Normal { mu, sigma })
    }

    pub fn mv_normal_iso(mean: Vec<f64>, sigma: f64) -> Result<Self, DistError> {
        kernels::check_mvnormal(&mean, sigma)?;
        Ok(Distribution::MvNormalIso { mean, sigma })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self, DistError> {
        kernels::check_scalar(Family::Gamma, &[shape, scale])?;
        Ok(Distribution::Gamma { shape, scale })
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self, DistError> {
        kernels::check_scalar(Family::Beta, &[alpha, beta])?;
        Ok(Distribution::Beta { alpha, beta })
    }

    pub fn bernoulli(p: f64) -> Result<Self, DistError> {
        kernels::check_scalar(Family::Bernoulli, &[p])?;
        Ok(Distribution::Bernoulli { p })
    }

    pub fn poisson(lambda: f64) -> Result<Self, DistError> {
        kernels::check_scalar(Family::Poisson, &[lambda])?;
        Ok(Distribution::Poisson { lambda })
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self, DistError> {
        kernels::check_categorical(&probs)?;
        Ok(Distribution::Categorical { probs })
    }

    pub fn dirichlet(alpha: Vec<f64>) -> Result<Self, DistError> {
        kernels::check_dirichlet(&alpha)?;
        Ok(Distribution::Dirichlet { alpha })
    }

    /// Builds a distribution from raw parameter arrays, validating them.
    ///
    /// Scalar parameters are passed as length-1 slices. `MvNormal` accepts a
    /// scalar mean that is repeated to the dimension implied by `dim`.
    pub fn from_params(
        family: Family,
        params: &[&[f64]],
        dim: Option<usize>,
    ) -> Result<Self, DistError> {
        if params.len() != family.arity() {
            return Err(invalid(
                family,
                format!("expected {} parameters, got {}", family.arity(), params.len()),
            ));
        }
        let scalar = |k: usize| -> Result<f64, DistError> {
            match params[k] {
                [v] => Ok(*v),
                other => Err(invalid(
                    family,
                    format!("parameter {} must be a scalar, got length {}", k + 1, other.len()),
                )),
            }
        };
        match family {
            Family::Normal => Distribution::normal(scalar(0)?, scalar(1)?),
            Family::Gamma => Distribution::gamma(scalar(0)?, scalar(1)?),
            Family::Beta => Distribution::beta(scalar(0)?, scalar(1)?),
            Family::Bernoulli => Distribution::bernoulli(scalar(0)?),
            Family::Poisson => Distribution::poisson(scalar(0)?),
            Family::MvNormal => {
                let mean = match (params[0], dim) {
                    ([m], Some(d)) => vec![*m; d],
                    (m, _) => m.to_vec(),
                };
                Distribution::mv_normal_iso(mean, scalar(1)?)
            }
            Family::Categorical => Distribution::categorical(params[0].to_vec()),
            Family::Dirichlet => Distribution::dirichlet(params[0].to_vec()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Distribution::Normal { .. } => Family::Normal,
            Distribution::MvNormalIso { .. } => Family::MvNormal,
            Distribution::Gamma { .. } => Family::Gamma,
            Distribution::Beta { .. } => Family::Beta,
            Distribution::Bernoulli { .. } => Family::Bernoulli,
            Distribution::Poisson { .. } => Family::Poisson,
            Distribution::Categorical { .. } => Family::Categorical,
            Distribution::Dirichlet { .. } => Family::Dirichlet,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.family().is_discrete()
    }

    /// Number of scalar elements in one variate.
    pub fn dimension(&self) -> usize {
        match self {
            Distribution::MvNormalIso { mean, .. } => mean.len(),
            Distribution::Dirichlet { alpha } => alpha.len(),
            _ => 1,
        }
    }

    /// Whether a variate is a vector (as opposed to a scalar).
    pub fn is_vector_valued(&self) -> bool {
        matches!(
            self,
            Distribution::MvNormalIso { .. } | Distribution::Dirichlet { .. }
        )
    }

    /// Builds a scalar-parameter distribution from already-validated
    /// parameters.
    pub(crate) fn from_scalar_params(family: Family, p: [f64; 2]) -> Self {
        match family {
            Family::Normal => Distribution::Normal { mu: p[0], sigma: p[1] },
            Family::Gamma => Distribution::Gamma {
                shape: p[0],
                scale: p[1],
            },
            Family::Beta => Distribution::Beta {
                alpha: p[0],
                beta: p[1],
            },
            Family::Bernoulli => Distribution::Bernoulli { p: p[0] },
            Family::Poisson => Distribution::Poisson { lambda: p[0] },
            _ => unreachable!("{family} has vector parameters"),
        }
    }

    /// Scalar parameters as a fixed array; `None` for vector-parameter
    /// families.
    pub(crate) fn scalar_params(&self) -> Option<[f64; 2]> {
        Some(match *self {
            Distribution::Normal { mu, sigma } => [mu, sigma],
            Distribution::Gamma { shape, scale } => [shape, scale],
            Distribution::Beta { alpha, beta } => [alpha, beta],
            Distribution::Bernoulli { p } => [p, 0.0],
            Distribution::Poisson { lambda } => [lambda, 0.0],
            _ => return None,
        })
    }

    /// Log-density (or log-mass) at `x`. Values of the right ambient type but
    /// outside the support give `-inf`.
    pub fn logpdf(&self, x: &Variate) -> Result<f64, DistError> {
        let family = self.family();
        if let Some(p) = self.scalar_params() {
            let x = x.as_real().ok_or(DistError::WrongVariate {
                family,
                expected: "a scalar",
            })?;
            return Ok(kernels::scalar_logpdf(family, x, &p));
        }
        match (self, x) {
            (Distribution::MvNormalIso { mean, sigma }, Variate::Vector(v)) => {
                check_dim(mean.len(), v.len())?;
                Ok(kernels::mvnormal_logpdf(v, mean, *sigma))
            }
            (Distribution::Dirichlet { alpha }, Variate::Vector(v)) => {
                check_dim(alpha.len(), v.len())?;
                Ok(kernels::dirichlet_logpdf(v, alpha))
            }
            (Distribution::Categorical { probs }, x) => {
                let k = x.as_real().ok_or(DistError::WrongVariate {
                    family,
                    expected: "an integer category",
                })?;
                Ok(kernels::categorical_logpmf(k, probs))
            }
            _ => Err(DistError::WrongVariate {
                family,
                expected: "a vector",
            }),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Variate {
        match self {
            Distribution::Normal { mu, sigma } => Variate::Real(mu + sigma * std_normal(rng)),
            Distribution::MvNormalIso { mean, sigma } => Variate::Vector(
                mean.iter().map(|m| m + sigma * std_normal(rng)).collect(),
            ),
            Distribution::Gamma { shape, scale } => Variate::Real(sample_gamma(rng, *shape, *scale)),
            Distribution::Beta { alpha, beta } => {
                let a = sample_gamma(rng, *alpha, 1.0);
                let b = sample_gamma(rng, *beta, 1.0);
                Variate::Real(a / (a + b))
            }
            Distribution::Bernoulli { p } => Variate::Int(i64::from(rng.random::<f64>() < *p)),
            Distribution::Poisson { lambda } => {
                let draw: f64 = rand_distr::Poisson::new(*lambda)
                    .expect("validated at construction")
                    .sample(rng);
                Variate::Int(draw as i64)
            }
            Distribution::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        return Variate::Int(k as i64 + 1);
                    }
                }
                // rounding left u above the final cumulative sum
                let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
                Variate::Int(last as i64 + 1)
            }
            Distribution::Dirichlet { alpha } => {
                let g: Vec<f64> = alpha.iter().map(|&a| sample_gamma(rng, a, 1.0)).collect();
                let total: f64 = g.iter().sum();
                Variate::Vector(g.into_iter().map(|v| v / total).collect())
            }
        }
    }

    /// The bijector taking this distribution's support onto unconstrained
    /// space.
    pub fn bijector(&self) -> Result<Bijector, DistError> {
        match self {
            Distribution::Normal { .. } | Distribution::MvNormalIso { .. } => Ok(Bijector::Identity),
            Distribution::Gamma { .. } => Ok(Bijector::Log),
            Distribution::Beta { .. } => Ok(Bijector::Logit),
            Distribution::Dirichlet { alpha } => Ok(Bijector::StickBreaking { k: alpha.len() }),
            d => Err(DistError::NotDifferentiable(d.family())),
        }
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<(), DistError> {
    if expected == actual {
        Ok(())
    } else {
        Err(DistError::DimensionMismatch { expected, actual })
    }
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    rand_distr::Gamma::new(shape, scale)
        .expect("validated at construction")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-12;

    #[test]
    fn closed_form_densities() {
        let lp = Distribution::normal(0.0, 1.0).unwrap().logpdf(&Variate::Real(0.0)).unwrap();
        assert!((lp - -0.918_938_533_204_672_7).abs() < TOL);
        let g = Distribution::gamma(1.0, 1.0).unwrap();
        assert!((g.logpdf(&Variate::Real(1.0)).unwrap() - -1.0).abs() < TOL);
        assert_eq!(g.logpdf(&Variate::Real(-0.5)).unwrap(), f64::NEG_INFINITY);
        let b = Distribution::bernoulli(0.5).unwrap();
        assert!((b.logpdf(&Variate::Int(1)).unwrap() - -std::f64::consts::LN_2).abs() < TOL);
        assert_eq!(b.logpdf(&Variate::Int(2)).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn wrong_ambient_type_is_an_error() {
        let mv = Distribution::mv_normal_iso(vec![0.0; 3], 1.0).unwrap();
        assert!(matches!(
            mv.logpdf(&Variate::Vector(vec![0.0; 2])),
            Err(DistError::DimensionMismatch { expected: 3, actual: 2 })
        ));
        let n = Distribution::normal(0.0, 1.0).unwrap();
        assert!(n.logpdf(&Variate::Vector(vec![0.0])).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Distribution::normal(0.0, 0.0).is_err());
        assert!(Distribution::normal(0.0, -1.0).is_err());
        assert!(Distribution::gamma(-1.0, 1.0).is_err());
        assert!(Distribution::bernoulli(1.5).is_err());
        assert!(Distribution::categorical(vec![0.5, 0.6]).is_err());
        assert!(Distribution::categorical(vec![-0.5, 1.5]).is_err());
        assert!(Distribution::dirichlet(vec![1.0, 0.0]).is_err());
        assert!(Distribution::normal(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn degenerate_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Distribution::bernoulli(1.0).unwrap();
        let c = Distribution::categorical(vec![0.0, 1.0, 0.0]).unwrap();
        for _ in 0..1000 {
            assert_eq!(b.sample(&mut rng), Variate::Int(1));
            assert_eq!(c.sample(&mut rng), Variate::Int(2));
        }
    }

    #[test]
    fn normal_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Distribution::normal(0.0, 1.0).unwrap();
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| d.sample(&mut rng).as_real().unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn bijector_table() {
        assert_eq!(Distribution::gamma(2.0, 3.0).unwrap().bijector().unwrap(), Bijector::Log);
        assert!(matches!(
            Distribution::bernoulli(0.3).unwrap().bijector(),
            Err(DistError::NotDifferentiable(Family::Bernoulli))
        ));
        assert_eq!(
            Distribution::dirichlet(vec![1.0; 3]).unwrap().bijector().unwrap(),
            Bijector::StickBreaking { k: 3 }
        );
        assert_eq!(Distribution::beta(1.0, 2.0).unwrap().bijector().unwrap(), Bijector::Logit);
        assert_eq!(
            Distribution::normal(0.0, 2.0).unwrap().bijector().unwrap(),
            Bijector::Identity
        );
    }

    // Composite Simpson's rule over [a, b].
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn continuous_densities_normalise() {
        let cases = [
            (Distribution::normal(0.3, 1.7).unwrap(), -15.0, 15.0),
            (Distribution::gamma(2.5, 1.5).unwrap(), 0.0, 80.0),
            (Distribution::beta(2.0, 3.5).unwrap(), 0.0, 1.0),
        ];
        for (d, a, b) in cases {
            let mass = simpson(
                |x| d.logpdf(&Variate::Real(x)).unwrap().exp(),
                a,
                b,
                200_000,
            );
            assert!((mass - 1.0).abs() < 1e-6, "{d:?}: {mass}");
        }
    }

    #[test]
    fn discrete_masses_sum_to_one() {
        let b = Distribution::bernoulli(0.37).unwrap();
        let s: f64 = (0..2).map(|k| b.logpdf(&Variate::Int(k)).unwrap().exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let c = Distribution::categorical(vec![0.2, 0.5, 0.3]).unwrap();
        let s: f64 = (1..=3).map(|k| c.logpdf(&Variate::Int(k)).unwrap().exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let p = Distribution::poisson(3.2).unwrap();
        let s: f64 = (0..200).map(|k| p.logpdf(&Variate::Int(k)).unwrap().exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn change_of_variables_integrates_to_one() {
        for d in [
            Distribution::gamma(2.0, 0.7).unwrap(),
            Distribution::beta(1.5, 2.5).unwrap(),
            Distribution::normal(1.0, 0.5).unwrap(),
        ] {
            let bij = d.bijector().unwrap();
            let f = |y: f64| {
                let x = bij.inverse(&[y])[0];
                (d.logpdf(&Variate::Real(x)).unwrap() + bij.log_abs_det_jacobian_inverse(&[y])).exp()
            };
            let mass = simpson(f, -40.0, 40.0, 400_000);
            assert!((mass - 1.0).abs() < 1e-6, "{d:?}: {mass}");
        }
    }

    fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn sampling_agrees_with_cdf() {
        use statrs::function::erf::erf;
        use statrs::function::gamma::gamma_lr;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let d = Distribution::normal(1.0, 2.0).unwrap();
        let draws = (0..n).map(|_| d.sample(&mut rng).as_real().unwrap()).collect();
        let ks = ks_statistic(draws, |x| 0.5 * (1.0 + erf((x - 1.0) / (2.0 * 2f64.sqrt()))));
        assert!(ks < 0.01, "normal ks {ks}");
        let d = Distribution::gamma(2.5, 1.5).unwrap();
        let draws = (0..n).map(|_| d.sample(&mut rng).as_real().unwrap()).collect();
        let ks = ks_statistic(draws, |x| gamma_lr(2.5, x / 1.5));
        assert!(ks < 0.01, "gamma ks {ks}");
    }
}
