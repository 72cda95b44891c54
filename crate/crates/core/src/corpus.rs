//! Bundled benchmark models with seeded synthetic datasets.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution as _, Poisson, StandardNormal};

use crate::dsl::{parse_model, ModelDecl};
use crate::inference::chain_rng;
use crate::interpreter::{instantiate, Matrix, Model, Value};
use crate::numeric::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorpusModel {
    GaussianNd,
    GaussUnknown,
    Linreg,
    Logreg,
    HierPoisson,
}

impl CorpusModel {
    pub const ALL: [CorpusModel; 5] = [
        CorpusModel::GaussianNd,
        CorpusModel::GaussUnknown,
        CorpusModel::Linreg,
        CorpusModel::Logreg,
        CorpusModel::HierPoisson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorpusModel::GaussianNd => "gaussian_nd",
            CorpusModel::GaussUnknown => "gauss_unknown",
            CorpusModel::Linreg => "linreg",
            CorpusModel::Logreg => "logreg",
            CorpusModel::HierPoisson => "hier_poisson",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            CorpusModel::GaussianNd => include_str!("../models/gaussian_nd.ppl"),
            CorpusModel::GaussUnknown => include_str!("../models/gauss_unknown.ppl"),
            CorpusModel::Linreg => include_str!("../models/linreg.ppl"),
            CorpusModel::Logreg => include_str!("../models/logreg.ppl"),
            CorpusModel::HierPoisson => include_str!("../models/hier_poisson.ppl"),
        }
    }

    pub fn decl(self) -> ModelDecl {
        parse_model(self.source()).expect("bundled models parse")
    }

    /// Desk-scale sizes used by the benchmark harness.
    pub fn default_scale(self) -> Scale {
        match self {
            CorpusModel::GaussianNd => Scale { dim: 100, n: 0 },
            CorpusModel::GaussUnknown => Scale { dim: 1, n: 1000 },
            CorpusModel::Linreg => Scale { dim: 5, n: 100 },
            CorpusModel::Logreg => Scale { dim: 20, n: 500 },
            CorpusModel::HierPoisson => Scale { dim: 5, n: 50 },
        }
    }

    /// HMC step size that mixes reasonably at the default scale.
    pub fn default_step_size(self) -> f64 {
        match self {
            CorpusModel::GaussianNd => 0.3,
            CorpusModel::GaussUnknown => 0.02,
            CorpusModel::Linreg => 0.05,
            CorpusModel::Logreg => 0.05,
            CorpusModel::HierPoisson => 0.02,
        }
    }

    /// Synthetic data drawn from the model's generative story. `dim` is the
    /// dimension (number of groups for `hier_poisson`), `n` the number of
    /// observations.
    pub fn dataset(self, scale: Scale, seed: u64) -> HashMap<String, Value> {
        let mut rng = chain_rng(seed, 0);
        let mut normal = move || -> f64 { rng.sample(StandardNormal) };
        let Scale { dim, n } = scale;
        let design = |normal: &mut dyn FnMut() -> f64| {
            Matrix::new(n, dim, (0..n * dim).map(|_| normal()).collect()).expect("sized")
        };
        let mut out = HashMap::new();
        match self {
            CorpusModel::GaussianNd => {
                out.insert("d".into(), Value::Int(dim as i64));
            }
            CorpusModel::GaussUnknown => {
                let x = (0..n).map(|_| 1.0 + 2f64.sqrt() * normal()).collect();
                out.insert("x".into(), Value::RealVector(x));
            }
            CorpusModel::Linreg => {
                let x = design(&mut normal);
                let w: Vec<f64> = (0..dim).map(|_| normal()).collect();
                let y = (0..n)
                    .map(|i| dot(&x.data()[i * dim..(i + 1) * dim], &w) + 0.5 * normal())
                    .collect();
                out.insert("X".into(), Value::RealMatrix(x));
                out.insert("y".into(), Value::RealVector(y));
            }
            CorpusModel::Logreg => {
                let x = design(&mut normal);
                let w: Vec<f64> = (0..dim).map(|_| normal() / (dim as f64).sqrt()).collect();
                let mut bern = chain_rng(seed, 1);
                let y = (0..n)
                    .map(|i| {
                        let p = logistic(dot(&x.data()[i * dim..(i + 1) * dim], &w));
                        i64::from(bern.random::<f64>() < p)
                    })
                    .collect();
                out.insert("X".into(), Value::RealMatrix(x));
                out.insert("y".into(), Value::IntVector(y));
            }
            CorpusModel::HierPoisson => {
                let groups: Vec<f64> = (0..dim).map(|_| 0.5 * normal()).collect();
                let idx: Vec<i64> = (0..n).map(|i| (i % dim) as i64 + 1).collect();
                let x: Vec<f64> = (0..n).map(|_| normal()).collect();
                let mut counts = chain_rng(seed, 1);
                let y = (0..n)
                    .map(|i| {
                        let lambda = (1.0 + groups[idx[i] as usize - 1] + 0.3 * x[i]).exp();
                        Poisson::new(lambda).expect("positive rate").sample(&mut counts) as i64
                    })
                    .collect();
                out.insert("y".into(), Value::IntVector(y));
                out.insert("x".into(), Value::RealVector(x));
                out.insert("idx".into(), Value::IntVector(idx));
                out.insert("ns".into(), Value::Int(dim as i64));
            }
        }
        out
    }

    /// Instantiated model on its desk-scale dataset.
    pub fn instance(self, scale: Scale, seed: u64) -> Model {
        instantiate(&self.decl(), self.dataset(scale, seed)).expect("dataset matches signature")
    }

    /// Small default arguments used when a query leaves data unbound.
    pub fn query_defaults(self) -> HashMap<String, Value> {
        match self {
            CorpusModel::Linreg => HashMap::from([
                ("X".into(), Value::RealMatrix(Matrix::new(1, 2, vec![1.0, 2.0]).expect("1x2"))),
                ("y".into(), Value::RealVector(vec![2.0])),
            ]),
            CorpusModel::Logreg => HashMap::from([
                ("X".into(), Value::RealMatrix(Matrix::new(1, 2, vec![1.0, 2.0]).expect("1x2"))),
                ("y".into(), Value::IntVector(vec![1])),
            ]),
            CorpusModel::GaussianNd => self.dataset(Scale { dim: 2, n: 0 }, 0),
            CorpusModel::GaussUnknown => self.dataset(Scale { dim: 1, n: 10 }, 0),
            CorpusModel::HierPoisson => self.dataset(Scale { dim: 3, n: 12 }, 0),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl fmt::Display for CorpusModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorpusModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        CorpusModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown corpus model `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub dim: usize,
    pub n: usize,
}
