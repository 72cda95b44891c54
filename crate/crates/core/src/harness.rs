//! Wall-clock timing for the benchmark subcommand and the speedup check.

use std::hint::black_box;
use std::time::Instant;

use statrs::statistics::{Data, OrderStatistics};

use crate::inference::{chain_rng, hmc_sample, sample_prior, HmcConfig, SampleError};
use crate::interpreter::{Context, EvalError, Model};
use crate::trace::{specialize, TraceError, VarInfo};

/// Median and interquartile range of repeated measurements, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub median: f64,
    pub iqr: f64,
    pub samples: Vec<f64>,
}

impl Timing {
    pub fn from_samples(samples: Vec<f64>) -> Timing {
        let mut data = Data::new(samples.clone());
        Timing {
            median: data.median(),
            iqr: data.interquartile_range(),
            samples,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTiming {
    pub evals: usize,
    pub untyped: Timing,
    pub typed: Timing,
}

impl EvalTiming {
    /// Untyped median over typed median.
    pub fn speedup(&self) -> f64 {
        self.untyped.median / self.typed.median
    }
}

fn time_evals<V: VarInfo>(m: &Model, t: &mut V, evals: usize) -> Result<f64, EvalError> {
    let mut rng = chain_rng(0, 0);
    let start = Instant::now();
    for _ in 0..evals {
        black_box(m.evaluate(t, Context::Default, &mut rng)?);
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Times `evals` re-evaluations of one prior draw on the untyped trace and
/// on its specialization, `reps` times each, interleaved.
pub fn eval_timing(m: &Model, evals: usize, reps: usize, seed: u64) -> Result<EvalTiming, HarnessError> {
    let (mut untyped, _) = sample_prior(m, &mut chain_rng(seed, 0))?;
    let mut typed = specialize(&untyped)?;
    let (mut u, mut t) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    // warm both paths once
    time_evals(m, &mut untyped, 1)?;
    time_evals(m, &mut typed, 1)?;
    for _ in 0..reps {
        u.push(time_evals(m, &mut untyped, evals)?);
        t.push(time_evals(m, &mut typed, evals)?);
    }
    Ok(EvalTiming {
        evals,
        untyped: Timing::from_samples(u),
        typed: Timing::from_samples(t),
    })
}

/// Full HMC runs, one per repetition with consecutive seeds.
pub fn hmc_timing(m: &Model, cfg: &HmcConfig, reps: usize) -> Result<Timing, HarnessError> {
    let mut samples = Vec::with_capacity(reps);
    for r in 0..reps {
        let cfg = HmcConfig {
            seed: cfg.seed + r as u64,
            ..cfg.clone()
        };
        let start = Instant::now();
        black_box(hmc_sample(m, &cfg)?);
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(Timing::from_samples(samples))
}
