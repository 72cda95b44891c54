//! Samplers: prior sampling, random-walk Metropolis–Hastings and static
//! Hamiltonian Monte Carlo.
//!
//! Every sampler starts from a prior draw on an [`UntypedTrace`], then
//! specializes it and performs all further evaluations on the resulting
//! [`TypedTrace`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::addressing::VarName;
use crate::autodiff::{gradient_logp, GradientError};
use crate::chain::{Chain, ChainError, ChainMeta};
use crate::distributions::Variate;
use crate::interpreter::{Context, EvalError, EvalOptions, Instrumentation, Model};
use crate::trace::{specialize, TraceError, TypedTrace, UntypedTrace, VarInfo};

/// Attempts at finding an initial prior draw with finite log density.
const INIT_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("not differentiable: `{0}` is discrete")]
    NotDifferentiable(VarName),
    #[error("no prior draw with finite log density in {0} attempts")]
    NoValidStart(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcConfig {
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub n_iters: usize,
    pub seed: u64,
    /// Independent random stream for this chain.
    pub stream: u64,
    pub context: Context,
}

impl HmcConfig {
    pub fn new(step_size: f64) -> Self {
        Self {
            step_size,
            n_leapfrog: 4,
            n_iters: 2000,
            seed: 0,
            stream: 0,
            context: Context::Default,
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(SampleError::Config(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.n_leapfrog == 0 || self.n_iters == 0 {
            return Err(SampleError::Config("leapfrog steps and iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhConfig {
    /// Standard deviation of the Gaussian random walk on continuous
    /// coordinates. Discrete coordinates move by ±1.
    pub proposal_sd: f64,
    pub n_iters: usize,
    pub seed: u64,
    pub stream: u64,
    /// Propose in unconstrained space. When false, support constraints are
    /// left to the model (densities of −∞ or explicit `reject`).
    pub linked: bool,
    pub context: Context,
    /// Record per-statement counts of every evaluation in the stats.
    pub instrument: bool,
}

impl MhConfig {
    pub fn new(proposal_sd: f64) -> Self {
        Self {
            proposal_sd,
            n_iters: 2000,
            seed: 0,
            stream: 0,
            linked: true,
            context: Context::Default,
            instrument: false,
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.proposal_sd.is_finite() && self.proposal_sd > 0.0) {
            return Err(SampleError::Config(format!(
                "proposal sd must be positive, got {}",
                self.proposal_sd
            )));
        }
        if self.n_iters == 0 {
            return Err(SampleError::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub untyped_evals: u64,
    pub typed_evals: u64,
    pub accepted: u64,
    pub diverged: u64,
    /// Proposals whose evaluation stopped at `reject`.
    pub early_rejections: u64,
    /// Statement executions after the `reject` in those evaluations.
    pub post_reject_executions: u64,
}

/// A position with its log density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub theta: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub end: Point,
    pub momentum: Vec<f64>,
    pub diverged: bool,
}

pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One Default-context evaluation on a fresh untyped trace.
pub fn sample_prior<R: Rng + ?Sized>(m: &Model, rng: &mut R) -> Result<(UntypedTrace, f64), EvalError> {
    let mut t = UntypedTrace::new();
    let lp = m.evaluate(&mut t, Context::Default, rng)?;
    Ok((t, lp))
}

fn initial_trace<R: Rng + ?Sized>(
    m: &Model,
    rng: &mut R,
    stats: &mut SamplerStats,
) -> Result<UntypedTrace, SampleError> {
    for _ in 0..INIT_ATTEMPTS {
        stats.untyped_evals += 1;
        match sample_prior(m, rng) {
            Ok((t, lp)) if lp.is_finite() => return Ok(t),
            Ok(_) => {}
            Err(e) if e.is_domain() => {}
            Err(e) => return Err(e.into()),
        }
    }
    Err(SampleError::NoValidStart(INIT_ATTEMPTS))
}

/// Flattened constrained-space column names for a trace snapshot.
pub fn column_names(snapshot: &[(VarName, Variate)]) -> Vec<String> {
    let mut names = Vec::new();
    for (vn, v) in snapshot {
        match v {
            Variate::Vector(xs) => names.extend((1..=xs.len()).map(|i| vn.child(&[i]).to_string())),
            _ => names.push(vn.to_string()),
        }
    }
    names
}

fn flatten_snapshot(snapshot: &[(VarName, Variate)], out: &mut Vec<f64>) {
    out.clear();
    for (_, v) in snapshot {
        match v {
            Variate::Real(x) => out.push(*x),
            Variate::Int(i) => out.push(*i as f64),
            Variate::Vector(xs) => out.extend_from_slice(xs),
        }
    }
}

/// Leapfrog integration of Hamiltonian dynamics for `logp`, starting at
/// `start` with momentum `p`. `grad_fn` returns the log density and its
/// gradient; a `None` or non-finite result ends the trajectory as diverged.
pub fn leapfrog<F>(mut grad_fn: F, start: &Point, p: &[f64], eps: f64, steps: usize) -> Trajectory
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut theta = start.theta.clone();
    let mut p = p.to_vec();
    let mut grad = start.grad.clone();
    let mut logp = start.logp;
    for (pi, g) in p.iter_mut().zip(&grad) {
        *pi += 0.5 * eps * g;
    }
    for step in 0..steps {
        for (x, pi) in theta.iter_mut().zip(&p) {
            *x += eps * pi;
        }
        match grad_fn(&theta) {
            Some((lp, g)) if lp.is_finite() && g.iter().all(|v| v.is_finite()) => {
                logp = lp;
                grad = g;
            }
            _ => {
                return Trajectory {
                    end: Point {
                        theta,
                        logp: f64::NEG_INFINITY,
                        grad,
                    },
                    momentum: p,
                    diverged: true,
                }
            }
        }
        let scale = if step + 1 == steps { 0.5 } else { 1.0 };
        for (pi, g) in p.iter_mut().zip(&grad) {
            *pi += scale * eps * g;
        }
    }
    Trajectory {
        end: Point { theta, logp, grad },
        momentum: p,
        diverged: false,
    }
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|x| x * x).sum::<f64>()
}

/// Static HMC in unconstrained space. Draws are recorded in constrained
/// space; the full chain including warmup is returned.
pub fn hmc_sample(m: &Model, cfg: &HmcConfig) -> Result<(Chain, SamplerStats), SampleError> {
    cfg.validate()?;
    let mut rng = chain_rng(cfg.seed, cfg.stream);
    let mut stats = SamplerStats::default();
    let mut t = TypedTrace::default();
    let mut current = None;
    for _ in 0..INIT_ATTEMPTS {
        let u = initial_trace(m, &mut rng, &mut stats)?;
        t = specialize(&u)?;
        if let Some(vn) = t.first_discrete() {
            return Err(SampleError::NotDifferentiable(vn.clone()));
        }
        t.link_all()?;
        let theta = t.flatten()?;
        stats.typed_evals += 1;
        let r = gradient_logp(m, &mut t, cfg.context, &theta)?;
        if let (Some(grad), true) = (r.grad, r.logp.is_finite()) {
            current = Some(Point {
                theta,
                logp: r.logp,
                grad,
            });
            break;
        }
    }
    let mut current = current.ok_or(SampleError::NoValidStart(INIT_ATTEMPTS))?;
    let names = column_names(&t.snapshot());
    let meta = ChainMeta {
        sampler: "hmc".into(),
        seed: cfg.seed,
        model: m.name().to_string(),
    };
    let mut chain = Chain::new(names, meta)?;
    let mut row = Vec::new();
    let dim = current.theta.len();
    for _ in 0..cfg.n_iters {
        let p: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let h0 = -current.logp + kinetic(&p);
        let mut failure = None;
        let traj = leapfrog(
            |theta| {
                stats.typed_evals += 1;
                match gradient_logp(m, &mut t, cfg.context, theta) {
                    Ok(r) => r.grad.map(|g| (r.logp, g)),
                    Err(e) => {
                        failure = Some(e);
                        None
                    }
                }
            },
            &current,
            &p,
            cfg.step_size,
            cfg.n_leapfrog,
        );
        if let Some(e) = failure {
            return Err(e.into());
        }
        let h1 = -traj.end.logp + kinetic(&traj.momentum);
        if traj.diverged || !h1.is_finite() {
            stats.diverged += 1;
        } else if rng.random::<f64>().ln() < h0 - h1 {
            stats.accepted += 1;
            current = traj.end;
        }
        t.unflatten(&current.theta)?;
        flatten_snapshot(&t.snapshot(), &mut row);
        chain.push(&row, current.logp)?;
    }
    Ok((chain, stats))
}

/// Random-walk Metropolis–Hastings with a joint proposal over all
/// coordinates.
pub fn mh_sample(m: &Model, cfg: &MhConfig) -> Result<(Chain, SamplerStats), SampleError> {
    cfg.validate()?;
    let mut rng = chain_rng(cfg.seed, cfg.stream);
    let mut stats = SamplerStats::default();
    let u = initial_trace(m, &mut rng, &mut stats)?;
    let mut t = specialize(&u)?;
    if cfg.linked {
        let continuous: Vec<String> = t
            .real_groups()
            .iter()
            .filter(|g| !g.names().is_empty())
            .map(|g| g.symbol().to_string())
            .collect();
        let refs: Vec<&str> = continuous.iter().map(String::as_str).collect();
        t.link(&refs)?;
    }
    let (mut theta, discrete) = t.state();
    let names = column_names(&t.snapshot());
    let meta = ChainMeta {
        sampler: "mh".into(),
        seed: cfg.seed,
        model: m.name().to_string(),
    };
    let mut chain = Chain::new(names, meta)?;

    let evaluate = |t: &mut TypedTrace, stats: &mut SamplerStats, rng: &mut ChaCha8Rng| {
        stats.typed_evals += 1;
        let mut ins = cfg.instrument.then(|| Instrumentation::new(m));
        let opts = EvalOptions {
            fixed: None,
            instrumentation: ins.as_mut(),
        };
        let lp = match m.evaluate_with(t, cfg.context, rng, opts) {
            Ok(lp) => lp,
            Err(e) if e.is_domain() => f64::NEG_INFINITY,
            Err(e) => return Err(SampleError::from(e)),
        };
        if let Some(after) = ins.and_then(|ins| ins.after_reject(m.decl())) {
            stats.early_rejections += 1;
            stats.post_reject_executions += after;
        }
        Ok(lp)
    };

    let mut lp = evaluate(&mut t, &mut stats, &mut rng)?;
    let mut proposal = theta.clone();
    let mut row = Vec::new();
    for _ in 0..cfg.n_iters {
        for ((x, &cur), &disc) in proposal.iter_mut().zip(&theta).zip(&discrete) {
            *x = if disc {
                cur + if rng.random::<bool>() { 1.0 } else { -1.0 }
            } else {
                cur + cfg.proposal_sd * rng.sample::<f64, _>(StandardNormal)
            };
        }
        t.set_state(&proposal)?;
        let lp_new = evaluate(&mut t, &mut stats, &mut rng)?;
        if lp_new > f64::NEG_INFINITY && rng.random::<f64>().ln() < lp_new - lp {
            stats.accepted += 1;
            std::mem::swap(&mut theta, &mut proposal);
            lp = lp_new;
        } else {
            t.set_state(&theta)?;
        }
        flatten_snapshot(&t.snapshot(), &mut row);
        chain.push(&row, lp)?;
    }
    Ok((chain, stats))
}

/// Independent draws from the prior, one untyped evaluation each.
pub fn prior_sample(m: &Model, n_iters: usize, seed: u64, stream: u64) -> Result<(Chain, SamplerStats), SampleError> {
    if n_iters == 0 {
        return Err(SampleError::Config("iterations must be at least 1".into()));
    }
    let mut rng = chain_rng(seed, stream);
    let mut stats = SamplerStats::default();
    let mut chain: Option<Chain> = None;
    let mut row = Vec::new();
    for _ in 0..n_iters {
        stats.untyped_evals += 1;
        let (t, lp) = sample_prior(m, &mut rng)?;
        let snap = t.snapshot();
        let c = match &mut chain {
            Some(c) => c,
            None => chain.insert(Chain::new(
                column_names(&snap),
                ChainMeta {
                    sampler: "prior".into(),
                    seed,
                    model: m.name().to_string(),
                },
            )?),
        };
        flatten_snapshot(&snap, &mut row);
        if row.len() != c.n_params() {
            return Err(SampleError::Config(
                "the model draws a different number of values on different runs".into(),
            ));
        }
        stats.accepted += 1;
        c.push(&row, lp)?;
    }
    Ok((chain.expect("at least one iteration"), stats))
}

/// Runs `f(i)` for chains `0..n` on separate threads, in chain order.
pub fn run_chains<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..n).map(|i| s.spawn(move || f(i as u64))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}
