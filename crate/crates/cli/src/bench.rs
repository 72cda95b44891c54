use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde_json::{json, Value as Json};

use trace_ppl::corpus::{CorpusModel, Scale};
use trace_ppl::harness::{eval_timing, hmc_timing, Timing};
use trace_ppl::inference::HmcConfig;

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, required_unless_present = "all")]
    model: Option<CorpusModel>,
    /// Run every corpus model at its default scale.
    #[arg(long, conflicts_with = "model")]
    all: bool,
    /// Dimension (number of groups for hier_poisson).
    #[arg(long)]
    dim: Option<usize>,
    /// Number of observations.
    #[arg(long)]
    n: Option<usize>,
    /// HMC iterations per timed run.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 4)]
    leapfrog: usize,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Evaluations per timed repetition of the trace comparison.
    #[arg(long, default_value_t = 1000)]
    evals: usize,
    #[arg(long, env = "TRACE_PPL_SEED", default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

/// One model's benchmark configuration.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub model: CorpusModel,
    pub scale: Scale,
    pub hmc: HmcConfig,
    pub reps: usize,
    pub evals: usize,
}

impl BenchSpec {
    fn validate(&self) -> Result<()> {
        let Scale { dim, n } = self.scale;
        if dim == 0 || (n == 0 && self.model != CorpusModel::GaussianNd) {
            bail!("scale parameters must be positive for {}", self.model);
        }
        if self.reps < 3 {
            bail!("--reps must be at least 3");
        }
        if self.evals == 0 {
            bail!("--evals must be at least 1");
        }
        Ok(self.hmc.validate()?)
    }
}

fn timing_json(t: &Timing) -> Json {
    json!({ "median_s": t.median, "iqr_s": t.iqr, "samples_s": t.samples })
}

fn run_spec(spec: &BenchSpec, seed: u64) -> Result<Json> {
    spec.validate()?;
    let m = spec.model.instance(spec.scale, seed);
    let hmc = hmc_timing(&m, &spec.hmc, spec.reps)?;
    let ev = eval_timing(&m, spec.evals, spec.reps, seed)?;
    Ok(json!({
        "model": spec.model.name(),
        "dim": spec.scale.dim,
        "n": spec.scale.n,
        "reps": spec.reps,
        "hmc": {
            "iters": spec.hmc.n_iters,
            "leapfrog": spec.hmc.n_leapfrog,
            "step_size": spec.hmc.step_size,
            "time": timing_json(&hmc),
        },
        "eval": {
            "evals": ev.evals,
            "untyped": timing_json(&ev.untyped),
            "typed": timing_json(&ev.typed),
            "speedup": ev.speedup(),
        },
    }))
}

fn table(results: &[Json]) -> String {
    let mut out = format!(
        "{:<14} {:>5} {:>6} {:>18} {:>18} {:>18} {:>8}\n",
        "model", "dim", "n", "hmc s (iqr)", "untyped s (iqr)", "typed s (iqr)", "speedup"
    );
    let cell = |t: &Json| format!("{:.4} ({:.4})", t["median_s"].as_f64().unwrap_or(f64::NAN), t["iqr_s"].as_f64().unwrap_or(f64::NAN));
    for r in results {
        out += &format!(
            "{:<14} {:>5} {:>6} {:>18} {:>18} {:>18} {:>8.2}\n",
            r["model"].as_str().unwrap_or(""),
            r["dim"].as_u64().unwrap_or(0),
            r["n"].as_u64().unwrap_or(0),
            cell(&r["hmc"]["time"]),
            cell(&r["eval"]["untyped"]),
            cell(&r["eval"]["typed"]),
            r["eval"]["speedup"].as_f64().unwrap_or(f64::NAN),
        );
    }
    out
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let models: Vec<CorpusModel> = match args.model {
        Some(m) => vec![m],
        None => CorpusModel::ALL.to_vec(),
    };
    let mut results = Vec::new();
    for model in models {
        let default = model.default_scale();
        let spec = BenchSpec {
            model,
            scale: Scale {
                dim: args.dim.unwrap_or(default.dim),
                n: args.n.unwrap_or(default.n),
            },
            hmc: HmcConfig {
                n_leapfrog: args.leapfrog,
                n_iters: args.iters,
                seed: args.seed,
                ..HmcConfig::new(args.step_size.unwrap_or(model.default_step_size()))
            },
            reps: args.reps,
            evals: args.evals,
        };
        results.push(run_spec(&spec, args.seed)?);
    }
    let report = json!({ "schema": 1, "results": results });
    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", table(&results));
    }
    Ok(())
}
