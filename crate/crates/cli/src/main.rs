mod bench;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use trace_ppl::chain::Chain;
use trace_ppl::dsl::{parse_file, parse_model, ModelDecl};
use trace_ppl::inference::{hmc_sample, mh_sample, prior_sample, run_chains, HmcConfig, MhConfig, SampleError, SamplerStats};
use trace_ppl::interpreter::{instantiate, parse_data_json, BaseContext, Context, Model, Value};
use trace_ppl::query::{evaluate_query, parse_query, ModelRegistry};

#[derive(Parser)]
#[command(name = "trace-ppl", version, about = "Probabilistic programs with trace-based inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a model file and run the semantic checks.
    Check { file: PathBuf },
    /// Sample from a model and write the chain as CSV.
    Run(RunArgs),
    /// Evaluate a probability query such as `y = [2.0] | w = [0.5], model = m`.
    Query(QueryArgs),
    /// Time HMC runs and untyped vs typed trace evaluation on the corpus.
    Bench(bench::BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerKind {
    Hmc,
    Mh,
    Prior,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContextArg {
    Default,
    Likelihood,
    Prior,
}

#[derive(Args)]
struct RunArgs {
    /// Model source file.
    model: PathBuf,
    /// JSON object binding every model argument.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "hmc")]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 0.05)]
    step_size: f64,
    #[arg(long, default_value_t = 4)]
    leapfrog: usize,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0.1)]
    proposal_sd: f64,
    #[arg(long, env = "TRACE_PPL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Chain CSV path; defaults to `<model>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    context: ContextArg,
    /// Scale observation terms by this weight.
    #[arg(long)]
    minibatch_weight: Option<f64>,
}

#[derive(Args)]
struct QueryArgs {
    query: String,
    /// Source file with models to query in addition to the bundled corpus.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Default arguments for models from `--model-file`.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check { file } => check(&file),
        Command::Run(args) => run(&args),
        Command::Query(args) => query(&args),
        Command::Bench(args) => bench::bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_models(path: &Path) -> Result<Vec<ModelDecl>> {
    let src = read(path)?;
    parse_file(&src).map_err(|e| anyhow::anyhow!("{}:{e}", path.display()))
}

fn load_data(path: Option<&Path>) -> Result<HashMap<String, Value>> {
    match path {
        Some(p) => parse_data_json(&read(p)?).with_context(|| format!("in {}", p.display())),
        None => Ok(HashMap::new()),
    }
}

fn check(file: &Path) -> Result<()> {
    for m in load_models(file)? {
        println!("ok {} ({})", m.name, m.params.join(", "));
    }
    Ok(())
}

fn context(args: &RunArgs) -> Result<Context> {
    let base = match args.context {
        ContextArg::Default => BaseContext::Default,
        ContextArg::Likelihood => BaseContext::Likelihood,
        ContextArg::Prior => BaseContext::Prior,
    };
    Ok(match (args.minibatch_weight, base) {
        (Some(w), _) => Context::minibatch(base, w)?,
        (None, BaseContext::Default) => Context::Default,
        (None, BaseContext::Likelihood) => Context::Likelihood,
        (None, BaseContext::Prior) => Context::Prior,
    })
}

fn sample(m: &Model, args: &RunArgs, ctx: Context, stream: u64) -> Result<(Chain, SamplerStats), SampleError> {
    match args.sampler {
        SamplerKind::Hmc => hmc_sample(
            m,
            &HmcConfig {
                step_size: args.step_size,
                n_leapfrog: args.leapfrog,
                n_iters: args.iters,
                seed: args.seed,
                stream,
                context: ctx,
            },
        ),
        SamplerKind::Mh => mh_sample(
            m,
            &MhConfig {
                n_iters: args.iters,
                seed: args.seed,
                stream,
                context: ctx,
                ..MhConfig::new(args.proposal_sd)
            },
        ),
        SamplerKind::Prior => prior_sample(m, args.iters, args.seed, stream),
    }
}

fn chain_path(base: &Path, i: usize, n: usize) -> PathBuf {
    if n == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}_chain{i}.csv"))
}

fn run(args: &RunArgs) -> Result<()> {
    let src = read(&args.model)?;
    let decl = parse_model(&src).map_err(|e| anyhow::anyhow!("{}:{e}", args.model.display()))?;
    let m = instantiate(&decl, load_data(args.data.as_deref())?)?;
    let ctx = context(args)?;
    if args.chains == 0 {
        bail!("--chains must be at least 1");
    }
    let results = run_chains(args.chains, |i| sample(&m, args, ctx, i));
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.csv", decl.name)));
    for (i, r) in results.into_iter().enumerate() {
        let (chain, stats) = r?;
        let path = chain_path(&out, i, args.chains);
        chain.save_csv(&path)?;
        println!(
            "chain {i}: {} iterations, acceptance {:.3}, written to {}",
            chain.n_iters(),
            stats.accepted as f64 / chain.n_iters() as f64,
            path.display()
        );
        // summaries skip the first half as warmup
        let kept = chain.tail(chain.n_iters() / 2);
        let width = kept.names().iter().map(String::len).max().unwrap_or(0).max(9);
        println!("{:<width$} {:>12} {:>12} {:>10}", "parameter", "mean", "sd", "ess");
        for (name, s) in kept.summarize() {
            println!("{name:<width$} {:>12.5} {:>12.5} {:>10.1}", s.mean, s.sd, s.ess);
        }
    }
    Ok(())
}

/// `x` with `digits` significant digits in plain notation.
fn significant(x: f64, digits: usize) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    if !(-5..15).contains(&magnitude) {
        return format!("{:.*e}", digits - 1, x);
    }
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn query(args: &QueryArgs) -> Result<()> {
    let mut registry = ModelRegistry::with_corpus();
    if let Some(file) = &args.model_file {
        let defaults = load_data(args.data.as_deref())?;
        for decl in load_models(file)? {
            let own = defaults
                .iter()
                .filter(|(k, _)| decl.params.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            registry.register(decl, own);
        }
    }
    let q = parse_query(&args.query)?;
    let v = evaluate_query(&q, &registry)?;
    println!("{} {}", v.kind, significant(v.logp, 15));
    Ok(())
}
