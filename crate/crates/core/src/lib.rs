//! A probabilistic programming engine: a tilde-notation model language, a
//! two-phase execution trace, contextual evaluation, gradient-based and
//! Metropolis samplers, and a probability-query language.
//!
//! ```
//! use trace_ppl::{parse_model, instantiate, Context, UntypedTrace, Value};
//! use trace_ppl::inference::chain_rng;
//!
//! let decl = parse_model("model m(y) {\n  mu ~ Normal(0.0, 1.0)\n  y ~ Normal(mu, 1.0)\n}").unwrap();
//! let model = instantiate(&decl, [("y".to_string(), Value::Real(0.5))].into()).unwrap();
//! let mut trace = UntypedTrace::new();
//! let lp = model.evaluate(&mut trace, Context::Default, &mut chain_rng(0, 0)).unwrap();
//! assert!(lp.is_finite());
//! ```

pub mod addressing;
pub mod autodiff;
pub mod chain;
pub mod corpus;
pub mod distributions;
pub mod dsl;
pub mod harness;
pub mod inference;
pub mod interpreter;
pub(crate) mod numeric;
pub mod query;
pub mod trace;

pub use addressing::VarName;
pub use chain::{Chain, ChainMeta};
pub use distributions::{Distribution, Family, Variate};
pub use dsl::{parse_model, pretty_print, ModelDecl};
pub use interpreter::{instantiate, BaseContext, Context, Matrix, Model, Value};
pub use query::{QueryKind, QueryValue};
pub use trace::{specialize, TypedTrace, UntypedTrace, VarInfo};
