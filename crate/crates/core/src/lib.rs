//! Few-shot fine-grained entity typing over a frozen masked language model.
//!
//! A learned correlation matrix maps the model's distribution at a cloze
//! mask onto a label hierarchy, regularized so children stay close to their
//! parents and siblings stay apart. Training data is augmented with new
//! same-type mentions produced by multi-mask infilling.
//!
//! ```
//! use fet_core::backend::TokenProvider;
//! use fet_core::fixture::newspaper;
//! use fet_core::generator::generate_instances;
//! use fet_core::prompts::TemplateSpec;
//!
//! let fx = newspaper();
//! let spec = TemplateSpec::default();
//! let out = generate_instances(&fx.oracle, &spec, &fx.example, fx.type_word, 2, 10, &Default::default()).unwrap();
//! let surfaces: Vec<_> = out.iter().map(|g| g.surface.as_str()).collect();
//! assert_eq!(surfaces, ["China Daily", "Reuters"]);
//! # let _ = fx.oracle.vocab();
//! ```

pub mod backend;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod generator;
pub mod hierarchy;
pub mod interpreter;
pub mod prompts;
pub mod trainer;

pub use error::{Error, ProviderError, Result};
