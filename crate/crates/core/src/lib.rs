//! editlab-core: a desk-scale laboratory for locate-then-edit model editing.
//!
//! The crate wires four layers together:
//!
//! - [`model`]: a deterministic decoder-only toy transformer whose per-layer
//!   MLP output projections are editable, with hidden-state capture,
//!   teacher-forced scoring, and greedy decoding.
//! - [`edit`]: key/target collection, the ridge-regularized closed-form
//!   weight update, and multi-layer batch editing with residual spreading.
//! - [`metrics`]: ground-truth specificity metrics (S/T/C accuracy) and
//!   ground-truth-free ones (last-token KL divergence, top-k support
//!   overlap).
//! - [`stats`] and [`harness`]: Kendall's tau, coverage, standard deviation,
//!   rank stability, dataset I/O, and a lambda-sweep runner that emits
//!   CSV/JSON tables.
//!
//! Per-query work (key collection, metric evaluation) is data-parallel via
//! rayon under the default `parallel` feature; disabling it yields an
//! identical sequential build.

pub mod edit;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod par;
pub mod stats;

#[cfg(test)]
pub(crate) mod testutil;

pub use model::{ModelConfig, ModelError, TokenId, ToyTransformer, Vocab};
