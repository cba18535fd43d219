//! Bayesian group testing toolkit.
//!
//! Identifies defective items from noisy pooled tests. The crate covers the
//! full pipeline: random biregular pooling designs ([`design`]), the noisy-OR
//! test channel ([`channel`]), exact posterior enumeration for small
//! instances ([`oracle`]), loopy belief propagation for large ones ([`bp`]),
//! risk-minimising decision rules ([`decision`]), ROC/AUC evaluation
//! ([`metrics`]) and population dynamics for the large-system limit of the
//! posterior marginal distributions ([`popdyn`]).

pub mod bp;
pub mod channel;
pub mod decision;
pub mod design;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod popdyn;
pub mod rng;

pub use error::{GtError, Result};
