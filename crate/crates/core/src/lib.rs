//! Split-conformal prediction for graph node classification with
//! similarity-navigated score aggregation.
//!
//! The pipeline is post-hoc: given class probabilities, node features and a
//! graph, [`scores`] computes APS/RAPS non-conformity scores, [`propagate`]
//! mixes each node's scores with those of feature-similar and adjacent nodes,
//! [`conformal`] calibrates a threshold and builds prediction sets, and
//! [`metrics`] evaluates them. [`harness`] wraps this in the repeated
//! random-split protocol.

pub mod conformal;
pub mod error;
pub mod graph;
pub mod harness;
pub mod matrixio;
pub mod metrics;
pub mod numeric;
pub mod propagate;
pub mod scores;

pub use error::{Error, Result};
