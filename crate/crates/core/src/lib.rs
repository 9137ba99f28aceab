//! Simulator for Byzantine-resilient distributed SGD with replicated
//! parameter servers.
//!
//! Correct servers aggregate worker gradients with minimum-diameter averaging
//! (MDA) and periodically pull each other's models together with a
//! coordinate-wise median. Workers either take a median of a quorum of server
//! models (asynchronous mode) or pull one model per step through two filters
//! (synchronous mode). The [`simnet`] driver runs the whole deployment in
//! lock-step rounds from a single master seed, so every trace is reproducible.
//!
//! ```
//! use byzsgd::{aggregation, ParamVector};
//!
//! let grads = vec![
//!     ParamVector::from(vec![1.0]),
//!     ParamVector::from(vec![1.1]),
//!     ParamVector::from(vec![-50.0]),
//! ];
//! let agg = aggregation::mda(&grads, 1).unwrap();
//! assert!((agg[0] - 1.05).abs() < 1e-12);
//! ```

pub mod adversary;
pub mod aggregation;
pub mod error;
pub mod harness;
pub mod protocol;
pub mod schedule;
pub mod simnet;
pub mod task;
pub mod topology;
pub mod vector;

pub use aggregation::{coordwise_diameter_sum, l2_diameter, mda, median, quantile, Gar};
pub use error::{Error, Result};
pub use harness::{emit_csv, load_config, run_acceptance, save_config, CheckReport, Experiment};
pub use schedule::{compute_gather_period, learning_rate, LrSchedule};
pub use task::{measure_variance_norm_ratio, AssumptionReport, LogisticSpec, Task, TaskKind};
pub use topology::{validate_topology, Admission, Mode, RawTopology, Topology, TopologyWarning};
pub use vector::ParamVector;
