//! Large deviations of stationary queue lengths in subcritical generalized
//! Jackson networks.
//!
//! The crate covers the whole chain from model to numbers:
//!
//! * [`model`]: network specifications, structural checks, effective rates;
//! * [`cramer`]: log-MGFs, Cramér transforms and the aggregate costs `ψ_J`;
//! * [`local_rate`]: the local rate functions `L_J(y)`, `L(x, y)` and their
//!   delayed variants, solved as convex programs;
//! * [`path`]: action of piecewise-linear queue-length paths;
//! * [`quasipotential`]: the quasipotential `V(x)` by path optimization;
//! * [`sim`]: exact discrete-event simulation and Monte Carlo tail
//!   estimation;
//! * [`harness`]: the end-to-end verification workflow and result output.

pub mod cramer;
pub mod extended;
pub mod harness;
pub mod local_rate;
pub mod model;
pub mod path;
pub mod quasipotential;
pub mod sim;

pub use extended::ExtReal;
pub use model::{DistributionFamily, Network, NetworkSpec, StationSet, StationSpec};
