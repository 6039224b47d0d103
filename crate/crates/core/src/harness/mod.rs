//! The end-to-end verification workflow and result output.

pub mod emit;
mod verify;

pub use verify::{run_verify, spec_digest, TargetResult, VerificationReport, VerifyConfig, VerifyError};
