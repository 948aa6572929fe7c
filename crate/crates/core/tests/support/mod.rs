//! Oracle checks shared by the test suites. Each returns a one-line summary
//! and panics on the first disagreement.
#![allow(dead_code)]

pub mod collision;
pub mod gating;
pub mod kinematics;
pub mod persistence;
pub mod session;
pub mod zoh;
