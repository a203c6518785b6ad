//! Shared oracles and criterion checks for the integration and acceptance
//! suites.
#![allow(dead_code)]

pub mod checks;
pub mod gradcheck;
pub mod oracles;
