//! Brute-force reference computations, kept deliberately naive and separate
//! from the production code paths they cross-check. Exposed both to the test
//! suites and through the command-line `oracle` subcommands.

pub mod auction;
pub mod mpc;
pub mod mpo;
