//! Configuration, execution and reporting for the `lipbound` binary.

pub mod config;
pub mod corpus;
pub mod report;
pub mod run;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
