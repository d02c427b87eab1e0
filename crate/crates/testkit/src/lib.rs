//! Reference oracles and random input generators shared by the test suites.
//!
//! Everything here is written from the behavioral definitions alone, with
//! plain data types, so it never reuses the code it is checking.

pub mod delivery;
pub mod focus;
pub mod journal;
pub mod retrieval;
pub mod text;
