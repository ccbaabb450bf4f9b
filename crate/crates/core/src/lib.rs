//! Safety-guided imitation learning: reachability value functions on grids,
//! disturbance-injected demonstration collection, MLP behaviour cloning,
//! a value-function safety filter and a closed-loop benchmark.

pub mod bench;
pub mod cli;
pub mod collect;
pub mod envmodels;
pub mod experts;
pub mod gridcore;
pub mod persist;
pub mod policy;
pub mod reach;
pub mod report;
pub mod shield;
