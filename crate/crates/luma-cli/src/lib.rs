pub mod config;
pub mod subsets;
pub mod experiment;
pub mod report;
