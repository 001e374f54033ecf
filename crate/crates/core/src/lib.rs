//! Proportional multistate lifetable engine: NCD mortality trends, the
//! 40q30 indicator, target-seeking intervention scenarios and health
//! expenditure.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod disease_model;
pub mod expenditure;
pub mod grid;
pub mod indicator;
pub mod pipeline;
pub mod pmslt;
pub mod scenario;
pub mod synth;
pub mod trend;

pub use config::RunConfig;
pub use dataset::{CountryDataset, Sex};
pub use grid::{AgeYearGrid, Period};
