//! Experiment harness: data loading, the toy generator, experiment drivers
//! and report I/O.

pub mod experiment;
pub mod loader;
pub mod report;
pub mod toy;

pub use experiment::{
    run_benchmark, run_toy_ard_experiment, split, DataSource, ExperimentConfig, ReferenceKind, Split,
    ToyExperimentConfig,
};
pub use loader::{load_csv, load_with_recipe, CategoricalPolicy, Loaded, Recipe};
pub use report::{emit_report, load_report, ResultReport, SCHEMA_VERSION};
pub use toy::{gen_toy, ToySpec};
