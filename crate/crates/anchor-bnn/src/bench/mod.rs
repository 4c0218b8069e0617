//! Built-in benchmark generators and the input-sensitivity screen.

pub mod materials;
pub mod mi;
pub mod one_d;

pub use materials::{
    build_materials_prior, gen_materials_datasets, rve_oracle, MaterialsSplits, SyntheticRveConfig,
};
pub use mi::{influential_subsets, mutual_information, MiEstimate};
pub use one_d::{gen_1d_dataset, Benchmark1DConfig};
