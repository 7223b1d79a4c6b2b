//! Ablation over nested synthetic-data fractions and its result table.

pub mod config;
pub mod run;
pub mod subsets;
pub mod table;

pub use config::{AblationConfig, DataSources, DEFAULT_FRACTIONS};
pub use run::{load_data, regenerate_table, run_ablation, run_hash, unet_seed, AblationData, AblationRun};
pub use subsets::{make_subsets, subset_size};
pub use table::{fraction_label, BestCount, Column, ColumnCount, ResultTable, Row, Tie};
