//! Configuration files, metric logs, experiment presets and the
//! interpolation fidelity study.

pub mod config;
pub mod fidelity;
pub mod log;
pub mod presets;

pub use config::{render_pairs, PoseData, SavedModel, Settings};
pub use fidelity::{
    run_fidelity, spearman, FidelityOptions, FidelityReport, FidelityRow, FIDELITY_FRACTIONS,
};
pub use log::{read_log, LogRow, MetricLog};
pub use presets::{
    preset_runs, run_preset, run_settings, summary_table, DataStore, PresetOptions, RunSummary,
    PRESETS,
};
