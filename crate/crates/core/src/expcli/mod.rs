//! Experiment orchestration: configuration presets, the seed plan, the
//! sequential protocol, the compression sweep and table/plot emission.

mod config;
mod plots;
mod protocol;
mod records;
mod report;
mod seeds;

pub use config::{ExperimentConfig, Preset, SEED_ENV};
pub use plots::{
    emit_plots, plot_data, read_plot_csv, render_svg, write_plot_csv, PlotData, PlotKind,
};
pub use protocol::{
    config_hash, data_path, gen_data, load_or_generate, planned_specs, records_per_cell,
    run_protocol, sweep_compression, Manifest, RunOptions, RunSummary, MANIFEST, MEMORY, RESULTS,
    SWEEP, TIMINGS,
};
pub use records::{format_mib, read_csv, write_csv, MemoryRecord, ResultRecord, TimingRecord};
pub use report::{
    emit_tables, format_gamma, median, medians, scenario_order, strategy_name, Table, TableShape,
};
pub use seeds::{cell_seeds, seed_plan, step_seeds, Cell, ComponentSeeds};
