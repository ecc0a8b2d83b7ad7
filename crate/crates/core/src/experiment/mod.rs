//! Experiment configuration and the active-learning loop that ties the other
//! modules together: data split, pretraining, selection, training, evaluation.

mod config;
mod plot;
mod run;

pub use config::{apply_override, AlConfig, DataConfig, ExperimentConfig, Seeds, Source, SplitConfig};
pub use plot::{plot_reports, plot_series, write_series_csv, Series};
pub use run::{
    arm_name, ensure_features, ensure_pretrained, prepare, run_arm, run_experiment, run_grid, run_seeds,
    split_dataset, summarize, table1_arms, table2_arms, write_summary, write_table, ArmOptions, IterationRecord,
    RunReport, Split, SummaryRow,
};
