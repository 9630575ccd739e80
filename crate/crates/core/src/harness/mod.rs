//! Monte-Carlo experiments over random user draws, with CSV/JSON reporting.

mod config;
mod export;
mod run;

pub use config::{Aggregate, ScenarioConfig};
pub use export::{
    config_hash, load_json, records_csv_string, write_csv, write_json, write_oracle_csv, write_records_csv,
    write_sweep_csv, Report, CSV_HEADER,
};
pub use run::{
    mean_dbm, oracle, run_experiment, summarize, sweep, user_sampler, Experiment, GapSummary, ModeSummary,
    OracleRow, RecordStatus, RunRecord, Summary, SweepAxis, SweepRow, WORKERS_ENV,
};
