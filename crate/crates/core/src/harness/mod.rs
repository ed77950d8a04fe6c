//! Seeded replication engine for the simulation experiments.

mod config;
mod experiments;
mod records;
mod rng;
mod sampling;

pub use config::{parse_pairs, ExperimentConfig, ExperimentKind, KEYS, SEED_ENV};
pub use experiments::{
    nonequivalence_record, nonequivalence_report, run_experiment, run_linear_asymptotics, run_nonequivalence,
    run_remainder_decay, run_single_consistency, run_tv_curve, simulate, write_outputs, ExperimentOutput,
    SimulationOutcome, EXCLUSION_BUDGET, NONEQUIVALENCE_THRESHOLD,
};
pub use records::{
    fmt_f64, summarize, HistogramRow, NonequivalenceRecord, ReplicationRecord, Summarizable, SummaryLine,
    INITIALIZATION_NOTE, SCHEMA_VERSION,
};
pub use rng::{fnv1a64, stream_rng, RNG_ALGORITHM};
pub use sampling::{sample_data, DataModel};
