//! Metrics, cross-seed aggregation, block-wise probing and table emission.

mod aggregate;
mod metrics;
mod probe;
mod report;

pub use aggregate::{aggregate_seeds, F1Stats, SeedAggregate};
pub use metrics::{f1_outcome, f1_score, rmse, Confusion, F1Outcome};
pub use probe::{blockwise_probe, stack_blocks, BlockProbeResult, ProbeConfig, ProbeReport, WeightedProbeResult};
pub use report::{
    parse_table_json, BlockwiseRow, BlockwiseTable, LatexOptions, RowLabel, TransferRow, TransferTable,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("metric over an empty set")]
    Empty,
    #[error("inconsistent metrics across seeds: {0}")]
    InconsistentMetrics(String),
    #[error("block corpora disagree: {0}")]
    InconsistentBlocks(String),
}
