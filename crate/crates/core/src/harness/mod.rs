//! Sampling harness, multi-step simulator and benchmarks.

mod report;
mod single;

pub mod bench;
pub mod multi;
pub mod synthetic;

pub use bench::{run_bench, BenchConfig, BenchRow, BenchTable, BestRow};
pub use multi::{
    multi_step_error, run_multi_step, sequence_l1, target_joint, MultiStepConfig, TreeEnumerator,
};
pub use report::{RunReport, TimingSummary};
pub use single::{run_single_step, verify_records, VerifyRecord, CHUNK};
pub use synthetic::SyntheticModelPair;
