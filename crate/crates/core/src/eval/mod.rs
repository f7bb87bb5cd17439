//! Evaluation protocol, baselines and diagnostics.

mod baselines;
mod diagnostics;
mod pipeline;
mod probe;
mod protocol;

pub use baselines::{global_finetune, nearest_neighbors, ttt_adapt, TttConfig};
pub use diagnostics::{centroid_vs_sum_selection, diagonal_row_min_fraction, expert_cluster_matrix, pass_at_n, selection_agreement};
pub use pipeline::{prepare, read_split, run_comparison, train_experts, tune_beta, write_catalog, EvalContext, EvalReport, Experts, Method, MethodResult, Prepared, SPLIT_FILE};
pub use probe::{dump_instance, probe_sweep, proposition_probe, random_instance, run_instance, ProbeInstance, ProbeOutcome, ProbeSetup, PropositionProbe};
pub use protocol::{split_holdout, EvalProtocol, Split};
