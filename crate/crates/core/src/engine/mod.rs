//! The online VQ-attention layer.
//!
//! An [`OvqState`] holds a growing key/value dictionary with integer counts.
//! Each chunk is first read out (dictionary plus the raw, causally masked
//! chunk) and then folded into the dictionary: the least-covered keys seed
//! new centroids, every other token is merged into its nearest centroid with
//! an adaptive `1 / count` learning rate.

mod config;
mod growth;
mod snapshot;
mod state;

pub use config::{Ablation, Fault, OvqConfig, Similarity, UpdateRule};
pub use growth::{dictionary_target, growth_count, linear_growth_budget, new_centroid_budget};
pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use state::{continue_sequence, forward_sequence, ovq_forward_sequence, ChunkUpdateRecord, OvqState, SequenceRun};
