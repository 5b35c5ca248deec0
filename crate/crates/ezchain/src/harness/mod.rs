//! Experiment harness: the metrics log populated by simulation runs, the
//! derived metric computations (throughput, storage, delays, the storage
//! bound), CSV emission, and the acceptance checks.

pub mod accept;
pub mod replay;

mod metrics;

pub use metrics::{
    compute_delays, compute_storage, compute_throughput, emit_csv, storage_bound_check,
    DelayReport, StorageBoundReport, StorageReport, ThroughputReport,
};

use crate::crypto::Digest;
use crate::types::{Address, Tick, Txns};

/// Everything a run records. Append-only; all sizes are canonical-encoding
/// bytes and all times are ticks (1 tick = 1 ms).
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub seed: u64,
    pub total_coins: u64,
    pub round_ticks: u64,
    pub rounds: Vec<RoundRecord>,
    pub validations: Vec<ValidationRecord>,
    pub transfers: Vec<TransferRecord>,
    pub confirmations: Vec<ConfirmationRecord>,
    pub adversarial: Vec<AdversarialRecord>,
    /// Replay trail: every included batch, for the independent full-history
    /// oracle.
    pub audit: Vec<AuditBatch>,
}

/// Per-round snapshot, taken when the round's block (if any) has been
/// produced and the round's deliveries have settled.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: u64,
    /// Index of the block this round produced; `None` when the elected
    /// leader was byzantine and its block was rejected.
    pub block_index: Option<u64>,
    /// Transactions inside the block's batches.
    pub txn_count: u64,
    pub block_size_bytes: u64,
    pub consensus_storage_bytes: Vec<u64>,
    /// Per account: full encoded VPB store.
    pub account_vpb_bytes: Vec<u64>,
    /// Per account: the proof-unit portion of the VPB store (the Theorem-1
    /// term; excludes bloom proofs and container overhead).
    pub account_unit_bytes: Vec<u64>,
    pub account_ck_bytes: Vec<u64>,
    /// Per account: number of held values (N_v).
    pub account_value_count: Vec<u64>,
    /// Maxima over all stored chains this round, for the storage bound.
    pub chain_units_max: u64,
    pub chain_hops_max: u64,
    pub unit_bytes_max: u64,
    pub units_per_hop_max: f64,
    pub holdings_coins: u64,
    pub in_flight_coins: u64,
}

/// One consensus node validating one block.
#[derive(Clone, Debug)]
pub struct ValidationRecord {
    pub block_index: u64,
    pub node: usize,
    pub batch_count: u64,
    pub txn_count: u64,
    pub sig_verifies: u64,
    pub hashes: u64,
    /// Informational wall time; hardware-dependent, never asserted exactly.
    pub wall_nanos: u64,
    pub valid: bool,
}

/// One value delivered peer-to-peer with its VPB.
#[derive(Clone, Debug)]
pub struct TransferRecord {
    pub round: u64,
    pub block_index: u64,
    pub txn_digest: Digest,
    pub amount: u64,
    /// Proof units in the transmitted chain.
    pub chain_units: u64,
    /// Owner segments in the transmitted chain — the CK_gap sample.
    pub chain_hops: u64,
    pub vpb_bytes: u64,
    pub accepted: bool,
    pub reason: Option<&'static str>,
}

/// One transaction from creation to final acceptance of all its values.
#[derive(Clone, Debug)]
pub struct ConfirmationRecord {
    pub round: u64,
    pub create_tick: Tick,
    pub accept_tick: Tick,
}

/// One scripted adversarial action and how the system answered it.
#[derive(Clone, Debug)]
pub struct AdversarialRecord {
    pub round: u64,
    pub script: &'static str,
    pub rejected: bool,
    pub reason: String,
}

/// One sender's included batch, in the block it landed in.
#[derive(Clone, Debug)]
pub struct AuditBatch {
    pub block_index: u64,
    pub sender: Address,
    pub txns: Txns,
}
