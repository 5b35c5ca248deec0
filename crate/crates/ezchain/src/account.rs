//! Account-node logic: wallet state, value selection, batching, VPB-pair
//! construction, transfer and recipient-side verification, and the
//! checkpoint mechanism that keeps proof chains short.
//!
//! The central object is the [`VpbPair`]: a value together with the evidence
//! chain a recipient needs to convince itself, peer-to-peer, that the sender
//! owns the value. The chain is a sequence of [`ProofUnit`]s — one for every
//! block whose Bloom filter reports the then-current owner — interleaved with
//! [`BloomProof`]s for the owner's false-positive blocks. A well-formed chain
//! partitions into consecutive owner segments; each segment ends with the
//! handoff transaction that passes the value to the next owner.
//!
//! Checkpoints cut these chains. A wallet records a checkpoint whenever it
//! accepts a value (it now trusts itself as owner at that height) and
//! whenever it hands a value off (it trusts the recipient as owner at the
//! inclusion height). A sender transmitting a value truncates the chain at
//! the recipient's last visible handoff, so the recipient restarts
//! verification from its own trusted cut instead of genesis. Because every
//! wallet also prunes its stored chains the same way, per-value storage
//! stays proportional to the hop count between checkpoints rather than to
//! chain age.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::bloom::BloomProof;
use crate::crypto::merkle::{merkle_verify, MtreeProof};
use crate::crypto::{hash_encoded, Digest, KeyDirectory, KeyPair};
use crate::encoding::{self, tag, Encode};
use crate::types::{AccTxn, Address, Block, GenesisAllocation, Tick, Transaction, Txns, Value};

/// One link of a value's history: the owner's full batch in one block plus
/// the Merkle proof tying the batch to that block's root.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ProofUnit {
    pub owner: Address,
    pub txns: Txns,
    pub mtree_proof: MtreeProof,
}

impl Encode for ProofUnit {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::PROOF_UNIT);
        self.owner.write(out);
        self.txns.write(out);
        self.mtree_proof.write(out);
    }

    fn encoded_len(&self) -> usize {
        1 + 32 + self.txns.encoded_len() + self.mtree_proof.encoded_len()
    }
}

/// A locally trusted cut: "at the end of block `height`, `trusted_owner`
/// owned `value`". Created only from the wallet's own verifications
/// (acceptance) or its own handoffs.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CheckPoint {
    pub value: Value,
    pub height: u64,
    pub trusted_owner: Address,
}

impl Encode for CheckPoint {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::CHECKPOINT);
        self.value.write(out);
        encoding::put_u64(out, self.height);
        self.trusted_owner.write(out);
    }

    fn encoded_len(&self) -> usize {
        1 + 17 + 8 + 32
    }
}

/// Value-Proof-BlockIndex pair: the portable ownership history of one value.
///
/// `proof[i]` is the evidence for block `block_indices[i]`; `bloom_proofs`
/// cover the owner's false-positive blocks and carry their own indices. If
/// `checkpoint` is `None` the chain starts at the genesis allocation;
/// otherwise it starts with `checkpoint.trusted_owner` owning the value at
/// the end of `checkpoint.height`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VpbPair {
    pub value: Value,
    pub proof: Vec<Arc<ProofUnit>>,
    pub block_indices: Vec<u64>,
    pub bloom_proofs: Vec<BloomProof>,
    pub checkpoint: Option<CheckPoint>,
}

impl VpbPair {
    pub fn genesis(value: Value) -> Self {
        VpbPair {
            value,
            proof: Vec::new(),
            block_indices: Vec::new(),
            bloom_proofs: Vec::new(),
            checkpoint: None,
        }
    }

    /// Number of proof units — the CK_gap sample for this chain.
    pub fn chain_len(&self) -> usize {
        self.proof.len()
    }

    fn push_unit(&mut self, height: u64, unit: Arc<ProofUnit>) {
        debug_assert!(self.block_indices.last().is_none_or(|&h| h < height));
        self.proof.push(unit);
        self.block_indices.push(height);
    }

    fn push_bloom_proof(&mut self, proof: BloomProof) {
        self.bloom_proofs.push(proof);
    }

    /// All evidence ordered by height.
    fn evidence(&self) -> BTreeMap<u64, Evidence<'_>> {
        let mut out = BTreeMap::new();
        for (i, unit) in self.proof.iter().enumerate() {
            out.insert(self.block_indices[i], Evidence::Unit(unit));
        }
        for bp in &self.bloom_proofs {
            out.insert(bp.block_index, Evidence::FalsePositive(bp));
        }
        out
    }
}

impl Encode for VpbPair {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::VPB_PAIR);
        self.value.write(out);
        encoding::put_u32(out, self.proof.len() as u32);
        for unit in &self.proof {
            unit.write(out);
        }
        encoding::put_u32(out, self.block_indices.len() as u32);
        for h in &self.block_indices {
            encoding::put_u64(out, *h);
        }
        encoding::put_list(out, &self.bloom_proofs);
        match &self.checkpoint {
            None => encoding::put_u8(out, 0),
            Some(cp) => {
                encoding::put_u8(out, 1);
                cp.write(out);
            }
        }
    }

    fn encoded_len(&self) -> usize {
        1 + 17
            + 4
            + self.proof.iter().map(|u| u.encoded_len()).sum::<usize>()
            + 4
            + 8 * self.block_indices.len()
            + encoding::list_encoded_len(&self.bloom_proofs)
            + 1
            + self.checkpoint.map_or(0, |cp| cp.encoded_len())
    }
}

enum Evidence<'a> {
    Unit(&'a ProofUnit),
    FalsePositive(&'a BloomProof),
}

/// Why a recipient refused a transfer.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum Reject {
    #[error("missing_proof")]
    MissingProof,
    #[error("bad_merkle")]
    BadMerkle,
    #[error("bad_signature")]
    BadSignature,
    #[error("bad_bloom_proof")]
    BadBloomProof,
    #[error("double_spend")]
    DoubleSpend,
    #[error("wrong_terminal")]
    WrongTerminal,
    #[error("bad_genesis")]
    BadGenesis,
}

impl Reject {
    pub fn reason(&self) -> &'static str {
        match self {
            Reject::MissingProof => "missing_proof",
            Reject::BadMerkle => "bad_merkle",
            Reject::BadSignature => "bad_signature",
            Reject::BadBloomProof => "bad_bloom_proof",
            Reject::DoubleSpend => "double_spend",
            Reject::WrongTerminal => "wrong_terminal",
            Reject::BadGenesis => "bad_genesis",
        }
    }
}

/// The wallet's checkpoint store, keyed by exact value interval.
///
/// Values only ever split, never merge, so for one exact interval later
/// checkpoints supersede earlier ones: any chain that could have been cut at
/// the older height necessarily continues through the newer one. Keeping the
/// maximum height per interval therefore loses nothing and bounds the store.
#[derive(Clone, Debug, Default)]
pub struct CheckpointStore {
    by_value: BTreeMap<Value, CheckPoint>,
}

impl CheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, cp: CheckPoint) {
        match self.by_value.get(&cp.value) {
            Some(old) if old.height > cp.height => {}
            _ => {
                self.by_value.insert(cp.value, cp);
            }
        }
    }

    /// Highest recorded height for an exact interval.
    pub fn height_of(&self, value: &Value) -> Option<u64> {
        self.by_value.get(value).map(|cp| cp.height)
    }

    /// Is there a trusted cut covering `value` with exactly this height and
    /// owner?
    pub fn matches(&self, value: &Value, height: u64, owner: &Address) -> bool {
        self.by_value.values().any(|cp| {
            cp.height == height && cp.trusted_owner == *owner && cp.value.contains(value)
        })
    }

    pub fn encoded_bytes(&self) -> u64 {
        self.by_value.values().map(|cp| cp.encoded_len() as u64).sum()
    }

    pub fn len(&self) -> usize {
        self.by_value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_value.is_empty()
    }
}

/// Walks a VPB chain's owner transitions. Used both by the verifier (against
/// the chain view) and by the sender when truncating for a recipient.
///
/// A batch transaction is the segment handoff when it is the only
/// transaction in the segment spending an interval intersecting the value,
/// and one of its values contains the whole value.
fn handoffs(vpb: &VpbPair, initial_owner: Address) -> Vec<(u64, Address, Address)> {
    let mut owner = initial_owner;
    let mut out = Vec::new();
    for (i, unit) in vpb.proof.iter().enumerate() {
        if unit.owner != owner {
            continue; // foreign or stale unit; the verifier rejects these
        }
        for txn in &unit.txns.0 {
            if txn.values.iter().any(|v| v.contains(&vpb.value)) && txn.spends(&vpb.value) {
                out.push((vpb.block_indices[i], owner, txn.recipient));
                owner = txn.recipient;
                break;
            }
        }
    }
    out
}

/// Recipient-side verification of a transfer (`txn` paying `self_addr`,
/// evidenced by `vpb`), per the six-step procedure:
///
/// 1. checkpoint cut — trust starts at a matching local checkpoint, else at
///    the genesis allocation;
/// 2. completeness — every Bloom-positive block of the current owner must
///    carry evidence at exactly that height;
/// 3. proof units — Merkle proof, leaf-batch binding, sender, signatures;
/// 4. bloom proofs — bit-exact filter reconstruction excluding the owner;
/// 5. double-spend scan — at most one spending transaction per segment, and
///    it must be the containing handoff;
/// 6. terminal — the last unit carries `txn` itself, paying the verifier.
pub fn verify_vpb(
    chain: &[Block],
    genesis: &GenesisAllocation,
    dir: &KeyDirectory,
    self_addr: &Address,
    self_checkpoints: &CheckpointStore,
    vpb: &VpbPair,
    txn: &Transaction,
) -> Result<(), Reject> {
    // structural sanity: aligned, strictly increasing unit heights
    if vpb.proof.len() != vpb.block_indices.len()
        || vpb.block_indices.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Reject::MissingProof);
    }

    // step 1: where does trust start?
    let (mut owner, start_height) = match &vpb.checkpoint {
        Some(cp) if self_checkpoints.matches(&vpb.value, cp.height, &cp.trusted_owner) => {
            (cp.trusted_owner, cp.height + 1)
        }
        Some(_) => return Err(Reject::BadGenesis),
        None => match genesis.owner_of(&vpb.value) {
            Some(owner) => (owner, 1),
            None => return Err(Reject::BadGenesis),
        },
    };

    let evidence = vpb.evidence();
    let Some((&end_height, _)) = evidence.last_key_value() else {
        return Err(Reject::WrongTerminal);
    };
    if end_height as usize >= chain.len() {
        return Err(Reject::MissingProof);
    }

    let mut last_handoff: Option<(&Transaction, u64)> = None;
    for height in start_height..=end_height {
        let block = &chain[height as usize];
        let positive = block.bloom_filter.query(&owner);
        match evidence.get(&height) {
            None => {
                // step 2: a positive block with no evidence is a gap — this
                // is exactly how a spend-then-omit double spend surfaces.
                if positive {
                    return Err(Reject::MissingProof);
                }
            }
            Some(Evidence::Unit(unit)) => {
                if !positive {
                    return Err(Reject::MissingProof);
                }
                // step 3 (intra-batch value conflicts are left to the
                // spend scan below so they surface as double_spend)
                if unit.owner != owner || unit.txns.0.iter().any(|t| t.sender != owner) {
                    return Err(Reject::BadSignature);
                }
                if unit.mtree_proof.leaf != hash_encoded(&unit.txns)
                    || !merkle_verify(&block.mtree_root, &unit.mtree_proof)
                {
                    return Err(Reject::BadMerkle);
                }
                for t in &unit.txns.0 {
                    if !dir.verify(&t.sender, &t.signing_bytes(), &t.sig_info) {
                        return Err(Reject::BadSignature);
                    }
                }
                // step 5: double-spend scan within this batch
                let spenders: Vec<&Transaction> =
                    unit.txns.0.iter().filter(|t| t.spends(&vpb.value)).collect();
                match spenders.as_slice() {
                    [] => {} // absence evidence
                    [t] => {
                        if !t.values.iter().any(|v| v.contains(&vpb.value)) {
                            // partial overlap cannot be a clean handoff
                            return Err(Reject::DoubleSpend);
                        }
                        last_handoff = Some((t, height));
                        owner = t.recipient;
                    }
                    _ => return Err(Reject::DoubleSpend),
                }
            }
            Some(Evidence::FalsePositive(bp)) => {
                // step 4
                if !positive || !bp.proves_false_positive(&block.bloom_filter, &owner) {
                    return Err(Reject::BadBloomProof);
                }
            }
        }
    }

    // step 6: the chain must end in txn itself, paying the verifier
    match last_handoff {
        Some((t, height))
            if height == end_height && t == txn && txn.recipient == *self_addr =>
        {
            Ok(())
        }
        _ => Err(Reject::WrongTerminal),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("holdings cover {held} coins, {target} requested")]
    InsufficientFunds { held: u64, target: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpendError {
    #[error("value is not an unlocked holding (or prefix of one)")]
    ValueNotHeld,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransferError {
    #[error("transaction not yet included in a block")]
    NotYetIncluded,
}

/// Value-selection result: the values to spend, plus the retained remainder
/// of a split if the cumulative amount overshot the target.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Selection {
    pub values: Vec<Value>,
    pub change: Option<Value>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SelectStrategy {
    Naive,
    MinProofSize,
    NoSplit,
}

/// A proof query the wallet wants answered by the block's packager.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ProofQuery {
    pub block_index: u64,
}

/// The packager's answer to a [`ProofQuery`].
#[derive(Clone, Debug)]
pub enum ProofReply {
    /// The wallet's batch is in the block at this position.
    Included(MtreeProof),
    /// The wallet is not in the block: the full element set shows the Bloom
    /// hit was a false positive.
    FalsePositive(BloomProof),
}

/// An outgoing transfer ready for delivery: the transaction and one VPB per
/// transferred value.
#[derive(Clone, Debug)]
pub struct OutgoingTransfer {
    pub txn: Transaction,
    pub recipient: Address,
    pub vpbs: Vec<VpbPair>,
}

#[derive(Clone)]
struct SubmittedBatch {
    txns: Txns,
    hash: Digest,
}

/// One account node's state: keys, holdings with their VPB chains, the
/// checkpoint store, the pending batch, and the wallet's own evidence
/// archive (used to backfill chains for values accepted after further blocks
/// have already been produced).
#[derive(Clone)]
pub struct Wallet {
    keys: KeyPair,
    address: Address,
    holdings: BTreeMap<Value, VpbPair>,
    checkpoints: CheckpointStore,
    /// Signed but not yet packaged transactions of the current round.
    pending: Vec<Transaction>,
    /// Values committed to a pending or submitted transaction, with the
    /// round they were locked in (for the abort timeout).
    locked: BTreeMap<Value, u64>,
    submitted: Option<SubmittedBatch>,
    own_units: BTreeMap<u64, Arc<ProofUnit>>,
    own_bloom_proofs: BTreeMap<u64, BloomProof>,
    headers: Vec<Block>,
    /// Blocks received ahead of a gap in the header chain.
    header_buffer: BTreeMap<u64, Block>,
    /// Completed transfers, keyed by transaction digest, for (re)sending.
    outbox: BTreeMap<Digest, OutgoingTransfer>,
}

/// Rounds a pending transaction may wait for inclusion before its values
/// unlock again.
pub const PENDING_ABORT_ROUNDS: u64 = 2;

impl Wallet {
    pub fn new(keys: KeyPair, genesis: &GenesisAllocation, genesis_block: &Block) -> Self {
        let address = keys.address();
        let holdings = genesis
            .entries()
            .iter()
            .filter(|e| e.owner == address)
            .map(|e| (e.value, VpbPair::genesis(e.value)))
            .collect();
        Wallet {
            keys,
            address,
            holdings,
            checkpoints: CheckpointStore::new(),
            pending: Vec::new(),
            locked: BTreeMap::new(),
            submitted: None,
            own_units: BTreeMap::new(),
            own_bloom_proofs: BTreeMap::new(),
            headers: vec![genesis_block.clone()],
            header_buffer: BTreeMap::new(),
            outbox: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn balance(&self) -> u64 {
        self.holdings.keys().map(Value::amount).sum()
    }

    pub fn holdings(&self) -> impl Iterator<Item = (&Value, &VpbPair)> {
        self.holdings.iter()
    }

    pub fn checkpoints(&self) -> &CheckpointStore {
        &self.checkpoints
    }

    pub fn headers(&self) -> &[Block] {
        &self.headers
    }

    pub fn tip_height(&self) -> u64 {
        (self.headers.len() - 1) as u64
    }

    /// Coins locked in unconfirmed transactions (in flight from this
    /// wallet's perspective once spent values leave `holdings`).
    pub fn locked_amount(&self) -> u64 {
        self.locked.keys().map(Value::amount).sum()
    }

    fn unlocked(&self) -> impl Iterator<Item = (&Value, &VpbPair)> {
        self.holdings.iter().filter(|(v, _)| !self.locked.contains_key(v))
    }

    /// Can this holding's stored chain be verified by `recipient`? Yes when
    /// the chain reaches back to genesis, or when the recipient appears in
    /// it as a past owner (then the sender truncates at the recipient's last
    /// handoff and the recipient resumes from its own checkpoint).
    fn transferable_to(&self, vpb: &VpbPair, recipient: &Address) -> bool {
        vpb.checkpoint.is_none() || vpb.proof.iter().any(|u| u.owner == *recipient)
    }

    /// Unlocked values the given recipient would be able to verify.
    pub fn spendable_for(&self, recipient: &Address) -> Vec<Value> {
        self.unlocked()
            .filter(|(_, vpb)| self.transferable_to(vpb, recipient))
            .map(|(v, _)| *v)
            .collect()
    }

    fn select_from(
        &self,
        candidates: Vec<(&Value, &VpbPair)>,
        target: u64,
        strategy: SelectStrategy,
    ) -> Result<Selection, SelectError> {
        let held: u64 = candidates.iter().map(|(v, _)| v.amount()).sum();
        if held < target || target == 0 {
            return Err(SelectError::InsufficientFunds { held, target });
        }
        let ordered: Vec<(&Value, &VpbPair)> = match strategy {
            SelectStrategy::Naive => candidates,
            SelectStrategy::MinProofSize => {
                let mut c = candidates;
                c.sort_by_key(|(v, vpb)| (vpb.chain_len(), **v));
                c
            }
            SelectStrategy::NoSplit => {
                if let Some(subset) = exact_subset(&candidates, target) {
                    return Ok(Selection { values: subset, change: None });
                }
                let mut c = candidates;
                c.sort_by_key(|(v, vpb)| (vpb.chain_len(), **v));
                c
            }
        };
        let mut values = Vec::new();
        let mut acc = 0u64;
        for (v, _) in ordered {
            if acc >= target {
                break;
            }
            if acc + v.amount() > target {
                let (keep, change) = v.split(target - acc).expect("amount in range");
                values.push(keep);
                return Ok(Selection { values, change: Some(change) });
            }
            acc += v.amount();
            values.push(*v);
        }
        Ok(Selection { values, change: None })
    }

    /// First-fit prefix selection over the holdings in interval order.
    pub fn select_values_naive(&self, target: u64) -> Result<Selection, SelectError> {
        self.select_from(self.unlocked().collect(), target, SelectStrategy::Naive)
    }

    pub fn select_values_optimized(
        &self,
        target: u64,
        strategy: SelectStrategy,
    ) -> Result<Selection, SelectError> {
        self.select_from(self.unlocked().collect(), target, strategy)
    }

    /// Selection restricted to values `recipient` can verify.
    pub fn select_for(
        &self,
        recipient: &Address,
        target: u64,
        strategy: SelectStrategy,
    ) -> Result<Selection, SelectError> {
        let candidates = self
            .unlocked()
            .filter(|(_, vpb)| self.transferable_to(vpb, recipient))
            .collect();
        self.select_from(candidates, target, strategy)
    }

    /// Build and sign a transaction spending `values`. Each value must be an
    /// unlocked holding or a prefix of one; prefixes split the holding, with
    /// the change retaining the parent's chain. The spent values lock until
    /// inclusion or abort.
    pub fn create_txn(
        &mut self,
        recipient: Address,
        values: &[Value],
        time: Tick,
        round: u64,
    ) -> Result<Transaction, SpendError> {
        // validate all before mutating anything
        for v in values {
            let holding = self
                .unlocked()
                .find(|(h, _)| h.contains(v) && h.begin_index() == v.begin_index());
            if holding.is_none() {
                return Err(SpendError::ValueNotHeld);
            }
        }
        for v in values {
            let (&held, _) = self
                .holdings
                .iter()
                .find(|(h, _)| h.contains(v) && h.begin_index() == v.begin_index())
                .expect("validated above");
            if held != *v {
                let vpb = self.holdings.remove(&held).expect("present");
                let (_, change) = held.split(v.amount()).expect("strict prefix");
                let mut spend_vpb = vpb.clone();
                spend_vpb.value = *v;
                let mut change_vpb = vpb;
                change_vpb.value = change;
                self.holdings.insert(*v, spend_vpb);
                self.holdings.insert(change, change_vpb);
            }
            self.locked.insert(*v, round);
        }
        let mut txn = Transaction {
            sender: self.address,
            recipient,
            values: values.to_vec(),
            time,
            sig_info: crate::crypto::Signature::ZERO,
        };
        txn.sig_info = self.keys.sign(&txn.signing_bytes());
        self.pending.push(txn.clone());
        Ok(txn)
    }

    /// Unlock values from transactions that waited longer than the abort
    /// timeout without being packaged or included.
    pub fn abort_stale(&mut self, current_round: u64) {
        if self.submitted.is_some() {
            return; // a submitted batch is still in flight; keep its locks
        }
        let stale: Vec<Value> = self
            .locked
            .iter()
            .filter(|(_, &r)| current_round >= r + PENDING_ABORT_ROUNDS)
            .map(|(v, _)| *v)
            .collect();
        if stale.is_empty() {
            return;
        }
        self.pending
            .retain(|t| !t.values.iter().any(|v| stale.contains(v)));
        for v in stale {
            self.locked.remove(&v);
        }
    }

    /// Package the pending transactions of this round into a batch and
    /// produce the AccTxn for the pool. Returns `None` when there is nothing
    /// to send or an earlier batch is still awaiting inclusion (a wallet
    /// keeps at most one batch in flight so each block position holds its
    /// complete activity).
    pub fn package_and_submit(&mut self) -> Option<AccTxn> {
        if self.pending.is_empty() || self.submitted.is_some() {
            return None;
        }
        let txns = Txns(std::mem::take(&mut self.pending));
        let hash = hash_encoded(&txns);
        self.submitted = Some(SubmittedBatch { txns, hash });
        Some(AccTxn {
            sender: self.address,
            txns_hash: hash,
            sig_info: self.keys.sign(hash.as_bytes()),
        })
    }

    pub fn has_submitted_batch(&self) -> bool {
        self.submitted.is_some()
    }

    /// Record a new block header. Out-of-order arrivals are buffered until
    /// the gap closes; duplicates are ignored. Returns a proof query for
    /// every newly appended block whose Bloom filter reports this wallet —
    /// either its batch was included or the hit is a false positive, and the
    /// chain extension needs the corresponding evidence.
    pub fn on_header(&mut self, block: &Block) -> Vec<ProofQuery> {
        if (block.index as usize) >= self.headers.len() {
            self.header_buffer.insert(block.index, block.clone());
        }
        let mut queries = Vec::new();
        while let Some(next) = self.header_buffer.remove(&(self.headers.len() as u64)) {
            if next.bloom_filter.query(&self.address) {
                queries.push(ProofQuery { block_index: next.index });
            }
            self.headers.push(next);
        }
        queries
    }

    /// Install the packager's reply for a Bloom-positive block: extend every
    /// holding's chain with the new evidence, and if the wallet's own batch
    /// was included, emit the outgoing transfers it contained.
    ///
    /// Replies that do not check out against the local header are dropped —
    /// the wallet never installs evidence it could not itself verify.
    pub fn on_proof(&mut self, block_index: u64, reply: ProofReply) -> Vec<OutgoingTransfer> {
        let block = &self.headers[block_index as usize];
        match reply {
            ProofReply::Included(mtree_proof) => {
                let Some(sub) = &self.submitted else { return Vec::new() };
                if mtree_proof.leaf != sub.hash || !merkle_verify(&block.mtree_root, &mtree_proof) {
                    return Vec::new();
                }
                let sub = self.submitted.take().expect("checked above");
                let unit = Arc::new(ProofUnit {
                    owner: self.address,
                    txns: sub.txns,
                    mtree_proof,
                });
                self.own_units.insert(block_index, Arc::clone(&unit));
                for vpb in self.holdings.values_mut() {
                    vpb.push_unit(block_index, Arc::clone(&unit));
                }
                self.complete_transfers(block_index, &unit)
            }
            ProofReply::FalsePositive(bp) => {
                if bp.block_index != block_index
                    || !bp.proves_false_positive(&block.bloom_filter, &self.address)
                {
                    return Vec::new();
                }
                self.own_bloom_proofs.insert(block_index, bp.clone());
                for vpb in self.holdings.values_mut() {
                    vpb.push_bloom_proof(bp.clone());
                }
                Vec::new()
            }
        }
    }

    /// The included batch's transactions are now final: hand each value's
    /// VPB to its recipient (truncated at the recipient's last visible
    /// handoff), record handoff checkpoints, and drop the values.
    fn complete_transfers(&mut self, height: u64, unit: &Arc<ProofUnit>) -> Vec<OutgoingTransfer> {
        let mut out = Vec::new();
        for txn in &unit.txns.0 {
            let mut vpbs = Vec::new();
            for v in &txn.values {
                let vpb = self.holdings.remove(v).expect("spent value is held");
                self.locked.remove(v);
                vpbs.push(self.truncate_for(vpb, &txn.recipient));
                self.checkpoints.record(CheckPoint {
                    value: *v,
                    height,
                    trusted_owner: txn.recipient,
                });
            }
            let transfer = OutgoingTransfer { txn: txn.clone(), recipient: txn.recipient, vpbs };
            self.outbox.insert(hash_encoded(txn), transfer.clone());
            out.push(transfer);
        }
        out
    }

    /// Drop everything up to and including the recipient's last handoff in
    /// the chain; the recipient's own checkpoint covers the removed prefix.
    fn truncate_for(&self, vpb: VpbPair, recipient: &Address) -> VpbPair {
        match initial_owner_for(&vpb) {
            Some(initial) => truncate_at_last_handoff(vpb, initial, recipient),
            None => vpb,
        }
    }

    /// The VPBs for an included transaction, as they are sent to the
    /// recipient. Errors while the transaction still awaits inclusion.
    pub fn transfer_vpb(&self, txn: &Transaction) -> Result<Vec<VpbPair>, TransferError> {
        self.outbox
            .get(&hash_encoded(txn))
            .map(|t| t.vpbs.clone())
            .ok_or(TransferError::NotYetIncluded)
    }

    /// Verify an incoming transfer against the local chain view.
    pub fn verify_incoming(
        &self,
        genesis: &GenesisAllocation,
        dir: &KeyDirectory,
        vpb: &VpbPair,
        txn: &Transaction,
    ) -> Result<(), Reject> {
        verify_vpb(
            &self.headers,
            genesis,
            dir,
            &self.address,
            &self.checkpoints,
            vpb,
            txn,
        )
    }

    /// Accept a verified transfer: backfill the wallet's own evidence for
    /// blocks produced since the transaction's inclusion, store the holding,
    /// and record the acceptance checkpoint.
    pub fn accept_and_checkpoint(&mut self, mut vpb: VpbPair, txn: &Transaction) {
        let height = *vpb.block_indices.last().expect("verified chains are non-empty");
        for h in height + 1..=self.tip_height() {
            if let Some(unit) = self.own_units.get(&h) {
                vpb.push_unit(h, Arc::clone(unit));
            } else if let Some(bp) = self.own_bloom_proofs.get(&h) {
                vpb.push_bloom_proof(bp.clone());
            }
        }
        debug_assert!(
            !self.holdings.keys().any(|h| h.intersects(&vpb.value)),
            "holdings must stay disjoint"
        );
        self.checkpoints.record(CheckPoint {
            value: vpb.value,
            height,
            trusted_owner: self.address,
        });
        let _ = txn;
        self.holdings.insert(vpb.value, vpb);
    }

    /// Encoded footprint of the VPB store and the checkpoint store — the
    /// two terms of the account storage decomposition.
    pub fn storage_bytes(&self) -> (u64, u64) {
        let vpbs: u64 = self.holdings.values().map(|v| v.encoded_len() as u64).sum();
        (vpbs, self.checkpoints.encoded_bytes())
    }
}

fn initial_owner_for(vpb: &VpbPair) -> Option<Address> {
    match &vpb.checkpoint {
        Some(cp) => Some(cp.trusted_owner),
        None => vpb.proof.first().map(|u| u.owner),
    }
}

fn truncate_at_last_handoff(mut vpb: VpbPair, initial: Address, recipient: &Address) -> VpbPair {
    let hs = handoffs(&vpb, initial);
    let Some(&(height, from, to)) = hs.iter().rev().find(|(_, from, _)| from == recipient) else {
        return vpb;
    };
    let _ = from;
    // find the containing value the recipient handed off, for the checkpoint
    let handoff_value = vpb
        .proof
        .iter()
        .zip(&vpb.block_indices)
        .find(|(_, &h)| h == height)
        .and_then(|(u, _)| {
            u.txns.0.iter().find_map(|t| {
                t.values.iter().find(|v| v.contains(&vpb.value)).copied()
            })
        })
        .unwrap_or(vpb.value);
    let keep: Vec<(Arc<ProofUnit>, u64)> = vpb
        .proof
        .iter()
        .cloned()
        .zip(vpb.block_indices.iter().copied())
        .filter(|(_, h)| *h > height)
        .collect();
    vpb.proof = keep.iter().map(|(u, _)| Arc::clone(u)).collect();
    vpb.block_indices = keep.iter().map(|(_, h)| *h).collect();
    vpb.bloom_proofs.retain(|bp| bp.block_index > height);
    vpb.checkpoint = Some(CheckPoint {
        value: handoff_value,
        height,
        trusted_owner: to,
    });
    vpb
}

/// Exact-sum subset of candidate values, if any (`no_split` strategy).
/// Depth-first over at most `MAX_EXACT_CANDIDATES` values, smallest subsets
/// preferred.
fn exact_subset(candidates: &[(&Value, &VpbPair)], target: u64) -> Option<Vec<Value>> {
    const MAX_EXACT_CANDIDATES: usize = 24;
    if candidates.len() > MAX_EXACT_CANDIDATES {
        return None;
    }
    let amounts: Vec<(Value, u64)> =
        candidates.iter().map(|(v, _)| (**v, v.amount())).collect();
    fn go(amounts: &[(Value, u64)], target: u64, picked: &mut Vec<Value>) -> bool {
        if target == 0 {
            return true;
        }
        let Some(((v, a), rest)) = amounts.split_first() else {
            return false;
        };
        if *a <= target {
            picked.push(*v);
            if go(rest, target - a, picked) {
                return true;
            }
            picked.pop();
        }
        go(rest, target, picked)
    }
    let mut picked = Vec::new();
    go(&amounts, target, &mut picked).then_some(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{
        package_block, uniform_genesis, ChainState, Challenge, ChallengeKind, ChallengeResponse,
        ProtocolParams, ServeError, TxnPool,
    };
    use crate::types::GenesisEntry;

    fn v(b: u64, e: u64) -> Value {
        Value::new(b, e).unwrap()
    }

    /// Synchronous end-to-end fixture: wallets, one pool, one miner, no
    /// network latency. Every `step` packages a block, delivers it, answers
    /// proof queries and routes the resulting transfers.
    struct World {
        dir: KeyDirectory,
        kps: Vec<KeyPair>,
        miner: KeyPair,
        params: ProtocolParams,
        chain: ChainState,
        wallets: Vec<Wallet>,
        pool: TxnPool,
        round: u64,
        genesis: GenesisAllocation,
    }

    /// Outcome of one delivered transfer in a [`World`] step.
    struct Delivery {
        recipient: usize,
        value: Value,
        result: Result<(), Reject>,
    }

    impl World {
        fn new(n: usize, coins_per: u64, params: ProtocolParams) -> World {
            let mut dir = KeyDirectory::new();
            let kps: Vec<KeyPair> = (0..n)
                .map(|i| {
                    let mut seed = [0u8; 32];
                    seed[0] = (i + 10) as u8;
                    let kp = KeyPair::from_seed(seed);
                    dir.register(kp.public());
                    kp
                })
                .collect();
            let miner = KeyPair::from_seed([0xee; 32]);
            dir.register(miner.public());
            let owners: Vec<Address> = kps.iter().map(KeyPair::address).collect();
            let genesis = uniform_genesis(&owners, 1, coins_per);
            Self::with_genesis(dir, kps, miner, genesis, params)
        }

        fn with_genesis(
            dir: KeyDirectory,
            kps: Vec<KeyPair>,
            miner: KeyPair,
            genesis: GenesisAllocation,
            params: ProtocolParams,
        ) -> World {
            let chain = ChainState::new(genesis.clone(), &params);
            let wallets = kps
                .iter()
                .map(|kp| Wallet::new(kp.clone(), &genesis, &chain.blocks()[0]))
                .collect();
            World {
                dir,
                kps,
                miner,
                params,
                chain,
                wallets,
                pool: TxnPool::new(),
                round: 0,
                genesis,
            }
        }

        fn addr(&self, i: usize) -> Address {
            self.kps[i].address()
        }

        fn wallet_of(&self, a: &Address) -> usize {
            self.kps.iter().position(|k| k.address() == *a).unwrap()
        }

        /// Create (but do not yet package) a payment of `amount` coins.
        fn pay(&mut self, from: usize, to: usize, amount: u64) -> Transaction {
            let recipient = self.addr(to);
            let round = self.round;
            let sel = self.wallets[from]
                .select_for(&recipient, amount, SelectStrategy::MinProofSize)
                .unwrap();
            self.wallets[from]
                .create_txn(recipient, &sel.values, round, round)
                .unwrap()
        }

        /// Package one block from the pool, deliver it and all proofs and
        /// transfers, and return the per-transfer verification outcomes.
        fn step(&mut self) -> Vec<Delivery> {
            for w in &mut self.wallets {
                if let Some(acctxn) = w.package_and_submit() {
                    self.pool.submit_or_park(acctxn, &self.dir).unwrap();
                }
            }
            let entries = self.pool.entries();
            let packaged = package_block(
                &entries,
                self.chain.tip(),
                &self.miner,
                &self.params,
                self.round,
                0,
            );
            let mut ops = crate::consensus::OpCounter::default();
            crate::consensus::validate_block(
                &packaged.block,
                &packaged.siginfos,
                self.chain.tip(),
                &self.miner.address(),
                &self.dir,
                &self.params,
                &mut ops,
            )
            .unwrap();
            let block = packaged.block.clone();
            self.chain.append(packaged).unwrap();
            self.pool.prune_included(&entries);

            let mut transfers = Vec::new();
            for w in &mut self.wallets {
                for q in w.on_header(&block) {
                    let reply = match self.chain.serve_mtree_proof(q.block_index, &w.address()) {
                        Ok(p) => ProofReply::Included(p),
                        Err(ServeError::UnknownSender(_)) => {
                            let ch = Challenge {
                                block_index: q.block_index,
                                account: w.address(),
                                kind: ChallengeKind::Bloom,
                            };
                            match self.chain.respond_challenge(&ch).unwrap() {
                                ChallengeResponse::Bloom(bp) => ProofReply::FalsePositive(bp),
                                ChallengeResponse::Mtree(_) => unreachable!(),
                            }
                        }
                        Err(e) => panic!("proof serving failed: {e}"),
                    };
                    transfers.extend(w.on_proof(q.block_index, reply));
                }
            }

            let mut outcomes = Vec::new();
            for t in transfers {
                let ri = self.wallet_of(&t.recipient);
                for vpb in t.vpbs {
                    let value = vpb.value;
                    let result = self.wallets[ri].verify_incoming(
                        &self.genesis,
                        &self.dir,
                        &vpb,
                        &t.txn,
                    );
                    if result.is_ok() {
                        self.wallets[ri].accept_and_checkpoint(vpb, &t.txn);
                    }
                    outcomes.push(Delivery { recipient: ri, value, result });
                }
            }
            self.round += 1;
            for w in &mut self.wallets {
                w.abort_stale(self.round);
            }
            outcomes
        }

        fn total_balance(&self) -> u64 {
            self.wallets.iter().map(Wallet::balance).sum()
        }
    }

    fn custom_wallet(values: &[(u64, u64)], filler: &[(u64, u64)]) -> (Wallet, Address) {
        // one wallet holding `values`, a second holding the `filler` gaps so
        // the allocation is contiguous
        let kp = KeyPair::from_seed([1; 32]);
        let other = KeyPair::from_seed([2; 32]);
        let mut entries: Vec<GenesisEntry> = values
            .iter()
            .map(|&(b, e)| GenesisEntry { owner: kp.address(), value: v(b, e) })
            .collect();
        entries.extend(filler.iter().map(|&(b, e)| GenesisEntry {
            owner: other.address(),
            value: v(b, e),
        }));
        let genesis = GenesisAllocation::new(entries).unwrap();
        let chain = ChainState::new(genesis.clone(), &ProtocolParams::default());
        let addr = other.address();
        (Wallet::new(kp, &genesis, &chain.blocks()[0]), addr)
    }

    #[test]
    fn naive_selection_prefix_and_split() {
        let (w, _) = custom_wallet(&[(0, 49), (100, 149)], &[(50, 99)]);
        assert_eq!(
            w.select_values_naive(50).unwrap(),
            Selection { values: vec![v(0, 49)], change: None }
        );
        assert_eq!(
            w.select_values_naive(70).unwrap(),
            Selection { values: vec![v(0, 49), v(100, 119)], change: Some(v(120, 149)) }
        );
        assert_eq!(
            w.select_values_naive(200),
            Err(SelectError::InsufficientFunds { held: 100, target: 200 })
        );
    }

    #[test]
    fn no_split_finds_exact_subset_or_falls_back() {
        // amounts 30, 70, 50
        let (w, _) = custom_wallet(&[(0, 29), (30, 99), (100, 149)], &[]);
        let sel = w.select_values_optimized(100, SelectStrategy::NoSplit).unwrap();
        assert_eq!(sel.change, None);
        let mut amounts: Vec<u64> = sel.values.iter().map(Value::amount).collect();
        amounts.sort_unstable();
        assert_eq!(amounts, vec![30, 70]);

        // 101 has no exact subset: falls back to a split
        let sel = w.select_values_optimized(101, SelectStrategy::NoSplit).unwrap();
        assert_eq!(sel.values.iter().map(Value::amount).sum::<u64>(), 101);
        assert!(sel.change.is_some());
    }

    #[test]
    fn create_txn_locks_values_and_rejects_foreign_ones() {
        let (mut w, other) = custom_wallet(&[(0, 49)], &[(50, 99)]);
        // not held
        assert_eq!(
            w.create_txn(other, &[v(50, 59)], 0, 0),
            Err(SpendError::ValueNotHeld)
        );
        // prefix split
        let txn = w.create_txn(other, &[v(0, 9)], 0, 0).unwrap();
        assert!(self::verify_txn_sig(&w, &txn));
        assert_eq!(w.balance(), 50); // change still held, spend locked but held
        // pending lock: same value again
        assert_eq!(
            w.create_txn(other, &[v(0, 9)], 0, 0),
            Err(SpendError::ValueNotHeld)
        );
        // the change (10, 49) is still spendable
        w.create_txn(other, &[v(10, 49)], 0, 0).unwrap();
    }

    fn verify_txn_sig(w: &Wallet, txn: &Transaction) -> bool {
        let mut dir = KeyDirectory::new();
        dir.register(KeyPair::from_seed([1; 32]).public());
        let _ = w;
        dir.verify(&txn.sender, &txn.signing_bytes(), &txn.sig_info)
    }

    #[test]
    fn abort_unlocks_after_timeout() {
        let (mut w, other) = custom_wallet(&[(0, 49)], &[(50, 99)]);
        w.create_txn(other, &[v(0, 49)], 0, 0).unwrap();
        // drop the pending txn without packaging it
        w.abort_stale(1);
        assert_eq!(
            w.create_txn(other, &[v(0, 49)], 1, 1),
            Err(SpendError::ValueNotHeld)
        );
        w.abort_stale(2);
        w.create_txn(other, &[v(0, 49)], 2, 2).unwrap();
    }

    #[test]
    fn package_and_submit_requires_pending() {
        let (mut w, other) = custom_wallet(&[(0, 49)], &[(50, 99)]);
        assert!(w.package_and_submit().is_none());
        w.create_txn(other, &[v(0, 9)], 0, 0).unwrap();
        let acctxn = w.package_and_submit().unwrap();
        assert_eq!(acctxn.sender, w.address());
        // second call: batch already in flight
        assert!(w.package_and_submit().is_none());
    }

    #[test]
    fn honest_transfers_accept_and_conserve() {
        let mut world = World::new(3, 100, ProtocolParams::default());
        let total = world.genesis.total_coins();
        for r in 0..10u64 {
            let from = (r % 3) as usize;
            let to = ((r + 1) % 3) as usize;
            world.pay(from, to, 10 + r);
            let outcomes = world.step();
            for d in &outcomes {
                assert_eq!(d.result, Ok(()), "round {r}");
            }
            assert!(!outcomes.is_empty(), "round {r} delivered nothing");
            assert_eq!(world.total_balance(), total, "round {r}");
        }
    }

    #[test]
    fn absence_evidence_extends_untouched_values() {
        // spending half of wallet 0's value splits it; the retained change
        // must still gain a proof unit for the spend block (absence
        // evidence for the untouched interval)
        let mut world = World::new(2, 100, ProtocolParams::default());
        world.pay(0, 1, 50);
        world.step();
        let untouched: Vec<usize> = world.wallets[0]
            .holdings()
            .map(|(_, vpb)| vpb.chain_len())
            .collect();
        assert_eq!(untouched, vec![1], "change holding gained absence evidence");
    }

    #[test]
    fn returning_value_uses_checkpoint_and_truncates() {
        let mut world = World::new(2, 100, ProtocolParams::default());
        // bounce one value 0 -> 1 -> 0 -> 1
        world.pay(0, 1, 100);
        assert!(world.step().iter().all(|d| d.result.is_ok()));
        world.pay(1, 0, 100);
        assert!(world.step().iter().all(|d| d.result.is_ok()));
        world.pay(0, 1, 100);
        let out = world.step();
        assert!(out.iter().all(|d| d.result.is_ok()));
        // wallet 1's re-received value: its stored chain is cut at wallet
        // 1's own earlier handoff, not at genesis
        let vpb = world.wallets[1]
            .holdings()
            .map(|(_, vpb)| vpb)
            .find(|vpb| vpb.checkpoint.is_some())
            .expect("some chain should be checkpoint-cut")
            .clone();
        let cp = vpb.checkpoint.unwrap();
        assert_eq!(cp.trusted_owner, world.addr(0));
        assert!(vpb.chain_len() <= 2, "chain kept only the post-cut units");
    }

    #[test]
    fn checkpoint_heights_never_decrease() {
        let mut world = World::new(3, 60, ProtocolParams::default());
        let mut best: BTreeMap<(usize, Value), u64> = BTreeMap::new();
        for r in 0..12u64 {
            world.pay((r % 3) as usize, ((r + 2) % 3) as usize, 7);
            world.step();
            for (i, w) in world.wallets.iter().enumerate() {
                for (value, cp) in w.checkpoints().by_value.iter() {
                    let e = best.entry((i, *value)).or_insert(cp.height);
                    assert!(cp.height >= *e, "checkpoint regressed");
                    *e = cp.height;
                }
            }
        }
    }

    #[test]
    fn tiny_bloom_false_positives_are_proven_and_harmless() {
        // 2-bit filter, 3 addresses: by pigeonhole two addresses share a
        // probe position, so false positives are guaranteed; chains absorb
        // bloom proofs and transfers still verify
        let params = ProtocolParams { bloom_m_bits: 2, bloom_k: 1, ..ProtocolParams::default() };
        let mut world = World::new(3, 90, params);
        let mut bloom_proofs_seen = 0usize;
        for r in 0..15u64 {
            world.pay((r % 3) as usize, ((r + 1) % 3) as usize, 5);
            for d in world.step() {
                assert_eq!(d.result, Ok(()), "round {r}");
            }
            bloom_proofs_seen += world
                .wallets
                .iter()
                .flat_map(|w| w.holdings())
                .map(|(_, vpb)| vpb.bloom_proofs.len())
                .sum::<usize>();
        }
        assert!(bloom_proofs_seen > 0, "test never exercised a false positive");
    }

    #[test]
    fn spend_then_omit_double_spend_is_rejected() {
        let mut world = World::new(3, 100, ProtocolParams::default());
        // adversary = wallet 0; snapshot its state before the honest spend
        let mut snapshot = world.wallets[0].clone();
        let spent = world.pay(0, 1, 100);
        assert!(world.step().iter().all(|d| d.result.is_ok()));
        let _ = spent;

        // feed the snapshot the block it missed, then double-spend to 2
        let block1 = world.chain.blocks()[1].clone();
        for q in snapshot.on_header(&block1) {
            // the real spend block is bloom-positive for the adversary, but
            // the served proof binds the *real* batch; the snapshot cannot
            // use it and ends up with a gap at this height
            let p = world.chain.serve_mtree_proof(q.block_index, &snapshot.address()).unwrap();
            assert!(snapshot.on_proof(q.block_index, ProofReply::Included(p)).is_empty());
        }
        let victim = world.addr(2);
        let sel = snapshot.select_for(&victim, 100, SelectStrategy::Naive).unwrap();
        snapshot.create_txn(victim, &sel.values, 1, 1).unwrap();
        let acctxn = snapshot.package_and_submit().unwrap();
        world.pool.submit_or_park(acctxn, &world.dir).unwrap();
        let entries = world.pool.entries();
        let packaged = package_block(
            &entries,
            world.chain.tip(),
            &world.miner,
            &world.params,
            1,
            0,
        );
        let block2 = packaged.block.clone();
        world.chain.append(packaged).unwrap();
        world.pool.prune_included(&entries);

        let mut transfers = Vec::new();
        for q in snapshot.on_header(&block2) {
            let p = world.chain.serve_mtree_proof(q.block_index, &snapshot.address()).unwrap();
            transfers.extend(snapshot.on_proof(q.block_index, ProofReply::Included(p)));
        }
        let t = transfers.pop().expect("adversary produced a transfer");

        // the victim keeps an honest view of the chain
        let mut victim_wallet = world.wallets[2].clone();
        victim_wallet.on_header(&block2);
        let verdict =
            victim_wallet.verify_incoming(&world.genesis, &world.dir, &t.vpbs[0], &t.txn);
        assert_eq!(verdict, Err(Reject::MissingProof));
    }

    #[test]
    fn tampered_evidence_yields_specific_reasons() {
        let mut world = World::new(3, 100, ProtocolParams::default());
        world.pay(0, 1, 40);
        world.step();
        world.pay(1, 2, 40);

        // capture the honest transfer before delivery by replaying the step
        // manually: wallet 1's outbox holds it after the step
        let outcomes = world.step();
        assert!(outcomes.iter().all(|d| d.result.is_ok()));
        let txn_value = outcomes
            .iter()
            .find(|d| d.recipient == 2)
            .expect("wallet 2 received a value")
            .value;
        let (_, good_vpb) = world.wallets[2]
            .holdings()
            .find(|(val, _)| **val == txn_value)
            .expect("wallet 2 accepted the value");
        let good_vpb = good_vpb.clone();
        let good_txn = good_vpb.proof.last().unwrap().txns.0[0].clone();
        let verify = |vpb: &VpbPair, txn: &Transaction| {
            world.wallets[2].verify_incoming(&world.genesis, &world.dir, vpb, txn)
        };
        // note: wallet 2 now owns the value, so re-verification of the exact
        // original still passes (idempotent re-check of the same decision)
        assert_eq!(verify(&good_vpb, &good_txn), Ok(()));

        // bad_merkle: corrupt a sibling hash in the terminal unit
        let mut bad = good_vpb.clone();
        let mut unit = (*bad.proof.last().unwrap().clone()).clone();
        if unit.mtree_proof.siblings.is_empty() {
            unit.mtree_proof.leaf.0[0] ^= 1;
        } else {
            unit.mtree_proof.siblings[0].0 .0[0] ^= 1;
        }
        *bad.proof.last_mut().unwrap() = Arc::new(unit);
        assert_eq!(verify(&bad, &good_txn), Err(Reject::BadMerkle));

        // bad_signature: corrupt the inner transaction signature (leaf and
        // Merkle path re-derived so the signature check is what fires)
        let mut bad = good_vpb.clone();
        let mut unit = (*bad.proof.last().unwrap().clone()).clone();
        unit.txns.0[0].sig_info.0[5] ^= 1;
        unit.mtree_proof.leaf = hash_encoded(&unit.txns);
        *bad.proof.last_mut().unwrap() = Arc::new(unit);
        // leaf no longer matches the on-chain root, so merkle fires first
        // unless we also skip that — the signature reason needs a forged
        // batch *consistently* committed, which an adversary cannot produce;
        // bad_merkle is the observable failure
        assert_eq!(verify(&bad, &good_txn), Err(Reject::BadMerkle));

        // wrong_terminal: replay the VPB for a different transaction
        let other_txn = Transaction {
            recipient: world.addr(0),
            ..good_txn.clone()
        };
        assert_eq!(verify(&good_vpb, &other_txn), Err(Reject::WrongTerminal));

        // missing_proof: drop the terminal unit
        let mut bad = good_vpb.clone();
        bad.proof.pop();
        bad.block_indices.pop();
        let verdict = verify(&bad, &good_txn);
        assert!(
            matches!(verdict, Err(Reject::MissingProof) | Err(Reject::WrongTerminal)),
            "got {verdict:?}"
        );

        // bad_genesis: a checkpoint the verifier never recorded
        let mut bad = good_vpb.clone();
        bad.checkpoint = Some(CheckPoint {
            value: txn_value,
            height: 1,
            trusted_owner: world.addr(1),
        });
        // wallet 2 has no such checkpoint (it never handed this value off
        // at height 1), so trust cannot be established
        let verdict = verify(&bad, &good_txn);
        assert_eq!(verdict, Err(Reject::BadGenesis));
    }

    #[test]
    fn handcrafted_double_spend_batch_is_rejected() {
        // a batch whose two transactions spend overlapping values; the pool
        // and miner cannot see this (they only handle hashes), the recipient
        // must catch it
        let mut dir = KeyDirectory::new();
        let a = KeyPair::from_seed([1; 32]);
        let b = KeyPair::from_seed([2; 32]);
        let c = KeyPair::from_seed([3; 32]);
        for k in [&a, &b, &c] {
            dir.register(k.public());
        }
        let genesis = uniform_genesis(&[a.address()], 1, 100);
        let params = ProtocolParams::default();
        let chain0 = ChainState::new(genesis.clone(), &params);

        let mut t1 = Transaction {
            sender: a.address(),
            recipient: b.address(),
            values: vec![v(0, 99)],
            time: 0,
            sig_info: crate::crypto::Signature::ZERO,
        };
        t1.sig_info = a.sign(&t1.signing_bytes());
        let mut t2 = Transaction {
            sender: a.address(),
            recipient: c.address(),
            values: vec![v(0, 49)],
            time: 0,
            sig_info: crate::crypto::Signature::ZERO,
        };
        t2.sig_info = a.sign(&t2.signing_bytes());
        let txns = Txns(vec![t1.clone(), t2]);
        let acctxn = AccTxn {
            sender: a.address(),
            txns_hash: hash_encoded(&txns),
            sig_info: a.sign(hash_encoded(&txns).as_bytes()),
        };
        let miner = KeyPair::from_seed([9; 32]);
        let packaged = package_block(&[acctxn], chain0.tip(), &miner, &params, 1, 0);
        let mut chain = vec![chain0.blocks()[0].clone(), packaged.block.clone()];
        let proof = packaged.tree.as_ref().unwrap().prove(0).unwrap();
        let vpb = VpbPair {
            value: v(0, 99),
            proof: vec![Arc::new(ProofUnit { owner: a.address(), txns, mtree_proof: proof })],
            block_indices: vec![1],
            bloom_proofs: vec![],
            checkpoint: None,
        };
        let verdict = verify_vpb(
            &chain,
            &genesis,
            &dir,
            &b.address(),
            &CheckpointStore::new(),
            &vpb,
            &t1,
        );
        assert_eq!(verdict, Err(Reject::DoubleSpend));
        chain.clear();
    }

    #[test]
    fn vpb_encoding_length_matches_materialized() {
        let mut world = World::new(2, 100, ProtocolParams::default());
        world.pay(0, 1, 30);
        world.step();
        for w in &world.wallets {
            for (_, vpb) in w.holdings() {
                assert_eq!(vpb.encoded_len(), vpb.encode().len());
            }
        }
    }
}
