//! Consensus-node logic: transaction pool, block packaging, five-step block
//! validation, pluggable leader election, Merkle-proof serving and the
//! challenge-response protocol.
//!
//! Leaf order in every block is the lexicographic order of sender addresses,
//! so that independently packaging miners reproduce the same Merkle root
//! from the same pool.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use thiserror::Error;

use crate::crypto::bloom::{bloom_rebuild, BloomFilter, BloomProof};
use crate::crypto::merkle::{MerkleTree, MtreeProof};
use crate::crypto::{hash, hash_encoded, Digest, KeyDirectory, KeyPair};
use crate::encoding::Encode;
use crate::types::{AccTxn, Address, Block, GenesisAllocation, GenesisEntry, Tick};

/// Bloom sizing plus the header rules every block must satisfy.
#[derive(Clone, Copy, Debug)]
pub struct ProtocolParams {
    pub bloom_m_bits: u64,
    pub bloom_k: u32,
    /// Leading zero bits required of the header hash. The simulator elects
    /// leaders with a seeded draw instead of hash grinding, so this defaults
    /// to zero.
    pub difficulty_bits: u32,
    /// How many recent blocks keep their full Merkle tree and SigInfos for
    /// proof serving and challenges.
    pub retention_window: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            bloom_m_bits: 1 << 21,
            bloom_k: 7,
            difficulty_bits: 0,
            retention_window: 100,
        }
    }
}

/// Root committed by a block packaged from an empty pool.
pub fn empty_pool_root() -> Digest {
    hash(b"ezchain/empty-mtree")
}

/// Deterministic operation tally for validation-cost accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub sig_verifies: u64,
    pub hashes: u64,
}

impl OpCounter {
    pub fn total(&self) -> u64 {
        self.sig_verifies + self.hashes
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("sender already has a batch in the pool")]
    DuplicateSender,
    #[error("account signature does not verify")]
    BadSignature,
}

/// Pending batch submissions, at most one per sender per block.
///
/// A second submission from a sender whose previous batch has not been
/// packaged yet is parked in a per-sender queue and promoted once the earlier
/// batch leaves the pool; the one-AccTxn-per-sender-per-block rule is what
/// validation enforces.
#[derive(Default, Debug)]
pub struct TxnPool {
    entries: BTreeMap<Address, AccTxn>,
    parked: BTreeMap<Address, VecDeque<AccTxn>>,
}

impl TxnPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Strict submission: reject on duplicate sender or bad signature, pool
    /// unchanged on reject.
    pub fn submit(&mut self, acctxn: AccTxn, dir: &KeyDirectory) -> Result<(), PoolError> {
        if !dir.verify(&acctxn.sender, acctxn.txns_hash.as_bytes(), &acctxn.sig_info) {
            return Err(PoolError::BadSignature);
        }
        if self.entries.contains_key(&acctxn.sender) {
            return Err(PoolError::DuplicateSender);
        }
        self.entries.insert(acctxn.sender, acctxn);
        Ok(())
    }

    /// Submission with parking: a duplicate sender is queued behind its
    /// current entry instead of rejected. Bad signatures still fail.
    pub fn submit_or_park(&mut self, acctxn: AccTxn, dir: &KeyDirectory) -> Result<(), PoolError> {
        if !dir.verify(&acctxn.sender, acctxn.txns_hash.as_bytes(), &acctxn.sig_info) {
            return Err(PoolError::BadSignature);
        }
        if self.entries.contains_key(&acctxn.sender) {
            self.parked.entry(acctxn.sender).or_default().push_back(acctxn);
        } else {
            self.entries.insert(acctxn.sender, acctxn);
        }
        Ok(())
    }

    /// Current entries in leaf order (lexicographic sender address).
    pub fn entries(&self) -> Vec<AccTxn> {
        self.entries.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drop entries that were packaged into a block and promote parked
    /// batches.
    pub fn prune_included(&mut self, included: &[AccTxn]) {
        for inc in included {
            if let Some(cur) = self.entries.get(&inc.sender) {
                if cur.txns_hash == inc.txns_hash {
                    self.entries.remove(&inc.sender);
                }
            }
        }
        let senders: Vec<Address> = self.parked.keys().copied().collect();
        for sender in senders {
            if !self.entries.contains_key(&sender) {
                if let Some(queue) = self.parked.get_mut(&sender) {
                    if let Some(next) = queue.pop_front() {
                        self.entries.insert(sender, next);
                    }
                    if queue.is_empty() {
                        self.parked.remove(&sender);
                    }
                }
            }
        }
    }
}

/// A packaged block together with the material retained for proof serving.
#[derive(Clone, Debug)]
pub struct PackagedBlock {
    pub block: Block,
    pub siginfos: Vec<AccTxn>,
    pub tree: Option<MerkleTree>,
}

/// Algorithm-1 step 2: build a block over the pool's batch digests. Entries
/// are sorted into canonical leaf order; the Bloom filter is rebuilt from the
/// sender set. An empty pool yields an empty block so the block cadence stays
/// uniform.
pub fn package_block(
    entries: &[AccTxn],
    parent: &Block,
    miner: &KeyPair,
    params: &ProtocolParams,
    time: Tick,
    nonce: u64,
) -> PackagedBlock {
    let mut siginfos = entries.to_vec();
    siginfos.sort_by_key(|a| a.sender);

    let (root, tree) = if siginfos.is_empty() {
        (empty_pool_root(), None)
    } else {
        let tree = MerkleTree::build(siginfos.iter().map(|a| a.txns_hash).collect())
            .expect("non-empty leaves");
        (tree.root(), Some(tree))
    };
    let senders: Vec<Address> = siginfos.iter().map(|a| a.sender).collect();
    let bloom = bloom_rebuild(params.bloom_m_bits, params.bloom_k, &senders);

    let mut block = Block {
        mtree_root: root,
        bloom_filter: bloom,
        pre_hash: hash_encoded(parent),
        time,
        miner_sig: crate::crypto::Signature::ZERO,
        nonce,
        index: parent.index + 1,
    };
    block.miner_sig = miner.sign(&block.signing_bytes());
    PackagedBlock { block, siginfos, tree }
}

/// Uniform seeded leader election over the candidate set. A pluggable stand-in
/// for the backbone consensus; deterministic for a fixed RNG stream.
pub fn leader_election<R: Rng>(candidates: &[usize], rng: &mut R) -> usize {
    assert!(!candidates.is_empty(), "election needs at least one candidate");
    candidates[rng.gen_range(0..candidates.len())]
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlockInvalid {
    #[error("account signature invalid for {0}")]
    BadAccountSignature(Address),
    #[error("bloom filter does not match the SigInfos")]
    BloomMismatch,
    #[error("Merkle root cannot be reconstructed from the SigInfos")]
    RootMismatch,
    #[error("duplicate sender in SigInfos")]
    DuplicateSender,
    #[error("pre-hash does not link to the parent")]
    BadLink,
    #[error("index is not parent + 1")]
    BadIndex,
    #[error("block time precedes parent time")]
    TimeRegression,
    #[error("miner signature invalid")]
    BadMinerSig,
    #[error("header hash misses the difficulty target")]
    BadNonce,
}

/// Algorithm-1 step 4, the five checks in order: (i) all account signatures,
/// (ii) Bloom filter matches the SigInfos, (iii) Merkle root reconstructs,
/// (iv) no duplicate sender, (v) header fields (link, index, time, miner
/// signature, difficulty).
///
/// The cost is a function of the SigInfos length only — transaction bodies
/// are never touched. `ops` tallies the signature verifications and hash
/// invocations actually performed.
pub fn validate_block(
    block: &Block,
    siginfos: &[AccTxn],
    parent: &Block,
    miner: &Address,
    dir: &KeyDirectory,
    params: &ProtocolParams,
    ops: &mut OpCounter,
) -> Result<(), BlockInvalid> {
    // (i) account signatures over the batch digests
    for acc in siginfos {
        ops.sig_verifies += 1;
        if !dir.verify(&acc.sender, acc.txns_hash.as_bytes(), &acc.sig_info) {
            return Err(BlockInvalid::BadAccountSignature(acc.sender));
        }
    }

    // (ii) bloom reconstruction, bit for bit
    let senders: Vec<Address> = siginfos.iter().map(|a| a.sender).collect();
    ops.hashes += BloomFilter::hash_ops_per_element() * senders.len() as u64;
    let rebuilt = bloom_rebuild(params.bloom_m_bits, params.bloom_k, &senders);
    if rebuilt != block.bloom_filter {
        return Err(BlockInvalid::BloomMismatch);
    }

    // (iii) Merkle root reconstruction
    let root = if siginfos.is_empty() {
        ops.hashes += 1;
        empty_pool_root()
    } else {
        let tree = MerkleTree::build(siginfos.iter().map(|a| a.txns_hash).collect())
            .expect("non-empty leaves");
        ops.hashes += tree.hash_ops();
        tree.root()
    };
    if root != block.mtree_root {
        return Err(BlockInvalid::RootMismatch);
    }

    // (iv) one batch per sender
    for w in siginfos.windows(2) {
        if w[0].sender >= w[1].sender {
            return Err(BlockInvalid::DuplicateSender);
        }
    }

    // (v) header checks
    ops.hashes += 1;
    if block.pre_hash != hash_encoded(parent) {
        return Err(BlockInvalid::BadLink);
    }
    if block.index != parent.index + 1 {
        return Err(BlockInvalid::BadIndex);
    }
    if block.time < parent.time {
        return Err(BlockInvalid::TimeRegression);
    }
    ops.sig_verifies += 1;
    if !dir.verify(miner, &block.signing_bytes(), &block.miner_sig) {
        return Err(BlockInvalid::BadMinerSig);
    }
    if params.difficulty_bits > 0 {
        ops.hashes += 1;
        let h = hash(&block.signing_bytes());
        if leading_zero_bits(h.as_bytes()) < params.difficulty_bits {
            return Err(BlockInvalid::BadNonce);
        }
    }
    Ok(())
}

fn leading_zero_bits(bytes: &[u8; 32]) -> u32 {
    let mut n = 0;
    for b in bytes {
        if *b == 0 {
            n += 8;
        } else {
            n += b.leading_zeros();
            break;
        }
    }
    n
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("block does not extend the current tip")]
    NotOnTip,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ServeError {
    #[error("no block at index {0}")]
    UnknownBlock(u64),
    #[error("block {0} is outside the retention window")]
    BlockPruned(u64),
    #[error("sender has no leaf in block {0} (possible bloom false positive)")]
    UnknownSender(u64),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ChallengeKind {
    Bloom,
    Mtree,
}

/// A demand that the block publisher reveal the data reconstructing one of
/// the block's commitments.
#[derive(Clone, Copy, Debug)]
pub struct Challenge {
    pub block_index: u64,
    pub account: Address,
    pub kind: ChallengeKind,
}

#[derive(Clone, Debug)]
pub enum ChallengeResponse {
    /// Full sender element set; rebuilding it must equal the on-chain filter.
    Bloom(BloomProof),
    /// All leaves; rebuilding them must equal the on-chain Merkle root.
    Mtree(Vec<AccTxn>),
}

struct Retained {
    siginfos: Vec<AccTxn>,
    tree: Option<MerkleTree>,
}

/// Append-only hash-linked chain plus the retained proof material for recent
/// blocks.
pub struct ChainState {
    blocks: Vec<Block>,
    retained: BTreeMap<u64, Retained>,
    genesis_alloc: GenesisAllocation,
    genesis_tree: MerkleTree,
    retention_window: u64,
}

impl ChainState {
    /// Build the chain from its genesis allocation. The genesis block commits
    /// to the allocation entries through its Merkle root and carries an empty
    /// Bloom filter; genesis ownership is checked against the allocation
    /// itself rather than through proof units.
    pub fn new(alloc: GenesisAllocation, params: &ProtocolParams) -> Self {
        let leaves: Vec<Digest> = alloc.entries().iter().map(hash_encoded).collect();
        let genesis_tree = MerkleTree::build(leaves).expect("genesis allocation is non-empty");
        let genesis = Block {
            mtree_root: genesis_tree.root(),
            bloom_filter: BloomFilter::new(params.bloom_m_bits, params.bloom_k),
            pre_hash: Digest::ZERO,
            time: 0,
            miner_sig: crate::crypto::Signature::ZERO,
            nonce: 0,
            index: 0,
        };
        ChainState {
            blocks: vec![genesis],
            retained: BTreeMap::new(),
            genesis_alloc: alloc,
            genesis_tree,
            retention_window: params.retention_window,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().unwrap()
    }

    pub fn genesis_allocation(&self) -> &GenesisAllocation {
        &self.genesis_alloc
    }

    /// Append a validated block. Forks are out of scope: anything not
    /// extending the tip is refused.
    pub fn append(&mut self, packaged: PackagedBlock) -> Result<(), ChainError> {
        let tip = self.tip();
        if packaged.block.index != tip.index + 1 || packaged.block.pre_hash != hash_encoded(tip) {
            return Err(ChainError::NotOnTip);
        }
        let index = packaged.block.index;
        self.blocks.push(packaged.block);
        self.retained.insert(
            index,
            Retained { siginfos: packaged.siginfos, tree: packaged.tree },
        );
        let cutoff = index.saturating_sub(self.retention_window);
        self.retained = self.retained.split_off(&cutoff);
        Ok(())
    }

    fn retained(&self, block_index: u64) -> Result<&Retained, ServeError> {
        if block_index == 0 || block_index as usize >= self.blocks.len() {
            return Err(ServeError::UnknownBlock(block_index));
        }
        self.retained
            .get(&block_index)
            .ok_or(ServeError::BlockPruned(block_index))
    }

    /// Membership proof for `sender`'s batch digest in the given block.
    pub fn serve_mtree_proof(
        &self,
        block_index: u64,
        sender: &Address,
    ) -> Result<MtreeProof, ServeError> {
        let rec = self.retained(block_index)?;
        let pos = rec
            .siginfos
            .binary_search_by_key(sender, |a| a.sender)
            .map_err(|_| ServeError::UnknownSender(block_index))?;
        let tree = rec.tree.as_ref().ok_or(ServeError::UnknownSender(block_index))?;
        Ok(tree.prove(pos).expect("position is in range"))
    }

    /// Membership proof for a genesis allocation entry.
    pub fn serve_genesis_proof(&self, entry_index: usize) -> Result<MtreeProof, ServeError> {
        self.genesis_tree
            .prove(entry_index)
            .map_err(|_| ServeError::UnknownSender(0))
    }

    /// Does this block's retained SigInfos include `sender`?
    pub fn has_sender(&self, block_index: u64, sender: &Address) -> Result<bool, ServeError> {
        let rec = self.retained(block_index)?;
        Ok(rec.siginfos.binary_search_by_key(sender, |a| a.sender).is_ok())
    }

    pub fn respond_challenge(&self, challenge: &Challenge) -> Result<ChallengeResponse, ServeError> {
        let rec = self.retained(challenge.block_index)?;
        match challenge.kind {
            ChallengeKind::Bloom => Ok(ChallengeResponse::Bloom(BloomProof {
                block_index: challenge.block_index,
                elements: rec.siginfos.iter().map(|a| a.sender).collect(),
            })),
            ChallengeKind::Mtree => Ok(ChallengeResponse::Mtree(rec.siginfos.clone())),
        }
    }

    /// Encoded chain plus retained-tree footprint, for the storage metric.
    pub fn storage_bytes(&self) -> u64 {
        let blocks: usize = self.blocks.iter().map(Encode::encoded_len).sum();
        let retained: usize = self
            .retained
            .values()
            .map(|r| {
                crate::encoding::list_encoded_len(&r.siginfos)
                    + r.tree.as_ref().map_or(0, MerkleTree::stored_bytes)
            })
            .sum();
        (blocks + retained) as u64
    }
}

/// Check a challenge response against the on-chain block. For a bloom
/// challenge this also reports whether the challenged account turned out to
/// be a false positive.
pub fn verify_challenge_response(
    block: &Block,
    challenge: &Challenge,
    response: &ChallengeResponse,
) -> ChallengeOutcome {
    match response {
        ChallengeResponse::Bloom(proof) => {
            let rebuilt = bloom_rebuild(
                block.bloom_filter.m_bits(),
                block.bloom_filter.k(),
                &proof.elements,
            );
            if rebuilt != block.bloom_filter {
                return ChallengeOutcome::InvalidResponse;
            }
            if proof.elements.contains(&challenge.account) {
                ChallengeOutcome::GenuineMember
            } else {
                ChallengeOutcome::FalsePositive
            }
        }
        ChallengeResponse::Mtree(siginfos) => {
            let root = if siginfos.is_empty() {
                empty_pool_root()
            } else {
                MerkleTree::build(siginfos.iter().map(|a| a.txns_hash).collect())
                    .expect("non-empty")
                    .root()
            };
            if root != block.mtree_root {
                return ChallengeOutcome::InvalidResponse;
            }
            if siginfos.iter().any(|a| a.sender == challenge.account) {
                ChallengeOutcome::GenuineMember
            } else {
                ChallengeOutcome::FalsePositive
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ChallengeOutcome {
    /// The response reconstructs the commitment and contains the account.
    GenuineMember,
    /// The response reconstructs the commitment and the account is absent:
    /// it suffered a Bloom false positive (or was never included).
    FalsePositive,
    /// The response fails to reconstruct the on-chain commitment.
    InvalidResponse,
}

/// Convenience for building genesis allocations in tests and scenarios:
/// `per_owner` values of `coins_per_value` coins for each address, in order.
pub fn uniform_genesis(
    owners: &[Address],
    per_owner: u64,
    coins_per_value: u64,
) -> GenesisAllocation {
    let mut entries = Vec::new();
    let mut next = 0u64;
    for owner in owners {
        for _ in 0..per_owner {
            let value = crate::types::Value::new(next, next + coins_per_value - 1).unwrap();
            entries.push(GenesisEntry { owner: *owner, value });
            next += coins_per_value;
        }
    }
    GenesisAllocation::new(entries).expect("contiguous by construction")
}
