//! Domain types: interval values, transactions, batches, blocks and the
//! genesis allocation.

use std::fmt;

use thiserror::Error;

use crate::crypto::bloom::BloomFilter;
use crate::crypto::{Digest, Signature};
use crate::encoding::{self, tag, Encode};

/// Simulation time, in ticks. One tick is one millisecond.
pub type Tick = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValueError {
    #[error("interval begin {0} exceeds end {1}")]
    BadInterval(u64, u64),
    #[error("split amount {amount} out of range for a value of {total} coins")]
    SplitOutOfRange { amount: u64, total: u64 },
}

/// A contiguous set of coins, `[begin_index, end_index]` inclusive. Values
/// are the unit of ownership and transfer; within one ledger state all live
/// values are pairwise disjoint.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value {
    begin: u64,
    end: u64,
}

impl Value {
    pub fn new(begin: u64, end: u64) -> Result<Self, ValueError> {
        if begin > end {
            return Err(ValueError::BadInterval(begin, end));
        }
        Ok(Value { begin, end })
    }

    pub fn begin_index(&self) -> u64 {
        self.begin
    }

    pub fn end_index(&self) -> u64 {
        self.end
    }

    /// Number of coins in the interval: `end - begin + 1`.
    pub fn amount(&self) -> u64 {
        self.end - self.begin + 1
    }

    /// Prefix split: the left part keeps the `amount` lowest indices, the
    /// right part keeps the remainder. Requires `1 <= amount < self.amount()`.
    pub fn split(self, amount: u64) -> Result<(Value, Value), ValueError> {
        if amount == 0 || amount >= self.amount() {
            return Err(ValueError::SplitOutOfRange {
                amount,
                total: self.amount(),
            });
        }
        let left = Value {
            begin: self.begin,
            end: self.begin + amount - 1,
        };
        let right = Value {
            begin: self.begin + amount,
            end: self.end,
        };
        Ok((left, right))
    }

    pub fn intersects(&self, other: &Value) -> bool {
        self.begin <= other.end && other.begin <= self.end
    }

    pub fn contains(&self, other: &Value) -> bool {
        self.begin <= other.begin && other.end <= self.end
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value({}..={})", self.begin, self.end)
    }
}

impl Encode for Value {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::VALUE);
        encoding::put_u64(out, self.begin);
        encoding::put_u64(out, self.end);
    }

    fn encoded_len(&self) -> usize {
        17
    }
}

/// Node address, derived from the public key by hashing.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; 32]);

impl Address {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl Encode for Address {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_bytes(out, &self.0);
    }

    fn encoded_len(&self) -> usize {
        32
    }
}

/// A single value transfer, signed by the sender over the canonical encoding
/// of `(sender, recipient, values, time)`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Transaction {
    pub sender: Address,
    pub recipient: Address,
    pub values: Vec<Value>,
    pub time: Tick,
    pub sig_info: Signature,
}

impl Transaction {
    /// Bytes covered by `sig_info`: the encoding without the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        encoding::put_u8(&mut out, tag::TRANSACTION);
        self.sender.write(&mut out);
        self.recipient.write(&mut out);
        encoding::put_list(&mut out, &self.values);
        encoding::put_u64(&mut out, self.time);
        out
    }

    pub fn total_amount(&self) -> u64 {
        self.values.iter().map(Value::amount).sum()
    }

    /// True if any of this transaction's values overlaps `v`. Used by the
    /// double-spend scan.
    pub fn spends(&self, v: &Value) -> bool {
        self.values.iter().any(|x| x.intersects(v))
    }
}

impl Encode for Transaction {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.signing_bytes());
        self.sig_info.write(out);
    }

    fn encoded_len(&self) -> usize {
        1 + 32 + 32 + encoding::list_encoded_len(&self.values) + 8 + 64
    }
}

/// One sender's batch of transactions for one block. Hashed to a single
/// Merkle leaf.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Txns(pub Vec<Transaction>);

impl Txns {
    /// Checks the single-sender and intra-batch disjointness invariants.
    pub fn well_formed(&self) -> bool {
        let Some(first) = self.0.first() else {
            return false;
        };
        if !self.0.iter().all(|t| t.sender == first.sender) {
            return false;
        }
        for (i, a) in self.0.iter().enumerate() {
            for b in &self.0[i + 1..] {
                for va in &a.values {
                    if b.values.iter().any(|vb| vb.intersects(va)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn sender(&self) -> Option<Address> {
        self.0.first().map(|t| t.sender)
    }
}

impl Encode for Txns {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::TXNS);
        encoding::put_list(out, &self.0);
    }

    fn encoded_len(&self) -> usize {
        1 + encoding::list_encoded_len(&self.0)
    }
}

/// A sender's per-round submission to the transaction pool: its address, the
/// digest of its batch, and a signature over that digest.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AccTxn {
    pub sender: Address,
    pub txns_hash: Digest,
    pub sig_info: Signature,
}

impl Encode for AccTxn {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::ACC_TXN);
        self.sender.write(out);
        self.txns_hash.write(out);
        self.sig_info.write(out);
    }

    fn encoded_len(&self) -> usize {
        1 + 32 + 32 + 64
    }
}

/// Constant-size consensus unit. For fixed Bloom parameters the serialized
/// size does not depend on how many batches the Merkle tree absorbed.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    pub mtree_root: Digest,
    pub bloom_filter: BloomFilter,
    pub pre_hash: Digest,
    pub time: Tick,
    pub miner_sig: Signature,
    pub nonce: u64,
    pub index: u64,
}

impl Block {
    /// Bytes covered by `miner_sig`: the encoding without the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        encoding::put_u8(&mut out, tag::BLOCK);
        self.mtree_root.write(&mut out);
        self.bloom_filter.write(&mut out);
        self.pre_hash.write(&mut out);
        encoding::put_u64(&mut out, self.time);
        encoding::put_u64(&mut out, self.nonce);
        encoding::put_u64(&mut out, self.index);
        out
    }
}

impl Encode for Block {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.signing_bytes());
        self.miner_sig.write(out);
    }

    fn encoded_len(&self) -> usize {
        1 + 32 + self.bloom_filter.encoded_len() + 32 + 8 + 8 + 8 + 64
    }
}

/// One genesis entry: an address and the value it starts with.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct GenesisEntry {
    pub owner: Address,
    pub value: Value,
}

impl Encode for GenesisEntry {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::GENESIS_ENTRY);
        self.owner.write(out);
        self.value.write(out);
    }

    fn encoded_len(&self) -> usize {
        1 + 32 + 17
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenesisError {
    #[error("genesis values are not disjoint and contiguous from index 0")]
    NotContiguous,
    #[error("genesis allocation is empty")]
    Empty,
}

/// The initial ownership of the whole coin set. Entries must be pairwise
/// disjoint and cover `[0, total_coins - 1]` without gaps.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GenesisAllocation {
    entries: Vec<GenesisEntry>,
    total_coins: u64,
}

impl GenesisAllocation {
    pub fn new(mut entries: Vec<GenesisEntry>) -> Result<Self, GenesisError> {
        if entries.is_empty() {
            return Err(GenesisError::Empty);
        }
        entries.sort_by_key(|e| e.value.begin_index());
        let mut next = 0u64;
        for e in &entries {
            if e.value.begin_index() != next {
                return Err(GenesisError::NotContiguous);
            }
            next = e.value.end_index() + 1;
        }
        Ok(GenesisAllocation {
            entries,
            total_coins: next,
        })
    }

    pub fn entries(&self) -> &[GenesisEntry] {
        &self.entries
    }

    pub fn total_coins(&self) -> u64 {
        self.total_coins
    }

    /// The genesis owner of `v`, if a single entry contains the whole
    /// interval.
    pub fn owner_of(&self, v: &Value) -> Option<Address> {
        self.entries
            .iter()
            .find(|e| e.value.contains(v))
            .map(|e| e.owner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(b: u64, e: u64) -> Value {
        Value::new(b, e).unwrap()
    }

    /// Enumeration oracle: the set of coin indices in a value.
    fn enumerate(val: &Value) -> Vec<u64> {
        (val.begin_index()..=val.end_index()).collect()
    }

    #[test]
    fn amount_examples() {
        assert_eq!(v(0, 0).amount(), 1);
        assert_eq!(v(0, 99).amount(), 100);
        // (17, 41): enumeration oracle counts 25 integers.
        assert_eq!(enumerate(&v(17, 41)).len(), 25);
        assert_eq!(v(17, 41).amount(), 25);
    }

    #[test]
    fn split_examples() {
        let (l, r) = v(0, 99).split(40).unwrap();
        assert_eq!((l, r), (v(0, 39), v(40, 99)));
        // union and disjointness via enumeration
        let mut both: Vec<u64> = enumerate(&l).into_iter().chain(enumerate(&r)).collect();
        both.sort_unstable();
        assert_eq!(both, enumerate(&v(0, 99)));
        assert!(!l.intersects(&r));

        assert_eq!(v(5, 6).split(1).unwrap(), (v(5, 5), v(6, 6)));
        assert_eq!(
            v(0, 0).split(1),
            Err(ValueError::SplitOutOfRange { amount: 1, total: 1 })
        );
    }

    #[test]
    fn intersect_examples() {
        assert!(!v(0, 9).intersects(&v(10, 19)));
        assert!(v(0, 9).intersects(&v(9, 12)));
        assert!(v(3, 3).intersects(&v(0, 99)));
    }

    #[test]
    fn intersect_matches_enumeration_exhaustively() {
        // Every pair of intervals within [0, 30]: compare against brute-force
        // set intersection.
        for a0 in 0..=30u64 {
            for a1 in a0..=30 {
                for b0 in 0..=30u64 {
                    for b1 in b0..=30 {
                        let a = v(a0, a1);
                        let b = v(b0, b1);
                        let brute = enumerate(&a).iter().any(|x| enumerate(&b).contains(x));
                        assert_eq!(a.intersects(&b), brute, "{a:?} vs {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn genesis_requires_contiguity() {
        let owner = Address([7; 32]);
        let good = GenesisAllocation::new(vec![
            GenesisEntry { owner, value: v(0, 9) },
            GenesisEntry { owner, value: v(10, 19) },
        ])
        .unwrap();
        assert_eq!(good.total_coins(), 20);
        assert_eq!(good.owner_of(&v(12, 15)), Some(owner));
        assert_eq!(good.owner_of(&v(5, 15)), None);

        let gap = GenesisAllocation::new(vec![
            GenesisEntry { owner, value: v(0, 9) },
            GenesisEntry { owner, value: v(11, 19) },
        ]);
        assert_eq!(gap, Err(GenesisError::NotContiguous));
    }
}
