//! Per-block Bloom filter of sender addresses, plus the reconstruction proof
//! used to settle false-positive disputes.
//!
//! Probe positions use double hashing: `h1 + i * h2 (mod m)` with `h1` and
//! `h2` derived from two seeded SHA-256 digests of the address. This gives k
//! probe functions from a single hash primitive, and makes the filter bits a
//! pure function of the inserted element set.

use super::hash_pair;
use crate::encoding::{self, tag, Encode};
use crate::types::Address;

/// Fixed-size Bloom filter: `m` bits, `k` probes per element. No false
/// negatives; false positives at the configured rate.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BloomFilter {
    m_bits: u64,
    k: u32,
    bits: Vec<u8>,
}

impl BloomFilter {
    pub fn new(m_bits: u64, k: u32) -> Self {
        assert!(m_bits > 0 && k > 0, "bloom parameters must be positive");
        BloomFilter {
            m_bits,
            k,
            bits: vec![0; m_bits.div_ceil(8) as usize],
        }
    }

    pub fn m_bits(&self) -> u64 {
        self.m_bits
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    fn positions(&self, addr: &Address) -> impl Iterator<Item = u64> + '_ {
        let h1 = u64::from_be_bytes(
            hash_pair(&[0x01], addr.as_bytes()).0[..8].try_into().unwrap(),
        );
        let h2 = u64::from_be_bytes(
            hash_pair(&[0x02], addr.as_bytes()).0[..8].try_into().unwrap(),
        );
        let m = self.m_bits;
        (0..self.k as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % m)
    }

    pub fn insert(&mut self, addr: &Address) {
        let positions: Vec<u64> = self.positions(addr).collect();
        for pos in positions {
            self.bits[(pos / 8) as usize] |= 1 << (pos % 8);
        }
    }

    pub fn query(&self, addr: &Address) -> bool {
        self.positions(addr)
            .collect::<Vec<_>>()
            .iter()
            .all(|pos| self.bits[(pos / 8) as usize] & (1 << (pos % 8)) != 0)
    }

    /// Hash invocations per insert or query, for operation accounting.
    pub fn hash_ops_per_element() -> u64 {
        2
    }
}

impl Encode for BloomFilter {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::BLOOM_FILTER);
        encoding::put_u32(out, self.k);
        encoding::put_u64(out, self.m_bits);
        encoding::put_bytes(out, &self.bits);
    }

    fn encoded_len(&self) -> usize {
        1 + 4 + 8 + self.bits.len()
    }
}

/// Rebuild a filter from an element set. The result is bit-identical for the
/// same set regardless of order or duplication.
pub fn bloom_rebuild(m_bits: u64, k: u32, elements: &[Address]) -> BloomFilter {
    let mut f = BloomFilter::new(m_bits, k);
    for addr in elements {
        f.insert(addr);
    }
    f
}

/// The complete element set of one block's filter. Rebuilding from it and
/// comparing bit-for-bit against the on-chain filter proves (or refutes) that
/// a queried address is a false positive.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BloomProof {
    pub block_index: u64,
    pub elements: Vec<Address>,
}

impl BloomProof {
    /// True if this proof reconstructs `filter` exactly and shows `addr` was
    /// never inserted.
    pub fn proves_false_positive(&self, filter: &BloomFilter, addr: &Address) -> bool {
        !self.elements.contains(addr)
            && bloom_rebuild(filter.m_bits, filter.k, &self.elements) == *filter
    }
}

impl Encode for BloomProof {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::BLOOM_PROOF);
        encoding::put_u64(out, self.block_index);
        encoding::put_list(out, &self.elements);
    }

    fn encoded_len(&self) -> usize {
        1 + 8 + encoding::list_encoded_len(&self.elements)
    }
}

/// Analytic false-positive rate `(1 - e^(-kn/m))^k` for `n` inserted
/// elements.
pub fn analytic_fpr(m_bits: u64, k: u32, n: u64) -> f64 {
    let exponent = -(k as f64) * (n as f64) / (m_bits as f64);
    (1.0 - exponent.exp()).powi(k as i32)
}
