//! Merkle tree over batch digests, with membership proofs.
//!
//! A parent is `hash(left || right)`. A layer with an odd node count
//! duplicates its last node (Bitcoin-style). A single-leaf tree degenerates
//! to `root = leaf` with an empty proof.

use thiserror::Error;

use super::{hash_pair, Digest};
use crate::encoding::{self, tag, Encode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree from zero leaves")]
    EmptyTree,
    #[error("leaf index {index} out of range for {leaves} leaves")]
    IndexOutOfRange { index: usize, leaves: usize },
}

/// Which side a proof sibling sits on when replaying towards the root.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Side {
    Left,
    Right,
}

/// Membership proof: the leaf, its index, and the sibling path to the root.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MtreeProof {
    pub leaf: Digest,
    pub leaf_index: u64,
    pub siblings: Vec<(Digest, Side)>,
}

impl Encode for MtreeProof {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_u8(out, tag::MTREE_PROOF);
        self.leaf.write(out);
        encoding::put_u64(out, self.leaf_index);
        encoding::put_u32(out, self.siblings.len() as u32);
        for (digest, side) in &self.siblings {
            digest.write(out);
            encoding::put_u8(out, matches!(side, Side::Right) as u8);
        }
    }

    fn encoded_len(&self) -> usize {
        1 + 32 + 8 + 4 + 33 * self.siblings.len()
    }
}

/// Frozen Merkle tree: all layers, leaves first.
#[derive(Clone, Debug)]
pub struct MerkleTree {
    layers: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn build(leaves: Vec<Digest>) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::EmptyTree);
        }
        let mut layers = vec![leaves];
        while layers.last().unwrap().len() > 1 {
            let prev = layers.last().unwrap();
            let mut next = Vec::with_capacity(prev.len().div_ceil(2));
            for pair in prev.chunks(2) {
                let left = pair[0];
                let right = *pair.get(1).unwrap_or(&pair[0]);
                next.push(hash_pair(left.as_bytes(), right.as_bytes()));
            }
            layers.push(next);
        }
        Ok(MerkleTree { layers })
    }

    pub fn root(&self) -> Digest {
        self.layers.last().unwrap()[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.layers[0].len()
    }

    /// Number of hash invocations the construction performed.
    pub fn hash_ops(&self) -> u64 {
        self.layers[1..].iter().map(|l| l.len() as u64).sum()
    }

    pub fn prove(&self, leaf_index: usize) -> Result<MtreeProof, MerkleError> {
        if leaf_index >= self.leaf_count() {
            return Err(MerkleError::IndexOutOfRange {
                index: leaf_index,
                leaves: self.leaf_count(),
            });
        }
        let mut siblings = Vec::new();
        let mut idx = leaf_index;
        for layer in &self.layers[..self.layers.len() - 1] {
            let (sib_idx, side) = if idx % 2 == 0 {
                (idx + 1, Side::Right)
            } else {
                (idx - 1, Side::Left)
            };
            // duplication rule: an odd tail node is its own sibling
            let sib = *layer.get(sib_idx).unwrap_or(&layer[idx]);
            siblings.push((sib, side));
            idx /= 2;
        }
        Ok(MtreeProof {
            leaf: self.layers[0][leaf_index],
            leaf_index: leaf_index as u64,
            siblings,
        })
    }

    /// Total encoded size of the stored layers, for storage accounting.
    pub fn stored_bytes(&self) -> usize {
        self.layers.iter().map(|l| 32 * l.len()).sum()
    }
}

/// Replay `proof` from its leaf and compare against `root`.
pub fn merkle_verify(root: &Digest, proof: &MtreeProof) -> bool {
    let mut acc = proof.leaf;
    let mut idx = proof.leaf_index;
    for (sib, side) in &proof.siblings {
        // the side flag must agree with the index path
        let expected = if idx % 2 == 0 { Side::Right } else { Side::Left };
        if *side != expected {
            return false;
        }
        acc = match side {
            Side::Right => hash_pair(acc.as_bytes(), sib.as_bytes()),
            Side::Left => hash_pair(sib.as_bytes(), acc.as_bytes()),
        };
        idx /= 2;
    }
    acc == *root
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    /// Independent oracle: naive recursion with the same duplication rule.
    fn naive_root(leaves: &[Digest]) -> Digest {
        if leaves.len() == 1 {
            return leaves[0];
        }
        let mut next = Vec::new();
        for pair in leaves.chunks(2) {
            let right = pair.get(1).unwrap_or(&pair[0]);
            next.push(hash_pair(pair[0].as_bytes(), right.as_bytes()));
        }
        naive_root(&next)
    }

    fn leaves(n: usize, salt: u8) -> Vec<Digest> {
        (0..n).map(|i| hash(&[salt, i as u8])).collect()
    }

    #[test]
    fn single_leaf_root_is_the_leaf() {
        let l = hash(b"only");
        let t = MerkleTree::build(vec![l]).unwrap();
        assert_eq!(t.root(), l);
        let p = t.prove(0).unwrap();
        assert!(p.siblings.is_empty());
        assert!(merkle_verify(&t.root(), &p));
    }

    #[test]
    fn two_leaf_root_is_hash_of_concat() {
        let (a, b) = (hash(b"a"), hash(b"b"));
        let t = MerkleTree::build(vec![a, b]).unwrap();
        assert_eq!(t.root(), hash_pair(a.as_bytes(), b.as_bytes()));
    }

    #[test]
    fn empty_leaves_rejected() {
        assert_eq!(MerkleTree::build(vec![]).unwrap_err(), MerkleError::EmptyTree);
    }

    #[test]
    fn root_matches_naive_oracle_for_all_small_sizes() {
        for n in 1..=64 {
            let ls = leaves(n, 0xa1);
            let t = MerkleTree::build(ls.clone()).unwrap();
            assert_eq!(t.root(), naive_root(&ls), "n = {n}");
        }
    }

    #[test]
    fn prove_verify_round_trip_exhaustive_8_leaves() {
        let ls = leaves(8, 0xb2);
        let t = MerkleTree::build(ls).unwrap();
        for i in 0..8 {
            let p = t.prove(i).unwrap();
            assert!(merkle_verify(&t.root(), &p));
        }
        assert!(t.prove(8).is_err());
    }

    #[test]
    fn any_sibling_bit_flip_breaks_verification() {
        let t = MerkleTree::build(leaves(5, 0xc3)).unwrap();
        let p = t.prove(3).unwrap();
        for s in 0..p.siblings.len() {
            let mut bad = p.clone();
            bad.siblings[s].0 .0[0] ^= 1;
            assert!(!merkle_verify(&t.root(), &bad));
        }
        let mut bad_leaf = p.clone();
        bad_leaf.leaf.0[31] ^= 1;
        assert!(!merkle_verify(&t.root(), &bad_leaf));
    }

    #[test]
    fn proof_does_not_verify_against_foreign_root() {
        let t1 = MerkleTree::build(leaves(6, 0xd4)).unwrap();
        let t2 = MerkleTree::build(leaves(6, 0xd5)).unwrap();
        for i in 0..6 {
            assert!(!merkle_verify(&t2.root(), &t1.prove(i).unwrap()));
        }
    }
}
