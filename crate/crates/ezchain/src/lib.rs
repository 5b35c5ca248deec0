//! EZchain: an interval-valued ledger in which blocks carry only a Merkle
//! root and a Bloom filter, while the full ownership history of each value
//! travels peer to peer as a sender-supplied proof chain (VPB pair) that the
//! recipient verifies on its own.
//!
//! The crate is organised as:
//! * [`types`] / [`encoding`] — domain types and the canonical byte encoding
//!   used for all hashing, signing and size accounting,
//! * [`crypto`] — hashing, signatures, Merkle trees with membership proofs,
//!   and a Bloom filter with deterministic reconstruction proofs,
//! * [`consensus`] — transaction pool, block packaging and validation, leader
//!   election, proof serving and the challenge protocol,
//! * [`account`] — wallets, value selection, VPB construction, transfer and
//!   recipient-side verification, and the checkpoint mechanism,
//! * [`simnet`] — a deterministic discrete-event network simulator,
//! * [`harness`] — metric computation, CSV emission and the experiment CLI.

pub mod account;
pub mod consensus;
pub mod crypto;
pub mod encoding;
pub mod harness;
pub mod simnet;
pub mod types;
