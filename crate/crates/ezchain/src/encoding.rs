//! Canonical byte encoding.
//!
//! Every hash, signature and size metric in the system is computed over this
//! encoding, so it has to be deterministic and injective, and identical across
//! processes and runs. The format is:
//!
//! * integers are big-endian, fixed width (`u64` -> 8 bytes, `u32` -> 4),
//! * fixed-width byte arrays (digests, signatures, addresses) are written raw,
//! * variable-length lists are a `u32` big-endian element count followed by
//!   the elements in order,
//! * every struct begins with a one-byte type tag (see [`tag`]) and writes
//!   its fields in declaration order,
//! * optional fields are a presence byte (`0`/`1`) followed by the payload.

/// Type tags. One per encodable struct so that encodings of distinct types
/// never collide.
pub mod tag {
    pub const VALUE: u8 = 0x01;
    pub const TRANSACTION: u8 = 0x02;
    pub const TXNS: u8 = 0x03;
    pub const ACC_TXN: u8 = 0x04;
    pub const BLOCK: u8 = 0x05;
    pub const BLOOM_FILTER: u8 = 0x06;
    pub const MTREE_PROOF: u8 = 0x07;
    pub const PROOF_UNIT: u8 = 0x08;
    pub const VPB_PAIR: u8 = 0x09;
    pub const BLOOM_PROOF: u8 = 0x0a;
    pub const CHECKPOINT: u8 = 0x0b;
    pub const GENESIS_ENTRY: u8 = 0x0c;
}

/// Deterministic, injective byte encoding.
pub trait Encode {
    fn write(&self, out: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out);
        out
    }

    /// Size of the encoding in bytes. The default materialises the encoding;
    /// hot types override this with an arithmetic computation.
    fn encoded_len(&self) -> usize {
        self.encode().len()
    }
}

pub fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_bytes(out: &mut Vec<u8>, v: &[u8]) {
    out.extend_from_slice(v);
}

/// `u32` count followed by the elements.
pub fn put_list<T: Encode>(out: &mut Vec<u8>, items: &[T]) {
    put_u32(out, items.len() as u32);
    for item in items {
        item.write(out);
    }
}

pub fn list_encoded_len<T: Encode>(items: &[T]) -> usize {
    4 + items.iter().map(Encode::encoded_len).sum::<usize>()
}
