//! Where keys live: token ring, hashed shards and key-range regions.

use md5::{Digest, Md5};

/// Name of synthetic key `k`; this string is what gets hashed.
pub fn key_name(k: u32) -> String {
    format!("vol{k:07}")
}

/// Partitioner token: the low 64 bits of MurmurHash3 x64/128 (seed 0).
pub fn murmur_token(key: &[u8]) -> i64 {
    let h = murmur3::murmur3_x64_128(&mut &key[..], 0).expect("reading a slice cannot fail");
    h as u64 as i64
}

/// Token ring with one token per node, evenly spaced. Node `i` owns
/// `(token[i-1], token[i]]`; tokens above the last wrap to node 0.
#[derive(Clone, Debug)]
pub struct Ring {
    tokens: Vec<i64>,
}

impl Ring {
    pub fn even(nodes: usize) -> Self {
        assert!(nodes > 0);
        let step = (1i128 << 64) / nodes as i128;
        let tokens = (0..nodes)
            .map(|i| (i64::MIN as i128 + i as i128 * step) as i64)
            .collect();
        Self { tokens }
    }

    pub fn tokens(&self) -> &[i64] {
        &self.tokens
    }

    pub fn owner(&self, token: i64) -> usize {
        let i = self.tokens.partition_point(|&t| t < token);
        if i == self.tokens.len() {
            0
        } else {
            i
        }
    }

    /// Owner first, then the next `rf - 1` nodes clockwise.
    pub fn replicas(&self, token: i64, rf: usize) -> Vec<usize> {
        let n = self.tokens.len();
        let first = self.owner(token);
        (0..rf.min(n)).map(|i| (first + i) % n).collect()
    }
}

pub fn ring_replicas(key: &str, ring: &Ring, rf: usize) -> Vec<usize> {
    ring.replicas(murmur_token(key.as_bytes()), rf)
}

/// Hashed sharding: the first 8 bytes of the key's MD5 split evenly into
/// `shards` contiguous ranges.
pub fn shard_of(key: &str, shards: usize) -> usize {
    let digest = Md5::digest(key.as_bytes());
    let h = u64::from_be_bytes(digest[..8].try_into().unwrap());
    ((h as u128 * shards as u128) >> 64) as usize
}

/// Regions are contiguous ranges of the sorted key space.
pub fn region_of(key: u32, keys: u32, regions: u32) -> u32 {
    ((key as u64 * regions as u64) / keys as u64) as u32
}
