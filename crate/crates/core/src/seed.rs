//! Stable seed derivation: every random stream in the crate is keyed by a
//! master seed plus a purpose label (and optionally an index), so results
//! do not depend on evaluation order.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Seed for the stream named `label` under `seed`.
pub fn derive(seed: u64, label: &str) -> u64 {
    splitmix(fnv(label.bytes(), fnv(seed.to_le_bytes(), FNV_OFFSET)))
}

/// Seed for element `index` of the stream named `label` under `seed`.
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix(derive(seed, label) ^ splitmix(index))
}
