//! Seeded hashing helpers used wherever a deterministic draw is keyed on a token.

use sha2::{Digest, Sha256};

/// Uniform 64-bit draw keyed on `(seed, salt, token)`; independent of input order.
pub fn uniform_key(seed: u64, salt: &str, token: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((salt.len() as u64).to_le_bytes());
    h.update(salt.as_bytes());
    h.update(token.as_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

/// Marks exactly `take` tokens (the ones with the smallest keyed draws) as selected.
pub fn keyed_selection(tokens: &[&str], seed: u64, salt: &str, take: usize) -> Vec<bool> {
    let mut order: Vec<(u64, usize)> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (uniform_key(seed, salt, t), i))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| tokens[a.1].cmp(tokens[b.1])));
    let mut selected = vec![false; tokens.len()];
    for &(_, i) in order.iter().take(take) {
        selected[i] = true;
    }
    selected
}

/// Seeded holdout assignment: `true` marks a test row. The test share is
/// `round(n * fraction)` rows.
pub fn holdout_mask(tokens: &[&str], seed: u64, test_fraction: f64) -> Vec<bool> {
    let take = (tokens.len() as f64 * test_fraction).round() as usize;
    keyed_selection(tokens, seed, "holdout", take)
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    let digest = Sha256::digest(bytes.as_ref());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Order-sensitive hash of a list of tokens (one per line).
pub fn sample_hash<'a>(tokens: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_selection_takes_exact_count_and_ignores_order() {
        let ids = ["m1", "m2", "m3", "m4", "m5"];
        let sel = keyed_selection(&ids, 7, "x", 2);
        assert_eq!(sel.iter().filter(|s| **s).count(), 2);
        let rev: Vec<&str> = ids.iter().rev().copied().collect();
        let sel_rev = keyed_selection(&rev, 7, "x", 2);
        let picked: Vec<&str> = ids.iter().zip(&sel).filter(|p| *p.1).map(|p| *p.0).collect();
        let picked_rev: Vec<&str> = rev.iter().zip(&sel_rev).filter(|p| *p.1).map(|p| *p.0).collect();
        let mut a = picked.clone();
        let mut b = picked_rev.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
