//! Seeded shuffling and balanced contiguous splitting, shared by production
//! item assignment and fold construction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a given seed. ChaCha output is stable across
/// platforms and crate releases, which keeps stored assignments reproducible.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = seeded_rng(seed);
    items.shuffle(&mut rng);
}

/// Sizes of `parts` contiguous chunks of `n` items: sizes differ by at most
/// one and the larger chunks come first.
pub fn part_sizes(n: usize, parts: usize) -> Vec<usize> {
    assert!(parts > 0, "part count must be positive");
    let base = n / parts;
    let extra = n % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Shuffle a copy of `items` with `seed`, then cut it into `parts` contiguous
/// chunks sized by [`part_sizes`].
pub fn shuffled_split<T: Clone>(items: &[T], parts: usize, seed: u64) -> Vec<Vec<T>> {
    let mut shuffled = items.to_vec();
    seeded_shuffle(&mut shuffled, seed);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for size in part_sizes(items.len(), parts) {
        out.push(shuffled[start..start + size].to_vec());
        start += size;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remainder_goes_to_leading_parts() {
        assert_eq!(part_sizes(11, 2), vec![6, 5]);
        assert_eq!(part_sizes(1786, 2), vec![893, 893]);
        assert_eq!(part_sizes(1786, 5), vec![358, 357, 357, 357, 357]);
        assert_eq!(part_sizes(10, 5), vec![2; 5]);
    }

    #[test]
    fn split_is_deterministic_and_covering() {
        let items: Vec<u32> = (0..37).collect();
        let a = shuffled_split(&items, 4, 9);
        let b = shuffled_split(&items, 4, 9);
        assert_eq!(a, b);
        let mut all: Vec<u32> = a.concat();
        all.sort();
        assert_eq!(all, items);
        assert_ne!(shuffled_split(&items, 4, 10), a);
    }
}
