//! Exact hypergeometric sampling.
//!
//! `rand_distr`'s hypergeometric overflows its factorial-ratio setup for
//! population sizes in the thousands, which is exactly the regime of the
//! small-population designs here. Sampling units one at a time without
//! replacement is exact, needs one uniform per drawn unit, and the draw
//! counts involved (at most a few thousand per cell) keep it cheap.

use rand::Rng;

/// Number of successes in `draws` taken without replacement from a
/// population of `total` containing `successes` marked units.
pub(crate) fn hypergeometric_draw(
    rng: &mut impl Rng,
    total: u64,
    successes: u64,
    draws: u64,
) -> u64 {
    debug_assert!(successes <= total);
    debug_assert!(draws <= total);
    let mut remaining = total;
    let mut remaining_successes = successes;
    let mut hits = 0;
    for _ in 0..draws {
        // random() lies in [0, 1), so p = 1 always hits and p = 0 never does
        let p = remaining_successes as f64 / remaining as f64;
        if rng.random::<f64>() < p {
            hits += 1;
            remaining_successes -= 1;
        }
        remaining -= 1;
    }
    hits
}
