//! Probability that a freshly drawn charging set overlaps the previous one.
//!
//! With `m` capacitors driving, `m` charging and `n` in total, the next
//! charging set is drawn from the `n - m` capacitors not driving. It avoids
//! the previous charging set with probability `C(n-2m, m) / C(n-m, m)`.

use num_rational::Ratio;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `C(a, b)`, zero when `b > a`.
pub fn binomial(a: u64, b: u64) -> u128 {
    if b > a {
        return 0;
    }
    let b = b.min(a - b);
    let mut acc: u128 = 1;
    for i in 0..b {
        acc = acc * (a - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Leak probability as an exact fraction. Requires `n >= m >= 1`; when fewer
/// than `m` capacitors are free (`n < 2m`) every draw overlaps and the result
/// is one.
pub fn p_leak_exact(n: u64, m: u64) -> Ratio<u128> {
    assert!(m >= 1 && n >= m, "p_leak needs n >= m >= 1 (n={n}, m={m})");
    let total = binomial(n - m, m);
    if total == 0 {
        return Ratio::from_integer(1);
    }
    let avoid = binomial(n.saturating_sub(2 * m), m);
    Ratio::new(total - avoid, total)
}

pub fn p_leak(n: u64, m: u64) -> f64 {
    let r = p_leak_exact(n, m);
    *r.numer() as f64 / *r.denom() as f64
}

/// Monte-Carlo estimate of [`p_leak`]: drivers are `{0..m}`, the reference
/// charging set is `{m..2m}` and each trial draws a uniform `m`-subset of the
/// `n - m` non-driving capacitors.
pub fn p_leak_monte_carlo(n: u64, m: u64, trials: u64, seed: u64) -> f64 {
    assert!(trials >= 1 && m >= 1 && n >= m);
    let free = (n - m) as usize;
    let m = m as usize;
    if free < m {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaks = 0u64;
    for _ in 0..trials {
        // Offsets into the free capacitors; the first m of them form the
        // reference charging set.
        if index::sample(&mut rng, free, m).iter().any(|i| i < m) {
            leaks += 1;
        }
    }
    leaks as f64 / trials as f64
}

/// Binomial standard error of a proportion estimated from `trials` draws.
pub fn standard_error(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}
