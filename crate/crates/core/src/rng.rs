//! Deterministic, splittable random streams.
//!
//! Every source of randomness in this crate is a [`Stream`] created from a
//! 64-bit key. Keys for sub-tasks (trials, iterations, sketch rows, workers)
//! are derived with [`derive`], so parallel work is reproducible bit-for-bit
//! regardless of scheduling: the same `(seed, path)` always yields the same
//! stream. Not cryptographically secure.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child key from `key` and a path of indices.
///
/// Each path element is absorbed through a splitmix avalanche, so
/// `derive(k, &[a, b])` differs from `derive(k, &[b, a])` and from
/// `derive(k, &[a])` for all practical purposes.
pub fn derive(key: u64, path: &[u64]) -> u64 {
    let mut h = key;
    for &p in path {
        let mut s = h ^ p.wrapping_mul(GOLDEN);
        h = splitmix64(&mut s);
    }
    h
}

/// xoshiro256++ stream seeded from a single key via splitmix64 expansion.
#[derive(Clone, Debug)]
pub struct Stream {
    state: [u64; 4],
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn new(key: u64) -> Self {
        let mut s = key;
        let state = [
            splitmix64(&mut s),
            splitmix64(&mut s),
            splitmix64(&mut s),
            splitmix64(&mut s),
        ];
        Stream {
            state,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Random sign, `+1.0` or `-1.0` with equal probability.
    #[inline]
    pub fn next_sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Unbiased integer in `[0, n)` via Lemire's multiply-shift rejection.
    #[inline]
    pub fn next_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        loop {
            let x = self.next_u64();
            let m = x as u128 * n as u128;
            let low = m as u64;
            if low >= n.wrapping_neg() % n {
                return (m >> 64) as usize;
            }
            // reject to stay exactly uniform
        }
    }

    /// Standard normal via the Marsaglia polar method.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let r = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * r);
                return u * r;
            }
        }
    }

    /// Fill a slice with standard normals.
    pub fn fill_normals(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.next_normal();
        }
    }

    /// Partial Fisher-Yates: the first `k` elements of a random permutation
    /// of `0..n`, in draw order (sampling without replacement).
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n} without replacement");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_range(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

/// Categorical sampler over the positive-probability entries of a
/// distribution. Zero-probability indices are structurally unreachable.
#[derive(Clone, Debug)]
pub struct Categorical {
    cumulative: Vec<f64>,
    support: Vec<u32>,
}

impl Categorical {
    /// `weights` must be non-negative and finite with a positive sum; they
    /// are normalized internally.
    pub fn new(weights: &[f64]) -> Option<Self> {
        if weights.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for &w in weights {
            if !w.is_finite() || w < 0.0 {
                return None;
            }
            total += w;
        }
        if !total.is_finite() || total <= 0.0 {
            return None;
        }
        let mut cumulative = Vec::new();
        let mut support = Vec::new();
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w / total;
                cumulative.push(acc);
                support.push(i as u32);
            }
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Some(Categorical {
            cumulative,
            support,
        })
    }

    pub fn sample(&self, stream: &mut Stream) -> usize {
        let u = stream.next_f64();
        let pos = self.cumulative.partition_point(|&c| c <= u);
        let pos = pos.min(self.support.len() - 1);
        self.support[pos] as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = Stream::new(42);
        let mut b = Stream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Stream::new(43);
        assert_ne!(Stream::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn derive_separates_paths() {
        let k = 7;
        assert_ne!(derive(k, &[1, 2]), derive(k, &[2, 1]));
        assert_ne!(derive(k, &[1]), derive(k, &[1, 0]));
        assert_eq!(derive(k, &[3, 4]), derive(k, &[3, 4]));
    }

    #[test]
    fn uniform_and_range_bounds() {
        let mut s = Stream::new(1);
        for _ in 0..10_000 {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
            let r = s.next_range(7);
            assert!(r < 7);
        }
    }

    #[test]
    fn normal_moments_sane() {
        let mut s = Stream::new(5);
        let n = 200_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.next_normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn categorical_respects_support() {
        let cat = Categorical::new(&[0.0, 0.5, 0.0, 0.5]).unwrap();
        let mut s = Stream::new(9);
        for _ in 0..1000 {
            let i = cat.sample(&mut s);
            assert!(i == 1 || i == 3);
        }
        assert!(Categorical::new(&[0.0, 0.0]).is_none());
        assert!(Categorical::new(&[-1.0, 2.0]).is_none());
        assert!(Categorical::new(&[f64::NAN]).is_none());
    }

    #[test]
    fn without_replacement_is_a_partial_permutation() {
        let mut s = Stream::new(11);
        let sample = s.sample_without_replacement(16, 10);
        let mut sorted = sample.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert!(sorted.iter().all(|&i| i < 16));
    }
}
