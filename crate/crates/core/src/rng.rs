//! Splittable, counter-based random streams.
//!
//! A stream is identified by a master seed and a fork path. Its key is a
//! hash of that identity, and draw `i` is a pure function of `(key, i)`:
//! the SplitMix64 output function applied to `base + i * gamma`, where both
//! `base` and the odd increment `gamma` come from the key. Sub-streams for
//! folds, steps and examples are obtained with [`RandomStream::fork`], so
//! results never depend on the order in which independent tasks consume
//! randomness.
//!
//! Normal variates use Marsaglia's polar method on 53-bit uniforms. The
//! second variate of each accepted pair is cached and returned by the next
//! call.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// Variant 13 finalizer, used for gammas as in SplittableRandom.
#[inline]
fn mix64_variant(mut z: u64) -> u64 {
    z = (z ^ (z >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    z = (z ^ (z >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    z ^ (z >> 33)
}

#[inline]
fn mix_gamma(z: u64) -> u64 {
    let g = mix64_variant(z) | 1;
    // Reject gammas with too few bit transitions.
    if (g ^ (g >> 1)).count_ones() < 24 {
        g ^ 0xaaaa_aaaa_aaaa_aaaa
    } else {
        g
    }
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u32>,
    counter: u64,
    base: u64,
    gamma: u64,
    spare_normal: Option<f64>,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::from_path(seed, Vec::new())
    }

    fn from_path(seed: u64, path: Vec<u32>) -> Self {
        let mut base = mix64(seed ^ 0x243f_6a88_85a3_08d3);
        let mut gamma_src = mix64(seed.wrapping_add(0x1319_8a2e_0370_7344));
        for &label in &path {
            let l = mix64((label as u64).wrapping_add(GOLDEN_GAMMA));
            base = mix64(base ^ l);
            gamma_src = mix64(gamma_src.wrapping_add(base) ^ l.rotate_left(17));
        }
        RandomStream {
            seed,
            path,
            counter: 0,
            base,
            gamma: mix_gamma(gamma_src),
            spare_normal: None,
        }
    }

    /// Child stream keyed by this stream's identity plus `label`. The parent
    /// is not advanced; the child's draws do not depend on how many draws
    /// the parent has already made.
    pub fn fork(&self, label: u32) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        Self::from_path(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    /// Number of 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// A 64-bit digest of `(seed, path)`, handy for manifests.
    pub fn fingerprint(&self) -> u64 {
        mix64(self.base ^ self.gamma)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let x = self
            .base
            .wrapping_add(self.counter.wrapping_mul(self.gamma));
        self.counter += 1;
        mix64(x)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, Lemire's multiply-shift with rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// One Bernoulli trial. Always consumes exactly one word.
    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!(
                "bernoulli probability {p} outside [0, 1]"
            )));
        }
        Ok(self.uniform() < p)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// `mean + std * z`. A zero `std` still consumes a variate and yields
    /// `mean` exactly.
    pub fn gaussian(&mut self, mean: f64, std: f64) -> Result<f64> {
        if !(std >= 0.0) {
            return Err(Error::domain(format!("gaussian std {std} must be >= 0")));
        }
        Ok(mean + std * self.standard_normal())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn normals(s: &mut RandomStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| s.standard_normal()).collect()
    }

    #[test]
    fn fork_is_deterministic_and_leaves_parent_alone() {
        let mut parent = RandomStream::new(42);
        let a: Vec<u64> = {
            let mut c = parent.fork(0);
            (0..100).map(|_| c.next_u64()).collect()
        };
        parent.next_u64();
        let b: Vec<u64> = {
            let mut c = parent.fork(0);
            (0..100).map(|_| c.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_eq!(parent.counter(), 1);
    }

    #[test]
    fn sibling_forks_are_uncorrelated() {
        for seed in 0..5 {
            let s = RandomStream::new(seed);
            let a = normals(&mut s.fork(0), 1000);
            let b = normals(&mut s.fork(1), 1000);
            let r = correlation(&a, &b);
            assert!(r.abs() < 0.1, "seed {seed}: r = {r}");
            let p = normals(&mut s.clone(), 1000);
            assert!(correlation(&a, &p).abs() < 0.1);
        }
    }

    #[test]
    fn nested_fork_reproducible() {
        let mut x = RandomStream::new(7).fork(2).fork(3);
        let mut y = RandomStream::new(7).fork(2).fork(3);
        for _ in 0..64 {
            assert_eq!(x.next_u64(), y.next_u64());
        }
        assert_eq!(x.path(), &[2, 3]);
        // Path order matters.
        let mut z = RandomStream::new(7).fork(3).fork(2);
        assert_ne!(
            RandomStream::new(7).fork(2).fork(3).next_u64(),
            z.next_u64()
        );
    }

    #[test]
    fn bernoulli_degenerate_and_domain() {
        let mut s = RandomStream::new(1);
        for _ in 0..1000 {
            assert!(!s.bernoulli(0.0).unwrap());
            assert!(s.bernoulli(1.0).unwrap());
        }
        assert_eq!(s.counter(), 2000);
        assert!(s.bernoulli(-0.1).is_err());
        assert!(s.bernoulli(1.5).is_err());
        assert!(s.bernoulli(f64::NAN).is_err());
    }

    #[test]
    fn bernoulli_half_moments() {
        for seed in 0..5 {
            let mut s = RandomStream::new(seed);
            let n = 100_000;
            let ones = (0..n).filter(|_| s.bernoulli(0.5).unwrap()).count();
            let mean = ones as f64 / n as f64;
            assert!((0.494..=0.506).contains(&mean), "seed {seed}: {mean}");
        }
    }

    #[test]
    fn gaussian_moments() {
        for seed in 0..5 {
            let mut s = RandomStream::new(seed).fork(9);
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| s.gaussian(0.0, 1.0).unwrap()).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() <= 0.0095, "seed {seed}: mean {mean}");
            assert!((0.985..=1.015).contains(&var), "seed {seed}: var {var}");
        }
    }

    #[test]
    fn gaussian_degenerate_scale_and_domain() {
        let mut s = RandomStream::new(3);
        assert_eq!(s.gaussian(7.0, 0.0).unwrap(), 7.0);
        assert!(s.gaussian(0.0, -1.0).is_err());

        let mut a = RandomStream::new(11);
        let mut b = RandomStream::new(11);
        for _ in 0..1000 {
            let x = a.gaussian(0.0, 2.0).unwrap();
            let y = b.gaussian(0.0, 1.0).unwrap();
            assert_eq!(x, 2.0 * y);
        }
    }

    #[test]
    fn below_and_shuffle() {
        let mut s = RandomStream::new(5);
        let mut counts = [0usize; 6];
        for _ in 0..60_000 {
            counts[s.below(6) as usize] += 1;
        }
        for c in counts {
            assert!((9_400..10_600).contains(&c), "{counts:?}");
        }
        let mut v: Vec<usize> = (0..50).collect();
        s.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
