//! Keyed random streams and the choice-source abstraction shared by every sampler.
//!
//! Every random quantity is addressed by a [`DrawKey`]. Two algorithms that ask
//! for the same key under the same [`RngStream`] see the same numbers, which is
//! what makes paired comparisons between filters exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Ancestor,
    Noise,
    Permutation,
    Latent,
    Observation,
    Model,
    Posterior,
    Init,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DrawKey {
    pub step: usize,
    pub particle: usize,
    pub purpose: Purpose,
}

impl DrawKey {
    pub fn new(step: usize, particle: usize, purpose: Purpose) -> Self {
        Self {
            step,
            particle,
            purpose,
        }
    }
}

/// Where samplers get their randomness from.
///
/// `RngStream` answers with pseudo-random draws; [`enumerate`] answers every
/// categorical choice with each of its supported outcomes in turn.
pub trait ChoiceSource {
    /// Index drawn in proportion to the non-negative `weights`.
    fn categorical(&mut self, key: DrawKey, weights: &[f64]) -> Result<usize>;
    /// `n` independent standard normals.
    fn normals(&mut self, key: DrawKey, n: usize) -> Result<Vec<f64>>;

    /// `n` draws from the same weights with keys `(step, i, purpose)`, `i < n`.
    /// Same outcomes as calling [`categorical`](Self::categorical) per key.
    fn categoricals(&mut self, step: usize, purpose: Purpose, n: usize, weights: &[f64]) -> Result<Vec<usize>> {
        (0..n)
            .map(|i| self.categorical(DrawKey::new(step, i, purpose), weights))
            .collect()
    }
}

/// Inverse-CDF selection: the smallest index whose cumulative weight exceeds `u * total`.
///
/// Weights need not be normalized. Zero-weight entries are never returned.
pub fn categorical_sample(weights: &[f64], u: f64) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if acc > target {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

/// Prefix sums for repeated [`categorical_sample`] calls in `O(log n)` each.
pub struct CumulativeWeights {
    cum: Vec<f64>,
    last_positive: usize,
}

impl CumulativeWeights {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let mut cum = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        let mut last_positive = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = Some(i);
            }
            cum.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::ZeroWeights);
        }
        Ok(Self {
            cum,
            last_positive: last_positive.unwrap_or(0),
        })
    }

    /// Agrees exactly with `categorical_sample(weights, u)`.
    pub fn sample(&self, u: f64) -> usize {
        let target = u * self.cum[self.cum.len() - 1];
        let i = self.cum.partition_point(|&c| c <= target);
        if i < self.cum.len() {
            i
        } else {
            self.last_positive
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based stream family: one ChaCha8 stream per (seed, replicate, key).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream family for replicate run `r`.
    pub fn replicate(&self, r: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix(self.stream ^ splitmix(r.wrapping_add(0x5151))),
        }
    }

    /// A plain generator for code that does not need keyed draws.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }

    pub fn for_key(&self, key: DrawKey) -> ChaCha8Rng {
        let purpose = key.purpose as u64 + 1;
        let h = splitmix(self.stream ^ splitmix(key.step as u64 ^ splitmix(key.particle as u64 ^ splitmix(purpose))));
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(h);
        r
    }
}

impl ChoiceSource for RngStream {
    fn categorical(&mut self, key: DrawKey, weights: &[f64]) -> Result<usize> {
        let u: f64 = self.for_key(key).random();
        categorical_sample(weights, u)
    }

    fn normals(&mut self, key: DrawKey, n: usize) -> Result<Vec<f64>> {
        let mut r = self.for_key(key);
        Ok((0..n).map(|_| r.sample(StandardNormal)).collect())
    }

    fn categoricals(&mut self, step: usize, purpose: Purpose, n: usize, weights: &[f64]) -> Result<Vec<usize>> {
        let cum = CumulativeWeights::new(weights)?;
        Ok((0..n)
            .map(|i| cum.sample(self.for_key(DrawKey::new(step, i, purpose)).random()))
            .collect())
    }
}

/// Configuration cap for [`enumerate`].
pub const ENUMERATION_CAP: usize = 1_000_000;

#[derive(Default)]
struct Replay {
    path: Vec<usize>,
    options: Vec<Vec<usize>>,
    pos: usize,
    prob: f64,
}

impl ChoiceSource for Replay {
    fn categorical(&mut self, _key: DrawKey, weights: &[f64]) -> Result<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroWeights);
        }
        let support: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        let choice = match self.path.get(self.pos) {
            Some(&c) => c,
            None => {
                self.path.push(support[0]);
                support[0]
            }
        };
        self.options.truncate(self.pos);
        self.options.push(support);
        self.pos += 1;
        self.prob *= weights[choice] / total;
        Ok(choice)
    }

    fn normals(&mut self, _key: DrawKey, _n: usize) -> Result<Vec<f64>> {
        Err(Error::ContinuousUnderEnumeration)
    }
}

/// Runs `program` once for every supported combination of its categorical
/// choices and returns each outcome with its probability.
///
/// The program must be deterministic given its choices. Fails once more than
/// `cap` configurations have been visited.
pub fn enumerate<T>(cap: usize, mut program: impl FnMut(&mut dyn ChoiceSource) -> Result<T>) -> Result<Vec<(f64, T)>> {
    let mut replay = Replay::default();
    let mut out = Vec::new();
    loop {
        if out.len() >= cap {
            return Err(Error::EnumerationCap(cap));
        }
        replay.pos = 0;
        replay.prob = 1.0;
        let value = program(&mut replay)?;
        out.push((replay.prob, value));
        let used = replay.pos;
        replay.path.truncate(used);
        replay.options.truncate(used);
        // odometer: advance the deepest choice that still has an untried outcome
        let mut advanced = false;
        while let Some(last) = replay.path.pop() {
            let k = replay.path.len();
            let opts = &replay.options[k];
            let at = opts.iter().position(|&o| o == last).expect("recorded choice");
            if at + 1 < opts.len() {
                replay.path.push(opts[at + 1]);
                replay.options.truncate(k + 1);
                advanced = true;
                break;
            }
        }
        if !advanced {
            return Ok(out);
        }
    }
}

/// Σ p · value over an enumeration.
pub fn expectation(outcomes: &[(f64, f64)]) -> f64 {
    outcomes.iter().map(|(p, v)| p * v).sum()
}

#[cfg(test)]
mod tests {
    use proptest::strategy::Just;
    use proptest::{prop_assert_eq, prop_assume, prop_oneof, proptest};

    proptest! {
        #[test]
        fn prefix_sums_agree_with_linear_scan(
            w in proptest::collection::vec(prop_oneof![Just(0.0), 0.0..5.0f64], 1..40),
            u in 0.0..1.0f64,
        ) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let cum = CumulativeWeights::new(&w).unwrap();
            prop_assert_eq!(cum.sample(u), categorical_sample(&w, u).unwrap());
        }
    }

    use super::*;

    #[test]
    fn inverse_cdf_cases() {
        assert_eq!(categorical_sample(&[1.0], 0.3).unwrap(), 0);
        assert_eq!(categorical_sample(&[0.25, 0.75], 0.5).unwrap(), 1);
        assert_eq!(categorical_sample(&[0.5, 0.5], 0.5).unwrap(), 1);
        assert_eq!(categorical_sample(&[0.0, 1.0], 0.0).unwrap(), 1);
        assert!(matches!(categorical_sample(&[0.0, 0.0], 0.1), Err(Error::ZeroWeights)));
    }

    #[test]
    fn keyed_draws_repeat() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        let k = DrawKey::new(3, 1, Purpose::Noise);
        assert_eq!(a.normals(k, 4).unwrap(), b.normals(k, 4).unwrap());
        let k2 = DrawKey::new(3, 2, Purpose::Noise);
        assert_ne!(a.normals(k, 4).unwrap(), a.normals(k2, 4).unwrap());
        let r1 = a.replicate(1);
        assert_ne!(a.for_key(k).random::<u64>(), r1.for_key(k).random::<u64>());
    }

    #[test]
    fn enumeration_visits_everything() {
        let outcomes = enumerate(100, |src| {
            let a = src.categorical(DrawKey::new(0, 0, Purpose::Noise), &[0.2, 0.0, 0.8])?;
            let b = if a == 0 {
                src.categorical(DrawKey::new(1, 0, Purpose::Noise), &[1.0, 3.0])?
            } else {
                7
            };
            Ok((a, b))
        })
        .unwrap();
        let pairs: Vec<_> = outcomes.iter().map(|(_, v)| *v).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (2, 7)]);
        let total: f64 = outcomes.iter().map(|(p, _)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((outcomes[1].0 - 0.15).abs() < 1e-15);
    }

    #[test]
    fn enumeration_cap_is_loud() {
        let r = enumerate(10, |src| {
            let mut s = 0;
            for k in 0..4 {
                s += src.categorical(DrawKey::new(k, 0, Purpose::Noise), &[1.0; 3])?;
            }
            Ok(s)
        });
        assert!(matches!(r, Err(Error::EnumerationCap(10))));
    }
}
