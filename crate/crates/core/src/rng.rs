//! Seeded random streams and the distribution vocabulary used by init,
//! sampling and synthetic data.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Vector;

/// ChaCha8 keyed by `seed`, positioned on substream `stream`.
///
/// Substreams derived with [`Rng::substream`] depend only on the seed and
/// the label path, never on how many numbers other streams have consumed.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator for `label`, independent of this one's position.
    pub fn substream(&self, label: &str) -> Rng {
        let mut h = Fnv::default();
        h.write(&self.stream.to_le_bytes());
        h.write(label.as_bytes());
        Rng::with_stream(self.seed, h.finish())
    }

    pub fn uniform01(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std)
            .expect("std must be finite and non-negative")
            .sample(&mut self.inner)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

// 64-bit FNV-1a; stable across platforms and Rust versions, unlike
// std's DefaultHasher.
struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, std: f64 },
    Constant { value: f64 },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite()) || high < low {
                    return Err(Error::Param(format!(
                        "uniform({low}, {high}): need finite low <= high"
                    )));
                }
            }
            DistributionSpec::Gaussian { mean, std } => {
                if !(mean.is_finite() && std.is_finite()) || std < 0.0 {
                    return Err(Error::Param(format!(
                        "gaussian({mean}, {std}): need finite mean and std >= 0"
                    )));
                }
            }
            DistributionSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Param(format!("constant({value}) is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Uniform { low, high } => 0.5 * (low + high),
            DistributionSpec::Gaussian { mean, .. } => mean,
            DistributionSpec::Constant { value } => value,
        }
    }
}

/// Draws `n` values from `dist`.
pub fn sample(rng: &mut Rng, dist: &DistributionSpec, n: usize) -> Result<Vector> {
    dist.validate()?;
    let out = match *dist {
        DistributionSpec::Constant { value } => vec![value; n],
        DistributionSpec::Uniform { low, high } if low == high => vec![low; n],
        DistributionSpec::Uniform { low, high } => {
            let d = Uniform::new(low, high).map_err(|e| Error::Param(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut rng.inner)).collect()
        }
        DistributionSpec::Gaussian { mean, std } => {
            let d = Normal::new(mean, std).map_err(|e| Error::Param(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut rng.inner)).collect()
        }
    };
    Ok(Vector::new(out))
}
