//! 1-in-N packet sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SummaryError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SampleMode {
    /// Keep each packet independently with probability 1/N.
    #[default]
    Random,
    /// Keep every Nth packet, starting at a seeded phase.
    Stride,
}

#[derive(Clone, Debug)]
pub struct PacketSampler {
    n: u64,
    mode: SampleMode,
    rng: ChaCha8Rng,
    countdown: u64,
}

impl PacketSampler {
    pub fn new(n: u64, seed: u64, mode: SampleMode) -> Result<Self, SummaryError> {
        if n == 0 {
            return Err(SummaryError::BadN);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let countdown = rng.gen_range(0..n);
        Ok(PacketSampler {
            n,
            mode,
            rng,
            countdown,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Decide for the next packet.
    pub fn keep(&mut self) -> bool {
        if self.n == 1 {
            return true;
        }
        match self.mode {
            SampleMode::Random => self.rng.gen_range(0..self.n) == 0,
            SampleMode::Stride => {
                if self.countdown == 0 {
                    self.countdown = self.n - 1;
                    true
                } else {
                    self.countdown -= 1;
                    false
                }
            }
        }
    }
}

/// Filter a stream down to a 1-in-`n` sample.
pub fn sample_1_in_n<I>(
    stream: I,
    n: u64,
    seed: u64,
    mode: SampleMode,
) -> Result<impl Iterator<Item = I::Item>, SummaryError>
where
    I: IntoIterator,
{
    let mut sampler = PacketSampler::new(n, seed, mode)?;
    Ok(stream.into_iter().filter(move |_| sampler.keep()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_one_is_identity() {
        let v: Vec<u32> = sample_1_in_n(0..1000, 1, 9, SampleMode::Random).unwrap().collect();
        assert_eq!(v, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn n_zero_is_rejected() {
        assert!(matches!(
            PacketSampler::new(0, 1, SampleMode::Random),
            Err(SummaryError::BadN)
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let a: Vec<u32> = sample_1_in_n(0..100_000, 64, 5, SampleMode::Random).unwrap().collect();
        let b: Vec<u32> = sample_1_in_n(0..100_000, 64, 5, SampleMode::Random).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<u32> = sample_1_in_n(0..100_000, 64, 6, SampleMode::Random).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn stride_is_exact() {
        let v: Vec<u32> = sample_1_in_n(0..10_240, 512, 3, SampleMode::Stride).unwrap().collect();
        assert_eq!(v.len(), 20);
        assert!(v.windows(2).all(|w| w[1] - w[0] == 512));
    }
}
