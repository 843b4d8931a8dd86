use rand::Rng;

use crate::error::{Error, Result};

/// Power applied to unigram counts for the negative-sampling distribution.
pub const NOISE_POWER: f64 = 0.75;

/// Sampling table for a distribution proportional to `count^power`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NoiseTable {
    pub fn probability(&self, id: usize) -> f64 {
        self.probs.get(id).copied().unwrap_or(0.0)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Draws an id by inverting the cumulative distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>();
        let i = self.cumulative.partition_point(|&c| c <= u);
        // u can land past the last boundary when rounding leaves it < 1
        let mut i = i.min(self.probs.len() - 1);
        while self.probs[i] == 0.0 && i > 0 {
            i -= 1;
        }
        i
    }
}

pub fn build_noise_table(counts: &[u64], power: f64) -> Result<NoiseTable> {
    if !counts.iter().any(|&c| c > 0) {
        return Err(Error::AllZeroCounts);
    }
    let weights: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { (c as f64).powf(power) })
        .collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    Ok(NoiseTable { probs, cumulative })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_pair() {
        let t = build_noise_table(&[1, 1], NOISE_POWER).unwrap();
        assert_eq!(t.probabilities(), &[0.5, 0.5]);
    }

    #[test]
    fn three_to_one() {
        // 3^0.75 / (3^0.75 + 1), evaluated independently in Python
        let t = build_noise_table(&[3, 1], NOISE_POWER).unwrap();
        assert!((t.probability(0) - 0.695_076_124_968_439_3).abs() < 1e-12);
        assert!((t.probability(1) - 0.304_923_875_031_560_7).abs() < 1e-12);
        let t = build_noise_table(&[3, 1], 1.0).unwrap();
        assert!((t.probability(0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_counts() {
        assert!(matches!(
            build_noise_table(&[0, 0], NOISE_POWER),
            Err(Error::AllZeroCounts)
        ));
        assert!(matches!(
            build_noise_table(&[], NOISE_POWER),
            Err(Error::AllZeroCounts)
        ));
        let t = build_noise_table(&[0, 4, 0], NOISE_POWER).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| t.sample(&mut rng) == 1));
    }
}
