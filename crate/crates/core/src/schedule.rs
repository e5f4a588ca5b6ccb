//! Target mask-ratio schedules for tree levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 7] = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.2];

// Guards `floor(n * ratio)` against products like 10 * 0.3 = 2.9999999999999996.
const RATIO_EPS: f64 = 1e-9;

/// Number of masked tokens left once the ratio reaches `ratio`, i.e. the
/// largest count with `count / gen_len <= ratio`.
pub fn masked_count_at(gen_len: usize, ratio: f64) -> usize {
    ((gen_len as f64 * ratio) + RATIO_EPS).floor().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatioSchedule {
    ratios: Vec<f64>,
}

impl Default for RatioSchedule {
    fn default() -> Self {
        Self { ratios: DEFAULT_RATIOS.to_vec() }
    }
}

/// One tree level resolved for a concrete generation length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub ratio: f64,
    /// Masked positions remaining at this level.
    pub masked: usize,
    /// Tokens committed to get here from the previous level, `k_t`.
    pub commits: usize,
}

impl RatioSchedule {
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::InvalidSchedule("schedule is empty".into()));
        }
        if ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::InvalidSchedule("ratios must lie strictly between 0 and 1".into()));
        }
        if ratios.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule("ratios must strictly decrease".into()));
        }
        Ok(Self { ratios })
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Tree levels for `gen_len` tokens. Ratios that would not commit at
    /// least one token, or that leave nothing masked, are dropped; the
    /// descent to zero happens inside rollouts.
    pub fn levels(&self, gen_len: usize) -> Vec<Level> {
        let mut out = Vec::with_capacity(self.ratios.len());
        let mut prev = gen_len;
        for &ratio in &self.ratios {
            let masked = masked_count_at(gen_len, ratio);
            if masked < prev && masked > 0 {
                out.push(Level { ratio, masked, commits: prev - masked });
                prev = masked;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_levels_for_768() {
        let levels = RatioSchedule::default().levels(768);
        let masked: Vec<_> = levels.iter().map(|l| l.masked).collect();
        assert_eq!(masked, vec![691, 614, 537, 460, 384, 307, 153]);
        assert_eq!(levels[0].commits, 77);
        assert_eq!(levels.iter().map(|l| l.commits).sum::<usize>() + 153, 768);
    }

    #[test]
    fn exact_products_do_not_round_down() {
        let masked: Vec<_> = RatioSchedule::default().levels(10).iter().map(|l| l.masked).collect();
        assert_eq!(masked, vec![9, 8, 7, 6, 5, 4, 2]);
        assert_eq!(masked_count_at(10, 0.3), 3);
    }

    #[test]
    fn short_sequences_drop_empty_levels() {
        let levels = RatioSchedule::default().levels(4);
        let masked: Vec<_> = levels.iter().map(|l| l.masked).collect();
        assert_eq!(masked, vec![3, 2, 1]);
        assert!(levels.iter().all(|l| l.commits >= 1));
        assert!(RatioSchedule::default().levels(1).is_empty());
    }

    #[test]
    fn validation() {
        assert!(RatioSchedule::new(vec![]).is_err());
        assert!(RatioSchedule::new(vec![0.5, 0.5]).is_err());
        assert!(RatioSchedule::new(vec![0.5, 0.6]).is_err());
        assert!(RatioSchedule::new(vec![1.0]).is_err());
        assert!(RatioSchedule::new(vec![0.5, 0.0]).is_err());
        assert!(RatioSchedule::new(vec![0.75, 0.5, 0.25]).is_ok());
    }
}
