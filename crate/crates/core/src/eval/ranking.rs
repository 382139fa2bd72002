//! Filtered ranking with average-rank tie handling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    pub mrr: f64,
    pub mean_rank: f64,
    pub n: usize,
    /// Queries dropped because no candidate set could be formed.
    pub skipped: usize,
    pub filtered: bool,
}

/// 1-based rank of `target` among the candidates not excluded, averaging over ties.
pub fn rank_of(scores: &[f64], target: usize, excluded: &[bool]) -> f64 {
    let s = scores[target];
    let (mut above, mut tied) = (0usize, 0usize);
    for (i, &x) in scores.iter().enumerate() {
        if i == target || excluded.get(i).copied().unwrap_or(false) {
            continue;
        }
        if x > s {
            above += 1;
        } else if x == s {
            tied += 1;
        }
    }
    1.0 + above as f64 + tied as f64 / 2.0
}

impl RankingReport {
    pub fn from_ranks(ranks: &[f64], skipped: usize, filtered: bool) -> Self {
        let n = ranks.len();
        let frac = |k: f64| if n == 0 { 0.0 } else { ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64 };
        let mean = |f: &dyn Fn(f64) -> f64| if n == 0 { 0.0 } else { ranks.iter().map(|&r| f(r)).sum::<f64>() / n as f64 };
        Self {
            hits_at_1: frac(1.0),
            hits_at_3: frac(3.0),
            hits_at_10: frac(10.0),
            mrr: mean(&|r| 1.0 / r),
            mean_rank: mean(&|r| r),
            n,
            skipped,
            filtered,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.hits_at_1 <= self.hits_at_3
            && self.hits_at_3 <= self.hits_at_10
            && self.hits_at_10 <= 1.0
            && (self.n == 0 || (self.mrr > 0.0 && self.mrr <= 1.0))
    }
}
