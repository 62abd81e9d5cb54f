//! Oracle-based analyses of generated candidates and trajectories.

use std::collections::BTreeMap;

use crate::error::{IceError, Result};
use crate::landscape::Landscape;
use crate::refine::{Direction, EvalTarget, Trajectory};
use crate::scorer::ScorerModel;
use crate::seq::{sequence_levenshtein, Sequence};

/// Default histogram bin width in attribute units.
pub const DEFAULT_BIN_WIDTH: f64 = 0.25;

fn oracle_all(candidates: &[Sequence], landscape: &Landscape) -> Result<Vec<f64>> {
    candidates.iter().map(|c| landscape.oracle_score(c)).collect()
}

/// Fraction of candidates strictly beyond each target.
pub fn success_rates(candidates: &[Sequence], landscape: &Landscape, targets: &[EvalTarget]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(IceError::param("candidates", "empty"));
    }
    let z = oracle_all(candidates, landscape)?;
    Ok(success_rates_from_scores(&z, targets))
}

pub fn success_rates_from_scores(scores: &[f64], targets: &[EvalTarget]) -> Vec<f64> {
    targets
        .iter()
        .map(|t| {
            let hits = scores.iter().filter(|&&z| t.direction.beyond(z, t.value)).count();
            hits as f64 / scores.len() as f64
        })
        .collect()
}

/// Mean oracle score of the best `k` candidates for each `k` in `ks`.
///
/// Candidates are ordered best first in `direction`; equal scores fall back
/// to lexicographic sequence order so the selection is reproducible.
pub fn topk_average(
    candidates: &[Sequence],
    landscape: &Landscape,
    ks: &[usize],
    direction: Direction,
) -> Result<Vec<f64>> {
    let z = oracle_all(candidates, landscape)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = match direction {
            Direction::Above => z[b].total_cmp(&z[a]),
            Direction::Below => z[a].total_cmp(&z[b]),
        };
        by_score.then_with(|| candidates[a].tokens().cmp(candidates[b].tokens()))
    });
    ks.iter()
        .map(|&k| {
            if k == 0 || k > candidates.len() {
                return Err(IceError::param(
                    "k",
                    format!("{k} is outside 1..={}", candidates.len()),
                ));
            }
            Ok(order[..k].iter().map(|&i| z[i]).sum::<f64>() / k as f64)
        })
        .collect()
}

/// Counts of values per bin; bin `b` covers `[b * width, (b + 1) * width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: BTreeMap<i64, u64>,
}

impl Histogram {
    pub fn new(bin_width: f64) -> Self {
        Histogram {
            bin_width,
            counts: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, value: f64) {
        let bin = (value / self.bin_width).floor() as i64;
        *self.counts.entry(bin).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Most populated bin, the lowest one on ties.
    pub fn mode(&self) -> Option<i64> {
        let mut best: Option<(i64, u64)> = None;
        for (&b, &c) in &self.counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((b, c));
            }
        }
        best.map(|(b, _)| b)
    }

    pub fn bin_low(&self, bin: i64) -> f64 {
        bin as f64 * self.bin_width
    }
}

/// Shared iteration count, or an error naming the first ragged trajectory.
pub fn uniform_iterations(trajectories: &[Trajectory]) -> Result<usize> {
    let first = trajectories
        .first()
        .ok_or_else(|| IceError::param("trajectories", "empty"))?;
    let expected = first.steps.len();
    for t in trajectories {
        if t.steps.len() != expected {
            return Err(IceError::RaggedTrajectories {
                expected,
                found: t.steps.len(),
            });
        }
    }
    Ok(expected - 1)
}

/// Per iteration, the histogram of `oracle(x_k) - oracle(x_0)`.
///
/// With `include_candidates`, every recorded candidate of iteration `k` is
/// added alongside the chosen step.
pub fn iteration_histogram(
    trajectories: &[Trajectory],
    landscape: &Landscape,
    bin_width: f64,
    include_candidates: bool,
) -> Result<Vec<Histogram>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(IceError::param("bin_width", "must be positive"));
    }
    let iterations = uniform_iterations(trajectories)?;
    let mut out = vec![Histogram::new(bin_width); iterations + 1];
    for t in trajectories {
        let z0 = landscape.oracle_score(t.start())?;
        for (k, s) in t.steps.iter().enumerate() {
            out[k].add(landscape.oracle_score(s)? - z0);
            if include_candidates && k > 0 {
                if let Some(cands) = t.candidates.get(k - 1) {
                    for c in cands {
                        out[k].add(landscape.oracle_score(c)? - z0);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mean `oracle(x_k) - oracle(x_0)` per iteration.
pub fn mean_delta_by_iteration(trajectories: &[Trajectory], landscape: &Landscape) -> Result<Vec<f64>> {
    let iterations = uniform_iterations(trajectories)?;
    let mut sums = vec![0.0; iterations + 1];
    for t in trajectories {
        let z0 = landscape.oracle_score(t.start())?;
        for (k, s) in t.steps.iter().enumerate() {
            sums[k] += landscape.oracle_score(s)? - z0;
        }
    }
    let n = trajectories.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityBucket {
    pub distance: usize,
    pub fraction: f64,
    pub success_rate: f64,
}

/// Candidates bucketed by Levenshtein distance to `reference`.
pub fn diversity_profile(
    candidates: &[Sequence],
    reference: &Sequence,
    landscape: &Landscape,
    threshold: &EvalTarget,
) -> Result<Vec<DiversityBucket>> {
    let paired: Vec<(&Sequence, &Sequence)> = candidates.iter().map(|c| (c, reference)).collect();
    diversity_profile_paired(&paired, landscape, threshold)
}

/// As [`diversity_profile`], each candidate measured against its own reference.
pub fn diversity_profile_paired(
    pairs: &[(&Sequence, &Sequence)],
    landscape: &Landscape,
    threshold: &EvalTarget,
) -> Result<Vec<DiversityBucket>> {
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (cand, reference) in pairs {
        let d = sequence_levenshtein(cand, reference);
        let hit = threshold
            .direction
            .beyond(landscape.oracle_score(cand)?, threshold.value);
        let e = buckets.entry(d).or_insert((0, 0));
        e.0 += 1;
        e.1 += hit as usize;
    }
    let n = pairs.len() as f64;
    Ok(buckets
        .into_iter()
        .map(|(distance, (count, hits))| DiversityBucket {
            distance,
            fraction: count as f64 / n,
            success_rate: hits as f64 / count as f64,
        })
        .collect())
}

/// Mean `f_s(x_k)` over trajectories for every `k`.
pub fn plateau_table(trajectories: &[Trajectory], scorer: &ScorerModel) -> Result<Vec<f64>> {
    let iterations = uniform_iterations(trajectories)?;
    let mut sums = vec![0.0; iterations + 1];
    for t in trajectories {
        for (k, s) in t.steps.iter().enumerate() {
            sums[k] += scorer.predict(s)?;
        }
    }
    let n = trajectories.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// `|row[to] - row[from]|` as a fraction of `|row[last] - row[0]|`.
pub fn relative_change(row: &[f64], from: usize, to: usize) -> Result<f64> {
    if row.len() < 2 || from >= row.len() || to >= row.len() {
        return Err(IceError::param("row", "index outside the table"));
    }
    let total = (row[row.len() - 1] - row[0]).abs();
    if total == 0.0 {
        return Err(IceError::param("row", "no total change"));
    }
    Ok((row[to] - row[from]).abs() / total)
}
