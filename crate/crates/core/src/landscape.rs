//! Synthetic ground-truth attribute functions and the datasets drawn from them.
//!
//! A landscape is additive per (position, token) plus a sparse set of
//! pairwise epistatic terms. It plays the part of the oracle and is only ever
//! consulted for labeling training-region data and for evaluation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IceError, Result};
use crate::seed;
use crate::seq::{RegionMask, Sequence};

/// Shape parameters for [`Landscape::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeShape {
    pub length: usize,
    pub alphabet_size: usize,
    pub n_pairs: usize,
    pub additive_scale: f64,
    pub epistatic_scale: f64,
}

impl Default for LandscapeShape {
    fn default() -> Self {
        LandscapeShape {
            length: 20,
            alphabet_size: 8,
            n_pairs: 20,
            additive_scale: 0.15,
            epistatic_scale: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    length: usize,
    alphabet_size: usize,
    /// `additive[i * alphabet_size + a]`
    additive: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    /// `epistatic[(p * alphabet_size + a) * alphabet_size + b]` for pair `p`.
    epistatic: Vec<f64>,
    seed: u64,
}

impl Landscape {
    /// Draws a landscape with Gaussian weights; identical seeds give identical tables.
    pub fn generate(shape: &LandscapeShape, seed: u64) -> Result<Self> {
        let LandscapeShape {
            length,
            alphabet_size,
            n_pairs,
            additive_scale,
            epistatic_scale,
        } = *shape;
        if length == 0 {
            return Err(IceError::param("length", "must be positive"));
        }
        if alphabet_size < 2 {
            return Err(IceError::param("alphabet_size", "must be at least 2"));
        }
        let max_pairs = length * (length - 1) / 2;
        if n_pairs > max_pairs {
            return Err(IceError::param(
                "n_pairs",
                format!("{n_pairs} exceeds the {max_pairs} distinct position pairs"),
            ));
        }
        for (name, s) in [
            ("additive_scale", additive_scale),
            ("epistatic_scale", epistatic_scale),
        ] {
            if !s.is_finite() || s < 0.0 {
                return Err(IceError::param(name, "must be finite and non-negative"));
            }
        }

        let mut rng = seed::stream(seed);
        let additive_dist = Normal::new(0.0, additive_scale).expect("validated scale");
        let epistatic_dist = Normal::new(0.0, epistatic_scale).expect("validated scale");

        let additive: Vec<f64> = (0..length * alphabet_size)
            .map(|_| additive_dist.sample(&mut rng))
            .collect();

        let mut chosen = rand::seq::index::sample(&mut rng, max_pairs, n_pairs).into_vec();
        chosen.sort_unstable();
        let all_pairs: Vec<(usize, usize)> = (0..length)
            .flat_map(|i| (i + 1..length).map(move |j| (i, j)))
            .collect();
        let pairs: Vec<(usize, usize)> = chosen.into_iter().map(|k| all_pairs[k]).collect();

        let epistatic: Vec<f64> = (0..n_pairs * alphabet_size * alphabet_size)
            .map(|_| epistatic_dist.sample(&mut rng))
            .collect();

        Ok(Landscape {
            length,
            alphabet_size,
            additive,
            pairs,
            epistatic,
            seed,
        })
    }

    /// Builds a landscape from explicit tables.
    pub fn from_weights(
        length: usize,
        alphabet_size: usize,
        additive: Vec<f64>,
        pairs: Vec<(usize, usize)>,
        epistatic: Vec<f64>,
    ) -> Result<Self> {
        if additive.len() != length * alphabet_size {
            return Err(IceError::LengthMismatch {
                expected: length * alphabet_size,
                found: additive.len(),
            });
        }
        if epistatic.len() != pairs.len() * alphabet_size * alphabet_size {
            return Err(IceError::LengthMismatch {
                expected: pairs.len() * alphabet_size * alphabet_size,
                found: epistatic.len(),
            });
        }
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if i >= j || j >= length {
                return Err(IceError::param("pairs", format!("invalid pair ({i}, {j})")));
            }
            if pairs[..k].contains(&(i, j)) {
                return Err(IceError::param("pairs", format!("duplicate pair ({i}, {j})")));
            }
        }
        if additive.iter().chain(&epistatic).any(|w| !w.is_finite()) {
            return Err(IceError::param("weights", "must be finite"));
        }
        Ok(Landscape {
            length,
            alphabet_size,
            additive,
            pairs,
            epistatic,
            seed: 0,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn additive(&self, position: usize, token: u8) -> f64 {
        self.additive[position * self.alphabet_size + token as usize]
    }

    /// Weight of tokens `(a, b)` on the `pair`-th epistatic pair.
    pub fn epistatic(&self, pair: usize, a: u8, b: u8) -> f64 {
        let n = self.alphabet_size;
        self.epistatic[(pair * n + a as usize) * n + b as usize]
    }

    /// SHA-256 over the little-endian bit patterns of every table entry.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for w in self.additive.iter().chain(&self.epistatic) {
            h.update(w.to_bits().to_le_bytes());
        }
        for &(i, j) in &self.pairs {
            h.update((i as u64).to_le_bytes());
            h.update((j as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Exact attribute value of `seq`.
    pub fn oracle_score(&self, seq: &Sequence) -> Result<f64> {
        if seq.len() != self.length {
            return Err(IceError::LengthMismatch {
                expected: self.length,
                found: seq.len(),
            });
        }
        if let Some(&t) = seq
            .tokens()
            .iter()
            .find(|&&t| t as usize >= self.alphabet_size)
        {
            return Err(IceError::InvalidCandidate(format!(
                "token {t} outside alphabet of size {}",
                self.alphabet_size
            )));
        }
        Ok(self.score_tokens(seq.tokens()))
    }

    pub(crate) fn score_tokens(&self, x: &[u8]) -> f64 {
        let a = self.alphabet_size;
        let mut z = 0.0;
        for (i, &t) in x.iter().enumerate() {
            z += self.additive[i * a + t as usize];
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            z += self.epistatic[(p * a + x[i] as usize) * a + x[j] as usize];
        }
        z
    }
}

/// The training range `[low, high]` of the attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub low: f64,
    pub high: f64,
}

impl Region {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low < high) {
            return Err(IceError::param(
                "region",
                format!("low ({low}) must be below high ({high})"),
            ));
        }
        Ok(Region { low, high })
    }

    /// Region bounded by two nearest-rank percentiles of `scores`.
    pub fn from_percentiles(scores: &[f64], low_pct: f64, high_pct: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(IceError::param("scores", "empty"));
        }
        if !(0.0..=100.0).contains(&low_pct) || !(0.0..=100.0).contains(&high_pct) {
            return Err(IceError::param("percentile", "must lie in [0, 100]"));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        Region::new(
            percentile_sorted(&sorted, low_pct),
            percentile_sorted(&sorted, high_pct),
        )
    }

    pub fn contains(&self, z: f64) -> bool {
        self.low <= z && z <= self.high
    }
}

/// Nearest-rank percentile of already sorted data.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let idx = ((pct / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub seq: Sequence,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub unsup: Vec<Sequence>,
    pub sup_train: Vec<LabeledExample>,
    pub region: Region,
}

/// Draws `m` sequences whose mutable positions are i.i.d. uniform and whose
/// immutable positions are copied from `reference`.
pub fn sample_corpus(
    landscape: &Landscape,
    m: usize,
    seed: u64,
    mask: &RegionMask,
    reference: &Sequence,
) -> Result<Vec<Sequence>> {
    if m == 0 {
        return Err(IceError::param("m", "must be at least 1"));
    }
    if mask.len() != landscape.length || reference.len() != landscape.length {
        return Err(IceError::LengthMismatch {
            expected: landscape.length,
            found: if mask.len() != landscape.length {
                mask.len()
            } else {
                reference.len()
            },
        });
    }
    let mut rng = seed::stream(seed);
    let a = landscape.alphabet_size;
    Ok((0..m)
        .map(|_| {
            let tokens = (0..landscape.length)
                .map(|i| {
                    if mask.is_mutable(i) {
                        rng.random_range(0..a) as u8
                    } else {
                        reference.tokens()[i]
                    }
                })
                .collect();
            Sequence::new(tokens)
        })
        .collect())
}

/// Labels the first `m_sup` in-region corpus members with exact oracle scores.
pub fn build_supervised_split(
    corpus: &[Sequence],
    landscape: &Landscape,
    region: Region,
    m_sup: usize,
) -> Result<DatasetSplit> {
    if corpus.is_empty() {
        return Err(IceError::param("corpus", "empty"));
    }
    let mut sup_train = Vec::with_capacity(m_sup);
    for seq in corpus {
        if sup_train.len() == m_sup {
            break;
        }
        let z = landscape.oracle_score(seq)?;
        if region.contains(z) {
            sup_train.push(LabeledExample {
                seq: seq.clone(),
                z,
            });
        }
    }
    if sup_train.len() < m_sup {
        return Err(IceError::InsufficientInRegion {
            requested: m_sup,
            available: sup_train.len(),
        });
    }
    Ok(DatasetSplit {
        unsup: corpus.to_vec(),
        sup_train,
        region,
    })
}

/// Average ranks (1-based), ties sharing the mean of their rank span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(IceError::LengthMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(IceError::param("spearman", "need at least two observations"));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(IceError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
