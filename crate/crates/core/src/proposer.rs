//! Mask-and-infill perturbations.
//!
//! Masking picks positions to resample (runs of consecutive mutable
//! positions with truncated Poisson lengths, or independent Bernoulli picks); the infill model is a
//! Laplace-smoothed positional n-gram fit on the unlabeled corpus.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::categorical::sample_tempered;
use crate::error::{IceError, Result};
use crate::seq::{RegionMask, Sequence};

pub const INFILL_FORMAT_VERSION: u32 = 1;

/// Rejection attempts for one truncated-Poisson span length.
pub const SPAN_LENGTH_RETRIES: usize = 1000;

/// Redraws allowed when a mask comes out empty.
pub const MASK_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskStrategy {
    Span,
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub strategy: MaskStrategy,
    pub span_lambda: f64,
    pub span_max: usize,
    pub iid_rate: f64,
    pub n_spans: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            strategy: MaskStrategy::Span,
            span_lambda: 6.0,
            span_max: 12,
            iid_rate: 0.8,
            n_spans: 1,
        }
    }
}

impl MaskSpec {
    /// Span presets `small`, `medium`, `large` and `super-large`.
    pub fn preset(name: &str) -> Result<Self> {
        let (span_lambda, span_max) = match name {
            "small" => (3.0, 6),
            "medium" => (4.0, 8),
            "large" => (5.0, 10),
            "super-large" => (6.0, 12),
            other => {
                return Err(IceError::param(
                    "mask preset",
                    format!("unknown preset {other:?}"),
                ))
            }
        };
        Ok(MaskSpec {
            strategy: MaskStrategy::Span,
            span_lambda,
            span_max,
            ..MaskSpec::default()
        })
    }

    pub fn iid(rate: f64) -> Self {
        MaskSpec {
            strategy: MaskStrategy::Iid,
            iid_rate: rate,
            ..MaskSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.span_max < 1 {
            return Err(IceError::param("span_max", "must be at least 1"));
        }
        if !(self.iid_rate > 0.0 && self.iid_rate <= 1.0) {
            return Err(IceError::param("iid_rate", "must lie in (0, 1]"));
        }
        if !(self.span_lambda > 0.0) || !self.span_lambda.is_finite() {
            return Err(IceError::param("span_lambda", "must be positive"));
        }
        if self.n_spans < 1 {
            return Err(IceError::param("n_spans", "must be at least 1"));
        }
        Ok(())
    }

    /// Upper bound on the number of positions one mask can select.
    pub fn max_masked(&self, mask: &RegionMask) -> usize {
        match self.strategy {
            MaskStrategy::Span => (self.span_max * self.n_spans).min(mask.mutable_count()),
            MaskStrategy::Iid => mask.mutable_count(),
        }
    }
}

impl FromStr for MaskStrategy {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "span" => Ok(MaskStrategy::Span),
            "iid" => Ok(MaskStrategy::Iid),
            other => Err(IceError::parse("mask strategy", other.to_string())),
        }
    }
}

/// Span length from Poisson(λ) truncated to `[1, span_max]`, by rejection.
pub fn sample_span_length<R: Rng + ?Sized>(lambda: f64, span_max: usize, rng: &mut R) -> usize {
    let poisson = Poisson::new(lambda).expect("validated lambda");
    for _ in 0..SPAN_LENGTH_RETRIES {
        let k: f64 = poisson.sample(rng);
        let k = k as usize;
        if (1..=span_max).contains(&k) {
            return k;
        }
    }
    span_max
}

/// Positions to resample; never empty and never immutable.
pub fn mask_positions<R: Rng + ?Sized>(
    seq: &Sequence,
    spec: &MaskSpec,
    mask: &RegionMask,
    rng: &mut R,
) -> Result<Vec<usize>> {
    spec.validate()?;
    if mask.len() != seq.len() {
        return Err(IceError::LengthMismatch {
            expected: mask.len(),
            found: seq.len(),
        });
    }
    let mutable = mask.mutable_positions();
    let mut chosen = vec![false; seq.len()];
    for _ in 0..MASK_RETRIES {
        match spec.strategy {
            MaskStrategy::Span => {
                // spans walk the mutable positions in order, wrapping from
                // the last back to the first
                for _ in 0..spec.n_spans {
                    let start = rng.random_range(0..mutable.len());
                    let len = sample_span_length(spec.span_lambda, spec.span_max, rng);
                    for t in 0..len.min(mutable.len()) {
                        chosen[mutable[(start + t) % mutable.len()]] = true;
                    }
                }
            }
            MaskStrategy::Iid => {
                for &p in &mutable {
                    if spec.iid_rate >= 1.0 || rng.random::<f64>() < spec.iid_rate {
                        chosen[p] = true;
                    }
                }
            }
        }
        if chosen.iter().any(|&c| c) {
            return Ok((0..seq.len()).filter(|&p| chosen[p]).collect());
        }
    }
    Err(IceError::MaskRetriesExceeded {
        retries: MASK_RETRIES,
    })
}

/// Positional token model: `p(b | position i, left neighbour a)` (order 1)
/// or `p(b | position i)` (order 0), Laplace smoothed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillModel {
    length: usize,
    alphabet_size: usize,
    order: u8,
    smoothing: f64,
    /// `counts[(i * A + context) * A + b]`
    counts: Vec<u64>,
    #[serde(skip)]
    probs: Vec<f64>,
}

impl InfillModel {
    pub fn fit(
        corpus: &[Sequence],
        alphabet_size: usize,
        smoothing: f64,
        order: u8,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(IceError::param("corpus", "empty"));
        }
        if !(smoothing > 0.0) || !smoothing.is_finite() {
            return Err(IceError::param("smoothing", "must be positive"));
        }
        if order > 1 {
            return Err(IceError::param("order", "must be 0 or 1"));
        }
        let length = corpus[0].len();
        let a = alphabet_size;
        let mut counts = vec![0u64; length * a * a];
        for seq in corpus {
            if seq.len() != length {
                return Err(IceError::LengthMismatch {
                    expected: length,
                    found: seq.len(),
                });
            }
            let x = seq.tokens();
            if x.iter().any(|&t| t as usize >= a) {
                return Err(IceError::InvalidCandidate(format!(
                    "token outside alphabet of size {a}"
                )));
            }
            for i in 0..length {
                let ctx = context(order, i, x);
                counts[(i * a + ctx) * a + x[i] as usize] += 1;
            }
        }
        Ok(InfillModel::from_counts(length, a, order, smoothing, counts))
    }

    fn from_counts(
        length: usize,
        alphabet_size: usize,
        order: u8,
        smoothing: f64,
        counts: Vec<u64>,
    ) -> Self {
        let a = alphabet_size;
        let mut probs = vec![0.0; counts.len()];
        for row in 0..length * a {
            let slice = &counts[row * a..(row + 1) * a];
            let total: u64 = slice.iter().sum();
            let denom = total as f64 + smoothing * a as f64;
            for b in 0..a {
                probs[row * a + b] = (slice[b] as f64 + smoothing) / denom;
            }
        }
        InfillModel {
            length,
            alphabet_size,
            order,
            smoothing,
            counts,
            probs,
        }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    /// Conditional distribution over tokens at `position` after left token `prev`.
    pub fn conditional(&self, position: usize, prev: Option<u8>) -> &[f64] {
        let a = self.alphabet_size;
        let ctx = match (self.order, prev) {
            (1, Some(p)) if position > 0 => p as usize,
            _ => 0,
        };
        let row = position * a + ctx;
        &self.probs[row * a..(row + 1) * a]
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&InfillFile {
            version: INFILL_FORMAT_VERSION,
            model: self.clone(),
        })
        .map_err(|e| IceError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InfillFile =
            serde_json::from_str(text).map_err(|e| IceError::Serde(e.to_string()))?;
        if file.version != INFILL_FORMAT_VERSION {
            return Err(IceError::UnsupportedVersion {
                what: "infill model",
                expected: INFILL_FORMAT_VERSION,
                found: file.version,
            });
        }
        let m = file.model;
        if m.counts.len() != m.length * m.alphabet_size * m.alphabet_size {
            return Err(IceError::parse("infill model", "count table has wrong size"));
        }
        Ok(InfillModel::from_counts(
            m.length,
            m.alphabet_size,
            m.order,
            m.smoothing,
            m.counts,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct InfillFile {
    version: u32,
    model: InfillModel,
}

fn context(order: u8, i: usize, x: &[u8]) -> usize {
    if order == 1 && i > 0 {
        x[i - 1] as usize
    } else {
        0
    }
}

/// Resamples `positions` left to right; a temperature of zero takes the
/// argmax (lowest token on ties).
pub fn infill<R: Rng + ?Sized>(
    model: &InfillModel,
    seq: &Sequence,
    positions: &[usize],
    rng: &mut R,
    temperature: f64,
) -> Result<Sequence> {
    if seq.len() != model.length {
        return Err(IceError::LengthMismatch {
            expected: model.length,
            found: seq.len(),
        });
    }
    if !(temperature >= 0.0) {
        return Err(IceError::param("temperature", "must be non-negative"));
    }
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&p) = sorted.last() {
        if p >= seq.len() {
            return Err(IceError::InvalidEdit(format!(
                "position {p} out of range for length {}",
                seq.len()
            )));
        }
    }
    let mut out = seq.clone();
    for p in sorted {
        let prev = if p > 0 { Some(out.tokens()[p - 1]) } else { None };
        let dist = model.conditional(p, prev);
        let b = sample_tempered(dist, temperature, rng).expect("smoothed distribution");
        out.tokens_mut()[p] = b as u8;
    }
    Ok(out)
}

/// One mask-and-infill perturbation, returning the masked positions too.
pub fn perturb<R: Rng + ?Sized>(
    model: &InfillModel,
    spec: &MaskSpec,
    mask: &RegionMask,
    seq: &Sequence,
    temperature: f64,
    rng: &mut R,
) -> Result<(Sequence, Vec<usize>)> {
    let positions = mask_positions(seq, spec, mask, rng)?;
    let out = infill(model, seq, &positions, rng, temperature)?;
    Ok((out, positions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn default_mask() -> RegionMask {
        RegionMask::with_immutable_span(20, 8, 4).unwrap()
    }

    fn random_corpus(n: usize, s: u64) -> Vec<Sequence> {
        let mut rng = seed::stream(s);
        (0..n)
            .map(|_| Sequence::new((0..20).map(|_| rng.random_range(0..8u8)).collect()))
            .collect()
    }

    #[test]
    fn presets() {
        let s = MaskSpec::preset("small").unwrap();
        assert_eq!((s.span_lambda, s.span_max), (3.0, 6));
        let s = MaskSpec::preset("super-large").unwrap();
        assert_eq!((s.span_lambda, s.span_max), (6.0, 12));
        assert_eq!(s, MaskSpec::default());
        assert!(MaskSpec::preset("huge").is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = [
            MaskSpec {
                span_max: 0,
                ..MaskSpec::default()
            },
            MaskSpec {
                iid_rate: 0.0,
                ..MaskSpec::default()
            },
            MaskSpec {
                iid_rate: 1.5,
                ..MaskSpec::default()
            },
            MaskSpec {
                span_lambda: 0.0,
                ..MaskSpec::default()
            },
        ];
        for spec in bad {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
    }

    #[test]
    fn iid_full_rate_masks_every_mutable_position() {
        let mask = default_mask();
        let mut rng = seed::stream(1);
        let s = Sequence::new(vec![0; 20]);
        let got = mask_positions(&s, &MaskSpec::iid(1.0), &mask, &mut rng).unwrap();
        assert_eq!(got, mask.mutable_positions());
    }

    /// Mean of Poisson(λ) conditioned on `1 ≤ k ≤ max`, by summing the pmf.
    fn truncated_poisson_mean(lambda: f64, max: usize) -> f64 {
        let mut pmf = (-lambda).exp();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 1..=max {
            pmf *= lambda / k as f64;
            num += k as f64 * pmf;
            den += pmf;
        }
        num / den
    }

    #[test]
    fn span_lengths_follow_truncated_poisson() {
        let mut rng = seed::stream(5);
        for (lambda, max) in [(6.0, 12), (3.0, 6)] {
            let n = 10000;
            let mean = (0..n)
                .map(|_| sample_span_length(lambda, max, &mut rng) as f64)
                .sum::<f64>()
                / n as f64;
            let expect = truncated_poisson_mean(lambda, max);
            assert!(
                (mean - expect).abs() / expect < 0.02,
                "λ={lambda}: {mean} vs {expect}"
            );
        }
    }

    #[test]
    fn masked_span_sizes_follow_truncated_poisson() {
        let mask = default_mask();
        let s = Sequence::new(vec![0; 20]);
        let mut rng = seed::stream(12);
        let spec = MaskSpec::default();
        let n = 10000;
        let mut coverage = [0usize; 20];
        let mut total = 0usize;
        for _ in 0..n {
            let got = mask_positions(&s, &spec, &mask, &mut rng).unwrap();
            total += got.len();
            for p in got {
                coverage[p] += 1;
            }
        }
        let mean = total as f64 / n as f64;
        let expect = truncated_poisson_mean(6.0, 12);
        assert!((mean - expect).abs() / expect < 0.02, "{mean} vs {expect}");
        // wrap-around spans cover every mutable position equally often
        let per = total as f64 / 16.0;
        for p in mask.mutable_positions() {
            assert!((coverage[p] as f64 - per).abs() / per < 0.05, "position {p}");
        }
    }

    #[test]
    fn masks_never_touch_immutable_positions() {
        let mask = default_mask();
        let s = Sequence::new(vec![0; 20]);
        let mut rng = seed::stream(6);
        for spec in [MaskSpec::default(), MaskSpec::iid(0.3)] {
            for _ in 0..10000 {
                let got = mask_positions(&s, &spec, &mask, &mut rng).unwrap();
                assert!(!got.is_empty());
                assert!(got.iter().all(|&p| mask.is_mutable(p)));
            }
        }
    }

    #[test]
    fn iid_masked_count_mean() {
        let mask = default_mask();
        let s = Sequence::new(vec![0; 20]);
        let mut rng = seed::stream(7);
        let p = 0.3;
        let n_mut = 16.0;
        let draws = 10000;
        let mut total = 0.0;
        for _ in 0..draws {
            total += mask_positions(&s, &MaskSpec::iid(p), &mask, &mut rng)
                .unwrap()
                .len() as f64;
        }
        let mean = total / draws as f64;
        // empty masks are redrawn, so condition the binomial on k ≥ 1
        let p_empty = (1.0 - p).powf(n_mut);
        let expect = p * n_mut / (1.0 - p_empty);
        let se = (n_mut * p * (1.0 - p) / draws as f64).sqrt();
        assert!((mean - expect).abs() < 3.0 * se, "{mean} vs {expect}");
    }

    #[test]
    fn infill_normalization_and_uniformity() {
        let corpus = random_corpus(1000, 2);
        let m = InfillModel::fit(&corpus, 8, 1.0, 1).unwrap();
        for i in 0..20 {
            for a in 0..8u8 {
                let d = m.conditional(i, Some(a));
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(d.iter().all(|&p| p > 0.0));
            }
        }
        let m0 = InfillModel::fit(&corpus, 8, 1.0, 0).unwrap();
        for i in 0..20 {
            for &p in m0.conditional(i, None) {
                assert!((p - 0.125).abs() < 0.05);
            }
        }
    }

    #[test]
    fn identical_corpus_modal_infill_reproduces_it() {
        let target = Sequence::new((0..20).map(|i| ((i * 3) % 8) as u8).collect());
        let corpus = vec![target.clone(); 50];
        let m = InfillModel::fit(&corpus, 8, 1e-6, 1).unwrap();
        let start = Sequence::new(vec![7; 20]);
        let mut rng = seed::stream(0);
        let all: Vec<usize> = (0..20).collect();
        let out = infill(&m, &start, &all, &mut rng, 0.0).unwrap();
        assert_eq!(out, target);
    }

    #[test]
    fn infill_contract() {
        let corpus = random_corpus(200, 3);
        let m = InfillModel::fit(&corpus, 8, 1.0, 1).unwrap();
        let s = corpus[0].clone();
        let mut rng = seed::stream(1);
        assert_eq!(infill(&m, &s, &[], &mut rng, 1.0).unwrap(), s);
        assert!(infill(&m, &s, &[20], &mut rng, 1.0).is_err());

        let a = infill(&m, &s, &[1, 5, 6], &mut seed::stream(9), 1.0).unwrap();
        let b = infill(&m, &s, &[1, 5, 6], &mut seed::stream(9), 1.0).unwrap();
        assert_eq!(a, b);
        for i in 0..20 {
            if ![1, 5, 6].contains(&i) {
                assert_eq!(a.tokens()[i], s.tokens()[i]);
            }
        }
    }

    #[test]
    fn argmax_infill_breaks_ties_low() {
        // tokens 1 and 3 are tied at every position
        let corpus = vec![Sequence::new(vec![3; 20]), Sequence::new(vec![1; 20])];
        let m = InfillModel::fit(&corpus, 8, 1.0, 0).unwrap();
        let out = infill(&m, &Sequence::new(vec![5; 20]), &[2, 7], &mut seed::stream(0), 0.0)
            .unwrap();
        assert_eq!(out.tokens()[2], 1);
        assert_eq!(out.tokens()[7], 1);
    }

    #[test]
    fn perturbation_support_is_symmetric() {
        // any perturbation target can itself be perturbed back under the same mask
        let corpus = random_corpus(300, 4);
        let m = InfillModel::fit(&corpus, 8, 1.0, 1).unwrap();
        let mask = default_mask();
        let mut rng = seed::stream(3);
        for s in corpus.iter().take(100) {
            let (t, _) = perturb(&m, &MaskSpec::default(), &mask, s, 1.0, &mut rng).unwrap();
            assert!(mask.conserves(s, &t));
            let (u, _) = perturb(&m, &MaskSpec::default(), &mask, &t, 1.0, &mut rng).unwrap();
            assert!(mask.conserves(&t, &u));
        }
    }

    #[test]
    fn json_round_trip() {
        let m = InfillModel::fit(&random_corpus(100, 5), 8, 0.5, 1).unwrap();
        let back = InfillModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
