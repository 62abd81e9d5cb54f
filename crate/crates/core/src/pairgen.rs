//! Editor training data: scorer-labeled, direction-tagged perturbation pairs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::landscape::DatasetSplit;
use crate::proposer::{perturb, InfillModel, MaskSpec};
use crate::scorer::ScorerModel;
use crate::seed;
use crate::seq::{RegionMask, Sequence};

/// Attempts allowed per requested pair.
pub const ATTEMPTS_PER_PAIR: usize = 100;

const ATTEMPT_BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlTag {
    Inc,
    Dec,
}

impl ControlTag {
    pub fn index(self) -> usize {
        match self {
            ControlTag::Inc => 0,
            ControlTag::Dec => 1,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            ControlTag::Inc => ControlTag::Dec,
            ControlTag::Dec => ControlTag::Inc,
        }
    }

    /// True when `a` is strictly better than `b` in this direction.
    pub fn prefers(self, a: f64, b: f64) -> bool {
        match self {
            ControlTag::Inc => a > b,
            ControlTag::Dec => a < b,
        }
    }
}

impl fmt::Display for ControlTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlTag::Inc => "INC",
            ControlTag::Dec => "DEC",
        })
    }
}

impl FromStr for ControlTag {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inc" => Ok(ControlTag::Inc),
            "dec" => Ok(ControlTag::Dec),
            other => Err(IceError::parse("control tag", other.to_string())),
        }
    }
}

/// Direction of `y` relative to `x`; `None` on an exact tie.
pub fn label(x_score: f64, y_score: f64) -> Option<ControlTag> {
    if y_score > x_score {
        Some(ControlTag::Inc)
    } else if y_score < x_score {
        Some(ControlTag::Dec)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditPair {
    pub tag: ControlTag,
    pub source: Sequence,
    pub target: Sequence,
    pub source_score: f64,
    pub target_score: f64,
}

#[derive(Debug, Clone)]
pub struct PairSet {
    pub pairs: Vec<EditPair>,
    /// Masked-position count of the perturbation behind each pair.
    pub mask_sizes: Vec<usize>,
    pub attempts: usize,
    pub accepted: usize,
}

impl PairSet {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

pub struct PairGenConfig<'a> {
    pub infill: &'a InfillModel,
    pub spec: &'a MaskSpec,
    pub mask: &'a RegionMask,
    pub scorer: &'a ScorerModel,
    pub delta: f64,
    pub n_pairs: usize,
    pub seed: u64,
}

struct Accepted {
    tag: ControlTag,
    original: (Sequence, f64),
    perturbed: (Sequence, f64),
    masked: usize,
}

fn attempt(cfg: &PairGenConfig<'_>, split: &DatasetSplit, index: usize) -> Result<Option<Accepted>> {
    let mut rng = seed::derived_stream(cfg.seed, "pairgen", index as u64);
    let x = &split.sup_train[rng.random_range(0..split.sup_train.len())].seq;
    let (x_tilde, masked) = perturb(cfg.infill, cfg.spec, cfg.mask, x, 1.0, &mut rng)?;
    let fx = cfg.scorer.predict(x)?;
    let fy = cfg.scorer.predict(&x_tilde)?;
    let diff = (fy - fx).abs();
    if !(diff > 0.0 && diff < cfg.delta) {
        return Ok(None);
    }
    Ok(label(fx, fy).map(|tag| Accepted {
        tag,
        original: (x.clone(), fx),
        perturbed: (x_tilde, fy),
        masked: masked.len(),
    }))
}

/// Perturbs training examples until `n_pairs` directed examples are emitted.
///
/// Every kept perturbation yields two consecutive examples: first the
/// original-to-perturbed pair, then its reverse with the opposite tag. The
/// output therefore holds `n_pairs` rounded up to an even count. Attempt `i` draws from its own
/// derived stream and results are merged in attempt order, so the output does
/// not depend on the thread count.
pub fn make_pairs(split: &DatasetSplit, cfg: &PairGenConfig<'_>) -> Result<PairSet> {
    if !(cfg.delta >= 0.0) {
        return Err(IceError::param("delta", "must be non-negative"));
    }
    if cfg.n_pairs < 1 {
        return Err(IceError::param("n_pairs", "must be at least 1"));
    }
    if split.sup_train.is_empty() {
        return Err(IceError::param("sup_train", "empty"));
    }
    let cap = ATTEMPTS_PER_PAIR * cfg.n_pairs;
    let perturbations = cfg.n_pairs.div_ceil(2);
    let mut pairs = Vec::with_capacity(2 * perturbations);
    let mut mask_sizes = Vec::with_capacity(2 * perturbations);
    let mut attempts = 0;
    let mut accepted = 0;
    while accepted < perturbations && attempts < cap {
        let end = (attempts + ATTEMPT_BATCH).min(cap);
        let batch: Vec<Result<Option<Accepted>>> = (attempts..end)
            .into_par_iter()
            .map(|i| attempt(cfg, split, i))
            .collect();
        for r in batch {
            attempts += 1;
            if let Some(acc) = r? {
                accepted += 1;
                let (x, y) = (acc.original, acc.perturbed);
                pairs.push(EditPair {
                    tag: acc.tag,
                    source: x.0.clone(),
                    target: y.0.clone(),
                    source_score: x.1,
                    target_score: y.1,
                });
                pairs.push(EditPair {
                    tag: acc.tag.opposite(),
                    source: y.0,
                    target: x.0,
                    source_score: y.1,
                    target_score: x.1,
                });
                mask_sizes.push(acc.masked);
                mask_sizes.push(acc.masked);
                if accepted == perturbations {
                    break;
                }
            }
        }
    }
    if accepted < perturbations {
        return Err(IceError::AttemptCapReached {
            requested: cfg.n_pairs,
            emitted: pairs.len(),
            attempts,
            acceptance_rate: if attempts == 0 {
                0.0
            } else {
                accepted as f64 / attempts as f64
            },
        });
    }
    Ok(PairSet {
        pairs,
        mask_sizes,
        attempts,
        accepted,
    })
}

/// The original-to-perturbed member of each emitted couple.
pub fn forward_pairs(pairs: &[EditPair]) -> Result<Vec<EditPair>> {
    if !pairs.len().is_multiple_of(2) {
        return Err(IceError::InvalidCandidate("pair list has odd length".into()));
    }
    pairs
        .chunks(2)
        .enumerate()
        .map(|(k, c)| {
            let (f, r) = (&c[0], &c[1]);
            if f.source != r.target || f.target != r.source || f.tag != r.tag.opposite() {
                return Err(IceError::InvalidCandidate(format!(
                    "pairs {} and {} are not a forward/reverse couple",
                    2 * k,
                    2 * k + 1
                )));
            }
            Ok(f.clone())
        })
        .collect()
}

/// Checks every pair against the δ band, tag rule and re-scoring.
pub fn audit_pairs(pairs: &[EditPair], scorer: &ScorerModel, delta: f64) -> Result<()> {
    let mut balance: i64 = 0;
    for (k, p) in pairs.iter().enumerate() {
        let d = (p.target_score - p.source_score).abs();
        if !(d > 0.0 && d < delta) {
            return Err(IceError::InvalidCandidate(format!(
                "pair {k}: score gap {d} outside (0, {delta})"
            )));
        }
        if label(p.source_score, p.target_score) != Some(p.tag) {
            return Err(IceError::InvalidCandidate(format!(
                "pair {k}: tag {} inconsistent with scores",
                p.tag
            )));
        }
        if p.source == p.target {
            return Err(IceError::InvalidCandidate(format!("pair {k}: source equals target")));
        }
        if scorer.predict(&p.source)?.to_bits() != p.source_score.to_bits()
            || scorer.predict(&p.target)?.to_bits() != p.target_score.to_bits()
        {
            return Err(IceError::InvalidCandidate(format!(
                "pair {k}: stored scores do not match the scorer"
            )));
        }
        balance += if p.tag == ControlTag::Inc { 1 } else { -1 };
    }
    if balance != 0 {
        return Err(IceError::InvalidCandidate(format!(
            "direction counts unbalanced by {balance}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{build_supervised_split, sample_corpus, Landscape, LandscapeShape, Region};
    use crate::scorer::fit_ridge;
    use crate::seq::hamming;

    struct Fixture {
        split: DatasetSplit,
        infill: InfillModel,
        scorer: ScorerModel,
        mask: RegionMask,
    }

    fn fixture() -> Fixture {
        let l = Landscape::generate(&LandscapeShape::default(), 42).unwrap();
        let mask = RegionMask::with_immutable_span(20, 8, 4).unwrap();
        let corpus = sample_corpus(&l, 3000, 1, &mask, &Sequence::new(vec![0; 20])).unwrap();
        let scores: Vec<f64> = corpus.iter().map(|s| l.oracle_score(s).unwrap()).collect();
        let region = Region::from_percentiles(&scores, 1.0, 80.0).unwrap();
        let split = build_supervised_split(&corpus, &l, region, 1000).unwrap();
        let infill = InfillModel::fit(&split.unsup, 8, 1.0, 1).unwrap();
        let scorer = fit_ridge(&split.sup_train, 1.0, 8).unwrap();
        Fixture {
            split,
            infill,
            scorer,
            mask,
        }
    }

    fn cfg<'a>(f: &'a Fixture, spec: &'a MaskSpec, delta: f64, n: usize) -> PairGenConfig<'a> {
        PairGenConfig {
            infill: &f.infill,
            spec,
            mask: &f.mask,
            scorer: &f.scorer,
            delta,
            n_pairs: n,
            seed: 7,
        }
    }

    #[test]
    fn label_rule() {
        assert_eq!(label(1.0, 2.0), Some(ControlTag::Inc));
        assert_eq!(label(2.0, 1.0), Some(ControlTag::Dec));
        assert_eq!(label(1.0, 1.0), None);
    }

    #[test]
    fn zero_delta_hits_cap() {
        let f = fixture();
        let spec = MaskSpec::default();
        match make_pairs(&f.split, &cfg(&f, &spec, 0.0, 4)) {
            Err(IceError::AttemptCapReached {
                attempts, emitted, ..
            }) => {
                assert_eq!(attempts, 400);
                assert_eq!(emitted, 0);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn emitted_pairs_pass_audit() {
        let f = fixture();
        let spec = MaskSpec::default();
        let set = make_pairs(&f.split, &cfg(&f, &spec, 1.5, 2000)).unwrap();
        assert_eq!(set.pairs.len(), 2000);
        audit_pairs(&set.pairs, &f.scorer, 1.5).unwrap();
        let inc = set.pairs.iter().filter(|p| p.tag == ControlTag::Inc).count();
        assert_eq!(inc, 1000);
        for (p, &m) in set.pairs.iter().zip(&set.mask_sizes) {
            assert!(f.mask.conserves(&p.source, &p.target));
            assert!(hamming(&p.source, &p.target) <= m);
        }
    }

    #[test]
    fn couples_start_from_training_examples() {
        let f = fixture();
        let spec = MaskSpec::default();
        let set = make_pairs(&f.split, &cfg(&f, &spec, 1.5, 200)).unwrap();
        let fwd = forward_pairs(&set.pairs).unwrap();
        assert_eq!(fwd.len(), 100);
        for p in &fwd {
            assert!(f.split.sup_train.iter().any(|e| e.seq == p.source));
        }
        let mut broken = set.pairs.clone();
        broken.swap(0, 2);
        assert!(forward_pairs(&broken).is_err());
    }

    #[test]
    fn odd_request_rounds_up() {
        let f = fixture();
        let spec = MaskSpec::default();
        let set = make_pairs(&f.split, &cfg(&f, &spec, 1.5, 7)).unwrap();
        assert_eq!(set.pairs.len(), 8);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let f = fixture();
        let spec = MaskSpec::default();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| make_pairs(&f.split, &cfg(&f, &spec, 1.5, 600)).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.attempts, b.attempts);
    }
}
