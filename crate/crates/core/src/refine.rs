//! Iterative refinement `x_{k+1} ~ p(· | x_k, c)` and the baselines it is
//! compared against.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::editor::{read_conditions, EditDistribution, EditorFile, EditorModel, EDITOR_FORMAT_VERSION};
use crate::error::{IceError, Result};
use crate::pairgen::{ControlTag, EditPair};
use crate::proposer::{perturb, InfillModel, MaskSpec};
use crate::scorer::ScorerModel;
use crate::seed;
use crate::seq::{RegionMask, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    ScorerFree,
    ScorerGuided,
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceMode::ScorerFree => "scorer-free",
            InferenceMode::ScorerGuided => "scorer-guided",
        })
    }
}

impl FromStr for InferenceMode {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scorer-free" => Ok(InferenceMode::ScorerFree),
            "scorer-guided" => Ok(InferenceMode::ScorerGuided),
            other => Err(IceError::parse("inference mode", other.to_string())),
        }
    }
}

/// A refinement run from one start.
///
/// `steps[0]` is the start; `candidates[k - 1]` holds everything proposed at
/// iteration `k` (the full beam, or the `k` samples). `scores` holds `f_s` of
/// each step once known; scorer-free runs leave it empty until annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tag: ControlTag,
    pub mode: InferenceMode,
    pub steps: Vec<Sequence>,
    pub scores: Vec<f64>,
    pub candidates: Vec<Vec<Sequence>>,
}

impl Trajectory {
    pub fn start(&self) -> &Sequence {
        &self.steps[0]
    }

    pub fn last(&self) -> &Sequence {
        self.steps.last().expect("trajectory has a start")
    }

    pub fn iterations(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn annotate(&mut self, scorer: &ScorerModel) -> Result<()> {
        self.scores = self.steps.iter().map(|s| scorer.predict(s)).collect::<Result<_>>()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Above,
    Below,
}

impl Direction {
    /// Strictly beyond `threshold`; ties fail.
    pub fn beyond(self, z: f64, threshold: f64) -> bool {
        match self {
            Direction::Above => z > threshold,
            Direction::Below => z < threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRegion {
    Train,
    Extrapolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalTarget {
    pub value: f64,
    pub direction: Direction,
    pub region: TargetRegion,
}

impl EvalTarget {
    /// Classifies `value` against the training region.
    pub fn new(value: f64, direction: Direction, low: f64, high: f64) -> Self {
        let region = if (low..=high).contains(&value) {
            TargetRegion::Train
        } else {
            TargetRegion::Extrapolation
        };
        EvalTarget {
            value,
            direction,
            region,
        }
    }
}

fn check_iterations(iterations: usize) -> Result<()> {
    if iterations < 1 {
        return Err(IceError::param("iterations", "must be at least 1"));
    }
    Ok(())
}

/// Scorer-free ICE: each iteration moves to the most likely beam member
/// that the trajectory has not already visited, or stays put when every
/// member has been visited.
pub fn run_scorer_free(
    editor: &EditorModel,
    x0: &Sequence,
    tag: ControlTag,
    iterations: usize,
    beam_width: usize,
) -> Result<Trajectory> {
    check_iterations(iterations)?;
    beam_loop(x0, tag, iterations, |x| {
        Ok(editor.beam_step(x, tag, beam_width)?.into_iter().map(|c| c.seq).collect())
    })
}

fn beam_loop(
    x0: &Sequence,
    tag: ControlTag,
    iterations: usize,
    mut step: impl FnMut(&Sequence) -> Result<Vec<Sequence>>,
) -> Result<Trajectory> {
    let mut steps = vec![x0.clone()];
    let mut candidates = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let x = steps.last().expect("non-empty");
        let beam = match step(x) {
            Ok(b) => b,
            Err(IceError::NoCandidate) => Vec::new(),
            Err(e) => return Err(e),
        };
        let next = beam.iter().find(|c| !steps.contains(c)).unwrap_or(x).clone();
        steps.push(next);
        candidates.push(beam);
    }
    Ok(Trajectory {
        tag,
        mode: InferenceMode::ScorerFree,
        steps,
        scores: Vec::new(),
        candidates,
    })
}

/// Index of the best-scoring candidate in direction `tag`; ties go to the
/// lexicographically smallest sequence.
pub fn select_best(candidates: &[Sequence], scores: &[f64], tag: ControlTag) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..candidates.len() {
        best = Some(match best {
            None => i,
            Some(b) => {
                if tag.prefers(scores[i], scores[b])
                    || (scores[i] == scores[b] && candidates[i].tokens() < candidates[b].tokens())
                {
                    i
                } else {
                    b
                }
            }
        });
    }
    best
}

/// Propose-then-select loop shared by scorer-guided ICE and Iterative
/// Sampling. Iteration `k` draws from its own stream `(seed, label, k)`.
pub fn guided_loop(
    scorer: &ScorerModel,
    x0: &Sequence,
    tag: ControlTag,
    iterations: usize,
    seed_value: u64,
    label: &str,
    mut propose: impl FnMut(&Sequence, &mut seed::Stream) -> Result<Vec<Sequence>>,
) -> Result<Trajectory> {
    check_iterations(iterations)?;
    let mut steps = vec![x0.clone()];
    let mut scores = vec![scorer.predict(x0)?];
    let mut candidates = Vec::with_capacity(iterations);
    for k in 1..=iterations {
        let mut rng = seed::derived_stream(seed_value, label, k as u64);
        let x = steps.last().expect("non-empty").clone();
        let cands = propose(&x, &mut rng)?;
        let cand_scores: Vec<f64> = cands.iter().map(|c| scorer.predict(c)).collect::<Result<_>>()?;
        match select_best(&cands, &cand_scores, tag) {
            Some(i) => {
                steps.push(cands[i].clone());
                scores.push(cand_scores[i]);
            }
            None => {
                steps.push(x);
                scores.push(*scores.last().expect("non-empty"));
            }
        }
        candidates.push(cands);
    }
    Ok(Trajectory {
        tag,
        mode: InferenceMode::ScorerGuided,
        steps,
        scores,
        candidates,
    })
}

pub struct GuidedParams {
    pub iterations: usize,
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
}

fn check_guided(p: &GuidedParams) -> Result<()> {
    check_iterations(p.iterations)?;
    if p.k < 1 {
        return Err(IceError::param("k", "must be at least 1"));
    }
    if !(p.temperature > 0.0) || !p.temperature.is_finite() {
        return Err(IceError::param("temperature", "must be positive"));
    }
    Ok(())
}

/// Scorer-guided ICE: sample `k` edits per iteration, keep the scorer's best.
/// `label` names the stream family, usually including the start index.
pub fn run_scorer_guided(
    editor: &EditorModel,
    scorer: &ScorerModel,
    x0: &Sequence,
    tag: ControlTag,
    params: &GuidedParams,
    label: &str,
) -> Result<Trajectory> {
    check_guided(params)?;
    guided_loop(scorer, x0, tag, params.iterations, params.seed, label, |x, rng| {
        editor.sample_step(x, tag, params.k, params.temperature, rng)
    })
}

/// `n` independent one-shot mask-and-infill perturbations of `x0`.
pub fn baseline_sampling<R: Rng + ?Sized>(
    infill: &InfillModel,
    spec: &MaskSpec,
    mask: &RegionMask,
    x0: &Sequence,
    rng: &mut R,
    n: usize,
) -> Result<Vec<Sequence>> {
    if n < 1 {
        return Err(IceError::param("n", "must be at least 1"));
    }
    (0..n)
        .map(|_| perturb(infill, spec, mask, x0, 1.0, rng).map(|(y, _)| y))
        .collect()
}

/// The scorer-guided loop with mask-and-infill proposals in place of the
/// editor. The temperature applies to the infill draws.
#[allow(clippy::too_many_arguments)]
pub fn baseline_iter_sampling(
    infill: &InfillModel,
    spec: &MaskSpec,
    mask: &RegionMask,
    scorer: &ScorerModel,
    x0: &Sequence,
    tag: ControlTag,
    params: &GuidedParams,
    label: &str,
) -> Result<Trajectory> {
    check_guided(params)?;
    guided_loop(scorer, x0, tag, params.iterations, params.seed, label, |x, rng| {
        (0..params.k)
            .map(|_| perturb(infill, spec, mask, x, params.temperature, rng).map(|(y, _)| y))
            .collect()
    })
}

/// Editor family keyed by equal-width bins of the target score instead of a
/// direction tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConditionedEditor {
    pub low: f64,
    pub high: f64,
    bins: Vec<EditDistribution>,
}

impl ScoreConditionedEditor {
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        pairs: &[EditPair],
        n_bins: usize,
        low: f64,
        high: f64,
        smoothing: f64,
        max_edits: usize,
        mask: &RegionMask,
        alphabet_size: usize,
    ) -> Result<Self> {
        if n_bins < 2 {
            return Err(IceError::param("n_bins", "must be at least 2"));
        }
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(IceError::param("range", "need finite low < high"));
        }
        if pairs.is_empty() {
            return Err(IceError::param("pairs", "empty"));
        }
        let proto = EditDistribution::empty(mask, alphabet_size, max_edits, smoothing)?;
        let mut out = ScoreConditionedEditor {
            low,
            high,
            bins: vec![proto; n_bins],
        };
        for p in pairs {
            let b = out.bin_of(p.target_score);
            out.bins[b].observe(&p.source, &p.target)?;
        }
        for b in &mut out.bins {
            b.refresh();
        }
        Ok(out)
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.high - self.low) / self.bins.len() as f64
    }

    /// Bin containing `z`, clamped to the first and last bin.
    pub fn bin_of(&self, z: f64) -> usize {
        let n = self.bins.len();
        let f = ((z - self.low) / self.bin_width()).floor();
        if f.is_nan() || f < 0.0 {
            0
        } else {
            (f as usize).min(n - 1)
        }
    }

    pub fn bin(&self, index: usize) -> &EditDistribution {
        &self.bins[index]
    }

    /// Generates under the bin of `target`, advancing like scorer-free ICE
    /// for `iterations` steps.
    pub fn run(&self, x0: &Sequence, target: f64, iterations: usize, beam_width: usize) -> Result<Trajectory> {
        check_iterations(iterations)?;
        let dist = &self.bins[self.bin_of(target)];
        let tag = if target >= self.high {
            ControlTag::Inc
        } else {
            ControlTag::Dec
        };
        beam_loop(x0, tag, iterations, |x| {
            Ok(dist.beam(x, beam_width)?.into_iter().map(|c| c.seq).collect())
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&ScoreConditionedFile {
            low: self.low,
            high: self.high,
            editor: EditorFile {
                version: EDITOR_FORMAT_VERSION,
                conditions: self.bins.clone(),
            },
        })
        .map_err(|e| IceError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScoreConditionedFile = serde_json::from_str(text).map_err(|e| IceError::Serde(e.to_string()))?;
        let bins = read_conditions(f.editor, "score-conditioned editor")?;
        if bins.len() < 2 {
            return Err(IceError::parse("score-conditioned editor", "fewer than two bins"));
        }
        Ok(ScoreConditionedEditor {
            low: f.low,
            high: f.high,
            bins,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreConditionedFile {
    low: f64,
    high: f64,
    editor: EditorFile,
}
