//! The direction-conditioned local editor `p(y | x, c)`.
//!
//! Each condition owns a factorized count model: how many positions an edit
//! touches, which positions it touches, and what each touched token becomes
//! given the old token. Probabilities are Laplace-smoothed counts, so a model
//! fits in one pass and every candidate likelihood is an exact closed form.
//! That makes beam search enumerable and testable against brute force.
//!
//! A candidate `y` that differs from `x` at the position set `D` (`|D| = m`)
//! scores
//!
//! ```text
//! log p = log P(m) − log m! + Σ_{i∈D} [log w(i) + log s(y_i | x_i, i)]
//! ```

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::categorical::sample_tempered;
use crate::error::{IceError, Result};
use crate::pairgen::{ControlTag, EditPair};
use crate::seq::{diff_positions, RegionMask, Sequence};

pub const EDITOR_FORMAT_VERSION: u32 = 1;

/// Frontier multiplier: beam search keeps `FRONTIER_FACTOR × width` partial
/// candidates per edit count before exact re-ranking.
pub const FRONTIER_FACTOR: usize = 3;

/// A proposed sequence with its model log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub seq: Sequence,
    pub logprob: f64,
}

/// Smoothed count tables for one conditioning value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditDistribution {
    length: usize,
    alphabet_size: usize,
    max_edits: usize,
    smoothing: f64,
    mutable: Vec<bool>,
    position_counts: Vec<u64>,
    /// `subst_counts[(i * A + old) * A + new]`
    subst_counts: Vec<u64>,
    /// `edit_counts[m - 1]`
    edit_counts: Vec<u64>,
    #[serde(skip)]
    derived: Derived,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Derived {
    position: Vec<f64>,
    subst: Vec<f64>,
    edit_count: Vec<f64>,
    ln_position: Vec<f64>,
    ln_subst: Vec<f64>,
    ln_edit_count: Vec<f64>,
    ln_factorial: Vec<f64>,
    mutable_positions: Vec<usize>,
}

type Key = SmallVec<[u16; 12]>;

#[derive(Debug, Clone)]
struct Partial {
    score: f64,
    positions: Key,
    tokens: Key,
}

fn key_cmp(ap: &[u16], at: &[u16], bp: &[u16], bt: &[u16]) -> Ordering {
    ap.cmp(bp).then_with(|| at.cmp(bt))
}

/// Higher score first, then lexicographic (positions, tokens).
fn rank_cmp(a: &Partial, b: &Partial) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| key_cmp(&a.positions, &a.tokens, &b.positions, &b.tokens))
}

impl EditDistribution {
    pub fn empty(mask: &RegionMask, alphabet_size: usize, max_edits: usize, smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0) || !smoothing.is_finite() {
            return Err(IceError::param("smoothing", "must be positive"));
        }
        if max_edits < 1 {
            return Err(IceError::param("max_edits", "must be at least 1"));
        }
        if alphabet_size < 2 {
            return Err(IceError::param("alphabet_size", "must be at least 2"));
        }
        if mask.len() > u16::MAX as usize {
            return Err(IceError::param("length", "too long"));
        }
        let length = mask.len();
        let mut d = EditDistribution {
            length,
            alphabet_size,
            max_edits,
            smoothing,
            mutable: mask.flags().to_vec(),
            position_counts: vec![0; length],
            subst_counts: vec![0; length * alphabet_size * alphabet_size],
            edit_counts: vec![0; max_edits],
            derived: Derived::default(),
        };
        d.refresh();
        Ok(d)
    }

    /// Adds one `(source, target)` observation to the counts.
    pub fn observe(&mut self, source: &Sequence, target: &Sequence) -> Result<()> {
        if source.len() != self.length || target.len() != self.length {
            return Err(IceError::LengthMismatch {
                expected: self.length,
                found: if source.len() != self.length {
                    source.len()
                } else {
                    target.len()
                },
            });
        }
        let diffs = diff_positions(source, target);
        let m = diffs.len();
        if m == 0 {
            return Err(IceError::InvalidCandidate("pair has no differing positions".into()));
        }
        if m > self.max_edits {
            return Err(IceError::InvalidCandidate(format!(
                "pair differs at {m} positions, above max_edits {}",
                self.max_edits
            )));
        }
        let a = self.alphabet_size;
        for &i in &diffs {
            if !self.mutable[i] {
                return Err(IceError::InvalidCandidate(format!(
                    "pair edits immutable position {i}"
                )));
            }
            let (old, new) = (source.tokens()[i] as usize, target.tokens()[i] as usize);
            if old >= a || new >= a {
                return Err(IceError::InvalidCandidate("token outside alphabet".into()));
            }
        }
        self.edit_counts[m - 1] += 1;
        for &i in &diffs {
            let (old, new) = (source.tokens()[i] as usize, target.tokens()[i] as usize);
            self.position_counts[i] += 1;
            self.subst_counts[(i * a + old) * a + new] += 1;
        }
        Ok(())
    }

    /// Recomputes normalized and log tables from the counts.
    pub fn refresh(&mut self) {
        let a = self.alphabet_size;
        let s = self.smoothing;
        let mutable_positions: Vec<usize> = (0..self.length).filter(|&i| self.mutable[i]).collect();

        let pos_total: u64 = mutable_positions.iter().map(|&i| self.position_counts[i]).sum();
        let pos_denom = pos_total as f64 + s * mutable_positions.len() as f64;
        let position: Vec<f64> = (0..self.length)
            .map(|i| {
                if self.mutable[i] {
                    (self.position_counts[i] as f64 + s) / pos_denom
                } else {
                    0.0
                }
            })
            .collect();

        let mut subst = vec![0.0; self.subst_counts.len()];
        for row in 0..self.length * a {
            let old = row % a;
            let slice = &self.subst_counts[row * a..(row + 1) * a];
            let total: u64 = slice.iter().enumerate().filter(|&(b, _)| b != old).map(|(_, c)| c).sum();
            let denom = total as f64 + s * (a - 1) as f64;
            for b in 0..a {
                if b != old {
                    subst[row * a + b] = (slice[b] as f64 + s) / denom;
                }
            }
        }

        let edit_total: u64 = self.edit_counts.iter().sum();
        let edit_denom = edit_total as f64 + s * self.max_edits as f64;
        let edit_count: Vec<f64> = self
            .edit_counts
            .iter()
            .map(|&c| (c as f64 + s) / edit_denom)
            .collect();

        let ln = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
                .collect()
        };
        let mut ln_factorial = vec![0.0; self.max_edits + 1];
        for m in 1..=self.max_edits {
            ln_factorial[m] = ln_factorial[m - 1] + (m as f64).ln();
        }
        self.derived = Derived {
            ln_position: ln(&position),
            ln_subst: ln(&subst),
            ln_edit_count: ln(&edit_count),
            position,
            subst,
            edit_count,
            ln_factorial,
            mutable_positions,
        };
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn max_edits(&self) -> usize {
        self.max_edits
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn mutable(&self) -> &[bool] {
        &self.mutable
    }

    /// Probability that an edit touches position `i`.
    pub fn position_weights(&self) -> &[f64] {
        &self.derived.position
    }

    /// Distribution of the new token at position `i` replacing `old`.
    pub fn substitution(&self, position: usize, old: u8) -> &[f64] {
        let a = self.alphabet_size;
        let row = position * a + old as usize;
        &self.derived.subst[row * a..(row + 1) * a]
    }

    /// `P(m)` for `m = 1..=max_edits`, indexed from zero.
    pub fn edit_count_dist(&self) -> &[f64] {
        &self.derived.edit_count
    }

    pub fn position_counts(&self) -> &[u64] {
        &self.position_counts
    }

    pub fn subst_counts(&self) -> &[u64] {
        &self.subst_counts
    }

    pub fn edit_counts(&self) -> &[u64] {
        &self.edit_counts
    }

    fn edit_score(&self, x: &[u8], position: usize, token: u8) -> f64 {
        let a = self.alphabet_size;
        self.derived.ln_position[position]
            + self.derived.ln_subst[(position * a + x[position] as usize) * a + token as usize]
    }

    /// Exact log-likelihood of editing `x` at `positions` (ascending) to `tokens`.
    fn edits_logprob(&self, x: &[u8], positions: &[u16], tokens: &[u16]) -> f64 {
        let m = positions.len();
        let mut lp = self.derived.ln_edit_count[m - 1] - self.derived.ln_factorial[m];
        for (&p, &t) in positions.iter().zip(tokens) {
            lp += self.edit_score(x, p as usize, t as u8);
        }
        lp
    }

    pub fn candidate_logprob(&self, x: &Sequence, y: &Sequence) -> Result<f64> {
        if x.len() != self.length || y.len() != self.length {
            return Err(IceError::LengthMismatch {
                expected: self.length,
                found: if x.len() != self.length { x.len() } else { y.len() },
            });
        }
        let diffs = diff_positions(x, y);
        let m = diffs.len();
        if m == 0 || m > self.max_edits {
            return Err(IceError::InvalidCandidate(format!(
                "candidate differs at {m} positions; expected 1..={}",
                self.max_edits
            )));
        }
        if let Some(&i) = diffs.iter().find(|&&i| !self.mutable[i]) {
            return Err(IceError::InvalidCandidate(format!("edit at immutable position {i}")));
        }
        if x.tokens().iter().chain(y.tokens()).any(|&t| t as usize >= self.alphabet_size) {
            return Err(IceError::InvalidCandidate("token outside alphabet".into()));
        }
        let positions: Key = diffs.iter().map(|&i| i as u16).collect();
        let tokens: Key = diffs.iter().map(|&i| y.tokens()[i] as u16).collect();
        Ok(self.edits_logprob(x.tokens(), &positions, &tokens))
    }

    /// The `width` most likely candidates, exactly, ordered by descending
    /// log-likelihood with ties broken by lexicographic (positions, tokens).
    ///
    /// Because the likelihood is a sum of per-position terms plus a term that
    /// depends only on the edit count, the best `m`-edit candidates are found
    /// by a k-best dynamic program over positions that keeps a bounded list
    /// of partial edits per count. Edit counts whose optimistic bound cannot
    /// reach the current `width`-th best single edit are skipped.
    pub fn beam(&self, x: &Sequence, width: usize) -> Result<Vec<Candidate>> {
        if width < 1 {
            return Err(IceError::param("beam_width", "must be at least 1"));
        }
        if x.len() != self.length {
            return Err(IceError::LengthMismatch {
                expected: self.length,
                found: x.len(),
            });
        }
        let xt = x.tokens();
        let a = self.alphabet_size;
        let frontier = FRONTIER_FACTOR * width;
        let d = &self.derived;

        // per-position options, best first
        let mut options: Vec<(usize, Vec<(f64, u16)>)> = Vec::with_capacity(d.mutable_positions.len());
        for &i in &d.mutable_positions {
            let mut opts: Vec<(f64, u16)> = (0..a as u16)
                .filter(|&b| b != xt[i] as u16)
                .map(|b| (self.edit_score(xt, i, b as u8), b))
                .filter(|(s, _)| s.is_finite())
                .collect();
            opts.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
            opts.truncate(frontier);
            if !opts.is_empty() {
                options.push((i, opts));
            }
        }
        if options.is_empty() {
            return Err(IceError::NoCandidate);
        }
        let max_m = self.max_edits.min(options.len());

        // optimistic bound per edit count
        let mut best: Vec<f64> = options.iter().map(|(_, o)| o[0].0).collect();
        best.sort_by(|p, q| q.total_cmp(p));
        let mut bound = vec![f64::NEG_INFINITY; max_m + 1];
        let mut acc = 0.0;
        for m in 1..=max_m {
            acc += best[m - 1];
            bound[m] = d.ln_edit_count[m - 1] - d.ln_factorial[m] + acc;
        }
        let mut singles: Vec<f64> = options
            .iter()
            .flat_map(|(_, o)| o.iter().map(|(s, _)| *s))
            .collect();
        let floor = if singles.len() >= width {
            singles.sort_by(|p, q| q.total_cmp(p));
            d.ln_edit_count[0] - d.ln_factorial[1] + singles[width - 1] - 1e-9
        } else {
            f64::NEG_INFINITY
        };
        let live: Vec<bool> = (0..=max_m).map(|m| m >= 1 && bound[m] >= floor).collect();
        let top_m = (1..=max_m).rev().find(|&m| live[m]).unwrap_or(1);

        let mut lists: Vec<Vec<Partial>> = vec![Vec::new(); top_m + 1];
        lists[0].push(Partial {
            score: 0.0,
            positions: Key::new(),
            tokens: Key::new(),
        });
        let mut merged: Vec<Partial> = Vec::new();
        for (i, opts) in &options {
            for c in (1..=top_m).rev() {
                if lists[c - 1].is_empty() {
                    continue;
                }
                merged.clear();
                merged.append(&mut lists[c]);
                for prev in &lists[c - 1] {
                    for &(s, b) in opts {
                        let mut positions = prev.positions.clone();
                        positions.push(*i as u16);
                        let mut tokens = prev.tokens.clone();
                        tokens.push(b);
                        merged.push(Partial {
                            score: prev.score + s,
                            positions,
                            tokens,
                        });
                    }
                }
                if merged.len() > frontier {
                    merged.select_nth_unstable_by(frontier - 1, rank_cmp);
                    merged.truncate(frontier);
                }
                lists[c] = std::mem::take(&mut merged);
            }
        }

        let mut finals: Vec<Partial> = Vec::new();
        for (c, list) in lists.into_iter().enumerate().skip(1) {
            if !live[c] {
                continue;
            }
            for mut p in list {
                p.score = self.edits_logprob(xt, &p.positions, &p.tokens);
                finals.push(p);
            }
        }
        finals.sort_by(rank_cmp);
        finals.truncate(width);
        Ok(finals
            .into_iter()
            .map(|p| {
                let mut y = x.clone();
                for (&pos, &tok) in p.positions.iter().zip(&p.tokens) {
                    y.tokens_mut()[pos as usize] = tok as u8;
                }
                Candidate {
                    seq: y,
                    logprob: p.score,
                }
            })
            .collect())
    }

    /// One draw: edit count, then positions without replacement, then tokens,
    /// each from its temperature-scaled distribution.
    pub fn sample<R: Rng + ?Sized>(&self, x: &Sequence, temperature: f64, rng: &mut R) -> Result<Sequence> {
        if !(temperature >= 0.0) {
            return Err(IceError::param("temperature", "must be non-negative"));
        }
        if x.len() != self.length {
            return Err(IceError::LengthMismatch {
                expected: self.length,
                found: x.len(),
            });
        }
        let d = &self.derived;
        let n_mut = d.mutable_positions.len();
        let support = self.max_edits.min(n_mut);
        let m = 1 + sample_tempered(&d.edit_count[..support], temperature, rng).ok_or(IceError::NoCandidate)?;
        let mut weights = d.position.clone();
        let mut y = x.clone();
        for _ in 0..m {
            let i = sample_tempered(&weights, temperature, rng).ok_or(IceError::NoCandidate)?;
            weights[i] = 0.0;
            let dist = self.substitution(i, x.tokens()[i]);
            let b = sample_tempered(dist, temperature, rng).ok_or(IceError::NoCandidate)?;
            y.tokens_mut()[i] = b as u8;
        }
        Ok(y)
    }
}

/// Direction-conditioned editor: one [`EditDistribution`] per control tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditorModel {
    inc: EditDistribution,
    dec: EditDistribution,
}

impl EditorModel {
    pub fn fit(
        pairs: &[EditPair],
        smoothing: f64,
        max_edits: usize,
        mask: &RegionMask,
        alphabet_size: usize,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(IceError::param("pairs", "empty"));
        }
        let mut inc = EditDistribution::empty(mask, alphabet_size, max_edits, smoothing)?;
        let mut dec = inc.clone();
        for p in pairs {
            match p.tag {
                ControlTag::Inc => inc.observe(&p.source, &p.target)?,
                ControlTag::Dec => dec.observe(&p.source, &p.target)?,
            }
        }
        inc.refresh();
        dec.refresh();
        Ok(EditorModel { inc, dec })
    }

    pub fn condition(&self, tag: ControlTag) -> &EditDistribution {
        match tag {
            ControlTag::Inc => &self.inc,
            ControlTag::Dec => &self.dec,
        }
    }

    pub fn max_edits(&self) -> usize {
        self.inc.max_edits
    }

    pub fn candidate_logprob(&self, x: &Sequence, y: &Sequence, tag: ControlTag) -> Result<f64> {
        self.condition(tag).candidate_logprob(x, y)
    }

    pub fn beam_step(&self, x: &Sequence, tag: ControlTag, beam_width: usize) -> Result<Vec<Candidate>> {
        self.condition(tag).beam(x, beam_width)
    }

    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        x: &Sequence,
        tag: ControlTag,
        k: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<Sequence>> {
        if k < 1 {
            return Err(IceError::param("k", "must be at least 1"));
        }
        let dist = self.condition(tag);
        (0..k).map(|_| dist.sample(x, temperature, rng)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&EditorFile {
            version: EDITOR_FORMAT_VERSION,
            conditions: vec![self.inc.clone(), self.dec.clone()],
        })
        .map_err(|e| IceError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EditorFile = serde_json::from_str(text).map_err(|e| IceError::Serde(e.to_string()))?;
        let mut conditions = read_conditions(file, "editor")?;
        if conditions.len() != 2 {
            return Err(IceError::parse("editor", "expected two conditions"));
        }
        let dec = conditions.pop().expect("two conditions");
        let inc = conditions.pop().expect("two conditions");
        Ok(EditorModel { inc, dec })
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct EditorFile {
    pub(crate) version: u32,
    pub(crate) conditions: Vec<EditDistribution>,
}

pub(crate) fn read_conditions(file: EditorFile, what: &'static str) -> Result<Vec<EditDistribution>> {
    if file.version != EDITOR_FORMAT_VERSION {
        return Err(IceError::UnsupportedVersion {
            what,
            expected: EDITOR_FORMAT_VERSION,
            found: file.version,
        });
    }
    let mut out = file.conditions;
    for d in &mut out {
        let a = d.alphabet_size;
        if d.position_counts.len() != d.length
            || d.subst_counts.len() != d.length * a * a
            || d.edit_counts.len() != d.max_edits
            || d.mutable.len() != d.length
        {
            return Err(IceError::parse(what, "count tables have inconsistent sizes"));
        }
        d.refresh();
    }
    Ok(out)
}
