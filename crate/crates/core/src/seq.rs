//! Fixed-length token sequences, their alphabet, and the region mask that
//! pins immutable positions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{IceError, Result};

/// Index of a symbol within an [`Alphabet`].
pub type Token = u8;

/// Ordered set of single-character symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(IceError::InvalidAlphabet(format!(
                "need at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        if symbols.len() > Token::MAX as usize + 1 {
            return Err(IceError::InvalidAlphabet(format!(
                "at most {} symbols supported",
                Token::MAX as usize + 1
            )));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(IceError::InvalidAlphabet(format!("duplicate symbol {s:?}")));
            }
            if s.is_whitespace() {
                return Err(IceError::InvalidAlphabet("whitespace symbol".into()));
            }
        }
        Ok(Alphabet { symbols })
    }

    /// The first `size` uppercase letters, `A`, `B`, ...
    pub fn letters(size: usize) -> Result<Self> {
        if size > 26 {
            return Err(IceError::InvalidAlphabet(format!(
                "letter alphabet supports at most 26 symbols, got {size}"
            )));
        }
        Alphabet::new((0..size as u8).map(|i| (b'A' + i) as char).collect())
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn symbol(&self, token: Token) -> Option<char> {
        self.symbols.get(token as usize).copied()
    }

    pub fn index_of(&self, symbol: char) -> Option<Token> {
        self.symbols
            .iter()
            .position(|&s| s == symbol)
            .map(|i| i as Token)
    }

    /// Parses the one-line text form of a sequence.
    pub fn parse(&self, text: &str) -> Result<Sequence> {
        text.chars()
            .enumerate()
            .map(|(i, c)| {
                self.index_of(c).ok_or_else(|| {
                    IceError::parse("sequence", format!("unknown symbol {c:?} at position {i}"))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Sequence::new)
    }

    pub fn render(&self, seq: &Sequence) -> String {
        seq.tokens()
            .iter()
            .map(|&t| self.symbol(t).unwrap_or('?'))
            .collect()
    }
}

/// An ordered run of alphabet indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sequence(Vec<Token>);

impl Sequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sequence(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, position: usize) -> Option<Token> {
        self.0.get(position).copied()
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.0
    }

    pub(crate) fn tokens_mut(&mut self) -> &mut [Token] {
        &mut self.0
    }
}

impl From<Vec<Token>> for Sequence {
    fn from(tokens: Vec<Token>) -> Self {
        Sequence(tokens)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Per-position mutability flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMask {
    mutable: Vec<bool>,
}

impl RegionMask {
    pub fn new(mutable: Vec<bool>) -> Result<Self> {
        if !mutable.iter().any(|&m| m) {
            return Err(IceError::InvalidMask(
                "at least one position must be mutable".into(),
            ));
        }
        Ok(RegionMask { mutable })
    }

    pub fn all_mutable(length: usize) -> Result<Self> {
        RegionMask::new(vec![true; length])
    }

    /// Everything mutable except `span_len` contiguous positions starting at `start`.
    pub fn with_immutable_span(length: usize, start: usize, span_len: usize) -> Result<Self> {
        if start + span_len > length {
            return Err(IceError::InvalidMask(format!(
                "immutable span {start}..{} exceeds length {length}",
                start + span_len
            )));
        }
        let mutable = (0..length)
            .map(|i| i < start || i >= start + span_len)
            .collect();
        RegionMask::new(mutable)
    }

    pub fn len(&self) -> usize {
        self.mutable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mutable.is_empty()
    }

    pub fn is_mutable(&self, position: usize) -> bool {
        self.mutable.get(position).copied().unwrap_or(false)
    }

    pub fn flags(&self) -> &[bool] {
        &self.mutable
    }

    pub fn mutable_positions(&self) -> Vec<usize> {
        (0..self.mutable.len()).filter(|&i| self.mutable[i]).collect()
    }

    pub fn mutable_count(&self) -> usize {
        self.mutable.iter().filter(|&&m| m).count()
    }

    /// True when `candidate` agrees with `reference` on every immutable position.
    pub fn conserves(&self, reference: &Sequence, candidate: &Sequence) -> bool {
        reference.len() == candidate.len()
            && self
                .mutable
                .iter()
                .zip(reference.tokens().iter().zip(candidate.tokens()))
                .all(|(&m, (a, b))| m || a == b)
    }
}

/// A substitution at one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub new_token: Token,
}

impl Edit {
    pub fn new(position: usize, new_token: Token) -> Self {
        Edit {
            position,
            new_token,
        }
    }
}

/// Why a sequence failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SequenceViolation {
    #[error("length {found} does not match expected length {expected}")]
    Length { expected: usize, found: usize },
    #[error("token {token} at position {position} is outside alphabet of size {alphabet_size}")]
    TokenOutOfRange {
        position: usize,
        token: Token,
        alphabet_size: usize,
    },
}

pub fn validate_sequence(
    seq: &Sequence,
    alphabet: &Alphabet,
    expected_len: usize,
) -> std::result::Result<(), SequenceViolation> {
    if let Some((position, &token)) = seq
        .tokens()
        .iter()
        .enumerate()
        .find(|(_, &t)| t as usize >= alphabet.size())
    {
        return Err(SequenceViolation::TokenOutOfRange {
            position,
            token,
            alphabet_size: alphabet.size(),
        });
    }
    if seq.len() != expected_len {
        return Err(SequenceViolation::Length {
            expected: expected_len,
            found: seq.len(),
        });
    }
    Ok(())
}

/// Applies substitutions to a copy of `seq`.
pub fn apply_edits(seq: &Sequence, edits: &[Edit], mask: &RegionMask) -> Result<Sequence> {
    if mask.len() != seq.len() {
        return Err(IceError::LengthMismatch {
            expected: mask.len(),
            found: seq.len(),
        });
    }
    let mut out = seq.clone();
    let mut seen = vec![false; seq.len()];
    for edit in edits {
        let p = edit.position;
        if p >= seq.len() {
            return Err(IceError::InvalidEdit(format!(
                "position {p} out of range for length {}",
                seq.len()
            )));
        }
        if !mask.is_mutable(p) {
            return Err(IceError::InvalidEdit(format!("position {p} is immutable")));
        }
        if seen[p] {
            return Err(IceError::InvalidEdit(format!("duplicate edit at position {p}")));
        }
        seen[p] = true;
        if seq.tokens()[p] == edit.new_token {
            return Err(IceError::InvalidEdit(format!(
                "no-op edit at position {p} (token {})",
                edit.new_token
            )));
        }
        out.tokens_mut()[p] = edit.new_token;
    }
    Ok(out)
}

/// Positions where two equal-length sequences differ.
pub fn diff_positions(a: &Sequence, b: &Sequence) -> Vec<usize> {
    a.tokens()
        .iter()
        .zip(b.tokens())
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i)
        .collect()
}

pub fn hamming(a: &Sequence, b: &Sequence) -> usize {
    a.tokens()
        .iter()
        .zip(b.tokens())
        .filter(|(x, y)| x != y)
        .count()
        + a.len().abs_diff(b.len())
}

/// Edit distance with unit-cost insertion, deletion and substitution.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn sequence_levenshtein(a: &Sequence, b: &Sequence) -> usize {
    levenshtein(a.tokens(), b.tokens())
}
