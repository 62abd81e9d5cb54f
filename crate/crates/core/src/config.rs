//! Campaign configuration and its TOML file form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IceError, Result};
use crate::landscape::LandscapeShape;
use crate::pairgen::ControlTag;
use crate::proposer::MaskSpec;
use crate::refine::Direction;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema_version: u32,
    /// Master seed; every stage stream is derived from it.
    pub seed: u64,
    /// Default output directory. Not part of the config hash.
    pub output_dir: PathBuf,
    pub landscape: LandscapeShape,
    pub region: RegionConfig,
    pub corpus: CorpusConfig,
    pub scorer: ScorerConfig,
    pub infill: InfillConfig,
    pub mask: MaskSpec,
    pub pairs: PairsConfig,
    pub editor: EditorConfig,
    pub inference: InferenceConfig,
    pub score_conditioned: ScoreConditionedConfig,
    pub evaluation: EvaluationConfig,
    pub sweep: SweepConfig,
    pub targets: Vec<TargetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub low_percentile: f64,
    pub high_percentile: f64,
    /// Standard deviation of Gaussian noise added to supervised labels.
    pub label_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub m_unsup: usize,
    pub m_sup: usize,
    /// Independent labeled sequences used only for scorer diagnostics.
    pub m_heldout: usize,
    pub immutable_start: usize,
    pub immutable_len: usize,
    /// Tokens at immutable positions come from this sequence (alphabet letters).
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub ridge_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfillConfig {
    pub smoothing: f64,
    pub order: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsConfig {
    pub delta: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditorConfig {
    pub smoothing: f64,
    /// 0 takes the largest mask the mask spec can produce.
    pub max_edits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub tag: ControlTag,
    pub iterations: usize,
    pub beam_width: usize,
    pub k: usize,
    pub temperature: f64,
    /// Start sequences drawn with replacement from the supervised split.
    pub n_starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConditionedConfig {
    pub n_bins: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub histogram_bin_width: f64,
    /// Top-K cut-offs besides the full candidate set.
    pub topk: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub beam_widths: Vec<usize>,
    pub ks: Vec<usize>,
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    /// The value itself.
    Zero,
    Low,
    High,
}

/// A target `anchor + offset_std * corpus_std`, resolved once the corpus exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub anchor: Anchor,
    pub offset_std: f64,
    pub direction: Direction,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            schema_version: SCHEMA_VERSION,
            seed: 42,
            output_dir: PathBuf::from("ice-out"),
            landscape: LandscapeShape::default(),
            region: RegionConfig {
                low_percentile: 1.0,
                high_percentile: 80.0,
                label_noise: 0.0,
            },
            corpus: CorpusConfig {
                m_unsup: 50_000,
                m_sup: 5_000,
                m_heldout: 5_000,
                immutable_start: 8,
                immutable_len: 4,
                reference: "A".repeat(20),
            },
            scorer: ScorerConfig { ridge_lambda: 1.0 },
            infill: InfillConfig {
                smoothing: 1.0,
                order: 1,
            },
            mask: MaskSpec::default(),
            pairs: PairsConfig {
                delta: 1.5,
                n_pairs: 100_000,
            },
            editor: EditorConfig {
                smoothing: 500.0,
                max_edits: 0,
            },
            inference: InferenceConfig {
                tag: ControlTag::Inc,
                iterations: 10,
                beam_width: 5,
                k: 5,
                temperature: 0.7,
                n_starts: 2000,
            },
            score_conditioned: ScoreConditionedConfig {
                n_bins: 10,
                iterations: 1,
            },
            evaluation: EvaluationConfig {
                histogram_bin_width: 0.25,
                topk: vec![1000, 100],
            },
            sweep: SweepConfig {
                beam_widths: vec![3, 5],
                ks: vec![3, 5],
                iterations: vec![10],
            },
            targets: vec![
                TargetSpec {
                    anchor: Anchor::High,
                    offset_std: 0.5,
                    direction: Direction::Above,
                },
                TargetSpec {
                    anchor: Anchor::High,
                    offset_std: 0.0,
                    direction: Direction::Above,
                },
                TargetSpec {
                    anchor: Anchor::High,
                    offset_std: 1.0,
                    direction: Direction::Above,
                },
            ],
        }
    }
}

impl CampaignConfig {
    /// The enumerable ℓ=4, |Σ|=3 campaign used by the oracle-equivalence checks.
    pub fn tiny() -> Self {
        let mut c = CampaignConfig::default();
        c.landscape = LandscapeShape {
            length: 4,
            alphabet_size: 3,
            n_pairs: 2,
            additive_scale: 1.0,
            epistatic_scale: 1.0,
        };
        c.corpus = CorpusConfig {
            m_unsup: 2000,
            m_sup: 200,
            m_heldout: 200,
            immutable_start: 2,
            immutable_len: 1,
            reference: "AAAA".into(),
        };
        c.pairs.n_pairs = 2000;
        c.pairs.delta = 1.5;
        c.editor.smoothing = 1.0;
        c.inference.n_starts = 200;
        c.inference.beam_width = 3;
        c.score_conditioned.n_bins = 4;
        c.evaluation.topk = vec![10];
        c.sweep = SweepConfig {
            beam_widths: vec![2],
            ks: vec![3],
            iterations: vec![3],
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(IceError::UnsupportedVersion {
                what: "config schema",
                expected: SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        let positive = [
            ("corpus.m_unsup", self.corpus.m_unsup),
            ("corpus.m_sup", self.corpus.m_sup),
            ("corpus.m_heldout", self.corpus.m_heldout),
            ("pairs.n_pairs", self.pairs.n_pairs),
            ("inference.iterations", self.inference.iterations),
            ("inference.beam_width", self.inference.beam_width),
            ("inference.k", self.inference.k),
            ("inference.n_starts", self.inference.n_starts),
            ("score_conditioned.iterations", self.score_conditioned.iterations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(IceError::param("config", format!("{name} must be positive")));
            }
        }
        if self.corpus.m_sup > self.corpus.m_unsup {
            return Err(IceError::param("config", "corpus.m_sup exceeds corpus.m_unsup"));
        }
        if !(self.pairs.delta > 0.0) || !self.pairs.delta.is_finite() {
            return Err(IceError::param("config", "pairs.delta must be positive"));
        }
        if self.score_conditioned.n_bins < 2 {
            return Err(IceError::param("config", "score_conditioned.n_bins must be at least 2"));
        }
        if !(self.inference.temperature > 0.0) {
            return Err(IceError::param("config", "inference.temperature must be positive"));
        }
        if !(self.editor.smoothing > 0.0) || !(self.infill.smoothing > 0.0) {
            return Err(IceError::param("config", "smoothing must be positive"));
        }
        if !(self.region.label_noise >= 0.0) {
            return Err(IceError::param("config", "region.label_noise must be non-negative"));
        }
        if !(self.evaluation.histogram_bin_width > 0.0) {
            return Err(IceError::param("config", "evaluation.histogram_bin_width must be positive"));
        }
        if self.targets.is_empty() {
            return Err(IceError::param("config", "targets must be non-empty"));
        }
        if self.evaluation.topk.contains(&0) {
            return Err(IceError::param("config", "evaluation.topk entries must be positive"));
        }
        if self.sweep.beam_widths.is_empty() || self.sweep.ks.is_empty() || self.sweep.iterations.is_empty() {
            return Err(IceError::param("config", "sweep grid must be non-empty"));
        }
        if self.corpus.reference.chars().count() != self.landscape.length {
            return Err(IceError::param("config", "corpus.reference length differs from landscape.length"));
        }
        self.mask.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: CampaignConfig = toml::from_str(text).map_err(|e| IceError::parse("config", e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| IceError::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IceError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical TOML form with the output directory blanked,
    /// so relocating a run keeps its hash.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let canonical = c.to_toml()?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }
}
