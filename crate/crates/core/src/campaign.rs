//! End-to-end campaigns: every pipeline stage, its on-disk artifacts, and
//! the reports computed from them.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.toml
//! landscape.json
//! data/{unsup.txt, sup_train.tsv, heldout.tsv, region.json}
//! models/{scorer.json, scorer_diagnostics.csv, infill.json, editor.json, score_conditioned.json}
//! pairs/{pairs.tsv, stats.json}
//! infer/<method>.{json, trajectories.tsv, candidates.tsv}
//! reports/{success_rates.csv, topk.csv, histogram.csv, plateau.csv, diversity.csv, <method>.trajectories.tsv}
//! reports/sweep.csv            (sweep only)
//! summary.json
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact;
use crate::config::{Anchor, CampaignConfig};
use crate::editor::EditorModel;
use crate::error::{IceError, Result};
use crate::evalrep;
use crate::landscape::{
    build_supervised_split, mean_std, sample_corpus, spearman, DatasetSplit, LabeledExample, Landscape, Region,
};
use crate::pairgen::{audit_pairs, forward_pairs, make_pairs, ControlTag, EditPair, PairGenConfig, PairSet};
use crate::proposer::InfillModel;
use crate::refine::{
    baseline_iter_sampling, baseline_sampling, run_scorer_free, run_scorer_guided, Direction, EvalTarget,
    GuidedParams, InferenceMode, ScoreConditionedEditor, Trajectory,
};
use crate::scorer::{fit_ridge, ScorerModel};
use crate::seed::{derive_seed, derived_stream};
use crate::seq::{Alphabet, RegionMask, Sequence};

/// The generation methods compared by a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    IceScorerGuided,
    IceScorerFree,
    Sampling,
    IterSampling,
    ScoreCond,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::IceScorerGuided,
        Method::IceScorerFree,
        Method::Sampling,
        Method::IterSampling,
        Method::ScoreCond,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::IceScorerGuided => "ice-scorer-guided",
            Method::IceScorerFree => "ice-scorer-free",
            Method::Sampling => "sampling",
            Method::IterSampling => "iter-sampling",
            Method::ScoreCond => "score-cond",
        }
    }

    /// Mode stored on this method's trajectories.
    pub fn trajectory_mode(self) -> InferenceMode {
        match self {
            Method::IceScorerGuided | Method::IterSampling => InferenceMode::ScorerGuided,
            _ => InferenceMode::ScorerFree,
        }
    }
}

impl FromStr for Method {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| IceError::parse("method", s.to_string()))
    }
}

/// Tags an error with the pipeline stage it came from, once.
pub fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        IceError::Stage { .. } => e,
        other => IceError::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

/// Training range plus the corpus statistics targets are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub low: f64,
    pub high: f64,
    pub corpus_mean: f64,
    pub corpus_std: f64,
}

impl RegionRecord {
    pub fn region(&self) -> Region {
        Region {
            low: self.low,
            high: self.high,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Data {
    pub split: DatasetSplit,
    pub heldout: Vec<LabeledExample>,
    pub record: RegionRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub emitted: usize,
    pub attempts: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
}

/// Inference settings after command-line overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferParams {
    pub tag: ControlTag,
    pub iterations: usize,
    pub beam_width: usize,
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    pub n_starts: usize,
    pub score_cond_iterations: usize,
    pub target: f64,
}

#[derive(Debug, Clone, Default)]
pub struct InferOverrides {
    pub methods: Option<Vec<Method>>,
    pub k: Option<usize>,
    pub beam_width: Option<usize>,
    pub iterations: Option<usize>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub mode: Option<InferenceMode>,
    pub params: InferParams,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub record: MethodRecord,
    pub trajectories: Vec<Trajectory>,
}

impl MethodRun {
    pub fn finals(&self) -> Vec<Sequence> {
        self.trajectories.iter().map(|t| t.last().clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub candidates: usize,
    pub success_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub landscape_checksum: String,
    pub region: RegionRecord,
    pub targets: Vec<EvalTarget>,
    pub pairs: PairStats,
    pub methods: Vec<MethodSummary>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Everything `run_all` produced, for callers that want more than the files.
pub struct Outcome {
    pub landscape: Landscape,
    pub data: Data,
    pub scorer: ScorerModel,
    pub infill: InfillModel,
    pub pairs: PairSet,
    pub editor: EditorModel,
    pub score_cond: ScoreConditionedEditor,
    pub runs: Vec<MethodRun>,
    pub summary: Summary,
}

/// A config bound to an output directory.
pub struct Campaign {
    pub config: CampaignConfig,
    pub hash: String,
    pub out: PathBuf,
    alphabet: Alphabet,
    mask: RegionMask,
    reference: Sequence,
}

fn fmt_seq_lines<'a>(alphabet: &Alphabet, seqs: impl Iterator<Item = &'a Sequence>) -> String {
    let mut s = String::new();
    for q in seqs {
        s.push_str(&alphabet.render(q));
        s.push('\n');
    }
    s
}

fn field<'a>(parts: &[&'a str], i: usize, line: usize, path: &Path) -> Result<&'a str> {
    parts
        .get(i)
        .copied()
        .ok_or_else(|| IceError::parse(format!("{}:{}", path.display(), line + 2), "missing column"))
}

fn num<T: FromStr>(text: &str, line: usize, path: &Path) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    text.parse()
        .map_err(|e: T::Err| IceError::parse(format!("{}:{}", path.display(), line + 2), e.to_string()))
}

impl Campaign {
    pub fn new(config: CampaignConfig, out: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let hash = config.hash()?;
        let alphabet = Alphabet::letters(config.landscape.alphabet_size)?;
        let length = config.landscape.length;
        let mask = if config.corpus.immutable_len == 0 {
            RegionMask::all_mutable(length)?
        } else {
            RegionMask::with_immutable_span(length, config.corpus.immutable_start, config.corpus.immutable_len)?
        };
        let reference = alphabet.parse(&config.corpus.reference)?;
        let out = out.unwrap_or_else(|| config.output_dir.clone());
        Ok(Campaign {
            config,
            hash,
            out,
            alphabet,
            mask,
            reference,
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn mask(&self) -> &RegionMask {
        &self.mask
    }

    pub fn reference(&self) -> &Sequence {
        &self.reference
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label, 0)
    }

    fn write_config(&self) -> Result<()> {
        artifact::write_plain(&self.path("config.toml"), &self.config.to_toml()?)
    }

    pub fn max_edits(&self) -> usize {
        match self.config.editor.max_edits {
            0 => self.config.mask.max_masked(&self.mask),
            m => m,
        }
    }

    // ---- landscape ----

    pub fn gen_landscape(&self) -> Result<Landscape> {
        stage("gen-landscape", (|| {
            self.write_config()?;
            let l = Landscape::generate(&self.config.landscape, self.seed("landscape"))?;
            artifact::write_json(&self.path("landscape.json"), &self.hash, &l)?;
            Ok(l)
        })())
    }

    pub fn load_landscape(&self) -> Result<Landscape> {
        let l: Landscape = artifact::read_json(&self.path("landscape.json"), &self.hash)?;
        let expected = Landscape::generate(&self.config.landscape, self.seed("landscape"))?;
        if l != expected {
            return Err(IceError::parse("landscape.json", "tables differ from the configured landscape"));
        }
        Ok(l)
    }

    // ---- data ----

    pub fn gen_data(&self, landscape: &Landscape) -> Result<Data> {
        stage("gen-data", self.gen_data_inner(landscape))
    }

    fn gen_data_inner(&self, landscape: &Landscape) -> Result<Data> {
        let c = &self.config;
        let corpus = sample_corpus(landscape, c.corpus.m_unsup, self.seed("corpus"), &self.mask, &self.reference)?;
        let scores: Vec<f64> = corpus.iter().map(|s| landscape.oracle_score(s)).collect::<Result<_>>()?;
        let (corpus_mean, corpus_std) = mean_std(&scores);
        let region = Region::from_percentiles(&scores, c.region.low_percentile, c.region.high_percentile)?;
        let mut split = build_supervised_split(&corpus, landscape, region, c.corpus.m_sup)?;
        if c.region.label_noise > 0.0 {
            let noise = Normal::new(0.0, c.region.label_noise).map_err(|e| IceError::param("label_noise", e.to_string()))?;
            let mut rng = derived_stream(c.seed, "label-noise", 0);
            for ex in &mut split.sup_train {
                ex.z += noise.sample(&mut rng);
            }
        }
        let held = sample_corpus(landscape, c.corpus.m_heldout, self.seed("heldout"), &self.mask, &self.reference)?;
        let heldout = held
            .into_iter()
            .map(|seq| landscape.oracle_score(&seq).map(|z| LabeledExample { seq, z }))
            .collect::<Result<Vec<_>>>()?;
        let data = Data {
            split,
            heldout,
            record: RegionRecord {
                low: region.low,
                high: region.high,
                corpus_mean,
                corpus_std,
            },
        };
        self.write_data(&data)?;
        Ok(data)
    }

    fn labeled_tsv(&self, set: &[LabeledExample]) -> String {
        let mut s = String::from("sequence\tscore\n");
        for ex in set {
            let _ = writeln!(s, "{}\t{}", self.alphabet.render(&ex.seq), ex.z);
        }
        s
    }

    fn write_data(&self, data: &Data) -> Result<()> {
        artifact::write_text(
            &self.path("data/unsup.txt"),
            &self.hash,
            &fmt_seq_lines(&self.alphabet, data.split.unsup.iter()),
        )?;
        artifact::write_text(&self.path("data/sup_train.tsv"), &self.hash, &self.labeled_tsv(&data.split.sup_train))?;
        artifact::write_text(&self.path("data/heldout.tsv"), &self.hash, &self.labeled_tsv(&data.heldout))?;
        artifact::write_json(&self.path("data/region.json"), &self.hash, &data.record)
    }

    fn read_labeled(&self, rel: &str) -> Result<Vec<LabeledExample>> {
        let path = self.path(rel);
        let body = artifact::read_text(&path, &self.hash)?;
        body.lines()
            .skip(1)
            .enumerate()
            .map(|(i, line)| {
                let parts: Vec<&str> = line.split('\t').collect();
                Ok(LabeledExample {
                    seq: self.alphabet.parse(field(&parts, 0, i, &path)?)?,
                    z: num(field(&parts, 1, i, &path)?, i, &path)?,
                })
            })
            .collect()
    }

    pub fn load_data(&self) -> Result<Data> {
        let unsup_body = artifact::read_text(&self.path("data/unsup.txt"), &self.hash)?;
        let unsup = unsup_body
            .lines()
            .map(|l| self.alphabet.parse(l))
            .collect::<Result<Vec<_>>>()?;
        let record: RegionRecord = artifact::read_json(&self.path("data/region.json"), &self.hash)?;
        Ok(Data {
            split: DatasetSplit {
                unsup,
                sup_train: self.read_labeled("data/sup_train.tsv")?,
                region: record.region(),
            },
            heldout: self.read_labeled("data/heldout.tsv")?,
            record,
        })
    }

    // ---- scorer ----

    pub fn train_scorer(&self, data: &Data) -> Result<ScorerModel> {
        stage("train-scorer", (|| {
            let c = &self.config;
            let scorer = fit_ridge(&data.split.sup_train, c.scorer.ridge_lambda, c.landscape.alphabet_size)?;
            artifact::write_json_str(&self.path("models/scorer.json"), &self.hash, &scorer.to_json()?)?;
            artifact::write_text(
                &self.path("models/scorer_diagnostics.csv"),
                &self.hash,
                &scorer_diagnostics(&scorer, data)?,
            )?;
            Ok(scorer)
        })())
    }

    pub fn load_scorer(&self) -> Result<ScorerModel> {
        ScorerModel::from_json(&artifact::read_json_str(&self.path("models/scorer.json"), &self.hash)?)
    }

    // ---- pairs ----

    pub fn gen_pairs(&self, data: &Data, scorer: &ScorerModel) -> Result<(InfillModel, PairSet)> {
        stage("gen-pairs", (|| {
            let c = &self.config;
            let infill = InfillModel::fit(&data.split.unsup, c.landscape.alphabet_size, c.infill.smoothing, c.infill.order)?;
            artifact::write_json_str(&self.path("models/infill.json"), &self.hash, &infill.to_json()?)?;
            let cfg = PairGenConfig {
                infill: &infill,
                spec: &c.mask,
                mask: &self.mask,
                scorer,
                delta: c.pairs.delta,
                n_pairs: c.pairs.n_pairs,
                seed: self.seed("pairgen"),
            };
            let set = make_pairs(&data.split, &cfg)?;
            audit_pairs(&set.pairs, scorer, c.pairs.delta)?;
            let mut body = String::from("tag\tsource\ttarget\tsource_score\ttarget_score\n");
            for p in &set.pairs {
                let _ = writeln!(
                    body,
                    "{}\t{}\t{}\t{}\t{}",
                    p.tag,
                    self.alphabet.render(&p.source),
                    self.alphabet.render(&p.target),
                    p.source_score,
                    p.target_score
                );
            }
            artifact::write_text(&self.path("pairs/pairs.tsv"), &self.hash, &body)?;
            artifact::write_json(&self.path("pairs/stats.json"), &self.hash, &pair_stats(&set))?;
            Ok((infill, set))
        })())
    }

    pub fn load_infill(&self) -> Result<InfillModel> {
        InfillModel::from_json(&artifact::read_json_str(&self.path("models/infill.json"), &self.hash)?)
    }

    pub fn load_pairs(&self) -> Result<(Vec<EditPair>, PairStats)> {
        let path = self.path("pairs/pairs.tsv");
        let body = artifact::read_text(&path, &self.hash)?;
        let pairs = body
            .lines()
            .skip(1)
            .enumerate()
            .map(|(i, line)| {
                let parts: Vec<&str> = line.split('\t').collect();
                Ok(EditPair {
                    tag: field(&parts, 0, i, &path)?.parse()?,
                    source: self.alphabet.parse(field(&parts, 1, i, &path)?)?,
                    target: self.alphabet.parse(field(&parts, 2, i, &path)?)?,
                    source_score: num(field(&parts, 3, i, &path)?, i, &path)?,
                    target_score: num(field(&parts, 4, i, &path)?, i, &path)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = artifact::read_json(&self.path("pairs/stats.json"), &self.hash)?;
        Ok((pairs, stats))
    }

    // ---- editor ----

    /// The ICE editor on all pairs, and the score-conditioned baseline on the
    /// original-to-perturbed half binned over the training range.
    pub fn train_editor(&self, pairs: &[EditPair], record: &RegionRecord) -> Result<(EditorModel, ScoreConditionedEditor)> {
        stage("train-editor", (|| {
            let c = &self.config;
            let a = c.landscape.alphabet_size;
            let editor = EditorModel::fit(pairs, c.editor.smoothing, self.max_edits(), &self.mask, a)?;
            artifact::write_json_str(&self.path("models/editor.json"), &self.hash, &editor.to_json()?)?;
            let forward = forward_pairs(pairs)?;
            let sc = ScoreConditionedEditor::fit(
                &forward,
                c.score_conditioned.n_bins,
                record.low,
                record.high,
                c.editor.smoothing,
                self.max_edits(),
                &self.mask,
                a,
            )?;
            artifact::write_json_str(&self.path("models/score_conditioned.json"), &self.hash, &sc.to_json()?)?;
            Ok((editor, sc))
        })())
    }

    pub fn load_editor(&self) -> Result<EditorModel> {
        EditorModel::from_json(&artifact::read_json_str(&self.path("models/editor.json"), &self.hash)?)
    }

    pub fn load_score_cond(&self) -> Result<ScoreConditionedEditor> {
        ScoreConditionedEditor::from_json(&artifact::read_json_str(
            &self.path("models/score_conditioned.json"),
            &self.hash,
        )?)
    }

    // ---- inference ----

    /// Targets resolved against the corpus statistics; the first one is primary.
    pub fn targets(&self, record: &RegionRecord) -> Vec<EvalTarget> {
        self.config
            .targets
            .iter()
            .map(|t| {
                let anchor = match t.anchor {
                    Anchor::Zero => 0.0,
                    Anchor::Low => record.low,
                    Anchor::High => record.high,
                };
                EvalTarget::new(anchor + t.offset_std * record.corpus_std, t.direction, record.low, record.high)
            })
            .collect()
    }

    pub fn infer_params(&self, record: &RegionRecord, o: &InferOverrides) -> InferParams {
        let i = &self.config.inference;
        InferParams {
            tag: i.tag,
            iterations: o.iterations.unwrap_or(i.iterations),
            beam_width: o.beam_width.unwrap_or(i.beam_width),
            k: o.k.unwrap_or(i.k),
            temperature: o.temperature.unwrap_or(i.temperature),
            seed: o.seed.unwrap_or_else(|| self.seed("infer")),
            n_starts: i.n_starts,
            score_cond_iterations: self.config.score_conditioned.iterations,
            target: self.targets(record)[0].value,
        }
    }

    /// Start sequences, drawn with replacement from the supervised split.
    pub fn starts(&self, data: &Data) -> Vec<Sequence> {
        let mut rng = derived_stream(self.config.seed, "starts", 0);
        let sup = &data.split.sup_train;
        (0..self.config.inference.n_starts)
            .map(|_| sup[rng.random_range(0..sup.len())].seq.clone())
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn run_method(
        &self,
        method: Method,
        params: &InferParams,
        starts: &[Sequence],
        scorer: &ScorerModel,
        infill: &InfillModel,
        editor: &EditorModel,
        score_cond: &ScoreConditionedEditor,
    ) -> Result<MethodRun> {
        let p = *params;
        let guided = GuidedParams {
            iterations: p.iterations,
            k: p.k,
            temperature: p.temperature,
            seed: p.seed,
        };
        let spec = &self.config.mask;
        let mask = &self.mask;
        let mut trajectories: Vec<Trajectory> = starts
            .par_iter()
            .enumerate()
            .map(|(i, x)| -> Result<Trajectory> {
                let label = format!("{}:{i}", method.name());
                match method {
                    Method::IceScorerGuided => run_scorer_guided(editor, scorer, x, p.tag, &guided, &label),
                    Method::IceScorerFree => run_scorer_free(editor, x, p.tag, p.iterations, p.beam_width),
                    Method::IterSampling => {
                        baseline_iter_sampling(infill, spec, mask, scorer, x, p.tag, &guided, &label)
                    }
                    Method::ScoreCond => score_cond.run(x, p.target, p.score_cond_iterations, p.beam_width),
                    Method::Sampling => {
                        let mut rng = derived_stream(p.seed, method.name(), i as u64);
                        let y = baseline_sampling(infill, spec, mask, x, &mut rng, 1)?;
                        Ok(Trajectory {
                            tag: p.tag,
                            mode: InferenceMode::ScorerFree,
                            steps: vec![x.clone(), y[0].clone()],
                            scores: Vec::new(),
                            candidates: vec![y],
                        })
                    }
                }
            })
            .collect::<Result<_>>()?;
        for t in &mut trajectories {
            if t.scores.is_empty() {
                t.annotate(scorer)?;
            }
        }
        let mode = match method {
            Method::IceScorerGuided => Some(InferenceMode::ScorerGuided),
            Method::IceScorerFree => Some(InferenceMode::ScorerFree),
            _ => None,
        };
        Ok(MethodRun {
            record: MethodRecord {
                method,
                mode,
                params: p,
            },
            trajectories,
        })
    }

    fn write_run(&self, run: &MethodRun) -> Result<()> {
        let name = run.record.method.name();
        artifact::write_json(&self.path(&format!("infer/{name}.json")), &self.hash, &run.record)?;
        artifact::write_text(
            &self.path(&format!("infer/{name}.trajectories.tsv")),
            &self.hash,
            &self.trajectory_tsv(&run.trajectories, None)?,
        )?;
        let mut cands = String::from("start_id\tk\trank\tsequence\n");
        for (i, t) in run.trajectories.iter().enumerate() {
            for (k, step) in t.candidates.iter().enumerate() {
                for (r, c) in step.iter().enumerate() {
                    let _ = writeln!(cands, "{i}\t{}\t{r}\t{}", k + 1, self.alphabet.render(c));
                }
            }
        }
        artifact::write_text(&self.path(&format!("infer/{name}.candidates.tsv")), &self.hash, &cands)
    }

    /// `start_id k sequence f_s oracle_z`, the oracle column left empty
    /// without a landscape.
    pub fn trajectory_tsv(&self, trajectories: &[Trajectory], landscape: Option<&Landscape>) -> Result<String> {
        let mut s = String::from("start_id\tk\tsequence\tf_s\toracle_z\n");
        for (i, t) in trajectories.iter().enumerate() {
            for (k, step) in t.steps.iter().enumerate() {
                let oracle = match landscape {
                    Some(l) => l.oracle_score(step)?.to_string(),
                    None => String::new(),
                };
                let _ = writeln!(s, "{i}\t{k}\t{}\t{}\t{oracle}", self.alphabet.render(step), t.scores[k]);
            }
        }
        Ok(s)
    }

    pub fn load_run(&self, method: Method) -> Result<MethodRun> {
        let name = method.name();
        let record: MethodRecord = artifact::read_json(&self.path(&format!("infer/{name}.json")), &self.hash)?;
        let tpath = self.path(&format!("infer/{name}.trajectories.tsv"));
        let body = artifact::read_text(&tpath, &self.hash)?;
        let mut trajectories: Vec<Trajectory> = Vec::new();
        for (i, line) in body.lines().skip(1).enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let id: usize = num(field(&parts, 0, i, &tpath)?, i, &tpath)?;
            let k: usize = num(field(&parts, 1, i, &tpath)?, i, &tpath)?;
            let seq = self.alphabet.parse(field(&parts, 2, i, &tpath)?)?;
            let fs: f64 = num(field(&parts, 3, i, &tpath)?, i, &tpath)?;
            if id == trajectories.len() && k == 0 {
                trajectories.push(Trajectory {
                    tag: record.params.tag,
                    mode: method.trajectory_mode(),
                    steps: Vec::new(),
                    scores: Vec::new(),
                    candidates: Vec::new(),
                });
            }
            let n = trajectories.len();
            let t = match trajectories.last_mut() {
                Some(t) if id + 1 == n && k == t.steps.len() => t,
                _ => return Err(IceError::parse(format!("{}:{}", tpath.display(), i + 2), "rows out of order")),
            };
            t.steps.push(seq);
            t.scores.push(fs);
            if k > 0 {
                t.candidates.push(Vec::new());
            }
        }
        let cpath = self.path(&format!("infer/{name}.candidates.tsv"));
        let body = artifact::read_text(&cpath, &self.hash)?;
        for (i, line) in body.lines().skip(1).enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let id: usize = num(field(&parts, 0, i, &cpath)?, i, &cpath)?;
            let k: usize = num(field(&parts, 1, i, &cpath)?, i, &cpath)?;
            let seq = self.alphabet.parse(field(&parts, 3, i, &cpath)?)?;
            let slot = trajectories
                .get_mut(id)
                .and_then(|t| k.checked_sub(1).and_then(|k| t.candidates.get_mut(k)))
                .ok_or_else(|| IceError::parse(format!("{}:{}", cpath.display(), i + 2), "unknown step"))?;
            slot.push(seq);
        }
        Ok(MethodRun { record, trajectories })
    }

    /// Runs the selected methods (all by default) and persists each.
    #[allow(clippy::too_many_arguments)]
    pub fn infer(
        &self,
        data: &Data,
        scorer: &ScorerModel,
        infill: &InfillModel,
        editor: &EditorModel,
        score_cond: &ScoreConditionedEditor,
        overrides: &InferOverrides,
    ) -> Result<Vec<MethodRun>> {
        stage("infer", (|| {
            let params = self.infer_params(&data.record, overrides);
            let starts = self.starts(data);
            let methods = overrides.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
            let mut runs = Vec::with_capacity(methods.len());
            for m in methods {
                let run = self.run_method(m, &params, &starts, scorer, infill, editor, score_cond)?;
                self.write_run(&run)?;
                runs.push(run);
            }
            Ok(runs)
        })())
    }

    // ---- evaluation ----

    /// Recomputes every report from the persisted artifacts.
    pub fn evaluate(&self) -> Result<Summary> {
        stage("evaluate", self.evaluate_inner())
    }

    fn evaluate_inner(&self) -> Result<Summary> {
        let landscape = self.load_landscape()?;
        let record: RegionRecord = artifact::read_json(&self.path("data/region.json"), &self.hash)?;
        let scorer = self.load_scorer()?;
        let (_, pair_stats) = self.load_pairs()?;
        let targets = self.targets(&record);
        let mut runs = Vec::new();
        for m in Method::ALL {
            if self.path(&format!("infer/{}.json", m.name())).exists() {
                runs.push(self.load_run(m)?);
            }
        }
        if runs.is_empty() {
            return Err(IceError::param("evaluate", "no inference results found"));
        }
        let reports = build_reports(self, &landscape, &scorer, &targets, &runs)?;
        for (rel, body) in &reports.files {
            artifact::write_text(&self.path(rel), &self.hash, body)?;
        }
        let summary = Summary {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            landscape_checksum: landscape.checksum(),
            region: record,
            targets,
            pairs: pair_stats,
            methods: reports.methods,
            artifacts: self.list_artifacts()?,
        };
        artifact::write_json(&self.path("summary.json"), &self.hash, &summary)?;
        Ok(summary)
    }

    fn list_artifacts(&self) -> Result<Vec<ArtifactEntry>> {
        let mut files = Vec::new();
        collect_files(&self.out, &self.out, &mut files)?;
        files.sort();
        files
            .into_iter()
            .filter(|rel| rel != "summary.json")
            .map(|rel| {
                let path = self.path(&rel);
                let bytes = fs::read(&path).map_err(|e| IceError::io(&path, e))?;
                Ok(ArtifactEntry {
                    path: rel,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect()
    }

    // ---- sweep ----

    /// Success on the primary target for every grid cell. Each cell reuses
    /// the campaign's inference seed, so a cell equals a direct run with the
    /// same settings.
    pub fn sweep(&self) -> Result<String> {
        stage("sweep", (|| {
            let data = self.load_data()?;
            let landscape = self.load_landscape()?;
            let scorer = self.load_scorer()?;
            let infill = self.load_infill()?;
            let editor = self.load_editor()?;
            let sc = self.load_score_cond()?;
            let target = self.targets(&data.record)[0];
            let starts = self.starts(&data);
            let g = &self.config.sweep;
            let mut body = String::from("beam_width,k,iterations,ice_scorer_free,ice_scorer_guided\n");
            for &b in &g.beam_widths {
                for &k in &g.ks {
                    for &it in &g.iterations {
                        let o = InferOverrides {
                            beam_width: Some(b),
                            k: Some(k),
                            iterations: Some(it),
                            ..Default::default()
                        };
                        let p = self.infer_params(&data.record, &o);
                        let mut rates = Vec::new();
                        for m in [Method::IceScorerFree, Method::IceScorerGuided] {
                            let run = self.run_method(m, &p, &starts, &scorer, &infill, &editor, &sc)?;
                            rates.push(evalrep::success_rates(&run.finals(), &landscape, &[target])?[0]);
                        }
                        let _ = writeln!(body, "{b},{k},{it},{},{}", rates[0], rates[1]);
                    }
                }
            }
            artifact::write_text(&self.path("reports/sweep.csv"), &self.hash, &body)?;
            Ok(body)
        })())
    }

    /// Every stage in order, then `evaluate` on the persisted artifacts.
    pub fn run_all(&self) -> Result<Outcome> {
        let landscape = self.gen_landscape()?;
        let data = self.gen_data(&landscape)?;
        let scorer = self.train_scorer(&data)?;
        let (infill, pairs) = self.gen_pairs(&data, &scorer)?;
        let (editor, score_cond) = self.train_editor(&pairs.pairs, &data.record)?;
        let runs = self.infer(&data, &scorer, &infill, &editor, &score_cond, &InferOverrides::default())?;
        let summary = self.evaluate()?;
        Ok(Outcome {
            landscape,
            data,
            scorer,
            infill,
            pairs,
            editor,
            score_cond,
            runs,
            summary,
        })
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| IceError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| IceError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

fn pair_stats(set: &PairSet) -> PairStats {
    PairStats {
        emitted: set.pairs.len(),
        attempts: set.attempts,
        accepted: set.accepted,
        acceptance_rate: set.acceptance_rate(),
    }
}

fn spearman_or_nan(model: &ScorerModel, set: &[&LabeledExample]) -> Result<f64> {
    if set.len() < 2 {
        return Ok(f64::NAN);
    }
    let pred = set.iter().map(|e| model.predict(&e.seq)).collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = set.iter().map(|e| e.z).collect();
    match spearman(&pred, &truth) {
        Ok(r) => Ok(r),
        Err(IceError::UndefinedCorrelation) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// Spearman correlation of the scorer on the training set and on held-out
/// sequences inside and outside the training range.
pub fn scorer_diagnostics(scorer: &ScorerModel, data: &Data) -> Result<String> {
    let region = data.record.region();
    let train: Vec<&LabeledExample> = data.split.sup_train.iter().collect();
    let all: Vec<&LabeledExample> = data.heldout.iter().collect();
    let inside: Vec<&LabeledExample> = data.heldout.iter().filter(|e| region.contains(e.z)).collect();
    let outside: Vec<&LabeledExample> = data.heldout.iter().filter(|e| !region.contains(e.z)).collect();
    let mut s = String::from("subset,n,spearman\n");
    for (name, set) in [
        ("train", &train),
        ("heldout", &all),
        ("heldout_in_region", &inside),
        ("heldout_outside_region", &outside),
    ] {
        let _ = writeln!(s, "{name},{},{}", set.len(), spearman_or_nan(scorer, set)?);
    }
    Ok(s)
}

struct Reports {
    files: Vec<(String, String)>,
    methods: Vec<MethodSummary>,
}

fn direction_of(tag: ControlTag) -> Direction {
    match tag {
        ControlTag::Inc => Direction::Above,
        ControlTag::Dec => Direction::Below,
    }
}

fn build_reports(
    campaign: &Campaign,
    landscape: &Landscape,
    scorer: &ScorerModel,
    targets: &[EvalTarget],
    runs: &[MethodRun],
) -> Result<Reports> {
    let eval = &campaign.config.evaluation;
    let per_method: Vec<_> = runs
        .par_iter()
        .map(|run| -> Result<_> {
            let finals = run.finals();
            let rates = evalrep::success_rates(&finals, landscape, targets)?;
            let dir = direction_of(run.record.params.tag);
            let mut ks: Vec<usize> = vec![finals.len()];
            ks.extend(eval.topk.iter().copied().filter(|&k| k <= finals.len()));
            let topk = evalrep::topk_average(&finals, landscape, &ks, dir)?;
            let chosen = evalrep::iteration_histogram(&run.trajectories, landscape, eval.histogram_bin_width, false)?;
            let with_cands = evalrep::iteration_histogram(&run.trajectories, landscape, eval.histogram_bin_width, true)?;
            let plateau = evalrep::plateau_table(&run.trajectories, scorer)?;
            let delta = evalrep::mean_delta_by_iteration(&run.trajectories, landscape)?;
            let paired: Vec<(&Sequence, &Sequence)> =
                run.trajectories.iter().map(|t| (t.last(), t.start())).collect();
            let diversity = evalrep::diversity_profile_paired(&paired, landscape, &targets[0])?;
            let traj = campaign.trajectory_tsv(&run.trajectories, Some(landscape))?;
            Ok((rates, ks, topk, chosen, with_cands, plateau, delta, diversity, traj, finals.len()))
        })
        .collect::<Result<_>>()?;

    let mut success = String::from("method,target_index,target_value,direction,region,success_rate,candidates\n");
    let mut topk = String::from("method,k,average\n");
    let mut hist = String::from("method,population,iteration,bin_low,bin_high,count\n");
    let mut plateau = String::from("method,iteration,mean_f_s,mean_oracle_delta\n");
    let mut diversity = String::from("method,distance,fraction,success_rate\n");
    let mut files = Vec::new();
    let mut methods = Vec::new();
    for (run, (rates, ks, tk, chosen, with_cands, pl, delta, div, traj, n)) in runs.iter().zip(per_method) {
        let name = run.record.method.name();
        for (i, (t, r)) in targets.iter().zip(&rates).enumerate() {
            let dir = match t.direction {
                Direction::Above => "above",
                Direction::Below => "below",
            };
            let region = match t.region {
                crate::refine::TargetRegion::Train => "train",
                crate::refine::TargetRegion::Extrapolation => "extrapolation",
            };
            let _ = writeln!(success, "{name},{i},{},{dir},{region},{r},{n}", t.value);
        }
        for (i, (k, avg)) in ks.iter().zip(&tk).enumerate() {
            let label = if i == 0 { "all".to_string() } else { k.to_string() };
            let _ = writeln!(topk, "{name},{label},{avg}");
        }
        for (population, hs) in [("chosen", &chosen), ("with_candidates", &with_cands)] {
            for (k, h) in hs.iter().enumerate() {
                for (&b, &c) in &h.counts {
                    let _ = writeln!(hist, "{name},{population},{k},{},{},{c}", h.bin_low(b), h.bin_low(b + 1));
                }
            }
        }
        for (k, (f, d)) in pl.iter().zip(&delta).enumerate() {
            let _ = writeln!(plateau, "{name},{k},{f},{d}");
        }
        for b in &div {
            let _ = writeln!(diversity, "{name},{},{},{}", b.distance, b.fraction, b.success_rate);
        }
        files.push((format!("reports/{name}.trajectories.tsv"), traj));
        methods.push(MethodSummary {
            method: run.record.method,
            candidates: n,
            success_rates: rates,
        });
    }
    files.push(("reports/success_rates.csv".into(), success));
    files.push(("reports/topk.csv".into(), topk));
    files.push(("reports/histogram.csv".into(), hist));
    files.push(("reports/plateau.csv".into(), plateau));
    files.push(("reports/diversity.csv".into(), diversity));
    Ok(Reports { files, methods })
}
