#![allow(dead_code)]

use std::path::Path;

use ice::campaign::{Campaign, Outcome};
use ice::config::CampaignConfig;
use ice::editor::EditorModel;
use ice::landscape::Landscape;
use ice::pairgen::ControlTag;
use ice::seq::{diff_positions, RegionMask, Sequence};

/// Oracle value summed term by term from the public weight accessors.
pub fn hand_oracle(l: &Landscape, t: &[u8]) -> f64 {
    let mut z = 0.0;
    for (i, &tok) in t.iter().enumerate() {
        z += l.additive(i, tok);
    }
    for (p, &(i, j)) in l.pairs().iter().enumerate() {
        z += l.epistatic(p, t[i], t[j]);
    }
    z
}

/// All `a^length` sequences, first position varying fastest.
pub fn all_sequences(length: usize, a: usize) -> Vec<Sequence> {
    (0..a.pow(length as u32))
        .map(|code| Sequence::new((0..length).map(|i| ((code / a.pow(i as u32)) % a) as u8).collect()))
        .collect()
}

/// Most likely candidate by scoring every sequence reachable with
/// 1..=max_edits substitutions. Ties go to the smaller (positions, tokens) key.
pub fn exhaustive_top1(editor: &EditorModel, tag: ControlTag, x: &Sequence, mask: &RegionMask) -> Sequence {
    let key = |y: &Sequence| {
        let d = diff_positions(x, y);
        let t: Vec<u8> = d.iter().map(|&i| y.tokens()[i]).collect();
        (d, t)
    };
    let mut best: Option<(f64, Sequence)> = None;
    for y in all_sequences(x.len(), editor.condition(tag).alphabet_size()) {
        let d = diff_positions(x, &y);
        if d.is_empty() || d.len() > editor.max_edits() || !d.iter().all(|&i| mask.is_mutable(i)) {
            continue;
        }
        let lp = editor.candidate_logprob(x, &y, tag).unwrap();
        let better = match &best {
            None => true,
            Some((b, by)) => lp > *b || (lp == *b && key(&y) < key(by)),
        };
        if better {
            best = Some((lp, y));
        }
    }
    best.expect("some candidate").1
}

/// Spearman by explicit rank counting and the textbook Pearson formula.
pub fn brute_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let eq = v.iter().filter(|&&b| b == a).count() as f64;
                1.0 + less + (eq - 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let (sx, sy): (f64, f64) = (rx.iter().sum(), ry.iter().sum());
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let sxx: f64 = rx.iter().map(|a| a * a).sum();
    let syy: f64 = ry.iter().map(|a| a * a).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Mean of Poisson(λ) restricted to 1..=max.
pub fn truncated_poisson_mean(lambda: f64, max: usize) -> f64 {
    let mut pmf = (-lambda).exp();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 1..=max {
        pmf *= lambda / k as f64;
        num += k as f64 * pmf;
        den += pmf;
    }
    num / den
}

pub fn run(config: CampaignConfig, out: &Path) -> (Campaign, Outcome) {
    let c = Campaign::new(config, Some(out.to_path_buf())).unwrap();
    let o = c.run_all().unwrap();
    (c, o)
}

/// Immutable-position violations over every start, step and candidate.
pub fn conservation_violations(mask: &RegionMask, outcome: &Outcome) -> (usize, usize) {
    let mut checked = 0;
    let mut bad = 0;
    for run in &outcome.runs {
        for t in &run.trajectories {
            for s in t.steps.iter().chain(t.candidates.iter().flatten()) {
                checked += 1;
                bad += !mask.conserves(t.start(), s) as usize;
            }
        }
    }
    for p in &outcome.pairs.pairs {
        checked += 1;
        bad += !mask.conserves(&p.source, &p.target) as usize;
    }
    (checked, bad)
}
