//! Acceptance suite. Prints one line per criterion and exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ice::campaign::{Campaign, Method, MethodRun, Outcome};
use ice::config::CampaignConfig;
use ice::evalrep;
use ice::landscape::{spearman, LabeledExample};
use ice::pairgen::{audit_pairs, ControlTag};
use ice::proposer::{sample_span_length, MaskSpec};
use ice::scorer::{fit_ridge, normal_equation_residual};
use ice::seq::Sequence;

use common::*;

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:>2} [{}] {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, detail));
    }

    fn fail(&mut self, n: usize, err: impl std::fmt::Display) {
        self.record(n, false, format!("error: {err}"));
    }
}

fn method_run(o: &Outcome, m: Method) -> &MethodRun {
    o.runs.iter().find(|r| r.record.method == m).unwrap()
}

fn rate(o: &Outcome, m: Method) -> f64 {
    o.summary.methods.iter().find(|s| s.method == m).unwrap().success_rates[0]
}

fn timed_run(config: CampaignConfig, out: &Path) -> (Campaign, Outcome, Duration) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let (c, o) = pool.install(|| run(config, out));
    (c, o, start.elapsed())
}

fn criterion_1(r: &mut Report, o: &Outcome, elapsed: Duration) {
    let (g, i, s) = (
        rate(o, Method::IceScorerGuided),
        rate(o, Method::IterSampling),
        rate(o, Method::Sampling),
    );
    let counts: Vec<usize> = [Method::IceScorerGuided, Method::IterSampling, Method::Sampling]
        .iter()
        .map(|&m| method_run(o, m).trajectories.len())
        .collect();
    let pass = g - i >= 0.02 && i - s >= 0.02 && counts.iter().all(|&n| n == 2000) && elapsed.as_secs_f64() < 300.0;
    r.record(
        1,
        pass,
        format!(
            "guided {g:.4} > iter-sampling {i:.4} > sampling {s:.4} (gaps {:.4}, {:.4}; need 0.02), {} candidates each, {:.1} s single-threaded (limit 300 s)",
            g - i,
            i - s,
            counts[0],
            elapsed.as_secs_f64()
        ),
    );
}

fn criterion_2(r: &mut Report, o: &Outcome) {
    let (f, s) = (rate(o, Method::IceScorerFree), rate(o, Method::Sampling));
    r.record(2, f >= 2.0 * s, format!("scorer-free {f:.4} vs 2 x sampling {:.4}", 2.0 * s));
}

fn criterion_3(r: &mut Report, o: &Outcome) {
    let run = method_run(o, Method::IceScorerFree);
    match evalrep::mean_delta_by_iteration(&run.trajectories, &o.landscape) {
        Ok(d) if d.len() > 10 => {
            let need = 0.5 * o.data.record.corpus_std;
            let shift = d[10] - d[1];
            r.record(
                3,
                shift >= need,
                format!(
                    "scorer-free mean delta k=1 {:.4}, k=10 {:.4}, shift {shift:.4} (need {need:.4})",
                    d[1], d[10]
                ),
            );
        }
        Ok(d) => r.fail(3, format!("only {} iterations", d.len() - 1)),
        Err(e) => r.fail(3, e),
    }
}

fn criterion_4(r: &mut Report, o: &Outcome) {
    let run = method_run(o, Method::IceScorerGuided);
    let row = match evalrep::plateau_table(&run.trajectories, &o.scorer) {
        Ok(row) if row.len() > 10 => row,
        Ok(row) => return r.fail(4, format!("only {} iterations", row.len() - 1)),
        Err(e) => return r.fail(4, e),
    };
    match evalrep::relative_change(&row, 8, 10) {
        Ok(rel) => r.record(
            4,
            rel < 0.05,
            format!(
                "guided mean f_s k=0 {:.4}, k=8 {:.4}, k=10 {:.4}; change 8->10 is {:.2}% of 0->10 (limit 5%)",
                row[0],
                row[8],
                row[10],
                100.0 * rel
            ),
        ),
        Err(e) => r.fail(4, e),
    }
}

fn criterion_5(r: &mut Report, c: &Campaign) {
    let (pairs, stats) = match c.load_pairs() {
        Ok(p) => p,
        Err(e) => return r.fail(5, e),
    };
    let scorer = match c.load_scorer() {
        Ok(s) => s,
        Err(e) => return r.fail(5, e),
    };
    let inc = pairs.iter().filter(|p| p.tag == ControlTag::Inc).count();
    let dec = pairs.len() - inc;
    match audit_pairs(&pairs, &scorer, c.config.pairs.delta) {
        Ok(()) => r.record(
            5,
            inc == dec && stats.emitted == pairs.len(),
            format!("{} persisted pairs audited, inc {inc}, dec {dec}", pairs.len()),
        ),
        Err(e) => r.fail(5, e),
    }
}

fn criterion_6(r: &mut Report, c: &Campaign, o: &Outcome) {
    let (checked, bad) = conservation_violations(c.mask(), o);
    r.record(6, bad == 0 && checked > 0, format!("{bad} violations over {checked} sequences"));
}

fn criterion_7(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let (c, o) = run(CampaignConfig::tiny(), dir.path());
    let l = &o.landscape;

    let space = all_sequences(4, 3);
    let table: Vec<f64> = space.iter().map(|s| hand_oracle(l, s.tokens())).collect();
    let index = |s: &Sequence| s.tokens().iter().rev().fold(0usize, |acc, &t| acc * 3 + t as usize);
    let mut rate_checks = 0;
    let mut rate_bad = 0;
    for (ti, t) in c.targets(&o.data.record).iter().enumerate() {
        let hits = table.iter().filter(|&&z| t.direction.beyond(z, t.value)).count();
        rate_checks += 1;
        rate_bad += (evalrep::success_rates(&space, l, &[*t]).unwrap()[0] != hits as f64 / 81.0) as usize;
        for run in &o.runs {
            let finals = run.finals();
            let hits = finals.iter().filter(|s| t.direction.beyond(table[index(s)], t.value)).count();
            let got = o.summary.methods.iter().find(|m| m.method == run.record.method).unwrap().success_rates[ti];
            rate_checks += 1;
            rate_bad += (got != hits as f64 / finals.len() as f64) as usize;
        }
    }

    let mut steps = 0;
    let mut beam_bad = 0;
    for method in [Method::IceScorerFree, Method::IceScorerGuided] {
        for t in &method_run(&o, method).trajectories {
            for x in &t.steps[..t.steps.len() - 1] {
                for tag in [ControlTag::Inc, ControlTag::Dec] {
                    let beam = o.editor.beam_step(x, tag, 1).unwrap();
                    steps += 1;
                    beam_bad += (beam[0].seq != exhaustive_top1(&o.editor, tag, x, c.mask())) as usize;
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    r.record(
        7,
        rate_bad == 0 && beam_bad == 0 && steps > 0 && elapsed < 10.0,
        format!(
            "{rate_bad}/{rate_checks} rate mismatches, {beam_bad}/{steps} beam argmax mismatches, {elapsed:.2} s (limit 10 s)"
        ),
    );
}

fn criterion_8(r: &mut Report, o: &Outcome) {
    let mut notes = Vec::new();
    let mut pass = true;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut fixtures: Vec<(Vec<LabeledExample>, f64)> = vec![(o.data.split.sup_train.clone(), o.scorer.ridge_lambda())];
    for (n, lambda) in [(30, 1e-3), (200, 1.0), (500, 50.0)] {
        let ex = (0..n)
            .map(|_| LabeledExample {
                seq: Sequence::new((0..6).map(|_| rng.random_range(0..4u8)).collect()),
                z: rng.random_range(-3.0..3.0),
            })
            .collect();
        fixtures.push((ex, lambda));
    }
    let mut worst: f64 = 0.0;
    for (k, (ex, lambda)) in fixtures.iter().enumerate() {
        let a = if k == 0 { o.scorer.layout().1 } else { 4 };
        let m = if k == 0 { o.scorer.clone() } else { fit_ridge(ex, *lambda, a).unwrap() };
        let scale = ex.iter().map(|e| e.z.abs()).fold(1.0, f64::max);
        let res = normal_equation_residual(&m, ex) / scale;
        worst = worst.max(res);
        pass &= res <= 1e-8;
    }
    notes.push(format!("ridge scaled residual max {worst:.2e} over {} fits", fixtures.len()));

    let mut spearman_fixtures: Vec<(Vec<f64>, Vec<f64>)> = vec![
        (vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![5.0, 6.0, 7.0, 8.0, 7.0]),
        (vec![1.0, 1.0, 2.0, 3.0, 3.0, 3.0], vec![0.5, 0.2, 0.2, 0.9, 0.1, 0.4]),
        (vec![4.0, 3.0, 2.0, 1.0], vec![1.0, 2.0, 3.0, 4.0]),
    ];
    for n in [10, 57, 300] {
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + rng.random_range(0.0..6.0)).collect();
        spearman_fixtures.push((xs, ys));
    }
    let mut sp_worst: f64 = 0.0;
    for (xs, ys) in &spearman_fixtures {
        let d = (spearman(xs, ys).unwrap() - brute_spearman(xs, ys)).abs();
        sp_worst = sp_worst.max(d);
        pass &= d <= 1e-12;
    }
    notes.push(format!("spearman max deviation {sp_worst:.1e} over {} fixtures", spearman_fixtures.len()));

    let mut presets = vec![("default".to_string(), MaskSpec::default())];
    for name in ["small", "medium", "large", "super-large"] {
        presets.push((name.to_string(), MaskSpec::preset(name).unwrap()));
    }
    let mut pois = Vec::new();
    for (name, spec) in &presets {
        let draws = 10_000;
        let mean = (0..draws)
            .map(|_| sample_span_length(spec.span_lambda, spec.span_max, &mut rng) as f64)
            .sum::<f64>()
            / draws as f64;
        let want = truncated_poisson_mean(spec.span_lambda, spec.span_max);
        let rel = (mean - want).abs() / want;
        pass &= rel < 0.02;
        pois.push(format!("{name} {mean:.3}/{want:.3}"));
    }
    notes.push(format!("span length means {}", pois.join(", ")));
    r.record(8, pass, notes.join("; "));
}

fn all_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn criterion_9(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "4")] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_ice"))
            .args(["--out", out.to_str().unwrap(), "--workers", workers, "run-all"])
            .output()
            .unwrap();
        if !status.status.success() {
            return r.fail(9, String::from_utf8_lossy(&status.stderr).trim().to_string());
        }
        outputs.push(all_files(&out));
    }
    let csv = outputs[0].keys().filter(|k| k.ends_with(".csv")).count();
    let differing: Vec<&String> = outputs[0]
        .iter()
        .filter(|(k, v)| outputs[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let same_set = outputs[0].len() == outputs[1].len();
    r.record(
        9,
        differing.is_empty() && same_set && csv > 0,
        format!(
            "run-all with 1 and 4 workers: {} files ({csv} csv) compared, {} differ",
            outputs[0].len(),
            differing.len()
        ),
    );
}

fn criterion_10(r: &mut Report, o: &Outcome) {
    let (sc, g) = (rate(o, Method::ScoreCond), rate(o, Method::IceScorerGuided));
    r.record(10, sc < g, format!("score-conditioned {sc:.4} < guided {g:.4}"));
}

fn main() -> ExitCode {
    let mut report = Report { lines: Vec::new() };
    let dir = tempfile::tempdir().unwrap();
    let (campaign, outcome, elapsed) = timed_run(CampaignConfig::default(), dir.path());

    criterion_1(&mut report, &outcome, elapsed);
    criterion_2(&mut report, &outcome);
    criterion_3(&mut report, &outcome);
    criterion_4(&mut report, &outcome);
    criterion_5(&mut report, &campaign);
    criterion_6(&mut report, &campaign, &outcome);
    criterion_7(&mut report);
    criterion_8(&mut report, &outcome);
    criterion_9(&mut report);
    criterion_10(&mut report, &outcome);

    let passed = report.lines.iter().filter(|l| l.1).count();
    println!("acceptance: {passed}/{} criteria passed", report.lines.len());
    if passed == report.lines.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
