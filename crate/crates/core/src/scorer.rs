//! One-hot ridge regressor used as the surrogate attribute scorer.
//!
//! The scorer is fit on training-region data only. On epistatic landscapes it
//! is mis-specified, which is what makes it unreliable outside that region.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::landscape::{spearman, DatasetSplit, LabeledExample};
use crate::seq::Sequence;

pub const SCORER_FORMAT_VERSION: u32 = 1;

/// Tolerance factor of the normal-equation residual check.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    length: usize,
    alphabet_size: usize,
    ridge_lambda: f64,
    /// One weight per (position, token) followed by the bias.
    weights: Vec<f64>,
}

impl ScorerModel {
    pub fn from_weights(
        length: usize,
        alphabet_size: usize,
        ridge_lambda: f64,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != length * alphabet_size + 1 {
            return Err(IceError::LengthMismatch {
                expected: length * alphabet_size + 1,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(IceError::param("weights", "must be finite"));
        }
        Ok(ScorerModel {
            length,
            alphabet_size,
            ridge_lambda,
            weights,
        })
    }

    pub fn zeros(length: usize, alphabet_size: usize) -> Self {
        ScorerModel {
            length,
            alphabet_size,
            ridge_lambda: 1.0,
            weights: vec![0.0; length * alphabet_size + 1],
        }
    }

    pub fn layout(&self) -> (usize, usize) {
        (self.length, self.alphabet_size)
    }

    pub fn ridge_lambda(&self) -> f64 {
        self.ridge_lambda
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.weights[self.length * self.alphabet_size]
    }

    fn check_layout(&self, seq: &Sequence) -> Result<()> {
        if seq.len() != self.length {
            return Err(IceError::LengthMismatch {
                expected: self.length,
                found: seq.len(),
            });
        }
        if seq.tokens().iter().any(|&t| t as usize >= self.alphabet_size) {
            return Err(IceError::InvalidCandidate(format!(
                "token outside alphabet of size {}",
                self.alphabet_size
            )));
        }
        Ok(())
    }

    /// Predicted attribute value `ẑ`.
    pub fn predict(&self, seq: &Sequence) -> Result<f64> {
        self.check_layout(seq)?;
        Ok(self.value(seq.tokens()))
    }

    pub(crate) fn value(&self, x: &[u8]) -> f64 {
        let a = self.alphabet_size;
        let mut z = self.bias();
        for (i, &t) in x.iter().enumerate() {
            z += self.weights[i * a + t as usize];
        }
        z
    }

    pub fn featurize(&self, seq: &Sequence) -> Result<Vec<f64>> {
        self.check_layout(seq)?;
        Ok(featurize(seq.tokens(), self.alphabet_size))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ScorerFile {
            version: SCORER_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| IceError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScorerFile =
            serde_json::from_str(text).map_err(|e| IceError::Serde(e.to_string()))?;
        if file.version != SCORER_FORMAT_VERSION {
            return Err(IceError::UnsupportedVersion {
                what: "scorer",
                expected: SCORER_FORMAT_VERSION,
                found: file.version,
            });
        }
        let m = file.model;
        ScorerModel::from_weights(m.length, m.alphabet_size, m.ridge_lambda, m.weights)
    }
}

#[derive(Serialize, Deserialize)]
struct ScorerFile {
    version: u32,
    model: ScorerModel,
}

/// Indices of the active one-hot features of `x` (the bias is implicit).
fn active_features(x: &[u8], alphabet_size: usize) -> impl Iterator<Item = usize> + '_ {
    x.iter()
        .enumerate()
        .map(move |(i, &t)| i * alphabet_size + t as usize)
}

/// Binary one-hot features per position followed by a constant 1.
pub fn featurize(x: &[u8], alphabet_size: usize) -> Vec<f64> {
    let mut v = vec![0.0; x.len() * alphabet_size + 1];
    for k in active_features(x, alphabet_size) {
        v[k] = 1.0;
    }
    v[x.len() * alphabet_size] = 1.0;
    v
}

/// Ridge regression on one-hot features via Cholesky of `XᵀX + λI'`,
/// where `I'` leaves the bias unpenalised.
pub fn fit_ridge(
    examples: &[LabeledExample],
    ridge_lambda: f64,
    alphabet_size: usize,
) -> Result<ScorerModel> {
    if examples.len() < 2 {
        return Err(IceError::param("examples", "need at least two examples"));
    }
    if !(ridge_lambda > 0.0) || !ridge_lambda.is_finite() {
        return Err(IceError::param("ridge_lambda", "must be positive"));
    }
    let length = examples[0].seq.len();
    for ex in examples {
        if ex.seq.len() != length {
            return Err(IceError::LengthMismatch {
                expected: length,
                found: ex.seq.len(),
            });
        }
        if ex.seq.tokens().iter().any(|&t| t as usize >= alphabet_size) {
            return Err(IceError::InvalidCandidate(format!(
                "token outside alphabet of size {alphabet_size}"
            )));
        }
        if !ex.z.is_finite() {
            return Err(IceError::param("labels", "must be finite"));
        }
    }
    let dim = length * alphabet_size + 1;
    let bias = dim - 1;

    // XᵀX holds co-occurrence counts, so it is accumulated exactly.
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut active = Vec::with_capacity(length + 1);
    for ex in examples {
        active.clear();
        active.extend(active_features(ex.seq.tokens(), alphabet_size));
        active.push(bias);
        for &p in &active {
            rhs[p] += ex.z;
            for &q in &active {
                gram[(p, q)] += 1.0;
            }
        }
    }
    let mut system = gram;
    for k in 0..bias {
        system[(k, k)] += ridge_lambda;
    }

    let chol = system
        .clone()
        .cholesky()
        .ok_or(IceError::SingularSystem {
            condition: f64::INFINITY,
            residual: f64::NAN,
        })?;
    let mut w = chol.solve(&rhs);
    // Two rounds of iterative refinement tighten the residual on
    // ill-conditioned systems (tiny λ).
    for _ in 0..2 {
        let r = &rhs - &system * &w;
        w += chol.solve(&r);
    }

    let model = ScorerModel {
        length,
        alphabet_size,
        ridge_lambda,
        weights: w.iter().copied().collect(),
    };
    let residual = normal_equation_residual(&model, examples);
    let scale = examples
        .iter()
        .map(|e| e.z.abs())
        .fold(1.0_f64, f64::max);
    if !residual.is_finite() || residual > RESIDUAL_TOLERANCE * scale {
        let diag = chol.l();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for k in 0..dim {
            let d = diag[(k, k)] * diag[(k, k)];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        return Err(IceError::SingularSystem {
            condition: hi / lo,
            residual,
        });
    }
    Ok(model)
}

/// `‖Xᵀ(y − Xw) − λw'‖∞` where `w'` zeroes the bias, computed from the
/// examples directly rather than from the assembled system.
pub fn normal_equation_residual(model: &ScorerModel, examples: &[LabeledExample]) -> f64 {
    let a = model.alphabet_size;
    let dim = model.weights.len();
    let bias = dim - 1;
    let mut grad = vec![0.0; dim];
    for ex in examples {
        let r = ex.z - model.value(ex.seq.tokens());
        for k in active_features(ex.seq.tokens(), a) {
            grad[k] += r;
        }
        grad[bias] += r;
    }
    grad.iter()
        .enumerate()
        .map(|(k, g)| {
            if k == bias {
                g.abs()
            } else {
                (g - model.ridge_lambda * model.weights[k]).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Spearman correlations of predictions on the supervised split and on `heldout`.
pub fn correlation_report(
    model: &ScorerModel,
    split: &DatasetSplit,
    heldout: &[LabeledExample],
) -> Result<(f64, f64)> {
    if split.sup_train.is_empty() || heldout.is_empty() {
        return Err(IceError::param("correlation_report", "empty input"));
    }
    let corr = |set: &[LabeledExample]| -> Result<f64> {
        let pred = set
            .iter()
            .map(|e| model.predict(&e.seq))
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<f64> = set.iter().map(|e| e.z).collect();
        spearman(&pred, &truth)
    };
    Ok((corr(&split.sup_train)?, corr(heldout)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{
        build_supervised_split, sample_corpus, Landscape, LandscapeShape, Region,
    };
    use crate::seed;
    use crate::seq::RegionMask;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_examples(n: usize, length: usize, a: usize, s: u64) -> Vec<LabeledExample> {
        let mut rng = seed::stream(s);
        (0..n)
            .map(|_| LabeledExample {
                seq: Sequence::new((0..length).map(|_| rng.random_range(0..a as u8)).collect()),
                z: rng.random_range(-3.0..3.0),
            })
            .collect()
    }

    #[test]
    fn featurize_shape() {
        let m = ScorerModel::zeros(20, 8);
        let s = Sequence::new(vec![0; 20]);
        let f = m.featurize(&s).unwrap();
        assert_eq!(f.iter().sum::<f64>(), 21.0);
        for (k, &v) in f.iter().enumerate() {
            let expect = k == 160 || (k < 160 && k % 8 == 0);
            assert_eq!(v == 1.0, expect, "coord {k}");
        }
        let mut t = vec![0; 20];
        t[4] = 3;
        let g = m.featurize(&Sequence::new(t)).unwrap();
        let differing = f.iter().zip(&g).filter(|(a, b)| a != b).count();
        assert_eq!(differing, 2);
        assert_eq!(f[160], g[160]);
        assert!(m.featurize(&Sequence::new(vec![0; 19])).is_err());
    }

    #[test]
    fn zero_labels_give_zero_weights() {
        let mut ex = random_examples(30, 5, 3, 1);
        for e in &mut ex {
            e.z = 0.0;
        }
        let m = fit_ridge(&ex, 1.0, 3).unwrap();
        assert!(m.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn repeated_example_is_reproduced() {
        let e = LabeledExample {
            seq: Sequence::new(vec![1, 0, 2]),
            z: 5.0,
        };
        let m = fit_ridge(&[e.clone(), e.clone()], 1.0, 3).unwrap();
        assert!((m.predict(&e.seq).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = ScorerModel::zeros(4, 3);
        assert_eq!(m.predict(&Sequence::new(vec![2, 1, 0, 2])).unwrap(), 0.0);
        assert!(m.predict(&Sequence::new(vec![2, 1, 0])).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let ex = random_examples(5, 3, 3, 2);
        assert!(fit_ridge(&ex[..1], 1.0, 3).is_err());
        assert!(fit_ridge(&ex, 0.0, 3).is_err());
        assert!(fit_ridge(&ex, -1.0, 3).is_err());
    }

    /// Gaussian elimination with partial pivoting on the dense normal equations.
    fn dense_solve(examples: &[LabeledExample], lambda: f64, a: usize) -> Vec<f64> {
        let dim = examples[0].seq.len() * a + 1;
        let xs: Vec<Vec<f64>> = examples
            .iter()
            .map(|e| featurize(e.seq.tokens(), a))
            .collect();
        let mut m = vec![vec![0.0; dim + 1]; dim];
        for (row, x) in xs.iter().enumerate() {
            for p in 0..dim {
                for q in 0..dim {
                    m[p][q] += x[p] * x[q];
                }
                m[p][dim] += x[p] * examples[row].z;
            }
        }
        for (k, row) in m.iter_mut().enumerate().take(dim - 1) {
            row[k] += lambda;
        }
        for col in 0..dim {
            let piv = (col..dim)
                .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
                .unwrap();
            m.swap(col, piv);
            for r in 0..dim {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for c in col..=dim {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
        (0..dim).map(|k| m[k][dim] / m[k][k]).collect()
    }

    #[test]
    fn matches_dense_normal_equation_solve() {
        let ex = vec![
            LabeledExample {
                seq: Sequence::new(vec![0, 1]),
                z: 1.0,
            },
            LabeledExample {
                seq: Sequence::new(vec![1, 1]),
                z: 2.5,
            },
            LabeledExample {
                seq: Sequence::new(vec![1, 0]),
                z: -0.5,
            },
        ];
        let m = fit_ridge(&ex, 0.7, 2).unwrap();
        let w = dense_solve(&ex, 0.7, 2);
        for (a, b) in m.weights().iter().zip(&w) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let probe = Sequence::new(vec![0, 0]);
        let direct: f64 = featurize(probe.tokens(), 2)
            .iter()
            .zip(&w)
            .map(|(f, w)| f * w)
            .sum();
        assert!((m.predict(&probe).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn additive_landscape_round_trip() {
        let shape = LandscapeShape {
            epistatic_scale: 0.0,
            ..Default::default()
        };
        let l = Landscape::generate(&shape, 8).unwrap();
        let mask = RegionMask::all_mutable(20).unwrap();
        let corpus = sample_corpus(&l, 2000, 3, &mask, &Sequence::new(vec![0; 20])).unwrap();
        let split =
            build_supervised_split(&corpus, &l, Region::new(-1e9, 1e9).unwrap(), 2000).unwrap();
        let m = fit_ridge(&split.sup_train, 1e-6, 8).unwrap();
        let mse: f64 = split
            .sup_train
            .iter()
            .map(|e| (m.predict(&e.seq).unwrap() - e.z).powi(2))
            .sum::<f64>()
            / 2000.0;
        assert!(mse.sqrt() < 1e-3, "rmse {}", mse.sqrt());
        let scale = split.sup_train.iter().map(|e| e.z.abs()).fold(1.0, f64::max);
        assert!(normal_equation_residual(&m, &split.sup_train) <= 1e-8 * scale);
    }

    #[test]
    fn correlation_report_control_condition() {
        let shape = LandscapeShape {
            epistatic_scale: 0.0,
            ..Default::default()
        };
        let l = Landscape::generate(&shape, 9).unwrap();
        let mask = RegionMask::with_immutable_span(20, 8, 4).unwrap();
        let corpus = sample_corpus(&l, 1500, 3, &mask, &Sequence::new(vec![0; 20])).unwrap();
        let split =
            build_supervised_split(&corpus, &l, Region::new(-1e9, 1e9).unwrap(), 1500).unwrap();
        let m = fit_ridge(&split.sup_train, 1.0, 8).unwrap();
        let (train, held) = correlation_report(&m, &split, &split.sup_train).unwrap();
        assert!(train >= 0.99 && held >= 0.99, "{train} {held}");
        assert!(correlation_report(&m, &split, &[]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ex = random_examples(50, 6, 4, 3);
        let m = fit_ridge(&ex, 0.3, 4).unwrap();
        let back = ScorerModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        for (a, b) in m.weights().iter().zip(back.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn residual_bound_after_fit(s in 0u64..1000, lambda in 0.01f64..10.0) {
            let ex = random_examples(80, 6, 4, s);
            let m = fit_ridge(&ex, lambda, 4).unwrap();
            let scale = ex.iter().map(|e| e.z.abs()).fold(1.0, f64::max);
            prop_assert!(normal_equation_residual(&m, &ex) <= 1e-8 * scale);
        }

        #[test]
        fn predict_is_lookup_sum(s in 0u64..1000, tokens in prop::collection::vec(0u8..4, 6)) {
            let ex = random_examples(40, 6, 4, s);
            let m = fit_ridge(&ex, 1.0, 4).unwrap();
            let seq = Sequence::new(tokens);
            let dot: f64 = m.featurize(&seq).unwrap().iter().zip(m.weights()).map(|(f, w)| f * w).sum();
            prop_assert!((m.predict(&seq).unwrap() - dot).abs() < 1e-12);
            prop_assert_eq!(m.predict(&seq).unwrap().to_bits(), m.predict(&seq).unwrap().to_bits());
        }

        #[test]
        fn doubling_labels_doubles_weights(s in 0u64..1000) {
            let ex = random_examples(40, 5, 3, s);
            let doubled: Vec<LabeledExample> = ex
                .iter()
                .map(|e| LabeledExample { seq: e.seq.clone(), z: 2.0 * e.z })
                .collect();
            let m1 = fit_ridge(&ex, 1.0, 3).unwrap();
            let m2 = fit_ridge(&doubled, 1.0, 3).unwrap();
            for (a, b) in m1.weights().iter().zip(m2.weights()) {
                prop_assert!((2.0 * a - b).abs() < 1e-9);
            }
        }
    }
}
