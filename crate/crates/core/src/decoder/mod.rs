//! One-vs-rest sparse logistic regression decoders and winner-take-all fusion.

pub mod slr;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::DecoderConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, StandardizationStats};
pub use slr::{sigmoid, Fit, Problem, SolverOptions};

/// The seven materials, in ensemble order.
pub const MATERIALS: [&str; 7] = [
    "plastic", "cork", "wool", "aluminum", "paper", "denim", "cotton",
];

/// Weights below this magnitude count as zero.
pub const NONZERO_THRESHOLD: f64 = 1e-10;

/// A binary "material vs rest" decoder over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialDecoder {
    pub material: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub n_nonzero: usize,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl MaterialDecoder {
    fn from_fit(material: &str, lambda: f64, fit: Fit) -> Self {
        let n_nonzero = count_nonzero(&fit.weights);
        MaterialDecoder {
            material: material.to_string(),
            weights: fit.weights,
            bias: fit.bias,
            lambda,
            n_nonzero,
            iterations: fit.iterations,
            kkt_residual: fit.kkt_residual,
        }
    }

    pub fn score(&self, x: &FeatureVector) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "decoder '{}' expects {} features, got {}",
                self.material,
                self.weights.len(),
                x.len()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(x.as_slice())
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.bias)
    }
}

pub fn count_nonzero(w: &[f64]) -> usize {
    w.iter().filter(|v| v.abs() > NONZERO_THRESHOLD).count()
}

fn as_rows(x: &[FeatureVector]) -> Vec<&[f64]> {
    x.iter().map(FeatureVector::as_slice).collect()
}

/// Fits one binary decoder; `positive[i]` marks rows of `material`.
pub fn train_binary(
    material: &str,
    x: &[FeatureVector],
    positive: &[bool],
    lambda: f64,
    opts: &SolverOptions,
) -> Result<MaterialDecoder> {
    let problem = Problem::new(&as_rows(x), positive)?;
    let fit = problem.fit(lambda, opts)?;
    Ok(MaterialDecoder::from_fit(material, lambda, fit))
}

/// Probability that `x` (already standardized) belongs to the decoder's material.
pub fn predict_prob(d: &MaterialDecoder, x: &FeatureVector) -> Result<f64> {
    Ok(sigmoid(d.score(x)?))
}

/// Assigns each sample to one of `k` folds, class by class after a seeded
/// shuffle, so every fold sees both classes.
pub fn stratified_folds(positive: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; positive.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..positive.len()).filter(|&i| positive[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Stratification(format!(
                "class {} has {} samples, fewer than {k} folds",
                if class { "positive" } else { "negative" },
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// (lambda, mean validation accuracy), in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the lambda with the best mean stratified k-fold accuracy; ties go to
/// the larger lambda.
pub fn select_lambda(
    x: &[FeatureVector],
    positive: &[bool],
    grid: &[f64],
    k: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if grid.len() == 1 {
        return Ok(LambdaSelection {
            lambda: grid[0],
            scores: vec![(grid[0], f64::NAN)],
        });
    }
    let problem = Problem::new(&as_rows(x), positive)?;
    let folds = stratified_folds(positive, k, seed)?;

    // descending lambda so each fold warm-starts from the sparser solution
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]).then(a.cmp(&b)));

    let mut acc = vec![0.0; grid.len()];
    for fold in 0..k {
        let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
        let sub = problem.select(&train)?;
        let mut w = vec![0.0; problem.dim()];
        let mut b = 0.0;
        for &g in &order {
            let fit = sub.fit_from(grid[g], opts, w, b)?;
            let correct = test
                .iter()
                .filter(|&&i| {
                    let z: f64 = x[i]
                        .as_slice()
                        .iter()
                        .zip(&fit.weights)
                        .map(|(v, w)| v * w)
                        .sum::<f64>()
                        + fit.bias;
                    (z > 0.0) == positive[i]
                })
                .count();
            acc[g] += correct as f64 / test.len() as f64 / k as f64;
            w = fit.weights;
            b = fit.bias;
        }
    }

    let mut best = order[0];
    for &g in &order[1..] {
        if acc[g] > acc[best] {
            best = g;
        }
    }
    Ok(LambdaSelection {
        lambda: grid[best],
        scores: grid.iter().copied().zip(acc).collect(),
    })
}

/// Seven one-vs-rest decoders sharing one standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderEnsemble {
    pub materials: Vec<String>,
    pub decoders: Vec<MaterialDecoder>,
    pub stats: StandardizationStats,
}

/// A training bin: raw (unstandardized) features plus its material.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBin {
    pub features: FeatureVector,
    pub material: String,
}

pub fn default_materials() -> Vec<String> {
    MATERIALS.iter().map(|m| m.to_string()).collect()
}

/// Fits the shared standardization, then one decoder per material with its
/// own cross-validated lambda. Decoders are trained on scoped threads; each
/// fit is single-threaded and deterministic.
pub fn train_ensemble(
    bins: &[LabeledBin],
    materials: &[String],
    config: &DecoderConfig,
    seed: u64,
) -> Result<DecoderEnsemble> {
    config.validate()?;
    if materials.is_empty() {
        return Err(Error::Training("no materials given".into()));
    }
    for m in materials {
        if !bins.iter().any(|b| &b.material == m) {
            return Err(Error::Training(format!(
                "training set has no bins of material '{m}'"
            )));
        }
    }
    if let Some(b) = bins.iter().find(|b| !materials.contains(&b.material)) {
        return Err(Error::Training(format!(
            "training bin of unknown material '{}'",
            b.material
        )));
    }
    let raw: Vec<FeatureVector> = bins.iter().map(|b| b.features.clone()).collect();
    let stats = StandardizationStats::fit(&raw)?;
    let x = raw
        .iter()
        .map(|v| stats.apply(v))
        .collect::<Result<Vec<_>>>()?;
    let opts = SolverOptions {
        tol: config.tol,
        max_iter: config.max_iter,
    };

    let decoders = std::thread::scope(|scope| {
        let handles: Vec<_> = materials
            .iter()
            .enumerate()
            .map(|(k, material)| {
                let x = &x;
                let opts = &opts;
                scope.spawn(move || -> Result<MaterialDecoder> {
                    let positive: Vec<bool> = bins.iter().map(|b| &b.material == material).collect();
                    let fold_seed = seed.wrapping_add(k as u64);
                    let sel = select_lambda(
                        x,
                        &positive,
                        &config.lambda_grid,
                        config.cv_folds,
                        fold_seed,
                        opts,
                    )?;
                    train_binary(material, x, &positive, sel.lambda, opts)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("decoder training thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    Ok(DecoderEnsemble {
        materials: materials.to_vec(),
        decoders,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPrediction {
    pub trial_id: String,
    pub predicted_material: String,
    /// Bin votes per material, zero counts included.
    pub votes: BTreeMap<String, usize>,
    pub tie_broken: bool,
}

impl TrialPrediction {
    pub fn n_bins(&self) -> usize {
        self.votes.values().sum()
    }
}

/// Index of the largest value; the first one wins ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl DecoderEnsemble {
    pub fn standardize(&self, raw: &FeatureVector) -> Result<FeatureVector> {
        self.stats.apply(raw)
    }

    /// Per-material probabilities for one standardized bin, in ensemble order.
    pub fn probabilities(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.decoders.iter().map(|d| predict_prob(d, x)).collect()
    }

    pub fn classify_bin(&self, x: &FeatureVector) -> Result<&str> {
        let p = self.probabilities(x)?;
        Ok(&self.materials[argmax(&p)])
    }

    /// Winner-take-all over standardized bins.
    pub fn classify_trial(&self, trial_id: &str, bins: &[FeatureVector]) -> Result<TrialPrediction> {
        let probs = bins
            .iter()
            .map(|x| self.probabilities(x))
            .collect::<Result<Vec<_>>>()?;
        fuse_votes(trial_id, &self.materials, &probs)
    }
}

/// Winner-take-all from per-bin probability rows (ensemble order). Each bin
/// votes for its argmax; vote ties go to the larger summed probability, then
/// to the earlier material.
pub fn fuse_votes(
    trial_id: &str,
    materials: &[String],
    probs: &[Vec<f64>],
) -> Result<TrialPrediction> {
    if probs.is_empty() {
        return Err(Error::Empty(format!("trial {trial_id} has no bins to classify")));
    }
    let k = materials.len();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k];
    for row in probs {
        if row.len() != k {
            return Err(Error::InvalidInput(format!(
                "probability row has {} entries for {k} materials",
                row.len()
            )));
        }
        counts[argmax(row)] += 1;
        for (s, p) in sums.iter_mut().zip(row) {
            *s += p;
        }
    }
    let top = *counts.iter().max().unwrap();
    let tied: Vec<usize> = (0..k).filter(|&i| counts[i] == top).collect();
    let winner = tied
        .iter()
        .copied()
        .reduce(|best, i| if sums[i] > sums[best] { i } else { best })
        .unwrap();
    Ok(TrialPrediction {
        trial_id: trial_id.to_string(),
        predicted_material: materials[winner].clone(),
        votes: materials.iter().cloned().zip(counts).collect(),
        tie_broken: tied.len() > 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels() -> Vec<String> {
        default_materials()
    }

    fn ensemble_with_bias(biases: &[f64]) -> DecoderEnsemble {
        DecoderEnsemble {
            materials: labels(),
            decoders: biases
                .iter()
                .zip(MATERIALS)
                .map(|(&b, m)| MaterialDecoder {
                    material: m.into(),
                    weights: vec![0.0; 2],
                    bias: b,
                    lambda: 0.0,
                    n_nonzero: 0,
                    iterations: 0,
                    kkt_residual: 0.0,
                })
                .collect(),
            stats: StandardizationStats {
                mean: vec![0.0; 2],
                std: vec![1.0; 2],
            },
        }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn predict_prob_examples() {
        let mut d = ensemble_with_bias(&[0.0; 7]).decoders[0].clone();
        let x = FeatureVector(vec![0.3, -1.0]);
        assert_eq!(predict_prob(&d, &x).unwrap(), 0.5);
        d.weights = vec![10.0, 0.0];
        d.bias = 7.0;
        let x = FeatureVector(vec![0.3, 5.0]);
        assert!((predict_prob(&d, &x).unwrap() - 0.99995).abs() < 1e-5);
        let p = predict_prob(&d, &x).unwrap();
        let mut neg = d.clone();
        neg.weights.iter_mut().for_each(|w| *w = -*w);
        neg.bias = -neg.bias;
        assert!((p + predict_prob(&neg, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(predict_prob(&d, &FeatureVector(vec![1.0])).is_err());
    }

    #[test]
    fn classify_bin_examples() {
        let x = FeatureVector(vec![0.0, 0.0]);
        let mut b = vec![logit(0.1); 7];
        b[4] = logit(0.9);
        assert_eq!(ensemble_with_bias(&b).classify_bin(&x).unwrap(), "paper");
        assert_eq!(ensemble_with_bias(&[0.0; 7]).classify_bin(&x).unwrap(), "plastic");
        let b: Vec<f64> = [0.2, 0.7, 0.69, 0.1, 0.1, 0.1, 0.1].iter().map(|&p| logit(p)).collect();
        assert_eq!(ensemble_with_bias(&b).classify_bin(&x).unwrap(), "cork");
    }

    fn one_hot(k: usize, p: f64) -> Vec<f64> {
        (0..7).map(|i| if i == k { p } else { 0.05 }).collect()
    }

    #[test]
    fn trial_votes() {
        let m = labels();
        let rows = vec![one_hot(1, 0.9); 5];
        let t = fuse_votes("t", &m, &rows).unwrap();
        assert_eq!(t.predicted_material, "cork");
        assert_eq!(t.votes["cork"], 5);
        assert_eq!(t.n_bins(), 5);
        assert!(!t.tie_broken);

        let mut rows = vec![one_hot(2, 0.8); 4];
        rows.extend(vec![one_hot(5, 0.99); 2]);
        let t = fuse_votes("t", &m, &rows).unwrap();
        assert_eq!(t.predicted_material, "wool");

        // 3 vs 3: summed probabilities 2.1 (denim) vs 1.8 (wool)
        let mut rows = vec![one_hot(2, 0.6); 3];
        rows.extend(vec![one_hot(5, 0.7); 3]);
        let t = fuse_votes("t", &m, &rows).unwrap();
        assert_eq!(t.predicted_material, "denim");
        assert!(t.tie_broken);

        assert!(matches!(fuse_votes("t", &m, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn stratification_needs_k_per_class() {
        let y = [true, true, false, false, false, false, false];
        assert!(matches!(
            stratified_folds(&y, 3, 0),
            Err(Error::Stratification(_))
        ));
        let f = stratified_folds(&y, 2, 0).unwrap();
        for fold in 0..2 {
            assert!((0..7).any(|i| f[i] == fold && y[i]));
            assert!((0..7).any(|i| f[i] == fold && !y[i]));
        }
    }

    fn separable() -> (Vec<FeatureVector>, Vec<bool>) {
        let x: Vec<FeatureVector> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                FeatureVector(vec![s * (1.0 + (i % 5) as f64 * 0.1), ((i * 7) % 11) as f64 / 11.0 - 0.5])
            })
            .collect();
        let y = (0..40).map(|i| i % 2 == 0).collect();
        (x, y)
    }

    #[test]
    fn select_lambda_examples() {
        let (x, y) = separable();
        let opts = SolverOptions::default();
        assert_eq!(select_lambda(&x, &y, &[0.3], 5, 0, &opts).unwrap().lambda, 0.3);
        let sel = select_lambda(&x, &y, &[1e-3, 1e6], 5, 0, &opts).unwrap();
        assert_eq!(sel.lambda, 1e-3);
        // both small lambdas separate perfectly: tie goes to the larger one
        let sel = select_lambda(&x, &y, &[1e-3, 1e-2], 5, 0, &opts).unwrap();
        assert_eq!(sel.scores[0].1, sel.scores[1].1);
        assert_eq!(sel.lambda, 1e-2);
    }

    #[test]
    fn ensemble_requires_every_material() {
        let bins: Vec<LabeledBin> = (0..20)
            .map(|i| LabeledBin {
                features: FeatureVector(vec![i as f64, 1.0]),
                material: if i % 2 == 0 { "cork" } else { "wool" }.into(),
            })
            .collect();
        let err = train_ensemble(&bins, &labels(), &DecoderConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    #[test]
    fn duplicated_rows_give_the_same_model() {
        let (x, y) = separable();
        let opts = SolverOptions {
            tol: 1e-10,
            max_iter: 10_000,
        };
        let a = train_binary("m", &x, &y, 0.05, &opts).unwrap();
        let x2: Vec<FeatureVector> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<bool> = y.iter().chain(&y).copied().collect();
        let b = train_binary("m", &x2, &y2, 0.05, &opts).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
        assert!((a.bias - b.bias).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_monotone_maps(ps in proptest::collection::vec(0.001f64..0.999, 7)) {
            let e = ensemble_with_bias(&ps.iter().map(|&p| logit(p)).collect::<Vec<_>>());
            let x = FeatureVector(vec![0.0, 0.0]);
            let base = e.classify_bin(&x).unwrap().to_string();
            // p -> p^3 is strictly increasing on (0, 1)
            let cubed: Vec<f64> = ps.iter().map(|p| logit(p.powi(3))).collect();
            let e2 = ensemble_with_bias(&cubed);
            prop_assert_eq!(base, e2.classify_bin(&x).unwrap());
        }

        #[test]
        fn vote_order_does_not_matter(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 7), 1..30), seed in 0u64..100) {
            let m = labels();
            let a = fuse_votes("t", &m, &rows).unwrap();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = fuse_votes("t", &m, &shuffled).unwrap();
            prop_assert_eq!(&a.votes, &b.votes);
            prop_assert_eq!(a.n_bins(), rows.len());
            if !a.tie_broken {
                prop_assert_eq!(a.predicted_material, b.predicted_material);
            }
        }
    }
}
