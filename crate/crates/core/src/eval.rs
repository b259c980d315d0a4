//! Train/test protocol: decoders are fitted on the late part of each trial
//! and tested on growing windows from its early part.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{DecoderConfig, Grouping, PipelineConfig, ProtocolConfig, Window};
use crate::decoder::{train_ensemble, LabeledBin, TrialPrediction, MATERIALS};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureVector};
use crate::io::{GroupModel, ModelFile, MODEL_FORMAT_VERSION};
use crate::signal::{highpass_filter_with_order, segment_bins, slice_window, Effector, Recording, TrialMeta};

/// Speeds and loads of the full factorial grid.
pub const GRID_SPEEDS_RPM: [u32; 3] = [30, 60, 120];
pub const GRID_LOADS_N: [f64; 2] = [0.49, 1.96];

pub fn chance_level(n_materials: usize) -> Result<f64> {
    if n_materials == 0 {
        return Err(Error::InvalidParameter("chance level of zero materials".into()));
    }
    Ok(1.0 / n_materials as f64)
}

/// Counts of true (rows) against predicted (columns) materials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::InvalidInput(format!("unknown material '{label}'")))
    }

    pub fn add(&mut self, truth: &str, predicted: &str) -> Result<()> {
        let (i, j) = (self.index(truth)?, self.index(predicted)?);
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// trace / total; NaN when empty.
    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn row_total(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    /// The matrix with one material's row and column removed.
    pub fn without(&self, label: &str) -> Result<ConfusionMatrix> {
        let drop = self.index(label)?;
        let keep: Vec<usize> = (0..self.labels.len()).filter(|&i| i != drop).collect();
        Ok(ConfusionMatrix {
            labels: keep.iter().map(|&i| self.labels[i].clone()).collect(),
            counts: keep
                .iter()
                .map(|&i| keep.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        })
    }
}

pub fn confusion_matrix(
    labels: &[String],
    predictions: &[TrialPrediction],
    truths: &[String],
) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(labels.to_vec());
    for (p, t) in predictions.iter().zip(truths) {
        cm.add(t, &p.predicted_material)?;
    }
    Ok(cm)
}

/// Trial-level outcome for one test window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub window: String,
    pub group: String,
    pub meta: TrialMeta,
    pub prediction: TrialPrediction,
}

impl TrialOutcome {
    pub fn correct(&self) -> bool {
        self.prediction.predicted_material == self.meta.material
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialAccuracy {
    pub material: String,
    pub trials: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Share of this material's test bins voted for the right material.
    pub bin_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window: Window,
    /// Bins per trial, when every trial yields the same count.
    pub bins_per_trial: Option<usize>,
    pub trials: usize,
    pub accuracy: f64,
    pub bin_accuracy: f64,
    pub per_material: Vec<MaterialAccuracy>,
    pub per_group: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSummary {
    pub material: String,
    pub lambda: f64,
    pub n_nonzero: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub group: String,
    pub n_training_vectors: usize,
    pub decoders: Vec<DecoderSummary>,
}

/// Extremes of the bin time ranges actually used, seconds from touch onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalExtent {
    pub train_min_start_s: f64,
    pub train_max_end_s: f64,
    pub test_min_start_s: f64,
    pub test_max_end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub materials: Vec<String>,
    pub chance_level: f64,
    pub windows: Vec<WindowResult>,
    /// Window whose confusion matrices are reported (the last test window).
    pub confusion_window: Window,
    pub confusion: ConfusionMatrix,
    pub confusion_by_effector: BTreeMap<String, ConfusionMatrix>,
    pub models: Vec<ModelSummary>,
    pub temporal_extent: Option<TemporalExtent>,
    pub outcomes: Vec<TrialOutcome>,
}

/// Decoders for every group, keyed by group name.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub sample_rate: f64,
    pub groups: Vec<GroupModel>,
    pub train_extent: (f64, f64),
}

impl TrainedModels {
    pub fn into_model_file(
        self,
        pipeline: &PipelineConfig,
        decoder: &DecoderConfig,
        protocol: &ProtocolConfig,
        run_config: Option<serde_json::Value>,
    ) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            sample_rate: self.sample_rate,
            pipeline: pipeline.clone(),
            decoder: decoder.clone(),
            protocol: protocol.clone(),
            train_extent_s: [self.train_extent.0, self.train_extent.1],
            run_config,
            groups: self.groups,
        }
    }

    pub fn from_model_file(file: ModelFile) -> Self {
        TrainedModels {
            sample_rate: file.sample_rate,
            groups: file.groups,
            train_extent: (file.train_extent_s[0], file.train_extent_s[1]),
        }
    }
}

pub fn group_key(meta: &TrialMeta, grouping: Grouping) -> String {
    match grouping {
        Grouping::Pooled => "all".to_string(),
        Grouping::PerParticipant => match meta.effector {
            Effector::Finger => meta.participant.clone(),
            Effector::Pen => format!("{}/pen", meta.participant),
        },
    }
}

/// Materials present in the corpus, in canonical order followed by any
/// others in sorted order.
pub fn corpus_materials(corpus: &[Recording]) -> Vec<String> {
    let mut present: Vec<String> = corpus.iter().map(|r| r.meta.material.clone()).collect();
    present.sort();
    present.dedup();
    let mut out: Vec<String> = MATERIALS
        .iter()
        .filter(|m| present.iter().any(|p| p == *m))
        .map(|m| m.to_string())
        .collect();
    out.extend(present.into_iter().filter(|p| !MATERIALS.contains(&p.as_str())));
    out
}

fn groups_of(corpus: &[Recording], grouping: Grouping) -> BTreeMap<String, Vec<&Recording>> {
    let mut groups: BTreeMap<String, Vec<&Recording>> = BTreeMap::new();
    for r in corpus {
        groups.entry(group_key(&r.meta, grouping)).or_default().push(r);
    }
    groups
}

/// Strict mode: every group holds exactly one trial per material x speed x
/// load cell of the full grid. Relaxed mode only needs a non-empty corpus
/// with one sample rate.
pub fn validate_corpus(corpus: &[Recording], cfg: &ProtocolConfig) -> Result<()> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::Corpus("corpus is empty".into()))?;
    if let Some(r) = corpus.iter().find(|r| r.sample_rate != first.sample_rate) {
        return Err(Error::Corpus(format!(
            "trial {} is sampled at {} Hz, expected {} Hz",
            r.meta.trial, r.sample_rate, first.sample_rate
        )));
    }
    let needed = cfg
        .test_windows
        .iter()
        .chain(std::iter::once(&cfg.train_window))
        .fold(0.0f64, |a, w| a.max(w.end_s));
    if let Some(r) = corpus.iter().find(|r| r.duration_s() + 1e-9 < needed) {
        return Err(Error::Corpus(format!(
            "trial {} lasts {} s, protocol windows need {needed} s",
            r.meta.trial,
            r.duration_s()
        )));
    }
    if !cfg.strict {
        return Ok(());
    }
    for (group, trials) in groups_of(corpus, cfg.grouping) {
        if cfg.grouping == Grouping::Pooled {
            break;
        }
        for material in MATERIALS {
            for speed in GRID_SPEEDS_RPM {
                for load in GRID_LOADS_N {
                    let n = trials
                        .iter()
                        .filter(|r| {
                            r.meta.material == material
                                && r.meta.speed_rpm == speed
                                && (r.meta.load_n - load).abs() < 1e-9
                        })
                        .count();
                    if n != 1 {
                        return Err(Error::Corpus(format!(
                            "group {group}: expected one trial of {material} at {speed} rpm / {load} N, found {n}"
                        )));
                    }
                }
            }
        }
        if trials.len() != MATERIALS.len() * GRID_SPEEDS_RPM.len() * GRID_LOADS_N.len() {
            return Err(Error::Corpus(format!(
                "group {group}: {} trials, expected {}",
                trials.len(),
                MATERIALS.len() * GRID_SPEEDS_RPM.len() * GRID_LOADS_N.len()
            )));
        }
    }
    Ok(())
}

/// Filtered trial plus a featurizer for its sample rate.
struct Prepared {
    filtered: Recording,
}

fn prepare(rec: &Recording, pipeline: &PipelineConfig) -> Result<Prepared> {
    Ok(Prepared {
        filtered: highpass_filter_with_order(rec, pipeline.cutoff_hz, pipeline.filter_order)?,
    })
}

/// Per-bin raw features of a window and the [start, end) time of each bin.
pub type WindowFeatures = (Vec<FeatureVector>, Vec<(f64, f64)>);

pub fn window_features(
    filtered: &Recording,
    window: &Window,
    pipeline: &PipelineConfig,
    extractor: &FeatureExtractor,
) -> Result<WindowFeatures> {
    let piece = slice_window(filtered, window.start_s, window.end_s)?;
    let bins = segment_bins(&piece, pipeline.bin_duration_s)?;
    let spans = (0..bins.len()).map(|k| (bins.bins[k].start_s, bins.bin_end_s(k))).collect();
    let feats = bins
        .bins
        .iter()
        .map(|b| extractor.featurize_bin(b))
        .collect::<Result<Vec<_>>>()?;
    Ok((feats, spans))
}

fn check_span(kind: &str, window: &Window, spans: &[(f64, f64)]) -> Result<()> {
    const EPS: f64 = 1e-9;
    for &(s, e) in spans {
        if s < window.start_s - EPS || e > window.end_s + EPS {
            return Err(Error::Config(format!(
                "{kind} bin [{s}, {e}) s escapes window {}",
                window.label()
            )));
        }
    }
    Ok(())
}

/// Fits one ensemble per group on the training window of the selected trials.
pub fn train_models(
    corpus: &[Recording],
    pipeline: &PipelineConfig,
    decoder: &DecoderConfig,
    cfg: &ProtocolConfig,
    include: impl Fn(&TrialMeta) -> bool,
) -> Result<TrainedModels> {
    cfg.validate()?;
    pipeline.validate()?;
    let first = corpus
        .first()
        .ok_or_else(|| Error::Corpus("corpus is empty".into()))?;
    let sample_rate = first.sample_rate;
    let extractor = FeatureExtractor::new(pipeline, sample_rate)?;
    let selected: Vec<Recording> = corpus.iter().filter(|r| include(&r.meta)).cloned().collect();
    if selected.is_empty() {
        return Err(Error::Corpus("no trials selected for training".into()));
    }
    let materials = corpus_materials(corpus);
    let mut groups = Vec::new();
    let mut extent = (f64::INFINITY, f64::NEG_INFINITY);
    for (key, trials) in groups_of(&selected, cfg.grouping) {
        let mut bins = Vec::new();
        for rec in trials {
            let prepared = prepare(rec, pipeline)?;
            let (feats, spans) = window_features(&prepared.filtered, &cfg.train_window, pipeline, &extractor)?;
            check_span("training", &cfg.train_window, &spans)?;
            for &(s, e) in &spans {
                extent.0 = extent.0.min(s);
                extent.1 = extent.1.max(e);
            }
            bins.extend(feats.into_iter().map(|features| LabeledBin {
                features,
                material: rec.meta.material.clone(),
            }));
        }
        let ensemble = train_ensemble(&bins, &materials, decoder, cfg.seed)?;
        groups.push(GroupModel {
            group: key,
            n_training_vectors: bins.len(),
            ensemble,
        });
    }
    Ok(TrainedModels {
        sample_rate,
        groups,
        train_extent: extent,
    })
}

/// Classifies every selected trial at every test window with its group's
/// ensemble and aggregates the results.
pub fn evaluate(
    corpus: &[Recording],
    models: &TrainedModels,
    pipeline: &PipelineConfig,
    cfg: &ProtocolConfig,
    include: impl Fn(&TrialMeta) -> bool,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let first_model = models
        .groups
        .first()
        .ok_or_else(|| Error::Corpus("no trained models".into()))?;
    let materials = first_model.ensemble.materials.clone();
    let extractor = FeatureExtractor::new(pipeline, models.sample_rate)?;
    let by_group: BTreeMap<&str, &GroupModel> =
        models.groups.iter().map(|g| (g.group.as_str(), g)).collect();
    let train_range = Window::new(models.train_extent.0, models.train_extent.1);

    let mut outcomes = Vec::new();
    let mut test_extent = (f64::INFINITY, f64::NEG_INFINITY);
    for rec in corpus.iter().filter(|r| include(&r.meta)) {
        if rec.sample_rate != models.sample_rate {
            return Err(Error::Provenance(format!(
                "trial {} sampled at {} Hz, models expect {} Hz",
                rec.meta.trial, rec.sample_rate, models.sample_rate
            )));
        }
        let key = group_key(&rec.meta, cfg.grouping);
        let model = by_group
            .get(key.as_str())
            .ok_or_else(|| Error::Corpus(format!("no trained model for group '{key}'")))?;
        let prepared = prepare(rec, pipeline)?;
        for window in &cfg.test_windows {
            let (feats, spans) = window_features(&prepared.filtered, window, pipeline, &extractor)?;
            check_span("test", window, &spans)?;
            for &(s, e) in &spans {
                if Window::new(s, e).overlaps(&train_range) {
                    return Err(Error::Config(format!(
                        "test bin [{s}, {e}) s overlaps training bins {}",
                        train_range.label()
                    )));
                }
                test_extent.0 = test_extent.0.min(s);
                test_extent.1 = test_extent.1.max(e);
            }
            let standardized = feats
                .iter()
                .map(|f| model.ensemble.standardize(f))
                .collect::<Result<Vec<_>>>()?;
            let prediction = model.ensemble.classify_trial(&rec.meta.trial, &standardized)?;
            outcomes.push(TrialOutcome {
                window: window.label(),
                group: key.clone(),
                meta: rec.meta.clone(),
                prediction,
            });
        }
    }
    if outcomes.is_empty() {
        return Err(Error::Corpus("no trials selected for testing".into()));
    }

    let mut windows = Vec::new();
    for window in &cfg.test_windows {
        let label = window.label();
        let rows: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.window == label).collect();
        windows.push(summarize_window(*window, &rows, &materials));
    }

    let confusion_window = *cfg.test_windows.last().expect("validated non-empty");
    let label = confusion_window.label();
    let mut confusion = ConfusionMatrix::new(materials.clone());
    let mut by_effector: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.window == label) {
        confusion.add(&o.meta.material, &o.prediction.predicted_material)?;
        by_effector
            .entry(o.meta.effector.to_string())
            .or_insert_with(|| ConfusionMatrix::new(materials.clone()))
            .add(&o.meta.material, &o.prediction.predicted_material)?;
    }

    let models_summary = models
        .groups
        .iter()
        .map(|g| ModelSummary {
            group: g.group.clone(),
            n_training_vectors: g.n_training_vectors,
            decoders: g
                .ensemble
                .decoders
                .iter()
                .map(|d| DecoderSummary {
                    material: d.material.clone(),
                    lambda: d.lambda,
                    n_nonzero: d.n_nonzero,
                    kkt_residual: d.kkt_residual,
                })
                .collect(),
        })
        .collect();

    Ok(EvaluationReport {
        chance_level: chance_level(materials.len())?,
        materials,
        windows,
        confusion_window,
        confusion,
        confusion_by_effector: by_effector,
        models: models_summary,
        temporal_extent: Some(TemporalExtent {
            train_min_start_s: models.train_extent.0,
            train_max_end_s: models.train_extent.1,
            test_min_start_s: test_extent.0,
            test_max_end_s: test_extent.1,
        }),
        outcomes,
    })
}

fn summarize_window(window: Window, rows: &[&TrialOutcome], materials: &[String]) -> WindowResult {
    let mut counts: Vec<usize> = rows.iter().map(|o| o.prediction.n_bins()).collect();
    counts.sort_unstable();
    counts.dedup();
    let correct = rows.iter().filter(|o| o.correct()).count();
    let total_bins: usize = rows.iter().map(|o| o.prediction.n_bins()).sum();
    let right_bins: usize = rows
        .iter()
        .map(|o| o.prediction.votes.get(&o.meta.material).copied().unwrap_or(0))
        .sum();
    let per_material = materials
        .iter()
        .map(|m| {
            let mine: Vec<&&TrialOutcome> = rows.iter().filter(|o| &o.meta.material == m).collect();
            let c = mine.iter().filter(|o| o.correct()).count();
            let bins: usize = mine.iter().map(|o| o.prediction.n_bins()).sum();
            let right: usize = mine
                .iter()
                .map(|o| o.prediction.votes.get(m).copied().unwrap_or(0))
                .sum();
            MaterialAccuracy {
                material: m.clone(),
                trials: mine.len(),
                correct: c,
                accuracy: c as f64 / mine.len() as f64,
                bin_accuracy: right as f64 / bins as f64,
            }
        })
        .collect();
    let mut per_group: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for o in rows {
        let e = per_group.entry(o.group.clone()).or_default();
        e.0 += o.correct() as usize;
        e.1 += 1;
    }
    WindowResult {
        window,
        bins_per_trial: (counts.len() == 1).then(|| counts[0]),
        trials: rows.len(),
        accuracy: correct as f64 / rows.len() as f64,
        bin_accuracy: right_bins as f64 / total_bins as f64,
        per_material,
        per_group: per_group
            .into_iter()
            .map(|(g, (c, n))| (g, c as f64 / n as f64))
            .collect(),
    }
}

/// The full protocol: validate, train per group, test every window.
pub fn run_protocol(
    corpus: &[Recording],
    pipeline: &PipelineConfig,
    decoder: &DecoderConfig,
    cfg: &ProtocolConfig,
) -> Result<EvaluationReport> {
    validate_corpus(corpus, cfg)?;
    let models = train_models(corpus, pipeline, decoder, cfg, |_| true)?;
    evaluate(corpus, &models, pipeline, cfg, |_| true)
}

/// Trains on every speed but `held_out_rpm` and tests on that speed only.
pub fn run_held_out_speed(
    corpus: &[Recording],
    pipeline: &PipelineConfig,
    decoder: &DecoderConfig,
    cfg: &ProtocolConfig,
    held_out_rpm: u32,
) -> Result<EvaluationReport> {
    validate_corpus(corpus, cfg)?;
    if !corpus.iter().any(|r| r.meta.speed_rpm == held_out_rpm) {
        return Err(Error::Corpus(format!("no trials at {held_out_rpm} rpm")));
    }
    let models = train_models(corpus, pipeline, decoder, cfg, |m| m.speed_rpm != held_out_rpm)?;
    evaluate(corpus, &models, pipeline, cfg, |m| m.speed_rpm == held_out_rpm)
}

fn pct(v: f64) -> String {
    if v.is_nan() {
        "     -".to_string()
    } else {
        format!("{:6.1}", 100.0 * v)
    }
}

fn write_confusion(out: &mut String, title: &str, cm: &ConfusionMatrix) {
    let width = cm.labels.iter().map(String::len).max().unwrap_or(4).max(8);
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:>width$}", "true\\pred");
    for l in &cm.labels {
        let _ = write!(out, " {l:>width$}");
    }
    let _ = writeln!(out);
    for (i, l) in cm.labels.iter().enumerate() {
        let _ = write!(out, "{l:>width$}");
        for c in &cm.counts[i] {
            let _ = write!(out, " {c:>width$}");
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "accuracy {} % ({}/{})", pct(cm.accuracy()).trim(), cm.trace(), cm.total());
}

impl EvaluationReport {
    /// Fixed-layout plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "chance level: {} %", pct(self.chance_level).trim());
        let _ = writeln!(out);
        let _ = write!(out, "{:<10} {:>5} {:>6} {:>7} {:>7}", "window", "bins", "trials", "overall", "bins%");
        for m in &self.materials {
            let _ = write!(out, " {:>9}", m);
        }
        let _ = writeln!(out);
        for w in &self.windows {
            let bins = w.bins_per_trial.map_or("-".to_string(), |b| b.to_string());
            let _ = write!(
                out,
                "{:<10} {:>5} {:>6} {:>7} {:>7}",
                w.window.label(),
                bins,
                w.trials,
                pct(w.accuracy),
                pct(w.bin_accuracy)
            );
            for m in &w.per_material {
                let _ = write!(out, " {:>9}", pct(m.accuracy));
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
        write_confusion(
            &mut out,
            &format!(
                "confusion matrix, window {} (rows = true, columns = predicted)",
                self.confusion_window.label()
            ),
            &self.confusion,
        );
        if self.confusion_by_effector.len() > 1 {
            for (effector, cm) in &self.confusion_by_effector {
                let _ = writeln!(out);
                write_confusion(&mut out, &format!("confusion matrix, {effector} only"), cm);
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:<10} {:>10} {:>9} {:>8}", "group", "decoder", "lambda", "nonzero", "vectors");
        for g in &self.models {
            for d in &g.decoders {
                let _ = writeln!(
                    out,
                    "{:<12} {:<10} {:>10.3e} {:>9} {:>8}",
                    g.group, d.material, d.lambda, d.n_nonzero, g.n_training_vectors
                );
            }
        }
        out
    }
}
