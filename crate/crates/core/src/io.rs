//! On-disk formats: recording CSV + JSON sidecar, corpus manifest, feature
//! CSV and the JSON model file. All writers go through a temp file and a
//! rename so readers never see partial output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DecoderConfig, PipelineConfig, ProtocolConfig};
use crate::decoder::DecoderEnsemble;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::signal::{Effector, Recording, TrialMeta, AXES, AXIS_NAMES};
use crate::stats::AnovaTable;

pub const RECORDING_HEADER: [&str; 8] = ["t", "ax", "ay", "az", "aroll", "apitch", "ayaw", "load"];
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Recording CSV body.
pub fn recording_csv(rec: &Recording) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::InvalidInput(format!("csv encoding failed: {e}"));
    w.write_record(RECORDING_HEADER).map_err(io_err)?;
    for (i, row) in rec.samples.iter().enumerate() {
        let mut fields = Vec::with_capacity(8);
        fields.push((rec.start_s + i as f64 / rec.sample_rate).to_string());
        fields.extend(row.iter().map(|v| v.to_string()));
        fields.push(
            rec.load_trace
                .as_ref()
                .map(|l| l[i].to_string())
                .unwrap_or_default(),
        );
        w.write_record(&fields).map_err(io_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv encoding failed: {e}")))
}

/// Writes `<trial>.csv` and `<trial>.json` into `dir`; returns the CSV name.
pub fn write_recording(dir: &Path, rec: &Recording) -> Result<String> {
    let csv_name = format!("{}.csv", rec.meta.trial);
    write_atomic(&dir.join(&csv_name), &recording_csv(rec)?)?;
    write_json(&dir.join(format!("{}.json", rec.meta.trial)), &rec.meta)?;
    Ok(csv_name)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a recording CSV with its metadata. The sample rate is inferred from
/// the time column, which must be uniformly spaced.
pub fn read_recording(csv_path: &Path, meta: TrialMeta) -> Result<Recording> {
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(csv_path, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != RECORDING_HEADER {
        return Err(parse_err(
            csv_path,
            1,
            format!("expected header {}", RECORDING_HEADER.join(",")),
        ));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut load = Vec::new();
    let mut has_load = true;
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| parse_err(csv_path, line, e.to_string()))?;
        if record.len() != RECORDING_HEADER.len() {
            return Err(parse_err(
                csv_path,
                line,
                format!("expected 8 fields, found {}", record.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|_| {
                parse_err(
                    csv_path,
                    line,
                    format!("column '{}' is not a number: '{}'", RECORDING_HEADER[i], &record[i]),
                )
            })
        };
        times.push(num(0)?);
        let mut row = [0.0; AXES];
        for (a, v) in row.iter_mut().enumerate() {
            *v = num(a + 1)?;
        }
        samples.push(row);
        if record[7].trim().is_empty() {
            has_load = false;
        } else {
            load.push(num(7)?);
        }
    }
    if times.len() < 2 {
        return Err(parse_err(csv_path, 2, "recording needs at least 2 samples"));
    }
    let span = times[times.len() - 1] - times[0];
    if !(span > 0.0) {
        return Err(parse_err(csv_path, 2, "time column must increase"));
    }
    let dt = span / (times.len() - 1) as f64;
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) / dt - 1.0).abs() > 1e-3 {
            return Err(parse_err(
                csv_path,
                k + 3,
                "time column is not uniformly sampled",
            ));
        }
    }
    let sample_rate = ((1.0 / dt) * 1e6).round() / 1e6;
    let rec = Recording::new(samples, sample_rate, has_load.then_some(load), meta)?;
    Ok(rec)
}

/// Observations read from a three-column CSV, with the factor names taken
/// from its header.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaInput {
    pub factor_a: String,
    pub factor_b: String,
    pub table: AnovaTable,
}

/// Reads `(factor_a, factor_b, value)` rows after one header line.
pub fn read_anova_csv(path: &Path) -> Result<AnovaInput> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.len() != 3 {
        return Err(parse_err(path, 1, "expected header factor_a,factor_b,value"));
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        if record.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, found {}", record.len())));
        }
        let value: f64 = record[2]
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(path, line, format!("value is not a finite number: '{}'", &record[2])))?;
        rows.push((record[0].trim().to_string(), record[1].trim().to_string(), value));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, "no observations"));
    }
    Ok(AnovaInput {
        factor_a: header[0].trim().to_string(),
        factor_b: header[1].trim().to_string(),
        table: AnovaTable::from_observations(rows),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trial: String,
    pub file: String,
    pub meta: TrialMeta,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub sample_rate: f64,
    pub duration_s: f64,
    pub plan_seed: Option<u64>,
    pub trials: Vec<ManifestEntry>,
}

/// Writes each recording plus a manifest listing them.
pub fn write_corpus(
    dir: &Path,
    trials: &[(Recording, Option<u64>)],
    plan_seed: Option<u64>,
) -> Result<CorpusManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(trials.len());
    for (rec, seed) in trials {
        let file = write_recording(dir, rec)?;
        entries.push(ManifestEntry {
            trial: rec.meta.trial.clone(),
            file,
            meta: rec.meta.clone(),
            seed: *seed,
        });
    }
    let manifest = CorpusManifest {
        sample_rate: trials.first().map_or(0.0, |t| t.0.sample_rate),
        duration_s: trials.first().map_or(0.0, |t| t.0.duration_s()),
        plan_seed,
        trials: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Loads a corpus directory. Uses the manifest when present, otherwise every
/// `*.json` sidecar with a matching `*.csv`, in file-name order.
pub fn read_corpus(dir: &Path) -> Result<Vec<Recording>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let manifest: CorpusManifest = read_json(&manifest_path)?;
        return manifest
            .trials
            .into_iter()
            .map(|e| read_recording(&dir.join(&e.file), e.meta))
            .collect();
    }
    let mut sidecars: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| p.with_extension("csv").exists())
        .collect();
    sidecars.sort();
    if sidecars.is_empty() {
        return Err(Error::Corpus(format!("no recordings found in {}", dir.display())));
    }
    sidecars
        .iter()
        .map(|p| read_recording(&p.with_extension("csv"), read_json(p)?))
        .collect()
}

/// One row of the exported feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub trial_id: String,
    pub bin_index: usize,
    pub material: String,
    pub speed_rpm: u32,
    pub load_n: f64,
    pub effector: Effector,
    pub features: FeatureVector,
}

pub fn feature_columns(n_bands: usize) -> Vec<String> {
    let mut cols = Vec::new();
    for axis in AXIS_NAMES {
        for k in 0..n_bands {
            cols.push(format!("{axis}_band{k}"));
        }
        cols.push(format!("{axis}_rms"));
        cols.push(format!("{axis}_mad"));
    }
    cols
}

pub fn write_feature_csv(path: &Path, n_bands: usize, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| Error::InvalidInput(format!("csv encoding failed: {e}"));
    let mut header = feature_columns(n_bands);
    header.extend(
        ["trial_id", "bin_index", "material", "speed_rpm", "load_n", "effector"].map(String::from),
    );
    w.write_record(&header).map_err(enc)?;
    for r in rows {
        let mut fields: Vec<String> = r.features.as_slice().iter().map(|v| v.to_string()).collect();
        fields.extend([
            r.trial_id.clone(),
            r.bin_index.to_string(),
            r.material.clone(),
            r.speed_rpm.to_string(),
            r.load_n.to_string(),
            r.effector.to_string(),
        ]);
        w.write_record(&fields).map_err(enc)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv encoding failed: {e}")))?;
    write_atomic(path, &bytes)
}

/// Ensemble trained for one participant (or the pooled corpus).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub group: String,
    pub n_training_vectors: usize,
    pub ensemble: DecoderEnsemble,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Trained decoders together with the constants that produced their features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub sample_rate: f64,
    pub pipeline: PipelineConfig,
    pub decoder: DecoderConfig,
    pub protocol: ProtocolConfig,
    /// Earliest start and latest end of the training bins, seconds.
    pub train_extent_s: [f64; 2],
    /// Free-form run configuration recorded by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
    pub groups: Vec<GroupModel>,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: ModelFile = read_json(path)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Provenance(format!(
                "model format {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        Ok(model)
    }

    /// Fails unless the feature-defining constants match exactly.
    pub fn check_pipeline(&self, current: &PipelineConfig, sample_rate: f64) -> Result<()> {
        if &self.pipeline != current {
            return Err(Error::Provenance(format!(
                "model was trained with {:?}, current pipeline is {:?}",
                self.pipeline, current
            )));
        }
        if self.sample_rate != sample_rate {
            return Err(Error::Provenance(format!(
                "model was trained at {} Hz, corpus is sampled at {sample_rate} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }
}
