//! Subcommand implementations. Each returns the text to print on stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vibrotact::eval::{evaluate, train_models, validate_corpus, window_features};
use vibrotact::features::FeatureExtractor;
use vibrotact::io::{
    read_anova_csv, read_corpus, read_json, write_corpus, write_feature_csv, write_json, FeatureRow, ModelFile,
};
use vibrotact::signal::highpass_filter_with_order;
use vibrotact::synth::{default_bank, generate_corpus, CorpusPlan};
use vibrotact::{Error, EvaluationReport, Recording, Result, TrainedModels};

use crate::config::RunConfig;

/// Evaluation report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub run_config: serde_json::Value,
    pub report: EvaluationReport,
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("no {what} given (flag or config file)")))
}

pub struct SynthArgs {
    pub participants: usize,
    pub pen_sessions: usize,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub hard: bool,
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<String> {
    let out = required(&cfg.corpus_dir, "corpus directory")?;
    let plan = CorpusPlan {
        participants: args.participants,
        pen_sessions: args.pen_sessions,
        materials: default_bank(args.hard),
        duration_s: args.duration_s,
        sample_rate: args.sample_rate,
        seed: cfg.seed,
        ..CorpusPlan::default()
    };
    let trials: Vec<(Recording, Option<u64>)> = generate_corpus(&plan)?
        .into_iter()
        .map(|t| (t.recording, Some(t.seed)))
        .collect();
    write_corpus(out, &trials, Some(plan.seed))?;
    Ok(format!("wrote {} trials to {}\n", trials.len(), out.display()))
}

fn load_corpus(cfg: &RunConfig) -> Result<Vec<Recording>> {
    read_corpus(required(&cfg.corpus_dir, "corpus directory")?)
}

pub fn featurize(cfg: &RunConfig, out: &Path, window: Option<vibrotact::Window>) -> Result<String> {
    let corpus = load_corpus(cfg)?;
    let window = window.unwrap_or(cfg.protocol.train_window);
    let pipeline = &cfg.pipeline;
    let mut rows = Vec::new();
    let mut extractor: Option<FeatureExtractor> = None;
    for rec in &corpus {
        if extractor.as_ref().is_none_or(|e| e.sample_rate() != rec.sample_rate) {
            extractor = Some(FeatureExtractor::new(pipeline, rec.sample_rate)?);
        }
        let ex = extractor.as_ref().expect("set above");
        let filtered = highpass_filter_with_order(rec, pipeline.cutoff_hz, pipeline.filter_order)?;
        let (feats, _) = window_features(&filtered, &window, pipeline, ex)?;
        rows.extend(feats.into_iter().enumerate().map(|(k, features)| FeatureRow {
            trial_id: rec.meta.trial.clone(),
            bin_index: k,
            material: rec.meta.material.clone(),
            speed_rpm: rec.meta.speed_rpm,
            load_n: rec.meta.load_n,
            effector: rec.meta.effector,
            features,
        }));
    }
    write_feature_csv(out, pipeline.n_bands, &rows)?;
    Ok(format!(
        "wrote {} feature vectors of dimension {} from window {} to {}\n",
        rows.len(),
        pipeline.feature_dim(),
        window.label(),
        out.display()
    ))
}

pub fn train(cfg: &RunConfig) -> Result<String> {
    let corpus = load_corpus(cfg)?;
    let model_path = required(&cfg.model_file, "model file")?;
    validate_corpus(&corpus, &cfg.protocol)?;
    let held_out = cfg.held_out_speed_rpm;
    let models = train_models(&corpus, &cfg.pipeline, &cfg.decoder, &cfg.protocol, |m| {
        held_out != Some(m.speed_rpm)
    })?;
    let mut out = String::new();
    for g in &models.groups {
        let _ = writeln!(out, "{}: {} training vectors", g.group, g.n_training_vectors);
        for d in &g.ensemble.decoders {
            let _ = writeln!(
                out,
                "  {:<10} lambda {:.3e}  nonzero {:>2}/{}",
                d.material,
                d.lambda,
                d.n_nonzero,
                d.weights.len()
            );
        }
    }
    let file = models.into_model_file(&cfg.pipeline, &cfg.decoder, &cfg.protocol, Some(cfg.provenance()));
    file.save(model_path)?;
    let _ = writeln!(out, "saved model to {}", model_path.display());
    Ok(out)
}

fn text_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("txt")
}

pub fn eval(cfg: &RunConfig) -> Result<String> {
    let corpus = load_corpus(cfg)?;
    let model_path = required(&cfg.model_file, "model file")?;
    let report_path = required(&cfg.report_file, "report file")?;
    let file = ModelFile::load(model_path)?;
    let fs = corpus
        .first()
        .ok_or_else(|| Error::Corpus("corpus is empty".into()))?
        .sample_rate;
    file.check_pipeline(&cfg.pipeline, fs)?;
    if file.protocol.grouping != cfg.protocol.grouping {
        return Err(Error::Provenance(format!(
            "model grouping {:?} differs from requested {:?}",
            file.protocol.grouping, cfg.protocol.grouping
        )));
    }
    let trained_held_out = file
        .run_config
        .as_ref()
        .and_then(|v| v.get("held_out_speed_rpm"))
        .and_then(serde_json::Value::as_u64)
        .map(|v| v as u32);
    if trained_held_out != cfg.held_out_speed_rpm {
        return Err(Error::Provenance(format!(
            "model held out speed {trained_held_out:?}, evaluation requests {:?}",
            cfg.held_out_speed_rpm
        )));
    }
    validate_corpus(&corpus, &cfg.protocol)?;
    let models = TrainedModels::from_model_file(file);
    let held_out = cfg.held_out_speed_rpm;
    let report = evaluate(&corpus, &models, &cfg.pipeline, &cfg.protocol, |m| {
        held_out.is_none_or(|s| s == m.speed_rpm)
    })?;
    let text = report.to_text();
    write_json(
        report_path,
        &ReportFile {
            run_config: cfg.provenance(),
            report,
        },
    )?;
    vibrotact::io::write_atomic(&text_path(report_path), text.as_bytes())?;
    Ok(text)
}

pub fn anova(input: &Path, as_json: bool) -> Result<String> {
    let input = read_anova_csv(input)?;
    let result = input.table.anova()?;
    if as_json {
        return Ok(serde_json::to_string_pretty(&result)? + "\n");
    }
    Ok(result.to_text(&input.factor_a, &input.factor_b))
}

pub fn report(input: &Path) -> Result<String> {
    let file: ReportFile = read_json(input)?;
    Ok(file.report.to_text())
}
