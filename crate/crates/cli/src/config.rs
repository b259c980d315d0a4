//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use vibrotact::config::{DecoderConfig, Grouping, PipelineConfig, ProtocolConfig, Window};
use vibrotact::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report_file: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub decoder: DecoderConfig,
    pub protocol: ProtocolConfig,
    /// Speed excluded from training and used alone for testing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_speed_rpm: Option<u32>,
    /// Authoritative seed; copied into the protocol.
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.decoder.validate()?;
        self.protocol.validate()
    }

    /// The configuration with paths removed, so that outputs written to
    /// different directories stay byte-identical.
    pub fn provenance(&self) -> serde_json::Value {
        let mut clean = self.clone();
        clean.corpus_dir = None;
        clean.model_file = None;
        clean.report_file = None;
        serde_json::to_value(clean).expect("run config serializes")
    }
}

pub fn parse_window(s: &str) -> std::result::Result<Window, String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected START,END in seconds, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number"));
    Ok(Window::new(parse(a)?, parse(b)?))
}

/// Flags shared by every command that touches the pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// High-pass cutoff in Hz.
    #[arg(long, global = true)]
    pub cutoff_hz: Option<f64>,
    #[arg(long, global = true)]
    pub bin_duration_s: Option<f64>,
    #[arg(long, global = true)]
    pub fft_pad: Option<usize>,
    #[arg(long, global = true)]
    pub cv_folds: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Comma-separated regularization strengths.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    /// Training window as START,END seconds.
    #[arg(long, global = true, value_parser = parse_window)]
    pub train_window: Option<Window>,
    /// Test window as START,END seconds; repeat for several.
    #[arg(long = "test-window", global = true, value_parser = parse_window)]
    pub test_windows: Vec<Window>,
    /// One ensemble for the whole corpus instead of one per participant.
    #[arg(long, global = true)]
    pub pooled: bool,
    /// Accept corpora with missing speed/load/material cells.
    #[arg(long, global = true)]
    pub relaxed: bool,
    /// Train without this speed and test on it alone.
    #[arg(long, global = true)]
    pub hold_out_speed: Option<u32>,
}

impl ConfigFlags {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.cutoff_hz {
            cfg.pipeline.cutoff_hz = v;
        }
        if let Some(v) = self.bin_duration_s {
            cfg.pipeline.bin_duration_s = v;
        }
        if let Some(v) = self.fft_pad {
            cfg.pipeline.fft_pad = v;
        }
        if let Some(v) = self.cv_folds {
            cfg.decoder.cv_folds = v;
        }
        if let Some(v) = self.tol {
            cfg.decoder.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.decoder.max_iter = v;
        }
        if let Some(v) = &self.lambda {
            cfg.decoder.lambda_grid = v.clone();
        }
        if let Some(v) = self.train_window {
            cfg.protocol.train_window = v;
        }
        if !self.test_windows.is_empty() {
            cfg.protocol.test_windows = self.test_windows.clone();
        }
        if self.pooled {
            cfg.protocol.grouping = Grouping::Pooled;
        }
        if self.relaxed {
            cfg.protocol.strict = false;
        }
        if self.hold_out_speed.is_some() {
            cfg.held_out_speed_rpm = self.hold_out_speed;
        }
        cfg.protocol.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}
