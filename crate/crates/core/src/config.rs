//! Pipeline, decoder and protocol constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants that define the features. They travel with a trained model and
/// must match at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub bin_duration_s: f64,
    pub fft_pad: usize,
    pub n_bands: usize,
    pub band_width_hz: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cutoff_hz: 1.0,
            filter_order: 4,
            bin_duration_s: 0.15,
            fft_pad: 256,
            n_bands: 10,
            band_width_hz: 10.0,
        }
    }
}

impl PipelineConfig {
    /// Features per axis: band powers plus RMS and mean absolute difference.
    pub fn features_per_axis(&self) -> usize {
        self.n_bands + 2
    }

    pub fn feature_dim(&self) -> usize {
        crate::signal::AXES * self.features_per_axis()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.cutoff_hz > 0.0
            && self.filter_order > 0
            && self.bin_duration_s > 0.0
            && self.fft_pad > 0
            && self.n_bands > 0
            && self.band_width_hz > 0.0;
        if !positive {
            return Err(Error::Config(format!(
                "pipeline constants must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            lambda_grid: log_grid(1e-4, 1e1, 11),
            cv_folds: 5,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("lambda grid is empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config(format!(
                "lambda grid must be finite and non-negative: {:?}",
                self.lambda_grid
            )));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config(format!(
                "need at least 2 cross-validation folds, got {}",
                self.cv_folds
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// `n` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// A half-open time range `[start, end)` in seconds from the start of touch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
}

impl Window {
    pub const fn new(start_s: f64, end_s: f64) -> Self {
        Window { start_s, end_s }
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.start_s < other.end_s && other.start_s < self.end_s
    }

    pub fn label(&self) -> String {
        format!("{}-{}s", self.start_s, self.end_s)
    }
}

/// How trials are grouped for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One ensemble per participant (and per effector).
    PerParticipant,
    /// A single ensemble over the whole corpus.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub train_window: Window,
    pub test_windows: Vec<Window>,
    pub grouping: Grouping,
    /// Require the full speed x load x material grid for every group.
    pub strict: bool,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            train_window: Window::new(7.0, 10.0),
            test_windows: (2..=7).map(|end| Window::new(1.0, end as f64)).collect(),
            grouping: Grouping::PerParticipant,
            strict: true,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |w: &Window| {
            if !(w.start_s >= 0.0 && w.start_s < w.end_s && w.end_s.is_finite()) {
                return Err(Error::Config(format!("invalid window {w:?}")));
            }
            Ok(())
        };
        check(&self.train_window)?;
        if self.test_windows.is_empty() {
            return Err(Error::Config("no test windows".into()));
        }
        for w in &self.test_windows {
            check(w)?;
            if w.overlaps(&self.train_window) {
                return Err(Error::Config(format!(
                    "test window {} overlaps training window {}",
                    w.label(),
                    self.train_window.label()
                )));
            }
        }
        Ok(())
    }
}
