//! Per-bin spectral and amplitude features.
//!
//! Each 6-axis bin maps to `6 * (n_bands + 2)` values, laid out as one block
//! per axis in axis order: `[band_0 .. band_{n-1}, rms, mean_abs_first_diff]`.
//!
//! Band powers come from a Hann-windowed bin zero-padded to `fft_pad` points;
//! band `k` is the median one-sided periodogram value over grid frequencies in
//! `[k * width, (k + 1) * width)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::signal::{bin_length, Bin, AXES};

/// Smallest standard deviation used when scaling a feature.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Block of one axis.
    pub fn axis_block(&self, axis: usize) -> &[f64] {
        let per = self.0.len() / AXES;
        &self.0[axis * per..(axis + 1) * per]
    }
}

/// Root mean square of a series.
pub fn rms(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidInput("rms of an empty bin".into()));
    }
    Ok((x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt())
}

/// Mean of `|x[i+1] - x[i]|`.
pub fn mean_abs_first_diff(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "first difference needs at least 2 samples, got {}",
            x.len()
        )));
    }
    let total: f64 = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(total / (x.len() - 1) as f64)
}

/// Symmetric Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Reusable featurizer for one sample rate and pipeline configuration.
#[derive(Clone)]
pub struct FeatureExtractor {
    config: PipelineConfig,
    sample_rate: f64,
    bin_len: usize,
    window: Vec<f64>,
    window_power: f64,
    /// Periodogram indices belonging to each band.
    bands: Vec<Vec<usize>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("config", &self.config)
            .field("sample_rate", &self.sample_rate)
            .field("bin_len", &self.bin_len)
            .finish()
    }
}

impl FeatureExtractor {
    pub fn new(config: &PipelineConfig, sample_rate: f64) -> Result<Self> {
        config.validate()?;
        let top = config.n_bands as f64 * config.band_width_hz;
        if !(sample_rate / 2.0 >= top) {
            return Err(Error::InvalidParameter(format!(
                "sample rate {sample_rate} Hz puts Nyquist below the top band edge {top} Hz"
            )));
        }
        let bin_len = bin_length(config.bin_duration_s, sample_rate);
        if bin_len < 2 {
            return Err(Error::InvalidParameter(format!(
                "bin of {} s at {sample_rate} Hz holds fewer than 2 samples",
                config.bin_duration_s
            )));
        }
        if config.fft_pad < bin_len {
            return Err(Error::InvalidParameter(format!(
                "fft pad {} shorter than the {bin_len}-sample bin",
                config.fft_pad
            )));
        }
        let resolution = sample_rate / config.fft_pad as f64;
        let bands: Vec<Vec<usize>> = (0..config.n_bands)
            .map(|k| {
                let lo = k as f64 * config.band_width_hz;
                let hi = lo + config.band_width_hz;
                (0..=config.fft_pad / 2)
                    .filter(|&i| {
                        let f = i as f64 * resolution;
                        f >= lo && f < hi
                    })
                    .collect()
            })
            .collect();
        if let Some(k) = bands.iter().position(Vec::is_empty) {
            return Err(Error::InvalidParameter(format!(
                "band {k} contains no spectrum points; increase fft_pad"
            )));
        }
        let window = hann(bin_len);
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_pad);
        Ok(FeatureExtractor {
            config: config.clone(),
            sample_rate,
            bin_len,
            window,
            window_power,
            bands,
            fft,
        })
    }

    pub fn bin_len(&self) -> usize {
        self.bin_len
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// One-sided periodogram of the windowed, zero-padded bin.
    pub fn periodogram(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let pad = self.config.fft_pad;
        let mut buf: Vec<Complex<f64>> = x
            .iter()
            .zip(&self.window)
            .map(|(v, w)| Complex::new(v * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(pad)
            .collect();
        self.fft.process(&mut buf);
        let scale = 1.0 / (self.sample_rate * self.window_power);
        Ok((0..=pad / 2)
            .map(|i| {
                let p = buf[i].norm_sqr() * scale;
                if i == 0 || 2 * i == pad {
                    p
                } else {
                    2.0 * p
                }
            })
            .collect())
    }

    pub fn band_median_powers(&self, x: &[f64]) -> Result<Vec<f64>> {
        let power = self.periodogram(x)?;
        Ok(self
            .bands
            .iter()
            .map(|idx| {
                let mut vals: Vec<f64> = idx.iter().map(|&i| power[i]).collect();
                median(&mut vals)
            })
            .collect())
    }

    pub fn featurize_bin(&self, bin: &Bin) -> Result<FeatureVector> {
        self.check_len(bin.samples.len())?;
        let mut values = Vec::with_capacity(self.feature_dim());
        for axis in 0..AXES {
            let series = bin.axis(axis);
            values.extend(self.band_median_powers(&series)?);
            values.push(rms(&series)?);
            values.push(mean_abs_first_diff(&series)?);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature in bin starting at {} s",
                bin.start_s
            )));
        }
        Ok(FeatureVector(values))
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.bin_len {
            return Err(Error::InvalidInput(format!(
                "bin has {n} samples, features are defined on full {}-sample bins",
                self.bin_len
            )));
        }
        Ok(())
    }
}

/// Band medians with the default pipeline constants.
pub fn band_median_powers(x: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    FeatureExtractor::new(&PipelineConfig::default(), sample_rate)?.band_median_powers(x)
}

/// The 72-value descriptor with the default pipeline constants.
pub fn featurize_bin(bin: &Bin, sample_rate: f64) -> Result<FeatureVector> {
    FeatureExtractor::new(&PipelineConfig::default(), sample_rate)?.featurize_bin(bin)
}

/// Per-dimension z-scoring statistics fitted on training vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn fit(xs: &[FeatureVector]) -> Result<Self> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Empty("cannot fit standardization on no vectors".into()))?;
        let dim = first.len();
        if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
            return Err(Error::InvalidInput(format!(
                "feature dimension mismatch: {} vs {dim}",
                bad.len()
            )));
        }
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x.as_slice()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x.as_slice()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt().max(STD_FLOOR))
            .collect();
        Ok(StandardizationStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Z-scores `x`; dimensions whose training spread hit the floor map to 0.
    pub fn apply(&self, x: &FeatureVector) -> Result<FeatureVector> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "feature dimension {} does not match standardization dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(FeatureVector(
            x.as_slice()
                .iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(v, (m, s))| if *s <= STD_FLOOR { 0.0 } else { (v - m) / s })
                .collect(),
        ))
    }
}

pub fn fit_standardization(xs: &[FeatureVector]) -> Result<StandardizationStats> {
    StandardizationStats::fit(xs)
}

pub fn apply_standardization(
    stats: &StandardizationStats,
    x: &FeatureVector,
) -> Result<FeatureVector> {
    stats.apply(x)
}
