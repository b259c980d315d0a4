//! Raw trial ingestion, zero-phase high-pass filtering and 150 ms binning.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of accelerometer channels.
pub const AXES: usize = 6;

/// Channel names in storage order.
pub const AXIS_NAMES: [&str; AXES] = ["x", "y", "z", "roll", "pitch", "yaw"];

/// Highest analysed frequency; the sample rate must put Nyquist above it.
pub const MAX_ANALYSED_HZ: f64 = 100.0;

/// One time step of 6-axis acceleration.
pub type Sample = [f64; AXES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effector {
    Finger,
    Pen,
}

impl fmt::Display for Effector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Effector::Finger => f.write_str("finger"),
            Effector::Pen => f.write_str("pen"),
        }
    }
}

impl std::str::FromStr for Effector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finger" => Ok(Effector::Finger),
            "pen" => Ok(Effector::Pen),
            other => Err(Error::InvalidInput(format!("unknown effector '{other}'"))),
        }
    }
}

/// Trial metadata, serialized verbatim as the JSON sidecar of a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub material: String,
    pub speed_rpm: u32,
    pub load_n: f64,
    pub effector: Effector,
    pub participant: String,
    pub trial: String,
}

/// A single touch trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Vec<Sample>,
    pub sample_rate: f64,
    pub load_trace: Option<Vec<f64>>,
    pub meta: TrialMeta,
    /// Time of the first sample relative to the start of the touch. Zero for
    /// whole trials, the window start for slices.
    pub start_s: f64,
}

impl Recording {
    /// Builds a whole-trial recording and checks the ingestion invariants.
    pub fn new(
        samples: Vec<Sample>,
        sample_rate: f64,
        load_trace: Option<Vec<f64>>,
        meta: TrialMeta,
    ) -> Result<Self> {
        let rec = Recording {
            samples,
            sample_rate,
            load_trace,
            meta,
            start_s: 0.0,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        // the top band is half-open, so Nyquist may sit exactly on its upper edge
        if !(self.sample_rate.is_finite() && self.sample_rate >= 2.0 * MAX_ANALYSED_HZ) {
            return Err(Error::InvalidParameter(format!(
                "sample rate {} Hz must be at least {} Hz",
                self.sample_rate,
                2.0 * MAX_ANALYSED_HZ
            )));
        }
        if (self.samples.len() as f64) < self.sample_rate {
            return Err(Error::InvalidInput(format!(
                "trial {} has {} samples, need at least one second ({})",
                self.meta.trial,
                self.samples.len(),
                self.sample_rate
            )));
        }
        if let Some(load) = &self.load_trace {
            if load.len() != self.samples.len() {
                return Err(Error::InvalidInput(format!(
                    "load trace has {} samples, acceleration has {}",
                    load.len(),
                    self.samples.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[axis]).collect()
    }
}

/// A contiguous 6-axis block of `bin_len` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub start_s: f64,
    pub samples: Vec<Sample>,
}

impl Bin {
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[axis]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSeries {
    pub bins: Vec<Bin>,
    pub bin_len: usize,
    pub bin_duration_s: f64,
    pub sample_rate: f64,
}

impl BinnedSeries {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin_start_times_s(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.start_s).collect()
    }

    /// End time of bin `k`, relative to the start of the touch.
    pub fn bin_end_s(&self, k: usize) -> f64 {
        self.bins[k].start_s + self.bin_len as f64 / self.sample_rate
    }
}

/// Samples per bin at the given rate.
pub fn bin_length(bin_duration_s: f64, sample_rate: f64) -> usize {
    (bin_duration_s * sample_rate).round() as usize
}

/// Butterworth high-pass design discretized with the bilinear transform
/// (cutoff prewarped), stored as second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthHighpass {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate: f64,
    sections: Vec<Biquad>,
}

/// Transposed direct-form II section with `a0 = 1`. First-order sections
/// carry `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// State that produces the steady-state response to a unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

impl ButterworthHighpass {
    pub fn new(order: usize, cutoff_hz: f64, sample_rate: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("filter order must be positive".into()));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample rate {sample_rate} must be positive"
            )));
        }
        if !(cutoff_hz.is_finite() && cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
                sample_rate / 2.0
            )));
        }
        // Prewarped analog cutoff with the bilinear constant folded in (s = (1 - z^-1)/(1 + z^-1)).
        let w = (PI * cutoff_hz / sample_rate).tan();
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for k in 0..order / 2 {
            // s^2 / (s^2 + q w s + w^2), q = 1/Q of the k-th pole pair
            let q = 2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin();
            let a0 = 1.0 + q * w + w * w;
            sections.push(Biquad {
                b: [1.0 / a0, -2.0 / a0, 1.0 / a0],
                a: [1.0, (2.0 * w * w - 2.0) / a0, (1.0 - q * w + w * w) / a0],
            });
        }
        if order % 2 == 1 {
            // s / (s + w)
            let a0 = 1.0 + w;
            sections.push(Biquad {
                b: [1.0 / a0, -1.0 / a0, 0.0],
                a: [1.0, (w - 1.0) / a0, 0.0],
            });
        }
        Ok(ButterworthHighpass {
            order,
            cutoff_hz,
            sample_rate,
            sections,
        })
    }

    /// Closed-form single-pass magnitude |H(f)| of the discretized design.
    pub fn analytic_magnitude(&self, freq_hz: f64) -> f64 {
        let wc = (PI * self.cutoff_hz / self.sample_rate).tan();
        let wf = (PI * freq_hz / self.sample_rate).tan();
        if wf == 0.0 {
            return 0.0;
        }
        1.0 / (1.0 + (wc / wf).powi(2 * self.order as i32)).sqrt()
    }

    /// Magnitude of the forward-backward (zero-phase) application.
    pub fn zero_phase_magnitude(&self, freq_hz: f64) -> f64 {
        self.analytic_magnitude(freq_hz).powi(2)
    }

    /// |H(e^{jw})| evaluated from the section coefficients.
    pub fn coefficient_magnitude(&self, freq_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / self.sample_rate;
        self.sections
            .iter()
            .map(|s| {
                let eval = |c: &[f64; 3]| {
                    let re = c[0] + c[1] * omega.cos() + c[2] * (2.0 * omega).cos();
                    let im = -c[1] * omega.sin() - c[2] * (2.0 * omega).sin();
                    re.hypot(im)
                };
                eval(&s.b) / eval(&s.a)
            })
            .product()
    }

    /// Causal single pass with the given initial section states.
    fn cascade(&self, x: &mut [f64], x0: f64) {
        let mut scale = x0;
        for s in &self.sections {
            let zi = s.step_state();
            s.run(x, [zi[0] * scale, zi[1] * scale]);
            scale *= s.dc_gain();
        }
    }

    /// Forward-backward filtering with odd-reflection padding and step
    /// initial conditions on both passes.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        if n == 1 {
            return vec![0.0];
        }
        let settle = (3.0 * self.sample_rate / self.cutoff_hz).ceil() as usize;
        let pad = settle.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let x0 = ext[0];
        self.cascade(&mut ext, x0);
        ext.reverse();
        let y0 = ext[0];
        self.cascade(&mut ext, y0);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Default design order of the preprocessing filter.
pub const HIGHPASS_ORDER: usize = 4;

/// Zero-phase 4th-order Butterworth high-pass applied to every axis.
pub fn highpass_filter(rec: &Recording, cutoff_hz: f64) -> Result<Recording> {
    highpass_filter_with_order(rec, cutoff_hz, HIGHPASS_ORDER)
}

pub fn highpass_filter_with_order(
    rec: &Recording,
    cutoff_hz: f64,
    order: usize,
) -> Result<Recording> {
    if let Some((i, _)) = rec
        .samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidInput(format!(
            "non-finite sample at row {i} of trial {}",
            rec.meta.trial
        )));
    }
    let filter = ButterworthHighpass::new(order, cutoff_hz, rec.sample_rate)?;
    let mut out = rec.clone();
    for axis in 0..AXES {
        let y = filter.filtfilt(&rec.axis(axis));
        for (row, v) in out.samples.iter_mut().zip(y) {
            row[axis] = v;
        }
    }
    Ok(out)
}

/// Restricts a recording to `[start_s, end_s)`, both measured from the start
/// of the touch.
pub fn slice_window(rec: &Recording, start_s: f64, end_s: f64) -> Result<Recording> {
    let duration = rec.start_s + rec.duration_s();
    let eps = 1e-9;
    if !(start_s.is_finite() && end_s.is_finite())
        || start_s < rec.start_s - eps
        || start_s >= end_s
        || end_s > duration + eps
    {
        return Err(Error::OutOfRange {
            start_s,
            end_s,
            duration_s: duration,
        });
    }
    let first = ((start_s - rec.start_s) * rec.sample_rate).round() as usize;
    let last = (((end_s - rec.start_s) * rec.sample_rate).round() as usize).min(rec.len());
    if first >= last {
        return Err(Error::OutOfRange {
            start_s,
            end_s,
            duration_s: duration,
        });
    }
    Ok(Recording {
        samples: rec.samples[first..last].to_vec(),
        sample_rate: rec.sample_rate,
        load_trace: rec.load_trace.as_ref().map(|l| l[first..last].to_vec()),
        meta: rec.meta.clone(),
        start_s: rec.start_s + first as f64 / rec.sample_rate,
    })
}

/// Cuts a recording into contiguous, non-overlapping bins anchored at its
/// first sample. A trailing partial bin is dropped.
pub fn segment_bins(rec: &Recording, bin_duration_s: f64) -> Result<BinnedSeries> {
    if !(bin_duration_s.is_finite() && bin_duration_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bin duration {bin_duration_s} must be positive"
        )));
    }
    let bin_len = bin_length(bin_duration_s, rec.sample_rate);
    if bin_len == 0 || rec.len() < bin_len {
        return Err(Error::Empty(format!(
            "trial {} has {} samples, shorter than one {bin_len}-sample bin",
            rec.meta.trial,
            rec.len()
        )));
    }
    let bins = rec
        .samples
        .chunks_exact(bin_len)
        .enumerate()
        .map(|(k, chunk)| Bin {
            start_s: rec.start_s + (k * bin_len) as f64 / rec.sample_rate,
            samples: chunk.to_vec(),
        })
        .collect();
    Ok(BinnedSeries {
        bins,
        bin_len,
        bin_duration_s,
        sample_rate: rec.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn meta() -> TrialMeta {
        TrialMeta {
            material: "cork".into(),
            speed_rpm: 60,
            load_n: 0.49,
            effector: Effector::Finger,
            participant: "p0".into(),
            trial: "t0".into(),
        }
    }

    fn recording(n: usize, f: impl Fn(usize, usize) -> f64) -> Recording {
        let samples = (0..n)
            .map(|i| std::array::from_fn(|a| f(i, a)))
            .collect();
        Recording::new(samples, 200.0, None, meta()).unwrap()
    }

    fn tone_amplitude(y: &[f64], freq: f64, fs: f64) -> f64 {
        // least-squares amplitude of a known-frequency tone
        let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, v) in y.iter().enumerate() {
            let ph = 2.0 * PI * freq * i as f64 / fs;
            let (s, c) = ph.sin_cos();
            ss += s * s;
            cc += c * c;
            sc += s * c;
            ys += v * s;
            yc += v * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        a.hypot(b)
    }

    #[test]
    fn dc_is_removed() {
        let rec = recording(2000, |_, _| 5.0);
        let out = highpass_filter(&rec, 1.0).unwrap();
        for row in &out.samples[200..] {
            for v in row {
                assert!(v.abs() <= 1e-3, "{v}");
            }
        }
    }

    #[test]
    fn passband_tone_is_preserved() {
        let rec = recording(2000, |i, _| (2.0 * PI * 50.0 * i as f64 / 200.0).sin());
        let out = highpass_filter(&rec, 1.0).unwrap();
        let y: Vec<f64> = out.axis(0)[200..1800].to_vec();
        let amp = tone_amplitude(&y, 50.0, 200.0);
        assert!((amp - 1.0).abs() <= 0.01, "{amp}");
        let filter = ButterworthHighpass::new(4, 1.0, 200.0).unwrap();
        assert!((filter.zero_phase_magnitude(50.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zeros_stay_zero() {
        let rec = recording(400, |_, _| 0.0);
        let out = highpass_filter(&rec, 1.0).unwrap();
        assert!(out.samples.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_sweep_matches_design_response() {
        let filter = ButterworthHighpass::new(4, 1.0, 200.0).unwrap();
        for &f in &[2.0, 3.0, 5.0, 10.0, 17.0, 33.0, 61.0, 90.0] {
            let rec = recording(2000, |i, _| (2.0 * PI * f * i as f64 / 200.0).sin());
            let out = highpass_filter(&rec, 1.0).unwrap();
            let y: Vec<f64> = out.axis(3)[400..1600].to_vec();
            let amp = tone_amplitude(&y, f, 200.0);
            let expected = filter.zero_phase_magnitude(f);
            assert!((amp / expected - 1.0).abs() < 0.02, "{f} Hz: {amp} vs {expected}");
        }
    }

    #[test]
    fn closed_form_response_matches_coefficients() {
        for order in 1..=6 {
            let filter = ButterworthHighpass::new(order, 1.0, 200.0).unwrap();
            for &f in &[0.3, 1.0, 2.0, 7.5, 50.0, 99.0] {
                let a = filter.analytic_magnitude(f);
                let c = filter.coefficient_magnitude(f);
                assert!((a - c).abs() < 1e-10, "order {order} at {f}: {a} vs {c}");
            }
            // -3 dB at the cutoff
            assert!((filter.analytic_magnitude(1.0) - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_rejects_bad_input() {
        let mut rec = recording(400, |_, _| 1.0);
        assert!(matches!(
            highpass_filter(&rec, 100.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            highpass_filter(&rec, 0.0),
            Err(Error::InvalidParameter(_))
        ));
        rec.samples[17][4] = f64::NAN;
        assert!(matches!(highpass_filter(&rec, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn recording_invariants() {
        let short = vec![[0.0; AXES]; 100];
        assert!(Recording::new(short, 200.0, None, meta()).is_err());
        let ok = vec![[0.0; AXES]; 200];
        assert!(Recording::new(ok.clone(), 150.0, None, meta()).is_err());
        assert!(Recording::new(ok.clone(), 200.0, Some(vec![0.5; 199]), meta()).is_err());
        assert!(Recording::new(ok, 200.0, Some(vec![0.5; 200]), meta()).is_ok());
    }

    #[test]
    fn ten_second_trial_gives_66_bins() {
        let rec = recording(2000, |_, _| 0.0);
        let bins = segment_bins(&rec, 0.15).unwrap();
        assert_eq!(bins.len(), 66);
        assert!(bins.bins.iter().all(|b| b.samples.len() == 30));
        assert_eq!(bins.bin_len, 30);
        assert!((bins.bin_start_times_s()[3] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn single_bin_boundary() {
        let rec = recording(400, |i, _| i as f64);
        let piece = slice_window(&rec, 0.0, 0.15).unwrap();
        assert_eq!(piece.len(), 30);
        assert_eq!(segment_bins(&piece, 0.15).unwrap().len(), 1);
        let tiny = slice_window(&rec, 0.0, 0.1).unwrap();
        assert!(matches!(segment_bins(&tiny, 0.15), Err(Error::Empty(_))));
    }

    #[test]
    fn window_bin_counts() {
        let rec = recording(2000, |i, a| (i * (a + 1)) as f64);
        let expected = [(2.0, 6), (3.0, 13), (4.0, 20), (5.0, 26), (6.0, 33), (7.0, 40)];
        for (end, count) in expected {
            let w = slice_window(&rec, 1.0, end).unwrap();
            let bins = segment_bins(&w, 0.15).unwrap();
            assert_eq!(bins.len(), count, "window [1, {end})");
            assert!((bins.bins[0].start_s - 1.0).abs() < 1e-12);
            assert!(bins.bin_end_s(count - 1) <= end + 1e-12);
        }
        let train = slice_window(&rec, 7.0, 10.0).unwrap();
        assert_eq!(segment_bins(&train, 0.15).unwrap().len(), 20);
    }

    #[test]
    fn slice_preserves_meta_and_rejects_outside() {
        let rec = recording(2000, |i, _| i as f64);
        let w = slice_window(&rec, 1.0, 2.0).unwrap();
        assert_eq!(w.meta, rec.meta);
        assert_eq!(w.samples[0][0], 200.0);
        assert!(matches!(
            slice_window(&rec, 9.0, 10.5),
            Err(Error::OutOfRange { .. })
        ));
        assert!(slice_window(&rec, 2.0, 2.0).is_err());
        assert!(slice_window(&rec, -0.5, 1.0).is_err());
        // nested slices keep the absolute timeline
        let inner = slice_window(&w, 1.5, 2.0).unwrap();
        assert_eq!(inner.samples[0][0], 300.0);
    }

    #[test]
    fn filtering_happens_before_windowing() {
        let rec = recording(2000, |i, a| ((i * 7919 + a * 104729) % 1000) as f64 / 1000.0);
        let filtered = highpass_filter(&rec, 1.0).unwrap();
        let window = slice_window(&filtered, 1.0, 4.0).unwrap();
        let from_window = segment_bins(&window, 0.15).unwrap();
        // the same rows taken directly from the filtered trial
        for (k, bin) in from_window.bins.iter().enumerate() {
            let start = 200 + 30 * k;
            assert_eq!(bin.samples, filtered.samples[start..start + 30].to_vec());
        }
        // filtering an already-cut window is not equivalent
        let cut_then_filtered = highpass_filter(&slice_window(&rec, 0.0, 4.0).unwrap(), 1.0).unwrap();
        assert_ne!(cut_then_filtered.samples[200..], filtered.samples[200..800]);
    }

    proptest! {
        #[test]
        fn bin_count_is_floor(n in 30usize..3000) {
            let rec = Recording {
                samples: vec![[0.0; AXES]; n],
                sample_rate: 200.0,
                load_trace: None,
                meta: meta(),
                start_s: 0.0,
            };
            let bins = segment_bins(&rec, 0.15).unwrap();
            prop_assert_eq!(bins.len(), n / 30);
        }

        #[test]
        fn filter_preserves_shape(n in 200usize..1200, v in -10.0f64..10.0) {
            let rec = recording(n, |i, a| v * ((i + a) as f64).sin());
            let out = highpass_filter(&rec, 1.0).unwrap();
            prop_assert_eq!(out.samples.len(), n);
            prop_assert_eq!(out.meta, rec.meta);
        }
    }
}
