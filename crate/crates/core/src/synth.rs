//! Synthetic touch trials: texture harmonics keyed to drum revolutions plus
//! band-shaped noise, scaled by load.
//!
//! A texture with `s` ridges per revolution excites `s * rpm / 60` Hz, so the
//! harmonic part moves with speed while the noise spectrum does not.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Effector, Recording, TrialMeta, AXES};

pub const N_BANDS: usize = 10;
pub const BAND_WIDTH_HZ: f64 = 10.0;

/// Relative gain of each axis; rotational axes carry 20% of the linear ones.
pub const AXIS_GAIN: [f64; AXES] = [1.0, 0.8, 0.6, 0.2, 0.16, 0.12];

/// Load at which material amplitudes are stated.
pub const REFERENCE_LOAD_N: f64 = 0.98;

/// Peak relative gain jitter between participants.
const PARTICIPANT_JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialComponent {
    /// Cycles per drum revolution.
    pub spatial_freq: f64,
    /// m/s^2 at the reference load.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub label: String,
    pub spatial_components: Vec<SpatialComponent>,
    /// Noise variance carried by each 10 Hz band at the reference load.
    pub noise_profile: [f64; N_BANDS],
    /// Amplitude grows as `(load / REFERENCE_LOAD_N)^roughness_exponent`.
    pub roughness_exponent: f64,
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spatial_components.iter().any(|c| !(c.amplitude >= 0.0) || !(c.spatial_freq > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "material '{}' has a negative amplitude or non-positive spatial frequency",
                self.label
            )));
        }
        if self.noise_profile.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "material '{}' has a negative noise band",
                self.label
            )));
        }
        if !self.roughness_exponent.is_finite() {
            return Err(Error::InvalidParameter("roughness exponent must be finite".into()));
        }
        Ok(())
    }

    pub fn load_gain(&self, load_n: f64) -> f64 {
        (load_n / REFERENCE_LOAD_N).powf(self.roughness_exponent)
    }

    /// Expected per-band signal variance on a unit-gain axis.
    pub fn expected_band_variance(&self, speed_rpm: f64, load_n: f64) -> [f64; N_BANDS] {
        let g2 = self.load_gain(load_n).powi(2);
        let mut out = self.noise_profile.map(|v| v * g2);
        for c in &self.spatial_components {
            let f = c.spatial_freq * speed_rpm / 60.0;
            let band = (f / BAND_WIDTH_HZ).floor() as usize;
            if band < N_BANDS {
                out[band] += 0.5 * (c.amplitude * c.amplitude) * g2;
            }
        }
        out
    }
}

fn component(spatial_freq: f64, amplitude: f64) -> SpatialComponent {
    SpatialComponent {
        spatial_freq,
        amplitude,
    }
}

/// The seven default materials. `hard` narrows the gap between a material's
/// loud and quiet noise bands.
pub fn default_bank(hard: bool) -> Vec<MaterialSpec> {
    let quiet = if hard { 0.45 } else { 0.1 };
    let profile = |loud: &[usize]| -> [f64; N_BANDS] {
        std::array::from_fn(|k| if loud.contains(&k) { 1.0 } else { quiet })
    };
    let spec = |label: &str, comps: Vec<SpatialComponent>, loud: &[usize], exponent: f64| MaterialSpec {
        label: label.into(),
        spatial_components: comps,
        noise_profile: profile(loud),
        roughness_exponent: exponent,
    };
    vec![
        spec("plastic", vec![component(12.0, 0.3)], &[0, 1], 0.3),
        spec("cork", vec![component(18.0, 0.35), component(35.0, 0.2)], &[1, 2], 0.45),
        spec("wool", vec![component(8.0, 0.3)], &[3, 4], 0.35),
        spec("aluminum", vec![component(40.0, 0.4)], &[7, 8, 9], 0.3),
        spec("paper", vec![component(25.0, 0.3)], &[2, 3, 6, 7], 0.4),
        spec("denim", vec![component(15.0, 0.3), component(30.0, 0.25)], &[4, 5, 6], 0.5),
        spec("cotton", vec![component(10.0, 0.25), component(45.0, 0.2)], &[0, 5, 9], 0.35),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSettings {
    pub speed_rpm: u32,
    pub load_n: f64,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub effector: Effector,
    pub participant: String,
    pub trial: String,
    /// Seeds the participant's per-axis gain jitter.
    pub participant_seed: u64,
}

/// Per-axis gain multipliers for a participant, within ±10%.
pub fn participant_gains(participant_seed: u64) -> [f64; AXES] {
    let mut rng = ChaCha8Rng::seed_from_u64(participant_seed);
    std::array::from_fn(|_| 1.0 + PARTICIPANT_JITTER * rng.random_range(-1.0..1.0))
}

/// White Gaussian noise reshaped so band `k` carries `profile[k]` variance.
fn shaped_noise(rng: &mut ChaCha8Rng, profile: &[f64; N_BANDS], n: usize, fs: f64) -> Vec<f64> {
    if profile.iter().all(|&v| v == 0.0) {
        return vec![0.0; n];
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    // white unit-variance noise spreads evenly over [0, fs/2]
    let share = BAND_WIDTH_HZ / (fs / 2.0);
    for (i, v) in buf.iter_mut().enumerate() {
        let bin = i.min(n - i);
        let f = bin as f64 * fs / n as f64;
        let band = (f / BAND_WIDTH_HZ).floor() as usize;
        let gain = if band < N_BANDS {
            (profile[band] / share).sqrt()
        } else {
            0.0
        };
        *v *= gain;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

pub fn generate_trial(spec: &MaterialSpec, settings: &TrialSettings, seed: u64) -> Result<Recording> {
    spec.validate()?;
    let fs = settings.sample_rate;
    if !(fs > 0.0 && settings.duration_s > 0.0 && settings.load_n > 0.0 && settings.speed_rpm > 0) {
        return Err(Error::InvalidParameter(format!(
            "trial settings must be positive: {settings:?}"
        )));
    }
    let rev_hz = settings.speed_rpm as f64 / 60.0;
    for c in &spec.spatial_components {
        let f = c.spatial_freq * rev_hz;
        if f >= fs / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "material '{}' excites {f} Hz at {} rpm, at or above Nyquist {} Hz",
                spec.label,
                settings.speed_rpm,
                fs / 2.0
            )));
        }
    }
    if BAND_WIDTH_HZ * N_BANDS as f64 > fs / 2.0 && spec.noise_profile.iter().any(|&v| v > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise bands extend past Nyquist {} Hz",
            fs / 2.0
        )));
    }

    let n = (settings.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let load_gain = spec.load_gain(settings.load_n);
    let gains = participant_gains(settings.participant_seed);

    let mut samples = vec![[0.0; AXES]; n];
    for axis in 0..AXES {
        let g = AXIS_GAIN[axis] * gains[axis] * load_gain;
        let phases: Vec<f64> = spec
            .spatial_components
            .iter()
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        let noise = shaped_noise(&mut rng, &spec.noise_profile, n, fs);
        for (i, row) in samples.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let harmonic: f64 = spec
                .spatial_components
                .iter()
                .zip(&phases)
                .map(|(c, ph)| c.amplitude * (2.0 * PI * c.spatial_freq * rev_hz * t + ph).sin())
                .sum();
            row[axis] = g * (harmonic + noise[i]);
        }
    }

    // slow wander of the pressing force, within ±5%
    let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let load_trace = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            settings.load_n
                * (1.0 + 0.03 * (2.0 * PI * 0.13 * t + p1).sin() + 0.02 * (2.0 * PI * 0.31 * t + p2).sin())
        })
        .collect();

    Ok(Recording {
        samples,
        sample_rate: fs,
        load_trace: Some(load_trace),
        meta: TrialMeta {
            material: spec.label.clone(),
            speed_rpm: settings.speed_rpm,
            load_n: settings.load_n,
            effector: settings.effector,
            participant: settings.participant.clone(),
            trial: settings.trial.clone(),
        },
        start_s: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPlan {
    pub participants: usize,
    /// Additional sessions recorded with the pen instead of a finger.
    pub pen_sessions: usize,
    pub materials: Vec<MaterialSpec>,
    pub speeds_rpm: Vec<u32>,
    pub loads_n: Vec<f64>,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for CorpusPlan {
    fn default() -> Self {
        CorpusPlan {
            participants: 6,
            pen_sessions: 0,
            materials: default_bank(false),
            speeds_rpm: vec![30, 60, 120],
            loads_n: vec![0.49, 1.96],
            duration_s: 10.0,
            sample_rate: 200.0,
            seed: 0,
        }
    }
}

impl CorpusPlan {
    pub fn trials_per_session(&self) -> usize {
        self.materials.len() * self.speeds_rpm.len() * self.loads_n.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.participants + self.pen_sessions == 0 {
            return Err(Error::InvalidParameter("plan has no sessions".into()));
        }
        if self.materials.is_empty() || self.speeds_rpm.is_empty() || self.loads_n.is_empty() {
            return Err(Error::InvalidParameter(
                "plan needs at least one material, speed and load".into(),
            ));
        }
        for m in &self.materials {
            m.validate()?;
        }
        Ok(())
    }
}

/// A generated recording with the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrial {
    pub recording: Recording,
    pub seed: u64,
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn mix_seed(parent: u64, child: u64) -> u64 {
    let mut z = parent ^ child.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_corpus(plan: &CorpusPlan) -> Result<Vec<SynthTrial>> {
    plan.validate()?;
    let sessions = (0..plan.participants)
        .map(|p| (format!("p{p:02}"), Effector::Finger))
        .chain((0..plan.pen_sessions).map(|p| (format!("pen{p:02}"), Effector::Pen)));
    let mut out = Vec::with_capacity((plan.participants + plan.pen_sessions) * plan.trials_per_session());
    for (s, (participant, effector)) in sessions.enumerate() {
        let participant_seed = mix_seed(plan.seed, s as u64);
        let mut k = 0u64;
        for spec in &plan.materials {
            for &speed in &plan.speeds_rpm {
                for &load in &plan.loads_n {
                    let seed = mix_seed(participant_seed, k);
                    k += 1;
                    let settings = TrialSettings {
                        speed_rpm: speed,
                        load_n: load,
                        duration_s: plan.duration_s,
                        sample_rate: plan.sample_rate,
                        effector,
                        trial: format!("{participant}_{}_{speed:03}rpm_{load:.2}N", spec.label),
                        participant: participant.clone(),
                        participant_seed,
                    };
                    out.push(SynthTrial {
                        recording: generate_trial(spec, &settings, seed)?,
                        seed,
                    });
                }
            }
        }
    }
    Ok(out)
}
