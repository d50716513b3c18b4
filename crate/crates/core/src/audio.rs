//! Waveform ingestion, fixed-length windows, noise augmentation and label
//! standardization.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifest::SpeakerRecord;
use crate::seed::Rng;

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

fn mean_power(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// Decodes a 16-bit linear PCM WAVE file, averaging channels down to mono.
pub fn load_waveform(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Audio {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported encoding ({:?}, {} bits); expected 16-bit PCM",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate {
            path: path.to_path_buf(),
            rate: spec.sample_rate,
        });
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Audio {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f32 = frame.iter().map(|&s| s as f32 / 32768.0).sum();
            sum / channels as f32
        })
        .collect();
    Ok(Waveform::new(samples))
}

/// Writes mono 16-bit PCM at 16 kHz. Samples are clipped to `[-1, 1]`.
pub fn write_waveform(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &w.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// How a fixed-length window is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Training: random window offset, random split of padding.
    Random,
    /// Evaluation: centered window, centered padding.
    Center,
}

/// Crops or zero-pads to exactly `target_len` samples.
pub fn crop_or_pad(w: &Waveform, target_len: usize, mode: CropMode, rng: &mut Rng) -> Waveform {
    let len = w.len();
    let samples = if len == target_len {
        w.samples.clone()
    } else if len > target_len {
        let slack = len - target_len;
        let offset = match mode {
            CropMode::Random => rng.random_range(0..=slack),
            CropMode::Center => slack / 2,
        };
        w.samples[offset..offset + target_len].to_vec()
    } else {
        let pad = target_len - len;
        let left = match mode {
            CropMode::Random => rng.random_range(0..=pad),
            CropMode::Center => pad / 2,
        };
        let mut out = vec![0.0; target_len];
        out[left..left + len].copy_from_slice(&w.samples);
        out
    };
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

/// Additive-noise augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub p_apply: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            snr_db_min: 5.0,
            snr_db_max: 20.0,
            p_apply: 0.5,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr_db_min.is_finite() && self.snr_db_max.is_finite())
            || self.snr_db_min > self.snr_db_max
        {
            return Err(Error::InvalidArgument(format!(
                "empty SNR range [{}, {}]",
                self.snr_db_min, self.snr_db_max
            )));
        }
        if !(0.0..=1.0).contains(&self.p_apply) {
            return Err(Error::InvalidArgument(format!(
                "p_apply {} outside [0, 1]",
                self.p_apply
            )));
        }
        Ok(())
    }
}

/// Amplitude factor applied to noise of power `noise_power` so that the mix
/// has the requested SNR against a signal of power `signal_power`.
pub fn noise_scale_for_snr(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds a noise clip to `w` at the given SNR and clips to `[-1, 1]`.
///
/// `noise` is looped to cover `w`. Returns `w` unchanged when either the
/// signal or the noise is silent.
pub fn mix_at_snr(w: &Waveform, noise: &[f32], snr_db: f64) -> Waveform {
    let ps = w.power();
    let looped: Vec<f32> = noise.iter().copied().cycle().take(w.len()).collect();
    let pn = mean_power(&looped);
    if ps == 0.0 || pn == 0.0 || looped.len() != w.len() {
        return w.clone();
    }
    let scale = noise_scale_for_snr(ps, pn, snr_db);
    let samples = w
        .samples
        .iter()
        .zip(&looped)
        .map(|(&s, &n)| (s as f64 + scale * n as f64).clamp(-1.0, 1.0) as f32)
        .collect();
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

/// Randomly mixes in environmental noise.
///
/// Returns the augmented waveform and the SNR (dB) that was applied, or
/// `None` when the input was passed through. With an empty `noise_bank`,
/// white Gaussian noise is used.
pub fn augment_noise(
    w: &Waveform,
    noise_bank: &[Waveform],
    cfg: &NoiseConfig,
    rng: &mut Rng,
) -> (Waveform, Option<f64>) {
    if cfg.p_apply <= 0.0 || rng.random::<f64>() >= cfg.p_apply {
        return (w.clone(), None);
    }
    let snr_db = if cfg.snr_db_max > cfg.snr_db_min {
        rng.random_range(cfg.snr_db_min..=cfg.snr_db_max)
    } else {
        cfg.snr_db_min
    };
    let noise: Vec<f32> = if noise_bank.is_empty() {
        (0..w.len())
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v as f32
            })
            .collect()
    } else {
        let clip = &noise_bank[rng.random_range(0..noise_bank.len())];
        if clip.is_empty() {
            return (w.clone(), None);
        }
        let offset = rng.random_range(0..clip.len());
        clip.samples[offset..]
            .iter()
            .chain(clip.samples[..offset].iter())
            .copied()
            .collect()
    };
    if w.power() == 0.0 {
        return (w.clone(), None);
    }
    (mix_at_snr(w, &noise, snr_db), Some(snr_db))
}

/// Training-split mean and standard deviation of the regression targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelStats {
    pub height_mean: f64,
    pub height_std: f64,
    pub age_mean: f64,
    pub age_std: f64,
}

fn population_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Population mean and standard deviation (divide by N) of height and age.
pub fn fit_label_stats(records: &[SpeakerRecord]) -> Result<LabelStats> {
    if records.is_empty() {
        return Err(Error::Empty("no records to fit label statistics".into()));
    }
    let mut heights = Vec::with_capacity(records.len());
    let mut ages = Vec::with_capacity(records.len());
    for r in records {
        match (r.height_cm, r.age_years) {
            (Some(h), Some(a)) => {
                heights.push(h);
                ages.push(a);
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "record {} has no height/age labels",
                    r.utterance
                )))
            }
        }
    }
    let (height_mean, height_std) = population_moments(&heights);
    let (age_mean, age_std) = population_moments(&ages);
    if !(height_std > 0.0) {
        return Err(Error::ZeroVariance { label: "height" });
    }
    if !(age_std > 0.0) {
        return Err(Error::ZeroVariance { label: "age" });
    }
    Ok(LabelStats {
        height_mean,
        height_std,
        age_mean,
        age_std,
    })
}

pub fn standardize(value: f64, mean: f64, std: f64) -> Result<f64> {
    if !(std > 0.0) {
        return Err(Error::InvalidArgument(format!("std must be > 0, got {std}")));
    }
    Ok((value - mean) / std)
}

pub fn destandardize(z: f64, mean: f64, std: f64) -> Result<f64> {
    if !(std > 0.0) {
        return Err(Error::InvalidArgument(format!("std must be > 0, got {std}")));
    }
    Ok(z * std + mean)
}

impl LabelStats {
    pub fn standardize_height(&self, cm: f64) -> f64 {
        (cm - self.height_mean) / self.height_std
    }

    pub fn standardize_age(&self, years: f64) -> f64 {
        (years - self.age_mean) / self.age_std
    }

    pub fn height_cm(&self, z: f64) -> f64 {
        z * self.height_std + self.height_mean
    }

    pub fn age_years(&self, z: f64) -> f64 {
        z * self.age_std + self.age_mean
    }
}
