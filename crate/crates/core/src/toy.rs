//! Synthetic corpus whose labels are functions of a per-speaker pitch.
//!
//! Each speaker owns a fundamental frequency and a resonance; every utterance
//! is a harmonic tone at that pitch with random phases, slow amplitude
//! modulation and additive noise, passed through the speaker's resonator.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::audio::{write_waveform, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::manifest::{write_manifest, Gender, ManifestKind, SpeakerRecord};
use crate::seed::Rng;

pub const F0_MIN: f64 = 80.0;
pub const F0_MAX: f64 = 300.0;
/// Smallest pitch difference between two speakers of one corpus.
pub const F0_MIN_GAP: f64 = 2.0;
const HARMONIC_CEILING_HZ: f64 = 4000.0;
const RESONANCE_BANDWIDTH_HZ: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyLabels {
    pub height_cm: f64,
    pub age_years: f64,
    pub gender: Gender,
}

pub fn toy_labels(f0: f64) -> ToyLabels {
    ToyLabels {
        height_cm: 205.0 - 0.25 * f0,
        age_years: 20.0 + 0.15 * f0,
        gender: if f0 < 190.0 { Gender::Male } else { Gender::Female },
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpusConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub utterance_samples: usize,
    /// Noise standard deviation relative to the clean signal's RMS.
    pub noise_level: f64,
    /// Speaker ids are `{prefix}{index:03}`.
    pub speaker_prefix: String,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utts_per_speaker: 5,
            utterance_samples: SAMPLE_RATE as usize,
            noise_level: 0.05,
            speaker_prefix: "spk".into(),
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let max_speakers = ((F0_MAX - F0_MIN) / F0_MIN_GAP) as usize;
        if self.n_speakers < 4 || self.n_speakers > max_speakers {
            return Err(Error::InvalidArgument(format!(
                "toy corpus needs 4..={max_speakers} speakers, got {}",
                self.n_speakers
            )));
        }
        if self.utts_per_speaker == 0 || self.utterance_samples == 0 {
            return Err(Error::InvalidArgument("toy utterances must be non-empty".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise level {}", self.noise_level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpeaker {
    pub id: String,
    pub f0: f64,
    pub resonance_hz: f64,
    pub labels: ToyLabels,
}

/// Pitches are stratified over `[F0_MIN, F0_MAX)` so that neighbours are at
/// least `F0_MIN_GAP` apart, then shuffled across speaker ids.
pub fn draw_speakers(n: usize, prefix: &str, rng: &mut Rng) -> Vec<ToySpeaker> {
    let width = (F0_MAX - F0_MIN) / n as f64;
    let mut f0s: Vec<f64> = (0..n)
        .map(|k| F0_MIN + k as f64 * width + rng.random::<f64>() * (width - F0_MIN_GAP))
        .collect();
    f0s.shuffle(rng);
    f0s.into_iter()
        .enumerate()
        .map(|(i, f0)| ToySpeaker {
            id: format!("{prefix}{i:03}"),
            f0,
            resonance_hz: 500.0 + 3.0 * f0 + rng.random_range(-50.0..50.0),
            labels: toy_labels(f0),
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

pub fn synthesize_utterance(speaker: &ToySpeaker, samples: usize, noise_level: f64, rng: &mut Rng) -> Waveform {
    let fs = SAMPLE_RATE as f64;
    let harmonics = (HARMONIC_CEILING_HZ / speaker.f0).floor().max(1.0) as usize;
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mod_rate = rng.random_range(2.0..6.0);
    let mod_depth = rng.random_range(0.2..0.5);
    let mod_phase = rng.random_range(0.0..2.0 * PI);
    let gain = rng.random_range(0.3..0.6);

    let tone: Vec<f64> = (0..samples)
        .map(|n| {
            let t = n as f64 / fs;
            (0..harmonics)
                .map(|k| (2.0 * PI * (k + 1) as f64 * speaker.f0 * t + phases[k]).sin() / (k + 1) as f64)
                .sum()
        })
        .collect();

    let r = (-PI * RESONANCE_BANDWIDTH_HZ / fs).exp();
    let a1 = 2.0 * r * (2.0 * PI * speaker.resonance_hz / fs).cos();
    let a2 = -r * r;
    let mut resonant = vec![0.0; samples];
    for n in 0..samples {
        let y1 = if n >= 1 { resonant[n - 1] } else { 0.0 };
        let y2 = if n >= 2 { resonant[n - 2] } else { 0.0 };
        resonant[n] = (1.0 - r) * tone[n] + a1 * y1 + a2 * y2;
    }

    let (rt, rr) = (rms(&tone).max(1e-12), rms(&resonant).max(1e-12));
    let mut clean: Vec<f64> = (0..samples)
        .map(|n| {
            let t = n as f64 / fs;
            let env = 1.0 + mod_depth * (2.0 * PI * mod_rate * t + mod_phase).sin();
            env * (tone[n] / rt + resonant[n] / rr)
        })
        .collect();
    let sigma = noise_level * rms(&clean);
    for v in clean.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sigma * z;
    }
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    Waveform::new(clean.iter().map(|v| (gain * v / peak) as f32).collect())
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub labeled_manifest: PathBuf,
    pub unlabeled_manifest: PathBuf,
    pub speakers: Vec<ToySpeaker>,
    /// Fully labeled records, speaker-major.
    pub records: Vec<SpeakerRecord>,
}

/// Writes `wav/*.wav`, `labeled.csv` and `unlabeled.csv` under `out_dir`.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig, out_dir: &Path, rng: &mut Rng) -> Result<ToyCorpus> {
    cfg.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let speakers = draw_speakers(cfg.n_speakers, &cfg.speaker_prefix, rng);

    let mut jobs = Vec::new();
    for s in &speakers {
        for u in 0..cfg.utts_per_speaker {
            jobs.push((s, u, rng.random::<u64>()));
        }
    }
    let records = jobs
        .par_iter()
        .map(|&(s, u, seed)| {
            let mut local: Rng = rand::SeedableRng::seed_from_u64(seed);
            let wave = synthesize_utterance(s, cfg.utterance_samples, cfg.noise_level, &mut local);
            let rel = format!("wav/{}_{u:02}.wav", s.id);
            let path = out_dir.join(&rel);
            write_waveform(&path, &wave)?;
            Ok(SpeakerRecord {
                utterance: rel,
                path,
                speaker_id: s.id.clone(),
                gender: Some(s.labels.gender),
                height_cm: Some(s.labels.height_cm),
                age_years: Some(s.labels.age_years),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let labeled_manifest = out_dir.join("labeled.csv");
    let unlabeled_manifest = out_dir.join("unlabeled.csv");
    write_manifest(&labeled_manifest, &records, ManifestKind::Labeled)?;
    write_manifest(&unlabeled_manifest, &records, ManifestKind::Unlabeled)?;
    Ok(ToyCorpus {
        labeled_manifest,
        unlabeled_manifest,
        speakers,
        records,
    })
}
