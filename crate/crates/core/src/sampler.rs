//! Speaker-level dev split, supervised epochs, speaker triplets and the mixed
//! supervised/unsupervised step schedule.
//!
//! Every random choice is drawn sequentially from the caller's stream; the
//! per-row work that follows (decode, crop, augment) gets its own seed drawn
//! up front, so it can run in parallel without changing the result.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rayon::prelude::*;

use crate::audio::{augment_noise, crop_or_pad, load_waveform, CropMode, LabelStats, NoiseConfig, Waveform};
use crate::error::{Error, Result};
use crate::manifest::{Gender, SpeakerRecord};
use crate::objectives::ProfileTarget;
use crate::seed::Rng;

/// Splits labeled records by speaker; per gender, `round(fraction * speakers)`
/// speakers go to dev.
pub fn split_dev(
    records: &[SpeakerRecord],
    fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<SpeakerRecord>, Vec<SpeakerRecord>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("dev fraction {fraction} outside [0, 1)")));
    }
    let mut by_gender: BTreeMap<Gender, Vec<String>> = BTreeMap::new();
    let mut speaker_gender: HashMap<&str, Gender> = HashMap::new();
    for r in records {
        let g = r
            .gender
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no gender label", r.utterance)))?;
        match speaker_gender.get(r.speaker_id.as_str()) {
            Some(&prev) if prev != g => {
                return Err(Error::InvalidArgument(format!(
                    "speaker {} labeled with both genders",
                    r.speaker_id
                )))
            }
            Some(_) => {}
            None => {
                speaker_gender.insert(&r.speaker_id, g);
                by_gender.entry(g).or_default().push(r.speaker_id.clone());
            }
        }
    }
    let mut dev_speakers: Vec<String> = Vec::new();
    if fraction > 0.0 {
        for g in [Gender::Male, Gender::Female] {
            let mut spk = by_gender.remove(&g).unwrap_or_default();
            if spk.len() < 2 {
                return Err(Error::Sampler(format!(
                    "dev split needs at least 2 {g} speakers, found {}",
                    spk.len()
                )));
            }
            spk.sort();
            spk.shuffle(rng);
            let take = (fraction * spk.len() as f64).round() as usize;
            if take >= spk.len() {
                return Err(Error::Sampler(format!("dev fraction leaves no {g} training speakers")));
            }
            dev_speakers.extend(spk.into_iter().take(take));
        }
    }
    let (dev, train): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| dev_speakers.contains(&r.speaker_id));
    Ok((train, dev))
}

/// One optimizer step: supervised rows plus the number of triplets to draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedStep {
    pub supervised: Vec<usize>,
    pub triplets: usize,
}

/// Shuffles the supervised set into batches of `batch_size`; each step pairs
/// its supervised batch with `ratio` triplets per supervised row. One plan
/// covers one epoch.
pub fn build_mixed_schedule(
    sup_count: usize,
    batch_size: usize,
    ratio: usize,
    rng: &mut Rng,
) -> Result<Vec<PlannedStep>> {
    if batch_size == 0 || ratio == 0 {
        return Err(Error::InvalidArgument("batch size and ratio must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..sup_count).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|c| PlannedStep {
            supervised: c.to_vec(),
            triplets: ratio * c.len(),
        })
        .collect())
}

/// Thread-safe decoded-audio cache keyed by path.
#[derive(Default)]
pub struct AudioStore {
    cache: Mutex<HashMap<PathBuf, Arc<Waveform>>>,
    bypass: bool,
}

impl AudioStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// A store that decodes on every request.
    pub fn uncached() -> Self {
        Self {
            bypass: true,
            ..Default::default()
        }
    }

    pub fn get(&self, record: &SpeakerRecord) -> Result<Arc<Waveform>> {
        if !self.bypass {
            if let Some(w) = self.cache.lock().expect("audio cache").get(&record.path) {
                return Ok(w.clone());
            }
        }
        let w = Arc::new(load_waveform(&record.path)?);
        if !self.bypass {
            self.cache
                .lock()
                .expect("audio cache")
                .insert(record.path.clone(), w.clone());
        }
        Ok(w)
    }
}

/// Training-time or evaluation-time input preparation.
#[derive(Clone, Copy)]
pub struct Preparation<'a> {
    pub crop_len: usize,
    pub mode: CropMode,
    /// `None` disables augmentation.
    pub noise: Option<(&'a NoiseConfig, &'a [Waveform])>,
}

impl<'a> Preparation<'a> {
    pub fn eval(crop_len: usize) -> Self {
        Self {
            crop_len,
            mode: CropMode::Center,
            noise: None,
        }
    }

    pub fn train(crop_len: usize, noise: &'a NoiseConfig, bank: &'a [Waveform]) -> Self {
        Self {
            crop_len,
            mode: CropMode::Random,
            noise: Some((noise, bank)),
        }
    }

    fn apply(&self, w: &Waveform, seed: u64) -> Vec<f32> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut out = crop_or_pad(w, self.crop_len, self.mode, &mut rng);
        if let Some((cfg, bank)) = self.noise {
            out = augment_noise(&out, bank, cfg, &mut rng).0;
        }
        out.samples
    }
}

fn load_rows(
    records: &[SpeakerRecord],
    rows: &[usize],
    prep: &Preparation<'_>,
    store: &AudioStore,
    rng: &mut Rng,
) -> Result<Vec<Vec<f32>>> {
    let seeds: Vec<u64> = rows.iter().map(|_| rng.random()).collect();
    rows.par_iter()
        .zip(seeds)
        .map(|(&i, seed)| Ok(prep.apply(store.get(&records[i])?.as_ref(), seed)))
        .collect()
}

/// Labeled inputs for one step.
#[derive(Debug, Clone)]
pub struct SupervisedBatch {
    pub rows: Vec<usize>,
    pub waves: Vec<Vec<f32>>,
    pub targets: Vec<ProfileTarget>,
}

pub fn target_for(record: &SpeakerRecord, stats: &LabelStats) -> ProfileTarget {
    ProfileTarget {
        height: record.height_cm.map(|h| stats.standardize_height(h)),
        age: record.age_years.map(|a| stats.standardize_age(a)),
        gender: record.gender.map(Gender::target),
    }
}

/// Loads, crops/pads, augments and labels the given rows.
pub fn sample_supervised_batch(
    records: &[SpeakerRecord],
    rows: &[usize],
    stats: &LabelStats,
    prep: &Preparation<'_>,
    store: &AudioStore,
    rng: &mut Rng,
) -> Result<SupervisedBatch> {
    let waves = load_rows(records, rows, prep, store, rng)?;
    Ok(SupervisedBatch {
        rows: rows.to_vec(),
        waves,
        targets: rows.iter().map(|&i| target_for(&records[i], stats)).collect(),
    })
}

/// Record indices of one triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Draws `(anchor, positive, negative)` utterance triples.
///
/// The anchor speaker is uniform over speakers with at least two utterances;
/// the negative speaker is uniform over all other speakers.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    speakers: Vec<(String, Vec<usize>)>,
    eligible: Vec<usize>,
}

impl TripletSampler {
    pub fn new(records: &[SpeakerRecord]) -> Result<Self> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            map.entry(&r.speaker_id).or_default().push(i);
        }
        if map.len() < 2 {
            return Err(Error::Sampler(format!(
                "triplets need at least 2 speakers, found {}",
                map.len()
            )));
        }
        let speakers: Vec<(String, Vec<usize>)> = map.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let eligible: Vec<usize> = speakers
            .iter()
            .enumerate()
            .filter(|(_, (_, u))| u.len() >= 2)
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::Sampler("no speaker has 2 or more utterances".into()));
        }
        Ok(Self { speakers, eligible })
    }

    pub fn speaker_count(&self) -> usize {
        self.speakers.len()
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible.len()
    }

    pub fn sample(&self, rng: &mut Rng) -> TripletIndex {
        let a_spk = self.eligible[rng.random_range(0..self.eligible.len())];
        let utts = &self.speakers[a_spk].1;
        let pick = sample(rng, utts.len(), 2);
        let mut n_spk = rng.random_range(0..self.speakers.len() - 1);
        if n_spk >= a_spk {
            n_spk += 1;
        }
        let negs = &self.speakers[n_spk].1;
        TripletIndex {
            anchor: utts[pick.index(0)],
            positive: utts[pick.index(1)],
            negative: negs[rng.random_range(0..negs.len())],
        }
    }
}

/// Waveform triples plus the indices they came from.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub index: Vec<TripletIndex>,
    pub anchors: Vec<Vec<f32>>,
    pub positives: Vec<Vec<f32>>,
    pub negatives: Vec<Vec<f32>>,
    pub anchor_speaker_ids: Vec<String>,
    pub negative_speaker_ids: Vec<String>,
}

pub fn sample_triplet_batch(
    sampler: &TripletSampler,
    records: &[SpeakerRecord],
    size: usize,
    prep: &Preparation<'_>,
    store: &AudioStore,
    rng: &mut Rng,
) -> Result<TripletBatch> {
    let index: Vec<TripletIndex> = (0..size).map(|_| sampler.sample(rng)).collect();
    let pick = |f: fn(&TripletIndex) -> usize| index.iter().map(f).collect::<Vec<_>>();
    let anchors = load_rows(records, &pick(|t| t.anchor), prep, store, rng)?;
    let positives = load_rows(records, &pick(|t| t.positive), prep, store, rng)?;
    let negatives = load_rows(records, &pick(|t| t.negative), prep, store, rng)?;
    Ok(TripletBatch {
        anchor_speaker_ids: index.iter().map(|t| records[t.anchor].speaker_id.clone()).collect(),
        negative_speaker_ids: index.iter().map(|t| records[t.negative].speaker_id.clone()).collect(),
        index,
        anchors,
        positives,
        negatives,
    })
}

/// Center-cropped, unaugmented inputs for evaluation.
pub fn load_eval_waves(
    records: &[SpeakerRecord],
    crop_len: usize,
    store: &AudioStore,
) -> Result<Vec<Vec<f32>>> {
    let prep = Preparation::eval(crop_len);
    records
        .par_iter()
        .map(|r| Ok(prep.apply(store.get(r)?.as_ref(), 0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;
    use std::collections::HashSet;

    fn rec(spk: &str, utt: usize, g: Gender) -> SpeakerRecord {
        SpeakerRecord {
            utterance: format!("{spk}_{utt}.wav"),
            path: format!("{spk}_{utt}.wav").into(),
            speaker_id: spk.into(),
            gender: Some(g),
            height_cm: Some(170.0),
            age_years: Some(30.0),
        }
    }

    fn corpus(males: usize, females: usize, utts: usize) -> Vec<SpeakerRecord> {
        let mut out = Vec::new();
        for s in 0..males {
            out.extend((0..utts).map(|u| rec(&format!("m{s:03}"), u, Gender::Male)));
        }
        for s in 0..females {
            out.extend((0..utts).map(|u| rec(&format!("f{s:03}"), u, Gender::Female)));
        }
        out
    }

    fn speakers(r: &[SpeakerRecord]) -> HashSet<String> {
        r.iter().map(|x| x.speaker_id.clone()).collect()
    }

    #[test]
    fn dev_split_is_speaker_level_and_gender_balanced() {
        let all = corpus(100, 100, 3);
        let (train, dev) = split_dev(&all, 0.15, &mut stream(1, "split")).unwrap();
        let dev_spk = speakers(&dev);
        let males = dev_spk.iter().filter(|s| s.starts_with('m')).count();
        assert_eq!((males, dev_spk.len() - males), (15, 15));
        assert!(speakers(&train).is_disjoint(&dev_spk));
        assert_eq!(train.len() + dev.len(), all.len());
        assert_eq!(dev.len(), 30 * 3);
        let (train2, dev2) = split_dev(&all, 0.15, &mut stream(1, "split")).unwrap();
        assert_eq!((train, dev), (train2, dev2));
    }

    #[test]
    fn dev_split_edge_cases() {
        let all = corpus(3, 3, 2);
        let (train, dev) = split_dev(&all, 0.0, &mut stream(1, "split")).unwrap();
        assert!(dev.is_empty());
        assert_eq!(train.len(), all.len());
        assert!(split_dev(&corpus(1, 5, 2), 0.15, &mut stream(1, "split")).is_err());
    }

    #[test]
    fn schedule_partitions_supervised_set() {
        let plan = build_mixed_schedule(10, 4, 4, &mut stream(2, "plan")).unwrap();
        let sizes: Vec<usize> = plan.iter().map(|s| s.supervised.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert!(plan.iter().all(|s| s.triplets == 4 * s.supervised.len()));
        let mut seen: Vec<usize> = plan.iter().flat_map(|s| s.supervised.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(build_mixed_schedule(100, 8, 4, &mut stream(2, "plan")).unwrap().len(), 13);
        let plan1 = build_mixed_schedule(16, 8, 1, &mut stream(2, "plan")).unwrap();
        assert!(plan1.iter().all(|s| s.triplets == s.supervised.len()));
        assert_eq!(plan, build_mixed_schedule(10, 4, 4, &mut stream(2, "plan")).unwrap());
    }

    #[test]
    fn triplet_invariants() {
        let recs = corpus(1, 1, 2);
        let s = TripletSampler::new(&recs).unwrap();
        let mut rng = stream(3, "tri");
        for _ in 0..200 {
            let t = s.sample(&mut rng);
            assert_eq!(recs[t.anchor].speaker_id, recs[t.positive].speaker_id);
            assert_ne!(t.anchor, t.positive);
            assert_ne!(recs[t.anchor].speaker_id, recs[t.negative].speaker_id);
        }
    }

    #[test]
    fn triplet_errors_and_eligibility() {
        assert!(TripletSampler::new(&corpus(1, 0, 5)).is_err());
        assert!(TripletSampler::new(&corpus(2, 2, 1)).is_err());
        let mut recs = corpus(1, 0, 3);
        recs.push(rec("solo", 0, Gender::Female));
        let s = TripletSampler::new(&recs).unwrap();
        assert_eq!((s.speaker_count(), s.eligible_count()), (2, 1));
        let mut rng = stream(4, "tri");
        for _ in 0..50 {
            let t = s.sample(&mut rng);
            assert_eq!(recs[t.negative].speaker_id, "solo");
        }
    }
}
