//! Training loop, validation, evaluation and embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::audio::{fit_label_stats, LabelStats, Waveform};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{encode_batch, parameter_gradients, predict, StepInput, SupervisedInput, TripletInput};
use crate::manifest::{load_manifest, ManifestKind, SpeakerRecord};
use crate::metrics::{grouped_report, EvalRow, MetricsReport};
use crate::model::{init_params, ModelParams};
use crate::objectives::{supervised_profile_loss, ProfilePrediction, ProfileTarget};
use crate::optim::{diffgrad_init, diffgrad_step};
use crate::sampler::{
    build_mixed_schedule, load_eval_waves, sample_supervised_batch, sample_triplet_batch, split_dev, target_for,
    AudioStore, Preparation, TripletSampler,
};
use crate::seed::stream;

/// Rows per forward pass during validation, evaluation and export.
const EVAL_CHUNK: usize = 32;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";

/// Records and statistics a run trains on.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<SpeakerRecord>,
    pub dev: Vec<SpeakerRecord>,
    pub unlabeled: Vec<SpeakerRecord>,
    pub noise_bank: Vec<Waveform>,
    pub stats: LabelStats,
}

impl TrainData {
    /// Loads the manifests named in `cfg`, splitting dev speakers off the
    /// labeled set when no dev manifest is given.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let labeled_path = cfg
            .labeled_manifest
            .as_ref()
            .ok_or_else(|| Error::Config("labeled_manifest is required".into()))?;
        let labeled = load_manifest(labeled_path, ManifestKind::Labeled)?;
        let (train, dev) = match &cfg.dev_manifest {
            Some(p) => (labeled, load_manifest(p, ManifestKind::Labeled)?),
            None => split_dev(&labeled, cfg.dev_fraction, &mut stream(cfg.seed, "split"))?,
        };
        let unlabeled = match &cfg.unlabeled_manifest {
            Some(p) => load_manifest(p, ManifestKind::Unlabeled)?,
            None => Vec::new(),
        };
        let noise_bank = match &cfg.noise_manifest {
            Some(p) => load_manifest(p, ManifestKind::Unlabeled)?
                .iter()
                .map(|r| crate::audio::load_waveform(&r.path))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        Self::new(train, dev, unlabeled, noise_bank)
    }

    pub fn new(
        train: Vec<SpeakerRecord>,
        dev: Vec<SpeakerRecord>,
        unlabeled: Vec<SpeakerRecord>,
        noise_bank: Vec<Waveform>,
    ) -> Result<Self> {
        let stats = fit_label_stats(&train)?;
        Ok(Self {
            train,
            dev,
            unlabeled,
            noise_bank,
            stats,
        })
    }
}

/// Center-cropped dev inputs and standardized targets, prepared once.
pub struct DevSet {
    pub waves: Vec<Vec<f32>>,
    pub targets: Vec<ProfileTarget>,
}

impl DevSet {
    pub fn load(records: &[SpeakerRecord], stats: &LabelStats, crop_len: usize, store: &AudioStore) -> Result<Self> {
        Ok(Self {
            waves: load_eval_waves(records, crop_len, store)?,
            targets: records.iter().map(|r| target_for(r, stats)).collect(),
        })
    }
}

fn predict_chunked(params: &ModelParams<f32>, cfg: &TrainConfig, waves: &[Vec<f32>]) -> Result<Vec<ProfilePrediction>> {
    let mut out = Vec::with_capacity(waves.len());
    for chunk in waves.chunks(EVAL_CHUNK) {
        out.extend(predict(params, &cfg.model, chunk)?);
    }
    Ok(out)
}

/// Mean supervised loss over the dev set.
pub fn validate(params: &ModelParams<f32>, cfg: &TrainConfig, dev: &DevSet) -> Result<f64> {
    if dev.waves.is_empty() {
        return Err(Error::Empty("dev set".into()));
    }
    let preds = predict_chunked(params, cfg, &dev.waves)?;
    supervised_profile_loss(&preds, &dev.targets, &cfg.weights, cfg.model.task_mode)
}

/// Per-epoch means of the loss terms plus the validation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_p: f64,
    pub l_repr: f64,
    pub l_c: f64,
    pub total: f64,
    pub val: f64,
}

pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,l_p,l_repr,l_c,total,val\n");
    for e in log {
        writeln!(s, "{},{},{},{},{},{}", e.epoch, e.l_p, e.l_repr, e.l_c, e.total, e.val).expect("write to string");
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: Checkpoint,
    /// Parameters after the final step.
    pub last: ModelParams<f32>,
    pub log: Vec<EpochLog>,
}

fn with_context(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, step {step}: {m}")),
        other => other,
    }
}

/// Runs the full schedule in memory. Nothing is written to disk.
pub fn train_on(cfg: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let paths = cfg.paths();
    let sampler = if cfg.uses_triplets() {
        Some(TripletSampler::new(&data.unlabeled)?)
    } else {
        None
    };
    let store = if cfg.cache_audio { AudioStore::new() } else { AudioStore::uncached() };
    let dev = DevSet::load(&data.dev, &data.stats, cfg.crop_len, &store)?;
    let prep = if cfg.augment {
        Preparation::train(cfg.crop_len, &cfg.noise, &data.noise_bank)
    } else {
        Preparation {
            crop_len: cfg.crop_len,
            mode: crate::audio::CropMode::Random,
            noise: None,
        }
    };

    let mut params: ModelParams<f32> = init_params(&cfg.model, &mut stream(cfg.seed, "init"));
    let mut opt = diffgrad_init(&params, cfg.optim);
    let mut schedule_rng = stream(cfg.seed, "schedule");
    let mut sup_rng = stream(cfg.seed, "supervised");
    let mut tri_rng = stream(cfg.seed, "triplets");

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    for epoch in 1..=cfg.epochs {
        let plan = build_mixed_schedule(data.train.len(), cfg.batch_size, cfg.ratio, &mut schedule_rng)?;
        let (mut l_p, mut l_repr, mut l_c) = (0.0, 0.0, 0.0);
        for (step_no, step) in plan.iter().enumerate() {
            let sup = sample_supervised_batch(&data.train, &step.supervised, &data.stats, &prep, &store, &mut sup_rng)?;
            let tri = match &sampler {
                Some(s) => Some(sample_triplet_batch(s, &data.unlabeled, step.triplets, &prep, &store, &mut tri_rng)?),
                None => None,
            };
            let input = StepInput {
                supervised: Some(SupervisedInput {
                    waves: &sup.waves,
                    targets: &sup.targets,
                }),
                triplets: tri.as_ref().map(|t| TripletInput {
                    anchors: &t.anchors,
                    positives: &t.positives,
                    negatives: &t.negatives,
                    fixed_positive_predictions: None,
                }),
            };
            let (out, grads) =
                parameter_gradients(&params, &cfg.model, &input, &paths).map_err(|e| with_context(e, epoch, step_no))?;
            diffgrad_step(&mut params, &grads, &mut opt).map_err(|e| with_context(e, epoch, step_no))?;
            l_p += out.breakdown.l_p;
            l_repr += out.breakdown.l_repr;
            l_c += out.breakdown.l_c;
        }
        let n = plan.len() as f64;
        let (l_p, l_repr, l_c) = (l_p / n, l_repr / n, l_c / n);
        let val = if dev.waves.is_empty() { l_p } else { validate(&params, cfg, &dev)? };
        let entry = EpochLog {
            epoch,
            l_p,
            l_repr,
            l_c,
            total: l_p + l_repr + l_c,
            val,
        };
        log::info!(
            "epoch {epoch}: l_p {l_p:.5} l_repr {l_repr:.5} l_c {l_c:.5} total {:.5} val {val:.5}",
            entry.total
        );
        log.push(entry);
        if best.as_ref().is_none_or(|b| val < b.best_val_loss) {
            best = Some(Checkpoint {
                config: cfg.clone(),
                stats: data.stats,
                params: params.clone(),
                best_val_loss: val,
                epoch,
            });
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        last: params,
        log,
    })
}

/// Artifacts written by [`train`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

/// Loads data, trains and writes the best checkpoint and the loss log under
/// `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<(TrainOutcome, TrainArtifacts)> {
    cfg.validate()?;
    let data = TrainData::load(cfg)?;
    let outcome = train_on(cfg, &data)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let artifacts = TrainArtifacts {
        checkpoint: cfg.out_dir.join(CHECKPOINT_FILE),
        loss_log: cfg.out_dir.join(LOSS_LOG_FILE),
    };
    save_checkpoint(&outcome.best, &artifacts.checkpoint)?;
    fs::write(&artifacts.loss_log, loss_log_csv(&outcome.log)).map_err(|e| Error::io(&artifacts.loss_log, e))?;
    Ok((outcome, artifacts))
}

/// Destandardized predictions next to ground truth.
pub fn evaluation_rows(ck: &Checkpoint, records: &[SpeakerRecord]) -> Result<Vec<EvalRow>> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation manifest".into()));
    }
    let waves = load_eval_waves(records, ck.config.crop_len, &AudioStore::uncached())?;
    let preds = predict_chunked(&ck.params, &ck.config, &waves)?;
    records
        .iter()
        .zip(preds)
        .map(|(r, p)| {
            let (Some(h), Some(a), Some(g)) = (r.height_cm, r.age_years, r.gender) else {
                return Err(Error::InvalidArgument(format!("{} is not labeled", r.utterance)));
            };
            Ok(EvalRow {
                height_pred: ck.stats.height_cm(p.height),
                height_true: h,
                age_pred: ck.stats.age_years(p.age),
                age_true: a,
                female_prob: p.gender_probability(),
                gender: g,
            })
        })
        .collect()
}

pub fn evaluate(ck: &Checkpoint, records: &[SpeakerRecord]) -> Result<MetricsReport> {
    grouped_report(&evaluation_rows(ck, records)?)
}

/// Latent codes, one row per record.
pub fn embed(ck: &Checkpoint, records: &[SpeakerRecord]) -> Result<Vec<Vec<f32>>> {
    let waves = load_eval_waves(records, ck.config.crop_len, &AudioStore::new())?;
    let mut out = Vec::with_capacity(records.len());
    for chunk in waves.chunks(EVAL_CHUNK) {
        let z = encode_batch(&ck.params, &ck.config.model, chunk)?;
        out.extend(z.rows().into_iter().map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Writes `utterance_path,speaker_id,e0,..` rows; returns the row count.
pub fn export_embeddings(ck: &Checkpoint, records: &[SpeakerRecord], out_path: &Path) -> Result<usize> {
    let z = embed(ck, records)?;
    let mut w = csv::Writer::from_path(out_path).map_err(|e| Error::io(out_path, e.into()))?;
    let mut header = vec!["utterance_path".to_string(), "speaker_id".to_string()];
    header.extend((0..ck.config.model.latent_dim).map(|i| format!("e{i}")));
    let io = |e: csv::Error| Error::io(out_path, e.into());
    w.write_record(&header).map_err(io)?;
    for (r, row) in records.iter().zip(&z) {
        let mut fields = vec![r.utterance.clone(), r.speaker_id.clone()];
        fields.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(z.len())
}
