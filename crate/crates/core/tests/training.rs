use std::path::Path;

use voxprofile::checkpoint::{encode_checkpoint, load_checkpoint};
use voxprofile::config::TrainConfig;
use voxprofile::graph::{parameter_gradients, PathConfig, StepInput, SupervisedInput, TripletInput};
use voxprofile::manifest::{load_manifest, ManifestKind};
use voxprofile::model::{init_params, ModelConfig, ModelParams, ParamGroup};
use voxprofile::objectives::ProfileTarget;
use voxprofile::sampler::{split_dev, AudioStore};
use voxprofile::seed::stream;
use voxprofile::toy::{generate_toy_corpus, ToyCorpus, ToyCorpusConfig};
use voxprofile::trainer::{embed, evaluate, evaluation_rows, train, train_on, validate, DevSet, TrainData};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        conv_channels: 8,
        latent_dim: 8,
        regressor_hidden: vec![16, 8],
        discriminator_hidden: vec![16, 8],
        groupnorm_groups: 4,
        ..ModelConfig::default()
    }
}

fn corpus(dir: &Path, n: usize, prefix: &str) -> ToyCorpus {
    let cfg = ToyCorpusConfig {
        n_speakers: n,
        utts_per_speaker: 3,
        utterance_samples: 2000,
        speaker_prefix: prefix.into(),
        ..Default::default()
    };
    generate_toy_corpus(&cfg, &dir.join(prefix), &mut stream(42, prefix)).unwrap()
}

fn tiny_config(dir: &Path) -> TrainConfig {
    let lab = corpus(dir, 8, "lab");
    let unl = corpus(dir, 6, "unl");
    let mut cfg = TrainConfig::default();
    cfg.model = tiny_model();
    cfg.labeled_manifest = Some(lab.labeled_manifest);
    cfg.unlabeled_manifest = Some(unl.unlabeled_manifest);
    cfg.dev_fraction = 0.3;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.ratio = 2;
    cfg.crop_len = 1000;
    cfg.out_dir = dir.join("run");
    cfg
}

fn bits(p: &ModelParams<f32>) -> Vec<u32> {
    p.named()
        .iter()
        .flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn same_seed_gives_identical_checkpoints_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = TrainData::load(&cfg).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| train_on(&cfg, &data)).unwrap();
    let b = one.install(|| train_on(&cfg, &data)).unwrap();
    let c = four.install(|| train_on(&cfg, &data)).unwrap();
    assert_eq!(encode_checkpoint(&a.best), encode_checkpoint(&b.best));
    assert_eq!(encode_checkpoint(&a.best), encode_checkpoint(&c.best));
    assert_eq!(bits(&a.last), bits(&c.last));
}

#[test]
fn disabling_a_path_equals_zero_weight() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_config(dir.path());
    let data = TrainData::load(&base).unwrap();

    let mut off = base.clone();
    off.repr_path = false;
    let mut zero = base.clone();
    zero.repr_weight = 0.0;
    let a = train_on(&off, &data).unwrap();
    let b = train_on(&zero, &data).unwrap();
    assert_eq!(bits(&a.last), bits(&b.last));
    assert!(a.log.iter().all(|e| e.l_repr == 0.0));

    let mut sup_only = base.clone();
    sup_only.repr_path = false;
    sup_only.consistency_path = false;
    let s = train_on(&sup_only, &data).unwrap();
    for e in &s.log {
        assert_eq!(e.total, e.l_p);
        assert_eq!((e.l_repr, e.l_c), (0.0, 0.0));
    }
    let mut both_zero = base.clone();
    both_zero.repr_weight = 0.0;
    both_zero.consistency_weight = 0.0;
    assert_eq!(bits(&s.last), bits(&train_on(&both_zero, &data).unwrap().last));
}

#[test]
fn log_totals_and_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.epochs = 4;
    let (out, files) = train(&cfg).unwrap();
    for e in &out.log {
        assert!((e.total - (e.l_p + e.l_repr + e.l_c)).abs() <= 1e-12 * e.total.abs().max(1.0));
        assert!(e.val >= out.best.best_val_loss);
    }
    let text = std::fs::read_to_string(&files.loss_log).unwrap();
    assert_eq!(text.lines().next().unwrap(), "epoch,l_p,l_repr,l_c,total,val");
    assert_eq!(text.lines().count(), 5);
    let loaded = load_checkpoint(&files.checkpoint).unwrap();
    assert_eq!(bits(&loaded.params), bits(&out.best.params));
    assert_eq!(loaded.epoch, out.best.epoch);
}

#[test]
fn validation_is_deterministic_and_mean_model_scores_about_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = TrainData::load(&cfg).unwrap();
    // dev == train: the standardized labels then have variance exactly 1
    let dev = DevSet::load(&data.train, &data.stats, cfg.crop_len, &AudioStore::new()).unwrap();
    let mut params: ModelParams<f32> = init_params(&cfg.model, &mut stream(1, "init"));
    let last = params.regressor.layers.last_mut().unwrap();
    last.weight.data.iter_mut().for_each(|v| *v = 0.0);
    last.bias.data.iter_mut().for_each(|v| *v = 0.0);
    let v1 = validate(&params, &cfg, &dev).unwrap();
    let v2 = validate(&params, &cfg, &dev).unwrap();
    assert_eq!(v1.to_bits(), v2.to_bits());
    let expected = 1.0 + 1.0 + 0.1 * std::f64::consts::LN_2;
    assert!((v1 - expected).abs() < 1e-9, "{v1} vs {expected}");
    let empty = DevSet {
        waves: vec![],
        targets: vec![],
    };
    assert!(validate(&params, &cfg, &empty).is_err());
}

#[test]
fn all_parameter_groups_receive_gradient() {
    let cfg = tiny_model();
    let params: ModelParams<f64> = init_params(&cfg, &mut stream(5, "init"));
    let mut rng = stream(5, "data");
    let wave = |rng: &mut voxprofile::seed::Rng| -> Vec<f64> {
        (0..700).map(|_| rand::Rng::random_range(rng, -1.0..1.0)).collect()
    };
    let sup: Vec<Vec<f64>> = (0..3).map(|_| wave(&mut rng)).collect();
    let targets = vec![ProfileTarget::full(0.5, -0.3, 1.0); 3];
    let (a, p, n): (Vec<_>, Vec<_>, Vec<_>) = (
        (0..4).map(|_| wave(&mut rng)).collect(),
        (0..4).map(|_| wave(&mut rng)).collect(),
        (0..4).map(|_| wave(&mut rng)).collect(),
    );
    let input = StepInput {
        supervised: Some(SupervisedInput {
            waves: &sup,
            targets: &targets,
        }),
        triplets: Some(TripletInput {
            anchors: &a,
            positives: &p,
            negatives: &n,
            fixed_positive_predictions: None,
        }),
    };
    let (_, g) = parameter_gradients(&params, &cfg, &input, &PathConfig::default()).unwrap();
    for (group, norm) in g.group_norms() {
        assert!(norm > 0.0, "{group:?} has zero gradient");
    }
    assert_eq!(g.group_norms().map(|(grp, _)| grp), [ParamGroup::Encoder, ParamGroup::Regressor, ParamGroup::Discriminator]);
}

#[test]
fn evaluate_and_embed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (out, files) = train(&cfg).unwrap();
    let ck = load_checkpoint(&files.checkpoint).unwrap();
    let test = load_manifest(cfg.labeled_manifest.as_ref().unwrap(), ManifestKind::Labeled).unwrap();
    let report = evaluate(&ck, &test).unwrap();
    let all = report.all.unwrap();
    assert_eq!(all.count, test.len());
    assert!(all.rmse_height >= all.mae_height && all.rmse_age >= all.mae_age);
    let rows = evaluation_rows(&ck, &test).unwrap();
    assert_eq!(rows.len(), test.len());
    assert!(evaluate(&ck, &[]).is_err());

    let twice = vec![test[0].clone(), test[0].clone(), test[1].clone()];
    let z = embed(&out.best, &twice).unwrap();
    assert_eq!(z.len(), 3);
    assert!(z.iter().all(|r| r.len() == cfg.model.latent_dim));
    assert_eq!(z[0], z[1]);

    let path = dir.path().join("emb.csv");
    let n = voxprofile::trainer::export_embeddings(&ck, &twice, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(n, 3);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].split(',').count(), 2 + cfg.model.latent_dim);
    assert_eq!(lines[1], lines[2]);
}

#[test]
fn dev_split_used_when_no_dev_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = TrainData::load(&cfg).unwrap();
    let all = load_manifest(cfg.labeled_manifest.as_ref().unwrap(), ManifestKind::Labeled).unwrap();
    let (train, dev) = split_dev(&all, cfg.dev_fraction, &mut stream(cfg.seed, "split")).unwrap();
    assert_eq!((data.train, data.dev), (train, dev));
}
