use std::fs;

use anyhow::{bail, Context, Result};
use voxprofile::checkpoint::load_checkpoint;
use voxprofile::config::TrainConfig;
use voxprofile::gradcheck::{GradCheckConfig, PathSuite};
use voxprofile::manifest::{load_manifest, ManifestKind};
use voxprofile::model::ModelConfig;
use voxprofile::seed::stream;
use voxprofile::toy::{generate_toy_corpus, ToyCorpusConfig};
use voxprofile::trainer;

use crate::run_manifest::{sha256_file, RunManifest};
use crate::{EmbedArgs, EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut run = RunManifest::start("synth", Some(a.seed));
    let cfg = ToyCorpusConfig {
        n_speakers: a.speakers,
        utts_per_speaker: a.utts,
        utterance_samples: a.samples,
        noise_level: a.noise,
        speaker_prefix: a.prefix.clone(),
    };
    let corpus = generate_toy_corpus(&cfg, &a.out_dir, &mut stream(a.seed, "toy"))?;
    run.note("speakers", a.speakers);
    run.note("utts_per_speaker", a.utts);
    run.note("samples", a.samples);
    run.note("noise", a.noise);
    run.note("prefix", &a.prefix);
    run.artifact(corpus.labeled_manifest.clone());
    run.artifact(corpus.unlabeled_manifest.clone());
    run.finish(&a.out_dir)?;
    println!(
        "wrote {} utterances of {} speakers to {}",
        corpus.records.len(),
        corpus.speakers.len(),
        a.out_dir.display()
    );
    Ok(())
}

pub fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p).with_context(|| format!("loading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    for kv in &a.sets {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects key=value, got `{kv}`"))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &a.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a)?;
    let mut run = RunManifest::start("train", Some(cfg.seed));
    let (outcome, files) = trainer::train(&cfg)?;
    run.note("best_epoch", outcome.best.epoch);
    run.note("best_val_loss", outcome.best.best_val_loss);
    run.artifact(files.checkpoint.clone());
    run.artifact(files.loss_log.clone());
    run.config(cfg.to_text());
    run.finish(&cfg.out_dir)?;
    println!(
        "best epoch {} (val {:.6}); checkpoint {} sha256={}",
        outcome.best.epoch,
        outcome.best.best_val_loss,
        files.checkpoint.display(),
        sha256_file(&files.checkpoint)?
    );
    Ok(())
}

pub fn evaluate(a: EvalArgs) -> Result<()> {
    let mut run = RunManifest::start("evaluate", None);
    let ck = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let records = load_manifest(&a.manifest, ManifestKind::Labeled)?;
    let report = trainer::evaluate(&ck, &records)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let txt = a.out_dir.join("report.txt");
    let csv = a.out_dir.join("report.csv");
    fs::write(&txt, report.to_text()).with_context(|| format!("writing {}", txt.display()))?;
    fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    run.note("checkpoint", a.checkpoint.display());
    run.note("manifest", a.manifest.display());
    run.artifact(txt);
    run.artifact(csv);
    run.finish(&a.out_dir)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn embed(a: EmbedArgs) -> Result<()> {
    let mut run = RunManifest::start("embed", None);
    let ck = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let records = load_manifest(&a.manifest, ManifestKind::Unlabeled)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = a.out_dir.join("embeddings.csv");
    let n = trainer::export_embeddings(&ck, &records, &out)?;
    run.note("checkpoint", a.checkpoint.display());
    run.note("manifest", a.manifest.display());
    run.artifact(out.clone());
    run.finish(&a.out_dir)?;
    println!("wrote {n} embeddings to {}", out.display());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut run = RunManifest::start("gradcheck", Some(a.seed));
    let model = ModelConfig {
        conv_channels: a.channels,
        latent_dim: a.latent,
        ..ModelConfig::default()
    };
    let cfg = GradCheckConfig {
        epsilon: a.epsilon,
        tolerance: a.tolerance,
        samples_per_param: a.samples,
        ..GradCheckConfig::default()
    };
    let suite = PathSuite::new(model, a.input_len, a.rows, a.seed)?;
    let reports = suite.run(&cfg, &mut stream(a.seed, "gradcheck"))?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
    let passed = reports.iter().all(|r| r.passed());
    text.push_str(&format!(
        "{}: max relative error {worst:.3e} (tolerance {:.1e})\n",
        if passed { "PASS" } else { "FAIL" },
        a.tolerance
    ));
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = a.out_dir.join("gradcheck.txt");
    fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
    for (k, v) in [
        ("channels", a.channels.to_string()),
        ("latent", a.latent.to_string()),
        ("input_len", a.input_len.to_string()),
        ("rows", a.rows.to_string()),
        ("epsilon", a.epsilon.to_string()),
        ("tolerance", a.tolerance.to_string()),
    ] {
        run.note(k, v);
    }
    run.artifact(out);
    run.finish(&a.out_dir)?;
    print!("{text}");
    if !passed {
        bail!("gradient check failed: max relative error {worst:.3e} >= {:.1e}", a.tolerance);
    }
    Ok(())
}
