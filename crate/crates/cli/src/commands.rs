//! Subcommand implementations.

use std::path::{Path, PathBuf};

use gcndance::audio::{classify_style, train_classifier, AudioClassifier, AudioClip, StyleClassification, StyleLabel};
use gcndance::checkpoint;
use gcndance::dataset::{
    build_eval_set, build_training_set, extract_windows, load_corpus, make_synthetic_corpus, write_corpus, Corpus,
    DatasetStats, Sample, Split,
};
use gcndance::graphnet::Generator;
use gcndance::latent::{latent_length_for, FRAMES_PER_STEP};
use gcndance::nn::Module;
use gcndance::skeleton::{denormalize_motion, normalize_motion, smooth_motion, Motion, DEFAULT_FPS};
use gcndance::training::{generate_motions, MetricsLog, Trainer};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::render::render_motion;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

fn load_manifest_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let manifest = cfg.manifest()?;
    if !manifest.exists() {
        return Err(CliError::Data(format!("manifest {} does not exist", manifest.display())));
    }
    Ok(load_corpus(manifest)?)
}

fn load_records(path: &Path, what: &str) -> Result<Vec<checkpoint::Record>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("{what} checkpoint {} does not exist", path.display())));
    }
    checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_generator(cfg: &RunConfig) -> Result<Generator, CliError> {
    let mut g = Generator::new(&cfg.train.net, cfg.seed)?;
    let path = cfg.generator_path();
    g.load_state(&load_records(&path, "generator")?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(g)
}

pub fn load_classifier(cfg: &RunConfig) -> Result<AudioClassifier, CliError> {
    let mut model = AudioClassifier::new(cfg.classifier.clone(), cfg.seed)?;
    let path = cfg.classifier_path();
    model
        .load_state(&load_records(&path, "classifier")?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(model)
}

pub fn synth_corpus(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let corpus = make_synthetic_corpus(&cfg.synthetic, cfg.seed);
    create_dir(&cfg.paths.out_dir)?;
    let manifest = write_corpus(&corpus, &cfg.paths.out_dir)?;
    info!("wrote {} clips", corpus.clips.len());
    Ok(manifest)
}

/// Trains the audio classifier with k-fold cross-validation on the
/// training split; writes the best fold's model and the report.
pub fn train_audio_classifier(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let corpus = load_manifest_corpus(cfg)?;
    let data = corpus.labeled_audio(Split::Train);
    let (model, report) = train_classifier(&data, &cfg.classifier, cfg.seed)?;
    create_dir(&cfg.paths.out_dir)?;
    let ckpt = cfg.classifier_path();
    checkpoint::save(&ckpt, &model.state()).map_err(|e| CliError::Data(format!("{}: {e}", ckpt.display())))?;
    let report_path = cfg.paths.out_dir.join("classifier_report.json");
    write_text(&report_path, &to_json(&report))?;
    println!("cv accuracy {:.4} ± {:.4} over {} folds", report.mean_accuracy, report.std_accuracy, report.folds);
    Ok(report_path)
}

/// Drops metrics rows past `step` so a resumed run does not log a step twice.
fn truncate_metrics(path: &Path, step: u64) -> Result<(), CliError> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, l)| *i == 0 || l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step))
        .map(|(_, l)| l)
        .collect();
    write_text(path, &(kept.join("\n") + "\n"))
}

pub fn train_gan(cfg: &RunConfig, resume: Option<&Path>) -> Result<PathBuf, CliError> {
    let corpus = load_manifest_corpus(cfg)?;
    let data = build_training_set(&corpus, &cfg.augment, cfg.seed)?;
    if data.is_empty() {
        return Err(CliError::Data("training split produced no windows".into()));
    }
    let out = &cfg.paths.out_dir;
    create_dir(out)?;
    let metrics_path = out.join("metrics.csv");
    let mut trainer = match resume {
        Some(p) => {
            load_records(p, "trainer")?;
            let t = Trainer::resume(cfg.train.clone(), p)?;
            truncate_metrics(&metrics_path, t.step)?;
            t
        }
        None => {
            if metrics_path.exists() {
                std::fs::remove_file(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
            }
            Trainer::new(cfg.train.clone())?
        }
    };
    let total = cfg.train.total_steps(data.len());
    info!("{} samples, training from step {} to {total}", data.len(), trainer.step);
    let mut log = MetricsLog::open(&metrics_path)?;
    let ckpt_dir = out.join("checkpoints");
    trainer.run(
        &data,
        total,
        |m| {
            if m.step % 50 == 0 {
                info!("step {} d={:.4} g={:.4} rec={:.4}", m.step, m.d_loss, m.g_loss, m.rec_loss);
            }
            log.append(m)
        },
        |t| {
            std::fs::create_dir_all(&ckpt_dir)?;
            t.save(&ckpt_dir.join(format!("step-{:06}.ckpt", t.step)))
        },
    )?;
    let path = cfg.generator_path();
    trainer.save(&path)?;
    println!("trained {} steps; checkpoint {}", trainer.step, path.display());
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct GenerationRecord {
    pub seed: u64,
    pub frames: usize,
    pub styles: Vec<StyleLabel>,
    pub classification: Option<StyleClassification>,
}

/// Where the per-step styles come from.
pub enum StyleSource<'a> {
    Fixed(StyleLabel),
    Audio(&'a Path),
}

/// Generates one motion of `length` frames, places it on the pixel canvas
/// and smooths it; returns the motion and the style record.
pub fn generate(cfg: &RunConfig, source: StyleSource, length: usize) -> Result<(Motion, GenerationRecord), CliError> {
    let steps = latent_length_for(length).map_err(|e| CliError::Config(format!("--length: {e}")))?;
    let (styles, classification) = match source {
        StyleSource::Fixed(s) => (vec![s; steps], None),
        StyleSource::Audio(path) => {
            if !path.exists() {
                return Err(CliError::Data(format!("audio {} does not exist", path.display())));
            }
            let clip = AudioClip::read_wav(path)?;
            let model = load_classifier(cfg)?;
            let c = classify_style(&clip, &model)?;
            let styles = c.per_step_styles(steps, FRAMES_PER_STEP, DEFAULT_FPS as f64, cfg.classifier.window_seconds);
            (styles, Some(c))
        }
    };
    let g = load_generator(cfg)?;
    let normalized = generate_motions(&g, std::slice::from_ref(&styles), cfg.train.gp_sigma, cfg.seed)?.remove(0);
    let placed = denormalize_motion(&normalized, cfg.render.canvas, cfg.render.fill);
    let motion = smooth_motion(&placed, cfg.render.knot_stride)?;
    let record = GenerationRecord { seed: cfg.seed, frames: length, styles, classification };
    Ok((motion, record))
}

pub fn write_generation(cfg: &RunConfig, motion: &Motion, record: &GenerationRecord, frames: bool) -> Result<PathBuf, CliError> {
    let out = &cfg.paths.out_dir;
    create_dir(out)?;
    let path = out.join("motion.json");
    write_text(&path, &motion.to_json())?;
    write_text(&out.join("generation.json"), &to_json(record))?;
    if frames {
        render_motion(motion, &out.join("frames"))?;
    }
    Ok(path)
}

fn windows_of(m: &Motion, cfg: &RunConfig, id: &str) -> Result<Vec<Sample>, CliError> {
    let style = m.style.ok_or_else(|| CliError::Data(format!("{id}: motion has no style label")))?;
    let norm = normalize_motion(m, cfg.augment.normalize)?;
    let w = cfg.augment.window;
    Ok(extract_windows(&norm, w, w)?
        .into_iter()
        .map(|motion| Sample { motion, style, source_id: id.to_string(), noisy: false })
        .collect())
}

/// Generated samples for evaluation: from a directory of motion files, from
/// a manifest's evaluation split, or sampled from the trained generator.
pub fn generated_samples(cfg: &RunConfig) -> Result<Vec<Sample>, CliError> {
    match &cfg.paths.generated {
        Some(p) if p.is_dir() => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            let mut out = Vec::new();
            for f in files {
                let text = std::fs::read_to_string(&f).map_err(|e| CliError::io(&f, e))?;
                let m = Motion::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
                out.extend(windows_of(&m, cfg, &f.display().to_string())?);
            }
            Ok(out)
        }
        Some(p) if p.is_file() => Ok(build_eval_set(&load_corpus(p)?, &cfg.augment)?),
        Some(p) => Err(CliError::Data(format!("generated set {} does not exist", p.display()))),
        None => {
            let g = load_generator(cfg)?;
            let steps = latent_length_for(cfg.augment.window).map_err(|e| CliError::Config(e.to_string()))?;
            let styles: Vec<Vec<StyleLabel>> = StyleLabel::ALL
                .iter()
                .flat_map(|&s| std::iter::repeat_n(vec![s; steps], cfg.evaluation.generated_per_style))
                .collect();
            let mut out = Vec::with_capacity(styles.len());
            for (i, m) in generate_motions(&g, &styles, cfg.train.gp_sigma, cfg.seed)?.into_iter().enumerate() {
                let smoothed = smooth_motion(&m, cfg.render.knot_stride)?;
                out.extend(windows_of(&smoothed, cfg, &format!("gen-{i:04}"))?);
            }
            Ok(out)
        }
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let real = build_eval_set(&load_manifest_corpus(cfg)?, &cfg.augment)?;
    let generated = generated_samples(cfg)?;
    let e = &cfg.evaluation;
    let report = gcndance::eval::evaluate(&generated, &real, &e.classifier, e.repeats, cfg.seed)?;
    create_dir(&cfg.paths.out_dir)?;
    let path = cfg.paths.out_dir.join("report.json");
    write_text(&path, &report.to_json())?;
    print!("{}", report.render());
    Ok(path)
}

/// Writes the augmented training windows as motion files plus the dataset
/// statistics table.
pub fn augment(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let corpus = load_manifest_corpus(cfg)?;
    let samples = build_training_set(&corpus, &cfg.augment, cfg.seed)?;
    let dir = cfg.paths.out_dir.join("augmented");
    create_dir(&dir)?;
    for (i, s) in samples.iter().enumerate() {
        let tag = if s.noisy { "noisy" } else { "clean" };
        write_text(&dir.join(format!("{i:05}-{}-{tag}.json", s.style.as_str())), &s.motion.to_json())?;
    }
    let stats = DatasetStats::of_corpus(&corpus, &cfg.augment);
    write_text(&cfg.paths.out_dir.join("dataset_stats.json"), &to_json(&stats))?;
    print!("{}", stats.render());
    Ok(dir)
}

pub fn render(motion_file: &Path, out: &Path) -> Result<usize, CliError> {
    let text = std::fs::read_to_string(motion_file).map_err(|e| CliError::io(motion_file, e))?;
    let m = Motion::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", motion_file.display())))?;
    let files = render_motion(&m, out)?;
    Ok(files.len() - 1)
}
