//! Waveform ingestion, mu-law companding and the strided 1D-CNN music
//! style classifier.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{BatchNorm, Ctx, Linear, Module, Parameter, TemporalConv};
use crate::optim::{Adam, AdamConfig, OptimError, Optimizer};
use crate::tensor::{softmax_rows, Tensor, TensorError};

pub const SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_MU: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleLabel {
    Ballet = 0,
    #[serde(rename = "mj")]
    MJ = 1,
    Salsa = 2,
}

impl StyleLabel {
    pub const ALL: [StyleLabel; 3] = [StyleLabel::Ballet, StyleLabel::MJ, StyleLabel::Salsa];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<StyleLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StyleLabel::Ballet => "ballet",
            StyleLabel::MJ => "mj",
            StyleLabel::Salsa => "salsa",
        }
    }
}

impl fmt::Display for StyleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StyleLabel::Ballet => "Ballet",
            StyleLabel::MJ => "MJ",
            StyleLabel::Salsa => "Salsa",
        })
    }
}

impl FromStr for StyleLabel {
    type Err = AudioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ballet" => Ok(StyleLabel::Ballet),
            "mj" => Ok(StyleLabel::MJ),
            "salsa" => Ok(StyleLabel::Salsa),
            other => Err(AudioError::UnknownStyle(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("unknown style label {0:?}")]
    UnknownStyle(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav format: {0}")]
    Format(String),
    #[error("clip of {len} samples is shorter than the receptive field ({need})")]
    TooShort { len: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {class} has {count} samples, fewer than {folds} folds")]
    ClassUnderflow { class: StyleLabel, count: usize, folds: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Mono waveform in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    /// Wraps samples at an arbitrary rate, resampling to 16 kHz.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> AudioClip {
        let samples = if sample_rate == SAMPLE_RATE {
            samples
        } else {
            resample_linear(&samples, sample_rate, SAMPLE_RATE)
        };
        AudioClip { samples, sample_rate: SAMPLE_RATE }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads PCM16 WAV; multi-channel input is averaged to mono.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(AudioError::Format(format!(
                "{:?} {}-bit, expected PCM16",
                spec.sample_format, spec.bits_per_sample
            )));
        }
        let raw: Vec<i16> = reader.samples::<i16>().collect::<Result<_, _>>()?;
        let ch = spec.channels.max(1) as usize;
        let mono: Vec<f64> = raw
            .chunks(ch)
            .map(|f| f.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / f.len() as f64)
            .collect();
        Ok(AudioClip::new(mono, spec.sample_rate))
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<(), AudioError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }
}

/// Linear-interpolation resampling.
pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if samples.is_empty() || from == to {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to as u64) / from as u64).max(1) as usize;
    let ratio = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let a = samples[i0.min(samples.len() - 1)];
            let b = samples[(i0 + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

static MU_LAW_CLAMPED: AtomicUsize = AtomicUsize::new(0);

/// Number of out-of-range inputs clamped by [`mu_law`] so far.
pub fn mu_law_clamp_count() -> usize {
    MU_LAW_CLAMPED.load(Ordering::Relaxed)
}

/// `sign(x) ln(1 + mu |x|) / ln(1 + mu)`; inputs outside `[-1, 1]` are
/// clamped and counted.
pub fn mu_law(x: f64, mu: f64) -> f64 {
    let x = if x.abs() > 1.0 {
        MU_LAW_CLAMPED.fetch_add(1, Ordering::Relaxed);
        x.clamp(-1.0, 1.0)
    } else {
        x
    };
    x.signum() * (1.0 + mu * x.abs()).ln() / (1.0 + mu).ln()
}

pub fn mu_law_encode(samples: &[f64], mu: f64) -> Vec<f64> {
    let before = mu_law_clamp_count();
    let out = samples.iter().map(|&x| mu_law(x, mu)).collect();
    let clamped = mu_law_clamp_count() - before;
    if clamped > 0 {
        log::warn!("mu-law: clamped {clamped} samples outside [-1, 1]");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub mu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub folds: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            channels: vec![4, 8, 16, 16, 32],
            kernels: vec![16, 8, 8, 4, 4],
            strides: vec![8, 4, 4, 2, 2],
            window_seconds: 2.0,
            hop_seconds: 1.0,
            mu: DEFAULT_MU,
            epochs: 500,
            batch_size: 8,
            lr: 0.01,
            folds: 10,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), String> {
        let n = self.channels.len();
        if n == 0 || self.kernels.len() != n || self.strides.len() != n {
            return Err("channels/kernels/strides must be non-empty and equally long".into());
        }
        if self.channels.iter().chain(&self.kernels).chain(&self.strides).any(|&v| v == 0) {
            return Err("layer sizes must be positive".into());
        }
        if self.kernels.iter().zip(&self.strides).any(|(k, s)| s > k) {
            return Err("stride larger than kernel".into());
        }
        if !(self.window_seconds > 0.0 && self.hop_seconds > 0.0) {
            return Err("window and hop must be positive".into());
        }
        if self.mu <= 0.0 || self.lr <= 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err("mu, lr, batch_size and epochs must be positive".into());
        }
        if self.folds < 2 {
            return Err("k-fold cross-validation needs at least 2 folds".into());
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_seconds * SAMPLE_RATE as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_seconds * SAMPLE_RATE as f64).round().max(1.0) as usize
    }

    /// Input samples seen by one output step of the conv stack.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for (&k, &s) in self.kernels.iter().zip(&self.strides) {
            rf += (k - 1) * jump;
            jump *= s;
        }
        rf
    }
}

/// Strided 1D convolution stack, global average pooling and a linear head
/// over the three styles. Inputs are mu-law companded waveforms shaped
/// `(batch, 1, samples, 1)`.
#[derive(Debug, Clone)]
pub struct AudioClassifier {
    pub cfg: ClassifierConfig,
    convs: Vec<TemporalConv>,
    norms: Vec<BatchNorm>,
    head: Linear,
}

impl AudioClassifier {
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Result<AudioClassifier, AudioError> {
        cfg.validate().map_err(AudioError::InvalidArgument)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut c_in = 1;
        for (i, ((&c, &k), &s)) in cfg.channels.iter().zip(&cfg.kernels).zip(&cfg.strides).enumerate() {
            convs.push(TemporalConv::new(&format!("audio.conv{i}"), c_in, c, k, s, (k - s) / 2, &mut rng));
            norms.push(BatchNorm::new(&format!("audio.bn{i}"), c));
            c_in = c;
        }
        let head = Linear::new("audio.head", c_in, StyleLabel::COUNT, &mut rng);
        Ok(AudioClassifier { cfg, convs, norms, head })
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor, TensorError> {
        let mut h = x.clone();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            h = bn.forward(&conv.forward(&h)?, ctx)?.leaky_relu(0.2);
        }
        let pooled = h.mean_axes(&[2, 3])?;
        self.head.forward(&pooled)
    }

    /// Class probabilities for a batch of raw (not yet companded) windows
    /// of equal length.
    pub fn predict_proba(&self, windows: &[&[f64]]) -> Result<Vec<[f64; 3]>, AudioError> {
        let len = windows.first().map_or(0, |w| w.len());
        if windows.iter().any(|w| w.len() != len) {
            return Err(AudioError::InvalidArgument("windows differ in length".into()));
        }
        if len < self.cfg.receptive_field() {
            return Err(AudioError::TooShort { len, need: self.cfg.receptive_field() });
        }
        let x = self.batch_tensor(windows, len)?;
        let logits = self.forward(&x, &mut Ctx::eval())?;
        Ok(softmax_rows(logits.data(), StyleLabel::COUNT)
            .chunks(StyleLabel::COUNT)
            .map(|p| [p[0], p[1], p[2]])
            .collect())
    }

    fn batch_tensor(&self, windows: &[&[f64]], len: usize) -> Result<Tensor, TensorError> {
        let mut data = Vec::with_capacity(windows.len() * len);
        for w in windows {
            data.extend(mu_law_encode(w, self.cfg.mu));
        }
        Tensor::new(data, &[windows.len(), 1, len, 1])
    }
}

impl Module for AudioClassifier {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for (c, b) in self.convs.iter().zip(&self.norms) {
            c.visit(f);
            b.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for (c, b) in self.convs.iter_mut().zip(&mut self.norms) {
            c.visit_mut(f);
            b.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub start_seconds: f64,
    pub label: StyleLabel,
    pub probs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleClassification {
    pub label: StyleLabel,
    pub probs: [f64; 3],
    pub windows: Vec<WindowPrediction>,
}

impl StyleClassification {
    /// Style for each latent step, where step `t` covers frames
    /// `t * frames_per_step .. (t + 1) * frames_per_step` at `fps`. Each
    /// step takes the window whose centre is closest to the step centre.
    pub fn per_step_styles(&self, steps: usize, frames_per_step: usize, fps: f64, window_seconds: f64) -> Vec<StyleLabel> {
        (0..steps)
            .map(|t| {
                let centre = (t as f64 + 0.5) * frames_per_step as f64 / fps;
                self.windows
                    .iter()
                    .min_by(|a, b| {
                        let da = (a.start_seconds + window_seconds / 2.0 - centre).abs();
                        let db = (b.start_seconds + window_seconds / 2.0 - centre).abs();
                        da.total_cmp(&db)
                    })
                    .map_or(self.label, |w| w.label)
            })
            .collect()
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Classifies a clip window by window (window/hop from the model config).
/// Clips shorter than one window but longer than the receptive field are
/// classified as a single window.
pub fn classify_style(clip: &AudioClip, model: &AudioClassifier) -> Result<StyleClassification, AudioError> {
    let len = clip.samples.len();
    let need = model.cfg.receptive_field();
    if len < need {
        return Err(AudioError::TooShort { len, need });
    }
    let win = model.cfg.window_samples().min(len);
    let hop = model.cfg.hop_samples();
    let starts: Vec<usize> = (0..=len - win).step_by(hop).collect();
    let mut windows = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(16) {
        let slices: Vec<&[f64]> = chunk.iter().map(|&s| &clip.samples[s..s + win]).collect();
        for (&s, probs) in chunk.iter().zip(model.predict_proba(&slices)?) {
            windows.push(WindowPrediction {
                start_seconds: s as f64 / SAMPLE_RATE as f64,
                label: StyleLabel::from_index(argmax(&probs)).expect("3 classes"),
                probs,
            });
        }
    }
    let mut mean = [0.0; 3];
    let mut votes = [0usize; 3];
    for w in &windows {
        votes[w.label.index()] += 1;
        for c in 0..3 {
            mean[c] += w.probs[c] / windows.len() as f64;
        }
    }
    let best_votes = *votes.iter().max().expect("3 classes");
    let label = (0..3)
        .filter(|&c| votes[c] == best_votes)
        .max_by(|&a, &b| mean[a].total_cmp(&mean[b]))
        .and_then(StyleLabel::from_index)
        .expect("3 classes");
    Ok(StyleClassification { label, probs: mean, windows })
}

/// Fold index per sample; classes are shuffled separately and dealt
/// round-robin so every fold sees every class.
pub fn stratified_folds(labels: &[StyleLabel], folds: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut assign = vec![0; labels.len()];
    let mut next = 0;
    for class in StyleLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        for i in idx {
            assign[i] = next % folds;
            next += 1;
        }
    }
    assign
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub best_fold: usize,
}

/// A labelled waveform at 16 kHz.
#[derive(Debug, Clone)]
pub struct LabeledAudio {
    pub samples: Vec<f64>,
    pub label: StyleLabel,
}

/// Trains one classifier on `train` for `cfg.epochs`, each epoch taking a
/// fresh random window from every clip.
pub fn fit_classifier(
    train: &[&LabeledAudio],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<AudioClassifier, AudioError> {
    let win = cfg.window_samples();
    if let Some(short) = train.iter().find(|a| a.samples.len() < win) {
        return Err(AudioError::TooShort { len: short.samples.len(), need: win });
    }
    let mut model = AudioClassifier::new(cfg.clone(), seed)?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, beta1: 0.5, beta2: 0.999, eps: 1e-8 });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(batch.len() * win);
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let a = train[i];
                let start = rng.random_range(0..=a.samples.len() - win);
                data.extend(mu_law_encode(&a.samples[start..start + win], cfg.mu));
                labels.push(a.label.index());
            }
            let x = Tensor::new(data, &[batch.len(), 1, win, 1])?;
            let mut ctx = Ctx::train(rng.random());
            model.zero_grad();
            let loss = model.forward(&x, &mut ctx)?.cross_entropy(&labels)?;
            loss.backward()?;
            opt.step(&mut model)?;
            model.commit_stats(&mut ctx);
        }
    }
    Ok(model)
}

/// Accuracy of centre-window predictions.
pub fn evaluate_classifier(model: &AudioClassifier, data: &[&LabeledAudio]) -> Result<f64, AudioError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let win = model.cfg.window_samples();
    let mut correct = 0;
    for chunk in data.chunks(16) {
        let slices: Vec<&[f64]> = chunk
            .iter()
            .map(|a| {
                let w = win.min(a.samples.len());
                let s = (a.samples.len() - w) / 2;
                &a.samples[s..s + w]
            })
            .collect();
        if slices.iter().any(|s| s.len() != slices[0].len()) {
            // unequal short clips: classify one at a time
            for (a, s) in chunk.iter().zip(&slices) {
                let p = model.predict_proba(&[s])?[0];
                correct += usize::from(argmax(&p) == a.label.index());
            }
            continue;
        }
        for (a, p) in chunk.iter().zip(model.predict_proba(&slices)?) {
            correct += usize::from(argmax(&p) == a.label.index());
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Stratified k-fold cross-validation; returns the model of the fold with
/// the best validation accuracy along with the per-fold report.
pub fn train_classifier(
    corpus: &[LabeledAudio],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(AudioClassifier, CvReport), AudioError> {
    cfg.validate().map_err(AudioError::InvalidArgument)?;
    for class in StyleLabel::ALL {
        let count = corpus.iter().filter(|a| a.label == class).count();
        if count < cfg.folds {
            return Err(AudioError::ClassUnderflow { class, count, folds: cfg.folds });
        }
    }
    let labels: Vec<StyleLabel> = corpus.iter().map(|a| a.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assign = stratified_folds(&labels, cfg.folds, &mut rng);
    let mut best: Option<(f64, usize, AudioClassifier)> = None;
    let mut accs = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let train: Vec<&LabeledAudio> = corpus.iter().zip(&assign).filter(|(_, &f)| f != fold).map(|(a, _)| a).collect();
        let val: Vec<&LabeledAudio> = corpus.iter().zip(&assign).filter(|(_, &f)| f == fold).map(|(a, _)| a).collect();
        let model = fit_classifier(&train, cfg, seed.wrapping_add(1 + fold as u64))?;
        let acc = evaluate_classifier(&model, &val)?;
        log::info!("classifier fold {fold}: accuracy {acc:.3}");
        accs.push(acc);
        if best.as_ref().is_none_or(|b| acc > b.0) {
            best = Some((acc, fold, model));
        }
    }
    let (_, best_fold, model) = best.expect("at least two folds");
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64).sqrt();
    Ok((
        model,
        CvReport { folds: cfg.folds, fold_accuracies: accs, mean_accuracy: mean, std_accuracy: std, best_fold },
    ))
}
