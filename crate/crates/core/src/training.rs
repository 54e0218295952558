//! Adversarial training: losses, the alternating update and checkpoints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::StyleLabel;
use crate::checkpoint::{self, CheckpointError, Record};
use crate::dataset::Sample;
use crate::graphnet::{build_pair, Discriminator, GraphError, GraphNetConfig, Generator};
use crate::latent::{latent_length_for, LatentError};
use crate::nn::{Ctx, Module};
use crate::optim::{Adam, AdamConfig, OptimError, Optimizer, Sgd};
use crate::skeleton::{Motion, SkeletonError, DEFAULT_FPS, JOINTS};
use crate::tensor::{Tensor, TensorError};

/// Probabilities entering a log are clamped to `[EPS, 1 - EPS]`.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFinite { step: u64, diagnostics: String },
    #[error("empty training set")]
    NoData,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("checkpoint does not match the model: {0}")]
    State(String),
    #[error("metrics i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<u64>,
    pub batch: usize,
    pub gen: AdamConfig,
    pub disc_lr: f64,
    pub lambda_rec: f64,
    pub seed: u64,
    /// Use `log(1 - D(G(z)))` for the generator instead of `-log D(G(z))`.
    pub literal_minimax: bool,
    /// Base RBF bandwidth of the latent noise.
    pub gp_sigma: f64,
    pub frames: usize,
    pub net: GraphNetConfig,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            steps: None,
            batch: 8,
            gen: AdamConfig::new(0.002),
            disc_lr: 2e-4,
            lambda_rec: 100.0,
            seed: 0,
            literal_minimax: false,
            gp_sigma: 200.0,
            frames: 64,
            net: GraphNetConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Small networks that train on a laptop CPU in minutes.
    pub fn toy() -> TrainConfig {
        TrainConfig {
            steps: Some(600),
            batch: 8,
            net: GraphNetConfig { latent_channels: 16, channels: [16, 16, 8, 8], ..GraphNetConfig::default() },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch == 0 || self.epochs == 0 || self.steps == Some(0) {
            return bad("batch, epochs and steps must be positive");
        }
        if !(self.gen.lr > 0.0 && self.disc_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lambda_rec >= 0.0) {
            return bad("lambda_rec must be non-negative");
        }
        if !(self.gp_sigma > 0.0) {
            return bad("gp_sigma must be positive");
        }
        latent_length_for(self.frames).map_err(|e| TrainError::Config(e.to_string()))?;
        self.net.validate()?;
        Ok(())
    }

    pub fn total_steps(&self, samples: usize) -> u64 {
        self.steps.unwrap_or_else(|| (self.epochs * samples.div_ceil(self.batch)) as u64)
    }
}

/// Mean over batch and frames of per-joint L1 distance averaged over the
/// 25 joints: `sum |g - r| / (B * N * 25)` for `(B, 2, N, 25)` inputs.
pub fn loss_rec(gen: &Tensor, real: &Tensor) -> Result<Tensor, TensorError> {
    if gen.shape() != real.shape() || gen.ndim() != 4 || gen.shape()[3] != JOINTS {
        return Err(TensorError::ShapeMismatch { op: "loss_rec", lhs: gen.shape().to_vec(), rhs: real.shape().to_vec() });
    }
    let s = gen.shape();
    Ok(gen.sub(real)?.abs().sum().mul_scalar(1.0 / (s[0] * s[2] * s[3]) as f64))
}

/// Reconstruction loss between two motions of equal length.
pub fn motion_rec_distance(a: &Motion, b: &Motion) -> Result<f64, TensorError> {
    let n = a.len();
    if n != b.len() || n == 0 {
        return Err(TensorError::ShapeMismatch { op: "loss_rec", lhs: vec![n], rhs: vec![b.len()] });
    }
    let ta = Tensor::new(a.to_channels(), &[1, 2, n, JOINTS])?;
    let tb = Tensor::new(b.to_channels(), &[1, 2, n, JOINTS])?;
    Ok(loss_rec(&ta, &tb)?.item())
}

fn safe_ln(p: &Tensor) -> Tensor {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS).ln()
}

/// `-E[log D(x)] - E[log(1 - D(G(z)))]`.
pub fn d_loss(d_real: &Tensor, d_fake: &Tensor) -> Tensor {
    let real = safe_ln(d_real).mean();
    let fake = safe_ln(&d_fake.neg().add_scalar(1.0)).mean();
    real.add(&fake).expect("scalars").neg()
}

/// Generator adversarial loss: `-E[log D(G(z))]`, or the literal minimax
/// `E[log(1 - D(G(z)))]`.
pub fn g_loss(d_fake: &Tensor, literal_minimax: bool) -> Tensor {
    if literal_minimax {
        safe_ln(&d_fake.neg().add_scalar(1.0)).mean()
    } else {
        safe_ln(d_fake).mean().neg()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub rec_loss: f64,
    pub wall_ms: f64,
}

pub const METRICS_HEADER: &str = "step,d_loss,g_loss,rec_loss,wall_ms";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{:.3}", self.step, self.d_loss, self.g_loss, self.rec_loss, self.wall_ms)
    }
}

/// Batch of real windows in `(B, 2, N, 25)` layout with their styles.
pub fn stack_samples(samples: &[&Sample]) -> Result<(Tensor, Vec<StyleLabel>), TensorError> {
    let n = samples.first().map_or(0, |s| s.motion.len());
    let mut data = Vec::with_capacity(samples.len() * 2 * n * JOINTS);
    for s in samples {
        if s.motion.len() != n {
            return Err(TensorError::ShapeMismatch { op: "stack_samples", lhs: vec![n], rhs: vec![s.motion.len()] });
        }
        data.extend(s.motion.to_channels());
    }
    Ok((Tensor::new(data, &[samples.len(), 2, n, JOINTS])?, samples.iter().map(|s| s.style).collect()))
}

/// Generator, discriminator and both optimizers.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub g: Generator,
    pub d: Discriminator,
    pub g_opt: Adam,
    pub d_opt: Sgd,
    pub step: u64,
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer, TrainError> {
        cfg.validate()?;
        let (g, d) = build_pair(&cfg.net, cfg.seed)?;
        Ok(Trainer { g_opt: Adam::new(cfg.gen), d_opt: Sgd { lr: cfg.disc_lr }, cfg, g, d, step: 0 })
    }

    pub fn latent_steps(&self) -> usize {
        self.cfg.frames / crate::latent::FRAMES_PER_STEP
    }

    /// One discriminator update on real vs fresh fakes, then one generator
    /// update on `L_adv + lambda * L_rec`.
    pub fn train_step(&mut self, data: &[Sample]) -> Result<StepMetrics, TrainError> {
        if data.is_empty() {
            return Err(TrainError::NoData);
        }
        let start = Instant::now();
        let step = self.step + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(self.cfg.seed, step));
        let batch: Vec<&Sample> = (0..self.cfg.batch).map(|_| data.choose(&mut rng).expect("non-empty")).collect();
        let (real, styles) = stack_samples(&batch)?;
        if real.shape()[2] != self.cfg.frames {
            return Err(TrainError::Config(format!("samples have {} frames, config says {}", real.shape()[2], self.cfg.frames)));
        }
        let per_step: Vec<Vec<StyleLabel>> = styles.iter().map(|&s| vec![s; self.latent_steps()]).collect();
        let z = self.g.sample_latents(&per_step, self.cfg.gp_sigma, &mut rng)?;

        // discriminator
        let mut g_ctx = Ctx::train(rng.random());
        let mut d_ctx = Ctx::train(rng.random());
        let fake = self.g.forward(&z, &mut g_ctx)?.detach();
        g_ctx.discard_stats();
        self.d.zero_grad();
        let d_real = self.d.forward(&real, &styles, &mut d_ctx)?;
        let d_fake = self.d.forward(&fake, &styles, &mut d_ctx)?;
        let dl = d_loss(&d_real, &d_fake);
        self.check(step, &[("d_loss", dl.item())], &d_real, &d_fake)?;
        dl.backward()?;
        self.d_opt.step(&mut self.d)?;
        self.d.commit_stats(&mut d_ctx);

        // generator
        let mut d_ctx = Ctx::train(rng.random());
        self.g.zero_grad();
        let fake = self.g.forward(&z, &mut g_ctx)?;
        let d_fake = self.d.forward(&fake, &styles, &mut d_ctx)?;
        d_ctx.discard_stats();
        let adv = g_loss(&d_fake, self.cfg.literal_minimax);
        let rec = loss_rec(&fake, &real)?;
        let total = adv.add(&rec.mul_scalar(self.cfg.lambda_rec))?;
        self.check(step, &[("g_loss", adv.item()), ("rec_loss", rec.item())], &d_real, &d_fake)?;
        total.backward()?;
        self.g_opt.step(&mut self.g)?;
        self.g.commit_stats(&mut g_ctx);
        self.d.zero_grad();

        self.step = step;
        Ok(StepMetrics {
            step,
            d_loss: dl.item(),
            g_loss: adv.item(),
            rec_loss: rec.item(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn check(&self, step: u64, losses: &[(&str, f64)], d_real: &Tensor, d_fake: &Tensor) -> Result<(), TrainError> {
        if losses.iter().all(|(_, v)| v.is_finite()) {
            return Ok(());
        }
        let mut diag = losses.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ");
        diag += &format!("; D(real)={:?}; D(fake)={:?}", d_real.data(), d_fake.data());
        let mut bad = Vec::new();
        self.g.visit(&mut |p| {
            if p.data().iter().any(|v| !v.is_finite()) {
                bad.push(p.name().to_string());
            }
        });
        self.d.visit(&mut |p| {
            if p.data().iter().any(|v| !v.is_finite()) {
                bad.push(p.name().to_string());
            }
        });
        if !bad.is_empty() {
            diag += &format!("; non-finite parameters: {}", bad.join(", "));
        }
        Err(TrainError::NonFinite { step, diagnostics: diag })
    }

    /// Runs until `total` steps have been taken, calling `on_step` after
    /// each one and `on_checkpoint` every `checkpoint_every` steps.
    pub fn run(
        &mut self,
        data: &[Sample],
        total: u64,
        mut on_step: impl FnMut(&StepMetrics) -> Result<(), TrainError>,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        while self.step < total {
            let m = self.train_step(data)?;
            on_step(&m)?;
            if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn state(&self) -> Vec<Record> {
        let mut out = self.g.state();
        out.extend(self.d.state());
        out.extend(self.g_opt.state("opt.g"));
        out.push(Record { name: "trainer.step".into(), shape: vec![1], data: vec![self.step as f64] });
        out
    }

    pub fn load_state(&mut self, records: &[Record]) -> Result<(), TrainError> {
        self.g.load_state(records).map_err(TrainError::State)?;
        self.d.load_state(records).map_err(TrainError::State)?;
        self.g_opt.load_state("opt.g", records);
        self.step = records
            .iter()
            .find(|r| r.name == "trainer.step")
            .map(|r| r.data[0] as u64)
            .ok_or_else(|| TrainError::State("missing trainer.step".into()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(checkpoint::save(path, &self.state())?)
    }

    pub fn resume(cfg: TrainConfig, path: &Path) -> Result<Trainer, TrainError> {
        let mut t = Trainer::new(cfg)?;
        t.load_state(&checkpoint::load(path)?)?;
        Ok(t)
    }
}

/// Appends metrics rows to a CSV file, writing the header for a new file.
pub struct MetricsLog {
    file: std::fs::File,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<MetricsLog, TrainError> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{METRICS_HEADER}")?;
        }
        Ok(MetricsLog { file })
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<(), TrainError> {
        writeln!(self.file, "{}", m.csv_row())?;
        Ok(())
    }
}

/// Generates one normalized motion per entry of `styles` (each a
/// per-step style sequence) with dropout off and running batch-norm
/// statistics.
pub fn generate_motions(
    g: &Generator,
    styles: &[Vec<StyleLabel>],
    sigma: f64,
    seed: u64,
) -> Result<Vec<Motion>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(styles.len());
    for chunk in styles.chunks(16) {
        let poses = g.generate(chunk, sigma, &mut rng, &mut Ctx::eval())?;
        let per = poses.numel() / chunk.len();
        for (i, s) in chunk.iter().enumerate() {
            let majority = StyleLabel::ALL
                .into_iter()
                .max_by_key(|l| (s.iter().filter(|x| *x == l).count(), std::cmp::Reverse(l.index())));
            out.push(Motion::from_channels(&poses.data()[i * per..(i + 1) * per], DEFAULT_FPS, majority)?);
        }
    }
    Ok(out)
}

/// Moving average with window `w`.
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || xs.len() < w {
        return Vec::new();
    }
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

/// Random-uniform joint positions in the unit square, for baselines.
pub fn random_motion(frames: usize, rng: &mut impl Rng) -> Motion {
    let data: Vec<f64> = (0..2 * frames * JOINTS).map(|_| rng.random::<f64>()).collect();
    Motion::from_channels(&data, DEFAULT_FPS, None).expect("valid layout")
}
