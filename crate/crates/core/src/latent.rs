//! Generator conditioning input: temporally coherent Gaussian-process noise
//! stacked on top of a trainable per-style embedding.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::StyleLabel;
use crate::nn::{Module, Parameter};
use crate::tensor::{Tensor, TensorError};

/// Frames produced per latent time step.
pub const FRAMES_PER_STEP: usize = 16;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
const DEGENERATE_SIGMA: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum LatentError {
    #[error("invalid gp config: {0}")]
    Config(String),
    #[error("cholesky failed for channel {channel} even with jitter {jitter:e}")]
    Cholesky { channel: usize, jitter: f64 },
    #[error("expected {expected} per-step styles, got {got}")]
    StyleCount { expected: usize, got: usize },
    #[error("frame count {0} is not a positive multiple of 16")]
    Indivisible(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub channels: usize,
    pub steps: usize,
    pub vertices: usize,
    pub sigma: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { channels: 512, steps: 4, vertices: 1, sigma: 200.0 }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), LatentError> {
        if self.channels == 0 || self.steps == 0 {
            return Err(LatentError::Config("channels and steps must be at least 1".into()));
        }
        if self.vertices != 1 {
            return Err(LatentError::Config(format!("vertices must be 1, got {}", self.vertices)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(LatentError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Bandwidth of channel `c`: `sigma * c / C`.
    pub fn channel_sigma(&self, c: usize) -> f64 {
        self.sigma * c as f64 / self.channels as f64
    }
}

/// RBF covariance `exp(-|t - t'|^2 / (2 sigma^2))`; identity for a
/// vanishing bandwidth.
pub fn rbf(t: f64, t2: f64, sigma: f64) -> f64 {
    if sigma < DEGENERATE_SIGMA {
        return if t == t2 { 1.0 } else { 0.0 };
    }
    (-(t - t2).powi(2) / (2.0 * sigma * sigma)).exp()
}

pub fn kernel_matrix(steps: usize, sigma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(steps, steps, |i, j| rbf(i as f64, j as f64, sigma))
}

/// Cholesky factor of one channel's covariance over the latent steps.
#[derive(Debug, Clone)]
pub struct GpKernel {
    pub sigma: f64,
    pub jitter: f64,
    lower: DMatrix<f64>,
}

impl GpKernel {
    pub fn new(steps: usize, sigma: f64) -> Option<GpKernel> {
        let k = kernel_matrix(steps, sigma);
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX * (1.0 + 1e-9) {
            let jittered = &k + DMatrix::identity(steps, steps) * jitter;
            if let Some(ch) = Cholesky::new(jittered) {
                return Some(GpKernel { sigma, jitter, lower: ch.l() });
            }
            jitter *= 10.0;
        }
        None
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Maps standard-normal `eps` to one sample path, `L eps`.
    pub fn sample_path(&self, eps: &[f64]) -> Vec<f64> {
        (&self.lower * DVector::from_column_slice(eps)).iter().copied().collect()
    }
}

/// One kernel per channel.
pub fn channel_kernels(cfg: &GpConfig) -> Result<Vec<GpKernel>, LatentError> {
    cfg.validate()?;
    (0..cfg.channels)
        .map(|c| {
            GpKernel::new(cfg.steps, cfg.channel_sigma(c)).ok_or(LatentError::Cholesky { channel: c, jitter: JITTER_MAX })
        })
        .collect()
}

/// Draws `(C, T, 1)` noise where channel `c` is an independent GP path.
pub fn gp_sample(cfg: &GpConfig, seed: u64) -> Result<Tensor, LatentError> {
    let kernels = channel_kernels(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with(&kernels, cfg.steps, &mut rng)?)
}

/// Draws `(C, T, 1)` noise from precomputed kernels.
pub fn sample_with(kernels: &[GpKernel], steps: usize, rng: &mut ChaCha8Rng) -> Result<Tensor, TensorError> {
    let mut data = Vec::with_capacity(kernels.len() * steps);
    for k in kernels {
        let eps: Vec<f64> = (0..steps).map(|_| StandardNormal.sample(rng)).collect();
        data.extend(k.sample_path(&eps));
    }
    Tensor::new(data, &[kernels.len(), steps, 1])
}

/// `N / 16`, rejecting frame counts that are not a positive multiple of 16.
pub fn latent_length_for(frames: usize) -> Result<usize, LatentError> {
    if frames == 0 || frames % FRAMES_PER_STEP != 0 {
        return Err(LatentError::Indivisible(frames));
    }
    Ok(frames / FRAMES_PER_STEP)
}

/// Trainable `(styles, C)` table.
#[derive(Debug, Clone)]
pub struct StyleEmbedding {
    pub table: Parameter,
}

impl StyleEmbedding {
    pub fn new(channels: usize, rng: &mut impl rand::Rng) -> StyleEmbedding {
        let data = (0..StyleLabel::COUNT * channels).map(|_| StandardNormal.sample(rng)).collect();
        StyleEmbedding {
            table: Parameter::new("style_embedding", data, &[StyleLabel::COUNT, channels]).expect("shape matches"),
        }
    }

    pub fn channels(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, style: StyleLabel) -> &[f64] {
        let c = self.channels();
        &self.table.data()[style.index() * c..(style.index() + 1) * c]
    }
}

impl Module for StyleEmbedding {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.table)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.table)
    }
}

#[derive(Debug, Clone)]
pub struct LatentTensor {
    /// `(2C, T, 1)`.
    pub data: Tensor,
    pub per_step_styles: Vec<StyleLabel>,
}

/// Concatenates noise `(C, T, 1)` with the embedding rows of each step's
/// style along the channel axis.
pub fn assemble_latent(noise: &Tensor, styles: &[StyleLabel], emb: &StyleEmbedding) -> Result<LatentTensor, LatentError> {
    let &[c, t, v] = noise.shape() else {
        return Err(TensorError::Invalid { op: "assemble_latent", msg: format!("noise shape {:?}", noise.shape()) }.into());
    };
    if styles.len() != t {
        return Err(LatentError::StyleCount { expected: t, got: styles.len() });
    }
    if c != emb.channels() || v != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "assemble_latent",
            lhs: noise.shape().to_vec(),
            rhs: emb.table.shape().to_vec(),
        }
        .into());
    }
    let rows: Vec<usize> = styles.iter().map(|s| s.index()).collect();
    let cond = emb.table.tensor().index_rows(&rows)?.permute(&[1, 0])?.reshape(&[c, t, 1])?;
    let data = Tensor::concat(&[noise.clone(), cond], 0)?;
    Ok(LatentTensor { data, per_step_styles: styles.to_vec() })
}

/// Stacks latents into a `(N, 2C, T, 1)` batch.
pub fn stack_latents(latents: &[LatentTensor]) -> Result<Tensor, TensorError> {
    let parts = latents
        .iter()
        .map(|l| {
            let mut shape = vec![1];
            shape.extend_from_slice(l.data.shape());
            l.data.reshape(&shape)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Tensor::concat(&parts, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_diagonal_and_example() {
        let cfg = GpConfig::default();
        assert_eq!(rbf(2.0, 2.0, cfg.channel_sigma(7)), 1.0);
        let s = cfg.channel_sigma(256);
        assert_eq!(s, 100.0);
        assert!((rbf(0.0, 3.0, s) - (-9.0f64 / 20000.0).exp()).abs() < 1e-15);
        assert!((rbf(0.0, 3.0, s) - 0.99955).abs() < 1e-5);
    }

    #[test]
    fn zero_bandwidth_is_white_noise() {
        let k = kernel_matrix(4, 0.0);
        assert_eq!(k, DMatrix::identity(4, 4));
    }

    #[test]
    fn every_default_channel_factorizes() {
        let ks = channel_kernels(&GpConfig::default()).unwrap();
        assert!(ks.iter().all(|k| k.jitter <= JITTER_MAX));
        assert_eq!(ks.len(), 512);
    }

    #[test]
    fn sampling_is_seeded() {
        let cfg = GpConfig { channels: 8, ..Default::default() };
        let a = gp_sample(&cfg, 11).unwrap();
        assert_eq!(a.shape(), &[8, 4, 1]);
        assert_eq!(a.data(), gp_sample(&cfg, 11).unwrap().data());
        assert_ne!(a.data(), gp_sample(&cfg, 12).unwrap().data());
    }

    #[test]
    fn config_validation() {
        assert!(GpConfig { vertices: 2, ..Default::default() }.validate().is_err());
        assert!(GpConfig { sigma: 0.0, ..Default::default() }.validate().is_err());
        assert!(GpConfig { steps: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn latent_lengths() {
        assert_eq!(latent_length_for(64).unwrap(), 4);
        assert_eq!(latent_length_for(16).unwrap(), 1);
        assert_eq!(latent_length_for(192).unwrap(), 12);
        assert!(latent_length_for(50).is_err());
        assert!(latent_length_for(0).is_err());
    }

    #[test]
    fn concatenation_layout() {
        let mut emb = StyleEmbedding::new(2, &mut ChaCha8Rng::seed_from_u64(0));
        emb.table.set_data(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let noise = Tensor::new(vec![0.1, 0.2], &[2, 1, 1]).unwrap();
        let l = assemble_latent(&noise, &[StyleLabel::MJ], &emb).unwrap();
        assert_eq!(l.data.shape(), &[4, 1, 1]);
        assert_eq!(l.data.data(), &[0.1, 0.2, 3.0, 4.0]);
    }

    #[test]
    fn per_step_styles_switch_rows() {
        let emb = StyleEmbedding::new(3, &mut ChaCha8Rng::seed_from_u64(5));
        let noise = Tensor::zeros(&[3, 4, 1]);
        let styles = [StyleLabel::Ballet, StyleLabel::Ballet, StyleLabel::Salsa, StyleLabel::Salsa];
        let l = assemble_latent(&noise, &styles, &emb).unwrap();
        let at = |c: usize, t: usize| l.data.data()[c * 4 + t];
        for c in 0..3 {
            assert_eq!(at(3 + c, 0), emb.row(StyleLabel::Ballet)[c]);
            assert_eq!(at(3 + c, 1), at(3 + c, 0));
            assert_eq!(at(3 + c, 2), emb.row(StyleLabel::Salsa)[c]);
        }
        assert!(assemble_latent(&noise, &styles[..3], &emb).is_err());
    }

    #[test]
    fn gradient_reaches_embedding() {
        let emb = StyleEmbedding::new(2, &mut ChaCha8Rng::seed_from_u64(1));
        let noise = Tensor::zeros(&[2, 3, 1]);
        let l = assemble_latent(&noise, &[StyleLabel::Salsa; 3], &emb).unwrap();
        l.data.sum().backward().unwrap();
        assert_eq!(emb.table.grad(), vec![0.0, 0.0, 0.0, 0.0, 3.0, 3.0]);
    }

    #[test]
    fn batch_stacking() {
        let emb = StyleEmbedding::new(2, &mut ChaCha8Rng::seed_from_u64(1));
        let l = assemble_latent(&Tensor::zeros(&[2, 1, 1]), &[StyleLabel::Ballet], &emb).unwrap();
        assert_eq!(stack_latents(&[l.clone(), l]).unwrap().shape(), &[2, 4, 1, 1]);
    }
}
