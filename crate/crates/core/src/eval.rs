//! Motion classifier used as feature extractor, Fréchet distance over its
//! features and the GAN-train / GAN-test protocols.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::StyleLabel;
use crate::dataset::Sample;
use crate::graphnet::{GraphError, GraphLevel, StConvOptions, StGraphConv};
use crate::nn::{Ctx, Linear, Module, Parameter, TemporalConv};
use crate::optim::{Adam, AdamConfig, OptimError, Optimizer};
use crate::skeleton::JOINTS;
use crate::tensor::{softmax_rows, Tensor, TensorError};
use crate::training::stack_samples;

/// Eigenvalues below this are treated as zero in matrix square roots.
pub const EIGEN_CLAMP: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("{0} set contains a single class")]
    SingleClass(&'static str),
    #[error("feature sets differ in width ({0} vs {1})")]
    Width(usize, usize),
    #[error("non-finite Fréchet distance")]
    NonFinite,
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub channels: [usize; 3],
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { channels: [8, 16, 32], feature_dim: 64, epochs: 12, batch: 16, lr: 0.001 }
    }
}

/// Three st-conv stages, each followed by a strided conv halving time. Time
/// is then pooled, and a feature layer over all joints feeds a linear head
/// over the three styles.
#[derive(Debug, Clone)]
pub struct MotionClassifier {
    pub cfg: ClassifierConfig,
    convs: Vec<StGraphConv>,
    pools: Vec<TemporalConv>,
    feature: Linear,
    head: Linear,
}

impl MotionClassifier {
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Result<MotionClassifier, EvalError> {
        if cfg.channels.contains(&0) || cfg.feature_dim == 0 || cfg.batch == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
            return Err(EvalError::Config(format!("{cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let level = GraphLevel::new(JOINTS)?;
        let opts = StConvOptions { dropout: 0.0, ..StConvOptions::default() };
        let mut convs = Vec::new();
        let mut pools = Vec::new();
        let mut c_in = 2;
        for (i, &c) in cfg.channels.iter().enumerate() {
            convs.push(StGraphConv::new(&format!("cls.st{i}"), &level, c_in, c, opts, &mut rng)?);
            pools.push(TemporalConv::new(&format!("cls.pool{i}"), c, c, 4, 2, 1, &mut rng));
            c_in = c;
        }
        let feature = Linear::new("cls.feature", c_in * JOINTS, cfg.feature_dim, &mut rng);
        let head = Linear::new("cls.head", cfg.feature_dim, StyleLabel::COUNT, &mut rng);
        Ok(MotionClassifier { cfg, convs, pools, feature, head })
    }

    /// Penultimate activations `(N, F)` and logits `(N, 3)` for
    /// `(N, 2, frames, 25)` poses.
    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<(Tensor, Tensor), EvalError> {
        let mut h = x.clone();
        for (conv, pool) in self.convs.iter().zip(&self.pools) {
            h = pool.forward(&conv.forward(&h, ctx)?)?;
        }
        let n = h.shape()[0];
        let pooled = h.mean_axes(&[2])?.reshape(&[n, self.cfg.channels[2] * JOINTS])?;
        let feats = self.feature.forward(&pooled)?.leaky_relu(0.2);
        let logits = self.head.forward(&feats)?;
        Ok((feats, logits))
    }

    pub fn features(&self, samples: &[Sample]) -> Result<Vec<Vec<f64>>, EvalError> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(32) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let (x, _) = stack_samples(&refs)?;
            let (f, _) = self.forward(&x, &mut Ctx::eval())?;
            out.extend(f.data().chunks(self.cfg.feature_dim).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<StyleLabel>, EvalError> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(32) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let (x, _) = stack_samples(&refs)?;
            let (_, logits) = self.forward(&x, &mut Ctx::eval())?;
            for p in softmax_rows(logits.data(), StyleLabel::COUNT).chunks(StyleLabel::COUNT) {
                let best = (0..StyleLabel::COUNT).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("3 classes");
                out.push(StyleLabel::from_index(best).expect("3 classes"));
            }
        }
        Ok(out)
    }

    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64, EvalError> {
        if samples.is_empty() {
            return Err(EvalError::Empty("test"));
        }
        let pred = self.predict(samples)?;
        Ok(pred.iter().zip(samples).filter(|(p, s)| **p == s.style).count() as f64 / samples.len() as f64)
    }

    /// Fraction of `samples` per style that are classified correctly;
    /// `None` for styles absent from `samples`.
    pub fn accuracy_by_style(&self, samples: &[Sample]) -> Result<[Option<f64>; 3], EvalError> {
        let pred = self.predict(samples)?;
        let mut hit = [0usize; 3];
        let mut all = [0usize; 3];
        for (p, s) in pred.iter().zip(samples) {
            all[s.style.index()] += 1;
            hit[s.style.index()] += usize::from(*p == s.style);
        }
        Ok(std::array::from_fn(|i| (all[i] > 0).then(|| hit[i] as f64 / all[i] as f64)))
    }
}

impl Module for MotionClassifier {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for c in &self.convs {
            c.visit(f);
        }
        for p in &self.pools {
            p.visit(f);
        }
        self.feature.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        for p in &mut self.pools {
            p.visit_mut(f);
        }
        self.feature.visit_mut(f);
        self.head.visit_mut(f);
    }
}

fn class_count(samples: &[Sample]) -> usize {
    let mut seen = [false; 3];
    for s in samples {
        seen[s.style.index()] = true;
    }
    seen.iter().filter(|&&b| b).count()
}

/// Trains a fresh classifier with Adam on cross-entropy.
pub fn train_motion_classifier(train: &[Sample], cfg: &ClassifierConfig, seed: u64) -> Result<MotionClassifier, EvalError> {
    if train.is_empty() {
        return Err(EvalError::Empty("training"));
    }
    if class_count(train) < 2 {
        return Err(EvalError::SingleClass("training"));
    }
    let mut model = MotionClassifier::new(cfg.clone(), seed)?;
    let mut opt = Adam::new(AdamConfig::new(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a5_5e5);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let (x, styles) = stack_samples(&refs)?;
            let labels: Vec<usize> = styles.iter().map(|s| s.index()).collect();
            let mut ctx = Ctx::train(rng.random());
            model.zero_grad();
            let (_, logits) = model.forward(&x, &mut ctx)?;
            logits.cross_entropy(&labels)?.backward()?;
            opt.step(&mut model)?;
            model.commit_stats(&mut ctx);
        }
    }
    Ok(model)
}

fn moments(x: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let (m, f) = (x.len(), x[0].len());
    let data = DMatrix::from_fn(m, f, |i, j| x[i][j]);
    let mean = DVector::from_fn(f, |j, _| data.column(j).mean());
    let centred = DMatrix::from_fn(m, f, |i, j| data[(i, j)] - mean[j]);
    let denom = (m.max(2) - 1) as f64;
    let cov = centred.transpose() * &centred / denom;
    (mean, cov)
}

/// Symmetric PSD square root with eigenvalues clamped at [`EIGEN_CLAMP`].
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| if l > EIGEN_CLAMP { l.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, clamped at zero.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, EvalError> {
    if a.is_empty() {
        return Err(EvalError::Empty("first feature"));
    }
    if b.is_empty() {
        return Err(EvalError::Empty("second feature"));
    }
    let (fa, fb) = (a[0].len(), b[0].len());
    if fa != fb || a.iter().chain(b).any(|r| r.len() != fa) {
        return Err(EvalError::Width(fa, fb));
    }
    if a.len() <= fa || b.len() <= fa {
        log::warn!("fid: {} and {} samples for {fa} features; covariance is rank deficient", a.len(), b.len());
    }
    let (mu_a, s_a) = moments(a);
    let (mu_b, s_b) = moments(b);
    let ra = sqrt_psd(&s_a);
    let inner = &ra * &s_b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|&l| if l > EIGEN_CLAMP { l.sqrt() } else { 0.0 }).sum();
    let d = (mu_a - mu_b).norm_squared() + s_a.trace() + s_b.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(EvalError::NonFinite);
    }
    Ok(d.max(0.0))
}

/// Train on generated motions, test on real ones.
pub fn gan_train(gen: &[Sample], real_eval: &[Sample], cfg: &ClassifierConfig, seed: u64) -> Result<f64, EvalError> {
    if class_count(gen) < 2 {
        return Err(if gen.is_empty() { EvalError::Empty("generated") } else { EvalError::SingleClass("generated") });
    }
    train_motion_classifier(gen, cfg, seed)?.accuracy(real_eval)
}

/// Train on real motions, test on generated ones.
pub fn gan_test(real: &[Sample], gen: &[Sample], cfg: &ClassifierConfig, seed: u64) -> Result<f64, EvalError> {
    if gen.is_empty() {
        return Err(EvalError::Empty("generated"));
    }
    train_motion_classifier(real, cfg, seed)?.accuracy(gen)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleRow {
    pub style: Option<StyleLabel>,
    pub fid: Stat,
    pub gan_train: Stat,
    pub gan_test: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub repeats: usize,
    pub generated: usize,
    pub real: usize,
    pub per_style: Vec<StyleRow>,
    pub average: StyleRow,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10}{:>18}{:>18}{:>18}", "Style", "FID", "GAN-Train", "GAN-Test");
        let cell = |st: &Stat, p: usize| format!("{:.p$} ± {:.p$}", st.mean, st.std);
        for row in self.per_style.iter().chain(std::iter::once(&self.average)) {
            let name = row.style.map_or("Average".to_string(), |l| l.to_string());
            let _ = writeln!(
                s,
                "{name:<10}{:>18}{:>18}{:>18}",
                cell(&row.fid, 2),
                cell(&row.gan_train, 2),
                cell(&row.gan_test, 2)
            );
        }
        s
    }
}

fn by_style(samples: &[Sample], style: StyleLabel) -> Vec<Sample> {
    samples.iter().filter(|s| s.style == style).cloned().collect()
}

/// Runs `repeats` rounds. Each round trains one classifier on the real
/// evaluation set (feature extractor for FID and GAN-test) and one on the
/// generated set (GAN-train).
pub fn evaluate(
    generated: &[Sample],
    real_eval: &[Sample],
    cfg: &ClassifierConfig,
    repeats: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if generated.is_empty() {
        return Err(EvalError::Empty("generated"));
    }
    if real_eval.is_empty() {
        return Err(EvalError::Empty("real"));
    }
    let repeats = repeats.max(1);
    let mut fid_s = vec![vec![]; 3];
    let mut train_s = vec![vec![]; 3];
    let mut test_s = vec![vec![]; 3];
    let mut avg = (vec![], vec![], vec![]);
    for r in 0..repeats {
        let rs = seed.wrapping_add(r as u64 * 7919);
        let real_cls = train_motion_classifier(real_eval, cfg, rs)?;
        let gen_cls = train_motion_classifier(generated, cfg, rs ^ 0x5a5a)?;
        let test_acc = real_cls.accuracy_by_style(generated)?;
        let train_acc = gen_cls.accuracy_by_style(real_eval)?;
        let (mut f_sum, mut tr_sum, mut te_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
        for style in StyleLabel::ALL {
            let (g, re) = (by_style(generated, style), by_style(real_eval, style));
            if g.is_empty() || re.is_empty() {
                continue;
            }
            let i = style.index();
            let f = fid(&real_cls.features(&g)?, &real_cls.features(&re)?)?;
            let (tr, te) = (train_acc[i].unwrap_or(0.0), test_acc[i].unwrap_or(0.0));
            fid_s[i].push(f);
            train_s[i].push(tr);
            test_s[i].push(te);
            f_sum += f;
            tr_sum += tr;
            te_sum += te;
            n += 1;
        }
        if n > 0 {
            avg.0.push(f_sum / n as f64);
            avg.1.push(tr_sum / n as f64);
            avg.2.push(te_sum / n as f64);
        }
    }
    let per_style = StyleLabel::ALL
        .into_iter()
        .filter(|s| !fid_s[s.index()].is_empty())
        .map(|s| {
            let i = s.index();
            StyleRow { style: Some(s), fid: Stat::of(&fid_s[i]), gan_train: Stat::of(&train_s[i]), gan_test: Stat::of(&test_s[i]) }
        })
        .collect();
    Ok(EvalReport {
        repeats,
        generated: generated.len(),
        real: real_eval.len(),
        per_style,
        average: StyleRow { style: None, fid: Stat::of(&avg.0), gan_train: Stat::of(&avg.1), gan_test: Stat::of(&avg.2) },
    })
}

/// Gaussian feature rows for tests and baselines: `n` draws from
/// `N(shift * e_0, I)` in `f` dimensions.
pub fn gaussian_features(n: usize, f: usize, shift: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            (0..f)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(rng);
                    if j == 0 { z + shift } else { z }
                })
                .collect()
        })
        .collect()
}
