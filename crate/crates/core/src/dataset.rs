//! Pose-sequence corpus, window extraction, augmentation and a synthetic
//! three-style fixture corpus with matching audio.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, AudioError, LabeledAudio, StyleLabel, SAMPLE_RATE};
use crate::latent::GpKernel;
use crate::skeleton::{
    normalize_motion, recover_missing_joints, Motion, NormalizeMode, Pose, SkeletonError, SkeletonTopology,
    DEFAULT_FPS, JOINTS,
};

/// Frames per motion sample.
pub const WINDOW: usize = 64;

/// Shoulders through wrists and hips through feet.
pub const LIMB_JOINTS: [usize; 18] = [2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14, 19, 20, 21, 22, 23, 24];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("clip has {len} frames, fewer than the window of {window}")]
    TooShort { len: usize, window: usize },
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub source_id: String,
    pub style: StyleLabel,
    pub split: Split,
    /// Pixel-space poses at 24 FPS.
    pub motion: Motion,
    pub audio: AudioClip,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub clips: Vec<Clip>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Clip> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn labeled_audio(&self, split: Split) -> Vec<LabeledAudio> {
        self.split(split).map(|c| LabeledAudio { samples: c.audio.samples.clone(), label: c.style }).collect()
    }
}

/// `floor((len - n) / stride) + 1` exact slices at offsets `0, stride, ...`.
pub fn extract_windows(clip: &Motion, n: usize, stride: usize) -> Result<Vec<Motion>, DatasetError> {
    if stride == 0 || n == 0 {
        return Err(DatasetError::Config("window and stride must be positive".into()));
    }
    if clip.len() < n {
        return Err(DatasetError::TooShort { len: clip.len(), window: n });
    }
    Ok((0..=(clip.len() - n) / stride).map(|i| clip.slice(i * stride, n)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub window: usize,
    pub shift_stride: usize,
    /// Shift used for MJ clips in the evaluation split.
    pub eval_mj_stride: usize,
    pub gp_noise: bool,
    pub amplitude: f64,
    pub sigma: f64,
    /// Noisy copies added per clean training window.
    pub noisy_copies: usize,
    pub limb_joints: Vec<usize>,
    pub normalize: NormalizeMode,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            window: WINDOW,
            shift_stride: 32,
            eval_mj_stride: 16,
            gp_noise: true,
            amplitude: 0.02,
            sigma: 100.0,
            noisy_copies: 1,
            limb_joints: LIMB_JOINTS.to_vec(),
            normalize: NormalizeMode::PerFrame,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.window == 0 || self.shift_stride == 0 || self.eval_mj_stride == 0 {
            return Err(DatasetError::Config("window and strides must be at least 1".into()));
        }
        if !(self.amplitude >= 0.0) || !(self.sigma > 0.0) {
            return Err(DatasetError::Config("amplitude must be >= 0 and sigma > 0".into()));
        }
        if let Some(j) = self.limb_joints.iter().find(|&&j| j >= JOINTS) {
            return Err(DatasetError::Config(format!("limb joint {j} out of range")));
        }
        Ok(())
    }
}

/// Adds `amplitude`-scaled GP paths over the frame index to x and y of
/// every joint in `limbs`; all other joints are copied untouched.
pub fn gp_limb_noise(m: &Motion, limbs: &[usize], amplitude: f64, sigma: f64, rng: &mut impl Rng) -> Motion {
    if amplitude == 0.0 || m.is_empty() {
        return m.clone();
    }
    let n = m.len();
    let kernel = GpKernel::new(n, sigma).expect("rbf kernel factorizes with jitter");
    let mut out = m.clone();
    for &j in limbs {
        for axis in 0..2 {
            let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            for (t, d) in kernel.sample_path(&eps).into_iter().enumerate() {
                out.frames[t].joints[j][axis] += amplitude * d;
            }
        }
    }
    out
}

/// One normalized motion window.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub motion: Motion,
    pub style: StyleLabel,
    pub source_id: String,
    pub noisy: bool,
}

fn prepare(clip: &Clip, cfg: &AugmentConfig) -> Result<Motion, DatasetError> {
    let recovered = recover_missing_joints(&clip.motion, &SkeletonTopology::body25())?;
    let mut m = normalize_motion(&recovered, cfg.normalize)?;
    m.style = Some(clip.style);
    Ok(m)
}

/// Windows from the training split: shifts plus GP-noised copies.
pub fn build_training_set(corpus: &Corpus, cfg: &AugmentConfig, seed: u64) -> Result<Vec<Sample>, DatasetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for clip in corpus.split(Split::Train) {
        let m = prepare(clip, cfg)?;
        for w in extract_windows(&m, cfg.window, cfg.shift_stride)? {
            if cfg.gp_noise {
                for _ in 0..cfg.noisy_copies {
                    out.push(Sample {
                        motion: gp_limb_noise(&w, &cfg.limb_joints, cfg.amplitude, cfg.sigma, &mut rng),
                        style: clip.style,
                        source_id: clip.source_id.clone(),
                        noisy: true,
                    });
                }
            }
            out.push(Sample { motion: w, style: clip.style, source_id: clip.source_id.clone(), noisy: false });
        }
    }
    Ok(out)
}

/// Windows from the evaluation split: shifts only (MJ uses its own stride).
pub fn build_eval_set(corpus: &Corpus, cfg: &AugmentConfig) -> Result<Vec<Sample>, DatasetError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for clip in corpus.split(Split::Eval) {
        let m = prepare(clip, cfg)?;
        let stride = if clip.style == StyleLabel::MJ { cfg.eval_mj_stride } else { cfg.shift_stride };
        for w in extract_windows(&m, cfg.window, stride)? {
            out.push(Sample { motion: w, style: clip.style, source_id: clip.source_id.clone(), noisy: false });
        }
    }
    Ok(out)
}

/// Per-style clip and sample counts in the layout of the dataset table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train_clips: [usize; 3],
    pub train_samples: [usize; 3],
    pub eval_clips: [usize; 3],
    pub eval_samples: [usize; 3],
}

impl DatasetStats {
    /// Counts from per-clip `(style, split, frames)` entries using the
    /// window arithmetic of `cfg`.
    pub fn from_lengths(entries: &[(StyleLabel, Split, usize)], cfg: &AugmentConfig) -> DatasetStats {
        let mut s = DatasetStats::default();
        for &(style, split, len) in entries {
            let i = style.index();
            match split {
                Split::Train => {
                    s.train_clips[i] += 1;
                    let w = window_count(len, cfg.window, cfg.shift_stride);
                    let copies = if cfg.gp_noise { 1 + cfg.noisy_copies } else { 1 };
                    s.train_samples[i] += w * copies;
                }
                Split::Eval => {
                    s.eval_clips[i] += 1;
                    let stride = if style == StyleLabel::MJ { cfg.eval_mj_stride } else { cfg.shift_stride };
                    s.eval_samples[i] += window_count(len, cfg.window, stride);
                }
            }
        }
        s
    }

    pub fn of_corpus(corpus: &Corpus, cfg: &AugmentConfig) -> DatasetStats {
        let entries: Vec<_> = corpus.clips.iter().map(|c| (c.style, c.split, c.motion.len())).collect();
        Self::from_lengths(&entries, cfg)
    }

    pub fn render(&self) -> String {
        let row = |name: &str, tr: &[usize; 3], ev: &[usize; 3]| {
            format!(
                "{name:<24}{:>8}{:>8}{:>8}{:>8}   {:>8}{:>8}{:>8}{:>8}\n",
                tr[0],
                tr[1],
                tr[2],
                tr.iter().sum::<usize>(),
                ev[0],
                ev[1],
                ev[2],
                ev.iter().sum::<usize>()
            )
        };
        let mut s = String::new();
        let _ = writeln!(s, "{:<24}{:^32}   {:^32}", "", "Training", "Evaluation");
        let _ = writeln!(
            s,
            "{:<24}{:>8}{:>8}{:>8}{:>8}   {:>8}{:>8}{:>8}{:>8}",
            "Setup", "Ballet", "MJ", "Salsa", "Total", "Ballet", "MJ", "Salsa", "Total"
        );
        s += &row("w/o Data Augmentation", &self.train_clips, &self.eval_clips);
        s += &row("w/ Data Augmentation", &self.train_samples, &self.eval_samples);
        s
    }
}

pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window || stride == 0 {
        0
    } else {
        (len - window) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub train_per_style: usize,
    pub eval_per_style: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Relative per-clip variation of amplitude and tempo.
    pub variation: f64,
    /// Per-joint pixel jitter.
    pub jitter_px: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_per_style: 20,
            eval_per_style: 10,
            min_frames: 128,
            max_frames: 160,
            variation: 0.1,
            jitter_px: 1.0,
        }
    }
}

/// Body-frame articulation of one pose (angles in radians, lengths in
/// body heights). Arm and leg angles are measured from hanging straight
/// down, positive away from the body.
#[derive(Debug, Clone, Copy, Default)]
struct Articulation {
    lean: f64,
    hip_shift: f64,
    arm: [f64; 2],
    elbow: [f64; 2],
    leg: [f64; 2],
    knee: [f64; 2],
}

/// Places the 25 joints in a y-up body frame centred on the mid hip.
fn pose_from(a: &Articulation) -> [[f64; 2]; JOINTS] {
    let mut j = [[0.0; 2]; JOINTS];
    let rot = |p: [f64; 2]| {
        let (s, c) = a.lean.sin_cos();
        [p[0] * c - p[1] * s, p[0] * s + p[1] * c]
    };
    let add = |p: [f64; 2], q: [f64; 2]| [p[0] + q[0], p[1] + q[1]];
    let hip = [a.hip_shift, 0.0];
    let up = |p: [f64; 2]| add(hip, rot(p));
    j[8] = hip;
    j[1] = up([0.0, 0.5]);
    j[0] = up([0.0, 0.66]);
    j[15] = up([-0.03, 0.69]);
    j[16] = up([0.03, 0.69]);
    j[17] = up([-0.07, 0.67]);
    j[18] = up([0.07, 0.67]);
    // side 0 = right (image left, -x), side 1 = left
    for side in 0..2 {
        let sx = if side == 0 { -1.0 } else { 1.0 };
        let (sh, el, wr) = if side == 0 { (2, 3, 4) } else { (5, 6, 7) };
        j[sh] = up([0.17 * sx, 0.47]);
        let th = a.arm[side] + a.lean * sx;
        j[el] = add(j[sh], [0.27 * sx * th.sin(), -0.27 * th.cos()]);
        let th2 = th + a.elbow[side];
        j[wr] = add(j[el], [0.24 * sx * th2.sin(), -0.24 * th2.cos()]);

        let (hp, kn, an) = if side == 0 { (9, 10, 11) } else { (12, 13, 14) };
        j[hp] = add(hip, [0.09 * sx, 0.0]);
        let al = a.leg[side];
        j[kn] = add(j[hp], [0.4 * sx * al.sin(), -0.4 * al.cos()]);
        let al2 = al - a.knee[side];
        j[an] = add(j[kn], [0.38 * sx * al2.sin(), -0.38 * al2.cos()]);
        let (big, small, heel) = if side == 0 { (22, 23, 24) } else { (19, 20, 21) };
        j[big] = add(j[an], [0.06 * sx, -0.04]);
        j[small] = add(j[an], [0.09 * sx, -0.035]);
        j[heel] = add(j[an], [-0.01 * sx, -0.045]);
    }
    j
}

/// Sharpened oscillation in `[-1, 1]`.
fn snap(phase: f64) -> f64 {
    (4.0 * phase.sin()).tanh() / 4f64.tanh()
}

#[derive(Debug, Clone, Copy)]
struct ClipParams {
    amp: f64,
    tempo: f64,
    phase: f64,
}

/// Articulation of a style at time `t` seconds.
fn articulate(style: StyleLabel, t: f64, p: ClipParams) -> Articulation {
    let w = |hz: f64| 2.0 * PI * hz * p.tempo * t + p.phase;
    match style {
        // slow arm arcs overhead, gentle leg extension
        StyleLabel::Ballet => Articulation {
            lean: 0.05 * p.amp * w(0.5).sin(),
            hip_shift: 0.0,
            arm: [2.2 + 0.6 * p.amp * w(0.5).sin(), 2.2 + 0.6 * p.amp * (w(0.5) + PI).sin()],
            elbow: [0.25, 0.25],
            leg: [0.05, 0.15 + 0.35 * p.amp * (0.5 + 0.5 * w(0.5).sin())],
            knee: [0.0, 0.0],
        },
        // sharp alternating leg steps, bent arms close to the body
        StyleLabel::MJ => {
            let s = snap(w(2.0));
            Articulation {
                lean: 0.0,
                hip_shift: 0.0,
                arm: [0.35 + 0.15 * p.amp * s, 0.35 - 0.15 * p.amp * s],
                elbow: [1.6, 1.6],
                leg: [0.1 + 0.45 * p.amp * s.max(0.0), 0.1 + 0.45 * p.amp * (-s).max(0.0)],
                knee: [0.8 * p.amp * s.max(0.0), 0.8 * p.amp * (-s).max(0.0)],
            }
        }
        // torso sway with hips, arms half raised
        StyleLabel::Salsa => Articulation {
            lean: 0.2 * p.amp * w(1.0).sin(),
            hip_shift: 0.08 * p.amp * w(1.0).sin(),
            arm: [1.1 + 0.3 * p.amp * w(1.0).cos(), 1.1 - 0.3 * p.amp * w(1.0).cos()],
            elbow: [0.9, 0.9],
            leg: [0.2 - 0.1 * p.amp * w(1.0).sin(), 0.2 + 0.1 * p.amp * w(1.0).sin()],
            knee: [0.15, 0.15],
        },
    }
}

/// Pixel-space motion of one style (image coordinates, y down).
pub fn synth_motion(style: StyleLabel, frames: usize, rng: &mut impl Rng, variation: f64, jitter_px: f64) -> Motion {
    let vary = |rng: &mut dyn rand::RngCore| 1.0 + variation * (2.0 * rng.random::<f64>() - 1.0);
    let params = ClipParams { amp: vary(rng), tempo: vary(rng), phase: 0.3 * variation * (2.0 * rng.random::<f64>() - 1.0) };
    let height = 300.0 * vary(rng);
    let centre = [256.0 + rng.random_range(-40.0..40.0), 300.0 + rng.random_range(-30.0..30.0)];
    let jitter = Normal::new(0.0, jitter_px.max(1e-12)).expect("positive std");
    let out = (0..frames)
        .map(|f| {
            let body = pose_from(&articulate(style, f as f64 / DEFAULT_FPS as f64, params));
            let mut joints = [[0.0; 2]; JOINTS];
            for (dst, src) in joints.iter_mut().zip(body) {
                *dst = [
                    centre[0] + src[0] * height + jitter.sample(rng),
                    centre[1] - src[1] * height + jitter.sample(rng),
                ];
            }
            Pose::new(joints)
        })
        .collect();
    Motion::new(out, DEFAULT_FPS, Some(style))
}

/// Style-specific audio texture: a pure tone for Ballet, rhythmic noise
/// bursts for MJ and a tremolo square-ish wave for Salsa.
pub fn synth_audio(style: StyleLabel, seconds: f64, rng: &mut impl Rng) -> AudioClip {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let f_jit = 1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0);
    let gain = rng.random_range(0.3..0.6);
    let sr = SAMPLE_RATE as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let floor = 0.02 * (2.0 * rng.random::<f64>() - 1.0);
            let v = match style {
                StyleLabel::Ballet => (2.0 * PI * 440.0 * f_jit * t).sin() + 0.3 * (2.0 * PI * 880.0 * f_jit * t).sin(),
                StyleLabel::MJ => {
                    let beat = (t * 4.0 * f_jit).fract();
                    (-beat * 20.0).exp() * (2.0 * rng.random::<f64>() - 1.0) * 1.5
                }
                StyleLabel::Salsa => {
                    let carrier = (3.0 * (2.0 * PI * 110.0 * f_jit * t).sin()).tanh();
                    carrier * (0.6 + 0.4 * (2.0 * PI * 3.0 * t).sin())
                }
            };
            (gain * v + floor).clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip { samples, sample_rate: SAMPLE_RATE }
}

/// Deterministic, class-balanced fixture corpus.
pub fn make_synthetic_corpus(cfg: &SyntheticConfig, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::new();
    for (split, per_style) in [(Split::Train, cfg.train_per_style), (Split::Eval, cfg.eval_per_style)] {
        for style in StyleLabel::ALL {
            for i in 0..per_style {
                let frames = rng.random_range(cfg.min_frames.max(WINDOW)..=cfg.max_frames.max(cfg.min_frames.max(WINDOW)));
                let motion = synth_motion(style, frames, &mut rng, cfg.variation, cfg.jitter_px);
                let audio = synth_audio(style, frames as f64 / DEFAULT_FPS as f64, &mut rng);
                let split_name = match split {
                    Split::Train => "train",
                    Split::Eval => "eval",
                };
                clips.push(Clip { source_id: format!("{split_name}-{}-{i:03}", style.as_str()), style, split, motion, audio });
            }
        }
    }
    Corpus { clips }
}

/// Mixed-style test audio: consecutive segments of each style's texture.
pub fn synth_mixed_audio(segments: &[(StyleLabel, f64)], rng: &mut impl Rng) -> AudioClip {
    let mut samples = Vec::new();
    for &(style, secs) in segments {
        samples.extend(synth_audio(style, secs, rng).samples);
    }
    AudioClip { samples, sample_rate: SAMPLE_RATE }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub motion_file: PathBuf,
    pub audio_file: PathBuf,
    pub style: StyleLabel,
    pub split: Split,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Writes `motions/*.json`, `audio/*.wav` and `manifest.json` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf, DatasetError> {
    for sub in ["motions", "audio"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let mut entries = Vec::new();
    for c in &corpus.clips {
        let motion_file = PathBuf::from("motions").join(format!("{}.json", c.source_id));
        let audio_file = PathBuf::from("audio").join(format!("{}.wav", c.source_id));
        let mp = dir.join(&motion_file);
        std::fs::write(&mp, c.motion.to_json()).map_err(io_err(&mp))?;
        c.audio.write_wav(dir.join(&audio_file))?;
        entries.push(ManifestEntry { motion_file, audio_file, style: c.style, split: c.split });
    }
    let manifest = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    std::fs::write(&manifest, text).map_err(io_err(&manifest))?;
    Ok(manifest)
}

/// Reads a manifest; relative paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))
}

pub fn load_corpus(manifest: &Path) -> Result<Corpus, DatasetError> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut clips = Vec::new();
    for e in read_manifest(manifest)? {
        let mp = base.join(&e.motion_file);
        let text = std::fs::read_to_string(&mp).map_err(io_err(&mp))?;
        let mut motion = Motion::from_json(&text)?;
        if motion.len() < WINDOW {
            return Err(DatasetError::TooShort { len: motion.len(), window: WINDOW });
        }
        motion.style = Some(e.style);
        let audio = AudioClip::read_wav(base.join(&e.audio_file))?;
        let source_id = e.motion_file.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        clips.push(Clip { source_id, style: e.style, split: e.split, motion, audio });
    }
    Ok(Corpus { clips })
}
