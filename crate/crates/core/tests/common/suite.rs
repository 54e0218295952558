//! One check per acceptance criterion. Each returns a short summary on
//! success and a description of the failure otherwise.

use std::time::Instant;

use gcndance::audio::{classify_style, mu_law, train_classifier, ClassifierConfig, StyleLabel};
use gcndance::checkpoint::{load, save};
use gcndance::dataset::{
    build_eval_set, build_training_set, make_synthetic_corpus, synth_mixed_audio, AugmentConfig, Sample, Split,
    SyntheticConfig,
};
use gcndance::eval::{fid, gaussian_features, train_motion_classifier, ClassifierConfig as MotionClassifierConfig};
use gcndance::graphnet::{
    build_pair, Aggregation, GraphLevel, GraphNetConfig, PyramidMap, StConvOptions, StGraphConv, K, LEVELS,
};
use gcndance::latent::{channel_kernels, kernel_matrix, GpConfig, FRAMES_PER_STEP};
use gcndance::nn::{Ctx, Module};
use gcndance::skeleton::{normalize_pose, Motion, Pose, SkeletonError, DEFAULT_FPS, JOINTS};
use gcndance::tensor::{ElementwiseOp, Operand, Tensor};
use gcndance::training::{
    d_loss, g_loss, generate_motions, loss_rec, motion_rec_distance, moving_average, random_motion, TrainConfig,
    Trainer,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{away_from_zero, brute_aggregate, check_fn, check_module, rng, uniform};

pub type Outcome = Result<String, String>;

pub const GRAD_TOL: f64 = 1e-4;
pub const SHAPES_PER_LAYER: usize = 5;

fn within(label: &str, value: f64, tol: f64) -> Result<(), String> {
    if value < tol { Ok(()) } else { Err(format!("{label}: {value:.3e} >= {tol:.0e}")) }
}

fn rand_shape(r: &mut impl Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| r.random_range(1..=4)).collect()
}

/// Worst relative error per layer type over random shapes.
pub fn gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    let unary = [ElementwiseOp::Relu, ElementwiseOp::LeakyRelu(0.2), ElementwiseOp::Tanh, ElementwiseOp::Sigmoid, ElementwiseOp::Abs];
    let binary = [ElementwiseOp::Add, ElementwiseOp::Sub, ElementwiseOp::Mul];
    for s in 0..SHAPES_PER_LAYER {
        let rank = r.random_range(1..=4);
        let shape = rand_shape(&mut r, rank);
        let small: Vec<usize> = shape.iter().map(|&d| if r.random::<bool>() { d } else { 1 }).collect();
        let n: usize = shape.iter().product();
        let m: usize = small.iter().product();
        for op in unary {
            let x = (away_from_zero(n, &mut r), shape.clone());
            worst = worst.max(check_fn(&[x], s as u64, |t| t[0].elementwise(op, None).unwrap()));
        }
        for op in binary {
            let a = (away_from_zero(n, &mut r), shape.clone());
            let b = (away_from_zero(m, &mut r), small.clone());
            worst = worst.max(check_fn(&[a, b], s as u64, |t| t[0].elementwise(op, Some(Operand::Tensor(&t[1]))).unwrap()));
            let a = (away_from_zero(n, &mut r), shape.clone());
            worst = worst.max(check_fn(&[a], s as u64, |t| t[0].elementwise(op, Some(Operand::Scalar(0.7))).unwrap()));
        }
    }
    out.push(("elementwise", worst));

    let mut worst = 0.0f64;
    for s in 0..SHAPES_PER_LAYER {
        let (p, q, k, u) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
        let a = (uniform(p * q * k, -1.0, 1.0, &mut r), vec![p, q, k]);
        let b = (uniform(q * k * u, -1.0, 1.0, &mut r), vec![q, k, u]);
        worst = worst.max(check_fn(&[a, b], s as u64, |t| t[0].tensordot(&t[1], &[1, 2], &[0, 1]).unwrap()));
    }
    out.push(("tensordot", worst));

    let mut worst = 0.0f64;
    for s in 0..SHAPES_PER_LAYER {
        let (n, ci, co, k) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..k);
        let t = r.random_range(k.max(2)..k + 5);
        let v = r.random_range(1..4);
        let x = (uniform(n * ci * t * v, -1.0, 1.0, &mut r), vec![n, ci, t, v]);
        let w = (uniform(co * ci * k, -1.0, 1.0, &mut r), vec![co, ci, k]);
        let b = (uniform(co, -1.0, 1.0, &mut r), vec![co]);
        worst = worst.max(check_fn(&[x, w, b], s as u64, |t| t[0].conv_temporal(&t[1], Some(&t[2]), stride, pad).unwrap()));
    }
    out.push(("conv2d", worst));

    let mut worst = 0.0f64;
    for s in 0..SHAPES_PER_LAYER {
        let (n, ci, co, k) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4), r.random_range(2..5));
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..k / 2 + 1);
        let t = r.random_range(2..6);
        let v = r.random_range(1..4);
        let x = (uniform(n * ci * t * v, -1.0, 1.0, &mut r), vec![n, ci, t, v]);
        let w = (uniform(ci * co * k, -1.0, 1.0, &mut r), vec![ci, co, k]);
        let b = (uniform(co, -1.0, 1.0, &mut r), vec![co]);
        worst = worst.max(check_fn(&[x, w, b], s as u64, |t| {
            t[0].conv_transpose_temporal(&t[1], Some(&t[2]), stride, pad).unwrap()
        }));
    }
    out.push(("transposed conv2d", worst));

    let mut worst = 0.0f64;
    let transitions = [(1, 3), (3, 11), (11, 25)];
    for s in 0..SHAPES_PER_LAYER {
        let (c, f) = transitions[s % 3];
        let map = PyramidMap::between(c, f).unwrap();
        let (n, ch, t) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..4));
        let up = Aggregation::upsample("up", &map, &mut r).unwrap();
        let x = (uniform(n * ch * t * c, -1.0, 1.0, &mut r), vec![n, ch, t, c]);
        worst = worst.max(check_module(&up, x, s as u64, |m, x| m.forward(x).unwrap()));
        let down = Aggregation::downsample("down", &map, &mut r).unwrap();
        let x = (uniform(n * ch * t * f, -1.0, 1.0, &mut r), vec![n, ch, t, f]);
        worst = worst.max(check_module(&down, x, s as u64, |m, x| m.forward(x).unwrap()));
    }
    out.push(("spatial up/downsample", worst));

    let mut worst = 0.0f64;
    for s in 0..SHAPES_PER_LAYER {
        let v = LEVELS[s % LEVELS.len()];
        let level = GraphLevel::new(v).unwrap();
        let opts = StConvOptions { temporal_kernel: [3, 5, 9][s % 3], dropout: 0.0, ..StConvOptions::default() };
        let (n, ci, co, t) = (2, r.random_range(1..3), r.random_range(1..4), r.random_range(2..5));
        let conv = StGraphConv::new("st", &level, ci, co, opts, &mut r).unwrap();
        let x = (uniform(n * ci * t * v, -1.0, 1.0, &mut r), vec![n, ci, t, v]);
        worst = worst.max(check_module(&conv, x, s as u64, |m, x| m.forward(x, &mut Ctx::train(0)).unwrap()));
    }
    out.push(("st-graph-conv", worst));

    let mut worst = 0.0f64;
    for s in 0..SHAPES_PER_LAYER {
        let (n, c, t, v) = (r.random_range(2..4), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
        let x = (uniform(n * c * t * v, -1.0, 1.0, &mut r), vec![n, c, t, v]);
        let g = (uniform(c, 0.5, 1.5, &mut r), vec![c]);
        let b = (uniform(c, -0.5, 0.5, &mut r), vec![c]);
        worst = worst.max(check_fn(&[x, g, b], s as u64, |t| t[0].batch_norm(&t[1], &t[2], None, 1e-5).unwrap().0));
    }
    out.push(("batch norm", worst));
    out
}

pub fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let errors = gradient_errors(1);
    let secs = start.elapsed().as_secs_f64();
    for (name, e) in &errors {
        within(name, *e, GRAD_TOL)?;
    }
    if secs >= 60.0 {
        return Err(format!("took {secs:.1}s"));
    }
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(format!("{} layer types x {SHAPES_PER_LAYER} shapes, worst rel err {worst:.2e}, {secs:.1}s", errors.len()))
}

pub const GP_DRAWS: usize = 20_000;
pub const GP_SMOOTH_DRAWS: usize = 1_000;

/// Largest entrywise gap between the empirical covariance of `draws`
/// paths and the kernel, over every channel.
pub fn gp_covariance_gap(cfg: &GpConfig, draws: usize, seed: u64) -> f64 {
    let kernels = channel_kernels(cfg).unwrap();
    let t = cfg.steps;
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for (c, k) in kernels.iter().enumerate() {
        let mut cov = vec![0.0; t * t];
        for _ in 0..draws {
            let eps: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut r)).collect();
            let p = k.sample_path(&eps);
            for i in 0..t {
                for j in 0..t {
                    cov[i * t + j] += p[i] * p[j] / draws as f64;
                }
            }
        }
        let kern = kernel_matrix(t, cfg.channel_sigma(c));
        for i in 0..t {
            for j in 0..t {
                worst = worst.max((cov[i * t + j] - kern[(i, j)]).abs());
            }
        }
    }
    worst
}

/// Mean absolute first difference per channel, with every channel driven
/// by the same standard normal draws.
pub fn gp_roughness(cfg: &GpConfig, draws: usize, seed: u64) -> Vec<f64> {
    let kernels = channel_kernels(cfg).unwrap();
    let t = cfg.steps;
    let mut r = rng(seed);
    let eps: Vec<Vec<f64>> = (0..draws).map(|_| (0..t).map(|_| StandardNormal.sample(&mut r)).collect()).collect();
    kernels
        .iter()
        .map(|k| {
            let mut total = 0.0;
            for e in &eps {
                let p = k.sample_path(e);
                total += p.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (t - 1) as f64;
            }
            total / draws as f64
        })
        .collect()
}

pub fn criterion_gp() -> Outcome {
    let start = Instant::now();
    let cfg = GpConfig::default();
    let gap = gp_covariance_gap(&cfg, GP_DRAWS, 2);
    if gap > 0.05 {
        return Err(format!("covariance gap {gap:.4} > 0.05"));
    }
    let rough = gp_roughness(&cfg, GP_SMOOTH_DRAWS, 3);
    let ok = rough.windows(2).filter(|w| w[1] < w[0]).count();
    let frac = ok as f64 / (rough.len() - 1) as f64;
    let secs = start.elapsed().as_secs_f64();
    if frac < 0.95 {
        return Err(format!("smoothness monotone for {:.1}% of channel pairs", frac * 100.0));
    }
    if secs >= 30.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!("max cov gap {gap:.4}, monotone pairs {:.1}%, {secs:.1}s", frac * 100.0))
}

pub fn criterion_shapes() -> Outcome {
    let cfg = GraphNetConfig::default();
    let (g, d) = build_pair(&cfg, 3).map_err(|e| e.to_string())?;
    let mut r = rng(4);
    for t in [1usize, 4, 12] {
        let z = Tensor::new(uniform(cfg.latent_channels * t, -1.0, 1.0, &mut r), &[cfg.latent_channels, t, 1]).unwrap();
        let out = g.forward(&z, &mut Ctx::eval()).map_err(|e| e.to_string())?;
        if out.shape() != [2, FRAMES_PER_STEP * t, JOINTS] {
            return Err(format!("T={t}: generator gave {:?}", out.shape()));
        }
    }
    let x = Tensor::new(uniform(3 * 64 * JOINTS, 0.0, 1.0, &mut r), &[3, 64, JOINTS]).unwrap();
    let y = d.logits(&x, &mut Ctx::eval()).map_err(|e| e.to_string())?;
    if y.numel() != 1 {
        return Err(format!("discriminator gave {:?}", y.shape()));
    }
    Ok(format!("(1024,T,1) -> (2,16T,25) for T in 1,4,12; D (3,64,25) -> {:?}", y.shape()))
}

pub const AGG_TOL: f64 = 1e-12;

pub fn criterion_aggregation() -> Outcome {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for (c, f) in [(1, 3), (3, 11), (11, 25)] {
        let map = PyramidMap::between(c, f).unwrap();
        for (agg, vi, vo) in [
            (Aggregation::upsample("up", &map, &mut r).unwrap(), c, f),
            (Aggregation::downsample("down", &map, &mut r).unwrap(), f, c),
        ] {
            let mut agg = agg;
            // random weights on the allowed entries only
            let masked: Vec<f64> = agg.mask().iter().map(|&m| m * r.random_range(-1.0..1.0)).collect();
            agg.weights.set_data(masked.clone()).unwrap();
            let (n, ch, t) = (2, 3, 4);
            let x = uniform(n * ch * t * vi, -1.0, 1.0, &mut r);
            let got = agg.forward(&Tensor::new(x.clone(), &[n, ch, t, vi]).unwrap()).unwrap();
            let want = brute_aggregate(&masked, K, vo, vi, &x, n * ch * t);
            for (a, b) in got.data().iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    within("aggregation vs brute force", worst, AGG_TOL)?;
    worked_example()?;
    Ok(format!("3 transitions both directions, max abs err {worst:.1e}; worked example holds"))
}

/// One coarse vertex to three: with only the `k = 1` slice set,
/// `f'_0 = A[1,0,0] f_0` and `f'_1 = A[1,1,0] f_0`; with only `k = 0`,
/// `f'_0 = A[0,0,0] f_0` and the other vertices stay zero.
pub fn worked_example() -> Result<(), String> {
    let map = PyramidMap::between(1, 3).unwrap();
    let mut agg = Aggregation::upsample("up", &map, &mut rng(6)).unwrap();
    let f0 = 0.37;
    let x = Tensor::new(vec![f0], &[1, 1, 1]).unwrap();
    let mask = agg.mask().to_vec();
    let (a100, a110, a000) = (1.5, -0.25, 0.8);
    let mut w = vec![0.0; mask.len()];
    // layout (K, 3, 1)
    w[3] = a100;
    w[4] = a110;
    if mask[3] == 0.0 || mask[4] == 0.0 || mask[0] == 0.0 {
        return Err("worked-example entries are masked out".into());
    }
    agg.weights.set_data(w).unwrap();
    let out = agg.forward(&x).unwrap();
    let d = out.data();
    if (d[0] - a100 * f0).abs() > AGG_TOL || (d[1] - a110 * f0).abs() > AGG_TOL {
        return Err(format!("k=1 slice gave {d:?}"));
    }
    let mut w = vec![0.0; mask.len()];
    w[0] = a000;
    agg.weights.set_data(w).unwrap();
    let d = agg.forward(&x).unwrap().data().to_vec();
    if (d[0] - a000 * f0).abs() > AGG_TOL || d[1] != 0.0 || d[2] != 0.0 {
        return Err(format!("k=0 slice gave {d:?}"));
    }
    Ok(())
}

pub const LOSS_TOL: f64 = 1e-9;

pub fn criterion_losses() -> Outcome {
    let mut r = rng(7);
    let base = uniform(2 * 2 * 8 * JOINTS, 0.0, 1.0, &mut r);
    let a = Tensor::new(base.clone(), &[2, 2, 8, JOINTS]).unwrap();
    let same = loss_rec(&a, &a).unwrap().item();
    let shifted: Vec<f64> =
        base.iter().enumerate().map(|(i, v)| if (i / (8 * JOINTS)) % 2 == 0 { v + 1.0 } else { *v }).collect();
    let b = Tensor::new(shifted, &[2, 2, 8, JOINTS]).unwrap();
    let unit = loss_rec(&b, &a).unwrap().item();
    let half = Tensor::full(&[4, 1], 0.5);
    let dl = d_loss(&half, &half).item();
    let gl = g_loss(&half, false).item();
    let ln2 = std::f64::consts::LN_2;
    within("L_rec identical", same.abs(), LOSS_TOL)?;
    within("L_rec unit offset", (unit - 1.0).abs(), LOSS_TOL)?;
    within("D loss at 0.5", (dl - 2.0 * ln2).abs(), LOSS_TOL)?;
    within("G loss at 0.5", (gl - ln2).abs(), LOSS_TOL)?;
    Ok(format!("L_rec {same:.1e} / {unit:.12}; BCE {dl:.12} / {gl:.12}"))
}

pub const NORM_TOL: f64 = 1e-9;

pub fn random_pose(r: &mut impl Rng) -> Pose {
    let mut joints = [[0.0; 2]; JOINTS];
    for j in joints.iter_mut() {
        *j = [r.random_range(50.0..400.0), r.random_range(20.0..600.0)];
    }
    Pose::new(joints)
}

fn max_joint_gap(a: &Pose, b: &Pose) -> f64 {
    a.joints.iter().zip(&b.joints).flat_map(|(p, q)| [(p[0] - q[0]).abs(), (p[1] - q[1]).abs()]).fold(0.0, f64::max)
}

pub fn criterion_normalization() -> Outcome {
    let mut r = rng(8);
    let mut worst_inv = 0.0f64;
    let mut worst_idem = 0.0f64;
    for _ in 0..200 {
        let p = random_pose(&mut r);
        let (s, tx, ty) = (r.random_range(0.1..10.0), r.random_range(-500.0..500.0), r.random_range(-500.0..500.0));
        let mut q = p.clone();
        for j in q.joints.iter_mut() {
            *j = [s * j[0] + tx, s * j[1] + ty];
        }
        let np = normalize_pose(&p).map_err(|e| e.to_string())?;
        let nq = normalize_pose(&q).map_err(|e| e.to_string())?;
        worst_inv = worst_inv.max(max_joint_gap(&np, &nq));
        worst_idem = worst_idem.max(max_joint_gap(&np, &normalize_pose(&np).map_err(|e| e.to_string())?));
    }
    within("similarity invariance", worst_inv, NORM_TOL)?;
    within("idempotence", worst_idem, NORM_TOL)?;
    let collapsed = Pose::new([[3.0, 4.0]; JOINTS]);
    match normalize_pose(&collapsed) {
        Err(SkeletonError::DegeneratePose) => {}
        other => return Err(format!("degenerate pose gave {other:?}")),
    }
    Ok(format!("invariance {worst_inv:.1e}, idempotence {worst_idem:.1e}, degenerate rejected"))
}

pub fn criterion_mu_law() -> Outcome {
    let mu = gcndance::audio::DEFAULT_MU;
    let (z, p, n, h) = (mu_law(0.0, mu), mu_law(1.0, mu), mu_law(-1.0, mu), mu_law(0.5, mu));
    if z != 0.0 || p != 1.0 || n != -1.0 {
        return Err(format!("f(0)={z}, f(1)={p}, f(-1)={n}"));
    }
    within("f(0.5)", (h - 0.8757).abs(), 1e-4)?;
    Ok(format!("f(0)=0, f(±1)=±1, f(0.5)={h:.6}"))
}

pub fn criterion_fid() -> Outcome {
    let mut r = rng(9);
    let a = gaussian_features(2_000, 6, 0.0, &mut r);
    let zero = fid(&a, &a).map_err(|e| e.to_string())?;
    within("self distance", zero.abs(), 1e-6)?;
    let d = 2.0;
    let x = gaussian_features(10_000, 4, 0.0, &mut r);
    let y = gaussian_features(10_000, 4, d, &mut r);
    let shift = fid(&x, &y).map_err(|e| e.to_string())?;
    let rel = (shift - d * d).abs() / (d * d);
    within("mean shift relative error", rel, 0.05)?;
    let back = fid(&y, &x).map_err(|e| e.to_string())?;
    within("symmetry", (shift - back).abs(), 1e-9)?;
    Ok(format!("self {zero:.1e}; shift d=2 -> {shift:.4} ({:.2}% off); asymmetry {:.1e}", rel * 100.0, (shift - back).abs()))
}

/// Tiny trainer config used by the persistence checks.
pub fn tiny_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        batch: 3,
        net: GraphNetConfig { latent_channels: 8, channels: [4, 4, 4, 4], ..GraphNetConfig::default() },
        ..TrainConfig::toy()
    }
}

pub fn tiny_samples(count: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let style = StyleLabel::ALL[i % 3];
            let mut m = random_motion(64, &mut r);
            m.style = Some(style);
            Sample { motion: m, style, source_id: format!("s{i}"), noisy: false }
        })
        .collect()
}

fn trace(cfg: &TrainConfig, data: &[Sample], steps: usize) -> Result<Vec<[f64; 3]>, String> {
    let mut t = Trainer::new(cfg.clone()).map_err(|e| e.to_string())?;
    (0..steps)
        .map(|_| t.train_step(data).map(|m| [m.d_loss, m.g_loss, m.rec_loss]).map_err(|e| e.to_string()))
        .collect()
}

pub fn criterion_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = GraphNetConfig { latent_channels: 8, channels: [6, 6, 4, 4], ..GraphNetConfig::default() };
    let (g, d) = build_pair(&cfg, 11).map_err(|e| e.to_string())?;
    let path = dir.path().join("pair.ckpt");
    let mut records = g.state();
    records.extend(d.state());
    save(&path, &records).map_err(|e| e.to_string())?;
    let loaded = load(&path).map_err(|e| e.to_string())?;
    let (mut g2, mut d2) = build_pair(&cfg, 99).map_err(|e| e.to_string())?;
    g2.load_state(&loaded)?;
    d2.load_state(&loaded)?;
    let mut r = rng(12);
    let z = Tensor::new(uniform(2 * 8 * 4, -1.0, 1.0, &mut r), &[2, 8, 4, 1]).unwrap();
    let a = g.forward(&z, &mut Ctx::eval()).map_err(|e| e.to_string())?;
    let b = g2.forward(&z, &mut Ctx::eval()).map_err(|e| e.to_string())?;
    let styles = [StyleLabel::Ballet, StyleLabel::Salsa];
    let pa = d.forward(&a, &styles, &mut Ctx::eval()).map_err(|e| e.to_string())?;
    let pb = d2.forward(&a, &styles, &mut Ctx::eval()).map_err(|e| e.to_string())?;
    if a.data() != b.data() || pa.data() != pb.data() {
        return Err("reloaded networks differ".into());
    }
    let data = tiny_samples(9, 13);
    let tcfg = tiny_train_config(21);
    let first = trace(&tcfg, &data, 4)?;
    let second = trace(&tcfg, &data, 4)?;
    if first != second {
        return Err("seeded reruns diverged".into());
    }
    Ok(format!("G/D outputs bit-exact after reload; {} step traces identical", first.len()))
}

/// Settings for the end-to-end run.
pub struct ToyRun {
    pub seed: u64,
    pub audio: ClassifierConfig,
    pub train: TrainConfig,
    pub motion_classifier: MotionClassifierConfig,
    pub generated_per_style: usize,
}

impl Default for ToyRun {
    fn default() -> Self {
        ToyRun {
            seed: 1,
            audio: ClassifierConfig { epochs: 20, ..ClassifierConfig::default() },
            train: TrainConfig::toy(),
            motion_classifier: MotionClassifierConfig::default(),
            generated_per_style: 30,
        }
    }
}

pub struct ToyReport {
    pub lines: Vec<(String, Outcome)>,
}

fn labeled(style: StyleLabel, motion: Motion, tag: &str) -> Sample {
    Sample { motion, style, source_id: tag.into(), noisy: false }
}

/// The toy pipeline. Returns one outcome per sub-criterion.
pub fn run_toy(run: &ToyRun) -> ToyReport {
    let start = Instant::now();
    let mut lines = Vec::new();
    let corpus = make_synthetic_corpus(&SyntheticConfig::default(), run.seed);
    let clips = corpus.clips.len();

    let audio = corpus.labeled_audio(Split::Train);
    let classifier = train_classifier(&audio, &run.audio, run.seed);
    let (audio_model, cv) = match classifier {
        Ok(v) => v,
        Err(e) => {
            lines.push(("audio classifier".into(), Err(e.to_string())));
            return ToyReport { lines };
        }
    };
    lines.push((
        "audio classifier CV accuracy >= 0.95".into(),
        if cv.mean_accuracy >= 0.95 {
            Ok(format!("{:.3} ± {:.3} over {} folds, {clips} clips", cv.mean_accuracy, cv.std_accuracy, cv.folds))
        } else {
            Err(format!("{:.3}", cv.mean_accuracy))
        },
    ));

    let aug = AugmentConfig::default();
    let train = build_training_set(&corpus, &aug, run.seed).expect("fixture windows");
    let eval = build_eval_set(&corpus, &aug).expect("fixture windows");
    let mut trainer = Trainer::new(run.train.clone()).expect("toy config");
    let total = run.train.steps.unwrap_or(600);
    let mut recs = Vec::new();
    let fit = trainer.run(&train, total, |m| {
        recs.push(m.rec_loss);
        Ok(())
    }, |_| Ok(()));
    if let Err(e) = fit {
        lines.push(("GAN training".into(), Err(e.to_string())));
        return ToyReport { lines };
    }
    let gan_secs = start.elapsed().as_secs_f64();

    let ma = moving_average(&recs[..recs.len().min(200)], 10);
    let bad: Vec<usize> = ma.windows(2).enumerate().filter(|(_, w)| w[1] >= w[0]).map(|(i, _)| i + 10).collect();
    lines.push((
        "(a) rec-loss 10-step moving average strictly decreasing over first 200 steps".into(),
        if bad.is_empty() && ma.len() > 1 {
            Ok(format!("{:.4} -> {:.4}", ma[0], ma[ma.len() - 1]))
        } else {
            Err(format!("{} rises, first ending at step {:?}", bad.len(), bad.first()))
        },
    ));

    let steps = trainer.latent_steps();
    let styles: Vec<Vec<StyleLabel>> =
        StyleLabel::ALL.iter().flat_map(|&s| std::iter::repeat_n(vec![s; steps], run.generated_per_style)).collect();
    let generated: Vec<Sample> = generate_motions(&trainer.g, &styles, run.train.gp_sigma, run.seed ^ 0x6e)
        .expect("generation")
        .into_iter()
        .zip(&styles)
        .map(|(m, s)| labeled(s[0], m, "generated"))
        .collect();
    let mut r = rng(run.seed ^ 0x401);
    let noise: Vec<Sample> =
        styles.iter().map(|s| labeled(s[0], random_motion(run.train.frames, &mut r), "noise")).collect();

    let real_cls = train_motion_classifier(&eval, &run.motion_classifier, run.seed).expect("motion classifier");
    let gan_test = real_cls.accuracy(&generated).expect("accuracy");
    lines.push((
        "(b) GAN-test accuracy >= 0.8".into(),
        if gan_test >= 0.8 { Ok(format!("{gan_test:.3}")) } else { Err(format!("{gan_test:.3}")) },
    ));

    let real_f = real_cls.features(&eval).expect("features");
    let gen_fid = fid(&real_cls.features(&generated).expect("features"), &real_f).expect("fid");
    let noise_fid = fid(&real_cls.features(&noise).expect("features"), &real_f).expect("fid");
    lines.push((
        "(c) FID(generated) x 3 <= FID(noise)".into(),
        if gen_fid * 3.0 <= noise_fid {
            Ok(format!("{gen_fid:.2} vs {noise_fid:.2} (x{:.1})", noise_fid / gen_fid))
        } else {
            Err(format!("{gen_fid:.2} vs {noise_fid:.2}"))
        },
    ));

    let one = vec![vec![StyleLabel::Salsa; steps]];
    let a = generate_motions(&trainer.g, &one, run.train.gp_sigma, 101).expect("generation");
    let b = generate_motions(&trainer.g, &one, run.train.gp_sigma, 202).expect("generation");
    let diff = motion_rec_distance(&a[0], &b[0]).expect("equal lengths");
    lines.push((
        "(d) two seeds, same style: mean joint L1 difference > 0.01".into(),
        if diff > 0.01 { Ok(format!("{diff:.4}")) } else { Err(format!("{diff:.4}")) },
    ));

    let mixed = synth_mixed_audio(&[(StyleLabel::Ballet, 4.0), (StyleLabel::Salsa, 4.0)], &mut rng(run.seed ^ 0x3e));
    let frames = (mixed.duration_seconds() * DEFAULT_FPS as f64) as usize;
    let per_step = classify_style(&mixed, &audio_model).map(|c| {
        c.per_step_styles(frames / FRAMES_PER_STEP, FRAMES_PER_STEP, DEFAULT_FPS as f64, run.audio.window_seconds)
    });
    lines.push((
        "(e) mixed-style audio yields both labels per step".into(),
        match per_step {
            Ok(seq) if seq.contains(&StyleLabel::Ballet) && seq.contains(&StyleLabel::Salsa) => {
                Ok(seq.iter().map(|s| &s.as_str()[..1]).collect::<String>())
            }
            Ok(seq) => Err(format!("{seq:?}")),
            Err(e) => Err(e.to_string()),
        },
    ));

    let secs = start.elapsed().as_secs_f64();
    lines.push((
        format!("toy budget: <= 2000 GAN steps and <= 10 min CPU ({total} steps)"),
        if total <= 2000 && secs <= 600.0 {
            Ok(format!("{secs:.0}s total, {gan_secs:.0}s through GAN training"))
        } else {
            Err(format!("{secs:.0}s"))
        },
    ));
    ToyReport { lines }
}
