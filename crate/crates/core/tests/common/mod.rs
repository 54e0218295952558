#![allow(dead_code)]

use gcndance::nn::{Module, Parameter};
use gcndance::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod suite;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `±[0.1, 1]`, away from the kinks of piecewise ops.
pub fn away_from_zero(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect()
}

pub fn uniform(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Scalar `sum(out * r)` with a fixed random `r`, so every output element
/// carries a distinct weight.
pub fn project(out: &Tensor, seed: u64) -> Tensor {
    let mut r = rng(seed ^ 0x9407);
    let w = Tensor::new(uniform(out.numel(), -1.0, 1.0, &mut r), out.shape()).unwrap();
    out.mul(&w).unwrap().sum()
}

/// Largest relative mismatch between the analytic gradient returned by
/// `eval` and central differences of its loss, over every slot.
pub fn grad_check(values: &[Vec<f64>], eval: impl Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>)) -> f64 {
    let (_, analytic) = eval(values);
    let mut worst: f64 = 0.0;
    for s in 0..values.len() {
        for i in 0..values[s].len() {
            let mut plus = values.to_vec();
            plus[s][i] += FD_STEP;
            let mut minus = values.to_vec();
            minus[s][i] -= FD_STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * FD_STEP);
            let a = analytic[s][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// Gradient check for a plain tensor function of leaf inputs.
pub fn check_fn(inputs: &[(Vec<f64>, Vec<usize>)], seed: u64, f: impl Fn(&[Tensor]) -> Tensor) -> f64 {
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|(_, s)| s.clone()).collect();
    let values: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    grad_check(&values, |vals| {
        let leaves: Vec<Tensor> = vals.iter().zip(&shapes).map(|(v, s)| Tensor::leaf(v.clone(), s).unwrap()).collect();
        let loss = project(&f(&leaves), seed);
        loss.backward().unwrap();
        (loss.item(), leaves.iter().map(Tensor::grad).collect())
    })
}

fn trainable_values(m: &impl Module) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    m.visit(&mut |p: &Parameter| {
        if p.trainable() {
            out.push(p.data().to_vec())
        }
    });
    out
}

/// Gradient check of a module with respect to its input and every
/// trainable parameter.
pub fn check_module<M: Module + Clone>(
    module: &M,
    x: (Vec<f64>, Vec<usize>),
    seed: u64,
    forward: impl Fn(&M, &Tensor) -> Tensor,
) -> f64 {
    let mut values = vec![x.0];
    values.extend(trainable_values(module));
    let shape = x.1;
    grad_check(&values, |vals| {
        let mut m = module.clone();
        let mut idx = 1;
        m.visit_mut(&mut |p: &mut Parameter| {
            if p.trainable() {
                p.set_data(vals[idx].clone()).unwrap();
                idx += 1;
            }
        });
        let input = Tensor::leaf(vals[0].clone(), &shape).unwrap();
        let loss = project(&forward(&m, &input), seed);
        loss.backward().unwrap();
        let mut grads = vec![input.grad()];
        m.visit(&mut |p: &Parameter| {
            if p.trainable() {
                grads.push(p.grad())
            }
        });
        (loss.item(), grads)
    })
}

/// Triple-loop evaluation of `f'_i = sum_{k,j} A[k,i,j] f_j` on an
/// `(N, C, T, V_in)` buffer.
pub fn brute_aggregate(a: &[f64], k: usize, vo: usize, vi: usize, x: &[f64], nct: usize) -> Vec<f64> {
    let mut out = vec![0.0; nct * vo];
    for row in 0..nct {
        for i in 0..vo {
            let mut acc = 0.0;
            for kk in 0..k {
                for j in 0..vi {
                    acc += a[(kk * vo + i) * vi + j] * x[row * vi + j];
                }
            }
            out[row * vo + i] = acc;
        }
    }
    out
}
