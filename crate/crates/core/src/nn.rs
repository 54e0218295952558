//! Trainable parameters and the basic layers shared by every network.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Record;
use crate::tensor::{Result, Tensor, TensorError};

/// Named tensor owned by a model. Buffers (batch-norm running statistics)
/// are parameters with `trainable == false`.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Result<Parameter> {
        Ok(Parameter {
            name: name.into(),
            tensor: Tensor::leaf(data, shape)?,
            trainable: true,
        })
    }

    pub fn buffer(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Result<Parameter> {
        Ok(Parameter {
            name: name.into(),
            tensor: Tensor::new(data, shape)?,
            trainable: false,
        })
    }

    /// Uniform in `±sqrt(1 / fan_in)`.
    pub fn uniform(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Parameter {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Parameter::new(name, data, shape).expect("length matches shape")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn grad(&self) -> Vec<f64> {
        self.tensor.grad()
    }

    /// Replaces the values with a fresh leaf (any accumulated gradient is
    /// discarded).
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.tensor.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: self.shape().to_vec(),
            });
        }
        let shape = self.shape().to_vec();
        self.tensor = if self.trainable {
            Tensor::leaf(data, &shape)?
        } else {
            Tensor::new(data, &shape)?
        };
        Ok(())
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn zero_grad(&self) {
        self.visit(&mut |p| p.tensor().zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable() {
                n += p.tensor().numel();
            }
        });
        n
    }

    fn state(&self) -> Vec<Record> {
        let mut out = Vec::new();
        self.visit(&mut |p| {
            out.push(Record {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                data: p.data().to_vec(),
            })
        });
        out
    }

    /// Loads every parameter by name; all must be present with matching
    /// shapes.
    fn load_state(&mut self, records: &[Record]) -> std::result::Result<(), String> {
        let by_name: HashMap<&str, &Record> = records.iter().map(|r| (r.name.as_str(), r)).collect();
        let mut err = None;
        self.visit_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match by_name.get(p.name()) {
                None => err = Some(format!("missing parameter {}", p.name())),
                Some(r) if r.shape != p.shape() => {
                    err = Some(format!(
                        "parameter {} has shape {:?}, checkpoint has {:?}",
                        p.name(),
                        p.shape(),
                        r.shape
                    ))
                }
                Some(r) => {
                    if let Err(e) = p.set_data(r.data.clone()) {
                        err = Some(e.to_string());
                    }
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Folds batch statistics gathered during a forward pass into the
    /// running buffers: `running = m * running + (1 - m) * batch`.
    fn commit_stats(&mut self, ctx: &mut Ctx) {
        let updates: Vec<(String, Vec<f64>, Vec<f64>)> = ctx.stat_updates.drain(..).collect();
        let momentum = ctx.bn_momentum;
        self.visit_mut(&mut |p| {
            let (prefix, is_mean) = if let Some(s) = p.name().strip_suffix(".running_mean") {
                (s.to_string(), true)
            } else if let Some(s) = p.name().strip_suffix(".running_var") {
                (s.to_string(), false)
            } else {
                return;
            };
            // several passes through one layer apply in order
            let mut running = p.data().to_vec();
            let mut touched = false;
            for (name, mean, var) in &updates {
                if *name != prefix {
                    continue;
                }
                let batch = if is_mean { mean } else { var };
                for (r, b) in running.iter_mut().zip(batch) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
                touched = true;
            }
            if touched {
                p.set_data(running).expect("same length");
            }
        });
    }
}

/// Per-forward-pass state: mode flag, dropout randomness and batch-norm
/// statistics awaiting [`Module::commit_stats`].
pub struct Ctx {
    pub training: bool,
    pub bn_momentum: f64,
    rng: ChaCha8Rng,
    stat_updates: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Ctx {
    pub fn train(seed: u64) -> Ctx {
        Ctx {
            training: true,
            bn_momentum: 0.9,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stat_updates: Vec::new(),
        }
    }

    pub fn eval() -> Ctx {
        Ctx {
            training: false,
            bn_momentum: 0.9,
            rng: ChaCha8Rng::seed_from_u64(0),
            stat_updates: Vec::new(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn pending_stats(&self) -> usize {
        self.stat_updates.len()
    }

    /// Drops batch statistics gathered so far without applying them.
    pub fn discard_stats(&mut self) {
        self.stat_updates.clear();
    }
}

/// Dense layer on `(batch, in)` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Linear {
        Linear {
            weight: Parameter::uniform(format!("{name}.weight"), &[inputs, outputs], inputs, rng),
            bias: Parameter::uniform(format!("{name}.bias"), &[1, outputs], inputs, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(self.weight.tensor())?.add(self.bias.tensor())
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Temporal convolution over `(N, C, T, V)`.
#[derive(Debug, Clone)]
pub struct TemporalConv {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub pad: usize,
}

impl TemporalConv {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> TemporalConv {
        let fan_in = c_in * kernel;
        TemporalConv {
            weight: Parameter::uniform(format!("{name}.weight"), &[c_out, c_in, kernel], fan_in, rng),
            bias: Parameter::uniform(format!("{name}.bias"), &[c_out], fan_in, rng),
            stride,
            pad,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv_temporal(self.weight.tensor(), Some(self.bias.tensor()), self.stride, self.pad)
    }
}

impl Module for TemporalConv {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Transposed temporal convolution that exactly doubles the time axis.
#[derive(Debug, Clone)]
pub struct TemporalUpsample {
    pub weight: Parameter,
    pub bias: Parameter,
    stride: usize,
    pad: usize,
}

impl TemporalUpsample {
    pub const KERNEL: usize = 4;
    pub const STRIDE: usize = 2;
    pub const PAD: usize = 1;

    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> TemporalUpsample {
        Self::with_geometry(name, c_in, c_out, Self::KERNEL, Self::STRIDE, Self::PAD, rng)
            .expect("default geometry doubles T")
    }

    /// Only geometries with `T_out == 2 T` for every `T` are accepted,
    /// i.e. `stride == 2` and `kernel - 2 pad == 2`.
    pub fn with_geometry(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<TemporalUpsample> {
        if stride != 2 || kernel != 2 * pad + 2 {
            return Err(TensorError::Invalid {
                op: "transposed_conv2d",
                msg: format!("kernel {kernel}, stride {stride}, pad {pad} does not double T"),
            });
        }
        let fan_in = c_in * kernel / stride;
        Ok(TemporalUpsample {
            weight: Parameter::uniform(format!("{name}.weight"), &[c_in, c_out, kernel], fan_in, rng),
            bias: Parameter::uniform(format!("{name}.bias"), &[c_out], fan_in, rng),
            stride,
            pad,
        })
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv_transpose_temporal(self.weight.tensor(), Some(self.bias.tensor()), self.stride, self.pad)
    }
}

impl Module for TemporalUpsample {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Batch normalization with running statistics (momentum 0.9, eps 1e-5).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    name: String,
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Parameter,
    pub running_var: Parameter,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            name: name.to_string(),
            gamma: Parameter::new(format!("{name}.gamma"), vec![1.0; channels], &[channels]).unwrap(),
            beta: Parameter::new(format!("{name}.beta"), vec![0.0; channels], &[channels]).unwrap(),
            running_mean: Parameter::buffer(format!("{name}.running_mean"), vec![0.0; channels], &[channels])
                .unwrap(),
            running_var: Parameter::buffer(format!("{name}.running_var"), vec![1.0; channels], &[channels])
                .unwrap(),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if ctx.training {
            let (y, mean, var) = x.batch_norm(self.gamma.tensor(), self.beta.tensor(), None, self.eps)?;
            let count: usize = x.numel() / self.gamma.tensor().numel();
            let unbiased = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
            let var = var.into_iter().map(|v| v * unbiased).collect();
            ctx.stat_updates.push((self.name.clone(), mean, var));
            Ok(y)
        } else {
            let (y, _, _) = x.batch_norm(
                self.gamma.tensor(),
                self.beta.tensor(),
                Some((self.running_mean.data(), self.running_var.data())),
                self.eps,
            )?;
            Ok(y)
        }
    }
}

impl Module for BatchNorm {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

/// Inverted dropout; identity outside training mode or when `p == 0`.
pub fn dropout(x: &Tensor, p: f64, ctx: &mut Ctx) -> Result<Tensor> {
    if !ctx.training || p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if ctx.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    x.mul(&Tensor::new(mask, x.shape())?)
}
