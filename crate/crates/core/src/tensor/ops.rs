use super::{numel, strides, Result, Tensor, TensorError};

/// Pointwise operation kinds accepted by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    /// Leaky ReLU with the given negative slope (0.2 in the networks).
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Abs,
}

/// Second operand of a binary elementwise op.
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

/// Maps each flat index of `out_shape` onto a flat index of `small`, where
/// every dim of `small` is either equal to the output dim or 1.
fn broadcast_index(out_shape: &[usize], small: &[usize]) -> Vec<usize> {
    let out_strides = strides(out_shape);
    let mut s_strides = strides(small);
    for (d, st) in s_strides.iter_mut().enumerate() {
        if small[d] == 1 {
            *st = 0;
        }
    }
    (0..numel(out_shape))
        .map(|flat| {
            let mut rem = flat;
            let mut idx = 0;
            for d in 0..out_shape.len() {
                let i = rem / out_strides[d];
                rem %= out_strides[d];
                idx += i * s_strides[d];
            }
            idx
        })
        .collect()
}

fn broadcastable(big: &[usize], small: &[usize]) -> bool {
    big.len() == small.len() && big.iter().zip(small).all(|(b, s)| b == s || *s == 1)
}

/// Sums `g` (shaped like the broadcast output) back down to `len` entries
/// following `map`.
fn reduce_broadcast(g: &[f64], map: Option<&[usize]>, len: usize) -> Vec<f64> {
    match map {
        None => g.to_vec(),
        Some(map) => {
            let mut out = vec![0.0; len];
            for (gi, &j) in g.iter().zip(map) {
                out[j] += gi;
            }
            out
        }
    }
}

impl Tensor {
    /// Dispatch form of the pointwise operations.
    pub fn elementwise(&self, op: ElementwiseOp, rhs: Option<Operand<'_>>) -> Result<Tensor> {
        use ElementwiseOp::*;
        match (op, rhs) {
            (Add, Some(Operand::Tensor(b))) => self.add(b),
            (Sub, Some(Operand::Tensor(b))) => self.sub(b),
            (Mul, Some(Operand::Tensor(b))) => self.mul(b),
            (Add, Some(Operand::Scalar(s))) => Ok(self.add_scalar(s)),
            (Sub, Some(Operand::Scalar(s))) => Ok(self.add_scalar(-s)),
            (Mul, Some(Operand::Scalar(s))) => Ok(self.mul_scalar(s)),
            (Add | Sub | Mul, None) => Err(TensorError::Invalid {
                op: "elementwise",
                msg: format!("{op:?} needs a second operand"),
            }),
            (Relu, _) => Ok(self.relu()),
            (LeakyRelu(a), _) => Ok(self.leaky_relu(a)),
            (Tanh, _) => Ok(self.tanh()),
            (Sigmoid, _) => Ok(self.sigmoid()),
            (Abs, _) => Ok(self.abs()),
        }
    }

    fn binary(
        &self,
        other: &Tensor,
        name: &'static str,
        f: fn(f64, f64) -> f64,
        // (a, b, grad) -> (da, db)
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        let map = if a_shape == b_shape {
            None
        } else if broadcastable(a_shape, b_shape) {
            Some(broadcast_index(a_shape, b_shape))
        } else {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: a_shape.to_vec(),
                rhs: b_shape.to_vec(),
            });
        };
        let a = self.data();
        let b = other.data();
        let data: Vec<f64> = match &map {
            None => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            Some(m) => a.iter().zip(m).map(|(&x, &j)| f(x, b[j])).collect(),
        };
        let b_len = other.numel();
        Ok(Tensor::from_op(
            a_shape.to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents, _| {
                let a = parents[0].data();
                let b = parents[1].data();
                let mut da = vec![0.0; a.len()];
                let mut db_full = vec![0.0; a.len()];
                for i in 0..a.len() {
                    let bj = match &map {
                        None => b[i],
                        Some(m) => b[m[i]],
                    };
                    let (x, y) = df(a[i], bj, g[i]);
                    da[i] = x;
                    db_full[i] = y;
                }
                let db = reduce_broadcast(&db_full, map.as_deref(), b_len);
                vec![
                    parents[0].requires_grad().then_some(da),
                    parents[1].requires_grad().then_some(db),
                ]
            }),
        ))
    }

    /// `self + other`; `other` may broadcast along size-1 dims.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _, g| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        // df(x, y) is the local derivative given input x and output y.
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents, out| {
                let x = parents[0].data();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .zip(out)
                        .map(|((gi, &xi), &yi)| gi * df(xi, yi))
                        .collect(),
                )]
            }),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.unary(move |x| x + s, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x * s).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|gi| gi * s).collect())]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents, _| {
                let x = parents[0].data();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi > 0.0 { *gi } else { slope * gi })
                        .collect(),
                )]
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Natural log. Inputs must be positive.
    pub fn ln(&self) -> Tensor {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents, _| {
                let x = parents[0].data();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi >= lo && xi <= hi { *gi } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().mul_scalar(1.0 / self.numel() as f64)
    }

    /// Sums over `axes`, removing them from the shape. Summing every axis
    /// yields shape `[1]`.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(TensorError::Invalid {
                op: "sum_axes",
                msg: format!("axis {bad} out of range for shape {shape:?}"),
            });
        }
        let kept: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(d, &n)| if axes.contains(&d) { 1 } else { n })
            .collect();
        let map = broadcast_index(shape, &kept);
        let out_len = numel(&kept);
        let mut data = vec![0.0; out_len];
        for (x, &j) in self.data().iter().zip(&map) {
            data[j] += x;
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(d, _)| !axes.contains(d))
            .map(|(_, &n)| n)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(map.iter().map(|&j| g[j]).collect())]),
        ))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes)?.mul_scalar(1.0 / count as f64))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..shape.len()).collect::<Vec<_>>() {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of {} axes", shape.len()),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = strides(shape);
        let out_strides = strides(&out_shape);
        // source index for each output position
        let src: Vec<usize> = (0..self.numel())
            .map(|flat| {
                let mut rem = flat;
                let mut idx = 0;
                for d in 0..out_shape.len() {
                    let i = rem / out_strides[d];
                    rem %= out_strides[d];
                    idx += i * in_strides[perm[d]];
                }
                idx
            })
            .collect();
        let x = self.data();
        let data = src.iter().map(|&j| x[j]).collect();
        let n = self.numel();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; n];
                for (gi, &j) in g.iter().zip(&src) {
                    dx[j] = *gi;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no tensors given".into(),
        })?;
        let rank = first.ndim();
        if axis >= rank {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        for p in parts {
            let ok = p.ndim() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total_width: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total_width);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g, parents, _| {
                let mut out: Vec<Vec<f64>> =
                    widths.iter().map(|&w| Vec::with_capacity(outer * w)).collect();
                for o in 0..outer {
                    let mut off = o * total_width;
                    for (buf, &w) in out.iter_mut().zip(&widths) {
                        buf.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                out.into_iter()
                    .zip(parents)
                    .map(|(b, p)| p.requires_grad().then_some(b))
                    .collect()
            }),
        ))
    }

    /// Gathers rows of a 2-D table; gradients scatter-add back into the table.
    pub fn index_rows(&self, rows: &[usize]) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(TensorError::Invalid {
                op: "index_rows",
                msg: format!("expected a 2-D table, got {:?}", self.shape()),
            });
        }
        let (n, w) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(TensorError::Invalid {
                op: "index_rows",
                msg: format!("row {bad} out of range for {n} rows"),
            });
        }
        let x = self.data();
        let data: Vec<f64> = rows.iter().flat_map(|&r| x[r * w..(r + 1) * w].iter().copied()).collect();
        let rows = rows.to_vec();
        Ok(Tensor::from_op(
            vec![rows.len(), w],
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut dt = vec![0.0; n * w];
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..w {
                        dt[r * w + c] += g[k * w + c];
                    }
                }
                vec![Some(dt)]
            }),
        ))
    }

    /// 2-D matrix product `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let data = gemm(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents, _| {
                let a = parents[0].data();
                let b = parents[1].data();
                let da = parents[0].requires_grad().then(|| {
                    // g (m,n) * b^T (n,k)
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * b[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    da
                });
                let db = parents[1].requires_grad().then(|| {
                    // a^T (k,m) * g (m,n)
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = a[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let row = &mut db[p * n..(p + 1) * n];
                            for (d, gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *d += av * gv;
                            }
                        }
                    }
                    db
                });
                vec![da, db]
            }),
        ))
    }

    /// Generalized contraction: sums over `axes_a[i]` of `self` paired with
    /// `axes_b[i]` of `other`. Output axes are the free axes of `self`
    /// followed by the free axes of `other`.
    pub fn tensordot(&self, other: &Tensor, axes_a: &[usize], axes_b: &[usize]) -> Result<Tensor> {
        if axes_a.len() != axes_b.len()
            || axes_a.iter().any(|&a| a >= self.ndim())
            || axes_b.iter().any(|&b| b >= other.ndim())
        {
            return Err(TensorError::Invalid {
                op: "tensordot",
                msg: format!("bad contraction axes {axes_a:?} / {axes_b:?}"),
            });
        }
        for (&a, &b) in axes_a.iter().zip(axes_b) {
            if self.shape()[a] != other.shape()[b] {
                return Err(TensorError::ShapeMismatch {
                    op: "tensordot",
                    lhs: self.shape().to_vec(),
                    rhs: other.shape().to_vec(),
                });
            }
        }
        let free_a: Vec<usize> = (0..self.ndim()).filter(|d| !axes_a.contains(d)).collect();
        let free_b: Vec<usize> = (0..other.ndim()).filter(|d| !axes_b.contains(d)).collect();
        let perm_a: Vec<usize> = free_a.iter().chain(axes_a).copied().collect();
        let perm_b: Vec<usize> = axes_b.iter().chain(&free_b).copied().collect();
        let m: usize = free_a.iter().map(|&d| self.shape()[d]).product();
        let k: usize = axes_a.iter().map(|&d| self.shape()[d]).product();
        let n: usize = free_b.iter().map(|&d| other.shape()[d]).product();
        let a2 = self.permute(&perm_a)?.reshape(&[m, k])?;
        let b2 = other.permute(&perm_b)?.reshape(&[k, n])?;
        let mut out_shape: Vec<usize> = free_a
            .iter()
            .map(|&d| self.shape()[d])
            .chain(free_b.iter().map(|&d| other.shape()[d]))
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        a2.matmul(&b2)?.reshape(&out_shape)
    }

    /// Mean softmax cross-entropy of `(batch, classes)` logits against
    /// integer labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        if self.ndim() != 2 || self.shape()[0] != labels.len() {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("logits {:?} vs {} labels", self.shape(), labels.len()),
            });
        }
        let (b, c) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("label {bad} out of range for {c} classes"),
            });
        }
        let probs = softmax_rows(self.data(), c);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs[i * c + l].max(1e-300).ln())
            .sum::<f64>()
            / b as f64;
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] -= 1.0;
                }
                let s = g[0] / b as f64;
                d.iter_mut().for_each(|v| *v *= s);
                vec![Some(d)]
            }),
        ))
    }
}

/// Row-wise softmax of a flat `(rows, width)` buffer.
pub fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(width) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}
