//! Temporal convolutions, vertex mixing and batch normalization over
//! `(batch, channels, time, vertices)` tensors.
//!
//! Kernels span the time axis only; the vertex axis is never convolved.
//! Three-dimensional `(channels, time, vertices)` inputs are accepted and
//! treated as a batch of one.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    t: usize,
    v: usize,
    batched: bool,
}

fn dims(x: &Tensor, op: &'static str) -> Result<Dims> {
    match *x.shape() {
        [n, c, t, v] => Ok(Dims { n, c, t, v, batched: true }),
        [c, t, v] => Ok(Dims { n: 1, c, t, v, batched: false }),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("expected (N,C,T,V) or (C,T,V), got {:?}", x.shape()),
        }),
    }
}

fn out_shape(d: &Dims, c: usize, t: usize, v: usize) -> Vec<usize> {
    if d.batched {
        vec![d.n, c, t, v]
    } else {
        vec![c, t, v]
    }
}

/// Output length of a strided temporal convolution.
pub fn conv_out_len(t: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = t + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

/// Output steps `lo..hi` whose unit-stride tap `kk` lands inside the
/// unpadded input.
fn unit_stride_range(kk: usize, pad: usize, t: usize, to: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kk);
    let hi = (t + pad).saturating_sub(kk).min(to);
    (lo, hi.max(lo))
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

impl Tensor {
    /// Temporal convolution. `w` is `(C_out, C_in, K)`, `bias` is `(C_out)`.
    /// Zero padding of `pad` frames on both sides.
    pub fn conv_temporal(
        &self,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let d = dims(self, "conv2d")?;
        let [co, ci, k] = *w.shape() else {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel must be (C_out, C_in, K), got {:?}", w.shape()),
            });
        };
        if ci != d.c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![co],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let to = conv_out_len(d.t, k, stride, pad).ok_or_else(|| TensorError::Invalid {
            op: "conv2d",
            msg: format!("kernel length {k} exceeds padded input {}", d.t + 2 * pad),
        })?;
        let (n, t, v) = (d.n, d.t, d.v);
        let x = self.data();
        let wd = w.data();
        let mut out = vec![0.0; n * co * to * v];
        for b in 0..n {
            for o in 0..co {
                let orow = &mut out[(b * co + o) * to * v..(b * co + o + 1) * to * v];
                if let Some(bias) = bias {
                    orow.fill(bias.data()[o]);
                }
                for i in 0..ci {
                    let xrow = &x[(b * ci + i) * t * v..(b * ci + i + 1) * t * v];
                    for kk in 0..k {
                        let wv = wd[(o * ci + i) * k + kk];
                        if wv == 0.0 {
                            continue;
                        }
                        if stride == 1 {
                            let (lo, hi) = unit_stride_range(kk, pad, t, to);
                            if lo < hi {
                                let dst = &mut orow[lo * v..hi * v];
                                let src = &xrow[(lo + kk - pad) * v..(hi + kk - pad) * v];
                                for (dv, xv) in dst.iter_mut().zip(src) {
                                    *dv += wv * xv;
                                }
                            }
                            continue;
                        }
                        for ot in 0..to {
                            let it = (ot * stride + kk) as isize - pad as isize;
                            if it < 0 || it as usize >= t {
                                continue;
                            }
                            let it = it as usize;
                            let dst = &mut orow[ot * v..(ot + 1) * v];
                            for (dv, xv) in dst.iter_mut().zip(&xrow[it * v..(it + 1) * v]) {
                                *dv += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        let mut parents = vec![self.clone(), w.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            out_shape(&d, co, to, v),
            out,
            parents,
            Box::new(move |g, parents, _| {
                let x = parents[0].data();
                let wd = parents[1].data();
                let need_x = parents[0].requires_grad();
                let need_w = parents[1].requires_grad();
                let mut dx = vec![0.0; if need_x { x.len() } else { 0 }];
                let mut dw = vec![0.0; if need_w { wd.len() } else { 0 }];
                for b in 0..n {
                    for o in 0..co {
                        let grow = &g[(b * co + o) * to * v..(b * co + o + 1) * to * v];
                        for i in 0..ci {
                            let base = (b * ci + i) * t * v;
                            for kk in 0..k {
                                let widx = (o * ci + i) * k + kk;
                                let wv = wd[widx];
                                if stride == 1 {
                                    let (lo, hi) = unit_stride_range(kk, pad, t, to);
                                    if lo < hi {
                                        let gs = &grow[lo * v..hi * v];
                                        let xs = base + (lo + kk - pad) * v;
                                        let xe = xs + (hi - lo) * v;
                                        if need_w {
                                            dw[widx] += dot(gs, &x[xs..xe]);
                                        }
                                        if need_x && wv != 0.0 {
                                            for (dxv, gv) in dx[xs..xe].iter_mut().zip(gs) {
                                                *dxv += wv * gv;
                                            }
                                        }
                                    }
                                    continue;
                                }
                                let mut acc = 0.0;
                                for ot in 0..to {
                                    let it = (ot * stride + kk) as isize - pad as isize;
                                    if it < 0 || it as usize >= t {
                                        continue;
                                    }
                                    let it = it as usize;
                                    let gs = &grow[ot * v..(ot + 1) * v];
                                    let xs = base + it * v;
                                    if need_w {
                                        acc += dot(gs, &x[xs..xs + v]);
                                    }
                                    if need_x && wv != 0.0 {
                                        for (dxv, gv) in dx[xs..xs + v].iter_mut().zip(gs) {
                                            *dxv += wv * gv;
                                        }
                                    }
                                }
                                if need_w {
                                    dw[widx] += acc;
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![need_x.then_some(dx), need_w.then_some(dw)];
                if parents.len() > 2 {
                    let mut db = vec![0.0; co];
                    for b in 0..n {
                        for (o, dbo) in db.iter_mut().enumerate() {
                            *dbo += g[(b * co + o) * to * v..(b * co + o + 1) * to * v].iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(db));
                }
                grads
            }),
        ))
    }

    /// Transposed temporal convolution. `w` is `(C_in, C_out, K)`; output
    /// length is `(T - 1) * stride - 2 * pad + K`.
    pub fn conv_transpose_temporal(
        &self,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let d = dims(self, "transposed_conv2d")?;
        let [ci, co, k] = *w.shape() else {
            return Err(TensorError::Invalid {
                op: "transposed_conv2d",
                msg: format!("kernel must be (C_in, C_out, K), got {:?}", w.shape()),
            });
        };
        if ci != d.c {
            return Err(TensorError::ShapeMismatch {
                op: "transposed_conv2d",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(TensorError::ShapeMismatch {
                    op: "transposed_conv2d bias",
                    lhs: vec![co],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let full = (d.t - 1) * stride + k;
        if full < 2 * pad + 1 || stride == 0 {
            return Err(TensorError::Invalid {
                op: "transposed_conv2d",
                msg: format!("padding {pad} leaves no output for T={}", d.t),
            });
        }
        let to = full - 2 * pad;
        let (n, t, v) = (d.n, d.t, d.v);
        let x = self.data();
        let wd = w.data();
        let mut out = vec![0.0; n * co * to * v];
        for b in 0..n {
            for o in 0..co {
                let orow = &mut out[(b * co + o) * to * v..(b * co + o + 1) * to * v];
                if let Some(bias) = bias {
                    orow.fill(bias.data()[o]);
                }
                for i in 0..ci {
                    let xrow = &x[(b * ci + i) * t * v..(b * ci + i + 1) * t * v];
                    for kk in 0..k {
                        let wv = wd[(i * co + o) * k + kk];
                        if wv == 0.0 {
                            continue;
                        }
                        for it in 0..t {
                            let ot = (it * stride + kk) as isize - pad as isize;
                            if ot < 0 || ot as usize >= to {
                                continue;
                            }
                            let ot = ot as usize;
                            let dst = &mut orow[ot * v..(ot + 1) * v];
                            for (dv, xv) in dst.iter_mut().zip(&xrow[it * v..(it + 1) * v]) {
                                *dv += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        let mut parents = vec![self.clone(), w.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            out_shape(&d, co, to, v),
            out,
            parents,
            Box::new(move |g, parents, _| {
                let x = parents[0].data();
                let wd = parents[1].data();
                let need_x = parents[0].requires_grad();
                let need_w = parents[1].requires_grad();
                let mut dx = vec![0.0; if need_x { x.len() } else { 0 }];
                let mut dw = vec![0.0; if need_w { wd.len() } else { 0 }];
                for b in 0..n {
                    for o in 0..co {
                        let grow = &g[(b * co + o) * to * v..(b * co + o + 1) * to * v];
                        for i in 0..ci {
                            let base = (b * ci + i) * t * v;
                            for kk in 0..k {
                                let widx = (i * co + o) * k + kk;
                                let wv = wd[widx];
                                let mut acc = 0.0;
                                for it in 0..t {
                                    let ot = (it * stride + kk) as isize - pad as isize;
                                    if ot < 0 || ot as usize >= to {
                                        continue;
                                    }
                                    let ot = ot as usize;
                                    let gs = &grow[ot * v..(ot + 1) * v];
                                    let xs = base + it * v;
                                    if need_w {
                                        acc += dot(gs, &x[xs..xs + v]);
                                    }
                                    if need_x && wv != 0.0 {
                                        for (dxv, gv) in dx[xs..xs + v].iter_mut().zip(gs) {
                                            *dxv += wv * gv;
                                        }
                                    }
                                }
                                if need_w {
                                    dw[widx] += acc;
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![need_x.then_some(dx), need_w.then_some(dw)];
                if parents.len() > 2 {
                    let mut db = vec![0.0; co];
                    for b in 0..n {
                        for (o, dbo) in db.iter_mut().enumerate() {
                            *dbo += g[(b * co + o) * to * v..(b * co + o + 1) * to * v].iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(db));
                }
                grads
            }),
        ))
    }

    /// Mixes the vertex axis: `out[.., i] = sum_j m[i, j] * x[.., j]` with
    /// `m` of shape `(V_out, V_in)`.
    pub fn vertex_mix(&self, m: &Tensor) -> Result<Tensor> {
        let d = dims(self, "vertex_mix")?;
        let [vo, vi] = *m.shape() else {
            return Err(TensorError::Invalid {
                op: "vertex_mix",
                msg: format!("mixing matrix must be 2-D, got {:?}", m.shape()),
            });
        };
        if vi != d.v {
            return Err(TensorError::ShapeMismatch {
                op: "vertex_mix",
                lhs: self.shape().to_vec(),
                rhs: m.shape().to_vec(),
            });
        }
        let rows = d.n * d.c * d.t;
        let x = self.data();
        let md = m.data();
        // skeleton adjacencies are mostly zero
        let nz: Vec<(usize, usize, f64)> = (0..vo)
            .flat_map(|i| (0..vi).map(move |j| (i, j)))
            .filter_map(|(i, j)| (md[i * vi + j] != 0.0).then(|| (i, j, md[i * vi + j])))
            .collect();
        let mut out = vec![0.0; rows * vo];
        for r in 0..rows {
            let xr = &x[r * vi..(r + 1) * vi];
            let or = &mut out[r * vo..(r + 1) * vo];
            for &(i, j, mv) in &nz {
                or[i] += mv * xr[j];
            }
        }
        Ok(Tensor::from_op(
            out_shape(&d, d.c, d.t, vo),
            out,
            vec![self.clone(), m.clone()],
            Box::new(move |g, parents, _| {
                let x = parents[0].data();
                let dx = parents[0].requires_grad().then(|| {
                    let mut dx = vec![0.0; rows * vi];
                    for r in 0..rows {
                        let gr = &g[r * vo..(r + 1) * vo];
                        let dr = &mut dx[r * vi..(r + 1) * vi];
                        for &(i, j, mv) in &nz {
                            dr[j] += gr[i] * mv;
                        }
                    }
                    dx
                });
                let dm = parents[1].requires_grad().then(|| {
                    let mut dm = vec![0.0; vo * vi];
                    for r in 0..rows {
                        let gr = &g[r * vo..(r + 1) * vo];
                        let xr = &x[r * vi..(r + 1) * vi];
                        for (i, gv) in gr.iter().enumerate() {
                            for (dv, xv) in dm[i * vi..(i + 1) * vi].iter_mut().zip(xr) {
                                *dv += gv * xv;
                            }
                        }
                    }
                    dm
                });
                vec![dx, dm]
            }),
        ))
    }

    /// Per-channel batch normalization. With `stats = None` the batch mean
    /// and biased variance over `(N, T, V)` are used (and returned);
    /// otherwise the given `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        stats: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let d = dims(self, "batch_norm")?;
        let c = d.c;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let inner = d.t * d.v;
        let m = (d.n * inner) as f64;
        let x = self.data();
        let (mean, var, batch_stats) = match stats {
            Some((mu, va)) => (mu.to_vec(), va.to_vec(), false),
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..d.n {
                    for ch in 0..c {
                        mean[ch] += x[(b * c + ch) * inner..(b * c + ch + 1) * inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for b in 0..d.n {
                    for ch in 0..c {
                        var[ch] += x[(b * c + ch) * inner..(b * c + ch + 1) * inner]
                            .iter()
                            .map(|v| (v - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let (gd, bd) = (gamma.data(), beta.data());
        for b in 0..d.n {
            for ch in 0..c {
                let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                for idx in r {
                    let h = (x[idx] - mean[ch]) * inv_std[ch];
                    xhat[idx] = h;
                    out[idx] = gd[ch] * h + bd[ch];
                }
            }
        }
        let n = d.n;
        let inv = inv_std.clone();
        let y = Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents, _| {
                let gd = parents[1].data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        for idx in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                            dgamma[ch] += g[idx] * xhat[idx];
                            dbeta[ch] += g[idx];
                            let dxh = g[idx] * gd[ch];
                            sum_dxhat[ch] += dxh;
                            sum_dxhat_xhat[ch] += dxh * xhat[idx];
                        }
                    }
                }
                let dx = parents[0].requires_grad().then(|| {
                    let mut dx = vec![0.0; g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            for idx in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                                let dxh = g[idx] * gd[ch];
                                dx[idx] = if batch_stats {
                                    inv[ch] / m
                                        * (m * dxh - sum_dxhat[ch] - xhat[idx] * sum_dxhat_xhat[ch])
                                } else {
                                    dxh * inv[ch]
                                };
                            }
                        }
                    }
                    dx
                });
                vec![dx, Some(dgamma), Some(dbeta)]
            }),
        );
        Ok((y, mean, var))
    }
}
