//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records a forward computation as an append-only graph; parents
//! always have smaller indices than their children, so a reverse index sweep
//! is a reverse topological order. Backward closures capture the parent
//! values they need (tensor clones are cheap Arc bumps).
//!
//! Shape violations in tape ops are programming errors and panic; the pure
//! entry points in [`super::ops`] return `Result` instead.

use super::ops::{gelu_grad_scalar, gelu_scalar, layer_norm_row_into, softmax_row_into};
use super::tensor::{matmul_raw, Tensor, MASKED_LOGIT};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every tape node that
/// needed them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a node, defaulting to zeros of its shape.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: Option<BackFn>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward: if requires_grad { backward } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Value passthrough that blocks gradient flow (the stop-gradient
    /// operator).
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.constant(value)
    }

    /// Forward the given value, route gradients to `z` unchanged. Composes
    /// the straight-through estimator when `value` is the quantized latent.
    pub fn straight_through(&mut self, z: Var, value: Tensor) -> Var {
        assert_eq!(self.value(z).shape(), value.shape(), "straight_through shape");
        self.push(value, vec![z], Some(Box::new(|g: &Tensor| vec![g.clone()])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b)).expect("tape add");
        self.push(
            value,
            vec![a, b],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b)).expect("tape sub");
        self.push(
            value,
            vec![a, b],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.scale(-1.0)])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let value = av.zip_map(&bv, "mul", |x, y| x * y).expect("tape mul");
        self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                vec![
                    g.zip_map(&bv, "mul-back", |x, y| x * y).unwrap(),
                    g.zip_map(&av, "mul-back", |x, y| x * y).unwrap(),
                ]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g: &Tensor| vec![g.scale(c)])),
        )
    }

    pub fn square(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        let value = av.map(|x| x * x);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip_map(&av, "square-back", |gv, x| 2.0 * x * gv).unwrap()]
            })),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        let value = av.map(f64::abs);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g
                    .zip_map(&av, "abs-back", |gv, x| gv * sign_subgradient(x))
                    .unwrap()]
            })),
        )
    }

    /// Broadcast-add a length-n (or 1 x n) vector to every row of an m x n
    /// matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        let (m, n) = (av.shape()[0], av.shape()[1]);
        assert_eq!(rv.numel(), n, "add_row width");
        let row_shape = rv.shape().to_vec();
        let mut data = av.to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += rv.data()[j];
            }
        }
        let value = Tensor::new(vec![m, n], data);
        self.push(
            value,
            vec![a, row],
            Some(Box::new(move |g: &Tensor| {
                let mut rg = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        rg[j] += g.data()[i * n + j];
                    }
                }
                vec![g.clone(), Tensor::new(row_shape.clone(), rg)]
            })),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        assert_eq!(av.rank(), 2, "matmul lhs rank");
        assert_eq!(bv.rank(), 2, "matmul rhs rank");
        assert_eq!(
            av.shape()[1],
            bv.shape()[0],
            "matmul inner extents {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let value = Tensor::new(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n));
        self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                // dA = g . B^T, dB = A^T . g
                let bt = transpose_raw(bv.data(), k, n);
                let at = transpose_raw(av.data(), m, k);
                vec![
                    Tensor::new(vec![m, k], matmul_raw(g.data(), &bt, m, n, k)),
                    Tensor::new(vec![k, n], matmul_raw(&at, g.data(), k, m, n)),
                ]
            })),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let old_shape = self.value(a).shape().to_vec();
        let value = self.value(a).reshape(shape).expect("tape reshape numel");
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.reshape(old_shape.clone()).unwrap()]
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 2, "transpose rank");
        let (m, n) = (av.shape()[0], av.shape()[1]);
        let value = Tensor::new(vec![n, m], transpose_raw(av.data(), m, n));
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![Tensor::new(vec![m, n], transpose_raw(g.data(), n, m))]
            })),
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        let value = av.map(gelu_scalar);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g
                    .zip_map(&av, "gelu-back", |gv, x| gv * gelu_grad_scalar(x))
                    .unwrap()]
            })),
        )
    }

    /// Layer norm over the last axis with learned gain and offset.
    pub fn layer_norm(&mut self, a: Var, gain: Var, offset: Var, eps: f64) -> Var {
        let av = self.value(a).clone();
        let gv = self.value(gain).clone();
        let ov = self.value(offset).clone();
        let width = *av.shape().last().expect("layer_norm rank");
        assert_eq!(gv.numel(), width, "layer_norm gain width");
        assert_eq!(ov.numel(), width, "layer_norm offset width");
        let rows = av.numel() / width;
        let mut out = vec![0.0; av.numel()];
        for r in 0..rows {
            layer_norm_row_into(
                &av.data()[r * width..(r + 1) * width],
                gv.data(),
                ov.data(),
                eps,
                &mut out[r * width..(r + 1) * width],
            );
        }
        let value = Tensor::new(av.shape().to_vec(), out);
        let gain_shape = gv.shape().to_vec();
        let offset_shape = ov.shape().to_vec();
        self.push(
            value,
            vec![a, gain, offset],
            Some(Box::new(move |g: &Tensor| {
                let n = width as f64;
                let mut dx = vec![0.0; av.numel()];
                let mut dgain = vec![0.0; width];
                let mut doffset = vec![0.0; width];
                for r in 0..rows {
                    let xs = &av.data()[r * width..(r + 1) * width];
                    let gs = &g.data()[r * width..(r + 1) * width];
                    let mean = xs.iter().sum::<f64>() / n;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    // xhat_j = (x_j - mean) * inv
                    let xhat: Vec<f64> = xs.iter().map(|&x| (x - mean) * inv).collect();
                    let dxhat: Vec<f64> = (0..width).map(|j| gs[j] * gv.data()[j]).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / n;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    for j in 0..width {
                        dgain[j] += gs[j] * xhat[j];
                        doffset[j] += gs[j];
                        dx[r * width + j] =
                            inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                vec![
                    Tensor::new(av.shape().to_vec(), dx),
                    Tensor::new(gain_shape.clone(), dgain),
                    Tensor::new(offset_shape.clone(), doffset),
                ]
            })),
        )
    }

    /// Row softmax with an additive bias node. Bias entries equal to
    /// [`MASKED_LOGIT`] force exactly zero probability and zero gradient.
    pub fn biased_softmax_rows(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x).clone();
        let bv = self.value(bias).clone();
        assert_eq!(xv.shape(), bv.shape(), "biased_softmax shapes");
        let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            softmax_row_into(
                &xv.data()[r * cols..(r + 1) * cols],
                Some(&bv.data()[r * cols..(r + 1) * cols]),
                &mut out[r * cols..(r + 1) * cols],
            );
        }
        let probs = Tensor::new(vec![rows, cols], out);
        let probs_cap = probs.clone();
        self.push(
            probs,
            vec![x, bias],
            Some(Box::new(move |g: &Tensor| {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let p = &probs_cap.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        // p_j is exactly 0 at masked positions, so they get
                        // zero gradient without a separate branch.
                        dx[r * cols + j] = p[j] * (gr[j] - dot);
                    }
                }
                let dxt = Tensor::new(vec![rows, cols], dx);
                vec![dxt.clone(), dxt]
            })),
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let zeros = Tensor::zeros(self.value(x).shape());
        let bias = self.constant(zeros);
        self.biased_softmax_rows(x, bias)
    }

    /// Weighted mean negative log-likelihood over rows of a logit matrix.
    ///
    /// `weights[i]` selects (and weights) row i; the loss is
    /// `sum_i w_i * (logsumexp(row_i) - row_i[target_i]) / sum_i w_i`.
    /// An all-zero weight vector yields 0.
    pub fn nll_rows(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits).clone();
        let (rows, cols) = (lv.shape()[0], lv.shape()[1]);
        assert_eq!(targets.len(), rows, "nll targets");
        assert_eq!(weights.len(), rows, "nll weights");
        let wsum: f64 = weights.iter().sum();
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        let mut loss = 0.0;
        if wsum > 0.0 {
            for i in 0..rows {
                if weights[i] == 0.0 {
                    continue;
                }
                let row = &lv.data()[i * cols..(i + 1) * cols];
                loss += weights[i] * (log_sum_exp(row) - row[targets[i]]);
            }
            loss /= wsum;
        }
        self.push(
            Tensor::scalar(loss),
            vec![logits],
            Some(Box::new(move |g: &Tensor| {
                let gs = g.scalar_value();
                let mut dl = vec![0.0; rows * cols];
                if wsum > 0.0 {
                    for i in 0..rows {
                        if weights[i] == 0.0 {
                            continue;
                        }
                        let row = &lv.data()[i * cols..(i + 1) * cols];
                        let lse = log_sum_exp(row);
                        let scale = gs * weights[i] / wsum;
                        for j in 0..cols {
                            let p = (row[j] - lse).exp();
                            let hit = if j == targets[i] { 1.0 } else { 0.0 };
                            dl[i * cols + j] = scale * (p - hit);
                        }
                    }
                }
                vec![Tensor::new(vec![rows, cols], dl)]
            })),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let shape = self.value(a).shape().to_vec();
        let value = Tensor::scalar(self.value(a).sum());
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![Tensor::full(&shape, g.scalar_value())]
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Weighted sum of all elements against a constant weight tensor.
    pub fn dot_const(&mut self, a: Var, w: &Tensor) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), w.shape(), "dot_const shapes");
        let value = Tensor::scalar(
            av.data()
                .iter()
                .zip(w.data())
                .map(|(x, ww)| x * ww)
                .sum::<f64>(),
        );
        let w = w.clone();
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![w.scale(g.scalar_value())]
            })),
        )
    }

    /// Linear combination of same-shape nodes with constant coefficients.
    pub fn linear_combine(&mut self, vars: &[Var], coeffs: &[f64]) -> Var {
        assert_eq!(vars.len(), coeffs.len());
        assert!(!vars.is_empty(), "linear_combine of nothing");
        let shape = self.value(vars[0]).shape().to_vec();
        let mut data = vec![0.0; self.value(vars[0]).numel()];
        for (&v, &c) in vars.iter().zip(coeffs) {
            let t = self.value(v);
            assert_eq!(t.shape(), &shape[..], "linear_combine shapes");
            for (o, &x) in data.iter_mut().zip(t.data()) {
                *o += c * x;
            }
        }
        let coeffs = coeffs.to_vec();
        self.push(
            Tensor::new(shape, data),
            vars.to_vec(),
            Some(Box::new(move |g: &Tensor| {
                coeffs.iter().map(|&c| g.scale(c)).collect()
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (m, n) = (av.shape()[0], av.shape()[1]);
        assert!(start + len <= n, "slice_cols range");
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&av.data()[i * n + start..i * n + start + len]);
        }
        self.push(
            Tensor::new(vec![m, len], data),
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                vec![Tensor::new(vec![m, n], dx)]
            })),
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (m, n) = (av.shape()[0], av.shape()[1]);
        assert!(start + len <= m, "slice_rows range");
        let data = av.data()[start * n..(start + len) * n].to_vec();
        self.push(
            Tensor::new(vec![len, n], data),
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut dx = vec![0.0; m * n];
                dx[start * n..(start + len) * n].copy_from_slice(g.data());
                vec![Tensor::new(vec![m, n], dx)]
            })),
        )
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let n = self.value(vars[0]).shape()[1];
        let mut rows_each = Vec::with_capacity(vars.len());
        let mut data = Vec::new();
        for &v in vars {
            let t = self.value(v);
            assert_eq!(t.shape()[1], n, "concat_rows widths");
            rows_each.push(t.shape()[0]);
            data.extend_from_slice(t.data());
        }
        let total: usize = rows_each.iter().sum();
        self.push(
            Tensor::new(vec![total, n], data),
            vars.to_vec(),
            Some(Box::new(move |g: &Tensor| {
                let mut out = Vec::with_capacity(rows_each.len());
                let mut offset = 0;
                for &m in &rows_each {
                    out.push(Tensor::new(
                        vec![m, n],
                        g.data()[offset * n..(offset + m) * n].to_vec(),
                    ));
                    offset += m;
                }
                out
            })),
        )
    }

    pub fn concat_cols(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let m = self.value(vars[0]).shape()[0];
        let widths: Vec<usize> = vars
            .iter()
            .map(|&v| {
                let t = self.value(v);
                assert_eq!(t.shape()[0], m, "concat_cols heights");
                t.shape()[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (idx, &v) in vars.iter().enumerate() {
            let t = self.value(v);
            let w = widths[idx];
            for i in 0..m {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        self.push(
            Tensor::new(vec![m, total], data),
            vars.to_vec(),
            Some(Box::new(move |g: &Tensor| {
                let mut out = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for &w in &widths {
                    let mut part = vec![0.0; m * w];
                    for i in 0..m {
                        part[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                    }
                    out.push(Tensor::new(vec![m, w], part));
                    offset += w;
                }
                out
            })),
        )
    }

    /// Select rows of a table by index, with scatter-add on the way back.
    /// This is the embedding-lookup primitive.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        let (rows, cols) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            assert!(i < rows, "gather_rows index {i} out of {rows}");
            data.extend_from_slice(&tv.data()[i * cols..(i + 1) * cols]);
        }
        let indices = indices.to_vec();
        let m = indices.len();
        self.push(
            Tensor::new(vec![m, cols], data),
            vec![table],
            Some(Box::new(move |g: &Tensor| {
                let mut dt = vec![0.0; rows * cols];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..cols {
                        dt[i * cols + j] += g.data()[r * cols + j];
                    }
                }
                vec![Tensor::new(vec![rows, cols], dt)]
            })),
        )
    }

    /// Repeat a length-n (or 1 x n) vector as m rows.
    pub fn tile_rows(&mut self, row: Var, m: usize) -> Var {
        let rv = self.value(row);
        let n = rv.numel();
        let row_shape = rv.shape().to_vec();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(rv.data());
        }
        self.push(
            Tensor::new(vec![m, n], data),
            vec![row],
            Some(Box::new(move |g: &Tensor| {
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += g.data()[i * n + j];
                    }
                }
                vec![Tensor::new(row_shape.clone(), dr)]
            })),
        )
    }

    /// 1-D convolution over time. `x` is T x Cin, `w` is [Cout, Cin, k],
    /// `b` is length Cout. Zero padding of `pad` frames on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = self.value(b).clone();
        let (t_in, c_in) = (xv.shape()[0], xv.shape()[1]);
        let (c_out, wc_in, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(c_in, wc_in, "conv1d channels");
        assert_eq!(bv.numel(), c_out, "conv1d bias");
        assert!(t_in + 2 * pad >= k, "conv1d input shorter than kernel");
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; t_out * c_out];
        for to in 0..t_out {
            for co in 0..c_out {
                let mut acc = bv.data()[co];
                for dk in 0..k {
                    let ti = (to * stride + dk) as isize - pad as isize;
                    if ti < 0 || ti >= t_in as isize {
                        continue;
                    }
                    let ti = ti as usize;
                    for ci in 0..c_in {
                        acc += xv.data()[ti * c_in + ci] * wv.data()[(co * c_in + ci) * k + dk];
                    }
                }
                out[to * c_out + co] = acc;
            }
        }
        self.push(
            Tensor::new(vec![t_out, c_out], out),
            vec![x, w, b],
            Some(Box::new(move |g: &Tensor| {
                let mut dx = vec![0.0; t_in * c_in];
                let mut dw = vec![0.0; c_out * c_in * k];
                let mut db = vec![0.0; c_out];
                for to in 0..t_out {
                    for co in 0..c_out {
                        let go = g.data()[to * c_out + co];
                        db[co] += go;
                        for dk in 0..k {
                            let ti = (to * stride + dk) as isize - pad as isize;
                            if ti < 0 || ti >= t_in as isize {
                                continue;
                            }
                            let ti = ti as usize;
                            for ci in 0..c_in {
                                dx[ti * c_in + ci] += go * wv.data()[(co * c_in + ci) * k + dk];
                                dw[(co * c_in + ci) * k + dk] += go * xv.data()[ti * c_in + ci];
                            }
                        }
                    }
                }
                vec![
                    Tensor::new(vec![t_in, c_in], dx),
                    Tensor::new(vec![c_out, c_in, k], dw),
                    Tensor::new(vec![c_out], db),
                ]
            })),
        )
    }

    /// Transposed 1-D convolution. `x` is n x Cin, `w` is [Cin, Cout, k].
    /// Output length is `(n - 1) * stride - 2 * pad + k`.
    pub fn conv1d_transpose(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = self.value(b).clone();
        let (n_in, c_in) = (xv.shape()[0], xv.shape()[1]);
        let (wc_in, c_out, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(c_in, wc_in, "conv1d_transpose channels");
        assert_eq!(bv.numel(), c_out, "conv1d_transpose bias");
        let t_out = (n_in - 1) * stride + k - 2 * pad;
        let mut out = vec![0.0; t_out * c_out];
        for to in 0..t_out {
            for co in 0..c_out {
                out[to * c_out + co] = bv.data()[co];
            }
        }
        for i in 0..n_in {
            for dk in 0..k {
                let to = (i * stride + dk) as isize - pad as isize;
                if to < 0 || to >= t_out as isize {
                    continue;
                }
                let to = to as usize;
                for ci in 0..c_in {
                    let xi = xv.data()[i * c_in + ci];
                    for co in 0..c_out {
                        out[to * c_out + co] += xi * wv.data()[(ci * c_out + co) * k + dk];
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![t_out, c_out], out),
            vec![x, w, b],
            Some(Box::new(move |g: &Tensor| {
                let mut dx = vec![0.0; n_in * c_in];
                let mut dw = vec![0.0; c_in * c_out * k];
                let mut db = vec![0.0; c_out];
                for to in 0..t_out {
                    for co in 0..c_out {
                        db[co] += g.data()[to * c_out + co];
                    }
                }
                for i in 0..n_in {
                    for dk in 0..k {
                        let to = (i * stride + dk) as isize - pad as isize;
                        if to < 0 || to >= t_out as isize {
                            continue;
                        }
                        let to = to as usize;
                        for ci in 0..c_in {
                            for co in 0..c_out {
                                let go = g.data()[to * c_out + co];
                                dx[i * c_in + ci] += go * wv.data()[(ci * c_out + co) * k + dk];
                                dw[(ci * c_out + co) * k + dk] += go * xv.data()[i * c_in + ci];
                            }
                        }
                    }
                }
                vec![
                    Tensor::new(vec![n_in, c_in], dx),
                    Tensor::new(vec![c_in, c_out, k], dw),
                    Tensor::new(vec![c_out], db),
                ]
            })),
        )
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert!(
            self.value(loss).is_scalar(),
            "backward requires a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].clone() else {
                continue;
            };
            let Some(back) = &node.backward else {
                continue;
            };
            let parent_grads = back(&gout);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => *acc = acc.add(&pg).expect("gradient accumulation"),
                    slot => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

fn sign_subgradient(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Builds an additive logit bias tensor with [`MASKED_LOGIT`] at masked
/// positions and 0 elsewhere. `masked(i, j)` decides.
pub fn mask_bias(rows: usize, cols: usize, masked: impl Fn(usize, usize) -> bool) -> Tensor {
    Tensor::from_fn(&[rows, cols], |idx| {
        let (i, j) = (idx / cols, idx % cols);
        if masked(i, j) {
            MASKED_LOGIT
        } else {
            0.0
        }
    })
}
