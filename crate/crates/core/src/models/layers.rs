//! Layers with hand-written backward passes.
//!
//! Activations inside a backbone use the channel-major layout `[C, N, H, W]`:
//! a convolution is then a single GEMM `weight[Co, Ci*k*k] x cols[Ci*k*k, N*Ho*Wo]`
//! whose output is already in that layout, and batch-norm statistics are taken
//! over contiguous channel slices.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2};
use rand::RngCore;
use rand_distr::{Distribution, Normal, Uniform};

/// Index of an entry in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    /// Buffers such as running statistics are stored but never optimised.
    pub trainable: bool,
}

/// Flat arena of named parameters and buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f32>, trainable: bool) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            value,
            grad,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn value(&self, id: ParamId) -> &[f32] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.entries[id.0].value
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// FNV-1a over every value's bit pattern, in registration order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for e in &self.entries {
            for v in &e.value {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    fn matrix(&self, id: ParamId, rows: usize, cols: usize) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((rows, cols), self.value(id)).expect("parameter shape")
    }

    fn grad_matrix(&mut self, id: ParamId, rows: usize, cols: usize) -> ArrayViewMut2<'_, f32> {
        ArrayViewMut2::from_shape((rows, cols), self.grad_mut(id)).expect("parameter shape")
    }
}

fn he_normal<R: RngCore + ?Sized>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f32> {
    let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// 2-D convolution without bias (always followed by batch norm here).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<R: RngCore + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            he_normal(rng, fan_in, out_ch * fan_in),
            true,
        );
        Self {
            weight,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Array4<f32>) -> Array2<f32> {
        let (c, n, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let cols_per_row = n * oh * ow;
        let mut cols = Array2::<f32>::zeros((self.patch_len(), cols_per_row));
        let src = x.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("standard layout");
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let out = &mut dst[row * cols_per_row..(row + 1) * cols_per_row];
                    for ni in 0..n {
                        let plane = &src[(ci * n + ni) * h * w..(ci * n + ni + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let dst_row = &mut out[(ni * oh + oy) * ow..(ni * oh + oy + 1) * ow];
                            for (ox, d) in dst_row.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f32>, dims: (usize, usize, usize, usize)) -> Array4<f32> {
        let (c, n, h, w) = dims;
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let cols_per_row = n * oh * ow;
        let mut x = Array4::<f32>::zeros(dims);
        let dst = x.as_slice_mut().expect("standard layout");
        let src = cols.as_slice().expect("standard layout");
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let inp = &src[row * cols_per_row..(row + 1) * cols_per_row];
                    for ni in 0..n {
                        let plane = &mut dst[(ci * n + ni) * h * w..(ci * n + ni + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            let src_row = &inp[(ni * oh + oy) * ow..(ni * oh + oy + 1) * ow];
                            for (ox, s) in src_row.iter().enumerate() {
                                let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst_row[ix as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the unfolded input needed by [`Conv2d::backward`].
    pub fn forward(&self, store: &ParamStore, x: &Array4<f32>) -> (Array4<f32>, Array2<f32>) {
        let (_, n, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let weight = store.matrix(self.weight, self.out_ch, self.patch_len());
        let mut out = Array2::<f32>::zeros((self.out_ch, n * oh * ow));
        general_mat_mul(1.0, &weight, &cols, 0.0, &mut out);
        let out = out
            .into_shape_with_order((self.out_ch, n, oh, ow))
            .expect("contiguous output");
        (out, cols)
    }

    /// Accumulates the weight gradient; returns the input gradient when asked.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        dy: &Array4<f32>,
        cols: &Array2<f32>,
        in_dims: (usize, usize, usize, usize),
        need_input_grad: bool,
    ) -> Option<Array4<f32>> {
        let spatial = dy.len() / self.out_ch;
        let dy2 = ArrayView2::from_shape((self.out_ch, spatial), dy.as_slice().expect("standard layout"))
            .expect("dy shape");
        {
            let mut gw = store.grad_matrix(self.weight, self.out_ch, self.patch_len());
            general_mat_mul(1.0, &dy2, &cols.t(), 1.0, &mut gw);
        }
        if !need_input_grad {
            return None;
        }
        let weight = store.matrix(self.weight, self.out_ch, self.patch_len());
        let mut dcols = Array2::<f32>::zeros((self.patch_len(), spatial));
        general_mat_mul(1.0, &weight.t(), &dy2, 0.0, &mut dcols);
        Some(self.col2im(&dcols, in_dims))
    }
}

/// Per-channel batch normalisation over `[C, N, H, W]` activations.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f32,
    pub momentum: f32,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Array4<f32>,
    inv_std: Vec<f32>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), &[channels], vec![1.0; channels], true),
            beta: store.add(format!("{name}.beta"), &[channels], vec![0.0; channels], true),
            running_mean: store.add(format!("{name}.running_mean"), &[channels], vec![0.0; channels], false),
            running_var: store.add(format!("{name}.running_var"), &[channels], vec![1.0; channels], false),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward_train(&self, store: &mut ParamStore, mut x: Array4<f32>) -> (Array4<f32>, BnCache) {
        let per = x.len() / self.channels;
        let mut inv_std = Vec::with_capacity(self.channels);
        let mut xhat = Array4::zeros(x.raw_dim());
        let mut means = Vec::with_capacity(self.channels);
        let mut vars = Vec::with_capacity(self.channels);
        {
            let gamma = store.value(self.gamma);
            let beta = store.value(self.beta);
            let data = x.as_slice_mut().expect("standard layout");
            let hat = xhat.as_slice_mut().expect("standard layout");
            for c in 0..self.channels {
                let chunk = &mut data[c * per..(c + 1) * per];
                let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
                let var = chunk
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / per as f64;
                let istd = (1.0 / (var + self.eps as f64).sqrt()) as f32;
                let (m, g, b) = (mean as f32, gamma[c], beta[c]);
                for (v, h) in chunk.iter_mut().zip(&mut hat[c * per..(c + 1) * per]) {
                    *h = (*v - m) * istd;
                    *v = g * *h + b;
                }
                inv_std.push(istd);
                means.push(mean as f32);
                vars.push(if per > 1 { (var * per as f64 / (per - 1) as f64) as f32 } else { var as f32 });
            }
        }
        let mom = self.momentum;
        for (rm, m) in store.value_mut(self.running_mean).iter_mut().zip(&means) {
            *rm = (1.0 - mom) * *rm + mom * m;
        }
        for (rv, v) in store.value_mut(self.running_var).iter_mut().zip(&vars) {
            *rv = (1.0 - mom) * *rv + mom * v;
        }
        (x, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, store: &ParamStore, mut x: Array4<f32>) -> Array4<f32> {
        let per = x.len() / self.channels;
        let (gamma, beta) = (store.value(self.gamma), store.value(self.beta));
        let (rm, rv) = (store.value(self.running_mean), store.value(self.running_var));
        let data = x.as_slice_mut().expect("standard layout");
        for c in 0..self.channels {
            let scale = gamma[c] / (rv[c] + self.eps).sqrt();
            let shift = beta[c] - rm[c] * scale;
            for v in &mut data[c * per..(c + 1) * per] {
                *v = *v * scale + shift;
            }
        }
        x
    }

    pub fn backward(&self, store: &mut ParamStore, mut dy: Array4<f32>, cache: &BnCache) -> Array4<f32> {
        let per = dy.len() / self.channels;
        let m = per as f32;
        let hat = cache.xhat.as_slice().expect("standard layout");
        let mut dgamma = vec![0.0f32; self.channels];
        let mut dbeta = vec![0.0f32; self.channels];
        {
            let gamma = store.value(self.gamma);
            let data = dy.as_slice_mut().expect("standard layout");
            for c in 0..self.channels {
                let d = &mut data[c * per..(c + 1) * per];
                let h = &hat[c * per..(c + 1) * per];
                let (mut sum_dy, mut sum_dy_h) = (0.0f64, 0.0f64);
                for (&dv, &hv) in d.iter().zip(h) {
                    sum_dy += dv as f64;
                    sum_dy_h += (dv * hv) as f64;
                }
                dgamma[c] = sum_dy_h as f32;
                dbeta[c] = sum_dy as f32;
                let k = gamma[c] * cache.inv_std[c] / m;
                let (sd, sdh) = (sum_dy as f32, sum_dy_h as f32);
                for (dv, &hv) in d.iter_mut().zip(h) {
                    *dv = k * (m * *dv - sd - hv * sdh);
                }
            }
        }
        for (g, d) in store.grad_mut(self.gamma).iter_mut().zip(&dgamma) {
            *g += d;
        }
        for (g, d) in store.grad_mut(self.beta).iter_mut().zip(&dbeta) {
            *g += d;
        }
        dy
    }
}

/// Convolution, batch norm and an optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub struct ConvBnCache {
    cols: Array2<f32>,
    in_dims: (usize, usize, usize, usize),
    bn: BnCache,
    out: Option<Array4<f32>>,
}

fn relu_inplace(x: &mut Array4<f32>) {
    x.mapv_inplace(|v| v.max(0.0));
}

fn relu_mask(dy: &mut Array4<f32>, out: &Array4<f32>) {
    ndarray::Zip::from(dy).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: RngCore + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        relu: bool,
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, kernel, stride, kernel / 2, rng);
        let bn = BatchNorm::new(store, &format!("{name}.bn"), out_ch);
        Self { conv, bn, relu }
    }

    pub fn forward_train(&self, store: &mut ParamStore, x: &Array4<f32>) -> (Array4<f32>, ConvBnCache) {
        let (y, cols) = self.conv.forward(store, x);
        let (mut y, bn) = self.bn.forward_train(store, y);
        let out = if self.relu {
            relu_inplace(&mut y);
            Some(y.clone())
        } else {
            None
        };
        (y, ConvBnCache { cols, in_dims: x.dim(), bn, out })
    }

    pub fn forward_eval(&self, store: &ParamStore, x: &Array4<f32>) -> Array4<f32> {
        let (y, _) = self.conv.forward(store, x);
        let mut y = self.bn.forward_eval(store, y);
        if self.relu {
            relu_inplace(&mut y);
        }
        y
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        mut dy: Array4<f32>,
        cache: ConvBnCache,
        need_input_grad: bool,
    ) -> Option<Array4<f32>> {
        if let Some(out) = &cache.out {
            relu_mask(&mut dy, out);
        }
        let dy = self.bn.backward(store, dy, &cache.bn);
        self.conv.backward(store, &dy, &cache.cols, cache.in_dims, need_input_grad)
    }
}

/// Two 3x3 conv-bn layers with a residual connection, ReLU after the sum.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub first: ConvBn,
    pub second: ConvBn,
    /// 1x1 projection when the shape changes.
    pub shortcut: Option<ConvBn>,
}

#[derive(Debug, Clone)]
pub struct BasicBlockCache {
    first: ConvBnCache,
    second: ConvBnCache,
    shortcut: Option<ConvBnCache>,
    out: Array4<f32>,
}

impl BasicBlock {
    pub fn new<R: RngCore + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let first = ConvBn::new(store, &format!("{name}.a"), in_ch, out_ch, 3, stride, true, rng);
        let second = ConvBn::new(store, &format!("{name}.b"), out_ch, out_ch, 3, 1, false, rng);
        let shortcut = (stride != 1 || in_ch != out_ch)
            .then(|| ConvBn::new(store, &format!("{name}.proj"), in_ch, out_ch, 1, stride, false, rng));
        Self { first, second, shortcut }
    }

    pub fn forward_train(&self, store: &mut ParamStore, x: &Array4<f32>) -> (Array4<f32>, BasicBlockCache) {
        let (a, first) = self.first.forward_train(store, x);
        let (mut y, second) = self.second.forward_train(store, &a);
        let shortcut = match &self.shortcut {
            Some(proj) => {
                let (s, cache) = proj.forward_train(store, x);
                y += &s;
                Some(cache)
            }
            None => {
                y += x;
                None
            }
        };
        relu_inplace(&mut y);
        let out = y.clone();
        (y, BasicBlockCache { first, second, shortcut, out })
    }

    pub fn forward_eval(&self, store: &ParamStore, x: &Array4<f32>) -> Array4<f32> {
        let a = self.first.forward_eval(store, x);
        let mut y = self.second.forward_eval(store, &a);
        match &self.shortcut {
            Some(proj) => y += &proj.forward_eval(store, x),
            None => y += x,
        }
        relu_inplace(&mut y);
        y
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        mut dy: Array4<f32>,
        cache: BasicBlockCache,
        need_input_grad: bool,
    ) -> Option<Array4<f32>> {
        relu_mask(&mut dy, &cache.out);
        let d_short = match (&self.shortcut, cache.shortcut) {
            (Some(proj), Some(c)) => proj.backward(store, dy.clone(), c, need_input_grad),
            _ => need_input_grad.then(|| dy.clone()),
        };
        let da = self
            .second
            .backward(store, dy, cache.second, true)
            .expect("requested");
        let dx = self.first.backward(store, da, cache.first, need_input_grad);
        match (dx, d_short) {
            (Some(mut dx), Some(ds)) => {
                dx += &ds;
                Some(dx)
            }
            _ => None,
        }
    }
}

/// Fully connected layer `y = x W^T + b` on `[N, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform `+-1/sqrt(in)` weights, zero bias.
    pub fn new<R: RngCore + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            weight: store.add(format!("{name}.weight"), &[out_dim, in_dim], w, true),
            bias: store.add(format!("{name}.bias"), &[out_dim], vec![0.0; out_dim], true),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f32>) -> Array2<f32> {
        let w = store.matrix(self.weight, self.out_dim, self.in_dim);
        let mut y = Array2::<f32>::zeros((x.nrows(), self.out_dim));
        general_mat_mul(1.0, &x, &w.t(), 0.0, &mut y);
        let b = store.value(self.bias);
        for mut row in y.rows_mut() {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParamStore, x: ArrayView2<f32>, dy: ArrayView2<f32>) -> Array2<f32> {
        {
            let mut gw = store.grad_matrix(self.weight, self.out_dim, self.in_dim);
            general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut gw);
        }
        {
            let gb = store.grad_mut(self.bias);
            for row in dy.rows() {
                for (g, d) in gb.iter_mut().zip(row.iter()) {
                    *g += d;
                }
            }
        }
        let w = store.matrix(self.weight, self.out_dim, self.in_dim);
        let mut dx = Array2::<f32>::zeros((dy.nrows(), self.in_dim));
        general_mat_mul(1.0, &dy, &w, 0.0, &mut dx);
        dx
    }
}

/// Global average pooling `[C, N, H, W] -> [N, C]`.
pub fn global_avg_pool(x: &Array4<f32>) -> Array2<f32> {
    let (c, n, h, w) = x.dim();
    let hw = h * w;
    let data = x.as_slice().expect("standard layout");
    Array2::from_shape_fn((n, c), |(ni, ci)| {
        let start = (ci * n + ni) * hw;
        data[start..start + hw].iter().sum::<f32>() / hw as f32
    })
}

pub fn global_avg_pool_backward(d: ArrayView2<f32>, dims: (usize, usize, usize, usize)) -> Array4<f32> {
    let (_, _, h, w) = dims;
    let scale = 1.0 / (h * w) as f32;
    Array4::from_shape_fn(dims, |(ci, ni, _, _)| d[[ni, ci]] * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random4(dims: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut rng = seeded(seed);
        Array4::from_shape_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution on `[C, N, H, W]`.
    fn naive_conv(x: &Array4<f32>, w: &[f32], conv: &Conv2d) -> Array4<f32> {
        let (c, n, h, wd) = x.dim();
        let (oh, ow) = conv.out_hw(h, wd);
        let k = conv.kernel;
        Array4::from_shape_fn((conv.out_ch, n, oh, ow), |(o, ni, oy, ox)| {
            let mut acc = 0.0f64;
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                        let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += (w[((o * c + ci) * k + ki) * k + kj]
                                * x[[ci, ni, iy as usize, ix as usize]]) as f64;
                        }
                    }
                }
            }
            acc as f32
        })
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(stride, kernel) in &[(1, 3), (2, 3), (2, 1), (1, 1)] {
            let mut store = ParamStore::default();
            let conv = Conv2d::new(&mut store, "c", 3, 4, kernel, stride, kernel / 2, &mut seeded(1));
            let x = random4((3, 2, 7, 6), 2);
            let (y, _) = conv.forward(&store, &x);
            let expect = naive_conv(&x, store.value(conv.weight), &conv);
            assert_eq!(y.dim(), expect.dim());
            for (a, b) in y.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    /// Scalar probe `L = sum(y * r)` for a fixed random `r`.
    fn probe(y: &Array4<f32>, r: &Array4<f32>) -> f64 {
        y.iter().zip(r.iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
    }

    #[test]
    fn conv_bn_relu_gradients_match_finite_differences() {
        let mut store = ParamStore::default();
        let layer = ConvBn::new(&mut store, "l", 2, 3, 3, 2, true, &mut seeded(3));
        let x = random4((2, 3, 5, 5), 4);
        let (y, cache) = layer.forward_train(&mut store.clone(), &x);
        let r = random4(y.dim(), 5);
        let dx = layer
            .backward(&mut store, r.clone(), cache, true)
            .unwrap();

        let eps = 1e-2f32;
        let eval = |xx: &Array4<f32>, st: &ParamStore| {
            let (y, _) = layer.forward_train(&mut st.clone(), xx);
            probe(&y, &r)
        };
        for idx in [(0, 0, 1, 1), (1, 2, 4, 0), (0, 1, 2, 3)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (eval(&xp, &store) - eval(&xm, &store)) / (2.0 * eps as f64);
            assert!((fd - dx[idx] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "x{idx:?}: fd {fd} vs {}", dx[idx]);
        }
        let wgrad = store.entries()[layer.conv.weight.0].grad.clone();
        // a weight moves a whole channel, so keep the step small enough not
        // to push any activation across the ReLU kink
        let eps = 3e-3f32;
        for i in [0, 7, 20, 53] {
            let mut sp = store.clone();
            sp.value_mut(layer.conv.weight)[i] += eps;
            let mut sm = store.clone();
            sm.value_mut(layer.conv.weight)[i] -= eps;
            let fd = (eval(&x, &sp) - eval(&x, &sm)) / (2.0 * eps as f64);
            assert!((fd - wgrad[i] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "w{i}: fd {fd} vs {}", wgrad[i]);
        }
    }

    #[test]
    fn basic_block_gradients_match_finite_differences() {
        let mut store = ParamStore::default();
        let block = BasicBlock::new(&mut store, "b", 2, 4, 2, &mut seeded(6));
        let x = random4((2, 3, 6, 6), 7);
        let (y, cache) = block.forward_train(&mut store.clone(), &x);
        let r = random4(y.dim(), 8);
        let dx = block.backward(&mut store, r.clone(), cache, true).unwrap();
        let eps = 1e-2f32;
        for idx in [(0, 0, 0, 0), (1, 2, 3, 5), (1, 1, 5, 2)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fp = probe(&block.forward_train(&mut store.clone(), &xp).0, &r);
            let fm = probe(&block.forward_train(&mut store.clone(), &xm).0, &r);
            let fd = (fp - fm) / (2.0 * eps as f64);
            assert!((fd - dx[idx] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "x{idx:?}: fd {fd} vs {}", dx[idx]);
        }
    }

    #[test]
    fn linear_gradients() {
        let mut store = ParamStore::default();
        let lin = Linear::new(&mut store, "fc", 3, 2, &mut seeded(9));
        let x = ndarray::array![[0.5f32, -1.0, 2.0], [1.5, 0.25, -0.5]];
        let dy = ndarray::array![[1.0f32, -2.0], [0.5, 0.0]];
        let dx = lin.backward(&mut store, x.view(), dy.view());
        let w = ArrayView2::from_shape((2, 3), store.value(lin.weight)).unwrap().to_owned();
        assert_eq!(dx, dy.dot(&w));
        let gw = ArrayView2::from_shape((2, 3), &store.entries()[lin.weight.0].grad[..]).unwrap().to_owned();
        assert_eq!(gw, dy.t().dot(&x));
        assert_eq!(store.entries()[lin.bias.0].grad, vec![1.5, -2.0]);
    }

    #[test]
    fn eval_bn_uses_running_stats() {
        let mut store = ParamStore::default();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let x = random4((2, 4, 3, 3), 10);
        let y = bn.forward_eval(&store, x.clone());
        for (a, b) in y.iter().zip(x.iter()) {
            assert!((a - b / (1.0f32 + 1e-5).sqrt()).abs() < 1e-6);
        }
        let (yt, _) = bn.forward_train(&mut store, x);
        let per = yt.len() / 2;
        let mean: f32 = yt.as_slice().unwrap()[..per].iter().sum::<f32>() / per as f32;
        assert!(mean.abs() < 1e-5);
        assert_ne!(store.value(bn.running_mean), &[0.0, 0.0]);
    }

    #[test]
    fn pooling_roundtrip_shapes() {
        let x = random4((3, 2, 4, 4), 11);
        let f = global_avg_pool(&x);
        assert_eq!(f.dim(), (2, 3));
        let d = global_avg_pool_backward(f.view(), x.dim());
        assert_eq!(d.dim(), x.dim());
        assert!((d[[1, 0, 2, 2]] - f[[0, 1]] / 16.0).abs() < 1e-7);
    }
}
