//! Reverse-mode autograd over a flat operation tape. Single-threaded and
//! order-deterministic: two runs over the same inputs produce bit-identical
//! values and gradients.

use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScnnDir {
    Down,
    Up,
    Right,
    Left,
}

pub const SCNN_ORDER: [ScnnDir; 4] = [ScnnDir::Down, ScnnDir::Up, ScnnDir::Right, ScnnDir::Left];

/// Slice-by-slice kernel width.
pub const SCNN_KERNEL_W: usize = 5;

enum Op<R: Real> {
    Leaf { slot: Option<usize> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Conv2d { x: Var, w: Var, b: Var, pad: usize },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2 { x: Var },
    ConcatCh { a: Var, b: Var },
    SliceCh { x: Var, from: usize },
    ScnnPass { x: Var, k: Var, dir: ScnnDir, pre: Vec<R> },
    BceLogitsSum { x: Var, target: Tensor<R> },
    MaskedSmoothL1Sum { x: Var, target: Tensor<R>, mask: Tensor<R> },
    PixelBceLogitsMean { x: Var, target: Tensor<R>, pos_weight: R },
    WeightedSum { terms: Vec<(Var, R)> },
}

pub struct Tape<R: Real> {
    values: Vec<Tensor<R>>,
    ops: Vec<Op<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn softplus<R: Real>(z: R) -> R {
    // ln(1 + e^z), computed as max(z, 0) + ln(1 + e^-|z|).
    z.maxv(R::ZERO) + (R::ONE + (-z.abs()).exp()).ln()
}

fn sigmoid<R: Real>(z: R) -> R {
    if z.to_f64() >= 0.0 {
        let e = (-z).exp();
        R::ONE / (R::ONE + e)
    } else {
        let e = z.exp();
        e / (R::ONE + e)
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Tape<R> {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>) -> Var {
        value.assert_finite("tape op output");
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.values[v.0]
    }

    pub fn input(&mut self, t: Tensor<R>) -> Var {
        self.push(t, Op::Leaf { slot: None })
    }

    /// Registers a parameter tensor under a slot id; gradients for the slot
    /// come back from [`Tape::backward`].
    pub fn param(&mut self, slot: usize, t: &Tensor<R>) -> Var {
        self.push(t.clone(), Op::Leaf { slot: Some(slot) })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.values[x.0].clone();
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| a.maxv(R::ZERO)).collect(),
        };
        self.push(out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = &self.values[x.0];
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| sigmoid(a)).collect(),
        };
        self.push(out, Op::Sigmoid { x })
    }

    /// 2D convolution, stride 1, zero padding. Input [Cin, H, W], weight
    /// [Cout, Cin, KH, KW], bias [Cout].
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Var {
        let (xs, ws) = (&self.values[x.0], &self.values[w.0]);
        let (cin, h, wd) = (xs.shape[0], xs.shape[1], xs.shape[2]);
        let (cout, kcin, kh, kw) = (ws.shape[0], ws.shape[1], ws.shape[2], ws.shape[3]);
        assert_eq!(cin, kcin, "conv input channels mismatch");
        assert_eq!(h + 2 * pad + 1, kh + h + 2 * pad + 1 - kh); // shape sanity
        let oh = h + 2 * pad - kh + 1;
        let ow = wd + 2 * pad - kw + 1;
        let k = cin * kh * kw;
        let n = oh * ow;
        let col = im2col(&xs.data, cin, h, wd, kh, kw, pad);
        let mut out = vec![R::ZERO; cout * n];
        gemm_nn(&ws.data, &col, &mut out, cout, k, n);
        let bias = &self.values[b.0];
        for co in 0..cout {
            let bv = bias.data[co];
            for v in &mut out[co * n..(co + 1) * n] {
                *v += bv;
            }
        }
        self.push(
            Tensor::from_vec(&[cout, oh, ow], out),
            Op::Conv2d { x, w, b, pad },
        )
    }

    /// 2x2 max pooling with stride 2; spatial dims must be even.
    pub fn maxpool2(&mut self, x: Var) -> Var {
        let v = &self.values[x.0];
        let (c, h, w) = (v.shape[0], v.shape[1], v.shape[2]);
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![R::ZERO; c * oh * ow];
        let mut argmax = vec![0u32; c * oh * ow];
        for ci in 0..c {
            let plane = &v.data[ci * h * w..(ci + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = R::from_f64(f64::NEG_INFINITY);
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (oy * 2 + dy) * w + ox * 2 + dx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[ci * oh * ow + oy * ow + ox] = best;
                    argmax[ci * oh * ow + oy * ow + ox] = (ci * h * w + best_idx) as u32;
                }
            }
        }
        self.push(Tensor::from_vec(&[c, oh, ow], out), Op::MaxPool2 { x, argmax })
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = &self.values[x.0];
        let (c, h, w) = (v.shape[0], v.shape[1], v.shape[2]);
        let (oh, ow) = (h * 2, w * 2);
        let mut out = vec![R::ZERO; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[ci * oh * ow + oy * ow + ox] = v.data[ci * h * w + (oy / 2) * w + ox / 2];
                }
            }
        }
        self.push(Tensor::from_vec(&[c, oh, ow], out), Op::Upsample2 { x })
    }

    /// Channel concatenation of two CHW tensors with identical spatial dims.
    pub fn concat_ch(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(va.shape[1..], vb.shape[1..], "concat spatial mismatch");
        let (ca, cb) = (va.shape[0], vb.shape[0]);
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        data.extend_from_slice(&va.data);
        data.extend_from_slice(&vb.data);
        self.push(
            Tensor::from_vec(&[ca + cb, va.shape[1], va.shape[2]], data),
            Op::ConcatCh { a, b },
        )
    }

    /// View of channels [from, to).
    pub fn slice_ch(&mut self, x: Var, from: usize, to: usize) -> Var {
        let v = &self.values[x.0];
        let (c, h, w) = (v.shape[0], v.shape[1], v.shape[2]);
        assert!(from < to && to <= c, "bad channel slice");
        let data = v.data[from * h * w..to * h * w].to_vec();
        self.push(
            Tensor::from_vec(&[to - from, h, w], data),
            Op::SliceCh { x, from },
        )
    }

    /// One directional intra-layer (slice-by-slice) pass: each row (or
    /// column) receives the ReLU of a width-5 channel-mixing convolution of
    /// its already-updated predecessor. Kernel shape [C, C, 5].
    pub fn scnn_pass(&mut self, x: Var, k: Var, dir: ScnnDir) -> Var {
        let v = &self.values[x.0];
        let (c, h, w) = (v.shape[0], v.shape[1], v.shape[2]);
        let kt = &self.values[k.0];
        assert_eq!(kt.shape, vec![c, c, SCNN_KERNEL_W], "scnn kernel shape");
        // Work in a row-oriented view: [slices][C][len].
        let (data, slices, len) = to_pass_layout(&v.data, c, h, w, dir);
        let mut y = data.clone();
        let mut pre = vec![R::ZERO; slices * c * len];
        for s in 1..slices {
            let (prev_slab, rest) = y.split_at_mut(s * c * len);
            let prev = &prev_slab[(s - 1) * c * len..];
            let cur = &mut rest[..c * len];
            let pre_s = &mut pre[s * c * len..(s + 1) * c * len];
            slice_conv(prev, &kt.data, c, len, pre_s);
            for i in 0..c * len {
                cur[i] += pre_s[i].maxv(R::ZERO);
            }
        }
        let out = from_pass_layout(&y, c, h, w, dir);
        self.push(
            Tensor::from_vec(&[c, h, w], out),
            Op::ScnnPass { x, k, dir, pre },
        )
    }

    /// Sum over elements of binary cross-entropy on logits against targets
    /// in [0, 1]: sum(softplus(z) - z * y).
    pub fn bce_logits_sum(&mut self, x: Var, target: Tensor<R>) -> Var {
        let v = &self.values[x.0];
        assert_eq!(v.shape, target.shape, "bce target shape");
        let mut acc = R::ZERO;
        for (&z, &y) in v.data.iter().zip(&target.data) {
            acc += softplus(z) - z * y;
        }
        self.push(Tensor::scalar(acc), Op::BceLogitsSum { x, target })
    }

    /// Sum of mask * smooth_l1(x - target).
    pub fn masked_smooth_l1_sum(&mut self, x: Var, target: Tensor<R>, mask: Tensor<R>) -> Var {
        let v = &self.values[x.0];
        assert_eq!(v.shape, target.shape, "smooth-l1 target shape");
        assert_eq!(v.shape, mask.shape, "smooth-l1 mask shape");
        let mut acc = R::ZERO;
        for ((&p, &t), &m) in v.data.iter().zip(&target.data).zip(&mask.data) {
            let d = p - t;
            let a = d.abs();
            let term = if a.to_f64() < 1.0 {
                R::from_f64(0.5) * d * d
            } else {
                a - R::from_f64(0.5)
            };
            acc += m * term;
        }
        self.push(
            Tensor::scalar(acc),
            Op::MaskedSmoothL1Sum { x, target, mask },
        )
    }

    /// Mean pixel-wise BCE on logits with a positive-class weight.
    pub fn pixel_bce_logits_mean(&mut self, x: Var, target: Tensor<R>, pos_weight: R) -> Var {
        let v = &self.values[x.0];
        assert_eq!(v.shape, target.shape, "pixel bce target shape");
        let n = R::from_f64(v.numel() as f64);
        let mut acc = R::ZERO;
        for (&z, &y) in v.data.iter().zip(&target.data) {
            acc += pos_weight * y * softplus(-z) + (R::ONE - y) * softplus(z);
        }
        self.push(
            Tensor::scalar(acc / n),
            Op::PixelBceLogitsMean {
                x,
                target,
                pos_weight,
            },
        )
    }

    /// Weighted sum of scalar variables.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let mut acc = R::ZERO;
        let terms: Vec<(Var, R)> = terms
            .into_iter()
            .map(|(v, w)| (v, R::from_f64(w)))
            .collect();
        for &(v, w) in &terms {
            acc += self.values[v.0].item() * w;
        }
        self.push(Tensor::scalar(acc), Op::WeightedSum { terms })
    }

    /// Reverse pass from a scalar loss. Returns (slot, gradient) for every
    /// registered parameter, in slot order.
    pub fn backward(&mut self, loss: Var) -> Vec<(usize, Tensor<R>)> {
        let n = self.values.len();
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(R::ONE));
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut out = Vec::new();
        for i in 0..n {
            if let Op::Leaf { slot: Some(slot) } = self.ops[i] {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(&self.values[i].shape));
                out.push((slot, g));
            }
        }
        out.sort_by_key(|(slot, _)| *slot);
        out
    }

    fn accumulate(grads: &mut [Option<Tensor<R>>], var: Var, add: Tensor<R>) {
        match &mut grads[var.0] {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(&add.data) {
                    *a += *b;
                }
            }
            slot => *slot = Some(add),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) {
        match &self.ops[i] {
            Op::Leaf { .. } => {}
            Op::Relu { x } => {
                let v = &self.values[x.0];
                let mut dx = Tensor::zeros(&v.shape);
                for j in 0..v.numel() {
                    if v.data[j] > R::ZERO {
                        dx.data[j] = g.data[j];
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let out = &self.values[i];
                let mut dx = Tensor::zeros(&out.shape);
                for j in 0..out.numel() {
                    let s = out.data[j];
                    dx.data[j] = g.data[j] * s * (R::ONE - s);
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::Conv2d { x, w, b, pad } => {
                let xs = &self.values[x.0];
                let ws = &self.values[w.0];
                let (cin, h, wd) = (xs.shape[0], xs.shape[1], xs.shape[2]);
                let (cout, _, kh, kw) = (ws.shape[0], ws.shape[1], ws.shape[2], ws.shape[3]);
                let k = cin * kh * kw;
                let n = self.values[i].shape[1] * self.values[i].shape[2];
                let col = im2col(&xs.data, cin, h, wd, kh, kw, *pad);
                // dW = dY * col^T
                let mut dw = Tensor::zeros(&ws.shape);
                gemm_nt(&g.data, &col, &mut dw.data, cout, n, k);
                // db = row sums of dY
                let mut db = Tensor::zeros(&[cout]);
                for co in 0..cout {
                    let mut acc = R::ZERO;
                    for v in &g.data[co * n..(co + 1) * n] {
                        acc += *v;
                    }
                    db.data[co] = acc;
                }
                // dX = col2im(W^T * dY)
                let mut dcol = vec![R::ZERO; k * n];
                gemm_tn(&ws.data, &g.data, &mut dcol, cout, k, n);
                let mut dx = Tensor::zeros(&xs.shape);
                col2im(&dcol, cin, h, wd, kh, kw, *pad, &mut dx.data);
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, dw);
                Self::accumulate(grads, *b, db);
            }
            Op::MaxPool2 { x, argmax } => {
                let xs = &self.values[x.0];
                let mut dx = Tensor::zeros(&xs.shape);
                for (j, &src) in argmax.iter().enumerate() {
                    dx.data[src as usize] += g.data[j];
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::Upsample2 { x } => {
                let xs = &self.values[x.0];
                let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
                let (oh, ow) = (h * 2, w * 2);
                let mut dx = Tensor::zeros(&xs.shape);
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dx.data[ci * h * w + (oy / 2) * w + ox / 2] +=
                                g.data[ci * oh * ow + oy * ow + ox];
                        }
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::ConcatCh { a, b } => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                let na = va.numel();
                let da = Tensor::from_vec(&va.shape, g.data[..na].to_vec());
                let db = Tensor::from_vec(&vb.shape, g.data[na..].to_vec());
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::SliceCh { x, from } => {
                let xs = &self.values[x.0];
                let (h, w) = (xs.shape[1], xs.shape[2]);
                let mut dx = Tensor::zeros(&xs.shape);
                let off = from * h * w;
                for j in 0..g.numel() {
                    dx.data[off + j] = g.data[j];
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::ScnnPass { x, k, dir, pre } => {
                let xs = &self.values[x.0];
                let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
                let kt = &self.values[k.0];
                let (y_t, slices, len) = to_pass_layout(&self.values[i].data, c, h, w, *dir);
                let (g_t, _, _) = to_pass_layout(&g.data, c, h, w, *dir);
                let mut gy = g_t;
                let mut dk = Tensor::zeros(&kt.shape);
                for s in (1..slices).rev() {
                    // dpre = relu'(pre) * gy[s]
                    let mut dpre = vec![R::ZERO; c * len];
                    for j in 0..c * len {
                        if pre[s * c * len + j] > R::ZERO {
                            dpre[j] = gy[s * c * len + j];
                        }
                    }
                    let prev = &y_t[(s - 1) * c * len..s * c * len];
                    // dK += dpre (x) prev, and gy[s-1] += K^T applied to dpre.
                    slice_conv_backward(
                        prev,
                        &kt.data,
                        &dpre,
                        c,
                        len,
                        &mut dk.data,
                        &mut gy[(s - 1) * c * len..s * c * len],
                    );
                }
                let dx = from_pass_layout(&gy, c, h, w, *dir);
                Self::accumulate(grads, *x, Tensor::from_vec(&xs.shape, dx));
                Self::accumulate(grads, *k, dk);
            }
            Op::BceLogitsSum { x, target } => {
                let v = &self.values[x.0];
                let s = g.item();
                let mut dx = Tensor::zeros(&v.shape);
                for j in 0..v.numel() {
                    dx.data[j] = s * (sigmoid(v.data[j]) - target.data[j]);
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::MaskedSmoothL1Sum { x, target, mask } => {
                let v = &self.values[x.0];
                let s = g.item();
                let mut dx = Tensor::zeros(&v.shape);
                for j in 0..v.numel() {
                    let d = v.data[j] - target.data[j];
                    let slope = if d.abs().to_f64() < 1.0 {
                        d
                    } else if d > R::ZERO {
                        R::ONE
                    } else {
                        -R::ONE
                    };
                    dx.data[j] = s * mask.data[j] * slope;
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::PixelBceLogitsMean {
                x,
                target,
                pos_weight,
            } => {
                let v = &self.values[x.0];
                let s = g.item() / R::from_f64(v.numel() as f64);
                let mut dx = Tensor::zeros(&v.shape);
                for j in 0..v.numel() {
                    let z = v.data[j];
                    let y = target.data[j];
                    dx.data[j] =
                        s * (-(*pos_weight) * y * sigmoid(-z) + (R::ONE - y) * sigmoid(z));
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::WeightedSum { terms } => {
                let s = g.item();
                for &(v, w) in terms {
                    Self::accumulate(grads, v, Tensor::scalar(s * w));
                }
            }
        }
    }
}

// --- dense kernels ------------------------------------------------------

fn im2col<R: Real>(
    x: &[R],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<R> {
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;
    let n = oh * ow;
    let mut col = vec![R::ZERO; cin * kh * kw * n];
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[((ci * kh + ky) * kw + kx) * n..((ci * kh + ky) * kw + kx + 1) * n];
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = iy as usize * w;
                    let dst_base = oy * ow;
                    // Valid ox range so that ix = ox + kx - pad stays in [0, w).
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = (w + pad - kx).min(ow);
                    for ox in ox_lo..ox_hi {
                        let ix = ox + kx - pad;
                        row[dst_base + ox] = plane[src_base + ix];
                    }
                }
            }
        }
    }
    col
}

fn col2im<R: Real>(
    col: &[R],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    out: &mut [R],
) {
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;
    let n = oh * ow;
    for ci in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &col[((ci * kh + ky) * kw + kx) * n..((ci * kh + ky) * kw + kx + 1) * n];
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = ci * h * w + iy as usize * w;
                    let src_base = oy * ow;
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = (w + pad - kx).min(ow);
                    for ox in ox_lo..ox_hi {
                        let ix = ox + kx - pad;
                        out[dst_base + ix] += row[src_base + ox];
                    }
                }
            }
        }
    }
}

/// out[M,N] += a[M,K] * b[K,N]
fn gemm_nn<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av.to_f64() == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[M,K] += a[M,N] * b[K,N]^T
fn gemm_nt<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = R::ZERO;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + kk] += acc;
        }
    }
}

/// out[K,N] += a[M,K]^T * b[M,N]
fn gemm_tn<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av.to_f64() == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Reorders a CHW tensor into pass layout [slices][C][len]: rows of the
/// image for Down (slices scan top to bottom), reversed rows for Up,
/// columns for Right (left to right), reversed columns for Left.
fn to_pass_layout<R: Real>(
    data: &[R],
    c: usize,
    h: usize,
    w: usize,
    dir: ScnnDir,
) -> (Vec<R>, usize, usize) {
    let (slices, len) = match dir {
        ScnnDir::Down | ScnnDir::Up => (h, w),
        ScnnDir::Right | ScnnDir::Left => (w, h),
    };
    let mut out = vec![R::ZERO; c * h * w];
    for s in 0..slices {
        for ci in 0..c {
            for j in 0..len {
                let (row, col) = match dir {
                    ScnnDir::Down => (s, j),
                    ScnnDir::Up => (h - 1 - s, j),
                    ScnnDir::Right => (j, s),
                    ScnnDir::Left => (j, w - 1 - s),
                };
                out[(s * c + ci) * len + j] = data[ci * h * w + row * w + col];
            }
        }
    }
    (out, slices, len)
}

fn from_pass_layout<R: Real>(data: &[R], c: usize, h: usize, w: usize, dir: ScnnDir) -> Vec<R> {
    let (slices, len) = match dir {
        ScnnDir::Down | ScnnDir::Up => (h, w),
        ScnnDir::Right | ScnnDir::Left => (w, h),
    };
    let mut out = vec![R::ZERO; c * h * w];
    for s in 0..slices {
        for ci in 0..c {
            for j in 0..len {
                let (row, col) = match dir {
                    ScnnDir::Down => (s, j),
                    ScnnDir::Up => (h - 1 - s, j),
                    ScnnDir::Right => (j, s),
                    ScnnDir::Left => (j, w - 1 - s),
                };
                out[ci * h * w + row * w + col] = data[(s * c + ci) * len + j];
            }
        }
    }
    out
}

/// pre[c_out, x] = sum_{ci, dx} K[c_out, ci, dx] * prev[ci, x + dx - 2]
fn slice_conv<R: Real>(prev: &[R], k: &[R], c: usize, len: usize, out: &mut [R]) {
    let half = SCNN_KERNEL_W / 2;
    for co in 0..c {
        let out_row = &mut out[co * len..(co + 1) * len];
        for ci in 0..c {
            let prow = &prev[ci * len..(ci + 1) * len];
            let krow = &k[(co * c + ci) * SCNN_KERNEL_W..(co * c + ci + 1) * SCNN_KERNEL_W];
            for (dx, &kv) in krow.iter().enumerate() {
                if kv.to_f64() == 0.0 {
                    continue;
                }
                let shift = dx as isize - half as isize;
                let x_lo = (-shift).max(0) as usize;
                let x_hi = (len as isize - shift).clamp(0, len as isize) as usize;
                for x in x_lo..x_hi {
                    out_row[x] += kv * prow[(x as isize + shift) as usize];
                }
            }
        }
    }
}

/// Accumulates dK += dpre (x) prev and dprev += K^T * dpre.
fn slice_conv_backward<R: Real>(
    prev: &[R],
    k: &[R],
    dpre: &[R],
    c: usize,
    len: usize,
    dk: &mut [R],
    dprev: &mut [R],
) {
    let half = SCNN_KERNEL_W / 2;
    for co in 0..c {
        let drow = &dpre[co * len..(co + 1) * len];
        for ci in 0..c {
            let prow = &prev[ci * len..(ci + 1) * len];
            let krow = &k[(co * c + ci) * SCNN_KERNEL_W..(co * c + ci + 1) * SCNN_KERNEL_W];
            let dkrow = &mut dk[(co * c + ci) * SCNN_KERNEL_W..(co * c + ci + 1) * SCNN_KERNEL_W];
            let dprow = &mut dprev[ci * len..(ci + 1) * len];
            for dx in 0..SCNN_KERNEL_W {
                let shift = dx as isize - half as isize;
                let x_lo = (-shift).max(0) as usize;
                let x_hi = (len as isize - shift).clamp(0, len as isize) as usize;
                let mut acc = R::ZERO;
                let kv = krow[dx];
                for x in x_lo..x_hi {
                    let p = (x as isize + shift) as usize;
                    acc += drow[x] * prow[p];
                    dprow[p] += kv * drow[x];
                }
                dkrow[dx] += acc;
            }
        }
    }
}
