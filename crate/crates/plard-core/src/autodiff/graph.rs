use super::params::ParameterStore;
use super::tensor::{Tensor, TensorError};
use super::LOG_EPS;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weights: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    MulElementwise {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    UpsampleBilinear {
        input: Var,
    },
    SoftmaxChannels {
        input: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    BroadcastSpatial {
        input: Var,
    },
    SumAll {
        input: Var,
    },
    CrossEntropyLog10 {
        pred: Var,
        target: Var,
        mask: Option<Var>,
        /// Number of pixels the mean runs over (precomputed on forward).
        count: f64,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Write-once tape of tensor operations. Nodes are appended by the op
/// methods; `backward` runs the tape in reverse.
pub struct Graph {
    nodes: Vec<Node>,
}

/// Parameter leaves bound into a graph, in store order.
pub struct ParamBinding {
    pub(crate) vars: Vec<Var>,
}

impl ParamBinding {
    pub fn var(&self, store: &ParameterStore, name: &str) -> Result<Var, TensorError> {
        store.index_of(name).map(|i| self.vars[i])
    }
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert a tensor as a leaf (input, constant or parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Bind every store entry as a leaf, in store order.
    pub fn bind_params(&mut self, store: &ParameterStore) -> ParamBinding {
        let vars = store
            .iter()
            .map(|(_, tensor)| self.leaf(tensor.clone()))
            .collect();
        ParamBinding { vars }
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Gradient of the last `backward` target w.r.t. `var`, if it was reached.
    pub fn grad(&self, var: Var) -> Option<Tensor> {
        self.nodes[var.0].grad.as_ref().map(|g| Tensor {
            shape: self.nodes[var.0].value.shape,
            data: g.clone(),
        })
    }

    fn grad_buf(&mut self, var: Var) -> &mut Vec<f64> {
        let numel = self.nodes[var.0].value.numel();
        self.nodes[var.0].grad.get_or_insert_with(|| vec![0.0; numel])
    }

    // ---- ops -------------------------------------------------------------

    /// 2-D cross-correlation with stride, zero padding and dilation.
    pub fn conv2d(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let w = self.value(weights);
        let b = self.value(bias);
        let [bsz, in_ch, in_h, in_w] = x.shape;
        let [out_ch, w_in_ch, k, k2] = w.shape;
        if k != k2 {
            return Err(mismatch("conv2d", format!("non-square kernel {k}x{k2}")));
        }
        if w_in_ch != in_ch {
            return Err(mismatch(
                "conv2d",
                format!("input has {in_ch} channels, kernel expects {w_in_ch}"),
            ));
        }
        if b.shape != [1, out_ch, 1, 1] {
            return Err(mismatch(
                "conv2d",
                format!("bias shape {:?} for {out_ch} output channels", b.shape),
            ));
        }
        if stride == 0 {
            return Err(mismatch("conv2d", "stride must be positive".into()));
        }
        let span = dilation * (k - 1) + 1;
        if in_h + 2 * padding < span || in_w + 2 * padding < span {
            return Err(mismatch(
                "conv2d",
                format!("kernel span {span} exceeds padded input {in_h}x{in_w}+{padding}"),
            ));
        }
        let out_h = (in_h + 2 * padding - span) / stride + 1;
        let out_w = (in_w + 2 * padding - span) / stride + 1;

        let mut out = vec![0.0f64; bsz * out_ch * out_h * out_w];
        let xd = &x.data;
        let wd = &w.data;
        let bd = &b.data;
        if stride == 1 {
            // Row-span formulation: for each kernel tap, accumulate a scaled
            // contiguous input row into the output row. The slice zip lets the
            // compiler drop bounds checks and vectorize.
            for bi in 0..bsz {
                for oc in 0..out_ch {
                    let out_base = ((bi * out_ch + oc) * out_h) * out_w;
                    out[out_base..out_base + out_h * out_w].fill(bd[oc]);
                    for ic in 0..in_ch {
                        let in_base = ((bi * in_ch + ic) * in_h) * in_w;
                        let w_base = ((oc * in_ch + ic) * k) * k;
                        for ky in 0..k {
                            for oy in 0..out_h {
                                let iy = (oy + ky * dilation) as isize - padding as isize;
                                if iy < 0 || iy >= in_h as isize {
                                    continue;
                                }
                                let in_row = in_base + iy as usize * in_w;
                                let out_row = out_base + oy * out_w;
                                for kx in 0..k {
                                    let shift = (kx * dilation) as isize - padding as isize;
                                    let ox0 = (-shift).max(0) as usize;
                                    let ox1 = (in_w as isize - shift).min(out_w as isize) as usize;
                                    if ox0 >= ox1 {
                                        continue;
                                    }
                                    let wv = wd[w_base + ky * k + kx];
                                    let ix0 = (ox0 as isize + shift) as usize;
                                    let len = ox1 - ox0;
                                    let dst = &mut out[out_row + ox0..out_row + ox0 + len];
                                    let src = &xd[in_row + ix0..in_row + ix0 + len];
                                    for (o, i) in dst.iter_mut().zip(src) {
                                        *o += wv * i;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        } else {
            for bi in 0..bsz {
                for oc in 0..out_ch {
                    let out_base = ((bi * out_ch + oc) * out_h) * out_w;
                    for oy in 0..out_h {
                        let row_base = out_base + oy * out_w;
                        for ox in 0..out_w {
                            let mut acc = bd[oc];
                            for ic in 0..in_ch {
                                let in_base = ((bi * in_ch + ic) * in_h) * in_w;
                                let w_base = ((oc * in_ch + ic) * k) * k;
                                for ky in 0..k {
                                    let iy = (oy * stride + ky * dilation) as isize
                                        - padding as isize;
                                    if iy < 0 || iy >= in_h as isize {
                                        continue;
                                    }
                                    let in_row = in_base + iy as usize * in_w;
                                    let w_row = w_base + ky * k;
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx * dilation) as isize
                                            - padding as isize;
                                        if ix < 0 || ix >= in_w as isize {
                                            continue;
                                        }
                                        acc += xd[in_row + ix as usize] * wd[w_row + kx];
                                    }
                                }
                            }
                            out[row_base + ox] = acc;
                        }
                    }
                }
            }
        }
        let value = Tensor {
            shape: [bsz, out_ch, out_h, out_w],
            data: out,
        };
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weights,
                bias,
                stride,
                padding,
                dilation,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = Tensor {
            shape: x.shape,
            data: x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        };
        self.push(value, Op::Relu { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(mismatch("add", format!("{:?} vs {:?}", ta.shape, tb.shape)));
        }
        let value = Tensor {
            shape: ta.shape,
            data: ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect(),
        };
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul_elementwise(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(mismatch("mul", format!("{:?} vs {:?}", ta.shape, tb.shape)));
        }
        let value = Tensor {
            shape: ta.shape,
            data: ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect(),
        };
        Ok(self.push(value, Op::MulElementwise { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let value = Tensor {
            shape: x.shape,
            data: x.data.iter().map(|v| v * factor).collect(),
        };
        self.push(value, Op::Scale { input, factor })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [bsz, ca, h, w] = ta.shape;
        let [bb, cb, hb, wb] = tb.shape;
        if bsz != bb || h != hb || w != wb {
            return Err(mismatch(
                "concat_channels",
                format!("{:?} vs {:?}", ta.shape, tb.shape),
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(bsz * (ca + cb) * plane);
        for bi in 0..bsz {
            data.extend_from_slice(&ta.data[bi * ca * plane..(bi + 1) * ca * plane]);
            data.extend_from_slice(&tb.data[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        let value = Tensor {
            shape: [bsz, ca + cb, h, w],
            data,
        };
        Ok(self.push(value, Op::ConcatChannels { a, b }))
    }

    /// Channel slice `[start, start + len)`.
    pub fn slice_channels(
        &mut self,
        input: Var,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let [bsz, c, h, w] = x.shape;
        if start + len > c {
            return Err(mismatch(
                "slice_channels",
                format!("slice {start}..{} of {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(bsz * len * plane);
        for bi in 0..bsz {
            let base = (bi * c + start) * plane;
            data.extend_from_slice(&x.data[base..base + len * plane]);
        }
        let value = Tensor {
            shape: [bsz, len, h, w],
            data,
        };
        Ok(self.push(value, Op::SliceChannels { input, start }))
    }

    /// 2x2 max pooling with stride 2. Height and width must be even.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let [bsz, c, h, w] = x.shape;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(mismatch("maxpool2", format!("odd spatial dims {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f64; bsz * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for bc in 0..bsz * c {
            let in_base = bc * h * w;
            let out_base = bc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = in_base + (2 * oy) * w + 2 * ox;
                    let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                    let mut best = candidates[0];
                    for &ci in &candidates[1..] {
                        if x.data[ci] > x.data[best] {
                            best = ci;
                        }
                    }
                    let o = out_base + oy * ow + ox;
                    out[o] = x.data[best];
                    argmax[o] = best;
                }
            }
        }
        let value = Tensor {
            shape: [bsz, c, oh, ow],
            data: out,
        };
        Ok(self.push(value, Op::MaxPool2 { input, argmax }))
    }

    /// Bilinear resize to `(out_h, out_w)` with half-pixel centers.
    pub fn upsample_bilinear(
        &mut self,
        input: Var,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let [bsz, c, h, w] = x.shape;
        if out_h == 0 || out_w == 0 {
            return Err(mismatch("upsample_bilinear", "zero output size".into()));
        }
        let mut out = vec![0.0f64; bsz * c * out_h * out_w];
        let ys = resample_axis(h, out_h);
        let xs = resample_axis(w, out_w);
        for bc in 0..bsz * c {
            let in_base = bc * h * w;
            let out_base = bc * out_h * out_w;
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let v00 = x.data[in_base + y0 * w + x0];
                    let v01 = x.data[in_base + y0 * w + x1];
                    let v10 = x.data[in_base + y1 * w + x0];
                    let v11 = x.data[in_base + y1 * w + x1];
                    let top = v00 + (v01 - v00) * wx;
                    let bot = v10 + (v11 - v10) * wx;
                    out[out_base + oy * out_w + ox] = top + (bot - top) * wy;
                }
            }
        }
        let value = Tensor {
            shape: [bsz, c, out_h, out_w],
            data: out,
        };
        Ok(self.push(value, Op::UpsampleBilinear { input }))
    }

    /// Softmax over the channel axis, per pixel.
    pub fn softmax_channels(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let [bsz, c, h, w] = x.shape;
        let plane = h * w;
        let mut out = vec![0.0f64; x.numel()];
        for bi in 0..bsz {
            for p in 0..plane {
                let mut max = f64::NEG_INFINITY;
                for ci in 0..c {
                    max = max.max(x.data[(bi * c + ci) * plane + p]);
                }
                let mut sum = 0.0;
                for ci in 0..c {
                    let e = (x.data[(bi * c + ci) * plane + p] - max).exp();
                    out[(bi * c + ci) * plane + p] = e;
                    sum += e;
                }
                for ci in 0..c {
                    out[(bi * c + ci) * plane + p] /= sum;
                }
            }
        }
        let value = Tensor {
            shape: x.shape,
            data: out,
        };
        self.push(value, Op::SoftmaxChannels { input })
    }

    /// Mean over the spatial axes, output `(B, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let [bsz, c, h, w] = x.shape;
        let plane = (h * w) as f64;
        let mut out = vec![0.0f64; bsz * c];
        for bc in 0..bsz * c {
            out[bc] = x.data[bc * h * w..(bc + 1) * h * w].iter().sum::<f64>() / plane;
        }
        let value = Tensor {
            shape: [bsz, c, 1, 1],
            data: out,
        };
        self.push(value, Op::GlobalAvgPool { input })
    }

    /// Tile a `(B, C, 1, 1)` tensor over `(out_h, out_w)`.
    pub fn broadcast_spatial(
        &mut self,
        input: Var,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let [bsz, c, h, w] = x.shape;
        if h != 1 || w != 1 {
            return Err(mismatch(
                "broadcast_spatial",
                format!("input must be Bx{c}x1x1, got {:?}", x.shape),
            ));
        }
        let plane = out_h * out_w;
        let mut data = Vec::with_capacity(bsz * c * plane);
        for &v in &x.data {
            data.extend(std::iter::repeat(v).take(plane));
        }
        let value = Tensor {
            shape: [bsz, c, out_h, out_w],
            data,
        };
        Ok(self.push(value, Op::BroadcastSpatial { input }))
    }

    /// Sum of all elements, scalar output.
    pub fn sum_all(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data.iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll { input })
    }

    /// Multinomial cross-entropy in base-10 log, meaned over unmasked pixels.
    ///
    /// `pred` must hold post-softmax probabilities and `target` a one-hot
    /// encoding of the same shape. `mask`, when given, is `(B, 1, H, W)` with
    /// 1 marking pixels that count.
    pub fn cross_entropy_log10(
        &mut self,
        pred: Var,
        target: Var,
        mask: Option<Var>,
    ) -> Result<Var, TensorError> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape != t.shape {
            return Err(mismatch(
                "cross_entropy_log10",
                format!("pred {:?} vs target {:?}", p.shape, t.shape),
            ));
        }
        let [bsz, c, h, w] = p.shape;
        let plane = h * w;
        if let Some(m) = mask {
            let ms = self.value(m).shape;
            if ms != [bsz, 1, h, w] {
                return Err(mismatch(
                    "cross_entropy_log10",
                    format!("mask {:?} for pred {:?}", ms, p.shape),
                ));
            }
        }
        let p = self.value(pred);
        let t = self.value(target);
        let mask_data = mask.map(|m| &self.nodes[m.0].value.data);
        let ln10 = std::f64::consts::LN_10;

        let mut count = 0.0f64;
        let mut total = 0.0f64;
        for bi in 0..bsz {
            for pix in 0..plane {
                let weight = match mask_data {
                    Some(md) => md[bi * plane + pix],
                    None => 1.0,
                };
                if weight == 0.0 {
                    continue;
                }
                count += 1.0;
                let mut pixel_loss = 0.0;
                for ci in 0..c {
                    let idx = (bi * c + ci) * plane + pix;
                    let y = t.data[idx];
                    if y != 0.0 {
                        pixel_loss -= y * (p.data[idx] + LOG_EPS).ln() / ln10;
                    }
                }
                total += pixel_loss;
            }
        }
        let loss = if count > 0.0 { total / count } else { 0.0 };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyLog10 {
                pred,
                target,
                mask,
                count,
            },
        ))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse pass from a scalar output. Gradients accumulate on every node
    /// reachable from `output`; leaves keep theirs until the graph is dropped.
    pub fn backward(&mut self, output: Var) {
        assert!(
            self.nodes[output.0].value.is_scalar(),
            "backward target must be scalar"
        );
        self.grad_buf(output)[0] = 1.0;

        for id in (0..=output.0).rev() {
            if self.nodes[id].grad.is_none() {
                continue;
            }
            // Take the node's grad to appease the borrow checker while
            // scattering into parents.
            let grad = self.nodes[id].grad.take().unwrap();
            self.scatter(id, &grad);
            self.nodes[id].grad = Some(grad);
        }
    }

    fn scatter(&mut self, id: usize, g: &[f64]) {
        // Split borrows: the op description is read-only, parents get grads.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weights,
                bias,
                stride,
                padding,
                dilation,
            } => {
                self.conv2d_backward(g, *input, *weights, *bias, *stride, *padding, *dilation);
            }
            Op::Relu { input } => {
                let data: Vec<f64> = self.nodes[id]
                    .value
                    .data
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| if y > 0.0 { gi } else { 0.0 })
                    .collect();
                let buf = self.grad_buf(*input);
                for (d, s) in buf.iter_mut().zip(&data) {
                    *d += s;
                }
            }
            Op::Add { a, b } => {
                for var in [a, b] {
                    let buf = self.grad_buf(*var);
                    for (d, s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::MulElementwise { a, b } => {
                let a_data = self.nodes[a.0].value.data.clone();
                let b_data = self.nodes[b.0].value.data.clone();
                {
                    let buf = self.grad_buf(*a);
                    for ((d, s), bv) in buf.iter_mut().zip(g).zip(&b_data) {
                        *d += s * bv;
                    }
                }
                {
                    let buf = self.grad_buf(*b);
                    for ((d, s), av) in buf.iter_mut().zip(g).zip(&a_data) {
                        *d += s * av;
                    }
                }
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                let buf = self.grad_buf(*input);
                for (d, s) in buf.iter_mut().zip(g) {
                    *d += s * f;
                }
            }
            Op::ConcatChannels { a, b } => {
                let [bsz, ca, h, w] = self.nodes[a.0].value.shape;
                let cb = self.nodes[b.0].value.shape[1];
                let plane = h * w;
                {
                    let buf = self.grad_buf(*a);
                    for bi in 0..bsz {
                        let src = bi * (ca + cb) * plane;
                        let dst = bi * ca * plane;
                        for i in 0..ca * plane {
                            buf[dst + i] += g[src + i];
                        }
                    }
                }
                {
                    let buf = self.grad_buf(*b);
                    for bi in 0..bsz {
                        let src = bi * (ca + cb) * plane + ca * plane;
                        let dst = bi * cb * plane;
                        for i in 0..cb * plane {
                            buf[dst + i] += g[src + i];
                        }
                    }
                }
            }
            Op::SliceChannels { input, start } => {
                let [bsz, c, h, w] = self.nodes[input.0].value.shape;
                let len = self.nodes[id].value.shape[1];
                let plane = h * w;
                let buf = self.grad_buf(*input);
                for bi in 0..bsz {
                    let dst = (bi * c + start) * plane;
                    let src = bi * len * plane;
                    for i in 0..len * plane {
                        buf[dst + i] += g[src + i];
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let buf = self.grad_buf(*input);
                for (o, &src) in argmax.iter().enumerate() {
                    buf[src] += g[o];
                }
            }
            Op::UpsampleBilinear { input } => {
                let [bsz, c, h, w] = self.nodes[input.0].value.shape;
                let [_, _, out_h, out_w] = self.nodes[id].value.shape;
                let ys = resample_axis(h, out_h);
                let xs = resample_axis(w, out_w);
                let buf = self.grad_buf(*input);
                for bc in 0..bsz * c {
                    let in_base = bc * h * w;
                    let out_base = bc * out_h * out_w;
                    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                            let gi = g[out_base + oy * out_w + ox];
                            buf[in_base + y0 * w + x0] += gi * (1.0 - wy) * (1.0 - wx);
                            buf[in_base + y0 * w + x1] += gi * (1.0 - wy) * wx;
                            buf[in_base + y1 * w + x0] += gi * wy * (1.0 - wx);
                            buf[in_base + y1 * w + x1] += gi * wy * wx;
                        }
                    }
                }
            }
            Op::SoftmaxChannels { input } => {
                let y = self.nodes[id].value.data.clone();
                let [bsz, c, h, w] = self.nodes[id].value.shape;
                let plane = h * w;
                let buf = self.grad_buf(*input);
                for bi in 0..bsz {
                    for pix in 0..plane {
                        let mut dot = 0.0;
                        for ci in 0..c {
                            let idx = (bi * c + ci) * plane + pix;
                            dot += g[idx] * y[idx];
                        }
                        for ci in 0..c {
                            let idx = (bi * c + ci) * plane + pix;
                            buf[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
            Op::GlobalAvgPool { input } => {
                let [bsz, c, h, w] = self.nodes[input.0].value.shape;
                let inv = 1.0 / (h * w) as f64;
                let buf = self.grad_buf(*input);
                for bc in 0..bsz * c {
                    let gi = g[bc] * inv;
                    for v in &mut buf[bc * h * w..(bc + 1) * h * w] {
                        *v += gi;
                    }
                }
            }
            Op::BroadcastSpatial { input } => {
                let [_, _, out_h, out_w] = self.nodes[id].value.shape;
                let plane = out_h * out_w;
                let buf = self.grad_buf(*input);
                for (bc, v) in buf.iter_mut().enumerate() {
                    *v += g[bc * plane..(bc + 1) * plane].iter().sum::<f64>();
                }
            }
            Op::SumAll { input } => {
                let gi = g[0];
                let buf = self.grad_buf(*input);
                for v in buf.iter_mut() {
                    *v += gi;
                }
            }
            Op::CrossEntropyLog10 {
                pred,
                target,
                mask,
                count,
            } => {
                if *count > 0.0 {
                    let gi = g[0];
                    let [bsz, c, h, w] = self.nodes[pred.0].value.shape;
                    let plane = h * w;
                    let p = self.nodes[pred.0].value.data.clone();
                    let t = self.nodes[target.0].value.data.clone();
                    let mask_data = mask.map(|m| self.nodes[m.0].value.data.clone());
                    let scale = gi / (count * std::f64::consts::LN_10);
                    let buf = self.grad_buf(*pred);
                    for bi in 0..bsz {
                        for pix in 0..plane {
                            let weight = match &mask_data {
                                Some(md) => md[bi * plane + pix],
                                None => 1.0,
                            };
                            if weight == 0.0 {
                                continue;
                            }
                            for ci in 0..c {
                                let idx = (bi * c + ci) * plane + pix;
                                if t[idx] != 0.0 {
                                    buf[idx] -= scale * t[idx] / (p[idx] + LOG_EPS);
                                }
                            }
                        }
                    }
                }
            }
        }
        self.nodes[id].op = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &mut self,
        g: &[f64],
        input: Var,
        weights: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) {
        let [bsz, in_ch, in_h, in_w] = self.nodes[input.0].value.shape;
        let [out_ch, _, k, _] = self.nodes[weights.0].value.shape;
        let span = dilation * (k - 1) + 1;
        let out_h = (in_h + 2 * padding - span) / stride + 1;
        let out_w = (in_w + 2 * padding - span) / stride + 1;

        let x = self.nodes[input.0].value.data.clone();
        let w = self.nodes[weights.0].value.data.clone();

        let mut gx = vec![0.0f64; x.len()];
        let mut gw = vec![0.0f64; w.len()];
        let mut gb = vec![0.0f64; out_ch];

        if stride == 1 {
            for bi in 0..bsz {
                for oc in 0..out_ch {
                    let out_base = ((bi * out_ch + oc) * out_h) * out_w;
                    gb[oc] += g[out_base..out_base + out_h * out_w].iter().sum::<f64>();
                    for ic in 0..in_ch {
                        let in_base = ((bi * in_ch + ic) * in_h) * in_w;
                        let w_base = ((oc * in_ch + ic) * k) * k;
                        for ky in 0..k {
                            for oy in 0..out_h {
                                let iy = (oy + ky * dilation) as isize - padding as isize;
                                if iy < 0 || iy >= in_h as isize {
                                    continue;
                                }
                                let in_row = in_base + iy as usize * in_w;
                                let out_row = out_base + oy * out_w;
                                for kx in 0..k {
                                    let shift = (kx * dilation) as isize - padding as isize;
                                    let ox0 = (-shift).max(0) as usize;
                                    let ox1 = (in_w as isize - shift).min(out_w as isize) as usize;
                                    if ox0 >= ox1 {
                                        continue;
                                    }
                                    let ix0 = (ox0 as isize + shift) as usize;
                                    let len = ox1 - ox0;
                                    let wv = w[w_base + ky * k + kx];
                                    let g_row = &g[out_row + ox0..out_row + ox0 + len];
                                    let x_row = &x[in_row + ix0..in_row + ix0 + len];
                                    let gx_row = &mut gx[in_row + ix0..in_row + ix0 + len];
                                    let mut dot = 0.0;
                                    for ((gi, xi), gxi) in
                                        g_row.iter().zip(x_row).zip(gx_row.iter_mut())
                                    {
                                        dot += gi * xi;
                                        *gxi += wv * gi;
                                    }
                                    gw[w_base + ky * k + kx] += dot;
                                }
                            }
                        }
                    }
                }
            }
        } else {
            for bi in 0..bsz {
                for oc in 0..out_ch {
                    let out_base = ((bi * out_ch + oc) * out_h) * out_w;
                    for oy in 0..out_h {
                        for ox in 0..out_w {
                            let go = g[out_base + oy * out_w + ox];
                            if go == 0.0 {
                                continue;
                            }
                            gb[oc] += go;
                            for ic in 0..in_ch {
                                let in_base = ((bi * in_ch + ic) * in_h) * in_w;
                                let w_base = ((oc * in_ch + ic) * k) * k;
                                for ky in 0..k {
                                    let iy =
                                        (oy * stride + ky * dilation) as isize - padding as isize;
                                    if iy < 0 || iy >= in_h as isize {
                                        continue;
                                    }
                                    let in_row = in_base + iy as usize * in_w;
                                    let w_row = w_base + ky * k;
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx * dilation) as isize
                                            - padding as isize;
                                        if ix < 0 || ix >= in_w as isize {
                                            continue;
                                        }
                                        gx[in_row + ix as usize] += go * w[w_row + kx];
                                        gw[w_row + kx] += go * x[in_row + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        {
            let buf = self.grad_buf(input);
            for (d, s) in buf.iter_mut().zip(&gx) {
                *d += s;
            }
        }
        {
            let buf = self.grad_buf(weights);
            for (d, s) in buf.iter_mut().zip(&gw) {
                *d += s;
            }
        }
        {
            let buf = self.grad_buf(bias);
            for (d, s) in buf.iter_mut().zip(&gb) {
                *d += s;
            }
        }
    }

    /// Accumulate gradients of bound parameter leaves back into the store.
    pub fn extract_grads(&self, binding: &ParamBinding, store: &mut ParameterStore) {
        for (i, var) in binding.vars.iter().enumerate() {
            if let Some(g) = &self.nodes[var.0].grad {
                store.accumulate_grad_by_index(i, g);
            }
        }
    }
}

/// Per-output-coordinate source pair and lerp weight for bilinear resampling
/// with half-pixel centers and edge clamping.
fn resample_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
            if src <= 0.0 {
                (0, 0, 0.0)
            } else {
                let i0 = src.floor() as usize;
                if i0 + 1 >= in_len {
                    (in_len - 1, in_len - 1, 0.0)
                } else {
                    (i0, i0 + 1, src - i0 as f64)
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_kernel_scales_input() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled([1, 1, 3, 3], 1.0));
        let w = g.leaf(Tensor::from_vec([1, 1, 1, 1], vec![2.0]).unwrap());
        let b = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        let y = g.conv2d(x, w, b, 1, 0, 1).unwrap();
        assert_eq!(g.value(y).shape, [1, 1, 3, 3]);
        assert!(g.value(y).data.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn identity_kernel_with_same_padding_preserves_input() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..25).map(|i| i as f64 * 0.3 - 2.0).collect();
        let x = g.leaf(Tensor::from_vec([1, 1, 5, 5], data.clone()).unwrap());
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0;
        let w = g.leaf(Tensor::from_vec([1, 1, 3, 3], kernel).unwrap());
        let b = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        let y = g.conv2d(x, w, b, 1, 1, 1).unwrap();
        assert_eq!(g.value(y).data, data);
    }

    /// Naive six-loop oracle over explicit padded coordinates.
    fn conv_oracle(
        x: &Tensor,
        w: &Tensor,
        b: &[f64],
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Tensor {
        let [bsz, in_ch, in_h, in_w] = x.shape;
        let [out_ch, _, k, _] = w.shape;
        let span = dilation * (k - 1) + 1;
        let out_h = (in_h + 2 * padding - span) / stride + 1;
        let out_w = (in_w + 2 * padding - span) / stride + 1;
        let mut out = Tensor::zeros([bsz, out_ch, out_h, out_w]);
        for bi in 0..bsz {
            for oc in 0..out_ch {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = b[oc];
                        for ic in 0..in_ch {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as isize * stride as isize
                                        + ky as isize * dilation as isize
                                        - padding as isize;
                                    let ix = ox as isize * stride as isize
                                        + kx as isize * dilation as isize
                                        - padding as isize;
                                    if iy >= 0
                                        && iy < in_h as isize
                                        && ix >= 0
                                        && ix < in_w as isize
                                    {
                                        acc += x.at(bi, ic, iy as usize, ix as usize)
                                            * w.at(oc, ic, ky, kx);
                                    }
                                }
                            }
                        }
                        *out.at_mut(bi, oc, oy, ox) = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for &(stride, padding, dilation) in &[(1, 1, 1), (1, 0, 1), (2, 1, 1), (1, 2, 2)] {
            let x = Tensor::from_vec(
                [2, 3, 5, 5],
                (0..150).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let w = Tensor::from_vec(
                [4, 3, 3, 3],
                (0..108).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let bv = g.leaf(Tensor::from_vec([1, 4, 1, 1], b.clone()).unwrap());
            let y = g.conv2d(xv, wv, bv, stride, padding, dilation).unwrap();
            let oracle = conv_oracle(&x, &w, &b, stride, padding, dilation);
            assert_eq!(g.value(y).shape, oracle.shape);
            for (a, e) in g.value(y).data.iter().zip(&oracle.data) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros([1, 2, 4, 4]));
        let w = g.leaf(Tensor::zeros([1, 3, 3, 3]));
        let b = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        assert!(matches!(
            g.conv2d(x, w, b, 1, 1, 1),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let x = g.leaf(Tensor::from_vec([1, 3, 2, 2], data.clone()).unwrap());
        let ones = g.leaf(Tensor::filled([1, 3, 2, 2], 1.0));
        let y = g.mul_elementwise(x, ones).unwrap();
        assert_eq!(g.value(y).data, data);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros([1, 2, 3, 3]));
        let y = g.softmax_channels(x);
        assert!(g.value(y).data.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn softmax_sums_to_one_and_stays_in_open_interval() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::from_vec(
                [2, 4, 3, 5],
                (0..120).map(|_| rng.gen_range(-8.0..8.0)).collect(),
            )
            .unwrap(),
        );
        let y = g.softmax_channels(x);
        let t = g.value(y);
        for bi in 0..2 {
            for p in 0..15 {
                let sum: f64 = (0..4).map(|c| t.data[(bi * 4 + c) * 15 + p]).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!(t.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn upsampling_a_constant_map_is_constant() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled([1, 2, 3, 4], 0.7));
        let y = g.upsample_bilinear(x, 6, 8).unwrap();
        assert!(g.value(y).data.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let a = Tensor::from_vec([2, 3, 2, 2], (0..24).map(|_| rng.gen()).collect()).unwrap();
        let b = Tensor::from_vec([2, 2, 2, 2], (0..16).map(|_| rng.gen()).collect()).unwrap();
        let mut g = Graph::new();
        let av = g.leaf(a.clone());
        let bv = g.leaf(b.clone());
        let cat = g.concat_channels(av, bv).unwrap();
        let sa = g.slice_channels(cat, 0, 3).unwrap();
        let sb = g.slice_channels(cat, 3, 2).unwrap();
        assert_eq!(g.value(sa).data, a.data);
        assert_eq!(g.value(sb).data, b.data);
    }

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::from_vec([1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap(),
        );
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).data, vec![4.0]);
        let s = g.sum_all(y);
        g.backward(s);
        assert_eq!(g.grad(x).unwrap().data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let mut g = Graph::new();
        // prob 1 on the true class at every pixel
        let pred = g.leaf(
            Tensor::from_vec([1, 2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let target = g.leaf(
            Tensor::from_vec([1, 2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let loss = g.cross_entropy_log10(pred, target, None).unwrap();
        assert!(g.value(loss).item().abs() < 1e-11);
    }

    #[test]
    fn uniform_prediction_loss_is_log10_half() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros([1, 2, 4, 4]));
        let pred = g.softmax_channels(logits);
        let mut t = Tensor::zeros([1, 2, 4, 4]);
        for p in 0..16 {
            t.data[p] = 1.0; // class 0 everywhere
        }
        let target = g.leaf(t);
        let loss = g.cross_entropy_log10(pred, target, None).unwrap();
        let expected = -(0.5f64.log10());
        assert!((g.value(loss).item() - expected).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_matches_scalar_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut g = Graph::new();
        let logits = g.leaf(
            Tensor::from_vec(
                [4, 2, 3, 3],
                (0..72).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap(),
        );
        let pred = g.softmax_channels(logits);
        let mut t = Tensor::zeros([4, 2, 3, 3]);
        for bi in 0..4 {
            for p in 0..9 {
                let c = rng.gen_range(0..2usize);
                t.data[(bi * 2 + c) * 9 + p] = 1.0;
            }
        }
        let target = g.leaf(t.clone());
        let loss = g.cross_entropy_log10(pred, target, None).unwrap();

        let pv = g.value(pred).clone();
        let mut expected = 0.0;
        for bi in 0..4 {
            for p in 0..9 {
                for c in 0..2 {
                    let idx = (bi * 2 + c) * 9 + p;
                    expected -= t.data[idx] * (pv.data[idx] + 1e-12).log10();
                }
            }
        }
        expected /= 36.0;
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn masked_pixels_are_excluded_from_the_mean() {
        let mut g = Graph::new();
        let pred = g.leaf(
            Tensor::from_vec([1, 2, 1, 2], vec![1.0, 0.5, 0.0, 0.5]).unwrap(),
        );
        let target = g.leaf(
            Tensor::from_vec([1, 2, 1, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap(),
        );
        let mask = g.leaf(Tensor::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
        let loss = g.cross_entropy_log10(pred, target, Some(mask)).unwrap();
        // only the second pixel counts: -log10(0.5)
        assert!((g.value(loss).item() - 0.5f64.log10().abs()).abs() < 1e-10);
    }

    #[test]
    fn forward_and_backward_are_bit_deterministic() {
        use rand::{Rng, SeedableRng};
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
            let mut g = Graph::new();
            let x = g.leaf(
                Tensor::from_vec(
                    [1, 3, 8, 8],
                    (0..192).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap(),
            );
            let w = g.leaf(
                Tensor::from_vec(
                    [2, 3, 3, 3],
                    (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap(),
            );
            let b = g.leaf(Tensor::zeros([1, 2, 1, 1]));
            let c = g.conv2d(x, w, b, 1, 1, 1).unwrap();
            let r = g.relu(c);
            let p = g.maxpool2(r).unwrap();
            let s = g.softmax_channels(p);
            let total = g.sum_all(s);
            g.backward(total);
            (
                g.value(total).item().to_bits(),
                g.grad(w).unwrap().data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
