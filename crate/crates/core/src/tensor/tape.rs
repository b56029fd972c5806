use std::rc::Rc;

use super::kernels::{self, ConvGeom, Padding};
use super::{Element, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// A value flowing through a [`Tape`].
///
/// Values that do not depend on any gradient-requiring leaf carry no node id
/// and are freed as soon as the last `Var` referencing them is dropped.
#[derive(Clone, Debug)]
pub struct Var<F: Element> {
    id: Option<NodeId>,
    value: Rc<Tensor<F>>,
}

impl<F: Element> Var<F> {
    pub fn constant(t: Tensor<F>) -> Self {
        Self {
            id: None,
            value: Rc::new(t),
        }
    }

    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn id(&self) -> Option<NodeId> {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub dilation: usize,
    pub padding: Padding,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            dilation: 1,
            padding: Padding::Same,
        }
    }
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

type Dims = (usize, usize, usize);

enum Op<F: Element> {
    Leaf,
    Conv {
        x: Option<NodeId>,
        x_val: Option<Rc<Tensor<F>>>,
        w: Option<NodeId>,
        w_val: Option<Rc<Tensor<F>>>,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    MaxPool {
        x: NodeId,
        arg: Vec<u32>,
        dims: Dims,
        window: usize,
    },
    AvgPool {
        x: NodeId,
        dims: Dims,
        window: usize,
        stride: usize,
    },
    Upsample {
        x: NodeId,
        dims: Dims,
        factor: usize,
    },
    BatchNorm {
        x: Option<NodeId>,
        gamma: Option<NodeId>,
        beta: Option<NodeId>,
        xhat: Vec<F>,
        gamma_val: Vec<F>,
        inv_std: Vec<F>,
        batch_stats: bool,
        channels: usize,
    },
    CropConcat {
        enc: Option<NodeId>,
        dec: Option<NodeId>,
        enc_dims: Dims,
        dec_dims: Dims,
    },
    Relu {
        x: NodeId,
        out: Rc<Tensor<F>>,
    },
    Tanh {
        x: NodeId,
        out: Rc<Tensor<F>>,
    },
    Softmax {
        x: NodeId,
        out: Rc<Tensor<F>>,
    },
    PadEnd {
        x: NodeId,
        dims: Dims,
        target: usize,
    },
    /// Scalar loss whose gradient w.r.t. `x` was computed in the forward pass.
    Loss {
        x: NodeId,
        grad: Vec<F>,
    },
}

struct Node<F: Element> {
    op: Op<F>,
    len: usize,
    shape: Vec<usize>,
}

/// Reverse-mode gradient tape.
///
/// A tape belongs to a single computation graph on a single thread.
pub struct Tape<F: Element> {
    nodes: Vec<Node<F>>,
    recording: bool,
}

impl<F: Element> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every gradient-requiring leaf, indexed by node id.
pub struct Gradients<F: Element> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Element> Gradients<F> {
    pub fn get(&self, v: &Var<F>) -> Option<Tensor<F>> {
        let id = v.id?;
        let g = self.grads.get(id)?.as_ref()?;
        Tensor::new(self.shapes[id].clone(), g.clone()).ok()
    }

    /// Gradient of `v`, or zeros when nothing downstream depended on it.
    pub fn get_or_zeros(&self, v: &Var<F>) -> Tensor<F> {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()))
    }
}

fn accumulate<F: Element>(slot: &mut Option<Vec<F>>, g: Vec<F>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that never records; every op runs as a plain forward pass.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var<F> {
        if !(requires_grad && self.recording) {
            return Var::constant(t);
        }
        self.push(Op::Leaf, t)
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> Var<F> {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            len: value.len(),
            shape: value.shape().to_vec(),
        });
        Var {
            id: Some(id),
            value: Rc::new(value),
        }
    }

    fn emit(&mut self, inputs: &[Option<NodeId>], value: Tensor<F>, op: impl FnOnce() -> Op<F>) -> Var<F> {
        if self.recording && inputs.iter().any(Option::is_some) {
            self.push(op(), value)
        } else {
            Var::constant(value)
        }
    }

    pub fn conv1d(&mut self, x: &Var<F>, w: &Var<F>, b: Option<&Var<F>>, spec: ConvSpec) -> Result<Var<F>> {
        let (batch, len, cin) = x.value().dims3()?;
        let [width, wcin, cout] = *w.shape() else {
            return Err(Error::Dimension(format!(
                "kernel must be [width, in, out], got {:?}",
                w.shape()
            )));
        };
        if wcin != cin {
            return Err(Error::Dimension(format!(
                "input has {cin} channels but the kernel expects {wcin}"
            )));
        }
        if let Some(b) = b {
            if b.shape() != [cout] {
                return Err(Error::Dimension(format!(
                    "bias shape {:?} does not match {cout} filters",
                    b.shape()
                )));
            }
        }
        let geom = ConvGeom::new(batch, len, cin, cout, width, spec.dilation, spec.padding)?;
        let out = kernels::conv1d_forward(
            x.value().data(),
            w.value().data(),
            b.map(|b| b.value().data()),
            &geom,
        );
        let value = Tensor::new([batch, geom.out_len, cout], out)?;
        let (xid, wid, bid) = (x.id, w.id, b.and_then(|b| b.id));
        Ok(self.emit(&[xid, wid, bid], value, || Op::Conv {
            x: xid,
            x_val: wid.map(|_| x.value.clone()),
            w: wid,
            w_val: xid.map(|_| w.value.clone()),
            b: bid,
            geom,
        }))
    }

    pub fn max_pool1d(&mut self, x: &Var<F>, window: usize) -> Result<Var<F>> {
        let dims = x.value().dims3()?;
        if window == 0 {
            return Err(Error::Parameter("pooling window must be positive".into()));
        }
        if dims.1 < window {
            return Err(Error::InsufficientLength {
                len: dims.1,
                min: window,
            });
        }
        let (out, arg) = kernels::max_pool_forward(x.value().data(), dims, window);
        let value = Tensor::new([dims.0, dims.1 / window, dims.2], out)?;
        let xid = x.id;
        Ok(self.emit(&[xid], value, || Op::MaxPool {
            x: xid.unwrap(),
            arg,
            dims,
            window,
        }))
    }

    pub fn avg_pool1d(&mut self, x: &Var<F>, window: usize, stride: usize) -> Result<Var<F>> {
        let dims = x.value().dims3()?;
        if window == 0 || stride == 0 {
            return Err(Error::Parameter(format!(
                "pooling window ({window}) and stride ({stride}) must be positive"
            )));
        }
        if dims.1 < window {
            return Err(Error::InsufficientLength {
                len: dims.1,
                min: window,
            });
        }
        let out = kernels::avg_pool_forward(x.value().data(), dims, window, stride);
        let out_len = kernels::avg_pool_out_len(dims.1, window, stride);
        let value = Tensor::new([dims.0, out_len, dims.2], out)?;
        let xid = x.id;
        Ok(self.emit(&[xid], value, || Op::AvgPool {
            x: xid.unwrap(),
            dims,
            window,
            stride,
        }))
    }

    pub fn upsample_nearest(&mut self, x: &Var<F>, factor: usize) -> Result<Var<F>> {
        let dims = x.value().dims3()?;
        if factor == 0 {
            return Err(Error::Parameter("upsampling factor must be >= 1".into()));
        }
        let out = kernels::upsample_forward(x.value().data(), dims, factor);
        let value = Tensor::new([dims.0, dims.1 * factor, dims.2], out)?;
        let xid = x.id;
        Ok(self.emit(&[xid], value, || Op::Upsample {
            x: xid.unwrap(),
            dims,
            factor,
        }))
    }

    /// Batch normalization over `batch x length` per channel.
    ///
    /// With `running = None` the batch statistics are used and returned so
    /// the caller can fold them into its running averages; otherwise the
    /// supplied `(mean, var)` are applied as a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: &Var<F>,
        gamma: &Var<F>,
        beta: &Var<F>,
        running: Option<(&[F], &[F])>,
        epsilon: F,
    ) -> Result<(Var<F>, Option<BatchNormStats<F>>)> {
        let (_, _, c) = x.value().dims3()?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::Dimension(format!(
                "batch norm over {c} channels got gamma {:?} and beta {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let xs = x.value().data();
        let (mean, var, stats) = match running {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::Dimension(format!(
                        "running statistics of length {} / {} for {c} channels",
                        m.len(),
                        v.len()
                    )));
                }
                (m.to_vec(), v.to_vec(), None)
            }
            None => {
                let (m, v) = kernels::channel_moments(xs, c);
                (
                    m.clone(),
                    v.clone(),
                    Some(BatchNormStats { mean: m, var: v }),
                )
            }
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + epsilon).sqrt()).collect();
        let (xid, gid, bid) = (x.id, gamma.id, beta.id);
        let tracked = self.recording && (xid.is_some() || gid.is_some() || bid.is_some());
        let (y, xhat) = kernels::batch_norm_apply(
            xs,
            c,
            &mean,
            &inv_std,
            gamma.value().data(),
            beta.value().data(),
            tracked,
        );
        let value = Tensor::new(x.shape().to_vec(), y)?;
        let batch_stats = stats.is_some();
        let out = self.emit(&[xid, gid, bid], value, || Op::BatchNorm {
            x: xid,
            gamma: gid,
            beta: bid,
            xhat: xhat.unwrap_or_default(),
            gamma_val: gamma.value().data().to_vec(),
            inv_std,
            batch_stats,
            channels: c,
        });
        Ok((out, stats))
    }

    /// Center-crops `enc` to the length of `dec` (the odd sample is removed on
    /// the right) and concatenates it after `dec` along channels.
    pub fn crop_concat(&mut self, enc: &Var<F>, dec: &Var<F>) -> Result<Var<F>> {
        let enc_dims = enc.value().dims3()?;
        let dec_dims = dec.value().dims3()?;
        if enc_dims.0 != dec_dims.0 {
            return Err(Error::Dimension(format!(
                "batch sizes differ: {} vs {}",
                enc_dims.0, dec_dims.0
            )));
        }
        if enc_dims.1 < dec_dims.1 {
            return Err(Error::Alignment(format!(
                "encoder map of length {} is shorter than decoder map of length {}",
                enc_dims.1, dec_dims.1
            )));
        }
        let out = kernels::crop_concat_forward(
            enc.value().data(),
            enc_dims,
            dec.value().data(),
            (dec_dims.1, dec_dims.2),
        );
        let value = Tensor::new([dec_dims.0, dec_dims.1, dec_dims.2 + enc_dims.2], out)?;
        let (eid, did) = (enc.id, dec.id);
        Ok(self.emit(&[eid, did], value, || Op::CropConcat {
            enc: eid,
            dec: did,
            enc_dims,
            dec_dims,
        }))
    }

    pub fn relu(&mut self, x: &Var<F>) -> Var<F> {
        let value = x.value().map(|v| if v > F::zero() { v } else { F::zero() });
        let xid = x.id.filter(|_| self.recording);
        if let Some(xid) = xid {
            let out = Rc::new(value);
            self.record_with_value(Op::Relu { x: xid, out: out.clone() }, out)
        } else {
            Var::constant(value)
        }
    }

    pub fn tanh(&mut self, x: &Var<F>) -> Var<F> {
        let value = x.value().map(|v| v.tanh());
        let xid = x.id.filter(|_| self.recording);
        if let Some(xid) = xid {
            let out = Rc::new(value);
            self.record_with_value(Op::Tanh { x: xid, out: out.clone() }, out)
        } else {
            Var::constant(value)
        }
    }

    /// Softmax over the trailing (class) axis with max subtraction.
    pub fn softmax(&mut self, x: &Var<F>) -> Result<Var<F>> {
        let value = softmax_rows(x.value())?;
        let xid = x.id.filter(|_| self.recording);
        Ok(if let Some(xid) = xid {
            let out = Rc::new(value);
            self.record_with_value(Op::Softmax { x: xid, out: out.clone() }, out)
        } else {
            Var::constant(value)
        })
    }

    fn record_with_value(&mut self, op: Op<F>, value: Rc<Tensor<F>>) -> Var<F> {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            len: value.len(),
            shape: value.shape().to_vec(),
        });
        Var {
            id: Some(id),
            value,
        }
    }

    /// Appends zeros along the length axis up to `target` samples.
    pub fn zero_pad_end(&mut self, x: &Var<F>, target: usize) -> Result<Var<F>> {
        let dims = x.value().dims3()?;
        let (b, l, c) = dims;
        if target < l {
            return Err(Error::Parameter(format!(
                "padding target {target} is shorter than the input length {l}"
            )));
        }
        let mut out = vec![F::zero(); b * target * c];
        for bi in 0..b {
            out[bi * target * c..(bi * target + l) * c]
                .copy_from_slice(&x.value().data()[bi * l * c..(bi + 1) * l * c]);
        }
        let value = Tensor::new([b, target, c], out)?;
        let xid = x.id;
        Ok(self.emit(&[xid], value, || Op::PadEnd {
            x: xid.unwrap(),
            dims,
            target,
        }))
    }

    /// Records a scalar loss `value` of `x` whose gradient is already known.
    pub fn loss(&mut self, x: &Var<F>, value: F, grad: Vec<F>) -> Result<Var<F>> {
        if grad.len() != x.value().len() {
            return Err(Error::Dimension("loss gradient length mismatch".into()));
        }
        let xid = x.id;
        Ok(self.emit(&[xid], Tensor::scalar(value), || Op::Loss {
            x: xid.unwrap(),
            grad,
        }))
    }

    /// Backpropagates from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: &Var<F>) -> Result<Gradients<F>> {
        let root_id = root
            .id
            .ok_or_else(|| Error::Parameter("backward root does not depend on any trainable input".into()))?;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        grads[root_id] = Some(vec![F::one(); self.nodes[root_id].len]);

        for id in (0..=root_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => leaf_grads[id] = Some(g),
                Op::Conv {
                    x,
                    x_val,
                    w,
                    w_val,
                    b,
                    geom,
                } => {
                    if let (Some(x), Some(wv)) = (x, w_val) {
                        let dx = kernels::conv1d_backward_input(&g, wv.data(), geom);
                        accumulate(&mut grads[*x], dx);
                    }
                    if w.is_some() || b.is_some() {
                        let xv = x_val.as_ref();
                        let (dw, db) = match xv {
                            Some(xv) => kernels::conv1d_backward_params(xv.data(), &g, geom),
                            None => {
                                // Only the bias is tracked.
                                let mut db = vec![F::zero(); geom.cout];
                                for r in g.chunks(geom.cout) {
                                    for (a, &v) in db.iter_mut().zip(r) {
                                        *a += v;
                                    }
                                }
                                (Vec::new(), db)
                            }
                        };
                        if let Some(w) = w {
                            accumulate(&mut grads[*w], dw);
                        }
                        if let Some(b) = b {
                            accumulate(&mut grads[*b], db);
                        }
                    }
                }
                Op::MaxPool { x, arg, dims, window } => {
                    let dx = kernels::max_pool_backward(&g, arg, *dims, *window);
                    accumulate(&mut grads[*x], dx);
                }
                Op::AvgPool {
                    x,
                    dims,
                    window,
                    stride,
                } => {
                    let dx = kernels::avg_pool_backward(&g, *dims, *window, *stride);
                    accumulate(&mut grads[*x], dx);
                }
                Op::Upsample { x, dims, factor } => {
                    let dx = kernels::upsample_backward(&g, *dims, *factor);
                    accumulate(&mut grads[*x], dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    gamma_val,
                    inv_std,
                    batch_stats,
                    channels,
                } => {
                    let c = *channels;
                    let rows = g.len() / c;
                    let mut sum_dy = vec![F::zero(); c];
                    let mut sum_dy_xhat = vec![F::zero(); c];
                    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            sum_dy[ch] += gr[ch];
                            sum_dy_xhat[ch] += gr[ch] * hr[ch];
                        }
                    }
                    if let Some(x) = x {
                        let mut dx = vec![F::zero(); g.len()];
                        if *batch_stats {
                            let n = F::lit(rows as f64);
                            let k: Vec<F> = (0..c).map(|ch| gamma_val[ch] * inv_std[ch] / n).collect();
                            for ((d, gr), hr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                                for ch in 0..c {
                                    d[ch] = k[ch] * (n * gr[ch] - sum_dy[ch] - hr[ch] * sum_dy_xhat[ch]);
                                }
                            }
                        } else {
                            let k: Vec<F> = (0..c).map(|ch| gamma_val[ch] * inv_std[ch]).collect();
                            for (d, gr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                                for ch in 0..c {
                                    d[ch] = gr[ch] * k[ch];
                                }
                            }
                        }
                        accumulate(&mut grads[*x], dx);
                    }
                    if let Some(gm) = gamma {
                        accumulate(&mut grads[*gm], sum_dy_xhat);
                    }
                    if let Some(bt) = beta {
                        accumulate(&mut grads[*bt], sum_dy);
                    }
                }
                Op::CropConcat {
                    enc,
                    dec,
                    enc_dims,
                    dec_dims,
                } => {
                    let (b, le, ce) = *enc_dims;
                    let (_, ld, cd) = *dec_dims;
                    let left = kernels::crop_left(le, ld);
                    let c = ce + cd;
                    if let Some(d) = dec {
                        let mut dd = vec![F::zero(); b * ld * cd];
                        for (row, o) in dd.chunks_mut(cd).enumerate() {
                            o.copy_from_slice(&g[row * c..row * c + cd]);
                        }
                        accumulate(&mut grads[*d], dd);
                    }
                    if let Some(e) = enc {
                        let mut de = vec![F::zero(); b * le * ce];
                        for bi in 0..b {
                            for l in 0..ld {
                                let row = bi * ld + l;
                                let dst = (bi * le + left + l) * ce;
                                de[dst..dst + ce].copy_from_slice(&g[row * c + cd..(row + 1) * c]);
                            }
                        }
                        accumulate(&mut grads[*e], de);
                    }
                }
                Op::Relu { x, out } => {
                    let dx = g
                        .iter()
                        .zip(out.data())
                        .map(|(&d, &o)| if o > F::zero() { d } else { F::zero() })
                        .collect();
                    accumulate(&mut grads[*x], dx);
                }
                Op::Tanh { x, out } => {
                    let dx = g
                        .iter()
                        .zip(out.data())
                        .map(|(&d, &o)| d * (F::one() - o * o))
                        .collect();
                    accumulate(&mut grads[*x], dx);
                }
                Op::Softmax { x, out } => {
                    let k = *out.shape().last().unwrap_or(&1);
                    let mut dx = vec![F::zero(); g.len()];
                    for ((d, gr), sr) in dx.chunks_mut(k).zip(g.chunks(k)).zip(out.data().chunks(k)) {
                        let s: F = gr.iter().zip(sr).map(|(&a, &b)| a * b).sum();
                        for j in 0..k {
                            d[j] = sr[j] * (gr[j] - s);
                        }
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::PadEnd { x, dims, target } => {
                    let (b, l, c) = *dims;
                    let mut dx = Vec::with_capacity(b * l * c);
                    for bi in 0..b {
                        dx.extend_from_slice(&g[bi * target * c..(bi * target + l) * c]);
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::Loss { x, grad } => {
                    let s = g[0];
                    accumulate(&mut grads[*x], grad.iter().map(|&v| v * s).collect());
                }
            }
        }
        Ok(Gradients {
            grads: leaf_grads,
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }
}

pub(crate) fn softmax_rows<F: Element>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let k = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Dimension("softmax of a rank-0 tensor".into()))?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut s = F::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
