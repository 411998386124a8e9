//! Minimal reverse-mode differentiation over dense f64 tensors.
//!
//! A `Tape` is a per-forward-pass arena of nodes; every operation pushes a
//! node whose parents have smaller indices, so reversing the arena is a
//! topological order and `backward` visits each node exactly once.
//! Gradients live in a separate per-node buffer returned by `backward`;
//! callers accumulate them into persistent [`Parameter`]s.
//!
//! Convolution kernels are fixed at 3x3x3 with zero padding and stride 1
//! or 2. Inner loops are data-parallel over disjoint output channels, so
//! results are bit-identical across thread counts.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense row-major tensor, up to 5-D in practice.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "tensor data has {} values, shape {shape:?} needs {n}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

/// Node handle on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    Relu(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv3d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
    },
    UpsampleNearest2(NodeId),
    ConcatChannels(NodeId, NodeId),
    SoftmaxChannels(NodeId),
    Sum(NodeId),
    /// Scalar node with a precomputed input gradient; used to splice
    /// analytically differentiated losses into the graph.
    Loss {
        x: NodeId,
        grad: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-forward-pass computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    value_bytes: usize,
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

    /// Bytes held by node values plus an equal-sized gradient buffer; the
    /// deterministic memory figure reported by the ablation runner.
    pub fn peak_bytes(&self) -> usize {
        2 * self.value_bytes
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.value_bytes += value.numel() * std::mem::size_of::<f64>();
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.nodes[a.0].value.shape != self.nodes[b.0].value.shape {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.nodes[a.0].value.shape, self.nodes[b.0].value.shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b)))
    }

    pub fn scalar_mul(&mut self, a: NodeId, k: f64) -> NodeId {
        let data = self.nodes[a.0].value.data.iter().map(|x| k * x).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor { shape, data }, Op::ScalarMul(a, k))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a.0].value.data.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor { shape, data }, Op::Relu(a))
    }

    /// Per-location channel mixing: `x` is `[Cin, ...]`, `w` is
    /// `[Cout, Cin]`, `b` is `[Cout]`; output is `[Cout, ...]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        if xv.shape.is_empty() || wv.shape.len() != 2 || bv.shape.len() != 1 {
            return Err(Error::Shape("linear: need x [Cin,...], w [Cout,Cin], b [Cout]".into()));
        }
        let cin = xv.shape[0];
        let cout = wv.shape[0];
        if wv.shape[1] != cin || bv.shape[0] != cout {
            return Err(Error::Shape(format!(
                "linear: x {:?}, w {:?}, b {:?} are inconsistent",
                xv.shape, wv.shape, bv.shape
            )));
        }
        let spatial = xv.numel() / cin;
        let mut out = vec![0f64; cout * spatial];
        for co in 0..cout {
            let row = &mut out[co * spatial..(co + 1) * spatial];
            row.fill(bv.data[co]);
            for ci in 0..cin {
                let weight = wv.data[co * cin + ci];
                let xs = &xv.data[ci * spatial..(ci + 1) * spatial];
                for (o, xval) in row.iter_mut().zip(xs) {
                    *o += weight * xval;
                }
            }
        }
        let mut shape = xv.shape.clone();
        shape[0] = cout;
        Ok(self.push(Tensor { shape, data: out }, Op::Linear { x, w, b }))
    }

    /// 3x3x3 convolution with zero padding 1 and stride 1 or 2.
    /// `x` is `[Cin, X, Y, Z]`, `w` is `[Cout, Cin, 3, 3, 3]`, `b` `[Cout]`.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        if stride != 1 && stride != 2 {
            return Err(Error::Shape(format!("conv3d: stride must be 1 or 2, got {stride}")));
        }
        if xv.shape.len() != 4 {
            return Err(Error::Shape(format!("conv3d: input must be [C,X,Y,Z], got {:?}", xv.shape)));
        }
        if wv.shape.len() != 5 || wv.shape[2..] != [3, 3, 3] {
            return Err(Error::Shape(format!(
                "conv3d: kernel must be [Cout,Cin,3,3,3], got {:?}",
                wv.shape
            )));
        }
        let (cin, xd, yd, zd) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let cout = wv.shape[0];
        if wv.shape[1] != cin || bv.shape != [cout] {
            return Err(Error::Shape(format!(
                "conv3d: x {:?}, w {:?}, b {:?} are inconsistent",
                xv.shape, wv.shape, bv.shape
            )));
        }
        let (ox, oy, oz) = (out_dim(xd, stride), out_dim(yd, stride), out_dim(zd, stride));
        let mut out = vec![0f64; cout * ox * oy * oz];
        out.par_chunks_mut(ox * oy * oz)
            .enumerate()
            .for_each(|(co, chunk)| {
                chunk.fill(bv.data[co]);
                for ci in 0..cin {
                    let xs = &xv.data[ci * xd * yd * zd..(ci + 1) * xd * yd * zd];
                    for kx in 0..3 {
                        let (xlo, xhi) = tap_range(kx, xd, ox, stride);
                        for ky in 0..3 {
                            let (ylo, yhi) = tap_range(ky, yd, oy, stride);
                            for kz in 0..3 {
                                let (zlo, zhi) = tap_range(kz, zd, oz, stride);
                                let weight =
                                    wv.data[(((co * cin + ci) * 3 + kx) * 3 + ky) * 3 + kz];
                                for o_x in xlo..xhi {
                                    let ix = o_x * stride + kx - 1;
                                    for o_y in ylo..yhi {
                                        let iy = o_y * stride + ky - 1;
                                        let orow = (o_x * oy + o_y) * oz;
                                        let irow = (ix * yd + iy) * zd;
                                        for o_z in zlo..zhi {
                                            let iz = o_z * stride + kz - 1;
                                            chunk[orow + o_z] += weight * xs[irow + iz];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Ok(self.push(
            Tensor {
                shape: vec![cout, ox, oy, oz],
                data: out,
            },
            Op::Conv3d { x, w, b, stride },
        ))
    }

    /// Nearest-neighbor x2 upsampling of a `[C, X, Y, Z]` tensor.
    pub fn upsample_nearest2(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.shape.len() != 4 {
            return Err(Error::Shape(format!(
                "upsample_nearest: input must be [C,X,Y,Z], got {:?}",
                av.shape
            )));
        }
        let (c, xd, yd, zd) = (av.shape[0], av.shape[1], av.shape[2], av.shape[3]);
        let (ux, uy, uz) = (2 * xd, 2 * yd, 2 * zd);
        let mut out = vec![0f64; c * ux * uy * uz];
        for ch in 0..c {
            for x in 0..ux {
                for y in 0..uy {
                    let irow = ((ch * xd + x / 2) * yd + y / 2) * zd;
                    let orow = ((ch * ux + x) * uy + y) * uz;
                    for z in 0..uz {
                        out[orow + z] = av.data[irow + z / 2];
                    }
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![c, ux, uy, uz],
                data: out,
            },
            Op::UpsampleNearest2(a),
        ))
    }

    /// Concatenate along the channel axis (axis 0); trailing dims must match.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape.len() != bv.shape.len() || av.shape[1..] != bv.shape[1..] {
            return Err(Error::Shape(format!(
                "concat_channels: shapes {:?} and {:?} differ beyond axis 0",
                av.shape, bv.shape
            )));
        }
        let mut shape = av.shape.clone();
        shape[0] += bv.shape[0];
        let mut data = Vec::with_capacity(av.numel() + bv.numel());
        data.extend_from_slice(&av.data);
        data.extend_from_slice(&bv.data);
        Ok(self.push(Tensor { shape, data }, Op::ConcatChannels(a, b)))
    }

    /// Softmax along the channel axis (axis 0), per trailing location.
    pub fn softmax_channels(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.shape.is_empty() || av.shape[0] < 2 {
            return Err(Error::Shape(format!(
                "softmax_channels: need a channel axis with >= 2 entries, got {:?}",
                av.shape
            )));
        }
        let k = av.shape[0];
        let spatial = av.numel() / k;
        let mut out = vec![0f64; av.numel()];
        for s in 0..spatial {
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                max = max.max(av.data[j * spatial + s]);
            }
            let mut sum = 0f64;
            for j in 0..k {
                let e = (av.data[j * spatial + s] - max).exp();
                out[j * spatial + s] = e;
                sum += e;
            }
            for j in 0..k {
                out[j * spatial + s] /= sum;
            }
        }
        let shape = av.shape.clone();
        Ok(self.push(Tensor { shape, data: out }, Op::SoftmaxChannels(a)))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Scalar node carrying an externally computed value and input
    /// gradient. `grad` must have exactly one entry per input element.
    pub fn loss_scalar(&mut self, x: NodeId, value: f64, grad: Vec<f64>) -> Result<NodeId> {
        if grad.len() != self.nodes[x.0].value.numel() {
            return Err(Error::Shape(format!(
                "loss gradient has {} entries, input has {}",
                grad.len(),
                self.nodes[x.0].value.numel()
            )));
        }
        Ok(self.push(Tensor::scalar(value), Op::Loss { x, grad }))
    }

    /// Reverse pass from a scalar root. Returns one gradient tensor per
    /// node; unreachable nodes get zeros.
    pub fn backward(&self, root: NodeId) -> Result<Vec<Tensor>> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(&n.value.shape))
            .collect();
        grads[root.0].data[0] = 1.0;
        for idx in (0..=root.0).rev() {
            let (before, rest) = grads.split_at_mut(idx);
            let gout = &rest[0];
            if gout.data.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for (g, &d) in before[a.0].data.iter_mut().zip(&gout.data) {
                        *g += d;
                    }
                    for (g, &d) in before[b.0].data.iter_mut().zip(&gout.data) {
                        *g += d;
                    }
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value.data;
                    let bv = &self.nodes[b.0].value.data;
                    for i in 0..gout.data.len() {
                        before[a.0].data[i] += gout.data[i] * bv[i];
                    }
                    for i in 0..gout.data.len() {
                        before[b.0].data[i] += gout.data[i] * av[i];
                    }
                }
                Op::ScalarMul(a, k) => {
                    for (g, &d) in before[a.0].data.iter_mut().zip(&gout.data) {
                        *g += k * d;
                    }
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value.data;
                    for i in 0..gout.data.len() {
                        if av[i] > 0.0 {
                            before[a.0].data[i] += gout.data[i];
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    self.backward_linear(*x, *w, *b, gout, before);
                }
                Op::Conv3d { x, w, b, stride } => {
                    self.backward_conv3d(*x, *w, *b, *stride, gout, before);
                }
                Op::UpsampleNearest2(a) => {
                    let av = &self.nodes[a.0].value;
                    let (c, xd, yd, zd) = (av.shape[0], av.shape[1], av.shape[2], av.shape[3]);
                    let (ux, uy, uz) = (2 * xd, 2 * yd, 2 * zd);
                    let ga = &mut before[a.0].data;
                    for ch in 0..c {
                        for x in 0..ux {
                            for y in 0..uy {
                                let irow = ((ch * xd + x / 2) * yd + y / 2) * zd;
                                let orow = ((ch * ux + x) * uy + y) * uz;
                                for z in 0..uz {
                                    ga[irow + z / 2] += gout.data[orow + z];
                                }
                            }
                        }
                    }
                }
                Op::ConcatChannels(a, b) => {
                    let na = self.nodes[a.0].value.numel();
                    for (g, &d) in before[a.0].data.iter_mut().zip(&gout.data[..na]) {
                        *g += d;
                    }
                    for (g, &d) in before[b.0].data.iter_mut().zip(&gout.data[na..]) {
                        *g += d;
                    }
                }
                Op::SoftmaxChannels(a) => {
                    let pv = &self.nodes[idx].value; // own output
                    let k = pv.shape[0];
                    let spatial = pv.numel() / k;
                    let ga = &mut before[a.0].data;
                    for s in 0..spatial {
                        let mut dot = 0f64;
                        for j in 0..k {
                            dot += gout.data[j * spatial + s] * pv.data[j * spatial + s];
                        }
                        for j in 0..k {
                            let p = pv.data[j * spatial + s];
                            ga[j * spatial + s] += p * (gout.data[j * spatial + s] - dot);
                        }
                    }
                }
                Op::Sum(a) => {
                    let d = gout.data[0];
                    for g in before[a.0].data.iter_mut() {
                        *g += d;
                    }
                }
                Op::Loss { x, grad } => {
                    let d = gout.data[0];
                    for (g, &lg) in before[x.0].data.iter_mut().zip(grad) {
                        *g += d * lg;
                    }
                }
            }
        }
        Ok(grads)
    }

    fn backward_linear(&self, x: NodeId, w: NodeId, b: NodeId, gout: &Tensor, before: &mut [Tensor]) {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let cin = xv.shape[0];
        let cout = wv.shape[0];
        let spatial = xv.numel() / cin;
        {
            let gb = &mut before[b.0].data;
            for co in 0..cout {
                gb[co] += gout.data[co * spatial..(co + 1) * spatial].iter().sum::<f64>();
            }
        }
        {
            let gw = &mut before[w.0].data;
            for co in 0..cout {
                let gos = &gout.data[co * spatial..(co + 1) * spatial];
                for ci in 0..cin {
                    let xs = &xv.data[ci * spatial..(ci + 1) * spatial];
                    let mut acc = 0f64;
                    for (g, xval) in gos.iter().zip(xs) {
                        acc += g * xval;
                    }
                    gw[co * cin + ci] += acc;
                }
            }
        }
        {
            let gx = &mut before[x.0].data;
            for ci in 0..cin {
                let row = &mut gx[ci * spatial..(ci + 1) * spatial];
                for co in 0..cout {
                    let weight = wv.data[co * cin + ci];
                    let gos = &gout.data[co * spatial..(co + 1) * spatial];
                    for (g, go) in row.iter_mut().zip(gos) {
                        *g += weight * go;
                    }
                }
            }
        }
    }

    fn backward_conv3d(
        &self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        gout: &Tensor,
        before: &mut [Tensor],
    ) {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let (cin, xd, yd, zd) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let cout = wv.shape[0];
        let (ox, oy, oz) = (gout.shape[1], gout.shape[2], gout.shape[3]);
        let ovol = ox * oy * oz;

        {
            let gb = &mut before[b.0].data;
            for co in 0..cout {
                gb[co] += gout.data[co * ovol..(co + 1) * ovol].iter().sum::<f64>();
            }
        }
        {
            // dW: same tap ranges as the forward pass, roles swapped
            let gw = &mut before[w.0].data;
            gw.par_chunks_mut(cin * 27).enumerate().for_each(|(co, gwk)| {
                let gos = &gout.data[co * ovol..(co + 1) * ovol];
                for ci in 0..cin {
                    let xs = &xv.data[ci * xd * yd * zd..(ci + 1) * xd * yd * zd];
                    for kx in 0..3 {
                        let (xlo, xhi) = tap_range(kx, xd, ox, stride);
                        for ky in 0..3 {
                            let (ylo, yhi) = tap_range(ky, yd, oy, stride);
                            for kz in 0..3 {
                                let (zlo, zhi) = tap_range(kz, zd, oz, stride);
                                let mut acc = 0f64;
                                for o_x in xlo..xhi {
                                    let ix = o_x * stride + kx - 1;
                                    for o_y in ylo..yhi {
                                        let iy = o_y * stride + ky - 1;
                                        let orow = (o_x * oy + o_y) * oz;
                                        let irow = (ix * yd + iy) * zd;
                                        for o_z in zlo..zhi {
                                            acc += gos[orow + o_z] * xs[irow + o_z * stride + kz - 1];
                                        }
                                    }
                                }
                                gwk[(ci * 3 + kx) * 9 + ky * 3 + kz] += acc;
                            }
                        }
                    }
                }
            });
        }
        {
            // dX: scatter per input channel, parallel over disjoint channels
            let gx = &mut before[x.0].data;
            gx.par_chunks_mut(xd * yd * zd).enumerate().for_each(|(ci, gxc)| {
                for co in 0..cout {
                    let gos = &gout.data[co * ovol..(co + 1) * ovol];
                    for kx in 0..3 {
                        let (xlo, xhi) = tap_range(kx, xd, ox, stride);
                        for ky in 0..3 {
                            let (ylo, yhi) = tap_range(ky, yd, oy, stride);
                            for kz in 0..3 {
                                let (zlo, zhi) = tap_range(kz, zd, oz, stride);
                                let weight =
                                    wv.data[(((co * cin + ci) * 3 + kx) * 3 + ky) * 3 + kz];
                                for o_x in xlo..xhi {
                                    let ix = o_x * stride + kx - 1;
                                    for o_y in ylo..yhi {
                                        let iy = o_y * stride + ky - 1;
                                        let orow = (o_x * oy + o_y) * oz;
                                        let irow = (ix * yd + iy) * zd;
                                        for o_z in zlo..zhi {
                                            gxc[irow + o_z * stride + kz - 1] +=
                                                weight * gos[orow + o_z];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
    }
}

/// Output extent for padding 1, kernel 3: `(d - 1) / stride + 1`.
fn out_dim(d: usize, stride: usize) -> usize {
    (d - 1) / stride + 1
}

/// Range of output positions whose tap `k` lands inside the input:
/// `o * stride + k - 1 in [0, d)`.
fn tap_range(k: usize, d: usize, o_extent: usize, stride: usize) -> (usize, usize) {
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    let hi = o_extent.min((d - k) / stride + 1);
    (lo, hi.max(lo))
}

/// A trainable tensor with persistent gradient and momentum buffers.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(&value.shape);
        let momentum = Tensor::zeros(&value.shape);
        Self {
            name: name.into(),
            value,
            grad,
            momentum,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.fill(0.0);
    }
}

/// Add tape gradients into bound parameters. `bindings` pairs a parameter
/// index with the leaf node it was fed into; repeated calls accumulate.
pub fn accumulate_grads(
    params: &mut [Parameter],
    bindings: &[(usize, NodeId)],
    grads: &[Tensor],
) {
    for &(pi, nid) in bindings {
        let g = &grads[nid.0];
        for (dst, &src) in params[pi].grad.data.iter_mut().zip(&g.data) {
            *dst += src;
        }
    }
}

/// One SGD step with momentum and weight decay:
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
/// Gradients are zeroed afterwards.
pub fn sgd_step(params: &mut [Parameter], lr: f64, momentum: f64, weight_decay: f64) {
    for p in params {
        for i in 0..p.value.data.len() {
            let v = momentum * p.momentum.data[i] + p.grad.data[i] + weight_decay * p.value.data[i];
            p.momentum.data[i] = v;
            p.value.data[i] -= lr * v;
            debug_assert!(p.value.data[i].is_finite(), "parameter {} diverged", p.name);
        }
        p.zero_grad();
    }
}

/// Poly learning-rate schedule: `base_lr * (1 - iter / max_iter)^0.9`.
pub fn poly_lr(base_lr: f64, iteration: usize, max_iteration: usize) -> Result<f64> {
    if max_iteration == 0 {
        return Err(Error::Domain("max_iteration must be >= 1".into()));
    }
    if iteration > max_iteration {
        return Err(Error::Domain(format!(
            "iteration {iteration} exceeds max_iteration {max_iteration}"
        )));
    }
    let frac = 1.0 - iteration as f64 / max_iteration as f64;
    Ok(base_lr * frac.powf(0.9))
}
