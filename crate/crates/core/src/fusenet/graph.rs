//! Tape-based reverse-mode differentiation over [`Tensor`] values.

use super::conv::{col2im, im2col, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        out_geom: ConvGeom,
    },
    LeakyRelu {
        x: NodeId,
        slope: T,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: T,
    },
    Shift {
        x: NodeId,
    },
    Dot {
        x: NodeId,
        weights: Vec<T>,
    },
    /// Scalar reduction whose local gradient was computed in the forward pass.
    Reduce {
        x: NodeId,
        local_grad: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation graph. Nodes are appended in evaluation order, which is
/// therefore a topological order.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `id`, or `None` if the root does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`], but zeros when the root does not depend on `id`.
    pub fn get_or_zeros(&self, id: NodeId, len: usize) -> Vec<T> {
        self.get(id).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let g = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(g);
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn chw(&self, id: NodeId, what: &str) -> Result<(usize, usize, usize)> {
        match *self.value(id).shape() {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(Error::shape(format!("{what} must be C x H x W, got {s:?}"))),
        }
    }

    fn check_bias(&self, b: NodeId, n: usize) -> Result<()> {
        if self.value(b).shape() != [n] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {n} output channels",
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Cross-correlation of `x: [Cin, H, W]` with `w: [Cout, Cin, k, k]`
    /// plus bias, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (cin, h, wd) = self.chw(x, "conv2d input")?;
        let (cout, k) = match *self.value(w).shape() {
            [o, i, k1, k2] if i == cin && k1 == k2 && k1 > 0 => (o, k1),
            ref s => {
                return Err(Error::shape(format!(
                    "conv2d weight {s:?} incompatible with {cin} input channels"
                )))
            }
        };
        self.check_bias(b, cout)?;
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be positive"));
        }
        let geom = ConvGeom {
            channels: cin,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        if !geom.fits() {
            return Err(Error::shape(format!("conv2d kernel {k} larger than padded {h}x{wd} input")));
        }
        let (ho, wo) = (geom.out_height(), geom.out_width());
        let cols = im2col(self.value(x).data(), geom);
        let mut out = vec![T::zero(); cout * ho * wo];
        let bias = self.value(b).data();
        for (o, row) in out.chunks_mut(ho * wo).enumerate() {
            row.fill(bias[o]);
        }
        T::gemm(cout, cin * k * k, ho * wo, self.value(w).data(), false, &cols, false, T::one(), &mut out);
        let value = Tensor::from_vec(&[cout, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, &[x, w, b]))
    }

    /// Transposed convolution with `w: [Cin, Cout, k, k]`: the adjoint of
    /// the strided convolution sharing the same weight, plus bias. Output
    /// size is `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (cin, h, wd) = self.chw(x, "conv_transpose2d input")?;
        let (cout, k) = match *self.value(w).shape() {
            [i, o, k1, k2] if i == cin && k1 == k2 && k1 > 0 => (o, k1),
            ref s => {
                return Err(Error::shape(format!(
                    "conv_transpose2d weight {s:?} incompatible with {cin} input channels"
                )))
            }
        };
        self.check_bias(b, cout)?;
        if stride == 0 || h == 0 || wd == 0 || (h - 1) * stride + k < 2 * pad + 1 || (wd - 1) * stride + k < 2 * pad + 1 {
            return Err(Error::shape("conv_transpose2d geometry yields an empty output"));
        }
        let out_geom = ConvGeom {
            channels: cout,
            height: (h - 1) * stride + k - 2 * pad,
            width: (wd - 1) * stride + k - 2 * pad,
            kernel: k,
            stride,
            pad,
        };
        debug_assert_eq!((out_geom.out_height(), out_geom.out_width()), (h, wd));
        let mut cols = vec![T::zero(); cout * k * k * h * wd];
        T::gemm(cout * k * k, cin, h * wd, self.value(w).data(), true, self.value(x).data(), false, T::zero(), &mut cols);
        let mut out = col2im(&cols, out_geom);
        let plane = out_geom.height * out_geom.width;
        for (o, ch) in out.chunks_mut(plane).enumerate() {
            let bias = self.value(b).data()[o];
            ch.iter_mut().for_each(|v| *v += bias);
        }
        let value = Tensor::from_vec(&[cout, out_geom.height, out_geom.width], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, out_geom }, &[x, w, b]))
    }

    /// Which side of the kink every leaky ReLU input lies on, in tape
    /// order. Two evaluations with equal patterns lie on one linear piece.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { x, .. } => Some(self.value(x)),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v >= T::zero()))
            .collect()
    }

    /// `x` where `x >= 0`, else `slope * x`.
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let slope = T::from_f64_lossy(slope);
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| if v >= T::zero() { v } else { slope * v })
            .collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        self.push(value, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Channel concatenation of two `C x H x W` tensors.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, h, w) = self.chw(a, "concat operand")?;
        let (cb, hb, wb) = self.chw(b, "concat operand")?;
        if (h, w) != (hb, wb) {
            return Err(Error::shape(format!("concat: {h}x{w} vs {hb}x{wb}")));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::from_vec(&[ca + cb, h, w], data)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let factor = T::from_f64_lossy(factor);
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, x: NodeId, offset: f64) -> NodeId {
        let offset = T::from_f64_lossy(offset);
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v + offset).collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        self.push(value, Op::Shift { x }, &[x])
    }

    /// Scalar `sum(x * weights)`.
    pub fn dot(&mut self, x: NodeId, weights: &[f64]) -> Result<NodeId> {
        let src = self.value(x);
        if weights.len() != src.len() {
            return Err(Error::shape(format!(
                "dot: {} weights for {} values",
                weights.len(),
                src.len()
            )));
        }
        let weights: Vec<T> = weights.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let s = src.data().iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, weights }, &[x]))
    }

    /// Scalar node with a precomputed value and local gradient `d value / d x`.
    pub(crate) fn reduce(&mut self, x: NodeId, value: T, local_grad: Vec<T>) -> NodeId {
        debug_assert_eq!(local_grad.len(), self.value(x).len());
        self.push(Tensor::scalar(value), Op::Reduce { x, local_grad }, &[x])
    }

    /// Reverse pass from a scalar root with upstream gradient 1.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        self.backward_with(root, T::one())
    }

    /// Reverse pass from a scalar root with the given upstream gradient.
    pub fn backward_with(&self, root: NodeId, seed: T) -> Result<Gradients<T>> {
        if root.0 >= self.nodes.len() {
            return Err(Error::usage("backward: node does not belong to this graph"));
        }
        if self.value(root).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![seed]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let cout = node.value.shape()[0];
                let hw = geom.out_height() * geom.out_width();
                let ckk = geom.channels * geom.kernel * geom.kernel;
                if self.wants(*w) {
                    accumulate(&mut grads[w.0], cout * ckk, |gw| {
                        T::gemm(cout, hw, ckk, gy, false, cols, true, T::one(), gw)
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], cout, |gb| {
                        for (o, row) in gy.chunks(hw).enumerate() {
                            gb[o] += row.iter().copied().sum();
                        }
                    });
                }
                if self.wants(*x) {
                    let mut dcols = vec![T::zero(); ckk * hw];
                    T::gemm(ckk, cout, hw, self.value(*w).data(), true, gy, false, T::zero(), &mut dcols);
                    let dx = col2im(&dcols, *geom);
                    accumulate(&mut grads[x.0], dx.len(), |g| add_into(g, &dx));
                }
            }
            Op::ConvTranspose2d { x, w, b, out_geom } => {
                let xv = self.value(*x);
                let cin = xv.shape()[0];
                let hw = xv.shape()[1] * xv.shape()[2];
                let okk = out_geom.channels * out_geom.kernel * out_geom.kernel;
                let dcols = im2col(gy, *out_geom);
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], cin * hw, |g| {
                        T::gemm(cin, okk, hw, self.value(*w).data(), false, &dcols, false, T::one(), g)
                    });
                }
                if self.wants(*w) {
                    accumulate(&mut grads[w.0], cin * okk, |g| {
                        T::gemm(cin, hw, okk, xv.data(), false, &dcols, true, T::one(), g)
                    });
                }
                if self.wants(*b) {
                    let plane = out_geom.height * out_geom.width;
                    accumulate(&mut grads[b.0], out_geom.channels, |gb| {
                        for (o, ch) in gy.chunks(plane).enumerate() {
                            gb[o] += ch.iter().copied().sum();
                        }
                    });
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                accumulate(&mut grads[x.0], xv.len(), |g| {
                    for ((gi, &v), &up) in g.iter_mut().zip(xv).zip(gy) {
                        *gi += if v >= T::zero() { up } else { *slope * up };
                    }
                });
            }
            Op::Add { a, b } => {
                for p in [a, b] {
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], gy.len(), |g| add_into(g, gy));
                    }
                }
            }
            Op::Concat { a, b } => {
                let na = self.value(*a).len();
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], na, |g| add_into(g, &gy[..na]));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], gy.len() - na, |g| add_into(g, &gy[na..]));
                }
            }
            Op::Scale { x, factor } => {
                accumulate(&mut grads[x.0], gy.len(), |g| {
                    for (gi, &up) in g.iter_mut().zip(gy) {
                        *gi += *factor * up;
                    }
                });
            }
            Op::Shift { x } => {
                accumulate(&mut grads[x.0], gy.len(), |g| add_into(g, gy));
            }
            Op::Dot { x, weights: local_grad } | Op::Reduce { x, local_grad } => {
                let up = gy[0];
                accumulate(&mut grads[x.0], local_grad.len(), |g| {
                    for (gi, &l) in g.iter_mut().zip(local_grad) {
                        *gi += up * l;
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
