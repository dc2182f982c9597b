//! Reverse-mode autodiff tape over the kernels in [`crate::ops`].
//!
//! One tape is built per training step: parameters enter as leaves, both the
//! supervised and unsupervised branches append ops, and a single backward pass
//! accumulates gradients into the leaves. Teacher outputs never enter the tape
//! (they are constants of the step), which is what realizes the stop-gradient
//! at pseudo labels and flexible labels.

use crate::ops::{self, RoiWindow};
use crate::tensor::{Scalar, Tensor};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Per-channel batch statistics emitted by a training-mode norm op, handed to
/// the caller so it can update running statistics.
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize, cols: Tensor<T> },
    Dense { x: Var, w: Var, b: Var },
    Relu { x: Var },
    BnTrain { x: Var, alpha: Var, beta: Var, xhat: Tensor<T>, inv_std: Vec<T> },
    Reshape { x: Var },
    RoiBilinear { x: Var, rois: Vec<RoiWindow>, grid: usize, stride: f64 },
    /// -sum_c t_c log softmax(z)_c per row, weighted and divided by `denom`.
    SoftCeLogits { logits: Var, probs: Tensor<T>, targets: Tensor<T>, weights: Vec<T>, denom: T },
    /// Elementwise binary cross-entropy on logits, weighted, divided by `denom`.
    BceLogits { logits: Var, labels: Tensor<T>, weights: Tensor<T>, denom: T },
    /// Elementwise smooth-L1 against constant targets, weighted, divided by `denom`.
    SmoothL1 { pred: Var, targets: Tensor<T>, weights: Tensor<T>, denom: T },
    /// Weighted sum of scalar nodes.
    WeightedSum { terms: Vec<(Var, T)> },
    /// Dot product with a constant tensor (scalar output).
    DotConst { x: Var, coeffs: Tensor<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    needs_grad: bool,
    op: Op<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, needs_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Insert a constant or parameter.
    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        self.push(value, needs_grad, Op::Leaf)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (y, cols) =
            ops::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(y, ng, Op::Conv2d { x, w, b, stride, pad, cols })
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = ops::dense_forward(self.value(x), self.value(w), self.value(b));
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(y, ng, Op::Dense { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu_forward(self.value(x));
        let ng = self.needs(x);
        self.push(y, ng, Op::Relu { x })
    }

    /// Training-mode batch norm; returns the batch moments for running-stat
    /// updates (the tape itself never mutates normalization state).
    pub fn bn_train(&mut self, x: Var, alpha: Var, beta: Var, eps: f64) -> (Var, BatchMoments<T>) {
        let out = ops::batchnorm_train_forward(
            self.value(x),
            self.value(alpha),
            self.value(beta),
            T::from_f64(eps),
        );
        let ng = self.needs(x) || self.needs(alpha) || self.needs(beta);
        let moments = BatchMoments { mean: out.mean, var: out.var };
        let v = self.push(
            out.y,
            ng,
            Op::BnTrain { x, alpha, beta, xhat: out.xhat, inv_std: out.inv_std },
        );
        (v, moments)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self.value(x).reshaped(shape).expect("reshape element count");
        let ng = self.needs(x);
        self.push(y, ng, Op::Reshape { x })
    }

    pub fn roi_bilinear(&mut self, x: Var, rois: Vec<RoiWindow>, grid: usize, stride: f64) -> Var {
        let y = ops::roi_bilinear_forward(self.value(x), &rois, grid, stride);
        let ng = self.needs(x);
        self.push(y, ng, Op::RoiBilinear { x, rois, grid, stride })
    }

    /// Soft cross-entropy on logits rows: targets are arbitrary vectors in
    /// [0,1]^C and are *not* renormalized. Row weights select contributing
    /// rows; `denom` is the averaging divisor chosen by the caller.
    pub fn soft_ce_logits(
        &mut self,
        logits: Var,
        targets: Tensor<T>,
        weights: Vec<T>,
        denom: T,
    ) -> Var {
        let z = self.value(logits);
        let c = z.last_dim();
        let rows = z.len() / c;
        assert_eq!(targets.len(), z.len(), "soft-ce target shape");
        assert_eq!(weights.len(), rows, "soft-ce weights length");
        let probs = ops::softmax_rows(z);
        let floor = T::from_f64(crate::losses::PROB_FLOOR);
        let mut total = T::zero();
        for r in 0..rows {
            if weights[r] == T::zero() {
                continue;
            }
            let mut row_loss = T::zero();
            for ch in 0..c {
                let t = targets.data()[r * c + ch];
                if t != T::zero() {
                    let p = probs.data()[r * c + ch].max(floor);
                    row_loss -= t * p.ln();
                }
            }
            total += weights[r] * row_loss;
        }
        total /= denom;
        let ng = self.needs(logits);
        self.push(
            Tensor::scalar(total),
            ng,
            Op::SoftCeLogits { logits, probs, targets, weights, denom },
        )
    }

    pub fn bce_logits(&mut self, logits: Var, labels: Tensor<T>, weights: Tensor<T>, denom: T) -> Var {
        let z = self.value(logits);
        assert_eq!(labels.len(), z.len(), "bce label shape");
        assert_eq!(weights.len(), z.len(), "bce weight shape");
        let mut total = T::zero();
        for i in 0..z.len() {
            let w = weights.data()[i];
            if w == T::zero() {
                continue;
            }
            let zi = z.data()[i];
            let y = labels.data()[i];
            // max(z,0) - z*y + ln(1 + exp(-|z|))
            let loss = zi.max(T::zero()) - zi * y + (T::one() + (-zi.abs()).exp()).ln();
            total += w * loss;
        }
        total /= denom;
        let ng = self.needs(logits);
        self.push(Tensor::scalar(total), ng, Op::BceLogits { logits, labels, weights, denom })
    }

    pub fn smooth_l1(&mut self, pred: Var, targets: Tensor<T>, weights: Tensor<T>, denom: T) -> Var {
        let p = self.value(pred);
        assert_eq!(targets.len(), p.len(), "smooth-l1 target shape");
        assert_eq!(weights.len(), p.len(), "smooth-l1 weight shape");
        let half = T::from_f64(0.5);
        let mut total = T::zero();
        for i in 0..p.len() {
            let w = weights.data()[i];
            if w == T::zero() {
                continue;
            }
            let d = p.data()[i] - targets.data()[i];
            let a = d.abs();
            let loss = if a < T::one() { half * d * d } else { a - half };
            total += w * loss;
        }
        total /= denom;
        let ng = self.needs(pred);
        self.push(Tensor::scalar(total), ng, Op::SmoothL1 { pred, targets, weights, denom })
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut total = T::zero();
        let mut ng = false;
        for &(v, c) in terms {
            total += c * self.scalar(v);
            ng |= self.needs(v);
        }
        self.push(Tensor::scalar(total), ng, Op::WeightedSum { terms: terms.to_vec() })
    }

    /// Scalar contraction against fixed coefficients (used by gradient checks).
    pub fn dot_const(&mut self, x: Var, coeffs: Tensor<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(coeffs.len(), xv.len(), "dot_const shape");
        let mut total = T::zero();
        for i in 0..xv.len() {
            total += xv.data()[i] * coeffs.data()[i];
        }
        let ng = self.needs(x);
        self.push(Tensor::scalar(total), ng, Op::DotConst { x, coeffs })
    }

    /// Reverse pass from a scalar node. Gradients accumulate into every node
    /// with `needs_grad`, in particular the parameter leaves.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward from non-scalar");
        let shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::filled(&shape, T::one()));

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = node.grad.as_ref() else { continue };

            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, pad, cols } => {
                    let need_dx = before[x.0].needs_grad;
                    let (dx, dw, db) = ops::conv2d_backward(
                        g,
                        cols,
                        before[x.0].value.shape(),
                        &before[w.0].value,
                        *stride,
                        *pad,
                        need_dx,
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut before[x.0], dx);
                    }
                    accumulate_if(&mut before[w.0], dw);
                    accumulate_if(&mut before[b.0], db);
                }
                Op::Dense { x, w, b } => {
                    let need_dx = before[x.0].needs_grad;
                    let (dx, dw, db) =
                        ops::dense_backward(g, &before[x.0].value, &before[w.0].value, need_dx);
                    if let Some(dx) = dx {
                        accumulate(&mut before[x.0], dx);
                    }
                    accumulate_if(&mut before[w.0], dw);
                    accumulate_if(&mut before[b.0], db);
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(g, &node.value);
                    accumulate_if(&mut before[x.0], dx);
                }
                Op::BnTrain { x, alpha, beta, xhat, inv_std } => {
                    let (dx, dalpha, dbeta) =
                        ops::batchnorm_train_backward(g, xhat, inv_std, &before[alpha.0].value);
                    accumulate_if(&mut before[x.0], dx);
                    accumulate_if(&mut before[alpha.0], dalpha);
                    accumulate_if(&mut before[beta.0], dbeta);
                }
                Op::Reshape { x } => {
                    let dx = g.reshaped(before[x.0].value.shape()).expect("reshape grad");
                    accumulate_if(&mut before[x.0], dx);
                }
                Op::RoiBilinear { x, rois, grid, stride } => {
                    let dfeat = ops::roi_bilinear_backward(
                        g,
                        before[x.0].value.shape(),
                        rois,
                        *grid,
                        *stride,
                    );
                    accumulate_if(&mut before[x.0], dfeat);
                }
                Op::SoftCeLogits { logits, probs, targets, weights, denom } => {
                    let gs = g.item();
                    let c = probs.last_dim();
                    let rows = probs.len() / c;
                    let mut dz = Tensor::zeros(probs.shape());
                    for r in 0..rows {
                        if weights[r] == T::zero() {
                            continue;
                        }
                        let scale = gs * weights[r] / *denom;
                        let mut tsum = T::zero();
                        for ch in 0..c {
                            tsum += targets.data()[r * c + ch];
                        }
                        for ch in 0..c {
                            dz.data_mut()[r * c + ch] = scale
                                * (probs.data()[r * c + ch] * tsum - targets.data()[r * c + ch]);
                        }
                    }
                    accumulate_if(&mut before[logits.0], dz);
                }
                Op::BceLogits { logits, labels, weights, denom } => {
                    let gs = g.item();
                    let z = &before[logits.0].value;
                    let mut dz = Tensor::zeros(z.shape());
                    for i in 0..z.len() {
                        let w = weights.data()[i];
                        if w == T::zero() {
                            continue;
                        }
                        dz.data_mut()[i] =
                            gs * w / *denom * (ops::sigmoid(z.data()[i]) - labels.data()[i]);
                    }
                    accumulate_if(&mut before[logits.0], dz);
                }
                Op::SmoothL1 { pred, targets, weights, denom } => {
                    let gs = g.item();
                    let p = &before[pred.0].value;
                    let mut dp = Tensor::zeros(p.shape());
                    for i in 0..p.len() {
                        let w = weights.data()[i];
                        if w == T::zero() {
                            continue;
                        }
                        let d = p.data()[i] - targets.data()[i];
                        dp.data_mut()[i] = gs * w / *denom * d.max(-T::one()).min(T::one());
                    }
                    accumulate_if(&mut before[pred.0], dp);
                }
                Op::WeightedSum { terms } => {
                    let gs = g.item();
                    for &(v, cf) in terms {
                        let delta = Tensor::filled(before[v.0].value.shape(), gs * cf);
                        accumulate_if(&mut before[v.0], delta);
                    }
                }
                Op::DotConst { x, coeffs } => {
                    let gs = g.item();
                    let dx = coeffs.map(|v| v * gs);
                    accumulate_if(&mut before[x.0], dx);
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(node: &mut Node<T>, delta: Tensor<T>) {
    match node.grad.as_mut() {
        Some(g) => g.add_scaled(&delta, T::one()),
        None => node.grad = Some(delta),
    }
}

fn accumulate_if<T: Scalar>(node: &mut Node<T>, delta: Tensor<T>) {
    if node.needs_grad {
        accumulate(node, delta);
    }
}
