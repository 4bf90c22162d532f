//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Operations append nodes during the forward pass; [`Tape::backward`]
//! walks the tape in reverse accumulating vector-Jacobian products. The
//! op set is deliberately coarse (whole-tensor ops with hand-derived
//! adjoints) rather than scalar-level: it keeps the tape short and each
//! adjoint independently checkable against finite differences.
//!
//! Loss heads work in log-space. [`Tape::log_softmax`] uses
//! max-subtraction, and [`Tape::soft_cross_mean`] clamps log-probabilities
//! at `ln(1e-12)` so losses stay finite and gradients bounded for
//! arbitrarily confident predictions — the same clamp the pure loss
//! functions in [`crate::loss`] apply.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::LOG_CLAMP;
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Constant or parameter; no parents.
    Leaf,
    /// `y = x · wᵀ` with `w` stored `[out×in]`.
    MatMulT {
        x: NodeId,
        w: NodeId,
    },
    /// `y = x + broadcast(bias)`.
    AddRow {
        x: NodeId,
        bias: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    /// Row-wise log-softmax with max-subtraction.
    LogSoftmax {
        x: NodeId,
    },
    /// Sum of all elements.
    SumAll {
        x: NodeId,
    },
    /// `offset - mean_rows Σ_c targets · clamp(logp)`; the shared head for
    /// hard cross-entropy (one-hot targets), soft-target cross-entropy,
    /// and the cross term of KL(targets ‖ student).
    SoftCrossMean {
        logp: NodeId,
        targets: Tensor,
    },
    /// `mean_rows Σ_c exp(logq) · (logq - ln_targets)`: KL(student ‖ ref)
    /// with a constant reference distribution.
    KlToConstMean {
        logq: NodeId,
        ln_targets: Tensor,
    },
    /// `Σ coeff_i · v_i` over scalar nodes.
    WeightedSum {
        terms: Vec<(NodeId, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node; `None` if the node
    /// does not influence the loss.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Like [`Gradients::get`] but materializes zeros of the right shape.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

/// Recorded operation graph; see module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul_t(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let value = self.value(x).matmul_nt(self.value(w))?;
        Ok(self.push(value, Op::MatMulT { x, w }))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = self.value(x).add_row(self.value(bias))?;
        Ok(self.push(value, Op::AddRow { x, bias }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).relu();
        self.push(value, Op::Relu { x })
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.value(x).scale(factor);
        self.push(value, Op::Scale { x, factor })
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(Error::dimension(format!(
                "log_softmax expects a matrix, got shape {:?}",
                xv.shape()
            )));
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let mut m = f64::NEG_INFINITY;
            for &v in row {
                m = math::max(m, v);
            }
            let mut denom = 0.0;
            for &v in row {
                denom += math::exp(v - m);
            }
            let log_denom = math::ln(denom);
            for c in 0..cols {
                out[r * cols + c] = row[c] - m - log_denom;
            }
        }
        let value = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(value, Op::LogSoftmax { x }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::SumAll { x })
    }

    /// `offset - mean_rows Σ targets·clamp(logp)`. With one-hot `targets`
    /// and `offset == 0` this is mean cross-entropy; with a probability
    /// matrix and `offset == mean Σ p ln p` it is `KL(targets ‖ exp(logp))`.
    pub fn soft_cross_mean(
        &mut self,
        logp: NodeId,
        targets: Tensor,
        offset: f64,
    ) -> Result<NodeId> {
        let lp = self.value(logp);
        if !lp.same_shape(&targets) {
            return Err(Error::dimension(format!(
                "soft_cross_mean: log-probs {:?} vs targets {:?}",
                lp.shape(),
                targets.shape()
            )));
        }
        let rows = lp.rows() as f64;
        let mut acc = 0.0;
        for (&t, &l) in targets.data().iter().zip(lp.data()) {
            acc += t * math::max(l, LOG_CLAMP);
        }
        let value = Tensor::scalar(offset - acc / rows);
        Ok(self.push(value, Op::SoftCrossMean { logp, targets }))
    }

    /// `mean_rows Σ exp(logq)·(logq - ln_targets)` for a constant
    /// (already clamped) log-reference.
    pub fn kl_to_const_mean(&mut self, logq: NodeId, ln_targets: Tensor) -> Result<NodeId> {
        let lq = self.value(logq);
        if !lq.same_shape(&ln_targets) {
            return Err(Error::dimension(format!(
                "kl_to_const_mean: log-probs {:?} vs reference {:?}",
                lq.shape(),
                ln_targets.shape()
            )));
        }
        let rows = lq.rows() as f64;
        let mut acc = 0.0;
        for (&l, &r) in lq.data().iter().zip(ln_targets.data()) {
            acc += math::exp(l) * (l - r);
        }
        let value = Tensor::scalar(acc / rows);
        Ok(self.push(value, Op::KlToConstMean { logq, ln_targets }))
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut acc = 0.0;
        for &(id, coeff) in terms {
            acc += coeff * self.value(id).item()?;
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Accumulates `dL/d(node)` for every node reachable from `loss`,
    /// which must be scalar.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMulT { x, w } => {
                    let dx = g.matmul_nn(self.value(*w))?;
                    let dw = g.matmul_tn(self.value(*x))?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *w, dw)?;
                }
                Op::AddRow { x, bias } => {
                    let db = g.col_sum()?;
                    accumulate(&mut grads, *bias, db)?;
                    accumulate(&mut grads, *x, g.clone())?;
                }
                Op::Relu { x } => {
                    let mask = self.value(*x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *x, g.mul_elem(&mask)?)?;
                }
                Op::Scale { x, factor } => {
                    accumulate(&mut grads, *x, g.scale(*factor))?;
                }
                Op::LogSoftmax { x } => {
                    // dx = dy - softmax(x) * rowsum(dy)
                    let y = &self.nodes[idx].value;
                    let cols = y.cols();
                    let mut dx = g.data().to_vec();
                    for r in 0..y.rows() {
                        let row_sum: f64 = g.data()[r * cols..(r + 1) * cols].iter().sum();
                        for c in 0..cols {
                            let p = math::exp(y.data()[r * cols + c]);
                            dx[r * cols + c] -= p * row_sum;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::matrix(y.rows(), cols, dx)?)?;
                }
                Op::SumAll { x } => {
                    let gv = g.item()?;
                    let shape = self.value(*x).shape().to_vec();
                    let dx = Tensor::zeros(shape).map(|_| gv);
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::SoftCrossMean { logp, targets } => {
                    let gv = g.item()?;
                    let lp = self.value(*logp);
                    let rows = lp.rows() as f64;
                    let data: Vec<f64> = targets
                        .data()
                        .iter()
                        .zip(lp.data())
                        .map(|(&t, &l)| if l > LOG_CLAMP { -gv * t / rows } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *logp, Tensor::new(lp.shape().to_vec(), data)?)?;
                }
                Op::KlToConstMean { logq, ln_targets } => {
                    let gv = g.item()?;
                    let lq = self.value(*logq);
                    let rows = lq.rows() as f64;
                    let data: Vec<f64> = lq
                        .data()
                        .iter()
                        .zip(ln_targets.data())
                        .map(|(&l, &r)| gv * math::exp(l) * (l - r + 1.0) / rows)
                        .collect();
                    accumulate(&mut grads, *logq, Tensor::new(lq.shape().to_vec(), data)?)?;
                }
                Op::WeightedSum { terms } => {
                    let gv = g.item()?;
                    for &(id, coeff) in terms {
                        accumulate(&mut grads, id, Tensor::scalar(coeff * gv))?;
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            *existing = existing.add(&delta)?;
        }
        slot @ None => {
            *slot = Some(delta);
        }
    }
    Ok(())
}
