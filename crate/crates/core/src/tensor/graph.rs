use super::Scalar;

/// Handle to a node in a [`Graph`]. Cheap to copy; only valid for the graph
/// that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) u32);

impl Var {
    #[inline]
    pub(crate) fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Operation record. Parents are stored inline; per-op context that the
/// backward pass needs (argmax indices, batch statistics, masks) lives in
/// [`Node::aux`].
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// a * x + b elementwise with scalar constants.
    Affine(Var, f64, f64),
    Abs(Var),
    Exp(Var),
    Recip(Var),
    Sigmoid(Var),
    Relu(Var),
    Elu(Var),
    /// Elementwise minimum across several same-shaped inputs.
    MinAcross(Vec<Var>),
    /// Concatenate along dim 1 (channels), identical remaining dims.
    Concat(Vec<Var>),
    /// Slice [start, start+len) along dim 1.
    Narrow(Var, usize, usize),
    /// Mean over every element -> shape [1].
    MeanAll(Var),
    /// Mean over all dims but the first: [N, ...] -> [N].
    MeanPerItem(Var),
    /// Mean over channel dim: [N,C,H,W] -> [N,1,H,W].
    MeanC(Var),
    /// Mean over spatial dims: [N,C,H,W] -> [N,C].
    MeanHW(Var),
    /// Weighted mean with constant weights (aux); returns [1].
    MaskedMean(Var),
    /// x[N,...] * s[N] with s broadcast over trailing dims.
    MulPerItem(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    /// Batch normalization in training mode; aux holds (mean, invstd).
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    /// 3x3 stride-2 max pool with padding 1; aux holds argmax indices.
    MaxPool3x3s2(Var),
    UpsampleNearest2(Var),
    UpsampleBilinear(Var),
    /// 3x3 mean filter normalized by the in-bounds window size.
    BoxFilter3(Var),
    /// Forward difference along x: [N,C,H,W] -> [N,C,H,W-1].
    DiffX(Var),
    /// Forward difference along y: [N,C,H,W] -> [N,C,H-1,W].
    DiffY(Var),
    /// Axis-angle + translation [N,6] -> row-major 3x4 matrices [N,12].
    PoseToMat(Var),
    /// Pinhole reprojection coordinates; aux holds the validity mask.
    WarpCoords {
        depth: Var,
        mat: Var,
        intr: Var,
    },
    /// Bilinear sampling of src at coords; out-of-bounds pixels are zero.
    GridSample {
        src: Var,
        coords: Var,
    },
}

/// Saved per-node context for the backward pass.
#[derive(Debug, Default)]
pub(crate) struct Aux<T> {
    /// Per-element selector (MinAcross) or other small index payloads.
    pub sel: Vec<u8>,
    /// Argmax positions (MaxPool).
    pub idx: Vec<u32>,
    /// Floating-point context: BN (mean ++ invstd), MaskedMean weights,
    /// WarpCoords validity mask.
    pub fdata: Vec<T>,
}

pub(crate) struct Node<T: Scalar> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub op: Op,
    pub requires_grad: bool,
    pub aux: Aux<T>,
}

/// Define-by-run autodiff tape.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Graph that skips all gradient bookkeeping (inference).
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op,
        requires_grad: bool,
        aux: Aux<T>,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            op,
            requires_grad,
            aux,
        });
        Var((self.nodes.len() - 1) as u32)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, shape: &[usize], value: Vec<T>) -> Var {
        self.push(shape.to_vec(), value, Op::Leaf, false, Aux::default())
    }

    /// Leaf that accumulates a gradient (network parameter or checked input).
    pub fn leaf(&mut self, shape: &[usize], value: Vec<T>) -> Var {
        self.push(shape.to_vec(), value, Op::Leaf, true, Aux::default())
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.idx()].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.idx()].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        debug_assert_eq!(self.nodes[v.idx()].value.len(), 1);
        self.nodes[v.idx()].value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.idx()].grad.as_deref()
    }

    pub(crate) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.idx()].requires_grad
    }

    pub(crate) fn any_requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad(*v))
    }

    /// Total number of value elements currently held (memory diagnostics).
    pub fn value_elements(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum()
    }

    pub(crate) fn ensure_grad(&mut self, v: Var) {
        let n = &mut self.nodes[v.idx()];
        if n.grad.is_none() {
            n.grad = Some(vec![T::ZERO; n.value.len()]);
        }
    }

    /// Add `delta` into the gradient of `v`, reusing the buffer when empty.
    pub(crate) fn accum_grad(&mut self, v: Var, delta: Vec<T>) {
        let n = &mut self.nodes[v.idx()];
        debug_assert_eq!(delta.len(), n.value.len());
        match &mut n.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => n.grad = Some(delta),
        }
    }

    /// Reverse pass from `loss` (must be a single-element node). Gradients of
    /// leaves are retained; intermediate values and gradients are freed as
    /// soon as they are no longer needed to bound peak memory.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            self.grad_enabled,
            "backward on an inference graph is not supported"
        );
        assert_eq!(
            self.nodes[loss.idx()].value.len(),
            1,
            "backward expects a scalar loss"
        );
        self.nodes[loss.idx()].grad = Some(vec![T::ONE]);
        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].requires_grad || self.nodes[id].grad.is_none() {
                // Free values of dead branches too (they cannot feed any
                // remaining backward step of a node with a gradient only if
                // they have no grad-requiring consumers; keep it simple and
                // only free grads lazily).
                continue;
            }
            self.backward_node(id);
            let n = &mut self.nodes[id];
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
                n.value = Vec::new();
                n.aux = Aux::default();
            }
        }
    }

    fn backward_node(&mut self, id: usize) {
        ops::dispatch_backward(self, id);
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

use super::ops;
