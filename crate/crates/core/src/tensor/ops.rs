use super::graph::{Aux, Graph, Node, Op, Var};
use super::{nn, s, warp, Scalar};

impl<T: Scalar> Graph<T> {
    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.idx()]
    }

    fn same_shape(&self, a: Var, b: Var) {
        assert_eq!(
            self.node(a).shape,
            self.node(b).shape,
            "elementwise op on mismatched shapes"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let v: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.any_requires_grad(&[a, b]);
        let shape = self.node(a).shape.clone();
        self.push(shape, v, Op::Add(a, b), rg, Aux::default())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let v: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.any_requires_grad(&[a, b]);
        let shape = self.node(a).shape.clone();
        self.push(shape, v, Op::Sub(a, b), rg, Aux::default())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let v: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.any_requires_grad(&[a, b]);
        let shape = self.node(a).shape.clone();
        self.push(shape, v, Op::Mul(a, b), rg, Aux::default())
    }

    /// a * x + b with scalar constants.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let (ta, tb) = (s::<T>(a), s::<T>(b));
        let v: Vec<T> = self.value(x).iter().map(|&xi| ta * xi + tb).collect();
        let rg = self.requires_grad(x);
        let shape = self.node(x).shape.clone();
        self.push(shape, v, Op::Affine(x, a, b), rg, Aux::default())
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.affine(x, a, 0.0)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v: Vec<T> = self.value(x).iter().map(|&xi| xi.abs()).collect();
        let rg = self.requires_grad(x);
        let shape = self.node(x).shape.clone();
        self.push(shape, v, Op::Abs(x), rg, Aux::default())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v: Vec<T> = self.value(x).iter().map(|&xi| xi.exp()).collect();
        let rg = self.requires_grad(x);
        let shape = self.node(x).shape.clone();
        self.push(shape, v, Op::Exp(x), rg, Aux::default())
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let v: Vec<T> = self.value(x).iter().map(|&xi| T::ONE / xi).collect();
        let rg = self.requires_grad(x);
        let shape = self.node(x).shape.clone();
        self.push(shape, v, Op::Recip(x), rg, Aux::default())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v: Vec<T> = self.value(x).iter().map(|&xi| sigmoid_stable(xi)).collect();
        let rg = self.requires_grad(x);
        let shape = self.node(x).shape.clone();
        self.push(shape, v, Op::Sigmoid(x), rg, Aux::default())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v: Vec<T> = self
            .value(x)
            .iter()
            .map(|&xi| if xi > T::ZERO { xi } else { T::ZERO })
            .collect();
        let rg = self.requires_grad(x);
        let shape = self.node(x).shape.clone();
        self.push(shape, v, Op::Relu(x), rg, Aux::default())
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let v: Vec<T> = self
            .value(x)
            .iter()
            .map(|&xi| if xi > T::ZERO { xi } else { xi.exp() - T::ONE })
            .collect();
        let rg = self.requires_grad(x);
        let shape = self.node(x).shape.clone();
        self.push(shape, v, Op::Elu(x), rg, Aux::default())
    }

    /// Elementwise minimum across inputs; gradient flows to the argmin input
    /// (first on ties).
    pub fn min_across(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty() && xs.len() < 256, "min_across arity");
        for x in xs {
            self.same_shape(xs[0], *x);
        }
        let len = self.value(xs[0]).len();
        let mut v = self.value(xs[0]).to_vec();
        let mut sel = vec![0u8; len];
        for (k, x) in xs.iter().enumerate().skip(1) {
            let xv = self.value(*x);
            for i in 0..len {
                if xv[i] < v[i] {
                    v[i] = xv[i];
                    sel[i] = k as u8;
                }
            }
        }
        let rg = self.any_requires_grad(xs);
        let shape = self.node(xs[0]).shape.clone();
        self.push(
            shape,
            v,
            Op::MinAcross(xs.to_vec()),
            rg,
            Aux {
                sel,
                ..Aux::default()
            },
        )
    }

    /// Concatenate along dim 1; all other dims must match.
    pub fn concat_c(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let first = self.node(xs[0]).shape.clone();
        assert!(first.len() >= 2);
        let n = first[0];
        let rest: usize = first[2..].iter().product();
        let mut c_total = 0;
        for x in xs {
            let sh = &self.node(*x).shape;
            assert_eq!(sh[0], n, "concat_c batch mismatch");
            assert_eq!(sh[2..].iter().product::<usize>(), rest, "concat_c dims");
            c_total += sh[1];
        }
        let mut v = vec![T::ZERO; n * c_total * rest];
        let mut c_off = 0;
        for x in xs {
            let c = self.node(*x).shape[1];
            let xv = self.value(*x);
            for i in 0..n {
                let dst = (i * c_total + c_off) * rest;
                let src = i * c * rest;
                v[dst..dst + c * rest].copy_from_slice(&xv[src..src + c * rest]);
            }
            c_off += c;
        }
        let mut shape = first;
        shape[1] = c_total;
        let rg = self.any_requires_grad(xs);
        self.push(shape, v, Op::Concat(xs.to_vec()), rg, Aux::default())
    }

    /// Slice channels [start, start+len) along dim 1.
    pub fn narrow_c(&mut self, x: Var, start: usize, len: usize) -> Var {
        let sh = self.node(x).shape.clone();
        assert!(sh.len() >= 2 && start + len <= sh[1]);
        let n = sh[0];
        let c = sh[1];
        let rest: usize = sh[2..].iter().product();
        let xv = self.value(x);
        let mut v = vec![T::ZERO; n * len * rest];
        for i in 0..n {
            let src = (i * c + start) * rest;
            let dst = i * len * rest;
            v[dst..dst + len * rest].copy_from_slice(&xv[src..src + len * rest]);
        }
        let mut shape = sh;
        shape[1] = len;
        let rg = self.requires_grad(x);
        self.push(shape, v, Op::Narrow(x, start, len), rg, Aux::default())
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut acc = T::ZERO;
        for &v in xv {
            acc += v;
        }
        let m = acc / s::<T>(xv.len() as f64);
        let rg = self.requires_grad(x);
        self.push(vec![1], vec![m], Op::MeanAll(x), rg, Aux::default())
    }

    /// [N, ...] -> [N], mean over all trailing dims.
    pub fn mean_per_item(&mut self, x: Var) -> Var {
        let sh = self.node(x).shape.clone();
        let n = sh[0];
        let rest: usize = sh[1..].iter().product();
        let xv = self.value(x);
        let mut v = vec![T::ZERO; n];
        for i in 0..n {
            let mut acc = T::ZERO;
            for &e in &xv[i * rest..(i + 1) * rest] {
                acc += e;
            }
            v[i] = acc / s::<T>(rest as f64);
        }
        let rg = self.requires_grad(x);
        self.push(vec![n], v, Op::MeanPerItem(x), rg, Aux::default())
    }

    /// [N,C,H,W] -> [N,1,H,W], mean over channels.
    pub fn mean_c(&mut self, x: Var) -> Var {
        let sh = self.node(x).shape.clone();
        assert_eq!(sh.len(), 4);
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let hw = h * w;
        let xv = self.value(x);
        let mut v = vec![T::ZERO; n * hw];
        let inv_c = T::ONE / s::<T>(c as f64);
        for i in 0..n {
            for ch in 0..c {
                let src = (i * c + ch) * hw;
                for p in 0..hw {
                    v[i * hw + p] += xv[src + p];
                }
            }
            for p in 0..hw {
                v[i * hw + p] *= inv_c;
            }
        }
        let rg = self.requires_grad(x);
        self.push(vec![n, 1, h, w], v, Op::MeanC(x), rg, Aux::default())
    }

    /// [N,C,H,W] -> [N,C], global average pooling.
    pub fn mean_hw(&mut self, x: Var) -> Var {
        let sh = self.node(x).shape.clone();
        assert_eq!(sh.len(), 4);
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let hw = h * w;
        let xv = self.value(x);
        let mut v = vec![T::ZERO; n * c];
        let inv = T::ONE / s::<T>(hw as f64);
        for i in 0..n * c {
            let mut acc = T::ZERO;
            for &e in &xv[i * hw..(i + 1) * hw] {
                acc += e;
            }
            v[i] = acc * inv;
        }
        let rg = self.requires_grad(x);
        self.push(vec![n, c], v, Op::MeanHW(x), rg, Aux::default())
    }

    /// Weighted mean with constant weights; panics if all weights are zero.
    pub fn masked_mean(&mut self, x: Var, weights: &[T]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), weights.len(), "masked_mean weight shape");
        let mut wsum = T::ZERO;
        let mut acc = T::ZERO;
        for (&v, &w) in xv.iter().zip(weights) {
            acc += v * w;
            wsum += w;
        }
        assert!(wsum > T::ZERO, "masked_mean: empty mask");
        let rg = self.requires_grad(x);
        self.push(
            vec![1],
            vec![acc / wsum],
            Op::MaskedMean(x),
            rg,
            Aux {
                fdata: weights.to_vec(),
                ..Aux::default()
            },
        )
    }

    /// x[N,...] * scale[N] broadcast over trailing dims.
    pub fn mul_per_item(&mut self, x: Var, scale: Var) -> Var {
        let sh = self.node(x).shape.clone();
        let n = sh[0];
        assert_eq!(self.node(scale).shape, vec![n], "mul_per_item scale shape");
        let rest: usize = sh[1..].iter().product();
        let xv = self.value(x);
        let sv = self.value(scale);
        let mut v = vec![T::ZERO; xv.len()];
        for i in 0..n {
            let si = sv[i];
            for p in 0..rest {
                v[i * rest + p] = xv[i * rest + p] * si;
            }
        }
        let rg = self.any_requires_grad(&[x, scale]);
        self.push(sh, v, Op::MulPerItem(x, scale), rg, Aux::default())
    }

    /// Forward difference along x; output has W-1 columns.
    pub fn diff_x(&mut self, x: Var) -> Var {
        let sh = self.node(x).shape.clone();
        assert_eq!(sh.len(), 4);
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        assert!(w >= 2);
        let xv = self.value(x);
        let mut v = vec![T::ZERO; n * c * h * (w - 1)];
        for i in 0..n * c * h {
            let src = i * w;
            let dst = i * (w - 1);
            for j in 0..w - 1 {
                v[dst + j] = xv[src + j + 1] - xv[src + j];
            }
        }
        let rg = self.requires_grad(x);
        self.push(vec![n, c, h, w - 1], v, Op::DiffX(x), rg, Aux::default())
    }

    /// Forward difference along y; output has H-1 rows.
    pub fn diff_y(&mut self, x: Var) -> Var {
        let sh = self.node(x).shape.clone();
        assert_eq!(sh.len(), 4);
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        assert!(h >= 2);
        let xv = self.value(x);
        let mut v = vec![T::ZERO; n * c * (h - 1) * w];
        for i in 0..n * c {
            for y in 0..h - 1 {
                let src = (i * h + y) * w;
                let dst = (i * (h - 1) + y) * w;
                for j in 0..w {
                    v[dst + j] = xv[src + w + j] - xv[src + j];
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(vec![n, c, h - 1, w], v, Op::DiffY(x), rg, Aux::default())
    }
}

#[inline]
fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// Pull a node apart for its backward step: (grad, op, aux, value).
fn take_node<T: Scalar>(g: &mut Graph<T>, id: usize) -> (Vec<T>, Op, Aux<T>, Vec<T>) {
    let n = &mut g.nodes[id];
    (
        n.grad.take().expect("backward on node without grad"),
        std::mem::replace(&mut n.op, Op::Leaf),
        std::mem::take(&mut n.aux),
        std::mem::take(&mut n.value),
    )
}

pub(crate) fn dispatch_backward<T: Scalar>(g: &mut Graph<T>, id: usize) {
    if matches!(g.nodes[id].op, Op::Leaf) {
        return;
    }
    let out_shape = g.nodes[id].shape.clone();
    let (gy, op, aux, yval) = take_node(g, id);
    match op {
        Op::Leaf => unreachable!(),
        Op::Add(a, b) => {
            if g.requires_grad(a) {
                g.accum_grad(a, gy.clone());
            }
            if g.requires_grad(b) {
                g.accum_grad(b, gy);
            }
        }
        Op::Sub(a, b) => {
            if g.requires_grad(b) {
                let neg: Vec<T> = gy.iter().map(|&v| -v).collect();
                g.accum_grad(b, neg);
            }
            if g.requires_grad(a) {
                g.accum_grad(a, gy);
            }
        }
        Op::Mul(a, b) => {
            if g.requires_grad(a) {
                let d: Vec<T> = gy
                    .iter()
                    .zip(g.value(b))
                    .map(|(&gi, &bi)| gi * bi)
                    .collect();
                g.accum_grad(a, d);
            }
            if g.requires_grad(b) {
                let d: Vec<T> = gy
                    .iter()
                    .zip(g.value(a))
                    .map(|(&gi, &ai)| gi * ai)
                    .collect();
                g.accum_grad(b, d);
            }
        }
        Op::Affine(x, a, _) => {
            if g.requires_grad(x) {
                let ta = s::<T>(a);
                let d: Vec<T> = gy.iter().map(|&gi| gi * ta).collect();
                g.accum_grad(x, d);
            }
        }
        Op::Abs(x) => {
            if g.requires_grad(x) {
                let d: Vec<T> = gy
                    .iter()
                    .zip(g.value(x))
                    .map(|(&gi, &xi)| {
                        if xi >= T::ZERO {
                            gi
                        } else {
                            -gi
                        }
                    })
                    .collect();
                g.accum_grad(x, d);
            }
        }
        Op::Exp(x) => {
            if g.requires_grad(x) {
                let d: Vec<T> = gy.iter().zip(&yval).map(|(&gi, &yi)| gi * yi).collect();
                g.accum_grad(x, d);
            }
        }
        Op::Recip(x) => {
            if g.requires_grad(x) {
                let d: Vec<T> = gy
                    .iter()
                    .zip(&yval)
                    .map(|(&gi, &yi)| -gi * yi * yi)
                    .collect();
                g.accum_grad(x, d);
            }
        }
        Op::Sigmoid(x) => {
            if g.requires_grad(x) {
                let d: Vec<T> = gy
                    .iter()
                    .zip(&yval)
                    .map(|(&gi, &yi)| gi * yi * (T::ONE - yi))
                    .collect();
                g.accum_grad(x, d);
            }
        }
        Op::Relu(x) => {
            if g.requires_grad(x) {
                let d: Vec<T> = gy
                    .iter()
                    .zip(g.value(x))
                    .map(|(&gi, &xi)| if xi > T::ZERO { gi } else { T::ZERO })
                    .collect();
                g.accum_grad(x, d);
            }
        }
        Op::Elu(x) => {
            if g.requires_grad(x) {
                let d: Vec<T> = gy
                    .iter()
                    .zip(g.value(x).iter().zip(&yval))
                    .map(|(&gi, (&xi, &yi))| if xi > T::ZERO { gi } else { gi * (yi + T::ONE) })
                    .collect();
                g.accum_grad(x, d);
            }
        }
        Op::MinAcross(xs) => {
            for (k, x) in xs.iter().enumerate() {
                if !g.requires_grad(*x) {
                    continue;
                }
                let d: Vec<T> = gy
                    .iter()
                    .zip(&aux.sel)
                    .map(|(&gi, &si)| if si as usize == k { gi } else { T::ZERO })
                    .collect();
                g.accum_grad(*x, d);
            }
        }
        Op::Concat(xs) => {
            let out_shape_c: usize = xs.iter().map(|x| g.shape(*x)[1]).sum();
            let n = g.shape(xs[0])[0];
            let rest: usize = g.shape(xs[0])[2..].iter().product();
            let mut c_off = 0;
            for x in xs {
                let c = g.shape(x)[1];
                if g.requires_grad(x) {
                    let mut d = vec![T::ZERO; n * c * rest];
                    for i in 0..n {
                        let src = (i * out_shape_c + c_off) * rest;
                        let dst = i * c * rest;
                        d[dst..dst + c * rest].copy_from_slice(&gy[src..src + c * rest]);
                    }
                    g.accum_grad(x, d);
                }
                c_off += c;
            }
        }
        Op::Narrow(x, start, len) => {
            if g.requires_grad(x) {
                let sh = g.shape(x);
                let n = sh[0];
                let c = sh[1];
                let rest: usize = sh[2..].iter().product();
                let mut d = vec![T::ZERO; n * c * rest];
                for i in 0..n {
                    let dst = (i * c + start) * rest;
                    let src = i * len * rest;
                    d[dst..dst + len * rest].copy_from_slice(&gy[src..src + len * rest]);
                }
                g.accum_grad(x, d);
            }
        }
        Op::MeanAll(x) => {
            if g.requires_grad(x) {
                let n = g.value(x).len();
                let gv = gy[0] / s::<T>(n as f64);
                g.accum_grad(x, vec![gv; n]);
            }
        }
        Op::MeanPerItem(x) => {
            if g.requires_grad(x) {
                let sh = g.shape(x);
                let n = sh[0];
                let rest: usize = sh[1..].iter().product();
                let inv = T::ONE / s::<T>(rest as f64);
                let mut d = vec![T::ZERO; n * rest];
                for i in 0..n {
                    let gv = gy[i] * inv;
                    for p in 0..rest {
                        d[i * rest + p] = gv;
                    }
                }
                g.accum_grad(x, d);
            }
        }
        Op::MeanC(x) => {
            if g.requires_grad(x) {
                let sh = g.shape(x);
                let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
                let hw = h * w;
                let inv = T::ONE / s::<T>(c as f64);
                let mut d = vec![T::ZERO; n * c * hw];
                for i in 0..n {
                    for ch in 0..c {
                        let dst = (i * c + ch) * hw;
                        for p in 0..hw {
                            d[dst + p] = gy[i * hw + p] * inv;
                        }
                    }
                }
                g.accum_grad(x, d);
            }
        }
        Op::MeanHW(x) => {
            if g.requires_grad(x) {
                let sh = g.shape(x);
                let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
                let hw = h * w;
                let inv = T::ONE / s::<T>(hw as f64);
                let mut d = vec![T::ZERO; n * c * hw];
                for i in 0..n * c {
                    let gv = gy[i] * inv;
                    for p in 0..hw {
                        d[i * hw + p] = gv;
                    }
                }
                g.accum_grad(x, d);
            }
        }
        Op::MaskedMean(x) => {
            if g.requires_grad(x) {
                let weights = &aux.fdata;
                let mut wsum = T::ZERO;
                for &w in weights {
                    wsum += w;
                }
                let gv = gy[0] / wsum;
                let d: Vec<T> = weights.iter().map(|&w| w * gv).collect();
                g.accum_grad(x, d);
            }
        }
        Op::MulPerItem(x, scale) => {
            let sh = g.shape(x).to_vec();
            let n = sh[0];
            let rest: usize = sh[1..].iter().product();
            if g.requires_grad(x) {
                let sv = g.value(scale).to_vec();
                let mut d = vec![T::ZERO; n * rest];
                for i in 0..n {
                    for p in 0..rest {
                        d[i * rest + p] = gy[i * rest + p] * sv[i];
                    }
                }
                g.accum_grad(x, d);
            }
            if g.requires_grad(scale) {
                let xv = g.value(x);
                let mut d = vec![T::ZERO; n];
                for i in 0..n {
                    let mut acc = T::ZERO;
                    for p in 0..rest {
                        acc += gy[i * rest + p] * xv[i * rest + p];
                    }
                    d[i] = acc;
                }
                g.accum_grad(scale, d);
            }
        }
        Op::DiffX(x) => {
            if g.requires_grad(x) {
                let sh = g.shape(x);
                let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
                let mut d = vec![T::ZERO; n * c * h * w];
                for i in 0..n * c * h {
                    let src = i * (w - 1);
                    let dst = i * w;
                    for j in 0..w - 1 {
                        let gv = gy[src + j];
                        d[dst + j + 1] += gv;
                        d[dst + j] -= gv;
                    }
                }
                g.accum_grad(x, d);
            }
        }
        Op::DiffY(x) => {
            if g.requires_grad(x) {
                let sh = g.shape(x);
                let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
                let mut d = vec![T::ZERO; n * c * h * w];
                for i in 0..n * c {
                    for y in 0..h - 1 {
                        let src = (i * (h - 1) + y) * w;
                        let dst = (i * h + y) * w;
                        for j in 0..w {
                            let gv = gy[src + j];
                            d[dst + w + j] += gv;
                            d[dst + j] -= gv;
                        }
                    }
                }
                g.accum_grad(x, d);
            }
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            nn::conv2d_backward(g, &gy, x, w, b, stride, pad);
        }
        Op::BatchNorm { x, gamma, beta } => {
            nn::batch_norm_backward(g, &gy, &aux.fdata, x, gamma, beta);
        }
        Op::MaxPool3x3s2(x) => {
            nn::max_pool_backward(g, &gy, &aux.idx, x);
        }
        Op::UpsampleNearest2(x) => {
            nn::upsample_nearest2_backward(g, &gy, x);
        }
        Op::UpsampleBilinear(x) => {
            nn::upsample_bilinear_backward(g, &gy, x, out_shape[2], out_shape[3]);
        }
        Op::BoxFilter3(x) => {
            nn::box_filter3_backward(g, &gy, x);
        }
        Op::PoseToMat(x) => {
            warp::pose_to_mat_backward(g, &gy, x);
        }
        Op::WarpCoords { depth, mat, intr } => {
            warp::warp_coords_backward(g, &gy, depth, mat, intr);
        }
        Op::GridSample { src, coords } => {
            warp::grid_sample_backward(g, &gy, src, coords);
        }
    }
}
