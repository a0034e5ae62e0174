use super::graph::{Aux, Graph, Op, Var};
use super::{s, Scalar};

const BN_EPS: f64 = 1e-5;

#[inline]
fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// x[c, iy, ix] unrolled to col[(c*k+di)*k+dj, oy*ow+ox] with zero padding.
fn im2col<T: Scalar>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    col: &mut [T],
) {
    let oh = conv_out(h, k, stride, pad);
    let ow = conv_out(w, k, stride, pad);
    let ohw = oh * ow;
    debug_assert_eq!(col.len(), c_in * k * k * ohw);
    for c in 0..c_in {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for di in 0..k {
            for dj in 0..k {
                let row = ((c * k + di) * k + dj) * ohw;
                for oy in 0..oh {
                    let iy = (oy * stride + di) as isize - pad as isize;
                    let dst = row + oy * ow;
                    if iy < 0 || iy >= h as isize {
                        col[dst..dst + ow].fill(T::ZERO);
                        continue;
                    }
                    let src = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + dj) as isize - pad as isize;
                        col[dst + ox] = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            xc[src + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Transpose of im2col: accumulates col entries back into the image.
fn col2im_accum<T: Scalar>(
    col: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    x_grad: &mut [T],
) {
    let oh = conv_out(h, k, stride, pad);
    let ow = conv_out(w, k, stride, pad);
    let ohw = oh * ow;
    for c in 0..c_in {
        let xc = &mut x_grad[c * h * w..(c + 1) * h * w];
        for di in 0..k {
            for dj in 0..k {
                let row = ((c * k + di) * k + dj) * ohw;
                for oy in 0..oh {
                    let iy = (oy * stride + di) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = iy as usize * w;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + dj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xc[dst_row + ix as usize] += col[src + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// 2D convolution, NCHW, square kernel, zero padding.
    /// w: [c_out, c_in, k, k], optional bias [c_out].
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d weight must be [co,ci,k,k]");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
        assert_eq!(ws[2], ws[3], "conv2d kernel must be square");
        let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, k) = (ws[0], ws[2]);
        let oh = conv_out(h, k, stride, pad);
        let ow = conv_out(wd, k, stride, pad);
        let ohw = oh * ow;
        let ckk = c_in * k * k;

        let mut out = vec![T::ZERO; n * c_out * ohw];
        let mut col = vec![T::ZERO; ckk * ohw];
        for i in 0..n {
            let xi = &self.value(x)[i * c_in * h * wd..(i + 1) * c_in * h * wd];
            im2col(xi, c_in, h, wd, k, stride, pad, &mut col);
            let wv = self.value(w);
            unsafe {
                T::gemm(
                    c_out,
                    ckk,
                    ohw,
                    T::ONE,
                    wv.as_ptr(),
                    ckk as isize,
                    1,
                    col.as_ptr(),
                    ohw as isize,
                    1,
                    T::ZERO,
                    out[i * c_out * ohw..].as_mut_ptr(),
                    ohw as isize,
                    1,
                );
            }
        }
        if let Some(bv) = b {
            let bias = self.value(bv).to_vec();
            assert_eq!(bias.len(), c_out, "conv2d bias shape");
            for i in 0..n {
                for oc in 0..c_out {
                    let base = (i * c_out + oc) * ohw;
                    let bb = bias[oc];
                    for p in 0..ohw {
                        out[base + p] += bb;
                    }
                }
            }
        }
        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        let rg = self.any_requires_grad(&parents);
        self.push(
            vec![n, c_out, oh, ow],
            out,
            Op::Conv2d { x, w, b, stride, pad },
            rg,
            Aux::default(),
        )
    }

    /// Batch normalization (training mode: batch statistics).
    /// Saved (mean, invstd) are retrievable via [`Graph::bn_stats`].
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert_eq!(self.shape(gamma), &[c]);
        assert_eq!(self.shape(beta), &[c]);
        let hw = h * w;
        let m = s::<T>((n * hw) as f64);

        let mut mean = vec![T::ZERO; c];
        let mut var = vec![T::ZERO; c];
        {
            let xv = self.value(x);
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * hw;
                    let mut acc = T::ZERO;
                    for p in 0..hw {
                        acc += xv[base + p];
                    }
                    mean[ch] += acc;
                }
            }
            for ch in 0..c {
                mean[ch] = mean[ch] / m;
            }
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * hw;
                    let mu = mean[ch];
                    let mut acc = T::ZERO;
                    for p in 0..hw {
                        let d = xv[base + p] - mu;
                        acc += d * d;
                    }
                    var[ch] += acc;
                }
            }
            for ch in 0..c {
                var[ch] = var[ch] / m;
            }
        }
        let invstd: Vec<T> = var
            .iter()
            .map(|&v| T::ONE / (v + s::<T>(BN_EPS)).sqrt())
            .collect();

        let mut out = vec![T::ZERO; n * c * hw];
        {
            let xv = self.value(x);
            let gv = self.value(gamma);
            let bv = self.value(beta);
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * hw;
                    let (mu, is, ga, be) = (mean[ch], invstd[ch], gv[ch], bv[ch]);
                    for p in 0..hw {
                        out[base + p] = (xv[base + p] - mu) * is * ga + be;
                    }
                }
            }
        }
        // fdata = mean ++ invstd ++ biased variance (variance only consumed by
        // the running-stat update on the host side).
        let mut fdata = mean;
        fdata.extend_from_slice(&invstd);
        fdata.extend_from_slice(&var);
        let rg = self.any_requires_grad(&[x, gamma, beta]);
        self.push(
            xs,
            out,
            Op::BatchNorm { x, gamma, beta },
            rg,
            Aux {
                fdata,
                ..Aux::default()
            },
        )
    }

    /// Batch statistics (mean, variance) saved by a [`Graph::batch_norm`] node.
    pub fn bn_stats(&self, v: Var) -> (&[T], &[T]) {
        let n = &self.nodes[v.idx()];
        assert!(matches!(n.op, Op::BatchNorm { .. }));
        let c = n.shape[1];
        (&n.aux.fdata[..c], &n.aux.fdata[2 * c..3 * c])
    }

    /// Normalization with fixed statistics (inference mode): an affine map.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let hw = h * w;
        assert_eq!(running_mean.len(), c);
        assert_eq!(running_var.len(), c);
        // y = g*(x-mu)*is + b expressed per channel as scale/shift constants
        let gv = self.value(gamma).to_vec();
        let bv = self.value(beta).to_vec();
        let xv = self.value(x);
        let mut out = vec![T::ZERO; xv.len()];
        for ch in 0..c {
            let is = T::ONE / (running_var[ch] + s::<T>(BN_EPS)).sqrt();
            let sc = gv[ch] * is;
            let sh = bv[ch] - running_mean[ch] * sc;
            for i in 0..n {
                let base = (i * c + ch) * hw;
                for p in 0..hw {
                    out[base + p] = xv[base + p] * sc + sh;
                }
            }
        }
        // Inference-only: treated as a constant transformation.
        assert!(
            !self.grad_enabled(),
            "batch_norm_eval is only valid on inference graphs"
        );
        self.constant(&xs, out)
    }

    /// 3x3 max pool, stride 2, padding 1 (the ResNet stem pool).
    pub fn max_pool_3x3s2(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let oh = conv_out(h, 3, 2, 1);
        let ow = conv_out(w, 3, 2, 1);
        let xv = self.value(x);
        let mut out = vec![T::ZERO; n * c * oh * ow];
        let mut idx = vec![0u32; n * c * oh * ow];
        for i in 0..n * c {
            let xc = &xv[i * h * w..(i + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = None;
                    let mut best_at = 0usize;
                    for di in 0..3usize {
                        let iy = (oy * 2 + di) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dj in 0..3usize {
                            let ix = (ox * 2 + dj) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let p = iy as usize * w + ix as usize;
                            let v = xc[p];
                            if best.map_or(true, |b| v > b) {
                                best = Some(v);
                                best_at = p;
                            }
                        }
                    }
                    let o = (i * oh + oy) * ow + ox;
                    out[o] = best.expect("pool window empty");
                    idx[o] = best_at as u32;
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            vec![n, c, oh, ow],
            out,
            Op::MaxPool3x3s2(x),
            rg,
            Aux {
                idx,
                ..Aux::default()
            },
        )
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h * 2, w * 2);
        let xv = self.value(x);
        let mut out = vec![T::ZERO; n * c * oh * ow];
        for i in 0..n * c {
            let src = &xv[i * h * w..(i + 1) * h * w];
            let dst = &mut out[i * oh * ow..(i + 1) * oh * ow];
            for oy in 0..oh {
                let sy = oy / 2 * w;
                let dy = oy * ow;
                for ox in 0..ow {
                    dst[dy + ox] = src[sy + ox / 2];
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            vec![n, c, oh, ow],
            out,
            Op::UpsampleNearest2(x),
            rg,
            Aux::default(),
        )
    }

    /// Bilinear resize to (oh, ow), endpoints aligned.
    pub fn upsample_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = self.value(x);
        let mut out = vec![T::ZERO; n * c * oh * ow];
        let sy = scale_factor(h, oh);
        let sx = scale_factor(w, ow);
        for i in 0..n * c {
            let src = &xv[i * h * w..(i + 1) * h * w];
            let dst = &mut out[i * oh * ow..(i + 1) * oh * ow];
            for oy in 0..oh {
                let fy = oy as f64 * sy;
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let wy = s::<T>(fy - y0 as f64);
                for ox in 0..ow {
                    let fx = ox as f64 * sx;
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let wx = s::<T>(fx - x0 as f64);
                    let tl = src[y0 * w + x0];
                    let tr = src[y0 * w + x1];
                    let bl = src[y1 * w + x0];
                    let br = src[y1 * w + x1];
                    let top = tl + (tr - tl) * wx;
                    let bot = bl + (br - bl) * wx;
                    dst[oy * ow + ox] = top + (bot - top) * wy;
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            vec![n, c, oh, ow],
            out,
            Op::UpsampleBilinear(x),
            rg,
            Aux::default(),
        )
    }

    /// 3x3 mean filter; windows are clipped at the border and normalized by
    /// the number of in-bounds taps, so a constant image stays constant.
    pub fn box_filter3(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = self.value(x);
        let mut out = vec![T::ZERO; xv.len()];
        for i in 0..n * c {
            let src = &xv[i * h * w..(i + 1) * h * w];
            let dst = &mut out[i * h * w..(i + 1) * h * w];
            box3(src, h, w, dst);
        }
        let rg = self.requires_grad(x);
        self.push(xs, out, Op::BoxFilter3(x), rg, Aux::default())
    }
}

#[inline]
fn scale_factor(input: usize, output: usize) -> f64 {
    if output > 1 {
        (input - 1) as f64 / (output - 1) as f64
    } else {
        0.0
    }
}

fn box3<T: Scalar>(src: &[T], h: usize, w: usize, dst: &mut [T]) {
    for y in 0..h {
        let y0 = y.saturating_sub(1);
        let y1 = (y + 1).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(w - 1);
            let mut acc = T::ZERO;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    acc += src[yy * w + xx];
                }
            }
            let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            dst[y * w + x] = acc / s::<T>(count);
        }
    }
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &mut Graph<T>,
    gy: &[T],
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
) {
    let xs = g.shape(x).to_vec();
    let ws = g.shape(w).to_vec();
    let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, k) = (ws[0], ws[2]);
    let oh = conv_out(h, k, stride, pad);
    let ow = conv_out(wd, k, stride, pad);
    let ohw = oh * ow;
    let ckk = c_in * k * k;

    let need_x = g.requires_grad(x);
    let need_w = g.requires_grad(w);
    let need_b = b.map_or(false, |bv| g.requires_grad(bv));

    if need_b {
        let bv = b.unwrap();
        let mut db = vec![T::ZERO; c_out];
        for i in 0..n {
            for oc in 0..c_out {
                let base = (i * c_out + oc) * ohw;
                let mut acc = T::ZERO;
                for p in 0..ohw {
                    acc += gy[base + p];
                }
                db[oc] += acc;
            }
        }
        g.accum_grad(bv, db);
    }

    if need_w {
        g.ensure_grad(w);
    }
    if need_x {
        g.ensure_grad(x);
    }

    let mut col = vec![T::ZERO; ckk * ohw];
    let mut dcol = vec![T::ZERO; ckk * ohw];
    for i in 0..n {
        if need_w {
            // dW += dY_i * col_i^T  (recompute col to avoid caching it)
            {
                let xv = g.value(x);
                im2col(
                    &xv[i * c_in * h * wd..(i + 1) * c_in * h * wd],
                    c_in,
                    h,
                    wd,
                    k,
                    stride,
                    pad,
                    &mut col,
                );
            }
            let dw = g.nodes[w.idx()].grad.as_mut().unwrap();
            unsafe {
                T::gemm(
                    c_out,
                    ohw,
                    ckk,
                    T::ONE,
                    gy[i * c_out * ohw..].as_ptr(),
                    ohw as isize,
                    1,
                    col.as_ptr(),
                    1,
                    ohw as isize,
                    T::ONE,
                    dw.as_mut_ptr(),
                    ckk as isize,
                    1,
                );
            }
        }
        if need_x {
            // dcol = W^T * dY_i, then scatter back to the image
            {
                let wv = g.value(w);
                unsafe {
                    T::gemm(
                        ckk,
                        c_out,
                        ohw,
                        T::ONE,
                        wv.as_ptr(),
                        1,
                        ckk as isize,
                        gy[i * c_out * ohw..].as_ptr(),
                        ohw as isize,
                        1,
                        T::ZERO,
                        dcol.as_mut_ptr(),
                        ohw as isize,
                        1,
                    );
                }
            }
            let dx = g.nodes[x.idx()].grad.as_mut().unwrap();
            col2im_accum(
                &dcol,
                c_in,
                h,
                wd,
                k,
                stride,
                pad,
                &mut dx[i * c_in * h * wd..(i + 1) * c_in * h * wd],
            );
        }
    }
}

pub(crate) fn batch_norm_backward<T: Scalar>(
    g: &mut Graph<T>,
    gy: &[T],
    fdata: &[T],
    x: Var,
    gamma: Var,
    beta: Var,
) {
    let xs = g.shape(x).to_vec();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let hw = h * w;
    let m = s::<T>((n * hw) as f64);
    let mean = &fdata[..c];
    let invstd = &fdata[c..2 * c];

    // Per-channel sums over the batch: sum(dy) and sum(dy * xhat).
    let mut sum_dy = vec![T::ZERO; c];
    let mut sum_dy_xhat = vec![T::ZERO; c];
    {
        let xv = g.value(x);
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let (mu, is) = (mean[ch], invstd[ch]);
                let mut a0 = T::ZERO;
                let mut a1 = T::ZERO;
                for p in 0..hw {
                    let dy = gy[base + p];
                    a0 += dy;
                    a1 += dy * (xv[base + p] - mu) * is;
                }
                sum_dy[ch] += a0;
                sum_dy_xhat[ch] += a1;
            }
        }
    }

    if g.requires_grad(beta) {
        g.accum_grad(beta, sum_dy.clone());
    }
    if g.requires_grad(gamma) {
        g.accum_grad(gamma, sum_dy_xhat.clone());
    }
    if g.requires_grad(x) {
        let gv = g.value(gamma).to_vec();
        let xv = g.value(x);
        let mut dx = vec![T::ZERO; xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let (mu, is, ga) = (mean[ch], invstd[ch], gv[ch]);
                let k1 = sum_dy[ch] / m;
                let k2 = sum_dy_xhat[ch] / m;
                for p in 0..hw {
                    let xhat = (xv[base + p] - mu) * is;
                    dx[base + p] = ga * is * (gy[base + p] - k1 - xhat * k2);
                }
            }
        }
        g.accum_grad(x, dx);
    }
}

pub(crate) fn max_pool_backward<T: Scalar>(g: &mut Graph<T>, gy: &[T], idx: &[u32], x: Var) {
    if !g.requires_grad(x) {
        return;
    }
    let xs = g.shape(x).to_vec();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let oh = conv_out(h, 3, 2, 1);
    let ow = conv_out(w, 3, 2, 1);
    let mut dx = vec![T::ZERO; n * c * h * w];
    for i in 0..n * c {
        let base_in = i * h * w;
        let base_out = i * oh * ow;
        for p in 0..oh * ow {
            dx[base_in + idx[base_out + p] as usize] += gy[base_out + p];
        }
    }
    g.accum_grad(x, dx);
}

pub(crate) fn upsample_nearest2_backward<T: Scalar>(g: &mut Graph<T>, gy: &[T], x: Var) {
    if !g.requires_grad(x) {
        return;
    }
    let xs = g.shape(x).to_vec();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (oh, ow) = (h * 2, w * 2);
    let mut dx = vec![T::ZERO; n * c * h * w];
    for i in 0..n * c {
        let src = &gy[i * oh * ow..(i + 1) * oh * ow];
        let dst = &mut dx[i * h * w..(i + 1) * h * w];
        for oy in 0..oh {
            let sy = oy / 2 * w;
            let gy_row = oy * ow;
            for ox in 0..ow {
                dst[sy + ox / 2] += src[gy_row + ox];
            }
        }
    }
    g.accum_grad(x, dx);
}

pub(crate) fn upsample_bilinear_backward<T: Scalar>(
    g: &mut Graph<T>,
    gy: &[T],
    x: Var,
    oh: usize,
    ow: usize,
) {
    if !g.requires_grad(x) {
        return;
    }
    let xs = g.shape(x).to_vec();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let sy = scale_factor(h, oh);
    let sx = scale_factor(w, ow);
    let mut dx = vec![T::ZERO; n * c * h * w];
    for i in 0..n * c {
        let src = &gy[i * oh * ow..(i + 1) * oh * ow];
        let dst = &mut dx[i * h * w..(i + 1) * h * w];
        for oy in 0..oh {
            let fy = oy as f64 * sy;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = s::<T>(fy - y0 as f64);
            for ox in 0..ow {
                let fx = ox as f64 * sx;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = s::<T>(fx - x0 as f64);
                let gv = src[oy * ow + ox];
                let one = T::ONE;
                dst[y0 * w + x0] += gv * (one - wy) * (one - wx);
                dst[y0 * w + x1] += gv * (one - wy) * wx;
                dst[y1 * w + x0] += gv * wy * (one - wx);
                dst[y1 * w + x1] += gv * wy * wx;
            }
        }
    }
    g.accum_grad(x, dx);
}

pub(crate) fn box_filter3_backward<T: Scalar>(g: &mut Graph<T>, gy: &[T], x: Var) {
    if !g.requires_grad(x) {
        return;
    }
    let xs = g.shape(x).to_vec();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let mut dx = vec![T::ZERO; gy.len()];
    for i in 0..n * c {
        let src = &gy[i * h * w..(i + 1) * h * w];
        let dst = &mut dx[i * h * w..(i + 1) * h * w];
        for y in 0..h {
            let y0 = y.saturating_sub(1);
            let y1 = (y + 1).min(h - 1);
            for x_ in 0..w {
                let x0 = x_.saturating_sub(1);
                let x1 = (x_ + 1).min(w - 1);
                let count = s::<T>(((y1 - y0 + 1) * (x1 - x0 + 1)) as f64);
                let gv = src[y * w + x_] / count;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        dst[yy * w + xx] += gv;
                    }
                }
            }
        }
    }
    g.accum_grad(x, dx);
}
