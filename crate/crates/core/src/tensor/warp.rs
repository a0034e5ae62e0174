//! Differentiable pinhole reprojection: axis-angle poses to matrices,
//! backprojection/projection to sampling coordinates, bilinear sampling.

use super::graph::{Aux, Graph, Op, Var};
use super::{s, Scalar};

/// Depth clamp in front of the perspective divide; points with smaller z
/// are marked invalid.
pub const Z_MIN: f64 = 1e-3;

/// Rodrigues coefficients a = sin t / t, b = (1-cos t)/t^2 and the radial
/// derivative factors ga = a'/t, gb = b'/t, with Taylor fallbacks near zero.
#[inline]
pub(crate) fn rodrigues_coeffs(theta_sq: f64) -> (f64, f64, f64, f64) {
    if theta_sq > 1e-14 {
        let t = theta_sq.sqrt();
        let (sin_t, cos_t) = t.sin_cos();
        let a = sin_t / t;
        let b = (1.0 - cos_t) / theta_sq;
        let ga = (t * cos_t - sin_t) / (theta_sq * t);
        let gb = (t * sin_t - 2.0 * (1.0 - cos_t)) / (theta_sq * theta_sq);
        (a, b, ga, gb)
    } else {
        (
            1.0 - theta_sq / 6.0,
            0.5 - theta_sq / 24.0,
            -(1.0 / 3.0) + theta_sq / 30.0,
            -(1.0 / 12.0) + theta_sq / 180.0,
        )
    }
}

/// 3x3 rotation matrix (row-major) from an axis-angle 3-vector.
pub(crate) fn rotation_from_axis_angle(w: [f64; 3]) -> [f64; 9] {
    let theta_sq = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b, _, _) = rodrigues_coeffs(theta_sq);
    let (wx, wy, wz) = (w[0], w[1], w[2]);
    // R = I + a*W + b*(w w^T - theta^2 I)
    [
        1.0 + b * (wx * wx - theta_sq),
        -a * wz + b * wx * wy,
        a * wy + b * wx * wz,
        a * wz + b * wy * wx,
        1.0 + b * (wy * wy - theta_sq),
        -a * wx + b * wy * wz,
        -a * wy + b * wz * wx,
        a * wx + b * wz * wy,
        1.0 + b * (wz * wz - theta_sq),
    ]
}

/// Levi-Civita symbol eps[i][j][k].
#[inline]
fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// dR/dw contracted with an incoming gradient dL/dR (row-major 3x3).
pub(crate) fn rotation_backward(w: [f64; 3], dr: &[f64; 9]) -> [f64; 3] {
    let theta_sq = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b, ga, gb) = rodrigues_coeffs(theta_sq);
    let mut dw = [0.0f64; 3];
    for k in 0..3 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                // W_ij = -eps_{ijm} w_m ; dW_ij/dw_k = -eps_{ijk}
                let w_ij = -(levi_civita(i, j, 0) * w[0]
                    + levi_civita(i, j, 1) * w[1]
                    + levi_civita(i, j, 2) * w[2]);
                let delta = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
                let wsq_ij = w[i] * w[j] - theta_sq * delta(i, j);
                let dwsq = delta(i, k) * w[j] + w[i] * delta(j, k) - 2.0 * w[k] * delta(i, j);
                let d_rij = ga * w[k] * w_ij + a * (-levi_civita(i, j, k))
                    + gb * w[k] * wsq_ij
                    + b * dwsq;
                acc += dr[i * 3 + j] * d_rij;
            }
        }
        dw[k] = acc;
    }
    dw
}

impl<T: Scalar> Graph<T> {
    /// Axis-angle + translation [N,6] -> row-major rigid transforms [N,12].
    pub fn pose_to_mat(&mut self, pose: Var) -> Var {
        let sh = self.shape(pose).to_vec();
        assert_eq!(sh.len(), 2);
        assert_eq!(sh[1], 6, "pose must be [N,6]");
        let n = sh[0];
        let pv = self.value(pose);
        let mut out = vec![T::ZERO; n * 12];
        for i in 0..n {
            let p = &pv[i * 6..(i + 1) * 6];
            let w = [p[0].to_f64(), p[1].to_f64(), p[2].to_f64()];
            let r = rotation_from_axis_angle(w);
            let m = &mut out[i * 12..(i + 1) * 12];
            for row in 0..3 {
                for col in 0..3 {
                    m[row * 4 + col] = s::<T>(r[row * 3 + col]);
                }
                m[row * 4 + 3] = p[3 + row];
            }
        }
        let rg = self.requires_grad(pose);
        self.push(vec![n, 12], out, Op::PoseToMat(pose), rg, Aux::default())
    }

    /// Reprojection coordinates for inverse warping.
    ///
    /// depth [N,1,H,W], mat [N,12] (reference-to-source rigid transform),
    /// intr [N,4] = (fx, fy, cx, cy). Returns ([N,2,H,W] pixel coordinates
    /// into the source image, [N,1,H,W] validity mask as a constant).
    /// Invalid pixels (z' <= Z_MIN or out of bounds) are masked; z-invalid
    /// coordinates are clamped to zero.
    pub fn warp_coords(&mut self, depth: Var, mat: Var, intr: Var) -> (Var, Var) {
        let ds = self.shape(depth).to_vec();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds[1], 1, "depth must be [N,1,H,W]");
        let (n, h, w) = (ds[0], ds[2], ds[3]);
        assert_eq!(self.shape(mat), &[n, 12]);
        assert_eq!(self.shape(intr), &[n, 4]);

        let hw = h * w;
        let mut coords = vec![T::ZERO; n * 2 * hw];
        let mut mask = vec![T::ZERO; n * hw];
        {
            let dv = self.value(depth);
            let mv = self.value(mat);
            let iv = self.value(intr);
            for i in 0..n {
                let m: Vec<f64> = mv[i * 12..(i + 1) * 12].iter().map(|v| v.to_f64()).collect();
                let fx = iv[i * 4].to_f64();
                let fy = iv[i * 4 + 1].to_f64();
                let cx = iv[i * 4 + 2].to_f64();
                let cy = iv[i * 4 + 3].to_f64();
                for py in 0..h {
                    for px in 0..w {
                        let p = py * w + px;
                        let d = dv[i * hw + p].to_f64();
                        let xn = (px as f64 - cx) / fx;
                        let yn = (py as f64 - cy) / fy;
                        let x0 = d * xn;
                        let y0 = d * yn;
                        let z0 = d;
                        let xp = m[0] * x0 + m[1] * y0 + m[2] * z0 + m[3];
                        let yp = m[4] * x0 + m[5] * y0 + m[6] * z0 + m[7];
                        let zp = m[8] * x0 + m[9] * y0 + m[10] * z0 + m[11];
                        if zp <= Z_MIN {
                            // masked; coords stay zero
                            continue;
                        }
                        let u = fx * xp / zp + cx;
                        let v = fy * yp / zp + cy;
                        coords[(i * 2) * hw + p] = s::<T>(u);
                        coords[(i * 2 + 1) * hw + p] = s::<T>(v);
                        if u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64 {
                            mask[i * hw + p] = T::ONE;
                        }
                    }
                }
            }
        }
        let rg = self.any_requires_grad(&[depth, mat, intr]);
        let coords_var = self.push(
            vec![n, 2, h, w],
            coords,
            Op::WarpCoords { depth, mat, intr },
            rg,
            Aux::default(),
        );
        let mask_var = self.constant(&[n, 1, h, w], mask);
        (coords_var, mask_var)
    }

    /// Bilinear sampling of src at per-pixel coordinates.
    /// src [N,C,Hs,Ws], coords [N,2,H,W] -> [N,C,H,W]; out-of-bounds
    /// coordinates produce zero.
    pub fn grid_sample(&mut self, src: Var, coords: Var) -> Var {
        let ss = self.shape(src).to_vec();
        let cs = self.shape(coords).to_vec();
        assert_eq!(ss.len(), 4);
        assert_eq!(cs.len(), 4);
        assert_eq!(cs[1], 2, "coords must be [N,2,H,W]");
        assert_eq!(ss[0], cs[0], "grid_sample batch mismatch");
        let (n, c, hs, ws) = (ss[0], ss[1], ss[2], ss[3]);
        let (h, w) = (cs[2], cs[3]);
        let hw = h * w;
        let shw = hs * ws;
        let mut out = vec![T::ZERO; n * c * hw];
        {
            let sv = self.value(src);
            let cv = self.value(coords);
            for i in 0..n {
                for p in 0..hw {
                    let u = cv[(i * 2) * hw + p].to_f64();
                    let v = cv[(i * 2 + 1) * hw + p].to_f64();
                    if !(0.0..=(ws - 1) as f64).contains(&u) || !(0.0..=(hs - 1) as f64).contains(&v)
                    {
                        continue;
                    }
                    let x0 = u.floor() as usize;
                    let y0 = v.floor() as usize;
                    let x1 = (x0 + 1).min(ws - 1);
                    let y1 = (y0 + 1).min(hs - 1);
                    let wx = s::<T>(u - x0 as f64);
                    let wy = s::<T>(v - y0 as f64);
                    for ch in 0..c {
                        let sc = &sv[(i * c + ch) * shw..(i * c + ch + 1) * shw];
                        let tl = sc[y0 * ws + x0];
                        let tr = sc[y0 * ws + x1];
                        let bl = sc[y1 * ws + x0];
                        let br = sc[y1 * ws + x1];
                        let top = tl + (tr - tl) * wx;
                        let bot = bl + (br - bl) * wx;
                        out[(i * c + ch) * hw + p] = top + (bot - top) * wy;
                    }
                }
            }
        }
        let rg = self.any_requires_grad(&[src, coords]);
        self.push(
            vec![n, c, h, w],
            out,
            Op::GridSample { src, coords },
            rg,
            Aux::default(),
        )
    }
}

pub(crate) fn pose_to_mat_backward<T: Scalar>(g: &mut Graph<T>, gy: &[T], pose: Var) {
    if !g.requires_grad(pose) {
        return;
    }
    let n = g.shape(pose)[0];
    let pv = g.value(pose);
    let mut dp = vec![T::ZERO; n * 6];
    for i in 0..n {
        let p = &pv[i * 6..(i + 1) * 6];
        let w = [p[0].to_f64(), p[1].to_f64(), p[2].to_f64()];
        let m = &gy[i * 12..(i + 1) * 12];
        let mut dr = [0.0f64; 9];
        for row in 0..3 {
            for col in 0..3 {
                dr[row * 3 + col] = m[row * 4 + col].to_f64();
            }
        }
        let dw = rotation_backward(w, &dr);
        for k in 0..3 {
            dp[i * 6 + k] = s::<T>(dw[k]);
            dp[i * 6 + 3 + k] = m[k * 4 + 3];
        }
    }
    g.accum_grad(pose, dp);
}

pub(crate) fn warp_coords_backward<T: Scalar>(
    g: &mut Graph<T>,
    gy: &[T],
    depth: Var,
    mat: Var,
    intr: Var,
) {
    let ds = g.shape(depth).to_vec();
    let (n, h, w) = (ds[0], ds[2], ds[3]);
    let hw = h * w;
    let need_d = g.requires_grad(depth);
    let need_m = g.requires_grad(mat);
    let need_i = g.requires_grad(intr);

    let mut dd = vec![T::ZERO; n * hw];
    let mut dm = vec![T::ZERO; n * 12];
    let mut di = vec![T::ZERO; n * 4];
    {
        let dv = g.value(depth);
        let mv = g.value(mat);
        let iv = g.value(intr);
        for i in 0..n {
            let m: Vec<f64> = mv[i * 12..(i + 1) * 12].iter().map(|v| v.to_f64()).collect();
            let fx = iv[i * 4].to_f64();
            let fy = iv[i * 4 + 1].to_f64();
            let cx = iv[i * 4 + 2].to_f64();
            let cy = iv[i * 4 + 3].to_f64();
            for py in 0..h {
                for px in 0..w {
                    let p = py * w + px;
                    let d = dv[i * hw + p].to_f64();
                    let xn = (px as f64 - cx) / fx;
                    let yn = (py as f64 - cy) / fy;
                    let x0 = d * xn;
                    let y0 = d * yn;
                    let z0 = d;
                    let xp = m[0] * x0 + m[1] * y0 + m[2] * z0 + m[3];
                    let yp = m[4] * x0 + m[5] * y0 + m[6] * z0 + m[7];
                    let zp = m[8] * x0 + m[9] * y0 + m[10] * z0 + m[11];
                    if zp <= Z_MIN {
                        continue; // clamped coords: zero gradient
                    }
                    let gu = gy[(i * 2) * hw + p].to_f64();
                    let gv = gy[(i * 2 + 1) * hw + p].to_f64();
                    if gu == 0.0 && gv == 0.0 {
                        continue;
                    }
                    // u = fx*xp/zp + cx, v = fy*yp/zp + cy
                    let dxp = gu * fx / zp;
                    let dyp = gv * fy / zp;
                    let dzp = -(gu * fx * xp + gv * fy * yp) / (zp * zp);
                    if need_m {
                        let dmi = &mut dm[i * 12..(i + 1) * 12];
                        dmi[0] += s::<T>(dxp * x0);
                        dmi[1] += s::<T>(dxp * y0);
                        dmi[2] += s::<T>(dxp * z0);
                        dmi[3] += s::<T>(dxp);
                        dmi[4] += s::<T>(dyp * x0);
                        dmi[5] += s::<T>(dyp * y0);
                        dmi[6] += s::<T>(dyp * z0);
                        dmi[7] += s::<T>(dyp);
                        dmi[8] += s::<T>(dzp * x0);
                        dmi[9] += s::<T>(dzp * y0);
                        dmi[10] += s::<T>(dzp * z0);
                        dmi[11] += s::<T>(dzp);
                    }
                    // dL/dX = R^T . dL/dX'
                    let dx0 = m[0] * dxp + m[4] * dyp + m[8] * dzp;
                    let dy0 = m[1] * dxp + m[5] * dyp + m[9] * dzp;
                    let dz0 = m[2] * dxp + m[6] * dyp + m[10] * dzp;
                    if need_d {
                        dd[i * hw + p] += s::<T>(dx0 * xn + dy0 * yn + dz0);
                    }
                    if need_i {
                        let dii = &mut di[i * 4..(i + 1) * 4];
                        // projection side
                        dii[0] += s::<T>(gu * xp / zp);
                        dii[1] += s::<T>(gv * yp / zp);
                        dii[2] += s::<T>(gu);
                        dii[3] += s::<T>(gv);
                        // backprojection side: x0 = d*(px-cx)/fx etc.
                        dii[0] += s::<T>(dx0 * (-x0 / fx));
                        dii[1] += s::<T>(dy0 * (-y0 / fy));
                        dii[2] += s::<T>(dx0 * (-d / fx));
                        dii[3] += s::<T>(dy0 * (-d / fy));
                    }
                }
            }
        }
    }
    if need_d {
        g.accum_grad(depth, dd);
    }
    if need_m {
        g.accum_grad(mat, dm);
    }
    if need_i {
        g.accum_grad(intr, di);
    }
}

pub(crate) fn grid_sample_backward<T: Scalar>(g: &mut Graph<T>, gy: &[T], src: Var, coords: Var) {
    let ss = g.shape(src).to_vec();
    let cs = g.shape(coords).to_vec();
    let (n, c, hs, ws) = (ss[0], ss[1], ss[2], ss[3]);
    let (h, w) = (cs[2], cs[3]);
    let hw = h * w;
    let shw = hs * ws;
    let need_src = g.requires_grad(src);
    let need_coords = g.requires_grad(coords);

    let mut dsrc = vec![T::ZERO; if need_src { n * c * shw } else { 0 }];
    let mut dcoords = vec![T::ZERO; if need_coords { n * 2 * hw } else { 0 }];
    {
        let sv = g.value(src);
        let cv = g.value(coords);
        for i in 0..n {
            for p in 0..hw {
                let u = cv[(i * 2) * hw + p].to_f64();
                let v = cv[(i * 2 + 1) * hw + p].to_f64();
                if !(0.0..=(ws - 1) as f64).contains(&u) || !(0.0..=(hs - 1) as f64).contains(&v) {
                    continue;
                }
                let x0 = u.floor() as usize;
                let y0 = v.floor() as usize;
                let x1 = (x0 + 1).min(ws - 1);
                let y1 = (y0 + 1).min(hs - 1);
                let wx = s::<T>(u - x0 as f64);
                let wy = s::<T>(v - y0 as f64);
                let one = T::ONE;
                let mut du = T::ZERO;
                let mut dv = T::ZERO;
                for ch in 0..c {
                    let gyv = gy[(i * c + ch) * hw + p];
                    if gyv == T::ZERO {
                        continue;
                    }
                    let base = (i * c + ch) * shw;
                    let tl = sv[base + y0 * ws + x0];
                    let tr = sv[base + y0 * ws + x1];
                    let bl = sv[base + y1 * ws + x0];
                    let br = sv[base + y1 * ws + x1];
                    if need_src {
                        dsrc[base + y0 * ws + x0] += gyv * (one - wy) * (one - wx);
                        dsrc[base + y0 * ws + x1] += gyv * (one - wy) * wx;
                        dsrc[base + y1 * ws + x0] += gyv * wy * (one - wx);
                        dsrc[base + y1 * ws + x1] += gyv * wy * wx;
                    }
                    if need_coords {
                        du += gyv * ((tr - tl) * (one - wy) + (br - bl) * wy);
                        dv += gyv * ((bl - tl) * (one - wx) + (br - tr) * wx);
                    }
                }
                if need_coords {
                    dcoords[(i * 2) * hw + p] = du;
                    dcoords[(i * 2 + 1) * hw + p] = dv;
                }
            }
        }
    }
    if need_src {
        g.accum_grad(src, dsrc);
    }
    if need_coords {
        g.accum_grad(coords, dcoords);
    }
}
