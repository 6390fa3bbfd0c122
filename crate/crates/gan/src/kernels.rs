//! Raw numeric kernels behind the differentiable ops.

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, all row-major unless the
/// transpose flags swap strides.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover every index reachable with these strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one `[c, h, w]` image into `[c*k*k, h*w]` patches with zero
/// padding `k / 2` (same-size output, stride 1).
pub fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize, col: &mut [f32]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let d = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        d.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    shift_copy(src, d, dx);
                }
            }
        }
    }
}

/// `d[x] = src[x + off]`, zero where out of range.
#[inline]
fn shift_copy(src: &[f32], d: &mut [f32], off: isize) {
    let w = d.len();
    if off >= 0 {
        let o = (off as usize).min(w);
        d[..w - o].copy_from_slice(&src[o..]);
        d[w - o..].fill(0.0);
    } else {
        let o = ((-off) as usize).min(w);
        d[o..].copy_from_slice(&src[..w - o]);
        d[..o].fill(0.0);
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, x: &mut [f32]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s = &src[y * w..(y + 1) * w];
                    let d = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    // d[x + dx] += s[x]
                    if dx >= 0 {
                        let o = (dx as usize).min(w);
                        for (dv, sv) in d[o..].iter_mut().zip(&s[..w - o]) {
                            *dv += sv;
                        }
                    } else {
                        let o = ((-dx) as usize).min(w);
                        for (dv, sv) in d[..w - o].iter_mut().zip(&s[o..]) {
                            *dv += sv;
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 convolution of a batch. `w` is `[o, c*k*k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f32],
    b: usize,
    c: usize,
    h: usize,
    wd: usize,
    weight: &[f32],
    bias: Option<&[f32]>,
    o: usize,
    k: usize,
    out: &mut [f32],
) {
    let hw = h * wd;
    let ckk = c * k * k;
    let mut col = if k == 1 { Vec::new() } else { vec![0.0; ckk * hw] };
    for bi in 0..b {
        let xb = &x[bi * c * hw..(bi + 1) * c * hw];
        let yb = &mut out[bi * o * hw..(bi + 1) * o * hw];
        let cols: &[f32] = if k == 1 {
            xb
        } else {
            im2col(xb, c, h, wd, k, &mut col);
            &col
        };
        match bias {
            Some(bs) => {
                for (oi, &bv) in bs.iter().enumerate() {
                    yb[oi * hw..(oi + 1) * hw].fill(bv);
                }
                gemm(o, ckk, hw, weight, false, cols, false, yb, 1.0);
            }
            None => gemm(o, ckk, hw, weight, false, cols, false, yb, 0.0),
        }
    }
}

/// Gradients of [`conv2d_forward`]; each output slot is filled only when
/// requested and is accumulated into (not overwritten).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f32],
    b: usize,
    c: usize,
    h: usize,
    wd: usize,
    weight: &[f32],
    o: usize,
    k: usize,
    dy: &[f32],
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    let hw = h * wd;
    let ckk = c * k * k;
    if let Some(db) = db {
        for bi in 0..b {
            for oi in 0..o {
                let s: f32 = dy[(bi * o + oi) * hw..(bi * o + oi + 1) * hw].iter().sum();
                db[oi] += s;
            }
        }
    }
    if let Some(dw) = dw {
        let mut col = if k == 1 { Vec::new() } else { vec![0.0; ckk * hw] };
        for bi in 0..b {
            let xb = &x[bi * c * hw..(bi + 1) * c * hw];
            let cols: &[f32] = if k == 1 {
                xb
            } else {
                im2col(xb, c, h, wd, k, &mut col);
                &col
            };
            let dyb = &dy[bi * o * hw..(bi + 1) * o * hw];
            // dw[o, ckk] += dy[o, hw] * cols[ckk, hw]^T
            gemm(o, hw, ckk, dyb, false, cols, true, dw, 1.0);
        }
    }
    if let Some(dx) = dx {
        let mut dcol = vec![0.0; ckk * hw];
        for bi in 0..b {
            let dyb = &dy[bi * o * hw..(bi + 1) * o * hw];
            let dxb = &mut dx[bi * c * hw..(bi + 1) * c * hw];
            if k == 1 {
                gemm(ckk, o, hw, weight, true, dyb, false, dxb, 1.0);
            } else {
                gemm(ckk, o, hw, weight, true, dyb, false, &mut dcol, 0.0);
                col2im(&dcol, c, h, wd, k, dxb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f32], c: usize, h: usize, w: usize, wt: &[f32], o: usize, k: usize) -> Vec<f32> {
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; o * h * w];
        for oi in 0..o {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    s += wt[oi * c * k * k + (ci * k + ky) * k + kx]
                                        * x[(ci * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[(oi * h + y) * w + xx] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let (c, h, w, o) = (3, 7, 5, 4);
        for k in [1, 3, 5] {
            let x: Vec<f32> = (0..c * h * w).map(|i| ((i * 37 % 11) as f32 - 5.0) / 7.0).collect();
            let wt: Vec<f32> = (0..o * c * k * k).map(|i| ((i * 13 % 7) as f32 - 3.0) / 5.0).collect();
            let mut out = vec![0.0; o * h * w];
            conv2d_forward(&x, 1, c, h, w, &wt, None, o, k, &mut out);
            let want = naive_conv(&x, c, h, w, &wt, o, k);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-4, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w, k) = (2, 4, 6, 3);
        let x: Vec<f32> = (0..c * h * w).map(|i| (i as f32 * 0.37).sin()).collect();
        let y: Vec<f32> = (0..c * k * k * h * w).map(|i| (i as f32 * 0.11).cos()).collect();
        let mut col = vec![0.0; c * k * k * h * w];
        im2col(&x, c, h, w, k, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| (a * b) as f64).sum();
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, k, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
