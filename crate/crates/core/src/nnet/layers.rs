//! Channel-major feature maps and the layer primitives with their adjoints.

/// `c` channels of `h`×`w`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        let p = self.plane();
        &self.data[i * p..(i + 1) * p]
    }
}

/// Gathers k×k zero-padded neighbourhoods into a (c·k·k)×(h·w) matrix.
fn im2col(x: &Tensor, k: usize) -> Vec<f64> {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let r = (k / 2) as isize;
    let mut col = vec![0.0; x.c * k * k * hw];
    for ci in 0..x.c {
        let src = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let s = sy as usize * w;
                    let d = &mut dst[y * w + x0..y * w + x1];
                    let from = (s as isize + x0 as isize + dx) as usize;
                    d.copy_from_slice(&src[from..from + (x1 - x0)]);
                }
            }
        }
    }
    col
}

/// Scatter-adds a column matrix back onto a c×h×w map (adjoint of `im2col`).
fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize) -> Tensor {
    let hw = h * w;
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let base = (sy as usize * w) as isize + dx;
                    for xx in x0..x1 {
                        dst[(base + xx as isize) as usize] += src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// C = A·B with explicit strides; every operand is dense.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts bound every index the strides can produce, and `c`
    // does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// "Same" convolution (cross-correlation) with zero padding, odd kernel `k`.
/// `weight` is [co][ci][k][k], `bias` is [co].
pub fn conv_forward(x: &Tensor, weight: &[f64], bias: &[f64], co: usize, k: usize) -> Tensor {
    let hw = x.plane();
    let kk = x.c * k * k;
    debug_assert_eq!(weight.len(), co * kk);
    let mut out = Tensor::zeros(co, x.h, x.w);
    for (o, b) in bias.iter().enumerate() {
        out.data[o * hw..(o + 1) * hw].fill(*b);
    }
    if k == 1 {
        gemm(co, kk, hw, weight, (kk, 1), &x.data, (hw, 1), 1.0, &mut out.data);
    } else {
        let col = im2col(x, k);
        gemm(co, kk, hw, weight, (kk, 1), &col, (hw, 1), 1.0, &mut out.data);
    }
    out
}

/// Gradients of a convolution: accumulates into `dweight`/`dbias` and returns
/// the input gradient when `need_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &Tensor,
    weight: &[f64],
    dout: &Tensor,
    k: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let hw = x.plane();
    let co = dout.c;
    let kk = x.c * k * k;
    for (o, db) in dbias.iter_mut().enumerate() {
        *db += dout.channel(o).iter().sum::<f64>();
    }
    let col_owned;
    let col: &[f64] = if k == 1 {
        &x.data
    } else {
        col_owned = im2col(x, k);
        &col_owned
    };
    // dW += dout · colᵀ
    gemm(co, hw, kk, &dout.data, (hw, 1), col, (1, hw), 1.0, dweight);
    if !need_input {
        return None;
    }
    // dcol = Wᵀ · dout
    let mut dcol = vec![0.0; kk * hw];
    gemm(kk, co, hw, weight, (1, kk), &dout.data, (hw, 1), 0.0, &mut dcol);
    Some(if k == 1 {
        Tensor {
            c: x.c,
            h: x.h,
            w: x.w,
            data: dcol,
        }
    } else {
        col2im(&dcol, x.c, x.h, x.w, k)
    })
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes the gradient wherever the activation output was not positive.
pub fn relu_backward_inplace(grad: &mut Tensor, activated: &Tensor) {
    for (g, a) in grad.data.iter_mut().zip(&activated.data) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 average pooling (even sizes).
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.channel(c);
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * x.w + 2 * xx;
                out.data[(c * h + y) * w + xx] =
                    0.25 * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h * 2, dout.w * 2);
    let mut out = Tensor::zeros(dout.c, h, w);
    for c in 0..dout.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[(c * h + y) * w + xx] = 0.25 * dout.data[(c * dout.h + y / 2) * dout.w + xx / 2];
            }
        }
    }
    out
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[(c * h + y) * w + xx] = x.data[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut out = Tensor::zeros(dout.c, h, w);
    for c in 0..dout.c {
        for y in 0..dout.h {
            for xx in 0..dout.w {
                out.data[(c * h + y / 2) * w + xx / 2] += dout.data[(c * dout.h + y) * dout.w + xx];
            }
        }
    }
    out
}

/// Stacks `a` on top of `b` along the channel axis.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    assert!(a.h == b.h && a.w == b.w);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

pub fn split(t: &Tensor, first: usize) -> (Tensor, Tensor) {
    let cut = first * t.plane();
    (
        Tensor {
            c: first,
            h: t.h,
            w: t.w,
            data: t.data[..cut].to_vec(),
        },
        Tensor {
            c: t.c - first,
            h: t.h,
            w: t.w,
            data: t.data[cut..].to_vec(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize, s: f64) -> Tensor {
        Tensor {
            c,
            h,
            w,
            data: (0..c * h * w).map(|i| ((i * 37 % 17) as f64 - 8.0) * s).collect(),
        }
    }

    fn naive_conv(x: &Tensor, weight: &[f64], bias: &[f64], co: usize, k: usize) -> Tensor {
        let r = (k / 2) as isize;
        let mut out = Tensor::zeros(co, x.h, x.w);
        for o in 0..co {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut acc = bias[o];
                    for ci in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - r;
                                let sx = xx as isize + kx as isize - r;
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                acc += weight[((o * x.c + ci) * k + ky) * k + kx]
                                    * x.data[(ci * x.h + sy as usize) * x.w + sx as usize];
                            }
                        }
                    }
                    out.data[(o * x.h + y) * x.w + xx] = acc;
                }
            }
        }
        out
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for k in [1, 3] {
            let x = ramp(3, 5, 6, 0.1);
            let w: Vec<f64> = (0..2 * 3 * k * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b = [0.5, -0.25];
            let fast = conv_forward(&x, &w, &b, 2, k);
            let slow = naive_conv(&x, &w, &b, 2, k);
            for (p, q) in fast.data.iter().zip(&slow.data) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - b, g> = <x, dx(g)> and = <w, dw(g)>.
        let x = ramp(2, 4, 5, 0.3);
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let zero_b = [0.0; 3];
        let y = conv_forward(&x, &w, &zero_b, 3, 3);
        let g = ramp(3, 4, 5, 0.7);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        let dx = conv_backward(&x, &w, &g, 3, &mut dw, &mut db, true).unwrap();
        let lhs = dot(&y.data, &g.data);
        assert!((lhs - dot(&x.data, &dx.data)).abs() < 1e-10);
        assert!((lhs - dot(&w, &dw)).abs() < 1e-10);
        for (o, v) in db.iter().enumerate() {
            assert!((v - g.channel(o).iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let x = ramp(2, 4, 6, 0.2);
        let g = ramp(2, 2, 3, 0.5);
        let lhs = dot(&avg_pool2(&x).data, &g.data);
        assert!((lhs - dot(&x.data, &avg_pool2_backward(&g).data)).abs() < 1e-12);
        let big = ramp(2, 4, 6, 0.9);
        let lhs = dot(&upsample2(&g).data, &big.data);
        assert!((lhs - dot(&g.data, &upsample2_backward(&big).data)).abs() < 1e-12);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = ramp(2, 3, 3, 1.0);
        let b = ramp(1, 3, 3, 2.0);
        let (p, q) = split(&concat(&a, &b), 2);
        assert_eq!((p, q), (a, b));
    }
}
