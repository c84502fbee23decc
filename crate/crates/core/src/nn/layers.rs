//! Layer kernels with hand-written backward passes.
//!
//! Convolutions are lowered to matrix products (im2col) so the inner loops
//! run in `matrixmultiply`'s single-threaded GEMM, which keeps the reduction
//! order, and therefore the results, fixed.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// C = A·B + beta·C with explicit row/column strides for A and B.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
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

/// Saved state of a convolution forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    in_shape: (usize, usize, usize),
    kernel: usize,
    /// im2col matrix, (C·k·k) x (H·W).
    col: Vec<f64>,
}

fn im2col3(input: &Tensor, c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut col = vec![0.0; c * 9 * hw];
    let src = input.data();
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                // output (y, x) reads input (y + ky - 1, x + kx - 1)
                let y0 = if ky == 0 { 1 } else { 0 };
                let y1 = if ky == 2 { h - 1 } else { h };
                let x0 = if kx == 0 { 1 } else { 0 };
                let x1 = if kx == 2 { w - 1 } else { w };
                for y in y0..y1 {
                    let sy = y + ky - 1;
                    let dst = &mut row[y * w + x0..y * w + x1];
                    let s = &plane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                    dst.copy_from_slice(s);
                }
            }
        }
    }
    col
}

fn col2im3(dcol: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                let y0 = if ky == 0 { 1 } else { 0 };
                let y1 = if ky == 2 { h - 1 } else { h };
                let x0 = if kx == 0 { 1 } else { 0 };
                let x1 = if kx == 2 { w - 1 } else { w };
                for y in y0..y1 {
                    let sy = y + ky - 1;
                    let d = &mut plane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                    for (a, b) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *a += b;
                    }
                }
            }
        }
    }
    out
}

/// Same-size cross-correlation with zero padding. `weight` is O x C x k x k
/// with k = 1 or 3.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(Tensor, ConvCache)> {
    let (c, h, w) = input.dims3()?;
    let (o, k) = match weight.shape()[..] {
        [o, wc, k1, k2] if wc == c && k1 == k2 && (k1 == 1 || k1 == 3) => (o, k1),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "conv weight {:?} incompatible with input {:?}",
                weight.shape(),
                input.shape()
            )))
        }
    };
    if bias.shape() != [o] {
        return Err(Error::ShapeMismatch(format!("conv bias {:?}, expected [{o}]", bias.shape())));
    }
    let hw = h * w;
    let col = if k == 3 { im2col3(input, c, h, w) } else { input.data().to_vec() };
    let ckk = c * k * k;
    let mut out = vec![0.0; o * hw];
    for (oi, row) in out.chunks_mut(hw).enumerate() {
        row.fill(bias.data()[oi]);
    }
    gemm(o, ckk, hw, weight.data(), (ckk, 1), &col, (hw, 1), &mut out, 1.0);
    Ok((Tensor::from_vec(&[o, h, w], out)?, ConvCache { in_shape: (c, h, w), kernel: k, col }))
}

/// Returns (d_input, d_weight, d_bias).
pub fn conv2d_backward(cache: &ConvCache, weight: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = cache.in_shape;
    let k = cache.kernel;
    let hw = h * w;
    let ckk = c * k * k;
    let o = weight.shape()[0];
    if dout.shape() != [o, h, w] {
        return Err(Error::ShapeMismatch(format!("conv grad {:?}, expected [{o}, {h}, {w}]", dout.shape())));
    }
    let g = dout.data();
    let db: Vec<f64> = g.chunks(hw).map(|r| r.iter().sum()).collect();
    let mut dw = vec![0.0; o * ckk];
    gemm(o, hw, ckk, g, (hw, 1), &cache.col, (1, hw), &mut dw, 0.0);
    let mut dcol = vec![0.0; ckk * hw];
    gemm(ckk, o, hw, weight.data(), (1, ckk), g, (hw, 1), &mut dcol, 0.0);
    let din = if k == 3 { col2im3(&dcol, c, h, w) } else { dcol };
    Ok((Tensor::from_vec(&[c, h, w], din)?, Tensor::from_vec(weight.shape(), dw)?, Tensor::from_vec(&[o], db)?))
}

/// 2x2 max pooling with stride 2; also returns the flat argmax of each window.
/// Ties go to the first element in row-major window order.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("maxpool2 needs even sides, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, idx))
}

pub fn maxpool2_backward(dout: &Tensor, argmax: &[usize], in_shape: &[usize]) -> Result<Tensor> {
    if dout.len() != argmax.len() {
        return Err(Error::ShapeMismatch("maxpool grad does not match argmax".into()));
    }
    let mut din = Tensor::zeros(in_shape);
    let d = din.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] += g;
    }
    Ok(din)
}

/// Transposed 2x2 convolution with stride 2. `weight` is C x O x 2 x 2.
pub fn tconv2(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let o = match weight.shape()[..] {
        [wc, o, 2, 2] if wc == c => o,
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "tconv weight {:?} incompatible with input {:?}",
                weight.shape(),
                input.shape()
            )))
        }
    };
    if bias.shape() != [o] {
        return Err(Error::ShapeMismatch(format!("tconv bias {:?}, expected [{o}]", bias.shape())));
    }
    let hw = h * w;
    let o4 = o * 4;
    let mut tmp = vec![0.0; o4 * hw];
    gemm(o4, c, hw, weight.data(), (1, o4), input.data(), (hw, 1), &mut tmp, 0.0);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; o * oh * ow];
    for oi in 0..o {
        let b = bias.data()[oi];
        for a in 0..2 {
            for bb in 0..2 {
                let t = &tmp[(oi * 4 + a * 2 + bb) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut out[oi * oh * ow + (2 * y + a) * ow..][..ow];
                    for x in 0..w {
                        dst[2 * x + bb] = t[y * w + x] + b;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[o, oh, ow], out)
}

/// Returns (d_input, d_weight, d_bias).
pub fn tconv2_backward(input: &Tensor, weight: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = input.dims3()?;
    let o = weight.shape()[1];
    let (oh, ow) = (2 * h, 2 * w);
    if dout.shape() != [o, oh, ow] {
        return Err(Error::ShapeMismatch(format!("tconv grad {:?}, expected [{o}, {oh}, {ow}]", dout.shape())));
    }
    let hw = h * w;
    let o4 = o * 4;
    let g = dout.data();
    let mut dtmp = vec![0.0; o4 * hw];
    let mut db = vec![0.0; o];
    for oi in 0..o {
        db[oi] = g[oi * oh * ow..(oi + 1) * oh * ow].iter().sum();
        for a in 0..2 {
            for bb in 0..2 {
                let t = &mut dtmp[(oi * 4 + a * 2 + bb) * hw..][..hw];
                for y in 0..h {
                    let src = &g[oi * oh * ow + (2 * y + a) * ow..][..ow];
                    for x in 0..w {
                        t[y * w + x] = src[2 * x + bb];
                    }
                }
            }
        }
    }
    let mut dw = vec![0.0; c * o4];
    gemm(c, hw, o4, input.data(), (hw, 1), &dtmp, (1, hw), &mut dw, 0.0);
    let mut din = vec![0.0; c * hw];
    gemm(c, o4, hw, weight.data(), (o4, 1), &dtmp, (hw, 1), &mut din, 0.0);
    Ok((Tensor::from_vec(&[c, h, w], din)?, Tensor::from_vec(weight.shape(), dw)?, Tensor::from_vec(&[o], db)?))
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward(out: &Tensor, dout: &Tensor) -> Tensor {
    let mut din = dout.clone();
    for (g, &y) in din.data_mut().iter_mut().zip(out.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let input = t(&[2, 3, 4], (0..24).map(|v| v as f64 * 0.5 - 3.0).collect());
        let mut w = Tensor::zeros(&[2, 2, 3, 3]);
        w.data_mut()[4] = 1.0; // out 0 <- in 0 center
        w.data_mut()[9 + 9 + 4 + 9] = 1.0; // out 1 <- in 1 center
        let (out, _) = conv2d(&input, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let input = t(&[1, 4, 4], vec![1.0; 16]);
        let w = t(&[1, 1, 3, 3], vec![1.0; 9]);
        let (out, _) = conv2d(&input, &w, &Tensor::zeros(&[1])).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            4.0, 6.0, 6.0, 4.0,
            6.0, 9.0, 9.0, 6.0,
            6.0, 9.0, 9.0, 6.0,
            4.0, 6.0, 6.0, 4.0,
        ];
        assert_eq!(out.data(), &expected[..]);
    }

    #[test]
    fn conv_shape_mismatch_is_an_error() {
        let input = Tensor::zeros(&[2, 4, 4]);
        assert!(conv2d(&input, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1])).is_err());
        assert!(conv2d(&input, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2])).is_err());
        assert!(maxpool2(&Tensor::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn maxpool_picks_window_maximum() {
        let input = t(&[1, 2, 4], vec![1.0, 5.0, -1.0, -2.0, 3.0, 2.0, -3.0, -0.5]);
        let (out, idx) = maxpool2(&input).unwrap();
        assert_eq!(out.data(), &[5.0, -0.5]);
        assert_eq!(idx, vec![1, 7]);
        let din = maxpool2_backward(&t(&[1, 1, 2], vec![2.0, 3.0]), &idx, input.shape()).unwrap();
        assert_eq!(din.data(), &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn tconv_scatters_kernel() {
        let input = t(&[1, 1, 2], vec![1.0, 2.0]);
        let w = t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let out = tconv2(&input, &w, &t(&[1], vec![0.5])).unwrap();
        assert_eq!(out.shape(), &[1, 2, 4]);
        assert_eq!(out.data(), &[1.5, 2.5, 2.5, 4.5, 3.5, 4.5, 6.5, 8.5]);
    }
}
