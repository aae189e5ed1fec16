//! Hot numeric kernels shared by the graph ops: matrix multiply, im2col /
//! col2im for convolution, and pooling. Everything here is deterministic:
//! each output element has one writer and a fixed summation order, so rayon
//! parallelism over disjoint output rows cannot change results.

use rayon::prelude::*;

use super::array::Scalar;

/// Below this many output elements, threading overhead dominates.
const PAR_THRESHOLD: usize = 16 * 1024;

/// C\[m,n\] = A\[m,k\] * B\[k,n\], row-major.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::ZERO; m * n];
    matmul_into(&mut c, a, b, m, k, n, false);
    c
}

/// C += (or =) A * B with A\[m,k\], B\[k,n\]. Accumulates when `acc` is set.
pub fn matmul_into<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let body = |(row, crow): (usize, &mut [T])| {
        let arow = &a[row * k..(row + 1) * k];
        if !acc {
            crow.fill(T::ZERO);
        }
        // ikj order: the inner loop is a saxpy over contiguous memory, which
        // the compiler vectorizes.
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
}

/// C\[m,n\] = A\[k,m\]^T * B\[k,n\]. Used for weight gradients.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::ZERO; m * n];
    // Sequential over k keeps a fixed accumulation order per output element.
    let body = |(row, crow): (usize, &mut [T])| {
        for p in 0..k {
            let av = a[p * m + row];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
    c
}

/// C\[m,n\] = A\[m,k\] * B\[n,k\]^T. Used for input gradients.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![T::ZERO; m * n];
    let body = |(row, crow): (usize, &mut [T])| {
        let arow = &a[row * k..(row + 1) * k];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            *cv = s;
        }
    };
    if m * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
    c
}

/// Output spatial extent of a convolution/pool along one dimension.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfold x\[c,h,w\] (one image) into columns\[oh*ow, c*kh*kw\] with zero
/// padding. Row r corresponds to output location (r / ow, r % ow).
pub fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    cols: &mut [T],
) {
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    debug_assert_eq!(cols.len(), oh * ow * c * kh * kw);
    let row_len = c * kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * row_len..(oy * ow + ox + 1) * row_len];
            let mut idx = 0;
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        row[idx] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize]
                        } else {
                            T::ZERO
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Fold columns back into an image, accumulating overlapping windows.
/// Inverse scatter of `im2col`; used by the convolution input gradient.
pub fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    x: &mut [T],
) {
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    let row_len = c * kh * kw;
    debug_assert_eq!(cols.len(), oh * ow * row_len);
    debug_assert_eq!(x.len(), c * h * w);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * row_len..(oy * ow + ox + 1) * row_len];
            let mut idx = 0;
            for ch in 0..c {
                let plane = &mut x[ch * h * w..(ch + 1) * h * w];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Max-pool one image x\[c,h,w\] -> (out\[c,oh,ow\], argmax flat indices into
/// the input plane per output element).
pub fn max_pool<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<T>, Vec<u32>) {
    let oh = conv_out_extent(h, kernel, stride, 0);
    let ow = conv_out_extent(w, kernel, stride, 0);
    let mut out = vec![T::ZERO; c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = plane[oy * stride * w + ox * stride];
                let mut best_idx = (oy * stride * w + ox * stride) as u32;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = oy * stride + ky;
                        let ix = ox * stride + kx;
                        let v = plane[iy * w + ix];
                        if v > best {
                            best = v;
                            best_idx = (iy * w + ix) as u32;
                        }
                    }
                }
                out[ch * oh * ow + oy * ow + ox] = best;
                arg[ch * oh * ow + oy * ow + ox] = (ch * h * w) as u32 + best_idx;
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![5.0f64, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transposed_variants_agree() {
        let m = 3;
        let k = 4;
        let n = 5;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 - 0.7).collect();
        let c = matmul(&a, &b, m, k, n);
        // A^T stored as [k,m]: transpose a
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        assert_eq!(matmul_tn(&at, &b, k, m, n), c);
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        assert_eq!(matmul_nt(&a, &bt, m, k, n), c);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // col2im is the transpose of im2col: <im2col(x), y> == <x, col2im(y)>.
        let (c, h, w, kh, kw, s, p) = (2usize, 5usize, 4usize, 3usize, 3usize, 2usize, 1usize);
        let oh = conv_out_extent(h, kh, s, p);
        let ow = conv_out_extent(w, kw, s, p);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..oh * ow * c * kh * kw)
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, kh, kw, s, p, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut xt = vec![0.0; x.len()];
        col2im(&y, c, h, w, kh, kw, s, p, &mut xt);
        let rhs: f64 = x.iter().zip(&xt).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn max_pool_tracks_argmax() {
        let x = vec![1.0f32, 2.0, 3.0, 4.0]; // 1x2x2
        let (out, arg) = max_pool(&x, 1, 2, 2, 2, 2);
        assert_eq!(out, vec![4.0]);
        assert_eq!(arg, vec![3]);
    }
}
