//! Convolution arithmetic and the im2col/col2im kernels that both the
//! forward convolution and the transposed convolution are built on.

use ndarray::{Array2, Array4};

use super::{NnError, Scalar};

/// Output length of a strided convolution along one axis:
/// `floor((in + 2p − k)/s) + 1`, or None when the kernel does not fit.
pub fn conv_out_dim(input: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = input + 2 * p;
    if padded < k || s == 0 {
        return None;
    }
    Some((padded - k) / s + 1)
}

/// Output length of a transposed convolution along one axis:
/// `(in − 1)s − 2p + k + op`, or None when the padding swallows it.
pub fn transpose_out_dim(input: usize, k: usize, s: usize, p: usize, op: usize) -> Option<usize> {
    if input == 0 || s == 0 {
        return None;
    }
    ((input - 1) * s + k + op).checked_sub(2 * p)
}

/// The output padding that makes a transposed convolution hit `target`
/// exactly; transposed-convolution arithmetic requires it to be
/// smaller than the stride.
pub fn output_padding_for(
    input: usize,
    target: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Result<usize, NnError> {
    let err = NnError::BadOutputPadding {
        from: input,
        target,
        stride: s,
    };
    let base = match transpose_out_dim(input, k, s, p, 0) {
        Some(b) => b,
        None => return Err(err),
    };
    match target.checked_sub(base) {
        Some(op) if op < s => Ok(op),
        _ => Err(err),
    }
}

/// Unfold `(n, c, h, w)` into a `(c·kh·kw, n·oh·ow)` patch matrix; out-of
/// range taps read as zero. `out` are the patch grid dims.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    x: &Array4<T>,
    k: (usize, usize),
    s: (usize, usize),
    p: (usize, usize),
    out: (usize, usize),
) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let (kh, kw) = k;
    let (oh, ow) = out;
    let ncols = n * oh * ow;
    let mut cols = Array2::zeros((c * kh * kw, ncols));
    let xs = x.as_slice().expect("input must be standard layout");
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_base = ((ci * kh + ki) * kw + kj) * ncols;
                for ni in 0..n {
                    for oi in 0..oh {
                        let ii = (oi * s.0 + ki) as isize - p.0 as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let src_row = ((ni * c + ci) * h + ii as usize) * w;
                        let dst_row = row_base + (ni * oh + oi) * ow;
                        for oj in 0..ow {
                            let jj = (oj * s.1 + kj) as isize - p.1 as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            cs[dst_row + oj] = xs[src_row + jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a patch matrix back onto an `(n, c, h, w)` image by summing
/// overlapping taps — the adjoint of `im2col`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Scalar>(
    cols: &Array2<T>,
    shape: (usize, usize, usize, usize),
    k: (usize, usize),
    s: (usize, usize),
    p: (usize, usize),
    out: (usize, usize),
) -> Array4<T> {
    let (n, c, h, w) = shape;
    let (kh, kw) = k;
    let (oh, ow) = out;
    let ncols = n * oh * ow;
    debug_assert_eq!(cols.dim(), (c * kh * kw, ncols));
    let mut x = Array4::zeros((n, c, h, w));
    let cs = cols.as_slice().expect("cols must be standard layout");
    let xs = x.as_slice_mut().unwrap();
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_base = ((ci * kh + ki) * kw + kj) * ncols;
                for ni in 0..n {
                    for oi in 0..oh {
                        let ii = (oi * s.0 + ki) as isize - p.0 as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let dst_row = ((ni * c + ci) * h + ii as usize) * w;
                        let src_row = row_base + (ni * oh + oi) * ow;
                        for oj in 0..ow {
                            let jj = (oj * s.1 + kj) as isize - p.1 as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            xs[dst_row + jj as usize] += cs[src_row + oj];
                        }
                    }
                }
            }
        }
    }
    x
}
