//! im2col / col2im kernels backing the conv layers.

use ndarray::{Array2, Array3};

use super::{conv_out_dim, dims3, Scalar};

/// Unrolls conv patches into a matrix of shape
/// `(out_h * out_w, k * k * c_in)`; row-major over output positions,
/// column index `(kh * k + kw) * c_in + c`. Out-of-bounds taps read zero.
pub fn im2col<S: Scalar>(input: &Array3<S>, k: usize, stride: usize, pad: usize) -> Array2<S> {
    let (h, w, c) = dims3(input);
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let mut col = Array2::zeros((oh * ow, k * k * c));
    for out_r in 0..oh {
        for out_c in 0..ow {
            let row = out_r * ow + out_c;
            let base_r = (out_r * stride) as isize - pad as isize;
            let base_c = (out_c * stride) as isize - pad as isize;
            for kh in 0..k {
                let in_r = base_r + kh as isize;
                if in_r < 0 || in_r >= h as isize {
                    continue;
                }
                for kw in 0..k {
                    let in_c = base_c + kw as isize;
                    if in_c < 0 || in_c >= w as isize {
                        continue;
                    }
                    let col_base = (kh * k + kw) * c;
                    for ch in 0..c {
                        col[(row, col_base + ch)] = input[(in_r as usize, in_c as usize, ch)];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds a column-gradient matrix back onto the
/// input grid.
pub fn col2im_accumulate<S: Scalar>(
    d_col: &Array2<S>,
    input_shape: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<S> {
    let (h, w, c) = input_shape;
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let mut out = Array3::zeros((h, w, c));
    for out_r in 0..oh {
        for out_c in 0..ow {
            let row = out_r * ow + out_c;
            let base_r = (out_r * stride) as isize - pad as isize;
            let base_c = (out_c * stride) as isize - pad as isize;
            for kh in 0..k {
                let in_r = base_r + kh as isize;
                if in_r < 0 || in_r >= h as isize {
                    continue;
                }
                for kw in 0..k {
                    let in_c = base_c + kw as isize;
                    if in_c < 0 || in_c >= w as isize {
                        continue;
                    }
                    let col_base = (kh * k + kw) * c;
                    for ch in 0..c {
                        out[(in_r as usize, in_c as usize, ch)] =
                            out[(in_r as usize, in_c as usize, ch)] + d_col[(row, col_base + ch)];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn im2col_identity_kernel_recovers_pixels() {
        // k=1, stride=1, pad=0: col matrix is just the flattened image.
        let img = Array3::from_shape_fn((3, 3, 2), |(r, c, ch)| (r * 6 + c * 2 + ch) as f32);
        let col = im2col(&img, 1, 1, 0);
        assert_eq!(col.shape(), [9, 2]);
        for r in 0..3 {
            for c in 0..3 {
                for ch in 0..2 {
                    assert_eq!(col[(r * 3 + c, ch)], img[(r, c, ch)]);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        use rand::Rng;
        let mut rng = crate::rng::rng_for(5, &[0]);
        let x = Array3::from_shape_fn((6, 5, 3), |_| rng.random_range(-1.0f64..1.0));
        let cx = im2col(&x, 3, 2, 1);
        let y = ndarray::Array2::from_shape_fn(cx.raw_dim(), |_| rng.random_range(-1.0f64..1.0));
        let lhs: f64 = cx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let back = col2im_accumulate(&y, (6, 5, 3), 3, 2, 1);
        let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}
