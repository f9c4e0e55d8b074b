//! Raw NHWC convolution loops.
//!
//! A strided "same" convolution relates a *wide* feature map (extent `H`) to a
//! *narrow* one (extent `ceil(H / s)`). Convolution gathers wide → narrow,
//! transposed convolution scatters narrow → wide with the same kernel layout
//! `[kh, kw, c_wide, c_narrow]`, and both share one kernel-gradient routine.

use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub wide_h: usize,
    pub wide_w: usize,
    pub wide_c: usize,
    pub narrow_h: usize,
    pub narrow_w: usize,
    pub narrow_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Total and leading padding for "same" padding; odd totals put the extra row/column at the bottom/right.
pub(crate) fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

impl Geometry {
    /// Geometry of a forward convolution with input `[n, h, w, c_in]` and kernel `[kh, kw, c_in, c_out]`.
    pub fn conv(input: &[usize], kernel: &[usize], stride: usize) -> Result<Self> {
        check_ranks("conv2d", input, kernel, stride)?;
        let (n, h, w, c) = (input[0], input[1], input[2], input[3]);
        if kernel[2] != c {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "input {input:?} has {c} channels but kernel {kernel:?} expects {}",
                    kernel[2]
                ),
            ));
        }
        let (oh, pt) = same_padding(h, kernel[0], stride);
        let (ow, pl) = same_padding(w, kernel[1], stride);
        Ok(Geometry {
            batch: n,
            wide_h: h,
            wide_w: w,
            wide_c: c,
            narrow_h: oh,
            narrow_w: ow,
            narrow_c: kernel[3],
            kh: kernel[0],
            kw: kernel[1],
            stride,
            pad_top: pt,
            pad_left: pl,
        })
    }

    /// Geometry of a transposed convolution with input `[n, h, w, c_in]` and kernel `[kh, kw, c_out, c_in]`.
    pub fn conv_transpose(input: &[usize], kernel: &[usize], stride: usize) -> Result<Self> {
        check_ranks("conv2d_transpose", input, kernel, stride)?;
        let (n, h, w, c) = (input[0], input[1], input[2], input[3]);
        if kernel[3] != c {
            return Err(Error::dim(
                "conv2d_transpose",
                format!(
                    "input {input:?} has {c} channels but kernel {kernel:?} expects {}",
                    kernel[3]
                ),
            ));
        }
        let (oh, ow) = (h * stride, w * stride);
        let (_, pt) = same_padding(oh, kernel[0], stride);
        let (_, pl) = same_padding(ow, kernel[1], stride);
        Ok(Geometry {
            batch: n,
            wide_h: oh,
            wide_w: ow,
            wide_c: kernel[2],
            narrow_h: h,
            narrow_w: w,
            narrow_c: c,
            kh: kernel[0],
            kw: kernel[1],
            stride,
            pad_top: pt,
            pad_left: pl,
        })
    }

    pub fn wide_shape(&self) -> [usize; 4] {
        [self.batch, self.wide_h, self.wide_w, self.wide_c]
    }

    pub fn narrow_shape(&self) -> [usize; 4] {
        [self.batch, self.narrow_h, self.narrow_w, self.narrow_c]
    }

    pub fn kernel_len(&self) -> usize {
        self.kh * self.kw * self.wide_c * self.narrow_c
    }

    /// Calls `f(ky, kx, wide_y, wide_x)` for every in-bounds tap of narrow pixel `(oy, ox)`.
    #[inline]
    fn taps(&self, oy: usize, ox: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        for ky in 0..self.kh {
            let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
            if iy < 0 || iy >= self.wide_h as isize {
                continue;
            }
            for kx in 0..self.kw {
                let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                if ix < 0 || ix >= self.wide_w as isize {
                    continue;
                }
                f(ky, kx, iy as usize, ix as usize);
            }
        }
    }
}

fn check_ranks(op: &'static str, input: &[usize], kernel: &[usize], stride: usize) -> Result<()> {
    if input.len() != 4 || kernel.len() != 4 {
        return Err(Error::dim(
            op,
            format!("need rank-4 input and kernel, got {input:?} and {kernel:?}"),
        ));
    }
    if stride == 0 {
        return Err(Error::Contract(format!("{op}: stride must be positive")));
    }
    Ok(())
}

/// narrow += correlate(wide, kernel).
pub(crate) fn gather<T: Element>(g: &Geometry, wide: &[T], kernel: &[T], narrow: &mut [T]) {
    let (wc, nc) = (g.wide_c, g.narrow_c);
    for n in 0..g.batch {
        for oy in 0..g.narrow_h {
            for ox in 0..g.narrow_w {
                let o = ((n * g.narrow_h + oy) * g.narrow_w + ox) * nc;
                let out = &mut narrow[o..o + nc];
                g.taps(oy, ox, |ky, kx, iy, ix| {
                    let i = ((n * g.wide_h + iy) * g.wide_w + ix) * wc;
                    let k0 = (ky * g.kw + kx) * wc * nc;
                    for cw in 0..wc {
                        let a = wide[i + cw];
                        if a == T::zero() {
                            continue;
                        }
                        let krow = &kernel[k0 + cw * nc..k0 + (cw + 1) * nc];
                        for (y, &k) in out.iter_mut().zip(krow) {
                            *y += a * k;
                        }
                    }
                });
            }
        }
    }
}

/// wide += adjoint of `gather` applied to narrow.
pub(crate) fn scatter<T: Element>(g: &Geometry, narrow: &[T], kernel: &[T], wide: &mut [T]) {
    let (wc, nc) = (g.wide_c, g.narrow_c);
    for n in 0..g.batch {
        for oy in 0..g.narrow_h {
            for ox in 0..g.narrow_w {
                let o = ((n * g.narrow_h + oy) * g.narrow_w + ox) * nc;
                let src = &narrow[o..o + nc];
                g.taps(oy, ox, |ky, kx, iy, ix| {
                    let i = ((n * g.wide_h + iy) * g.wide_w + ix) * wc;
                    let k0 = (ky * g.kw + kx) * wc * nc;
                    for cw in 0..wc {
                        let krow = &kernel[k0 + cw * nc..k0 + (cw + 1) * nc];
                        let mut s = T::zero();
                        for (&d, &k) in src.iter().zip(krow) {
                            s += d * k;
                        }
                        wide[i + cw] += s;
                    }
                });
            }
        }
    }
}

/// kernel_grad += Σ wide ⊗ narrow over all taps.
pub(crate) fn kernel_grad<T: Element>(g: &Geometry, wide: &[T], narrow: &[T], kgrad: &mut [T]) {
    let (wc, nc) = (g.wide_c, g.narrow_c);
    for n in 0..g.batch {
        for oy in 0..g.narrow_h {
            for ox in 0..g.narrow_w {
                let o = ((n * g.narrow_h + oy) * g.narrow_w + ox) * nc;
                let d = &narrow[o..o + nc];
                g.taps(oy, ox, |ky, kx, iy, ix| {
                    let i = ((n * g.wide_h + iy) * g.wide_w + ix) * wc;
                    let k0 = (ky * g.kw + kx) * wc * nc;
                    for cw in 0..wc {
                        let a = wide[i + cw];
                        if a == T::zero() {
                            continue;
                        }
                        let krow = &mut kgrad[k0 + cw * nc..k0 + (cw + 1) * nc];
                        for (kv, &dv) in krow.iter_mut().zip(d) {
                            *kv += a * dv;
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_puts_extra_on_bottom_right() {
        // stride 2, k=4, even input: total 2, split evenly
        assert_eq!(same_padding(64, 4, 2), (32, 1));
        // stride 1, k=4: total 3, one on top, two on bottom
        assert_eq!(same_padding(64, 4, 1), (64, 1));
        assert_eq!(same_padding(5, 4, 2), (3, 1));
        assert_eq!(same_padding(1, 4, 2), (1, 1));
    }

    #[test]
    fn shapes_follow_stride() {
        let g = Geometry::conv(&[1, 64, 64, 8], &[4, 4, 8, 64], 2).unwrap();
        assert_eq!(g.narrow_shape(), [1, 32, 32, 64]);
        let t = Geometry::conv_transpose(&[1, 8, 8, 512], &[4, 4, 256, 512], 2).unwrap();
        assert_eq!(t.wide_shape(), [1, 16, 16, 256]);
        let t1 = Geometry::conv_transpose(&[1, 64, 64, 64], &[4, 4, 1, 64], 1).unwrap();
        assert_eq!(t1.wide_shape(), [1, 64, 64, 1]);
        assert!(Geometry::conv(&[1, 4, 4, 3], &[4, 4, 2, 1], 1).is_err());
        assert!(Geometry::conv_transpose(&[1, 4, 4, 3], &[4, 4, 3, 2], 1).is_err());
    }

    #[test]
    fn scatter_is_adjoint_of_gather() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = Geometry::conv(&[2, 5, 6, 3], &[4, 4, 3, 2], 2).unwrap();
        let wide = crate::Tensor::<f64>::randn(&g.wide_shape(), 1.0, &mut rng);
        let narrow = crate::Tensor::<f64>::randn(&g.narrow_shape(), 1.0, &mut rng);
        let k = crate::Tensor::<f64>::randn(&[4, 4, 3, 2], 1.0, &mut rng);
        let mut gw = vec![0.0; narrow.len()];
        gather(&g, wide.data(), k.data(), &mut gw);
        let mut sn = vec![0.0; wide.len()];
        scatter(&g, narrow.data(), k.data(), &mut sn);
        let lhs: f64 = gw.iter().zip(narrow.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = sn.iter().zip(wide.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
