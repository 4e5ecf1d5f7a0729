//! Thin wrappers over `matrixmultiply::dgemm` plus the im2col/col2im
//! transforms used by the convolution primitive.

/// `c = a·b + beta·c` where `a` is logically `m×k` and `b` is `k×n`.
///
/// With `a_t` set, `a` is stored as `k×m` row-major (and likewise `b_t`
/// means `b` is stored `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: strides describe exactly the slices checked above.
    unsafe {
        matrixmultiply::dgemm(
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

/// Spatial layout of a same-padded, stride-1 convolution over an HWC image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvGeometry {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Length of one im2col row: `kh·kw·cin`.
    pub fn patch(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1
    }
}

/// Unfold `input` (`H×W×Cin`) into a `(H·W)×(kh·kw·Cin)` matrix with zero
/// padding so the output has the input's spatial size.
pub(crate) fn im2col(g: &ConvGeometry, input: &[f64]) -> Vec<f64> {
    let patch = g.patch();
    let mut cols = vec![0.0; g.pixels() * patch];
    let ph = (g.kernel_h / 2) as isize;
    let pw = (g.kernel_w / 2) as isize;
    let cin = g.in_channels;
    for y in 0..g.height {
        for x in 0..g.width {
            let row = &mut cols[(y * g.width + x) * patch..][..patch];
            for ky in 0..g.kernel_h {
                let sy = y as isize + ky as isize - ph;
                if sy < 0 || sy >= g.height as isize {
                    continue;
                }
                for kx in 0..g.kernel_w {
                    let sx = x as isize + kx as isize - pw;
                    if sx < 0 || sx >= g.width as isize {
                        continue;
                    }
                    let src = (sy as usize * g.width + sx as usize) * cin;
                    let dst = (ky * g.kernel_w + kx) * cin;
                    row[dst..dst + cin].copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the image.
pub(crate) fn col2im_add(g: &ConvGeometry, cols: &[f64], out: &mut [f64]) {
    let patch = g.patch();
    let ph = (g.kernel_h / 2) as isize;
    let pw = (g.kernel_w / 2) as isize;
    let cin = g.in_channels;
    for y in 0..g.height {
        for x in 0..g.width {
            let row = &cols[(y * g.width + x) * patch..][..patch];
            for ky in 0..g.kernel_h {
                let sy = y as isize + ky as isize - ph;
                if sy < 0 || sy >= g.height as isize {
                    continue;
                }
                for kx in 0..g.kernel_w {
                    let sx = x as isize + kx as isize - pw;
                    if sx < 0 || sx >= g.width as isize {
                        continue;
                    }
                    let dst = (sy as usize * g.width + sx as usize) * cin;
                    let src = (ky * g.kernel_w + kx) * cin;
                    for (o, v) in out[dst..dst + cin].iter_mut().zip(&row[src..src + cin]) {
                        *o += v;
                    }
                }
            }
        }
    }
}
