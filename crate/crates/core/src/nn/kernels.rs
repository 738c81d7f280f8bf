//! Dense kernels behind the graph ops: GEMM and the im2col/col2im pair used
//! by both convolution directions.

/// `C = A' * B' + beta * C`, all row-major, where `A'` is `A` or its
/// transpose. `m x k` times `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover exactly the strided extents passed in.
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

/// Geometry of a strided, padded 1D window sweep over a `[channels, length]`
/// signal producing `positions` windows of `kernel` taps.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Windows {
    pub channels: usize,
    pub length: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub positions: usize,
}

impl Windows {
    /// Signal index touched by tap `k` of window `o`, if inside the signal.
    #[inline]
    fn source(&self, o: usize, k: usize) -> Option<usize> {
        let idx = (o * self.stride + k) as isize - self.pad as isize;
        (idx >= 0 && (idx as usize) < self.length).then_some(idx as usize)
    }

    /// Range of windows `o` for which tap `k` lands inside the signal.
    #[inline]
    fn valid_range(&self, k: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // need 0 <= o*s + off < length
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_excl = ((self.length as isize - off) + s - 1) / s;
        let lo = lo.max(0) as usize;
        let hi = (hi_excl.max(0) as usize).min(self.positions);
        (lo.min(hi), hi)
    }

    pub fn cols_len(&self) -> usize {
        self.channels * self.kernel * self.positions
    }
}

/// `cols[(c * kernel + k) * positions + o] = x[c, o * stride + k - pad]`.
pub(crate) fn im2col(x: &[f64], w: &Windows, cols: &mut [f64]) {
    debug_assert_eq!(x.len(), w.channels * w.length);
    debug_assert_eq!(cols.len(), w.cols_len());
    for c in 0..w.channels {
        let row = &x[c * w.length..(c + 1) * w.length];
        for k in 0..w.kernel {
            let out = &mut cols[(c * w.kernel + k) * w.positions..(c * w.kernel + k + 1) * w.positions];
            let (lo, hi) = w.valid_range(k);
            out[..lo].fill(0.0);
            out[hi..].fill(0.0);
            if w.stride == 1 {
                let start = lo + k - w.pad;
                out[lo..hi].copy_from_slice(&row[start..start + (hi - lo)]);
            } else {
                for (o, slot) in out.iter_mut().enumerate().take(hi).skip(lo) {
                    *slot = row[o * w.stride + k - w.pad];
                }
            }
        }
    }
    debug_assert!((0..w.positions).all(|o| w.source(o, 0).is_some() || w.pad > 0 || o * w.stride >= w.length));
}

/// Adjoint of [`im2col`]: scatters-and-adds `cols` back into `x`.
pub(crate) fn col2im(cols: &[f64], w: &Windows, x: &mut [f64]) {
    debug_assert_eq!(x.len(), w.channels * w.length);
    debug_assert_eq!(cols.len(), w.cols_len());
    for c in 0..w.channels {
        let row = &mut x[c * w.length..(c + 1) * w.length];
        for k in 0..w.kernel {
            let src = &cols[(c * w.kernel + k) * w.positions..(c * w.kernel + k + 1) * w.positions];
            let (lo, hi) = w.valid_range(k);
            if w.stride == 1 {
                let start = lo + k - w.pad;
                for (d, s) in row[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                    *d += s;
                }
            } else {
                for (o, s) in src.iter().enumerate().take(hi).skip(lo) {
                    row[o * w.stride + k - w.pad] += s;
                }
            }
        }
    }
}
