//! Per-sample layer kernels on channel-major `C×H×W` buffers.

use crate::scalar::{gemm, Real, View};

/// Scatters each 3×3 neighbourhood into a column of a `(cin·9)×(h·w)`
/// matrix; out-of-bounds taps read zero.
pub(crate) fn im2col3<T: Real>(x: &[T], cin: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(x.len(), cin * hw);
    debug_assert_eq!(col.len(), cin * 9 * hw);
    for ci in 0..cin {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let s = &src[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&s[..w - 1]);
                        }
                        1 => dst.copy_from_slice(s),
                        _ => {
                            dst[..w - 1].copy_from_slice(&s[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: accumulates columns back into `dx`.
pub(crate) fn col2im3<T: Real>(col: &[T], cin: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let dst = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let d = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => d[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(a, &b)| *a += b),
                        1 => d.iter_mut().zip(src).for_each(|(a, &b)| *a += b),
                        _ => d[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(a, &b)| *a += b),
                    }
                }
            }
        }
    }
}

/// Convolution geometry: kernel 1 or 3, same padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub relu: bool,
}

impl Conv {
    pub(crate) fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn taps(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Forward pass. Returns the output and, for 3×3 kernels, the im2col
    /// buffer needed by the backward pass.
    pub(crate) fn forward<T: Real>(
        &self,
        x: &[T],
        h: usize,
        w: usize,
        weight: &[T],
        bias: &[T],
    ) -> (Vec<T>, Option<Vec<T>>) {
        let hw = h * w;
        let mut out = vec![T::zero(); self.cout * hw];
        for (co, b) in bias.iter().enumerate() {
            out[co * hw..(co + 1) * hw].fill(*b);
        }
        let col = (self.k == 3).then(|| {
            let mut col = vec![T::zero(); self.taps() * hw];
            im2col3(x, self.cin, h, w, &mut col);
            col
        });
        let src = col.as_deref().unwrap_or(x);
        gemm(
            View::new(weight, self.cout, self.taps()),
            View::new(src, self.taps(), hw),
            T::one(),
            &mut out,
        );
        if self.relu {
            // Not `max`: that would turn a NaN into 0 and hide it from the
            // trainer's non-finite check.
            out.iter_mut()
                .filter(|v| **v < T::zero())
                .for_each(|v| *v = T::zero());
        }
        (out, col)
    }

    /// Backward pass. `dy` is overwritten with the pre-activation gradient.
    /// Accumulates into `dw`/`db`; returns `dx` when requested.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward<T: Real>(
        &self,
        x: &[T],
        col: Option<&[T]>,
        out: &[T],
        dy: &mut [T],
        h: usize,
        w: usize,
        weight: &[T],
        dw: &mut [T],
        db: &mut [T],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let hw = h * w;
        if self.relu {
            dy.iter_mut().zip(out).for_each(|(g, &o)| {
                if o <= T::zero() {
                    *g = T::zero();
                }
            });
        }
        for (co, b) in db.iter_mut().enumerate() {
            *b += dy[co * hw..(co + 1) * hw]
                .iter()
                .fold(T::zero(), |a, &v| a + v);
        }
        let src = col.unwrap_or(x);
        gemm(
            View::new(dy, self.cout, hw),
            View::new(src, self.taps(), hw).t(),
            T::one(),
            dw,
        );
        if !need_dx {
            return None;
        }
        let mut dsrc = vec![T::zero(); self.taps() * hw];
        gemm(
            View::new(weight, self.cout, self.taps()).t(),
            View::new(dy, self.cout, hw),
            T::zero(),
            &mut dsrc,
        );
        if self.k == 1 {
            return Some(dsrc);
        }
        let mut dx = vec![T::zero(); self.cin * hw];
        col2im3(&dsrc, self.cin, h, w, &mut dx);
        Some(dx)
    }
}

/// 2×2 max pooling with stride 2. Returns the pooled map and the winning
/// offset (0..4) of each output cell.
pub(crate) fn maxpool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u8>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![T::zero(); c * ho * wo];
    let mut arg = vec![0u8; c * ho * wo];
    for ch in 0..c {
        let src = &x[ch * h * w..];
        for y in 0..ho {
            for xo in 0..wo {
                let base = 2 * y * w + 2 * xo;
                let cand = [src[base], src[base + 1], src[base + w], src[base + w + 1]];
                let mut best = 0;
                for i in 1..4 {
                    if cand[i] > cand[best] {
                        best = i;
                    }
                }
                let o = ch * ho * wo + y * wo + xo;
                out[o] = cand[best];
                arg[o] = best as u8;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward<T: Real>(
    dy: &[T],
    arg: &[u8],
    c: usize,
    h: usize,
    w: usize,
    dx: &mut [T],
) {
    let (ho, wo) = (h / 2, w / 2);
    for ch in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let o = ch * ho * wo + y * wo + xo;
                let a = arg[o] as usize;
                let idx = ch * h * w + (2 * y + a / 2) * w + 2 * xo + a % 2;
                dx[idx] += dy[o];
            }
        }
    }
}

/// 2×2 transposed convolution with stride 2. Weight rows are indexed
/// `co·4 + ky·2 + kx`, columns by input channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct UpConv {
    pub cin: usize,
    pub cout: usize,
}

impl UpConv {
    pub(crate) fn weight_len(&self) -> usize {
        self.cout * 4 * self.cin
    }

    /// Maps an `h×w` input to `2h×2w`.
    pub(crate) fn forward<T: Real>(
        &self,
        x: &[T],
        h: usize,
        w: usize,
        weight: &[T],
        bias: &[T],
    ) -> Vec<T> {
        let hw = h * w;
        let mut tmp = vec![T::zero(); self.cout * 4 * hw];
        gemm(
            View::new(weight, self.cout * 4, self.cin),
            View::new(x, self.cin, hw),
            T::zero(),
            &mut tmp,
        );
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); self.cout * ho * wo];
        for co in 0..self.cout {
            for tap in 0..4 {
                let (ky, kx) = (tap / 2, tap % 2);
                let row = &tmp[(co * 4 + tap) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut out[co * ho * wo + (2 * y + ky) * wo..];
                    for xi in 0..w {
                        dst[2 * xi + kx] = row[y * w + xi] + bias[co];
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward<T: Real>(
        &self,
        x: &[T],
        dy: &[T],
        h: usize,
        w: usize,
        weight: &[T],
        dw: &mut [T],
        db: &mut [T],
    ) -> Vec<T> {
        let hw = h * w;
        let (ho, wo) = (2 * h, 2 * w);
        let mut dtmp = vec![T::zero(); self.cout * 4 * hw];
        for co in 0..self.cout {
            db[co] += dy[co * ho * wo..(co + 1) * ho * wo]
                .iter()
                .fold(T::zero(), |a, &v| a + v);
            for tap in 0..4 {
                let (ky, kx) = (tap / 2, tap % 2);
                let row = &mut dtmp[(co * 4 + tap) * hw..][..hw];
                for y in 0..h {
                    let src = &dy[co * ho * wo + (2 * y + ky) * wo..];
                    for xi in 0..w {
                        row[y * w + xi] = src[2 * xi + kx];
                    }
                }
            }
        }
        gemm(
            View::new(&dtmp, self.cout * 4, hw),
            View::new(x, self.cin, hw).t(),
            T::one(),
            dw,
        );
        let mut dx = vec![T::zero(); self.cin * hw];
        gemm(
            View::new(weight, self.cout * 4, self.cin).t(),
            View::new(&dtmp, self.cout * 4, hw),
            T::zero(),
            &mut dx,
        );
        dx
    }
}
