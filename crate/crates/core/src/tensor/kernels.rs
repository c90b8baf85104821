//! Raw convolution and matrix kernels on flat buffers.
//!
//! A convolution is described from the point of view of the forward
//! cross-correlation: a "wide" feature map (the conv input) is mapped to a
//! "narrow" one (the conv output). The transposed convolution runs the same
//! geometry backwards, so both layers share these three kernels:
//!
//! * [`corr_forward`]: wide -> narrow
//! * [`corr_adjoint`]: narrow -> wide (input gradient of the forward map)
//! * [`corr_kernel_grad`]: kernel gradient given both sides
//!
//! Each output element accumulates its terms in a fixed order, independent of
//! the loop orientation chosen for speed.

use crate::error::{Error, Result};

/// Geometry of a strided, zero-padded 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub wide_channels: usize,
    pub wide_h: usize,
    pub wide_w: usize,
    pub narrow_channels: usize,
    pub narrow_h: usize,
    pub narrow_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Output extent of a forward cross-correlation along one axis.
    pub fn narrow_extent(wide: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        if stride == 0 || wide + 2 * padding < kernel {
            return None;
        }
        Some((wide + 2 * padding - kernel) / stride + 1)
    }

    /// Output extent of a transposed convolution along one axis.
    pub fn wide_extent(narrow: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        if stride == 0 || narrow == 0 {
            return None;
        }
        ((narrow - 1) * stride + kernel).checked_sub(2 * padding).filter(|&e| e > 0)
    }

    pub fn validate(&self) -> Result<()> {
        let h = Self::narrow_extent(self.wide_h, self.kernel_h, self.stride, self.padding);
        let w = Self::narrow_extent(self.wide_w, self.kernel_w, self.stride, self.padding);
        if h != Some(self.narrow_h) || w != Some(self.narrow_w) {
            return Err(Error::shape(
                "conv",
                format!(
                    "{}x{} map with {}x{} kernel, stride {}, padding {} cannot give {}x{}",
                    self.wide_h,
                    self.wide_w,
                    self.kernel_h,
                    self.kernel_w,
                    self.stride,
                    self.padding,
                    self.narrow_h,
                    self.narrow_w
                ),
            ));
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.narrow_h * self.narrow_w
    }

    /// Columns of the unfolded input: one per (channel, kernel row, kernel col).
    pub fn patch_len(&self) -> usize {
        self.wide_channels * self.kernel_h * self.kernel_w
    }

    pub fn wide_len(&self) -> usize {
        self.wide_channels * self.wide_h * self.wide_w
    }

    pub fn narrow_len(&self) -> usize {
        self.narrow_channels * self.positions()
    }

    pub fn kernel_len(&self) -> usize {
        self.narrow_channels * self.patch_len()
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`, accumulating over `k` in increasing order.
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            // Skipping exact zeros cannot change the sum: the accumulator
            // starts at +0.0 and adding a signed zero leaves it as is.
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

pub(crate) fn transpose(rows: usize, cols: usize, src: &[f64], dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Unfolds one sample into `[positions x patch_len]`.
fn unfold(g: &ConvGeometry, wide: &[f64], cols: &mut [f64]) {
    let patch = g.patch_len();
    let pad = g.padding as isize;
    for oh in 0..g.narrow_h {
        for ow in 0..g.narrow_w {
            let row = &mut cols[(oh * g.narrow_w + ow) * patch..][..patch];
            let mut j = 0;
            for c in 0..g.wide_channels {
                let plane = &wide[c * g.wide_h * g.wide_w..][..g.wide_h * g.wide_w];
                for a in 0..g.kernel_h {
                    let ih = (oh * g.stride + a) as isize - pad;
                    for b in 0..g.kernel_w {
                        let iw = (ow * g.stride + b) as isize - pad;
                        row[j] = if ih >= 0
                            && iw >= 0
                            && (ih as usize) < g.wide_h
                            && (iw as usize) < g.wide_w
                        {
                            plane[ih as usize * g.wide_w + iw as usize]
                        } else {
                            0.0
                        };
                        j += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-adds unfolded columns back onto a wide map.
fn fold(g: &ConvGeometry, cols: &[f64], wide: &mut [f64]) {
    let patch = g.patch_len();
    let pad = g.padding as isize;
    for oh in 0..g.narrow_h {
        for ow in 0..g.narrow_w {
            let row = &cols[(oh * g.narrow_w + ow) * patch..][..patch];
            let mut j = 0;
            for c in 0..g.wide_channels {
                let plane = &mut wide[c * g.wide_h * g.wide_w..][..g.wide_h * g.wide_w];
                for a in 0..g.kernel_h {
                    let ih = (oh * g.stride + a) as isize - pad;
                    for b in 0..g.kernel_w {
                        let iw = (ow * g.stride + b) as isize - pad;
                        if ih >= 0 && iw >= 0 && (ih as usize) < g.wide_h && (iw as usize) < g.wide_w
                        {
                            plane[ih as usize * g.wide_w + iw as usize] += row[j];
                        }
                        j += 1;
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation over the whole batch, without bias.
pub(crate) fn corr_forward(g: &ConvGeometry, wide: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (p, j, co) = (g.positions(), g.patch_len(), g.narrow_channels);
    let mut out = vec![0.0; g.batch * g.narrow_len()];
    let mut cols = vec![0.0; p * j];
    let mut scratch = vec![0.0; p * j.max(co)];
    // Orientation is a speed choice only; both sum over the patch in order.
    let narrow_maps = p >= co;
    let kernel_t = if narrow_maps {
        Vec::new()
    } else {
        let mut kt = vec![0.0; j * co];
        transpose(co, j, kernel, &mut kt);
        kt
    };
    for (wide_n, out_n) in wide
        .chunks_exact(g.wide_len())
        .zip(out.chunks_exact_mut(g.narrow_len()))
    {
        unfold(g, wide_n, &mut cols);
        if narrow_maps {
            let cols_t = &mut scratch[..p * j];
            transpose(p, j, &cols, cols_t);
            gemm_acc(co, j, p, kernel, cols_t, out_n);
        } else {
            let out_t = &mut scratch[..p * co];
            out_t.fill(0.0);
            gemm_acc(p, j, co, &cols, &kernel_t, out_t);
            transpose(p, co, out_t, out_n);
        }
    }
    out
}

/// Adjoint of [`corr_forward`]: maps narrow maps back onto the wide grid.
pub(crate) fn corr_adjoint(g: &ConvGeometry, narrow: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (p, j, co) = (g.positions(), g.patch_len(), g.narrow_channels);
    let mut out = vec![0.0; g.batch * g.wide_len()];
    let mut narrow_t = vec![0.0; p * co];
    let mut cols = vec![0.0; p * j];
    for (narrow_n, out_n) in narrow
        .chunks_exact(g.narrow_len())
        .zip(out.chunks_exact_mut(g.wide_len()))
    {
        transpose(co, p, narrow_n, &mut narrow_t);
        cols.fill(0.0);
        gemm_acc(p, co, j, &narrow_t, kernel, &mut cols);
        fold(g, &cols, out_n);
    }
    out
}

/// Gradient of the kernel: sum over samples and positions of narrow x unfolded wide.
pub(crate) fn corr_kernel_grad(g: &ConvGeometry, wide: &[f64], narrow: &[f64]) -> Vec<f64> {
    let (p, j, co) = (g.positions(), g.patch_len(), g.narrow_channels);
    let mut grad = vec![0.0; g.kernel_len()];
    let mut cols = vec![0.0; p * j];
    for (wide_n, narrow_n) in wide
        .chunks_exact(g.wide_len())
        .zip(narrow.chunks_exact(g.narrow_len()))
    {
        unfold(g, wide_n, &mut cols);
        gemm_acc(co, p, j, narrow_n, &cols, &mut grad);
    }
    grad
}

/// Per-channel sum over batch and positions.
pub(crate) fn channel_sums(batch: usize, channels: usize, positions: usize, x: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; channels];
    for sample in x.chunks_exact(channels * positions).take(batch) {
        for (s, plane) in sums.iter_mut().zip(sample.chunks_exact(positions)) {
            *s += plane.iter().sum::<f64>();
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(g: &ConvGeometry, wide: &[f64], kernel: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.narrow_len()];
        for n in 0..g.batch {
            for co in 0..g.narrow_channels {
                for oh in 0..g.narrow_h {
                    for ow in 0..g.narrow_w {
                        let mut acc = 0.0;
                        for ci in 0..g.wide_channels {
                            for a in 0..g.kernel_h {
                                for b in 0..g.kernel_w {
                                    let ih = (oh * g.stride + a) as isize - g.padding as isize;
                                    let iw = (ow * g.stride + b) as isize - g.padding as isize;
                                    if ih < 0
                                        || iw < 0
                                        || ih as usize >= g.wide_h
                                        || iw as usize >= g.wide_w
                                    {
                                        continue;
                                    }
                                    let x = wide[((n * g.wide_channels + ci) * g.wide_h
                                        + ih as usize)
                                        * g.wide_w
                                        + iw as usize];
                                    let k = kernel[((co * g.wide_channels + ci) * g.kernel_h + a)
                                        * g.kernel_w
                                        + b];
                                    acc += x * k;
                                }
                            }
                        }
                        out[((n * g.narrow_channels + co) * g.narrow_h + oh) * g.narrow_w + ow] =
                            acc;
                    }
                }
            }
        }
        out
    }

    fn geometry(batch: usize, ci: usize, hw: usize, co: usize, k: usize, s: usize, p: usize) -> ConvGeometry {
        let n = ConvGeometry::narrow_extent(hw, k, s, p).unwrap();
        ConvGeometry {
            batch,
            wide_channels: ci,
            wide_h: hw,
            wide_w: hw,
            narrow_channels: co,
            narrow_h: n,
            narrow_w: n,
            kernel_h: k,
            kernel_w: k,
            stride: s,
            padding: p,
        }
    }

    fn ramp(len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|i| ((i * 37 % 17) as f64 - 8.0) * scale).collect()
    }

    #[test]
    fn forward_matches_naive_loops_in_both_orientations() {
        // 8 positions vs 3 channels and 1 position vs 5 channels.
        for g in [geometry(2, 2, 4, 3, 3, 1, 1), geometry(1, 3, 3, 5, 3, 2, 0)] {
            let wide = ramp(g.batch * g.wide_len(), 0.1);
            let kernel = ramp(g.kernel_len(), 0.05);
            let fast = corr_forward(&g, &wide, &kernel);
            let slow = naive_forward(&g, &wide, &kernel);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn extents() {
        assert_eq!(ConvGeometry::narrow_extent(64, 3, 2, 1), Some(32));
        assert_eq!(ConvGeometry::narrow_extent(2, 5, 1, 1), None);
        assert_eq!(ConvGeometry::wide_extent(4, 4, 2, 1), Some(8));
        assert_eq!(ConvGeometry::wide_extent(4, 3, 1, 1), Some(4));
    }
}
