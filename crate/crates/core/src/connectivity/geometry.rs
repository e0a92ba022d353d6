//! Index arithmetic for conv and pool application sites.

use crate::arch::{Conv2d, Pool2d, Shape};

fn chw(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Spatial {
            channels,
            height,
            width,
        } => (channels, height, width),
        Shape::Flat(_) => unreachable!("validated graphs give conv/pool spatial shapes"),
    }
}

/// Output positions `o` along one axis whose input coordinate
/// `o * stride + k - pad` falls inside `0..in_len`.
fn valid_range(
    out_len: usize,
    in_len: usize,
    stride: usize,
    pad: usize,
    k: usize,
) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_pg: usize,
    pub out_pg: usize,
}

impl ConvGeom {
    pub fn new(c: &Conv2d, input: Shape, output: Shape) -> Self {
        let (in_c, in_h, in_w) = chw(input);
        let (out_c, out_h, out_w) = chw(output);
        ConvGeom {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h,
            out_w,
            kh: c.kernel_h,
            kw: c.kernel_w,
            stride: c.stride,
            pad: c.padding,
            in_pg: c.in_per_group(),
            out_pg: c.out_per_group(),
        }
    }

    pub fn flat_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        let cl = ci - (co / self.out_pg) * self.in_pg;
        ((co * self.in_pg + cl) * self.kh + ky) * self.kw + kx
    }

    /// Calls `f(co, ci, ky, kx)` for every kernel entry with `mask` set,
    /// in flat index order. `ci` is the absolute input channel.
    pub fn for_each_kernel_entry(
        &self,
        mask: &[bool],
        mut f: impl FnMut(usize, usize, usize, usize),
    ) {
        let mut idx = 0;
        for co in 0..self.out_c {
            let base = (co / self.out_pg) * self.in_pg;
            for cl in 0..self.in_pg {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if mask[idx] {
                            f(co, base + cl, ky, kx);
                        }
                        idx += 1;
                    }
                }
            }
        }
    }

    /// Every kernel entry in flat index order, regardless of mask.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let mut idx = 0;
        for co in 0..self.out_c {
            let base = (co / self.out_pg) * self.in_pg;
            for cl in 0..self.in_pg {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        f(idx, co, base + cl, ky, kx);
                        idx += 1;
                    }
                }
            }
        }
    }

    /// Calls `f(out_unit, in_unit)` for each valid application site of
    /// kernel entry `(co, ci, ky, kx)`, in output raster order.
    #[inline]
    pub fn for_each_site(
        &self,
        co: usize,
        ci: usize,
        ky: usize,
        kx: usize,
        mut f: impl FnMut(usize, usize),
    ) {
        let (y0, y1) = valid_range(self.out_h, self.in_h, self.stride, self.pad, ky);
        let (x0, x1) = valid_range(self.out_w, self.in_w, self.stride, self.pad, kx);
        let out_base = co * self.out_h * self.out_w;
        let in_base = ci * self.in_h * self.in_w;
        for oy in y0..y1 {
            let iy = oy * self.stride + ky - self.pad;
            let orow = out_base + oy * self.out_w;
            let irow = in_base + iy * self.in_w;
            for ox in x0..x1 {
                let ix = ox * self.stride + kx - self.pad;
                f(orow + ox, irow + ix);
            }
        }
    }

    pub fn forward_or(
        &self,
        input: &[bool],
        out: &mut [bool],
        co: usize,
        ci: usize,
        ky: usize,
        kx: usize,
    ) {
        self.for_each_site(co, ci, ky, kx, |o, i| out[o] |= input[i]);
    }

    pub fn backward_or(
        &self,
        out_bwd: &[bool],
        in_bwd: &mut [bool],
        co: usize,
        ci: usize,
        ky: usize,
        kx: usize,
    ) {
        self.for_each_site(co, ci, ky, kx, |o, i| in_bwd[i] |= out_bwd[o]);
    }

    pub fn any_site(
        &self,
        src: &[bool],
        dst: &[bool],
        co: usize,
        ci: usize,
        ky: usize,
        kx: usize,
    ) -> bool {
        let mut hit = false;
        self.for_each_site(co, ci, ky, kx, |o, i| hit |= src[i] && dst[o]);
        hit
    }

    #[allow(dead_code)]
    pub fn in_units(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolGeom {
    pub fn new(p: &Pool2d, input: Shape, output: Shape) -> Self {
        let (c, in_h, in_w) = chw(input);
        let (_, out_h, out_w) = chw(output);
        PoolGeom {
            c,
            in_h,
            in_w,
            out_h,
            out_w,
            window: p.window,
            stride: p.stride,
            pad: p.padding,
        }
    }

    /// Calls `f(out_unit, in_unit)` for each (output, in-bounds window input) pair.
    pub fn for_each_pair(&self, mut f: impl FnMut(usize, usize)) {
        for c in 0..self.c {
            for ky in 0..self.window {
                for kx in 0..self.window {
                    let (y0, y1) = valid_range(self.out_h, self.in_h, self.stride, self.pad, ky);
                    let (x0, x1) = valid_range(self.out_w, self.in_w, self.stride, self.pad, kx);
                    for oy in y0..y1 {
                        let iy = oy * self.stride + ky - self.pad;
                        for ox in x0..x1 {
                            let ix = ox * self.stride + kx - self.pad;
                            f(
                                (c * self.out_h + oy) * self.out_w + ox,
                                (c * self.in_h + iy) * self.in_w + ix,
                            );
                        }
                    }
                }
            }
        }
    }

    pub fn gather_or(&self, input: &[bool]) -> Vec<bool> {
        let mut out = vec![false; self.c * self.out_h * self.out_w];
        self.for_each_pair(|o, i| out[o] |= input[i]);
        out
    }

    pub fn scatter_or(&self, out_bwd: &[bool], in_bwd: &mut [bool]) {
        self.for_each_pair(|o, i| in_bwd[i] |= out_bwd[o]);
    }
}
