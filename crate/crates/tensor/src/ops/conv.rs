use crate::error::{invalid, shape_err, Result};
use crate::graph::{GradBuf, Graph, NodeId, Op};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Stride / padding / dilation / grouping of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    /// Stride 1, "same" padding for an odd kernel `k`.
    pub fn same(k: usize, dilation: usize, groups: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (k - 1) / 2,
            dilation,
            groups,
        }
    }

    pub fn output_extent(&self, input: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span && self.stride > 0).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }
    fn depthwise(&self) -> bool {
        self.spec.groups == self.cin && self.cout == self.cin
    }
    fn pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.spec.stride == 1
            && self.spec.padding == 0
            && self.spec.groups == 1
    }
}

/// `[lo, hi)` of output positions whose input index `o*stride + offset` is in `[0, len)`.
#[inline]
fn valid(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset < 0 { ((-offset) + s - 1) / s } else { 0 };
    let last = in_len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
    (lo as usize, (hi.max(lo)) as usize)
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cin0: usize, cols: &mut [T]) {
    let (h, w, ho, wo) = (g.h, g.w, g.ho, g.wo);
    let (s, p, d) = (g.spec.stride, g.spec.padding as isize, g.spec.dilation);
    let mut row = 0;
    for ci in 0..g.cin_g() {
        let xin = &x[(cin0 + ci) * h * w..(cin0 + ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                dst.fill(T::ZERO);
                let oy_off = (ky * d) as isize - p;
                let ox_off = (kx * d) as isize - p;
                let (ylo, yhi) = valid(ho, h, s, oy_off);
                let (xlo, xhi) = valid(wo, w, s, ox_off);
                for oy in ylo..yhi {
                    let iy = (oy * s) as isize + oy_off;
                    let src = &xin[iy as usize * w..];
                    for ox in xlo..xhi {
                        dst[oy * wo + ox] = src[((ox * s) as isize + ox_off) as usize];
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, cin0: usize, dx: &mut [T]) {
    let (h, w, ho, wo) = (g.h, g.w, g.ho, g.wo);
    let (s, p, d) = (g.spec.stride, g.spec.padding as isize, g.spec.dilation);
    let mut row = 0;
    for ci in 0..g.cin_g() {
        let xg = &mut dx[(cin0 + ci) * h * w..(cin0 + ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                let oy_off = (ky * d) as isize - p;
                let ox_off = (kx * d) as isize - p;
                let (ylo, yhi) = valid(ho, h, s, oy_off);
                let (xlo, xhi) = valid(wo, w, s, ox_off);
                for oy in ylo..yhi {
                    let iy = ((oy * s) as isize + oy_off) as usize;
                    for ox in xlo..xhi {
                        xg[iy * w + ((ox * s) as isize + ox_off) as usize] += src[oy * wo + ox];
                    }
                }
                row += 1;
            }
        }
    }
}

fn depthwise_forward<T: Real>(x: &[T], wt: &[T], g: &ConvGeom, y: &mut [T]) {
    let (h, w, ho, wo) = (g.h, g.w, g.ho, g.wo);
    let (s, p, d) = (g.spec.stride, g.spec.padding as isize, g.spec.dilation);
    let kk = g.kh * g.kw;
    for bc in 0..g.batch * g.cin {
        let c = bc % g.cin;
        let xin = &x[bc * h * w..(bc + 1) * h * w];
        let out = &mut y[bc * ho * wo..(bc + 1) * ho * wo];
        let wk = &wt[c * kk..(c + 1) * kk];
        for ky in 0..g.kh {
            let oy_off = (ky * d) as isize - p;
            let (ylo, yhi) = valid(ho, h, s, oy_off);
            for kx in 0..g.kw {
                let wv = wk[ky * g.kw + kx];
                let ox_off = (kx * d) as isize - p;
                let (xlo, xhi) = valid(wo, w, s, ox_off);
                if xlo == xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = ((oy * s) as isize + oy_off) as usize;
                    let orow = &mut out[oy * wo..(oy + 1) * wo];
                    let irow = &xin[iy * w..(iy + 1) * w];
                    if s == 1 {
                        let base = (xlo as isize + ox_off) as usize;
                        for (o, &i) in orow[xlo..xhi].iter_mut().zip(&irow[base..base + (xhi - xlo)]) {
                            *o += wv * i;
                        }
                    } else {
                        for ox in xlo..xhi {
                            orow[ox] += wv * irow[((ox * s) as isize + ox_off) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Real>(
    x: &[T],
    wt: &[T],
    g: &ConvGeom,
    gy: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    let (h, w, ho, wo) = (g.h, g.w, g.ho, g.wo);
    let (s, p, d) = (g.spec.stride, g.spec.padding as isize, g.spec.dilation);
    let kk = g.kh * g.kw;
    for bc in 0..g.batch * g.cin {
        let c = bc % g.cin;
        let xin = &x[bc * h * w..(bc + 1) * h * w];
        let go = &gy[bc * ho * wo..(bc + 1) * ho * wo];
        for ky in 0..g.kh {
            let oy_off = (ky * d) as isize - p;
            let (ylo, yhi) = valid(ho, h, s, oy_off);
            for kx in 0..g.kw {
                let wi = c * kk + ky * g.kw + kx;
                let wv = wt[wi];
                let ox_off = (kx * d) as isize - p;
                let (xlo, xhi) = valid(wo, w, s, ox_off);
                let mut acc = T::ZERO;
                for oy in ylo..yhi {
                    let iy = ((oy * s) as isize + oy_off) as usize;
                    for ox in xlo..xhi {
                        let ix = ((ox * s) as isize + ox_off) as usize;
                        let gv = go[oy * wo + ox];
                        acc += gv * xin[iy * w + ix];
                        if let Some(gx) = gx.as_deref_mut() {
                            gx[bc * h * w + iy * w + ix] += wv * gv;
                        }
                    }
                }
                if let Some(gw) = gw.as_deref_mut() {
                    gw[wi] += acc;
                }
            }
        }
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// 2-D convolution of `x: [B, C_in, H, W]` (or `[C_in, H, W]`) with
    /// `w: [C_out, C_in / groups, kh, kw]` and optional bias `[C_out]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: Conv2dSpec) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let unbatched = xs.len() == 3;
        let (batch, cin, h, wd) = match xs.as_slice() {
            [c, h, w] => (1, *c, *h, *w),
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => return Err(shape_err("conv2d(input)", &xs, &ws)),
        };
        if ws.len() != 4 || spec.groups == 0 || spec.stride == 0 || spec.dilation == 0 {
            return Err(shape_err("conv2d(kernel)", &xs, &ws));
        }
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if cin % spec.groups != 0 || cout % spec.groups != 0 || cin / spec.groups != cin_g {
            return Err(invalid(
                "conv2d",
                format!("groups {} incompatible with input {xs:?} and kernel {ws:?}", spec.groups),
            ));
        }
        let (Some(ho), Some(wo)) = (spec.output_extent(h, kh), spec.output_extent(wd, kw)) else {
            return Err(shape_err("conv2d(kernel larger than padded input)", &xs, &ws));
        };
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv2d(bias)", &ws, self.shape(b)));
            }
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho,
            wo,
            spec,
        };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut y = vec![T::ZERO; batch * cout * ho * wo];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for (i, plane) in y.chunks_mut(ho * wo).enumerate() {
                plane.fill(bv[i % cout]);
            }
        }
        if geom.depthwise() {
            depthwise_forward(xv, wv, &geom, &mut y);
        } else {
            let k = cin_g * kh * kw;
            let hw = ho * wo;
            let cout_g = geom.cout_g();
            let mut cols = if geom.pointwise() { Vec::new() } else { vec![T::ZERO; k * hw] };
            for bi in 0..batch {
                let xb = &xv[bi * cin * h * wd..(bi + 1) * cin * h * wd];
                for gi in 0..spec.groups {
                    let src: &[T] = if geom.pointwise() {
                        xb
                    } else {
                        im2col(xb, &geom, gi * cin_g, &mut cols);
                        &cols
                    };
                    let out = &mut y[(bi * cout + gi * cout_g) * hw..(bi * cout + (gi + 1) * cout_g) * hw];
                    gemm(false, false, cout_g, hw, k, &wv[gi * cout_g * k..], src, T::ONE, out);
                }
            }
        }
        let out_shape = if unbatched { vec![cout, ho, wo] } else { vec![batch, cout, ho, wo] };
        let parents: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(&out_shape, y)?, Op::Conv2d { x, w, b, geom }, &parents))
    }
}

pub(crate) fn conv2d_backward<T: Real>(
    gy: &[T],
    (x, xv): (NodeId, &[T]),
    (w, wv): (NodeId, &[T]),
    b: Option<NodeId>,
    geom: &ConvGeom,
    buf: &mut GradBuf<T>,
) {
    let hw = geom.ho * geom.wo;
    if let Some(b) = b {
        if let Some(gb) = buf.get(b) {
            for (i, plane) in gy.chunks(hw).enumerate() {
                gb[i % geom.cout] += plane.iter().copied().sum::<T>();
            }
        }
    }
    if geom.depthwise() {
        let mut gw_tmp = buf.get(w).map(|g| g.to_vec());
        {
            let gx = buf.get(x);
            depthwise_backward(xv, wv, geom, gy, gx, gw_tmp.as_deref_mut());
        }
        if let (Some(tmp), Some(gw)) = (gw_tmp, buf.get(w)) {
            gw.copy_from_slice(&tmp);
        }
        return;
    }
    let (cin, h, wd) = (geom.cin, geom.h, geom.w);
    let cin_g = geom.cin_g();
    let cout_g = geom.cout_g();
    let k = cin_g * geom.kh * geom.kw;
    let need_w = buf.get(w).is_some();
    let need_x = buf.get(x).is_some();
    let mut cols = if geom.pointwise() { Vec::new() } else { vec![T::ZERO; k * hw] };
    let mut dcols = vec![T::ZERO; if geom.pointwise() { 0 } else { k * hw }];
    for bi in 0..geom.batch {
        let xb = &xv[bi * cin * h * wd..(bi + 1) * cin * h * wd];
        for gi in 0..geom.spec.groups {
            let go = &gy[(bi * geom.cout + gi * cout_g) * hw..(bi * geom.cout + (gi + 1) * cout_g) * hw];
            let wg = &wv[gi * cout_g * k..(gi + 1) * cout_g * k];
            if need_w {
                let src: &[T] = if geom.pointwise() {
                    xb
                } else {
                    im2col(xb, geom, gi * cin_g, &mut cols);
                    &cols
                };
                let gw = buf.get(w).expect("checked");
                gemm(false, true, cout_g, k, hw, go, src, T::ONE, &mut gw[gi * cout_g * k..(gi + 1) * cout_g * k]);
            }
            if need_x {
                let gx = buf.get(x).expect("checked");
                let gxb = &mut gx[bi * cin * h * wd..(bi + 1) * cin * h * wd];
                if geom.pointwise() {
                    gemm(true, false, k, hw, cout_g, wg, go, T::ONE, gxb);
                } else {
                    gemm(true, false, k, hw, cout_g, wg, go, T::ZERO, &mut dcols);
                    col2im(&dcols, geom, gi * cin_g, gxb);
                }
            }
        }
    }
}

/// Direct-summation reference convolution (no im2col, no fast paths).
pub fn conv2d_reference(
    x: &[f64],
    (c_in, h, w): (usize, usize, usize),
    kernel: &[f64],
    (c_out, kh, kw): (usize, usize, usize),
    spec: Conv2dSpec,
) -> (Vec<f64>, usize, usize) {
    let ho = spec.output_extent(h, kh).expect("kernel fits");
    let wo = spec.output_extent(w, kw).expect("kernel fits");
    let cin_g = c_in / spec.groups;
    let cout_g = c_out / spec.groups;
    let mut y = vec![0.0; c_out * ho * wo];
    for co in 0..c_out {
        let gi = co / cout_g;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ci in 0..cin_g {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                            let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let xi = ((gi * cin_g + ci) * h + iy as usize) * w + ix as usize;
                            let ki = ((co * cin_g + ci) * kh + ky) * kw + kx;
                            acc += x[xi] * kernel[ki];
                        }
                    }
                }
                y[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (y, ho, wo)
}
