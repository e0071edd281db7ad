use super::{counter, Scalar, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Geometry of a 2-D convolution. Kernels are square with an odd side.
///
/// All network layers use the cross-correlation convention (no kernel flip)
/// with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" padding `dilation·(k−1)/2`.
    pub fn same(kernel_size: usize, dilation: usize, groups: usize) -> Self {
        Self {
            kernel_size,
            stride: 1,
            dilation,
            groups,
            padding: dilation * (kernel_size.saturating_sub(1)) / 2,
        }
    }

    pub fn pointwise() -> Self {
        Self::same(1, 1, 1)
    }

    pub fn depthwise(kernel_size: usize, dilation: usize, channels: usize) -> Self {
        Self::same(kernel_size, dilation, channels)
    }

    /// Downsampling convolution: `stride` with padding `(k−1)/2`.
    pub fn strided(kernel_size: usize, stride: usize) -> Self {
        Self {
            kernel_size,
            stride,
            dilation: 1,
            groups: 1,
            padding: (kernel_size.saturating_sub(1)) / 2,
        }
    }

    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel_size - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(invalid(
                "conv2d",
                format!("kernel_size must be odd, got {}", self.kernel_size),
            ));
        }
        if self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return Err(invalid(
                "conv2d",
                format!(
                    "stride, dilation and groups must be >= 1 (got {}, {}, {})",
                    self.stride, self.dilation, self.groups
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    k: usize,
    s: usize,
    d: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(input: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        let [n, cin, h, w] = match *input {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(shape_err("conv2d", format!("input must be rank 4, got {input:?}"))),
        };
        let [cout, cin_g, kh, kw] = match *weight {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(shape_err(
                    "conv2d",
                    format!("weight must be rank 4, got {weight:?}"),
                ))
            }
        };
        let k = spec.kernel_size;
        if kh != k || kw != k {
            return Err(shape_err(
                "conv2d",
                format!("weight kernel dims {kh}x{kw} do not match kernel_size {k}"),
            ));
        }
        let g = spec.groups;
        if cin % g != 0 || cout % g != 0 {
            return Err(shape_err(
                "conv2d",
                format!("channels in={cin} out={cout} not divisible by groups={g}"),
            ));
        }
        if cin / g != cin_g {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input channels: weight expects {} per group ({} total), input has {cin}",
                    cin_g,
                    cin_g * g
                ),
            ));
        }
        let (oh, ow) = match (spec.output_extent(h), spec.output_extent(w)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(shape_err(
                    "conv2d",
                    format!("spatial extent {h}x{w} too small for kernel span"),
                ))
            }
        };
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            cin_g,
            cout_g: cout / g,
            k,
            s: spec.stride,
            d: spec.dilation,
            p: spec.padding,
            oh,
            ow,
        })
    }

    fn is_plain_pointwise(&self) -> bool {
        self.k == 1 && self.s == 1 && self.p == 0
    }

    /// Offset of tap `t` relative to the strided output position.
    fn tap_offset(&self, t: usize) -> isize {
        (t * self.d) as isize - self.p as isize
    }
}

/// Dot product over eight interleaved lanes, combined in a fixed order.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    ((lanes[0] + lanes[4]) + (lanes[2] + lanes[6])) + ((lanes[1] + lanes[5]) + (lanes[3] + lanes[7])) + tail
}

#[inline]
fn sum<T: Scalar>(a: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let c = a.chunks_exact(8);
    let tail: T = c.remainder().iter().copied().sum();
    for x in c {
        for l in 0..8 {
            lanes[l] += x[l];
        }
    }
    ((lanes[0] + lanes[4]) + (lanes[2] + lanes[6])) + ((lanes[1] + lanes[5]) + (lanes[3] + lanes[7])) + tail
}

/// Output positions `[lo, hi)` whose tap at offset `off` lands inside `[0, in_len)`.
fn valid_range(off: isize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let last = in_len as isize - 1 - off;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
    let lo = lo as usize;
    (lo, (hi.max(0) as usize).max(lo))
}

/// Visit every (output row, input row, output column range, input column
/// offset) pair touched by tap `(ky, kx)`.
#[inline]
fn for_each_row(g: &Geom, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize, isize)) {
    let off_y = g.tap_offset(ky);
    let off_x = g.tap_offset(kx);
    let (oy_lo, oy_hi) = valid_range(off_y, g.s, g.h, g.oh);
    let (ox_lo, ox_hi) = valid_range(off_x, g.s, g.w, g.ow);
    if ox_lo >= ox_hi {
        return;
    }
    for oy in oy_lo..oy_hi {
        let iy = (oy * g.s) as isize + off_y;
        f(oy, iy as usize, ox_lo, ox_hi, off_x);
    }
}

/// Direct 2-D cross-correlation with zero padding.
///
/// `input` is `[n, cin, h, w]`, `weight` is `[cout, cin/groups, k, k]` and
/// `bias`, when present, is `[cout]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geom::new(input.shape(), weight.shape(), spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(shape_err(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), g.cout),
            ));
        }
    }
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let kk = g.k * g.k;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); g.n * g.cout * out_plane];

    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let o = &mut out[(n * g.cout + oc) * out_plane..][..out_plane];
            if let Some(b) = bias {
                o.fill(b.data()[oc]);
            }
            for icl in 0..g.cin_g {
                let ic = grp * g.cin_g + icl;
                let xi = &x[(n * g.cin + ic) * in_plane..][..in_plane];
                let wk = &wt[(oc * g.cin_g + icl) * kk..][..kk];
                if g.is_plain_pointwise() {
                    let wv = wk[0];
                    for (ov, &iv) in o.iter_mut().zip(xi) {
                        *ov += wv * iv;
                    }
                    continue;
                }
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wk[ky * g.k + kx];
                        for_each_row(&g, ky, kx, |oy, iy, lo, hi, off_x| {
                            let orow = &mut o[oy * g.ow..][..g.ow];
                            let irow = &xi[iy * g.w..][..g.w];
                            if g.s == 1 {
                                let ix0 = (lo as isize + off_x) as usize;
                                for (ov, &iv) in orow[lo..hi].iter_mut().zip(&irow[ix0..]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                let base = (lo * g.s) as isize + off_x;
                                for (t, ov) in orow[lo..hi].iter_mut().enumerate() {
                                    *ov += wv * irow[(base + (t * g.s) as isize) as usize];
                                }
                            }
                        });
                    }
                }
            }
        }
    }
    counter::add_conv((g.n * g.cout * out_plane * g.cin_g * kk) as u64);
    Ok(Tensor::from_parts(vec![g.n, g.cout, g.oh, g.ow], out))
}

/// Gradient of [`conv2d`] with respect to its input (the transposed
/// convolution of `grad_out` with `weight`).
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    input_shape: &[usize],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geom::new(input_shape, weight.shape(), spec)?;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(shape_err(
            "conv2d_backward_input",
            format!("grad_out shape {:?}", grad_out.shape()),
        ));
    }
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let kk = g.k * g.k;
    let go = grad_out.data();
    let wt = weight.data();
    let mut gx = vec![T::zero(); g.n * g.cin * in_plane];

    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let o = &go[(n * g.cout + oc) * out_plane..][..out_plane];
            for icl in 0..g.cin_g {
                let ic = grp * g.cin_g + icl;
                let xi = &mut gx[(n * g.cin + ic) * in_plane..][..in_plane];
                let wk = &wt[(oc * g.cin_g + icl) * kk..][..kk];
                if g.is_plain_pointwise() {
                    let wv = wk[0];
                    for (iv, &ov) in xi.iter_mut().zip(o) {
                        *iv += wv * ov;
                    }
                    continue;
                }
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wk[ky * g.k + kx];
                        for_each_row(&g, ky, kx, |oy, iy, lo, hi, off_x| {
                            let orow = &o[oy * g.ow..][..g.ow];
                            let irow = &mut xi[iy * g.w..][..g.w];
                            if g.s == 1 {
                                let ix0 = (lo as isize + off_x) as usize;
                                for (iv, &ov) in irow[ix0..].iter_mut().zip(&orow[lo..hi]) {
                                    *iv += wv * ov;
                                }
                            } else {
                                let base = (lo * g.s) as isize + off_x;
                                for (t, &ov) in orow[lo..hi].iter().enumerate() {
                                    irow[(base + (t * g.s) as isize) as usize] += wv * ov;
                                }
                            }
                        });
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), gx))
}

/// Gradients of [`conv2d`] with respect to weight and bias.
pub fn conv2d_backward_weight<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight_shape: &[usize],
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = Geom::new(input.shape(), weight_shape, spec)?;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(shape_err(
            "conv2d_backward_weight",
            format!("grad_out shape {:?}", grad_out.shape()),
        ));
    }
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let kk = g.k * g.k;
    let go = grad_out.data();
    let x = input.data();
    let mut gw = vec![T::zero(); g.cout * g.cin_g * kk];
    let mut gb = vec![T::zero(); g.cout];

    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let o = &go[(n * g.cout + oc) * out_plane..][..out_plane];
            gb[oc] += sum(o);
            for icl in 0..g.cin_g {
                let ic = grp * g.cin_g + icl;
                let xi = &x[(n * g.cin + ic) * in_plane..][..in_plane];
                let wk = &mut gw[(oc * g.cin_g + icl) * kk..][..kk];
                if g.is_plain_pointwise() {
                    wk[0] += dot(o, xi);
                    continue;
                }
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let mut acc = T::zero();
                        for_each_row(&g, ky, kx, |oy, iy, lo, hi, off_x| {
                            let orow = &o[oy * g.ow..][..g.ow];
                            let irow = &xi[iy * g.w..][..g.w];
                            if g.s == 1 {
                                let ix0 = (lo as isize + off_x) as usize;
                                acc += dot(&orow[lo..hi], &irow[ix0..]);
                            } else {
                                let base = (lo * g.s) as isize + off_x;
                                for (t, &ov) in orow[lo..hi].iter().enumerate() {
                                    acc += ov * irow[(base + (t * g.s) as isize) as usize];
                                }
                            }
                        });
                        wk[ky * g.k + kx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(weight_shape.to_vec(), gw),
        Tensor::from_parts(vec![g.cout], gb),
    ))
}
