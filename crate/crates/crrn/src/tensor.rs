//! Dense 4-D tensors in NCHW layout with the convolution kernels used by the
//! rest of the crate. These are plain value types; differentiation lives in
//! [`crate::tape`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    dims: Dims,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(dims: Dims, data: Vec<S>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        let t = Tensor { dims, data };
        t.debug_check_finite("new");
        Ok(t)
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor {
            dims,
            data: vec![S::zero(); dims.len()],
        }
    }

    pub fn full(dims: Dims, v: S) -> Self {
        Tensor {
            dims,
            data: vec![v; dims.len()],
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            dims: Dims::new(1, 1, 1, 1),
            data: vec![v],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.dims.len() == 1
    }

    pub fn scalar_value(&self) -> S {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + h) * self.dims.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: S) {
        let i = self.idx(n, c, h, w);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                context: "zip_map",
                expected: self.dims,
                got: other.dims,
            });
        }
        Ok(Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_in_place(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, k: S) {
        for a in self.data.iter_mut() {
            *a *= k;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn convert<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&x| T::from_real(x.as_f64())).collect(),
        }
    }

    /// No op may ever emit NaN/Inf from finite inputs; checked in debug builds.
    pub fn debug_check_finite(&self, context: &str) {
        if cfg!(debug_assertions) {
            for &v in &self.data {
                debug_assert!(v.is_finite(), "non-finite value after {context}");
            }
        }
    }
}

fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        return Err(Error::invalid(format!(
            "convolution output extent not positive: input {input}, kernel {k}, pad {pad}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Cross-correlation with zero padding. Weight dims (c_out, c_in, k, k).
pub fn conv2d_raw<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let xd = x.dims();
    let wd = w.dims();
    if wd.h != wd.w {
        return Err(Error::invalid("conv2d expects square kernels"));
    }
    if xd.c != wd.c {
        return Err(Error::ShapeMismatch {
            context: "conv2d input channels vs weight",
            expected: Dims::new(xd.n, wd.c, xd.h, xd.w),
            got: xd,
        });
    }
    if let Some(b) = bias {
        if b.dims().len() != wd.n {
            return Err(Error::ShapeMismatch {
                context: "conv2d bias",
                expected: Dims::new(1, wd.n, 1, 1),
                got: b.dims(),
            });
        }
    }
    let k = wd.h;
    let oh = conv_out_extent(xd.h, k, stride, pad)?;
    let ow = conv_out_extent(xd.w, k, stride, pad)?;
    let od = Dims::new(xd.n, wd.n, oh, ow);
    let mut out = Tensor::zeros(od);
    for n in 0..xd.n {
        for co in 0..wd.n {
            let b = bias.map(|b| b.data()[co]).unwrap_or_else(S::zero);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for ci in 0..xd.c {
                        for ky in 0..k {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= xd.h {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..k {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= xd.w {
                                    continue;
                                }
                                acc = acc + x.at(n, ci, iy, ix - pad) * w.at(co, ci, ky, kx);
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out.debug_check_finite("conv2d");
    Ok(out)
}

/// d(loss)/d(input) of conv2d given d(loss)/d(output).
pub fn conv2d_grad_input<S: Scalar>(
    gout: &Tensor<S>,
    w: &Tensor<S>,
    input_dims: Dims,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let gd = gout.dims();
    let wd = w.dims();
    let k = wd.h;
    let mut gin = Tensor::zeros(input_dims);
    for n in 0..gd.n {
        for co in 0..gd.c {
            for oy in 0..gd.h {
                for ox in 0..gd.w {
                    let g = gout.at(n, co, oy, ox);
                    for ci in 0..input_dims.c {
                        for ky in 0..k {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= input_dims.h {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..k {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= input_dims.w {
                                    continue;
                                }
                                let i = gin.idx(n, ci, iy, ix - pad);
                                gin.data_mut()[i] += g * w.at(co, ci, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

/// d(loss)/d(weight) of conv2d given d(loss)/d(output).
pub fn conv2d_grad_weight<S: Scalar>(
    gout: &Tensor<S>,
    x: &Tensor<S>,
    weight_dims: Dims,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let gd = gout.dims();
    let xd = x.dims();
    let k = weight_dims.h;
    let mut gw = Tensor::zeros(weight_dims);
    for n in 0..gd.n {
        for co in 0..gd.c {
            for oy in 0..gd.h {
                for ox in 0..gd.w {
                    let g = gout.at(n, co, oy, ox);
                    for ci in 0..xd.c {
                        for ky in 0..k {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= xd.h {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..k {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= xd.w {
                                    continue;
                                }
                                let i = gw.idx(co, ci, ky, kx);
                                gw.data_mut()[i] += g * x.at(n, ci, iy, ix - pad);
                            }
                        }
                    }
                }
            }
        }
    }
    gw
}

/// Per-output-channel bias gradient of conv2d.
pub fn conv2d_grad_bias<S: Scalar>(gout: &Tensor<S>) -> Tensor<S> {
    let gd = gout.dims();
    let mut gb = Tensor::zeros(Dims::new(1, gd.c, 1, 1));
    for n in 0..gd.n {
        for c in 0..gd.c {
            let mut acc = S::zero();
            for y in 0..gd.h {
                for x in 0..gd.w {
                    acc += gout.at(n, c, y, x);
                }
            }
            let i = gb.idx(0, c, 0, 0);
            gb.data_mut()[i] += acc;
        }
    }
    gb
}

/// Transposed convolution. Weight dims (c_in, c_out, k, k).
/// Output spatial extent: (h - 1) * stride + k - 2 * pad + out_pad;
/// out_pad grows the bottom/right edge so stride-2 deconvs with odd
/// kernels can exactly double even extents.
pub fn conv_transpose2d_raw<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Tensor<S>> {
    let xd = x.dims();
    let wd = w.dims();
    if wd.h != wd.w {
        return Err(Error::invalid("conv_transpose2d expects square kernels"));
    }
    if xd.c != wd.n {
        return Err(Error::ShapeMismatch {
            context: "conv_transpose2d input channels vs weight",
            expected: Dims::new(xd.n, wd.n, xd.h, xd.w),
            got: xd,
        });
    }
    let k = wd.h;
    if out_pad >= stride {
        return Err(Error::invalid("conv_transpose2d out_pad must be < stride"));
    }
    let oh = (xd.h - 1) * stride + k + out_pad;
    let ow = (xd.w - 1) * stride + k + out_pad;
    if oh <= 2 * pad || ow <= 2 * pad {
        return Err(Error::invalid("conv_transpose2d output extent not positive"));
    }
    let (oh, ow) = (oh - 2 * pad, ow - 2 * pad);
    let od = Dims::new(xd.n, wd.c, oh, ow);
    let mut out = Tensor::zeros(od);
    if let Some(b) = bias {
        if b.dims().len() != wd.c {
            return Err(Error::ShapeMismatch {
                context: "conv_transpose2d bias",
                expected: Dims::new(1, wd.c, 1, 1),
                got: b.dims(),
            });
        }
        for n in 0..od.n {
            for co in 0..od.c {
                let v = b.data()[co];
                for y in 0..oh {
                    for xq in 0..ow {
                        out.set(n, co, y, xq, v);
                    }
                }
            }
        }
    }
    for n in 0..xd.n {
        for ci in 0..xd.c {
            for iy in 0..xd.h {
                for ix in 0..xd.w {
                    let v = x.at(n, ci, iy, ix);
                    for co in 0..wd.c {
                        for ky in 0..k {
                            let oy = iy * stride + ky;
                            if oy < pad || oy - pad >= oh {
                                continue;
                            }
                            let oy = oy - pad;
                            for kx in 0..k {
                                let ox = ix * stride + kx;
                                if ox < pad || ox - pad >= ow {
                                    continue;
                                }
                                let i = out.idx(n, co, oy, ox - pad);
                                out.data_mut()[i] += v * w.at(ci, co, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    out.debug_check_finite("conv_transpose2d");
    Ok(out)
}

pub fn conv_transpose2d_grad_input<S: Scalar>(
    gout: &Tensor<S>,
    w: &Tensor<S>,
    input_dims: Dims,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let wd = w.dims();
    let gd = gout.dims();
    let k = wd.h;
    let mut gin = Tensor::zeros(input_dims);
    for n in 0..input_dims.n {
        for ci in 0..input_dims.c {
            for iy in 0..input_dims.h {
                for ix in 0..input_dims.w {
                    let mut acc = S::zero();
                    for co in 0..wd.c {
                        for ky in 0..k {
                            let oy = iy * stride + ky;
                            if oy < pad || oy - pad >= gd.h {
                                continue;
                            }
                            let oy = oy - pad;
                            for kx in 0..k {
                                let ox = ix * stride + kx;
                                if ox < pad || ox - pad >= gd.w {
                                    continue;
                                }
                                acc += gout.at(n, co, oy, ox - pad) * w.at(ci, co, ky, kx);
                            }
                        }
                    }
                    let i = gin.idx(n, ci, iy, ix);
                    gin.data_mut()[i] += acc;
                }
            }
        }
    }
    gin
}

pub fn conv_transpose2d_grad_weight<S: Scalar>(
    gout: &Tensor<S>,
    x: &Tensor<S>,
    weight_dims: Dims,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let xd = x.dims();
    let gd = gout.dims();
    let k = weight_dims.h;
    let mut gw = Tensor::zeros(weight_dims);
    for n in 0..xd.n {
        for ci in 0..xd.c {
            for iy in 0..xd.h {
                for ix in 0..xd.w {
                    let v = x.at(n, ci, iy, ix);
                    for co in 0..weight_dims.c {
                        for ky in 0..k {
                            let oy = iy * stride + ky;
                            if oy < pad || oy - pad >= gd.h {
                                continue;
                            }
                            let oy = oy - pad;
                            for kx in 0..k {
                                let ox = ix * stride + kx;
                                if ox < pad || ox - pad >= gd.w {
                                    continue;
                                }
                                let i = gw.idx(ci, co, ky, kx);
                                gw.data_mut()[i] += v * gout.at(n, co, oy, ox - pad);
                            }
                        }
                    }
                }
            }
        }
    }
    gw
}

/// Max over a k x k window anchored so a single hot cell dilates to a k x k
/// blob; output keeps the input extent.
pub fn maxpool_cover<S: Scalar>(x: &Tensor<S>, k: usize) -> Tensor<S> {
    pool_cover(x, k, true)
}

pub fn minpool_cover<S: Scalar>(x: &Tensor<S>, k: usize) -> Tensor<S> {
    pool_cover(x, k, false)
}

fn pool_cover<S: Scalar>(x: &Tensor<S>, k: usize, max: bool) -> Tensor<S> {
    let d = x.dims();
    let mut out = Tensor::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            for y in 0..d.h {
                for xq in 0..d.w {
                    let y0 = y.saturating_sub(k - 1);
                    let x0 = xq.saturating_sub(k - 1);
                    let mut best = x.at(n, c, y0, x0);
                    for yy in y0..=y {
                        for xx in x0..=xq {
                            let v = x.at(n, c, yy, xx);
                            best = if max { best.max(v) } else { best.min(v) };
                        }
                    }
                    out.set(n, c, y, xq, best);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f64>;

    #[test]
    fn conv2d_scalar_kernel() {
        let x = T::full(Dims::new(1, 1, 3, 3), 1.0);
        let w = T::new(Dims::new(1, 1, 1, 1), vec![2.0]).unwrap();
        let y = conv2d_raw(&x, &w, None, 1, 0).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_zero_weight_gives_bias() {
        let x = T::full(Dims::new(1, 2, 4, 4), 3.0);
        let w = T::zeros(Dims::new(3, 2, 3, 3));
        let b = T::new(Dims::new(1, 3, 1, 1), vec![1.0, -2.0, 0.5]).unwrap();
        let y = conv2d_raw(&x, &w, Some(&b), 1, 1).unwrap();
        for c in 0..3 {
            for yy in 0..4 {
                for xx in 0..4 {
                    assert_eq!(y.at(0, c, yy, xx), b.data()[c]);
                }
            }
        }
    }

    #[test]
    fn conv_transpose_stamps_kernel() {
        let x = T::new(Dims::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let w = T::new(
            Dims::new(1, 1, 3, 3),
            (0..9).map(|i| i as f64).collect(),
        )
        .unwrap();
        let y = conv_transpose2d_raw(&x, &w, None, 1, 0, 0).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 3, 3));
        assert_eq!(y.data(), w.data());
    }

    #[test]
    fn conv2d_shape_mismatch_rejected() {
        let x = T::zeros(Dims::new(1, 3, 4, 4));
        let w = T::zeros(Dims::new(2, 2, 3, 3));
        assert!(matches!(
            conv2d_raw(&x, &w, None, 1, 1),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn pool_cover_dilates_single_cell() {
        let mut x = T::zeros(Dims::new(1, 1, 6, 6));
        x.set(0, 0, 2, 3, 5.0);
        let y = maxpool_cover(&x, 2);
        let mut hot = 0;
        for yy in 0..6 {
            for xx in 0..6 {
                if y.at(0, 0, yy, xx) > 0.0 {
                    hot += 1;
                    assert!((2..=3).contains(&yy) && (3..=4).contains(&xx));
                }
            }
        }
        assert_eq!(hot, 4);
    }
}
