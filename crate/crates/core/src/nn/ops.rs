use candle_core::{Tensor, D};

use crate::error::{shape_err, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(xs: &Tensor, slope: f64) -> Result<Tensor> {
    let zeros = xs.zeros_like()?;
    Ok((xs.maximum(&zeros)? + (xs.minimum(&zeros)? * slope)?)?)
}

/// Softmax over the last dimension.
pub fn softmax_last(xs: &Tensor) -> Result<Tensor> {
    let max = xs.max_keepdim(D::Minus1)?.detach();
    let e = xs.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Normalizes over the last dimension, then applies `gamma` and `beta`.
pub fn layer_norm(xs: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = xs.mean_keepdim(D::Minus1)?;
    let centered = xs.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

/// Mean absolute difference over all elements.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(shape_err!("l1 between {:?} and {:?}", a.dims(), b.dims()));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Mean squared difference between `a` and a constant.
pub fn mse_to(a: &Tensor, target: f64) -> Result<Tensor> {
    Ok((a - target)?.sqr()?.mean_all()?)
}

/// Box-filter downsizing of `[B, C, H, W]` to `size x size`.
///
/// Each output pixel is the mean of its `H/size x W/size` input block, so the
/// sides must be multiples of `size`.
pub fn area_downsample(xs: &Tensor, size: usize) -> Result<Tensor> {
    let (_, _, h, w) = xs.dims4()?;
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(shape_err!("cannot area-resize {h}x{w} to {size}x{size}"));
    }
    let (kh, kw) = (h / size, w / size);
    if kh == 1 && kw == 1 {
        return Ok(xs.clone());
    }
    Ok(xs.avg_pool2d((kh, kw))?)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(xs: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = xs.dims4()?;
    Ok(xs.upsample_nearest2d(h * 2, w * 2)?)
}

/// Converts a scalar tensor of any float type to f64.
/// Takes every `stride`-th position along dims 2 and 3, starting at 0.
/// Patch geometry shared by [`Unfold`] and [`Fold`].
#[derive(Debug, Clone, Copy)]
struct Patches {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    padding: usize,
    stride: usize,
}

impl Patches {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.padding - self.kh) / self.stride + 1,
            (self.w + 2 * self.padding - self.kw) / self.stride + 1,
        )
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Calls `f(image_index, column_index)` for every in-bounds tap of one sample.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (ho, wo) = self.out_hw();
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = (ci * self.h + iy as usize) * self.w;
                        let dst = (row * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                f(src + ix as usize, dst + ox);
                            }
                        }
                    }
                }
            }
        }
    }

    fn unfold<T: Copy + Default>(&self, n: usize, xs: &[T]) -> Vec<T> {
        let (ho, wo) = self.out_hw();
        let (img, col) = (self.c * self.h * self.w, self.rows() * ho * wo);
        let mut out = vec![T::default(); n * col];
        for b in 0..n {
            let (x, o) = (&xs[b * img..(b + 1) * img], &mut out[b * col..(b + 1) * col]);
            self.for_each_tap(|i, j| o[j] = x[i]);
        }
        out
    }

    fn fold<T: Copy + Default + std::ops::AddAssign>(&self, n: usize, cols: &[T]) -> Vec<T> {
        let (ho, wo) = self.out_hw();
        let (img, col) = (self.c * self.h * self.w, self.rows() * ho * wo);
        let mut out = vec![T::default(); n * img];
        for b in 0..n {
            let (x, o) = (&cols[b * col..(b + 1) * col], &mut out[b * img..(b + 1) * img]);
            self.for_each_tap(|i, j| o[i] += x[j]);
        }
        out
    }
}

fn contiguous_slice<'a, T: candle_core::WithDType>(
    storage: &'a candle_core::CpuStorage,
    layout: &candle_core::Layout,
) -> candle_core::Result<&'a [T]> {
    let (a, b) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("patch op needs a contiguous input".into()))?;
    Ok(&storage.as_slice::<T>()?[a..b])
}

/// `[n, c, h, w]` to the patch matrix `[n, c*kh*kw, ho*wo]`.
struct Unfold(Patches);

/// Adjoint of [`Unfold`]: sums patch columns back into `[n, c, h, w]`.
struct Fold(Patches);

impl candle_core::CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(
        &self,
        storage: &candle_core::CpuStorage,
        layout: &candle_core::Layout,
    ) -> candle_core::Result<(candle_core::CpuStorage, candle_core::Shape)> {
        use candle_core::CpuStorage as S;
        let n = layout.dims()[0];
        let (ho, wo) = self.0.out_hw();
        let out = match storage {
            S::F32(_) => S::F32(self.0.unfold(n, contiguous_slice::<f32>(storage, layout)?)),
            S::F64(_) => S::F64(self.0.unfold(n, contiguous_slice::<f64>(storage, layout)?)),
            other => return Err(candle_core::Error::UnsupportedDTypeForOp(candle_core::backend::BackendStorage::dtype(other), "unfold")),
        };
        Ok((out, (n, self.0.rows(), ho * wo).into()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Fold(self.0))?))
    }
}

impl candle_core::CustomOp1 for Fold {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn cpu_fwd(
        &self,
        storage: &candle_core::CpuStorage,
        layout: &candle_core::Layout,
    ) -> candle_core::Result<(candle_core::CpuStorage, candle_core::Shape)> {
        use candle_core::CpuStorage as S;
        let n = layout.dims()[0];
        let p = self.0;
        let out = match storage {
            S::F32(_) => S::F32(p.fold(n, contiguous_slice::<f32>(storage, layout)?)),
            S::F64(_) => S::F64(p.fold(n, contiguous_slice::<f64>(storage, layout)?)),
            other => return Err(candle_core::Error::UnsupportedDTypeForOp(candle_core::backend::BackendStorage::dtype(other), "fold")),
        };
        Ok((out, (n, p.c, p.h, p.w).into()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Unfold(self.0))?))
    }
}

/// 2-d convolution as a patch matrix times the flattened kernel.
///
/// Same result as `Tensor::conv2d`. The backward pass is the adjoint patch
/// operation plus matrix products, which is much faster on the CPU than the
/// transposed convolution candle uses, and stays differentiable to any order.
pub fn conv2d(xs: &Tensor, weight: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let (n, cin, h, w) = xs.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin || stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(shape_err!(
            "conv2d of {:?} with kernel {:?} (padding {padding}, stride {stride})",
            xs.dims(),
            weight.dims()
        ));
    }
    let p = Patches {
        c: cin,
        h,
        w,
        kh,
        kw,
        padding,
        stride,
    };
    let (ho, wo) = p.out_hw();
    let cols = xs.contiguous()?.apply_op1(Unfold(p))?;
    let wm = weight.reshape((cout, p.rows()))?;
    Ok(wm.broadcast_matmul(&cols)?.reshape((n, cout, ho, wo))?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Flattens a tensor of any float type into an f64 vector.
pub fn to_vec_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}
