//! Patch extraction (`im2col`), its adjoint (`col2im`) and a direct
//! depthwise 3x3 kernel as differentiable candle ops. Convolutions built on
//! them reduce to matmuls, whose backward pass is far cheaper on the CPU than
//! candle's native convolution kernels.

use std::ops::{AddAssign, Mul};

use candle_core::{bail, CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor};

/// Square-kernel patch geometry over an `h × w` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Patches {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl Patches {
    pub fn new(
        k: usize,
        stride: usize,
        pad: usize,
        h: usize,
        w: usize,
    ) -> candle_core::Result<Self> {
        if k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            bail!("invalid patch geometry k={k} stride={stride} pad={pad} on {h}x{w}");
        }
        Ok(Self {
            k,
            stride,
            pad,
            h,
            w,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Calls `f(row, col, pixel)` for every in-bounds `(patch row, output
    /// position, input pixel)` triple of one channel.
    fn visit(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for kh in 0..self.k {
            for kw in 0..self.k {
                let row = kh * self.k + kw;
                for y in 0..oh {
                    let iy = (y * self.stride + kh) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for x in 0..ow {
                        let ix = (x * self.stride + kw) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        f(row, y * ow + x, iy as usize * self.w + ix as usize);
                    }
                }
            }
        }
    }

    /// Column `b·L + position` of row `c·k² + tap` holds the tapped pixel.
    fn im2col<T: Copy + Default>(&self, x: &[T], batch: usize, channels: usize) -> Vec<T> {
        let (kk, l, hw) = (
            self.k * self.k,
            self.out_h() * self.out_w(),
            self.h * self.w,
        );
        let width = batch * l;
        let mut out = vec![T::default(); channels * kk * width];
        for b in 0..batch {
            for c in 0..channels {
                let src = &x[(b * channels + c) * hw..][..hw];
                let dst = &mut out[c * kk * width..][..kk * width];
                self.visit(|row, col, pix| dst[row * width + b * l + col] = src[pix]);
            }
        }
        out
    }

    fn col2im<T: Copy + Default + AddAssign>(
        &self,
        cols: &[T],
        batch: usize,
        channels: usize,
    ) -> Vec<T> {
        let (kk, l, hw) = (
            self.k * self.k,
            self.out_h() * self.out_w(),
            self.h * self.w,
        );
        let width = batch * l;
        let mut out = vec![T::default(); batch * channels * hw];
        for b in 0..batch {
            for c in 0..channels {
                let src = &cols[c * kk * width..][..kk * width];
                let dst = &mut out[(b * channels + c) * hw..][..hw];
                self.visit(|row, col, pix| dst[pix] += src[row * width + b * l + col]);
            }
        }
        out
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => bail!("patch ops need contiguous input"),
    }
}

/// `(B, C, H, W)` to `(C·k·k, B·L)` with `L = out_h · out_w`.
struct Im2Col(Patches);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, c, h, w) = layout.shape().dims4()?;
        let g = self.0;
        if (h, w) != (g.h, g.w) {
            bail!("im2col expected {}x{} input, got {h}x{w}", g.h, g.w);
        }
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(g.im2col(contiguous(v, layout)?, b, c)),
            CpuStorage::F64(v) => CpuStorage::F64(g.im2col(contiguous(v, layout)?, b, c)),
            _ => bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, Shape::from((c * g.k * g.k, b * g.out_h() * g.out_w()))))
    }

    fn bwd(
        &self,
        _arg: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Col2Im(self.0))?))
    }
}

/// `(C·k·k, B·L)` back to `(B, C, H, W)`, summing overlapping patches.
struct Col2Im(Patches);

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (rows, width) = layout.shape().dims2()?;
        let g = self.0;
        let (kk, l) = (g.k * g.k, g.out_h() * g.out_w());
        if rows % kk != 0 || width % l != 0 {
            bail!("col2im got ({rows}, {width}) for geometry {g:?}");
        }
        let (b, c) = (width / l, rows / kk);
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(g.col2im(contiguous(v, layout)?, b, c)),
            CpuStorage::F64(v) => CpuStorage::F64(g.col2im(contiguous(v, layout)?, b, c)),
            _ => bail!("col2im supports f32 and f64 only"),
        };
        Ok((out, Shape::from((b, c, g.h, g.w))))
    }

    fn bwd(
        &self,
        _arg: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Im2Col(self.0))?))
    }
}

pub(crate) fn im2col(
    x: &Tensor,
    k: usize,
    stride: usize,
    pad: usize,
) -> candle_core::Result<(Tensor, Patches)> {
    let (_, _, h, w) = x.dims4()?;
    let g = Patches::new(k, stride, pad, h, w)?;
    Ok((x.contiguous()?.apply_op1(Im2Col(g))?, g))
}

pub(crate) fn col2im(cols: &Tensor, g: Patches) -> candle_core::Result<Tensor> {
    cols.contiguous()?.apply_op1(Col2Im(g))
}

/// `x + b` broadcast over the channel axis of a `(B, C, ...)` tensor.
struct ChannelBias;

fn planes_of(layout: &Layout) -> candle_core::Result<(usize, usize, usize)> {
    let dims = layout.shape().dims();
    if dims.len() < 2 {
        bail!("channel ops need at least (B, C), got {dims:?}");
    }
    Ok((dims[0], dims[1], dims[2..].iter().product()))
}

impl CustomOp2 for ChannelBias {
    fn name(&self) -> &'static str {
        "channel-bias"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (_, c, n) = planes_of(l1)?;
        if l2.shape().dims() != [c] {
            bail!("bias must have {c} entries, got {:?}", l2.shape().dims());
        }
        fn add<T: Copy + AddAssign>(x: &[T], b: &[T], n: usize) -> Vec<T> {
            let mut out = x.to_vec();
            for (p, plane) in out.chunks_mut(n).enumerate() {
                let v = b[p % b.len()];
                plane.iter_mut().for_each(|e| *e += v);
            }
            out
        }
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(b)) => {
                CpuStorage::F32(add(contiguous(x, l1)?, contiguous(b, l2)?, n))
            }
            (CpuStorage::F64(x), CpuStorage::F64(b)) => {
                CpuStorage::F64(add(contiguous(x, l1)?, contiguous(b, l2)?, n))
            }
            _ => bail!("channel-bias needs matching f32 or f64 operands"),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        _x: &Tensor,
        _b: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let db = grad.contiguous()?.apply_op1_no_bwd(&ChannelSum)?;
        Ok((Some(grad.clone()), Some(db)))
    }
}

/// Sum of a `(B, C, ...)` tensor over everything but the channel axis.
struct ChannelSum;

impl CustomOp1 for ChannelSum {
    fn name(&self) -> &'static str {
        "channel-sum"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (_, c, n) = planes_of(layout)?;
        fn sum<T: Copy + Default + AddAssign>(x: &[T], c: usize, n: usize) -> Vec<T> {
            let mut out = vec![T::default(); c];
            for (p, plane) in x.chunks(n).enumerate() {
                let mut acc = T::default();
                plane.iter().for_each(|&e| acc += e);
                out[p % c] += acc;
            }
            out
        }
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(sum(contiguous(x, layout)?, c, n)),
            CpuStorage::F64(x) => CpuStorage::F64(sum(contiguous(x, layout)?, c, n)),
            _ => bail!("channel-sum supports f32 and f64 only"),
        };
        Ok((out, Shape::from(c)))
    }
}

pub(crate) fn add_channel_bias(x: &Tensor, bias: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op2(&bias.contiguous()?, ChannelBias)
}

/// `min(max(x, 0), 6)` with gradient 1 strictly inside `(0, 6)`.
struct Relu6;

impl CustomOp1 for Relu6 {
    fn name(&self) -> &'static str {
        "relu6"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(
                contiguous(x, layout)?
                    .iter()
                    .map(|v| v.clamp(0.0, 6.0))
                    .collect(),
            ),
            CpuStorage::F64(x) => CpuStorage::F64(
                contiguous(x, layout)?
                    .iter()
                    .map(|v| v.clamp(0.0, 6.0))
                    .collect(),
            ),
            _ => bail!("relu6 supports f32 and f64 only"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(x.apply_op2_no_bwd(&grad.contiguous()?, &Relu6Grad)?))
    }
}

/// `(x, dy) -> dy · [0 < x < 6]`
struct Relu6Grad;

impl CustomOp2 for Relu6Grad {
    fn name(&self) -> &'static str {
        "relu6-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => CpuStorage::F32(
                contiguous(x, l1)?
                    .iter()
                    .zip(contiguous(g, l2)?)
                    .map(|(x, g)| if *x > 0.0 && *x < 6.0 { *g } else { 0.0 })
                    .collect(),
            ),
            (CpuStorage::F64(x), CpuStorage::F64(g)) => CpuStorage::F64(
                contiguous(x, l1)?
                    .iter()
                    .zip(contiguous(g, l2)?)
                    .map(|(x, g)| if *x > 0.0 && *x < 6.0 { *g } else { 0.0 })
                    .collect(),
            ),
            _ => bail!("relu6-grad needs matching f32 or f64 operands"),
        };
        Ok((out, l1.shape().clone()))
    }
}

pub(crate) fn relu6(x: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(Relu6)
}

#[derive(Debug, Clone, Copy)]
enum DepthwisePass {
    /// `(x, w) -> y`
    Forward,
    /// `(dy, w) -> dx`
    GradInput,
    /// `(x, dy) -> dw`
    GradWeight,
}

/// Per-channel 3x3 convolution with padding 1; weights are `(C, 9)`.
struct Depthwise {
    patches: Patches,
    pass: DepthwisePass,
}

impl Depthwise {
    fn run<T: Copy + Default + AddAssign + Mul<Output = T>>(
        &self,
        a: &[T],
        b: &[T],
        planes: usize,
        c: usize,
    ) -> Vec<T> {
        let g = self.patches;
        let (hw, l) = (g.h * g.w, g.out_h() * g.out_w());
        match self.pass {
            DepthwisePass::Forward => {
                let mut out = vec![T::default(); planes * l];
                for p in 0..planes {
                    let (x, w, y) = (
                        &a[p * hw..(p + 1) * hw],
                        &b[(p % c) * 9..(p % c + 1) * 9],
                        &mut out[p * l..(p + 1) * l],
                    );
                    g.visit(|row, col, pix| y[col] += w[row] * x[pix]);
                }
                out
            }
            DepthwisePass::GradInput => {
                let mut out = vec![T::default(); planes * hw];
                for p in 0..planes {
                    let (dy, w, dx) = (
                        &a[p * l..(p + 1) * l],
                        &b[(p % c) * 9..(p % c + 1) * 9],
                        &mut out[p * hw..(p + 1) * hw],
                    );
                    g.visit(|row, col, pix| dx[pix] += w[row] * dy[col]);
                }
                out
            }
            DepthwisePass::GradWeight => {
                let mut out = vec![T::default(); c * 9];
                for p in 0..planes {
                    let (x, dy) = (&a[p * hw..(p + 1) * hw], &b[p * l..(p + 1) * l]);
                    let dw = &mut out[(p % c) * 9..(p % c + 1) * 9];
                    g.visit(|row, col, pix| dw[row] += x[pix] * dy[col]);
                }
                out
            }
        }
    }
}

impl CustomOp2 for Depthwise {
    fn name(&self) -> &'static str {
        "depthwise3x3"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.patches;
        let (b, c, h, w) = l1.shape().dims4()?;
        let image = match self.pass {
            DepthwisePass::GradInput => (g.out_h(), g.out_w()),
            _ => (g.h, g.w),
        };
        if (h, w) != image {
            bail!(
                "depthwise {:?} expected {image:?} spatial input, got {h}x{w}",
                self.pass
            );
        }
        let shape = match self.pass {
            DepthwisePass::Forward => Shape::from((b, c, g.out_h(), g.out_w())),
            DepthwisePass::GradInput => Shape::from((b, c, g.h, g.w)),
            DepthwisePass::GradWeight => Shape::from((c, 9)),
        };
        let out = match (s1, s2) {
            (CpuStorage::F32(a), CpuStorage::F32(v)) => {
                CpuStorage::F32(self.run(contiguous(a, l1)?, contiguous(v, l2)?, b * c, c))
            }
            (CpuStorage::F64(a), CpuStorage::F64(v)) => {
                CpuStorage::F64(self.run(contiguous(a, l1)?, contiguous(v, l2)?, b * c, c))
            }
            _ => bail!("depthwise3x3 needs matching f32 or f64 operands"),
        };
        Ok((out, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let pass = |pass| Depthwise {
            patches: self.patches,
            pass,
        };
        let dx = grad.apply_op2_no_bwd(w, &pass(DepthwisePass::GradInput))?;
        let dw = x.apply_op2_no_bwd(&grad, &pass(DepthwisePass::GradWeight))?;
        Ok((Some(dx), Some(dw)))
    }
}

/// `x` is `(B, C, H, W)`, `weight` is `(C, 9)`.
pub(crate) fn depthwise3x3(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
) -> candle_core::Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    if weight.dims() != [c, 9] {
        bail!("depthwise weight must be ({c}, 9), got {:?}", weight.dims());
    }
    let op = Depthwise {
        patches: Patches::new(3, stride, 1, h, w)?,
        pass: DepthwisePass::Forward,
    };
    x.contiguous()?.apply_op2(&weight.contiguous()?, op)
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device, Var};

    use super::*;

    fn rand(shape: &[usize]) -> Tensor {
        Tensor::randn(0f64, 1.0, shape, &Device::Cpu).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .flatten_all()
            .unwrap()
            .max(0)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    #[test]
    fn im2col_places_pixels() {
        let x = Tensor::arange(0f64, 16.0, &Device::Cpu)
            .unwrap()
            .reshape((1, 1, 4, 4))
            .unwrap();
        let (cols, g) = im2col(&x, 3, 2, 1).unwrap();
        assert_eq!((g.out_h(), g.out_w()), (2, 2));
        assert_eq!(cols.dims(), &[9, 4]);
        let v: Vec<Vec<f64>> = cols.to_vec2().unwrap();
        // center tap of each patch is the strided pixel itself
        assert_eq!(v[4], vec![0.0, 2.0, 8.0, 10.0]);
        // top-left tap of the first patch falls in the padding
        assert_eq!(v[0][0], 0.0);
        assert_eq!(v[0][3], 5.0);
    }

    #[test]
    fn col2im_is_the_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (4, 2, 1), (1, 1, 0), (3, 1, 0)] {
            let x = rand(&[2, 3, 6, 6]);
            let (cols, g) = im2col(&x, k, s, p).unwrap();
            let y = rand(cols.dims());
            let lhs = (cols * &y)
                .unwrap()
                .sum_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            let back = col2im(&y, g).unwrap();
            let rhs = (x * back)
                .unwrap()
                .sum_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            assert!(
                (lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0),
                "k={k} s={s} p={p}"
            );
        }
    }

    #[test]
    fn gradients_flow_through_both_ops() {
        let x = Var::from_tensor(&rand(&[1, 2, 5, 5])).unwrap();
        let (cols, g) = im2col(x.as_tensor(), 3, 1, 1).unwrap();
        let weights = rand(cols.dims());
        let loss = (cols * &weights).unwrap().sum_all().unwrap();
        let grad = loss.backward().unwrap().get(x.as_tensor()).unwrap().clone();
        assert!(max_abs_diff(&grad, &col2im(&weights, g).unwrap()) < 1e-12);
        assert_eq!(grad.dtype(), DType::F64);
    }

    #[test]
    fn channel_bias_and_relu6_match_candle() {
        let x = Var::from_tensor(&(rand(&[2, 3, 4, 5]) * 4.0).unwrap()).unwrap();
        let b = Var::from_tensor(&rand(&[3])).unwrap();
        let probe = rand(&[2, 3, 4, 5]);
        let ours = relu6(&add_channel_bias(x.as_tensor(), b.as_tensor()).unwrap()).unwrap();
        let reference = x
            .broadcast_add(&b.reshape((1, 3, 1, 1)).unwrap())
            .unwrap()
            .relu()
            .unwrap()
            .minimum(6.0)
            .unwrap();
        assert!(max_abs_diff(&ours, &reference) < 1e-12);
        let g1 = (ours * &probe)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        let g2 = (reference * &probe)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        for v in [&x, &b] {
            assert!(max_abs_diff(g1.get(v).unwrap(), g2.get(v).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn depthwise_matches_patch_products_with_gradients() {
        for stride in [1, 2] {
            let x = Var::from_tensor(&rand(&[2, 3, 6, 6])).unwrap();
            let w = Var::from_tensor(&rand(&[3, 9])).unwrap();
            let direct = depthwise3x3(x.as_tensor(), w.as_tensor(), stride).unwrap();
            let (cols, g) = im2col(x.as_tensor(), 3, stride, 1).unwrap();
            let l = g.out_h() * g.out_w();
            let via_cols = cols
                .reshape((3, 9, 2, l))
                .unwrap()
                .permute((2, 0, 1, 3))
                .unwrap()
                .broadcast_mul(&w.reshape((1, 3, 9, 1)).unwrap())
                .unwrap()
                .sum(2)
                .unwrap()
                .reshape(direct.dims())
                .unwrap();
            assert!(max_abs_diff(&direct, &via_cols) < 1e-12);
            let probe = rand(direct.dims());
            let g1 = (direct * &probe)
                .unwrap()
                .sum_all()
                .unwrap()
                .backward()
                .unwrap();
            let g2 = (via_cols * &probe)
                .unwrap()
                .sum_all()
                .unwrap()
                .backward()
                .unwrap();
            for v in [&x, &w] {
                assert!(
                    max_abs_diff(g1.get(v).unwrap(), g2.get(v).unwrap()) < 1e-12,
                    "stride {stride}"
                );
            }
        }
    }
}
