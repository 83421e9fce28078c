use super::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

/// Weights and geometry of a 2-D cross-correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// `out_ch × in_ch × kh × kw`.
    pub weight: Tensor,
    /// `out_ch`, when present.
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(
        weight: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (oc, _, kh, kw) = weight
            .dims4()
            .map_err(|_| shape_err("ConvParams", format!("weight shape {:?}", weight.shape())))?;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Invalid(format!(
                "kernel {}x{} must have odd extents",
                kh, kw
            )));
        }
        if stride == 0 {
            return Err(Error::Invalid("stride must be at least 1".into()));
        }
        if let Some(b) = &bias {
            if b.shape() != [oc] {
                return Err(shape_err(
                    "ConvParams",
                    format!("bias shape {:?} for {} outputs", b.shape(), oc),
                ));
            }
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// He-normal weights, zero bias, "same" padding for odd `k`.
    pub fn he(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (in_ch * k * k) as f32;
        let weight = Tensor::randn(&[out_ch, in_ch, k, k], (2.0 / fan_in).sqrt(), rng);
        let bias = bias.then(|| Tensor::zeros(&[out_ch]));
        Self::new(weight, bias, stride, k / 2).expect("valid conv geometry")
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(shape_err(
                "conv2d",
                format!("{}x{} input too small for {}x{} kernel", h, w, kh, kw),
            ));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

/// Saved forward state for [`conv2d_backward`]; consumed by the first backward call.
#[derive(Debug, Default)]
pub struct ConvCtx {
    saved: Option<ConvSaved>,
}

#[derive(Debug)]
struct ConvSaved {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    /// Per batch item, `K × (oh·ow)` patch matrix with `K = in_ch·kh·kw`.
    cols: Vec<f32>,
    weight: Vec<f32>,
    weight_shape: [usize; 4],
    has_bias: bool,
    stride: usize,
    padding: usize,
}

impl ConvCtx {
    pub fn is_consumed(&self) -> bool {
        self.saved.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Cross-correlation without keeping backward state.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d_forward(x, p).map(|(y, _)| y)
}

pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<(Tensor, ConvCtx)> {
    let (n, c, h, w) = x.dims4()?;
    let (oc, ic, kh, kw) = p.weight.dims4()?;
    if c != ic {
        return Err(shape_err(
            "conv2d",
            format!("input has {} channels, kernel expects {}", c, ic),
        ));
    }
    let (oh, ow) = p.output_extent(h, w)?;
    let k = ic * kh * kw;
    let spatial = oh * ow;
    let mut cols = vec![0.0f32; n * k * spatial];
    let mut out = vec![0.0f32; n * oc * spatial];
    for b in 0..n {
        let xb = &x.data()[b * c * h * w..(b + 1) * c * h * w];
        let colb = &mut cols[b * k * spatial..(b + 1) * k * spatial];
        im2col(xb, (c, h, w), (kh, kw), p.stride, p.padding, (oh, ow), colb);
        let outb = &mut out[b * oc * spatial..(b + 1) * oc * spatial];
        if let Some(bias) = &p.bias {
            for (o, row) in outb.chunks_exact_mut(spatial).enumerate() {
                row.fill(bias.data()[o]);
            }
        }
        let beta = if p.bias.is_some() { 1.0 } else { 0.0 };
        gemm(
            oc,
            k,
            spatial,
            Mat::row_major(p.weight.data(), k),
            Mat::row_major(colb, spatial),
            outb,
            beta,
        );
    }
    let y = Tensor::new(&[n, oc, oh, ow], out)?;
    y.check_finite("conv2d")?;
    let ctx = ConvCtx {
        saved: Some(ConvSaved {
            input_shape: [n, c, h, w],
            out_hw: (oh, ow),
            cols,
            weight: p.weight.data().to_vec(),
            weight_shape: [oc, ic, kh, kw],
            has_bias: p.bias.is_some(),
            stride: p.stride,
            padding: p.padding,
        }),
    };
    Ok((y, ctx))
}

/// Gradients of `sum(grad_out ⊙ conv2d(x, p))` with respect to input, weight and bias.
pub fn conv2d_backward(ctx: &mut ConvCtx, grad_out: &Tensor) -> Result<ConvGrads> {
    let saved = ctx.saved.take().ok_or(Error::ContextConsumed)?;
    let [n, c, h, w] = saved.input_shape;
    let [oc, ic, kh, kw] = saved.weight_shape;
    let (oh, ow) = saved.out_hw;
    if grad_out.shape() != [n, oc, oh, ow] {
        return Err(shape_err(
            "conv2d_backward",
            format!(
                "grad shape {:?}, expected {:?}",
                grad_out.shape(),
                [n, oc, oh, ow]
            ),
        ));
    }
    let k = ic * kh * kw;
    let spatial = oh * ow;
    let mut gw = vec![0.0f32; oc * k];
    let mut gb = vec![0.0f32; oc];
    let mut gx = vec![0.0f32; n * c * h * w];
    let mut gcols = vec![0.0f32; k * spatial];
    for b in 0..n {
        let gob = &grad_out.data()[b * oc * spatial..(b + 1) * oc * spatial];
        let colb = &saved.cols[b * k * spatial..(b + 1) * k * spatial];
        // dW += dY · colsᵀ
        gemm(
            oc,
            spatial,
            k,
            Mat::row_major(gob, spatial),
            Mat::transposed(colb, spatial),
            &mut gw,
            1.0,
        );
        if saved.has_bias {
            for (o, row) in gob.chunks_exact(spatial).enumerate() {
                gb[o] += row.iter().sum::<f32>();
            }
        }
        // dcols = Wᵀ · dY
        gemm(
            k,
            oc,
            spatial,
            Mat::transposed(&saved.weight, k),
            Mat::row_major(gob, spatial),
            &mut gcols,
            0.0,
        );
        let gxb = &mut gx[b * c * h * w..(b + 1) * c * h * w];
        col2im(
            &gcols,
            (c, h, w),
            (kh, kw),
            saved.stride,
            saved.padding,
            (oh, ow),
            gxb,
        );
    }
    let grads = ConvGrads {
        input: Tensor::new(&[n, c, h, w], gx)?,
        weight: Tensor::new(&[oc, ic, kh, kw], gw)?,
        bias: if saved.has_bias {
            Some(Tensor::new(&[oc], gb)?)
        } else {
            None
        },
    };
    grads.input.check_finite("conv2d_backward")?;
    grads.weight.check_finite("conv2d_backward")?;
    Ok(grads)
}

fn im2col(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    cols: &mut [f32],
) {
    let spatial = oh * ow;
    if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
        cols.copy_from_slice(x);
        return;
    }
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * spatial;
                let dst = &mut cols[row..row + spatial];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(
    cols: &[f32],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    x: &mut [f32],
) {
    let spatial = oh * ow;
    if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
        x.iter_mut().zip(cols).for_each(|(a, b)| *a += *b);
        return;
    }
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * spatial;
                let src = &cols[row..row + spatial];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Borrowed matrix view: element `(i, j)` lives at `i * row_stride + j * col_stride`.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f32],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Mat<'a> {
    fn row_major(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// View of the transpose of a row-major matrix with `cols` columns.
    fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta · c`, single-threaded.
fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, c: &mut [f32], beta: f32) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert!(a.data.len() >= m * k && b.data.len() >= k * n);
    // SAFETY: the strides describe matrices that lie entirely within the
    // borrowed slices (checked above), and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
