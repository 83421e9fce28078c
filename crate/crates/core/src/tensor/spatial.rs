use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Nearest-neighbour 2× upsampling of an `n×c×h×w` tensor.
pub fn upsample2x_nearest(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; n * c * oh * ow];
    for (plane, src) in out
        .chunks_exact_mut(oh * ow)
        .zip(x.data().chunks_exact(h * w))
    {
        for y in 0..oh {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (xx, v) in plane[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = row[xx / 2];
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn upsample2x_nearest_backward(grad: &Tensor) -> Result<Tensor> {
    let (n, c, oh, ow) = grad.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(shape_err(
            "upsample2x_nearest_backward",
            format!("odd extents {}x{}", oh, ow),
        ));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = vec![0.0f32; n * c * h * w];
    for (plane, g) in gx
        .chunks_exact_mut(h * w)
        .zip(grad.data().chunks_exact(oh * ow))
    {
        for y in 0..oh {
            for x in 0..ow {
                plane[(y / 2) * w + x / 2] += g[y * ow + x];
            }
        }
    }
    Tensor::new(&[n, c, h, w], gx)
}

/// Argmax positions of a 2×2 max pool, as flat input offsets.
#[derive(Debug, Clone)]
pub struct PoolIndex {
    input_shape: [usize; 4],
    argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2; ties keep the first cell in row-major order.
pub fn maxpool2x(x: &Tensor) -> Result<(Tensor, PoolIndex)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Invalid(format!(
            "maxpool2x needs even extents, got {}x{}",
            h, w
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x.data()[i] > x.data()[best] {
                        best = i;
                    }
                }
                out.push(x.data()[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[n, c, oh, ow], out)?,
        PoolIndex {
            input_shape: [n, c, h, w],
            argmax,
        },
    ))
}

pub fn maxpool2x_backward(idx: &PoolIndex, grad: &Tensor) -> Result<Tensor> {
    if grad.len() != idx.argmax.len() {
        return Err(shape_err(
            "maxpool2x_backward",
            format!("grad {:?}", grad.shape()),
        ));
    }
    let mut gx = Tensor::zeros(&idx.input_shape);
    let data = gx.data_mut();
    for (&i, &g) in idx.argmax.iter().zip(grad.data()) {
        data[i] += g;
    }
    Ok(gx)
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs.first().ok_or(Error::EmptyAxis)?;
    let (n, _, h, w) = first.dims4()?;
    let mut total_c = 0;
    for x in xs {
        let (xn, xc, xh, xw) = x.dims4()?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(shape_err(
                "concat_channels",
                format!("{:?} vs {:?}", x.shape(), first.shape()),
            ));
        }
        total_c += xc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total_c * hw);
    for b in 0..n {
        for x in xs {
            let c = x.shape()[1];
            out.extend_from_slice(&x.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    Tensor::new(&[n, total_c, h, w], out)
}

/// Inverse of [`concat_channels`]: splits `grad` into blocks of the given channel counts.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = grad.dims4()?;
    if channels.iter().sum::<usize>() != c {
        return Err(shape_err(
            "split_channels",
            format!("{:?} does not sum to {}", channels, c),
        ));
    }
    let hw = h * w;
    let mut parts: Vec<Vec<f32>> = channels
        .iter()
        .map(|&k| Vec::with_capacity(n * k * hw))
        .collect();
    for b in 0..n {
        let mut off = b * c * hw;
        for (part, &k) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[off..off + k * hw]);
            off += k * hw;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &k)| Tensor::new(&[n, k, h, w], d))
        .collect()
}
