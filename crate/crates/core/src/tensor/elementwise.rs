use super::Tensor;
use crate::error::{shape_err, Result};

fn zip_map(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor> {
    a.ensure_same_shape(b, op)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    let out = Tensor::new(a.shape(), data)?;
    out.check_finite(op)?;
    Ok(out)
}

fn map(a: &Tensor, op: &'static str, f: impl Fn(f32) -> f32) -> Result<Tensor> {
    let out = Tensor::new(a.shape(), a.data().iter().map(|&x| f(x)).collect())?;
    out.check_finite(op)?;
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_map(a, b, "add", |x, y| x + y)
}

pub fn add_backward(grad: &Tensor) -> (Tensor, Tensor) {
    (grad.clone(), grad.clone())
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_map(a, b, "mul", |x, y| x * y)
}

pub fn mul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((mul(grad, b)?, mul(grad, a)?))
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    map(x, "relu", |v| v.max(0.0))
}

/// `x` is the forward input.
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    zip_map(
        x,
        grad,
        "relu_backward",
        |v, g| if v > 0.0 { g } else { 0.0 },
    )
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    map(x, "sigmoid", sigmoid_scalar)
}

/// `y` is the forward output.
pub fn sigmoid_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    zip_map(y, grad, "sigmoid_backward", |s, g| g * s * (1.0 - s))
}

pub(crate) fn sigmoid_scalar(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn scale(x: &Tensor, s: f32) -> Result<Tensor> {
    map(x, "scale", |v| v * s)
}

pub fn scale_backward(s: f32, grad: &Tensor) -> Result<Tensor> {
    scale(grad, s)
}

/// `feat (n×c×h×w) · sal (n×1×h×w)`, broadcasting the single saliency channel.
pub fn mul_channel_broadcast(feat: &Tensor, sal: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = feat.dims4()?;
    if sal.shape() != [n, 1, h, w] {
        return Err(shape_err(
            "mul_channel_broadcast",
            format!("features {:?}, saliency {:?}", feat.shape(), sal.shape()),
        ));
    }
    let hw = h * w;
    let mut out = feat.data().to_vec();
    for b in 0..n {
        let s = &sal.data()[b * hw..(b + 1) * hw];
        for plane in out[b * c * hw..(b + 1) * c * hw].chunks_exact_mut(hw) {
            plane.iter_mut().zip(s).for_each(|(v, &m)| *v *= m);
        }
    }
    let out = Tensor::new(feat.shape(), out)?;
    out.check_finite("mul_channel_broadcast")?;
    Ok(out)
}

/// Returns `(grad_feat, grad_sal)`.
pub fn mul_channel_broadcast_backward(
    feat: &Tensor,
    sal: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let gf = mul_channel_broadcast(grad, sal)?;
    let (n, c, h, w) = feat.dims4()?;
    feat.ensure_same_shape(grad, "mul_channel_broadcast_backward")?;
    let hw = h * w;
    let mut gs = vec![0.0f32; n * hw];
    for b in 0..n {
        let acc = &mut gs[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let f = &feat.data()[off..off + hw];
            let g = &grad.data()[off..off + hw];
            for i in 0..hw {
                acc[i] += f[i] * g[i];
            }
        }
    }
    Ok((gf, Tensor::new(&[n, 1, h, w], gs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn scalar_values() {
        assert_eq!(sigmoid(&t(&[0.0])).unwrap().data(), &[0.5]);
        assert_eq!(relu(&t(&[-1.0, 2.0])).unwrap().data(), &[0.0, 2.0]);
        assert_eq!(add(&t(&[1.0]), &t(&[2.0])).unwrap().data(), &[3.0]);
        assert_eq!(mul(&t(&[3.0]), &t(&[2.0])).unwrap().data(), &[6.0]);
        assert_eq!(scale(&t(&[3.0]), -2.0).unwrap().data(), &[-6.0]);
    }

    #[test]
    fn sigmoid_stays_in_open_interval_for_moderate_inputs() {
        let y = sigmoid(&t(&[-15.0, -1.0, 0.0, 1.0, 15.0])).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(add(&t(&[1.0, 2.0]), &t(&[1.0])).is_err());
        let f = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(mul_channel_broadcast(&f, &Tensor::zeros(&[1, 1, 2, 3])).is_err());
    }

    #[test]
    fn broadcast_multiply_matches_elementwise() {
        let mut rng = crate::Rng::new(1);
        let f = Tensor::randn(&[2, 3, 4, 5], 1.0, &mut rng);
        let s = Tensor::uniform(&[2, 1, 4, 5], 0.0, 1.0, &mut rng);
        let y = mul_channel_broadcast(&f, &s).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                for yy in 0..4 {
                    for xx in 0..5 {
                        assert_eq!(
                            y.at4(b, c, yy, xx),
                            f.at4(b, c, yy, xx) * s.at4(b, 0, yy, xx)
                        );
                    }
                }
            }
        }
    }
}
