use super::targets::Targets;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;
pub const SIZE_WEIGHT: f64 = 0.1;
pub const OFFSET_WEIGHT: f64 = 1.0;

/// Loss value and gradients with respect to the raw head outputs.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub heat: f64,
    pub size: f64,
    pub offset: f64,
    pub grad_logits: Tensor,
    pub grad_size: Tensor,
    pub grad_offset: Tensor,
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Penalty-reduced focal loss over the heatmap logits plus L1 size and
/// offset losses at object centers:
/// `L = L_heat + 0.1 · L_size + L_off`, each normalised by the number of
/// objects (at least one).
pub fn detection_loss(
    logits: &Tensor,
    size: &Tensor,
    offset: &Tensor,
    targets: &Targets,
) -> Result<LossOutput> {
    logits.ensure_same_shape(&targets.heatmap, "detection_loss")?;
    let (_, _, h, w) = logits.dims4()?;
    let reg_shape = [1, 2, h, w];
    if size.shape() != reg_shape || offset.shape() != reg_shape {
        return Err(shape_err(
            "detection_loss",
            format!(
                "size {:?} / offset {:?}, expected {:?}",
                size.shape(),
                offset.shape(),
                reg_shape
            ),
        ));
    }
    let norm = targets.centers.len().max(1) as f64;

    let mut heat = 0.0f64;
    let mut g_logits = vec![0.0f32; logits.len()];
    for ((g, &z), &y) in g_logits
        .iter_mut()
        .zip(logits.data())
        .zip(targets.heatmap.data())
    {
        let z = z as f64;
        let p = sigmoid(z);
        let q = sigmoid(-z);
        let (loss, grad) = if y == 1.0 {
            let log_p = -softplus(-z);
            let qa = q.powi(FOCAL_ALPHA);
            (-qa * log_p, qa * (2.0 * p * log_p - q))
        } else {
            let log_q = -softplus(z);
            let reduce = (1.0 - y as f64).powi(FOCAL_BETA);
            let pa = p.powi(FOCAL_ALPHA);
            (-reduce * pa * log_q, reduce * pa * (p - 2.0 * q * log_q))
        };
        heat += loss;
        *g = (grad / norm) as f32;
    }
    heat /= norm;

    let plane = h * w;
    let l1 = |pred: &Tensor, pick: fn(&super::targets::CenterTarget) -> [f32; 2], weight: f64| {
        let mut loss = 0.0f64;
        let mut grad = vec![0.0f32; pred.len()];
        for c in &targets.centers {
            let target = pick(c);
            for (ch, &t) in target.iter().enumerate() {
                let i = ch * plane + c.row * w + c.col;
                let d = pred.data()[i] as f64 - t as f64;
                loss += d.abs();
                grad[i] += (weight * d.signum() * (d != 0.0) as u8 as f64 / norm) as f32;
            }
        }
        (loss / norm, grad)
    };
    let (size_loss, g_size) = l1(size, |c| c.size, SIZE_WEIGHT);
    let (off_loss, g_off) = l1(offset, |c| c.offset, OFFSET_WEIGHT);

    let total = heat + SIZE_WEIGHT * size_loss + OFFSET_WEIGHT * off_loss;
    if !total.is_finite() {
        return Err(Error::NonFinite {
            op: "detection_loss",
        });
    }
    Ok(LossOutput {
        total,
        heat,
        size: size_loss,
        offset: off_loss,
        grad_logits: Tensor::new(logits.shape(), g_logits)?,
        grad_size: Tensor::new(&reg_shape, g_size)?,
        grad_offset: Tensor::new(&reg_shape, g_off)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::BBox;
    use crate::rng::Rng;
    use crate::trainer::targets::{build_targets, TargetBox, TargetGeometry};

    const GEO: TargetGeometry = TargetGeometry {
        stride: 4,
        classes: 1,
        feat_h: 8,
        feat_w: 8,
    };

    fn targets() -> Targets {
        build_targets(
            &[
                TargetBox {
                    class: 0,
                    bbox: BBox::new(4.0, 4.0, 14.0, 12.0),
                },
                TargetBox {
                    class: 0,
                    bbox: BBox::new(16.0, 18.0, 30.0, 30.0),
                },
            ],
            &GEO,
        )
        .unwrap()
    }

    fn perfect_regression(t: &Targets) -> (Tensor, Tensor) {
        let mut size = Tensor::zeros(&[1, 2, 8, 8]);
        let mut off = Tensor::zeros(&[1, 2, 8, 8]);
        for c in &t.centers {
            for ch in 0..2 {
                size.set4(0, ch, c.row, c.col, c.size[ch]);
                off.set4(0, ch, c.row, c.col, c.offset[ch]);
            }
        }
        (size, off)
    }

    #[test]
    fn perfect_regression_has_zero_l1() {
        let t = targets();
        let (size, off) = perfect_regression(&t);
        let logits = Tensor::from_fn(&[1, 1, 8, 8], |i| {
            if t.heatmap.data()[i] == 1.0 {
                20.0
            } else {
                -20.0
            }
        });
        let out = detection_loss(&logits, &size, &off, &t).unwrap();
        assert_eq!(out.size, 0.0);
        assert_eq!(out.offset, 0.0);
        assert!(out.heat < 1e-6);
    }

    #[test]
    fn empty_ground_truth_is_pure_background() {
        let t = build_targets(&[], &GEO).unwrap();
        let logits = Tensor::full(&[1, 1, 8, 8], 0.0);
        let zeros = Tensor::zeros(&[1, 2, 8, 8]);
        let out = detection_loss(&logits, &zeros, &zeros, &t).unwrap();
        let expected = 64.0 * 0.25 * std::f64::consts::LN_2;
        assert!((out.heat - expected).abs() < 1e-9);
        assert_eq!(out.size + out.offset, 0.0);
        assert!(out.grad_size.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let t = targets();
        let (size, off) = perfect_regression(&t);
        for v in [-80.0f32, 80.0] {
            let out = detection_loss(&Tensor::full(&[1, 1, 8, 8], v), &size, &off, &t).unwrap();
            assert!(out.total.is_finite());
            assert!(out.grad_logits.data().iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn heat_gradient_matches_central_difference() {
        let t = targets();
        let mut rng = Rng::new(11);
        let logits = Tensor::randn(&[1, 1, 8, 8], 1.5, &mut rng);
        let size = Tensor::randn(&[1, 2, 8, 8], 4.0, &mut rng);
        let off = Tensor::randn(&[1, 2, 8, 8], 0.5, &mut rng);
        let out = detection_loss(&logits, &size, &off, &t).unwrap();
        let eps = 1e-3f32;
        for i in 0..64 {
            let mut plus = logits.clone();
            plus.data_mut()[i] += eps;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= eps;
            let lp = detection_loss(&plus, &size, &off, &t).unwrap().total;
            let lm = detection_loss(&minus, &size, &off, &t).unwrap().total;
            let dx = (plus.data()[i] - minus.data()[i]) as f64;
            let fd = (lp - lm) / dx;
            let an = out.grad_logits.data()[i] as f64;
            assert!(
                (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-2),
                "cell {}: {} vs {}",
                i,
                fd,
                an
            );
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let t = targets();
        let z = Tensor::zeros(&[1, 2, 8, 8]);
        assert!(detection_loss(&Tensor::zeros(&[1, 2, 8, 8]), &z, &z, &t).is_err());
        assert!(detection_loss(
            &Tensor::zeros(&[1, 1, 8, 8]),
            &Tensor::zeros(&[1, 2, 4, 4]),
            &z,
            &t
        )
        .is_err());
    }
}
