//! Central finite differences against the hand-written backward passes.
//!
//! Every case draws a random upstream gradient `r`, forms the scalar
//! `L = Σ r ⊙ f(x)` and compares `∂L/∂x` from the backward function with
//! `(L(x + ε) − L(x − ε)) / 2ε`. The error measure is the norm-wise relative
//! error `‖a − n‖ / max(‖a‖, ‖n‖)`, which is insensitive to the f32 rounding
//! noise that would dominate an entry-wise ratio on near-zero entries.

use std::sync::Arc;

use ffavod::detector::{Detector, DetectorConfig};
use ffavod::eval::BBox;
use ffavod::fusion::{
    fuse_learned, fuse_learned_backward, FusionParams, FusionStrategy, KernelMode,
};
use ffavod::tensor::{self, ConvParams, Tensor};
use ffavod::trainer::{accumulate_sample_grads, build_targets, TargetBox, TargetGeometry};
use ffavod::window::WindowLayout;
use ffavod::Rng;

pub const EPS: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
pub const CASES: u64 = 20;

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    assert_eq!(a.len(), n.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn dot(r: &Tensor, y: &Tensor) -> f64 {
    assert_eq!(r.shape(), y.shape());
    r.data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Numeric gradient of `f` with respect to every entry of `x`.
pub fn numeric(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += EPS;
            let mut minus = x.clone();
            minus.data_mut()[i] -= EPS;
            let dx = (plus.data()[i] - minus.data()[i]) as f64;
            (f(&plus) - f(&minus)) / dx
        })
        .collect()
}

pub fn as_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Values bounded away from zero so relu stays on one side of its kink under ±ε.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.range(0.05, 1.0);
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values on a 0.01 grid so max, median and pooling choices survive ±ε.
fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..len)
        .map(|i| (i as f32 - len as f32 / 2.0) * 0.01)
        .collect();
    rng.shuffle(&mut v);
    Tensor::new(shape, v).unwrap()
}

pub type Case = fn(u64) -> Vec<(&'static str, f64)>;

/// Every differentiable tensor op, as `(name, case)`; a case returns one
/// error per input it differentiates.
pub fn op_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d", conv_case),
        ("add", add_case),
        ("mul", mul_case),
        ("relu", relu_case),
        ("sigmoid", sigmoid_case),
        ("scale", scale_case),
        ("mul_channel_broadcast", broadcast_case),
        ("mean_over_axis", mean_case),
        ("max_over_axis", max_case),
        ("median_over_axis", median_case),
        ("maxpool2x", maxpool_case),
        ("upsample2x_nearest", upsample_case),
        ("concat_channels", concat_case),
        ("fuse_learned", fusion_case),
    ]
}

fn conv_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let (ic, oc) = (rng.range_usize(1, 3), rng.range_usize(1, 3));
    let k = [1, 3][rng.range_usize(0, 1)];
    let stride = rng.range_usize(1, 2);
    let (h, w) = (rng.range_usize(4, 6), rng.range_usize(4, 6));
    let x = Tensor::randn(&[1, ic, h, w], 1.0, &mut rng);
    let weight = Tensor::randn(&[oc, ic, k, k], 0.5, &mut rng);
    let bias = Tensor::randn(&[oc], 0.5, &mut rng);
    let pad = k / 2;
    let params = |wt: &Tensor, b: &Tensor| {
        ConvParams::new(wt.clone(), Some(b.clone()), stride, pad).unwrap()
    };
    let p = params(&weight, &bias);
    let (y, mut ctx) = tensor::conv2d_forward(&x, &p).unwrap();
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = tensor::conv2d_backward(&mut ctx, &r).unwrap();
    let fx = numeric(&x, |x| dot(&r, &tensor::conv2d(x, &p).unwrap()));
    let fw = numeric(&weight, |wt| {
        dot(&r, &tensor::conv2d(&x, &params(wt, &bias)).unwrap())
    });
    let fb = numeric(&bias, |b| {
        dot(&r, &tensor::conv2d(&x, &params(&weight, b)).unwrap())
    });
    vec![
        ("input", rel_err(&as_f64(&g.input), &fx)),
        ("weight", rel_err(&as_f64(&g.weight), &fw)),
        ("bias", rel_err(&as_f64(g.bias.as_ref().unwrap()), &fb)),
    ]
}

fn add_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let a = Tensor::randn(&[2, 3, 3], 1.0, &mut rng);
    let b = Tensor::randn(&[2, 3, 3], 1.0, &mut rng);
    let r = Tensor::randn(&[2, 3, 3], 1.0, &mut rng);
    let (ga, gb) = tensor::add_backward(&r);
    let fa = numeric(&a, |a| dot(&r, &tensor::add(a, &b).unwrap()));
    let fb = numeric(&b, |b| dot(&r, &tensor::add(&a, b).unwrap()));
    vec![
        ("a", rel_err(&as_f64(&ga), &fa)),
        ("b", rel_err(&as_f64(&gb), &fb)),
    ]
}

fn mul_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let a = Tensor::randn(&[2, 3, 3], 1.0, &mut rng);
    let b = Tensor::randn(&[2, 3, 3], 1.0, &mut rng);
    let r = Tensor::randn(&[2, 3, 3], 1.0, &mut rng);
    let (ga, gb) = tensor::mul_backward(&a, &b, &r).unwrap();
    let fa = numeric(&a, |a| dot(&r, &tensor::mul(a, &b).unwrap()));
    let fb = numeric(&b, |b| dot(&r, &tensor::mul(&a, b).unwrap()));
    vec![
        ("a", rel_err(&as_f64(&ga), &fa)),
        ("b", rel_err(&as_f64(&gb), &fb)),
    ]
}

fn relu_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let x = away_from_zero(&[1, 2, 4, 4], &mut rng);
    let r = Tensor::randn(x.shape(), 1.0, &mut rng);
    let g = tensor::relu_backward(&x, &r).unwrap();
    let f = numeric(&x, |x| dot(&r, &tensor::relu(x).unwrap()));
    vec![("x", rel_err(&as_f64(&g), &f))]
}

fn sigmoid_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let x = Tensor::randn(&[1, 2, 4, 4], 2.0, &mut rng);
    let r = Tensor::randn(x.shape(), 1.0, &mut rng);
    let y = tensor::sigmoid(&x).unwrap();
    let g = tensor::sigmoid_backward(&y, &r).unwrap();
    let f = numeric(&x, |x| dot(&r, &tensor::sigmoid(x).unwrap()));
    vec![("x", rel_err(&as_f64(&g), &f))]
}

fn scale_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let s = rng.range(-2.0, 2.0);
    let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let r = Tensor::randn(x.shape(), 1.0, &mut rng);
    let g = tensor::scale_backward(s, &r).unwrap();
    let f = numeric(&x, |x| dot(&r, &tensor::scale(x, s).unwrap()));
    vec![("x", rel_err(&as_f64(&g), &f))]
}

fn broadcast_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let feat = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng);
    let sal = Tensor::uniform(&[1, 1, 4, 4], 0.05, 0.95, &mut rng);
    let r = Tensor::randn(feat.shape(), 1.0, &mut rng);
    let (gf, gs) = tensor::mul_channel_broadcast_backward(&feat, &sal, &r).unwrap();
    let ff = numeric(&feat, |f| {
        dot(&r, &tensor::mul_channel_broadcast(f, &sal).unwrap())
    });
    let fs = numeric(&sal, |s| {
        dot(&r, &tensor::mul_channel_broadcast(&feat, s).unwrap())
    });
    vec![
        ("feat", rel_err(&as_f64(&gf), &ff)),
        ("saliency", rel_err(&as_f64(&gs), &fs)),
    ]
}

fn mean_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let axis = rng.range_usize(0, 1);
    let x = Tensor::randn(&[5, 3, 4], 1.0, &mut rng);
    let y = tensor::mean_over_axis(&x, axis).unwrap();
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = tensor::mean_over_axis_backward(&r, x.shape(), axis).unwrap();
    let f = numeric(&x, |x| dot(&r, &tensor::mean_over_axis(x, axis).unwrap()));
    vec![("x", rel_err(&as_f64(&g), &f))]
}

fn max_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let x = distinct(&[5, 3, 4], &mut rng);
    let (y, arg) = tensor::max_over_axis(&x, 0).unwrap();
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = tensor::select_backward(&arg, &r).unwrap();
    let f = numeric(&x, |x| dot(&r, &tensor::max_over_axis(x, 0).unwrap().0));
    vec![("x", rel_err(&as_f64(&g), &f))]
}

fn median_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let x = distinct(&[5, 3, 4], &mut rng);
    let (y, arg) = tensor::median_over_axis(&x, 0).unwrap();
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = tensor::select_backward(&arg, &r).unwrap();
    let f = numeric(&x, |x| dot(&r, &tensor::median_over_axis(x, 0).unwrap().0));
    vec![("x", rel_err(&as_f64(&g), &f))]
}

fn maxpool_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let x = distinct(&[1, 2, 6, 6], &mut rng);
    let (y, idx) = tensor::maxpool2x(&x).unwrap();
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = tensor::maxpool2x_backward(&idx, &r).unwrap();
    let f = numeric(&x, |x| dot(&r, &tensor::maxpool2x(x).unwrap().0));
    vec![("x", rel_err(&as_f64(&g), &f))]
}

fn upsample_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let x = Tensor::randn(&[1, 2, 3, 3], 1.0, &mut rng);
    let y = tensor::upsample2x_nearest(&x).unwrap();
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = tensor::upsample2x_nearest_backward(&r).unwrap();
    let f = numeric(&x, |x| dot(&r, &tensor::upsample2x_nearest(x).unwrap()));
    vec![("x", rel_err(&as_f64(&g), &f))]
}

fn concat_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let a = Tensor::randn(&[1, 2, 3, 3], 1.0, &mut rng);
    let b = Tensor::randn(&[1, 3, 3, 3], 1.0, &mut rng);
    let y = tensor::concat_channels(&[&a, &b]).unwrap();
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = tensor::split_channels(&r, &[2, 3]).unwrap();
    let fa = numeric(&a, |a| dot(&r, &tensor::concat_channels(&[a, &b]).unwrap()));
    let fb = numeric(&b, |b| dot(&r, &tensor::concat_channels(&[&a, b]).unwrap()));
    vec![
        ("a", rel_err(&as_f64(&g[0]), &fa)),
        ("b", rel_err(&as_f64(&g[1]), &fb)),
    ]
}

fn fusion_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let n = rng.range_usize(1, 2);
    let c = 3;
    let mode = if rng.bernoulli(0.5) {
        KernelMode::Shared
    } else {
        KernelMode::PerChannel
    };
    let p = FusionParams::seeded(n, c, mode, WindowLayout::Symmetric, true, &mut rng);
    let maps: Vec<Arc<Tensor>> = (0..2 * n + 1)
        .map(|_| Arc::new(Tensor::randn(&[1, c, 3, 3], 1.0, &mut rng)))
        .collect();
    let (y, mut ctx) = fuse_learned(&maps, &p).unwrap();
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = fuse_learned_backward(&mut ctx, &p, &r).unwrap();
    let with = |w: &Tensor| {
        let mut q = p.clone();
        q.weights = w.clone();
        dot(&r, &fuse_learned(&maps, &q).unwrap().0)
    };
    let fw = numeric(&p.weights, with);
    let k = rng.range_usize(0, 2 * n);
    let fm = numeric(&maps[k], |m| {
        let mut ms = maps.clone();
        ms[k] = Arc::new(m.clone());
        dot(&r, &fuse_learned(&ms, &p).unwrap().0)
    });
    vec![
        (
            "weights",
            rel_err(&as_f64(g.weights.as_ref().unwrap()), &fw),
        ),
        ("map", rel_err(&as_f64(&g.maps[k]), &fm)),
    ]
}

/// Micro detector (8×8 frames, c = 4, one class) with seeded non-identity
/// learned fusion over a 5-frame clip.
pub fn micro_detector(seed: u64) -> (Detector, Vec<Tensor>, ffavod::trainer::Targets) {
    let mut rng = Rng::new(seed);
    let cfg = DetectorConfig {
        channels: 4,
        ..DetectorConfig::new(8, 8, 1)
    };
    let n = rng.range_usize(1, 2);
    let fusion = FusionStrategy::Learned(FusionParams::seeded(
        n,
        4,
        KernelMode::Shared,
        WindowLayout::Symmetric,
        false,
        &mut rng,
    ));
    let mut det = Detector::new(cfg, seed)
        .unwrap()
        .with_fusion(fusion)
        .unwrap();
    // A neutral heatmap prior keeps the focal loss off its flat tail, where
    // gradients shrink to the size of f32 rounding in the difference quotient.
    if let Some(b) = det.heads.heat2.params.bias.as_mut() {
        b.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let frames: Vec<Tensor> = (0..5)
        .map(|_| Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut rng))
        .collect();
    let x = rng.range(0.0, 3.0);
    let y = rng.range(0.0, 3.0);
    let geo = TargetGeometry {
        stride: 4,
        classes: 1,
        feat_h: 2,
        feat_w: 2,
    };
    let targets = build_targets(
        &[TargetBox {
            class: 0,
            bbox: BBox::new(x, y, x + 5.0, y + 4.0),
        }],
        &geo,
    )
    .unwrap();
    (det, frames, targets)
}

fn fusion_weights(det: &mut Detector) -> &mut Tensor {
    match &mut det.fusion {
        FusionStrategy::Learned(p) => &mut p.weights,
        _ => unreachable!("micro detector uses learned fusion"),
    }
}

/// Full detection loss gradient with respect to the fusion weights, through
/// heads, loss and the whole frame window.
pub fn full_loss_case(seed: u64) -> f64 {
    let (mut det, frames, targets) = micro_detector(seed);
    let t = (seed % 5) as usize;
    det.zero_grads();
    accumulate_sample_grads(&mut det, &frames, None, &targets, t, true).unwrap();
    let analytic: Vec<f64> = fusion_weights(&mut det)
        .grad()
        .unwrap()
        .iter()
        .map(|&g| g as f64)
        .collect();
    let w0 = fusion_weights(&mut det).clone();
    let fd = numeric(&w0, |w| {
        let mut d = det.clone();
        *fusion_weights(&mut d) = w.clone();
        d.zero_grads();
        accumulate_sample_grads(&mut d, &frames, None, &targets, t, false).unwrap()
    });
    rel_err(&analytic, &fd)
}
