use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::tensor::Tensor;

/// One labelled object on one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetBox {
    pub class: usize,
    pub bbox: BBox,
}

/// An object's center cell and its regression targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterTarget {
    pub class: usize,
    pub row: usize,
    pub col: usize,
    pub size: [f32; 2],
    pub offset: [f32; 2],
}

/// Training targets for one frame at feature resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// `1×K×h×w`, exactly 1.0 at every object's center cell.
    pub heatmap: Tensor,
    pub centers: Vec<CenterTarget>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetGeometry {
    pub stride: usize,
    pub classes: usize,
    pub feat_h: usize,
    pub feat_w: usize,
}

/// Gaussian radius in feature cells: `max(1, min(w, h) / (2R))`.
pub fn gaussian_radius(w: f32, h: f32, stride: usize) -> f32 {
    (w.min(h) / (2.0 * stride as f32)).max(1.0)
}

/// Writes `exp(-d²/2σ²)` around `(row, col)` into one class plane, keeping the max.
///
/// The splat extends `floor(radius)` cells each way and `σ = (2·floor(radius) + 1) / 6`.
pub fn splat_gaussian(plane: &mut [f32], w: usize, h: usize, row: usize, col: usize, radius: f32) {
    let r = radius.floor() as isize;
    let sigma = (2 * r + 1) as f32 / 6.0;
    let denom = 2.0 * sigma * sigma;
    for dy in -r..=r {
        for dx in -r..=r {
            let (y, x) = (row as isize + dy, col as isize + dx);
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                continue;
            }
            let v = (-((dx * dx + dy * dy) as f32) / denom).exp();
            let cell = &mut plane[y as usize * w + x as usize];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

pub fn build_targets(boxes: &[TargetBox], geo: &TargetGeometry) -> Result<Targets> {
    let (h, w) = (geo.feat_h, geo.feat_w);
    let r = geo.stride as f32;
    let mut heat = vec![0.0f32; geo.classes * h * w];
    let mut centers = Vec::with_capacity(boxes.len());
    for b in boxes {
        if !b.bbox.is_valid() {
            return Err(Error::Invalid(format!("degenerate box {:?}", b.bbox)));
        }
        if b.class >= geo.classes {
            return Err(Error::Invalid(format!("class {} out of range", b.class)));
        }
        let (cx, cy) = b.bbox.center();
        let (fx, fy) = (cx / r, cy / r);
        let col = (fx.floor().max(0.0) as usize).min(w - 1);
        let row = (fy.floor().max(0.0) as usize).min(h - 1);
        let radius = gaussian_radius(b.bbox.width(), b.bbox.height(), geo.stride);
        splat_gaussian(
            &mut heat[b.class * h * w..(b.class + 1) * h * w],
            w,
            h,
            row,
            col,
            radius,
        );
        centers.push(CenterTarget {
            class: b.class,
            row,
            col,
            size: [b.bbox.width(), b.bbox.height()],
            offset: [fx - col as f32, fy - row as f32],
        });
    }
    Ok(Targets {
        heatmap: Tensor::new(&[1, geo.classes, h, w], heat)?,
        centers,
    })
}
