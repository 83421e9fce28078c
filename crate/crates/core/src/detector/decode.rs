use super::heads::HeadOutputs;
use crate::eval::BBox;

/// One detected object in input-pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f32,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub stride: usize,
    pub top_k: usize,
    pub score_threshold: f32,
    pub image_width: usize,
    pub image_height: usize,
}

/// Center-keypoint decoding.
///
/// A cell is a peak when it equals the maximum of its 3×3 neighbourhood
/// (ties all qualify) and its score exceeds the threshold. Peaks are ranked
/// by score, then row, then column, then class, and the first `top_k` kept.
/// Box center is `(cell + offset) · stride`; the size map gives width and
/// height in pixels. Boxes are clipped to the image and dropped if empty.
pub fn decode(out: &HeadOutputs, cfg: &DecodeConfig) -> Vec<Detection> {
    let [_, classes, h, w] = out.heatmap.shape() else {
        return Vec::new();
    };
    let (classes, h, w) = (*classes, *h, *w);
    let heat = out.heatmap.data();
    let at = |c: usize, y: usize, x: usize| heat[(c * h + y) * w + x];
    // (score, row, col, class)
    let mut peaks: Vec<(f32, usize, usize, usize)> = Vec::new();
    for c in 0..classes {
        for y in 0..h {
            for x in 0..w {
                let v = at(c, y, x);
                if v <= cfg.score_threshold {
                    continue;
                }
                let is_peak = (y.saturating_sub(1)..=(y + 1).min(h - 1)).all(|yy| {
                    (x.saturating_sub(1)..=(x + 1).min(w - 1)).all(|xx| at(c, yy, xx) <= v)
                });
                if is_peak {
                    peaks.push((v, y, x, c));
                }
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let plane = h * w;
    let size = out.size.data();
    let offset = out.offset.data();
    let r = cfg.stride as f32;
    peaks
        .into_iter()
        .take(cfg.top_k)
        .filter_map(|(score, y, x, class_id)| {
            let i = y * w + x;
            let cx = (x as f32 + offset[i]) * r;
            let cy = (y as f32 + offset[plane + i]) * r;
            let bbox = BBox::from_center(cx, cy, size[i], size[plane + i])
                .clip(cfg.image_width as f32, cfg.image_height as f32);
            bbox.is_valid().then_some(Detection {
                class_id,
                score,
                bbox,
            })
        })
        .collect()
}
