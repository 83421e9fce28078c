//! Detection metrics: IoU matching, all-points average precision and mAP.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default IoU needed for a detection to count as a true positive.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;

/// Interpolation used for the area under the precision/recall curve.
pub const INTERPOLATION: &str = "all_points";

/// Axis-aligned box in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BBox {
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f32, f32) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) as f64 * self.height().max(0.0) as f64
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn clip(&self, width: f32, height: f32) -> Self {
        Self::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w as f64 * h as f64
    }
}

/// Intersection over union; zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if !a.is_valid() || !b.is_valid() {
        return Err(Error::Invalid(format!(
            "degenerate box in iou: {:?} / {:?}",
            a, b
        )));
    }
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// A scored box for one class in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub score: f32,
    pub bbox: BBox,
}

/// Outcome of greedy matching within one frame and class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// `(score, matched)` in processing order (descending score, ties by input order).
    pub detections: Vec<(f32, bool)>,
    /// Input index of each processed detection.
    pub order: Vec<usize>,
    /// Ground-truth index matched by each processed detection.
    pub assignment: Vec<Option<usize>>,
    pub gt_count: usize,
}

/// Greedy matching: detections by descending score, each takes the unmatched
/// ground truth with the highest IoU at or above `iou_threshold`.
pub fn match_detections(
    dets: &[ScoredBox],
    gts: &[BBox],
    iou_threshold: f64,
) -> Result<MatchResult> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult {
        gt_count: gts.len(),
        ..Default::default()
    };
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let overlap = iou(&dets[i].bbox, gt)?;
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((j, overlap));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
        }
        result.detections.push((dets[i].score, best.is_some()));
        result.order.push(i);
        result.assignment.push(best.map(|(j, _)| j));
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` after each detection in ranked order.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// All-points interpolated AP over matches pooled from every frame.
///
/// Returns `None` when the class has no ground truth.
pub fn average_precision(matches: &[MatchResult]) -> Option<PrCurve> {
    let gt_total: usize = matches.iter().map(|m| m.gt_count).sum();
    if gt_total == 0 {
        return None;
    }
    let mut pooled: Vec<(f32, bool)> = matches
        .iter()
        .flat_map(|m| m.detections.iter().copied())
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::with_capacity(pooled.len());
    let mut tp = 0usize;
    for (i, &(_, hit)) in pooled.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp as f64 / gt_total as f64, tp as f64 / (i + 1) as f64));
    }
    // Precision envelope from the right, then sum over recall steps.
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = recall;
        }
    }
    Some(PrCurve {
        points,
        ap: ap.clamp(0.0, 1.0),
    })
}

/// Unweighted mean of the per-class APs that are present.
pub fn mean_average_precision<'a>(curves: impl IntoIterator<Item = &'a PrCurve>) -> Option<f64> {
    let aps: Vec<f64> = curves.into_iter().map(|c| c.ap).collect();
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

/// One row of a detection CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(default)]
    pub sequence_id: usize,
    pub frame_id: usize,
    pub class_id: usize,
    pub score: f32,
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl DetectionRecord {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

/// One row of a ground-truth CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub sequence_id: usize,
    pub frame_id: usize,
    pub class: usize,
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
    pub occluded_fraction: f32,
}

impl GroundTruthRecord {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub gt_count: usize,
    /// `None` when the class has no ground truth.
    pub curve: Option<PrCurve>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub classes: Vec<ClassMetrics>,
    pub map: Option<f64>,
    pub iou_threshold: f64,
}

/// Scores detections against ground truth frame by frame, per class.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    iou_threshold: f64,
) -> Result<Evaluation> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::Invalid(format!(
            "IoU threshold {} outside (0, 1)",
            iou_threshold
        )));
    }
    type Key = (usize, usize, usize);
    let mut det_groups: BTreeMap<Key, (Vec<ScoredBox>, Vec<usize>)> = BTreeMap::new();
    let mut gt_groups: BTreeMap<Key, Vec<BBox>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        let group = det_groups
            .entry((d.class_id, d.sequence_id, d.frame_id))
            .or_default();
        group.0.push(ScoredBox {
            score: d.score,
            bbox: d.bbox(),
        });
        group.1.push(i);
    }
    for g in gts {
        gt_groups
            .entry((g.class, g.sequence_id, g.frame_id))
            .or_default()
            .push(g.bbox());
    }
    let classes: std::collections::BTreeSet<usize> = det_groups
        .keys()
        .chain(gt_groups.keys())
        .map(|k| k.0)
        .collect();
    let mut out = Vec::new();
    for class in classes {
        // Pooled as one ranked list so score ties resolve by global input order.
        let mut ranked: Vec<(usize, f32, bool)> = Vec::new();
        let mut gt_count = 0;
        let frames: std::collections::BTreeSet<(usize, usize)> = det_groups
            .keys()
            .chain(gt_groups.keys())
            .filter(|k| k.0 == class)
            .map(|k| (k.1, k.2))
            .collect();
        for (seq, frame) in frames {
            let key = (class, seq, frame);
            let (d, idx) = det_groups
                .get(&key)
                .map(|(d, i)| (d.as_slice(), i.as_slice()))
                .unwrap_or((&[], &[]));
            let g = gt_groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let m = match_detections(d, g, iou_threshold)?;
            gt_count += m.gt_count;
            ranked.extend(
                m.order
                    .iter()
                    .zip(&m.detections)
                    .map(|(&o, &(s, hit))| (idx[o], s, hit)),
            );
        }
        ranked.sort_by_key(|r| r.0);
        let pooled = MatchResult {
            detections: ranked.iter().map(|r| (r.1, r.2)).collect(),
            order: ranked.iter().map(|r| r.0).collect(),
            assignment: Vec::new(),
            gt_count,
        };
        out.push(ClassMetrics {
            class,
            gt_count,
            curve: average_precision(&[pooled]),
        });
    }
    let map = mean_average_precision(out.iter().filter_map(|c| c.curve.as_ref()));
    Ok(Evaluation {
        classes: out,
        map,
        iou_threshold,
    })
}

impl Evaluation {
    /// `class,ap,gt_count` rows for classes with ground truth plus a final `mAP` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "class,ap,gt_count")?;
        let mut total = 0;
        for c in &self.classes {
            if let Some(curve) = &c.curve {
                writeln!(w, "{},{:.6},{}", c.class, curve.ap, c.gt_count)?;
                total += c.gt_count;
            }
        }
        match self.map {
            Some(m) => writeln!(w, "mAP,{:.6},{}", m, total)?,
            None => writeln!(w, "mAP,,0")?,
        }
        Ok(())
    }

    /// `class,recall,precision` rows for plotting.
    pub fn write_pr_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "class,recall,precision")?;
        for c in &self.classes {
            if let Some(curve) = &c.curve {
                for (r, p) in &curve.points {
                    writeln!(w, "{},{:.6},{:.6}", c.class, r, p)?;
                }
            }
        }
        Ok(())
    }
}

fn read_records<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_reader(r);
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_detections<R: Read>(r: R) -> Result<Vec<DetectionRecord>> {
    read_records(r)
}

pub fn read_ground_truth<R: Read>(r: R) -> Result<Vec<GroundTruthRecord>> {
    read_records(r)
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    read_detections(std::fs::File::open(path)?)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>> {
    read_ground_truth(std::fs::File::open(path)?)
}

pub const DETECTION_CSV_HEADER: &str =
    "sequence_id,frame_id,class_id,score,x_min,y_min,x_max,y_max";
pub const GROUND_TRUTH_CSV_HEADER: &str =
    "sequence_id,frame_id,class,x_min,y_min,x_max,y_max,occluded_fraction";

pub fn write_detections<W: Write>(mut w: W, dets: &[DetectionRecord]) -> Result<()> {
    writeln!(w, "{}", DETECTION_CSV_HEADER)?;
    for d in dets {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            d.sequence_id, d.frame_id, d.class_id, d.score, d.x_min, d.y_min, d.x_max, d.y_max
        )?;
    }
    Ok(())
}

pub fn write_ground_truth<W: Write>(mut w: W, gts: &[GroundTruthRecord]) -> Result<()> {
    writeln!(w, "{}", GROUND_TRUTH_CSV_HEADER)?;
    for g in gts {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            g.sequence_id,
            g.frame_id,
            g.class,
            g.x_min,
            g.y_min,
            g.x_max,
            g.y_max,
            g.occluded_fraction
        )?;
    }
    Ok(())
}
