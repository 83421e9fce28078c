//! Dataset-level detection, evaluation, the fusion ablation and the window sweep.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::detector::{Detector, DetectorConfig};
use crate::error::Result;
use crate::eval::{self, DetectionRecord, Evaluation, GroundTruthRecord};
use crate::fusion::{make_fusion, FusionTag, InitMode};
use crate::synth::{Dataset, Sequence};
use crate::trainer::{train_stage1, train_stage2, TrainConfig, TrainOutcome};
use crate::window::CacheStats;

/// Detections for every frame of every sequence, plus per-sequence cache statistics.
pub fn detect_sequences(
    det: &Detector,
    seqs: &[Sequence],
    use_cache: bool,
) -> Result<(Vec<DetectionRecord>, Vec<(usize, usize, CacheStats)>)> {
    let mut records = Vec::new();
    let mut stats = Vec::new();
    for seq in seqs {
        let (dets, s) = det.detect_sequence(&seq.frames, use_cache)?;
        for (t, frame_dets) in dets.iter().enumerate() {
            records.extend(frame_dets.iter().map(|d| DetectionRecord {
                sequence_id: seq.id,
                frame_id: t,
                class_id: d.class_id,
                score: d.score,
                x_min: d.bbox.x_min,
                y_min: d.bbox.y_min,
                x_max: d.bbox.x_max,
                y_max: d.bbox.y_max,
            }));
        }
        stats.push((seq.id, seq.len(), s));
    }
    Ok((records, stats))
}

pub fn ground_truth(seqs: &[Sequence]) -> Vec<GroundTruthRecord> {
    seqs.iter().flat_map(|s| s.records()).collect()
}

pub fn evaluate_model(det: &Detector, seqs: &[Sequence], iou_threshold: f64) -> Result<Evaluation> {
    let (dets, _) = detect_sequences(det, seqs, true)?;
    eval::evaluate(&dets, &ground_truth(seqs), iou_threshold)
}

/// Knobs shared by the ablation and the sweep.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub detector: DetectorConfig,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub stage2_lr: f32,
    pub fusion_lr_scale: f32,
    pub iou_threshold: f64,
}

impl ExperimentConfig {
    pub fn stage1(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.stage1_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            ..TrainConfig::stage1(seed)
        }
    }

    pub fn stage2(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.stage2_epochs,
            batch_size: self.batch_size,
            lr: self.stage2_lr,
            fusion_lr_scale: self.fusion_lr_scale,
            ..TrainConfig::stage2(seed)
        }
    }
}

pub fn run_stage1(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<TrainOutcome> {
    let det = Detector::new(cfg.detector, seed)?;
    train_stage1(det, &ds.train, &ds.val, &cfg.stage1(seed))
}

/// One row of the ablation: a fusion tag at a half-window size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationArm {
    pub tag: FusionTag,
    pub n: usize,
}

/// The strategy set of the ablation table, in table order.
pub fn ablation_arms(n: usize) -> Vec<AblationArm> {
    let arm = |tag, n| AblationArm { tag, n };
    let mut arms = vec![
        arm(FusionTag::Learned, n),
        arm(FusionTag::None, 0),
        arm(FusionTag::Max, n),
        arm(FusionTag::Mean, n),
        arm(FusionTag::Median, n),
        arm(FusionTag::ConcatConv, n),
        arm(FusionTag::LearnedPastOnly, n),
    ];
    if n > 1 {
        arms.push(arm(FusionTag::LearnedPastOnly, n - 1));
    }
    arms
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmResult {
    pub strategy: String,
    pub n: usize,
    pub seed: u64,
    pub map: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains (or, for `none`, reuses) one arm on top of a stage-1 model and scores it on the test split.
pub fn run_arm(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    stage1: &Detector,
    stage1_val_loss: f64,
    arm: AblationArm,
    seed: u64,
) -> Result<ArmResult> {
    let (model, best_epoch, best_val) = if arm.tag == FusionTag::None {
        (stage1.clone(), 0, stage1_val_loss)
    } else {
        let mut rng = crate::rng::Rng::new(seed).fork(arm.n as u64);
        let fusion = make_fusion(
            arm.tag,
            arm.n,
            cfg.detector.channels,
            InitMode::Identity,
            &mut rng,
        )?;
        let out = train_stage2(stage1, fusion, &ds.train, &ds.val, &cfg.stage2(seed))?;
        (out.best, out.best_epoch, out.best_val_loss)
    };
    let ev = evaluate_model(&model, &ds.test, cfg.iou_threshold)?;
    Ok(ArmResult {
        strategy: arm.tag.to_string(),
        n: arm.n,
        seed,
        map: ev.map.unwrap_or(0.0),
        best_epoch,
        best_val_loss: best_val,
    })
}

/// Every `(arm, seed)` cell of the ablation. With `shared_stage1`, all seeds
/// start from that model; otherwise each seed trains its own stage 1.
pub fn ablation(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    arms: &[AblationArm],
    seeds: &[u64],
    shared_stage1: Option<&Detector>,
) -> Result<Vec<ArmResult>> {
    let stage1: Vec<(Detector, f64)> = seeds
        .par_iter()
        .map(|&seed| match shared_stage1 {
            Some(d) => Ok((d.clone(), crate::trainer::validation_loss(d, &ds.val)?)),
            None => run_stage1(ds, cfg, seed).map(|o| (o.best, o.best_val_loss)),
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, AblationArm)> = (0..seeds.len())
        .flat_map(|s| arms.iter().map(move |&a| (s, a)))
        .collect();
    cells
        .par_iter()
        .map(|&(s, arm)| run_arm(ds, cfg, &stage1[s].0, stage1[s].1, arm, seeds[s]))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmSummary {
    pub strategy: String,
    pub n: usize,
    pub map_mean: f64,
    pub map_std: f64,
    pub map_min: f64,
    pub map_max: f64,
    pub seeds: usize,
}

pub fn summarize(results: &[ArmResult], arms: &[AblationArm]) -> Vec<ArmSummary> {
    arms.iter()
        .map(|arm| {
            let maps: Vec<f64> = results
                .iter()
                .filter(|r| r.strategy == arm.tag.as_str() && r.n == arm.n)
                .map(|r| r.map)
                .collect();
            let k = maps.len().max(1) as f64;
            let mean = maps.iter().sum::<f64>() / k;
            let var = maps.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / k;
            ArmSummary {
                strategy: arm.tag.to_string(),
                n: arm.n,
                map_mean: mean,
                map_std: var.sqrt(),
                map_min: maps.iter().cloned().fold(f64::INFINITY, f64::min),
                map_max: maps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                seeds: maps.len(),
            }
        })
        .collect()
}

pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub map: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// mAP of learned fusion for every `n` in `0..=max_n` on top of one stage-1
/// model. The `n = 0` point is the stage-1 model itself.
pub fn sweep_n(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    stage1: &Detector,
    max_n: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let stage1_val = crate::trainer::validation_loss(stage1, &ds.val)?;
    (0..=max_n)
        .into_par_iter()
        .map(|n| {
            let arm = AblationArm {
                tag: if n == 0 {
                    FusionTag::None
                } else {
                    FusionTag::Learned
                },
                n,
            };
            let r = run_arm(ds, cfg, stage1, stage1_val, arm, seed)?;
            Ok(SweepPoint {
                n,
                map: r.map,
                best_epoch: r.best_epoch,
                best_val_loss: r.best_val_loss,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_set_matches_the_table() {
        let arms = ablation_arms(2);
        let names: Vec<(String, usize)> = arms.iter().map(|a| (a.tag.to_string(), a.n)).collect();
        let expected = [
            ("learned", 2),
            ("none", 0),
            ("max", 2),
            ("mean", 2),
            ("median", 2),
            ("concat_conv", 2),
            ("learned_past_only", 2),
            ("learned_past_only", 1),
        ];
        assert_eq!(names.len(), expected.len());
        for ((a, n), (b, m)) in names.iter().zip(expected) {
            assert_eq!((a.as_str(), *n), (b, m));
        }
    }

    #[test]
    fn summary_statistics() {
        let arms = [AblationArm {
            tag: FusionTag::Mean,
            n: 2,
        }];
        let r = |map| ArmResult {
            strategy: "mean".into(),
            n: 2,
            seed: 0,
            map,
            best_epoch: 1,
            best_val_loss: 1.0,
        };
        let s = summarize(&[r(0.5), r(0.7)], &arms);
        assert!((s[0].map_mean - 0.6).abs() < 1e-12);
        assert!((s[0].map_std - 0.1).abs() < 1e-12);
        assert_eq!((s[0].map_min, s[0].map_max, s[0].seeds), (0.5, 0.7, 2));
    }
}
