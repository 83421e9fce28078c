//! Losses, optimizers and the two-stage training protocol.
//!
//! Stage 1 trains the single-frame detector end to end. Stage 2 loads that
//! model, inserts a fusion strategy, freezes the backbone and trains the
//! fusion weights, attention and heads on windows of frames. With the
//! backbone frozen its outputs never change, so they are computed once per
//! frame up front.

pub mod loss;
pub mod optim;
pub mod targets;

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use loss::{detection_loss, LossOutput};
pub use optim::{Optimizer, OptimizerKind};
pub use targets::{build_targets, TargetBox, TargetGeometry, Targets};

use crate::detector::{apply_attention, BackboneCtx, Detector, SaliencyCtx};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::rng::Rng;
use crate::synth::Sequence;
use crate::tensor::{self, Tensor};
use crate::window::window_indices_with;

/// Training aborts once the mean epoch loss exceeds this.
/// Fusion weights start one-hot on the target frame and need to travel much
/// further than the already-trained heads; at the base rate they barely
/// leave identity before validation loss bottoms out.
pub const STAGE2_FUSION_LR_SCALE: f32 = 10.0;

pub const DIVERGENCE_LOSS: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SingleFrame,
    Fusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub optimizer: OptimizerKind,
    /// Parameter-name prefixes that receive no updates.
    pub freeze: Vec<String>,
    /// Learning-rate multiplier for `fusion.*` parameters.
    #[serde(default = "unit")]
    pub fusion_lr_scale: f32,
    pub seed: u64,
}

fn unit() -> f32 {
    1.0
}

impl TrainConfig {
    pub fn stage1(seed: u64) -> Self {
        Self {
            stage: Stage::SingleFrame,
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            freeze: Vec::new(),
            fusion_lr_scale: 1.0,
            seed,
        }
    }

    pub fn stage2(seed: u64) -> Self {
        Self {
            stage: Stage::Fusion,
            epochs: 10,
            freeze: vec!["backbone".into()],
            fusion_lr_scale: STAGE2_FUSION_LR_SCALE,
            ..Self::stage1(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.fusion_lr_scale > 0.0 && self.fusion_lr_scale.is_finite()) {
            return Err(Error::Invalid(format!(
                "fusion lr scale must be positive, got {}",
                self.fusion_lr_scale
            )));
        }
        if self.stage == Stage::Fusion && self.freeze.is_empty() {
            return Err(Error::Invalid(
                "the fusion stage needs a non-empty freeze set".into(),
            ));
        }
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze
            .iter()
            .any(|p| name == p || name.starts_with(&format!("{}.", p)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    /// Absent for epoch 0, which only evaluates the starting weights.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

pub const CURVE_CSV_HEADER: &str = "epoch,train_loss,val_loss";

pub fn write_curve_csv<W: Write>(mut w: W, rows: &[CurveRow]) -> Result<()> {
    writeln!(w, "{}", CURVE_CSV_HEADER)?;
    for r in rows {
        let train = r.train_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", r.epoch, train, r.val_loss)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss (earliest on ties).
    pub best: Detector,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub last: Detector,
    pub curve: Vec<CurveRow>,
    /// Ids of every sequence that contributed to a gradient update.
    pub updated_from: BTreeSet<usize>,
}

/// Per-sequence training material: targets per frame and, when the backbone
/// is frozen, its precomputed per-frame outputs.
struct Prepared<'a> {
    seq: &'a Sequence,
    targets: Vec<Targets>,
    backbone: Option<Vec<Tensor>>,
}

fn frame_targets(det: &Detector, seq: &Sequence) -> Result<Vec<Targets>> {
    let (feat_h, feat_w) = det.cfg.feature_size();
    let geo = TargetGeometry {
        stride: det.cfg.stride,
        classes: det.cfg.num_classes,
        feat_h,
        feat_w,
    };
    seq.gt
        .iter()
        .map(|objs| {
            let boxes: Vec<TargetBox> = objs
                .iter()
                .map(|o| TargetBox {
                    class: o.class,
                    bbox: o.bbox,
                })
                .collect();
            build_targets(&boxes, &geo)
        })
        .collect()
}

fn prepare<'a>(
    det: &Detector,
    seqs: &'a [Sequence],
    precompute: bool,
) -> Result<Vec<Prepared<'a>>> {
    seqs.iter()
        .map(|seq| {
            if seq.frames.len() != seq.gt.len() {
                return Err(Error::Invalid(format!(
                    "sequence {} has mismatched frames and labels",
                    seq.id
                )));
            }
            let backbone = if precompute {
                Some(
                    seq.frames
                        .iter()
                        .map(|f| det.backbone.infer(&det.frame_input(f)?))
                        .collect::<Result<_>>()?,
                )
            } else {
                None
            };
            Ok(Prepared {
                seq,
                targets: frame_targets(det, seq)?,
                backbone,
            })
        })
        .collect()
}

/// Loss of one target frame without gradients, through the inference path.
fn sample_loss(det: &Detector, p: &Prepared, t: usize) -> Result<f64> {
    let window = window_indices_with(det.fusion.layout(), t, det.fusion.n(), p.seq.len())?;
    let mut maps: Vec<Option<Arc<Tensor>>> = vec![None; p.seq.len()];
    let mut window_maps = Vec::with_capacity(window.indices.len());
    for &i in &window.indices {
        if maps[i].is_none() {
            let feat = match &p.backbone {
                Some(b) => det.attend(b[i].clone())?,
                None => det.frame_features(&p.seq.frames[i])?,
            };
            maps[i] = Some(Arc::new(feat));
        }
        window_maps.push(Arc::clone(maps[i].as_ref().expect("just filled")));
    }
    let out = det.forward_maps(&window_maps)?;
    Ok(detection_loss(&out.heatmap_logits, &out.size, &out.offset, &p.targets[t])?.total)
}

/// Mean per-frame loss over every frame of `data`.
fn mean_loss(det: &Detector, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in data {
        for t in 0..p.seq.len() {
            total += sample_loss(det, p, t)?;
            count += 1;
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Forward and backward for one target frame; parameter gradients accumulate
/// into the detector. Returns the loss.
pub fn accumulate_sample_grads(
    det: &mut Detector,
    frames: &[Tensor],
    backbone_out: Option<&[Tensor]>,
    targets: &Targets,
    t: usize,
    train_backbone: bool,
) -> Result<f64> {
    let window = window_indices_with(det.fusion.layout(), t, det.fusion.n(), frames.len())?;
    let mut unique: Vec<usize> = window.indices.clone();
    unique.sort_unstable();
    unique.dedup();

    struct FrameState {
        feat: Tensor,
        bb_ctx: Option<BackboneCtx>,
        sal: Option<(Tensor, SaliencyCtx)>,
        attended: Arc<Tensor>,
    }
    let mut states = Vec::with_capacity(unique.len());
    for &i in &unique {
        let (feat, bb_ctx) = match backbone_out {
            Some(b) if !train_backbone => (b[i].clone(), None),
            _ => {
                let x = det.frame_input(&frames[i])?;
                if train_backbone {
                    let (y, ctx) = det.backbone.forward(&x)?;
                    (y, Some(ctx))
                } else {
                    (det.backbone.infer(&x)?, None)
                }
            }
        };
        let sal = det.attention.saliency_forward(&feat)?;
        let attended = match &sal {
            Some((s, _)) => apply_attention(&feat, s)?,
            None => feat.clone(),
        };
        states.push(FrameState {
            feat,
            bb_ctx,
            sal,
            attended: Arc::new(attended),
        });
    }
    let slot = |i: usize| {
        unique
            .binary_search(&i)
            .expect("window frame is in the unique set")
    };
    let maps: Vec<Arc<Tensor>> = window
        .indices
        .iter()
        .map(|&i| Arc::clone(&states[slot(i)].attended))
        .collect();
    let target_slot = slot(window.indices[det.fusion.target_index()]);

    let (fused, mut fusion_ctx) = det.fusion.fuse(&maps)?;
    let (out, mut heads_ctx) = det.heads.forward(&fused, &states[target_slot].attended)?;
    let loss = detection_loss(&out.heatmap_logits, &out.size, &out.offset, targets)?;

    let (g_fused, g_target) = det.heads.backward(
        &mut heads_ctx,
        &loss.grad_logits,
        &loss.grad_size,
        &loss.grad_offset,
    )?;
    let fusion_grads = det.fusion.backward(&mut fusion_ctx, &g_fused)?;
    det.fusion.accumulate(&fusion_grads)?;

    let mut grads: Vec<Option<Tensor>> = vec![None; unique.len()];
    let mut add = |s: usize, g: &Tensor| -> Result<()> {
        grads[s] = Some(match grads[s].take() {
            Some(acc) => tensor::add(&acc, g)?,
            None => g.clone(),
        });
        Ok(())
    };
    for (k, g) in fusion_grads.maps.iter().enumerate() {
        add(slot(window.indices[k]), g)?;
    }
    add(target_slot, &g_target)?;

    let needs_attention = !det.attention.layers().is_empty();
    for (state, grad) in states.iter_mut().zip(grads) {
        let Some(grad) = grad else { continue };
        let mut g_feat = grad;
        if let Some((s, ctx)) = state.sal.as_mut() {
            let (gf, gs) = tensor::mul_channel_broadcast_backward(&state.feat, s, &g_feat)?;
            let through = det.attention.saliency_backward(ctx, &gs)?;
            g_feat = tensor::add(&gf, &through)?;
        } else {
            debug_assert!(!needs_attention);
        }
        if let Some(ctx) = state.bb_ctx.as_mut() {
            det.backbone.backward(ctx, &g_feat)?;
        }
    }
    Ok(loss.total)
}

fn train_loop(
    mut det: Detector,
    train: &[Sequence],
    val: &[Sequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_ids: BTreeSet<usize> = train.iter().map(|s| s.id).collect();
    if let Some(s) = val.iter().find(|s| train_ids.contains(&s.id)) {
        return Err(Error::Invalid(format!(
            "sequence {} is in both training and validation sets",
            s.id
        )));
    }
    let names: Vec<String> = det.params().into_iter().map(|(n, _)| n).collect();
    let backbone_frozen = names
        .iter()
        .filter(|n| n.starts_with("backbone."))
        .all(|n| cfg.is_frozen(n));
    let train_data = prepare(&det, train, backbone_frozen)?;
    let val_data = prepare(&det, val, backbone_frozen)?;

    let mut samples: Vec<(usize, usize)> = train_data
        .iter()
        .enumerate()
        .flat_map(|(s, p)| (0..p.seq.len()).map(move |t| (s, t)))
        .collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let rng = Rng::new(cfg.seed);
    let mut updated_from = BTreeSet::new();

    let initial = mean_loss(&det, &val_data)?;
    let mut curve = vec![CurveRow {
        epoch: 0,
        train_loss: None,
        val_loss: initial,
    }];
    let mut best = (det.clone(), 0usize, initial);

    for epoch in 1..=cfg.epochs {
        rng.fork(epoch as u64).shuffle(&mut samples);
        let mut epoch_loss = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            det.zero_grads();
            for &(s, t) in batch {
                let p = &train_data[s];
                epoch_loss += accumulate_sample_grads(
                    &mut det,
                    &p.seq.frames,
                    p.backbone.as_deref(),
                    &p.targets[t],
                    t,
                    !backbone_frozen,
                )?;
                updated_from.insert(p.seq.id);
            }
            let scale = 1.0 / batch.len() as f32;
            opt.step_with(
                det.params_mut()
                    .into_iter()
                    .filter(|(n, _)| !cfg.is_frozen(n)),
                scale,
                |n| {
                    if n.starts_with("fusion.") {
                        cfg.fusion_lr_scale
                    } else {
                        1.0
                    }
                },
            );
        }
        det.zero_grads();
        let train_loss = epoch_loss / samples.len().max(1) as f64;
        if !train_loss.is_finite() || train_loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let val_loss = mean_loss(&det, &val_data)?;
        curve.push(CurveRow {
            epoch,
            train_loss: Some(train_loss),
            val_loss,
        });
        if val_loss < best.2 {
            best = (det.clone(), epoch, val_loss);
        }
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        best_val_loss: best.2,
        last: det,
        curve,
        updated_from,
    })
}

/// Trains the single-frame detector. `det` must not carry a fusion window.
pub fn train_stage1(
    det: Detector,
    train: &[Sequence],
    val: &[Sequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.stage != Stage::SingleFrame {
        return Err(Error::Invalid(
            "stage 1 needs a single-frame training config".into(),
        ));
    }
    if det.fusion != FusionStrategy::None {
        return Err(Error::Invalid(
            "stage 1 trains without fusion (n = 0)".into(),
        ));
    }
    train_loop(det, train, val, cfg)
}

/// Inserts `fusion` into the stage-1 model and trains everything not frozen.
pub fn train_stage2(
    stage1: &Detector,
    fusion: FusionStrategy,
    train: &[Sequence],
    val: &[Sequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Fusion {
        return Err(Error::Invalid(
            "stage 2 needs a fusion training config".into(),
        ));
    }
    let det = stage1.clone().with_fusion(fusion)?;
    train_loop(det, train, val, cfg)
}

/// Mean per-frame validation loss of a model on a set of sequences.
pub fn validation_loss(det: &Detector, seqs: &[Sequence]) -> Result<f64> {
    let data = prepare(det, seqs, false)?;
    mean_loss(det, &data)
}
