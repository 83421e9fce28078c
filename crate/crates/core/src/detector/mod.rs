//! Toy center-heatmap detector with frame-window fusion.
//!
//! Each frame goes through the backbone and (optionally) a saliency
//! attention; the window's maps are fused and the fused map drives the
//! center heatmap head, while the size and offset heads read the target
//! frame's own map.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod decode;
pub mod heads;
mod layer;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use attention::{apply_attention, Attention, AttentionKind, SaliencyCtx};
pub use backbone::{Backbone, BackboneCtx, STRIDE};
pub use decode::{decode, DecodeConfig, Detection};
pub use heads::{HeadOutputs, Heads, HeadsCtx};
pub use layer::Conv;

use crate::error::{shape_err, Error, Result};
use crate::fusion::FusionStrategy;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::window::{assemble_window, window_indices_with, CacheStats, FeatureCache};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub attention: AttentionKind,
    pub top_k: usize,
    pub score_threshold: f32,
}

impl DetectorConfig {
    pub fn new(height: usize, width: usize, num_classes: usize) -> Self {
        Self {
            height,
            width,
            stride: STRIDE,
            channels: 32,
            num_classes,
            attention: AttentionKind::None,
            top_k: 50,
            score_threshold: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride != STRIDE {
            return Err(Error::Invalid(format!(
                "backbone stride is fixed at {}, got {}",
                STRIDE, self.stride
            )));
        }
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "channel count must be even and ≥ 2, got {}",
                self.channels
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Invalid("at least one class is required".into()));
        }
        let unit = self.stride << self.attention.unet_levels();
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(unit)
            || !self.width.is_multiple_of(unit)
        {
            return Err(Error::Invalid(format!(
                "input {}×{} must be a positive multiple of {}",
                self.height, self.width, unit
            )));
        }
        Ok(())
    }

    pub fn feature_size(&self) -> (usize, usize) {
        (self.height / self.stride, self.width / self.stride)
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            stride: self.stride,
            top_k: self.top_k,
            score_threshold: self.score_threshold,
            image_width: self.width,
            image_height: self.height,
        }
    }
}

/// Model weights plus configuration. Read-only at inference time.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub backbone: Backbone,
    pub attention: Attention,
    pub fusion: FusionStrategy,
    pub heads: Heads,
}

impl Detector {
    /// Single-frame detector (no fusion) with seeded weights.
    pub fn new(cfg: DetectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let rng = Rng::new(seed);
        let backbone = Backbone::new(cfg.channels, &mut rng.fork(1));
        let attention = Attention::new(cfg.attention, cfg.channels, &mut rng.fork(2));
        let heads = Heads::new(cfg.channels, cfg.num_classes, &mut rng.fork(3));
        Ok(Self {
            cfg,
            backbone,
            attention,
            fusion: FusionStrategy::None,
            heads,
        })
    }

    /// Replaces the fusion strategy, keeping every other weight.
    pub fn with_fusion(mut self, fusion: FusionStrategy) -> Result<Self> {
        if let Some((_, w)) = fusion.params().first() {
            let ok = match &fusion {
                FusionStrategy::Learned(p) => p.channels() == self.cfg.channels,
                FusionStrategy::ConcatConv { conv, .. } => conv.out_channels() == self.cfg.channels,
                _ => true,
            };
            if !ok {
                return Err(shape_err(
                    "with_fusion",
                    format!("fusion weights {:?}", w.shape()),
                ));
            }
        }
        self.fusion = fusion;
        Ok(self)
    }

    /// Normalises a `3×H×W` frame to `1×3×H×W` and checks its size.
    pub fn frame_input(&self, frame: &Tensor) -> Result<Tensor> {
        let shape = [1, 3, self.cfg.height, self.cfg.width];
        let ok = match frame.shape() {
            [3, h, w] => *h == shape[2] && *w == shape[3],
            s => s == shape,
        };
        if !ok {
            return Err(shape_err(
                "detector",
                format!(
                    "frame {:?} does not match configured {}×{}",
                    frame.shape(),
                    shape[2],
                    shape[3]
                ),
            ));
        }
        frame.clone().reshape(&shape)
    }

    /// Backbone output of one frame with attention applied; this is what the cache stores.
    pub fn frame_features(&self, frame: &Tensor) -> Result<Tensor> {
        let feat = self.backbone.infer(&self.frame_input(frame)?)?;
        self.attend(feat)
    }

    pub fn attend(&self, feat: Tensor) -> Result<Tensor> {
        match self.attention.saliency(&feat)? {
            Some(sal) => apply_attention(&feat, &sal),
            None => Ok(feat),
        }
    }

    pub fn heads_forward(&self, fused: &Tensor, target: &Tensor) -> Result<HeadOutputs> {
        self.heads.infer(fused, target)
    }

    /// Fuses a full window of per-frame maps and runs the heads.
    pub fn forward_maps(&self, maps: &[Arc<Tensor>]) -> Result<HeadOutputs> {
        let (fused, _) = self.fusion.fuse(maps)?;
        self.heads_forward(&fused, &maps[self.fusion.target_index()])
    }

    pub fn head_outputs_at(
        &self,
        cache: &mut FeatureCache,
        frames: &[Tensor],
        t: usize,
    ) -> Result<HeadOutputs> {
        let window = window_indices_with(self.fusion.layout(), t, self.fusion.n(), frames.len())?;
        let maps = assemble_window(cache, &window, |i| self.frame_features(&frames[i]))?;
        self.forward_maps(&maps)
    }

    pub fn detect_frame(
        &self,
        cache: &mut FeatureCache,
        frames: &[Tensor],
        t: usize,
    ) -> Result<Vec<Detection>> {
        let out = self.head_outputs_at(cache, frames, t)?;
        Ok(decode(&out, &self.cfg.decode_config()))
    }

    /// Detections for every frame of a sequence, in order, with cache statistics.
    pub fn detect_sequence(
        &self,
        frames: &[Tensor],
        use_cache: bool,
    ) -> Result<(Vec<Vec<Detection>>, CacheStats)> {
        let mut cache = if use_cache {
            FeatureCache::for_window(self.fusion.n())
        } else {
            FeatureCache::disabled()
        };
        let dets = (0..frames.len())
            .map(|t| self.detect_frame(&mut cache, frames, t))
            .collect::<Result<_>>()?;
        Ok((dets, cache.stats()))
    }

    /// All parameters with their checkpoint names, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for l in self.backbone.layers() {
            v.extend(l.params());
        }
        for l in self.attention.layers() {
            v.extend(l.params());
        }
        v.extend(
            self.fusion
                .params()
                .into_iter()
                .map(|(n, t)| (n.to_string(), t)),
        );
        for l in self.heads.layers() {
            v.extend(l.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for l in self.backbone.layers_mut() {
            v.extend(l.params_mut());
        }
        for l in self.attention.layers_mut() {
            v.extend(l.params_mut());
        }
        v.extend(
            self.fusion
                .params_mut()
                .into_iter()
                .map(|(n, t)| (n.to_string(), t)),
        );
        for l in self.heads.layers_mut() {
            v.extend(l.params_mut());
        }
        v
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.params_mut() {
            p.clear_grad();
        }
    }
}
