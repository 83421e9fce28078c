//! Merging the feature maps of a frame window into one map.
//!
//! The learned fusion slices the `2n + 1` input maps channel by channel,
//! stacks the `2n + 1` planes of each channel, convolves each stack with a
//! `1 × 1 × (2n + 1)` kernel of output depth one, and re-assembles the `c`
//! resulting planes into a single `c`-channel map. That is a per-channel
//! weighted sum over the frame axis, which is how [`fuse_learned`] computes
//! it; [`fuse_learned_literal`] runs the regroup/convolve/re-order pipeline
//! verbatim and exists so the two can be checked against each other.
//!
//! The remaining strategies are the ablation baselines: frame-axis mean, max
//! and median, plus a full concatenate-then-1×1-convolve channel mixer.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    self, concat_channels, conv2d, conv2d_backward, conv2d_forward, split_channels, ArgIndex,
    ConvCtx, ConvGrads, ConvParams, Tensor,
};
use crate::window::WindowLayout;

/// Whether one frame-axis kernel is shared by every channel or each channel has its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelMode {
    Shared,
    PerChannel,
}

impl fmt::Display for KernelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelMode::Shared => "shared",
            KernelMode::PerChannel => "per_channel",
        })
    }
}

impl FromStr for KernelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Self::Shared),
            "per_channel" => Ok(Self::PerChannel),
            _ => Err(Error::Invalid(format!("unknown kernel mode '{}'", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Identity,
    Uniform,
    SeededRandom,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "uniform" => Ok(Self::Uniform),
            "seeded_random" => Ok(Self::SeededRandom),
            _ => Err(Error::Invalid(format!("unknown init mode '{}'", s))),
        }
    }
}

/// Learned frame-axis mixing weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    n: usize,
    channels: usize,
    mode: KernelMode,
    layout: WindowLayout,
    /// `2n+1` (shared) or `c × (2n+1)` (per channel).
    pub weights: Tensor,
    /// One scalar per output channel, absent by default.
    pub bias: Option<Tensor>,
}

impl FusionParams {
    fn with_weights(
        n: usize,
        channels: usize,
        mode: KernelMode,
        layout: WindowLayout,
        bias: bool,
        mut weight: impl FnMut(usize) -> f32,
    ) -> Self {
        let m = 2 * n + 1;
        let weights = match mode {
            KernelMode::Shared => Tensor::from_fn(&[m], &mut weight),
            KernelMode::PerChannel => Tensor::from_fn(&[channels, m], |i| weight(i % m)),
        };
        Self {
            n,
            channels,
            mode,
            layout,
            weights,
            bias: bias.then(|| Tensor::zeros(&[channels])),
        }
    }

    /// Weight 1 on the target frame, 0 elsewhere.
    pub fn identity(
        n: usize,
        channels: usize,
        mode: KernelMode,
        layout: WindowLayout,
        bias: bool,
    ) -> Self {
        let target = layout.target_index(n);
        Self::with_weights(n, channels, mode, layout, bias, |k| {
            if k == target {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn uniform(
        n: usize,
        channels: usize,
        mode: KernelMode,
        layout: WindowLayout,
        bias: bool,
    ) -> Self {
        let w = 1.0 / (2 * n + 1) as f32;
        Self::with_weights(n, channels, mode, layout, bias, |_| w)
    }

    pub fn seeded(
        n: usize,
        channels: usize,
        mode: KernelMode,
        layout: WindowLayout,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let base = 1.0 / (2 * n + 1) as f32;
        let mut p = Self::with_weights(n, channels, mode, layout, bias, |_| 0.0);
        p.weights
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = base + 0.1 * rng.normal());
        p
    }

    pub fn from_parts(
        n: usize,
        channels: usize,
        mode: KernelMode,
        layout: WindowLayout,
        weights: Tensor,
        bias: Option<Tensor>,
    ) -> Result<Self> {
        let m = 2 * n + 1;
        let expected: Vec<usize> = match mode {
            KernelMode::Shared => vec![m],
            KernelMode::PerChannel => vec![channels, m],
        };
        if weights.shape() != expected.as_slice() {
            return Err(shape_err(
                "FusionParams",
                format!("weights {:?}, expected {:?}", weights.shape(), expected),
            ));
        }
        if let Some(b) = &bias {
            if b.shape() != [channels] {
                return Err(shape_err("FusionParams", format!("bias {:?}", b.shape())));
            }
        }
        Ok(Self {
            n,
            channels,
            mode,
            layout,
            weights,
            bias,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn window_len(&self) -> usize {
        2 * self.n + 1
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn layout(&self) -> WindowLayout {
        self.layout
    }

    pub fn target_index(&self) -> usize {
        self.layout.target_index(self.n)
    }

    /// Weight applied to window position `k` for channel `ch`.
    pub fn weight(&self, k: usize, ch: usize) -> f32 {
        match self.mode {
            KernelMode::Shared => self.weights.data()[k],
            KernelMode::PerChannel => self.weights.data()[ch * self.window_len() + k],
        }
    }
}

/// Checks window length and shape agreement; returns `(batch, channels, h·w)`.
fn check_maps(maps: &[Arc<Tensor>], window_len: usize) -> Result<(usize, usize, usize)> {
    if maps.len() != window_len {
        return Err(shape_err(
            "fusion",
            format!("expected {} maps, got {}", window_len, maps.len()),
        ));
    }
    let (n, c, h, w) = maps[0].dims4()?;
    for m in maps {
        maps[0].ensure_same_shape(m, "fusion")?;
    }
    Ok((n, c, h * w))
}

/// Saved inputs for a fusion backward pass.
#[derive(Debug, Default)]
pub struct FusionCtx {
    saved: Option<Saved>,
}

#[derive(Debug)]
enum Saved {
    Passthrough,
    Learned(Vec<Arc<Tensor>>),
    Mean,
    Select(ArgIndex),
    ConcatConv(ConvCtx),
}

impl FusionCtx {
    fn new(saved: Saved) -> Self {
        Self { saved: Some(saved) }
    }

    fn take(&mut self) -> Result<Saved> {
        self.saved.take().ok_or(Error::ContextConsumed)
    }
}

/// Gradients of a fusion step. `maps[k]` is the gradient for window position `k`.
#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub maps: Vec<Tensor>,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub conv: Option<ConvGrads>,
}

/// `out[b, ch] = Σ_k w[k (, ch)] · maps[k][b, ch] (+ bias[ch])`.
pub fn fuse_learned(maps: &[Arc<Tensor>], p: &FusionParams) -> Result<(Tensor, FusionCtx)> {
    let (batch, c, hw) = check_maps(maps, p.window_len())?;
    if (p.mode == KernelMode::PerChannel || p.bias.is_some()) && c != p.channels {
        return Err(shape_err(
            "fuse_learned",
            format!("{} channels, params built for {}", c, p.channels),
        ));
    }
    let mut out = vec![0.0f32; maps[0].len()];
    for (k, map) in maps.iter().enumerate() {
        for b in 0..batch {
            for ch in 0..c {
                let w = p.weight(k, ch);
                let off = (b * c + ch) * hw;
                let src = &map.data()[off..off + hw];
                out[off..off + hw]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(o, &x)| *o += w * x);
            }
        }
    }
    if let Some(bias) = &p.bias {
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                out[off..off + hw]
                    .iter_mut()
                    .for_each(|o| *o += bias.data()[ch]);
            }
        }
    }
    let out = Tensor::new(maps[0].shape(), out)?;
    out.check_finite("fuse_learned")?;
    Ok((out, FusionCtx::new(Saved::Learned(maps.to_vec()))))
}

/// Regroup → `1×1×(2n+1)` convolution → re-order, exactly as the module is drawn.
pub fn fuse_learned_literal(maps: &[Arc<Tensor>], p: &FusionParams) -> Result<Tensor> {
    let (batch, c, hw) = check_maps(maps, p.window_len())?;
    let (_, _, h, w) = maps[0].dims4()?;
    let m = p.window_len();
    // One (2n+1)-deep tensor per (batch item, channel) slice.
    let mut grouped = vec![0.0f32; batch * c * m * hw];
    for (k, map) in maps.iter().enumerate() {
        for b in 0..batch {
            for ch in 0..c {
                let src = &map.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let dst = ((b * c + ch) * m + k) * hw;
                grouped[dst..dst + hw].copy_from_slice(src);
            }
        }
    }
    let grouped = Tensor::new(&[batch * c, m, h, w], grouped)?;
    let merged = match p.mode {
        KernelMode::Shared => {
            let kernel = ConvParams::new(p.weights.clone().reshape(&[1, m, 1, 1])?, None, 1, 0)?;
            conv2d(&grouped, &kernel)?.into_data()
        }
        KernelMode::PerChannel => {
            let mut merged = vec![0.0f32; batch * c * hw];
            for ch in 0..c {
                let row = p.weights.data()[ch * m..(ch + 1) * m].to_vec();
                let kernel = ConvParams::new(Tensor::new(&[1, m, 1, 1], row)?, None, 1, 0)?;
                for b in 0..batch {
                    let slice = (b * c + ch) * m * hw;
                    let single = Tensor::new(
                        &[1, m, h, w],
                        grouped.data()[slice..slice + m * hw].to_vec(),
                    )?;
                    let y = conv2d(&single, &kernel)?;
                    merged[(b * c + ch) * hw..(b * c + ch + 1) * hw].copy_from_slice(y.data());
                }
            }
            merged
        }
    };
    // The (batch·c) × 1 × h × w output re-ordered channel-wise is already
    // batch × c × h × w in row-major order.
    let mut out = Tensor::new(maps[0].shape(), merged)?;
    if let Some(bias) = &p.bias {
        let data = out.data_mut();
        for b in 0..batch {
            for ch in 0..c {
                data[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                    .iter_mut()
                    .for_each(|v| *v += bias.data()[ch]);
            }
        }
    }
    Ok(out)
}

pub fn fuse_learned_backward(
    ctx: &mut FusionCtx,
    p: &FusionParams,
    grad_out: &Tensor,
) -> Result<FusionGrads> {
    let maps = match ctx.take()? {
        Saved::Learned(maps) => maps,
        _ => {
            return Err(Error::Invalid(
                "fusion context does not belong to a learned fusion".into(),
            ))
        }
    };
    let (batch, c, hw) = check_maps(&maps, p.window_len())?;
    maps[0].ensure_same_shape(grad_out, "fuse_learned_backward")?;
    let g = grad_out.data();
    let mut gmaps = Vec::with_capacity(maps.len());
    let mut gw = Tensor::zeros(p.weights.shape());
    for (k, map) in maps.iter().enumerate() {
        let mut gm = vec![0.0f32; map.len()];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let w = p.weight(k, ch);
                let mut acc = 0.0f64;
                for i in off..off + hw {
                    gm[i] = w * g[i];
                    acc += (map.data()[i] * g[i]) as f64;
                }
                let slot = match p.mode {
                    KernelMode::Shared => k,
                    KernelMode::PerChannel => ch * p.window_len() + k,
                };
                gw.data_mut()[slot] += acc as f32;
            }
        }
        gmaps.push(Tensor::new(map.shape(), gm)?);
    }
    let gbias = p.bias.as_ref().map(|_| {
        let mut gb = Tensor::zeros(&[c]);
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                gb.data_mut()[ch] += g[off..off + hw].iter().map(|&v| v as f64).sum::<f64>() as f32;
            }
        }
        gb
    });
    Ok(FusionGrads {
        maps: gmaps,
        weights: Some(gw),
        bias: gbias,
        conv: None,
    })
}

/// Flattens the window maps into a `(2n+1) × len` stack for frame-axis reductions.
fn stack_flat(maps: &[Arc<Tensor>]) -> Result<Tensor> {
    let flat: Vec<Tensor> = maps
        .iter()
        .map(|m| Tensor::new(&[m.len()], m.data().to_vec()))
        .collect::<Result<_>>()?;
    tensor::stack(&flat.iter().collect::<Vec<_>>())
}

/// Strategy identifier as used on the command line and in checkpoint sidecars.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionTag {
    None,
    Learned,
    LearnedPastOnly,
    Mean,
    Max,
    Median,
    ConcatConv,
}

impl FusionTag {
    pub const ALL: [FusionTag; 7] = [
        FusionTag::None,
        FusionTag::Learned,
        FusionTag::Mean,
        FusionTag::Max,
        FusionTag::Median,
        FusionTag::ConcatConv,
        FusionTag::LearnedPastOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionTag::None => "none",
            FusionTag::Learned => "learned",
            FusionTag::LearnedPastOnly => "learned_past_only",
            FusionTag::Mean => "mean",
            FusionTag::Max => "max",
            FusionTag::Median => "median",
            FusionTag::ConcatConv => "concat_conv",
        }
    }
}

impl fmt::Display for FusionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown fusion strategy '{}'", s)))
    }
}

/// One of the interchangeable ways to merge a frame window.
#[derive(Clone, Debug, PartialEq)]
pub enum FusionStrategy {
    /// Single frame; only valid with `n = 0`.
    None,
    Learned(FusionParams),
    Mean {
        n: usize,
    },
    Max {
        n: usize,
    },
    Median {
        n: usize,
    },
    /// Concatenate all `(2n+1)·c` channels and mix them back to `c` with a 1×1 convolution.
    ConcatConv {
        n: usize,
        conv: ConvParams,
    },
}

/// Builds a strategy for `c`-channel maps and half-window `n`.
pub fn make_fusion(
    tag: FusionTag,
    n: usize,
    c: usize,
    init: InitMode,
    rng: &mut Rng,
) -> Result<FusionStrategy> {
    make_fusion_with(tag, n, c, init, KernelMode::Shared, false, rng)
}

pub fn make_fusion_with(
    tag: FusionTag,
    n: usize,
    c: usize,
    init: InitMode,
    mode: KernelMode,
    bias: bool,
    rng: &mut Rng,
) -> Result<FusionStrategy> {
    let mut learned = |layout| match init {
        InitMode::Identity => FusionParams::identity(n, c, mode, layout, bias),
        InitMode::Uniform => FusionParams::uniform(n, c, mode, layout, bias),
        InitMode::SeededRandom => FusionParams::seeded(n, c, mode, layout, bias, rng),
    };
    Ok(match tag {
        FusionTag::None if n == 0 => FusionStrategy::None,
        FusionTag::None => {
            return Err(Error::Invalid(format!(
                "fusion 'none' requires n = 0, got n = {}",
                n
            )));
        }
        FusionTag::Learned => FusionStrategy::Learned(learned(WindowLayout::Symmetric)),
        FusionTag::LearnedPastOnly => FusionStrategy::Learned(learned(WindowLayout::PastOnly)),
        FusionTag::Mean => FusionStrategy::Mean { n },
        FusionTag::Max => FusionStrategy::Max { n },
        FusionTag::Median => FusionStrategy::Median { n },
        FusionTag::ConcatConv => {
            let m = 2 * n + 1;
            let conv = match init {
                InitMode::SeededRandom => ConvParams::he(c, m * c, 1, 1, true, rng),
                InitMode::Identity | InitMode::Uniform => {
                    let target = n;
                    let weight = Tensor::from_fn(&[c, m * c, 1, 1], |i| {
                        let (o, j) = (i / (m * c), i % (m * c));
                        let (k, ch) = (j / c, j % c);
                        match init {
                            InitMode::Identity if ch == o && k == target => 1.0,
                            InitMode::Uniform if ch == o => 1.0 / m as f32,
                            _ => 0.0,
                        }
                    });
                    ConvParams::new(weight, Some(Tensor::zeros(&[c])), 1, 0)?
                }
            };
            FusionStrategy::ConcatConv { n, conv }
        }
    })
}

impl FusionStrategy {
    pub fn tag(&self) -> FusionTag {
        match self {
            FusionStrategy::None => FusionTag::None,
            FusionStrategy::Learned(p) if p.layout == WindowLayout::PastOnly => {
                FusionTag::LearnedPastOnly
            }
            FusionStrategy::Learned(_) => FusionTag::Learned,
            FusionStrategy::Mean { .. } => FusionTag::Mean,
            FusionStrategy::Max { .. } => FusionTag::Max,
            FusionStrategy::Median { .. } => FusionTag::Median,
            FusionStrategy::ConcatConv { .. } => FusionTag::ConcatConv,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            FusionStrategy::None => 0,
            FusionStrategy::Learned(p) => p.n,
            FusionStrategy::Mean { n }
            | FusionStrategy::Max { n }
            | FusionStrategy::Median { n } => *n,
            FusionStrategy::ConcatConv { n, .. } => *n,
        }
    }

    pub fn window_len(&self) -> usize {
        2 * self.n() + 1
    }

    pub fn layout(&self) -> WindowLayout {
        match self {
            FusionStrategy::Learned(p) => p.layout,
            _ => WindowLayout::Symmetric,
        }
    }

    pub fn target_index(&self) -> usize {
        self.layout().target_index(self.n())
    }

    /// Merges the window into one map of the same shape as each input.
    pub fn fuse(&self, maps: &[Arc<Tensor>]) -> Result<(Tensor, FusionCtx)> {
        match self {
            FusionStrategy::Learned(p) => fuse_learned(maps, p),
            _ => fuse_baseline(maps, self),
        }
    }

    pub fn backward(&self, ctx: &mut FusionCtx, grad_out: &Tensor) -> Result<FusionGrads> {
        if let FusionStrategy::Learned(p) = self {
            return fuse_learned_backward(ctx, p, grad_out);
        }
        let m = self.window_len();
        let shape = grad_out.shape().to_vec();
        let unflatten = |flat: Tensor| -> Result<Vec<Tensor>> {
            flat.data()
                .chunks_exact(grad_out.len())
                .map(|d| Tensor::new(&shape, d.to_vec()))
                .collect()
        };
        let flat_grad = Tensor::new(&[grad_out.len()], grad_out.data().to_vec())?;
        let mut grads = FusionGrads {
            maps: Vec::new(),
            weights: None,
            bias: None,
            conv: None,
        };
        match (self, ctx.take()?) {
            (FusionStrategy::None, Saved::Passthrough) => grads.maps = vec![grad_out.clone()],
            (FusionStrategy::Mean { .. }, Saved::Mean) => {
                grads.maps = unflatten(tensor::mean_over_axis_backward(
                    &flat_grad,
                    &[m, grad_out.len()],
                    0,
                )?)?;
            }
            (FusionStrategy::Max { .. } | FusionStrategy::Median { .. }, Saved::Select(arg)) => {
                grads.maps = unflatten(tensor::select_backward(&arg, &flat_grad)?)?;
            }
            (FusionStrategy::ConcatConv { .. }, Saved::ConcatConv(mut conv_ctx)) => {
                let g = conv2d_backward(&mut conv_ctx, grad_out)?;
                let c = grad_out.shape()[1];
                grads.maps = split_channels(&g.input, &vec![c; m])?;
                grads.conv = Some(g);
            }
            _ => {
                return Err(Error::Invalid(
                    "fusion context does not match strategy".into(),
                ))
            }
        }
        Ok(grads)
    }

    /// Trainable tensors with their checkpoint names.
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            FusionStrategy::Learned(p) => {
                let mut v = vec![("fusion.weight", &p.weights)];
                if let Some(b) = &p.bias {
                    v.push(("fusion.bias", b));
                }
                v
            }
            FusionStrategy::ConcatConv { conv, .. } => {
                let mut v = vec![("fusion.conv.weight", &conv.weight)];
                if let Some(b) = &conv.bias {
                    v.push(("fusion.conv.bias", b));
                }
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            FusionStrategy::Learned(p) => {
                let mut v = vec![("fusion.weight", &mut p.weights)];
                if let Some(b) = p.bias.as_mut() {
                    v.push(("fusion.bias", b));
                }
                v
            }
            FusionStrategy::ConcatConv { conv, .. } => {
                let mut v = vec![("fusion.conv.weight", &mut conv.weight)];
                if let Some(b) = conv.bias.as_mut() {
                    v.push(("fusion.conv.bias", b));
                }
                v
            }
            _ => Vec::new(),
        }
    }

    /// Adds parameter gradients into the parameters' gradient slots.
    pub fn accumulate(&mut self, grads: &FusionGrads) -> Result<()> {
        match self {
            FusionStrategy::Learned(p) => {
                if let Some(g) = &grads.weights {
                    p.weights.accumulate_grad(g)?;
                }
                if let (Some(b), Some(g)) = (p.bias.as_mut(), &grads.bias) {
                    b.accumulate_grad(g)?;
                }
            }
            FusionStrategy::ConcatConv { conv, .. } => {
                if let Some(g) = &grads.conv {
                    conv.weight.accumulate_grad(&g.weight)?;
                    if let (Some(b), Some(gb)) = (conv.bias.as_mut(), &g.bias) {
                        b.accumulate_grad(gb)?;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// One-line sidecar record: `tag=… n=… mode=… bias=… layout=…`.
    pub fn header(&self) -> String {
        let (mode, bias) = match self {
            FusionStrategy::Learned(p) => (p.mode, p.bias.is_some()),
            FusionStrategy::ConcatConv { conv, .. } => (KernelMode::Shared, conv.bias.is_some()),
            _ => (KernelMode::Shared, false),
        };
        format!(
            "tag={} n={} mode={} bias={} layout={}",
            self.tag(),
            self.n(),
            mode,
            u8::from(bias),
            self.layout()
        )
    }

    /// Rebuilds an identity-initialised strategy skeleton from a sidecar
    /// record; parameters are loaded on top of it afterwards.
    pub fn from_header(line: &str, channels: usize) -> Result<Self> {
        let mut tag = None;
        let mut n = None;
        let mut mode = KernelMode::Shared;
        let mut bias = false;
        for field in line.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad fusion header field '{}'", field)))?;
            match key {
                "tag" => tag = Some(value.parse::<FusionTag>()?),
                "n" => {
                    n = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| Error::Format(e.to_string()))?,
                    )
                }
                "mode" => mode = value.parse()?,
                "bias" => bias = value == "1",
                "layout" => {
                    value.parse::<WindowLayout>()?;
                }
                _ => {
                    return Err(Error::Format(format!(
                        "unknown fusion header key '{}'",
                        key
                    )))
                }
            }
        }
        let tag = tag.ok_or_else(|| Error::Format("fusion header lacks tag".into()))?;
        let n = n.ok_or_else(|| Error::Format("fusion header lacks n".into()))?;
        let mut rng = Rng::new(0);
        make_fusion_with(tag, n, channels, InitMode::Identity, mode, bias, &mut rng)
    }
}

/// Parameter-free (or concat + 1×1 convolution) merging for the ablation baselines.
pub fn fuse_baseline(
    maps: &[Arc<Tensor>],
    strategy: &FusionStrategy,
) -> Result<(Tensor, FusionCtx)> {
    check_maps(maps, strategy.window_len())?;
    let shape = maps[0].shape().to_vec();
    let (out, saved) = match strategy {
        FusionStrategy::None => ((*maps[0]).clone(), Saved::Passthrough),
        FusionStrategy::Mean { .. } => {
            let out = tensor::mean_over_axis(&stack_flat(maps)?, 0)?;
            (out.reshape(&shape)?, Saved::Mean)
        }
        FusionStrategy::Max { .. } => {
            let (out, arg) = tensor::max_over_axis(&stack_flat(maps)?, 0)?;
            (out.reshape(&shape)?, Saved::Select(arg))
        }
        FusionStrategy::Median { .. } => {
            let (out, arg) = tensor::median_over_axis(&stack_flat(maps)?, 0)?;
            (out.reshape(&shape)?, Saved::Select(arg))
        }
        FusionStrategy::ConcatConv { conv, .. } => {
            let refs: Vec<&Tensor> = maps.iter().map(|m| m.as_ref()).collect();
            let (out, ctx) = conv2d_forward(&concat_channels(&refs)?, conv)?;
            if out.shape() != shape.as_slice() {
                return Err(shape_err(
                    "concat_conv",
                    format!("output {:?}, expected {:?}", out.shape(), shape),
                ));
            }
            (out, Saved::ConcatConv(ctx))
        }
        FusionStrategy::Learned(p) => return fuse_learned(maps, p),
    };
    Ok((out, FusionCtx::new(saved)))
}
