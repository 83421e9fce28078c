//! Saliency-map attention applied multiplicatively to backbone features.
//!
//! Two generators are available: three stacked 3×3 convolutions, and a small
//! U-Net whose encoder halves the resolution and doubles the channel count at
//! each of its `L` levels before a mirrored decoder with skip connections
//! brings it back to the input resolution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layer::{conv_relu, conv_relu_backward, conv_relu_infer, Conv, ConvReluCtx};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{self, ConvCtx, PoolIndex, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    None,
    ThreeConv,
    Unet { levels: usize },
}

impl AttentionKind {
    pub fn unet_levels(self) -> usize {
        match self {
            AttentionKind::Unet { levels } => levels,
            _ => 0,
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionKind::None => f.write_str("none"),
            AttentionKind::ThreeConv => f.write_str("three_conv"),
            AttentionKind::Unet { levels } => write!(f, "unet{}", levels),
        }
    }
}

/// Accepts `none`, `three_conv`, `unet` (two levels) or `unetL`.
impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "three_conv" => Ok(Self::ThreeConv),
            "unet" => Ok(Self::Unet { levels: 2 }),
            _ => s
                .strip_prefix("unet")
                .and_then(|l| l.parse().ok())
                .filter(|&l: &usize| l >= 1)
                .map(|levels| Self::Unet { levels })
                .ok_or_else(|| Error::Invalid(format!("unknown attention '{}'", s))),
        }
    }
}

/// `feat · saliency`, broadcasting the single saliency channel.
pub fn apply_attention(feat: &Tensor, saliency: &Tensor) -> Result<Tensor> {
    tensor::mul_channel_broadcast(feat, saliency)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThreeConv {
    pub conv1: Conv,
    pub conv2: Conv,
    pub conv3: Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    pub encoder: Vec<Conv>,
    /// `decoder[j-1]` serves level `j`; applied from the deepest level up.
    pub decoder: Vec<Conv>,
    pub out: Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Attention {
    None,
    ThreeConv(ThreeConv),
    Unet(UNet),
}

#[derive(Debug)]
pub enum SaliencyCtx {
    ThreeConv {
        c1: ConvReluCtx,
        c2: ConvReluCtx,
        c3: ConvCtx,
        out: Tensor,
    },
    Unet(UnetCtx),
}

#[derive(Debug)]
pub struct UnetCtx {
    enc: Vec<ConvReluCtx>,
    /// Pre-pool encoder outputs, used as skips.
    skips_shape: Vec<Vec<usize>>,
    pools: Vec<PoolIndex>,
    pooled_shapes: Vec<Vec<usize>>,
    dec: Vec<ConvReluCtx>,
    dec_up_channels: Vec<usize>,
    out_conv: ConvCtx,
    out: Tensor,
}

impl UnetCtx {
    /// Shape of each encoder stage's output before pooling.
    pub fn encoder_shapes(&self) -> &[Vec<usize>] {
        &self.skips_shape
    }

    /// Shape after each encoder stage's pooling; the last one is the bottleneck.
    pub fn pooled_shapes(&self) -> &[Vec<usize>] {
        &self.pooled_shapes
    }
}

impl UNet {
    pub fn new(channels: usize, levels: usize, rng: &mut Rng) -> Self {
        let mut encoder = Vec::with_capacity(levels);
        let mut decoder = Vec::with_capacity(levels);
        for k in 1..=levels {
            let (cin, cout) = (channels << (k - 1), channels << k);
            encoder.push(Conv::he(
                format!("attention.enc{}", k),
                cin,
                cout,
                3,
                1,
                rng,
            ));
        }
        for j in 1..=levels {
            // upsampled (c·2^j) + skip (c·2^j) → c·2^(j-1)
            let cin = 2 * (channels << j);
            decoder.push(Conv::he(
                format!("attention.dec{}", j),
                cin,
                channels << (j - 1),
                3,
                1,
                rng,
            ));
        }
        let out = Conv::he("attention.out", channels, 1, 1, 1, rng);
        Self {
            encoder,
            decoder,
            out,
        }
    }

    pub fn levels(&self) -> usize {
        self.encoder.len()
    }

    fn check(&self, feat: &Tensor) -> Result<()> {
        let (_, _, h, w) = feat.dims4()?;
        let div = 1 << self.levels();
        if h % div != 0 || w % div != 0 {
            return Err(shape_err(
                "attention_unet",
                format!("{}x{} not divisible by 2^{}", h, w, self.levels()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, feat: &Tensor) -> Result<(Tensor, UnetCtx)> {
        self.check(feat)?;
        let mut enc = Vec::new();
        let mut skips = Vec::new();
        let mut pools = Vec::new();
        let mut pooled_shapes = Vec::new();
        let mut x = feat.clone();
        for layer in &self.encoder {
            let (e, ctx) = conv_relu(layer, &x)?;
            let (p, idx) = tensor::maxpool2x(&e)?;
            enc.push(ctx);
            pools.push(idx);
            pooled_shapes.push(p.shape().to_vec());
            skips.push(e);
            x = p;
        }
        let mut dec = vec![];
        let mut dec_up_channels = vec![];
        for j in (1..=self.levels()).rev() {
            let up = tensor::upsample2x_nearest(&x)?;
            dec_up_channels.push(up.shape()[1]);
            let cat = tensor::concat_channels(&[&up, &skips[j - 1]])?;
            let (y, ctx) = conv_relu(&self.decoder[j - 1], &cat)?;
            dec.push(ctx);
            x = y;
        }
        let (logits, out_conv) = self.out.forward(&x)?;
        let out = tensor::sigmoid(&logits)?;
        Ok((
            out.clone(),
            UnetCtx {
                enc,
                skips_shape: skips.iter().map(|s| s.shape().to_vec()).collect(),
                pools,
                pooled_shapes,
                dec,
                dec_up_channels,
                out_conv,
                out,
            },
        ))
    }

    pub fn infer(&self, feat: &Tensor) -> Result<Tensor> {
        self.check(feat)?;
        let mut skips = Vec::new();
        let mut x = feat.clone();
        for layer in &self.encoder {
            let e = conv_relu_infer(layer, &x)?;
            x = tensor::maxpool2x(&e)?.0;
            skips.push(e);
        }
        for j in (1..=self.levels()).rev() {
            let up = tensor::upsample2x_nearest(&x)?;
            let cat = tensor::concat_channels(&[&up, &skips[j - 1]])?;
            x = conv_relu_infer(&self.decoder[j - 1], &cat)?;
        }
        tensor::sigmoid(&self.out.infer(&x)?)
    }

    pub fn backward(&mut self, ctx: &mut UnetCtx, grad: &Tensor) -> Result<Tensor> {
        let levels = self.levels();
        let g = tensor::sigmoid_backward(&ctx.out, grad)?;
        let mut g = self.out.backward(&mut ctx.out_conv, &g)?;
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; levels];
        // ctx.dec[i] was produced at level j = levels - i.
        for (i, dctx) in ctx.dec.iter_mut().enumerate() {
            let j = levels - i;
            let gcat = conv_relu_backward(&mut self.decoder[j - 1], dctx, &g)?;
            let up_c = ctx.dec_up_channels[i];
            let skip_c = gcat.shape()[1] - up_c;
            let mut parts = tensor::split_channels(&gcat, &[up_c, skip_c])?;
            skip_grads[j - 1] = parts.pop();
            g = tensor::upsample2x_nearest_backward(&parts[0])?;
        }
        for k in (1..=levels).rev() {
            let mut ge = tensor::maxpool2x_backward(&ctx.pools[k - 1], &g)?;
            if let Some(s) = skip_grads[k - 1].take() {
                ge = tensor::add(&ge, &s)?;
            }
            g = conv_relu_backward(&mut self.encoder[k - 1], &mut ctx.enc[k - 1], &ge)?;
        }
        Ok(g)
    }

    fn layers(&self) -> Vec<&Conv> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .chain([&self.out])
            .collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Conv> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .chain([&mut self.out])
            .collect()
    }
}

impl ThreeConv {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        Self {
            conv1: Conv::he("attention.conv1", channels, channels, 3, 1, rng),
            conv2: Conv::he("attention.conv2", channels, channels, 3, 1, rng),
            conv3: Conv::he("attention.conv3", channels, 1, 3, 1, rng),
        }
    }
}

impl Attention {
    pub fn new(kind: AttentionKind, channels: usize, rng: &mut Rng) -> Self {
        match kind {
            AttentionKind::None => Attention::None,
            AttentionKind::ThreeConv => Attention::ThreeConv(ThreeConv::new(channels, rng)),
            AttentionKind::Unet { levels } => Attention::Unet(UNet::new(channels, levels, rng)),
        }
    }

    pub fn kind(&self) -> AttentionKind {
        match self {
            Attention::None => AttentionKind::None,
            Attention::ThreeConv(_) => AttentionKind::ThreeConv,
            Attention::Unet(u) => AttentionKind::Unet { levels: u.levels() },
        }
    }

    /// Saliency map `n×1×h×w` in (0, 1); `None` when attention is disabled.
    pub fn saliency(&self, feat: &Tensor) -> Result<Option<Tensor>> {
        Ok(match self {
            Attention::None => None,
            Attention::ThreeConv(a) => {
                let y = conv_relu_infer(&a.conv1, feat)?;
                let y = conv_relu_infer(&a.conv2, &y)?;
                Some(tensor::sigmoid(&a.conv3.infer(&y)?)?)
            }
            Attention::Unet(u) => Some(u.infer(feat)?),
        })
    }

    pub fn saliency_forward(&self, feat: &Tensor) -> Result<Option<(Tensor, SaliencyCtx)>> {
        Ok(match self {
            Attention::None => None,
            Attention::ThreeConv(a) => {
                let (y, c1) = conv_relu(&a.conv1, feat)?;
                let (y, c2) = conv_relu(&a.conv2, &y)?;
                let (z, c3) = a.conv3.forward(&y)?;
                let out = tensor::sigmoid(&z)?;
                Some((out.clone(), SaliencyCtx::ThreeConv { c1, c2, c3, out }))
            }
            Attention::Unet(u) => {
                let (out, ctx) = u.forward(feat)?;
                Some((out, SaliencyCtx::Unet(ctx)))
            }
        })
    }

    /// Gradient with respect to the features that produced the saliency map.
    pub fn saliency_backward(&mut self, ctx: &mut SaliencyCtx, grad: &Tensor) -> Result<Tensor> {
        match (self, ctx) {
            (Attention::ThreeConv(a), SaliencyCtx::ThreeConv { c1, c2, c3, out }) => {
                let g = tensor::sigmoid_backward(out, grad)?;
                let g = a.conv3.backward(c3, &g)?;
                let g = conv_relu_backward(&mut a.conv2, c2, &g)?;
                conv_relu_backward(&mut a.conv1, c1, &g)
            }
            (Attention::Unet(u), SaliencyCtx::Unet(c)) => u.backward(c, grad),
            _ => Err(Error::Invalid(
                "saliency context does not match attention".into(),
            )),
        }
    }

    pub fn layers(&self) -> Vec<&Conv> {
        match self {
            Attention::None => vec![],
            Attention::ThreeConv(a) => vec![&a.conv1, &a.conv2, &a.conv3],
            Attention::Unet(u) => u.layers(),
        }
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Conv> {
        match self {
            Attention::None => vec![],
            Attention::ThreeConv(a) => vec![&mut a.conv1, &mut a.conv2, &mut a.conv3],
            Attention::Unet(u) => u.layers_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_conv_shape_and_bounds() {
        let mut rng = Rng::new(0);
        let a = Attention::new(AttentionKind::ThreeConv, 8, &mut rng);
        let feat = Tensor::randn(&[1, 8, 6, 10], 1.0, &mut rng);
        let s = a.saliency(&feat).unwrap().unwrap();
        assert_eq!(s.shape(), &[1, 1, 6, 10]);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_weights_give_half() {
        let mut rng = Rng::new(1);
        let mut a = Attention::new(AttentionKind::ThreeConv, 4, &mut rng);
        for l in a.layers_mut() {
            l.params.weight.data_mut().fill(0.0);
        }
        let s = a
            .saliency(&Tensor::randn(&[1, 4, 4, 4], 1.0, &mut rng))
            .unwrap()
            .unwrap();
        assert!(s.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn unet_encoder_channels_double() {
        let mut rng = Rng::new(2);
        let u = UNet::new(4, 4, &mut rng);
        let (s, ctx) = u
            .forward(&Tensor::randn(&[1, 4, 16, 16], 1.0, &mut rng))
            .unwrap();
        for (k, shape) in ctx.encoder_shapes().iter().enumerate() {
            assert_eq!(shape[1], 4 << (k + 1));
            assert_eq!(shape[2], 16 >> k);
        }
        assert_eq!(ctx.pooled_shapes().last().unwrap(), &vec![1, 64, 1, 1]);
        assert_eq!(s.shape(), &[1, 1, 16, 16]);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn unet_single_level() {
        let mut rng = Rng::new(3);
        let u = UNet::new(2, 1, &mut rng);
        let feat = Tensor::randn(&[1, 2, 4, 6], 1.0, &mut rng);
        let (s, _) = u.forward(&feat).unwrap();
        assert_eq!(s.shape(), &[1, 1, 4, 6]);
        assert!(s.bit_eq(&u.infer(&feat).unwrap()));
        assert!(u.infer(&Tensor::zeros(&[1, 2, 5, 6])).is_err());
    }

    #[test]
    fn apply_attention_cases() {
        let mut rng = Rng::new(4);
        let feat = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng);
        assert!(apply_attention(&feat, &Tensor::ones(&[1, 1, 4, 4]))
            .unwrap()
            .bit_eq(&feat));
        let z = apply_attention(&feat, &Tensor::zeros(&[1, 1, 4, 4])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(apply_attention(&feat, &Tensor::zeros(&[1, 1, 4, 5])).is_err());
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(
            "unet".parse::<AttentionKind>().unwrap(),
            AttentionKind::Unet { levels: 2 }
        );
        assert_eq!(
            "unet4".parse::<AttentionKind>().unwrap(),
            AttentionKind::Unet { levels: 4 }
        );
        assert_eq!(
            "three_conv".parse::<AttentionKind>().unwrap(),
            AttentionKind::ThreeConv
        );
        assert!("unet0".parse::<AttentionKind>().is_err());
        for k in [
            AttentionKind::None,
            AttentionKind::ThreeConv,
            AttentionKind::Unet { levels: 3 },
        ] {
            assert_eq!(k.to_string().parse::<AttentionKind>().unwrap(), k);
        }
    }
}
