use super::layer::{conv_relu, conv_relu_backward, conv_relu_infer, Conv, ConvReluCtx};
use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::tensor::{self, ConvCtx, Tensor};

/// Output stride of the backbone.
pub const STRIDE: usize = 4;

/// Four-layer stride-4 feature extractor: two stride-2 convolutions followed
/// by two residual blocks `relu(x + conv(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub conv1: Conv,
    pub conv2: Conv,
    pub res1: Conv,
    pub res2: Conv,
}

#[derive(Debug)]
pub struct BackboneCtx {
    conv1: ConvReluCtx,
    conv2: ConvReluCtx,
    res1: ResidualCtx,
    res2: ResidualCtx,
}

#[derive(Debug)]
struct ResidualCtx {
    conv: ConvCtx,
    pre: Tensor,
}

fn residual(layer: &Conv, x: &Tensor) -> Result<(Tensor, ResidualCtx)> {
    let (y, conv) = layer.forward(x)?;
    let pre = tensor::add(x, &y)?;
    Ok((tensor::relu(&pre)?, ResidualCtx { conv, pre }))
}

fn residual_backward(layer: &mut Conv, ctx: &mut ResidualCtx, grad: &Tensor) -> Result<Tensor> {
    let g = tensor::relu_backward(&ctx.pre, grad)?;
    let through = layer.backward(&mut ctx.conv, &g)?;
    tensor::add(&g, &through)
}

impl Backbone {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        let half = channels / 2;
        Self {
            conv1: Conv::he("backbone.conv1", 3, half, 3, 2, rng),
            conv2: Conv::he("backbone.conv2", half, channels, 3, 2, rng),
            // Residual branches start small so the blocks begin near identity.
            res1: scaled(
                Conv::he("backbone.res1", channels, channels, 3, 1, rng),
                0.5,
            ),
            res2: scaled(
                Conv::he("backbone.res2", channels, channels, 3, 1, rng),
                0.5,
            ),
        }
    }

    fn check_input(x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h % STRIDE != 0 || w % STRIDE != 0 {
            return Err(shape_err(
                "backbone",
                format!(
                    "expected n×3×H×W with H, W divisible by {}, got {:?}",
                    STRIDE,
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_input(x)?;
        let y = conv_relu_infer(&self.conv1, x)?;
        let y = conv_relu_infer(&self.conv2, &y)?;
        let y = tensor::relu(&tensor::add(&y, &self.res1.infer(&y)?)?)?;
        tensor::relu(&tensor::add(&y, &self.res2.infer(&y)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, BackboneCtx)> {
        Self::check_input(x)?;
        let (y, conv1) = conv_relu(&self.conv1, x)?;
        let (y, conv2) = conv_relu(&self.conv2, &y)?;
        let (y, res1) = residual(&self.res1, &y)?;
        let (y, res2) = residual(&self.res2, &y)?;
        Ok((
            y,
            BackboneCtx {
                conv1,
                conv2,
                res1,
                res2,
            },
        ))
    }

    pub fn backward(&mut self, ctx: &mut BackboneCtx, grad: &Tensor) -> Result<Tensor> {
        let g = residual_backward(&mut self.res2, &mut ctx.res2, grad)?;
        let g = residual_backward(&mut self.res1, &mut ctx.res1, &g)?;
        let g = conv_relu_backward(&mut self.conv2, &mut ctx.conv2, &g)?;
        conv_relu_backward(&mut self.conv1, &mut ctx.conv1, &g)
    }

    pub fn layers(&self) -> [&Conv; 4] {
        [&self.conv1, &self.conv2, &self.res1, &self.res2]
    }

    pub fn layers_mut(&mut self) -> [&mut Conv; 4] {
        [
            &mut self.conv1,
            &mut self.conv2,
            &mut self.res1,
            &mut self.res2,
        ]
    }
}

fn scaled(mut conv: Conv, s: f32) -> Conv {
    conv.params
        .weight
        .data_mut()
        .iter_mut()
        .for_each(|w| *w *= s);
    conv
}
