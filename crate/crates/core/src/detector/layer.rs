use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{self, conv2d, conv2d_backward, conv2d_forward, ConvCtx, ConvParams, Tensor};

/// A named convolution whose parameter gradients accumulate in place.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    name: String,
    pub params: ConvParams,
}

impl Conv {
    pub fn new(name: impl Into<String>, params: ConvParams) -> Self {
        Self {
            name: name.into(),
            params,
        }
    }

    /// He-initialised `k×k` convolution with bias and same padding.
    pub fn he(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        Self::new(name, ConvParams::he(out_ch, in_ch, k, stride, true, rng))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.params)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCtx)> {
        conv2d_forward(x, &self.params)
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, ctx: &mut ConvCtx, grad: &Tensor) -> Result<Tensor> {
        let g = conv2d_backward(ctx, grad)?;
        self.params.weight.accumulate_grad(&g.weight)?;
        if let (Some(b), Some(gb)) = (self.params.bias.as_mut(), g.bias.as_ref()) {
            b.accumulate_grad(gb)?;
        }
        Ok(g.input)
    }

    pub fn set_bias(&mut self, value: f32) {
        if let Some(b) = self.params.bias.as_mut() {
            b.data_mut().fill(value);
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![(format!("{}.weight", self.name), &self.params.weight)];
        if let Some(b) = &self.params.bias {
            v.push((format!("{}.bias", self.name), b));
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![(format!("{}.weight", self.name), &mut self.params.weight)];
        if let Some(b) = self.params.bias.as_mut() {
            v.push((format!("{}.bias", self.name), b));
        }
        v
    }
}

/// Forward state of a convolution followed by ReLU.
#[derive(Debug)]
pub struct ConvReluCtx {
    conv: ConvCtx,
    pre: Tensor,
}

pub fn conv_relu(layer: &Conv, x: &Tensor) -> Result<(Tensor, ConvReluCtx)> {
    let (pre, conv) = layer.forward(x)?;
    let y = tensor::relu(&pre)?;
    Ok((y, ConvReluCtx { conv, pre }))
}

pub fn conv_relu_backward(
    layer: &mut Conv,
    ctx: &mut ConvReluCtx,
    grad: &Tensor,
) -> Result<Tensor> {
    let g = tensor::relu_backward(&ctx.pre, grad)?;
    layer.backward(&mut ctx.conv, &g)
}

pub fn conv_relu_infer(layer: &Conv, x: &Tensor) -> Result<Tensor> {
    tensor::relu(&layer.infer(x)?)
}
