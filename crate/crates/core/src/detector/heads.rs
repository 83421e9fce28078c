use super::layer::{conv_relu, conv_relu_backward, conv_relu_infer, Conv, ConvReluCtx};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{self, ConvCtx, Tensor};

/// Initial heatmap logit bias, a background prior of about 0.1.
pub const HEATMAP_PRIOR_BIAS: f32 = -2.19;

/// Initial size regression bias in input pixels.
pub const SIZE_PRIOR_PX: f32 = 12.0;

/// Raw head outputs for one frame; all tensors are `1×ch×h×w` at feature resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    /// Per-class center heatmap after the sigmoid, in (0, 1).
    pub heatmap: Tensor,
    /// The same map before the sigmoid.
    pub heatmap_logits: Tensor,
    /// Box width and height in input pixels.
    pub size: Tensor,
    /// Sub-cell center offset (x, y) in feature cells.
    pub offset: Tensor,
}

/// Center heatmap head on the fused map; size and offset heads on the target frame's map.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    pub heat1: Conv,
    pub heat2: Conv,
    pub size1: Conv,
    pub size2: Conv,
    pub off1: Conv,
    pub off2: Conv,
}

#[derive(Debug)]
pub struct HeadsCtx {
    heat1: ConvReluCtx,
    heat2: ConvCtx,
    size1: ConvReluCtx,
    size2: ConvCtx,
    off1: ConvReluCtx,
    off2: ConvCtx,
    heatmap: Tensor,
    /// Inputs as seen by the heads, kept for inspection.
    pub heat_input: Tensor,
    pub target_input: Tensor,
}

impl Heads {
    pub fn new(channels: usize, classes: usize, rng: &mut Rng) -> Self {
        let mut heat2 = Conv::he("heads.heat2", channels, classes, 1, 1, rng);
        heat2.set_bias(HEATMAP_PRIOR_BIAS);
        let mut size2 = Conv::he("heads.size2", channels, 2, 1, 1, rng);
        size2.set_bias(SIZE_PRIOR_PX);
        Self {
            heat1: Conv::he("heads.heat1", channels, channels, 3, 1, rng),
            heat2,
            size1: Conv::he("heads.size1", channels, channels, 3, 1, rng),
            size2,
            off1: Conv::he("heads.off1", channels, channels, 3, 1, rng),
            off2: Conv::he("heads.off2", channels, 2, 1, 1, rng),
        }
    }

    pub fn infer(&self, fused: &Tensor, target: &Tensor) -> Result<HeadOutputs> {
        fused.ensure_same_shape(target, "heads_forward")?;
        let logits = self.heat2.infer(&conv_relu_infer(&self.heat1, fused)?)?;
        Ok(HeadOutputs {
            heatmap: tensor::sigmoid(&logits)?,
            heatmap_logits: logits,
            size: self.size2.infer(&conv_relu_infer(&self.size1, target)?)?,
            offset: self.off2.infer(&conv_relu_infer(&self.off1, target)?)?,
        })
    }

    pub fn forward(&self, fused: &Tensor, target: &Tensor) -> Result<(HeadOutputs, HeadsCtx)> {
        fused.ensure_same_shape(target, "heads_forward")?;
        let (h, heat1) = conv_relu(&self.heat1, fused)?;
        let (logits, heat2) = self.heat2.forward(&h)?;
        let (s, size1) = conv_relu(&self.size1, target)?;
        let (size, size2) = self.size2.forward(&s)?;
        let (o, off1) = conv_relu(&self.off1, target)?;
        let (offset, off2) = self.off2.forward(&o)?;
        let heatmap = tensor::sigmoid(&logits)?;
        let out = HeadOutputs {
            heatmap: heatmap.clone(),
            heatmap_logits: logits,
            size,
            offset,
        };
        let ctx = HeadsCtx {
            heat1,
            heat2,
            size1,
            size2,
            off1,
            off2,
            heatmap,
            heat_input: fused.clone(),
            target_input: target.clone(),
        };
        Ok((out, ctx))
    }

    /// Takes gradients w.r.t. heatmap logits, size and offset; returns
    /// `(grad_fused, grad_target)`.
    pub fn backward(
        &mut self,
        ctx: &mut HeadsCtx,
        grad_logits: &Tensor,
        grad_size: &Tensor,
        grad_offset: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let g = self.heat2.backward(&mut ctx.heat2, grad_logits)?;
        let g_fused = conv_relu_backward(&mut self.heat1, &mut ctx.heat1, &g)?;
        let g = self.size2.backward(&mut ctx.size2, grad_size)?;
        let g_size = conv_relu_backward(&mut self.size1, &mut ctx.size1, &g)?;
        let g = self.off2.backward(&mut ctx.off2, grad_offset)?;
        let g_off = conv_relu_backward(&mut self.off1, &mut ctx.off1, &g)?;
        Ok((g_fused, tensor::add(&g_size, &g_off)?))
    }

    pub fn layers(&self) -> [&Conv; 6] {
        [
            &self.heat1,
            &self.heat2,
            &self.size1,
            &self.size2,
            &self.off1,
            &self.off2,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Conv; 6] {
        [
            &mut self.heat1,
            &mut self.heat2,
            &mut self.size1,
            &mut self.size2,
            &mut self.off1,
            &mut self.off2,
        ]
    }
}

impl HeadsCtx {
    pub fn heatmap(&self) -> &Tensor {
        &self.heatmap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shapes_and_bounds() {
        let mut rng = Rng::new(0);
        let heads = Heads::new(8, 2, &mut rng);
        let f = Tensor::randn(&[1, 8, 6, 6], 1.0, &mut rng);
        let out = heads.infer(&f, &f).unwrap();
        assert_eq!(out.heatmap.shape(), &[1, 2, 6, 6]);
        assert_eq!(out.size.shape(), &[1, 2, 6, 6]);
        assert_eq!(out.offset.shape(), &[1, 2, 6, 6]);
        assert!(out.heatmap.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let (fwd, _) = heads.forward(&f, &f).unwrap();
        assert_eq!(fwd, out);
    }

    #[test]
    fn heads_read_the_right_inputs() {
        let mut rng = Rng::new(1);
        let heads = Heads::new(4, 1, &mut rng);
        let a = Tensor::randn(&[1, 4, 5, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[1, 4, 5, 5], 1.0, &mut rng);
        let ab = heads.infer(&a, &b).unwrap();
        let bb = heads.infer(&b, &b).unwrap();
        assert!(!ab.heatmap.bit_eq(&bb.heatmap));
        assert!(ab.size.bit_eq(&bb.size));
        assert!(ab.offset.bit_eq(&bb.offset));
        assert!(heads.infer(&a, &Tensor::zeros(&[1, 4, 5, 4])).is_err());
    }
}
