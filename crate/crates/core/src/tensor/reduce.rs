use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Which input slice each reduced element came from, for routing gradients.
#[derive(Debug, Clone)]
pub struct ArgIndex {
    input_shape: Vec<usize>,
    axis: usize,
    index: Vec<usize>,
}

impl ArgIndex {
    /// Position along the reduced axis selected for output element `i`.
    pub fn selected(&self, i: usize) -> usize {
        self.index[i]
    }
}

/// `(outer, axis_len, inner)` view of a tensor around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize, Vec<usize>)> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    Ok((outer, shape[axis], inner, out_shape))
}

/// Stacks equal-shape tensors along a new leading axis.
pub fn stack(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs.first().ok_or(Error::EmptyAxis)?;
    let mut data = Vec::with_capacity(first.len() * xs.len());
    for x in xs {
        first.ensure_same_shape(x, "stack")?;
        data.extend_from_slice(x.data());
    }
    let mut shape = vec![xs.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(&shape, data)
}

pub fn sum(x: &Tensor) -> f32 {
    x.data().iter().map(|&v| v as f64).sum::<f64>() as f32
}

pub fn mean_over_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner, out_shape) = split_axis(x.shape(), axis)?;
    let mut out = vec![0.0f32; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let src = &x.data()[(o * len + k) * inner..(o * len + k + 1) * inner];
            out[o * inner..(o + 1) * inner]
                .iter_mut()
                .zip(src)
                .for_each(|(a, &b)| *a += b);
        }
    }
    let inv = 1.0 / len as f32;
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(&out_shape, out)
}

pub fn mean_over_axis_backward(
    grad: &Tensor,
    input_shape: &[usize],
    axis: usize,
) -> Result<Tensor> {
    let (outer, len, inner, out_shape) = split_axis(input_shape, axis)?;
    if grad.shape() != out_shape.as_slice() {
        return Err(shape_err(
            "mean_over_axis_backward",
            format!("{:?} vs {:?}", grad.shape(), out_shape),
        ));
    }
    let inv = 1.0 / len as f32;
    let mut gx = vec![0.0f32; outer * len * inner];
    for o in 0..outer {
        for k in 0..len {
            let dst = &mut gx[(o * len + k) * inner..(o * len + k + 1) * inner];
            let src = &grad.data()[o * inner..(o + 1) * inner];
            dst.iter_mut().zip(src).for_each(|(a, &b)| *a = b * inv);
        }
    }
    Tensor::new(input_shape, gx)
}

fn select_over_axis(
    x: &Tensor,
    axis: usize,
    pick: impl Fn(&mut Vec<(f32, usize)>) -> usize,
) -> Result<(Tensor, ArgIndex)> {
    let (outer, len, inner, out_shape) = split_axis(x.shape(), axis)?;
    let mut out = Vec::with_capacity(outer * inner);
    let mut index = Vec::with_capacity(outer * inner);
    let mut column = Vec::with_capacity(len);
    for o in 0..outer {
        for i in 0..inner {
            column.clear();
            column.extend((0..len).map(|k| (x.data()[(o * len + k) * inner + i], k)));
            let k = pick(&mut column);
            out.push(x.data()[(o * len + k) * inner + i]);
            index.push(k);
        }
    }
    Ok((
        Tensor::new(&out_shape, out)?,
        ArgIndex {
            input_shape: x.shape().to_vec(),
            axis,
            index,
        },
    ))
}

/// Maximum along `axis`; ties resolve to the lowest index.
pub fn max_over_axis(x: &Tensor, axis: usize) -> Result<(Tensor, ArgIndex)> {
    select_over_axis(x, axis, |col| {
        let mut best = 0;
        for &(v, k) in col.iter() {
            if v > col[best].0 {
                best = k;
            }
        }
        best
    })
}

/// Lower-middle order statistic along `axis`; the gradient goes to the lowest
/// index holding that value.
pub fn median_over_axis(x: &Tensor, axis: usize) -> Result<(Tensor, ArgIndex)> {
    select_over_axis(x, axis, |col| {
        let original: Vec<f32> = col.iter().map(|&(v, _)| v).collect();
        col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let value = col[(col.len() - 1) / 2].0;
        original
            .iter()
            .position(|&v| v == value)
            .unwrap_or(col[(col.len() - 1) / 2].1)
    })
}

/// Scatters `grad` back to the positions recorded in `arg`.
pub fn select_backward(arg: &ArgIndex, grad: &Tensor) -> Result<Tensor> {
    let (outer, len, inner, out_shape) = split_axis(&arg.input_shape, arg.axis)?;
    if grad.shape() != out_shape.as_slice() {
        return Err(shape_err(
            "select_backward",
            format!("{:?} vs {:?}", grad.shape(), out_shape),
        ));
    }
    let mut gx = vec![0.0f32; outer * len * inner];
    for o in 0..outer {
        for i in 0..inner {
            let j = o * inner + i;
            gx[(o * len + arg.index[j]) * inner + i] = grad.data()[j];
        }
    }
    Tensor::new(&arg.input_shape, gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f32]) -> Tensor {
        Tensor::new(&[x.len()], x.to_vec()).unwrap()
    }

    #[test]
    fn mean_of_stacked_pair() {
        let s = stack(&[&v(&[1.0, 3.0]), &v(&[3.0, 5.0])]).unwrap();
        assert_eq!(mean_over_axis(&s, 0).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn median_and_max_small_cases() {
        let (m, _) = median_over_axis(&v(&[1.0, 9.0, 2.0]), 0).unwrap();
        assert_eq!(m.data(), &[2.0]);
        let (m, _) = max_over_axis(&v(&[-1.0, 0.0, -5.0]), 0).unwrap();
        assert_eq!(m.data(), &[0.0]);
        assert_eq!(m.shape(), &[] as &[usize]);
    }

    #[test]
    fn median_even_length_takes_lower_middle() {
        let (m, _) = median_over_axis(&v(&[4.0, 1.0, 3.0, 2.0]), 0).unwrap();
        assert_eq!(m.data(), &[2.0]);
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let (_, arg) = max_over_axis(&v(&[1.0, 7.0, 7.0]), 0).unwrap();
        assert_eq!(arg.selected(0), 1);
        let (_, arg) = median_over_axis(&v(&[5.0, 2.0, 5.0, 5.0, 1.0]), 0).unwrap();
        assert_eq!(arg.selected(0), 0);
        let g = select_backward(&arg, &Tensor::scalar(3.0)).unwrap();
        assert_eq!(g.data(), &[3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn inner_axis_reduction() {
        let x = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(mean_over_axis(&x, 1).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(mean_over_axis(&x, 0).unwrap().data(), &[2.5, 3.5, 4.5]);
        let (m, _) = max_over_axis(&x, 1).unwrap();
        assert_eq!(m.data(), &[3.0, 6.0]);
        let g = mean_over_axis_backward(&Tensor::ones(&[2]), &[2, 3], 1).unwrap();
        assert!(g.data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-7));
    }

    #[test]
    fn bad_axis_and_empty_stack() {
        assert!(matches!(
            mean_over_axis(&v(&[1.0]), 1),
            Err(Error::Axis { .. })
        ));
        assert!(matches!(stack(&[]), Err(Error::EmptyAxis)));
    }
}
