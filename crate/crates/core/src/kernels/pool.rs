//! Max pooling: non-overlapping 2x2 windows and a global (per-channel) max.
//!
//! Forward passes record the flat input index of each winner so the
//! backward pass is a scatter. Ties go to the first position in row-major
//! window order.

use crate::tensor::{Result, Tensor, TensorError};

/// Winner positions from a pooling forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    /// Flat index into the input for each output element.
    pub indices: Vec<usize>,
}

pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    const OP: &str = "maxpool2x2_forward";
    input.expect_rank(OP, 3)?;
    let &[c, h, w] = input.shape() else { unreachable!() };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: format!("spatial dims must be even, got {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            let top = base + 2 * y * w;
            let bottom = top + w;
            for xo in 0..ow {
                let window = [top + 2 * xo, top + 2 * xo + 1, bottom + 2 * xo, bottom + 2 * xo + 1];
                let mut best = window[0];
                for &i in &window[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                indices.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[c, oh, ow], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            indices,
        },
    ))
}

/// Routes each output gradient to its recorded winner; every other input
/// position gets exactly zero.
pub fn maxpool_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    const OP: &str = "maxpool_backward";
    if grad_out.len() != indices.indices.len() {
        return Err(TensorError::mismatch(
            OP,
            format!("{} output gradients", indices.indices.len()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_in = Tensor::zeros(&indices.input_shape);
    let n = grad_in.len();
    let gi = grad_in.data_mut();
    for (&idx, &g) in indices.indices.iter().zip(grad_out.data()) {
        if idx >= n {
            return Err(TensorError::Internal {
                op: OP,
                msg: format!("winner index {idx} outside input of {n} elements"),
            });
        }
        gi[idx] += g;
    }
    Ok(grad_in)
}

/// `[C, H, W] -> [C]`, the max of each channel plane.
pub fn global_maxpool_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    input.expect_rank("global_maxpool_forward", 3)?;
    let c = input.shape()[0];
    let plane = input.len() / c;
    let mut out = Vec::with_capacity(c);
    let mut indices = Vec::with_capacity(c);
    for (ch, values) in input.data().chunks_exact(plane).enumerate() {
        let best = crate::tensor::argmax(values);
        out.push(values[best]);
        indices.push(ch * plane + best);
    }
    Ok((
        Tensor::new(&[c], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            indices,
        },
    ))
}
