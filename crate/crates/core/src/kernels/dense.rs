use crate::tensor::{Result, Tensor, TensorError};

fn check(op: &'static str, input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    weights.expect_rank(op, 2)?;
    let &[m, n] = weights.shape() else { unreachable!() };
    if input.shape() != [n] {
        return Err(TensorError::mismatch(op, format!("input [{n}]"), format!("{:?}", input.shape())));
    }
    Ok((m, n))
}

/// `y = W x + b` with `W [M, N]`, `x [N]`, `b [M]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "dense_forward";
    let (m, n) = check(OP, input, weights)?;
    if bias.shape() != [m] {
        return Err(TensorError::mismatch(OP, format!("bias [{m}]"), format!("{:?}", bias.shape())));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f32>() + b)
        .collect();
    Tensor::new(&[m], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    const OP: &str = "dense_backward";
    let (m, n) = check(OP, input, weights)?;
    if grad_out.shape() != [m] {
        return Err(TensorError::mismatch(OP, format!("grad_out [{m}]"), format!("{:?}", grad_out.shape())));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![0.0f32; n];
    let mut gw = Vec::with_capacity(m * n);
    for (row, &gi) in weights.data().chunks_exact(n).zip(g) {
        for (acc, w) in gx.iter_mut().zip(row) {
            *acc += w * gi;
        }
        gw.extend(x.iter().map(|xj| gi * xj));
    }
    Ok(DenseGrads {
        input: Tensor::new(&[n], gx)?,
        weights: Tensor::new(&[m, n], gw)?,
        bias: grad_out.clone(),
    })
}
