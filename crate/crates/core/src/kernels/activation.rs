use crate::rng::Rng;
use crate::tensor::{Result, Tensor, TensorError};

/// `max(0, x)` elementwise.
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
    out
}

/// Passes the gradient where `input > 0`; the subgradient at 0 is 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if !input.same_shape(grad_out) {
        return Err(TensorError::mismatch(
            "relu_backward",
            format!("{:?}", input.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut g = grad_out.clone();
    for (g, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(g)
}

/// Which elements survived a dropout pass and the scale applied to them.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub scale: f32,
}

impl DropoutMask {
    pub fn all_keep(len: usize) -> Self {
        DropoutMask {
            keep: vec![true; len],
            scale: 1.0,
        }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Inverted dropout. In training each element survives with probability
/// `1 - rate` and is scaled by `1 / (1 - rate)`; at inference this is the
/// identity and draws nothing from `rng`.
pub fn dropout(input: &Tensor, rate: f32, rng: &mut Rng, training: bool) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument {
            op: "dropout",
            msg: format!("rate must lie in [0, 1), got {rate}"),
        });
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), DropoutMask::all_keep(input.len())));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut out = input.clone();
    let mut keep = Vec::with_capacity(input.len());
    for x in out.data_mut() {
        let k = rng.uniform_f32() >= rate;
        *x = if k { *x * scale } else { 0.0 };
        keep.push(k);
    }
    Ok((out, DropoutMask { keep, scale }))
}

pub fn dropout_backward(mask: &DropoutMask, grad_out: &Tensor) -> Result<Tensor> {
    if mask.keep.len() != grad_out.len() {
        return Err(TensorError::mismatch(
            "dropout_backward",
            format!("{} mask entries", mask.keep.len()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut g = grad_out.clone();
    for (g, &k) in g.data_mut().iter_mut().zip(&mask.keep) {
        *g = if k { *g * mask.scale } else { 0.0 };
    }
    Ok(g)
}
