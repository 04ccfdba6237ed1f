//! Valid (unpadded, stride 1) 2-D cross-correlation.
//!
//! Both passes lower the convolution to matrix products over an im2col
//! buffer: with `R = C_in * kH * kW` patch rows and `P = OH * OW` output
//! positions,
//!
//! ```text
//! out        [C_out, P] = W [C_out, R] * cols [R, P] + b
//! grad_W     [C_out, R] = grad_out [C_out, P] * cols^T
//! grad_cols  [R, P]     = W^T * grad_out          (then col2im)
//! ```

use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn geometry(op: &'static str, input: &Tensor, kernels: &Tensor, bias: Option<&Tensor>) -> Result<ConvGeometry> {
    input.expect_rank(op, 3)?;
    kernels.expect_rank(op, 4)?;
    let &[c_in, h, w] = input.shape() else { unreachable!() };
    let &[c_out, kc, kh, kw] = kernels.shape() else { unreachable!() };
    if kc != c_in {
        return Err(TensorError::mismatch(
            op,
            format!("kernel input channels = {c_in}"),
            format!("{kc} (kernels {:?}, input {:?})", kernels.shape(), input.shape()),
        ));
    }
    if h < kh || w < kw {
        return Err(TensorError::mismatch(
            op,
            format!("input spatial dims >= kernel {kh}x{kw}"),
            format!("{h}x{w}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(TensorError::mismatch(op, format!("bias [{c_out}]"), format!("{:?}", b.shape())));
        }
    }
    Ok(ConvGeometry {
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh: h - kh + 1,
        ow: w - kw + 1,
    })
}

fn im2col(g: &ConvGeometry, input: &[f32]) -> Vec<f32> {
    let p = g.positions();
    let mut cols = vec![0.0f32; g.rows() * p];
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for y in 0..g.oh {
                    let src = &plane[(y + ki) * g.w + kj..(y + ki) * g.w + kj + g.ow];
                    dst[y * g.ow..(y + 1) * g.ow].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(g: &ConvGeometry, cols: &[f32]) -> Vec<f32> {
    let p = g.positions();
    let mut out = vec![0.0f32; g.c_in * g.h * g.w];
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * p..(row + 1) * p];
                for y in 0..g.oh {
                    let dst = &mut plane[(y + ki) * g.w + kj..(y + ki) * g.w + kj + g.ow];
                    for (d, s) in dst.iter_mut().zip(&src[y * g.ow..(y + 1) * g.ow]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
struct Strides(isize, isize);

/// `c[m, n] = a[m, k] * b[k, n]` (overwrites `c`).
fn gemm(m: usize, k: usize, n: usize, a: &[f32], sa: Strides, b: &[f32], sb: Strides, c: &mut [f32]) {
    let span = |rows: usize, cols: usize, s: Strides| (rows - 1) as isize * s.0 + (cols - 1) as isize * s.1 + 1;
    assert!(span(m, k, sa) as usize <= a.len());
    assert!(span(k, n, sb) as usize <= b.len());
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `input [C_in, H, W]`, `kernels [C_out, C_in, kH, kW]`, `bias [C_out]`
/// -> `[C_out, H-kH+1, W-kW+1]`.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = geometry("conv2d_forward", input, kernels, Some(bias))?;
    let cols = im2col(&g, input.data());
    let (r, p) = (g.rows(), g.positions());
    let mut out = vec![0.0f32; g.c_out * p];
    gemm(
        g.c_out,
        r,
        p,
        kernels.data(),
        Strides(r as isize, 1),
        &cols,
        Strides(p as isize, 1),
        &mut out,
    );
    for (row, &b) in out.chunks_exact_mut(p).zip(bias.data()) {
        row.iter_mut().for_each(|x| *x += b);
    }
    Tensor::new(&[g.c_out, g.oh, g.ow], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(input: &Tensor, kernels: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    const OP: &str = "conv2d_backward";
    let g = geometry(OP, input, kernels, None)?;
    if grad_out.shape() != [g.c_out, g.oh, g.ow] {
        return Err(TensorError::mismatch(
            OP,
            format!("grad_out {:?}", [g.c_out, g.oh, g.ow]),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let cols = im2col(&g, input.data());
    let (r, p) = (g.rows(), g.positions());
    let go = grad_out.data();

    let mut grad_k = vec![0.0f32; g.c_out * r];
    gemm(g.c_out, p, r, go, Strides(p as isize, 1), &cols, Strides(1, p as isize), &mut grad_k);

    let mut grad_cols = vec![0.0f32; r * p];
    gemm(r, g.c_out, p, kernels.data(), Strides(1, r as isize), go, Strides(p as isize, 1), &mut grad_cols);
    let grad_in = col2im(&g, &grad_cols);

    let grad_b: Vec<f32> = go.chunks_exact(p).map(|row| row.iter().sum()).collect();

    Ok(ConvGrads {
        input: Tensor::new(input.shape(), grad_in)?,
        kernels: Tensor::new(kernels.shape(), grad_k)?,
        bias: Tensor::new(&[g.c_out], grad_b)?,
    })
}
