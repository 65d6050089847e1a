//! The layer contract and the concrete layers used by the model.
//!
//! A layer's `forward` returns its output plus whatever it needs to run
//! `backward` later; `backward` turns an output gradient into the input
//! gradient and one gradient per parameter (same order and shapes as
//! [`Layer::params`]).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};

/// Gradients produced by [`Layer::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    pub input: Tensor,
    pub params: Vec<Tensor>,
}

pub trait Layer {
    type Context;

    fn forward(&self, input: &Tensor) -> Result<(Tensor, Self::Context)>;

    fn backward(&self, ctx: &Self::Context, grad_output: &Tensor) -> Result<Backward>;

    fn params(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }
}

/// Passes its input through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Layer for Identity {
    type Context = ();

    fn forward(&self, input: &Tensor) -> Result<(Tensor, ())> {
        Ok((input.clone(), ()))
    }

    fn backward(&self, _ctx: &(), grad_output: &Tensor) -> Result<Backward> {
        Ok(Backward { input: grad_output.clone(), params: Vec::new() })
    }
}

/// `out = input · W + b` with `W: [in × out]`, `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (_, d_out) = weight.expect_rank2("Affine::new")?;
        bias.expect_shape("Affine::new", &[d_out])?;
        Ok(Affine { weight, bias })
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Affine { weight: Tensor::zeros(&[d_in, d_out]), bias: Tensor::zeros(&[d_out]) }
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub fn random(d_in: usize, d_out: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = gain * math::sqrt(2.0 / d_in as f64);
        let weight = Tensor::from_fn(&[d_in, d_out], |_| (std * rng.normal()) as f32);
        Affine { weight, bias: Tensor::zeros(&[d_out]) }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }
}

impl Layer for Affine {
    type Context = Tensor;

    fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, d_in) = input.expect_rank2("affine_layer")?;
        if d_in != self.d_in() {
            return Err(Error::shape(
                "affine_layer",
                alloc::format!("input width {d_in} but weight expects {}", self.d_in()),
            ));
        }
        let d_out = self.d_out();
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(self.bias.data());
        }
        matmul(input.data(), self.weight.data(), n, d_in, d_out, &mut out);
        Ok((Tensor::matrix(n, d_out, out)?, input.clone()))
    }

    fn backward(&self, input: &Tensor, grad_output: &Tensor) -> Result<Backward> {
        let n = input.rows();
        let (d_in, d_out) = (self.d_in(), self.d_out());
        grad_output.expect_shape("affine_layer backward", &[n, d_out])?;
        let g = grad_output.data();
        let x = input.data();

        // grad_in = g · Wᵀ; the transpose keeps the inner loop contiguous.
        let w = self.weight.data();
        let mut w_t = vec![0.0f32; d_out * d_in];
        for i in 0..d_in {
            for k in 0..d_out {
                w_t[k * d_in + i] = w[i * d_out + k];
            }
        }
        let mut grad_in = vec![0.0f32; n * d_in];
        matmul(g, &w_t, n, d_out, d_in, &mut grad_in);

        let mut grad_w = vec![0.0f32; d_in * d_out];
        let mut grad_b = vec![0.0f32; d_out];
        for r in 0..n {
            let g_row = &g[r * d_out..(r + 1) * d_out];
            for (gb, gv) in grad_b.iter_mut().zip(g_row) {
                *gb += gv;
            }
            for (i, &xv) in x[r * d_in..(r + 1) * d_in].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (gw, gv) in grad_w[i * d_out..(i + 1) * d_out].iter_mut().zip(g_row) {
                    *gw += xv * gv;
                }
            }
        }
        Ok(Backward {
            input: Tensor::matrix(n, d_in, grad_in)?,
            params: vec![Tensor::matrix(d_in, d_out, grad_w)?, Tensor::new(&[d_out], grad_b)?],
        })
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Elementwise `max(0, x)`; the subgradient at 0 is 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Relu;

impl Layer for Relu {
    type Context = Tensor;

    fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = Tensor::new(
            input.shape(),
            input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        )?;
        Ok((out.clone(), out))
    }

    fn backward(&self, output: &Tensor, grad_output: &Tensor) -> Result<Backward> {
        grad_output.expect_shape("relu_layer backward", output.shape())?;
        let grad = output
            .data()
            .iter()
            .zip(grad_output.data())
            .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
            .collect();
        Ok(Backward { input: Tensor::new(output.shape(), grad)?, params: Vec::new() })
    }
}

/// Row-wise log-softmax over the last dimension.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogSoftmax;

/// Row-wise log-softmax in `f64`, returned as `f64` rows.
pub(crate) fn log_softmax_rows(input: &[f32], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(input.len());
    for row in input.chunks_exact(cols) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let sum: f64 = row.iter().map(|&v| math::exp(v as f64 - max)).sum();
        let log_z = max + math::ln(sum);
        out.extend(row.iter().map(|&v| v as f64 - log_z));
    }
    out
}

impl Layer for LogSoftmax {
    type Context = Tensor;

    fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let cols = input.cols();
        if cols == 0 {
            return Err(Error::shape("log_softmax", "need at least one column"));
        }
        let data = log_softmax_rows(input.data(), cols).into_iter().map(|v| v as f32).collect();
        let out = Tensor::new(input.shape(), data)?;
        Ok((out.clone(), out))
    }

    fn backward(&self, output: &Tensor, grad_output: &Tensor) -> Result<Backward> {
        grad_output.expect_shape("log_softmax backward", output.shape())?;
        let cols = output.cols();
        let mut grad = Vec::with_capacity(output.len());
        for (o_row, g_row) in output.data().chunks_exact(cols).zip(grad_output.data().chunks_exact(cols)) {
            let g_sum: f64 = g_row.iter().map(|&g| g as f64).sum();
            grad.extend(
                o_row.iter().zip(g_row).map(|(&o, &g)| (g as f64 - math::exp(o as f64) * g_sum) as f32),
            );
        }
        Ok(Backward { input: Tensor::new(output.shape(), grad)?, params: Vec::new() })
    }
}

/// Stacks each frame with its `radius` neighbours on both sides:
/// `[T × D] → [T × (2·radius + 1)·D]`, zero-padded at the edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextWindow {
    pub radius: usize,
}

impl Layer for ContextWindow {
    type Context = usize;

    fn forward(&self, input: &Tensor) -> Result<(Tensor, usize)> {
        let (t_len, d) = input.expect_rank2("context_window")?;
        let width = 2 * self.radius + 1;
        let mut out = vec![0.0f32; t_len * width * d];
        for t in 0..t_len {
            for w in 0..width {
                let src = t as isize + w as isize - self.radius as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let dst = (t * width + w) * d;
                out[dst..dst + d].copy_from_slice(input.row(src as usize));
            }
        }
        Ok((Tensor::matrix(t_len, width * d, out)?, d))
    }

    fn backward(&self, &d: &usize, grad_output: &Tensor) -> Result<Backward> {
        let width = 2 * self.radius + 1;
        let (t_len, cols) = grad_output.expect_rank2("context_window backward")?;
        if cols != width * d {
            return Err(Error::shape("context_window backward", "gradient width mismatch"));
        }
        let mut grad = vec![0.0f32; t_len * d];
        let g = grad_output.data();
        for t in 0..t_len {
            for w in 0..width {
                let src = t as isize + w as isize - self.radius as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let from = (t * width + w) * d;
                for (acc, v) in grad[src as usize * d..(src as usize + 1) * d].iter_mut().zip(&g[from..from + d]) {
                    *acc += v;
                }
            }
        }
        Ok(Backward { input: Tensor::matrix(t_len, d, grad)?, params: Vec::new() })
    }
}

/// Per-frame network: context window, then affine layers with ReLU between
/// them. The last affine layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameNet {
    pub window: ContextWindow,
    pub layers: Vec<Affine>,
}

#[derive(Debug, Clone)]
pub struct FrameNetContext {
    window: usize,
    affine_inputs: Vec<Tensor>,
    relu_outputs: Vec<Tensor>,
}

impl FrameNet {
    pub fn new(radius: usize, layers: Vec<Affine>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("FrameNet needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::shape("FrameNet::new", "consecutive layer widths differ"));
            }
        }
        Ok(FrameNet { window: ContextWindow { radius }, layers })
    }

    /// Random He-initialized stack `in_dim·(2r+1) → hidden… → out_dim`.
    pub fn random(
        radius: usize,
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::invalid("FrameNet needs at least one layer"));
        }
        let mut widths = vec![(2 * radius + 1) * in_dim];
        widths.extend(core::iter::repeat(hidden).take(n_layers - 1));
        widths.push(out_dim);
        let layers = widths.windows(2).map(|w| Affine::random(w[0], w[1], 1.0, rng)).collect();
        FrameNet::new(radius, layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].d_in() / (2 * self.window.radius + 1)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(Affine::d_out).unwrap_or(0)
    }

    /// Forward pass without keeping a context.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input)?.0)
    }
}

impl Layer for FrameNet {
    type Context = FrameNetContext;

    fn forward(&self, input: &Tensor) -> Result<(Tensor, FrameNetContext)> {
        let (_, d) = input.expect_rank2("frame_net")?;
        if d != self.in_dim() {
            return Err(Error::shape(
                "frame_net",
                alloc::format!("input width {d} but network expects {}", self.in_dim()),
            ));
        }
        let (mut x, window) = self.window.forward(input)?;
        let mut affine_inputs = Vec::with_capacity(self.layers.len());
        let mut relu_outputs = Vec::with_capacity(self.layers.len().saturating_sub(1));
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, saved) = layer.forward(&x)?;
            affine_inputs.push(saved);
            x = if i + 1 < self.layers.len() {
                let (r, saved) = Relu.forward(&y)?;
                relu_outputs.push(saved);
                r
            } else {
                y
            };
        }
        Ok((x, FrameNetContext { window, affine_inputs, relu_outputs }))
    }

    fn backward(&self, ctx: &FrameNetContext, grad_output: &Tensor) -> Result<Backward> {
        let mut grads = Vec::with_capacity(2 * self.layers.len());
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = Relu.backward(&ctx.relu_outputs[i], &g)?.input;
            }
            let b = self.layers[i].backward(&ctx.affine_inputs[i], &g)?;
            g = b.input;
            let mut p = b.params.into_iter();
            let (gw, gb) = (p.next().unwrap(), p.next().unwrap());
            grads.push(gb);
            grads.push(gw);
        }
        grads.reverse();
        let input = self.window.backward(&ctx.window, &g)?.input;
        Ok(Backward { input, params: grads })
    }

    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}
