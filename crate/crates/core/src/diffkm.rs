//! Differentiable k-means bottleneck.
//!
//! Soft assignment `s[t, j] = softmax_j(−‖h_t − m_j‖² / τ)` defines the
//! soft embedding `e_t = Σ_j s[t, j] m_j`. In [`Emission::Hard`] mode the
//! layer outputs the nearest centroid `m_{token_t}` but differentiates as if
//! it had output `e_t` (straight-through), so gradients reach both the
//! features `H` and the codebook `M` while downstream layers only ever see
//! codebook vectors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kmeans::{squared_distance, Codebook};
use crate::layer::{Backward, Layer};
use crate::math;
use crate::tensor::Tensor;

/// Row-stochastic `T × K` weights at temperature `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    pub weights: Tensor,
    pub tau: f32,
}

impl SoftAssignment {
    /// Highest-weight centroid per frame, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.weights
            .iter_rows()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |b, (j, &w)| if w > b.1 { (j, w) } else { b })
                    .0
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Emission {
    /// Emit the nearest centroid (straight-through gradient).
    #[default]
    Hard,
    /// Emit the soft embedding itself; forward and backward agree exactly.
    Soft,
}

#[derive(Debug, Clone)]
pub struct DiffKmOutput {
    pub tokens: Vec<usize>,
    pub embeddings: Tensor,
    pub soft: SoftAssignment,
}

/// Saved forward state for [`diffkm_backward`].
#[derive(Debug, Clone)]
pub struct DiffKmContext {
    features: Tensor,
    soft: Tensor,
    tau: f32,
}

fn check_tau(tau: f32) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(alloc::format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Soft assignment weights of every row of `features`.
pub fn soft_assign(features: &Tensor, codebook: &Codebook, tau: f32) -> Result<SoftAssignment> {
    check_tau(tau)?;
    let (t_len, d) = features.expect_rank2("diffkm_forward")?;
    if d != codebook.dim() {
        return Err(Error::shape(
            "diffkm_forward",
            alloc::format!("features have {d} dims, codebook {}", codebook.dim()),
        ));
    }
    let k = codebook.k();
    let inv_tau = 1.0 / tau as f64;
    let mut weights = Vec::with_capacity(t_len * k);
    let mut logits = vec![0.0f64; k];
    for h in features.iter_rows() {
        for (j, l) in logits.iter_mut().enumerate() {
            *l = -(squared_distance(h, codebook.centroid(j)) as f64) * inv_tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = math::exp(*l - max);
            sum += *l;
        }
        weights.extend(logits.iter().map(|&e| (e / sum) as f32));
    }
    Ok(SoftAssignment { weights: Tensor::matrix(t_len, k, weights)?, tau })
}

/// Tokenizes `features` and builds the emitted embeddings.
pub fn diffkm_forward(
    features: &Tensor,
    codebook: &Codebook,
    tau: f32,
    emission: Emission,
) -> Result<(DiffKmOutput, DiffKmContext)> {
    let soft = soft_assign(features, codebook, tau)?;
    let tokens: Vec<usize> = features.iter_rows().map(|h| codebook.assign(h)).collect();
    let d = codebook.dim();
    let mut emb = Vec::with_capacity(tokens.len() * d);
    match emission {
        Emission::Hard => {
            for &tok in &tokens {
                emb.extend_from_slice(codebook.centroid(tok));
            }
        }
        Emission::Soft => {
            let mut acc = vec![0.0f64; d];
            for row in soft.weights.iter_rows() {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (j, &w) in row.iter().enumerate() {
                    for (a, &m) in acc.iter_mut().zip(codebook.centroid(j)) {
                        *a += w as f64 * m as f64;
                    }
                }
                emb.extend(acc.iter().map(|&a| a as f32));
            }
        }
    }
    let embeddings = Tensor::matrix(tokens.len(), d, emb)?;
    let ctx = DiffKmContext { features: features.clone(), soft: soft.weights.clone(), tau };
    Ok((DiffKmOutput { tokens, embeddings, soft }, ctx))
}

/// Gradients of the soft embedding path with respect to `H` and `M`.
pub fn diffkm_backward(ctx: &DiffKmContext, codebook: &Codebook, grad_embeddings: &Tensor) -> Result<(Tensor, Tensor)> {
    let (t_len, d) = (ctx.features.rows(), ctx.features.cols());
    let k = codebook.k();
    grad_embeddings.expect_shape("diffkm_backward", &[t_len, d])?;
    let scale = 2.0 / ctx.tau as f64;
    let mut grad_h = vec![0.0f64; t_len * d];
    let mut grad_m = vec![0.0f64; k * d];
    let mut ds = vec![0.0f64; k];
    for t in 0..t_len {
        let g = grad_embeddings.row(t);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let h = ctx.features.row(t);
        let s = ctx.soft.row(t);
        let mut mean = 0.0;
        for j in 0..k {
            let dot: f64 = g.iter().zip(codebook.centroid(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
            ds[j] = dot;
            mean += s[j] as f64 * dot;
        }
        let gh = &mut grad_h[t * d..(t + 1) * d];
        for j in 0..k {
            let sj = s[j] as f64;
            let dl = sj * (ds[j] - mean) * scale;
            let m = codebook.centroid(j);
            let gm = &mut grad_m[j * d..(j + 1) * d];
            for c in 0..d {
                let diff = h[c] as f64 - m[c] as f64;
                gm[c] += sj * g[c] as f64 + dl * diff;
                gh[c] -= dl * diff;
            }
        }
    }
    Ok((
        Tensor::matrix(t_len, d, grad_h.into_iter().map(|v| v as f32).collect())?,
        Tensor::matrix(k, d, grad_m.into_iter().map(|v| v as f32).collect())?,
    ))
}

/// DiffKM as a [`Layer`] whose single parameter is the centroid stack.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffKm {
    pub codebook: Codebook,
    pub tau: f32,
    pub emission: Emission,
}

impl Layer for DiffKm {
    type Context = DiffKmContext;

    fn forward(&self, input: &Tensor) -> Result<(Tensor, DiffKmContext)> {
        let (out, ctx) = diffkm_forward(input, &self.codebook, self.tau, self.emission)?;
        Ok((out.embeddings, ctx))
    }

    fn backward(&self, ctx: &DiffKmContext, grad_output: &Tensor) -> Result<Backward> {
        let (gh, gm) = diffkm_backward(ctx, &self.codebook, grad_output)?;
        Ok(Backward { input: gh, params: vec![gm] })
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![self.codebook.centroids()]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![self.codebook.centroids_mut()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::rng::Rng;

    fn cb(rows: &[&[f32]]) -> Codebook {
        let d = rows[0].len();
        Codebook::new(Tensor::matrix(rows.len(), d, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap())
            .unwrap()
    }

    #[test]
    fn single_centroid_is_certain() {
        let codebook = cb(&[&[0.5, -1.0]]);
        let h = Tensor::matrix(3, 2, vec![1.0, 2.0, -3.0, 0.0, 0.1, 0.1]).unwrap();
        let (out, _) = diffkm_forward(&h, &codebook, 1.0, Emission::Hard).unwrap();
        assert!(out.soft.weights.data().iter().all(|&w| w == 1.0));
        for row in out.embeddings.iter_rows() {
            assert_eq!(row, codebook.centroid(0));
        }
        assert_eq!(out.tokens, vec![0, 0, 0]);
    }

    #[test]
    fn equidistant_frame_splits_evenly() {
        let codebook = cb(&[&[-1.0, 0.0], &[1.0, 0.0]]);
        let h = Tensor::matrix(1, 2, vec![0.0, 0.7]).unwrap();
        let (out, _) = diffkm_forward(&h, &codebook, 1.0, Emission::Hard).unwrap();
        assert_eq!(out.soft.weights.data(), &[0.5, 0.5]);
        assert_eq!(out.tokens, vec![0]);
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let codebook = cb(&[&[0.0]]);
        let h = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        for tau in [0.0, -1.0, f32::NAN] {
            assert!(matches!(diffkm_forward(&h, &codebook, tau, Emission::Hard), Err(Error::InvalidInput(_))));
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let codebook = cb(&[&[0.0, 1.0], &[2.0, -1.0]]);
        let h = Tensor::matrix(2, 2, vec![0.3, 0.2, 1.0, 1.0]).unwrap();
        let (_, ctx) = diffkm_forward(&h, &codebook, 1.0, Emission::Hard).unwrap();
        let (gh, gm) = diffkm_backward(&ctx, &codebook, &Tensor::zeros(&[2, 2])).unwrap();
        assert!(gh.data().iter().chain(gm.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn soft_path_gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        for _ in 0..10 {
            let centroids = Tensor::from_fn(&[4, 3], |_| rng.uniform(-1.5, 1.5) as f32);
            let mut layer = DiffKm { codebook: Codebook::new(centroids).unwrap(), tau: 1.0, emission: Emission::Soft };
            let h = Tensor::from_fn(&[5, 3], |_| rng.uniform(-1.5, 1.5) as f32);
            let r = check_gradients(&mut layer, &h, 1e-3, &mut rng).unwrap();
            assert!(r.max_relative_error <= 1e-3, "{r:?}");
            assert_eq!(r.nonsmooth_skipped, 0);
        }
    }
}
