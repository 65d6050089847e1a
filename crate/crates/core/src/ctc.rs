//! Connectionist temporal classification: loss, gradient and greedy decoding.
//!
//! Logits are `T × (V + 1)` with column 0 the blank; labels are `1..=V`.
//! The forward/backward recursions run in `f64` log space.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layer::log_softmax_rows;
use crate::math::{self, log_add};
use crate::tensor::Tensor;

pub const BLANK: usize = 0;

#[derive(Debug, Clone)]
pub struct CtcLoss {
    /// `−log p(target | logits)`.
    pub nll: f64,
    /// `∂ nll / ∂ logits`.
    pub grad: Tensor,
}

/// Minimum number of frames able to carry `target`: one per label plus a
/// separating blank between equal neighbours.
pub fn required_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn validate(logits: &Tensor, target: &[u32]) -> Result<(usize, usize)> {
    let (t_len, classes) = logits.expect_rank2("ctc_loss")?;
    if classes < 2 {
        return Err(Error::shape("ctc_loss", "need a blank plus at least one label column"));
    }
    if let Some(&bad) = target.iter().find(|&&l| l == 0 || l as usize >= classes) {
        return Err(Error::invalid(alloc::format!("label {bad} outside 1..={}", classes - 1)));
    }
    let required = required_frames(target);
    if t_len == 0 || t_len < required {
        return Err(Error::InfeasibleTarget { labels: target.len(), required_frames: required.max(1), frames: t_len });
    }
    logits.ensure_finite("ctc logits")?;
    Ok((t_len, classes))
}

/// Negative log-likelihood of `target` and its gradient with respect to the logits.
pub fn ctc_loss(logits: &Tensor, target: &[u32]) -> Result<CtcLoss> {
    let (t_len, classes) = validate(logits, target)?;
    let lp = log_softmax_rows(logits.data(), classes);
    let lp = |t: usize, k: usize| lp[t * classes + k];

    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len).map(|s| if s % 2 == 0 { BLANK } else { target[s / 2] as usize }).collect();
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == neg { neg } else { a + lp(t, ext[s]) };
        }
    }
    let last = &alpha[(t_len - 1) * s_len..];
    let log_p = if s_len > 1 { log_add(last[s_len - 1], last[s_len - 2]) } else { last[0] };
    if !log_p.is_finite() {
        return Err(Error::NonFinite { what: "ctc likelihood", step: None });
    }

    // beta[t][s]: log-probability of finishing from state s after frame t.
    let mut beta = vec![neg; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp(t + 1, ext[s2]);
            let mut b = next(s);
            if s + 1 < s_len {
                b = log_add(b, next(s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, next(s + 2));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut grad = Vec::with_capacity(t_len * classes);
    let mut occupancy = vec![0.0f64; classes];
    for t in 0..t_len {
        occupancy.iter_mut().for_each(|o| *o = 0.0);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            if v != neg {
                occupancy[ext[s]] += math::exp(v - log_p);
            }
        }
        grad.extend((0..classes).map(|k| (math::exp(lp(t, k)) - occupancy[k]) as f32));
    }
    Ok(CtcLoss { nll: -log_p, grad: Tensor::matrix(t_len, classes, grad)? })
}

/// Loss only; cheaper than [`ctc_loss`] when no gradient is needed.
pub fn ctc_nll(logits: &Tensor, target: &[u32]) -> Result<f64> {
    let (t_len, classes) = validate(logits, target)?;
    let lp = log_softmax_rows(logits.data(), classes);
    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len).map(|s| if s % 2 == 0 { BLANK } else { target[s / 2] as usize }).collect();
    let neg = f64::NEG_INFINITY;
    let mut prev = vec![neg; s_len];
    prev[0] = lp[ext[0]];
    if s_len > 1 {
        prev[1] = lp[ext[1]];
    }
    let mut cur = vec![neg; s_len];
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = if a == neg { neg } else { a + lp[t * classes + ext[s]] };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    let log_p = if s_len > 1 { log_add(prev[s_len - 1], prev[s_len - 2]) } else { prev[0] };
    if !log_p.is_finite() {
        return Err(Error::NonFinite { what: "ctc likelihood", step: None });
    }
    Ok(-log_p)
}

/// Per-frame argmax (lowest index on ties), merge repeats, drop blanks.
pub fn greedy_decode(logits: &Tensor) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in logits.iter_rows() {
        let best = row
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
            .0;
        if Some(best) != prev && best != BLANK {
            out.push(best as u32);
        }
        prev = Some(best);
    }
    out
}
