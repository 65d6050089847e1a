//! Central finite-difference verification of analytic gradients.
//!
//! Objectives are evaluated as a list of `f64` terms (for a layer: the
//! output entries multiplied by a fixed random projection) and differenced
//! term by term, dividing by the step actually realised in `f32`. That keeps
//! exactly linear maps exact, so the identity layer checks to zero error.
//!
//! Coordinates where the one-sided differences disagree (a ReLU hinge or an
//! argmax switch inside the probe interval) are not differentiable there and
//! are skipped; the report counts them.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layer::Layer;
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst per-tensor relative error.
    pub max_relative_error: f64,
    /// Relative error of each checked tensor, in slot order.
    pub per_slot: Vec<f64>,
    pub checked: usize,
    pub nonsmooth_skipped: usize,
}

impl GradCheckReport {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.checked + self.nonsmooth_skipped;
        if total == 0 {
            0.0
        } else {
            self.nonsmooth_skipped as f64 / total as f64
        }
    }

    /// Combines reports of independent probes, keeping the worst error.
    pub fn merge(mut self, other: GradCheckReport) -> GradCheckReport {
        self.max_relative_error = self.max_relative_error.max(other.max_relative_error);
        if self.per_slot.len() == other.per_slot.len() {
            for (a, b) in self.per_slot.iter_mut().zip(&other.per_slot) {
                *a = a.max(*b);
            }
        }
        self.checked += other.checked;
        self.nonsmooth_skipped += other.nonsmooth_skipped;
        self
    }
}

fn check_eps(eps: f32) -> Result<()> {
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(Error::invalid(alloc::format!("finite-difference eps {eps} outside [1e-4, 1e-2]")));
    }
    Ok(())
}

fn finite_terms(terms: Vec<f64>) -> Result<Vec<f64>> {
    if terms.iter().all(|t| t.is_finite()) {
        Ok(terms)
    } else {
        Err(Error::NonFinite { what: "finite-difference objective", step: None })
    }
}

fn term_delta(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x - y).sum()
}

/// Checks `analytic[k]` against finite differences of `eval` with respect to
/// the tensors returned by `slots` (same order and shapes).
///
/// `slots` is re-invoked for every perturbation so `state` can own the
/// tensors; each perturbed value is restored before moving on.
pub fn check_with<S, F, E>(
    state: &mut S,
    analytic: &[Tensor],
    eps: f32,
    mut slots: F,
    mut eval: E,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut S) -> Vec<&mut Tensor>,
    E: FnMut(&S) -> Result<Vec<f64>>,
{
    check_eps(eps)?;
    {
        let s = slots(state);
        if s.len() != analytic.len() {
            return Err(Error::invalid("gradient count differs from slot count"));
        }
        for (p, g) in s.iter().zip(analytic) {
            g.expect_shape("check_gradients", p.shape())?;
        }
    }
    let base = finite_terms(eval(state)?)?;

    let mut per_slot = Vec::with_capacity(analytic.len());
    let mut checked = 0;
    let mut skipped = 0;
    for (slot, grad) in analytic.iter().enumerate() {
        let scale = math::sqrt(grad.squared_norm() / grad.len().max(1) as f64).max(1e-8);
        let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
        for idx in 0..grad.len() {
            let x0 = slots(state)[slot].data()[idx];
            let x_plus = assign(state, &mut slots, slot, idx, x0 + eps);
            let plus = finite_terms(eval(state)?)?;
            let x_minus = assign(state, &mut slots, slot, idx, x0 - eps);
            let minus = finite_terms(eval(state)?)?;
            assign(state, &mut slots, slot, idx, x0);

            let (hp, hm) = (x_plus as f64 - x0 as f64, x0 as f64 - x_minus as f64);
            let forward = term_delta(&plus, &base) / hp;
            let backward = term_delta(&base, &minus) / hm;
            let central = term_delta(&plus, &minus) / (x_plus as f64 - x_minus as f64);
            if (forward - backward).abs() > 1e-2 * forward.abs().max(backward.abs()).max(scale) {
                skipped += 1;
                continue;
            }
            let a = grad.data()[idx] as f64;
            diff2 += (a - central) * (a - central);
            a2 += a * a;
            n2 += central * central;
            checked += 1;
        }
        per_slot.push(math::sqrt(diff2) / math::sqrt(a2).max(math::sqrt(n2)).max(1e-8));
    }
    let max_relative_error = per_slot.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { max_relative_error, per_slot, checked, nonsmooth_skipped: skipped })
}

fn assign<S, F>(state: &mut S, slots: &mut F, slot: usize, idx: usize, value: f32) -> f32
where
    F: FnMut(&mut S) -> Vec<&mut Tensor>,
{
    slots(state)[slot].data_mut()[idx] = value;
    value
}

/// Verifies a layer's `backward` on one probe input.
///
/// The layer output is projected onto a random direction drawn from `rng`;
/// the analytic side is `backward(ctx, projection)`, compared against central
/// differences for the input and every parameter.
pub fn check_gradients<L: Layer>(layer: &mut L, probe: &Tensor, eps: f32, rng: &mut Rng) -> Result<GradCheckReport> {
    check_eps(eps)?;
    if probe.data().iter().any(|v| !(-3.0..=3.0).contains(v)) {
        return Err(Error::invalid("probe values must lie in [-3, 3]"));
    }
    let (out, ctx) = layer.forward(probe)?;
    out.ensure_finite("layer forward")?;
    let projection = Tensor::from_fn(out.shape(), |_| rng.uniform(-1.0, 1.0) as f32);
    let b = layer.backward(&ctx, &projection)?;
    let mut analytic = Vec::with_capacity(1 + b.params.len());
    analytic.push(b.input);
    analytic.extend(b.params);

    let mut state = (layer, probe.clone());
    check_with(
        &mut state,
        &analytic,
        eps,
        |(layer, input)| {
            let mut v: Vec<&mut Tensor> = Vec::new();
            v.push(input);
            v.extend(layer.params_mut());
            v
        },
        |(layer, input)| {
            let (out, _) = layer.forward(input)?;
            Ok(out.data().iter().zip(projection.data()).map(|(&o, &r)| o as f64 * r as f64).collect())
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Affine, Backward, Identity, LogSoftmax, Relu};

    fn probe(shape: &[usize], rng: &mut Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform(-3.0, 3.0) as f32)
    }

    #[test]
    fn identity_is_exact() {
        let mut rng = Rng::new(1);
        let x = probe(&[3, 4], &mut rng);
        let r = check_gradients(&mut Identity, &x, 1e-3, &mut rng).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
        assert_eq!(r.nonsmooth_skipped, 0);
    }

    #[test]
    fn affine_passes() {
        let mut rng = Rng::new(2);
        for _ in 0..10 {
            let mut layer = Affine::random(3, 2, 1.0, &mut rng);
            layer.bias = probe(&[2], &mut rng);
            let x = probe(&[4, 3], &mut rng);
            let r = check_gradients(&mut layer, &x, 1e-3, &mut rng).unwrap();
            assert!(r.max_relative_error <= 1e-3, "{r:?}");
        }
    }

    #[test]
    fn relu_and_log_softmax_pass() {
        let mut rng = Rng::new(3);
        for _ in 0..10 {
            let x = probe(&[2, 4], &mut rng);
            let r = check_gradients(&mut Relu, &x, 1e-3, &mut rng).unwrap();
            assert!(r.max_relative_error <= 1e-3, "relu {r:?}");
            let r = check_gradients(&mut LogSoftmax, &x, 1e-3, &mut rng).unwrap();
            assert!(r.max_relative_error <= 1e-3, "log_softmax {r:?}");
            assert_eq!(r.nonsmooth_skipped, 0);
        }
    }

    /// Affine layer whose backward is scaled by 1.01.
    struct Corrupted(Affine);

    impl Layer for Corrupted {
        type Context = Tensor;
        fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
            self.0.forward(input)
        }
        fn backward(&self, ctx: &Tensor, g: &Tensor) -> Result<Backward> {
            let mut b = self.0.backward(ctx, g)?;
            b.input.scale(1.01);
            b.params.iter_mut().for_each(|p| p.scale(1.01));
            Ok(b)
        }
        fn params_mut(&mut self) -> Vec<&mut Tensor> {
            self.0.params_mut()
        }
    }

    #[test]
    fn detects_one_percent_gradient_error() {
        let mut rng = Rng::new(4);
        let mut layer = Corrupted(Affine::random(3, 2, 1.0, &mut rng));
        let x = probe(&[4, 3], &mut rng);
        let r = check_gradients(&mut layer, &x, 1e-3, &mut rng).unwrap();
        assert!(r.max_relative_error >= 5e-3, "{r:?}");
    }

    #[test]
    fn rejects_bad_eps_and_probe() {
        let mut rng = Rng::new(5);
        let x = probe(&[2, 2], &mut rng);
        assert!(check_gradients(&mut Identity, &x, 0.5, &mut rng).is_err());
        let big = Tensor::new(&[1], alloc::vec![4.0]).unwrap();
        assert!(check_gradients(&mut Identity, &big, 1e-3, &mut rng).is_err());
    }

    #[test]
    fn non_finite_output_is_reported() {
        struct Blowup;
        impl Layer for Blowup {
            type Context = ();
            fn forward(&self, input: &Tensor) -> Result<(Tensor, ())> {
                Ok((Tensor::from_fn(input.shape(), |_| f32::NAN), ()))
            }
            fn backward(&self, _: &(), g: &Tensor) -> Result<Backward> {
                Ok(Backward { input: g.clone(), params: Vec::new() })
            }
        }
        let mut rng = Rng::new(6);
        let x = probe(&[2], &mut rng);
        assert!(matches!(check_gradients(&mut Blowup, &x, 1e-3, &mut rng), Err(Error::NonFinite { .. })));
    }
}
