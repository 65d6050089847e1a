//! Independent reference implementations and the checks built on them.
//!
//! Shared by this crate's integration tests and the `isib` acceptance target
//! (included there by path), so every number is computed exactly once.
#![allow(dead_code)]

use isib_core::ctc::{ctc_loss, required_frames};
use isib_core::diffkm::{diffkm_backward, diffkm_forward, soft_assign, DiffKm, Emission};
use isib_core::gradcheck::{check_gradients, check_with, GradCheckReport};
use isib_core::kmeans::{lloyd_fit, Codebook, LloydConfig};
use isib_core::layer::{Affine, ContextWindow, FrameNet, Identity, LogSoftmax, Relu};
use isib_core::metrics::{edit_distance, ErrorBreakdown};
use isib_core::model::{multitask_loss, EncoderInit, Model, ModelConfig};
use isib_core::synthlang::{make_language, sample_corpus, Lang, LanguageSpec, Utterance, WordsPerUtt};
use isib_core::train::{init_checkpoint, train_stage1, train_stage2, TrainConfig};
use isib_core::{Rng, Tensor};

// ---------------------------------------------------------------- CTC

fn log_softmax_f64(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v as f64 - lse).collect()
}

/// Collapse repeats, then drop blanks.
pub fn collapse(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != 0 {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// `-log` of the summed probability of every frame path collapsing to `target`.
pub fn ctc_brute_nll(logits: &Tensor, target: &[u32]) -> f64 {
    let (t_len, classes) = (logits.rows(), logits.cols());
    let logp: Vec<Vec<f64>> = logits.iter_rows().map(log_softmax_f64).collect();
    let mut path = vec![0u32; t_len];
    let mut total = 0.0f64;
    loop {
        if collapse(&path) == target {
            total += path.iter().enumerate().map(|(t, &c)| logp[t][c as usize]).sum::<f64>().exp();
        }
        let mut i = 0;
        loop {
            if i == t_len {
                return -total.ln();
            }
            path[i] += 1;
            if (path[i] as usize) < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Feasible random instance with `T ≤ 6`, `V ≤ 3`, `L ≤ 3`.
pub fn random_ctc_instance(rng: &mut Rng) -> (Tensor, Vec<u32>) {
    loop {
        let t_len = rng.range_inclusive(1, 6);
        let v = rng.range_inclusive(1, 3);
        let l = rng.range_inclusive(0, 3);
        let target: Vec<u32> = (0..l).map(|_| rng.range_inclusive(1, v) as u32).collect();
        if required_frames(&target) > t_len {
            continue;
        }
        let logits = Tensor::from_fn(&[t_len, v + 1], |_| rng.uniform(-4.0, 4.0) as f32);
        return (logits, target);
    }
}

/// Largest `|nll − brute force|` over `n` seeded instances.
pub fn ctc_oracle_max_gap(n: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let (logits, target) = random_ctc_instance(&mut rng);
            let fast = ctc_loss(&logits, &target).expect("feasible instance").nll;
            (fast - ctc_brute_nll(&logits, &target)).abs()
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- edit distance

/// Minimum-cost alignment by enumerating every path through the edit grid.
/// Among minimum-cost paths the one with the most substitutions is kept.
pub fn edit_brute(reference: &[u32], hyp: &[u32]) -> ErrorBreakdown {
    fn walk(r: &[u32], h: &[u32], s: usize, d: usize, i: usize, best: &mut Option<(usize, usize, usize)>) {
        if r.is_empty() && h.is_empty() {
            let better = match *best {
                None => true,
                Some((bs, bd, bi)) => s + d + i < bs + bd + bi || (s + d + i == bs + bd + bi && s > bs),
            };
            if better {
                *best = Some((s, d, i));
            }
            return;
        }
        if let (Some(a), Some(b)) = (r.first(), h.first()) {
            walk(&r[1..], &h[1..], s + usize::from(a != b), d, i, best);
        }
        if !r.is_empty() {
            walk(&r[1..], h, s, d + 1, i, best);
        }
        if !h.is_empty() {
            walk(r, &h[1..], s, d, i + 1, best);
        }
    }
    let mut best = None;
    walk(reference, hyp, 0, 0, 0, &mut best);
    let (substitutions, deletions, insertions) = best.expect("at least one alignment");
    ErrorBreakdown { substitutions, deletions, insertions, ref_len: reference.len() }
}

/// Number of mismatching pairs out of `n` (lengths ≤ 6, alphabet ≤ 4).
pub fn edit_oracle_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for _ in 0..n {
        let v = rng.range_inclusive(1, 4);
        let seq = |rng: &mut Rng| -> Vec<u32> {
            let len = rng.range_inclusive(0, 6);
            (0..len).map(|_| rng.range_inclusive(1, v) as u32).collect()
        };
        let (r, h) = (seq(&mut rng), seq(&mut rng));
        if edit_distance(&r, &h) != edit_brute(&r, &h) {
            bad += 1;
        }
    }
    bad
}

// ---------------------------------------------------------------- k-means

pub fn brute_nearest(x: &[f32], centroids: &Tensor) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d: f64 = x.iter().zip(c).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Optimal 2-means inertia over every bipartition of `points`.
pub fn brute_two_means(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << n) - 1 {
        let mut cost = 0.0;
        for side in [true, false] {
            let members: Vec<&[f64; 2]> = (0..n).filter(|&i| (mask >> i & 1 == 1) == side).map(|i| &points[i]).collect();
            let m = members.len() as f64;
            let cx = members.iter().map(|p| p[0]).sum::<f64>() / m;
            let cy = members.iter().map(|p| p[1]).sum::<f64>() / m;
            cost += members.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>();
        }
        best = best.min(cost);
    }
    best
}

/// Counts datasets whose Lloyd inertia history ever increases.
pub fn lloyd_violations(datasets: usize, seed: u64) -> usize {
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for _ in 0..datasets {
        let n = rng.range_inclusive(20, 200);
        let d = rng.range_inclusive(1, 5);
        let k = rng.range_inclusive(1, 8);
        let points = Tensor::from_fn(&[n, d], |_| rng.uniform(-5.0, 5.0) as f32);
        let fit = lloyd_fit(&points, k, &mut rng.fork(1), &LloydConfig { max_iter: 100, tol: 0.0, max_points: 0 })
            .expect("random points are distinct");
        if fit.inertia_history.windows(2).any(|w| w[1] > w[0]) {
            bad += 1;
        }
    }
    bad
}

/// Lloyd on the four-point example: `(centroids sorted by x, final inertia, brute-force optimum)`.
pub fn four_point_case() -> (Vec<[f32; 2]>, f64, f64) {
    let pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
    let points = Tensor::matrix(4, 2, pts.iter().flatten().map(|&v| v as f32).collect()).unwrap();
    let fit = lloyd_fit(&points, 2, &mut Rng::new(3), &LloydConfig::default()).unwrap();
    let mut cents: Vec<[f32; 2]> = fit.codebook.centroids().iter_rows().map(|r| [r[0], r[1]]).collect();
    cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let inertia = *fit.inertia_history.last().unwrap();
    (cents, inertia, brute_two_means(&pts))
}

// ---------------------------------------------------------------- straight-through

pub struct StraightThrough {
    pub hard_values_bitwise: bool,
    pub backward_bitwise: bool,
    pub min_max_weight_small_tau: f64,
}

/// Hard-emission forward against centroid rows, hard backward against the
/// soft-emission backward, and the soft→hard limit at `τ = 1e-4`.
pub fn straight_through(trials: usize, seed: u64) -> StraightThrough {
    let mut rng = Rng::new(seed);
    let mut out = StraightThrough { hard_values_bitwise: true, backward_bitwise: true, min_max_weight_small_tau: 1.0 };
    for _ in 0..trials {
        let (k, d, t) = (rng.range_inclusive(2, 8), rng.range_inclusive(1, 4), rng.range_inclusive(1, 6));
        let codebook = Codebook::new(Tensor::from_fn(&[k, d], |_| rng.uniform(-2.0, 2.0) as f32)).unwrap();
        let h = Tensor::from_fn(&[t, d], |_| rng.uniform(-2.0, 2.0) as f32);
        let g = Tensor::from_fn(&[t, d], |_| rng.uniform(-1.0, 1.0) as f32);

        let (hard, hard_ctx) = diffkm_forward(&h, &codebook, 1.0, Emission::Hard).unwrap();
        for (t, (row, &tok)) in hard.embeddings.iter_rows().zip(&hard.tokens).enumerate() {
            let same = row.iter().zip(codebook.centroid(tok)).all(|(a, b)| a.to_bits() == b.to_bits());
            out.hard_values_bitwise &= same && tok == brute_nearest(h.row(t), codebook.centroids());
        }
        let (_, soft_ctx) = diffkm_forward(&h, &codebook, 1.0, Emission::Soft).unwrap();
        let a = diffkm_backward(&hard_ctx, &codebook, &g).unwrap();
        let b = diffkm_backward(&soft_ctx, &codebook, &g).unwrap();
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        out.backward_bitwise &= bits(&a.0) == bits(&b.0) && bits(&a.1) == bits(&b.1);

        // Distinct distances: skip probes where the two nearest centroids tie.
        let small = soft_assign(&h, &codebook, 1e-4).unwrap();
        for (x, row) in h.iter_rows().zip(small.weights.iter_rows()) {
            let mut dists: Vec<f64> = codebook
                .centroids()
                .iter_rows()
                .map(|c| x.iter().zip(c).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum())
                .collect();
            dists.sort_by(f64::total_cmp);
            if dists[1] - dists[0] < 1e-2 {
                continue;
            }
            let max = row.iter().fold(0.0f32, |m, &w| m.max(w)) as f64;
            out.min_max_weight_small_tau = out.min_max_weight_small_tau.min(max);
        }
    }
    out
}

// ---------------------------------------------------------------- gradients

fn probe(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(-3.0, 3.0) as f32)
}

/// Worst relative error of every shipped layer over `probes` seeded probes each.
pub fn layer_suite(probes: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let mut worst = vec![
        ("identity", 0.0f64),
        ("affine", 0.0),
        ("relu", 0.0),
        ("log_softmax", 0.0),
        ("context_window", 0.0),
        ("frame_net", 0.0),
        ("diffkm_soft", 0.0),
    ];
    let eps = 1e-3;
    for _ in 0..probes {
        let mut r: Vec<GradCheckReport> = Vec::new();
        r.push(check_gradients(&mut Identity, &probe(&[3, 4], &mut rng), eps, &mut rng).unwrap());
        let mut aff = Affine::random(4, 3, 1.0, &mut rng);
        r.push(check_gradients(&mut aff, &probe(&[4, 4], &mut rng), eps, &mut rng).unwrap());
        r.push(check_gradients(&mut Relu, &probe(&[3, 5], &mut rng), eps, &mut rng).unwrap());
        r.push(check_gradients(&mut LogSoftmax, &probe(&[2, 4], &mut rng), eps, &mut rng).unwrap());
        r.push(check_gradients(&mut ContextWindow { radius: 2 }, &probe(&[4, 3], &mut rng), eps, &mut rng).unwrap());
        let mut net = FrameNet::random(1, 3, 6, 3, 4, &mut rng).unwrap();
        r.push(check_gradients(&mut net, &probe(&[5, 3], &mut rng), eps, &mut rng).unwrap());
        let codebook = Codebook::new(Tensor::from_fn(&[4, 3], |_| rng.uniform(-1.5, 1.5) as f32)).unwrap();
        let mut dk = DiffKm { codebook, tau: 1.0, emission: Emission::Soft };
        let h = Tensor::from_fn(&[5, 3], |_| rng.uniform(-1.5, 1.5) as f32);
        r.push(check_gradients(&mut dk, &h, eps, &mut rng).unwrap());
        for (w, rep) in worst.iter_mut().zip(r) {
            w.1 = w.1.max(rep.max_relative_error);
        }
    }
    worst
}

/// Micro-model (`T = 5`, `D = 3`, `K = 4`, `V = 2`) with a random encoder and
/// soft emission, so every parameter sits on a smooth path to the loss.
pub fn micro_model(seed: u64) -> (Model, Vec<Utterance>, Vec<Utterance>) {
    let cfg = ModelConfig {
        feature_dim: 3,
        encoder_radius: 1,
        encoder_hidden: 5,
        encoder_layers: 2,
        encoder_init: EncoderInit::Random,
        codebook_size: 4,
        head_radius: 1,
        head_hidden: 5,
        head_layers: 2,
        ..ModelConfig::default()
    };
    let mut rng = Rng::new(seed);
    let mut model = Model::new(&cfg, 2, 2, &mut rng).unwrap();
    model.codebook = Some(Codebook::new(Tensor::from_fn(&[4, 3], |_| rng.uniform(-1.0, 1.0) as f32)).unwrap());
    model.emission = Emission::Soft;
    let utt = |lang: Lang, rng: &mut Rng| Utterance {
        features: Tensor::from_fn(&[5, 3], |_| rng.uniform(-1.0, 1.0) as f32),
        transcript: vec![1 + rng.below(2) as u32, 1 + rng.below(2) as u32],
        lang,
        accent: 0.0,
        speaker: 0,
    };
    let b1 = (0..2).map(|_| utt(Lang::L1, &mut rng)).collect();
    let b2 = (0..2).map(|_| utt(Lang::L2, &mut rng)).collect();
    (model, b1, b2)
}

/// Finite-difference check of the full weighted loss over every parameter.
pub fn pipeline_gradcheck(seed: u64, alpha: f64) -> GradCheckReport {
    let (mut model, b1, b2) = micro_model(seed);
    let r1: Vec<&Utterance> = b1.iter().collect();
    let r2: Vec<&Utterance> = b2.iter().collect();
    let (_, grads) = multitask_loss(&model, &r1, &r2, alpha, false).unwrap();
    let analytic: Vec<Tensor> = grads.all().into_iter().cloned().collect();
    check_with(
        &mut model,
        &analytic,
        1e-3,
        |m| m.params_mut().unwrap(),
        |m| Ok(vec![multitask_loss(m, &r1, &r2, alpha, false)?.0.total]),
    )
    .unwrap()
}

// ---------------------------------------------------------------- weighted loss

pub struct LossIdentities {
    pub alpha0_exact: bool,
    pub alpha0_l1_grads_zero: bool,
    pub alpha1_exact: bool,
    pub alpha1_l2_grads_zero: bool,
    /// Largest `|total − ((1−α)·l2 + α·l1)|` over every logged step.
    pub max_logged_gap: f64,
    pub logged_steps: usize,
}

pub fn small_corpora(seed: u64) -> (Vec<Utterance>, Vec<Utterance>) {
    let spec = LanguageSpec { phones: 5, words: 6, dim: 4, subspace_dim: 0, ..LanguageSpec::default() };
    let l1 = make_language(&spec, &mut Rng::derive(seed, 1)).unwrap();
    let l2 = make_language(&spec, &mut Rng::derive(seed, 2)).unwrap();
    let w = WordsPerUtt { min: 1, max: 3 };
    (
        sample_corpus(&l1, Lang::L1, 24, w, seed * 10 + 3).unwrap(),
        sample_corpus(&l2, Lang::L2, 32, w, seed * 10 + 4).unwrap(),
    )
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig { feature_dim: 4, encoder_hidden: 12, codebook_size: 10, head_hidden: 12, head_radius: 2, ..ModelConfig::default() }
}

pub fn loss_identities(seed: u64) -> LossIdentities {
    let (c1, c2) = small_corpora(seed);
    let mcfg = small_model_config();
    let init = init_checkpoint(&mcfg, 6, 6, Lang::L1, &c1, &LloydConfig::default(), seed).unwrap();
    let model = &init.model;
    let b1: Vec<&Utterance> = c1.iter().take(4).collect();
    let b2: Vec<&Utterance> = c2.iter().take(4).collect();

    let (r0, g0) = multitask_loss(model, &b1, &b2, 0.0, false).unwrap();
    let (r1, g1) = multitask_loss(model, &b1, &b2, 1.0, false).unwrap();
    let zero = |ts: &[Tensor]| ts.iter().all(|t| t.data().iter().all(|&v| v == 0.0));

    let mut max_gap = 0.0f64;
    let mut steps = 0;
    for alpha in [0.0, 0.3, 0.5, 0.7, 1.0] {
        let cfg = TrainConfig { alpha, stage1_epochs: 2, stage2_epochs: 2, batch_size: 4, seed, ..TrainConfig::default() };
        let (s1, log1) = train_stage1(&init, &c1, &c2, &cfg).unwrap();
        let (_, log2) = train_stage2(&s1, &c1, &c2, &mcfg, &cfg).unwrap();
        for r in log1.steps.iter().chain(&log2.steps) {
            max_gap = max_gap.max((r.total - ((1.0 - r.alpha) * r.l2 + r.alpha * r.l1)).abs());
            steps += 1;
        }
    }
    LossIdentities {
        alpha0_exact: r0.total == r0.l2,
        alpha0_l1_grads_zero: zero(&g0.head_l1),
        alpha1_exact: r1.total == r1.l1,
        alpha1_l2_grads_zero: zero(&g1.head_l2),
        max_logged_gap: max_gap,
        logged_steps: steps,
    }
}
