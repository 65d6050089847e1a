//! Lloyd's k-means with k-means++ seeding, and the codebook it produces.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `K × D` stack of cluster centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Tensor,
}

impl Codebook {
    pub fn new(centroids: Tensor) -> Result<Self> {
        let (k, _) = centroids.expect_rank2("Codebook::new")?;
        if k == 0 {
            return Err(Error::invalid("codebook needs at least one centroid"));
        }
        centroids.ensure_finite("codebook")?;
        Ok(Codebook { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Tensor {
        &self.centroids
    }

    pub fn centroids_mut(&mut self) -> &mut Tensor {
        &mut self.centroids
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        self.centroids.row(j)
    }

    /// Nearest centroid, ties to the lowest index.
    pub fn assign(&self, x: &[f32]) -> usize {
        nearest(x, &self.centroids).0
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f32], centroids: &Tensor) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Hard token of `x`: `argmin_j ‖x − m_j‖²`, lowest index on ties.
pub fn assign_hard(x: &[f32], codebook: &Codebook) -> Result<usize> {
    if x.len() != codebook.dim() {
        return Err(Error::shape(
            "assign_hard",
            alloc::format!("point has {} dims, codebook {}", x.len(), codebook.dim()),
        ));
    }
    Ok(codebook.assign(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct LloydConfig {
    pub max_iter: usize,
    /// Stop once an iteration lowers the inertia by less than this.
    pub tol: f64,
    /// Fit on at most this many points (a seeded subsample); 0 means all.
    pub max_points: usize,
}

impl Default for LloydConfig {
    fn default() -> Self {
        LloydConfig { max_iter: 100, tol: 1e-4, max_points: 8000 }
    }
}

#[derive(Debug, Clone)]
pub struct LloydFit {
    pub codebook: Codebook,
    /// Inertia after seeding and after every accepted iteration; non-increasing.
    pub inertia_history: Vec<f64>,
}

fn assign_all(points: &Tensor, centroids: &Tensor, labels: &mut [usize], dists: &mut [f32]) -> f64 {
    let mut inertia = 0.0f64;
    for (i, p) in points.iter_rows().enumerate() {
        let (j, d) = nearest(p, centroids);
        labels[i] = j;
        dists[i] = d;
        inertia += d as f64;
    }
    inertia
}

fn count_distinct_rows(points: &Tensor, at_least: usize) -> usize {
    let mut distinct: Vec<&[f32]> = Vec::new();
    for p in points.iter_rows() {
        if !distinct.contains(&p) {
            distinct.push(p);
            if distinct.len() >= at_least {
                break;
            }
        }
    }
    distinct.len()
}

fn plus_plus(points: &Tensor, k: usize, rng: &mut Rng) -> Result<Tensor> {
    let n = points.rows();
    let d = points.cols();
    let mut centroids = Vec::with_capacity(k * d);
    centroids.extend_from_slice(points.row(rng.below(n)));
    let mut min_d: Vec<f64> = points.iter_rows().map(|p| squared_distance(p, &centroids[..d]) as f64).collect();
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("fewer distinct points than clusters"));
        }
        let mut target = rng.next_f64() * total;
        let mut pick = None;
        for (i, &w) in min_d.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < w {
                break;
            }
            target -= w;
        }
        let pick = pick.expect("positive total implies a candidate");
        centroids.extend_from_slice(points.row(pick));
        let new_c = &centroids[c * d..(c + 1) * d];
        for (m, p) in min_d.iter_mut().zip(points.iter_rows()) {
            *m = m.min(squared_distance(p, new_c) as f64);
        }
    }
    Tensor::matrix(k, d, centroids)
}

/// Fits `k` centroids to the rows of `points`.
///
/// k-means++ seeding, then alternating assignment and mean updates until an
/// iteration gains less than `tol` or `max_iter` is reached. An empty cluster
/// is moved onto the point currently farthest from its centroid. An update
/// that would raise the inertia (possible only through `f32` rounding at
/// convergence) is rejected and ends the fit.
pub fn lloyd_fit(points: &Tensor, k: usize, rng: &mut Rng, config: &LloydConfig) -> Result<LloydFit> {
    let (n, d) = points.expect_rank2("lloyd_fit")?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n < k {
        return Err(Error::invalid(alloc::format!("{n} points cannot form {k} clusters")));
    }
    points.ensure_finite("lloyd_fit points")?;
    let subsampled;
    let points = if config.max_points > 0 && n > config.max_points.max(k) {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        idx.truncate(config.max_points.max(k));
        idx.sort_unstable();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            data.extend_from_slice(points.row(i));
        }
        subsampled = Tensor::matrix(idx.len(), d, data)?;
        &subsampled
    } else {
        points
    };
    let n = points.rows();
    if count_distinct_rows(points, k) < k {
        return Err(Error::invalid("fewer distinct points than clusters"));
    }

    let mut centroids = plus_plus(points, k, rng)?;
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f32; n];
    let mut inertia = assign_all(points, &centroids, &mut labels, &mut dists);
    let mut history = vec![inertia];

    let mut next_labels = labels.clone();
    let mut next_dists = dists.clone();
    for _ in 0..config.max_iter {
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter_rows().zip(&labels) {
            counts[j] += 1;
            for (s, &v) in sums[j * d..(j + 1) * d].iter_mut().zip(p) {
                *s += v as f64;
            }
        }
        let mut next = centroids.clone();
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in next.row_mut(j).iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                    *c = (s / counts[j] as f64) as f32;
                }
            }
        }
        // Re-seed empty clusters on the farthest points, one at a time.
        let mut far = dists.clone();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let (far_i, _) = far
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            next.row_mut(j).copy_from_slice(points.row(far_i));
            let c = next.row(j).to_vec();
            for (f, p) in far.iter_mut().zip(points.iter_rows()) {
                *f = f.min(squared_distance(p, &c));
            }
        }

        let next_inertia = assign_all(points, &next, &mut next_labels, &mut next_dists);
        if next_inertia > inertia {
            break;
        }
        let gain = inertia - next_inertia;
        centroids = next;
        core::mem::swap(&mut labels, &mut next_labels);
        core::mem::swap(&mut dists, &mut next_dists);
        inertia = next_inertia;
        history.push(inertia);
        if gain < config.tol {
            break;
        }
    }
    Ok(LloydFit { codebook: Codebook::new(centroids)?, inertia_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[[f32; 2]]) -> Tensor {
        Tensor::matrix(v.len(), 2, v.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let p = pts(&[[0.0, 0.0], [1.0, 2.0], [5.0, -1.0], [3.0, 3.0]]);
        let fit = lloyd_fit(&p, 4, &mut Rng::new(1), &LloydConfig::default()).unwrap();
        assert_eq!(*fit.inertia_history.last().unwrap(), 0.0);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let p = pts(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(lloyd_fit(&p, 3, &mut Rng::new(1), &LloydConfig::default()), Err(Error::InvalidInput(_))));
        let dup = pts(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        assert!(lloyd_fit(&dup, 2, &mut Rng::new(1), &LloydConfig::default()).is_err());
    }

    #[test]
    fn assign_ties_go_to_lowest_index() {
        let cb = Codebook::new(pts(&[[-1.0, 0.0], [1.0, 0.0]])).unwrap();
        assert_eq!(assign_hard(&[0.0, 3.0], &cb).unwrap(), 0);
        let single = Codebook::new(pts(&[[4.0, 4.0]])).unwrap();
        assert_eq!(assign_hard(&[-9.0, 2.0], &single).unwrap(), 0);
        assert!(assign_hard(&[0.0], &cb).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Seeding can put two centroids in the same blob; the fit must still
        // end with every centroid owning a point.
        let mut v = Vec::new();
        for i in 0..20 {
            v.push([i as f32 * 0.01, 0.0]);
        }
        v.push([100.0, 100.0]);
        v.push([-100.0, 50.0]);
        let p = pts(&v);
        for seed in 0..20 {
            let fit = lloyd_fit(&p, 3, &mut Rng::new(seed), &LloydConfig::default()).unwrap();
            let cb = &fit.codebook;
            let mut owned = [false; 3];
            for r in p.iter_rows() {
                owned[cb.assign(r)] = true;
            }
            assert!(owned.iter().all(|&o| o), "seed {seed}");
        }
    }
}
