//! Contrastive objectives, per-batch k-means and the soft-label
//! cross-entropy, each returning analytic gradients.
//!
//! Embeddings are passed as slices of rows. Gradients are with respect to the
//! raw (unnormalized) projections.

use rand::Rng as _;

use crate::encoder::softmax_in_place;
use crate::error::{Error, Result};
use crate::rng;

pub const TAU_INS: f64 = 0.1;
pub const TAU_CA: f64 = 0.5;
pub const DEFAULT_K: usize = 10;
pub const KMEANS_MAX_ITER: usize = 50;
pub const KMEANS_RESTARTS: u64 = 8;
const LOG_EPS: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit vector and original norm. A zero vector stays zero.
pub fn normalize(a: &[f64]) -> (Vec<f64>, f64) {
    let n = norm(a);
    if n == 0.0 {
        (vec![0.0; a.len()], 0.0)
    } else {
        (a.iter().map(|x| x / n).collect(), n)
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Maps a gradient w.r.t. the unit vector `u = z/‖z‖` to one w.r.t. `z`.
fn unnormalize_grad(u: &[f64], n: f64, du: &[f64]) -> Vec<f64> {
    if n == 0.0 {
        return vec![0.0; u.len()];
    }
    let p = dot(u, du);
    du.iter().zip(u).map(|(g, x)| (g - x * p) / n).collect()
}

fn normalize_rows(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
    let mut zero = 0;
    let (u, n) = rows
        .iter()
        .map(|r| {
            let (u, n) = normalize(r);
            zero += (n == 0.0) as usize;
            (u, n)
        })
        .unzip();
    (u, n, zero)
}

fn check_rows(name: &str, rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Argument(format!("{name}: ragged rows")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Argument(format!("{name}: non-finite entries")));
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct SpatialLoss {
    pub loss: f64,
    /// `ℓ` per anchor; the first `N` entries belong to view a.
    pub per_anchor: Vec<f64>,
    pub grad_a: Vec<Vec<f64>>,
    pub grad_b: Vec<Vec<f64>>,
    /// Number of zero-norm embeddings (similarity defined as 0).
    pub zero_vectors: usize,
}

/// Instance-level InfoNCE over `2N` embeddings where `a[i]` and `b[i]` form
/// the positive pair. Each element is an anchor once; its denominator runs
/// over every other element in the batch.
pub fn spatial_info_nce(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> Result<SpatialLoss> {
    let n = a.len();
    if n < 1 || b.len() != n {
        return Err(Error::Argument(format!("need N >= 1 pairs, got {} and {}", a.len(), b.len())));
    }
    if tau <= 0.0 {
        return Err(Error::Argument("temperature must be positive".into()));
    }
    let all: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    check_rows("spatial", &all)?;
    let m = 2 * n;
    let (u, norms, zero_vectors) = normalize_rows(&all);
    let partner = |i: usize| (i + n) % m;
    let mut per_anchor = vec![0.0; m];
    // dL/dS, S symmetric
    let mut gs = vec![0.0; m * m];
    for i in 0..m {
        let mut logits: Vec<f64> = (0..m).map(|k| dot(&u[i], &u[k]) / tau).collect();
        let pos = logits[partner(i)];
        logits[i] = f64::NEG_INFINITY;
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        per_anchor[i] = lse - pos;
        for k in 0..m {
            if k == i {
                continue;
            }
            let p = (logits[k] - lse).exp();
            let t = if k == partner(i) { 1.0 } else { 0.0 };
            gs[i * m + k] += (p - t) / (tau * m as f64);
        }
    }
    let d = u[0].len();
    let mut du = vec![vec![0.0; d]; m];
    for i in 0..m {
        for k in 0..m {
            let g = gs[i * m + k];
            if g == 0.0 {
                continue;
            }
            for j in 0..d {
                du[i][j] += g * u[k][j];
                du[k][j] += g * u[i][j];
            }
        }
    }
    let mut grads: Vec<Vec<f64>> = (0..m).map(|i| unnormalize_grad(&u[i], norms[i], &du[i])).collect();
    let grad_b = grads.split_off(n);
    Ok(SpatialLoss {
        loss: per_anchor.iter().sum::<f64>() / m as f64,
        per_anchor,
        grad_a: grads,
        grad_b,
        zero_vectors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each accepted assignment step; non-increasing.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centroids.iter().enumerate() {
                let dd = sq_dist(p, c);
                if dd < best.1 {
                    best = (k, dd);
                }
            }
            best
        })
        .unzip()
}

/// Lloyd's algorithm with k-means++ seeding, best of [`KMEANS_RESTARTS`]
/// seeded restarts by final inertia.
///
/// Each restart runs until assignments stop changing or `max_iter` update steps. A step
/// that would raise the inertia (rounding) is rejected and ends the loop.
/// Clusters that empty out are re-seeded with the point farthest from its
/// current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<Clustering> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("kmeans needs 1 <= K <= N, got K={k}, N={n}")));
    }
    check_rows("kmeans", points)?;
    let mut best: Option<Clustering> = None;
    for restart in 0..KMEANS_RESTARTS {
        let c = lloyd(points, k, rng::derive_seed(seed, &[0xC1, restart]), max_iter);
        if best.as_ref().map_or(true, |b| c.inertia < b.inertia) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Clustering {
    let n = points.len();
    let mut r = rng::stream(seed, &[]);
    let mut centroids = vec![points[r.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut x = r.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if x < w {
                    pick = i;
                    break;
                }
                x -= w;
            }
            // never pick a zero-weight point on rounding fallthrough
            if d2[pick] == 0.0 {
                pick = argmax(&d2);
            }
            pick
        } else {
            r.gen_range(0..n)
        };
        centroids.push(points[idx].clone());
        for (di, p) in d2.iter_mut().zip(points) {
            *di = di.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    let (mut labels, dists) = assign(points, &centroids);
    let mut inertia: f64 = dists.iter().sum();
    let mut trace = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iter {
        let next_c = update(points, &labels, &centroids, &dists_for(points, &labels, &centroids));
        let (next_l, next_d) = assign(points, &next_c);
        let next_inertia: f64 = next_d.iter().sum();
        if next_inertia > inertia {
            break;
        }
        iterations += 1;
        let changed = next_l != labels;
        centroids = next_c;
        labels = next_l;
        inertia = next_inertia;
        trace.push(inertia);
        if !changed {
            break;
        }
    }
    Clustering { centroids, assignments: labels, inertia, trace, iterations }
}

fn dists_for(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> Vec<f64> {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn update(points: &[Vec<f64>], labels: &[usize], old: &[Vec<f64>], dists: &[f64]) -> Vec<Vec<f64>> {
    let k = old.len();
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    let mut far: Vec<f64> = dists.to_vec();
    for c in 0..k {
        if counts[c] == 0 {
            let i = argmax(&far);
            sums[c] = points[i].clone();
            counts[c] = 1;
            far[i] = f64::NEG_INFINITY;
        } else {
            let inv = 1.0 / counts[c] as f64;
            sums[c].iter_mut().for_each(|s| *s *= inv);
        }
    }
    sums
}

#[derive(Debug, Clone)]
pub struct ClusterNce {
    pub per_item: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
}

/// Cluster-aware contrastive term: softmax over cosine similarities to all
/// `K` centroids with `positives[i]` as the target. Gradients flow into `m`
/// only.
pub fn cluster_nce(m: &[Vec<f64>], centroids: &[Vec<f64>], positives: &[usize], tau: f64) -> Result<ClusterNce> {
    let k = centroids.len();
    if k == 0 {
        return Err(Error::Argument("cluster_nce needs at least one centroid".into()));
    }
    if positives.len() != m.len() || positives.iter().any(|&p| p >= k) {
        return Err(Error::Argument("cluster_nce: bad positive indices".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Argument("temperature must be positive".into()));
    }
    let (cu, _, _) = normalize_rows(centroids);
    let mut per_item = Vec::with_capacity(m.len());
    let mut grad = Vec::with_capacity(m.len());
    for (row, &pos) in m.iter().zip(positives) {
        let (u, nrm) = normalize(row);
        let mut p: Vec<f64> = cu.iter().map(|c| dot(&u, c) / tau).collect();
        let logit_pos = p[pos];
        let mx = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + p.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        per_item.push(lse - logit_pos);
        softmax_in_place(&mut p);
        p[pos] -= 1.0;
        let mut du = vec![0.0; u.len()];
        for (g, c) in p.iter().zip(&cu) {
            for (dj, cj) in du.iter_mut().zip(c) {
                *dj += g / tau * cj;
            }
        }
        grad.push(unnormalize_grad(&u, nrm, &du));
    }
    Ok(ClusterNce { per_item, grad })
}

/// Row-softmax of cosine similarities to the centroids.
pub fn soft_assign(m: &[Vec<f64>], centroids: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let (cu, _, _) = normalize_rows(centroids);
    m.iter()
        .map(|row| {
            let (u, _) = normalize(row);
            let mut p: Vec<f64> = cu.iter().map(|c| dot(&u, c) / tau).collect();
            softmax_in_place(&mut p);
            p
        })
        .collect()
}

/// Joint assignment matrix `P = AᵀA′ / N`, renormalized to unit mass.
pub fn joint_matrix(a: &[Vec<f64>], a2: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k1 = a[0].len();
    let k2 = a2[0].len();
    let n = a.len() as f64;
    let mut p = vec![vec![0.0; k2]; k1];
    for (ra, rb) in a.iter().zip(a2) {
        for i in 0..k1 {
            for j in 0..k2 {
                p[i][j] += ra[i] * rb[j] / n;
            }
        }
    }
    let s: f64 = p.iter().flatten().sum();
    p.iter_mut().flatten().for_each(|x| *x /= s);
    p
}

/// `Σ P_ij ln(P_ij / (p_i q_j))` with `0 ln 0 = 0`.
pub fn mutual_information_of(p: &[Vec<f64>]) -> f64 {
    let (pi, qj) = marginals(p);
    let mut s = 0.0;
    for (i, row) in p.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if x > 0.0 {
                s += x * (x / (pi[i] * qj[j])).ln();
            }
        }
    }
    s.max(0.0)
}

fn marginals(p: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let pi: Vec<f64> = p.iter().map(|r| r.iter().sum()).collect();
    let mut qj = vec![0.0; p[0].len()];
    for row in p {
        for (q, x) in qj.iter_mut().zip(row) {
            *q += x;
        }
    }
    (pi, qj)
}

/// Mutual information between soft cluster assignments of the two views:
/// `m` against `v` (centroids of the other view) and `m2` against `u`.
pub fn mutual_information(m: &[Vec<f64>], m2: &[Vec<f64>], u: &[Vec<f64>], v: &[Vec<f64>], tau: f64) -> f64 {
    let a = soft_assign(m, v, tau);
    let a2 = soft_assign(m2, u, tau);
    mutual_information_of(&joint_matrix(&a, &a2))
}

/// Gradients of `I` w.r.t. `m` and `m2` with centroids held fixed.
fn mutual_information_grad(
    m: &[Vec<f64>],
    m2: &[Vec<f64>],
    u: &[Vec<f64>],
    v: &[Vec<f64>],
    tau: f64,
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = m.len();
    let a = soft_assign(m, v, tau);
    let a2 = soft_assign(m2, u, tau);
    let k1 = v.len();
    let k2 = u.len();
    let mut raw = vec![vec![0.0; k2]; k1];
    for (ra, rb) in a.iter().zip(&a2) {
        for i in 0..k1 {
            for j in 0..k2 {
                raw[i][j] += ra[i] * rb[j] / n as f64;
            }
        }
    }
    let s: f64 = raw.iter().flatten().sum();
    let p: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|x| x / s).collect()).collect();
    let mi = mutual_information_of(&p);
    let (pi, qj) = marginals(&p);
    let gp: Vec<Vec<f64>> = p
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &x)| (x.max(f64::MIN_POSITIVE) / (pi[i] * qj[j])).ln() - 1.0)
                .collect()
        })
        .collect();
    // through the renormalization P = R / ΣR
    let inner: f64 = gp.iter().flatten().zip(p.iter().flatten()).map(|(g, x)| g * x).sum();
    let gr: Vec<Vec<f64>> = gp.iter().map(|r| r.iter().map(|g| (g - inner) / s).collect()).collect();
    let mut ga = vec![vec![0.0; k1]; n];
    let mut ga2 = vec![vec![0.0; k2]; n];
    for t in 0..n {
        for i in 0..k1 {
            for j in 0..k2 {
                ga[t][i] += gr[i][j] * a2[t][j] / n as f64;
                ga2[t][j] += gr[i][j] * a[t][i] / n as f64;
            }
        }
    }
    let gm = soft_assign_backward(m, v, &a, &ga, tau);
    let gm2 = soft_assign_backward(m2, u, &a2, &ga2, tau);
    (mi, gm, gm2)
}

fn soft_assign_backward(m: &[Vec<f64>], c: &[Vec<f64>], a: &[Vec<f64>], ga: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let (cu, _, _) = normalize_rows(c);
    m.iter()
        .zip(a.iter().zip(ga))
        .map(|(row, (ar, gr))| {
            let (u, nrm) = normalize(row);
            let s = dot(ar, gr);
            let mut du = vec![0.0; u.len()];
            for ((&ak, &gk), ck) in ar.iter().zip(gr).zip(&cu) {
                let dl = ak * (gk - s) / tau;
                for (dj, cj) in du.iter_mut().zip(ck) {
                    *dj += dl * cj;
                }
            }
            unnormalize_grad(&u, nrm, &du)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalParams {
    pub k: usize,
    pub tau_ca: f64,
    pub tau_assign: f64,
    pub max_iter: usize,
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self { k: DEFAULT_K, tau_ca: TAU_CA, tau_assign: TAU_CA, max_iter: KMEANS_MAX_ITER }
    }
}

#[derive(Debug, Clone)]
pub struct TemporalLoss {
    pub loss: f64,
    /// Mean cluster term over both directions.
    pub cluster_term: f64,
    pub mi: f64,
    pub grad_m: Vec<Vec<f64>>,
    pub grad_m2: Vec<Vec<f64>>,
    /// k-means on view one (centroids `U`).
    pub clusters_u: Clustering,
    /// k-means on view two (centroids `V`).
    pub clusters_v: Clustering,
}

/// Clusters each view on unit-normalized projections and evaluates
/// [`temporal_loss_given`].
pub fn temporal_loss(m: &[Vec<f64>], m2: &[Vec<f64>], params: &TemporalParams, seed: u64) -> Result<TemporalLoss> {
    if m.len() != m2.len() {
        return Err(Error::Argument("views differ in batch size".into()));
    }
    check_rows("temporal", m)?;
    check_rows("temporal", m2)?;
    let (mu, _, _) = normalize_rows(m);
    let (mu2, _, _) = normalize_rows(m2);
    let cu = kmeans(&mu, params.k, rng::derive_seed(seed, &[1]), params.max_iter)?;
    let cv = kmeans(&mu2, params.k, rng::derive_seed(seed, &[2]), params.max_iter)?;
    temporal_loss_given(m, m2, cu, cv, params)
}

/// Temporal loss for fixed clusterings. Each embedding is scored against
/// the other view's centroids with its partner's cluster as the positive;
/// the mutual information of the soft assignments is subtracted.
pub fn temporal_loss_given(
    m: &[Vec<f64>],
    m2: &[Vec<f64>],
    clusters_u: Clustering,
    clusters_v: Clustering,
    params: &TemporalParams,
) -> Result<TemporalLoss> {
    let n = m.len();
    let fwd = cluster_nce(m, &clusters_v.centroids, &clusters_v.assignments, params.tau_ca)?;
    let bwd = cluster_nce(m2, &clusters_u.centroids, &clusters_u.assignments, params.tau_ca)?;
    let (mi, gi, gi2) =
        mutual_information_grad(m, m2, &clusters_u.centroids, &clusters_v.centroids, params.tau_assign);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cluster_term = 0.5 * (mean(&fwd.per_item) + mean(&bwd.per_item));
    let scale = 0.5 / n as f64;
    let combine = |g: &[Vec<f64>], gmi: &[Vec<f64>]| -> Vec<Vec<f64>> {
        g.iter()
            .zip(gmi)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| scale * x - y).collect())
            .collect()
    };
    Ok(TemporalLoss {
        loss: cluster_term - mi,
        cluster_term,
        mi,
        grad_m: combine(&fwd.grad, &gi),
        grad_m2: combine(&bwd.grad, &gi2),
        clusters_u,
        clusters_v,
    })
}

fn check_prob_row(row: &[f64], what: &str) -> Result<()> {
    let s: f64 = row.iter().sum();
    if row.iter().any(|&x| !(0.0..=1.0 + 1e-9).contains(&x)) || (s - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!("{what} row is not a probability vector: {row:?}")));
    }
    Ok(())
}

/// Mean over rows of `−Σ_c y_c ln ŷ_c`, logs clamped at `1e-12`.
pub fn soft_cross_entropy(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Argument("prediction and target batch sizes differ".into()));
    }
    let mut total = 0.0;
    for (p, y) in pred.iter().zip(target) {
        if p.len() != y.len() {
            return Err(Error::Argument("class count mismatch".into()));
        }
        check_prob_row(y, "target")?;
        check_prob_row(p, "prediction")?;
        total -= y.iter().zip(p).map(|(yc, pc)| yc * pc.max(LOG_EPS).ln()).sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}

/// Soft-label targets `(1 − p, p)`.
pub fn soft_target(p_movement: f64) -> Vec<f64> {
    vec![1.0 - p_movement, p_movement]
}

/// Cross-entropy of `softmax(logits)` and its gradient w.r.t. the logits.
pub fn soft_cross_entropy_logits(logits: &[Vec<f64>], target: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let probs: Vec<Vec<f64>> = logits
        .iter()
        .map(|l| {
            let mut p = l.clone();
            softmax_in_place(&mut p);
            p
        })
        .collect();
    let loss = soft_cross_entropy(&probs, target)?;
    let n = logits.len() as f64;
    let grad = probs
        .iter()
        .zip(target)
        .map(|(p, y)| p.iter().zip(y).map(|(a, b)| (a - b) / n).collect())
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct PretrainLoss {
    pub total: f64,
    pub spatial: SpatialLoss,
    pub temporal: TemporalLoss,
    pub lambda_tc: f64,
    /// Combined gradients w.r.t. the spatial projections of each view.
    pub grad_z: [Vec<Vec<f64>>; 2],
    /// Combined gradients w.r.t. the temporal projections of each view.
    pub grad_m: [Vec<Vec<f64>>; 2],
}

/// `L_sc + λ_tc · L_tc`. The temporal term is always evaluated so it can be
/// logged; with `λ_tc = 0` it contributes no gradient.
pub fn pretrain_loss(
    z: [&[Vec<f64>]; 2],
    m: [&[Vec<f64>]; 2],
    tau_ins: f64,
    temporal: &TemporalParams,
    lambda_tc: f64,
    seed: u64,
) -> Result<PretrainLoss> {
    let spatial = spatial_info_nce(z[0], z[1], tau_ins)?;
    let tl = temporal_loss(m[0], m[1], temporal, seed)?;
    let scale = |g: &[Vec<f64>]| -> Vec<Vec<f64>> {
        g.iter().map(|r| r.iter().map(|x| lambda_tc * x).collect()).collect()
    };
    Ok(PretrainLoss {
        total: spatial.loss + lambda_tc * tl.loss,
        grad_z: [spatial.grad_a.clone(), spatial.grad_b.clone()],
        grad_m: [scale(&tl.grad_m), scale(&tl.grad_m2)],
        spatial,
        temporal: tl,
        lambda_tc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, &[]);
        (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect()).collect()
    }

    fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
        let mut ab = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for i in 0..a.len() {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        ab / (aa.sqrt() * bb.sqrt())
    }

    /// Double-loop InfoNCE with no log-sum-exp tricks.
    fn naive_info_nce(z: &[Vec<f64>], tau: f64) -> f64 {
        let m = z.len();
        let n = m / 2;
        let mut total = 0.0;
        for i in 0..m {
            let j = if i < n { i + n } else { i - n };
            let num = (naive_cos(&z[i], &z[j]) / tau).exp();
            let mut den = 0.0;
            for k in 0..m {
                if k != i {
                    den += (naive_cos(&z[i], &z[k]) / tau).exp();
                }
            }
            total += -(num / den).ln();
        }
        total / m as f64
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 5.0];
        assert!((cosine_sim(&v, &v) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert!((cosine_sim(&[1.0, 0.0], &[1.0, 1.0]) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn info_nce_examples() {
        let z = vec![vec![1.0, 2.0]];
        let l = spatial_info_nce(&z, &z, TAU_INS).unwrap();
        assert!(l.loss.abs() < 1e-15);
        // orthogonal except identical pairs: positive sim 1, two negatives at 0
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let l = spatial_info_nce(&a, &a, 0.1).unwrap();
        let oracle = -((10f64).exp() / ((10f64).exp() + 2.0)).ln();
        for x in &l.per_anchor {
            assert!((x - oracle).abs() < 1e-12);
        }
        // four mutually orthogonal embeddings
        let a = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let b = vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]];
        let l = spatial_info_nce(&a, &b, 0.1).unwrap();
        assert!((l.loss - 3f64.ln()).abs() < 1e-12);
        assert!(spatial_info_nce(&[], &[], 0.1).is_err());
    }

    #[test]
    fn info_nce_matches_naive_oracle() {
        let z = randn(8, 16, 3);
        let l = spatial_info_nce(&z[..4], &z[4..], TAU_INS).unwrap();
        assert!((l.loss - naive_info_nce(&z, TAU_INS)).abs() < 1e-9);
    }

    fn fd_rows(f: &dyn Fn(&[Vec<f64>]) -> f64, x: &[Vec<f64>], g: &[Vec<f64>]) {
        let eps = 1e-6;
        for i in 0..x.len() {
            for j in (0..x[i].len()).step_by(3) {
                let mut xp = x.to_vec();
                xp[i][j] += eps;
                let up = f(&xp);
                xp[i][j] -= 2.0 * eps;
                let dn = f(&xp);
                let num = (up - dn) / (2.0 * eps);
                let rel = (num - g[i][j]).abs() / num.abs().max(g[i][j].abs()).max(1e-6);
                assert!(rel < 1e-4, "[{i}][{j}] analytic {} numeric {num}", g[i][j]);
            }
        }
    }

    #[test]
    fn info_nce_gradient() {
        let z = randn(6, 10, 4);
        let l = spatial_info_nce(&z[..3], &z[3..], TAU_INS).unwrap();
        let g: Vec<Vec<f64>> = l.grad_a.iter().chain(&l.grad_b).cloned().collect();
        fd_rows(&|x| spatial_info_nce(&x[..3], &x[3..], TAU_INS).unwrap().loss, &z, &g);
    }

    #[test]
    fn kmeans_trivial_cases() {
        let pts = randn(5, 3, 1);
        let c = kmeans(&pts, 5, 0, 50).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut a = c.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 5);
        // unit square, elongated so the split is unique
        let sq = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![3.0, 0.0], vec![3.0, 1.0]];
        for seed in 0..10 {
            let c = kmeans(&sq, 2, seed, 50).unwrap();
            let mut cs = c.centroids.clone();
            cs.sort_by(|x, y| x[0].partial_cmp(&y[0]).unwrap());
            assert_eq!(cs, vec![vec![0.0, 0.5], vec![3.0, 0.5]]);
        }
        assert!(kmeans(&sq, 5, 0, 50).is_err());
        assert!(kmeans(&sq, 0, 0, 50).is_err());
    }

    #[test]
    fn kmeans_symmetric_square_splits_along_an_edge() {
        let sq = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        for seed in 0..20 {
            let c = kmeans(&sq, 2, seed, 50).unwrap();
            assert!((c.inertia - 1.0).abs() < 1e-12, "seed {seed}: {c:?}");
            let mids = [[0.0, 0.5], [1.0, 0.5], [0.5, 0.0], [0.5, 1.0]];
            for cen in &c.centroids {
                assert!(mids.iter().any(|m| m[0] == cen[0] && m[1] == cen[1]));
            }
        }
    }

    /// Plain Lloyd from uniformly sampled initial centroids.
    fn naive_lloyd(p: &[Vec<f64>], k: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, &[77]);
        let mut idx: Vec<usize> = (0..p.len()).collect();
        for i in 0..k {
            let j = r.gen_range(i..p.len());
            idx.swap(i, j);
        }
        let mut c: Vec<Vec<f64>> = idx[..k].iter().map(|&i| p[i].clone()).collect();
        let mut lab = vec![0; p.len()];
        for _ in 0..50 {
            for (i, x) in p.iter().enumerate() {
                lab[i] = (0..k).min_by(|&a, &b| sq_dist(x, &c[a]).partial_cmp(&sq_dist(x, &c[b])).unwrap()).unwrap();
            }
            for (kk, ck) in c.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = p.iter().zip(&lab).filter(|(_, &l)| l == kk).map(|(x, _)| x).collect();
                if !members.is_empty() {
                    for j in 0..ck.len() {
                        ck[j] = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
        }
        p.iter().zip(&lab).map(|(x, &l)| sq_dist(x, &c[l])).sum()
    }

    #[test]
    fn kmeans_beats_worst_naive_restart_and_is_monotone() {
        let pts = randn(64, 8, 9);
        let c = kmeans(&pts, 10, 42, 50).unwrap();
        let worst = (0..10).map(|s| naive_lloyd(&pts, 10, s)).fold(0.0, f64::max);
        assert!(c.inertia <= worst, "{} > {worst}", c.inertia);
        assert!(c.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(kmeans(&pts, 10, 42, 50).unwrap(), c);
        // every point sits at its nearest centroid
        for (p, &a) in pts.iter().zip(&c.assignments) {
            let d = sq_dist(p, &c.centroids[a]);
            assert!(c.centroids.iter().all(|cc| sq_dist(p, cc) >= d));
        }
    }

    #[test]
    fn kmeans_repairs_empty_clusters_with_duplicates() {
        let mut pts = vec![vec![0.0, 0.0]; 6];
        pts.push(vec![5.0, 5.0]);
        let c = kmeans(&pts, 3, 1, 50).unwrap();
        assert!(c.centroids.iter().flatten().all(|x| x.is_finite()));
        assert_eq!(c.inertia, 0.0);
    }

    /// Double-loop cluster NCE.
    fn naive_cluster_nce(m: &[Vec<f64>], c: &[Vec<f64>], pos: &[usize], tau: f64) -> Vec<f64> {
        m.iter()
            .zip(pos)
            .map(|(x, &p)| {
                let num = (naive_cos(x, &c[p]) / tau).exp();
                let den: f64 = c.iter().map(|ck| (naive_cos(x, ck) / tau).exp()).sum();
                -(num / den).ln()
            })
            .collect()
    }

    #[test]
    fn cluster_nce_examples() {
        let m = randn(4, 5, 2);
        let one = cluster_nce(&m, &[vec![1.0; 5]], &[0; 4], TAU_CA).unwrap();
        assert!(one.per_item.iter().all(|&x| x.abs() < 1e-15));
        let mut cents = vec![vec![0.0; 10]; 10];
        for (k, c) in cents.iter_mut().enumerate() {
            c[k] = 1.0;
        }
        let l = cluster_nce(&[cents[3].clone()], &cents, &[3], 0.5).unwrap();
        let e2 = 2f64.exp();
        assert!((l.per_item[0] + (e2 / (e2 + 9.0)).ln()).abs() < 1e-12);
        let c = randn(6, 5, 3);
        let pos = [0, 5, 2, 2];
        let l = cluster_nce(&m, &c, &pos, TAU_CA).unwrap();
        for (a, b) in l.per_item.iter().zip(naive_cluster_nce(&m, &c, &pos, TAU_CA)) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(cluster_nce(&m, &[], &[], TAU_CA).is_err());
    }

    fn entropy(p: &[f64]) -> f64 {
        -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
    }

    #[test]
    fn mutual_information_examples() {
        let k = 4;
        let uni = vec![vec![0.25; k]; 8];
        assert!(mutual_information_of(&joint_matrix(&uni, &uni)).abs() < 1e-15);
        let onehot: Vec<Vec<f64>> = (0..8).map(|i| (0..k).map(|c| (c == i % k) as u8 as f64).collect()).collect();
        let i = mutual_information_of(&joint_matrix(&onehot, &onehot));
        assert!((i - (k as f64).ln()).abs() < 1e-12);
        // entropy decomposition oracle on random soft assignments
        let mut r = rng::stream(5, &[]);
        let mut rand_rows = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let mut v: Vec<f64> = (0..k).map(|_| r.gen_range(-2.0..2.0)).collect();
                    softmax_in_place(&mut v);
                    v
                })
                .collect()
        };
        let (a, b) = (rand_rows(16), rand_rows(16));
        let p = joint_matrix(&a, &b);
        let i = mutual_information_of(&p);
        let (pi, qj) = marginals(&p);
        let flat: Vec<f64> = p.iter().flatten().copied().collect();
        let oracle = entropy(&pi) + entropy(&qj) - entropy(&flat);
        assert!((i - oracle).abs() < 1e-12);
        assert!(i >= 0.0 && i <= entropy(&pi).min(entropy(&qj)) + 1e-12);
    }

    #[test]
    fn mutual_information_zero_when_factorized() {
        // every row identical -> P = outer(a, b)
        let a = vec![vec![0.1, 0.6, 0.3]; 5];
        let b = vec![vec![0.5, 0.2, 0.3]; 5];
        assert!(mutual_information_of(&joint_matrix(&a, &b)).abs() < 1e-14);
    }

    #[test]
    fn temporal_loss_single_cluster_is_zero() {
        let m = randn(6, 8, 1);
        let m2 = randn(6, 8, 2);
        let p = TemporalParams { k: 1, ..Default::default() };
        let l = temporal_loss(&m, &m2, &p, 0).unwrap();
        assert!(l.loss.abs() < 1e-12 && l.mi.abs() < 1e-12);
    }

    #[test]
    fn temporal_loss_gradient_with_frozen_centroids() {
        let m = randn(12, 9, 1);
        let m2 = randn(12, 9, 2);
        let p = TemporalParams { k: 4, ..Default::default() };
        let l = temporal_loss(&m, &m2, &p, 7).unwrap();
        let (cu, cv) = (l.clusters_u.clone(), l.clusters_v.clone());
        fd_rows(&|x| temporal_loss_given(x, &m2, cu.clone(), cv.clone(), &p).unwrap().loss, &m, &l.grad_m);
        fd_rows(&|x| temporal_loss_given(&m, x, cu.clone(), cv.clone(), &p).unwrap().loss, &m2, &l.grad_m2);
        let again = temporal_loss(&m, &m2, &p, 7).unwrap();
        assert_eq!(again.loss, l.loss);
    }

    #[test]
    fn mi_gradient_alone() {
        let m = randn(10, 6, 3);
        let m2 = randn(10, 6, 4);
        let u = randn(3, 6, 5);
        let v = randn(3, 6, 6);
        let (_, g, g2) = mutual_information_grad(&m, &m2, &u, &v, 0.5);
        fd_rows(&|x| mutual_information(x, &m2, &u, &v, 0.5), &m, &g);
        fd_rows(&|x| mutual_information(&m, x, &u, &v, 0.5), &m2, &g2);
    }

    #[test]
    fn soft_cross_entropy_examples() {
        let y = vec![vec![0.0, 1.0]];
        assert_eq!(soft_cross_entropy(&y, &y).unwrap(), 0.0);
        let half = vec![vec![0.5, 0.5]];
        let l = soft_cross_entropy(&half, &[soft_target(0.7)]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let oracle = -(0.3 * 0.5f64.ln() + 0.7 * 0.5f64.ln());
        assert!((l - oracle).abs() < 1e-15);
        assert!(soft_cross_entropy(&half, &[vec![0.5, 0.6]]).is_err());
        // clamp keeps the loss finite
        let l = soft_cross_entropy(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn soft_cross_entropy_logit_gradient() {
        let logits = randn(4, 2, 8);
        let t: Vec<Vec<f64>> = [0.0, 0.3, 0.9, 1.0].iter().map(|&p| soft_target(p)).collect();
        let (_, g) = soft_cross_entropy_logits(&logits, &t).unwrap();
        fd_rows(&|x| soft_cross_entropy_logits(x, &t).unwrap().0, &logits, &g);
    }

    #[test]
    fn pretrain_loss_is_linear_in_lambda() {
        let z = randn(24, 8, 1);
        let m = randn(24, 8, 2);
        let tp = TemporalParams::default();
        let at = |lam| pretrain_loss([&z[..12], &z[12..]], [&m[..12], &m[12..]], TAU_INS, &tp, lam, 3).unwrap();
        let (l0, l1, l2) = (at(0.0), at(1.0), at(2.5));
        assert_eq!(l0.total, l0.spatial.loss);
        assert!((l1.total - (l1.spatial.loss + l1.temporal.loss)).abs() < 1e-12);
        assert!((l2.total - l0.total - 2.5 * l1.temporal.loss).abs() < 1e-12);
        assert!(l0.grad_m[0].iter().flatten().all(|&x| x == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn info_nce_is_permutation_equivariant(seed in 0u64..1000, rot in 1usize..5) {
            let z = randn(10, 6, seed);
            let (a, b) = z.split_at(5);
            let base = spatial_info_nce(a, b, TAU_INS).unwrap();
            let mut pa = a.to_vec();
            let mut pb = b.to_vec();
            pa.rotate_left(rot);
            pb.rotate_left(rot);
            let perm = spatial_info_nce(&pa, &pb, TAU_INS).unwrap();
            prop_assert!((base.loss - perm.loss).abs() < 1e-12);
            for i in 0..5 {
                prop_assert!((base.per_anchor[(i + rot) % 5] - perm.per_anchor[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn mutual_information_is_bounded(seed in 0u64..1000, k in 1usize..6) {
            let m = randn(12, 5, seed);
            let m2 = randn(12, 5, seed + 1);
            let u = randn(k, 5, seed + 2);
            let v = randn(k, 5, seed + 3);
            let i = mutual_information(&m, &m2, &u, &v, 0.5);
            prop_assert!(i >= 0.0 && i <= (k as f64).ln() + 1e-12);
        }

        #[test]
        fn kmeans_trace_is_monotone(seed in 0u64..1000, k in 1usize..8) {
            let pts = randn(30, 4, seed);
            let c = kmeans(&pts, k, seed, 50).unwrap();
            prop_assert!(c.trace.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(c.assignments.len(), 30);
        }
    }
}
