//! Rigid 3D-3D registration: closed-form Umeyama, RANSAC, trimmed ICP and
//! a GNC-TLS robust solver.
//!
//! Every solver returns the transform mapping query-camera points into
//! database-camera coordinates. Scale is always 1.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rstar::primitives::GeomWithData;
use rstar::RTree;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rng::{self, purpose};

pub const DEFAULT_RANSAC_THRESHOLD: f64 = 0.05;
pub const DEFAULT_RANSAC_ITERS: usize = 1000;
pub const DEFAULT_GNC_FACTOR: f64 = 1.4;
pub const DEFAULT_NOISE_BOUND: f64 = 0.05;
pub const RANSAC_EARLY_EXIT: f64 = 0.9;
/// Scatter matrices whose second eigenvalue falls below this fraction of
/// the first are treated as collinear.
const DEGENERACY_RATIO: f64 = 1e-12;
/// Guard against a schedule that never reaches the stopping value.
const GNC_MAX_OUTER: usize = 1000;
/// Inlier-set refits after RANSAC/GNC selection.
const CONSENSUS_REFITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence3D {
    pub p_query: Vector3<f64>,
    pub p_db: Vector3<f64>,
}

impl Correspondence3D {
    pub fn new(p_query: Vector3<f64>, p_db: Vector3<f64>) -> Self {
        Correspondence3D { p_query, p_db }
    }

    pub fn residual(&self, pose: &Pose) -> f64 {
        (pose.transform_point(&self.p_query) - self.p_db).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub inlier_indices: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub mean_inlier_residual: f64,
}

pub fn umeyama(corrs: &[Correspondence3D]) -> Result<Pose> {
    umeyama_weighted(corrs, None)
}

/// Weighted least-squares rigid fit via the SVD of the cross-covariance,
/// with the reflection case corrected through the determinant sign.
pub fn umeyama_weighted(corrs: &[Correspondence3D], weights: Option<&[f64]>) -> Result<Pose> {
    if corrs.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: corrs.len(),
        });
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..corrs.len()).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateConfiguration);
    }
    let mut cq = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for (i, c) in corrs.iter().enumerate() {
        cq += w(i) * c.p_query;
        cd += w(i) * c.p_db;
    }
    cq /= total;
    cd /= total;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (i, c) in corrs.iter().enumerate() {
        let a = c.p_query - cq;
        let b = c.p_db - cd;
        scatter += w(i) * a * a.transpose();
        cross += w(i) * a * b.transpose();
    }
    let mut eig = SymmetricEigen::new(scatter).eigenvalues;
    eig.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] < DEGENERACY_RATIO * eig[0] {
        return Err(Error::DegenerateConfiguration);
    }

    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = Pose::from_rotation_matrix(&r, Vector3::zeros());
    // translation from the re-orthonormalized rotation
    let t = cd - rotation.transform_point(&cq);
    Ok(Pose::new(rotation.rotation, t))
}

fn inliers_within(corrs: &[Correspondence3D], pose: &Pose, threshold: f64) -> Vec<usize> {
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| c.residual(pose) < threshold)
        .map(|(i, _)| i)
        .collect()
}

fn subset(corrs: &[Correspondence3D], idx: &[usize]) -> Vec<Correspondence3D> {
    idx.iter().map(|&i| corrs[i]).collect()
}

fn mean_residual(corrs: &[Correspondence3D], idx: &[usize], pose: &Pose) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().map(|&i| corrs[i].residual(pose)).sum::<f64>() / idx.len() as f64
}

/// Refit on the inlier set and re-select inliers until the set settles, so
/// that every reported inlier sits within `threshold` of the final pose.
fn settle_consensus(
    corrs: &[Correspondence3D],
    mut pose: Pose,
    mut inliers: Vec<usize>,
    threshold: f64,
) -> Result<(Pose, Vec<usize>)> {
    for _ in 0..CONSENSUS_REFITS {
        let refit = umeyama(&subset(corrs, &inliers))?;
        let next = inliers_within(corrs, &refit, threshold);
        if next.len() < 3 {
            break;
        }
        pose = refit;
        if next == inliers {
            break;
        }
        inliers = next;
    }
    let inliers = inliers_within(corrs, &pose, threshold);
    if inliers.len() < 3 {
        return Err(Error::RegistrationFailed(format!(
            "only {} inliers after refit",
            inliers.len()
        )));
    }
    Ok((pose, inliers))
}

fn sample_triple(rng: &mut impl Rng, n: usize) -> [usize; 3] {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut c = rng.random_range(0..n - 2);
    if c >= lo {
        c += 1;
    }
    if c >= hi {
        c += 1;
    }
    [a, b, c]
}

/// Minimal-sample RANSAC. Hypotheses are scored in sampling order and the
/// first hypothesis with the largest consensus wins.
pub fn ransac_register(
    corrs: &[Correspondence3D],
    inlier_threshold: f64,
    max_iters: usize,
    seed: u64,
) -> Result<RegistrationResult> {
    if corrs.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: corrs.len(),
        });
    }
    if !(inlier_threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inlier threshold must be positive, got {inlier_threshold}"
        )));
    }
    let mut rng = rng::stream(seed, &[purpose::RANSAC]);
    let n = corrs.len();
    let mut best: Option<(Pose, Vec<usize>)> = None;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iters {
        iterations += 1;
        let [a, b, c] = sample_triple(&mut rng, n);
        let Ok(hyp) = umeyama(&[corrs[a], corrs[b], corrs[c]]) else {
            continue;
        };
        let inl = inliers_within(corrs, &hyp, inlier_threshold);
        if best.as_ref().is_none_or(|(_, b)| inl.len() > b.len()) {
            let done = inl.len() as f64 >= RANSAC_EARLY_EXIT * n as f64;
            best = Some((hyp, inl));
            if done {
                converged = true;
                break;
            }
        }
    }
    let (pose, inliers) = match best {
        Some((p, inl)) if inl.len() >= 3 => (p, inl),
        _ => {
            return Err(Error::RegistrationFailed(
                "no hypothesis reached 3 inliers".into(),
            ))
        }
    };
    let (pose, inliers) = settle_consensus(corrs, pose, inliers, inlier_threshold)?;
    Ok(RegistrationResult {
        mean_inlier_residual: mean_residual(corrs, &inliers, &pose),
        pose,
        inlier_indices: inliers,
        iterations,
        converged,
    })
}

type IndexedPoint = GeomWithData<[f64; 3], usize>;

fn trimmed_pairs(
    tree: &RTree<IndexedPoint>,
    query: &[Vector3<f64>],
    pose: &Pose,
) -> (Vec<(usize, usize)>, Vec<f64>, f64) {
    let mut pairs = Vec::with_capacity(query.len());
    let mut dists = Vec::with_capacity(query.len());
    for (i, q) in query.iter().enumerate() {
        let p = pose.transform_point(q);
        let nn = tree
            .nearest_neighbor([p.x, p.y, p.z])
            .expect("tree is nonempty");
        let g = nn.geom();
        let d = (Vector3::new(g[0], g[1], g[2]) - p).norm();
        pairs.push((i, nn.data));
        dists.push(d);
    }
    let mut sorted = dists.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let gate = 2.0 * median;
    let mut kept = Vec::new();
    let mut kept_d = Vec::new();
    for (pair, d) in pairs.into_iter().zip(dists) {
        if d <= gate {
            kept.push(pair);
            kept_d.push(d);
        }
    }
    let mean = kept_d.iter().sum::<f64>() / kept_d.len() as f64;
    (kept, kept_d, mean)
}

/// Point-to-point ICP with a per-iteration trim at twice the median
/// nearest-neighbor distance. A step that would raise the trimmed mean is
/// rejected, which makes the trimmed mean non-increasing.
pub fn icp_refine(
    query_cloud: &[Vector3<f64>],
    db_cloud: &[Vector3<f64>],
    init: &Pose,
    max_iters: usize,
    tol: f64,
) -> Result<RegistrationResult> {
    icp_traced(query_cloud, db_cloud, init, max_iters, tol).map(|(r, _)| r)
}

fn icp_traced(
    query_cloud: &[Vector3<f64>],
    db_cloud: &[Vector3<f64>],
    init: &Pose,
    max_iters: usize,
    tol: f64,
) -> Result<(RegistrationResult, Vec<f64>)> {
    if query_cloud.is_empty() || db_cloud.is_empty() {
        return Err(Error::InvalidArgument("ICP needs two nonempty clouds".into()));
    }
    if !init.is_finite() {
        return Err(Error::InvalidArgument("ICP initial pose is not finite".into()));
    }
    let tree = RTree::bulk_load(
        db_cloud
            .iter()
            .enumerate()
            .map(|(i, p)| IndexedPoint::new([p.x, p.y, p.z], i))
            .collect(),
    );
    let mut pose = *init;
    let (mut pairs, mut dists, mut mean) = trimmed_pairs(&tree, query_cloud, &pose);
    let mut history = vec![mean];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let corrs: Vec<Correspondence3D> = pairs
            .iter()
            .map(|&(q, d)| Correspondence3D::new(query_cloud[q], db_cloud[d]))
            .collect();
        let Ok(next) = umeyama(&corrs) else {
            converged = true;
            break;
        };
        let (np, nd, nm) = trimmed_pairs(&tree, query_cloud, &next);
        if nm > mean {
            converged = true;
            break;
        }
        let improvement = mean - nm;
        pose = next;
        pairs = np;
        dists = nd;
        mean = nm;
        history.push(mean);
        if improvement < tol {
            converged = true;
            break;
        }
    }
    let _ = dists;
    let result = RegistrationResult {
        pose,
        inlier_indices: pairs.iter().map(|p| p.0).collect(),
        iterations,
        converged,
        mean_inlier_residual: mean,
    };
    Ok((result, history))
}

/// Truncated least-squares cost `sum_j min(r_j^2 / c^2, 1)`.
pub fn truncated_cost(corrs: &[Correspondence3D], pose: &Pose, noise_bound: f64) -> f64 {
    corrs
        .iter()
        .map(|c| (c.residual(pose).powi(2) / (noise_bound * noise_bound)).min(1.0))
        .sum()
}

/// Closed-form GNC weight for the TLS surrogate. `nu` is the control
/// parameter: large values give a convex surrogate, and as it shrinks toward
/// 1 the weights sharpen toward a hard inlier/outlier split.
fn gnc_weight(r2: f64, c2: f64, nu: f64) -> f64 {
    let mu = 1.0 / nu;
    let lower = mu / (mu + 1.0) * c2;
    let upper = (mu + 1.0) / mu * c2;
    if r2 <= lower {
        1.0
    } else if r2 >= upper {
        0.0
    } else {
        (c2 / r2).sqrt() * (mu * (mu + 1.0)).sqrt() - mu
    }
}

pub fn gnc_tls_register(corrs: &[Correspondence3D], noise_bound: f64) -> Result<RegistrationResult> {
    gnc_traced(corrs, noise_bound, DEFAULT_GNC_FACTOR).map(|(r, _)| r)
}

/// GNC-TLS with an explicit division factor for the control parameter.
pub fn gnc_tls_register_with(
    corrs: &[Correspondence3D],
    noise_bound: f64,
    factor: f64,
) -> Result<RegistrationResult> {
    gnc_traced(corrs, noise_bound, factor).map(|(r, _)| r)
}

fn gnc_traced(
    corrs: &[Correspondence3D],
    noise_bound: f64,
    factor: f64,
) -> Result<(RegistrationResult, Vec<f64>)> {
    if !(noise_bound > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise bound must be positive, got {noise_bound}"
        )));
    }
    if !(factor > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "GNC factor must exceed 1, got {factor}"
        )));
    }
    if corrs.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: corrs.len(),
        });
    }
    let c2 = noise_bound * noise_bound;
    let mut pose = umeyama(corrs)?;
    let mut cost = truncated_cost(corrs, &pose, noise_bound);
    let mut history = vec![cost];
    let r2max = corrs
        .iter()
        .map(|c| c.residual(&pose).powi(2))
        .fold(0.0, f64::max);
    let mut nu = 2.0 * r2max / c2 - 1.0;
    let mut weights = vec![1.0; corrs.len()];
    let mut iterations = 0;
    while nu > 1.0 && iterations < GNC_MAX_OUTER {
        iterations += 1;
        for (w, c) in weights.iter_mut().zip(corrs) {
            *w = gnc_weight(c.residual(&pose).powi(2), c2, nu);
        }
        if let Ok(next) = umeyama_weighted(corrs, Some(&weights)) {
            let next_cost = truncated_cost(corrs, &next, noise_bound);
            // a step that raises the TLS cost is not taken
            if next_cost <= cost {
                pose = next;
                cost = next_cost;
            }
        }
        history.push(cost);
        nu /= factor;
    }
    // final weights at the last pose, evaluated at the terminal parameter
    let nu_final = nu.max(1.0);
    let selected: Vec<usize> = corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| gnc_weight(c.residual(&pose).powi(2), c2, nu_final) > 0.5)
        .map(|(i, _)| i)
        .collect();
    if selected.len() < 3 {
        return Err(Error::RegistrationFailed(format!(
            "{} correspondences survived weighting",
            selected.len()
        )));
    }
    // inliers are reported at residual < noise bound under the refit pose
    let (pose, inliers) = settle_consensus(corrs, pose, selected, noise_bound)
        .map_err(|e| match e {
            Error::DegenerateConfiguration => {
                Error::RegistrationFailed("inlier set is degenerate".into())
            }
            e => e,
        })?;
    let result = RegistrationResult {
        mean_inlier_residual: mean_residual(corrs, &inliers, &pose),
        pose,
        inlier_indices: inliers,
        iterations,
        converged: nu <= 1.0,
    };
    Ok((result, history))
}

/// One correspondence per line: `qx qy qz dx dy dz`.
pub fn write_correspondences(corrs: &[Correspondence3D]) -> String {
    let mut out = String::new();
    for c in corrs {
        let (q, d) = (c.p_query, c.p_db);
        writeln!(
            out,
            "{:e} {:e} {:e} {:e} {:e} {:e}",
            q.x, q.y, q.z, d.x, d.y, d.z
        )
        .unwrap();
    }
    out
}

pub fn parse_correspondences(text: &str, path: &Path) -> Result<Vec<Correspondence3D>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, format!("line {}: bad number", n + 1)))?;
            if v.len() != 6 {
                return Err(Error::format(path, format!("line {}: expected 6 values", n + 1)));
            }
            Ok(Correspondence3D::new(
                Vector3::new(v[0], v[1], v[2]),
                Vector3::new(v[3], v[4], v[5]),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_error, translation_error, UnitQuaternion};
    use rand_distr::{Distribution, Normal};

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let q = UnitQuaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        Pose::new(q, t)
    }

    fn random_point(rng: &mut impl Rng, half: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            rng.random_range(-half..half),
        )
    }

    /// `n` correspondences under `gt`, the first `n_out` replaced by
    /// uniform outliers in a 10 m cube, inliers perturbed by `noise`.
    fn corrupted(seed: u64, n: usize, n_out: usize, noise: f64) -> (Pose, Vec<Correspondence3D>) {
        let mut rng = rng::stream(seed, &[900]);
        let gt = random_pose(&mut rng);
        let normal = Normal::<f64>::new(0.0, noise.max(1e-300)).unwrap();
        let corrs = (0..n)
            .map(|i| {
                let q = random_point(&mut rng, 2.0);
                let d = if i < n_out {
                    random_point(&mut rng, 5.0)
                } else if noise > 0.0 {
                    gt.transform_point(&q)
                        + Vector3::new(
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                        )
                } else {
                    gt.transform_point(&q)
                };
                Correspondence3D::new(q, d)
            })
            .collect();
        (gt, corrs)
    }

    fn sum_sq(corrs: &[Correspondence3D], pose: &Pose) -> f64 {
        corrs.iter().map(|c| c.residual(pose).powi(2)).sum()
    }

    #[test]
    fn umeyama_trivial_cases() {
        let mut rng = rng::stream(1, &[]);
        let pts: Vec<_> = (0..10).map(|_| random_point(&mut rng, 1.0)).collect();
        let same: Vec<_> = pts.iter().map(|p| Correspondence3D::new(*p, *p)).collect();
        let p = umeyama(&same).unwrap();
        assert!(p.translation.norm() < 1e-12 && p.rotation.angle() < 1e-9);
        let shift = Vector3::new(1.0, 2.0, 3.0);
        let moved: Vec<_> = pts.iter().map(|p| Correspondence3D::new(*p, p + shift)).collect();
        let p = umeyama(&moved).unwrap();
        assert!((p.translation - shift).norm() < 1e-12);
        assert!(rotation_error(&p, &Pose::identity()) < 1e-9);
    }

    #[test]
    fn umeyama_error_paths() {
        let c = Correspondence3D::new(Vector3::zeros(), Vector3::zeros());
        assert!(matches!(
            umeyama(&[c, c]),
            Err(Error::InsufficientPoints { needed: 3, got: 2 })
        ));
        let line: Vec<_> = (0..5)
            .map(|i| {
                let p = Vector3::new(i as f64, 2.0 * i as f64, 0.5);
                Correspondence3D::new(p, p)
            })
            .collect();
        assert!(matches!(umeyama(&line), Err(Error::DegenerateConfiguration)));
    }

    #[test]
    fn umeyama_recovers_random_transforms() {
        let mut rng = rng::stream(2, &[]);
        for _ in 0..1000 {
            let gt = random_pose(&mut rng);
            let corrs: Vec<_> = (0..50)
                .map(|_| {
                    let q = random_point(&mut rng, 2.0);
                    Correspondence3D::new(q, gt.transform_point(&q))
                })
                .collect();
            let p = umeyama(&corrs).unwrap();
            assert!(translation_error(&p, &gt) < 1e-9);
            assert!(rotation_error(&p, &gt) < 1e-7);
            let r = p.rotation_matrix();
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn umeyama_left_invariance() {
        let mut rng = rng::stream(3, &[]);
        for _ in 0..50 {
            let gt = random_pose(&mut rng);
            let g = random_pose(&mut rng);
            let qs: Vec<_> = (0..20).map(|_| random_point(&mut rng, 2.0)).collect();
            let corrs: Vec<_> = qs.iter().map(|q| Correspondence3D::new(*q, gt.transform_point(q))).collect();
            let moved: Vec<_> = corrs
                .iter()
                .map(|c| Correspondence3D::new(g.transform_point(&c.p_query), g.transform_point(&c.p_db)))
                .collect();
            let p = umeyama(&corrs).unwrap();
            let pg = umeyama(&moved).unwrap();
            let expect = g.compose(&p).compose(&g.inverse());
            assert!(translation_error(&pg, &expect) < 1e-6);
            assert!(rotation_error(&pg, &expect) < 1e-6);
        }
    }

    #[test]
    fn umeyama_is_least_squares_optimal() {
        let (_, corrs) = corrupted(4, 40, 10, 0.05);
        let p = umeyama(&corrs).unwrap();
        let best = sum_sq(&corrs, &p);
        let mut rng = rng::stream(5, &[]);
        for _ in 0..100 {
            assert!(best <= sum_sq(&corrs, &random_pose(&mut rng)));
        }
        // and no nearby perturbation does better
        for k in 0..100 {
            let axis = random_point(&mut rng, 1.0);
            let d = Pose::new(
                UnitQuaternion::from_axis_angle(axis, 1e-3 * (k % 10 + 1) as f64),
                random_point(&mut rng, 1e-3),
            );
            assert!(best <= sum_sq(&corrs, &d.compose(&p)) + 1e-12);
        }
    }

    #[test]
    fn weighted_umeyama_ignores_zero_weights() {
        let (gt, mut corrs) = corrupted(6, 30, 0, 0.0);
        let mut w = vec![1.0; 30];
        for i in 0..10 {
            corrs[i].p_db += Vector3::new(3.0, -1.0, 0.5);
            w[i] = 0.0;
        }
        let p = umeyama_weighted(&corrs, Some(&w)).unwrap();
        assert!(translation_error(&p, &gt) < 1e-9);
        assert!(matches!(
            umeyama_weighted(&corrs, Some(&[0.0; 30])),
            Err(Error::DegenerateConfiguration)
        ));
    }

    #[test]
    fn ransac_without_outliers_equals_umeyama() {
        let (_, corrs) = corrupted(7, 60, 0, 0.0);
        let r = ransac_register(&corrs, 0.05, 1000, 1).unwrap();
        let p = umeyama(&corrs).unwrap();
        assert!(translation_error(&r.pose, &p) < 1e-9);
        assert!(rotation_error(&r.pose, &p) < 1e-7);
        assert_eq!(r.inlier_indices.len(), 60);
        assert!(r.converged);
    }

    #[test]
    fn ransac_recovers_under_sixty_percent_outliers() {
        for seed in 0..20 {
            let (gt, corrs) = corrupted(100 + seed, 100, 60, 0.005);
            let r = ransac_register(&corrs, 0.05, 1000, seed).unwrap();
            assert!(translation_error(&r.pose, &gt) < 0.01, "seed {seed}");
            assert!(rotation_error(&r.pose, &gt) < 0.5, "seed {seed}");
            for &i in &r.inlier_indices {
                assert!(corrs[i].residual(&r.pose) <= 0.05);
            }
        }
    }

    #[test]
    fn ransac_error_paths_and_determinism() {
        let (_, corrs) = corrupted(8, 100, 60, 0.005);
        assert!(matches!(
            ransac_register(&corrs[..2], 0.05, 10, 0),
            Err(Error::InsufficientPoints { .. })
        ));
        let a = ransac_register(&corrs, 0.05, 300, 42).unwrap();
        let b = ransac_register(&corrs, 0.05, 300, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pose.to_string(), b.pose.to_string());
        // pure noise with a tiny threshold has no consensus
        let (_, junk) = corrupted(9, 30, 30, 0.0);
        assert!(matches!(
            ransac_register(&junk, 1e-6, 50, 0),
            Err(Error::RegistrationFailed(_))
        ));
    }

    #[test]
    fn gnc_without_outliers_equals_umeyama() {
        let (_, corrs) = corrupted(10, 50, 0, 0.0);
        let r = gnc_tls_register(&corrs, 0.05).unwrap();
        let p = umeyama(&corrs).unwrap();
        assert!(translation_error(&r.pose, &p) < 1e-9);
        assert!(rotation_error(&r.pose, &p) < 1e-7);
        assert_eq!(r.inlier_indices, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn gnc_recovers_under_seventy_percent_outliers() {
        let mut ok = 0;
        for seed in 0..20 {
            let (gt, corrs) = corrupted(200 + seed, 100, 70, 0.01);
            if let Ok(r) = gnc_tls_register(&corrs, 0.05) {
                if translation_error(&r.pose, &gt) < 0.02 && rotation_error(&r.pose, &gt) < 1.0 {
                    ok += 1;
                }
            }
        }
        assert!(ok >= 19, "{ok}/20");
    }

    #[test]
    fn gnc_cost_is_non_increasing() {
        for seed in 0..10 {
            let (_, corrs) = corrupted(300 + seed, 80, 50, 0.01);
            let (_, history) = gnc_traced(&corrs, 0.05, DEFAULT_GNC_FACTOR).unwrap();
            assert!(history.len() > 1);
            for w in history.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn gnc_error_paths() {
        let (_, corrs) = corrupted(11, 10, 0, 0.0);
        assert!(matches!(gnc_tls_register(&corrs, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(gnc_tls_register(&corrs, -1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            gnc_tls_register(&corrs[..2], 0.05),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn gnc_weights_shape() {
        let c2 = 1.0;
        assert_eq!(gnc_weight(0.0, c2, 5.0), 1.0);
        assert_eq!(gnc_weight(100.0, c2, 5.0), 0.0);
        // at nu = 1 the split sits exactly at the noise bound
        assert!((gnc_weight(1.0, c2, 1.0) - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        let mut prev = 1.0;
        for k in 0..100 {
            let w = gnc_weight(k as f64 * 0.05, c2, 3.0);
            assert!(w <= prev + 1e-15 && (0.0..=1.0).contains(&w));
            prev = w;
        }
    }

    #[test]
    fn icp_identical_clouds() {
        let mut rng = rng::stream(12, &[]);
        let cloud: Vec<_> = (0..200).map(|_| random_point(&mut rng, 2.0)).collect();
        let r = icp_refine(&cloud, &cloud, &Pose::identity(), 50, 1e-9).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.pose.translation.norm() < 1e-12 && r.pose.rotation.angle() < 1e-9);
        assert!(matches!(
            icp_refine(&[], &cloud, &Pose::identity(), 5, 1e-6),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn icp_trimmed_mean_non_increasing() {
        let mut rng = rng::stream(13, &[]);
        let cloud: Vec<_> = (0..300).map(|_| random_point(&mut rng, 2.0)).collect();
        let gt = Pose::new(
            UnitQuaternion::from_axis_angle(Vector3::new(0.3, 1.0, -0.2), 8f64.to_radians()),
            Vector3::new(0.1, -0.15, 0.05),
        );
        let moved: Vec<_> = cloud.iter().map(|p| gt.transform_point(p)).collect();
        let (r, history) = icp_traced(&cloud, &moved, &Pose::identity(), 100, 1e-12).unwrap();
        for w in history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(history.len() > 2);
        assert!(translation_error(&r.pose, &gt) < 1e-3);
        assert!(rotation_error(&r.pose, &gt) < 0.1);
    }

    #[test]
    fn correspondence_dump_round_trip() {
        let (_, corrs) = corrupted(14, 7, 2, 0.01);
        let text = write_correspondences(&corrs);
        assert_eq!(text.lines().count(), 7);
        assert_eq!(parse_correspondences(&text, Path::new("c")).unwrap(), corrs);
        let err = parse_correspondences("1 2 3\n", Path::new("dump.txt")).unwrap_err();
        assert!(err.to_string().contains("dump.txt"));
    }
}
