//! Relative camera pose from ray correspondences.
//!
//! Frames are related by `X1 = R X2 + t`; rays satisfy `p1^T E p2 = 0` with
//! `E = [t]x R`. Estimation runs RANSAC over five-point samples, each also
//! yielding a rotation-only hypothesis. When the rotation-only model
//! explains (nearly) as many correspondences as the best essential matrix,
//! the translation is unobservable and the rotation comes from a Procrustes
//! fit; otherwise the essential matrix is refined linearly and decomposed.

mod euler;
pub mod solvers;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::calib::{CameraModel, Ray};
use crate::flowfield::FlowField;
use crate::unwrap::{pano_to_omni_coords, PanoramaSpec};

pub use euler::{euler_to_matrix, rotation_to_euler};
use solvers::{decompose_essential, eight_point, five_point, procrustes, project_essential, triangulate_depths};

/// Minimum correspondences for estimation (allows the 8-point refinement).
pub const MIN_CORRESPONDENCES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("insufficient correspondences: {found} < {required}")]
    InsufficientCorrespondences { found: usize, required: usize },
    #[error("no consensus: best hypothesis has {best_inliers} inliers")]
    NoConsensus { best_inliers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayCorrespondence {
    pub p1: Ray,
    pub p2: Ray,
}

impl RayCorrespondence {
    pub fn new(p1: Ray, p2: Ray) -> Self {
        Self { p1, p2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Rotation3<f64>,
    /// Unit direction to camera 2's center in frame 1; zero when
    /// `translation_degenerate` is set.
    pub translation_dir: Vector3<f64>,
    pub translation_degenerate: bool,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
}

impl RelativePose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation_dir: Vector3::zeros(),
            translation_degenerate: true,
            inlier_count: 0,
            inlier_ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold on the angular residual, radians.
    pub threshold: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Success probability for the adaptive iteration bound.
    pub confidence: f64,
    /// Rotation-only is preferred when its inlier count reaches this
    /// fraction of the best essential-matrix count.
    pub degeneracy_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5f64.to_radians(),
            max_iterations: 1000,
            seed: 0,
            confidence: 0.99,
            degeneracy_ratio: 0.9,
        }
    }
}

/// Maps accepted flow entries to ray pairs. Entries whose panorama points
/// fall outside the annulus, or whose pixels have no ray, are dropped.
pub fn lift_correspondences(
    field: &FlowField,
    model: &CameraModel,
    spec: &PanoramaSpec,
) -> Result<Vec<RayCorrespondence>, PoseError> {
    let center = model.center();
    let h = spec.height as f64;
    let lift = |q: (f64, f64)| -> Option<Ray> {
        if !(0.0..=h).contains(&q.1) {
            return None;
        }
        model.pixel_to_ray(pano_to_omni_coords(spec, center, q)).ok()
    };
    let corrs: Vec<RayCorrespondence> = field
        .entries
        .iter()
        .filter(|e| e.accepted)
        .filter_map(|e| Some(RayCorrespondence::new(lift(e.p1)?, lift(e.p2)?)))
        .collect();
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(PoseError::InsufficientCorrespondences {
            found: corrs.len(),
            required: MIN_CORRESPONDENCES,
        });
    }
    Ok(corrs)
}

/// Rotation angle of `a^T b`, accurate near zero:
/// `|a - b|_F = 2 sqrt(2) sin(angle / 2)`.
pub fn geodesic_distance(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let d = (a.matrix() - b.matrix()).norm() / (2.0 * 2f64.sqrt());
    2.0 * d.min(1.0).asin()
}

/// Angle between `p1` and the epipolar plane of `p2`, and vice versa; the
/// larger of the two.
pub fn epipolar_residual(e: &Matrix3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>) -> f64 {
    let side = |n: Vector3<f64>, p: &Vector3<f64>| {
        let len = n.norm();
        if len < 1e-15 {
            0.0
        } else {
            (p.dot(&n).abs() / len).min(1.0).asin()
        }
    };
    side(e * p2, p1).max(side(e.transpose() * p1, p2))
}

pub fn rotation_residual(r: &Rotation3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>) -> f64 {
    let q = r * p2;
    p1.cross(&q).norm().atan2(p1.dot(&q))
}

/// Robust estimate with [`RansacConfig::default`] apart from the given values.
pub fn estimate_pose(
    corrs: &[RayCorrespondence],
    ransac_threshold: f64,
    max_iterations: usize,
    seed: u64,
) -> Result<RelativePose, PoseError> {
    let config = RansacConfig {
        threshold: ransac_threshold,
        max_iterations,
        seed,
        ..RansacConfig::default()
    };
    estimate_pose_with(corrs, &config)
}

#[derive(Clone)]
struct Hypotheses {
    essential: Option<(usize, Matrix3<f64>)>,
    rotation: (usize, Rotation3<f64>),
}

fn count_inliers(residual: impl Fn(usize) -> f64, n: usize, threshold: f64) -> usize {
    (0..n).filter(|&i| residual(i) < threshold).count()
}

pub fn estimate_pose_with(corrs: &[RayCorrespondence], config: &RansacConfig) -> Result<RelativePose, PoseError> {
    let n = corrs.len();
    if n < MIN_CORRESPONDENCES {
        return Err(PoseError::InsufficientCorrespondences {
            found: n,
            required: MIN_CORRESPONDENCES,
        });
    }
    let p1: Vec<Vector3<f64>> = corrs.iter().map(|c| *c.p1.as_vector()).collect();
    let p2: Vec<Vector3<f64>> = corrs.iter().map(|c| *c.p2.as_vector()).collect();
    let th = config.threshold;

    let hypothesis = |k: usize| -> Hypotheses {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64);
        let idx = sample(&mut rng, n, 5).into_vec();
        let s1: [Vector3<f64>; 5] = std::array::from_fn(|i| p1[idx[i]]);
        let s2: [Vector3<f64>; 5] = std::array::from_fn(|i| p2[idx[i]]);
        let mut essential: Option<(usize, Matrix3<f64>)> = None;
        for e in five_point(&s1, &s2) {
            let c = count_inliers(|i| epipolar_residual(&e, &p1[i], &p2[i]), n, th);
            if essential.as_ref().is_none_or(|(best, _)| c > *best) {
                essential = Some((c, e));
            }
        }
        let r = procrustes(&s1, &s2, None);
        let c = count_inliers(|i| rotation_residual(&r, &p1[i], &p2[i]), n, th);
        Hypotheses {
            essential,
            rotation: (c, r),
        }
    };

    // Batches run in parallel; merging in index order keeps the result
    // independent of scheduling.
    const BATCH: usize = 32;
    let mut best_e: Option<(usize, Matrix3<f64>)> = None;
    let mut best_r: (usize, Rotation3<f64>) = (0, Rotation3::identity());
    let mut done = 0;
    let mut needed = config.max_iterations;
    while done < needed.min(config.max_iterations) {
        let end = (done + BATCH).min(config.max_iterations);
        let batch: Vec<Hypotheses> = (done..end).into_par_iter().map(hypothesis).collect();
        for h in batch {
            if let Some((c, e)) = h.essential {
                if best_e.as_ref().is_none_or(|(b, _)| c > *b) {
                    best_e = Some((c, e));
                }
            }
            if h.rotation.0 > best_r.0 {
                best_r = h.rotation;
            }
        }
        done = end;
        let best = best_e.as_ref().map_or(0, |b| b.0).max(best_r.0);
        needed = adaptive_iterations(best as f64 / n as f64, config.confidence, 5);
    }

    let ess_count = best_e.as_ref().map_or(0, |b| b.0);
    let best_count = ess_count.max(best_r.0);
    if best_count < MIN_CORRESPONDENCES {
        return Err(PoseError::NoConsensus { best_inliers: best_count });
    }

    if best_r.0 as f64 >= config.degeneracy_ratio * ess_count as f64 {
        let (rotation, inliers) = refine_rotation(&p1, &p2, best_r.1, th);
        return Ok(RelativePose {
            rotation,
            translation_dir: Vector3::zeros(),
            translation_degenerate: true,
            inlier_count: inliers,
            inlier_ratio: inliers as f64 / n as f64,
        });
    }

    let (_, e0) = best_e.expect("essential count exceeds rotation count");
    let (e, inliers) = refine_essential(&p1, &p2, e0, th);
    let (rotation, t) = select_by_cheirality(&e, &p1, &p2, &inliers);
    Ok(RelativePose {
        rotation,
        translation_dir: t,
        translation_degenerate: false,
        inlier_count: inliers.len(),
        inlier_ratio: inliers.len() as f64 / n as f64,
    })
}

fn adaptive_iterations(inlier_fraction: f64, confidence: f64, sample_size: i32) -> usize {
    let good = inlier_fraction.powi(sample_size);
    if good <= 0.0 {
        return usize::MAX;
    }
    if good >= 1.0 {
        return 1;
    }
    let k = (1.0 - confidence).ln() / (1.0 - good).ln();
    if k.is_finite() {
        k.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Cauchy weights at a robust scale of the residuals; the scale floor keeps
/// exact data exact.
fn robust_weights(residuals: &[f64]) -> Vec<f64> {
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let c = (1.4826 * median).max(1e-12) * 2.385;
    residuals.iter().map(|r| 1.0 / (1.0 + (r / c).powi(2))).collect()
}

const REFINE_ROUNDS: usize = 5;

fn refine_rotation(p1: &[Vector3<f64>], p2: &[Vector3<f64>], r0: Rotation3<f64>, th: f64) -> (Rotation3<f64>, usize) {
    let inliers = |r: &Rotation3<f64>| -> Vec<usize> {
        (0..p1.len()).filter(|&i| rotation_residual(r, &p1[i], &p2[i]) < th).collect()
    };
    let mut r = r0;
    let mut set = inliers(&r);
    for _ in 0..REFINE_ROUNDS {
        let a: Vec<_> = set.iter().map(|&i| p1[i]).collect();
        let b: Vec<_> = set.iter().map(|&i| p2[i]).collect();
        let res: Vec<f64> = set.iter().map(|&i| rotation_residual(&r, &p1[i], &p2[i])).collect();
        let candidate = procrustes(&a, &b, Some(&robust_weights(&res)));
        let next = inliers(&candidate);
        if next.len() < set.len() {
            break;
        }
        r = candidate;
        set = next;
    }
    (r, set.len())
}

fn refine_essential(p1: &[Vector3<f64>], p2: &[Vector3<f64>], e0: Matrix3<f64>, th: f64) -> (Matrix3<f64>, Vec<usize>) {
    let inliers = |e: &Matrix3<f64>| -> Vec<usize> {
        (0..p1.len()).filter(|&i| epipolar_residual(e, &p1[i], &p2[i]) < th).collect()
    };
    let mut e = e0;
    let mut set = inliers(&e);
    for _ in 0..REFINE_ROUNDS {
        if set.len() < MIN_CORRESPONDENCES {
            break;
        }
        let a: Vec<_> = set.iter().map(|&i| p1[i]).collect();
        let b: Vec<_> = set.iter().map(|&i| p2[i]).collect();
        let res: Vec<f64> = set.iter().map(|&i| epipolar_residual(&e, &p1[i], &p2[i])).collect();
        let Some(raw) = eight_point(&a, &b, Some(&robust_weights(&res))) else { break };
        let candidate = project_essential(&raw);
        let next = inliers(&candidate);
        if next.len() < set.len() {
            break;
        }
        e = candidate;
        set = next;
    }
    (e, set)
}

fn select_by_cheirality(
    e: &Matrix3<f64>,
    p1: &[Vector3<f64>],
    p2: &[Vector3<f64>],
    inliers: &[usize],
) -> (Rotation3<f64>, Vector3<f64>) {
    let mut best: Option<(usize, Rotation3<f64>, Vector3<f64>)> = None;
    for (r, t) in decompose_essential(e) {
        let front = inliers
            .iter()
            .filter(|&&i| matches!(triangulate_depths(&r, &t, &p1[i], &p2[i]), Some((a, b)) if a > 0.0 && b > 0.0))
            .count();
        if best.as_ref().is_none_or(|b| front > b.0) {
            best = Some((front, r, t));
        }
    }
    let (_, mut r, t) = best.expect("four candidates");
    r.renormalize();
    (r, t.normalize())
}
