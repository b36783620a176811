//! Per-detection 7-DoF pose recovery from normalized-object-coordinate
//! correspondences.
//!
//! The pipeline is: statistical outlier removal on both clouds (keeping a
//! pair only when both endpoints survive), RANSAC over minimal 3-point
//! similarity fits, a closed-form Umeyama fit on the inlier set, and finally
//! a left-composition with the camera extrinsic.

use nalgebra::SVD;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::DetectionRecord;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Mat3, PointCloud, Pose7, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierParams {
    pub n_neighbors: usize,
    pub std_ratio: f64,
    pub ransac_iterations: usize,
    /// meters
    pub ransac_inlier_threshold: f64,
    pub min_correspondences: usize,
}

impl Default for OutlierParams {
    fn default() -> Self {
        OutlierParams {
            n_neighbors: 20,
            std_ratio: 2.0,
            ransac_iterations: 100,
            ransac_inlier_threshold: 0.01,
            min_correspondences: 3,
        }
    }
}

impl OutlierParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors < 1 {
            return Err(Error::Config("n_neighbors must be >= 1".into()));
        }
        if !(self.std_ratio > 0.0) {
            return Err(Error::Config("std_ratio must be > 0".into()));
        }
        if self.ransac_iterations < 1 {
            return Err(Error::Config("ransac_iterations must be >= 1".into()));
        }
        if !(self.ransac_inlier_threshold > 0.0) {
            return Err(Error::Config("ransac_inlier_threshold must be > 0".into()));
        }
        if self.min_correspondences < 3 {
            return Err(Error::Config("min_correspondences must be >= 3".into()));
        }
        Ok(())
    }
}

/// Index-aligned pairs of normalized-space and camera-frame points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub noc_points: PointCloud,
    pub obs_points: PointCloud,
}

impl Correspondences {
    pub fn new(noc_points: PointCloud, obs_points: PointCloud) -> Result<Self> {
        if noc_points.len() != obs_points.len() {
            return Err(Error::InvalidInput(format!(
                "correspondence clouds differ in size: {} vs {}",
                noc_points.len(),
                obs_points.len()
            )));
        }
        Ok(Correspondences { noc_points, obs_points })
    }

    pub fn len(&self) -> usize {
        self.noc_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noc_points.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Correspondences {
        Correspondences {
            noc_points: self.noc_points.select(idx),
            obs_points: self.obs_points.select(idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub cloud: PointCloud,
    pub kept: Vec<usize>,
    /// The cloud had too few points to estimate neighbor statistics and was
    /// passed through unchanged.
    pub insufficient: bool,
}

/// Removes points whose mean distance to their `n_neighbors` nearest
/// neighbors exceeds `mean + std_ratio * std` of that statistic.
pub fn statistical_outlier_filter(cloud: &PointCloud, params: &OutlierParams) -> FilterOutcome {
    let n = cloud.len();
    let k = params.n_neighbors;
    if n <= k {
        log::warn!("statistical filter skipped: {n} points for {k} neighbors");
        return FilterOutcome {
            cloud: cloud.clone(),
            kept: (0..n).collect(),
            insufficient: true,
        };
    }
    let pts = &cloud.points;
    let mut scratch = Vec::with_capacity(n - 1);
    let mean_dist: Vec<f64> = (0..n)
        .map(|i| {
            scratch.clear();
            scratch.extend((0..n).filter(|&j| j != i).map(|j| (pts[i] - pts[j]).norm()));
            scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
            scratch[..k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let mu = mean_dist.iter().sum::<f64>() / n as f64;
    let var = mean_dist.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n as f64;
    let limit = mu + params.std_ratio * var.sqrt();
    let kept: Vec<usize> = (0..n).filter(|&i| mean_dist[i] <= limit).collect();
    FilterOutcome {
        cloud: cloud.select(&kept),
        kept,
        insufficient: false,
    }
}

/// Closed-form least-squares similarity `obs ≈ c R noc + t` (Umeyama),
/// with the determinant correction that keeps `R` a proper rotation.
pub fn umeyama_fit(corr: &Correspondences) -> Result<Pose7> {
    let n = corr.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!("{n} correspondences, need at least 3")));
    }
    let src = &corr.noc_points.points;
    let dst = &corr.obs_points.points;
    let inv_n = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vec3>() * inv_n;
    let mu_d = dst.iter().sum::<Vec3>() * inv_n;
    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (ds, dd) = (s - mu_s, d - mu_d);
        cov += dd * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;
    if !(var_s > 1e-18) {
        return Err(Error::DegenerateGeometry("source points coincide".into()));
    }
    let svd = SVD::new(cov, true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // nalgebra does not sort singular values; do it here
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = order.map(|i| svd.singular_values[i]);
    if !(sv[1] > 1e-12 * sv[0].max(1e-300)) {
        return Err(Error::DegenerateGeometry("covariance has rank < 2 (collinear points)".into()));
    }
    let u = Mat3::from_columns(&order.map(|i| u.column(i).into_owned()));
    let v = Mat3::from_columns(&order.map(|i| v_t.row(i).transpose().into_owned()));
    let mut sign = Vec3::new(1.0, 1.0, 1.0);
    if u.determinant() * v.determinant() < 0.0 {
        sign.z = -1.0;
    }
    let rotation = u * Mat3::from_diagonal(&sign) * v.transpose();
    let scale = (sv[0] * sign.x + sv[1] * sign.y + sv[2] * sign.z) / var_s;
    if !(scale > 0.0) {
        return Err(Error::DegenerateGeometry(format!("non-positive scale {scale}")));
    }
    let translation = mu_d - scale * rotation * mu_s;
    Ok(Pose7 {
        scale,
        rotation,
        translation,
    })
}

/// Sum of squared alignment residuals `Σ ||obs_i - (c R noc_i + t)||²`.
pub fn alignment_residual(corr: &Correspondences, pose: &Pose7) -> f64 {
    corr.noc_points
        .points
        .iter()
        .zip(&corr.obs_points.points)
        .map(|(s, d)| (d - pose.apply(s)).norm_squared())
        .sum()
}

/// Gradient of the optimal alignment residual with respect to the input
/// points, as `(d/d noc_i, d/d obs_i)`.
///
/// `pose` must be the minimizer returned by [`umeyama_fit`]; the residual is
/// stationary in the pose there, so only the explicit dependence remains.
pub fn residual_gradients(corr: &Correspondences, pose: &Pose7) -> (Vec<Vec3>, Vec<Vec3>) {
    let rt = pose.rotation.transpose();
    corr.noc_points
        .points
        .iter()
        .zip(&corr.obs_points.points)
        .map(|(s, d)| {
            let r = d - pose.apply(s);
            (-2.0 * pose.scale * (rt * r), 2.0 * r)
        })
        .unzip()
}

/// RANSAC over minimal 3-pair similarity fits. Returns the inlier subset of
/// the best hypothesis together with the kept indices (strictly increasing).
pub fn ransac_alignment_filter(
    corr: &Correspondences,
    params: &OutlierParams,
    seed: u64,
) -> Result<(Correspondences, Vec<usize>)> {
    let n = corr.len();
    if n < params.min_correspondences.max(3) {
        return Err(Error::PoseFailure(format!(
            "{n} correspondences, need at least {}",
            params.min_correspondences.max(3)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thr2 = params.ransac_inlier_threshold.powi(2);
    let mut best: Vec<usize> = Vec::new();
    let mut inliers = Vec::with_capacity(n);
    for _ in 0..params.ransac_iterations {
        let pick = sample(&mut rng, n, 3);
        let minimal = corr.select(&pick.into_vec());
        let Ok(model) = umeyama_fit(&minimal) else {
            continue;
        };
        inliers.clear();
        inliers.extend((0..n).filter(|&i| {
            (corr.obs_points.points[i] - model.apply(&corr.noc_points.points[i])).norm_squared() < thr2
        }));
        if inliers.len() > best.len() {
            std::mem::swap(&mut best, &mut inliers);
            if best.len() == n {
                break;
            }
        }
    }
    if best.len() < params.min_correspondences.max(3) {
        return Err(Error::PoseFailure(format!("best consensus set holds only {} pairs", best.len())));
    }
    Ok((corr.select(&best), best))
}

/// Camera-frame pose from raw correspondences: both statistical filters,
/// RANSAC, then a refit on the inliers.
pub fn estimate_camera_pose(corr: &Correspondences, params: &OutlierParams, seed: u64) -> Result<Pose7> {
    let f_noc = statistical_outlier_filter(&corr.noc_points, params);
    let f_obs = statistical_outlier_filter(&corr.obs_points, params);
    let keep: Vec<usize> = intersect_sorted(&f_noc.kept, &f_obs.kept);
    let cleaned = corr.select(&keep);
    let (inliers, _) = ransac_alignment_filter(&cleaned, params, seed)?;
    umeyama_fit(&inliers)
}

/// World-frame pose of a detection.
pub fn estimate_pose(det: &DetectionRecord, cam: &CameraModel, params: &OutlierParams, seed: u64) -> Result<Pose7> {
    if det.correspondences.is_empty() {
        return Err(Error::PoseFailure("detection carries no correspondences".into()));
    }
    let cam_pose = estimate_camera_pose(&det.correspondences, params, seed)?;
    Ok(cam.pose_to_world(&cam_pose))
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}
