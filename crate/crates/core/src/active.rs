//! Candidate probe generation and next-touch selection.
//!
//! Candidates are axis-aligned rays fired inward from the faces of the
//! estimated object's bounding box. Active selection simulates each
//! candidate's contact on the model at the current estimate, runs a short
//! filter update with the hypothetical point added, and picks the candidate
//! whose predicted posterior moves furthest (in KL divergence) from the
//! current belief.

use nalgebra::{Cholesky, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::correspondence::ObjectModel;
use crate::error::{Error, Result};
use crate::filter::{normalize_state, register_from_state, FilterState, TiqfConfig};
use crate::geom::{Pose, Vec3};
use crate::mesh::{ray_mesh_intersect, Aabb, Ray, TriangleMesh};

/// Face ids: `2k` is the `+e_k` face, `2k + 1` the `-e_k` face.
pub const FACE_POS_X: usize = 0;
pub const FACE_NEG_X: usize = 1;
pub const FACE_POS_Y: usize = 2;
pub const FACE_NEG_Y: usize = 3;
pub const FACE_TOP: usize = 4;
pub const FACE_BOTTOM: usize = 5;

pub const ALL_FACES: [usize; 6] = [0, 1, 2, 3, 4, 5];
/// Every face but the bottom one, which a robot cannot reach on a table.
pub const REACHABLE_FACES: [usize; 5] = [0, 1, 2, 3, 4];

/// Ray origins sit this fraction of the box diagonal outside the box.
pub const START_MARGIN: f64 = 0.05;

/// Filter iterations run per hypothetical measurement.
pub const LOOKAHEAD_ITERS: usize = 3;

/// Jitter added to covariances before factorization in the KL divergence.
pub const KL_JITTER: f64 = 1e-12;

/// Faces for a face count of 5 (no bottom) or 6.
pub fn faces_for_count(n: usize) -> Result<&'static [usize]> {
    match n {
        5 => Ok(&REACHABLE_FACES),
        6 => Ok(&ALL_FACES),
        _ => Err(Error::Config(format!("faces must be 5 or 6, got {n}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub ray: Ray,
    pub face_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadResult {
    pub action: Action,
    pub hit: Option<Vec3>,
    /// Information gain in nats; `-inf` for a miss.
    pub kl: f64,
    /// Predicted posterior; the unchanged prior for a miss.
    pub posterior: FilterState,
}

/// `n` probe rays on the faces of `bbox`. Each picks a face uniformly from
/// `faces`, a start point uniformly on it pushed outward by
/// [`START_MARGIN`]` · diagonal`, and points straight back into the box.
pub fn generate_actions(bbox: &Aabb, n: usize, faces: &[usize], seed: u64) -> Result<Vec<Action>> {
    if n == 0 {
        return Err(Error::Config("number of actions must be at least 1".into()));
    }
    if faces.is_empty() || faces.iter().any(|&f| f > FACE_BOTTOM) {
        return Err(Error::Config(format!("invalid face subset {faces:?}")));
    }
    let extent = bbox.extent();
    let flat = extent.iter().filter(|&&e| !(e > 0.0)).count();
    if flat >= 2 {
        return Err(Error::DegenerateBox(flat));
    }
    let margin = START_MARGIN * bbox.diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let face_id = faces[rng.random_range(0..faces.len())];
            let axis = face_id / 2;
            let positive = face_id % 2 == 0;
            let mut origin = Vec3::zeros();
            for k in 0..3 {
                origin[k] = if k == axis {
                    if positive {
                        bbox.max[k] + margin
                    } else {
                        bbox.min[k] - margin
                    }
                } else {
                    bbox.min[k] + rng.random::<f64>() * extent[k]
                };
            }
            let mut direction = Vec3::zeros();
            direction[axis] = if positive { -1.0 } else { 1.0 };
            Ok(Action {
                ray: Ray::new(origin, direction)?,
                face_id,
            })
        })
        .collect()
}

/// Contact point of `action` on the mesh placed at the current estimate.
pub fn simulate_measurement(action: &Action, mesh_at_estimate: &TriangleMesh) -> Option<Vec3> {
    ray_mesh_intersect(&action.ray, mesh_at_estimate).map(|h| h.point)
}

/// `KL(post ‖ prior)` between two 4-D Gaussians, in nats.
pub fn kl_divergence_gaussian(post: &FilterState, prior: &FilterState) -> Result<f64> {
    let jitter = Matrix4::identity() * KL_JITTER;
    let post_cov = post.cov + jitter;
    let post_chol = Cholesky::new(post_cov).ok_or(Error::NotPositiveDefinite)?;
    let prior_chol =
        Cholesky::new(prior.cov + jitter).ok_or(Error::NotPositiveDefinite)?;
    let ln_det = |c: &Cholesky<f64, nalgebra::U4>| {
        2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    };
    let prior_inv = prior_chol.inverse();
    let dm = post.mean - prior.mean;
    let kl = 0.5
        * (ln_det(&prior_chol) - ln_det(&post_chol) + (prior_inv * post_cov).trace() - 4.0
            + dm.dot(&(prior_inv * dm)));
    if !kl.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(kl)
}

/// Index of the largest score; ties go to the lowest index. Non-finite
/// scores never win.
pub fn argmax_score(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// One-step lookahead for a single candidate.
pub fn lookahead(
    action: &Action,
    state: &FilterState,
    pose: &Pose,
    model: &ObjectModel,
    mesh_at_estimate: &TriangleMesh,
    measurements: &[Vec3],
    config: &TiqfConfig,
) -> Result<LookaheadResult> {
    let Some(z) = simulate_measurement(action, mesh_at_estimate) else {
        return Ok(LookaheadResult {
            action: *action,
            hit: None,
            kl: f64::NEG_INFINITY,
            posterior: *state,
        });
    };
    let mut hypothetical = Vec::with_capacity(measurements.len() + 1);
    hypothetical.extend_from_slice(measurements);
    hypothetical.push(z);
    let reg = register_from_state(
        model,
        &hypothetical,
        state,
        pose.translation,
        config,
        LOOKAHEAD_ITERS,
    )?;
    let kl = kl_divergence_gaussian(&reg.state, &normalize_state(state)?)?;
    Ok(LookaheadResult {
        action: *action,
        hit: Some(z),
        kl,
        posterior: reg.state,
    })
}

/// Picks the candidate with the largest predicted information gain.
///
/// `pose` is the current estimate (its rotation is the mean of `state`).
/// Candidates are evaluated in parallel; the result does not depend on the
/// thread count.
pub fn select_action_active(
    state: &FilterState,
    pose: &Pose,
    model: &ObjectModel,
    measurements: &[Vec3],
    actions: &[Action],
    config: &TiqfConfig,
) -> Result<(Action, Vec<LookaheadResult>)> {
    if actions.is_empty() {
        return Err(Error::Empty("no candidate actions"));
    }
    if measurements.len() < 2 {
        return Err(Error::TooFewMeasurements {
            needed: 2,
            got: measurements.len(),
        });
    }
    let mesh_at_estimate = model.mesh().transform(pose);
    let results = actions
        .par_iter()
        .map(|a| lookahead(a, state, pose, model, &mesh_at_estimate, measurements, config))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = results.iter().map(|r| r.kl).collect();
    let best = argmax_score(&scores).ok_or(Error::NoInformativeAction)?;
    Ok((actions[best], results))
}

/// Uniform choice among `actions`.
pub fn select_action_random(actions: &[Action], seed: u64) -> Result<Action> {
    if actions.is_empty() {
        return Err(Error::Empty("no candidate actions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(actions[rng.random_range(0..actions.len())])
}
