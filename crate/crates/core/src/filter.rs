//! Translation-invariant quaternion Kalman filter.
//!
//! Differences of corresponding point pairs cancel the translation:
//! `s_j - s_i = R (o_j - o_i)`. Writing this with quaternions,
//! `s_ji ⊙ x - x ⊙ o_ji = 0`, gives a linear pseudo-measurement `H x = 0`
//! whose null space contains the true rotation `x`. A Kalman update with
//! the measurement fixed at zero pulls the state toward that null space;
//! translation is recovered afterwards from centroids.

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::correspondence::{ClosestPoint, CorrespondencePair};
use crate::error::{Error, Result};
use crate::geom::{skew, Pose, Quaternion, Vec3};

/// Added to the per-block measurement noise before inversion.
pub const INNOVATION_JITTER: f64 = 1e-12;

/// Gaussian belief over the (unnormalized) quaternion state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl FilterState {
    pub fn new(rotation: Quaternion, cov: Matrix4<f64>) -> Self {
        Self {
            mean: rotation.to_vector(),
            cov,
        }
    }

    pub fn quaternion(&self) -> Quaternion {
        Quaternion::from_vector(&self.mean)
    }
}

/// How [`register`] chains updates across its inner iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Every iteration starts from the previous iteration's posterior.
    Accumulate,
    /// Every iteration re-estimates correspondences at the latest estimate
    /// but updates the belief passed into [`register`] (iterated Kalman
    /// filter). Repeated iterations do not count the same points twice.
    Iterated,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiqfConfig {
    /// Correspondence uncertainty scale of the pseudo-measurement noise.
    pub rho: f64,
    /// Convergence threshold on the quaternion RMSE between iterations.
    pub eps_x: f64,
    /// Convergence threshold on the translation RMSE between iterations (m).
    pub eps_t: f64,
    pub max_inner_iters: usize,
    /// Cap on translation-invariant pairs per update.
    pub max_pairs: usize,
    /// Seed for subsampling pairs above `max_pairs`.
    pub pair_seed: u64,
    pub update_mode: UpdateMode,
}

impl Default for TiqfConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            eps_x: 1e-6,
            eps_t: 1e-6,
            max_inner_iters: 1000,
            max_pairs: 500,
            pair_seed: 0,
            update_mode: UpdateMode::Iterated,
        }
    }
}

impl TiqfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("eps_x", self.eps_x),
            ("eps_t", self.eps_t),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_inner_iters == 0 || self.max_pairs == 0 {
            return Err(Error::Config(
                "max_inner_iters and max_pairs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One 4×4 pseudo-measurement matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementBlock(pub Matrix4<f64>);

/// Pseudo-measurement matrix for the pair `(s_i, o_i)`, `(s_j, o_j)`.
///
/// With `d = s_ji - o_ji` and `m = s_ji + o_ji` this is the left-product
/// matrix of `s_ji` minus the right-product matrix of `o_ji`:
///
/// ```text
/// [ 0   -dᵀ ]
/// [ d   [m]× ]
/// ```
///
/// The matrix is antisymmetric, so `xᵀ H x = 0` for every `x`.
pub fn build_h(s_i: &Vec3, s_j: &Vec3, o_i: &Vec3, o_j: &Vec3) -> MeasurementBlock {
    build_h_from_differences(&(s_j - s_i), &(o_j - o_i))
}

pub fn build_h_from_differences(s_ji: &Vec3, o_ji: &Vec3) -> MeasurementBlock {
    let d = s_ji - o_ji;
    let m = skew(&(s_ji + o_ji));
    let mut h = Matrix4::zeros();
    for k in 0..3 {
        h[(0, k + 1)] = -d[k];
        h[(k + 1, 0)] = d[k];
        for l in 0..3 {
            h[(k + 1, l + 1)] = m[(k, l)];
        }
    }
    MeasurementBlock(h)
}

/// Vertical stack of the blocks (`4N × 4`).
pub fn stack_g(blocks: &[MeasurementBlock]) -> Result<DMatrix<f64>> {
    if blocks.is_empty() {
        return Err(Error::Empty("no measurement blocks to stack"));
    }
    let mut g = DMatrix::zeros(4 * blocks.len(), 4);
    for (k, b) in blocks.iter().enumerate() {
        g.fixed_view_mut::<4, 4>(4 * k, 0).copy_from(&b.0);
    }
    Ok(g)
}

/// State-dependent pseudo-measurement noise
/// `¼ρ [tr(P) I - P]` with `P = x̄ x̄ᵀ + Σ̄`.
pub fn measurement_noise(state: &FilterState, rho: f64) -> Matrix4<f64> {
    let p = state.mean * state.mean.transpose() + state.cov;
    (Matrix4::identity() * p.trace() - p) * (0.25 * rho)
}

/// Kalman update with pseudo-measurement `G x = 0` and block-diagonal noise
/// made of copies of `sigma_h`.
pub fn kalman_update(
    state: &FilterState,
    g: &DMatrix<f64>,
    sigma_h: &Matrix4<f64>,
) -> Result<FilterState> {
    if g.ncols() != 4 || g.nrows() % 4 != 0 {
        return Err(Error::Config(format!(
            "G must be 4N x 4, got {} x {}",
            g.nrows(),
            g.ncols()
        )));
    }
    let blocks: Vec<MeasurementBlock> = (0..g.nrows() / 4)
        .map(|k| MeasurementBlock(g.fixed_view::<4, 4>(4 * k, 0).into_owned()))
        .collect();
    kalman_update_blocks(state, &blocks, sigma_h)
}

/// [`kalman_update`] without materializing `G`.
///
/// The gain `Σ Gᵀ (G Σ Gᵀ + R)⁻¹` is evaluated through the push-through
/// identity `(I + Σ Gᵀ R⁻¹ G)⁻¹ Σ Gᵀ R⁻¹`. `R` is block diagonal, so
/// `Gᵀ R⁻¹ G = Σ_k H_kᵀ W H_k` with `W = (Σ^h + λI)⁻¹`, and only 4×4
/// systems are ever solved. The posterior is
/// `x' = (I + Σ M)⁻¹ x̄`, `Σ' = (I + Σ M)⁻¹ Σ`.
pub fn kalman_update_blocks(
    state: &FilterState,
    blocks: &[MeasurementBlock],
    sigma_h: &Matrix4<f64>,
) -> Result<FilterState> {
    let w = (sigma_h + Matrix4::identity() * INNOVATION_JITTER)
        .try_inverse()
        .ok_or(Error::SingularInnovation)?;
    let mut info = Matrix4::zeros();
    for b in blocks {
        info += b.0.transpose() * w * b.0;
    }
    let a = Matrix4::identity() + state.cov * info;
    let lu = a.lu();
    if !lu.is_invertible() {
        return Err(Error::SingularInnovation);
    }
    let mean = lu.solve(&state.mean).ok_or(Error::SingularInnovation)?;
    let cov = lu.solve(&state.cov).ok_or(Error::SingularInnovation)?;
    if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    Ok(FilterState {
        mean,
        cov: symmetrize(&cov),
    })
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// Projects the mean back to unit norm and rescales the covariance with it.
pub fn normalize_state(state: &FilterState) -> Result<FilterState> {
    let n = state.mean.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateQuaternion);
    }
    Ok(FilterState {
        mean: state.mean / n,
        cov: state.cov / (n * n),
    })
}

/// `t = mean(s) - R(q) mean(o)`, with `o` in the model frame.
pub fn estimate_translation(q: &Quaternion, pairs: &[CorrespondencePair]) -> Result<Vec3> {
    if pairs.is_empty() {
        return Err(Error::Empty("translation needs at least one pair"));
    }
    let r = q.to_matrix()?;
    let n = pairs.len() as f64;
    let s_mean = pairs.iter().map(|p| p.scene).sum::<Vec3>() / n;
    let o_mean = pairs.iter().map(|p| p.model).sum::<Vec3>() / n;
    Ok(s_mean - r * o_mean)
}

/// Pose change between iterations: RMSE over the (sign-aligned) quaternion
/// components and RMSE over the translation components.
pub fn convergence_delta(prev: &Pose, curr: &Pose) -> (f64, f64) {
    let p = prev.rotation.to_vector();
    let mut c = curr.rotation.to_vector();
    if p.dot(&c) < 0.0 {
        c = -c;
    }
    let dq = ((p - c).norm_squared() / 4.0).sqrt();
    let dt = ((prev.translation - curr.translation).norm_squared() / 3.0).sqrt();
    (dq, dt)
}

/// Pairs every measurement with its closest model point, found with the
/// model placed at `pose`. Model points are returned in the model frame.
pub fn model_frame_correspondences<M: ClosestPoint + ?Sized>(
    model: &M,
    pose: &Pose,
    measurements: &[Vec3],
) -> Vec<CorrespondencePair> {
    let rt = pose.rotation_matrix().transpose();
    measurements
        .iter()
        .map(|s| CorrespondencePair {
            scene: *s,
            model: model.closest(&(rt * (s - pose.translation))),
        })
        .collect()
}

/// One block per unordered pair `i < j`, uniformly subsampled (seeded) when
/// there are more than `max_pairs`.
pub fn pair_blocks(
    pairs: &[CorrespondencePair],
    max_pairs: usize,
    seed: u64,
) -> Vec<MeasurementBlock> {
    let n = pairs.len();
    let total = n * n.saturating_sub(1) / 2;
    let block = |k: usize| {
        let (i, j) = unrank_pair(k, n);
        build_h(&pairs[i].scene, &pairs[j].scene, &pairs[i].model, &pairs[j].model)
    };
    if total <= max_pairs {
        (0..total).map(block).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = index::sample(&mut rng, total, max_pairs).into_vec();
        chosen.sort_unstable();
        chosen.into_iter().map(block).collect()
    }
}

/// Maps `k` in `0..n(n-1)/2` to the `k`-th pair `(i, j)`, `i < j`, in
/// row-major order.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

/// One filter step on a fixed correspondence set: update, normalize,
/// translation from centroids.
pub fn update_step(
    prior: &FilterState,
    pairs: &[CorrespondencePair],
    config: &TiqfConfig,
) -> Result<(FilterState, Vec3)> {
    let blocks = pair_blocks(pairs, config.max_pairs, config.pair_seed);
    let sigma_h = measurement_noise(prior, config.rho);
    let post = normalize_state(&kalman_update_blocks(prior, &blocks, &sigma_h)?)?;
    let t = estimate_translation(&post.quaternion(), pairs)?;
    Ok((post, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub pose: Pose,
    pub state: FilterState,
    pub iterations: usize,
    /// Pose change of the final iteration.
    pub delta: (f64, f64),
    pub converged: bool,
    pub n_pairs: usize,
}

/// Registers `measurements` against `model`, starting from `init` with
/// rotation covariance `init_cov`.
///
/// Each iteration re-estimates correspondences at the current pose, builds
/// all translation-invariant pairs, runs one Kalman update and recovers the
/// translation, until the pose change drops below `(eps_x, eps_t)` or
/// `max_inner_iters` is reached.
pub fn register<M: ClosestPoint + ?Sized>(
    model: &M,
    measurements: &[Vec3],
    init: &Pose,
    init_cov: &Matrix4<f64>,
    config: &TiqfConfig,
) -> Result<Registration> {
    register_from_state(
        model,
        measurements,
        &FilterState::new(init.rotation, *init_cov),
        init.translation,
        config,
        config.max_inner_iters,
    )
}

/// [`register`] with an explicit prior state and iteration budget.
pub fn register_from_state<M: ClosestPoint + ?Sized>(
    model: &M,
    measurements: &[Vec3],
    prior: &FilterState,
    translation: Vec3,
    config: &TiqfConfig,
    max_iters: usize,
) -> Result<Registration> {
    if measurements.len() < 2 {
        return Err(Error::TooFewMeasurements {
            needed: 2,
            got: measurements.len(),
        });
    }
    let prior = normalize_state(prior)?;
    let mut pose = Pose {
        rotation: prior.quaternion(),
        translation,
    };
    let mut state = prior;
    let mut delta = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    let n = measurements.len();
    let n_pairs = (n * (n - 1) / 2).min(config.max_pairs);

    while iterations < max_iters {
        let pairs = model_frame_correspondences(model, &pose, measurements);
        let base = match config.update_mode {
            UpdateMode::Accumulate => &state,
            UpdateMode::Iterated => &prior,
        };
        let (next_state, t) = update_step(base, &pairs, config)?;
        let next = Pose {
            rotation: next_state.quaternion(),
            translation: t,
        };
        delta = convergence_delta(&pose, &next);
        state = next_state;
        pose = next;
        iterations += 1;
        if delta.0 < config.eps_x && delta.1 < config.eps_t {
            converged = true;
            break;
        }
    }
    Ok(Registration {
        pose,
        state,
        iterations,
        delta,
        converged,
        n_pairs,
    })
}
