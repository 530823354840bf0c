//! Simulated touch experiments: random against active probe selection.
//!
//! A trial places the object at a random ground-truth pose, starts the
//! estimate at a perturbed copy of it and then touches the object one probe
//! at a time, re-registering after every contact. [`run_batch`] repeats
//! trials with seeds derived from one master seed and aggregates the error
//! curves.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{
    faces_for_count, generate_actions, select_action_active, select_action_random,
    simulate_measurement, Action,
};
use crate::correspondence::ObjectModel;
use crate::error::{Error, Result};
use crate::filter::{convergence_delta, register_from_state, FilterState, TiqfConfig};
use crate::geom::{rotation_error_deg, translation_error_cm, Pose, Quaternion, Vec3};
use crate::mesh::TriangleMesh;
use crate::seeds;

/// A trial gives up after this many selections in a row in which no
/// candidate touches the estimated object.
pub const MAX_CONSECUTIVE_MISSES: usize = 5;

/// Probe budget per requested contact.
pub const MAX_STEPS_PER_TOUCH: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Active,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Active => "active",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What the filter starts from at each touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefMode {
    /// The previous touch's posterior, as is.
    Carry,
    /// The previous touch's mean with the initial covariance: every touch
    /// re-registers the full point set without counting old points twice.
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// OBJ or PLY file; the built-in egg when absent.
    pub mesh: Option<PathBuf>,
    pub strategy: Strategy,
    /// Per-coordinate standard deviation of touch noise (m).
    pub noise_sigma: f64,
    pub n_touches_max: usize,
    pub n_actions: usize,
    pub n_trials: usize,
    /// Half-range of the initial translation error per axis (m).
    pub init_trans_range: f64,
    /// Half-range of the initial rotation error per Euler axis (degrees).
    pub init_rot_range: f64,
    /// Half-range of the per-touch rotation perturbation per Euler axis (degrees).
    pub perturb_deg: f64,
    /// Stop once the per-touch pose change is below both thresholds.
    pub xi_x: f64,
    pub xi_t: f64,
    /// 6 = every bounding-box face, 5 = no probing from below.
    pub faces: usize,
    pub master_seed: u64,
    /// Scale of the initial covariance `σ0 · I4`.
    pub init_cov: f64,
    pub belief: BeliefMode,
    /// Record wall-clock timings. Off by default so outputs are reproducible.
    pub timing: bool,
    pub filter: TiqfConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mesh: None,
            strategy: Strategy::Active,
            noise_sigma: 5e-3,
            n_touches_max: 20,
            n_actions: 100,
            n_trials: 100,
            init_trans_range: 0.05,
            init_rot_range: 30.0,
            perturb_deg: 2.0,
            xi_x: 1e-3,
            xi_t: 1e-3,
            faces: 6,
            master_seed: 0,
            init_cov: 1.0,
            belief: BeliefMode::Reset,
            timing: false,
            filter: TiqfConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        for (name, v) in [
            ("init_trans_range", self.init_trans_range),
            ("init_rot_range", self.init_rot_range),
            ("perturb_deg", self.perturb_deg),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("xi_x", self.xi_x), ("xi_t", self.xi_t), ("init_cov", self.init_cov)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("n_touches_max", self.n_touches_max),
            ("n_actions", self.n_actions),
            ("n_trials", self.n_trials),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        faces_for_count(self.faces)?;
        self.filter.validate()
    }

    /// Loads the configured mesh, or builds the default test object.
    pub fn load_model(&self) -> Result<ObjectModel> {
        let mesh = match &self.mesh {
            Some(path) => crate::mesh::load_mesh(path)?.mesh,
            None => default_mesh(),
        };
        ObjectModel::new(mesh)
    }
}

/// The built-in test object: a lopsided egg, 912 faces.
pub fn default_mesh() -> TriangleMesh {
    crate::mesh::shapes::egg(20, 24)
}

// Seed streams within a trial.
const STREAM_GT: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_ACTIONS: u64 = 2;
const STREAM_SELECT: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_PERTURB: u64 = 5;

/// Pose with translation uniform in `±trans_range` per axis and rotation
/// from intrinsic XYZ Euler angles uniform in `±rot_range_deg`.
pub fn sample_pose(seed: u64, trans_range: f64, rot_range_deg: f64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
    let t = Vec3::new(uniform(trans_range), uniform(trans_range), uniform(trans_range));
    let r = rot_range_deg.to_radians();
    let (rx, ry, rz) = (uniform(r), uniform(r), uniform(r));
    Pose {
        rotation: Quaternion::from_euler_xyz(rx, ry, rz),
        translation: t,
    }
}

/// Initial pose error: ±50 mm per axis and ±30° per Euler axis.
pub fn sample_initial_pose(seed: u64) -> Pose {
    let d = ExperimentConfig::default();
    sample_pose(seed, d.init_trans_range, d.init_rot_range)
}

/// Contact of `action` with the ground-truth mesh plus Gaussian noise on
/// every coordinate. A miss draws no random numbers.
pub fn simulate_touch(
    action: &Action,
    gt_mesh: &TriangleMesh,
    noise_sigma: f64,
    seed: u64,
) -> Option<Vec3> {
    let hit = simulate_measurement(action, gt_mesh)?;
    if noise_sigma == 0.0 {
        return Some(hit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma).expect("sigma is finite and non-negative");
    Some(hit + Vec3::from_fn(|_, _| normal.sample(&mut rng)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TouchRecord {
    /// Number of measurements so far, from 1.
    pub touch_index: usize,
    pub rmse_rot_deg: f64,
    pub rmse_trans_cm: f64,
    /// Predicted information gain of the executed probe (active choices only).
    pub kl_selected: Option<f64>,
    pub n_correspondence_pairs: usize,
    /// Cumulative trial time; zero unless timing is enabled.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_id: usize,
    pub strategy: Strategy,
    pub records: Vec<TouchRecord>,
    pub initial_pose: Pose,
    pub final_pose: Pose,
    pub ground_truth: Pose,
    /// Set when the stop criterion ended the trial early.
    pub stopped_at: Option<usize>,
    /// Reason the trial was abandoned, if it was.
    pub aborted: Option<String>,
    /// Executed probes that passed the real object.
    pub missed_probes: usize,
}

/// Seed of trial `trial_id`; shared by both strategies.
pub fn trial_seed(master_seed: u64, trial_id: usize) -> u64 {
    seeds::derive(master_seed, trial_id as u64)
}

/// Ground-truth object pose and the filter's initial estimate for a trial.
pub fn trial_poses(config: &ExperimentConfig, seed: u64) -> (Pose, Pose) {
    // Keep the object itself near the origin with a free yaw.
    let gt = {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, STREAM_GT));
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        Pose {
            rotation: Quaternion::from_axis_angle(&Vec3::z(), yaw),
            translation: Vec3::zeros(),
        }
    };
    let offset = sample_pose(
        seeds::derive(seed, STREAM_INIT),
        config.init_trans_range,
        config.init_rot_range,
    );
    let init = Pose {
        rotation: offset.rotation * gt.rotation,
        translation: gt.translation + offset.translation,
    };
    (gt, init)
}

/// One trial of the touch loop.
pub fn run_trial(
    config: &ExperimentConfig,
    model: &ObjectModel,
    strategy: Strategy,
    trial_id: usize,
) -> Result<TrialResult> {
    let seed = trial_seed(config.master_seed, trial_id);
    let (gt, init) = trial_poses(config, seed);
    run_trial_from(config, model, strategy, trial_id, seed, &gt, &init)
}

/// [`run_trial`] with explicit ground truth and initial estimate.
pub fn run_trial_from(
    config: &ExperimentConfig,
    model: &ObjectModel,
    strategy: Strategy,
    trial_id: usize,
    seed: u64,
    gt: &Pose,
    init: &Pose,
) -> Result<TrialResult> {
    let started = Instant::now();
    let faces = faces_for_count(config.faces)?;
    let gt_mesh = model.mesh().transform(gt);
    let init_cov = Matrix4::identity() * config.init_cov;

    // Fitted belief, used for selection, and the perturbed copy the next
    // registration starts from.
    let mut state = FilterState::new(init.rotation, init_cov);
    let mut pose = *init;
    let mut start = (state, pose);
    let mut measurements: Vec<Vec3> = Vec::new();
    let mut records = Vec::new();
    let mut blind = 0;
    let mut missed_probes = 0;
    let mut stopped_at = None;
    let mut aborted = None;
    // Estimate after the last update, before any perturbation.
    let mut last_fit = *init;
    let max_steps = MAX_STEPS_PER_TOUCH * config.n_touches_max as u64;

    for step in 0..max_steps {
        if measurements.len() >= config.n_touches_max {
            break;
        }
        let stream = |s: u64| seeds::derive2(seed, s, step);
        let mesh_est = model.mesh().transform(&pose);
        let bbox = mesh_est.bounding_box()?;
        let actions = generate_actions(&bbox, config.n_actions, faces, stream(STREAM_ACTIONS))?;

        let mut kl_selected = None;
        let chosen = if strategy == Strategy::Active && measurements.len() > 2 {
            match select_action_active(&state, &pose, model, &measurements, &actions, &config.filter)
            {
                Ok((a, results)) => {
                    kl_selected = results.iter().find(|r| r.action == a).map(|r| r.kl);
                    Some(a)
                }
                Err(Error::NoInformativeAction) => None,
                Err(e) => return Err(e),
            }
        } else {
            Some(select_action_random(&actions, stream(STREAM_SELECT))?)
        };

        let Some(action) = chosen else {
            blind += 1;
            if blind >= MAX_CONSECUTIVE_MISSES {
                aborted = Some(format!(
                    "no candidate touched the estimated object {blind} times in a row \
                     after {} contacts",
                    measurements.len()
                ));
                break;
            }
            continue;
        };
        blind = 0;
        let Some(z) = simulate_touch(&action, &gt_mesh, config.noise_sigma, stream(STREAM_NOISE))
        else {
            // The probe passed the real object; nothing is learned.
            missed_probes += 1;
            continue;
        };
        measurements.push(z);

        let mut n_pairs = 0;
        if measurements.len() >= 2 {
            let prior = match config.belief {
                BeliefMode::Carry => start.0,
                BeliefMode::Reset => FilterState {
                    mean: start.0.mean,
                    cov: init_cov,
                },
            };
            let reg = register_from_state(
                model,
                &measurements,
                &prior,
                start.1.translation,
                &config.filter,
                config.filter.max_inner_iters,
            )?;
            state = reg.state;
            pose = reg.pose;
            n_pairs = reg.n_pairs;
        }

        records.push(TouchRecord {
            touch_index: measurements.len(),
            rmse_rot_deg: rotation_error_deg(&pose.rotation, &gt.rotation),
            rmse_trans_cm: translation_error_cm(&pose.translation, &gt.translation),
            kl_selected,
            n_correspondence_pairs: n_pairs,
            wall_ms: if config.timing {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });

        let delta = convergence_delta(&last_fit, &pose);
        last_fit = pose;
        if measurements.len() > 2 && delta.0 < config.xi_x && delta.1 < config.xi_t {
            stopped_at = Some(measurements.len());
            break;
        }

        start = (state, pose);
        if config.perturb_deg > 0.0 {
            let kick = sample_pose(stream(STREAM_PERTURB), 0.0, config.perturb_deg);
            let q = kick.rotation * state.quaternion();
            start.0.mean = q.to_vector();
            start.1.rotation = q.normalize()?;
        }
    }
    if aborted.is_none() && stopped_at.is_none() && measurements.len() < config.n_touches_max {
        aborted = Some(format!(
            "only {} contacts after {max_steps} probes",
            measurements.len()
        ));
    }

    Ok(TrialResult {
        trial_id,
        strategy,
        records,
        initial_pose: *init,
        final_pose: pose,
        ground_truth: *gt,
        stopped_at,
        aborted,
        missed_probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatePoint {
    pub touch_index: usize,
    pub mean_rot: f64,
    pub lo_rot: f64,
    pub hi_rot: f64,
    pub mean_trans: f64,
    pub lo_trans: f64,
    pub hi_trans: f64,
    pub n_trials_used: usize,
}

/// Per-touch mean and mean ± 1 (population) standard deviation across the
/// trials of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub strategy: Strategy,
    pub points: Vec<AggregatePoint>,
    pub n_aborted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub trials: Vec<TrialResult>,
    pub aggregate: AggregateResult,
}

/// Error at touch `k` (1-based) of a completed trial. A trial that stopped
/// early keeps its last estimate, so its last error carries forward.
pub fn error_at(trial: &TrialResult, k: usize) -> Option<(f64, f64)> {
    if trial.aborted.is_some() || trial.records.is_empty() {
        return None;
    }
    let r = trial
        .records
        .iter()
        .take_while(|r| r.touch_index <= k)
        .last()?;
    if r.touch_index < k && trial.stopped_at.is_none() {
        return None;
    }
    Some((r.rmse_rot_deg, r.rmse_trans_cm))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(strategy: Strategy, trials: &[TrialResult], n_touches_max: usize) -> AggregateResult {
    let n_aborted = trials.iter().filter(|t| t.aborted.is_some()).count();
    let points = (1..=n_touches_max)
        .map(|k| {
            let (rot, trans): (Vec<f64>, Vec<f64>) =
                trials.iter().filter_map(|t| error_at(t, k)).unzip();
            if rot.is_empty() {
                return AggregatePoint {
                    touch_index: k,
                    mean_rot: f64::NAN,
                    lo_rot: f64::NAN,
                    hi_rot: f64::NAN,
                    mean_trans: f64::NAN,
                    lo_trans: f64::NAN,
                    hi_trans: f64::NAN,
                    n_trials_used: 0,
                };
            }
            let (mr, sr) = mean_std(&rot);
            let (mt, st) = mean_std(&trans);
            AggregatePoint {
                touch_index: k,
                mean_rot: mr,
                lo_rot: mr - sr,
                hi_rot: mr + sr,
                mean_trans: mt,
                lo_trans: mt - st,
                hi_trans: mt + st,
                n_trials_used: rot.len(),
            }
        })
        .collect();
    AggregateResult {
        strategy,
        points,
        n_aborted,
    }
}

/// `config.n_trials` trials of `strategy`, in parallel. Trial `i` always
/// uses the same seed, so results match a sequential run.
pub fn run_batch(config: &ExperimentConfig, model: &ObjectModel, strategy: Strategy) -> Result<BatchResult> {
    config.validate()?;
    let trials = (0..config.n_trials)
        .into_par_iter()
        .map(|i| run_trial(config, model, strategy, i))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(strategy, &trials, config.n_touches_max);
    Ok(BatchResult { trials, aggregate })
}

/// Both strategies over the same trial seeds, hence the same ground-truth
/// poses and initial estimates per trial.
pub fn run_comparison(config: &ExperimentConfig, model: &ObjectModel) -> Result<[BatchResult; 2]> {
    Ok([
        run_batch(config, model, Strategy::Random)?,
        run_batch(config, model, Strategy::Active)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n_actions: usize,
    /// Candidates that touch the estimated object.
    pub n_hits: usize,
    pub generate_s: f64,
    pub select_s: f64,
}

/// Times candidate generation and active selection for each action count.
///
/// The scene is fixed: the object at the origin, `n_contacts` noiseless
/// contacts and the estimate registered from them. Each count is timed
/// `repeats` times on the same candidates and the fastest run is kept.
pub fn bench_action_selection(
    model: &ObjectModel,
    counts: &[usize],
    n_contacts: usize,
    repeats: usize,
    config: &ExperimentConfig,
) -> Result<Vec<BenchRow>> {
    let seed = config.master_seed;
    let faces = faces_for_count(config.faces)?;
    let bbox = model.mesh().bounding_box()?;
    let probes = generate_actions(&bbox, 50 * n_contacts.max(1), faces, seeds::derive(seed, 0))?;
    let measurements: Vec<Vec3> = probes
        .iter()
        .filter_map(|a| simulate_measurement(a, model.mesh()))
        .take(n_contacts)
        .collect();
    if measurements.len() < n_contacts.max(2) {
        return Err(Error::Config(format!(
            "could not place {n_contacts} contacts on the mesh"
        )));
    }
    let reg = register_from_state(
        model,
        &measurements,
        &FilterState::new(Quaternion::IDENTITY, Matrix4::identity() * config.init_cov),
        Vec3::zeros(),
        &config.filter,
        config.filter.max_inner_iters,
    )?;
    let est_box = model.mesh().transform(&reg.pose).bounding_box()?;

    let mut rows = Vec::with_capacity(counts.len());
    for (i, &n) in counts.iter().enumerate() {
        let action_seed = seeds::derive2(seed, 1, i as u64);
        let mut generate_s = f64::INFINITY;
        let mut select_s = f64::INFINITY;
        let mut n_hits = 0;
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            let actions = generate_actions(&est_box, n, faces, action_seed)?;
            generate_s = generate_s.min(t0.elapsed().as_secs_f64());
            let t1 = Instant::now();
            let (_, results) =
                select_action_active(&reg.state, &reg.pose, model, &measurements, &actions, &config.filter)?;
            select_s = select_s.min(t1.elapsed().as_secs_f64());
            n_hits = results.iter().filter(|r| r.hit.is_some()).count();
        }
        rows.push(BenchRow {
            n_actions: n,
            n_hits,
            generate_s,
            select_s,
        });
    }
    Ok(rows)
}
