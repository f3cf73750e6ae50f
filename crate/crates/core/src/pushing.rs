//! Simulated planar pushing: a circular probe with a known path stays in contact with
//! the top edge of a box whose trajectory is estimated from noisy odometry and noisy
//! contact offsets, under one hard contact constraint per timestep.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    mahalanobis_consistency, solve_constrained_gn, ConstraintBlock, GnOptions, LinearResidual,
    NllsProblem, ResidualBlock, SolveReport,
};
use crate::gaussian::{derive_seed, rng_from_seed};
use crate::smooth::{ContactChainModel, ManifoldModel};

/// Scenario and noise settings. Odometry noise is `odometry_sigma * noise_multiplier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PushConfig {
    pub timesteps: usize,
    pub dt: f64,
    pub box_width: f64,
    pub box_height: f64,
    pub probe_radius: f64,
    pub probe_start: [f64; 2],
    pub probe_velocity: [f64; 2],
    /// Peak box rotation of the ground-truth profile, in radians.
    pub rotation_amplitude: f64,
    /// Peak contact offset along the edge of the ground-truth profile.
    pub offset_amplitude: f64,
    /// Minimum distance kept between the contact point and either corner.
    pub edge_margin: f64,
    pub odometry_sigma: [f64; 3],
    pub contact_sigma: f64,
    pub prior_sigma: f64,
    pub noise_multiplier: f64,
    /// When false the measurements equal the true values while the weights keep the nominal noise.
    pub inject_noise: bool,
}

impl Default for PushConfig {
    fn default() -> Self {
        Self {
            timesteps: 50,
            dt: 0.1,
            box_width: 0.2,
            box_height: 0.1,
            probe_radius: 0.02,
            probe_start: [0.0, 0.0],
            probe_velocity: [0.0, -0.05],
            rotation_amplitude: 0.3,
            offset_amplitude: 0.04,
            edge_margin: 0.01,
            odometry_sigma: [0.002, 0.002, 0.005],
            contact_sigma: 0.002,
            prior_sigma: 1e-3,
            noise_multiplier: 1.0,
            inject_noise: true,
        }
    }
}

/// Measurement noise standard deviations used both to draw and to weight measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub odometry_sigma: [f64; 3],
    pub contact_sigma: f64,
    pub prior_sigma: f64,
}

/// One generated pushing episode. Poses are `[t_x, t_y, phi]` with `phi` unwrapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushScenario {
    pub timesteps: usize,
    pub dt: f64,
    pub probe_centers: Vec<[f64; 2]>,
    pub probe_radius: f64,
    pub box_half_extents: [f64; 2],
    pub true_states: Vec<[f64; 3]>,
    /// Relative poses `[R(phi_k)^T (t_{k+1} - t_k), phi_{k+1} - phi_k]`.
    pub odometry: Vec<[f64; 3]>,
    pub contact_meas: Vec<f64>,
    pub noise: NoiseModel,
    pub noise_level: f64,
    pub seed: u64,
}

impl PushScenario {
    pub fn contact_model(&self, k: usize) -> ContactChainModel {
        let p = self.probe_centers[k];
        ContactChainModel::new(
            Vector2::new(p[0], p[1]),
            self.box_half_extents[1],
            self.probe_radius,
        )
    }

    /// True trajectory stacked as a `3T` vector.
    pub fn true_trajectory(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.timesteps,
            self.true_states.iter().flatten().copied(),
        )
    }

    /// Largest `|q_y - (h/2 + r)|` over the true states.
    pub fn max_constraint_violation(&self) -> f64 {
        self.true_states
            .iter()
            .enumerate()
            .map(|(k, s)| {
                self.contact_model(k)
                    .constraint(&DVector::from_column_slice(s))[0]
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

fn rot_t(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// `[R(phi_a)^T (t_b - t_a), phi_b - phi_a]`
pub fn relative_pose(a: &[f64], b: &[f64]) -> Vector3<f64> {
    let d = rot_t(a[2]) * Vector2::new(b[0] - a[0], b[1] - a[1]);
    Vector3::new(d.x, d.y, b[2] - a[2])
}

/// Applies a relative pose to `a`, the inverse of [`relative_pose`].
pub fn compose_pose(a: &[f64], rel: &[f64]) -> [f64; 3] {
    let d = rot_t(a[2]).transpose() * Vector2::new(rel[0], rel[1]);
    [a[0] + d.x, a[1] + d.y, a[2] + rel[2]]
}

fn validate_config(config: &PushConfig) -> Result<()> {
    let positive = [
        config.dt,
        config.box_width,
        config.box_height,
        config.probe_radius,
        config.contact_sigma,
        config.prior_sigma,
        config.noise_multiplier,
    ];
    let all_finite = positive
        .iter()
        .chain(config.odometry_sigma.iter())
        .chain(config.probe_start.iter())
        .chain(config.probe_velocity.iter())
        .chain(
            [
                config.rotation_amplitude,
                config.offset_amplitude,
                config.edge_margin,
            ]
            .iter(),
        )
        .all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::NonFinite {
            context: "push config",
        });
    }
    if config.timesteps < 2 {
        return Err(Error::InvalidArgument(
            "timesteps must be at least 2".into(),
        ));
    }
    if positive
        .iter()
        .chain(config.odometry_sigma.iter())
        .any(|&v| v <= 0.0)
    {
        return Err(Error::InvalidArgument(
            "dimensions, time step, noise levels and multiplier must be positive".into(),
        ));
    }
    Ok(())
}

/// Builds the probe path, the ground-truth contact profile and noisy measurements.
pub fn generate_scenario(config: &PushConfig, seed: u64) -> Result<PushScenario> {
    validate_config(config)?;
    let t = config.timesteps;
    let half_w = config.box_width / 2.0;
    let limit = half_w - config.edge_margin;
    if config.offset_amplitude.abs() > limit {
        return Err(Error::InvalidArgument(format!(
            "contact offset amplitude {} passes a corner (limit {})",
            config.offset_amplitude, limit
        )));
    }

    let mut probe_centers = Vec::with_capacity(t);
    let mut true_states = Vec::with_capacity(t);
    for k in 0..t {
        let time = k as f64 * config.dt;
        let s = k as f64 / (t - 1) as f64;
        let p = [
            config.probe_start[0] + config.probe_velocity[0] * time,
            config.probe_start[1] + config.probe_velocity[1] * time,
        ];
        let phi = config.rotation_amplitude * (2.0 * std::f64::consts::PI * s).sin();
        let offset = config.offset_amplitude * (std::f64::consts::PI * s).cos();
        let model = ContactChainModel::new(
            Vector2::new(p[0], p[1]),
            config.box_height / 2.0,
            config.probe_radius,
        );
        let x = model.embed(phi, offset);
        probe_centers.push(p);
        true_states.push([x[0], x[1], x[2]]);
    }

    let odometry_sigma = config.odometry_sigma.map(|s| s * config.noise_multiplier);
    let mut rng = rng_from_seed(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |sigma: f64| {
        if config.inject_noise {
            sigma * std_normal.sample(&mut rng)
        } else {
            0.0
        }
    };

    let odometry = true_states
        .windows(2)
        .map(|w| {
            let rel = relative_pose(&w[0], &w[1]);
            [
                rel[0] + draw(odometry_sigma[0]),
                rel[1] + draw(odometry_sigma[1]),
                rel[2] + draw(odometry_sigma[2]),
            ]
        })
        .collect();
    let contact_meas = true_states
        .iter()
        .zip(&probe_centers)
        .map(|(x, p)| {
            let model = ContactChainModel::new(
                Vector2::new(p[0], p[1]),
                config.box_height / 2.0,
                config.probe_radius,
            );
            model.contact_offset(&DVector::from_column_slice(x)) + draw(config.contact_sigma)
        })
        .collect();

    Ok(PushScenario {
        timesteps: t,
        dt: config.dt,
        probe_centers,
        probe_radius: config.probe_radius,
        box_half_extents: [half_w, config.box_height / 2.0],
        true_states,
        odometry,
        contact_meas,
        noise: NoiseModel {
            odometry_sigma,
            contact_sigma: config.contact_sigma,
            prior_sigma: config.prior_sigma,
        },
        noise_level: config.noise_multiplier,
        seed,
    })
}

fn diagonal_weight(sigmas: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        sigmas.len(),
        sigmas.iter().map(|s| 1.0 / (s * s)),
    ))
}

/// Relative-pose residual between consecutive poses `k` and `k + 1`.
struct OdometryResidual {
    index: usize,
    state_dim: usize,
    measured: Vector3<f64>,
    weight: DMatrix<f64>,
}

impl ResidualBlock for OdometryResidual {
    fn dim(&self) -> usize {
        3
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let a = x.rows(3 * self.index, 3);
        let b = x.rows(3 * self.index + 3, 3);
        let r = relative_pose(a.as_slice(), b.as_slice()) - self.measured;
        DVector::from_column_slice(r.as_slice())
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let i = 3 * self.index;
        let (s, c) = x[i + 2].sin_cos();
        let dx = x[i + 3] - x[i];
        let dy = x[i + 4] - x[i + 1];
        let mut j = DMatrix::zeros(3, self.state_dim);
        // d/dt_k = -R^T, d/dt_{k+1} = R^T
        j[(0, i)] = -c;
        j[(0, i + 1)] = -s;
        j[(1, i)] = s;
        j[(1, i + 1)] = -c;
        j[(0, i + 3)] = c;
        j[(0, i + 4)] = s;
        j[(1, i + 3)] = -s;
        j[(1, i + 4)] = c;
        j[(0, i + 2)] = -s * dx + c * dy;
        j[(1, i + 2)] = -c * dx - s * dy;
        j[(2, i + 2)] = -1.0;
        j[(2, i + 5)] = 1.0;
        j
    }

    fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }
}

/// Measured contact offset `q_x` at pose `k`.
struct ContactResidual {
    index: usize,
    state_dim: usize,
    model: ContactChainModel,
    measured: f64,
    weight: DMatrix<f64>,
}

impl ResidualBlock for ContactResidual {
    fn dim(&self) -> usize {
        1
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let pose = x.rows(3 * self.index, 3).into_owned();
        DVector::from_element(1, self.model.contact_offset(&pose) - self.measured)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let pose = x.rows(3 * self.index, 3).into_owned();
        let mut j = DMatrix::zeros(1, self.state_dim);
        j.view_mut((0, 3 * self.index), (1, 3))
            .copy_from(&self.model.contact_offset_jacobian(&pose));
        j
    }

    fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }
}

/// Contact constraint `q_y - (h/2 + r) = 0` at pose `k`.
struct ContactConstraint {
    index: usize,
    state_dim: usize,
    model: ContactChainModel,
}

impl ConstraintBlock for ContactConstraint {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        self.model
            .constraint(&x.rows(3 * self.index, 3).into_owned())
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let pose = x.rows(3 * self.index, 3).into_owned();
        let mut j = DMatrix::zeros(1, self.state_dim);
        j.view_mut((0, 3 * self.index), (1, 3))
            .copy_from(&self.model.jacobian(&pose));
        j
    }
}

/// Odometry and contact residuals, a first-pose prior and one contact constraint per step.
pub fn build_problem(s: &PushScenario) -> Result<NllsProblem> {
    let t = s.timesteps;
    if t < 2 || s.true_states.len() != t || s.probe_centers.len() != t || s.contact_meas.len() != t
    {
        return Err(Error::InvalidArgument(
            "scenario arrays must have one entry per timestep".into(),
        ));
    }
    if s.odometry.len() != t - 1 {
        return Err(Error::DimensionMismatch {
            context: "odometry measurements",
            expected: t - 1,
            actual: s.odometry.len(),
        });
    }
    let n = 3 * t;
    let mut problem = NllsProblem::new(n);

    let mut prior_a = DMatrix::zeros(3, n);
    prior_a.view_mut((0, 0), (3, 3)).fill_with_identity();
    problem.add_residual(LinearResidual {
        a: prior_a,
        b: DVector::from_column_slice(&s.true_states[0]),
        weight: diagonal_weight(&[s.noise.prior_sigma; 3]),
    })?;

    let odometry_weight = diagonal_weight(&s.noise.odometry_sigma);
    for (k, z) in s.odometry.iter().enumerate() {
        problem.add_residual(OdometryResidual {
            index: k,
            state_dim: n,
            measured: Vector3::from_column_slice(z),
            weight: odometry_weight.clone(),
        })?;
    }

    let contact_weight = diagonal_weight(&[s.noise.contact_sigma]);
    for k in 0..t {
        let model = s.contact_model(k);
        problem.add_residual(ContactResidual {
            index: k,
            state_dim: n,
            model,
            measured: s.contact_meas[k],
            weight: contact_weight.clone(),
        })?;
        problem.add_constraint(ContactConstraint {
            index: k,
            state_dim: n,
            model,
        });
    }
    Ok(problem)
}

/// Dead-reckons the odometry from the true first pose and projects every pose onto its contact manifold.
pub fn initial_guess(s: &PushScenario) -> Result<DVector<f64>> {
    let mut poses = Vec::with_capacity(s.timesteps);
    poses.push(s.true_states[0]);
    for z in &s.odometry {
        let last = *poses.last().expect("non-empty");
        poses.push(compose_pose(&last, z));
    }
    let mut x = DVector::zeros(3 * s.timesteps);
    for (k, pose) in poses.iter().enumerate() {
        let projected = s
            .contact_model(k)
            .project(&DVector::from_column_slice(pose))?;
        x.rows_mut(3 * k, 3).copy_from(&projected);
    }
    Ok(x)
}

/// Tangent basis of the whole trajectory at `x`: block-diagonal chart columns, `3T x 2T`.
pub fn trajectory_tangent_basis(s: &PushScenario, x: &DVector<f64>) -> DMatrix<f64> {
    let t = s.timesteps;
    let mut basis = DMatrix::zeros(3 * t, 2 * t);
    for k in 0..t {
        let pose = x.rows(3 * k, 3).into_owned();
        basis
            .view_mut((3 * k, 2 * k), (3, 2))
            .copy_from(&s.contact_model(k).chart_basis(&pose));
    }
    basis
}

/// Outcome of estimating one scenario.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub estimate: SolveReport,
    /// Per-step chart increments `(d_alpha, d_d)` from the estimate to the truth, stacked.
    pub error_tangent: DVector<f64>,
    pub d_maha: f64,
    pub noise_level: f64,
    pub converged: bool,
}

pub fn run_trial(s: &PushScenario) -> Result<TrialReport> {
    let problem = build_problem(s)?;
    let init = initial_guess(s)?;
    let estimate = solve_constrained_gn(&problem, &init, &GnOptions::default())?;
    let t = s.timesteps;
    let mean = &estimate.solution;
    let basis = trajectory_tangent_basis(s, mean);
    let mut error = DVector::zeros(3 * t);
    for k in 0..t {
        let model = s.contact_model(k);
        let e = model.inverse_retract(
            &mean.rows(3 * k, 3).into_owned(),
            &DVector::from_column_slice(&s.true_states[k]),
        )?;
        error.rows_mut(3 * k, 3).copy_from(&e);
    }
    let gram = (basis.transpose() * &basis)
        .cholesky()
        .ok_or(Error::Singular {
            name: "tangent basis",
        })?;
    let error_tangent = gram.solve(&(basis.transpose() * &error));
    let d_maha = mahalanobis_consistency(&error, &estimate, &basis, 2 * t)?;
    if !d_maha.is_finite() {
        return Err(Error::NonFinite { context: "d_maha" });
    }
    Ok(TrialReport {
        converged: estimate.converged,
        estimate,
        error_tangent,
        d_maha,
        noise_level: s.noise_level,
    })
}

/// Raw per-trial statistics for one noise multiplier, ordered by trial index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub multiplier: f64,
    /// `(trial, d_maha, converged)` for every trial that produced a statistic.
    pub trials: Vec<(usize, f64, bool)>,
    /// Trials that failed before a statistic could be computed.
    pub failures: usize,
}

impl SweepLevel {
    pub fn d_maha(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.1).collect()
    }

    pub fn mean(&self) -> f64 {
        let d = self.d_maha();
        d.iter().sum::<f64>() / d.len() as f64
    }

    pub fn median(&self) -> f64 {
        median(&self.d_maha())
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Seed of trial `trial` at level index `level` under `master`.
pub fn trial_seed(master: u64, level: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(master, level as u64), trial as u64)
}

/// Runs `trials_per_level` independent trials at every multiplier of the base odometry noise.
pub fn noise_sweep(
    base: &PushConfig,
    multipliers: &[f64],
    trials_per_level: usize,
    seed: u64,
) -> Result<Vec<SweepLevel>> {
    if trials_per_level == 0 {
        return Err(Error::InvalidArgument(
            "trials per level must be at least 1".into(),
        ));
    }
    let configs = multipliers
        .iter()
        .map(|&m| {
            let cfg = PushConfig {
                noise_multiplier: m,
                ..base.clone()
            };
            validate_config(&cfg)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..multipliers.len())
        .flat_map(|l| (0..trials_per_level).map(move |t| (l, t)))
        .collect();
    let outcomes: Vec<Result<(f64, bool)>> = jobs
        .par_iter()
        .map(|&(l, t)| {
            let scenario = generate_scenario(&configs[l], trial_seed(seed, l, t))?;
            let report = run_trial(&scenario)?;
            Ok((report.d_maha, report.converged))
        })
        .collect();

    let mut levels: Vec<SweepLevel> = multipliers
        .iter()
        .map(|&m| SweepLevel {
            multiplier: m,
            trials: Vec::with_capacity(trials_per_level),
            failures: 0,
        })
        .collect();
    for (&(l, t), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok((d, converged)) => levels[l].trials.push((t, d, converged)),
            Err(_) => levels[l].failures += 1,
        }
    }
    Ok(levels)
}
