use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use manifold_gauss::gaussian::derive_seed;
use manifold_gauss::projnorm::{run_projnorm_experiment, ProjNormConfig};
use manifold_gauss::pushing::{generate_scenario, noise_sweep, trial_seed, PushConfig};
use manifold_gauss::{Gaussian, LinearManifold};

use crate::error::{CliError, CliResult};
use crate::output::{output_path, read_json, write_json, write_records, write_rows};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20240601;

/// Noise multipliers of the default pushing sweep.
pub const DEFAULT_LEVELS: [f64; 4] = [1.0, 4.0, 8.0, 16.0];

pub const DEFAULT_TRIALS: usize = 100;

pub const DEFAULT_DEMO_SAMPLES: usize = 500;

fn fmt(v: f64) -> String {
    v.to_string()
}

struct DemoCase {
    name: &'static str,
    s: DMatrix<f64>,
    c: DVector<f64>,
}

fn demo_prior() -> Gaussian {
    Gaussian::from_slices(
        &[0.4, -0.2, 0.9],
        &[1.0, 0.3, 0.2, 0.3, 0.8, -0.1, 0.2, -0.1, 0.6],
    )
    .expect("demo prior is a valid Gaussian")
}

fn demo_cases() -> Vec<DemoCase> {
    vec![
        DemoCase {
            name: "plane",
            s: DMatrix::from_row_slice(3, 1, &[0.2, -0.3, 1.0]),
            c: DVector::from_column_slice(&[0.5]),
        },
        DemoCase {
            name: "line",
            s: DMatrix::from_row_slice(3, 2, &[0.2, 1.0, -0.3, 0.4, 1.0, 0.0]),
            c: DVector::from_column_slice(&[0.5, -0.1]),
        },
    ]
}

/// Marginalizes and conditions a 3-d Gaussian onto a plane and onto a line.
///
/// Writes `linear_demo_manifolds.csv`, `linear_demo_gaussians.csv` and `linear_demo_samples.csv`.
pub fn linear_demo(out: &Path, seed: u64, samples: usize) -> CliResult<Vec<PathBuf>> {
    let prior = demo_prior();
    let mut manifold_rows = Vec::new();
    let mut gaussian_rows = Vec::new();
    let mut sample_rows = Vec::new();
    let mut push_gaussian = |case: &str, op: &str, g: &Gaussian, stream: u64| {
        let mut row = vec![case.to_string(), op.to_string(), g.rank().to_string()];
        row.extend(g.mean().iter().copied().map(fmt));
        row.extend(g.cov().transpose().iter().copied().map(fmt));
        gaussian_rows.push(row);
        for x in g.sample(samples, derive_seed(seed, stream)) {
            let mut row = vec![case.to_string(), op.to_string()];
            row.extend(x.iter().copied().map(fmt));
            sample_rows.push(row);
        }
    };
    push_gaussian("none", "prior", &prior, 0);
    for (i, case) in demo_cases().into_iter().enumerate() {
        let manifold = LinearManifold::new(case.s.clone(), case.c.clone())?;
        for j in 0..case.s.ncols() {
            let mut row = vec![case.name.to_string(), j.to_string()];
            row.extend(case.s.column(j).iter().copied().map(fmt));
            row.push(fmt(case.c[j]));
            manifold_rows.push(row);
        }
        let stream = 1 + 2 * i as u64;
        push_gaussian(
            case.name,
            "marginal",
            &manifold.marginalize(&prior)?,
            stream,
        );
        push_gaussian(
            case.name,
            "conditional",
            &manifold.condition(&prior)?,
            stream + 1,
        );
    }

    let manifolds = output_path(out, "linear_demo_manifolds.csv")?;
    write_records(
        &manifolds,
        &["case", "constraint", "s_0", "s_1", "s_2", "c"],
        &manifold_rows,
    )?;
    let gaussians = output_path(out, "linear_demo_gaussians.csv")?;
    write_records(
        &gaussians,
        &[
            "case",
            "operation",
            "rank",
            "mean_0",
            "mean_1",
            "mean_2",
            "cov_00",
            "cov_01",
            "cov_02",
            "cov_10",
            "cov_11",
            "cov_12",
            "cov_20",
            "cov_21",
            "cov_22",
        ],
        &gaussian_rows,
    )?;
    let sample_path = output_path(out, "linear_demo_samples.csv")?;
    write_records(
        &sample_path,
        &["case", "operation", "x", "y", "z"],
        &sample_rows,
    )?;
    Ok(vec![manifolds, gaussians, sample_path])
}

#[derive(Serialize)]
struct DensityRow {
    scale: f64,
    det_sigma: f64,
    theta: f64,
    ref_density: f64,
    approx_density: f64,
}

#[derive(Serialize)]
struct KlRow {
    scale: f64,
    kl: f64,
}

/// Projected-normal comparison. Writes `projnorm_densities.csv` and `projnorm_summary.csv`.
pub fn projnorm(out: &Path, config: &ProjNormConfig) -> CliResult<Vec<PathBuf>> {
    let report = run_projnorm_experiment(config)?;
    let mut densities = Vec::new();
    let mut summary = Vec::new();
    for row in &report.rows {
        for ((&theta, &r), &a) in row
            .reference
            .grid()
            .iter()
            .zip(row.reference.values())
            .zip(row.approx.values())
        {
            densities.push(DensityRow {
                scale: row.scale,
                det_sigma: row.det_sigma,
                theta,
                ref_density: r,
                approx_density: a,
            });
        }
        summary.push(KlRow {
            scale: row.scale,
            kl: row.kl,
        });
    }
    let density_path = output_path(out, "projnorm_densities.csv")?;
    write_rows(&density_path, &densities)?;
    let summary_path = output_path(out, "projnorm_summary.csv")?;
    write_rows(&summary_path, &summary)?;
    Ok(vec![density_path, summary_path])
}

#[derive(Serialize)]
struct SweepRow {
    level_multiplier: f64,
    trial: usize,
    d_maha: f64,
    converged: bool,
}

#[derive(Serialize)]
struct LevelSummaryRow {
    level_multiplier: f64,
    trials: usize,
    failures: usize,
    converged: usize,
    mean_d_maha: f64,
    median_d_maha: f64,
}

/// Odometry-noise sweep. Writes `pushing_sweep.csv`, `pushing_summary.csv` and
/// `pushing_scenario.json` (the first trial of the first level).
pub fn pushing(
    out: &Path,
    seed: u64,
    config: &PushConfig,
    levels: &[f64],
    trials: usize,
) -> CliResult<Vec<PathBuf>> {
    if levels.is_empty() {
        return Err(CliError::Input(
            "at least one noise level is required".into(),
        ));
    }
    let scenario_path = output_path(out, "pushing_scenario.json")?;
    let first = PushConfig {
        noise_multiplier: levels[0],
        ..config.clone()
    };
    let scenario = generate_scenario(&first, trial_seed(seed, 0, 0))?;
    let sweep = noise_sweep(config, levels, trials, seed)?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for level in &sweep {
        for &(trial, d_maha, converged) in &level.trials {
            rows.push(SweepRow {
                level_multiplier: level.multiplier,
                trial,
                d_maha,
                converged,
            });
        }
        summary.push(LevelSummaryRow {
            level_multiplier: level.multiplier,
            trials: level.trials.len(),
            failures: level.failures,
            converged: level.trials.iter().filter(|t| t.2).count(),
            mean_d_maha: level.mean(),
            median_d_maha: level.median(),
        });
    }
    let sweep_path = output_path(out, "pushing_sweep.csv")?;
    write_rows(&sweep_path, &rows)?;
    let summary_path = output_path(out, "pushing_summary.csv")?;
    write_rows(&summary_path, &summary)?;
    write_json(&scenario_path, &scenario)?;
    Ok(vec![sweep_path, summary_path, scenario_path])
}

/// A Gaussian and a linear manifold `S^T x = c`; matrices are row-major nested arrays.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldInput {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct GaussianOutput {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub rank: usize,
}

impl From<&Gaussian> for GaussianOutput {
    fn from(g: &Gaussian) -> Self {
        Self {
            mean: g.mean().iter().copied().collect(),
            cov: g
                .cov()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            rank: g.rank(),
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> CliResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(CliError::Input(format!("matrix {name} is empty")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(CliError::Input(format!(
            "matrix {name} row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearOp {
    Condition,
    Marginalize,
}

impl LinearOp {
    fn file_name(self) -> &'static str {
        match self {
            Self::Condition => "condition.json",
            Self::Marginalize => "marginalize.json",
        }
    }
}

/// Reads a [`ManifoldInput`], applies the operation and writes `condition.json` or `marginalize.json`.
pub fn linear_op(out: &Path, input: &Path, op: LinearOp) -> CliResult<(PathBuf, GaussianOutput)> {
    let parsed: ManifoldInput = read_json(input)?;
    let cov = matrix_from_rows(&parsed.cov, "cov")?;
    let s = matrix_from_rows(&parsed.s, "S")?;
    let g = Gaussian::new(DVector::from_vec(parsed.mean), cov)?;
    let manifold = LinearManifold::new(s, DVector::from_vec(parsed.c))?;
    let result = match op {
        LinearOp::Condition => manifold.condition(&g)?,
        LinearOp::Marginalize => manifold.marginalize(&g)?,
    };
    let result = GaussianOutput::from(&result);
    let path = output_path(out, op.file_name())?;
    write_json(&path, &result)?;
    Ok((path, result))
}
