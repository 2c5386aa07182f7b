//! The four experiment subcommands.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ntk_core::data_io::{
    circle_dataset, circle_points, gaussian_dataset, load_idx, locate_mnist, shuffled_batch, sphere_dataset,
    LabelEncoding, LabeledDataset,
};
use ntk_core::export::{write_csv, write_json, write_pca, TrajectoryRow};
use ntk_core::finite_net::{empirical_ntk, forward, init, train, Architecture, Real, TrainingDirection};
use ntk_core::function_space::{
    decompose_along, kernel_gd_exact, kernel_pca, regression_limit, FunctionOnData, InitialFunction, PiOperator,
};
use ntk_core::limit_kernel::{cross_kernel, min_eigenvalue, ntk_stack, EmpiricalMeasure, KernelConfig};
use ntk_core::nonlinearity::{pd_certificate, PdVerdict};
use ntk_core::numerics::{relative_frobenius, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    gamma_grid, Dtype, KernelRegressionSettings, NtkConvergenceSettings, PcaConvergenceSettings, PdCertificateSettings,
};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

/// Stream of the training inputs; network `s` of a run uses stream `s`.
pub const TRAIN_STREAM: u64 = 1 << 40;
/// Stream of the seeded shuffle that picks the PCA batch.
pub const BATCH_STREAM: u64 = (1 << 40) + 1;
/// Stream of the sphere points for the positive-definiteness report.
pub const SPHERE_STREAM: u64 = (1 << 40) + 2;

/// Standard normal quantile at 0.9.
pub const Z_90: f64 = 1.2815515655446004;

macro_rules! with_dtype {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            Dtype::F32 => $f::<f32>($($arg),*),
            Dtype::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn product_target(measure: &EmpiricalMeasure) -> FunctionOnData {
    let p = measure.points();
    FunctionOnData::new(DMatrix::from_fn(p.nrows(), 1, |i, _| p[(i, 0)] * p[(i, 1)]))
}

fn runs(widths: &[usize], seed_count: usize) -> Vec<(usize, u64)> {
    widths
        .iter()
        .flat_map(|&w| (0..seed_count as u64).map(move |s| (w, s)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub width: usize,
    pub seed: u64,
    pub t: f64,
    pub gamma: f64,
    pub value: f64,
    pub limit_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub width: usize,
    pub seed: u64,
    /// Relative Frobenius change of the empirical NTK on the training inputs.
    pub drift: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct NtkConvergenceReport {
    pub settings: NtkConvergenceSettings,
    pub curves: Vec<CurveRow>,
    pub drifts: Vec<DriftRow>,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl NtkConvergenceReport {
    pub fn median_drift(&self, width: usize) -> f64 {
        median(self.drifts.iter().filter(|d| d.width == width).map(|d| d.drift).collect())
    }

    /// `values[seed][gamma]` of the curves for one width at time `t`.
    pub fn curves_at(&self, width: usize, t: f64) -> Vec<Vec<f64>> {
        let mut seeds: Vec<u64> = self.curves.iter().filter(|r| r.width == width).map(|r| r.seed).collect();
        seeds.dedup();
        seeds
            .iter()
            .map(|&s| {
                self.curves
                    .iter()
                    .filter(|r| r.width == width && r.seed == s && r.t == t)
                    .map(|r| r.value)
                    .collect()
            })
            .collect()
    }

    pub fn limit_curve(&self) -> Vec<f64> {
        let first = &self.curves[0];
        self.curves
            .iter()
            .filter(|r| r.width == first.width && r.seed == first.seed && r.t == first.t)
            .map(|r| r.limit_value)
            .collect()
    }
}

struct CurveRun {
    rows: Vec<CurveRow>,
    drift: DriftRow,
}

fn ntk_curve_run<T: Real>(
    s: &NtkConvergenceSettings,
    width: usize,
    seed: u64,
    curve_measure: &EmpiricalMeasure,
    train_set: &EmpiricalMeasure,
    fstar: &FunctionOnData,
    grid: &[f64],
    limit: &[f64],
) -> ntk_core::Result<CurveRun> {
    let arch = Architecture::uniform(2, width, 1, s.depth, s.beta, s.nonlinearity.clone())?;
    let mut params = init::<T>(&arch, RngStream::new(s.seed, seed));
    let curve = |params: &_, t: f64| -> ntk_core::Result<Vec<CurveRow>> {
        let gram = empirical_ntk::<T>(params, curve_measure)?;
        Ok(grid
            .iter()
            .enumerate()
            .map(|(j, &gamma)| CurveRow {
                width,
                seed,
                t,
                gamma,
                value: gram.entries.get(0, j + 1),
                limit_value: limit[j],
            })
            .collect())
    };
    let mut rows = curve(&params, 0.0)?;
    let before = empirical_ntk(&params, train_set)?;
    let mut direction = TrainingDirection::LeastSquares(fstar.clone());
    let summary = train(&mut params, train_set, &mut direction, s.lr, s.steps, &mut |_| Ok(()))?;
    rows.extend(curve(&params, summary.final_time)?);
    let after = empirical_ntk(&params, train_set)?;
    Ok(CurveRun {
        rows,
        drift: DriftRow {
            width,
            seed,
            drift: relative_frobenius(after.entries.as_matrix(), before.entries.as_matrix()),
            initial_loss: summary.losses[0],
            final_loss: *summary.losses.last().expect("at least the initial loss"),
        },
    })
}

/// Empirical NTK curves `Θ(x₀, x(γ))` with `x₀ = (1, 0)` at initialization and
/// after training on `x₁x₂` over Gaussian inputs, against the limiting kernel.
pub fn cmd_ntk_convergence(s: &NtkConvergenceSettings, out: &Path) -> Result<NtkConvergenceReport> {
    fs::create_dir_all(out)?;
    let grid = gamma_grid(s.grid_points);
    let x0 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let curve_measure = EmpiricalMeasure::new(DMatrix::from_fn(s.grid_points + 1, 2, |i, c| {
        if i == 0 {
            x0[(0, c)]
        } else {
            let g = grid[i - 1];
            if c == 0 {
                g.cos()
            } else {
                g.sin()
            }
        }
    }))?;
    let train_set = gaussian_dataset(s.train_size, 2, RngStream::new(s.seed, TRAIN_STREAM))?;
    let fstar = product_target(&train_set.measure);
    let config = KernelConfig::new(s.depth, s.beta, s.nonlinearity.clone())?;
    let cross = cross_kernel(&EmpiricalMeasure::new(x0)?, &config, &circle_points(&grid))?;
    let limit: Vec<f64> = cross.theta_top().column(0).iter().copied().collect();

    let results: Vec<CurveRun> = runs(&s.widths, s.seed_count)
        .into_par_iter()
        .map(|(width, seed)| {
            with_dtype!(
                s.dtype,
                ntk_curve_run(s, width, seed, &curve_measure, &train_set.measure, &fstar, &grid, &limit)
            )
            .map_err(CliError::run(format!("ntk-convergence width {width} seed {seed}")))
        })
        .collect::<Result<_>>()?;
    let mut curves = Vec::new();
    let mut drifts = Vec::new();
    for r in results {
        curves.extend(r.rows);
        drifts.push(r.drift);
    }
    write_csv(&out.join("curves.csv"), &curves)?;
    write_csv(&out.join("drift.csv"), &drifts)?;
    RunManifest::new(
        "ntk-convergence",
        s,
        vec![train_set.manifest("none")],
        &["curves.csv", "drift.csv"],
    )?
    .write(out)?;
    Ok(NtkConvergenceReport {
        settings: s.clone(),
        curves,
        drifts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub gamma: f64,
    pub mean: f64,
    pub std: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCurveRow {
    pub width: usize,
    pub seed: u64,
    pub gamma: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub width: usize,
    pub seed: u64,
    pub point: usize,
    pub value: f64,
    pub target: f64,
}

#[derive(Clone, Debug)]
pub struct KernelRegressionReport {
    pub settings: KernelRegressionSettings,
    pub percentiles: Vec<PercentileRow>,
    pub networks: Vec<NetworkCurveRow>,
    pub fits: Vec<FitRow>,
}

impl KernelRegressionReport {
    /// Largest `|f_θ(x_i) − f*(x_i)|` over the training points of every run of `width`.
    pub fn max_fit_error(&self, width: usize) -> f64 {
        self.fits
            .iter()
            .filter(|f| f.width == width)
            .map(|f| (f.value - f.target).abs())
            .fold(0.0, f64::max)
    }

    /// Fraction of trained-network curve points inside the 10–90 band.
    pub fn band_coverage(&self, width: usize) -> f64 {
        let g = self.percentiles.len();
        let points: Vec<&NetworkCurveRow> = self.networks.iter().filter(|r| r.width == width).collect();
        let inside = points
            .iter()
            .enumerate()
            .filter(|(k, r)| {
                let p = &self.percentiles[k % g];
                p.p10 <= r.value && r.value <= p.p90
            })
            .count();
        inside as f64 / points.len() as f64
    }
}

fn regression_run<T: Real>(
    s: &KernelRegressionSettings,
    width: usize,
    seed: u64,
    train_set: &EmpiricalMeasure,
    fstar: &FunctionOnData,
    queries: &DMatrix<f64>,
) -> ntk_core::Result<(Vec<f64>, Vec<f64>)> {
    let arch = Architecture::uniform(2, width, 1, s.depth, s.beta, s.nonlinearity.clone())?;
    let mut params = init::<T>(&arch, RngStream::new(s.seed, seed));
    let mut direction = TrainingDirection::LeastSquares(fstar.clone());
    train(&mut params, train_set, &mut direction, s.lr, s.steps, &mut |_| Ok(()))?;
    let on_queries = forward(&params, queries)?.output_function();
    let on_data = forward(&params, train_set.points())?.output_function();
    Ok((
        on_queries.values().column(0).iter().copied().collect(),
        on_data.values().column(0).iter().copied().collect(),
    ))
}

/// Trained networks on the circle task next to the percentiles of the
/// infinite-width `t → ∞` Gaussian.
pub fn cmd_kernel_regression(s: &KernelRegressionSettings, out: &Path) -> Result<KernelRegressionReport> {
    fs::create_dir_all(out)?;
    let train_set = circle_dataset(s.train_size, s.angle_offset)?;
    let fstar = product_target(&train_set.measure);
    let grid = gamma_grid(s.grid_points);
    let queries = circle_points(&grid);
    let config = KernelConfig::new(s.depth, s.beta, s.nonlinearity.clone())?;
    let stack = ntk_stack(&train_set.measure, &config)?;
    let theta = stack.theta_gram(1).expect("ntk_stack carries the tangent kernel");
    let limit = regression_limit(&theta, &stack.sigma_gram(s.depth, 1), &fstar, InitialFunction::ZeroMean, None)?;
    let cross = cross_kernel(&train_set.measure, &config, &queries)?;
    let mean = limit.mean(cross.theta_top())?;
    let variance = limit.variance(cross.theta_top(), cross.sigma_top(), &cross.query_sigma_diag[s.depth - 1])?;
    let percentiles: Vec<PercentileRow> = grid
        .iter()
        .enumerate()
        .map(|(j, &gamma)| {
            let (m, sd) = (mean.values()[(j, 0)], variance.values()[(j, 0)].sqrt());
            PercentileRow {
                gamma,
                mean: m,
                std: sd,
                p10: m - Z_90 * sd,
                p50: m,
                p90: m + Z_90 * sd,
            }
        })
        .collect();

    let results: Vec<(usize, u64, Vec<f64>, Vec<f64>)> = runs(&s.widths, s.seed_count)
        .into_par_iter()
        .map(|(width, seed)| {
            with_dtype!(s.dtype, regression_run(s, width, seed, &train_set.measure, &fstar, &queries))
                .map(|(q, d)| (width, seed, q, d))
                .map_err(CliError::run(format!("kernel-regression width {width} seed {seed}")))
        })
        .collect::<Result<_>>()?;
    let mut networks = Vec::new();
    let mut fits = Vec::new();
    for (width, seed, on_queries, on_data) in results {
        networks.extend(grid.iter().zip(on_queries).map(|(&gamma, value)| NetworkCurveRow {
            width,
            seed,
            gamma,
            value,
        }));
        fits.extend(on_data.into_iter().enumerate().map(|(point, value)| FitRow {
            width,
            seed,
            point,
            value,
            target: fstar.values()[(point, 0)],
        }));
    }
    write_csv(&out.join("percentiles.csv"), &percentiles)?;
    write_csv(&out.join("networks.csv"), &networks)?;
    write_csv(&out.join("fit.csv"), &fits)?;
    RunManifest::new(
        "kernel-regression",
        s,
        vec![train_set.manifest("none")],
        &["percentiles.csv", "networks.csv", "fit.csv"],
    )?
    .write(out)?;
    Ok(KernelRegressionReport {
        settings: s.clone(),
        percentiles,
        networks,
        fits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaTrajectoryRow {
    pub width: usize,
    pub seed: u64,
    pub step: usize,
    pub t: f64,
    pub g_norm: f64,
    pub h_norm: f64,
    pub analytic_g: f64,
}

#[derive(Clone, Debug)]
pub struct PcaConvergenceReport {
    pub settings: PcaConvergenceSettings,
    /// `true` when the batch came from MNIST files, `false` for the synthetic fallback.
    pub used_mnist: bool,
    pub eigenvalues: Vec<f64>,
    pub exact: Vec<TrajectoryRow>,
    pub networks: Vec<PcaTrajectoryRow>,
}

impl PcaConvergenceReport {
    pub fn max_h_norm(&self, width: usize) -> f64 {
        self.networks
            .iter()
            .filter(|r| r.width == width)
            .map(|r| r.h_norm)
            .fold(0.0, f64::max)
    }
}

/// Loads the PCA batch: a seeded shuffle of the MNIST training set, or
/// Gaussian inputs of dimension 784 when allowed.
pub fn pca_batch(s: &PcaConvergenceSettings) -> Result<(LabeledDataset, bool)> {
    if let Some((images, labels)) = locate_mnist(&s.mnist_dir) {
        let all = load_idx(&images, &labels, None, LabelEncoding::None)?;
        return Ok((shuffled_batch(&all, s.batch_size, RngStream::new(s.seed, BATCH_STREAM))?, true));
    }
    if s.synthetic_fallback {
        return Ok((gaussian_dataset(s.batch_size, 784, RngStream::new(s.seed, BATCH_STREAM))?, false));
    }
    Err(CliError::MissingData(format!(
        "no MNIST training files in {} and synthetic_fallback is off",
        s.mnist_dir.display()
    )))
}

fn pca_run<T: Real>(
    s: &PcaConvergenceSettings,
    width: usize,
    seed: u64,
    batch: &EmpiricalMeasure,
    component: &FunctionOnData,
    lambda2: f64,
) -> ntk_core::Result<Vec<PcaTrajectoryRow>> {
    let arch = Architecture::uniform(batch.input_dim(), width, 1, s.depth, s.beta, s.nonlinearity.clone())?;
    let mut params = init::<T>(&arch, RngStream::new(s.seed, seed));
    let f0 = forward(&params, batch.points())?.output_function();
    let fstar = f0.add(&component.scale(0.5))?;
    let mut direction = TrainingDirection::LeastSquares(fstar.clone());
    let mut rows = Vec::with_capacity(s.steps + 1);
    train(&mut params, batch, &mut direction, s.lr, s.steps, &mut |snap| {
        let (g, h) = decompose_along(&snap.outputs.sub(&fstar)?, component)?;
        rows.push(PcaTrajectoryRow {
            width,
            seed,
            step: snap.step,
            t: snap.time,
            g_norm: g.norm(),
            h_norm: h.norm(),
            analytic_g: 0.5 * (-lambda2 * snap.time).exp(),
        });
        Ok(())
    })?;
    Ok(rows)
}

/// Kernel PCA of the limiting NTK on a batch, then training toward
/// `f* = f_θ(0) + 0.5 f^(2)` split into the part along `f^(2)` and the rest.
pub fn cmd_pca_convergence(s: &PcaConvergenceSettings, out: &Path) -> Result<PcaConvergenceReport> {
    fs::create_dir_all(out)?;
    let (batch, used_mnist) = pca_batch(s)?;
    let config = KernelConfig::new(s.depth, s.beta, s.nonlinearity.clone())?;
    let stack = ntk_stack(&batch.measure, &config)?;
    let op = PiOperator::new(&stack.theta_gram(1).expect("ntk_stack carries the tangent kernel"));
    let pca = kernel_pca(&op, 3.min(batch.len()))?;
    if pca.components.len() < 2 {
        return Err(CliError::MissingData("the batch needs at least two points".into()));
    }
    let component = pca.components[1].clone();
    let lambda2 = pca.eigenvalues[1];

    let times: Vec<f64> = (0..=s.steps).map(|k| k as f64 * s.lr).collect();
    let zero = FunctionOnData::zeros(batch.len(), 1);
    let target = component.scale(0.5);
    let exact = kernel_gd_exact(&op, &zero, &target, &times)?
        .iter()
        .zip(&times)
        .map(|(f, &t)| {
            let diff = f.sub(&target)?;
            let (g, h) = decompose_along(&diff, &component)?;
            Ok(TrajectoryRow {
                t,
                loss: diff.norm(),
                g_norm: g.norm(),
                h_norm: h.norm(),
            })
        })
        .collect::<ntk_core::Result<Vec<_>>>()?;

    let networks: Vec<PcaTrajectoryRow> = runs(&s.widths, s.seed_count)
        .into_par_iter()
        .map(|(width, seed)| {
            with_dtype!(s.dtype, pca_run(s, width, seed, &batch.measure, &component, lambda2))
                .map_err(CliError::run(format!("pca-convergence width {width} seed {seed}")))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    write_pca(&out.join("eigenvalues.csv"), &out.join("components.csv"), &pca)?;
    write_csv(&out.join("exact.csv"), &exact)?;
    write_csv(&out.join("trajectories.csv"), &networks)?;
    let scaling = if used_mnist { "pixels/255" } else { "none" };
    RunManifest::new(
        "pca-convergence",
        s,
        vec![batch.manifest(scaling)],
        &["eigenvalues.csv", "components.csv", "exact.csv", "trajectories.csv"],
    )?
    .write(out)?;
    Ok(PcaConvergenceReport {
        settings: s.clone(),
        used_mnist,
        eigenvalues: pca.eigenvalues,
        exact,
        networks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdReport {
    pub nonlinearity: String,
    pub verdict: PdVerdict,
    pub even_nonzero_count: usize,
    pub odd_nonzero_count: usize,
    pub threshold: f64,
    pub gram_points: usize,
    pub gram_min_eig: f64,
    pub gram_trace: f64,
}

/// Truncated-series certificate plus the smallest eigenvalue of the depth-2
/// limiting NTK gram on random sphere points.
pub fn cmd_pd_certificate(s: &PdCertificateSettings, out: &Path) -> Result<PdReport> {
    fs::create_dir_all(out)?;
    let cert = pd_certificate(&s.nonlinearity, s.sphere_dim, s.beta, s.order, s.threshold)?;
    let sphere = sphere_dataset(s.sphere_points, s.sphere_dim, RngStream::new(s.seed, SPHERE_STREAM))?;
    let stack = ntk_stack(&sphere.measure, &KernelConfig::new(2, s.beta, s.nonlinearity.clone())?)?;
    let gram = stack.theta_gram(1).expect("ntk_stack carries the tangent kernel");
    let report = PdReport {
        nonlinearity: s.nonlinearity.to_string(),
        verdict: cert.verdict,
        even_nonzero_count: cert.even_nonzero_count,
        odd_nonzero_count: cert.odd_nonzero_count,
        threshold: cert.threshold,
        gram_points: s.sphere_points,
        gram_min_eig: min_eigenvalue(&gram)?,
        gram_trace: gram.entries.trace(),
    };
    write_json(&out.join("report.json"), &report)?;
    RunManifest::new("pd-certificate", s, vec![sphere.manifest("none")], &["report.json"])?.write(out)?;
    Ok(report)
}
