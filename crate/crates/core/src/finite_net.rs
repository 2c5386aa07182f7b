//! Fully connected networks in the NTK parametrization.
//!
//! `α̃^(ℓ+1) = W^(ℓ) α^(ℓ) / √n_ℓ + β b^(ℓ)`, `α^(ℓ) = σ(α̃^(ℓ))`, output `α̃^(L)`.
//! Batches are stored column-wise: a layer of width `n` over `M` samples is an
//! `n × M` matrix. Weights may be `f32` or `f64`; every kernel computed from a
//! network is accumulated in `f64`.
//!
//! Sensitivities are indexed by the layer of the preactivation they multiply:
//! `d^(L)` is the output cotangent and
//! `d^(ℓ) = σ̇(α̃^(ℓ)) ⊙ W^(ℓ)ᵀ d^(ℓ+1) / √n_ℓ` for `1 ≤ ℓ < L`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, RealField};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NtkError, Result};
use crate::function_space::FunctionOnData;
use crate::limit_kernel::{EmpiricalMeasure, GramKind, KernelGram};
use crate::nonlinearity::Nonlinearity;
use crate::numerics::{relative_frobenius, RngStream, SymMatrix};

/// Floating-point type used for network parameters.
pub trait Real: RealField + Copy + Send + Sync + 'static {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn of(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn of(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Architecture {
    /// `n_0, …, n_L`
    pub widths: Vec<usize>,
    pub beta: f64,
    pub nonlinearity: Nonlinearity,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, beta: f64, nonlinearity: Nonlinearity) -> Result<Self> {
        if widths.len() < 2 {
            return Err(NtkError::arg(format!(
                "an architecture needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(NtkError::arg(format!("widths must be positive, got {widths:?}")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(NtkError::arg(format!("beta must be finite and nonnegative, got {beta}")));
        }
        Ok(Architecture {
            widths,
            beta,
            nonlinearity,
        })
    }

    /// `n_0` and `n_L` fixed, every hidden layer of width `width`.
    pub fn uniform(input: usize, width: usize, output: usize, depth: usize, beta: f64, nonlinearity: Nonlinearity) -> Result<Self> {
        if depth == 0 {
            return Err(NtkError::arg("depth must be at least 1"));
        }
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(width, depth - 1));
        widths.push(output);
        Architecture::new(widths, beta, nonlinearity)
    }

    /// `L`
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.depth()]
    }

    /// `P = Σ_ℓ (n_ℓ + 1) n_{ℓ+1}`
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Weights `W^(ℓ)` (`n_{ℓ+1} × n_ℓ`) and biases `b^(ℓ)` for `ℓ = 0..L`.
#[derive(Clone, Debug)]
pub struct NetworkParams<T: Real> {
    pub arch: Architecture,
    pub weights: Vec<DMatrix<T>>,
    pub biases: Vec<DVector<T>>,
    /// Stream the parameters were drawn from, if any.
    pub origin: Option<RngStream>,
}

/// Draws every parameter iid `N(0, 1)`. Per layer, `W^(ℓ)` is filled in
/// column-major order and then `b^(ℓ)`; `f32` parameters are the rounded `f64` draws.
pub fn init<T: Real>(arch: &Architecture, stream: RngStream) -> NetworkParams<T> {
    let mut rng = stream.rng();
    let mut draw = move || T::of(StandardNormal.sample(&mut rng));
    let mut weights = Vec::with_capacity(arch.depth());
    let mut biases = Vec::with_capacity(arch.depth());
    for w in arch.widths.windows(2) {
        weights.push(DMatrix::from_fn(w[1], w[0], |_, _| draw()));
        biases.push(DVector::from_fn(w[1], |_, _| draw()));
    }
    NetworkParams {
        arch: arch.clone(),
        weights,
        biases,
        origin: Some(stream),
    }
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        NetworkParams {
            arch: arch.clone(),
            weights: arch.widths.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            biases: arch.widths.windows(2).map(|w| DVector::zeros(w[1])).collect(),
            origin: None,
        }
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    /// All parameters, per layer `W^(ℓ)` row-major followed by `b^(ℓ)`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for i in 0..w.nrows() {
                out.extend(w.row(i).iter().map(|x| x.to_f64()));
            }
            out.extend(b.iter().map(|x| x.to_f64()));
        }
        out
    }

    /// Inverse of [`NetworkParams::flatten`].
    pub fn from_flat(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.param_count() {
            return Err(NtkError::Dimension {
                context: "NetworkParams::from_flat",
                expected: arch.param_count(),
                found: flat.len(),
            });
        }
        let mut params = NetworkParams::zeros(arch);
        let mut it = flat.iter().map(|&x| T::of(x));
        for (w, b) in params.weights.iter_mut().zip(params.biases.iter_mut()) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    w[(i, j)] = it.next().expect("length checked");
                }
            }
            for x in b.iter_mut() {
                *x = it.next().expect("length checked");
            }
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(all_finite) && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Euclidean norm of all parameters.
    pub fn norm(&self) -> f64 {
        let sq: f64 = self
            .weights
            .iter()
            .map(|w| w.iter().map(|x| x.to_f64().powi(2)).sum::<f64>())
            .chain(self.biases.iter().map(|b| b.iter().map(|x| x.to_f64().powi(2)).sum::<f64>()))
            .sum();
        sq.sqrt()
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.weights.len() == self.depth()
            && self.biases.len() == self.depth()
            && self.arch.widths.windows(2).zip(&self.weights).zip(&self.biases).all(|((w, m), b)| {
                m.shape() == (w[1], w[0]) && b.len() == w[1]
            });
        if ok {
            Ok(())
        } else {
            Err(NtkError::arg("parameter shapes do not match the architecture"))
        }
    }
}

/// Preactivations `α̃^(1..=L)` and activations `α^(0..L)` for a batch.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Real> {
    /// `preactivations[ℓ − 1] = α̃^(ℓ)`
    pub preactivations: Vec<DMatrix<T>>,
    /// `activations[ℓ] = α^(ℓ)`, with `α^(0)` the inputs
    pub activations: Vec<DMatrix<T>>,
}

impl<T: Real> ForwardTrace<T> {
    /// `f_θ = α̃^(L)`, `n_L × M`.
    pub fn output(&self) -> &DMatrix<T> {
        self.preactivations.last().expect("depth is at least one")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].ncols()
    }

    /// Outputs as an `M × n_L` function table in `f64`.
    pub fn output_function(&self) -> FunctionOnData {
        let out = self.output();
        FunctionOnData::new(DMatrix::from_fn(out.ncols(), out.nrows(), |i, k| out[(k, i)].to_f64()))
    }
}

fn map<T: Real>(m: &DMatrix<T>, f: impl Fn(f64) -> f64) -> DMatrix<T> {
    m.map(|x| T::of(f(x.to_f64())))
}

/// Runs a batch given as an `M × n₀` matrix of rows.
pub fn forward<T: Real>(params: &NetworkParams<T>, batch: &DMatrix<f64>) -> Result<ForwardTrace<T>> {
    params.check_shapes()?;
    if batch.ncols() != params.arch.input_dim() {
        return Err(NtkError::Dimension {
            context: "forward batch width",
            expected: params.arch.input_dim(),
            found: batch.ncols(),
        });
    }
    let depth = params.depth();
    let beta = T::of(params.arch.beta);
    let mut activations = vec![batch.transpose().map(T::of)];
    let mut preactivations = Vec::with_capacity(depth);
    for l in 0..depth {
        let input = &activations[l];
        let mut z = &params.weights[l] * input;
        z *= T::of(1.0 / (params.arch.widths[l] as f64).sqrt());
        let shift = &params.biases[l] * beta;
        for mut col in z.column_iter_mut() {
            col += &shift;
        }
        if l + 1 < depth {
            activations.push(map(&z, |x| params.arch.nonlinearity.apply(x)));
        }
        preactivations.push(z);
    }
    Ok(ForwardTrace {
        preactivations,
        activations,
    })
}

/// Back-propagated directions `d^(1..=L)`, each `n_ℓ × M`.
#[derive(Clone, Debug)]
pub struct SensitivityTrace<T: Real> {
    /// `directions[ℓ − 1] = d^(ℓ)`
    pub directions: Vec<DMatrix<T>>,
}

impl<T: Real> SensitivityTrace<T> {
    /// `d^(ℓ)` for `1 ≤ ℓ ≤ L`.
    pub fn direction(&self, level: usize) -> &DMatrix<T> {
        &self.directions[level - 1]
    }
}

/// `⟨∂_θ F, c⟩_{p^in}`: the gradient of `(1/M) Σ_i c_iᵀ f_θ(x_i)`.
#[derive(Clone, Debug)]
pub struct ParamGradient<T: Real> {
    pub weights: Vec<DMatrix<T>>,
    pub biases: Vec<DVector<T>>,
}

fn check_trace<T: Real>(params: &NetworkParams<T>, trace: &ForwardTrace<T>, cotangent: &DMatrix<T>) -> Result<()> {
    params.check_shapes()?;
    let depth = params.depth();
    let m = trace.batch_size();
    let layers_ok = trace.preactivations.len() == depth
        && trace.activations.len() == depth
        && trace
            .activations
            .iter()
            .zip(&params.arch.widths)
            .all(|(a, &n)| a.shape() == (n, m))
        && trace
            .preactivations
            .iter()
            .zip(&params.arch.widths[1..])
            .all(|(z, &n)| z.shape() == (n, m));
    if !layers_ok {
        return Err(NtkError::arg("forward trace does not match the parameters"));
    }
    if cotangent.shape() != (params.arch.output_dim(), m) {
        return Err(NtkError::arg(format!(
            "cotangent must be {}x{m}, got {}x{}",
            params.arch.output_dim(),
            cotangent.nrows(),
            cotangent.ncols()
        )));
    }
    Ok(())
}

/// `d^(ℓ)` from `d^(ℓ+1)`.
fn propagate<T: Real>(params: &NetworkParams<T>, trace: &ForwardTrace<T>, level: usize, upper: &DMatrix<T>) -> DMatrix<T> {
    // (d^(ℓ+1)ᵀ W) keeps the product on the fast non-transposed GEMM path
    let pulled = (upper.transpose() * &params.weights[level]).transpose();
    let scale = 1.0 / (params.arch.widths[level] as f64).sqrt();
    let slope = map(&trace.preactivations[level - 1], |x| params.arch.nonlinearity.apply_dot(x) * scale);
    pulled.component_mul(&slope)
}

/// Sensitivities for an `n_L × M` cotangent seed.
pub fn sensitivities<T: Real>(params: &NetworkParams<T>, trace: &ForwardTrace<T>, cotangent: &DMatrix<T>) -> Result<SensitivityTrace<T>> {
    check_trace(params, trace, cotangent)?;
    let depth = params.depth();
    let mut rev = vec![cotangent.clone()];
    for level in (1..depth).rev() {
        let next = propagate(params, trace, level, rev.last().expect("seeded"));
        rev.push(next);
    }
    rev.reverse();
    Ok(SensitivityTrace { directions: rev })
}

/// Sensitivities and the parameter gradient
/// `∂W^(ℓ) = d^(ℓ+1) α^(ℓ)ᵀ / (M √n_ℓ)`, `∂b^(ℓ) = β · mean d^(ℓ+1)`.
pub fn backward<T: Real>(
    params: &NetworkParams<T>,
    trace: &ForwardTrace<T>,
    cotangent: &DMatrix<T>,
) -> Result<(SensitivityTrace<T>, ParamGradient<T>)> {
    let sens = sensitivities(params, trace, cotangent)?;
    let m = trace.batch_size() as f64;
    let beta = T::of(params.arch.beta);
    let mut weights = Vec::with_capacity(params.depth());
    let mut biases = Vec::with_capacity(params.depth());
    for l in 0..params.depth() {
        let d = sens.direction(l + 1);
        let scale = T::of(1.0 / (m * (params.arch.widths[l] as f64).sqrt()));
        weights.push(d * trace.activations[l].transpose() * scale);
        biases.push(d.column_mean() * beta);
    }
    Ok((sens, ParamGradient { weights, biases }))
}

fn all_finite<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.is_finite())
}

fn to_f64<T: Real>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(|x| x.to_f64())
}

/// Empirical NTK Gram on `measure` via the layerwise factorization
/// `Θ_{kk'}(x_i, x_j) = Σ_ℓ (α^(ℓ)(x_i)ᵀα^(ℓ)(x_j)/n_ℓ + β²) · d_k^(ℓ+1)(x_i)ᵀ d_{k'}^(ℓ+1)(x_j)`,
/// with `d_k^(L) = e_k`. Full layout, index `i * n_L + k`.
pub fn empirical_ntk<T: Real>(params: &NetworkParams<T>, measure: &EmpiricalMeasure) -> Result<KernelGram> {
    empirical_ntk_at(params, measure, 0.0)
}

/// [`empirical_ntk`] with the training time recorded in the gram kind.
pub fn empirical_ntk_at<T: Real>(params: &NetworkParams<T>, measure: &EmpiricalMeasure, time: f64) -> Result<KernelGram> {
    let trace = forward(params, measure.points())?;
    let n = measure.len();
    let n_out = params.arch.output_dim();
    let depth = params.depth();
    let beta2 = params.arch.beta * params.arch.beta;

    let activation_grams: Vec<DMatrix<f64>> = (0..depth)
        .map(|l| {
            let a = to_f64(&trace.activations[l]);
            (a.tr_mul(&a) / params.arch.widths[l] as f64).add_scalar(beta2)
        })
        .collect();

    let per_output: Vec<Vec<DMatrix<f64>>> = (0..n_out)
        .map(|k| {
            let mut seed = DMatrix::<T>::zeros(n_out, n);
            seed.row_mut(k).fill(T::one());
            sensitivities(params, &trace, &seed).map(|s| s.directions.iter().map(to_f64).collect())
        })
        .collect::<Result<_>>()?;

    let dim = n * n_out;
    let mut theta = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..n_out {
        for kp in 0..n_out {
            for l in 0..depth {
                let sens = per_output[k][l].tr_mul(&per_output[kp][l]);
                for i in 0..n {
                    for j in 0..n {
                        theta[(i * n_out + k, j * n_out + kp)] += activation_grams[l][(i, j)] * sens[(i, j)];
                    }
                }
            }
        }
    }
    KernelGram::full(
        GramKind::ThetaEmpirical {
            depth,
            widths: params.arch.widths.clone(),
            time,
        },
        SymMatrix::from_matrix(theta)?,
        n,
        n_out,
    )
}

/// Relative Frobenius distance between the empirical NTK grams of two networks.
pub fn ntk_drift<T: Real>(before: &NetworkParams<T>, after: &NetworkParams<T>, measure: &EmpiricalMeasure) -> Result<f64> {
    if before.arch.widths != after.arch.widths {
        return Err(NtkError::arg("ntk_drift needs networks of the same architecture"));
    }
    let a = empirical_ntk(before, measure)?;
    let b = empirical_ntk(after, measure)?;
    Ok(relative_frobenius(b.entries.as_matrix(), a.entries.as_matrix()))
}

/// Function-space direction `d_t` the parameters follow.
pub enum TrainingDirection {
    /// `d_t = f* − f_θ(t)` on the dataset, descending `½‖f − f*‖²_{p^in}`.
    LeastSquares(FunctionOnData),
    Custom(Box<dyn FnMut(f64, &FunctionOnData) -> Result<FunctionOnData> + Send>),
}

impl TrainingDirection {
    pub fn direction(&mut self, t: f64, f: &FunctionOnData) -> Result<FunctionOnData> {
        match self {
            TrainingDirection::LeastSquares(target) => target.sub(f),
            TrainingDirection::Custom(provider) => provider(t, f),
        }
    }

    fn loss(&self, f: &FunctionOnData) -> Option<f64> {
        match self {
            TrainingDirection::LeastSquares(target) => f.sub(target).ok().map(|r| r.norm()),
            TrainingDirection::Custom(_) => None,
        }
    }
}

/// State handed to recorders before each update and once after the last one.
pub struct TrainSnapshot<'a, T: Real> {
    pub step: usize,
    pub time: f64,
    pub outputs: &'a FunctionOnData,
    /// `‖f_θ − f*‖_{p^in}` for least-squares directions.
    pub loss: Option<f64>,
    pub params: &'a NetworkParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_time: f64,
    /// Loss at steps `0..=steps` for least-squares directions, empty otherwise.
    pub losses: Vec<f64>,
}

/// Recorder that ignores every snapshot.
pub fn no_recorder<T: Real>(_: &TrainSnapshot<'_, T>) -> Result<()> {
    Ok(())
}

/// Explicit Euler on the parameter flow: `θ ← θ + step_size · ⟨∂_θ F, d_t⟩_{p^in}`,
/// full batch over `measure`, with `t = step · step_size`.
pub fn train<T: Real>(
    params: &mut NetworkParams<T>,
    measure: &EmpiricalMeasure,
    direction: &mut TrainingDirection,
    step_size: f64,
    steps: usize,
    recorder: &mut dyn FnMut(&TrainSnapshot<'_, T>) -> Result<()>,
) -> Result<TrainSummary> {
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(NtkError::arg(format!("step size must be positive, got {step_size}")));
    }
    let depth = params.depth();
    let n = measure.len() as f64;
    let beta = T::of(params.arch.beta);
    let mut losses = Vec::new();
    for step in 0..=steps {
        let time = step as f64 * step_size;
        let trace = forward(params, measure.points())?;
        let outputs = trace.output_function();
        if !outputs.values().iter().all(|x| x.is_finite()) {
            return Err(NtkError::Divergence { step });
        }
        let loss = direction.loss(&outputs);
        losses.extend(loss);
        recorder(&TrainSnapshot {
            step,
            time,
            outputs: &outputs,
            loss,
            params,
        })?;
        if step == steps {
            break;
        }
        let d = direction.direction(time, &outputs)?;
        if d.values().shape() != outputs.values().shape() {
            return Err(NtkError::Dimension {
                context: "training direction",
                expected: outputs.values().len(),
                found: d.values().len(),
            });
        }
        let cotangent = d.values().transpose().map(T::of);
        let sens = sensitivities(params, &trace, &cotangent)?;
        // finite weights plus finite rank-N update factors give finite new weights
        // (short of overflow), so the full parameter scan only runs once at the end
        let factors_finite = sens.directions.iter().chain(&trace.activations).all(all_finite);
        if !factors_finite {
            return Err(NtkError::Divergence { step: step + 1 });
        }
        for l in 0..depth {
            let upper = sens.direction(l + 1);
            let scale = T::of(step_size / (n * (params.arch.widths[l] as f64).sqrt()));
            let lower_t = trace.activations[l].transpose();
            params.weights[l].gemm(scale, upper, &lower_t, T::one());
            params.biases[l] += upper.column_mean() * (beta * T::of(step_size));
        }
    }
    if !params.is_finite() {
        return Err(NtkError::Divergence { step: steps });
    }
    Ok(TrainSummary {
        steps,
        final_time: steps as f64 * step_size,
        losses,
    })
}

/// JSON sidecar describing a flat parameter file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub widths: Vec<usize>,
    pub beta: f64,
    pub nonlinearity: Nonlinearity,
    pub dtype: String,
    pub origin: Option<RngStream>,
    /// Byte layout of the parameter file.
    pub layout: String,
    pub param_count: usize,
}

const CHECKPOINT_LAYOUT: &str = "little-endian; per layer W row-major then b";

pub fn checkpoint_sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes the parameters to `path` and the header to `path.json`.
pub fn save_checkpoint<T: Real>(params: &NetworkParams<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(params.arch.param_count() * T::BYTES);
    for (w, b) in params.weights.iter().zip(&params.biases) {
        for i in 0..w.nrows() {
            for x in w.row(i).iter() {
                x.write_le(&mut bytes);
            }
        }
        for x in b.iter() {
            x.write_le(&mut bytes);
        }
    }
    fs::File::create(path)?.write_all(&bytes)?;
    let header = CheckpointHeader {
        widths: params.arch.widths.clone(),
        beta: params.arch.beta,
        nonlinearity: params.arch.nonlinearity.clone(),
        dtype: T::DTYPE.to_string(),
        origin: params.origin,
        layout: CHECKPOINT_LAYOUT.to_string(),
        param_count: params.arch.param_count(),
    };
    fs::write(checkpoint_sidecar(path), serde_json::to_vec_pretty(&header)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<NetworkParams<T>> {
    let header: CheckpointHeader = serde_json::from_slice(&fs::read(checkpoint_sidecar(path))?)?;
    if header.dtype != T::DTYPE {
        return Err(NtkError::arg(format!(
            "checkpoint holds {} parameters, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let arch = Architecture::new(header.widths, header.beta, header.nonlinearity)?;
    let bytes = fs::read(path)?;
    if bytes.len() != arch.param_count() * T::BYTES {
        return Err(NtkError::Dimension {
            context: "checkpoint payload bytes",
            expected: arch.param_count() * T::BYTES,
            found: bytes.len(),
        });
    }
    let mut values = bytes.chunks_exact(T::BYTES).map(T::read_le);
    let mut params = NetworkParams::zeros(&arch);
    for (w, b) in params.weights.iter_mut().zip(params.biases.iter_mut()) {
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                w[(i, j)] = values.next().expect("length checked");
            }
        }
        for x in b.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    params.origin = header.origin;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_kernel::{sigma_stack, KernelConfig};
    use approx::assert_abs_diff_eq;

    fn arch(widths: &[usize]) -> Architecture {
        Architecture::new(widths.to_vec(), 0.1, Nonlinearity::Relu).unwrap()
    }

    fn inputs(m: usize, n0: usize, seed: u64) -> DMatrix<f64> {
        DMatrix::from_row_slice(m, n0, &crate::numerics::standard_normal(RngStream::new(seed, 1), m * n0))
    }

    #[test]
    fn shapes_and_param_count() {
        let a = arch(&[2, 3, 1]);
        assert_eq!(a.param_count(), 13);
        let p: NetworkParams<f64> = init(&a, RngStream::new(1, 0));
        assert_eq!(p.weights[0].shape(), (3, 2));
        assert_eq!(p.weights[1].shape(), (1, 3));
        assert_eq!(p.biases[0].len(), 3);
        assert_eq!(p.biases[1].len(), 1);
        assert_eq!(p.flatten().len(), 13);
        assert!(Architecture::new(vec![2], 0.1, Nonlinearity::Relu).is_err());
        assert!(Architecture::new(vec![2, 0, 1], 0.1, Nonlinearity::Relu).is_err());
        assert!(Architecture::new(vec![2, 1], -1.0, Nonlinearity::Relu).is_err());
    }

    #[test]
    fn init_is_deterministic_and_standard_normal() {
        let a = arch(&[10, 1000, 1000]);
        let p: NetworkParams<f64> = init(&a, RngStream::new(7, 0));
        let q: NetworkParams<f64> = init(&a, RngStream::new(7, 0));
        assert_eq!(p.flatten(), q.flatten());
        let r: NetworkParams<f32> = init(&a, RngStream::new(7, 0));
        assert!(p.flatten().iter().zip(r.flatten()).all(|(x, y)| (*x as f32) as f64 == y));
        let all = p.flatten();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(all.len() > 1_000_000);
        assert!(mean.abs() < 0.005, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn flat_round_trip() {
        let a = arch(&[3, 4, 2]);
        let p: NetworkParams<f64> = init(&a, RngStream::new(2, 0));
        let q = NetworkParams::<f64>::from_flat(&a, &p.flatten()).unwrap();
        assert_eq!(p.weights, q.weights);
        assert_eq!(p.biases, q.biases);
    }

    #[test]
    fn depth_one_forward_cases() {
        let a = arch(&[3, 2]);
        let mut p = NetworkParams::<f64>::zeros(&a);
        p.biases[0].fill(1.0);
        let x = inputs(5, 3, 1);
        let out = forward(&p, &x).unwrap();
        assert!(out.output().iter().all(|&v| (v - 0.1).abs() < 1e-15));

        let p: NetworkParams<f64> = init(&a, RngStream::new(3, 0));
        let out = forward(&p, &x).unwrap();
        for i in 0..5 {
            let expected = &p.weights[0] * x.row(i).transpose() / 3f64.sqrt() + &p.biases[0] * 0.1;
            for k in 0..2 {
                assert_abs_diff_eq!(out.output()[(k, i)], expected[k], epsilon = 1e-14);
            }
        }
        assert!(forward(&p, &inputs(5, 2, 1)).is_err());
    }

    #[test]
    fn relu_zero_input_zero_bias_gives_zero() {
        let a = arch(&[3, 5, 5, 2]);
        let mut p: NetworkParams<f64> = init(&a, RngStream::new(4, 0));
        for b in &mut p.biases {
            b.fill(0.0);
        }
        let out = forward(&p, &DMatrix::zeros(1, 3)).unwrap();
        assert!(out.output().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let a = arch(&[2, 3, 3, 1]);
        let p: NetworkParams<f64> = init(&a, RngStream::new(5, 0));
        let trace = forward(&p, &inputs(4, 2, 2)).unwrap();
        let (_, g) = backward(&p, &trace, &DMatrix::zeros(1, 4)).unwrap();
        assert!(g.weights.iter().all(|w| w.iter().all(|&x| x == 0.0)));
        assert!(g.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
        assert!(backward(&p, &trace, &DMatrix::zeros(2, 4)).is_err());
        assert!(backward(&p, &trace, &DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn linear_model_gradient() {
        let a = arch(&[3, 2]);
        let p: NetworkParams<f64> = init(&a, RngStream::new(6, 0));
        let x = inputs(1, 3, 3);
        let trace = forward(&p, &x).unwrap();
        let mut c = DMatrix::zeros(2, 1);
        c[(0, 0)] = 1.0;
        let (_, g) = backward(&p, &trace, &c).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(g.weights[0][(0, j)], x[(0, j)] / 3f64.sqrt(), epsilon = 1e-15);
            assert_eq!(g.weights[0][(1, j)], 0.0);
        }
        assert_abs_diff_eq!(g.biases[0][0], 0.1, epsilon = 1e-15);
        assert_eq!(g.biases[0][1], 0.0);
    }

    #[test]
    fn sensitivity_recursion_holds() {
        let a = Architecture::new(vec![3, 6, 5, 4, 2], 0.1, Nonlinearity::Tanh).unwrap();
        let p: NetworkParams<f64> = init(&a, RngStream::new(8, 0));
        let trace = forward(&p, &inputs(3, 3, 4)).unwrap();
        let c = inputs(3, 2, 5).transpose();
        let sens = sensitivities(&p, &trace, &c).unwrap();
        assert_eq!(sens.direction(4), &c);
        for level in 1..4 {
            let upper = sens.direction(level + 1);
            for s in 0..3 {
                for r in 0..a.widths[level] {
                    let pulled: f64 = (0..a.widths[level + 1]).map(|q| p.weights[level][(q, r)] * upper[(q, s)]).sum();
                    let pre = trace.preactivations[level - 1][(r, s)];
                    let expected = (1.0 - pre.tanh().powi(2)) * pulled / (a.widths[level] as f64).sqrt();
                    assert_abs_diff_eq!(sens.direction(level)[(r, s)], expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn depth_one_ntk_is_sigma_one_and_psd() {
        let a = arch(&[3, 2]);
        let measure = EmpiricalMeasure::new(inputs(5, 3, 6)).unwrap();
        let sigma = sigma_stack(&measure, &KernelConfig::new(1, 0.1, Nonlinearity::Relu).unwrap())
            .unwrap()
            .sigma(1)
            .kron_identity(2);
        for seed in 0..3 {
            let p: NetworkParams<f64> = init(&a, RngStream::new(seed, 0));
            let g = empirical_ntk(&p, &measure).unwrap();
            assert!(relative_frobenius(g.entries.as_matrix(), sigma.as_matrix()) < 1e-12);
        }
        let deep = arch(&[3, 7, 7, 2]);
        let p: NetworkParams<f64> = init(&deep, RngStream::new(9, 0));
        let g = empirical_ntk(&p, &measure).unwrap();
        let min = crate::limit_kernel::min_eigenvalue(&g).unwrap();
        assert!(min >= -1e-10 * g.entries.trace() / 10.0);
    }

    #[test]
    fn drift_cases() {
        let a = arch(&[2, 5, 1]);
        let measure = EmpiricalMeasure::new(inputs(4, 2, 7)).unwrap();
        let p: NetworkParams<f64> = init(&a, RngStream::new(1, 0));
        assert_eq!(ntk_drift(&p, &p, &measure).unwrap(), 0.0);
        let q: NetworkParams<f64> = init(&a, RngStream::new(2, 0));
        assert!(ntk_drift(&p, &q, &measure).unwrap() > 0.0);
        let lin = arch(&[2, 1]);
        let p: NetworkParams<f64> = init(&lin, RngStream::new(1, 0));
        let q: NetworkParams<f64> = init(&lin, RngStream::new(2, 0));
        assert!(ntk_drift(&p, &q, &measure).unwrap() < 1e-15);
    }

    #[test]
    fn zero_direction_leaves_parameters() {
        let a = arch(&[2, 4, 1]);
        let measure = EmpiricalMeasure::new(inputs(3, 2, 8)).unwrap();
        let p0: NetworkParams<f64> = init(&a, RngStream::new(3, 0));
        let mut p = p0.clone();
        let mut dir = TrainingDirection::Custom(Box::new(|_, f| Ok(FunctionOnData::zeros(f.n_points(), f.n_out()))));
        let summary = train(&mut p, &measure, &mut dir, 1.0, 5, &mut no_recorder).unwrap();
        assert_eq!(p.flatten(), p0.flatten());
        assert!(summary.losses.is_empty());
        assert!(train(&mut p, &measure, &mut dir, 0.0, 1, &mut no_recorder).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let a = arch(&[2, 4, 1]);
        let measure = EmpiricalMeasure::new(inputs(3, 2, 9)).unwrap();
        let mut p: NetworkParams<f64> = init(&a, RngStream::new(4, 0));
        let mut dir = TrainingDirection::Custom(Box::new(|t, f| {
            let v = if t >= 2.0 { f64::INFINITY } else { 1.0 };
            Ok(FunctionOnData::new(DMatrix::from_element(f.n_points(), f.n_out(), v)))
        }));
        match train(&mut p, &measure, &mut dir, 1.0, 10, &mut no_recorder) {
            Err(NtkError::Divergence { step }) => assert_eq!(step, 3),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = arch(&[3, 4, 2]);
        let p: NetworkParams<f32> = init(&a, RngStream::new(11, 2));
        let path = dir.path().join("net.bin");
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, a.param_count() * 4);
        let q: NetworkParams<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(p.weights, q.weights);
        assert_eq!(p.biases, q.biases);
        assert_eq!(q.origin, Some(RngStream::new(11, 2)));
        assert!(load_checkpoint::<f64>(&path).is_err());
    }
}
