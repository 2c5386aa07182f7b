use nalgebra::DMatrix;
use ntk_core::finite_net::{
    backward, empirical_ntk, forward, init, no_recorder, train, Architecture, NetworkParams, TrainingDirection,
};
use ntk_core::function_space::FunctionOnData;
use ntk_core::limit_kernel::EmpiricalMeasure;
use ntk_core::nonlinearity::Nonlinearity;
use ntk_core::numerics::{standard_normal, RngStream};

fn inputs(m: usize, n0: usize, seed: u64) -> DMatrix<f64> {
    DMatrix::from_row_slice(m, n0, &standard_normal(RngStream::new(seed, 1), m * n0))
}

/// `(1/M) Σ_i c_iᵀ f_θ(x_i)` at flat parameters.
fn scalar_loss(arch: &Architecture, flat: &[f64], x: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let p = NetworkParams::<f64>::from_flat(arch, flat).unwrap();
    let out = forward(&p, x).unwrap();
    out.output().component_mul(c).sum() / x.nrows() as f64
}

fn flat_gradient(arch: &Architecture, params: &NetworkParams<f64>, x: &DMatrix<f64>, c: &DMatrix<f64>) -> Vec<f64> {
    let trace = forward(params, x).unwrap();
    let (_, g) = backward(params, &trace, c).unwrap();
    let as_params = NetworkParams {
        arch: arch.clone(),
        weights: g.weights,
        biases: g.biases,
        origin: None,
    };
    as_params.flatten()
}

#[test]
fn backward_matches_central_differences() {
    for nl in [Nonlinearity::Tanh, Nonlinearity::Erf, Nonlinearity::Relu] {
        let arch = Architecture::new(vec![2, 3, 3, 1], 0.1, nl.clone()).unwrap();
        let params: NetworkParams<f64> = init(&arch, RngStream::new(21, 0));
        let x = inputs(4, 2, 3);
        let c = inputs(1, 4, 4);
        let grad = flat_gradient(&arch, &params, &x, &c);
        let flat = params.flatten();
        let h = 1e-5;
        let scale = grad.iter().fold(0f64, |m, g| m.max(g.abs()));
        for p in 0..flat.len() {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[p] += h;
            minus[p] -= h;
            let fd = (scalar_loss(&arch, &plus, &x, &c) - scalar_loss(&arch, &minus, &x, &c)) / (2.0 * h);
            let err = (fd - grad[p]).abs() / grad[p].abs().max(scale);
            assert!(err < 1e-6, "{nl}: coordinate {p}: backward {} vs fd {fd}", grad[p]);
        }
    }
}

#[test]
fn layerwise_ntk_matches_brute_force_jacobian() {
    for (widths, nl) in [
        (vec![2, 3, 3, 1], Nonlinearity::Relu),
        (vec![2, 3, 3, 1], Nonlinearity::Tanh),
        (vec![3, 4, 5, 2], Nonlinearity::Erf),
    ] {
        let arch = Architecture::new(widths, 0.1, nl).unwrap();
        let params: NetworkParams<f64> = init(&arch, RngStream::new(5, 0));
        let x = inputs(5, arch.input_dim(), 6);
        let n_out = arch.output_dim();
        // one Jacobian row per (sample, output), from single-sample backward passes
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .flat_map(|i| (0..n_out).map(move |k| (i, k)))
            .map(|(i, k)| {
                let xi = x.rows(i, 1).into_owned();
                let mut e = DMatrix::zeros(n_out, 1);
                e[(k, 0)] = 1.0;
                flat_gradient(&arch, &params, &xi, &e)
            })
            .collect();
        let jac = DMatrix::from_fn(rows.len(), arch.param_count(), |r, p| rows[r][p]);
        let brute = &jac * jac.transpose();
        let measure = EmpiricalMeasure::new(x).unwrap();
        let layerwise = empirical_ntk(&params, &measure).unwrap();
        let diff = (layerwise.entries.as_matrix() - &brute).amax();
        assert!(diff < 1e-10 * brute.amax().max(1.0), "max abs difference {diff}");
    }
}

#[test]
fn linear_flow_matches_exponential() {
    // depth 1, one sample: f evolves as f* + (f0 − f*) e^{−t Θ} with Θ = |x|²/n0 + β²
    let arch = Architecture::new(vec![2, 1], 0.1, Nonlinearity::Relu).unwrap();
    let x = DMatrix::from_row_slice(1, 2, &[0.6, -1.3]);
    let theta = (0.36 + 1.69) / 2.0 + 0.01;
    let measure = EmpiricalMeasure::new(x).unwrap();
    let target = FunctionOnData::from_column(&[0.75]);
    let horizon = 3.0;
    let mut errors = Vec::new();
    for dt in [0.04, 0.02, 0.01] {
        let mut params: NetworkParams<f64> = init(&arch, RngStream::new(1, 0));
        let f0 = forward(&params, measure.points()).unwrap().output()[(0, 0)];
        let steps = (horizon / dt) as usize;
        let mut dir = TrainingDirection::LeastSquares(target.clone());
        train(&mut params, &measure, &mut dir, dt, steps, &mut no_recorder).unwrap();
        let f = forward(&params, measure.points()).unwrap().output()[(0, 0)];
        // Euler on a linear model is exactly geometric
        let euler = 0.75 + (f0 - 0.75) * (1.0 - dt * theta).powi(steps as i32);
        assert!((f - euler).abs() < 1e-12);
        let exact = 0.75 + (f0 - 0.75) * (-horizon * theta).exp();
        errors.push((f - exact).abs());
    }
    // first order in the step size
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.7..2.3).contains(&ratio), "error ratio {ratio}");
    }
}

#[test]
fn recorder_sees_every_step() {
    let arch = Architecture::new(vec![2, 8, 1], 0.1, Nonlinearity::Relu).unwrap();
    let measure = EmpiricalMeasure::new(inputs(4, 2, 12)).unwrap();
    let mut params: NetworkParams<f64> = init(&arch, RngStream::new(2, 0));
    let mut dir = TrainingDirection::LeastSquares(FunctionOnData::from_column(&[0.1, -0.2, 0.3, 0.0]));
    let mut seen = Vec::new();
    let summary = train(&mut params, &measure, &mut dir, 0.5, 6, &mut |s| {
        seen.push((s.step, s.time, s.loss.unwrap()));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), 7);
    assert_eq!(seen.last().unwrap().1, 3.0);
    assert_eq!(summary.losses, seen.iter().map(|s| s.2).collect::<Vec<_>>());
    assert!(summary.losses.last().unwrap() < &summary.losses[0]);
}
