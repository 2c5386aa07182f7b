use std::fs;
use std::process::Command;

use ntk_core::nonlinearity::PdVerdict;
use ntk_lab::commands::{cmd_kernel_regression, cmd_pca_convergence, cmd_pd_certificate};
use ntk_lab::config::{ExperimentConfig, KernelRegressionSettings, PcaConvergenceSettings, PdCertificateSettings};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

#[test]
fn pd_certificate_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let relu = cmd_pd_certificate(&PdCertificateSettings::resolve(&config("")).unwrap(), dir.path()).unwrap();
    assert_eq!(relu.verdict, PdVerdict::CertifiedPdTruncated);
    assert!(relu.gram_min_eig > 0.0);
    let erf = cmd_pd_certificate(&PdCertificateSettings::resolve(&config("nonlinearity = \"erf\"")).unwrap(), dir.path()).unwrap();
    assert_eq!(erf.verdict, PdVerdict::CertifiedPdTruncated);
    let square =
        cmd_pd_certificate(&PdCertificateSettings::resolve(&config("nonlinearity = \"poly:0,0,1\"")).unwrap(), dir.path())
            .unwrap();
    assert_eq!(square.verdict, PdVerdict::NotPdPolynomial);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["verdict"], "not_pd_polynomial");
    assert!(dir.path().join("manifest.json").is_file());
}

#[test]
fn kernel_regression_fits_and_bands() {
    let dir = tempfile::tempdir().unwrap();
    let s = KernelRegressionSettings::resolve(&config("widths = [1000]")).unwrap();
    let report = cmd_kernel_regression(&s, dir.path()).unwrap();
    assert!(report.max_fit_error(1000) < 1e-2, "{}", report.max_fit_error(1000));
    assert!(report.percentiles.iter().all(|p| p.p50 == p.mean));
    let coverage = report.band_coverage(1000);
    println!("width 1000 coverage of the 10-90 band: {coverage:.3}");
    assert!(coverage >= 0.6, "{coverage}");
    let header = fs::read_to_string(dir.path().join("percentiles.csv")).unwrap();
    assert!(header.starts_with("gamma,mean,std,p10,p50,p90\n"));
}

#[test]
fn pca_convergence_on_synthetic_batch() {
    let dir = tempfile::tempdir().unwrap();
    let s = PcaConvergenceSettings::resolve(&config(
        "synthetic_fallback = true\nmnist_dir = \"/nonexistent\"\nbatch_size = 64\nsteps = 100\nwidths = [100, 1000]\nseed_count = 2",
    ))
    .unwrap();
    let report = cmd_pca_convergence(&s, dir.path()).unwrap();
    assert!(!report.used_mnist);
    let l = &report.eigenvalues;
    assert!(l[0] > 10.0 * l[1] && l[1] >= l[2], "{l:?}");
    for row in &report.exact {
        let analytic = 0.5 * (-l[1] * row.t).exp();
        assert!((row.g_norm - analytic).abs() <= 1e-6 * analytic, "{row:?}");
        assert!(row.h_norm < 1e-8, "{row:?}");
    }
    let (narrow, wide) = (report.max_h_norm(100), report.max_h_norm(1000));
    println!("max h norm: width 100 {narrow:.4e}, width 1000 {wide:.4e}");
    assert!(wide < narrow);
    for name in ["eigenvalues.csv", "components.csv", "exact.csv", "trajectories.csv", "manifest.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
}

#[test]
fn pca_without_data_reports_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = PcaConvergenceSettings::resolve(&config("mnist_dir = \"/nonexistent\"")).unwrap();
    let err = cmd_pca_convergence(&s, dir.path()).unwrap_err().to_string();
    assert!(err.contains("MNIST"), "{err}");
}

#[test]
fn binary_runs_are_reproducible() {
    let exe = env!("CARGO_BIN_EXE_ntk-lab");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "widths = [30, 60]\nseed_count = 2\nsteps = 20\ngrid_points = 16\ntrain_size = 8\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(exe)
            .args(["ntk-convergence", "--config"])
            .arg(&cfg)
            .args(["--seed", "3", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for name in ["curves.csv", "drift.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let curves = fs::read_to_string(a.join("curves.csv")).unwrap();
    assert!(curves.starts_with("width,seed,t,gamma,value,limit_value\n"));
    // 2 widths, 2 seeds, 2 times, 16 angles
    assert_eq!(curves.lines().count(), 1 + 2 * 2 * 2 * 16);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["settings"]["seed"], 3);
    assert_eq!(manifest["datasets"][0]["n"], 8);

    let bad = Command::new(exe)
        .args(["pd-certificate", "--set", "sphere_dim=1", "--out"])
        .arg(dir.path().join("c"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sphere_dim"));
}
