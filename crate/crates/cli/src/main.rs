use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ntk_lab::commands::{cmd_kernel_regression, cmd_ntk_convergence, cmd_pca_convergence, cmd_pd_certificate};
use ntk_lab::config::{
    ExperimentConfig, KernelRegressionSettings, NtkConvergenceSettings, PcaConvergenceSettings, PdCertificateSettings,
};
use ntk_lab::Result;

#[derive(Parser)]
#[command(name = "ntk-lab", version, about = "Neural tangent kernel experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical NTK curves at init and after training, against the limit
    NtkConvergence(Common),
    /// Trained networks against the infinite-width regression limit
    KernelRegression(Common),
    /// Convergence along the second kernel principal component
    PcaConvergence(Common),
    /// Positive-definiteness certificate and sphere gram eigenvalue
    PdCertificate(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key-value TOML config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the widths of the original experiments
    #[arg(long)]
    full: bool,
    /// Override a config key, e.g. --set widths=[100,200]
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if self.full {
            overrides.push("full=true".into());
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::NtkConvergence(c) => {
            let s = NtkConvergenceSettings::resolve(&c.config()?)?;
            let report = cmd_ntk_convergence(&s, &c.out)?;
            for &w in &s.widths {
                println!("width {w}: median NTK drift {:.6e}", report.median_drift(w));
            }
        }
        Command::KernelRegression(c) => {
            let s = KernelRegressionSettings::resolve(&c.config()?)?;
            let report = cmd_kernel_regression(&s, &c.out)?;
            for &w in &s.widths {
                println!(
                    "width {w}: max training error {:.3e}, band coverage {:.3}",
                    report.max_fit_error(w),
                    report.band_coverage(w)
                );
            }
        }
        Command::PcaConvergence(c) => {
            let s = PcaConvergenceSettings::resolve(&c.config()?)?;
            let report = cmd_pca_convergence(&s, &c.out)?;
            println!(
                "batch source {}: eigenvalues {:?}",
                if report.used_mnist { "mnist" } else { "synthetic" },
                report.eigenvalues
            );
            for &w in &s.widths {
                println!("width {w}: max h norm {:.6e}", report.max_h_norm(w));
            }
        }
        Command::PdCertificate(c) => {
            let s = PdCertificateSettings::resolve(&c.config()?)?;
            let report = cmd_pd_certificate(&s, &c.out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
