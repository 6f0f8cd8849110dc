use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refdiff_cli::output::write_bundle;
use refdiff_cli::pipeline::with_threads;
use refdiff_cli::{preset, run, CliResult, Output, RunOptions, RunSpec};

#[derive(Parser)]
#[command(name = "refdiff", version, about = "Limit constants of additive functionals of reflected diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// α, η², stationary density and u′ from the Poisson equation
    Analyze(Common),
    /// Scaled CGF ψ on the θ grid
    Psi(Common),
    /// Rate function from the ψ curve
    Rate(Common),
    /// Monte Carlo estimates
    Simulate(Common),
    /// Analytic values against Monte Carlo; exit status 4 on failure
    Verify(Common),
    /// Whatever the spec's `outputs` list asks for
    Run(Common),
    /// Print a built-in spec as TOML
    Preset { name: String },
}

#[derive(Args)]
struct Common {
    /// Spec file (TOML, or JSON with a .json extension)
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    spec: Option<PathBuf>,
    /// Built-in spec: rbm-zero-drift, rbm-drift, rou, zhang-case
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "refdiff-out")]
    out: PathBuf,
    /// Overrides the Monte Carlo seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, hide = true, allow_negative_numbers = true)]
    inject_alpha_error: Option<f64>,
}

impl Common {
    fn load(&self) -> CliResult<RunSpec> {
        let mut spec = match (&self.spec, &self.preset) {
            (Some(path), _) => RunSpec::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => unreachable!("clap enforces one of --spec/--preset"),
        };
        if let (Some(seed), Some(mc)) = (self.seed, spec.mc.as_mut()) {
            mc.seed = seed;
        }
        Ok(spec)
    }
}

fn execute(common: &Common, outputs: Option<&[Output]>) -> CliResult<bool> {
    let mut spec = common.load()?;
    if let Some(outputs) = outputs {
        spec = spec.with_outputs(outputs.iter().copied());
    }
    let options = RunOptions { inject_alpha_error: common.inject_alpha_error };
    let result = with_threads(common.threads, || run(&spec, options))??;
    let written = write_bundle(&common.out, &result.bundle, &result.tables)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    if let Some(v) = &result.bundle.verification {
        println!("verification: {}", if v.passed { "PASS" } else { "FAIL" });
    }
    Ok(result.passed())
}

fn main() -> ExitCode {
    use Output::*;
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Analyze(c) => execute(c, Some(&[Alpha, Eta2, Density, UPrime])),
        Command::Psi(c) => execute(c, Some(&[Psi])),
        Command::Rate(c) => execute(c, Some(&[Psi, Rate])),
        Command::Simulate(c) => execute(c, Some(&[Mc])),
        Command::Verify(c) => execute(c, Some(&[Verify])),
        Command::Run(c) => execute(c, None),
        Command::Preset { name } => preset(name).and_then(|s| s.to_toml()).map(|text| {
            print!("{text}");
            true
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

