//! Orchestration: Poisson pipeline, ψ curve and rate function, Monte Carlo,
//! and the analytic-versus-simulation comparison.

use refdiff::montecarlo::{self, Estimate, McEstimate};
use refdiff::poisson::{self, PoissonSolution, Residuals};
use refdiff::rate::{self, RateFunction};
use refdiff::spectral::{self, PsiCurve};
use refdiff::CoefficientSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;
use crate::output::Table;
use crate::spec::{Output, RunSpec, Thresholds};

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_RATE_POINTS: usize = 41;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Added to the analytic `α` before comparison. Test hook for the
    /// negative control of `verify`.
    pub inject_alpha_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
    pub residuals: Residuals,
    pub grid_points: usize,
    /// Right end of the solver grid: `b`, or the truncation point on `[0, ∞)`.
    pub grid_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCheck {
    pub analytic: f64,
    pub mc: Estimate,
    pub gap: f64,
    /// `gap / se`; absent when the standard error is zero.
    pub z: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eta2Check {
    pub analytic: f64,
    pub mc: Estimate,
    pub gap: f64,
    /// `|gap| / analytic`, or `|gap|` when the analytic value is zero.
    pub relative_error: f64,
    pub passed: bool,
    /// Batch-means estimate from within each path, reported alongside.
    pub batch: Option<Estimate>,
    /// Difference of the two estimators over their combined standard error.
    pub batch_z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationCheck {
    pub centers: Vec<f64>,
    pub mc: Vec<f64>,
    pub analytic: Vec<f64>,
    pub sup_gap: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgfCheck {
    pub theta: f64,
    pub psi: f64,
    pub mc: f64,
    pub se: f64,
    pub gap: f64,
    pub reliable: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_alpha_error: Option<f64>,
    pub alpha: AlphaCheck,
    pub eta2: Eta2Check,
    pub occupation: OccupationCheck,
    pub cgf: Vec<CgfCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub spec: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<Analysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    /// File names of the tables written next to the document.
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub bundle: ResultBundle,
    pub tables: Vec<Table>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.bundle.verification.as_ref().is_none_or(|v| v.passed)
    }
}

fn needs_poisson(spec: &RunSpec) -> bool {
    [Output::Alpha, Output::Eta2, Output::Density, Output::UPrime, Output::Verify]
        .iter()
        .any(|&o| spec.wants(o))
}

fn simulate(spec: &RunSpec) -> CliResult<McEstimate> {
    let mc = spec.mc.as_ref().expect("validated");
    let estimate = match spec.cgf_thetas.as_deref() {
        Some(thetas) if !thetas.is_empty() => {
            montecarlo::estimate_scaled_cgf(&spec.model, &spec.functional, mc, thetas)?
        }
        _ => montecarlo::estimate_lln_clt(&spec.model, &spec.functional, mc)?,
    };
    Ok(estimate)
}

fn default_rate_points(curve: &PsiCurve) -> Vec<f64> {
    let lo = curve.dpsis[0];
    let hi = curve.dpsis[curve.dpsis.len() - 1];
    let step = (hi - lo) / (DEFAULT_RATE_POINTS - 1) as f64;
    (0..DEFAULT_RATE_POINTS).map(|i| lo + step * i as f64).collect()
}

/// Executes the requested pipelines in dependency order: Poisson
/// (`α → u′ → η²`), then `ψ → I`, then Monte Carlo and verification.
pub fn run(spec: &RunSpec, options: RunOptions) -> CliResult<RunOutput> {
    spec.validate()?;
    let mut tables = Vec::new();

    let solution = if needs_poisson(spec) {
        Some(poisson::solve(&spec.model, &spec.functional, &spec.solver)?)
    } else {
        None
    };
    let analysis = solution.as_ref().map(|s| Analysis {
        alpha: s.alpha,
        eta2: (spec.wants(Output::Eta2) || spec.wants(Output::Verify)).then_some(s.eta2),
        residuals: s.residuals,
        grid_points: s.grid.len(),
        grid_upper: s.grid[s.grid.len() - 1],
    });
    if let Some(s) = &solution {
        if spec.wants(Output::UPrime) {
            tables.push(Table::new("u_prime", vec!["x", "value"], vec![s.grid.clone(), s.u_prime.clone()]));
        }
        if spec.wants(Output::Density) {
            tables.push(Table::new("density", vec!["x", "value"], vec![s.grid.clone(), s.density.clone()]));
        }
    }

    let psi = if spec.wants(Output::Psi) || spec.wants(Output::Rate) {
        let curve = spectral::psi_curve(&spec.model, &spec.functional, &spec.theta_values(), &spec.solver)?;
        tables.push(Table::new(
            "psi",
            vec!["theta", "psi", "dpsi"],
            vec![curve.thetas.clone(), curve.psis.clone(), curve.dpsis.clone()],
        ));
        Some(curve)
    } else {
        None
    };

    let rate = match (&psi, spec.wants(Output::Rate)) {
        (Some(curve), true) => {
            let ys = spec.rate_points.clone().unwrap_or_else(|| default_rate_points(curve));
            let rate = rate::rate_function(curve, &ys)?;
            let flags = rate.domain_flags.iter().map(|&f| f as u8 as f64).collect();
            tables.push(Table::new(
                "rate",
                vec!["y", "rate", "arg_theta", "boundary_flag"],
                vec![rate.ys.clone(), rate.values.clone(), rate.arg_thetas.clone(), flags],
            ));
            Some(rate)
        }
        _ => None,
    };

    let mc = if spec.wants(Output::Mc) || spec.wants(Output::Verify) {
        Some(simulate(spec)?)
    } else {
        None
    };

    let verification = match (&solution, &mc, spec.wants(Output::Verify)) {
        (Some(s), Some(m), true) => Some(compare(spec, s, m, options)?),
        _ => None,
    };

    if let Some(m) = &mc {
        let mut header = vec!["x", "mc_density"];
        let mut columns = vec![m.occupation.centers(), m.occupation.density.clone()];
        if let Some(v) = &verification {
            header.push("analytic_density");
            columns.push(v.occupation.analytic.clone());
        }
        tables.push(Table::new("occupation", header, columns));
    }

    let bundle = ResultBundle {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        analysis,
        psi,
        rate,
        mc,
        verification,
        tables: tables.iter().map(Table::file_name).collect(),
    };
    Ok(RunOutput { bundle, tables })
}

/// Analytic `α`, `η²`, `p` and `ψ` against the Monte Carlo estimates.
pub fn verify(spec: &RunSpec, options: RunOptions) -> CliResult<VerificationReport> {
    let mut spec = spec.clone();
    spec.outputs.insert(Output::Verify);
    spec.validate()?;
    let solution = poisson::solve(&spec.model, &spec.functional, &spec.solver)?;
    let mc = simulate(&spec)?;
    compare(&spec, &solution, &mc, options)
}

fn compare(
    spec: &RunSpec,
    solution: &PoissonSolution,
    mc: &McEstimate,
    options: RunOptions,
) -> CliResult<VerificationReport> {
    let t = spec.thresholds;

    let analytic_alpha = solution.alpha + options.inject_alpha_error.unwrap_or(0.0);
    let gap = mc.alpha_hat.value - analytic_alpha;
    let z = (mc.alpha_hat.se > 0.0).then(|| gap / mc.alpha_hat.se);
    let alpha = AlphaCheck {
        analytic: analytic_alpha,
        mc: mc.alpha_hat,
        gap,
        z,
        passed: gap == 0.0 || z.is_some_and(|z| z.abs() <= t.alpha_z),
    };

    let gap = mc.eta2_hat.value - solution.eta2;
    let relative_error = if solution.eta2 > 0.0 { gap.abs() / solution.eta2 } else { gap.abs() };
    let batch_z = mc.eta2_batch.and_then(|b| {
        let se = mc.eta2_hat.se.hypot(b.se);
        (se > 0.0).then(|| (mc.eta2_hat.value - b.value) / se)
    });
    let eta2 = Eta2Check {
        analytic: solution.eta2,
        mc: mc.eta2_hat,
        gap,
        relative_error,
        passed: relative_error <= t.eta2_relative,
        batch: mc.eta2_batch,
        batch_z,
    };

    let density = CoefficientSpec::sampled(solution.grid.clone(), solution.density.clone())?;
    let upper = solution.grid[solution.grid.len() - 1];
    let centers = mc.occupation.centers();
    let analytic: Vec<f64> = centers
        .iter()
        .map(|&x| if x > upper { Ok(0.0) } else { density.eval(x) })
        .collect::<refdiff::Result<_>>()?;
    let sup_gap = analytic.iter().zip(&mc.occupation.density).map(|(a, m)| (a - m).abs()).fold(0.0, f64::max);
    let occupation = OccupationCheck {
        centers,
        mc: mc.occupation.density.clone(),
        analytic,
        sup_gap,
        passed: sup_gap <= t.occupation_gap,
    };

    let mut cgf = Vec::new();
    for point in mc.cgf_hat.iter().flatten() {
        let psi = spectral::solve_principal(&spec.model, &spec.functional, point.theta, &spec.solver)?.psi;
        let gap = point.value - psi;
        cgf.push(CgfCheck {
            theta: point.theta,
            psi,
            mc: point.value,
            se: point.se,
            gap,
            reliable: point.reliable,
            passed: point.reliable && gap.abs() <= t.cgf_gap,
        });
    }

    let passed = alpha.passed && eta2.passed && occupation.passed && cgf.iter().all(|c| c.passed);
    Ok(VerificationReport {
        passed,
        thresholds: t,
        injected_alpha_error: options.inject_alpha_error,
        alpha,
        eta2,
        occupation,
        cgf,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| crate::error::CliError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
