//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit status
//! if any criterion fails.
//!
//! Two tiers, selected by `REFDIFF_ACCEPTANCE_TIER`:
//!
//! * `full` (default): Monte Carlo at the stated scale, about three minutes
//!   on one core.
//! * `ci`: shorter horizons and fewer replications with widened tolerances.
//!   Every other criterion is identical in both tiers.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use refdiff::montecarlo::McConfig;
use refdiff::poisson::{self, closed_form_ou, closed_form_rbm};
use refdiff::rate::{legendre, rate_function, tail_exponent};
use refdiff::spectral::{self, psi_curve, rbm_closed_form_psi, solve_principal, theta_grid, RegionTag, SolutionRegion};
use refdiff::{AdditiveFunctional, CoefficientSpec, DiffusionModel, Error, SolverConfig};
use refdiff_cli::{preset, verify, Output, RunOptions, RunSpec, PRESETS};

// pinned tolerances
const CLOSED_FORM_REL: f64 = 1e-8;
const CLOSED_FORM_BUDGET: Duration = Duration::from_secs(1);
const ETA2_ZERO_DRIFT_TOL: f64 = 1e-8;
const ETA2_DISPLAY_REPORT: f64 = 1e-6;
const BC_TOL: f64 = 1e-8;
const ODE_TOL: f64 = 1e-6;
const PSI_ORACLE_TOL: f64 = 1e-6;
const PSI_ORACLE_BUDGET: Duration = Duration::from_secs(30);
const PSI_ZERO_TOL: f64 = 1e-12;
const ALPHA_SLOPE_TOL: f64 = 1e-4;
const RATE_AT_MEAN_TOL: f64 = 1e-8;
const RATE_CONVEXITY_TOL: f64 = 1e-10;
const BRUTE_FORCE_POINTS: usize = 1_000_000;
const BRUTE_FORCE_TOL: f64 = 1e-6;
const TAIL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, PartialEq)]
enum Tier {
    Full,
    Ci,
}

impl Tier {
    fn from_env() -> Tier {
        match std::env::var("REFDIFF_ACCEPTANCE_TIER").as_deref() {
            Ok("ci") => Tier::Ci,
            _ => Tier::Full,
        }
    }
}

type Check = fn(Tier) -> Result<String, String>;

fn main() {
    let tier = Tier::from_env();
    let criteria: [(&str, Check); 10] = [
        ("closed-form alpha, u', density", closed_forms),
        ("eta2 against closed forms", eta2_cross_check),
        ("boundary and ODE residuals", residuals),
        ("psi: shooting vs closed form", spectral_oracle),
        ("psi: structure", spectral_structure),
        ("rate function", rate_checks),
        ("monte carlo LLN/CLT", monte_carlo_lln),
        ("monte carlo scaled CGF", monte_carlo_cgf),
        ("thread-count determinism", determinism),
        ("negative controls", negative_controls),
    ];
    println!("acceptance tier: {}", if tier == Tier::Full { "full" } else { "ci" });
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(|| check(tier)).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail} ({secs:.2} s)", i + 1),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {:>2} {name}: {detail} ({secs:.2} s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Pointwise relative error; falls back to absolute error where the exact
/// value vanishes.
fn rel(value: f64, exact: f64) -> f64 {
    let gap = (value - exact).abs();
    if exact == 0.0 {
        gap
    } else {
        gap / exact.abs()
    }
}

/// Relative error with a unit floor, for `u′`, which crosses zero.
fn rel_floor(value: f64, exact: f64) -> f64 {
    (value - exact).abs() / exact.abs().max(1.0)
}

// 1 ------------------------------------------------------------------------

fn closed_forms(_: Tier) -> Result<String, String> {
    let config = SolverConfig::default();
    let weights = [0.0, 1.0, 2.0];
    let start = Instant::now();
    let (mut worst, mut cases) = (0.0f64, 0);
    for mu in [-1.0, 0.0, 1.0] {
        for sigma2 in [1.0, 2.0] {
            for b in [0.5, 1.0, 5.0] {
                for r0 in weights {
                    for rb in weights {
                        let model = DiffusionModel::rbm(mu, sigma2, b);
                        let sol = poisson::solve(&model, &AdditiveFunctional::boundary(r0, rb), &config)
                            .map_err(|e| e.to_string())?;
                        let exact = closed_form_rbm(mu, sigma2, b, r0, rb, config.region_eps).unwrap();
                        worst = worst.max(rel(sol.alpha, exact.alpha));
                        for ((x, du), p) in sol.grid.iter().zip(&sol.u_prime).zip(&sol.density) {
                            worst = worst.max(rel_floor(*du, exact.u_prime(*x))).max(rel(*p, exact.density(*x)));
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    for sigma2 in [1.0, 2.0] {
        for b in [0.5, 1.0, 5.0] {
            for r0 in weights {
                for rb in weights {
                    let model = DiffusionModel::rou(1.0, b / 2.0, sigma2, b);
                    let sol = poisson::solve(&model, &AdditiveFunctional::boundary(r0, rb), &config)
                        .map_err(|e| e.to_string())?;
                    let exact = closed_form_ou(1.0, b / 2.0, sigma2, b, r0, rb).unwrap();
                    worst = worst.max(rel(sol.alpha, exact.alpha));
                    for ((x, du), p) in sol.grid.iter().zip(&sol.u_prime).zip(&sol.density) {
                        worst = worst.max(rel_floor(*du, exact.u_prime(*x))).max(rel(*p, exact.density(*x)));
                    }
                    cases += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= CLOSED_FORM_REL && elapsed < CLOSED_FORM_BUDGET,
        format!("{cases} models, max relative error {worst:.2e} (tol {CLOSED_FORM_REL:.0e}), {elapsed:.2?}"),
    )
}

// 2 ------------------------------------------------------------------------

fn eta2_cross_check(_: Tier) -> Result<String, String> {
    let config = SolverConfig::default();
    let (mut zero_drift, mut display) = (0.0f64, 0.0f64);
    for sigma2 in [1.0, 2.0] {
        for b in [0.5, 1.0, 5.0] {
            for (r0, rb) in [(1.0, 1.0), (1.0, 0.0), (0.0, 2.0), (2.0, 1.0)] {
                let f = AdditiveFunctional::boundary(r0, rb);
                let sol = poisson::solve(&DiffusionModel::rbm(0.0, sigma2, b), &f, &config).unwrap();
                let exact = sigma2 * (r0 * r0 * r0 + rb * rb * rb) / (3.0 * (r0 + rb));
                zero_drift = zero_drift.max((sol.eta2 - exact).abs() / exact);
                for mu in [-1.0, 1.0] {
                    let sol = poisson::solve(&DiffusionModel::rbm(mu, sigma2, b), &f, &config).unwrap();
                    let shown = closed_form_rbm(mu, sigma2, b, r0, rb, config.region_eps).unwrap().eta2;
                    display = display.max((sol.eta2 - shown).abs() / shown.abs().max(1e-300));
                }
            }
        }
    }
    let note = if display > ETA2_DISPLAY_REPORT {
        format!("drift display differs by {display:.2e} (reported, not gating)")
    } else {
        format!("drift display agrees to {display:.2e}")
    };
    ensure(
        zero_drift <= ETA2_ZERO_DRIFT_TOL,
        format!("zero drift max relative error {zero_drift:.2e} (tol {ETA2_ZERO_DRIFT_TOL:.0e}); {note}"),
    )
}

// 3 ------------------------------------------------------------------------

fn residuals(_: Tier) -> Result<String, String> {
    let (mut bc, mut ode) = (0.0f64, 0.0f64);
    for name in PRESETS {
        let spec = preset(name).unwrap();
        let sol = poisson::solve(&spec.model, &spec.functional, &spec.solver).map_err(|e| e.to_string())?;
        bc = bc.max(sol.residuals.bcb.unwrap_or(f64::INFINITY)).max(sol.residuals.bc0);
        ode = ode.max(sol.residuals.ode_sup);
    }
    ensure(
        bc <= BC_TOL && ode <= ODE_TOL,
        format!("boundary {bc:.2e} (tol {BC_TOL:.0e}), ODE sup {ode:.2e} (tol {ODE_TOL:.0e})"),
    )
}

// 4 ------------------------------------------------------------------------

fn region_of(sol: &spectral::SpectralSolution) -> RegionTag {
    match sol.region {
        SolutionRegion::Rbm(r) => r.tag,
        SolutionRegion::Numeric => unreachable!("closed form always tags its region"),
    }
}

fn spectral_oracle(_: Tier) -> Result<String, String> {
    let config = SolverConfig::default();
    let functional = AdditiveFunctional::boundary(0.0, 1.0);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut regions = BTreeSet::new();
    let mut compare = |mu: f64, theta: f64, regions: &mut BTreeSet<String>| -> Result<(), String> {
        let model = DiffusionModel::rbm(mu, 1.0, 1.0);
        let numeric = solve_principal(&model, &functional, theta, &config).map_err(|e| e.to_string())?;
        let exact = rbm_closed_form_psi(theta, mu, 1.0, 1.0, &config).map_err(|e| e.to_string())?;
        worst = worst.max((numeric.psi - exact.psi).abs());
        regions.insert(format!("{:?}", region_of(&exact)));
        Ok(())
    };
    for mu in [-1.0, 0.5, 1.0] {
        for theta in theta_grid(-3.0, 3.0, 61) {
            compare(mu, theta, &mut regions)?;
        }
    }
    // B2 off the preset grid: b·μ(μ + θσ²) = −θσ⁴ with μ = 2, σ² = b = 1
    let mut constructed = BTreeSet::new();
    compare(2.0, -4.0 / 3.0, &mut constructed)?;
    let elapsed = start.elapsed();
    let covered = ["R1", "R2", "R3", "B2"].iter().all(|r| regions.contains(*r));
    ensure(
        worst <= PSI_ORACLE_TOL && covered && constructed.contains("B2") && elapsed < PSI_ORACLE_BUDGET,
        format!(
            "max |psi - closed form| {worst:.2e} (tol {PSI_ORACLE_TOL:.0e}), regions {regions:?}, \
             constructed {constructed:?}, {elapsed:.2?}"
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn spectral_structure(_: Tier) -> Result<String, String> {
    let (mut psi0, mut slope, mut violations, mut sign_changes, mut points) = (0.0f64, 0.0f64, 0, 0, 0);
    for name in PRESETS {
        let spec = preset(name).unwrap();
        let thetas = spec.theta_values();
        let alpha = poisson::compute_alpha(&spec.model, &spec.functional, &spec.solver).unwrap();
        let curve = psi_curve(&spec.model, &spec.functional, &thetas, &spec.solver).map_err(|e| e.to_string())?;
        let zero = thetas.iter().position(|&t| t == 0.0).expect("grid contains 0");
        psi0 = psi0.max(curve.psis[zero].abs());
        slope = slope.max((curve.alpha_check - alpha).abs());
        violations += curve.convexity_violations;
        for &theta in &thetas {
            let sol = spectral::solve_eigen(&spec.model, &spec.functional, theta, 0, &spec.solver).unwrap();
            if sol.interior_sign_changes > 0 || sol.h_grid.iter().any(|&h| h <= 0.0) {
                sign_changes += 1;
            }
            points += 1;
        }
    }
    ensure(
        psi0 <= PSI_ZERO_TOL && slope <= ALPHA_SLOPE_TOL && violations == 0 && sign_changes == 0,
        format!(
            "|psi(0)| {psi0:.1e}, |psi'(0) - alpha| {slope:.1e} (tol {ALPHA_SLOPE_TOL:.0e}), \
             {violations} convexity violations, {sign_changes}/{points} non-positive eigenfunctions"
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn rate_checks(_: Tier) -> Result<String, String> {
    let spec = preset("zhang-case").unwrap();
    let alpha = poisson::compute_alpha(&spec.model, &spec.functional, &spec.solver).unwrap();
    let curve = psi_curve(&spec.model, &spec.functional, &spec.theta_values(), &spec.solver)
        .map_err(|e| e.to_string())?;
    let at_mean = legendre(&curve, alpha).map_err(|e| e.to_string())?.value;

    let (lo, hi) = (curve.dpsis[0], curve.dpsis[curve.dpsis.len() - 1]);
    let ys: Vec<f64> = (0..201).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    let rate = rate_function(&curve, &ys).map_err(|e| e.to_string())?;
    let convexity = rate.values.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(f64::INFINITY, f64::min);

    let (t_lo, t_hi) = curve.theta_range();
    let dense: Vec<(f64, f64)> = (0..BRUTE_FORCE_POINTS)
        .map(|i| {
            let t = t_lo + (t_hi - t_lo) * i as f64 / (BRUTE_FORCE_POINTS - 1) as f64;
            (t, curve.eval(t).unwrap())
        })
        .collect();
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    let (mut brute, mut tail) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let y = rng.random_range(lo + 0.05 * (hi - lo)..hi - 0.05 * (hi - lo));
        let golden = legendre(&curve, y).unwrap();
        let sup = dense.iter().map(|&(t, p)| t * y - p).fold(f64::NEG_INFINITY, f64::max);
        brute = brute.max((golden.value - sup).abs());
        let te = tail_exponent(&curve, y).map_err(|e| e.to_string())?;
        tail = tail.max((te.exponent - golden.value).abs());
    }
    ensure(
        at_mean <= RATE_AT_MEAN_TOL
            && convexity >= -RATE_CONVEXITY_TOL
            && brute <= BRUTE_FORCE_TOL
            && tail <= TAIL_TOL,
        format!(
            "I(alpha) {at_mean:.1e}, min second difference {convexity:.1e}, \
             golden vs brute force {brute:.1e} (tol {BRUTE_FORCE_TOL:.0e}), tail vs legendre {tail:.1e}"
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn monte_carlo_lln(tier: Tier) -> Result<String, String> {
    let mut spec = preset("rbm-zero-drift").unwrap().with_outputs([Output::Verify]);
    if tier == Tier::Ci {
        let mc = spec.mc.as_mut().unwrap();
        mc.horizon_t = 100.0;
        mc.replications = 40;
        spec.thresholds.eta2_relative = 0.5;
        spec.thresholds.occupation_gap = 0.1;
    }
    let mc = spec.mc.clone().unwrap();
    let report = verify(&spec, RunOptions::default()).map_err(|e| e.to_string())?;
    let t = report.thresholds;
    ensure(
        report.alpha.passed && report.eta2.passed && report.occupation.passed,
        format!(
            "t={} R={} dt={:.0e}: alpha {:.4} +- {:.4} (z {:.2}, tol {}), eta2 {:.4} rel err {:.3} (tol {}), \
             batch eta2 {:.4}, occupation gap {:.4} (tol {})",
            mc.horizon_t,
            mc.replications,
            mc.dt,
            report.alpha.mc.value,
            report.alpha.mc.se,
            report.alpha.z.unwrap_or(0.0),
            t.alpha_z,
            report.eta2.mc.value,
            report.eta2.relative_error,
            t.eta2_relative,
            report.eta2.batch.map_or(f64::NAN, |b| b.value),
            report.occupation.sup_gap,
            t.occupation_gap,
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn monte_carlo_cgf(tier: Tier) -> Result<String, String> {
    let mut spec = preset("zhang-case").unwrap().with_outputs([Output::Verify]);
    if tier == Tier::Ci {
        let mc = spec.mc.as_mut().unwrap();
        mc.horizon_t = 20.0;
        mc.replications = 2000;
        spec.thresholds.cgf_gap = 0.05;
    }
    let mc = spec.mc.clone().unwrap();
    let report = verify(&spec, RunOptions::default()).map_err(|e| e.to_string())?;
    let c = report.cgf.first().ok_or("no cgf point")?;
    ensure(
        c.passed,
        format!(
            "t={} R={}: theta {} cgf {:.4} +- {:.4} vs psi {:.4}, gap {:.4} (tol {}), reliable {}",
            mc.horizon_t, mc.replications, c.theta, c.mc, c.se, c.psi, c.gap, report.thresholds.cgf_gap, c.reliable
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn refdiff_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_refdiff"))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism(_: Tier) -> Result<String, String> {
    let mut spec = preset("zhang-case").unwrap();
    spec.mc = Some(McConfig { dt: 1e-3, ..McConfig::new(5.0, 64, 99, 0.5) });
    spec.cgf_thetas = Some(vec![-0.5, 0.5]);
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.toml");
    std::fs::write(&spec_path, spec.to_toml().unwrap()).unwrap();
    let mut runs = Vec::new();
    for command in ["verify", "run"] {
        let mut outputs = Vec::new();
        for threads in ["1", "8"] {
            let out = dir.path().join(format!("{command}-{threads}"));
            let status = refdiff_bin()
                .arg(command)
                .arg("--spec")
                .arg(&spec_path)
                .arg("--out")
                .arg(&out)
                .args(["--seed", "4242", "--threads", threads])
                .output()
                .unwrap();
            if !matches!(status.status.code(), Some(0) | Some(4)) {
                return Err(format!("exit {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
            }
            outputs.push(files_in(&out));
        }
        let names: Vec<String> = outputs[0].iter().map(|(n, _)| n.clone()).collect();
        if outputs[0] != outputs[1] || !names.iter().any(|n| n == "result.json") {
            return Err(format!("{command}: outputs differ between --threads 1 and 8"));
        }
        runs.push(format!("{command} [{}]", names.join(", ")));
    }
    Ok(format!("bitwise identical across --threads 1 and 8: {}", runs.join("; ")))
}

// 10 -----------------------------------------------------------------------

fn negative_controls(_: Tier) -> Result<String, String> {
    let config = SolverConfig::default();
    let transient = DiffusionModel::single_barrier(
        CoefficientSpec::ConstantDrift { mu: 1.0 },
        CoefficientSpec::ConstantSq { sigma2: 1.0 },
    );
    let functional = AdditiveFunctional::boundary(1.0, 0.0);
    let non_ergodic = matches!(poisson::compute_alpha(&transient, &functional, &config), Err(Error::NonErgodic { .. }));

    let recurrent = DiffusionModel::single_barrier(
        CoefficientSpec::ConstantDrift { mu: -1.0 },
        CoefficientSpec::ConstantSq { sigma2: 1.0 },
    );
    let library = solve_principal(&recurrent, &functional, 0.5, &config);
    let library_ok = matches!(&library, Err(e @ Error::NonCompactDomain) if e.to_string().contains("compact"));

    let dir = tempfile::tempdir().unwrap();
    let spec = RunSpec {
        model: recurrent,
        functional,
        solver: config,
        mc: None,
        theta_grid: None,
        rate_points: None,
        cgf_thetas: None,
        outputs: [Output::Psi].into_iter().collect(),
        thresholds: Default::default(),
    };
    let path = dir.path().join("single.toml");
    std::fs::write(&path, spec.to_toml().unwrap()).unwrap();
    let cli = refdiff_bin().arg("psi").arg("--spec").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    let stderr = String::from_utf8_lossy(&cli.stderr);
    let cli_ok = cli.status.code() == Some(2) && stderr.contains("compact domain");

    let mut transient_spec = spec.clone().with_outputs([Output::Alpha]);
    transient_spec.model = transient;
    std::fs::write(&path, transient_spec.to_toml().unwrap()).unwrap();
    let cli = refdiff_bin().arg("analyze").arg("--spec").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    let cli_non_ergodic =
        cli.status.code() == Some(2) && String::from_utf8_lossy(&cli.stderr).contains("no stationary distribution");

    ensure(
        non_ergodic && library_ok && cli_ok && cli_non_ergodic,
        format!(
            "non-ergodic detected: library {non_ergodic}, cli {cli_non_ergodic}; \
             single-barrier psi rejected: library {library_ok}, cli {cli_ok} ({})",
            stderr.trim()
        ),
    )
}
