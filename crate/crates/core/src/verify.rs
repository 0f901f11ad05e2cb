//! The desk-scale verification suite: each check builds its own inputs,
//! measures one quantity and compares it with a fixed target.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::almgren::{check_logderivative, frequency_n, pohozaev_residual, FrequencyConfig};
use crate::blowup::{classify_nodal_points, reflection_defect, reflection_defect_exact, NodalLabel};
use crate::error::{Error, Result};
use crate::flatness::{extract_free_boundary, improvement_check, measure_flatness, FlatnessConfig, Region};
use crate::grid::{Configuration, ExtensionGrid, Mode, ScalarField};
use crate::io::{write_classification_csv, write_frequency_csv, write_interface_csv};
use crate::linearized::{
    expansion_at, explicit_minimizer, solve_linearized, ExpansionConfig, LinearizedBoundary, LinearizedConfig,
    LinearizedPair,
};
use crate::profiles::{ball_lattice, check_subsolution_expansion, half_plane, VariationConfig};
use crate::solver::{solve_segregated, BoundaryData, SolveConfig};
use crate::spectral::{first_eigenfunction, lambda1_cap, CapProblem};

type Profile = Box<dyn Fn(&[f64]) -> f64 + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Grid spacing on `[-1, 1]² × [0, 1]`.
    pub h: f64,
    /// Spacing for the solver recovery check.
    pub recovery_h: f64,
    pub radii: Vec<f64>,
    pub polar_cells: usize,
    /// Curvature of the front `x_2 = κ x_1³` in the flatness check.
    pub flatness_kappa: f64,
    pub rho: f64,
    pub solver: SolveConfig,
    pub frequency: FrequencyConfig,
    /// Run only these checks; all when empty.
    pub only: Vec<u8>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            h: 1.0 / 64.0,
            recovery_h: 1.0 / 32.0,
            radii: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            polar_cells: 64,
            flatness_kappa: 0.05,
            rho: 0.25,
            solver: SolveConfig::default(),
            frequency: FrequencyConfig::default(),
            only: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    /// The headline measurement compared with `target`.
    pub measured: f64,
    pub target: String,
    pub detail: String,
    pub seconds: f64,
}

pub const CHECKS: [(u8, &str); 12] = [
    (1, "frequency constancy"),
    (2, "frequency monotonicity"),
    (3, "log-derivative identity"),
    (4, "Pohozaev balance"),
    (5, "reflection law"),
    (6, "solver recovery"),
    (7, "subsolution expansion"),
    (8, "linearized transmission"),
    (9, "spectral cap"),
    (10, "flatness improvement"),
    (11, "classification"),
    (12, "determinism"),
];

struct Measured {
    passed: bool,
    measured: f64,
    target: String,
    detail: String,
}

fn box_grid(h: f64) -> Result<Arc<ExtensionGrid>> {
    Ok(Arc::new(ExtensionGrid::cube(2, 1.0, 1.0, h)?))
}

/// `(a₁ U(x₂ + s, z), a₂ Ū(x₂ + s, z))` on the `n = 2` box.
fn pair_profiles(a1: f64, a2: f64) -> [Profile; 2] {
    [Box::new(move |x| a1 * half_plane(x[1], x[2])), Box::new(move |x| a2 * half_plane(-x[1], x[2]))]
}

pub fn exact_pair(h: f64) -> Result<Configuration> {
    Ok(Configuration::from_fns(box_grid(h)?, &pair_profiles(1.0, 1.0), Mode::Segregated))
}

/// `(U(t, z), Ū(t, z))` with `t = x₂ - κ x₁³`.
pub fn cubic_front(kappa: f64) -> [Profile; 2] {
    [
        Box::new(move |x| half_plane(x[1] - kappa * x[0].powi(3), x[2])),
        Box::new(move |x| half_plane(-(x[1] - kappa * x[0].powi(3)), x[2])),
    ]
}

fn solve_pair(h: f64, fs: &[Profile; 2], cfg: &SolveConfig) -> Result<Configuration> {
    let r = solve_segregated(&BoundaryData::from_fns(box_grid(h)?, fs)?, cfg)?;
    if !r.converged {
        return Err(Error::NonConvergence {
            what: "segregated solve",
            iterations: r.sweeps,
            last_change: r.energy_history.last().and_then(|s| s.last()).copied().unwrap_or(f64::NAN),
        });
    }
    Ok(r.configuration)
}

fn frequency_constancy(cfg: &VerifyConfig) -> Result<Measured> {
    let t = Instant::now();
    let rep = frequency_n(&exact_pair(cfg.h)?, &[0.0, 0.0], &cfg.radii, &cfg.frequency)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = rep.n.iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
    Ok(Measured {
        passed: worst <= 0.01 && secs < 60.0,
        measured: worst,
        target: "|N - 1/2| <= 0.01, < 60 s".into(),
        detail: format!("N = {:?}, {secs:.1} s", rep.n),
    })
}

fn frequency_monotonicity(cfg: &VerifyConfig) -> Result<Measured> {
    let u = solve_pair(cfg.h, &pair_profiles(1.0, 1.0), &cfg.solver)?;
    let rep = frequency_n(&u, &[0.0, 0.0], &cfg.radii, &cfg.frequency)?;
    Ok(Measured {
        passed: rep.monotonicity_defect <= 0.02,
        measured: rep.monotonicity_defect,
        target: "<= 0.02".into(),
        detail: format!("N = {:?}", rep.n),
    })
}

fn log_derivative(cfg: &VerifyConfig) -> Result<Measured> {
    let rep = frequency_n(&exact_pair(cfg.h)?, &[0.0, 0.0], &cfg.radii, &cfg.frequency)?;
    let d = check_logderivative(&rep)?;
    Ok(Measured { passed: d <= 0.05, measured: d, target: "<= 0.05".into(), detail: format!("H = {:?}", rep.h) })
}

fn pohozaev(cfg: &VerifyConfig) -> Result<Measured> {
    let u = exact_pair(cfg.h)?;
    let radii = [0.25, 0.3125, 0.375, 0.4375, 0.5];
    let res = radii
        .iter()
        .map(|&r| pohozaev_residual(&u, &[0.0, 0.0], r, &cfg.frequency).map(|p| p.residual))
        .collect::<Result<Vec<_>>>()?;
    let worst = res.iter().cloned().fold(0.0, f64::max);
    Ok(Measured { passed: worst <= 0.05, measured: worst, target: "<= 0.05".into(), detail: format!("{res:?}") })
}

fn reflection(cfg: &VerifyConfig) -> Result<Measured> {
    let g = box_grid(cfg.h)?;
    let (l, r) = (0.5, 0.5);
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (a1, a2) in [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0)] {
        let u = Configuration::from_fns(g.clone(), &pair_profiles(a1, a2), Mode::Segregated);
        let got = reflection_defect(&u, &[0.0, 0.0], l, r, cfg.frequency.quadrature.n_ang)?;
        let want = reflection_defect_exact(2, l, a1, a2);
        // relative error, or absolute in units of (2l)^{n-1} when the target is 0
        let scale = if want == 0.0 { 2.0 * l } else { want.abs() };
        let tol = if want == 0.0 { 0.01 } else { 0.02 };
        worst = worst.max((got - want).abs() / scale / tol);
        detail.push(format!("({a1},{a2}): {got:.5} vs {want:.5}"));
    }
    Ok(Measured {
        passed: worst <= 1.0,
        measured: worst,
        target: "error / tolerance <= 1 (2% relative, 0.01 (2l) at zero)".into(),
        detail: detail.join("; "),
    })
}

fn recovery(cfg: &VerifyConfig) -> Result<Measured> {
    let t = Instant::now();
    let u = solve_pair(cfg.recovery_h, &pair_profiles(1.0, 1.0), &cfg.solver)?;
    let secs = t.elapsed().as_secs_f64();
    let exact = exact_pair(cfg.recovery_h)?;
    let err = u.components.iter().zip(&exact.components).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
    Ok(Measured {
        passed: err <= 0.05 && secs < 300.0,
        measured: err,
        target: format!("L∞ <= 0.05 at h = {}, < 300 s", cfg.recovery_h),
        detail: format!("{secs:.1} s"),
    })
}

fn subsolution(_cfg: &VerifyConfig) -> Result<Measured> {
    let vc = VariationConfig::default();
    let mut worst = f64::NEG_INFINITY;
    let mut detail = Vec::new();
    for component in [1, 2] {
        let orientation = if component == 1 { crate::Orientation::Plus } else { crate::Orientation::Minus };
        let pts = ball_lattice(2, 1.0, 0.25, orientation);
        for beta in [0.0, 1.0] {
            let rep = check_subsolution_expansion(component, beta, 2, &[10.0, 20.0, 40.0], &pts, &vc)?;
            worst = worst.max(rep.loglog_slope);
            detail.push(format!("u{component} β={beta}: {:.3}", rep.loglog_slope));
        }
    }
    Ok(Measured { passed: worst <= -1.7, measured: worst, target: "slope <= -1.7".into(), detail: detail.join("; ") })
}

fn transmission(cfg: &VerifyConfig) -> Result<Measured> {
    let g = box_grid(cfg.h)?;
    let lc = LinearizedConfig::default();
    let ec = ExpansionConfig::default();
    let f1 = |x: &[f64]| 0.1 + 0.2 * x[0] + 0.2 * x[0] * x[0] - 0.3 * x[1] + 0.2 * x[2];
    let f2 = |x: &[f64]| 0.1 + 0.2 * x[0] + 0.2 * x[0] * x[0] + 0.2 * x[1] - 0.1 * x[0] * x[2];
    let p = solve_linearized(&LinearizedBoundary::from_fns(g.clone(), f1, f2)?, &lc)?;
    if !p.converged {
        return Err(Error::NonConvergence { what: "linearized solve", iterations: p.sweeps, last_change: f64::NAN });
    }
    let mut defect: f64 = 0.0;
    for x in [-0.4, -0.2, 0.0, 0.2, 0.4] {
        defect = defect.max(expansion_at(&p, &[x, 0.0], &ec)?.transmission_defect);
    }
    let v = |x: &[f64]| explicit_minimizer(x, 2).unwrap_or((0.0, 0.0));
    let sampled = LinearizedPair::from_fields(
        ScalarField::from_fn(g.clone(), |x| v(x).0),
        ScalarField::from_fn(g.clone(), |x| v(x).1),
    )?;
    let e = expansion_at(&sampled, &[0.0, 0.0], &ec)?;
    let explicit = (e.b1 - 2.0).abs().max((e.b2 + 2.0).abs());
    // the explicit pair reaches 6.7 on the walls; the problem is linear
    let sc = 1.0 / 7.0;
    let q = solve_linearized(&LinearizedBoundary::from_fns(g.clone(), |x| sc * v(x).0, |x| sc * v(x).1)?, &lc)?;
    let recovery = q
        .g1
        .scaled(1.0 / sc)
        .max_abs_diff(&sampled.g1)
        .max(q.g2.scaled(1.0 / sc).max_abs_diff(&sampled.g2));
    let solved = expansion_at(&q, &[0.0, 0.0], &ec)?;
    Ok(Measured {
        passed: defect <= 0.05 && explicit <= 0.05 && q.converged && recovery <= 0.05,
        measured: defect.max(explicit),
        target: "|b1 + b2| <= 0.05; explicit pair (b1, b2) = (2, -2) ± 0.05, solve within L∞ 0.05".into(),
        detail: format!(
            "max |b1 + b2| = {defect:.4}; explicit (b1, b2) = ({:.4}, {:.4}); solved explicit: L∞ {recovery:.4}, (b1, b2) = ({:.4}, {:.4})",
            e.b1,
            e.b2,
            solved.b1 / sc,
            solved.b2 / sc
        ),
    })
}

fn spectral(cfg: &VerifyConfig) -> Result<Measured> {
    let half = lambda1_cap(&CapProblem::cap(FRAC_PI_2, cfg.polar_cells)?)?;
    let sweep = [FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4]
        .iter()
        .map(|&o| lambda1_cap(&CapProblem::cap(o, cfg.polar_cells)?).map(|r| r.lambda1))
        .collect::<Result<Vec<_>>>()?;
    let monotone = sweep.windows(2).all(|w| w[0] > w[1] + 1e-3);
    let ok = (half.lambda1 - 0.75).abs() <= 0.03 && (half.gamma - 0.5).abs() <= 0.02;
    Ok(Measured {
        passed: ok && monotone,
        measured: half.lambda1,
        target: "λ₁ = 0.75 ± 0.03, γ = 0.5 ± 0.02, decreasing in opening".into(),
        detail: format!("γ = {:.4}; λ₁(π/4, π/2, 3π/4) = {sweep:?}", half.gamma),
    })
}

fn flatness(cfg: &VerifyConfig) -> Result<Measured> {
    let fc = FlatnessConfig::default();
    let u = solve_pair(cfg.h, &cubic_front(cfg.flatness_kappa), &cfg.solver)?;
    let e0 = measure_flatness(&u, &[0.0, 1.0], 1.0, &Region::ball(&[0.0, 0.0], 1.0))?.epsilon;
    let rep = improvement_check(&u, e0, cfg.rho, &fc)?;
    let ratio = rep.epsilon_out_rescaled / e0;
    let (s, c) = 0.02f64.sin_cos();
    let tilted: [Profile; 2] = [
        Box::new(move |x| 1.01 * half_plane(s * x[0] + c * x[1], x[2])),
        Box::new(move |x| 1.01 * half_plane(-(s * x[0] + c * x[1]), x[2])),
    ];
    let t = Configuration::from_fns(box_grid(cfg.h)?, &tilted, Mode::Segregated);
    let te0 = measure_flatness(&t, &[0.0, 1.0], 1.0, &Region::ball(&[0.0, 0.0], 1.0))?.epsilon;
    let trep = improvement_check(&t, te0, cfg.rho, &fc)?;
    Ok(Measured {
        passed: ratio <= 0.6 && trep.epsilon_out <= cfg.h,
        measured: ratio,
        target: format!("ε_out/ρ <= 0.6 ε₀ at ρ = {}; tilted ε_out <= h", cfg.rho),
        detail: format!(
            "ε₀ = {e0:.5}, ε_out = {:.5}, α = {:.4}, ν = {:?}; tilted ε_out = {:.2e}",
            rep.epsilon_out, rep.alpha_out, rep.nu_out, trep.epsilon_out
        ),
    })
}

/// Degree-`γ` pair supported on opposite quadrant pairs of the trace, with
/// the first cap eigenfunction of two quarter arcs as angular part.
pub fn quadrant_cross(h: f64, polar_cells: usize) -> Result<(Configuration, f64)> {
    let arcs = vec![(0.0, FRAC_PI_2), (PI, 1.5 * PI)];
    let (rep, phi) = first_eigenfunction(&CapProblem::with_arcs(arcs, polar_cells)?)?;
    let gamma = rep.gamma;
    let g = box_grid(h)?;
    let a = phi.clone();
    let b = phi;
    let fs: [Profile; 2] = [
        Box::new(move |x| a.homogeneous(gamma, 0.0, x).max(0.0)),
        Box::new(move |x| b.homogeneous(gamma, FRAC_PI_2, x).max(0.0)),
    ];
    Ok((Configuration::from_fns(g, &fs, Mode::Segregated), gamma))
}

fn classification(cfg: &VerifyConfig) -> Result<Measured> {
    let radii = [0.1, 0.2, 0.3, 0.4];
    let delta = 0.1;
    let u = exact_pair(cfg.h)?;
    let pts = extract_free_boundary(&u, cfg.frequency.support_threshold)?;
    let window: Vec<Vec<f64>> = pts.points.into_iter().filter(|p| p[0].abs() <= 0.5 + 1e-12).collect();
    let c = classify_nodal_points(&u, &window, delta, &radii, &cfg.frequency)?;
    let regular = c.points.iter().filter(|p| p.label == NodalLabel::Regular).count();
    let worst_regular = c.points.iter().map(|p| p.n_estimate).fold(f64::NEG_INFINITY, f64::max);
    let (cross, gamma) = quadrant_cross(cfg.h, cfg.polar_cells)?;
    let cc = classify_nodal_points(&cross, &[vec![0.0, 0.0]], delta, &radii, &cfg.frequency)?;
    let origin = &cc.points[0];
    Ok(Measured {
        passed: regular == c.points.len() && !c.points.is_empty() && origin.label == NodalLabel::Singular,
        measured: origin.n_estimate,
        target: "pair interface all Regular; cross origin Singular (N(0+) >= 0.6)".into(),
        detail: format!(
            "{regular}/{} regular, max N(0+) {worst_regular:.4}; cross γ = {gamma:.4}, N(0+) = {:.4}",
            c.points.len(),
            origin.n_estimate
        ),
    })
}

/// Runs a small solve-and-report pipeline into `dir`.
pub fn determinism_run(dir: &Path, cfg: &VerifyConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let solver = SolveConfig { beta_schedule: vec![], ..cfg.solver.clone() };
    let u = solve_pair(1.0 / 16.0, &cubic_front(0.1), &solver)?;
    let rep = frequency_n(&u, &[0.0, 0.0], &[0.25, 0.375, 0.5], &cfg.frequency)?;
    let pts = extract_free_boundary(&u, cfg.frequency.support_threshold)?;
    let cands: Vec<Vec<f64>> = pts.points.iter().filter(|p| p[0].abs() <= 0.25).cloned().collect();
    let cls = classify_nodal_points(&u, &cands, 0.1, &[0.25, 0.375, 0.5], &cfg.frequency)?;
    let files = [dir.join("frequency.csv"), dir.join("interface.csv"), dir.join("classification.csv")];
    write_frequency_csv(&files[0], &rep)?;
    write_interface_csv(&files[1], &pts)?;
    write_classification_csv(&files[2], &cls)?;
    Ok(files.to_vec())
}

fn determinism(cfg: &VerifyConfig, scratch: &Path) -> Result<Measured> {
    let a = determinism_run(&scratch.join("run-a"), cfg)?;
    let b = determinism_run(&scratch.join("run-b"), cfg)?;
    let mut differing = 0;
    for (p, q) in a.iter().zip(&b) {
        if std::fs::read(p)? != std::fs::read(q)? {
            differing += 1;
        }
    }
    Ok(Measured {
        passed: differing == 0,
        measured: differing as f64,
        target: "0 differing CSV files".into(),
        detail: format!("{} files compared", a.len()),
    })
}

/// Runs one check; failures to compute are reported as failed checks.
pub fn run_check(id: u8, cfg: &VerifyConfig, scratch: &Path) -> Result<CheckOutcome> {
    let name = CHECKS.iter().find(|c| c.0 == id).ok_or_else(|| Error::param(format!("no check {id}")))?.1;
    let t = Instant::now();
    let m = match id {
        1 => frequency_constancy(cfg),
        2 => frequency_monotonicity(cfg),
        3 => log_derivative(cfg),
        4 => pohozaev(cfg),
        5 => reflection(cfg),
        6 => recovery(cfg),
        7 => subsolution(cfg),
        8 => transmission(cfg),
        9 => spectral(cfg),
        10 => flatness(cfg),
        11 => classification(cfg),
        _ => determinism(cfg, scratch),
    };
    let seconds = t.elapsed().as_secs_f64();
    Ok(match m {
        Ok(m) => CheckOutcome {
            id,
            name: name.into(),
            passed: m.passed,
            measured: m.measured,
            target: m.target,
            detail: m.detail,
            seconds,
        },
        Err(e) => CheckOutcome {
            id,
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            target: String::new(),
            detail: format!("error: {e}"),
            seconds,
        },
    })
}

pub fn run_all(cfg: &VerifyConfig, scratch: &Path) -> Result<Vec<CheckOutcome>> {
    CHECKS
        .iter()
        .map(|c| c.0)
        .filter(|id| cfg.only.is_empty() || cfg.only.contains(id))
        .map(|id| {
            let out = run_check(id, cfg, scratch)?;
            log::info!("check {id} {} in {:.1} s", if out.passed { "passed" } else { "failed" }, out.seconds);
            Ok(out)
        })
        .collect()
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {}: measured {:.6} (target {}) {} [{:.1} s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.target,
            self.detail,
            self.seconds
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_checks_on_a_coarse_grid() {
        let cfg = VerifyConfig { h: 1.0 / 16.0, radii: vec![0.25, 0.375, 0.5], polar_cells: 16, ..Default::default() };
        let dir = std::env::temp_dir();
        for id in [3, 5, 9] {
            let out = run_check(id, &cfg, &dir).unwrap();
            assert!(out.measured.is_finite(), "{}", out.line());
        }
        assert!(run_check(13, &cfg, &dir).is_err());
    }

    #[test]
    fn cross_is_segregated_on_the_trace() {
        let (u, gamma) = quadrant_cross(1.0 / 8.0, 16).unwrap();
        assert!(gamma > 0.6 && gamma < 0.8, "{gamma}");
        assert_eq!(u.segregation_violations(1e-12), 0);
        let g = u.grid();
        let idx = g.locate(&[0.5, 0.5, 0.0]).unwrap().0;
        let at = g.ravel(&idx[..3]);
        assert!(u.components[0].at(at) > 0.0 && u.components[1].at(at) == 0.0);
    }
}
