use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use segfb_core::almgren::{check_logderivative, frequency_n};
use segfb_core::blowup::{classify_nodal_points, estimate_degree, fit_half_plane_pair, rescale};
use segfb_core::flatness::{extract_free_boundary, improvement_check, measure_flatness, Region};
use segfb_core::io;
use segfb_core::linearized::{expansion_at, explicit_minimizer, solve_linearized, LinearizedBoundary};
use segfb_core::profiles::half_plane;
use segfb_core::solver::{residual_report, solve_segregated, BoundaryData};
use segfb_core::spectral::{sweep_openings, CapProblem};
use segfb_core::verify::{quadrant_cross, run_all};
use segfb_core::{Configuration, ExtensionGrid, Mode, Result};

use crate::config::{Command, ExperimentConfig, Input, LinearBoundary, ProfileName, ProfileSpec};

type Writer = Box<dyn FnOnce(&Path) -> Result<()>>;

/// Files produced by a command, written only once the command succeeds.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Writer)>,
    /// Set when a verification check failed.
    pub failed_checks: usize,
}

impl Outputs {
    fn add(&mut self, name: &str, w: impl FnOnce(&Path) -> Result<()> + 'static) {
        self.files.push((name.to_string(), Box::new(w)));
    }

    fn json<T: Serialize + 'static>(&mut self, name: &str, value: T) {
        self.add(name, move |p| io::write_json(p, &value));
    }

    pub fn write_all(self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::with_capacity(self.files.len());
        for (name, w) in self.files {
            w(&dir.join(&name))?;
            names.push(name);
        }
        Ok(names)
    }
}

type Profile = Box<dyn Fn(&[f64]) -> f64 + Sync>;

fn pair_profiles(p: &ProfileSpec, n: usize) -> [Profile; 2] {
    let (s, c) = p.angle.sin_cos();
    let (shift, cubic) = (p.shift, p.cubic);
    let t = move |x: &[f64]| {
        let lateral = if n >= 2 { s * x[0] - cubic * x[0].powi(3) } else { 0.0 };
        c * x[n - 1] + lateral + shift
    };
    let [a1, a2] = p.amplitudes;
    [Box::new(move |x| a1 * half_plane(t(x), x[n])), Box::new(move |x| a2 * half_plane(-t(x), x[n]))]
}

fn from_profile(p: &ProfileSpec, grid: &Arc<ExtensionGrid>) -> Result<Configuration> {
    match p.name {
        ProfileName::HalfPlanePair => Ok(Configuration::from_fns(grid.clone(), &pair_profiles(p, grid.n()), Mode::Segregated)),
        ProfileName::QuadrantCross => {
            let (u, _) = quadrant_cross(grid.h(), p.polar_cells)?;
            let [a1, a2] = p.amplitudes;
            let c = u.components;
            Configuration::new(vec![c[0].scaled(a1), c[1].scaled(a2)], Mode::Segregated)
        }
    }
}

/// The configuration a command works on, plus any solver report.
fn obtain(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Configuration> {
    let grid = cfg.grid.build()?;
    match &cfg.input {
        Input::Exact { profile } => from_profile(profile, &grid),
        Input::Field { path } => io::read_field(path),
        Input::Solve { profile } => {
            let data = from_profile(profile, &grid)?;
            let boundary = BoundaryData::new(data.components, cfg.solver.support_threshold)?;
            let r = solve_segregated(&boundary, &cfg.solver)?;
            if !r.converged {
                return Err(segfb_core::Error::NonConvergence {
                    what: "segregated solve",
                    iterations: r.sweeps,
                    last_change: r.energy_history.last().and_then(|s| s.last()).copied().unwrap_or(f64::NAN),
                });
            }
            let summary = r.summary(residual_report(&r.configuration, cfg.solver.support_threshold));
            out.json("solve.json", summary);
            let rows: Vec<Vec<f64>> = r
                .energy_history
                .iter()
                .enumerate()
                .flat_map(|(s, h)| h.iter().enumerate().map(move |(k, e)| vec![s as f64, k as f64, *e]))
                .collect();
            out.add("energy.csv", move |p| io::write_table_csv(p, &["stage", "sweep", "energy"], &rows));
            Ok(r.configuration)
        }
    }
}

fn origin(c: &Option<Vec<f64>>, n: usize) -> Vec<f64> {
    c.clone().unwrap_or_else(|| vec![0.0; n])
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outputs> {
    let mut out = Outputs::default();
    match cfg.command {
        Command::Solve => {
            let u = obtain(cfg, &mut out)?;
            out.add("field.sfld", move |p| io::write_field(p, &u));
        }
        Command::Frequency => {
            let u = obtain(cfg, &mut out)?;
            let c = origin(&cfg.frequency.center, u.grid().n());
            let rep = frequency_n(&u, &c, &cfg.frequency.radii, &cfg.frequency.settings)?;
            let logd = if rep.radii.len() >= 3 { Some(check_logderivative(&rep)?) } else { None };
            let summary = json!({
                "report": rep,
                "logderivative_defect": logd,
            });
            out.add("frequency.csv", move |p| io::write_frequency_csv(p, &rep));
            out.json("frequency.json", summary);
        }
        Command::Blowup => {
            let u = obtain(cfg, &mut out)?;
            let g = u.grid().clone();
            let c = origin(&cfg.blowup.center, g.n());
            let v = rescale(&u, &c, cfg.blowup.t, g.h(), &cfg.frequency.settings)?;
            let summary = if v.k() == 2 {
                json!({ "fit": fit_half_plane_pair(&v, &cfg.blowup.fit, &cfg.frequency.settings)? })
            } else {
                json!({ "degree": estimate_degree(&v, &cfg.blowup.fit.degree_radii, &cfg.frequency.settings)? })
            };
            out.json("blowup.json", summary);
            out.add("blowup.sfld", move |p| io::write_field(p, &v));
        }
        Command::Classify => {
            let u = obtain(cfg, &mut out)?;
            let pts = extract_free_boundary(&u, cfg.frequency.settings.support_threshold)?;
            let cands = match &cfg.classify.candidates {
                Some(c) => c.clone(),
                None => pts
                    .points
                    .iter()
                    .filter(|p| p.iter().all(|v| v.abs() <= cfg.classify.window + 1e-12))
                    .cloned()
                    .collect(),
            };
            let cls = classify_nodal_points(&u, &cands, cfg.classify.delta, &cfg.classify.radii, &cfg.frequency.settings)?;
            out.add("interface.csv", move |p| io::write_interface_csv(p, &pts));
            out.add("classification.csv", move |p| io::write_classification_csv(p, &cls));
        }
        Command::Linearize => {
            let grid = cfg.grid.build()?;
            let n = grid.n();
            let b = match &cfg.linearize.boundary {
                LinearBoundary::Explicit { scale } => {
                    let s = *scale;
                    let v = move |x: &[f64]| explicit_minimizer(x, n).unwrap_or((0.0, 0.0));
                    LinearizedBoundary::from_fns(grid, move |x| s * v(x).0, move |x| s * v(x).1)?
                }
                LinearBoundary::Affine { g1, g2 } => {
                    let affine = |c: Vec<f64>| move |x: &[f64]| c[0] + x.iter().zip(&c[1..]).map(|(a, b)| a * b).sum::<f64>();
                    LinearizedBoundary::from_fns(grid, affine(g1.clone()), affine(g2.clone()))?
                }
            };
            let pair = solve_linearized(&b, &cfg.linearize.settings)?;
            if !pair.converged {
                return Err(segfb_core::Error::NonConvergence {
                    what: "linearized solve",
                    iterations: pair.sweeps,
                    last_change: f64::NAN,
                });
            }
            let coeffs = cfg
                .linearize
                .points
                .iter()
                .map(|x| expansion_at(&pair, x, &cfg.linearize.expansion))
                .collect::<Result<Vec<_>>>()?;
            out.json("linearized.json", json!({ "energy": pair.energy, "sweeps": pair.sweeps, "flags": pair.flags }));
            out.json("expansion.json", coeffs);
            let field = Configuration::new(vec![pair.g1.clone(), pair.g2.clone()], Mode::Segregated)?;
            out.add("linearized.sfld", move |p| io::write_field(p, &field));
        }
        Command::Flatness => {
            let u = obtain(cfg, &mut out)?;
            let n = u.grid().n();
            let mut en = vec![0.0; n];
            en[n - 1] = 1.0;
            let fc = &cfg.flatness.settings;
            let eps = match cfg.flatness.epsilon {
                Some(e) => e,
                None => measure_flatness(&u, &en, 1.0, &Region::ball(&vec![0.0; n], fc.outer_radius))?.epsilon,
            };
            let rep = improvement_check(&u, eps, cfg.flatness.rho, fc)?;
            let pts = extract_free_boundary(&u, fc.support_threshold)?;
            out.json("improvement.json", json!({ "epsilon_in": eps, "report": rep }));
            out.add("interface.csv", move |p| io::write_interface_csv(p, &pts));
        }
        Command::Spectral => {
            let sweep = sweep_openings(&cfg.spectral.openings, cfg.spectral.polar_cells)?;
            let problems = cfg
                .spectral
                .openings
                .iter()
                .map(|&o| CapProblem::cap(o, cfg.spectral.polar_cells))
                .collect::<Result<Vec<_>>>()?;
            out.json("spectral.json", json!({ "problems": problems, "reports": sweep }));
            out.add("spectral.csv", move |p| io::write_spectral_csv(p, &sweep));
        }
        Command::VerifyAll => {
            let scratch = std::env::temp_dir().join(format!("segfb-verify-{}", std::process::id()));
            let res = run_all(&cfg.verify, &scratch);
            let _ = std::fs::remove_dir_all(&scratch);
            let outcomes = res?;
            for o in &outcomes {
                println!("{}", o.line());
            }
            out.failed_checks = outcomes.iter().filter(|o| !o.passed).count();
            let rows: Vec<Vec<f64>> =
                outcomes.iter().map(|o| vec![o.id as f64, if o.passed { 1.0 } else { 0.0 }, o.measured]).collect();
            out.add("verify.csv", move |p| io::write_table_csv(p, &["check", "passed", "measured"], &rows));
            out.json("verify.json", outcomes);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: Command,
    pub version: &'static str,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
    pub config: &'a ExperimentConfig,
}

pub fn out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| cfg.out.clone())
}
