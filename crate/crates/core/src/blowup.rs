//! Blow-up rescalings, fits to rotated half-plane pairs, regular/singular
//! classification of nodal points and the flux integral behind the
//! reflection law.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::almgren::{frequency_n, height_h, FrequencyConfig};
use crate::error::{Error, Result};
use crate::grid::{gauss_legendre, hemisphere_rule, Configuration, ExtensionGrid, GradientField, Mode, ScalarField};
use crate::numerics::{golden_min, ls_slope, ordered_sum};
use crate::profiles::{half_plane, Sampler};

/// `v(X) = u(x0 + tX) / √H(x0, t)` resampled on `[-1, 1]^n × [0, 1]` with
/// spacing `h`.
pub fn rescale(u: &Configuration, x0: &[f64], t: f64, h: f64, cfg: &FrequencyConfig) -> Result<Configuration> {
    let src = u.grid();
    let n = src.n();
    if x0.len() != n {
        return Err(Error::param("centre must lie on the trace"));
    }
    let inside = (0..n).all(|k| x0[k] - t >= src.lo(k) - 1e-12 && x0[k] + t <= src.hi(k) + 1e-12)
        && t <= src.hi(n) + 1e-12;
    if !inside {
        return Err(Error::pre(format!("blow-up window of size {t} at {x0:?} leaves the box")));
    }
    let hv = height_h(u, x0, t, cfg)?;
    let mut v = resample(&u.components, n, x0, t, h, hv, cfg)?;
    v.mode = u.mode;
    Ok(v)
}

/// [`rescale`] for closed-form components; `H` comes from the sphere rule
/// applied to the exact integrand.
pub fn rescale_fn<S: Sampler>(
    components: &[S],
    n: usize,
    x0: &[f64],
    t: f64,
    h: f64,
    cfg: &FrequencyConfig,
) -> Result<Configuration> {
    if x0.len() != n {
        return Err(Error::param("centre must lie on the trace"));
    }
    let d = n + 1;
    let rule = hemisphere_rule(d, cfg.quadrature.n_ang)?;
    let vals = rule
        .iter()
        .map(|(dir, w)| {
            let p: Vec<f64> = (0..d).map(|k| if k < n { x0[k] } else { 0.0 } + t * dir[k]).collect();
            let mut s = 0.0;
            for c in components {
                let v = c.sample(&p)?;
                s += v * v;
            }
            Ok(w * s)
        })
        .collect::<Result<Vec<f64>>>()?;
    let hv = ordered_sum(&vals);
    resample(components, n, x0, t, h, hv, cfg)
}

fn resample<S: Sampler>(
    components: &[S],
    n: usize,
    x0: &[f64],
    t: f64,
    h: f64,
    hv: f64,
    cfg: &FrequencyConfig,
) -> Result<Configuration> {
    if !(t > 0.0) {
        return Err(Error::param(format!("scale t = {t} must be positive")));
    }
    if !(hv >= cfg.height_floor) {
        return Err(Error::DegenerateHeight { radius: t, value: hv });
    }
    let norm = 1.0 / hv.sqrt();
    let grid = Arc::new(ExtensionGrid::cube(n, 1.0, 1.0, h)?);
    let d = n + 1;
    let mut out = Vec::with_capacity(components.len());
    for f in components {
        let values = (0..grid.len())
            .into_par_iter()
            .map_init(
                || (vec![0.0; d], vec![0.0; d]),
                |(p, q), idx| {
                    grid.point_into(idx, p);
                    for k in 0..d {
                        q[k] = if k < n { x0[k] + t * p[k] } else { t * p[k] };
                    }
                    f.sample(q).map(|v| v * norm)
                },
            )
            .collect::<Result<Vec<f64>>>()?;
        out.push(ScalarField::from_values(grid.clone(), values)?);
    }
    Configuration::new(out, Mode::Segregated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousFit {
    pub amplitude: f64,
    /// Unit vector in the trace hyperplane.
    pub direction: Vec<f64>,
    /// Homogeneity degree from the slope of `log H` against `log r`.
    pub degree: f64,
    /// Sup-norm misfit over the nodes of the unit ball.
    pub residual: f64,
    /// Local refinement failed to improve on the coarse search.
    pub refinement_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Coarse directions per angular parameter (over a full turn).
    pub coarse_directions: usize,
    /// Index stride of the coarse node subsample.
    pub coarse_stride: usize,
    pub angle_tolerance: f64,
    pub amplitude_tolerance: f64,
    /// Radii for the degree estimate.
    pub degree_radii: [f64; 3],
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            coarse_directions: 72,
            coarse_stride: 4,
            angle_tolerance: 1e-10,
            amplitude_tolerance: 1e-11,
            degree_radii: [0.5, 0.75, 1.0],
        }
    }
}

struct Samples {
    points: Vec<[f64; 4]>,
    v1: Vec<f64>,
    v2: Vec<f64>,
}

fn ball_samples(v: &Configuration, stride: usize) -> Samples {
    let g = v.grid();
    let d = g.dim();
    let mut points = Vec::new();
    let mut v1 = Vec::new();
    let mut v2 = Vec::new();
    let mut p = vec![0.0; d];
    for idx in 0..g.len() {
        let m = g.unravel(idx);
        if stride > 1 && m[..d].iter().any(|i| i % stride != 0) {
            continue;
        }
        g.point_into(idx, &mut p);
        if p.iter().map(|x| x * x).sum::<f64>() > 1.0 + 1e-12 {
            continue;
        }
        let mut q = [0.0; 4];
        q[..d].copy_from_slice(&p);
        points.push(q);
        v1.push(v.components[0].at(idx));
        v2.push(v.components[1].at(idx));
    }
    Samples { points, v1, v2 }
}

fn direction_from_angles(n: usize, angles: &[f64]) -> Vec<f64> {
    match n {
        1 => vec![if angles[0].cos() >= 0.0 { 1.0 } else { -1.0 }],
        2 => vec![angles[0].cos(), angles[0].sin()],
        _ => {
            // polar angle from e_n, azimuth in the (x_1, x_2) plane
            let (a, b) = (angles[0], angles[1]);
            vec![a.sin() * b.cos(), a.sin() * b.sin(), a.cos()]
        }
    }
}

fn misfit(s: &Samples, n: usize, amp: f64, nu: &[f64]) -> f64 {
    (0..s.points.len())
        .into_par_iter()
        .with_min_len(2048)
        .map(|j| {
            let p = &s.points[j];
            let t: f64 = (0..n).map(|k| p[k] * nu[k]).sum();
            let z = p[n];
            let e1 = (s.v1[j] - amp * half_plane(t, z)).abs();
            let e2 = (s.v2[j] - amp * half_plane(-t, z)).abs();
            e1.max(e2)
        })
        .reduce(|| 0.0, f64::max)
}

fn best_amplitude(s: &Samples, n: usize, nu: &[f64], tol: f64) -> (f64, f64) {
    let vmax = s.v1.iter().chain(&s.v2).cloned().fold(0.0, f64::max);
    let hi = (4.0 * vmax).max(1e-12);
    golden_min(|a| misfit(s, n, a, nu), 0.0, hi, tol * hi)
}

/// Best `(a, ν)` for `(a U(x·ν, z), a Ū(x·ν, z))` in the sup norm.
pub fn fit_half_plane_pair(v: &Configuration, cfg: &FitConfig, fcfg: &FrequencyConfig) -> Result<HomogeneousFit> {
    if v.k() != 2 {
        return Err(Error::pre(format!("pair fit needs exactly two components, got {}", v.k())));
    }
    let g = v.grid();
    let n = g.n();
    if n > 3 {
        return Err(Error::Unsupported(format!("direction search for n = {n}")));
    }
    let coarse = ball_samples(v, cfg.coarse_stride.max(1));
    let full = ball_samples(v, 1);
    if full.points.is_empty() {
        return Err(Error::InsufficientSamples("no nodes in the unit ball".into()));
    }
    let m = cfg.coarse_directions.max(8);
    let candidates: Vec<Vec<f64>> = match n {
        1 => vec![vec![0.0], vec![std::f64::consts::PI]],
        2 => (0..m).map(|j| vec![2.0 * std::f64::consts::PI * j as f64 / m as f64]).collect(),
        _ => {
            let polar = m / 4;
            let mut out = vec![vec![0.0, 0.0], vec![std::f64::consts::PI, 0.0]];
            for i in 1..polar {
                for j in 0..m {
                    out.push(vec![
                        std::f64::consts::PI * i as f64 / polar as f64,
                        2.0 * std::f64::consts::PI * j as f64 / m as f64,
                    ]);
                }
            }
            out
        }
    };
    let scores: Vec<f64> = candidates
        .iter()
        .map(|ang| best_amplitude(&coarse, n, &direction_from_angles(n, ang), cfg.amplitude_tolerance).1)
        .collect();
    let (best_j, _) = scores
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bj, bv), (j, &s)| if s < bv { (j, s) } else { (bj, bv) });
    let start = candidates[best_j].clone();
    let start_nu = direction_from_angles(n, &start);
    let start_score = best_amplitude(&full, n, &start_nu, cfg.amplitude_tolerance).1;

    let mut angles = start.clone();
    if n >= 2 {
        let width = 2.0 * std::f64::consts::PI / m as f64;
        let rounds = if n == 2 { 1 } else { 4 };
        for round in 0..rounds {
            let shrink = 0.5f64.powi(round);
            for a in 0..n - 1 {
                let centre = angles[a];
                let (best, _) = golden_min(
                    |x| {
                        let mut trial = angles.clone();
                        trial[a] = x;
                        best_amplitude(&full, n, &direction_from_angles(n, &trial), cfg.amplitude_tolerance).1
                    },
                    centre - width * shrink,
                    centre + width * shrink,
                    cfg.angle_tolerance,
                );
                angles[a] = best;
            }
        }
    }
    let mut nu = direction_from_angles(n, &angles);
    let (mut amp, mut residual) = best_amplitude(&full, n, &nu, cfg.amplitude_tolerance);
    let mut refinement_failed = false;
    if residual > start_score * (1.0 + 1e-12) {
        refinement_failed = true;
        nu = start_nu;
        let (a, r) = best_amplitude(&full, n, &nu, cfg.amplitude_tolerance);
        amp = a;
        residual = r;
    }
    let norm = nu.iter().map(|x| x * x).sum::<f64>().sqrt();
    nu.iter_mut().for_each(|x| *x /= norm);
    let degree = estimate_degree(v, &cfg.degree_radii, fcfg)?;
    Ok(HomogeneousFit { amplitude: amp, direction: nu, degree, residual, refinement_failed })
}

/// Half the slope of `log H` against `log r` about the trace origin.
pub fn estimate_degree(v: &Configuration, radii: &[f64], cfg: &FrequencyConfig) -> Result<f64> {
    let origin = vec![0.0; v.grid().n()];
    let hs = radii.iter().map(|&r| height_h(v, &origin, r, cfg)).collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    Ok(0.5 * ls_slope(&xs, &ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodalLabel {
    Regular,
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPoint {
    pub point: Vec<f64>,
    pub n_estimate: f64,
    pub label: NodalLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalClassification {
    pub delta: f64,
    pub points: Vec<ClassifiedPoint>,
}

/// Labels each candidate `Regular` when its `N(0⁺)` estimate is below
/// `1/2 + delta`.
pub fn classify_nodal_points(
    u: &Configuration,
    candidates: &[Vec<f64>],
    delta: f64,
    radii: &[f64],
    cfg: &FrequencyConfig,
) -> Result<NodalClassification> {
    if !(delta >= 0.0) {
        return Err(Error::param("delta must be nonnegative"));
    }
    let g = u.grid();
    let scale = u
        .components
        .iter()
        .flat_map(|c| c.values().iter())
        .cloned()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let threshold = cfg.support_threshold * scale;
    let nodal: Vec<Vec<f64>> = g
        .trace_nodes()
        .into_iter()
        .filter(|&p| u.components.iter().all(|c| c.at(p) <= threshold))
        .map(|p| g.point(p))
        .collect();
    for c in candidates {
        if c.len() != g.n() {
            return Err(Error::param("candidates are trace points"));
        }
        let near = nodal.iter().any(|q| {
            let d2: f64 = c.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 <= (1.5 * g.h()).powi(2)
        });
        if !near {
            return Err(Error::pre(format!("candidate {c:?} is not on the nodal set")));
        }
    }
    let points = candidates
        .par_iter()
        .map(|c| {
            let rep = frequency_n(u, c, radii, cfg)?;
            let label = if rep.n_zero_plus < 0.5 + delta { NodalLabel::Regular } else { NodalLabel::Singular };
            Ok(ClassifiedPoint { point: c.clone(), n_estimate: rep.n_zero_plus, label })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NodalClassification { delta, points })
}

/// `∫_{Q_l × ∂B_r} {(e_n·∇u)(ν·∇u) - ½(ν·e_n)|∇u|²}` summed over
/// components, with `Q_l` the cube of half-edge `l` in `x'` about `x0'` and
/// `B_r` the disc about `(x0_n, 0)` in the `(x_n, z)` plane.
pub fn reflection_defect(u: &Configuration, x0: &[f64], l: f64, r: f64, n_ang: usize) -> Result<f64> {
    let g = u.grid();
    let n = g.n();
    if x0.len() != n {
        return Err(Error::param("centre must lie on the trace"));
    }
    if !(l > 0.0 && r > 0.0) {
        return Err(Error::param("cylinder dimensions must be positive"));
    }
    let fits = (0..n - 1).all(|k| x0[k] - l >= g.lo(k) - 1e-12 && x0[k] + l <= g.hi(k) + 1e-12)
        && x0[n - 1] - r >= g.lo(n - 1) - 1e-12
        && x0[n - 1] + r <= g.hi(n - 1) + 1e-12
        && r <= g.hi(n) + 1e-12;
    if !fits {
        return Err(Error::pre(format!("cylinder l = {l}, r = {r} leaves the box")));
    }
    let grads: Vec<GradientField> = u.components.iter().map(|f| GradientField::new(f, 1e-8)).collect();
    let circle = hemisphere_rule(2, n_ang)?;
    // tensor Gauss-Legendre rule on Q_l
    let m = 24;
    let (gx, gw) = gauss_legendre(m);
    let tangential = n - 1;
    let count = m.pow(tangential as u32);
    let d = n + 1;
    let terms = (0..count)
        .into_par_iter()
        .map(|c| {
            let mut p = vec![0.0; d];
            let mut w = 1.0;
            let mut rem = c;
            for k in 0..tangential {
                let j = rem % m;
                rem /= m;
                p[k] = x0[k] + l * gx[j];
                w *= l * gw[j];
            }
            let mut acc = Vec::with_capacity(circle.len());
            for (dir, wc) in &circle {
                p[n - 1] = x0[n - 1] + r * dir[0];
                p[n] = r * dir[1];
                let mut s = 0.0;
                for gf in &grads {
                    let gr = gf.interpolate(&p)?;
                    let en = gr[n - 1];
                    let dn = gr[n - 1] * dir[0] + gr[n] * dir[1];
                    let sq: f64 = gr[..d].iter().map(|v| v * v).sum();
                    s += en * dn - 0.5 * dir[0] * sq;
                }
                acc.push(wc * s);
            }
            Ok(w * ordered_sum(&acc) * r)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ordered_sum(&terms))
}

/// Closed-form value of [`reflection_defect`] for `(a₁U, a₂Ū)`.
pub fn reflection_defect_exact(n: usize, l: f64, a1: f64, a2: f64) -> f64 {
    (2.0 * l).powi(n as i32 - 1) * std::f64::consts::FRAC_PI_4 * (a1 * a1 - a2 * a2)
}
