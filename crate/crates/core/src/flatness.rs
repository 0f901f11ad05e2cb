//! Free boundaries on the trace, sandwich widths against translates of
//! `U`, oscillation decay of domain variations and one step of
//! improvement of flatness.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Configuration;
use crate::numerics::{golden_min, ls_slope};
use crate::profiles::{ball_lattice, domain_variation, Orientation, Sampler, VariationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatnessConfig {
    /// The threshold `ε̄` below which flatness counts as small.
    pub epsilon_bar: f64,
    /// Support threshold on the trace.
    pub support_threshold: f64,
    /// Directions are searched within angle `cone · ε` of `e_n`.
    pub cone: f64,
    /// Coarse search resolution is `ε / divisions`.
    pub divisions: usize,
    /// Radius of the region where the input flatness is verified.
    pub outer_radius: f64,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        Self { epsilon_bar: 0.1, support_threshold: 1e-8, cone: 4.0, divisions: 8, outer_radius: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfacePointSet {
    /// Trace coordinates, chained so that neighbours are close.
    pub points: Vec<Vec<f64>>,
    pub h: f64,
}

impl InterfacePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest distance between consecutive points.
    pub fn max_gap(&self) -> f64 {
        self.points.windows(2).map(|w| dist(&w[0], &w[1])).fold(0.0, f64::max)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Points of `∂{u₁ > θ} ∩ ∂{u₂ > θ}` on the trace.
///
/// Along every trace grid line, a crossing is recorded between a node of one
/// support and the next node of the other support when only nodal nodes lie
/// between them: at the zero of the linear interpolant of `u₁ - u₂` when the
/// gap is at most two cells, and at both ends of the gap otherwise.
pub fn extract_free_boundary(u: &Configuration, support_threshold: f64) -> Result<InterfacePointSet> {
    if u.k() != 2 {
        return Err(Error::pre(format!("free boundary extraction needs two components, got {}", u.k())));
    }
    let g = u.grid();
    let n = g.n();
    let nz = g.shape()[n];
    let (u1, u2) = (u.components[0].values(), u.components[1].values());
    let label = |p: usize| -> Result<i8> {
        match (u1[p] > support_threshold, u2[p] > support_threshold) {
            (true, true) => Err(Error::pre(format!("supports overlap at {:?}", g.point(p)))),
            (true, false) => Ok(1),
            (false, true) => Ok(-1),
            _ => Ok(0),
        }
    };
    let trace = g.trace_nodes();
    let labels = trace.iter().map(|&p| label(p)).collect::<Result<Vec<i8>>>()?;
    let tix = |p: usize| p / nz;

    let mut pts: Vec<Vec<f64>> = Vec::new();
    let shape = g.shape();
    for axis in 0..n {
        let stride = g.strides()[axis];
        // line starts: trace nodes with index 0 along `axis`
        for &start in trace.iter().filter(|&&p| g.axis_index(p, axis) == 0) {
            let line: Vec<usize> = (0..shape[axis]).map(|i| start + i * stride).collect();
            let mut last: Option<usize> = None;
            for (i, &p) in line.iter().enumerate() {
                let l = labels[tix(p)];
                if l == 0 {
                    continue;
                }
                if let Some(j) = last {
                    let lj = labels[tix(line[j])];
                    if lj != l {
                        let a = g.point(line[j]);
                        let b = g.point(p);
                        let gap = i - j;
                        if gap <= 2 {
                            let fa = u1[line[j]] - u2[line[j]];
                            let fb = u1[p] - u2[p];
                            let s = fa / (fa - fb);
                            pts.push((0..n).map(|k| a[k] + s * (b[k] - a[k])).collect());
                        } else {
                            let c = g.point(line[j + 1]);
                            let e = g.point(line[i - 1]);
                            pts.push(c[..n].to_vec());
                            pts.push(e[..n].to_vec());
                        }
                    }
                }
                last = Some(i);
            }
        }
    }
    if pts.is_empty() {
        return Err(Error::EmptyInterface);
    }
    // drop near-duplicates from crossing lines
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = g.h();
    let mut uniq: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
    for p in pts {
        if !uniq.iter().rev().take(8).any(|q| dist(q, &p) < 0.25 * h) {
            uniq.push(p);
        }
    }
    Ok(InterfacePointSet { points: chain(uniq), h })
}

/// Greedy nearest-neighbour ordering from the lexicographically first point.
fn chain(mut pts: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(pts.len());
    if pts.is_empty() {
        return out;
    }
    let mut cur = pts.remove(0);
    while !pts.is_empty() {
        let (j, _) = pts
            .iter()
            .enumerate()
            .map(|(j, q)| (j, dist(&cur, q)))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        let next = pts.remove(j);
        out.push(std::mem::replace(&mut cur, next));
    }
    out.push(cur);
    out
}

/// Ball in the trace-centred coordinates: `|X - (x0, 0)| ≤ radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Region {
    pub fn ball(center: &[f64], radius: f64) -> Self {
        Self { center: center.to_vec(), radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub epsilon: f64,
    pub direction: Vec<f64>,
    pub amplitude: f64,
    pub scale: f64,
    pub center: Vec<f64>,
    /// `epsilon / scale`, the width after rescaling the region to unit size.
    pub rescaled: f64,
    pub nodes: usize,
}

/// The shift `s` with `U(s, z) = y`; `-∞` when no finite shift reaches `y = 0`
/// off the trace.
fn u_inverse(y: f64, z: f64) -> f64 {
    if y > 0.0 {
        y * y - z * z / (4.0 * y * y)
    } else if z == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Smallest `ε` at one node for a component that should satisfy
/// `αU(t - ε, z) ≤ v ≤ αU(t + ε, z)`.
fn node_width(v: f64, t: f64, z: f64, alpha: f64) -> f64 {
    let y = (v / alpha).max(0.0);
    let s = u_inverse(y, z);
    if y > 0.0 {
        (s - t).abs()
    } else if z == 0.0 {
        // U(t + ε, 0) ≥ 0 always holds; U(t - ε, 0) = 0 needs ε ≥ t
        t.max(0.0)
    } else {
        f64::INFINITY
    }
}

/// Smallest `ε` such that `αU(x·ν - ε, z) ≤ u₁ ≤ αU(x·ν + ε, z)` and
/// `αŪ(x·ν + ε, z) ≤ u₂ ≤ αŪ(x·ν - ε, z)` at every node of the region,
/// with `x` measured from the region centre.
pub fn measure_flatness(u: &Configuration, nu: &[f64], alpha: f64, region: &Region) -> Result<FlatnessReport> {
    if u.k() != 2 {
        return Err(Error::pre(format!("flatness needs two components, got {}", u.k())));
    }
    let nodes = region_nodes(u, region)?;
    let (eps, count) = width_on(u, &nodes, nu, alpha, &region.center)?;
    if !eps.is_finite() || eps > 2.0 * region.radius {
        return Err(Error::NoFiniteFlatness { limit: 2.0 * region.radius });
    }
    Ok(FlatnessReport {
        epsilon: eps,
        direction: nu.to_vec(),
        amplitude: alpha,
        scale: region.radius,
        center: region.center.clone(),
        rescaled: eps / region.radius,
        nodes: count,
    })
}

fn region_nodes(u: &Configuration, region: &Region) -> Result<Vec<usize>> {
    let g = u.grid();
    let n = g.n();
    if region.center.len() != n {
        return Err(Error::param(format!("region centre needs {n} trace coordinates")));
    }
    if !(region.radius > 0.0) {
        return Err(Error::param("region radius must be positive"));
    }
    let mut c = region.center.clone();
    c.push(0.0);
    if !g.ball_inside(&c, region.radius) {
        return Err(Error::pre(format!("region of radius {} at {:?} leaves the box", region.radius, region.center)));
    }
    let mut p = vec![0.0; n + 1];
    let mut out = Vec::new();
    for idx in 0..g.len() {
        g.point_into(idx, &mut p);
        if dist(&p, &c) <= region.radius + 1e-12 {
            out.push(idx);
        }
    }
    Ok(out)
}

fn width_on(u: &Configuration, nodes: &[usize], nu: &[f64], alpha: f64, center: &[f64]) -> Result<(f64, usize)> {
    let g = u.grid();
    let n = g.n();
    if nu.len() != n {
        return Err(Error::param(format!("direction needs {n} components")));
    }
    let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::param("direction must be a unit vector"));
    }
    if !(alpha > 0.0) {
        return Err(Error::param("amplitude must be positive"));
    }
    let (u1, u2) = (u.components[0].values(), u.components[1].values());
    let eps = nodes
        .par_iter()
        .with_min_len(512)
        .map(|&idx| {
            let mut p = [0.0; 4];
            g.point_into(idx, &mut p[..n + 1]);
            let t: f64 = (0..n).map(|k| (p[k] - center[k]) * nu[k]).sum();
            let z = p[n];
            node_width(u1[idx], t, z, alpha).max(node_width(u2[idx], -t, z, alpha))
        })
        .reduce(|| 0.0, f64::max);
    Ok((eps, nodes.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub epsilon: f64,
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    /// `[a_m, b_m]` for the variation of `u₁` against `U`.
    pub envelope_1: Vec<(f64, f64)>,
    /// `[b̄_m, ā_m]` for the variation of `u₂` against `Ū`.
    pub envelope_2: Vec<(f64, f64)>,
    /// `max(b_m - a_m, ā_m - b̄_m)`.
    pub osc: Vec<f64>,
    /// Geometric decay factor per dyadic step, from a log-linear fit.
    pub decay: f64,
    /// Scales dropped because the admissibility condition failed.
    pub stopped_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillationConfig {
    pub scales: usize,
    /// Lattice spacing of the evaluation points.
    pub step: f64,
    pub epsilon_bar: f64,
    pub variation: VariationConfig,
}

impl Default for OscillationConfig {
    fn default() -> Self {
        Self { scales: 4, step: 1.0 / 32.0, epsilon_bar: 0.1, variation: VariationConfig::default() }
    }
}

/// Envelopes of the ε-domain variations of `(u₁, u₂)` over the balls
/// `B_{2^{-m}(1 - ε)}(x0)`, `x0 ∈ L`, for `m = 0, 1, …`.
///
/// Scale `m` is admissible while `2ε · osc_m / 2^{-m} ≤ ε̄`; the first
/// inadmissible scale ends the sequence.
pub fn harnack_oscillation<S: Sampler + ?Sized>(
    u: [&S; 2],
    n: usize,
    epsilon: f64,
    center: &[f64],
    cfg: &OscillationConfig,
) -> Result<OscillationReport> {
    if center.len() != n || center[n - 1] != 0.0 {
        return Err(Error::pre("oscillation centre must lie on L"));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::param(format!("epsilon = {epsilon} outside (0, 1/2)")));
    }
    let mut report = OscillationReport {
        epsilon,
        center: center.to_vec(),
        radii: Vec::new(),
        envelope_1: Vec::new(),
        envelope_2: Vec::new(),
        osc: Vec::new(),
        decay: f64::NAN,
        stopped_at: None,
    };
    for m in 0..cfg.scales {
        let scale = 0.5f64.powi(m as i32);
        let radius = scale * (1.0 - epsilon);
        if radius < 2.0 * cfg.step {
            break;
        }
        let mut env = [(0.0, 0.0); 2];
        for (c, o) in [Orientation::Plus, Orientation::Minus].into_iter().enumerate() {
            let pts: Vec<Vec<f64>> = ball_lattice(n, radius, cfg.step, o)
                .into_iter()
                .map(|mut p| {
                    for k in 0..n - 1 {
                        p[k] += center[k];
                    }
                    p
                })
                .collect();
            let field = domain_variation(u[c], &pts, epsilon, o, &cfg.variation)?;
            env[c] = field.envelope_where(|_| true).ok_or_else(|| Error::InsufficientSamples("empty ball".into()))?;
        }
        let osc = (env[0].1 - env[0].0).max(env[1].1 - env[1].0);
        if 2.0 * epsilon * osc / scale > cfg.epsilon_bar {
            report.stopped_at = Some(m);
            break;
        }
        report.radii.push(radius);
        report.envelope_1.push(env[0]);
        report.envelope_2.push(env[1]);
        report.osc.push(osc);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = report
        .osc
        .iter()
        .enumerate()
        .filter(|(_, o)| **o > 0.0)
        .map(|(m, o)| (m as f64, o.ln()))
        .unzip();
    if xs.len() >= 2 {
        report.decay = ls_slope(&xs, &ys).exp();
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub epsilon_in: f64,
    pub rho: f64,
    /// Width on `B_ρ`, in the original units.
    pub epsilon_out: f64,
    /// `epsilon_out / ρ`.
    pub epsilon_out_rescaled: f64,
    pub nu_out: Vec<f64>,
    pub alpha_out: f64,
    pub epsilon_bar: f64,
    /// The coarse optimum was not improved by the local search.
    pub refinement_stalled: bool,
}

fn direction(n: usize, angles: &[f64]) -> Vec<f64> {
    match n {
        1 => vec![1.0],
        2 => vec![angles[0].sin(), angles[0].cos()],
        _ => {
            // tilt angles towards e_1 and e_2
            let v = [angles[0].tan(), angles[1].tan(), 1.0];
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / s).collect()
        }
    }
}

/// Best `(α, ν)` for the sandwich on `B_ρ(0)` among `|α - 1| ≤ ε` and `ν`
/// within angle `cone · ε` of `e_n`.
pub fn improvement_check(u: &Configuration, epsilon: f64, rho: f64, cfg: &FlatnessConfig) -> Result<ImprovementReport> {
    let n = u.grid().n();
    if n > 3 {
        return Err(Error::Unsupported(format!("direction search for n = {n}")));
    }
    if !(epsilon > 0.0 && epsilon <= cfg.epsilon_bar) {
        return Err(Error::pre(format!("epsilon = {epsilon} outside (0, ε̄ = {}]", cfg.epsilon_bar)));
    }
    if !(rho > 0.0 && rho <= cfg.outer_radius) {
        return Err(Error::param(format!("rho = {rho} outside (0, {}]", cfg.outer_radius)));
    }
    let origin = vec![0.0; n];
    let mut en = vec![0.0; n];
    en[n - 1] = 1.0;
    let outer = measure_flatness(u, &en, 1.0, &Region::ball(&origin, cfg.outer_radius))?;
    if outer.epsilon > epsilon * (1.0 + 1e-9) + 1e-14 {
        return Err(Error::pre(format!("measured flatness {} exceeds the stated epsilon {epsilon}", outer.epsilon)));
    }
    let nodes = region_nodes(u, &Region::ball(&origin, rho))?;
    let eval = |alpha: f64, ang: &[f64]| -> f64 {
        width_on(u, &nodes, &direction(n, ang), alpha, &origin).map(|r| r.0).unwrap_or(f64::INFINITY)
    };

    let na = n.saturating_sub(1);
    let res = epsilon / cfg.divisions.max(1) as f64;
    let amax = cfg.cone * epsilon;
    let ka = (amax / res).round() as i64;
    let kalpha = (epsilon / res).round() as i64;
    let mut cands: Vec<(f64, Vec<f64>)> = Vec::new();
    let angle_grid: Vec<f64> = (-ka..=ka).map(|i| i as f64 * res).collect();
    let alphas: Vec<f64> = (-kalpha..=kalpha).map(|i| 1.0 + i as f64 * res).collect();
    let mut angle_sets: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..na {
        angle_sets = angle_sets
            .into_iter()
            .flat_map(|s| angle_grid.iter().map(move |&a| [s.clone(), vec![a]].concat()))
            .collect();
    }
    for a in &alphas {
        for s in &angle_sets {
            cands.push((*a, s.clone()));
        }
    }
    let scored: Vec<(f64, usize)> = cands.par_iter().enumerate().map(|(i, (a, s))| (eval(*a, s), i)).collect();
    // lexicographic tie-break on candidate index
    let (coarse, best_i) = scored.into_iter().fold((f64::INFINITY, usize::MAX), |b, c| if c.0 < b.0 { c } else { b });
    let identity = eval(1.0, &vec![0.0; na]);
    let (mut alpha, mut ang, mut best) = if identity <= coarse {
        (1.0, vec![0.0; na], identity)
    } else {
        (cands[best_i].0, cands[best_i].1.clone(), coarse)
    };
    let start = best;

    // coordinate-wise golden refinement inside one coarse cell
    for _ in 0..4 {
        let (a, fa) = golden_min(|x| eval(x, &ang), (alpha - res).max(1.0 - epsilon), (alpha + res).min(1.0 + epsilon), 1e-6 * res);
        if fa < best {
            alpha = a;
            best = fa;
        }
        for k in 0..na {
            let mut trial = ang.clone();
            let (x, fx) = golden_min(
                |x| {
                    trial[k] = x;
                    eval(alpha, &trial)
                },
                (ang[k] - res).max(-amax),
                (ang[k] + res).min(amax),
                1e-6 * res,
            );
            if fx < best {
                ang[k] = x;
                best = fx;
            }
        }
    }
    Ok(ImprovementReport {
        epsilon_in: epsilon,
        rho,
        epsilon_out: best,
        epsilon_out_rescaled: best / rho,
        nu_out: direction(n, &ang),
        alpha_out: alpha,
        epsilon_bar: cfg.epsilon_bar,
        refinement_stalled: best >= start,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFit {
    pub center: Vec<f64>,
    pub radius: f64,
    /// `γ(x') = c₀ + c·(x' - x₀') + ½ (x' - x₀')ᵀ Q (x' - x₀')`, stored as
    /// `[c₀, c…, Q_ij for i ≤ j]`.
    pub coefficients: Vec<f64>,
    pub sup_gradient: f64,
    /// `max |∇γ(x') - ∇γ(y')| / |x' - y'|^{1/2}` over point pairs.
    pub holder_proxy: f64,
    pub residual: f64,
    pub points: usize,
}

impl GraphFit {
    /// `Q` as a dense matrix.
    pub fn hessian(&self) -> Vec<Vec<f64>> {
        let m = self.center.len() - 1;
        let mut q = vec![vec![0.0; m]; m];
        let mut k = 1 + m;
        for i in 0..m {
            for j in i..m {
                q[i][j] = self.coefficients[k];
                q[j][i] = self.coefficients[k];
                k += 1;
            }
        }
        q
    }
}

/// Quadratic least-squares graph `x_n = γ(x')` through the interface points
/// within `radius` of `center`.
pub fn fit_interface_graph(points: &InterfacePointSet, center: &[f64], radius: f64) -> Result<GraphFit> {
    let n = center.len();
    if n < 2 {
        return Err(Error::Unsupported("graph fits need n ≥ 2".into()));
    }
    let m = n - 1;
    let win: Vec<&Vec<f64>> = points
        .points
        .iter()
        .filter(|p| p.len() == n && dist(p, center) <= radius + 1e-12)
        .collect();
    let nq = m * (m + 1) / 2;
    let cols = 1 + m + nq;
    if win.len() < cols + 2 {
        return Err(Error::InsufficientSamples(format!("{} interface points in the window", win.len())));
    }
    // one crossing per x'-column
    let h = points.h;
    let mut cols_seen: Vec<(Vec<i64>, f64, f64)> = Vec::new();
    for p in &win {
        let key: Vec<i64> = (0..m).map(|k| ((p[k] - center[k]) / h).round() as i64).collect();
        match cols_seen.iter_mut().find(|c| c.0 == key) {
            Some(c) => {
                c.1 = c.1.min(p[m]);
                c.2 = c.2.max(p[m]);
            }
            None => cols_seen.push((key, p[m], p[m])),
        }
    }
    if let Some(c) = cols_seen.iter().find(|c| c.2 - c.1 > 2.0 * h) {
        return Err(Error::NotGraphable(format!("column {:?} spans {:.3} in x_n", c.0, c.2 - c.1)));
    }
    let row = |p: &[f64]| -> Vec<f64> {
        let s: Vec<f64> = (0..m).map(|k| p[k] - center[k]).collect();
        let mut r = vec![1.0];
        r.extend(&s);
        for i in 0..m {
            for j in i..m {
                r.push(if i == j { 0.5 * s[i] * s[i] } else { s[i] * s[j] });
            }
        }
        r
    };
    let a = DMatrix::from_fn(win.len(), cols, |i, j| row(win[i])[j]);
    let y = DVector::from_fn(win.len(), |i, _| win[i][m] - center[m]);
    let coef = a.clone().svd(true, true).solve(&y, 1e-12).map_err(|e| Error::NotGraphable(e.to_string()))?;
    let residual = ((&a * &coef - &y).norm_squared() / win.len() as f64).sqrt();
    let mut coefficients: Vec<f64> = coef.iter().cloned().collect();
    coefficients[0] += center[m];
    let fit = GraphFit {
        center: center.to_vec(),
        radius,
        coefficients,
        sup_gradient: 0.0,
        holder_proxy: 0.0,
        residual,
        points: win.len(),
    };
    let q = fit.hessian();
    let grad = |p: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| fit.coefficients[1 + i] + (0..m).map(|j| q[i][j] * (p[j] - center[j])).sum::<f64>())
            .collect()
    };
    let grads: Vec<Vec<f64>> = win.iter().map(|p| grad(p)).collect();
    let sup_gradient = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let stride = (win.len() / 512).max(1);
    let mut holder: f64 = 0.0;
    for i in (0..win.len()).step_by(stride) {
        for j in (i + 1..win.len()).step_by(stride) {
            let dx = dist(&win[i][..m], &win[j][..m]);
            if dx > 0.0 {
                holder = holder.max(dist(&grads[i], &grads[j]) / dx.sqrt());
            }
        }
    }
    Ok(GraphFit { sup_gradient, holder_proxy: holder, ..fit })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::{ExtensionGrid, Mode};
    use crate::profiles::{eval_subsolution, half_plane, SubsolutionParams};

    fn grid(h: f64) -> Arc<ExtensionGrid> {
        Arc::new(ExtensionGrid::cube(2, 1.0, 1.0, h).unwrap())
    }

    fn pair(g: Arc<ExtensionGrid>, alpha: f64, angle: f64, shift: f64) -> Configuration {
        let (s, c) = angle.sin_cos();
        let f1 = move |x: &[f64]| alpha * half_plane(s * x[0] + c * x[1] + shift, x[2]);
        let f2 = move |x: &[f64]| alpha * half_plane(-(s * x[0] + c * x[1] + shift), x[2]);
        let fs: [&(dyn Fn(&[f64]) -> f64 + Sync); 2] = [&f1, &f2];
        Configuration::from_fns(g, &fs, Mode::Segregated)
    }

    #[test]
    fn interface_of_the_half_plane_pair() {
        let h = 1.0 / 16.0;
        let fb = extract_free_boundary(&pair(grid(h), 1.0, 0.0, 0.0), 1e-8).unwrap();
        assert!(fb.len() >= 32);
        assert!(fb.points.iter().all(|p| p[1].abs() <= h));
        assert!(fb.max_gap() <= 2.0 * h, "{}", fb.max_gap());
        let fb = extract_free_boundary(&pair(grid(h), 1.0, 0.0, -0.3), 1e-8).unwrap();
        assert!(fb.points.iter().all(|p| (p[1] - 0.3).abs() <= h));
    }

    #[test]
    fn interface_of_the_subsolution_is_a_circle() {
        let h = 1.0 / 32.0;
        let big_r = 10.0;
        let params = SubsolutionParams::new(big_r, 0.0, 2).unwrap();
        let f1 = move |x: &[f64]| eval_subsolution(&params, 1, x);
        let f2 = move |x: &[f64]| eval_subsolution(&params, 2, x);
        let fs: [&(dyn Fn(&[f64]) -> f64 + Sync); 2] = [&f1, &f2];
        let u = Configuration::from_fns(grid(h), &fs, Mode::Segregated);
        let fb = extract_free_boundary(&u, 1e-8).unwrap();
        for p in &fb.points {
            let rho = p[0].hypot(p[1] - big_r);
            assert!((rho - big_r).abs() <= h, "{p:?}");
        }
        let fit = fit_interface_graph(&fb, &[0.0, 0.0], 0.9).unwrap();
        let curv = fit.coefficients[2];
        assert!((curv * big_r - 1.0).abs() < 0.2, "{curv}");
    }

    #[test]
    fn flat_interface_has_a_flat_graph() {
        let fb = extract_free_boundary(&pair(grid(1.0 / 16.0), 1.0, 0.0, 0.0), 1e-8).unwrap();
        let fit = fit_interface_graph(&fb, &[0.0, 0.0], 0.8).unwrap();
        assert!(fit.coefficients.iter().all(|c| c.abs() < 1e-12), "{:?}", fit.coefficients);
        assert!(fit.holder_proxy < 1e-10);
    }

    #[test]
    fn vertical_interface_is_not_a_graph() {
        let fb = extract_free_boundary(&pair(grid(1.0 / 16.0), 1.0, std::f64::consts::FRAC_PI_2, 0.0), 1e-8).unwrap();
        assert!(matches!(fit_interface_graph(&fb, &[0.0, 0.0], 0.8), Err(Error::NotGraphable(_))));
    }

    #[test]
    fn sandwich_widths() {
        let g = grid(1.0 / 16.0);
        let en = [0.0, 1.0];
        let r = Region::ball(&[0.0, 0.0], 1.0);
        let e = measure_flatness(&pair(g.clone(), 1.0, 0.0, 0.0), &en, 1.0, &r).unwrap();
        assert!(e.epsilon < 1e-12);
        for tau in [0.02, 0.05, -0.1] {
            let e = measure_flatness(&pair(g.clone(), 1.0, 0.0, tau), &en, 1.0, &r).unwrap();
            assert!((e.epsilon - tau.abs()).abs() <= 1.0 / 16.0, "{tau} {}", e.epsilon);
        }
        // larger regions never give smaller widths
        let u = pair(g.clone(), 1.05, 0.05, 0.01);
        let mut last = 0.0;
        for rad in [0.25, 0.5, 0.75, 1.0] {
            let e = measure_flatness(&u, &en, 1.0, &Region::ball(&[0.0, 0.0], rad)).unwrap().epsilon;
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn zero_field_has_no_finite_width() {
        let g = grid(0.25);
        let u = Configuration::new(vec![crate::grid::ScalarField::zeros(g.clone()); 2], Mode::Segregated).unwrap();
        let r = measure_flatness(&u, &[0.0, 1.0], 1.0, &Region::ball(&[0.0, 0.0], 1.0));
        assert!(matches!(r, Err(Error::NoFiniteFlatness { .. })));
    }

    #[test]
    fn oscillation_of_exact_pairs() {
        let u1 = |x: &[f64]| half_plane(x[1], x[2]);
        let u2 = |x: &[f64]| half_plane(-x[1], x[2]);
        let cfg = OscillationConfig { scales: 4, step: 1.0 / 16.0, ..Default::default() };
        let rep = harnack_oscillation::<dyn Sampler>([&u1, &u2], 2, 0.05, &[0.0, 0.0], &cfg).unwrap();
        assert!(rep.osc.len() >= 3);
        assert!(rep.osc.iter().all(|o| *o < 1e-8), "{:?}", rep.osc);
    }

    #[test]
    fn oscillation_of_tilted_pairs_halves() {
        let w = 0.01f64;
        let (s, c) = w.sin_cos();
        let u1 = move |x: &[f64]| half_plane(s * x[0] + c * x[1], x[2]);
        let u2 = move |x: &[f64]| half_plane(-(s * x[0] + c * x[1]), x[2]);
        let cfg = OscillationConfig { scales: 4, step: 1.0 / 64.0, ..Default::default() };
        let rep = harnack_oscillation::<dyn Sampler>([&u1, &u2], 2, 0.05, &[0.0, 0.0], &cfg).unwrap();
        assert!(rep.osc.len() >= 3, "{rep:?}");
        for w in rep.osc.windows(2).zip(rep.radii.windows(2)) {
            let (o, r) = w;
            let ratio = o[1] / o[0];
            assert!((r[1] / r[0] - 0.5).abs() < 1e-12);
            assert!((ratio / 0.5 - 1.0).abs() < 0.1, "{ratio} {rep:?}");
        }
        for e in rep.envelope_1.windows(2) {
            assert!(e[1].0 >= e[0].0 && e[1].1 <= e[0].1);
        }
    }

    #[test]
    fn improvement_of_exact_pairs() {
        let h = 1.0 / 32.0;
        let cfg = FlatnessConfig::default();
        let rep = improvement_check(&pair(grid(h), 1.0, 0.0, 0.0), 0.05, 0.25, &cfg).unwrap();
        assert!(rep.epsilon_out <= h);
        let u = pair(grid(h), 1.02, 0.03, 0.0);
        let e0 = measure_flatness(&u, &[0.0, 1.0], 1.0, &Region::ball(&[0.0, 0.0], 1.0)).unwrap().epsilon;
        let rep = improvement_check(&u, e0, 0.25, &cfg).unwrap();
        assert!(rep.epsilon_out <= h, "{rep:?}");
        assert!(rep.epsilon_out <= e0);
        assert!((rep.alpha_out - 1.02).abs() < 0.01 && (rep.nu_out[0] - 0.03f64.sin()).abs() < 0.01, "{rep:?}");
    }

    #[test]
    fn improvement_requires_stated_flatness() {
        let u = pair(grid(1.0 / 16.0), 1.0, 0.0, 0.04);
        let cfg = FlatnessConfig::default();
        assert!(improvement_check(&u, 0.01, 0.25, &cfg).unwrap_err().is_precondition());
        assert!(improvement_check(&u, 0.5, 0.25, &cfg).unwrap_err().is_precondition());
    }
}
