//! Closed-form half-plane profiles, the radial subsolution family and
//! numerical ε-domain variations.
//!
//! Points of the extension space are slices `[x_1, .., x_n, z]`; the
//! distinguished trace direction `e_n` is the last trace coordinate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Something that can be evaluated at a point of the extension space.
pub trait Sampler: Sync {
    fn sample(&self, x: &[f64]) -> Result<f64>;
}

impl<F> Sampler for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn sample(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// Selects `U` (`Plus`) or its mirror image `Ū(t, z) = U(-t, z)` (`Minus`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Plus,
    Minus,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Plus => 1.0,
            Orientation::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Orientation::Plus => Orientation::Minus,
            Orientation::Minus => Orientation::Plus,
        }
    }
}

/// `U(t,z) = r^{1/2} cos(θ/2)` with `θ = atan2(z, t) ∈ [-π, π]`.
///
/// Evaluated through `U² = (r + t)/2`, which is the same branch and avoids the
/// trigonometric round trip; for `t < 0` the cancellation in `r + t` is
/// removed by rewriting it as `z² / (r - t)`.
#[inline]
pub fn half_plane(t: f64, z: f64) -> f64 {
    let r = t.hypot(z);
    let r_plus_t = if t >= 0.0 { r + t } else if r == 0.0 { 0.0 } else { z * z / (r - t) };
    (0.5 * r_plus_t).sqrt()
}

/// `∂_t U` and `∂_z U` for `z ≥ 0`-side limits. Requires `r > 0` and not on
/// the slit `{t < 0, z = 0}`.
#[inline]
fn half_plane_grad(t: f64, z: f64) -> Result<[f64; 2]> {
    let r = t.hypot(z);
    if r == 0.0 || (z == 0.0 && t < 0.0) {
        return Err(Error::SingularEvaluation { t, z });
    }
    let u = half_plane(t, z);
    // sin(θ/2) = sign(z) sqrt((r - t) / 2r)
    let r_minus_t = if t <= 0.0 { r - t } else { z * z / (r + t) };
    let sin_half = (0.5 * r_minus_t).sqrt();
    let signed = if z >= 0.0 { sin_half } else { -sin_half };
    let uz = signed / (2.0 * r);
    Ok([u / (2.0 * r), uz])
}

/// `∂_t U` at `(t, z)`, extended by continuity (value `0`) on the slit.
#[inline]
pub fn half_plane_dt(t: f64, z: f64) -> f64 {
    let r = t.hypot(z);
    if r == 0.0 {
        return f64::INFINITY;
    }
    half_plane(t, z) / (2.0 * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HalfPlaneProfile {
    pub orientation: Orientation,
}

impl HalfPlaneProfile {
    pub const U: HalfPlaneProfile = HalfPlaneProfile { orientation: Orientation::Plus };
    pub const U_BAR: HalfPlaneProfile = HalfPlaneProfile { orientation: Orientation::Minus };

    pub fn new(orientation: Orientation) -> Self {
        Self { orientation }
    }

    #[inline]
    pub fn eval(&self, t: f64, z: f64) -> f64 {
        half_plane(self.orientation.sign() * t, z)
    }

    /// Returns `(∂_t, ∂_z)`.
    pub fn grad(&self, t: f64, z: f64) -> Result<[f64; 2]> {
        let s = self.orientation.sign();
        let [gt, gz] = half_plane_grad(s * t, z)?;
        Ok([s * gt, gz])
    }

    /// Evaluates at a point `[x', x_n, z]`, with `t = x_n`.
    #[inline]
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        let d = x.len();
        self.eval(x[d - 2], x[d - 1])
    }
}

pub fn eval_profile(profile: HalfPlaneProfile, t: f64, z: f64) -> f64 {
    profile.eval(t, z)
}

pub fn grad_profile(profile: HalfPlaneProfile, t: f64, z: f64) -> Result<[f64; 2]> {
    profile.grad(t, z)
}

/// Radial subsolution parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionParams {
    /// Radius of curvature of the spherical front.
    pub radius: f64,
    /// Vertical translation rate.
    pub beta: f64,
    /// Trace dimension.
    pub n: usize,
}

pub const DEFAULT_MIN_RADIUS: f64 = 10.0;

impl SubsolutionParams {
    pub fn new(radius: f64, beta: f64, n: usize) -> Result<Self> {
        Self::with_min_radius(radius, beta, n, DEFAULT_MIN_RADIUS)
    }

    pub fn with_min_radius(radius: f64, beta: f64, n: usize, min_radius: f64) -> Result<Self> {
        if !(radius >= min_radius) {
            return Err(Error::param(format!("R = {radius} below R_min = {min_radius}")));
        }
        if !(beta >= 0.0) {
            return Err(Error::param(format!("beta = {beta} must be nonnegative")));
        }
        if n == 0 {
            return Err(Error::param("trace dimension must be positive"));
        }
        Ok(Self { radius, beta, n })
    }

    fn check_point(&self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.n + 1, "point must have n + 1 coordinates");
    }
}

/// `v_i^R(X) = (1 + β/R) V_R(R - ρ, z)` with `V_R(t,z) = U(t,z)((n-1)t/R + 1)`
/// and `ρ = |(x', x_n - R)|`; component 2 uses `Ū`.
pub fn eval_subsolution(params: &SubsolutionParams, component: usize, x: &[f64]) -> f64 {
    params.check_point(x);
    let n = params.n;
    let big_r = params.radius;
    let tangential: f64 = x[..n - 1].iter().map(|v| v * v).sum();
    let dn = x[n - 1] - big_r;
    let rho = (tangential + dn * dn).sqrt();
    let t = big_r - rho;
    let z = x[n];
    let base = match component {
        1 => half_plane(t, z),
        2 => half_plane(-t, z),
        _ => panic!("subsolution component must be 1 or 2"),
    };
    let factor = ((n as f64 - 1.0) * t / big_r + 1.0).max(0.0);
    (1.0 + params.beta / big_r) * base * factor
}

/// Leading-order displacement `γ_R` (component 1) or `γ̄_R` (component 2).
pub fn gamma_r(params: &SubsolutionParams, component: usize, x: &[f64]) -> f64 {
    params.check_point(x);
    let n = params.n;
    let big_r = params.radius;
    let tangential: f64 = x[..n - 1].iter().map(|v| v * v).sum();
    let xn = x[n - 1];
    let r = xn.hypot(x[n]);
    let curvature = -tangential / (2.0 * big_r);
    let lift = 2.0 * (n as f64 - 1.0) * xn * r / big_r + 2.0 * params.beta * r / big_r;
    match component {
        1 => curvature + lift,
        2 => curvature - lift,
        _ => panic!("subsolution component must be 1 or 2"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationConfig {
    /// Uniform cells of `[-1, 1]` scanned for sign changes.
    pub scan_cells: usize,
    /// Bisection tolerance on `w`.
    pub tolerance: f64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        Self { scan_cells: 64, tolerance: 1e-10 }
    }
}

/// ε-domain variation of a sampled function with respect to `U` or `Ū`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainVariationField {
    pub epsilon: f64,
    pub orientation: Orientation,
    pub points: Vec<Vec<f64>>,
    /// Sorted roots `w ∈ [-1, 1]` per point.
    pub values: Vec<Vec<f64>>,
}

impl DomainVariationField {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn multi_valued_count(&self) -> usize {
        self.values.iter().filter(|v| v.len() > 1).count()
    }

    pub fn is_single_valued(&self) -> bool {
        self.multi_valued_count() == 0
    }

    /// Lower envelope per point.
    pub fn lower(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[0]).collect()
    }

    /// Upper envelope per point.
    pub fn upper(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[v.len() - 1]).collect()
    }

    /// `(min, max)` over all stored values of the points selected by `keep`.
    pub fn envelope_where(&self, keep: impl Fn(&[f64]) -> bool) -> Option<(f64, f64)> {
        let mut out: Option<(f64, f64)> = None;
        for (p, v) in self.points.iter().zip(&self.values) {
            if !keep(p) {
                continue;
            }
            let lo = v[0];
            let hi = v[v.len() - 1];
            out = Some(match out {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
        out
    }
}

/// True when `x` lies on the half-plane where the reference profile of the
/// given orientation vanishes (`P⁻` for `U`, `P⁺` for `Ū`).
pub fn on_zero_plate(x: &[f64], orientation: Orientation) -> bool {
    let d = x.len();
    x[d - 1] == 0.0 && orientation.sign() * x[d - 2] <= 0.0
}

fn roots_at<S: Sampler + ?Sized>(
    g: &S,
    x: &[f64],
    epsilon: f64,
    orientation: Orientation,
    cfg: &VariationConfig,
) -> Result<Vec<f64>> {
    let d = x.len();
    let target = HalfPlaneProfile::new(orientation).eval_point(x);
    let mut shifted = x.to_vec();
    let mut f = |w: f64| -> Result<f64> {
        shifted[d - 2] = x[d - 2] - epsilon * w;
        Ok(target - g.sample(&shifted)?)
    };

    let cells = cfg.scan_cells.max(1);
    let step = 2.0 / cells as f64;
    let mut roots: Vec<f64> = Vec::new();
    let mut a = -1.0;
    let mut fa = f(a)?;
    for k in 0..cells {
        let b = if k + 1 == cells { 1.0 } else { -1.0 + (k + 1) as f64 * step };
        let fb = f(b)?;
        if fa == 0.0 {
            roots.push(a);
        } else if fb != 0.0 && (fa < 0.0) != (fb < 0.0) {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            while hi - lo > cfg.tolerance {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid)?;
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        if k + 1 == cells && fb == 0.0 {
            roots.push(b);
        }
        a = b;
        fa = fb;
    }
    roots.dedup_by(|p, q| (*p - *q).abs() <= 2.0 * cfg.tolerance);
    if roots.is_empty() {
        return Err(Error::NoRoot { point: x.to_vec() });
    }
    Ok(roots)
}

/// Solves `U(X) = g(X - ε w e_n)` (or with `Ū`) for every root `w ∈ [-1, 1]`
/// at each point. Points on the reference profile's zero plate are rejected.
pub fn domain_variation<S: Sampler + ?Sized>(
    g: &S,
    points: &[Vec<f64>],
    epsilon: f64,
    orientation: Orientation,
    cfg: &VariationConfig,
) -> Result<DomainVariationField> {
    if !(epsilon > 0.0) {
        return Err(Error::param(format!("epsilon = {epsilon} must be positive")));
    }
    if let Some(p) = points.iter().find(|p| on_zero_plate(p, orientation)) {
        return Err(Error::pre(format!("evaluation point {p:?} lies on the zero plate")));
    }
    let values = points
        .par_iter()
        .map(|p| roots_at(g, p, epsilon, orientation, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(DomainVariationField { epsilon, orientation, points: points.to_vec(), values })
}

/// Regular lattice of points of spacing `step` inside the ball `B_radius`
/// (upper half `z ≥ 0`), skipping the zero plate of `orientation`.
pub fn ball_lattice(n: usize, radius: f64, step: f64, orientation: Orientation) -> Vec<Vec<f64>> {
    let m = (radius / step).floor() as i64;
    let d = n + 1;
    let mut out = Vec::new();
    let mut idx = vec![-m; d];
    idx[d - 1] = 0;
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
        let r2: f64 = p.iter().map(|v| v * v).sum();
        if r2 <= radius * radius + 1e-12 && !on_zero_plate(&p, orientation) {
            out.push(p);
        }
        // odometer, last axis (z) runs over 0..=m
        let mut axis = d;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] <= m {
                break;
            }
            idx[axis] = if axis == d - 1 { 0 } else { -m };
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsolutionExpansionReport {
    pub component: usize,
    pub beta: f64,
    pub radii: Vec<f64>,
    /// `sup |ṽ_i^R - γ_R|` per radius.
    pub sup_deviation: Vec<f64>,
    /// `sup |ṽ_i^R - γ_R| · R²` per radius.
    pub scaled_deviation: Vec<f64>,
    /// Least-squares slope of `log sup` against `log R`.
    pub loglog_slope: f64,
    /// `max / min` of the scaled deviations is at most 4.
    pub bounded: bool,
}

/// Measures how fast the domain variation of the subsolution family
/// approaches `γ_R` as the front flattens.
///
/// Variations are taken with `ε = 1`, so the stored values are the
/// displacements themselves.
pub fn check_subsolution_expansion(
    component: usize,
    beta: f64,
    n: usize,
    radii: &[f64],
    points: &[Vec<f64>],
    cfg: &VariationConfig,
) -> Result<SubsolutionExpansionReport> {
    if radii.len() < 2 {
        return Err(Error::param("need at least two radii"));
    }
    let orientation = if component == 1 { Orientation::Plus } else { Orientation::Minus };
    let mut sup = Vec::with_capacity(radii.len());
    for &big_r in radii {
        let params = SubsolutionParams::new(big_r, beta, n)?;
        let g = |x: &[f64]| eval_subsolution(&params, component, x);
        let field = domain_variation(&g, points, 1.0, orientation, cfg)?;
        let dev = field
            .points
            .iter()
            .zip(&field.values)
            .flat_map(|(p, ws)| {
                let gamma = gamma_r(&params, component, p);
                ws.iter().map(move |w| (w - gamma).abs())
            })
            .fold(0.0_f64, f64::max);
        sup.push(dev);
    }
    let scaled: Vec<f64> = sup.iter().zip(radii).map(|(s, r)| s * r * r).collect();
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = sup.iter().map(|s| s.ln()).collect();
    let slope = crate::numerics::ls_slope(&xs, &ys);
    let (lo, hi) = scaled
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(a, b), &s| (a.min(s), b.max(s)));
    Ok(SubsolutionExpansionReport {
        component,
        beta,
        radii: radii.to_vec(),
        sup_deviation: sup,
        scaled_deviation: scaled,
        loglog_slope: slope,
        bounded: hi <= 4.0 * lo,
    })
}
