//! Almgren frequency `N = E/H`, its logarithmic derivative, the Pohožaev
//! balance on spheres and the doubling inequality.
//!
//! `E(r) = r^{1-n} ∫_{B_r} Σ|∇u_i|²` and `H(r) = r^{-n} ∫_{∂B_r} Σ u_i²`,
//! both over the full (reflected) space, centred on the trace.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient_energy_ball, quad_sphere, Configuration, GradientField, QuadratureConfig};
use crate::numerics::ls_line;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyConfig {
    pub quadrature: QuadratureConfig,
    /// Smallest admissible radius in units of `h`.
    pub min_radius_cells: f64,
    /// `H` below this is treated as vanishing.
    pub height_floor: f64,
    /// Values at or below this count as zero when choosing trace gradients.
    pub support_threshold: f64,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        Self { quadrature: QuadratureConfig::default(), min_radius_cells: 4.0, height_floor: 1e-14, support_threshold: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    /// Trace coordinates of the centre.
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub e: Vec<f64>,
    pub h: Vec<f64>,
    pub n: Vec<f64>,
    /// Linear extrapolation to `r = 0` from the three smallest radii.
    pub n_zero_plus: f64,
    /// `max_j max(0, N(r_j) - N(r_{j+1}))`.
    pub monotonicity_defect: f64,
}

fn full_center(u: &Configuration, x0: &[f64]) -> Result<Vec<f64>> {
    let g = u.grid();
    if x0.len() != g.n() {
        return Err(Error::param(format!("centre has {} coordinates, trace has {}", x0.len(), g.n())));
    }
    let mut c = x0.to_vec();
    c.push(0.0);
    Ok(c)
}

fn check_radius(u: &Configuration, r: f64, cfg: &FrequencyConfig) -> Result<()> {
    let min = cfg.min_radius_cells * u.grid().h();
    if !(r >= min - 1e-12) {
        return Err(Error::pre(format!("radius {r} below {} h", cfg.min_radius_cells)));
    }
    Ok(())
}

pub fn energy_e(u: &Configuration, x0: &[f64], r: f64, cfg: &FrequencyConfig) -> Result<f64> {
    check_radius(u, r, cfg)?;
    let c = full_center(u, x0)?;
    let n = u.grid().n();
    let integral = gradient_energy_ball(&u.components, &c, r, &cfg.quadrature)?;
    Ok(integral * r.powi(1 - n as i32))
}

pub fn height_h(u: &Configuration, x0: &[f64], r: f64, cfg: &FrequencyConfig) -> Result<f64> {
    check_radius(u, r, cfg)?;
    let c = full_center(u, x0)?;
    let n = u.grid().n();
    let integral = quad_sphere(u.grid(), &c, r, &cfg.quadrature, |p, _| {
        let mut s = 0.0;
        for f in &u.components {
            let v = f.interpolate(p)?;
            s += v * v;
        }
        Ok(s)
    })?;
    Ok(integral * r.powi(-(n as i32)))
}

pub fn frequency_n(u: &Configuration, x0: &[f64], radii: &[f64], cfg: &FrequencyConfig) -> Result<FrequencyReport> {
    if radii.is_empty() {
        return Err(Error::param("no radii"));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("radii must be strictly increasing"));
    }
    let pairs = radii
        .par_iter()
        .map(|&r| Ok((energy_e(u, x0, r, cfg)?, height_h(u, x0, r, cfg)?)))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (e, h): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    for (&r, &hv) in radii.iter().zip(&h) {
        if hv < cfg.height_floor {
            return Err(Error::DegenerateHeight { radius: r, value: hv });
        }
    }
    let n: Vec<f64> = e.iter().zip(&h).map(|(a, b)| a / b).collect();
    let m = n.len().min(3);
    let n_zero_plus = if m == 1 {
        n[0]
    } else {
        ls_line(&radii[..m], &n[..m]).1
    };
    let monotonicity_defect = n.windows(2).map(|w| (w[0] - w[1]).max(0.0)).fold(0.0, f64::max);
    Ok(FrequencyReport { center: x0.to_vec(), radii: radii.to_vec(), e, h, n, n_zero_plus, monotonicity_defect })
}

/// Relative defect between `d/dr log H` and `2N/r` at interior radii, with
/// the derivative taken as a centred difference in `log r`.
pub fn check_logderivative(report: &FrequencyReport) -> Result<f64> {
    let k = report.radii.len();
    if k < 3 {
        return Err(Error::param("need at least three radii"));
    }
    let mut worst: f64 = 0.0;
    for j in 1..k - 1 {
        let (r0, r1, r2) = (report.radii[j - 1], report.radii[j], report.radii[j + 1]);
        let slope = (report.h[j + 1].ln() - report.h[j - 1].ln()) / (r2.ln() - r0.ln());
        let lhs = slope / r1;
        let rhs = 2.0 * report.n[j] / r1;
        let scale = lhs.abs().max(rhs.abs());
        if scale > 1e-12 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PohozaevReport {
    pub radius: f64,
    /// `(1-n) ∫_{B_r} Σ|∇u|²`.
    pub volume_term: f64,
    /// `r ∫_{∂B_r} Σ|∇u|²`.
    pub sphere_term: f64,
    /// `2r ∫_{∂B_r} Σ|∂_ν u|²`.
    pub normal_term: f64,
    pub residual: f64,
    /// Set when the normalizing sphere term vanishes.
    pub degenerate: bool,
}

pub fn pohozaev_residual(u: &Configuration, x0: &[f64], r: f64, cfg: &FrequencyConfig) -> Result<PohozaevReport> {
    check_radius(u, r, cfg)?;
    let c = full_center(u, x0)?;
    let g = u.grid();
    let n = g.n() as f64;
    let grads: Vec<GradientField> =
        u.components.iter().map(|f| GradientField::new(f, cfg.support_threshold)).collect();
    let ball = gradient_energy_ball(&u.components, &c, r, &cfg.quadrature)?;
    let d = g.dim();
    let full = quad_sphere(g, &c, r, &cfg.quadrature, |p, _| {
        let mut s = 0.0;
        for gf in &grads {
            let gr = gf.interpolate(p)?;
            s += gr[..d].iter().map(|v| v * v).sum::<f64>();
        }
        Ok(s)
    })?;
    let normal = quad_sphere(g, &c, r, &cfg.quadrature, |p, nu| {
        let mut s = 0.0;
        for gf in &grads {
            let gr = gf.interpolate(p)?;
            let dn: f64 = (0..d).map(|k| gr[k] * nu[k]).sum();
            s += dn * dn;
        }
        Ok(s)
    })?;
    let volume_term = (1.0 - n) * ball;
    let sphere_term = r * full;
    let normal_term = 2.0 * r * normal;
    let degenerate = sphere_term.abs() < 1e-14;
    let residual = if degenerate { 0.0 } else { (volume_term + sphere_term - normal_term).abs() / sphere_term };
    Ok(PohozaevReport { radius: r, volume_term, sphere_term, normal_term, residual, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub r1: f64,
    pub r2: f64,
    /// `H(r2)`.
    pub lhs: f64,
    /// `H(r1) (r2/r1)^{2 max N}`.
    pub rhs: f64,
    /// `2 max_{[r1, r2]} N`.
    pub exponent: f64,
    /// `H(r2) / H(r1)`.
    pub ratio: f64,
}

impl DoublingReport {
    /// Inequality holds up to a relative slack.
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + slack)
    }
}

/// `max N` is taken over `samples` equally spaced radii in `[r1, r2]`.
pub fn doubling_check(
    u: &Configuration,
    x0: &[f64],
    r1: f64,
    r2: f64,
    samples: usize,
    cfg: &FrequencyConfig,
) -> Result<DoublingReport> {
    if !(r1 < r2) {
        return Err(Error::param("doubling needs r1 < r2"));
    }
    let m = samples.max(2);
    let radii: Vec<f64> = (0..m).map(|j| r1 + (r2 - r1) * j as f64 / (m - 1) as f64).collect();
    let rep = frequency_n(u, x0, &radii, cfg)?;
    let max_n = rep.n.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let h1 = rep.h[0];
    let h2 = rep.h[m - 1];
    let exponent = 2.0 * max_n;
    Ok(DoublingReport { r1, r2, lhs: h2, rhs: h1 * (r2 / r1).powf(exponent), exponent, ratio: h2 / h1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ExtensionGrid, Mode};
    use crate::profiles::half_plane;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn slice(h: f64) -> Arc<ExtensionGrid> {
        Arc::new(ExtensionGrid::new(1, &[(-1.0, 1.0)], 1.0, h).unwrap())
    }

    fn pair(g: Arc<ExtensionGrid>) -> Configuration {
        Configuration::from_fns(
            g,
            &[|x: &[f64]| half_plane(x[0], x[1]), |x: &[f64]| half_plane(-x[0], x[1])],
            Mode::Segregated,
        )
    }

    #[test]
    fn pair_energy_and_height_in_the_plane() {
        let u = pair(slice(1.0 / 64.0));
        let cfg = FrequencyConfig::default();
        for r in [0.25, 0.5] {
            let e = energy_e(&u, &[0.0], r, &cfg).unwrap();
            let h = height_h(&u, &[0.0], r, &cfg).unwrap();
            assert!((e / (PI * r) - 1.0).abs() < 0.02, "E {e}");
            assert!((h / (2.0 * PI * r) - 1.0).abs() < 0.01, "H {h}");
        }
    }

    #[test]
    fn constant_field() {
        let g = Arc::new(ExtensionGrid::cube(2, 1.0, 1.0, 1.0 / 16.0).unwrap());
        let u = Configuration::from_fns(g, &[|_: &[f64]| 2.0], Mode::Segregated);
        let cfg = FrequencyConfig::default();
        let rep = frequency_n(&u, &[0.0, 0.0], &[0.3, 0.4, 0.5], &cfg).unwrap();
        for (&e, &h) in rep.e.iter().zip(&rep.h) {
            assert_eq!(e, 0.0);
            assert!((h / (4.0 * 4.0 * PI) - 1.0).abs() < 1e-9);
        }
        assert!(rep.n.iter().all(|&v| v == 0.0));
        assert_eq!(check_logderivative(&rep).unwrap(), 0.0);
        let p = pohozaev_residual(&u, &[0.0, 0.0], 0.4, &cfg).unwrap();
        assert!(p.degenerate && p.residual == 0.0);
        let d = doubling_check(&u, &[0.0, 0.0], 0.25, 0.5, 3, &cfg).unwrap();
        assert!((d.ratio - 1.0).abs() < 1e-9 && (d.rhs / d.lhs - 1.0).abs() < 1e-9);
    }

    #[test]
    fn homogeneous_fields_have_constant_frequency() {
        let g = slice(1.0 / 64.0);
        let cfg = FrequencyConfig::default();
        for nu in [1.0, 1.5, 2.0] {
            let u = Configuration::from_fns(
                g.clone(),
                &[move |x: &[f64]| {
                    let r = x[0].hypot(x[1]);
                    r.powf(nu) * (nu * x[1].abs().atan2(x[0])).cos()
                }],
                Mode::Segregated,
            );
            let rep = frequency_n(&u, &[0.0], &[0.1, 0.2, 0.3, 0.4, 0.5], &cfg).unwrap();
            for &v in &rep.n {
                assert!((v / nu - 1.0).abs() < 0.02, "nu {nu}: {:?}", rep.n);
            }
            assert!(check_logderivative(&rep).unwrap() < 0.05);
            let d = doubling_check(&u, &[0.0], 0.2, 0.4, 5, &cfg).unwrap();
            assert!((d.ratio / 2f64.powf(2.0 * nu) - 1.0).abs() < 0.03, "{d:?}");
        }
    }

    #[test]
    fn radius_preconditions() {
        let u = pair(slice(1.0 / 16.0));
        let cfg = FrequencyConfig::default();
        assert!(energy_e(&u, &[0.0], 0.2, &cfg).unwrap_err().is_precondition());
        assert!(height_h(&u, &[0.5], 0.6, &cfg).unwrap_err().is_precondition());
    }
}
