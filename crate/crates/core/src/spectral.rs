//! First eigenvalue of the Laplace–Beltrami operator on the upper hemisphere
//! of `S^2`, even across the equator and vanishing on the part of the
//! equator outside a set of free arcs, and the characteristic exponent
//! `γ = √(((n-1)/2)² + λ₁) - (n-1)/2`.
//!
//! Cell-centred finite volumes on a latitude-longitude grid: rings of
//! colatitude `ϑ ∈ [0, π/2]` and sectors of azimuth `φ ∈ [0, 2π)`. Equator
//! faces carry a Dirichlet coefficient proportional to the fraction of the
//! face outside the free arcs.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapProblem {
    /// Trace dimension; the sphere is `S^n`.
    pub n: usize,
    /// Azimuth intervals `(start, end)` of the equator where the
    /// eigenfunction is free.
    pub free_arcs: Vec<(f64, f64)>,
    pub polar_cells: usize,
    pub azimuth_cells: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_tolerance() -> f64 {
    1e-12
}

fn default_max_iterations() -> usize {
    500
}

impl CapProblem {
    /// The equatorial cap `{|φ| < opening}`.
    pub fn cap(opening: f64, polar_cells: usize) -> Result<Self> {
        if !(opening > 0.0 && opening < PI) {
            return Err(Error::param(format!("opening {opening} outside (0, π)")));
        }
        Self::with_arcs(vec![(-opening, opening)], polar_cells)
    }

    pub fn with_arcs(free_arcs: Vec<(f64, f64)>, polar_cells: usize) -> Result<Self> {
        let p = Self {
            n: 2,
            free_arcs,
            polar_cells,
            azimuth_cells: 4 * polar_cells,
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 2 {
            return Err(Error::Unsupported(format!("cap eigenvalues on S^{} (only S^2)", self.n)));
        }
        if self.polar_cells < 4 || self.azimuth_cells < 8 {
            return Err(Error::param("angular grid too coarse"));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::param("tolerance and max_iterations must be positive"));
        }
        for &(a, b) in &self.free_arcs {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::param(format!("free arc ({a}, {b}) is empty")));
            }
        }
        let free = self.free_measure();
        if !(free < TAU - 1e-12) {
            return Err(Error::param("free arcs cover the whole equator"));
        }
        Ok(())
    }

    /// Half the total measure of the free arcs; the opening for a single cap.
    pub fn opening(&self) -> f64 {
        0.5 * self.free_measure()
    }

    fn free_measure(&self) -> f64 {
        let k = 4096;
        let d = TAU / k as f64;
        (0..k).map(|j| self.free_overlap(j as f64 * d, (j + 1) as f64 * d)).sum()
    }

    /// Length of `[a, b] ⊂ [0, 2π]` covered by the free arcs.
    fn free_overlap(&self, a: f64, b: f64) -> f64 {
        let mut covered: f64 = 0.0;
        for &(s, e) in &self.free_arcs {
            let s0 = s.rem_euclid(TAU);
            let e0 = s0 + (e - s);
            for k in -1..=1 {
                let off = k as f64 * TAU;
                let lo = a.max(s0 + off);
                let hi = b.min(e0 + off);
                if hi > lo {
                    covered += hi - lo;
                }
            }
        }
        covered.min(b - a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub opening: f64,
    pub lambda1: f64,
    pub gamma: f64,
    pub iterations: usize,
    /// `‖Au - λMu‖_{M⁻¹} / (λ‖u‖_M)`.
    pub residual: f64,
}

/// `√(((n-1)/2)² + λ) - (n-1)/2`.
pub fn char_exponent(lambda1: f64, n: usize) -> Result<f64> {
    if !(lambda1 >= 0.0) || !lambda1.is_finite() {
        return Err(Error::param(format!("lambda1 = {lambda1} must be nonnegative")));
    }
    if n == 0 {
        return Err(Error::param("n must be positive"));
    }
    let a = 0.5 * (n as f64 - 1.0);
    Ok((a * a + lambda1).sqrt() - a)
}

/// Cell values of an eigenfunction on the upper hemisphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereField {
    polar: usize,
    azimuth: usize,
    values: Vec<f64>,
    free_arcs: Vec<(f64, f64)>,
}

impl SphereField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether azimuth `phi` lies inside an open free arc.
    pub fn is_free(&self, phi: f64) -> bool {
        self.free_arcs.iter().any(|&(a, b)| {
            let d = (phi - a).rem_euclid(TAU);
            d > 0.0 && d < b - a
        })
    }

    pub fn pole_value(&self) -> f64 {
        let k = self.azimuth;
        self.values[..k].iter().sum::<f64>() / k as f64
    }

    /// Bilinear interpolation in `(ϑ, φ)`; `dir` need not be normalized and
    /// its last coordinate is reflected to the upper hemisphere.
    pub fn eval(&self, dir: &[f64; 3]) -> f64 {
        let r = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if r == 0.0 {
            return self.pole_value();
        }
        let theta = (dir[2].abs() / r).clamp(-1.0, 1.0).acos();
        let phi = dir[1].atan2(dir[0]).rem_euclid(TAU);
        let (m, k) = (self.polar, self.azimuth);
        let dt = FRAC_PI_2 / m as f64;
        let dp = TAU / k as f64;
        let q = phi / dp - 0.5;
        let j0 = q.floor();
        let s = q - j0;
        let j0 = (j0 as i64).rem_euclid(k as i64) as usize;
        let j1 = (j0 + 1) % k;
        let ring = |i: usize| (1.0 - s) * self.values[i * k + j0] + s * self.values[i * k + j1];
        let p = theta / dt - 0.5;
        if p <= 0.0 {
            let w = theta / (0.5 * dt);
            return (1.0 - w) * self.pole_value() + w * ring(0);
        }
        if p >= (m - 1) as f64 {
            let w = ((theta - (m as f64 - 0.5) * dt) / (0.5 * dt)).clamp(0.0, 1.0);
            let inner = ring(m - 1);
            let edge = if self.is_free(phi) { inner } else { 0.0 };
            return (1.0 - w) * inner + w * edge;
        }
        let i0 = p.floor() as usize;
        let t = p - i0 as f64;
        (1.0 - t) * ring(i0) + t * ring(i0 + 1)
    }

    /// `|x|^γ φ(x/|x|)` for `x ∈ R^3`, rotated by `angle` about the
    /// vertical axis before evaluation.
    pub fn homogeneous(&self, gamma: f64, angle: f64, x: &[f64]) -> f64 {
        let (c, s) = (angle.cos(), angle.sin());
        let d = [c * x[0] + s * x[1], -s * x[0] + c * x[1], x[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r == 0.0 {
            return 0.0;
        }
        r.powf(gamma) * self.eval(&d)
    }
}

/// Symmetric positive definite band matrix, lower band stored row-wise.
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.bw);
        self.data[i * (self.bw + 1) + (i - j)] += v;
    }

    fn mul(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            y[i] += self.at(i, i) * x[i];
            for j in i.saturating_sub(self.bw)..i {
                let a = self.at(i, j);
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
        }
    }

    fn cholesky(&self) -> Result<Band> {
        let (n, bw) = (self.n, self.bw);
        let mut l = Band::new(n, bw);
        let w = bw + 1;
        for i in 0..n {
            let m0 = i.saturating_sub(bw);
            for j in m0..=i {
                let mut s = self.at(i, j);
                let lo = m0.max(j.saturating_sub(bw));
                let (ri, rj) = (i * w, j * w);
                for m in lo..j {
                    s -= l.data[ri + (i - m)] * l.data[rj + (j - m)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NonConvergence {
                            what: "sphere stiffness factorization".into(),
                            iterations: i,
                            last_change: s,
                        });
                    }
                    l.data[ri] = s.sqrt();
                } else {
                    l.data[ri + (i - j)] = s / l.data[rj];
                }
            }
        }
        Ok(l)
    }

    fn solve_factored(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for j in i.saturating_sub(self.bw)..i {
                s -= self.data[i * w + (i - j)] * b[j];
            }
            b[i] = s / self.data[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= self.data[k * w + (k - i)] * b[k];
            }
            b[i] = s / self.data[i * w];
        }
    }
}

struct Discretization {
    stiffness: Band,
    mass: Vec<f64>,
}

fn assemble(p: &CapProblem) -> Discretization {
    let (m, k) = (p.polar_cells, p.azimuth_cells);
    let dt = FRAC_PI_2 / m as f64;
    let dp = TAU / k as f64;
    let mut a = Band::new(m * k, k);
    let mut mass = vec![0.0; m * k];
    let free: Vec<f64> = (0..k).map(|j| p.free_overlap(j as f64 * dp, (j + 1) as f64 * dp) / dp).collect();
    for i in 0..m {
        let (t0, t1) = (i as f64 * dt, (i + 1) as f64 * dt);
        let tc = 0.5 * (t0 + t1);
        let area = (t0.cos() - t1.cos()) * dp;
        let c_phi = dt / (tc.sin() * dp);
        let c_theta = t1.sin() * dp / dt;
        for j in 0..k {
            let idx = i * k + j;
            mass[idx] = area;
            let right = i * k + (j + 1) % k;
            a.add(idx, idx, c_phi);
            a.add(right, right, c_phi);
            a.add(idx, right, -c_phi);
            if i + 1 < m {
                let up = idx + k;
                a.add(idx, idx, c_theta);
                a.add(up, up, c_theta);
                a.add(idx, up, -c_theta);
            } else {
                a.add(idx, idx, (1.0 - free[j]) * dp / (0.5 * dt));
            }
        }
    }
    Discretization { stiffness: a, mass }
}

/// Inverse iteration for the smallest eigenpair of `A u = λ M u`.
pub fn first_eigenfunction(problem: &CapProblem) -> Result<(EigenReport, SphereField)> {
    problem.validate()?;
    let disc = assemble(problem);
    let l = disc.stiffness.cholesky()?;
    let nn = disc.mass.len();
    let mut u = vec![1.0; nn];
    let mut au = vec![0.0; nn];
    let m_norm = |v: &[f64]| v.iter().zip(&disc.mass).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
    let mut lambda = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < problem.max_iterations {
        iterations += 1;
        let mut y: Vec<f64> = u.iter().zip(&disc.mass).map(|(a, m)| a * m).collect();
        l.solve_factored(&mut y);
        let nrm = m_norm(&y);
        u = y.into_iter().map(|v| v / nrm).collect();
        disc.stiffness.mul(&u, &mut au);
        let next: f64 = u.iter().zip(&au).map(|(a, b)| a * b).sum();
        let change = (next - lambda).abs();
        lambda = next;
        if change <= problem.tolerance * lambda.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { what: "inverse iteration".into(), iterations, last_change: lambda });
    }
    let res: f64 = (0..nn)
        .map(|i| {
            let r = au[i] - lambda * disc.mass[i] * u[i];
            r * r / disc.mass[i]
        })
        .sum::<f64>()
        .sqrt();
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let report = EigenReport {
        opening: problem.opening(),
        lambda1: lambda,
        gamma: char_exponent(lambda, problem.n)?,
        iterations,
        residual: res / lambda,
    };
    let field = SphereField { polar: problem.polar_cells, azimuth: problem.azimuth_cells, values: u, free_arcs: problem.free_arcs.clone() };
    Ok((report, field))
}

pub fn lambda1_cap(problem: &CapProblem) -> Result<EigenReport> {
    first_eigenfunction(problem).map(|(r, _)| r)
}

/// `λ₁` over a list of cap openings, problems solved in parallel.
pub fn sweep_openings(openings: &[f64], polar_cells: usize) -> Result<Vec<EigenReport>> {
    use rayon::prelude::*;
    openings.par_iter().map(|&o| lambda1_cap(&CapProblem::cap(o, polar_cells)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponent_examples() {
        assert_eq!(char_exponent(0.0, 2).unwrap(), 0.0);
        assert_abs_diff_eq!(char_exponent(0.75, 2).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(char_exponent(2.0, 2).unwrap(), 1.0, epsilon = 1e-15);
        assert!(char_exponent(-0.1, 2).is_err());
    }

    #[test]
    fn exponent_round_trip() {
        for n in 1..=4 {
            for k in 1..=20 {
                let g = 0.1 * k as f64;
                let lam = g * (g + n as f64 - 1.0);
                assert_abs_diff_eq!(char_exponent(lam, n).unwrap(), g, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn band_cholesky_solves() {
        let n = 7;
        let mut a = Band::new(n, 2);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i >= 1 {
                a.add(i, i - 1, -1.0);
            }
            if i >= 2 {
                a.add(i, i - 2, 0.5);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        a.mul(&x, &mut b);
        a.cholesky().unwrap().solve_factored(&mut b);
        for (p, q) in b.iter().zip(&x) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-13);
        }
    }

    #[test]
    fn free_overlap_wraps() {
        let p = CapProblem::cap(FRAC_PI_2, 8).unwrap();
        assert_abs_diff_eq!(p.opening(), FRAC_PI_2, epsilon = 1e-9);
        assert_abs_diff_eq!(p.free_overlap(TAU - 0.1, TAU), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(p.free_overlap(PI - 0.1, PI), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(CapProblem::cap(0.0, 16).is_err());
        assert!(CapProblem::cap(PI, 16).is_err());
        assert!(CapProblem::with_arcs(vec![(0.0, TAU)], 16).is_err());
        let mut p = CapProblem::cap(1.0, 16).unwrap();
        p.n = 3;
        assert!(matches!(lambda1_cap(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn half_cap_exponent() {
        let r = lambda1_cap(&CapProblem::cap(FRAC_PI_2, 32).unwrap()).unwrap();
        assert!((r.lambda1 - 0.75).abs() < 0.03, "{r:?}");
        assert!((r.gamma - 0.5).abs() < 0.02, "{r:?}");
        assert!(r.residual < 1e-6);
    }

    #[test]
    fn eigenfunction_vanishes_off_the_cap() {
        let (_, f) = first_eigenfunction(&CapProblem::cap(FRAC_PI_2, 16).unwrap()).unwrap();
        assert_eq!(f.eval(&[-1.0, 0.2, 0.0]), 0.0);
        assert_eq!(f.eval(&[0.0, 1.0, 0.0]), 0.0);
        assert!(f.eval(&[1.0, 0.0, 0.0]) > 0.0);
        assert!(f.eval(&[0.0, 0.0, 1.0]) > 0.0);
        assert!((f.eval(&[0.0, 0.0, 1.0]) - f.eval(&[0.0, 0.0, -2.0])).abs() < 1e-15);
        assert!(f.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn nearly_free_equator_has_small_eigenvalue() {
        let r = lambda1_cap(&CapProblem::cap(PI - 0.02, 32).unwrap()).unwrap();
        assert!(r.lambda1 < 0.2, "{r:?}");
    }
}
