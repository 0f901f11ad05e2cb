//! The degenerate transmission problem obtained by linearizing around the
//! half-plane pair: minimize
//! `J(g₁, g₂) = ∫ U_n² |∇g₁|² + Ū_n² |∇g₂|²` with `g₁ = g₂` on `L`, and read
//! off the boundary expansion `g_i ≈ a₀ + a'·(x' - x₀') + b_i r` near `L`.
//!
//! Edge weights are the mean of `U_n²` (resp. `Ū_n²`) over the cell centres
//! around the edge, capped at `1/h`. Nodes of `L` carry one shared unknown.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ExtensionGrid, ScalarField, MAX_DIM};
use crate::numerics::ordered_sum;
use crate::profiles::Orientation;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizedConfig {
    /// Relative energy change between checks below which the solve may stop.
    pub tolerance: f64,
    /// Largest nodal change per sweep, relative to the data scale.
    pub update_tolerance: f64,
    pub max_sweeps: usize,
    pub omega: Option<f64>,
    /// Weight cap; `None` means `1/h`.
    pub weight_cap: Option<f64>,
}

impl Default for LinearizedConfig {
    fn default() -> Self {
        Self { tolerance: 1e-12, update_tolerance: 1e-11, max_sweeps: 100_000, omega: None, weight_cap: None }
    }
}

/// `U_n²` for `Plus`, `Ū_n²` for `Minus`, at `(t, z)` with `t = x_n`.
pub fn profile_weight(orientation: Orientation, t: f64, z: f64) -> f64 {
    let t = orientation.sign() * t;
    let r = t.hypot(z);
    if r == 0.0 {
        return f64::INFINITY;
    }
    // r + t without cancellation on the far side
    let s = if t >= 0.0 { r + t } else { z * z / (r - t) };
    s / (8.0 * r * r)
}

/// `(−|x'|²/(n−1) + 2(x_n+1) r, −|x'|²/(n−1) − 2(x_n+1) r)`, `r = √(x_n² + z²)`.
pub fn explicit_minimizer(x: &[f64], n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::param("the explicit minimizer needs n ≥ 2"));
    }
    if x.len() != n + 1 {
        return Err(Error::param(format!("point has {} coordinates, expected {}", x.len(), n + 1)));
    }
    let xp: f64 = x[..n - 1].iter().map(|v| v * v).sum();
    let r = x[n - 1].hypot(x[n]);
    let q = -xp / (n - 1) as f64;
    let s = 2.0 * (x[n - 1] + 1.0) * r;
    Ok((q + s, q - s))
}

/// Dirichlet data for both components; only wall and lid nodes are read.
#[derive(Debug, Clone)]
pub struct LinearizedBoundary {
    pub h1: ScalarField,
    pub h2: ScalarField,
}

impl LinearizedBoundary {
    pub fn new(h1: ScalarField, h2: ScalarField) -> Result<Self> {
        if h1.grid() != h2.grid() {
            return Err(Error::param("boundary fields live on different grids"));
        }
        let g = h1.grid().clone();
        for idx in 0..g.len() {
            if !g.is_box_boundary(idx) {
                continue;
            }
            let (a, b) = (h1.at(idx), h2.at(idx));
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::pre(format!("non-finite boundary value at {:?}", g.point(idx))));
            }
            if a.abs() > 1.0 + 1e-12 || b.abs() > 1.0 + 1e-12 {
                return Err(Error::pre(format!("boundary data exceeds 1 in modulus at {:?}", g.point(idx))));
            }
            if g.on_l(idx) && (a - b).abs() > 1e-12 {
                return Err(Error::pre(format!("h1 ≠ h2 on L at {:?}", g.point(idx))));
            }
        }
        Ok(Self { h1, h2 })
    }

    pub fn from_fns<F1, F2>(grid: Arc<ExtensionGrid>, f1: F1, f2: F2) -> Result<Self>
    where
        F1: Fn(&[f64]) -> f64 + Sync,
        F2: Fn(&[f64]) -> f64 + Sync,
    {
        Self::new(ScalarField::from_fn(grid.clone(), f1), ScalarField::from_fn(grid, f2))
    }

    pub fn grid(&self) -> &Arc<ExtensionGrid> {
        self.h1.grid()
    }

    fn scale(&self) -> f64 {
        let g = self.grid();
        (0..g.len())
            .filter(|&i| g.is_box_boundary(i))
            .map(|i| self.h1.at(i).abs().max(self.h2.at(i).abs()))
            .fold(0.0, f64::max)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        let mix = |x: &ScalarField, y: &ScalarField| -> Result<ScalarField> {
            let v = x.values().iter().zip(y.values()).map(|(p, q)| a * p + b * q).collect();
            ScalarField::from_values(x.grid().clone(), v)
        };
        Self::new(mix(&self.h1, &other.h1)?, mix(&self.h2, &other.h2)?)
    }
}

#[derive(Debug, Clone)]
pub struct LinearizedPair {
    pub g1: ScalarField,
    pub g2: ScalarField,
    pub boundary: Option<LinearizedBoundary>,
    pub energy: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub energy_history: Vec<f64>,
    pub flags: Vec<String>,
}

impl LinearizedPair {
    /// Wraps given fields, e.g. sampled closed forms; `g₂` is overwritten by
    /// `g₁` on `L` after checking they agree.
    pub fn from_fields(g1: ScalarField, mut g2: ScalarField) -> Result<Self> {
        if g1.grid() != g2.grid() {
            return Err(Error::param("fields live on different grids"));
        }
        let g = g1.grid().clone();
        for idx in g.trace_nodes() {
            if g.on_l(idx) {
                if (g1.at(idx) - g2.at(idx)).abs() > 1e-9 {
                    return Err(Error::pre(format!("g1 ≠ g2 on L at {:?}", g.point(idx))));
                }
                g2.values_mut()[idx] = g1.at(idx);
            }
        }
        let w = Weights::new(&g, None);
        let energy = weighted_energy(&g, &w, 0, g1.values()) + weighted_energy(&g, &w, 1, g2.values());
        Ok(Self { g1, g2, boundary: None, energy, sweeps: 0, converged: true, energy_history: Vec::new(), flags: Vec::new() })
    }

    pub fn grid(&self) -> &Arc<ExtensionGrid> {
        self.g1.grid()
    }
}

/// Forward-edge weights per axis for both components.
struct Weights {
    d: usize,
    // w[c][a][idx]: edge idx → idx + e_a
    w: [Vec<Vec<f64>>; 2],
}

impl Weights {
    fn new(g: &ExtensionGrid, cap: Option<f64>) -> Self {
        let cap = cap.unwrap_or(1.0 / g.h());
        let d = g.dim();
        let mk = |o: Orientation| -> Vec<Vec<f64>> {
            (0..d)
                .map(|a| (0..g.len()).into_par_iter().map(|idx| edge_weight(g, o, cap, idx, a)).collect())
                .collect()
        };
        Self { d, w: [mk(Orientation::Plus), mk(Orientation::Minus)] }
    }

    #[inline]
    fn fwd(&self, c: usize, a: usize, idx: usize) -> f64 {
        self.w[c][a][idx]
    }
}

fn edge_weight(g: &ExtensionGrid, o: Orientation, cap: f64, idx: usize, a: usize) -> f64 {
    let d = g.dim();
    let n = g.n();
    let m = g.unravel(idx);
    let shape = g.shape();
    if m[a] + 1 >= shape[a] {
        return 0.0;
    }
    let h = g.h();
    let others: Vec<usize> = (0..d).filter(|&b| b != a).collect();
    let mut sum = 0.0;
    for mask in 0..(1usize << others.len()) {
        let mut c = [0.0; MAX_DIM];
        let mut ok = true;
        c[a] = g.coord(a, m[a]) + 0.5 * h;
        for (j, &b) in others.iter().enumerate() {
            let down = mask >> j & 1 == 1;
            if down {
                if m[b] == 0 {
                    if b == n {
                        // mirrored cell below the trace
                        c[b] = -0.5 * h;
                        continue;
                    }
                    ok = false;
                    break;
                }
                c[b] = g.coord(b, m[b] - 1) + 0.5 * h;
            } else {
                if m[b] + 1 >= shape[b] {
                    ok = false;
                    break;
                }
                c[b] = g.coord(b, m[b]) + 0.5 * h;
            }
        }
        if ok {
            sum += profile_weight(o, c[n - 1], c[n].abs()).min(cap);
        }
    }
    sum / (1usize << others.len()) as f64
}

struct Stencil<'a> {
    g: &'a ExtensionGrid,
    w: &'a Weights,
    nz: usize,
}

impl Stencil<'_> {
    /// `(Σ w_e g_nb, Σ w_e)` over the reflected stencil of component `c`.
    #[inline]
    fn gather(&self, c: usize, v: &[f64], p: usize) -> (f64, f64) {
        let st = self.g.strides();
        let (mut num, mut den) = (0.0, 0.0);
        for a in 0..self.w.d {
            let s = st[a];
            let wf = self.w.fwd(c, a, p);
            if wf > 0.0 {
                num += wf * v[p + s];
                den += wf;
            }
            if a == self.w.d - 1 && p % self.nz == 0 {
                num += wf * v[p + s];
                den += wf;
            } else if self.g.axis_index(p, a) > 0 {
                let wb = self.w.fwd(c, a, p - s);
                num += wb * v[p - s];
                den += wb;
            }
        }
        (num, den)
    }
}

fn weighted_energy(g: &ExtensionGrid, w: &Weights, c: usize, v: &[f64]) -> f64 {
    let d = g.dim();
    let nz = g.shape()[g.n()];
    let st = g.strides();
    let partial: Vec<f64> = (0..g.len())
        .into_par_iter()
        .chunks(CHUNK)
        .map(|chunk| {
            let mut acc = 0.0;
            for p in chunk {
                let trace = p % nz == 0;
                for a in 0..d {
                    let we = w.fwd(c, a, p);
                    if we == 0.0 {
                        continue;
                    }
                    let ce = if trace && a != d - 1 { 0.5 } else { 1.0 };
                    let diff = v[p + st[a]] - v[p];
                    acc += ce * we * diff * diff;
                }
            }
            acc
        })
        .collect();
    0.5 * g.h().powi(d as i32 - 2) * ordered_sum(&partial)
}

/// Minimizer of the discrete weighted energy with the given wall and lid data.
pub fn solve_linearized(boundary: &LinearizedBoundary, cfg: &LinearizedConfig) -> Result<LinearizedPair> {
    if !(cfg.tolerance > 0.0) || !(cfg.update_tolerance > 0.0) || cfg.max_sweeps == 0 {
        return Err(Error::param("tolerances and max_sweeps must be positive"));
    }
    if let Some(w) = cfg.omega {
        if !(w > 0.0 && w < 2.0) {
            return Err(Error::param(format!("omega = {w} outside (0, 2)")));
        }
    }
    let g = boundary.grid().clone();
    let weights = Weights::new(&g, cfg.weight_cap);
    let st = Stencil { g: &g, w: &weights, nz: g.shape()[g.n()] };
    let scale = boundary.scale().max(1e-300);
    let omega = cfg.omega.unwrap_or_else(|| {
        let longest = (0..g.dim()).map(|a| g.hi(a) - g.lo(a)).fold(0.0, f64::max);
        2.0 / (1.0 + std::f64::consts::PI * g.h() / longest)
    });

    let mean = |f: &ScalarField| {
        let vals: Vec<f64> = (0..g.len()).filter(|&i| g.is_box_boundary(i)).map(|i| f.at(i)).collect();
        ordered_sum(&vals) / vals.len() as f64
    };
    let init = |f: &ScalarField, m: f64| -> Vec<f64> {
        (0..g.len()).map(|i| if g.is_box_boundary(i) { f.at(i) } else { m }).collect()
    };
    let m0 = 0.5 * (mean(&boundary.h1) + mean(&boundary.h2));
    let mut v = [init(&boundary.h1, m0), init(&boundary.h2, m0)];
    let colors = g.colored_interior();
    let on_l: Vec<bool> = (0..g.len()).map(|i| g.on_l(i)).collect();

    let energy = |v: &[Vec<f64>; 2]| weighted_energy(&g, &weights, 0, &v[0]) + weighted_energy(&g, &weights, 1, &v[1]);
    let mut history = vec![energy(&v)];
    let mut converged = false;
    let mut sweeps = 0;
    let check_every = 5;
    while sweeps < cfg.max_sweeps {
        let mut max_change: f64 = 0.0;
        for nodes in &colors {
            let upd: Vec<(f64, f64)> = nodes
                .par_iter()
                .with_min_len(1024)
                .map(|&p| {
                    let (n1, d1) = st.gather(0, &v[0], p);
                    let (n2, d2) = st.gather(1, &v[1], p);
                    if on_l[p] {
                        let s = (n1 + n2) / (d1 + d2);
                        let x = v[0][p] + omega * (s - v[0][p]);
                        (x, x)
                    } else {
                        (v[0][p] + omega * (n1 / d1 - v[0][p]), v[1][p] + omega * (n2 / d2 - v[1][p]))
                    }
                })
                .collect();
            for (&p, &(a, b)) in nodes.iter().zip(&upd) {
                max_change = max_change.max((a - v[0][p]).abs()).max((b - v[1][p]).abs());
                v[0][p] = a;
                v[1][p] = b;
            }
        }
        sweeps += 1;
        if sweeps % check_every == 0 || max_change <= cfg.update_tolerance * scale {
            let e = energy(&v);
            let last = *history.last().unwrap();
            history.push(e);
            // energies at roundoff level count as settled
            let rel = (last - e).abs() / e.abs().max(1e-14 * scale * scale);
            if rel <= cfg.tolerance && max_change <= cfg.update_tolerance * scale {
                converged = true;
                break;
            }
        }
    }
    let mut flags = Vec::new();
    if !converged {
        flags.push(format!("no convergence after {sweeps} sweeps"));
        log::warn!("linearized solve stopped after {sweeps} sweeps");
    }
    let [a, b] = v;
    Ok(LinearizedPair {
        g1: ScalarField::from_values(g.clone(), a)?,
        g2: ScalarField::from_values(g.clone(), b)?,
        boundary: Some(boundary.clone()),
        energy: *history.last().unwrap(),
        sweeps,
        converged,
        energy_history: history,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCoefficients {
    pub point: Vec<f64>,
    pub a0: f64,
    pub a_prime: Vec<f64>,
    pub b1: f64,
    pub b2: f64,
    /// Weighted RMS misfit over the tube.
    pub residual: f64,
    /// `|b₁ + b₂|`.
    pub transmission_defect: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    /// Half-width of the tube along `x'` and its radius around `L`.
    pub tube: f64,
    /// Required distance from the query point to the box walls.
    pub margin: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { tube: 0.1, margin: 0.2 }
    }
}

/// Least-squares fit of `a₀ + a'·(x' - x₀') + b_i r` to `g_i` over the tube
/// `{|x' - x₀'| ≤ tube, r ≤ tube}` around the `L`-point `x0` (trace coordinates).
pub fn expansion_at(pair: &LinearizedPair, x0: &[f64], cfg: &ExpansionConfig) -> Result<ExpansionCoefficients> {
    let g = pair.grid();
    let n = g.n();
    if x0.len() != n {
        return Err(Error::param(format!("expected {n} trace coordinates")));
    }
    if x0[n - 1].abs() > 1e-12 {
        return Err(Error::pre(format!("{x0:?} is not on L")));
    }
    for k in 0..n {
        if x0[k] - g.lo(k) < cfg.margin - 1e-12 || g.hi(k) - x0[k] < cfg.margin - 1e-12 {
            return Err(Error::pre(format!("{x0:?} closer than {} to the box", cfg.margin)));
        }
    }
    let np = n - 1;
    let cols = np + 3;
    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let mut p = vec![0.0; n + 1];
    for idx in 0..g.len() {
        g.point_into(idx, &mut p);
        let r = p[n - 1].hypot(p[n]);
        if r > cfg.tube + 1e-12 {
            continue;
        }
        let dx: f64 = (0..np).map(|k| (p[k] - x0[k]).powi(2)).sum::<f64>().sqrt();
        if dx > cfg.tube + 1e-12 {
            continue;
        }
        let vol = if g.is_trace(idx) { 0.5 } else { 1.0 };
        for (c, f) in [&pair.g1, &pair.g2].into_iter().enumerate() {
            let mut row = vec![0.0; cols];
            row[0] = 1.0;
            for k in 0..np {
                row[1 + k] = p[k] - x0[k];
            }
            row[np + 1 + c] = r;
            rows.push((row, f.at(idx), vol));
        }
    }
    if rows.len() < 3 * cols {
        return Err(Error::InsufficientSamples(format!("{} samples in the tube around {x0:?}", rows.len() / 2)));
    }
    let m = rows.len();
    let a = DMatrix::from_fn(m, cols, |i, j| rows[i].0[j] * rows[i].2.sqrt());
    let y = DVector::from_fn(m, |i, _| rows[i].1 * rows[i].2.sqrt());
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&y, 1e-12).map_err(|e| Error::InsufficientSamples(format!("degenerate tube fit: {e}")))?;
    let res = &a * &coef - &y;
    let wsum: f64 = rows.iter().map(|r| r.2).sum();
    let residual = (res.norm_squared() / wsum).sqrt();
    let (b1, b2) = (coef[np + 1], coef[np + 2]);
    Ok(ExpansionCoefficients {
        point: x0.to_vec(),
        a0: coef[0],
        a_prime: (0..np).map(|k| coef[1 + k]).collect(),
        b1,
        b2,
        residual,
        transmission_defect: (b1 + b2).abs(),
        samples: m / 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicResidual {
    /// `sup |Δ_h(U_n g₁)|` away from `P⁻`.
    pub g1: f64,
    /// `sup |Δ_h(Ū_n g₂)|` away from `P⁺`.
    pub g2: f64,
    pub nodes: usize,
}

/// Residual of `Δ(U_n g₁) = 0` off `P⁻` and `Δ(Ū_n g₂) = 0` off `P⁺`, through
/// the identity `U_n Δ(U_n g) = div(U_n² ∇g)` and the discrete weighted
/// operator. Nodes within `2h` of the degenerate half-plane, within
/// `min_radius` of `L`, or on the walls are skipped.
pub fn weighted_harmonic_residual(pair: &LinearizedPair, min_radius: f64) -> HarmonicResidual {
    let g = pair.grid();
    let weights = Weights::new(g, None);
    let st = Stencil { g, w: &weights, nz: g.shape()[g.n()] };
    let n = g.n();
    let h = g.h();
    let vals = [pair.g1.values(), pair.g2.values()];
    let per: Vec<(f64, f64, usize)> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            if g.is_box_boundary(idx) {
                return (0.0, 0.0, 0);
            }
            let p = g.point(idx);
            let (t, z) = (p[n - 1], p[n]);
            let r = t.hypot(z);
            if r < min_radius.max(2.0 * h) - 1e-12 {
                return (0.0, 0.0, 0);
            }
            let mut out = [0.0; 2];
            for (c, o) in [Orientation::Plus, Orientation::Minus].into_iter().enumerate() {
                // distance to the half-plane where this weight degenerates
                let ts = o.sign() * t;
                let dist = if ts <= 0.0 { z } else { r };
                if dist < 2.0 * h - 1e-12 {
                    continue;
                }
                let (num, den) = st.gather(c, vals[c], idx);
                let div = (num - den * vals[c][idx]) / (h * h);
                out[c] = (div / profile_weight(o, t, z).sqrt()).abs();
            }
            (out[0], out[1], 1)
        })
        .collect();
    let mut res = HarmonicResidual { g1: 0.0, g2: 0.0, nodes: 0 };
    for (a, b, k) in per {
        res.g1 = res.g1.max(a);
        res.g2 = res.g2.max(b);
        res.nodes += k;
    }
    res
}

/// Smallest value of both components over the nodes of `B_η(x0)`.
pub fn min_over_ball(pair: &LinearizedPair, x0: &[f64], eta: f64) -> Result<f64> {
    let g = pair.grid();
    let d = g.dim();
    if x0.len() != d {
        return Err(Error::param("centre needs n + 1 coordinates"));
    }
    let mut p = vec![0.0; d];
    let mut best = f64::INFINITY;
    for idx in 0..g.len() {
        g.point_into(idx, &mut p);
        let dist: f64 = p.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist <= eta + 1e-12 {
            best = best.min(pair.g1.at(idx)).min(pair.g2.at(idx));
        }
    }
    if best.is_infinite() {
        return Err(Error::InsufficientSamples(format!("no nodes within {eta} of {x0:?}")));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: f64) -> Arc<ExtensionGrid> {
        Arc::new(ExtensionGrid::cube(2, 1.0, 1.0, h).unwrap())
    }

    fn explicit_pair(g: &Arc<ExtensionGrid>, scale: f64) -> LinearizedPair {
        let g1 = ScalarField::from_fn(g.clone(), |x| scale * explicit_minimizer(x, 2).unwrap().0);
        let g2 = ScalarField::from_fn(g.clone(), |x| scale * explicit_minimizer(x, 2).unwrap().1);
        LinearizedPair::from_fields(g1, g2).unwrap()
    }

    #[test]
    fn explicit_minimizer_values() {
        assert_eq!(explicit_minimizer(&[0.0, 0.0, 0.0], 2).unwrap(), (0.0, 0.0));
        let (a, b) = explicit_minimizer(&[0.0, 0.0, 1.0], 2).unwrap();
        assert!((a - 2.0).abs() < 1e-15 && (b + 2.0).abs() < 1e-15);
        let (a, b) = explicit_minimizer(&[0.5, 0.3, 0.0, 0.4], 3).unwrap();
        let r = 0.4f64;
        assert!((a - (-(0.25 + 0.09) / 2.0 + 2.0 * r)).abs() < 1e-14);
        assert!((b - (-(0.25 + 0.09) / 2.0 - 2.0 * r)).abs() < 1e-14);
        assert!(explicit_minimizer(&[0.0, 0.0], 1).is_err());
    }

    #[test]
    fn weights_sum_to_gradient_of_profile() {
        for &(t, z) in &[(0.3, 0.1), (-0.7, 0.2), (0.0, 0.5), (-1e-3, 1e-6)] {
            let s = profile_weight(Orientation::Plus, t, z) + profile_weight(Orientation::Minus, t, z);
            let r = f64::hypot(t, z);
            assert!((s - 0.25 / r).abs() < 1e-12 * s, "{t} {z}");
        }
        // U_n vanishes on P⁻
        assert_eq!(profile_weight(Orientation::Plus, -0.5, 0.0), 0.0);
    }

    #[test]
    fn constants_are_fixed_points() {
        let g = grid(1.0 / 16.0);
        let b = LinearizedBoundary::from_fns(g.clone(), |_| 0.4, |_| 0.4).unwrap();
        let p = solve_linearized(&b, &LinearizedConfig::default()).unwrap();
        assert!(p.converged);
        for v in p.g1.values().iter().chain(p.g2.values()) {
            assert!((v - 0.4).abs() < 1e-12);
        }
        let res = weighted_harmonic_residual(&p, 0.0);
        assert!(res.g1 < 1e-9 && res.g2 < 1e-9, "{res:?}");
        let e = expansion_at(&p, &[0.0, 0.0], &ExpansionConfig::default()).unwrap();
        assert!((e.a0 - 0.4).abs() < 1e-12);
        assert!(e.a_prime[0].abs() < 1e-12 && e.b1.abs() < 1e-12 && e.b2.abs() < 1e-12);
    }

    #[test]
    fn tangential_affine_data_is_reproduced() {
        let g = grid(1.0 / 16.0);
        let f = |x: &[f64]| 0.5 * x[0] + 0.1;
        let b = LinearizedBoundary::from_fns(g.clone(), f, f).unwrap();
        let p = solve_linearized(&b, &LinearizedConfig::default()).unwrap();
        assert!(p.converged);
        let exact = ScalarField::from_fn(g, f);
        assert!(p.g1.max_abs_diff(&exact) < 1e-8);
        assert!(p.g2.max_abs_diff(&exact) < 1e-8);
    }

    #[test]
    fn explicit_pair_expansion() {
        let g = grid(1.0 / 32.0);
        let e = expansion_at(&explicit_pair(&g, 1.0), &[0.0, 0.0], &ExpansionConfig::default()).unwrap();
        assert!((e.b1 - 2.0).abs() < 0.05 && (e.b2 + 2.0).abs() < 0.05, "{e:?}");
        assert!(e.transmission_defect < 1e-10);
        assert!(e.a0.abs() < 0.01 && e.a_prime[0].abs() < 1e-10, "{e:?}");
    }

    #[test]
    fn explicit_pair_is_weighted_harmonic() {
        let mut res = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0] {
            let r = weighted_harmonic_residual(&explicit_pair(&grid(h), 1.0), 0.2);
            res.push(r.g1.max(r.g2));
        }
        assert!(res[1] < 0.6 * res[0], "{res:?}");
    }

    #[test]
    fn boundary_checks() {
        let g = grid(0.25);
        assert!(LinearizedBoundary::from_fns(g.clone(), |_| 2.0, |_| 0.0).unwrap_err().is_precondition());
        assert!(LinearizedBoundary::from_fns(g, |_| 0.5, |_| 0.0).unwrap_err().is_precondition());
    }

    #[test]
    fn expansion_needs_an_interior_point_on_l() {
        let p = explicit_pair(&grid(1.0 / 8.0), 0.1);
        assert!(expansion_at(&p, &[0.0, 0.1], &ExpansionConfig::default()).is_err());
        assert!(expansion_at(&p, &[0.9, 0.0], &ExpansionConfig::default()).is_err());
    }
}
