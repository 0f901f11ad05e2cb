//! Uniform tensor grids over `box × [0, Z]`, with the lower half-space
//! implied by even reflection across `z = 0`.
//!
//! Node ordering is row-major with `z` the fastest axis. Axis `k < n` is the
//! trace coordinate `x_{k+1}`; axis `n` is `z`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ordered_sum;
use crate::profiles::Sampler;

/// Largest supported `n + 1`.
pub const MAX_DIM: usize = 4;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionGrid {
    n: usize,
    h: f64,
    lo: Vec<f64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
}

fn steps(len: f64, h: f64) -> Option<usize> {
    let m = len / h;
    let r = m.round();
    ((m - r).abs() <= 1e-9 * m.max(1.0) && r >= 2.0).then_some(r as usize)
}

impl ExtensionGrid {
    /// `x_extents[k] = (lo, hi)` for each trace axis; `z ∈ [0, z_max]`.
    pub fn new(n: usize, x_extents: &[(f64, f64)], z_max: f64, h: f64) -> Result<Self> {
        if n == 0 || n + 1 > MAX_DIM {
            return Err(Error::param(format!("trace dimension n = {n} outside 1..={}", MAX_DIM - 1)));
        }
        if x_extents.len() != n {
            return Err(Error::param("one extent per trace axis is required"));
        }
        if !(h > 0.0) {
            return Err(Error::param(format!("spacing h = {h} must be positive")));
        }
        let mut lo = Vec::with_capacity(n + 1);
        let mut shape = Vec::with_capacity(n + 1);
        for (k, &(a, b)) in x_extents.iter().enumerate() {
            let m = steps(b - a, h)
                .ok_or_else(|| Error::param(format!("axis {k}: [{a}, {b}] is not a multiple of h = {h}")))?;
            lo.push(a);
            shape.push(m + 1);
        }
        // L = {x_n = 0, z = 0} must consist of nodes
        let (a, b) = x_extents[n - 1];
        let off = -a / h;
        if !(a <= 0.0 && b >= 0.0) || (off - off.round()).abs() > 1e-9 * off.abs().max(1.0) {
            return Err(Error::param("x_n = 0 must be a grid layer inside the box"));
        }
        let mz = steps(z_max, h).ok_or_else(|| Error::param(format!("z_max = {z_max} is not a multiple of h")))?;
        lo.push(0.0);
        shape.push(mz + 1);
        let d = n + 1;
        let mut strides = vec![1; d];
        for k in (0..d - 1).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        Ok(Self { n, h, lo, shape, strides })
    }

    /// `[-half_width, half_width]^n × [0, z_max]`.
    pub fn cube(n: usize, half_width: f64, z_max: f64, h: f64) -> Result<Self> {
        Self::new(n, &vec![(-half_width, half_width); n], z_max, h)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.lo[axis] + (self.shape[axis] - 1) as f64 * self.h
    }

    pub fn extents(&self) -> Vec<(f64, f64)> {
        (0..self.dim()).map(|a| (self.lo(a), self.hi(a))).collect()
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + i as f64 * self.h
    }

    #[inline]
    pub fn unravel(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for k in 0..self.dim() {
            out[k] = idx / self.strides[k];
            idx %= self.strides[k];
        }
        out
    }

    #[inline]
    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    #[inline]
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.shape[axis]
    }

    #[inline]
    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let m = self.unravel(idx);
        for k in 0..self.dim() {
            out[k] = self.coord(k, m[k]);
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(idx, &mut p);
        p
    }

    /// Index of the grid layer `x_n = 0`.
    pub fn l_layer(&self) -> usize {
        (-self.lo[self.n - 1] / self.h).round() as usize
    }

    #[inline]
    pub fn z_index(&self, idx: usize) -> usize {
        idx % self.shape[self.n]
    }

    #[inline]
    pub fn is_trace(&self, idx: usize) -> bool {
        self.z_index(idx) == 0
    }

    /// Dirichlet nodes: the side walls and the lid `z = Z`.
    #[inline]
    pub fn is_box_boundary(&self, idx: usize) -> bool {
        let m = self.unravel(idx);
        (0..self.n).any(|k| m[k] == 0 || m[k] + 1 == self.shape[k]) || m[self.n] + 1 == self.shape[self.n]
    }

    /// `P⁺ = {x_n ≥ 0, z = 0}`.
    pub fn in_p_plus(&self, idx: usize) -> bool {
        self.is_trace(idx) && self.axis_index(idx, self.n - 1) >= self.l_layer()
    }

    /// `P⁻ = {x_n ≤ 0, z = 0}`.
    pub fn in_p_minus(&self, idx: usize) -> bool {
        self.is_trace(idx) && self.axis_index(idx, self.n - 1) <= self.l_layer()
    }

    /// `L = {x_n = 0, z = 0}`.
    pub fn on_l(&self, idx: usize) -> bool {
        self.is_trace(idx) && self.axis_index(idx, self.n - 1) == self.l_layer()
    }

    /// Neighbour along `axis` in direction `+1`/`-1`; below the trace the
    /// reflected node above is returned. `None` past a box face.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> Option<usize> {
        let i = self.axis_index(idx, axis);
        let s = self.strides[axis];
        if forward {
            (i + 1 < self.shape[axis]).then_some(idx + s)
        } else if i > 0 {
            Some(idx - s)
        } else if axis == self.n {
            Some(idx + s)
        } else {
            None
        }
    }

    /// Parity of the multi-index, for red-black sweeps.
    #[inline]
    pub fn color(&self, idx: usize) -> usize {
        let m = self.unravel(idx);
        m[..self.dim()].iter().sum::<usize>() % 2
    }

    /// Interior (non-Dirichlet) nodes split by colour, in increasing order.
    pub fn colored_interior(&self) -> [Vec<usize>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        for idx in 0..self.len() {
            if !self.is_box_boundary(idx) {
                out[self.color(idx)].push(idx);
            }
        }
        out
    }

    /// Trace nodes in increasing order.
    pub fn trace_nodes(&self) -> Vec<usize> {
        (0..self.len()).step_by(self.shape[self.n]).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let tol = 1e-12 * self.h;
        (0..self.dim()).all(|k| {
            let v = if k == self.n { x[k].abs() } else { x[k] };
            v >= self.lo(k) - tol && v <= self.hi(k) + tol
        })
    }

    /// Lower corner of the containing cell and the local coordinates in
    /// `[0, 1]`; `z < 0` is reflected.
    pub fn locate(&self, x: &[f64]) -> Result<([usize; MAX_DIM], [f64; MAX_DIM])> {
        if x.len() != self.dim() {
            return Err(Error::param(format!("point has {} coordinates, grid needs {}", x.len(), self.dim())));
        }
        if !self.contains(x) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        let mut base = [0; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..self.dim() {
            let v = if k == self.n { x[k].abs() } else { x[k] };
            let s = ((v - self.lo[k]) / self.h).max(0.0);
            let cells = self.shape[k] - 1;
            let i = (s.floor() as usize).min(cells - 1);
            base[k] = i;
            frac[k] = (s - i as f64).clamp(0.0, 1.0);
        }
        Ok((base, frac))
    }

    /// Whether the ball `B_r(center)` and its mirror image fit in the box.
    pub fn ball_inside(&self, center: &[f64], r: f64) -> bool {
        let tol = 1e-12;
        (0..self.n).all(|k| center[k] - r >= self.lo(k) - tol && center[k] + r <= self.hi(k) + tol)
            && center[self.n].abs() + r <= self.hi(self.n) + tol
    }
}

/// Sampled even-in-`z` function on an [`ExtensionGrid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<ExtensionGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<ExtensionGrid>) -> Self {
        let len = grid.len();
        Self { grid, values: vec![0.0; len] }
    }

    pub fn from_values(grid: Arc<ExtensionGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::param(format!("{} values for a grid of {} nodes", values.len(), grid.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite field value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F>(grid: Arc<ExtensionGrid>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let d = grid.dim();
        let values = (0..grid.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |p, idx| {
                    grid.point_into(idx, p);
                    f(p)
                },
            )
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<ExtensionGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `Δ_h f` at an interior node; on the trace the node below is the
    /// reflection of the node above.
    pub fn laplacian(&self, idx: usize) -> Result<f64> {
        discrete_laplacian(self, idx)
    }

    /// Multilinear interpolation; exact for multilinear functions.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        interpolate(self, x)
    }
}

impl Sampler for ScalarField {
    fn sample(&self, x: &[f64]) -> Result<f64> {
        interpolate(self, x)
    }
}

pub fn discrete_laplacian(f: &ScalarField, idx: usize) -> Result<f64> {
    let g = &f.grid;
    if idx >= g.len() || g.is_box_boundary(idx) {
        return Err(Error::OutOfDomain(if idx < g.len() { g.point(idx) } else { vec![] }));
    }
    let v = &f.values;
    let c = v[idx];
    let mut acc = 0.0;
    for a in 0..g.dim() {
        // interior node: both neighbours exist (reflection on the trace)
        let up = g.neighbor(idx, a, true).expect("interior");
        let dn = g.neighbor(idx, a, false).expect("interior");
        acc += v[up] + v[dn] - 2.0 * c;
    }
    Ok(acc / (g.h * g.h))
}

pub fn interpolate(f: &ScalarField, x: &[f64]) -> Result<f64> {
    let g = &f.grid;
    let (base, frac) = g.locate(x)?;
    let d = g.dim();
    let origin = g.ravel(&base[..d]);
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = origin;
        for k in 0..d {
            if corner >> k & 1 == 1 {
                w *= frac[k];
                idx += g.strides[k];
            } else {
                w *= 1.0 - frac[k];
            }
        }
        if w != 0.0 {
            acc += w * f.values[idx];
        }
    }
    Ok(acc)
}

/// How a [`Configuration`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Penalized { beta: f64 },
    Segregated,
}

/// A `k`-tuple of fields on one grid.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub components: Vec<ScalarField>,
    pub mode: Mode,
}

impl Configuration {
    pub fn new(components: Vec<ScalarField>, mode: Mode) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::param("configuration needs a component"))?;
        if components.iter().any(|c| c.grid() != first.grid()) {
            return Err(Error::param("components live on different grids"));
        }
        Ok(Self { components, mode })
    }

    /// Samples closed-form components on every node.
    pub fn from_fns<F>(grid: Arc<ExtensionGrid>, fs: &[F], mode: Mode) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let components = fs.iter().map(|f| ScalarField::from_fn(grid.clone(), f)).collect();
        Self { components, mode }
    }

    pub fn grid(&self) -> &Arc<ExtensionGrid> {
        self.components[0].grid()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Values of all components at `x`.
    pub fn sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.interpolate(x)).collect()
    }

    /// Trace nodes where more than one component exceeds `threshold`.
    pub fn segregation_violations(&self, threshold: f64) -> usize {
        self.grid()
            .trace_nodes()
            .into_iter()
            .filter(|&idx| self.components.iter().filter(|c| c.at(idx) > threshold).count() > 1)
            .count()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { components: self.components.iter().map(|f| f.scaled(c)).collect(), mode: self.mode }
    }
}

/// One cell of the grid, identified by its lower corner node.
#[derive(Debug, Clone, Copy)]
pub struct CellView {
    pub corner: usize,
    pub center: [f64; MAX_DIM],
    /// Cell side in units of `h`.
    pub step: usize,
}

/// Squared gradient of a field on a cell from differences across the cell,
/// averaged over the `2^{d-1}` parallel edges per axis.
pub fn cell_grad_sq(f: &ScalarField, cell: &CellView) -> f64 {
    let g = &f.grid;
    let d = g.dim();
    let v = &f.values;
    let step = cell.step;
    let edges = 1usize << (d - 1);
    let mut total = 0.0;
    for a in 0..d {
        let mut acc = 0.0;
        for mask in 0..edges {
            let mut idx = cell.corner;
            let mut bit = 0;
            for k in 0..d {
                if k == a {
                    continue;
                }
                if mask >> bit & 1 == 1 {
                    idx += step * g.strides[k];
                }
                bit += 1;
            }
            let diff = v[idx + step * g.strides[a]] - v[idx];
            acc += diff * diff;
        }
        total += acc / edges as f64;
    }
    let side = step as f64 * g.h;
    total / (side * side)
}

/// `∫_{B_r} Σ|∇u_i|²` over the full space. With `cfg.richardson` the cell
/// rule is applied at spacings `h` and `2h` and combined as `2 I_h - I_{2h}`,
/// which cancels the first-order error produced by `r^{1/2}`-type
/// singularities along the free boundary.
pub fn gradient_energy_ball(components: &[ScalarField], center: &[f64], r: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let grid = components
        .first()
        .ok_or_else(|| Error::param("no components"))?
        .grid();
    let integrand = |cell: &CellView| components.iter().map(|f| cell_grad_sq(f, cell)).sum::<f64>();
    let fine = quad_ball_cells(grid, center, r, cfg, 1, integrand)?;
    if !cfg.richardson {
        return Ok(fine);
    }
    let coarse = quad_ball_cells(grid, center, r, cfg, 2, integrand)?;
    Ok(2.0 * fine - coarse)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Angular sample count on a sphere (hemisphere samples, doubled).
    pub n_ang: usize,
    /// Sub-samples per axis used for cut-cell volume fractions.
    pub subsamples: usize,
    /// Extrapolate gradient-energy ball integrals from `h` and `2h`.
    pub richardson: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { n_ang: 2048, subsamples: 2, richardson: true }
    }
}

fn cell_fraction(center: &[f64], ball: &[f64], r: f64, h: f64, d: usize, sub: usize) -> f64 {
    let half = 0.5 * h;
    let mut near = 0.0;
    let mut far = 0.0;
    for k in 0..d {
        let dc = (center[k] - ball[k]).abs();
        let n = (dc - half).max(0.0);
        near += n * n;
        let f = dc + half;
        far += f * f;
    }
    if far <= r * r {
        return 1.0;
    }
    if near >= r * r {
        return 0.0;
    }
    // each sub-cell contributes a linear ramp in the signed distance
    let total = sub.pow(d as u32);
    let hs = h / sub as f64;
    let mut inside = 0.0;
    for s in 0..total {
        let mut rem = s;
        let mut dist = 0.0;
        for k in 0..d {
            let j = rem % sub;
            rem /= sub;
            let x = center[k] - half + (j as f64 + 0.5) * hs;
            dist += (x - ball[k]) * (x - ball[k]);
        }
        inside += (0.5 - (dist.sqrt() - r) / hs).clamp(0.0, 1.0);
    }
    inside / total as f64
}

/// `∫_{B_r(center)} f` over the full (reflected) space by the cell midpoint
/// rule with cut-cell volume fractions. `f` sees cells of the stored upper
/// half; the lower half enters through the mirrored ball.
pub fn quad_ball<F>(grid: &ExtensionGrid, center: &[f64], r: f64, cfg: &QuadratureConfig, f: F) -> Result<f64>
where
    F: Fn(&CellView) -> f64 + Sync,
{
    quad_ball_cells(grid, center, r, cfg, 1, f)
}

/// [`quad_ball`] on the lattice of cells of side `step·h` whose corners have
/// multi-indices divisible by `step`.
pub fn quad_ball_cells<F>(
    grid: &ExtensionGrid,
    center: &[f64],
    r: f64,
    cfg: &QuadratureConfig,
    step: usize,
    f: F,
) -> Result<f64>
where
    F: Fn(&CellView) -> f64 + Sync,
{
    let d = grid.dim();
    if center.len() != d {
        return Err(Error::param("center must have n + 1 coordinates"));
    }
    if step == 0 {
        return Err(Error::param("cell step must be positive"));
    }
    if !grid.ball_inside(center, r) {
        return Err(Error::pre(format!("ball of radius {r} at {center:?} exceeds the box")));
    }
    let h = grid.h;
    let side = step as f64 * h;
    let mut lo_idx = [0usize; MAX_DIM];
    let mut counts = [0usize; MAX_DIM];
    for k in 0..d {
        let (a, b) = if k == grid.n {
            (0.0, center[k].abs() + r)
        } else {
            (center[k] - r, center[k] + r)
        };
        let cells = (grid.shape[k] - 1) / step;
        let i0 = (((a - grid.lo[k]) / side + 1e-9).floor().max(0.0) as usize).min(cells.saturating_sub(1));
        let i1 = ((b - grid.lo[k]) / side - 1e-9).ceil().max(1.0) as usize;
        if i1 > cells {
            return Err(Error::pre(format!("ball of radius {r} not covered by cells of side {side}")));
        }
        lo_idx[k] = i0;
        counts[k] = i1 - i0;
    }
    let total: usize = counts[..d].iter().product();
    let mirror: Vec<f64> = {
        let mut m = center.to_vec();
        m[grid.n] = -m[grid.n];
        m
    };
    let symmetric = center[grid.n] == 0.0;
    let sub = cfg.subsamples.max(1);
    let partial: Vec<f64> = (0..total)
        .into_par_iter()
        .chunks(CHUNK)
        .map(|chunk| {
            let mut acc = 0.0;
            for c in chunk {
                let mut rem = c;
                let mut m = [0usize; MAX_DIM];
                for k in (0..d).rev() {
                    m[k] = (lo_idx[k] + rem % counts[k]) * step;
                    rem /= counts[k];
                }
                let mut cc = [0.0; MAX_DIM];
                for k in 0..d {
                    cc[k] = grid.coord(k, m[k]) + 0.5 * side;
                }
                let mut frac = cell_fraction(&cc[..d], center, r, side, d, sub);
                frac += if symmetric { frac } else { cell_fraction(&cc[..d], &mirror, r, side, d, sub) };
                if frac > 0.0 {
                    let view = CellView { corner: grid.ravel(&m[..d]), center: cc, step };
                    acc += frac * f(&view);
                }
            }
            acc
        })
        .collect();
    Ok(ordered_sum(&partial) * side.powi(d as i32))
}

/// Quadrature nodes on the upper unit hemisphere (`z ≥ 0`) with weights that
/// integrate over the full sphere for even-in-`z` integrands. On the circle
/// the rule is the trapezoid rule with half-weight equatorial ends; on `S²`
/// it is Gauss-Legendre in `cos φ` (no equatorial nodes) times a uniform
/// azimuthal rule.
pub fn hemisphere_rule(d: usize, n_ang: usize) -> Result<Vec<([f64; MAX_DIM], f64)>> {
    let mut out = Vec::new();
    match d {
        2 => {
            let m = (n_ang / 2).max(8);
            let dt = std::f64::consts::PI / m as f64;
            for j in 0..=m {
                let th = j as f64 * dt;
                let w = if j == 0 || j == m { 0.5 } else { 1.0 } * dt * 2.0;
                out.push(([th.cos(), th.sin(), 0.0, 0.0], w));
            }
        }
        3 => {
            // Gauss-Legendre in cos φ on the symmetric pairs, uniform in ψ
            let p = ((n_ang as f64 / 2.0).sqrt().round() as usize).max(4);
            let a = 2 * p;
            let dpsi = 2.0 * std::f64::consts::PI / a as f64;
            let (mu, w) = gauss_legendre(2 * p);
            for (&m, &wm) in mu.iter().zip(&w).filter(|(m, _)| **m > 0.0) {
                let s = (1.0 - m * m).sqrt();
                for j in 0..a {
                    let psi = (j as f64 + 0.5) * dpsi;
                    out.push(([s * psi.cos(), s * psi.sin(), m, 0.0], 2.0 * wm * dpsi));
                }
            }
        }
        _ => return Err(Error::Unsupported(format!("sphere quadrature in dimension {d}"))),
    }
    Ok(out)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, `m ≥ 2`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 2, "Gauss-Legendre needs at least two nodes");
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[m - 1 - i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// `∫_{∂B_r(center)} f dσ` for a center on the trace; `f(point, normal)` is
/// only evaluated on the upper hemisphere.
pub fn quad_sphere<F>(grid: &ExtensionGrid, center: &[f64], r: f64, cfg: &QuadratureConfig, f: F) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let d = grid.dim();
    if center.len() != d {
        return Err(Error::param("center must have n + 1 coordinates"));
    }
    if center[grid.n] != 0.0 {
        return Err(Error::pre("sphere quadrature needs a center on the trace"));
    }
    if !grid.ball_inside(center, r) {
        return Err(Error::pre(format!("sphere of radius {r} at {center:?} exceeds the box")));
    }
    let rule = hemisphere_rule(d, cfg.n_ang)?;
    let vals = rule
        .par_iter()
        .map(|(dir, w)| {
            let mut p = [0.0; MAX_DIM];
            for k in 0..d {
                p[k] = center[k] + r * dir[k];
            }
            Ok(w * f(&p[..d], &dir[..d])?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ordered_sum(&vals) * r.powi(d as i32 - 1))
}

/// `|S^{d-1}|`.
pub fn unit_sphere_area(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        4 => 2.0 * PI * PI,
        _ => panic!("dimension {d} unsupported"),
    }
}

/// Node gradients: centred differences, one-sided on the side walls and the
/// lid. On the trace `∂_z = 0` where the field is positive and the one-sided
/// upward difference where it vanishes (the even reflection has a kink there).
#[derive(Debug, Clone)]
pub struct GradientField {
    grid: Arc<ExtensionGrid>,
    grads: Vec<f64>,
}

impl GradientField {
    pub fn new(f: &ScalarField, support_threshold: f64) -> Self {
        let g = f.grid.clone();
        let d = g.dim();
        let v = &f.values;
        let h = g.h;
        let mut grads = vec![0.0; g.len() * d];
        grads.par_chunks_mut(d).enumerate().for_each(|(idx, out)| {
            for a in 0..d {
                let i = g.axis_index(idx, a);
                let s = g.strides[a];
                let last = g.shape[a] - 1;
                out[a] = if a == g.n && i == 0 {
                    if v[idx] > support_threshold {
                        0.0
                    } else {
                        (v[idx + s] - v[idx]) / h
                    }
                } else if i == 0 {
                    (v[idx + s] - v[idx]) / h
                } else if i == last {
                    (v[idx] - v[idx - s]) / h
                } else {
                    (v[idx + s] - v[idx - s]) / (2.0 * h)
                };
            }
        });
        Self { grid: g, grads }
    }

    pub fn at_node(&self, idx: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.grads[idx * d..(idx + 1) * d]
    }

    /// Multilinear interpolation of node gradients; below the trace the
    /// reflected gradient (z-component negated) is returned.
    pub fn interpolate(&self, x: &[f64]) -> Result<[f64; MAX_DIM]> {
        let g = &self.grid;
        let d = g.dim();
        let (base, frac) = g.locate(x)?;
        let origin = g.ravel(&base[..d]);
        let mut out = [0.0; MAX_DIM];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = origin;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    w *= frac[k];
                    idx += g.strides[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                for k in 0..d {
                    out[k] += w * self.grads[idx * d + k];
                }
            }
        }
        if x[g.n] < 0.0 {
            out[g.n] = -out[g.n];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::half_plane;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid3(h: f64) -> Arc<ExtensionGrid> {
        Arc::new(ExtensionGrid::cube(2, 1.0, 1.0, h).unwrap())
    }

    #[test]
    fn construction_checks() {
        assert!(ExtensionGrid::cube(2, 1.0, 1.0, 0.3).is_err());
        assert!(ExtensionGrid::new(1, &[(0.1, 1.1)], 1.0, 0.25).is_err());
        let g = ExtensionGrid::cube(2, 1.0, 0.5, 0.25).unwrap();
        assert_eq!(g.shape(), &[9, 9, 3]);
        assert_eq!(g.len(), 243);
        assert_eq!(g.l_layer(), 4);
        let idx = g.ravel(&[2, 4, 0]);
        assert!(g.on_l(idx) && g.in_p_plus(idx) && g.in_p_minus(idx));
        assert_eq!(g.point(idx), vec![-0.5, 0.0, 0.0]);
        let idx = g.ravel(&[2, 5, 0]);
        assert!(g.in_p_plus(idx) && !g.in_p_minus(idx));
        assert!(g.is_box_boundary(g.ravel(&[0, 4, 1])));
        assert!(g.is_box_boundary(g.ravel(&[3, 4, 2])));
        assert!(!g.is_box_boundary(g.ravel(&[3, 4, 0])));
    }

    #[test]
    fn laplacian_of_affine_and_quadratic() {
        let g = grid3(0.125);
        let f = ScalarField::from_fn(g.clone(), |x| 1.0 + 2.0 * x[0] - 0.5 * x[1] + 3.0 * x[2]);
        // affine in z is not even; restrict to nodes above the trace
        for idx in 0..g.len() {
            if !g.is_box_boundary(idx) && !g.is_trace(idx) {
                assert!(f.laplacian(idx).unwrap().abs() < 1e-10);
            }
        }
        let q = ScalarField::from_fn(g.clone(), |x| x.iter().map(|v| v * v).sum());
        for idx in 0..g.len() {
            if !g.is_box_boundary(idx) {
                assert_abs_diff_eq!(q.laplacian(idx).unwrap(), 6.0, epsilon = 1e-10);
            }
        }
        assert!(q.laplacian(0).is_err());
    }

    #[test]
    fn reflection_matches_full_stencil() {
        // even field: the trace stencil equals the full-space stencil
        let g = grid3(0.125);
        let f = ScalarField::from_fn(g.clone(), |x| (x[0] + 0.3).exp() * (2.0 * x[2]).cosh() + x[1] * x[1]);
        for idx in g.trace_nodes() {
            if g.is_box_boundary(idx) {
                continue;
            }
            let p = g.point(idx);
            let h = g.h();
            let val = |q: &[f64]| (q[0] + 0.3).exp() * (2.0 * q[2]).cosh() + q[1] * q[1];
            let mut acc = 0.0;
            for a in 0..3 {
                let mut up = p.clone();
                let mut dn = p.clone();
                up[a] += h;
                dn[a] -= h;
                acc += val(&up) + val(&dn) - 2.0 * val(&p);
            }
            assert_abs_diff_eq!(f.laplacian(idx).unwrap(), acc / (h * h), epsilon = 1e-8);
        }
    }

    #[test]
    fn laplacian_of_profile_converges() {
        // sup over r ≥ 0.25 of |Δ_h U| under h-halving
        let mut sups = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
            let g = Arc::new(ExtensionGrid::new(1, &[(-1.0, 1.0)], 1.0, h).unwrap());
            let f = ScalarField::from_fn(g.clone(), |x| half_plane(x[0], x[1]));
            let mut sup: f64 = 0.0;
            for idx in 0..g.len() {
                let p = g.point(idx);
                if g.is_box_boundary(idx) || p[0].hypot(p[1]) < 0.25 || (p[1] == 0.0 && p[0] < 0.0) {
                    continue;
                }
                sup = sup.max(f.laplacian(idx).unwrap().abs());
            }
            sups.push(sup);
        }
        for w in sups.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "{sups:?}");
        }
    }

    #[test]
    fn interpolation_exact_on_multilinear() {
        let g = grid3(0.25);
        let f = ScalarField::from_fn(g.clone(), |x| 1.0 + x[0] - 2.0 * x[1] + 0.5 * x[0] * x[1] * x[2] + x[2]);
        let x = [0.1, -0.37, 0.61];
        let exact = 1.0 + x[0] - 2.0 * x[1] + 0.5 * x[0] * x[1] * x[2] + x[2];
        assert_abs_diff_eq!(f.interpolate(&x).unwrap(), exact, epsilon = 1e-13);
        let idx = g.ravel(&[3, 5, 2]);
        assert_eq!(f.interpolate(&g.point(idx)).unwrap(), f.at(idx));
        assert!(f.interpolate(&[1.5, 0.0, 0.0]).is_err());
        // below the trace by evenness
        let even = ScalarField::from_fn(g.clone(), |x| x[2] * x[2] + x[0]);
        assert_abs_diff_eq!(
            even.interpolate(&[0.2, 0.1, -0.3]).unwrap(),
            even.interpolate(&[0.2, 0.1, 0.3]).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn interpolation_of_profile() {
        let h = 1.0 / 32.0;
        let g = Arc::new(ExtensionGrid::new(1, &[(-1.0, 1.0)], 1.0, h).unwrap());
        let f = ScalarField::from_fn(g, |x| half_plane(x[0], x[1]));
        let x = [0.5, 0.3];
        let err = (f.interpolate(&x).unwrap() - half_plane(0.5, 0.3)).abs();
        // |D²U| ~ r^{-3/2}/4 at r ≈ 0.58
        assert!(err <= h * h, "{err}");
    }

    #[test]
    fn interpolation_has_no_overshoot() {
        let g = grid3(0.125);
        let f = ScalarField::from_fn(g.clone(), |x| half_plane(x[1], x[2]) + (5.0 * x[0]).sin());
        for &x in &[[0.11, -0.03, 0.07], [-0.61, 0.44, 0.01], [0.9, 0.2, 0.33]] {
            let (base, _) = g.locate(&x).unwrap();
            let origin = g.ravel(&base[..3]);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in 0..8 {
                let idx = origin
                    + (c & 1) * g.strides()[0]
                    + (c >> 1 & 1) * g.strides()[1]
                    + (c >> 2 & 1) * g.strides()[2];
                lo = lo.min(f.at(idx));
                hi = hi.max(f.at(idx));
            }
            let v = f.interpolate(&x).unwrap();
            assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
    }

    #[test]
    fn ball_and_sphere_measures() {
        let g = grid3(1.0 / 32.0);
        let cfg = QuadratureConfig::default();
        let c = [0.0, 0.0, 0.0];
        for r in [0.3, 0.5] {
            let vol = quad_ball(&g, &c, r, &cfg, |_| 1.0).unwrap();
            let exact = 4.0 / 3.0 * PI * r * r * r;
            assert!((vol / exact - 1.0).abs() < 0.005, "{vol} {exact}");
            let area = quad_sphere(&g, &c, r, &cfg, |_, _| Ok(1.0)).unwrap();
            let exact = 4.0 * PI * r * r;
            assert!((area / exact - 1.0).abs() < 0.005, "{area} {exact}");
        }
        assert!(quad_ball(&g, &[0.8, 0.0, 0.0], 0.3, &cfg, |_| 1.0).is_err());
    }

    #[test]
    fn quadratures_converge() {
        let cfg = QuadratureConfig::default();
        let exact = {
            // ∫_{B_r} (1 + x1²) over a ball in R³, r = 0.4
            let r: f64 = 0.4;
            4.0 / 3.0 * PI * r.powi(3) + 4.0 * PI * r.powi(5) / 15.0
        };
        let mut errs = Vec::new();
        for h in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
            let g = grid3(h);
            let v = quad_ball(&g, &[0.0; 3], 0.4, &cfg, |c| 1.0 + c.center[0] * c.center[0]).unwrap();
            errs.push((v - exact).abs());
        }
        assert!(errs[2] < errs[0] / 2.0, "{errs:?}");
    }

    #[test]
    fn circle_quadrature_of_profile_pair() {
        // ∫_{∂B_r} (U² + Ū²) = 2πr·r in the plane
        let h = 1.0 / 64.0;
        let g = Arc::new(ExtensionGrid::new(1, &[(-1.0, 1.0)], 1.0, h).unwrap());
        let u = ScalarField::from_fn(g.clone(), |x| half_plane(x[0], x[1]));
        let ub = ScalarField::from_fn(g.clone(), |x| half_plane(-x[0], x[1]));
        let r = 0.5;
        let cfg = QuadratureConfig::default();
        let s = quad_sphere(&g, &[0.0, 0.0], r, &cfg, |p, _| {
            Ok(u.interpolate(p)?.powi(2) + ub.interpolate(p)?.powi(2))
        })
        .unwrap();
        assert!((s / (2.0 * PI * r * r) - 1.0).abs() < 0.01, "{s}");
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let sum: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert_abs_diff_eq!(sum, 2.0 / 11.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn sphere_rule_integrates_constants_and_quadratics() {
        let rule = hemisphere_rule(3, 2048).unwrap();
        let total: f64 = rule.iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(total, 4.0 * PI, epsilon = 1e-12);
        let z2: f64 = rule.iter().map(|(p, w)| w * p[2] * p[2]).sum();
        assert_abs_diff_eq!(z2, 4.0 * PI / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn cell_gradient_of_linear_field() {
        let g = grid3(0.25);
        let f = ScalarField::from_fn(g.clone(), |x| 2.0 * x[0] - x[1] + 0.5 * x[2]);
        let cell = CellView { corner: g.ravel(&[1, 2, 0]), center: [0.0; MAX_DIM], step: 1 };
        assert_abs_diff_eq!(cell_grad_sq(&f, &cell), 4.0 + 1.0 + 0.25, epsilon = 1e-12);
        let coarse = CellView { corner: g.ravel(&[2, 2, 0]), center: [0.0; MAX_DIM], step: 2 };
        assert_abs_diff_eq!(cell_grad_sq(&f, &coarse), 4.0 + 1.0 + 0.25, epsilon = 1e-12);
    }

    #[test]
    fn node_gradients_with_trace_kink() {
        let h = 1.0 / 32.0;
        let g = Arc::new(ExtensionGrid::new(1, &[(-1.0, 1.0)], 1.0, h).unwrap());
        let u = ScalarField::from_fn(g.clone(), |x| half_plane(x[0], x[1]));
        let grad = GradientField::new(&u, 1e-8);
        // on P⁺ the even field has ∂_z = 0
        let idx = g.ravel(&[48, 0]);
        assert_eq!(grad.at_node(idx)[1], 0.0);
        assert!((grad.at_node(idx)[0] - 0.5 / 0.5_f64.sqrt()).abs() < 0.01);
        // on P⁻ the one-sided slope approximates 1/(2√|t|)
        let idx = g.ravel(&[16, 0]);
        let expected = 0.5 / 0.5_f64.sqrt();
        assert!((grad.at_node(idx)[1] - expected).abs() < 0.02);
        let below = grad.interpolate(&[-0.5, -0.01]).unwrap();
        let above = grad.interpolate(&[-0.5, 0.01]).unwrap();
        assert_eq!(below[1], -above[1]);
    }
}
