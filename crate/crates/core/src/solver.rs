//! Minimizers of the penalized functional `J_β` and of the segregated
//! Dirichlet energy with prescribed data on the box walls and lid.
//!
//! Both solvers relax by red-black SOR on the even-in-`z` grid. The discrete
//! energy of a component is `½ h^{d-2} Σ_edges c_e (u_a - u_b)²` with
//! `c_e = ½` on edges inside the trace plane, which makes the reflected
//! `(2n+3)`-point stencil its exact first-order condition.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Configuration, ExtensionGrid, Mode, ScalarField};
use crate::numerics::ordered_sum;

const CHUNK: usize = 4096;
const NO_OWNER: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRule {
    /// Each trace node goes to the component with the largest harmonic
    /// replacement value; the node nearest each sub-cell crossing is left
    /// to nobody.
    KeepMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Stop when one sweep lowers the energy by less than this fraction.
    pub tolerance: f64,
    /// And the largest nodal change is below this multiple of the data scale.
    pub update_tolerance: f64,
    pub max_sweeps: usize,
    /// Ascending `β` values, each solve warm-started from the previous one.
    pub beta_schedule: Vec<f64>,
    pub projection: ProjectionRule,
    /// SOR factor; `None` picks `2 / (1 + π h / L)`.
    pub omega: Option<f64>,
    pub support_threshold: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            update_tolerance: 1e-9,
            max_sweeps: 50_000,
            beta_schedule: vec![10.0, 100.0, 1000.0, 10000.0],
            projection: ProjectionRule::KeepMax,
            omega: None,
            support_threshold: 1e-8,
        }
    }
}

impl SolveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !(self.update_tolerance > 0.0) {
            return Err(Error::param("tolerances must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::param("max_sweeps must be positive"));
        }
        if let Some(w) = self.omega {
            if !(w > 0.0 && w < 2.0) {
                return Err(Error::param(format!("omega = {w} outside (0, 2)")));
            }
        }
        if self.beta_schedule.iter().any(|b| !(*b > 0.0)) || self.beta_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("beta schedule must be positive and increasing"));
        }
        Ok(())
    }
}

/// Dirichlet data on the side walls and the lid, one field per component.
/// Only wall and lid nodes are read.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    components: Vec<ScalarField>,
}

impl BoundaryData {
    pub fn new(components: Vec<ScalarField>, support_threshold: f64) -> Result<Self> {
        let cfg = Configuration::new(components, Mode::Segregated)?;
        let grid = cfg.grid().clone();
        for (i, c) in cfg.components.iter().enumerate() {
            for idx in 0..grid.len() {
                if grid.is_box_boundary(idx) && c.at(idx) < 0.0 {
                    return Err(Error::pre(format!("component {} negative on the boundary at {:?}", i + 1, grid.point(idx))));
                }
            }
        }
        for idx in grid.trace_nodes() {
            if grid.is_box_boundary(idx)
                && cfg.components.iter().filter(|c| c.at(idx) > support_threshold).count() > 1
            {
                return Err(Error::pre(format!("boundary data not segregated at {:?}", grid.point(idx))));
            }
        }
        Ok(Self { components: cfg.components })
    }

    /// Samples closed-form data on the boundary nodes.
    pub fn from_fns<F>(grid: Arc<ExtensionGrid>, fs: &[F]) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let comps = fs.iter().map(|f| ScalarField::from_fn(grid.clone(), f)).collect();
        Self::new(comps, 1e-8)
    }

    pub fn grid(&self) -> &Arc<ExtensionGrid> {
        self.components[0].grid()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { components: self.components.iter().map(|f| f.scaled(c)).collect() }
    }

    fn scale(&self) -> f64 {
        let g = self.grid();
        let mut m: f64 = 0.0;
        for c in &self.components {
            for idx in 0..g.len() {
                if g.is_box_boundary(idx) {
                    m = m.max(c.at(idx).abs());
                }
            }
        }
        m
    }

    /// Boundary values on the wall nodes, zero inside.
    fn initial(&self) -> Vec<Vec<f64>> {
        let g = self.grid();
        self.components
            .iter()
            .map(|c| (0..g.len()).map(|i| if g.is_box_boundary(i) { c.at(i) } else { 0.0 }).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub energy: f64,
    pub defect: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub flags: Vec<String>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub configuration: Configuration,
    /// Total energy (Dirichlet plus coupling when penalized).
    pub energy: f64,
    /// `Σ_{i<j} ∫ u_i² u_j²` over the trace.
    pub defect: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Energy after every sweep. In segregated mode the history restarts at
    /// each support change, one entry per stage.
    pub energy_history: Vec<Vec<f64>>,
    pub flags: Vec<String>,
    /// Owner of each trace node (`None` where every component vanishes).
    pub owners: Option<Vec<Option<usize>>>,
}

impl SolveResult {
    pub fn summary(&self, residuals: Vec<f64>) -> SolveSummary {
        SolveSummary {
            energy: self.energy,
            defect: self.defect,
            sweeps: self.sweeps,
            converged: self.converged,
            flags: self.flags.clone(),
            residuals,
        }
    }
}

struct Relaxer<'a> {
    grid: &'a ExtensionGrid,
    colors: [Vec<usize>; 2],
    omega: f64,
    nz: usize,
    buf: Vec<f64>,
}

impl<'a> Relaxer<'a> {
    fn new(grid: &'a ExtensionGrid, omega: Option<f64>) -> Self {
        let longest = (0..grid.dim()).map(|a| grid.hi(a) - grid.lo(a)).fold(0.0, f64::max);
        let omega = omega.unwrap_or(2.0 / (1.0 + std::f64::consts::PI * grid.h() / longest));
        Self { grid, colors: grid.colored_interior(), omega, nz: grid.shape()[grid.n()], buf: Vec::new() }
    }

    #[inline]
    fn neighbour_sum(&self, v: &[f64], p: usize) -> f64 {
        let g = self.grid;
        let d = g.dim();
        let st = g.strides();
        let mut acc = 0.0;
        for &s in &st[..d - 1] {
            acc += v[p + s] + v[p - s];
        }
        acc += v[p + 1] + if p % self.nz == 0 { v[p + 1] } else { v[p - 1] };
        acc
    }

    /// One red-black SOR sweep of every component; returns the largest change.
    ///
    /// `coupling` adds `4βh Σ_{j≠i} u_j²` to the diagonal at trace nodes;
    /// `owners` pins trace nodes of other components to zero.
    fn sweep(&mut self, comps: &mut [Vec<f64>], beta: f64, owners: Option<&[u8]>) -> f64 {
        let d = self.grid.dim() as f64;
        let h = self.grid.h();
        let k = comps.len();
        let mut max_change: f64 = 0.0;
        for color in 0..2 {
            for i in 0..k {
                let mine = std::mem::take(&mut comps[i]);
                let mut out = std::mem::take(&mut self.buf);
                out.clear();
                let nodes = &self.colors[color];
                let this = &*self;
                let others: &[Vec<f64>] = comps;
                let omega = self.omega;
                let nz = self.nz;
                nodes
                    .par_iter()
                    .with_min_len(1024)
                    .map(|&p| {
                        let trace = p % nz == 0;
                        if trace {
                            if let Some(o) = owners {
                                if o[p / nz] as usize != i {
                                    return 0.0;
                                }
                            }
                        }
                        let sum = this.neighbour_sum(&mine, p);
                        let mut diag = 2.0 * d;
                        if trace && beta > 0.0 {
                            let s: f64 = (0..k).filter(|&j| j != i).map(|j| others[j][p] * others[j][p]).sum();
                            diag += 4.0 * beta * h * s;
                        }
                        let target = sum / diag;
                        ((1.0 - omega) * mine[p] + omega * target).max(0.0)
                    })
                    .collect_into_vec(&mut out);
                let mut mine = mine;
                for (&p, &v) in nodes.iter().zip(&out) {
                    max_change = max_change.max((v - mine[p]).abs());
                    mine[p] = v;
                }
                self.buf = out;
                comps[i] = mine;
            }
        }
        max_change
    }

    /// `Σ_{refl nbrs} u / 2d` at a trace node.
    fn replacement(&self, v: &[f64], p: usize) -> f64 {
        self.neighbour_sum(v, p) / (2.0 * self.grid.dim() as f64)
    }
}

/// Dirichlet energy of one component over the stored half-space.
pub fn dirichlet_energy(field: &ScalarField) -> f64 {
    dirichlet_energy_raw(field.grid(), field.values())
}

fn dirichlet_energy_raw(g: &ExtensionGrid, v: &[f64]) -> f64 {
    let d = g.dim();
    let n = g.n();
    let nz = g.shape()[n];
    let st = g.strides();
    let partial: Vec<f64> = (0..g.len())
        .into_par_iter()
        .chunks(CHUNK)
        .map(|chunk| {
            let mut acc = 0.0;
            for p in chunk {
                for a in 0..d {
                    if g.axis_index(p, a) + 1 == g.shape()[a] {
                        continue;
                    }
                    let q = p + st[a];
                    let w = if a != n && p % nz == 0 { 0.5 } else { 1.0 };
                    let diff = v[q] - v[p];
                    acc += w * diff * diff;
                }
            }
            acc
        })
        .collect();
    0.5 * g.h().powi(d as i32 - 2) * ordered_sum(&partial)
}

/// `Σ_{i<j} ∫_{trace} u_i² u_j²`, product trapezoid rule.
pub fn segregation_defect(comps: &[ScalarField]) -> f64 {
    let g = comps[0].grid();
    let vals: Vec<&[f64]> = comps.iter().map(|c| c.values()).collect();
    defect_raw(g, &vals)
}

fn defect_raw(g: &ExtensionGrid, vals: &[&[f64]]) -> f64 {
    let n = g.n();
    let terms: Vec<f64> = g
        .trace_nodes()
        .into_iter()
        .map(|p| {
            let mut w = 1.0;
            for a in 0..n {
                let i = g.axis_index(p, a);
                if i == 0 || i + 1 == g.shape()[a] {
                    w *= 0.5;
                }
            }
            let mut s = 0.0;
            for i in 0..vals.len() {
                for j in i + 1..vals.len() {
                    s += vals[i][p] * vals[i][p] * vals[j][p] * vals[j][p];
                }
            }
            w * s
        })
        .collect();
    ordered_sum(&terms) * g.h().powi(n as i32)
}

fn total_energy(g: &ExtensionGrid, comps: &[Vec<f64>], beta: f64) -> f64 {
    let dir: f64 = comps.iter().map(|v| dirichlet_energy_raw(g, v)).sum();
    if beta > 0.0 {
        let refs: Vec<&[f64]> = comps.iter().map(|v| v.as_slice()).collect();
        dir + beta * defect_raw(g, &refs)
    } else {
        dir
    }
}

struct Stage {
    sweeps: usize,
    converged: bool,
    history: Vec<f64>,
}

fn relax_to_tolerance(
    relaxer: &mut Relaxer<'_>,
    comps: &mut [Vec<f64>],
    beta: f64,
    owners: Option<&[u8]>,
    cfg: &SolveConfig,
    scale: f64,
    budget: usize,
) -> Stage {
    let g = relaxer.grid;
    let mut prev = total_energy(g, comps, beta);
    let mut history = vec![prev];
    let update_tol = cfg.update_tolerance * scale.max(f64::MIN_POSITIVE);
    for s in 1..=budget {
        let change = relaxer.sweep(comps, beta, owners);
        let e = total_energy(g, comps, beta);
        history.push(e);
        let small_drop = prev - e <= cfg.tolerance * e.abs().max(f64::MIN_POSITIVE);
        prev = e;
        if change <= update_tol && small_drop {
            return Stage { sweeps: s, converged: true, history };
        }
    }
    Stage { sweeps: budget, converged: false, history }
}

fn check_compatible(boundary: &BoundaryData) -> Result<()> {
    if boundary.k() > NO_OWNER as usize {
        return Err(Error::param("too many components"));
    }
    Ok(())
}

fn into_fields(grid: &Arc<ExtensionGrid>, comps: Vec<Vec<f64>>) -> Vec<ScalarField> {
    comps
        .into_iter()
        .map(|v| ScalarField::from_values(grid.clone(), v).expect("solver keeps values finite"))
        .collect()
}

/// Minimizes `J_β` for one `β`, starting from `start` (or from the wall data).
pub fn solve_penalized_from(
    boundary: &BoundaryData,
    beta: f64,
    cfg: &SolveConfig,
    start: Option<&Configuration>,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_compatible(boundary)?;
    if !(beta >= 0.0) {
        return Err(Error::param(format!("beta = {beta} must be nonnegative")));
    }
    let grid = boundary.grid().clone();
    let mut comps = boundary.initial();
    if let Some(s) = start {
        if s.grid() != &grid || s.k() != boundary.k() {
            return Err(Error::param("warm start does not match the boundary data"));
        }
        for (c, f) in comps.iter_mut().zip(&s.components) {
            for idx in 0..grid.len() {
                if !grid.is_box_boundary(idx) {
                    c[idx] = f.at(idx).max(0.0);
                }
            }
        }
    }
    let mut relaxer = Relaxer::new(&grid, cfg.omega);
    let stage = relax_to_tolerance(&mut relaxer, &mut comps, beta, None, cfg, boundary.scale(), cfg.max_sweeps);
    let energy = *stage.history.last().expect("history");
    let refs: Vec<&[f64]> = comps.iter().map(|v| v.as_slice()).collect();
    let defect = defect_raw(&grid, &refs);
    let mut flags = Vec::new();
    if !stage.converged {
        flags.push("max-sweeps".to_string());
    }
    Ok(SolveResult {
        configuration: Configuration { components: into_fields(&grid, comps), mode: Mode::Penalized { beta } },
        energy,
        defect,
        sweeps: stage.sweeps,
        converged: stage.converged,
        energy_history: vec![stage.history],
        flags,
        owners: None,
    })
}

pub fn solve_penalized(boundary: &BoundaryData, beta: f64, cfg: &SolveConfig) -> Result<SolveResult> {
    solve_penalized_from(boundary, beta, cfg, None)
}

/// Runs the whole `β` schedule with warm starts; one result per `β`.
pub fn solve_penalized_schedule(boundary: &BoundaryData, cfg: &SolveConfig) -> Result<Vec<SolveResult>> {
    cfg.validate()?;
    let mut out: Vec<SolveResult> = Vec::with_capacity(cfg.beta_schedule.len());
    for &beta in &cfg.beta_schedule {
        let start = out.last().map(|r| &r.configuration);
        let res = solve_penalized_from(boundary, beta, cfg, start)?;
        out.push(res);
    }
    Ok(out)
}

/// Trace owners from harmonic replacement values.
fn project(relaxer: &Relaxer<'_>, comps: &[Vec<f64>], threshold: f64) -> Vec<u8> {
    let g = relaxer.grid;
    let n = g.n();
    let nz = relaxer.nz;
    let trace = g.trace_nodes();
    let k = comps.len();
    // replacement values per trace node, k at a time
    let vals: Vec<f64> = trace
        .par_iter()
        .flat_map_iter(|&p| {
            (0..k).map(move |i| if g.is_box_boundary(p) { comps[i][p] } else { relaxer.replacement(&comps[i], p) })
        })
        .collect();
    let best: Vec<u8> = vals
        .chunks(k)
        .map(|vs| {
            let mut best = NO_OWNER;
            let mut best_v = threshold;
            for (i, &v) in vs.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = i as u8;
                }
            }
            best
        })
        .collect();
    let mut owners = best.clone();
    let value_of = |t: usize, i: u8| vals[t * k + i as usize];
    let mut cleared = vec![false; trace.len()];
    for (t, &p) in trace.iter().enumerate() {
        if g.is_box_boundary(p) {
            continue;
        }
        let a = best[t];
        if a == NO_OWNER {
            continue;
        }
        for ax in 0..n {
            let Some(q) = g.neighbor(p, ax, true) else { continue };
            let tq = q / nz;
            let b = best[tq];
            if b == NO_OWNER || b == a {
                continue;
            }
            // linear crossing of u_a - u_b along the edge
            let mp = value_of(t, a) - value_of(t, b);
            let mq = value_of(tq, b) - value_of(tq, a);
            if mp <= mq && !g.is_box_boundary(p) {
                cleared[t] = true;
            }
            if mq <= mp && !g.is_box_boundary(q) {
                cleared[tq] = true;
            }
        }
    }
    for (t, c) in cleared.iter().enumerate() {
        if *c {
            owners[t] = NO_OWNER;
        }
    }
    // wall nodes keep the owner given by the data
    for (t, &p) in trace.iter().enumerate() {
        if g.is_box_boundary(p) {
            owners[t] = best[t];
        }
    }
    owners
}

fn support_hash(owners: &[u8]) -> u64 {
    let mut h = DefaultHasher::new();
    owners.hash(&mut h);
    h.finish()
}

fn apply_owners(comps: &mut [Vec<f64>], owners: &[u8], grid: &ExtensionGrid) {
    let nz = grid.shape()[grid.n()];
    for (i, c) in comps.iter_mut().enumerate() {
        for (t, &o) in owners.iter().enumerate() {
            let p = t * nz;
            if o as usize != i && !grid.is_box_boundary(p) {
                c[p] = 0.0;
            }
        }
    }
}

/// Segregated minimizer by alternating relaxation with fixed trace supports
/// and re-projection of the supports.
pub fn solve_segregated(boundary: &BoundaryData, cfg: &SolveConfig) -> Result<SolveResult> {
    cfg.validate()?;
    check_compatible(boundary)?;
    let grid = boundary.grid().clone();
    let scale = boundary.scale();
    let mut comps = boundary.initial();
    let mut relaxer = Relaxer::new(&grid, cfg.omega);
    let mut flags = Vec::new();
    let mut histories = Vec::new();

    let init = relax_to_tolerance(&mut relaxer, &mut comps, 0.0, None, cfg, scale, cfg.max_sweeps);
    let mut sweeps = init.sweeps;
    let mut converged = false;
    let mut owners = project(&relaxer, &comps, cfg.support_threshold * scale);
    let mut seen: Vec<(u64, Vec<u8>)> = vec![(support_hash(&owners), owners.clone())];

    while sweeps < cfg.max_sweeps {
        apply_owners(&mut comps, &owners, &grid);
        let stage =
            relax_to_tolerance(&mut relaxer, &mut comps, 0.0, Some(&owners), cfg, scale, cfg.max_sweeps - sweeps);
        sweeps += stage.sweeps;
        histories.push(stage.history);
        if !stage.converged {
            break;
        }
        let next = project(&relaxer, &comps, cfg.support_threshold * scale);
        if next == owners {
            converged = true;
            break;
        }
        let hash = support_hash(&next);
        if let Some(pos) = seen.iter().position(|(h, o)| *h == hash && *o == next) {
            // support cycle: freeze the smallest member and finish
            let smallest = seen[pos..].iter().map(|(_, o)| o).min().expect("non-empty cycle").clone();
            flags.push(format!("support-cycle-frozen(period {})", seen.len() - pos));
            owners = smallest;
            apply_owners(&mut comps, &owners, &grid);
            let budget = cfg.max_sweeps.saturating_sub(sweeps).max(1);
            let stage = relax_to_tolerance(&mut relaxer, &mut comps, 0.0, Some(&owners), cfg, scale, budget);
            sweeps += stage.sweeps;
            converged = stage.converged;
            histories.push(stage.history);
            break;
        }
        seen.push((hash, next.clone()));
        owners = next;
    }
    if !converged {
        flags.push("max-sweeps".to_string());
    }
    apply_owners(&mut comps, &owners, &grid);
    let energy = total_energy(&grid, &comps, 0.0);
    let refs: Vec<&[f64]> = comps.iter().map(|v| v.as_slice()).collect();
    let defect = defect_raw(&grid, &refs);
    let owners = owners.iter().map(|&o| (o != NO_OWNER).then_some(o as usize)).collect();
    Ok(SolveResult {
        configuration: Configuration { components: into_fields(&grid, comps), mode: Mode::Segregated },
        energy,
        defect,
        sweeps,
        converged,
        energy_history: histories,
        flags,
        owners: Some(owners),
    })
}

/// Per-component `sup |Δ_h u_i|` over interior nodes away from the trace
/// zero set of `u_i` and at least `2h` from its boundary.
pub fn residual_report(cfg: &Configuration, support_threshold: f64) -> Vec<f64> {
    let g = cfg.grid();
    let d = g.dim();
    let nz = g.shape()[g.n()];
    cfg.components
        .iter()
        .map(|f| {
            let v = f.values();
            let in_support = |p: usize| v[p] > support_threshold;
            // trace nodes on either side of the support boundary
            let mut near = vec![false; g.len()];
            for p in g.trace_nodes() {
                let edge = (0..g.n()).any(|a| {
                    [true, false]
                        .iter()
                        .filter_map(|&fw| g.neighbor(p, a, fw))
                        .any(|q| in_support(q) != in_support(p))
                });
                if !edge {
                    continue;
                }
                let m = g.unravel(p);
                let offsets = 3usize.pow(d as u32);
                for o in 0..offsets {
                    let mut rem = o;
                    let mut ok = true;
                    let mut idx = 0;
                    for k in 0..d {
                        let step = (rem % 3) as i64 - 1;
                        rem /= 3;
                        let mut i = m[k] as i64 + step;
                        if k == g.n() {
                            i = i.abs();
                        }
                        if i < 0 || i >= g.shape()[k] as i64 {
                            ok = false;
                            break;
                        }
                        idx += i as usize * g.strides()[k];
                    }
                    if ok {
                        near[idx] = true;
                    }
                }
            }
            (0..g.len())
                .into_par_iter()
                .filter(|&p| !g.is_box_boundary(p) && !near[p] && !(p % nz == 0 && !in_support(p)))
                .map(|p| f.laplacian(p).expect("interior").abs())
                .reduce(|| 0.0, f64::max)
        })
        .collect()
}
