// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

//! Reduced grids and the monotone wide-stencil Perron iteration.
//!
//! Both the toric Monge–Ampère problem and the projectivized Finsler problem
//! reduce, under torus symmetry, to finding the largest function `Φ(b, y)` on
//! `[0,1]^m × [−Y, Y]` that is jointly convex, has fiber slopes in `[0, 1]`
//! and takes prescribed values over the base boundary. Convexity is imposed
//! through midpoint inequalities along a fixed list of lattice directions.
//! The fiber coordinate is always the last axis and varies fastest.

use crate::error::{Error, Result};
use crate::toric::{slope_clamped_envelope, LogGrid};

/// Lattice over `[0,1]^base_dim × [−Y, Y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedGrid {
    pub base_dim: usize,
    pub n_base: usize,
    pub fiber: LogGrid,
}

impl ReducedGrid {
    pub fn new(base_dim: usize, n_base: usize, fiber: LogGrid) -> Result<Self> {
        if !(1..=2).contains(&base_dim) {
            return Err(Error::Unsupported(format!("base dimension {base_dim}")));
        }
        if n_base < 3 {
            return Err(Error::InvalidConfig(
                "base grid needs at least three nodes per axis".into(),
            ));
        }
        Ok(Self {
            base_dim,
            n_base,
            fiber,
        })
    }

    pub fn base_len(&self) -> usize {
        self.n_base.pow(self.base_dim as u32)
    }

    pub fn len(&self) -> usize {
        self.base_len() * self.fiber.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.n_base; self.base_dim];
        d.push(self.fiber.n);
        d
    }

    pub fn h_base(&self) -> f64 {
        1.0 / (self.n_base - 1) as f64
    }

    pub fn index(&self, b: usize, i: usize) -> usize {
        b * self.fiber.n + i
    }

    pub fn base_multi(&self, b: usize) -> Vec<usize> {
        let mut c = vec![0; self.base_dim];
        let mut r = b;
        for a in (0..self.base_dim).rev() {
            c[a] = r % self.n_base;
            r /= self.n_base;
        }
        c
    }

    pub fn base_coords(&self, b: usize) -> Vec<f64> {
        self.base_multi(b)
            .into_iter()
            .map(|c| c as f64 * self.h_base())
            .collect()
    }

    pub fn is_base_boundary(&self, b: usize) -> bool {
        self.base_multi(b)
            .iter()
            .any(|&c| c == 0 || c + 1 == self.n_base)
    }

    /// Nodes that are neither on the base boundary nor on a fiber edge.
    pub fn is_interior(&self, idx: usize) -> bool {
        let (b, i) = (idx / self.fiber.n, idx % self.fiber.n);
        !self.is_base_boundary(b) && i > 0 && i + 1 < self.fiber.n
    }
}

/// A lattice direction with its flat offset and physical squared length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dir {
    pub offs: Vec<isize>,
    pub flat: isize,
    pub len2: f64,
}

fn make_dir(dims: &[usize], spacing: &[f64], offs: Vec<isize>) -> Dir {
    let mut flat = 0isize;
    let mut stride = 1isize;
    for a in (0..dims.len()).rev() {
        flat += offs[a] * stride;
        stride *= dims[a] as isize;
    }
    let len2 = offs
        .iter()
        .zip(spacing)
        .map(|(&o, &h)| (o as f64 * h).powi(2))
        .sum();
    Dir { offs, flat, len2 }
}

fn base_directions(base_dim: usize) -> Vec<Vec<isize>> {
    match base_dim {
        1 => vec![vec![1]],
        _ => vec![
            vec![1, 0],
            vec![0, 1],
            vec![1, 1],
            vec![1, -1],
            vec![1, 2],
            vec![2, 1],
            vec![1, -2],
            vec![2, -1],
        ],
    }
}

/// Stencil of base directions tilted by up to `M` fiber cells, plus the pure
/// fiber direction. `M` covers physical fiber slopes up to `reach`.
pub fn stencil(grid: &ReducedGrid, reach: f64) -> Vec<Dir> {
    let dims = grid.dims();
    let mut spacing = vec![grid.h_base(); grid.base_dim];
    spacing.push(grid.fiber.spacing());
    let m = ((reach * grid.h_base() / grid.fiber.spacing()).ceil() as isize)
        .clamp(0, grid.fiber.n as isize - 1);
    let mut dirs = Vec::new();
    for bd in base_directions(grid.base_dim) {
        for k in -m..=m {
            let mut offs = bd.clone();
            offs.push(k);
            dirs.push(make_dir(&dims, &spacing, offs));
        }
    }
    let mut fib = vec![0; grid.base_dim];
    fib.push(1);
    dirs.push(make_dir(&dims, &spacing, fib));
    dirs
}

/// Base-only stencil on an `n^dim` lattice of spacing `h`.
pub(crate) fn base_stencil(base_dim: usize, n: usize) -> Vec<Dir> {
    let dims = vec![n; base_dim];
    let spacing = vec![1.0 / (n - 1) as f64; base_dim];
    base_directions(base_dim)
        .into_iter()
        .map(|o| make_dir(&dims, &spacing, o))
        .collect()
}

/// Extra local constraints along the last axis.
#[derive(Debug, Clone, Copy, Default)]
pub struct FiberConstraints {
    /// Fiber spacing; when set, difference quotients are kept in `[0, 1]`.
    pub slope_h: Option<f64>,
    /// `(ln w₋, ln w₊)`: `e^{Φ/2}` must be convex in `s = e^{y/2}`.
    pub norm_logw: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SweepStats {
    pub iterations: usize,
    pub residual: f64,
    /// Nodes where the upper barrier was the binding constraint at the end.
    pub clamp_active: usize,
}

struct Engine<'a> {
    dims: &'a [usize],
    dirs: &'a [Dir],
    fiber: FiberConstraints,
    upper: Option<&'a [f64]>,
}

fn decode(dims: &[usize], mut idx: usize, out: &mut [usize]) {
    for a in (0..dims.len()).rev() {
        out[a] = idx % dims[a];
        idx /= dims[a];
    }
}

#[inline]
fn fits(dims: &[usize], c: &[usize], d: &Dir) -> bool {
    d.offs
        .iter()
        .zip(c.iter().zip(dims))
        .all(|(&o, (&ci, &n))| {
            let lo = ci as isize - o.abs();
            let hi = ci as isize + o.abs();
            lo >= 0 && hi < n as isize
        })
}

impl Engine<'_> {
    /// Largest admissible value at `idx` given its neighbors; the flag says
    /// whether the upper barrier was binding.
    fn candidate(&self, v: &[f64], idx: usize, c: &[usize]) -> (f64, bool) {
        let mut best = f64::INFINITY;
        for d in self.dirs {
            if fits(self.dims, c, d) {
                let a = v[(idx as isize + d.flat) as usize];
                let b = v[(idx as isize - d.flat) as usize];
                best = best.min(0.5 * (a + b));
            }
        }
        let last = self.dims.len() - 1;
        let (i, n) = (c[last], self.dims[last]);
        if let Some(h) = self.fiber.slope_h {
            if i > 0 {
                best = best.min(v[idx - 1] + h);
            }
            if i + 1 < n {
                best = best.min(v[idx + 1]);
            }
        }
        if let Some((lm, lp)) = self.fiber.norm_logw {
            if i > 0 && i + 1 < n {
                let a = lm + 0.5 * v[idx - 1];
                let b = lp + 0.5 * v[idx + 1];
                let m = a.max(b);
                best = best.min(2.0 * (m + ((a - m).exp() + (b - m).exp()).ln()));
            }
        }
        match self.upper {
            Some(u) if u[idx] < best => (u[idx], true),
            _ => (best, false),
        }
    }

    fn pass(
        &self,
        v: &mut [f64],
        fixed: &[bool],
        order: impl Iterator<Item = usize>,
        c: &mut [usize],
    ) -> f64 {
        let mut change = 0.0f64;
        for idx in order {
            if fixed[idx] {
                continue;
            }
            decode(self.dims, idx, c);
            let (new, _) = self.candidate(v, idx, c);
            change = change.max((new - v[idx]).abs());
            v[idx] = new;
        }
        change
    }
}

/// Symmetric Gauss–Seidel Perron iteration.
///
/// Starting from a subsolution, every free node is repeatedly replaced by the
/// largest value compatible with the constraints at that node. Iteration stops
/// when a forward/backward pair changes no node by more than `tol`.
#[allow(clippy::too_many_arguments)]
pub fn perron_sweep(
    dims: &[usize],
    values: &mut [f64],
    fixed: &[bool],
    dirs: &[Dir],
    fiber: FiberConstraints,
    upper: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<SweepStats> {
    let eng = Engine {
        dims,
        dirs,
        fiber,
        upper,
    };
    let n = values.len();
    let mut c = vec![0usize; dims.len()];
    let mut iterations = 0;
    loop {
        let a = eng.pass(values, fixed, 0..n, &mut c);
        let b = eng.pass(values, fixed, (0..n).rev(), &mut c);
        iterations += 1;
        let residual = a.max(b);
        if residual < tol {
            let mut clamp_active = 0;
            for idx in 0..n {
                if !fixed[idx] {
                    decode(dims, idx, &mut c);
                    if eng.candidate(values, idx, &c).1 {
                        clamp_active += 1;
                    }
                }
            }
            return Ok(SweepStats {
                iterations,
                residual,
                clamp_active,
            });
        }
        if iterations >= max_iter {
            return Err(Error::MaxIterExceeded {
                iterations,
                residual,
            });
        }
    }
}

/// Perron iteration that solves each fiber exactly given the others.
///
/// For a fixed base node the constraints along tilted directions only read
/// other fibers, so they give an upper bound on the fiber, and the largest
/// fiber below it is a slope-clamped lower hull (alternated with the norm hull
/// when that constraint is on). The fiber ends are fixed. A pointwise sweep
/// finishes the iteration and supplies the stopping test.
#[allow(clippy::too_many_arguments)]
pub fn line_perron_sweep(
    grid: &ReducedGrid,
    values: &mut [f64],
    fixed: &[bool],
    dirs: &[Dir],
    fiber: FiberConstraints,
    upper: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<SweepStats> {
    let dims = grid.dims();
    let nf = grid.fiber.n;
    let xs = grid.fiber.nodes();
    let tilted: Vec<&Dir> = dirs
        .iter()
        .filter(|d| d.offs[..grid.base_dim].iter().any(|&o| o != 0))
        .collect();
    let (lo, hi) = match fiber.slope_h {
        Some(_) => (0.0, 1.0),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    };
    let free: Vec<usize> = (0..grid.base_len())
        .filter(|&b| !grid.is_base_boundary(b))
        .collect();
    let mut c = vec![0usize; dims.len()];
    let mut bound = vec![0.0; nf];
    let mut iterations = 0;
    let mut row = |v: &mut [f64], b: usize, c: &mut [usize]| -> f64 {
        let start = b * nf;
        bound[0] = v[start];
        bound[nf - 1] = v[start + nf - 1];
        for i in 1..nf - 1 {
            let idx = start + i;
            decode(&dims, idx, c);
            let mut best = upper.map_or(f64::INFINITY, |u| u[idx]);
            for d in &tilted {
                if fits(&dims, c, d) {
                    let a = v[(idx as isize + d.flat) as usize];
                    let e = v[(idx as isize - d.flat) as usize];
                    best = best.min(0.5 * (a + e));
                }
            }
            bound[i] = best;
        }
        let mut hull = slope_clamped_envelope(&xs, &bound, lo, hi);
        if fiber.norm_logw.is_some() {
            for _ in 0..50 {
                let next = slope_clamped_envelope(&xs, &largest_norm_below(grid.fiber, &hull), lo, hi);
                let moved = next
                    .iter()
                    .zip(&hull)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                hull = next;
                if moved < 0.1 * tol {
                    break;
                }
            }
        }
        let mut change = 0.0f64;
        for i in 1..nf - 1 {
            change = change.max((hull[i] - v[start + i]).abs());
            v[start + i] = hull[i];
        }
        change
    };
    loop {
        let mut change = 0.0f64;
        for &b in &free {
            change = change.max(row(values, b, &mut c));
        }
        for &b in free.iter().rev() {
            change = change.max(row(values, b, &mut c));
        }
        iterations += 1;
        if change < tol {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::MaxIterExceeded {
                iterations,
                residual: change,
            });
        }
    }
    let mut stats = perron_sweep(
        &dims,
        values,
        fixed,
        dirs,
        fiber,
        upper,
        tol,
        max_iter - iterations,
    )?;
    stats.iterations += iterations;
    Ok(stats)
}

/// Residual of the fixed-point relation at one node: positive when the node
/// sits below the largest admissible value.
pub fn node_slack(
    dims: &[usize],
    values: &[f64],
    dirs: &[Dir],
    fiber: FiberConstraints,
    upper: Option<&[f64]>,
    idx: usize,
) -> f64 {
    let eng = Engine {
        dims,
        dirs,
        fiber,
        upper,
    };
    let mut c = vec![0; dims.len()];
    decode(dims, idx, &mut c);
    eng.candidate(values, idx, &c).0 - values[idx]
}

/// Smallest normalized second difference `Δ_d Φ / |d|²` over the stencil.
pub fn min_curvature_at(dims: &[usize], values: &[f64], dirs: &[Dir], idx: usize) -> f64 {
    let mut c = vec![0; dims.len()];
    decode(dims, idx, &mut c);
    let mut best = f64::INFINITY;
    for d in dirs {
        if fits(dims, &c, d) {
            let a = values[(idx as isize + d.flat) as usize];
            let b = values[(idx as isize - d.flat) as usize];
            best = best.min((a + b - 2.0 * values[idx]) / d.len2);
        }
    }
    best
}

/// Summary of `|min_d Δ_d Φ / |d|²|` over interior nodes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Degeneracy {
    pub median: f64,
    pub max: f64,
    pub nodes: usize,
}

pub fn degeneracy(grid: &ReducedGrid, values: &[f64], dirs: &[Dir]) -> Degeneracy {
    let dims = grid.dims();
    let mut v: Vec<f64> = (0..grid.len())
        .filter(|&i| grid.is_interior(i))
        .map(|i| min_curvature_at(&dims, values, dirs, i).abs())
        .collect();
    v.sort_by(f64::total_cmp);
    let nodes = v.len();
    let median = if nodes == 0 { 0.0 } else { v[nodes / 2] };
    Degeneracy {
        median,
        max: v.last().copied().unwrap_or(0.0),
        nodes,
    }
}

/// Boundary data: a fiber profile for every base-boundary point.
pub struct BoundaryData {
    slice: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BoundaryData")
    }
}

impl BoundaryData {
    pub fn from_fn(f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { slice: Box::new(f) }
    }

    /// Data on the two ends `b = 0` and `b = 1` of a one-dimensional base.
    pub fn ends(a: Vec<f64>, b: Vec<f64>) -> Self {
        Self::from_fn(move |t| if t[0] < 0.5 { a.clone() } else { b.clone() })
    }

    pub fn slice(&self, base: &[f64]) -> Vec<f64> {
        (self.slice)(base)
    }

    /// Values on every base-boundary node; interior entries are NaN.
    pub fn sample(&self, grid: &ReducedGrid) -> Result<Vec<f64>> {
        let nf = grid.fiber.n;
        let mut out = vec![f64::NAN; grid.len()];
        for b in 0..grid.base_len() {
            if grid.is_base_boundary(b) {
                let s = self.slice(&grid.base_coords(b));
                if s.len() != nf {
                    return Err(Error::DimensionMismatch {
                        expected: nf,
                        found: s.len(),
                    });
                }
                out[b * nf..(b + 1) * nf].copy_from_slice(&s);
            }
        }
        Ok(out)
    }
}

/// Largest convex function on the base lattice with the given boundary values.
///
/// `vals` holds one value per base node; only boundary entries are read.
pub(crate) fn base_envelope(
    base_dim: usize,
    n: usize,
    vals: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    if base_dim == 1 {
        let (a, b) = (vals[0], vals[n - 1]);
        return Ok((0..n)
            .map(|j| a + (b - a) * j as f64 / (n - 1) as f64)
            .collect());
    }
    let dims = vec![n; base_dim];
    let boundary = |b: usize| {
        let mut c = vec![0; base_dim];
        decode(&dims, b, &mut c);
        c.iter().any(|&x| x == 0 || x + 1 == n)
    };
    let fixed: Vec<bool> = (0..vals.len()).map(boundary).collect();
    let lo = (0..vals.len())
        .filter(|&b| fixed[b])
        .map(|b| vals[b])
        .fold(f64::INFINITY, f64::min);
    let mut v: Vec<f64> = (0..vals.len())
        .map(|b| if fixed[b] { vals[b] } else { lo })
        .collect();
    let dirs = base_stencil(base_dim, n);
    perron_sweep(
        &dims,
        &mut v,
        &fixed,
        &dirs,
        FiberConstraints::default(),
        None,
        tol,
        max_iter,
    )?;
    Ok(v)
}

/// Options for [`envelope`].
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeOptions {
    pub reach: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub norm: bool,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            reach: 40.0,
            tol: 1e-10,
            max_iter: 200_000,
            norm: false,
        }
    }
}

/// Fixed (Dirichlet) mask: base boundary and the two fiber edges.
pub fn fixed_mask(grid: &ReducedGrid) -> Vec<bool> {
    let nf = grid.fiber.n;
    (0..grid.len())
        .map(|idx| {
            let (b, i) = (idx / nf, idx % nf);
            grid.is_base_boundary(b) || i == 0 || i + 1 == nf
        })
        .collect()
}

/// Fills the fiber-edge rows from the base envelope of their boundary values.
pub(crate) fn fill_fiber_edges(
    grid: &ReducedGrid,
    v: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<()> {
    let nf = grid.fiber.n;
    for i in [0, nf - 1] {
        let row: Vec<f64> = (0..grid.base_len()).map(|b| v[grid.index(b, i)]).collect();
        let env = base_envelope(grid.base_dim, grid.n_base, &row, tol, max_iter)?;
        for (b, e) in env.into_iter().enumerate() {
            v[grid.index(b, i)] = e;
        }
    }
    Ok(())
}

/// `(ln w₋, ln w₊)` for three-point convexity in `s = e^{y/2}` on a uniform
/// `y` grid of spacing `h`.
pub fn norm_weights(h: f64) -> (f64, f64) {
    let r = (0.5 * h).exp();
    ((r / (r + 1.0)).ln(), (1.0 / (r + 1.0)).ln())
}

/// Largest fiberwise-convex-in-`s` profile below `f` (values of `2·log g`),
/// keeping the endpoints.
pub fn largest_norm_below(fiber: LogGrid, f: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = fiber.nodes().into_iter().map(|y| (0.5 * y).exp()).collect();
    let g: Vec<f64> = f.iter().map(|v| (0.5 * v).exp()).collect();
    slope_clamped_envelope(&s, &g, f64::NEG_INFINITY, f64::INFINITY)
        .into_iter()
        .map(|x| 2.0 * x.ln())
        .collect()
}

fn envelope_constraints(grid: &ReducedGrid, norm: bool) -> FiberConstraints {
    FiberConstraints {
        slope_h: Some(grid.fiber.spacing()),
        norm_logw: norm.then(|| norm_weights(grid.fiber.spacing())),
    }
}

/// Largest amount by which a free node of an envelope could still be raised
/// without breaking a constraint at that node.
pub fn envelope_slack(
    grid: &ReducedGrid,
    values: &[f64],
    upper: Option<&[f64]>,
    opts: &EnvelopeOptions,
) -> f64 {
    let fixed = fixed_mask(grid);
    let dirs = stencil(grid, opts.reach);
    let dims = grid.dims();
    let fiber = envelope_constraints(grid, opts.norm);
    (0..grid.len())
        .filter(|&idx| !fixed[idx])
        .map(|idx| node_slack(&dims, values, &dirs, fiber, upper, idx))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Discrete Perron envelope on a reduced grid.
///
/// `boundary` carries values on the base boundary (other entries ignored).
/// The fiber edges are Dirichlet rows given by the base envelope of their
/// boundary values. The iteration starts from the base-constant rooftop.
pub fn envelope(
    grid: &ReducedGrid,
    boundary: &[f64],
    upper: Option<&[f64]>,
    opts: &EnvelopeOptions,
) -> Result<(Vec<f64>, SweepStats)> {
    let nf = grid.fiber.n;
    let fixed = fixed_mask(grid);
    let mut v = vec![f64::NAN; grid.len()];
    let mut floor = vec![f64::INFINITY; nf];
    for b in 0..grid.base_len() {
        if grid.is_base_boundary(b) {
            for i in 0..nf {
                let x = boundary[grid.index(b, i)];
                v[grid.index(b, i)] = x;
                floor[i] = floor[i].min(x);
            }
        }
    }
    fill_fiber_edges(grid, &mut v, opts.tol * 1e-2, opts.max_iter)?;
    let xs = grid.fiber.nodes();
    let mut roof = slope_clamped_envelope(&xs, &floor, 0.0, 1.0);
    if opts.norm {
        roof = largest_norm_below(grid.fiber, &roof);
    }
    for (idx, val) in v.iter_mut().enumerate() {
        if !fixed[idx] {
            *val = roof[idx % nf];
            if let Some(u) = upper {
                *val = val.min(u[idx]);
            }
        }
    }
    let fiber = envelope_constraints(grid, opts.norm);
    let dirs = stencil(grid, opts.reach);
    let stats = line_perron_sweep(
        grid,
        &mut v,
        &fixed,
        &dirs,
        fiber,
        upper,
        opts.tol,
        opts.max_iter,
    )?;
    Ok((v, stats))
}

/// Solves the linear trace equation `Σ_a Δ_a Φ / Δ_a B = 0` by line
/// Gauss–Seidel along the fiber.
///
/// Base-boundary rows are Dirichlet. At the fiber edges the second-difference
/// ratio is replaced by the ratio of first differences, which is the limit of
/// `Φ_yy / B_yy` at the two poles of the fiber.
pub fn trace_solve(
    grid: &ReducedGrid,
    boundary: &[f64],
    background: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let nf = grid.fiber.n;
    let h = grid.fiber.spacing();
    let nb = grid.n_base;
    let base_strides: Vec<usize> = (0..grid.base_dim)
        .map(|a| nb.pow((grid.base_dim - 1 - a) as u32))
        .collect();

    // per-node axis weights 1/Δ_a B
    let mut wa = vec![0.0; grid.len() * grid.base_dim];
    let mut wy = vec![0.0; grid.len()];
    for b in 0..grid.base_len() {
        if grid.is_base_boundary(b) {
            continue;
        }
        for i in 0..nf {
            let idx = grid.index(b, i);
            for (a, &st) in base_strides.iter().enumerate() {
                let off = st * nf;
                let d = background[idx + off] + background[idx - off] - 2.0 * background[idx];
                if d.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                    let mut dir = vec![0; grid.base_dim + 1];
                    dir[a] = 1;
                    return Err(Error::InsufficientStrength {
                        direction: dir,
                        margin: d,
                    });
                }
                wa[idx * grid.base_dim + a] = 1.0 / d;
            }
            let d = if i == 0 {
                background[idx + 1] - background[idx]
            } else if i + 1 == nf {
                h - (background[idx] - background[idx - 1])
            } else {
                background[idx + 1] + background[idx - 1] - 2.0 * background[idx]
            };
            if d.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                let mut dir = vec![0; grid.base_dim + 1];
                dir[grid.base_dim] = 1;
                return Err(Error::InsufficientStrength {
                    direction: dir,
                    margin: d,
                });
            }
            wy[idx] = 1.0 / d;
        }
    }

    // start from the base-constant mean of the boundary data
    let mut v = vec![0.0; grid.len()];
    let mut count = 0.0;
    let mut mean = vec![0.0; nf];
    for b in 0..grid.base_len() {
        if grid.is_base_boundary(b) {
            count += 1.0;
            for i in 0..nf {
                mean[i] += boundary[grid.index(b, i)];
            }
        }
    }
    for b in 0..grid.base_len() {
        for i in 0..nf {
            let idx = grid.index(b, i);
            v[idx] = if grid.is_base_boundary(b) {
                boundary[idx]
            } else {
                mean[i] / count
            };
        }
    }

    let interior: Vec<usize> = (0..grid.base_len())
        .filter(|&b| !grid.is_base_boundary(b))
        .collect();
    let (mut lo, mut di, mut up, mut rhs) =
        (vec![0.0; nf], vec![0.0; nf], vec![0.0; nf], vec![0.0; nf]);
    let mut line = |v: &mut [f64], b: usize| -> f64 {
        for i in 0..nf {
            let idx = grid.index(b, i);
            let mut sw = 0.0;
            let mut acc = 0.0;
            for (a, &st) in base_strides.iter().enumerate() {
                let off = st * nf;
                let w = wa[idx * grid.base_dim + a];
                sw += w;
                acc += w * (v[idx + off] + v[idx - off]);
            }
            let w = wy[idx];
            if i == 0 {
                lo[i] = 0.0;
                up[i] = w;
                di[i] = -w - 2.0 * sw;
                rhs[i] = -acc;
            } else if i + 1 == nf {
                lo[i] = w;
                up[i] = 0.0;
                di[i] = -w - 2.0 * sw;
                rhs[i] = -acc - w * h;
            } else {
                lo[i] = w;
                up[i] = w;
                di[i] = -2.0 * w - 2.0 * sw;
                rhs[i] = -acc;
            }
        }
        // Thomas algorithm
        for i in 1..nf {
            let m = lo[i] / di[i - 1];
            di[i] -= m * up[i - 1];
            rhs[i] -= m * rhs[i - 1];
        }
        let mut change = 0.0f64;
        let mut next = 0.0;
        for i in (0..nf).rev() {
            let x = if i + 1 == nf {
                rhs[i] / di[i]
            } else {
                (rhs[i] - up[i] * next) / di[i]
            };
            next = x;
            let idx = grid.index(b, i);
            change = change.max((x - v[idx]).abs());
            v[idx] = x;
        }
        change
    };
    let mut iterations = 0;
    loop {
        let mut change = 0.0f64;
        for &b in &interior {
            change = change.max(line(&mut v, b));
        }
        for &b in interior.iter().rev() {
            change = change.max(line(&mut v, b));
        }
        iterations += 1;
        if change < tol {
            return Ok(v);
        }
        if iterations >= max_iter {
            return Err(Error::MaxIterExceeded {
                iterations,
                residual: change,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toric::softplus;

    #[test]
    fn grid_layout_round_trips() {
        let g = ReducedGrid::new(2, 5, LogGrid::new(4.0, 9)).unwrap();
        assert_eq!(g.len(), 225);
        assert_eq!(g.base_multi(7), vec![1, 2]);
        assert!(g.is_base_boundary(0) && !g.is_base_boundary(6));
        let d = stencil(&g, 1.0);
        let s = d.iter().find(|d| d.offs == vec![1, 0, 0]).unwrap();
        assert_eq!(s.flat, 45);
    }

    #[test]
    fn constant_in_base_data_gives_base_constant_envelope() {
        let fiber = LogGrid::new(6.0, 49);
        let g = ReducedGrid::new(1, 9, fiber).unwrap();
        let prof: Vec<f64> = fiber.nodes().into_iter().map(softplus).collect();
        let bd = BoundaryData::ends(prof.clone(), prof.clone())
            .sample(&g)
            .unwrap();
        let (v, _) = envelope(&g, &bd, None, &EnvelopeOptions::default()).unwrap();
        for b in 0..g.base_len() {
            for i in 0..fiber.n {
                assert!((v[g.index(b, i)] - prof[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn linear_data_is_reproduced() {
        let fiber = LogGrid::new(4.0, 33);
        let g = ReducedGrid::new(2, 7, fiber).unwrap();
        let f = |t: &[f64], y: f64| 0.3 * t[0] - 0.2 * t[1] + 0.5 * y;
        let bd =
            BoundaryData::from_fn(move |t| fiber.nodes().into_iter().map(|y| f(t, y)).collect());
        let (v, _) = envelope(
            &g,
            &bd.sample(&g).unwrap(),
            None,
            &EnvelopeOptions::default(),
        )
        .unwrap();
        for b in 0..g.base_len() {
            let t = g.base_coords(b);
            for (i, y) in fiber.nodes().into_iter().enumerate() {
                let e = (v[g.index(b, i)] - f(&t, y)).abs();
                assert!(e < 1e-7, "b={b} i={i} err={e}");
            }
        }
    }

    #[test]
    fn norm_weights_reproduce_linear_g() {
        let h = 0.3;
        let (lm, lp) = norm_weights(h);
        // g = s is affine in s, so three-point convexity is tight
        let y = 0.7;
        let f = |y: f64| 2.0 * (0.5 * y).exp().ln();
        let rhs = 2.0 * ((lm + 0.5 * f(y - h)).exp() + (lp + 0.5 * f(y + h)).exp()).ln();
        assert!((rhs - f(y)).abs() < 1e-12);
    }

    #[test]
    fn background_is_a_strict_subsolution() {
        let fiber = LogGrid::new(6.0, 25);
        let g = ReducedGrid::new(1, 9, fiber).unwrap();
        let bg: Vec<f64> = (0..g.len())
            .map(|idx| {
                let t = g.base_coords(idx / fiber.n)[0];
                softplus(fiber.node(idx % fiber.n)) + t * t - t
            })
            .collect();
        let v = trace_solve(&g, &bg, &bg, 1e-12, 100_000).unwrap();
        // the background is a strict subsolution, so the solution lies above it
        let mid = g.index(4, 12);
        assert!(v[mid] > bg[mid]);
    }
}
