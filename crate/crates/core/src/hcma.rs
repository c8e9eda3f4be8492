// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

//! Torus-invariant Dirichlet problems for `(π*ω + i∂∂̄u)^{n+m} = 0` on tubes
//! over CP¹.
//!
//! With full torus symmetry the potential depends on a real base coordinate
//! `t` (or `(t₁, t₂)` over the bidisc tube) and the log-coordinate `x`, and
//! the equation says that `ψ(t, x) = log(1 + eˣ) + u(t, x)` is jointly convex
//! with a degenerate Hessian. Over a one-dimensional base the solution is the
//! affine path of Legendre duals; the finite-difference Perron envelope from
//! [`crate::sweep`] serves as an independent solver for every domain.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sweep::{self, BoundaryData, EnvelopeOptions, ReducedGrid, SweepStats};
use crate::toric::{check_convex, softplus, LogGrid, ToricPotential, TOL_CONVEX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    /// `{0 ≤ Re z ≤ 1}`, base coordinate `t = Re z`.
    Strip,
    /// `{e^{−1} ≤ |w| ≤ 1}`, base coordinate `t = −log|w|`.
    Annulus,
    /// Tube over the unit square, base coordinates `(Re z₁, Re z₂)`.
    Bidisc,
}

/// A symmetric domain with its defining function sampled on the base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub n_base: usize,
    rho: Vec<f64>,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, n_base: usize) -> Result<Self> {
        if n_base < 3 {
            return Err(Error::InvalidConfig("base grid needs at least three nodes".into()));
        }
        let h = 1.0 / (n_base - 1) as f64;
        let q = |j: usize| {
            let t = j as f64 * h;
            t * t - t
        };
        let rho = match kind {
            DomainKind::Strip | DomainKind::Annulus => (0..n_base).map(q).collect(),
            DomainKind::Bidisc => (0..n_base * n_base).map(|b| q(b / n_base) + q(b % n_base)).collect(),
        };
        Ok(Self { kind, n_base, rho })
    }

    pub fn base_dim(&self) -> usize {
        match self.kind {
            DomainKind::Bidisc => 2,
            _ => 1,
        }
    }

    /// Defining function `ρ` on the base nodes (row-major over the base).
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn reduced_grid(&self, fiber: LogGrid) -> Result<ReducedGrid> {
        ReducedGrid::new(self.base_dim(), self.n_base, fiber)
    }

    /// Flags of base nodes lying on the boundary.
    pub fn boundary_flags(&self) -> Vec<bool> {
        let n = self.n_base;
        let edge = |j: usize| j == 0 || j + 1 == n;
        match self.kind {
            DomainKind::Bidisc => (0..n * n).map(|b| edge(b / n) || edge(b % n)).collect(),
            _ => (0..n).map(edge).collect(),
        }
    }

    /// Base coordinate of a point of a one-dimensional domain.
    pub fn base_coordinate(&self, z: Complex64) -> f64 {
        match self.kind {
            DomainKind::Annulus => -z.norm().ln(),
            _ => z.re,
        }
    }

    /// Smallest eigenvalue of the discrete base Hessian of `ρ`.
    pub fn rho_convexity(&self) -> f64 {
        let h2 = (1.0 / (self.n_base - 1) as f64).powi(2);
        // ρ is a sum of one-variable quadratics; each axis contributes 2
        let n = self.n_base;
        let axis = |j: usize| (self.rho[j - 1] + self.rho[j + 1] - 2.0 * self.rho[j]) / h2;
        match self.kind {
            DomainKind::Bidisc => {
                let mut m = f64::INFINITY;
                for i in 1..n - 1 {
                    for j in 1..n - 1 {
                        let b = i * n + j;
                        let a1 = (self.rho[b - n] + self.rho[b + n] - 2.0 * self.rho[b]) / h2;
                        let a2 = (self.rho[b - 1] + self.rho[b + 1] - 2.0 * self.rho[b]) / h2;
                        m = m.min(a1.min(a2));
                    }
                }
                m
            }
            _ => (1..n - 1).map(axis).fold(f64::INFINITY, f64::min),
        }
    }
}

/// A path `t ↦ u_t` of toric potentials over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicField {
    pub t: Vec<f64>,
    pub slices: Vec<ToricPotential>,
    pub labels: (String, String),
}

impl GeodesicField {
    pub fn grid(&self) -> LogGrid {
        self.slices[0].grid()
    }

    /// Profile values, slice by slice.
    pub fn psi_values(&self) -> Vec<f64> {
        self.slices.iter().flat_map(|s| s.psi().iter().copied()).collect()
    }

    pub fn u_values(&self) -> Vec<f64> {
        self.slices.iter().flat_map(|s| s.u()).collect()
    }

    /// Smallest second difference of `ψ(t, x)` over the axis and diagonal
    /// directions, normalized by the squared step length.
    pub fn joint_convexity(&self) -> f64 {
        let xs = self.grid().nodes();
        let ht = self.t[1] - self.t[0];
        let hx = self.grid().spacing();
        let p: Vec<&[f64]> = self.slices.iter().map(|s| s.psi()).collect();
        let mut m = f64::INFINITY;
        for j in 1..self.t.len() - 1 {
            for i in 1..xs.len() - 1 {
                let c = 2.0 * p[j][i];
                m = m.min((p[j - 1][i] + p[j + 1][i] - c) / (ht * ht));
                m = m.min((p[j][i - 1] + p[j][i + 1] - c) / (hx * hx));
                let d2 = ht * ht + hx * hx;
                m = m.min((p[j - 1][i - 1] + p[j + 1][i + 1] - c) / d2);
                m = m.min((p[j - 1][i + 1] + p[j + 1][i - 1] - c) / d2);
            }
        }
        m
    }

    /// CSV with header `t,x,psi,u`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wtr.write_record(["t", "x", "psi", "u"])?;
        let xs = self.grid().nodes();
        for (t, s) in self.t.iter().zip(&self.slices) {
            for ((x, p), u) in xs.iter().zip(s.psi()).zip(s.u()) {
                wtr.write_record([t.to_string(), x.to_string(), p.to_string(), u.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Legendre dual of the piecewise-linear interpolant of a profile, at the
/// moments `ps`.
///
/// With the asymptotic slopes 0 and 1 outside the grid, the dual on `[0, 1]`
/// is the maximum of the affine functions `p ↦ p·xᵢ − ψᵢ`.
fn pl_dual(xs: &[f64], psi: &[f64], ps: &[f64]) -> Vec<f64> {
    // walk the argmax forward: it is nondecreasing in p
    let mut out = Vec::with_capacity(ps.len());
    let mut i = 0;
    for &p in ps {
        while i + 1 < xs.len() && p * xs[i + 1] - psi[i + 1] >= p * xs[i] - psi[i] {
            i += 1;
        }
        out.push(p * xs[i] - psi[i]);
    }
    out
}

/// Geodesic `u_t = L⁻¹((1 − t)·L(u₀) + t·L(u₁))` on `n_t` equispaced times.
///
/// The Legendre transforms are those of the piecewise-linear interpolants, so
/// they are exact on the union of the two slope sets and the inverse
/// transform returns grid values without a moment-grid error. Equal
/// endpoints give a constant path up to rounding.
pub fn solve_geodesic(u0: &ToricPotential, u1: &ToricPotential, n_t: usize) -> Result<GeodesicField> {
    if n_t < 2 {
        return Err(Error::InvalidConfig("a geodesic needs at least two times".into()));
    }
    if u0.grid() != u1.grid() {
        return Err(Error::GridMismatch("endpoint grids differ".into()));
    }
    u0.validate()?;
    u1.validate()?;
    let grid = u0.grid();
    let xs = grid.nodes();
    let mut ps: Vec<f64> = vec![0.0, 1.0];
    ps.extend(u0.slopes().into_iter().chain(u1.slopes()).map(|s| s.clamp(0.0, 1.0)));
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let d0 = pl_dual(&xs, u0.psi(), &ps);
    let d1 = pl_dual(&xs, u1.psi(), &ps);
    let ts: Vec<f64> = (0..n_t).map(|j| j as f64 / (n_t - 1) as f64).collect();
    let mut slices = Vec::with_capacity(n_t);
    for (j, &t) in ts.iter().enumerate() {
        if j == 0 {
            slices.push(u0.clone());
            continue;
        }
        if j + 1 == n_t {
            slices.push(u1.clone());
            continue;
        }
        let phi: Vec<f64> = d0.iter().zip(&d1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let psi: Vec<f64> = xs
            .iter()
            .map(|&x| ps.iter().zip(&phi).map(|(p, f)| p * x - f).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        slices.push(ToricPotential::from_psi(grid, psi)?);
    }
    Ok(GeodesicField { t: ts, slices, labels: ("u0".into(), "u1".into()) })
}

/// Output of the finite-difference Perron solver.
#[derive(Debug, Clone, PartialEq)]
pub struct FdField {
    pub grid: ReducedGrid,
    /// Profile values `ψ = log(1 + eˣ) + u`.
    pub psi: Vec<f64>,
    pub stats: SweepStats,
}

impl FdField {
    pub fn u(&self) -> Vec<f64> {
        let nf = self.grid.fiber.n;
        let xs = self.grid.fiber.nodes();
        self.psi.iter().enumerate().map(|(i, p)| p - softplus(xs[i % nf])).collect()
    }

    /// Slices of a one-dimensional-base field as a geodesic path.
    pub fn to_geodesic_field(&self) -> Result<GeodesicField> {
        if self.grid.base_dim != 1 {
            return Err(Error::Unsupported("only one-dimensional bases form a path".into()));
        }
        let nf = self.grid.fiber.n;
        let slices = self
            .psi
            .chunks(nf)
            .map(|c| ToricPotential::from_psi(self.grid.fiber, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let t = (0..self.grid.n_base).map(|j| j as f64 * self.grid.h_base()).collect();
        Ok(GeodesicField { t, slices, labels: ("fd".into(), "fd".into()) })
    }

    /// CSV with the base coordinates followed by `x,psi,u`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header: Vec<String> = match self.grid.base_dim {
            1 => vec!["t".into()],
            _ => vec!["t1".into(), "t2".into()],
        };
        header.extend(["x", "psi", "u"].map(String::from));
        wtr.write_record(&header)?;
        let nf = self.grid.fiber.n;
        let xs = self.grid.fiber.nodes();
        let u = self.u();
        for (idx, p) in self.psi.iter().enumerate() {
            let mut rec: Vec<String> = self.grid.base_coords(idx / nf).iter().map(|c| c.to_string()).collect();
            rec.extend([xs[idx % nf].to_string(), p.to_string(), u[idx].to_string()]);
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Boundary data from a family of toric potentials on the base boundary.
pub fn toric_boundary(f: impl Fn(&[f64]) -> ToricPotential + Send + Sync + 'static) -> BoundaryData {
    BoundaryData::from_fn(move |t| f(t).psi().to_vec())
}

/// Boundary data `u₀` at `t = 0` and `u₁` at `t = 1`.
pub fn toric_ends(u0: &ToricPotential, u1: &ToricPotential) -> BoundaryData {
    BoundaryData::ends(u0.psi().to_vec(), u1.psi().to_vec())
}

/// Finite-difference Perron solution of the toric Dirichlet problem.
///
/// Every boundary slice must be an admissible profile on `fiber`.
pub fn solve_hcma_fd(dom: &DomainSpec, fiber: LogGrid, boundary: &BoundaryData, opts: &EnvelopeOptions) -> Result<FdField> {
    let grid = dom.reduced_grid(fiber)?;
    let data = boundary.sample(&grid)?;
    let nf = fiber.n;
    for b in 0..grid.base_len() {
        if grid.is_base_boundary(b) {
            let slice = data[b * nf..(b + 1) * nf].to_vec();
            ToricPotential::from_psi(fiber, slice)
                .map_err(|e| Error::NoSubsolution(format!("boundary slice at base node {b}: {e}")))?;
        }
    }
    let (psi, stats) = sweep::envelope(&grid, &data, None, opts)?;
    Ok(FdField { grid, psi, stats })
}

/// Outcome of a comparison-principle check.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonReport {
    /// Whether `a ≤ b` holds on the boundary nodes.
    pub boundary_ordered: bool,
    /// `max(a − b)` over all nodes.
    pub max_violation: f64,
    /// Base coordinates and fiber coordinate of the maximum.
    pub location: Vec<f64>,
}

impl ComparisonReport {
    /// True when boundary order propagates to the interior within `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        !self.boundary_ordered || self.max_violation <= tol
    }
}

/// Checks that `a ≤ b` on the boundary propagates to all nodes.
pub fn check_comparison(a: &FdField, b: &FdField, dom: &DomainSpec) -> Result<ComparisonReport> {
    if a.grid != b.grid || a.grid.base_dim != dom.base_dim() || a.grid.n_base != dom.n_base {
        return Err(Error::GridMismatch("fields live on different grids".into()));
    }
    let fixed = sweep::fixed_mask(&a.grid);
    let mut boundary_ordered = true;
    let mut max_violation = f64::NEG_INFINITY;
    let mut at = 0;
    for idx in 0..a.psi.len() {
        let d = a.psi[idx] - b.psi[idx];
        if fixed[idx] && d > 0.0 {
            boundary_ordered = false;
        }
        if d > max_violation {
            max_violation = d;
            at = idx;
        }
    }
    let nf = a.grid.fiber.n;
    let mut location = a.grid.base_coords(at / nf);
    location.push(a.grid.fiber.node(at % nf));
    Ok(ComparisonReport { boundary_ordered, max_violation, location })
}

/// `k`-th member of a decreasing family of strictly admissible smoothings.
///
/// The profile is run through `⌊2/(k h)²⌉` steps of the `[1/4, 1/2, 1/4]`
/// heat stencil (ghost nodes continue with slopes 0 and 1), which raises a
/// convex profile and mollifies it at scale `1/k`. The result is then blended
/// with weight `1/k` toward the Fubini–Study profile lifted by the largest
/// potential value the smoothing reaches at `k = 1`.
pub fn smooth_boundary_family(v: &ToricPotential, k: usize) -> ToricPotential {
    let k = k.max(1);
    let grid = v.grid();
    let h = grid.spacing();
    let steps = |k: usize| (2.0 / (k as f64 * h).powi(2)).round() as usize;
    let widest = heat(v.psi(), h, steps(1));
    let xs = grid.nodes();
    let lift = widest.iter().zip(&xs).map(|(p, &x)| p - softplus(x)).fold(f64::NEG_INFINITY, f64::max);
    let a = heat(v.psi(), h, steps(k));
    let w = 1.0 / k as f64;
    let psi = a.iter().zip(&xs).map(|(p, &x)| (1.0 - w) * p + w * (softplus(x) + lift)).collect();
    ToricPotential::from_psi_unchecked(grid, psi)
}

fn heat(psi: &[f64], h: f64, steps: usize) -> Vec<f64> {
    let n = psi.len();
    let mut a = psi.to_vec();
    let mut b = vec![0.0; n];
    for _ in 0..steps {
        for i in 0..n {
            let l = if i == 0 { a[0] } else { a[i - 1] };
            let r = if i + 1 == n { a[n - 1] + h } else { a[i + 1] };
            b[i] = 0.25 * l + 0.5 * a[i] + 0.25 * r;
        }
        std::mem::swap(&mut a, &mut b);
    }
    a
}

/// Smooths every slice of a boundary family.
pub fn smooth_boundary_data(fiber: LogGrid, boundary: BoundaryData, k: usize) -> BoundaryData {
    BoundaryData::from_fn(move |t| {
        let p = ToricPotential::from_psi_unchecked(fiber, boundary.slice(t));
        smooth_boundary_family(&p, k).psi().to_vec()
    })
}

/// Background `log(1 + eˣ) + strength·ρ` used for trace-equation barriers of
/// toric problems.
pub fn toric_background(dom: &DomainSpec, fiber: LogGrid, strength: f64) -> Vec<f64> {
    let nf = fiber.n;
    let xs = fiber.nodes();
    (0..dom.rho().len() * nf).map(|idx| softplus(xs[idx % nf]) + strength * dom.rho()[idx / nf]).collect()
}

/// Checks the joint-convexity invariant of a field on a reduced grid.
pub fn check_field_convex(grid: &ReducedGrid, values: &[f64]) -> Result<()> {
    let nf = grid.fiber.n;
    for (b, chunk) in values.chunks(nf).enumerate() {
        check_convex(chunk, TOL_CONVEX).map_err(|e| match e {
            Error::NonConvexInput { node, second_difference } => {
                Error::NonConvexInput { node: b * nf + node, second_difference }
            }
            other => other,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toric::{profiles, project_psh, sup_distance};

    fn fiber() -> LogGrid {
        LogGrid::new(12.0, 97)
    }

    #[test]
    fn constant_path_for_equal_endpoints() {
        let g = fiber();
        let v = profiles::ramp_mixture(g, &[0.4, 0.6], &[1.5, 0.8], &[-1.0, 2.0]).unwrap();
        let path = solve_geodesic(&v, &v, 9).unwrap();
        for s in &path.slices {
            assert!(sup_distance(s, &v).unwrap() < 1e-12);
        }
    }

    #[test]
    fn constant_shift_is_linear_in_t() {
        let g = fiber();
        let path = solve_geodesic(&ToricPotential::zero(g), &ToricPotential::constant(g, 0.8), 11).unwrap();
        for (t, s) in path.t.iter().zip(&path.slices) {
            for u in s.u() {
                assert!((u - 0.8 * t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn geodesic_is_jointly_convex_and_admissible() {
        let g = fiber();
        let a = profiles::ramp_mixture(g, &[1.0], &[2.0], &[-2.0]).unwrap();
        let b = profiles::ramp_mixture(g, &[0.5, 0.5], &[0.7, 3.0], &[1.0, 3.0]).unwrap();
        let path = solve_geodesic(&a, &b, 9).unwrap();
        assert!(path.joint_convexity() > -1e-9);
    }

    #[test]
    fn fd_reproduces_constant_path() {
        let g = fiber();
        let dom = DomainSpec::new(DomainKind::Strip, 9).unwrap();
        let v = profiles::ramp_mixture(g, &[0.4, 0.6], &[1.5, 0.8], &[-1.0, 2.0]).unwrap();
        let fd = solve_hcma_fd(&dom, g, &toric_ends(&v, &v), &EnvelopeOptions::default()).unwrap();
        for c in fd.psi.chunks(g.n) {
            for (a, b) in c.iter().zip(v.psi()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fd_tracks_closed_form() {
        let g = LogGrid::new(12.0, 193);
        let dom = DomainSpec::new(DomainKind::Strip, 9).unwrap();
        let a = profiles::ramp_mixture(g, &[1.0], &[1.2], &[-1.0]).unwrap();
        let b = profiles::ramp_mixture(g, &[1.0], &[0.8], &[1.5]).unwrap();
        let exact = solve_geodesic(&a, &b, 9).unwrap().psi_values();
        let fd = solve_hcma_fd(&dom, g, &toric_ends(&a, &b), &EnvelopeOptions::default()).unwrap();
        let gap = exact.iter().zip(&fd.psi).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 0.05, "gap {gap}");
        // the envelope dominates every subsolution, in particular the closed form
        assert!(exact.iter().zip(&fd.psi).all(|(x, y)| *x <= y + 1e-8));
    }

    #[test]
    fn inadmissible_boundary_is_rejected() {
        let g = fiber();
        let dom = DomainSpec::new(DomainKind::Strip, 5).unwrap();
        let bad: Vec<f64> = g.nodes().into_iter().map(|x| 2.0 * x.abs()).collect();
        let bd = BoundaryData::ends(bad.clone(), bad);
        assert!(matches!(
            solve_hcma_fd(&dom, g, &bd, &EnvelopeOptions::default()),
            Err(Error::NoSubsolution(_))
        ));
    }

    #[test]
    fn comparison_of_shifted_boundary() {
        let g = LogGrid::new(8.0, 49);
        let dom = DomainSpec::new(DomainKind::Annulus, 7).unwrap();
        let a = profiles::ramp_mixture(g, &[1.0], &[1.5], &[0.0]).unwrap();
        let b = ToricPotential::zero(g);
        let opts = EnvelopeOptions::default();
        let lo = solve_hcma_fd(&dom, g, &toric_ends(&a, &b), &opts).unwrap();
        let hi = solve_hcma_fd(&dom, g, &toric_ends(&a.shifted(1.0), &b.shifted(1.0)), &opts).unwrap();
        let same = check_comparison(&lo, &lo, &dom).unwrap();
        assert!(same.max_violation.abs() < 1e-15 && same.holds(0.0));
        let rep = check_comparison(&lo, &hi, &dom).unwrap();
        assert!(rep.boundary_ordered && rep.max_violation <= 1e-8);
    }

    #[test]
    fn smoothing_is_decreasing_and_close() {
        let g = LogGrid::new(10.0, 201);
        let v = project_psh(g, &profiles::kink(g, 0.5).u());
        let fam: Vec<ToricPotential> = (1..=12).map(|k| smooth_boundary_family(&v, k)).collect();
        for w in fam.windows(2) {
            assert!(w[1].psi().iter().zip(w[0].psi()).all(|(a, b)| *a <= b + 1e-12));
        }
        for (k, f) in fam.iter().enumerate().skip(1) {
            f.validate().unwrap();
            assert!(f.min_curvature() > 0.0);
            let d = sup_distance(f, &v).unwrap();
            assert!(d <= 2.0 / (k + 1) as f64, "k={} d={d}", k + 1);
        }
    }

    #[test]
    fn domain_rho_is_strictly_convex_and_vanishes_on_ends() {
        for kind in [DomainKind::Strip, DomainKind::Annulus, DomainKind::Bidisc] {
            let d = DomainSpec::new(kind, 9).unwrap();
            assert!(d.rho_convexity() > 1.9);
            assert_eq!(d.rho()[0], 0.0);
        }
        let a = DomainSpec::new(DomainKind::Annulus, 9).unwrap();
        assert!((a.base_coordinate(Complex64::new((-1.0f64).exp(), 0.0)) - 1.0).abs() < 1e-15);
    }
}
