// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

//! Torus-invariant Kähler potentials on (CP¹, ω_FS).
//!
//! An S¹-invariant function `u` on CP¹ is stored through its convex profile
//! `ψ(x) = log(1 + eˣ) + u(x)` in the log-coordinate `x = log|z|²`. The
//! potential is ω-psh exactly when `ψ` is convex with slopes in `[0, 1]`.
//! The Fubini–Study form is normalized to total mass one, so constants have
//! energy equal to themselves.
//!
//! Grids are truncated to `[-X, X]`; the boundary nodes stand in for the
//! asymptotic slopes 0 (at `-∞`) and 1 (at `+∞`).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Default half width of the log-coordinate grid.
pub const DEFAULT_HALF_WIDTH: f64 = 20.0;

/// Default convexity tolerance, relative to the slope bound 1.
pub const TOL_CONVEX: f64 = 1e-9;

/// Tolerance on difference quotients leaving `[0, 1]`.
pub const TOL_SLOPE: f64 = 1e-9;

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `eˣ / (1 + eˣ)`, the slope of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform grid of `n` nodes on `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub half_width: f64,
    pub n: usize,
}

impl LogGrid {
    pub fn new(half_width: f64, n: usize) -> Self {
        assert!(n >= 3, "a log grid needs at least three nodes");
        assert!(half_width > 0.0);
        Self { half_width, n }
    }

    /// Grid with the default half width.
    pub fn with_nodes(n: usize) -> Self {
        Self::new(DEFAULT_HALF_WIDTH, n)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }
}

/// Uniform grid of moment values on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentGrid {
    pub n: usize,
}

impl MomentGrid {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2);
        Self { n }
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }
}

/// S¹-invariant ω-psh potential, stored as its convex profile `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToricPotential {
    grid: LogGrid,
    psi: Vec<f64>,
}

impl ToricPotential {
    /// Wraps profile values after checking the admissibility invariants.
    pub fn from_psi(grid: LogGrid, psi: Vec<f64>) -> Result<Self> {
        let p = Self::from_psi_unchecked(grid, psi);
        p.validate()?;
        Ok(p)
    }

    pub(crate) fn from_psi_unchecked(grid: LogGrid, psi: Vec<f64>) -> Self {
        assert_eq!(grid.n, psi.len(), "profile length must match the grid");
        Self { grid, psi }
    }

    /// Builds `ψ = log(1 + eˣ) + u` from potential values `u` at the nodes.
    pub fn from_u(grid: LogGrid, u: &[f64]) -> Result<Self> {
        if u.len() != grid.n {
            return Err(Error::DimensionMismatch {
                expected: grid.n,
                found: u.len(),
            });
        }
        let psi = grid
            .nodes()
            .iter()
            .zip(u)
            .map(|(&x, &v)| softplus(x) + v)
            .collect();
        Self::from_psi(grid, psi)
    }

    /// Samples `u` from a closure.
    pub fn from_u_fn(grid: LogGrid, u: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = grid.nodes().into_iter().map(u).collect();
        Self::from_u(grid, &values)
    }

    /// The zero potential, i.e. the Fubini–Study profile itself.
    pub fn zero(grid: LogGrid) -> Self {
        Self {
            grid,
            psi: grid.nodes().into_iter().map(softplus).collect(),
        }
    }

    pub fn constant(grid: LogGrid, c: f64) -> Self {
        Self {
            grid,
            psi: grid.nodes().into_iter().map(|x| softplus(x) + c).collect(),
        }
    }

    pub fn grid(&self) -> LogGrid {
        self.grid
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// Potential values `u = ψ − log(1 + eˣ)`.
    pub fn u(&self) -> Vec<f64> {
        self.grid
            .nodes()
            .iter()
            .zip(&self.psi)
            .map(|(&x, &p)| p - softplus(x))
            .collect()
    }

    /// Difference quotients of `ψ` between consecutive nodes.
    pub fn slopes(&self) -> Vec<f64> {
        let h = self.grid.spacing();
        self.psi.windows(2).map(|w| (w[1] - w[0]) / h).collect()
    }

    /// Checks discrete convexity and the slope range.
    pub fn validate(&self) -> Result<()> {
        check_convex(&self.psi, TOL_CONVEX)?;
        check_slopes(&self.psi, self.grid.spacing(), TOL_SLOPE)
    }

    /// Smallest second difference divided by `h²`; positive for strictly
    /// admissible profiles.
    pub fn min_curvature(&self) -> f64 {
        let h2 = self.grid.spacing().powi(2);
        self.psi
            .windows(3)
            .map(|w| (w[0] - 2.0 * w[1] + w[2]) / h2)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            psi: self.psi.iter().map(|p| p + c).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["x", "psi"])?;
        for (x, p) in self.grid.nodes().iter().zip(&self.psi) {
            wtr.write_record([x.to_string(), p.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the `x,psi` format. The nodes must form a uniform symmetric grid.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "psi"] {
            return Err(Error::InvalidConfig(format!(
                "unexpected header {headers:?}"
            )));
        }
        let mut xs = Vec::new();
        let mut psi = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad number {s:?}: {e}")))
            };
            xs.push(parse(&rec[0])?);
            psi.push(parse(&rec[1])?);
        }
        if xs.len() < 3 {
            return Err(Error::InvalidConfig(
                "profile needs at least three rows".into(),
            ));
        }
        let grid = LogGrid::new(-xs[0], xs.len());
        for (i, &x) in xs.iter().enumerate() {
            if (x - grid.node(i)).abs() > 1e-9 * grid.half_width {
                return Err(Error::GridMismatch(format!(
                    "node {i} at {x} is off the uniform grid"
                )));
            }
        }
        Self::from_psi(grid, psi)
    }
}

pub(crate) fn check_convex(values: &[f64], tol: f64) -> Result<()> {
    for (i, w) in values.windows(3).enumerate() {
        let d2 = w[0] - 2.0 * w[1] + w[2];
        if d2 < -tol {
            return Err(Error::NonConvexInput {
                node: i + 1,
                second_difference: d2,
            });
        }
    }
    Ok(())
}

fn check_slopes(values: &[f64], h: f64, tol: f64) -> Result<()> {
    for (i, w) in values.windows(2).enumerate() {
        let s = (w[1] - w[0]) / h;
        if !(-tol..=1.0 + tol).contains(&s) {
            return Err(Error::SlopeOutOfRange { node: i, slope: s });
        }
    }
    Ok(())
}

/// Legendre dual `ψ*(p) = sup_x (p·x − ψ(x))` sampled on a moment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticPotential {
    grid: MomentGrid,
    values: Vec<f64>,
}

impl SymplecticPotential {
    pub fn new(grid: MomentGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::DimensionMismatch {
                expected: grid.n,
                found: values.len(),
            });
        }
        check_convex(&values, TOL_CONVEX)?;
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: MomentGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, (0..grid.n).map(|j| f(grid.node(j))).collect())
    }

    pub fn grid(&self) -> MomentGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Affine interpolation `(1 − t)·a + t·b` of two duals on the same grid.
    pub fn interpolate(a: &Self, b: &Self, t: f64) -> Result<Self> {
        if a.grid != b.grid {
            return Err(Error::GridMismatch("moment grids differ".into()));
        }
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect();
        Ok(Self {
            grid: a.grid,
            values,
        })
    }
}

/// Discrete Legendre transform onto a moment grid with `n_p` nodes.
///
/// Ties in the argmax are resolved toward the smaller `x`.
pub fn legendre_on(psi: &ToricPotential, n_p: usize) -> Result<SymplecticPotential> {
    psi.validate()?;
    Ok(legendre_unchecked(psi.grid, &psi.psi, MomentGrid::new(n_p)))
}

/// [`legendre_on`] with as many moment nodes as the input has log nodes.
pub fn legendre(psi: &ToricPotential) -> Result<SymplecticPotential> {
    legendre_on(psi, psi.grid.n)
}

pub(crate) fn legendre_unchecked(
    grid: LogGrid,
    psi: &[f64],
    pg: MomentGrid,
) -> SymplecticPotential {
    let xs = grid.nodes();
    let values = (0..pg.n)
        .map(|j| {
            let p = pg.node(j);
            let mut best = f64::NEG_INFINITY;
            for (x, v) in xs.iter().zip(psi) {
                let c = p * x - v;
                if c > best {
                    best = c;
                }
            }
            best
        })
        .collect();
    SymplecticPotential { grid: pg, values }
}

/// Inverse transform `ψ(x) = max_p (p·x − φ(p))` back onto a log grid.
pub fn legendre_inverse(phi: &SymplecticPotential, grid: LogGrid) -> Result<ToricPotential> {
    check_convex(&phi.values, TOL_CONVEX)?;
    Ok(legendre_inverse_unchecked(phi, grid))
}

fn legendre_inverse_unchecked(phi: &SymplecticPotential, grid: LogGrid) -> ToricPotential {
    let psi = grid
        .nodes()
        .into_iter()
        .map(|x| {
            (0..phi.grid.n)
                .map(|j| phi.grid.node(j) * x - phi.values[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    ToricPotential { grid, psi }
}

/// Psh projection `P(f)`: the largest admissible potential lying below `f`.
///
/// Computed as the lower convex envelope of the nodes of `log(1 + eˣ) + f`
/// with slopes clamped to `[0, 1]`, which is the biconjugate taken over the
/// full moment interval.
pub fn project_psh(grid: LogGrid, f: &[f64]) -> ToricPotential {
    assert_eq!(f.len(), grid.n);
    let xs = grid.nodes();
    let ys: Vec<f64> = xs.iter().zip(f).map(|(&x, &v)| softplus(x) + v).collect();
    ToricPotential {
        grid,
        psi: slope_clamped_envelope(&xs, &ys, 0.0, 1.0),
    }
}

/// Lower convex envelope of the points `(xs[i], ys[i])` among functions whose
/// slopes stay in `[lo, hi]`, evaluated at the same abscissae.
pub(crate) fn slope_clamped_envelope(xs: &[f64], ys: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = xs.len();
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // drop b when it lies on or above the chord a -> i
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let slope = |a: usize, b: usize| (ys[b] - ys[a]) / (xs[b] - xs[a]);
    let mut first = 0;
    while first + 1 < hull.len() && slope(hull[first], hull[first + 1]) < lo {
        first += 1;
    }
    let mut last = first;
    while last + 1 < hull.len() && slope(hull[last], hull[last + 1]) <= hi {
        last += 1;
    }
    let (va, vb) = (hull[first], hull[last]);
    let mut out = vec![0.0; n];
    let mut seg = first;
    for i in 0..n {
        let x = xs[i];
        out[i] = if x <= xs[va] {
            if x == xs[va] {
                ys[va]
            } else {
                ys[va] + lo * (x - xs[va])
            }
        } else if x >= xs[vb] {
            if x == xs[vb] {
                ys[vb]
            } else {
                ys[vb] + hi * (x - xs[vb])
            }
        } else {
            while xs[hull[seg + 1]] < x {
                seg += 1;
            }
            let (a, b) = (hull[seg], hull[seg + 1]);
            ys[a] + slope(a, b) * (x - xs[a])
        };
    }
    out
}

/// Monge–Ampère energy `I(u) = ½ ∫ u (ω + ω_u)`.
///
/// Both measures are slope increments of the discrete profiles, with the
/// asymptotic slopes 0 and 1 closing the outer cells, so each has mass
/// exactly one and the functional is monotone on the grid.
pub fn ma_energy(u: &ToricPotential) -> Result<f64> {
    u.validate()?;
    let fs = ToricPotential::zero(u.grid);
    let omega = slope_measure(&fs);
    let omega_u = slope_measure(u);
    let vals = u.u();
    Ok(0.5
        * vals
            .iter()
            .zip(omega.iter().zip(&omega_u))
            .map(|(v, (a, b))| v * (a + b))
            .sum::<f64>())
}

fn slope_measure(p: &ToricPotential) -> Vec<f64> {
    let s = p.slopes();
    let n = p.grid.n;
    (0..n)
        .map(|i| {
            let right = if i + 1 < n { s[i] } else { 1.0 };
            let left = if i > 0 { s[i - 1] } else { 0.0 };
            right - left
        })
        .collect()
}

/// Fubini–Study distance between the S¹-orbits through `x` and `y`.
///
/// Along a meridian the metric `|dz|²/(1+|z|²)²` integrates to
/// `arctan(e^{x/2})`.
pub fn fs_distance(x: f64, y: f64) -> f64 {
    ((0.5 * y).exp().atan() - (0.5 * x).exp().atan()).abs()
}

/// Modulus of continuity `M_v(r)` over node pairs within FS distance `r`.
pub fn modulus_of_continuity(v: &ToricPotential, r: f64) -> f64 {
    let xs = v.grid.nodes();
    let u = v.u();
    let mut best = 0.0f64;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if fs_distance(xs[i], xs[j]) > r {
                break;
            }
            best = best.max((u[i] - u[j]).abs());
        }
    }
    best
}

/// Sup-norm distance between the potentials of two profiles on one grid.
pub fn sup_distance(a: &ToricPotential, b: &ToricPotential) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch("log grids differ".into()));
    }
    Ok(a.psi
        .iter()
        .zip(&b.psi)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Admissible test profiles built from mixtures of scaled softplus ramps.
pub mod profiles {
    use super::*;

    /// `ψ(x) = Σ wᵢ·log(1 + e^{βᵢ(x − cᵢ)})/βᵢ` with weights summing to one.
    ///
    /// Each ramp has slopes running from 0 to 1, so the mixture is strictly
    /// admissible and `u = ψ − log(1 + eˣ)` is bounded.
    pub fn ramp_mixture(
        grid: LogGrid,
        weights: &[f64],
        betas: &[f64],
        centers: &[f64],
    ) -> Result<ToricPotential> {
        let total: f64 = weights.iter().sum();
        if weights.len() != betas.len() || weights.len() != centers.len() || weights.is_empty() {
            return Err(Error::InvalidConfig(
                "ramp mixture parameters must have equal nonzero length".into(),
            ));
        }
        if weights.iter().any(|&w| w < 0.0) || betas.iter().any(|&b| b <= 0.0) {
            return Err(Error::InvalidConfig(
                "ramp weights must be nonnegative and rates positive".into(),
            ));
        }
        let psi = grid
            .nodes()
            .into_iter()
            .map(|x| {
                weights
                    .iter()
                    .zip(betas.iter().zip(centers))
                    .map(|(w, (b, c))| w / total * softplus(b * (x - c)) / b)
                    .sum()
            })
            .collect();
        ToricPotential::from_psi(grid, psi)
    }

    /// `ψ(x) = max(0, x − c)`: a slope-saturated kink at `c`.
    pub fn kink(grid: LogGrid, c: f64) -> ToricPotential {
        ToricPotential {
            grid,
            psi: grid.nodes().into_iter().map(|x| (x - c).max(0.0)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> LogGrid {
        LogGrid::with_nodes(401)
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn legendre_of_fs_profile_at_half() {
        let g = LogGrid::with_nodes(2001);
        let dual = legendre_on(&ToricPotential::zero(g), 101).unwrap();
        // p = 1/2 sits at index 50
        assert!((dual.values()[50] + 2f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn legendre_shifts_with_constants() {
        let g = grid();
        let a = legendre(&ToricPotential::zero(g)).unwrap();
        let b = legendre(&ToricPotential::constant(g, 0.7)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_zero_is_support_function() {
        let g = grid();
        let phi = SymplecticPotential::from_fn(MomentGrid::new(51), |_| 0.0).unwrap();
        let psi = legendre_inverse(&phi, g).unwrap();
        for (x, p) in g.nodes().iter().zip(psi.psi()) {
            assert!((p - x.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_entropy_is_fs_profile() {
        let g = grid();
        let pg = MomentGrid::new(4001);
        let ent = |p: f64| {
            let a = if p > 0.0 { p * p.ln() } else { 0.0 };
            let b = if p < 1.0 {
                (1.0 - p) * (1.0 - p).ln()
            } else {
                0.0
            };
            a + b
        };
        let psi = legendre_inverse(&SymplecticPotential::from_fn(pg, ent).unwrap(), g).unwrap();
        let err = g
            .nodes()
            .iter()
            .zip(psi.psi())
            .map(|(&x, p)| (p - softplus(x)).abs())
            .fold(0.0, f64::max);
        assert!(err <= pg.spacing(), "err {err}");
    }

    #[test]
    fn rejects_non_convex_and_steep_profiles() {
        let g = LogGrid::with_nodes(11);
        let mut psi: Vec<f64> = g.nodes().into_iter().map(softplus).collect();
        psi[5] += 5.0;
        assert!(matches!(
            legendre(&ToricPotential::from_psi_unchecked(g, psi)),
            Err(Error::NonConvexInput { .. })
        ));
        let steep: Vec<f64> = g.nodes().into_iter().map(|x| 2.0 * x).collect();
        assert!(matches!(
            ToricPotential::from_psi(g, steep),
            Err(Error::SlopeOutOfRange { .. })
        ));
    }

    #[test]
    fn projection_fixes_admissible_and_lies_below() {
        let g = grid();
        let v = profiles::ramp_mixture(g, &[0.5, 0.5], &[1.5, 0.7], &[-2.0, 1.0]).unwrap();
        let p = project_psh(g, &v.u());
        assert!(sup_distance(&p, &v).unwrap() < 1e-12);

        let w = profiles::ramp_mixture(g, &[1.0], &[3.0], &[2.0]).unwrap();
        let f: Vec<f64> = v.u().iter().zip(w.u()).map(|(a, b)| a.min(b)).collect();
        let roof = project_psh(g, &f);
        roof.validate().unwrap();
        for (r, m) in roof.u().iter().zip(&f) {
            assert!(*r <= m + 1e-12);
        }
    }

    #[test]
    fn projection_of_scaled_potential_keeps_candidate_bound() {
        let g = grid();
        let v = profiles::ramp_mixture(g, &[0.3, 0.7], &[2.0, 0.8], &[-1.0, 2.0]).unwrap();
        let u = v.u();
        let inf = u.iter().cloned().fold(f64::INFINITY, f64::min);
        for delta in [1.2, 1.5, 2.0] {
            let scaled: Vec<f64> = u.iter().map(|x| delta * x).collect();
            let p = project_psh(g, &scaled).u();
            for (pi, vi) in p.iter().zip(&u) {
                assert!(*pi >= vi + (delta - 1.0) * inf - 1e-12);
            }
        }
    }

    #[test]
    fn energy_of_constants_and_monotonicity() {
        let g = grid();
        for c in [-1.3, 0.0, 2.5] {
            assert!((ma_energy(&ToricPotential::constant(g, c)).unwrap() - c).abs() < 1e-12);
        }
        let v = profiles::ramp_mixture(g, &[0.5, 0.5], &[1.5, 0.7], &[-2.0, 1.0]).unwrap();
        let lower = project_psh(
            g,
            &v.u()
                .iter()
                .map(|x| x - 0.2 * (1.0 + x.abs()))
                .collect::<Vec<_>>(),
        );
        assert!(ma_energy(&lower).unwrap() <= ma_energy(&v).unwrap());
    }

    #[test]
    fn modulus_of_constant_is_zero_and_grows() {
        let g = grid();
        assert!(modulus_of_continuity(&ToricPotential::constant(g, 3.0), 0.5) < 1e-12);
        let v = profiles::kink(g, 0.0);
        let m: Vec<f64> = [0.01, 0.05, 0.1, 0.5]
            .iter()
            .map(|&r| modulus_of_continuity(&v, r))
            .collect();
        assert!(m.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let g = LogGrid::with_nodes(33);
        let v = profiles::ramp_mixture(g, &[1.0], &[1.3], &[0.4]).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x,psi\n"));
        let back = ToricPotential::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.psi(), v.psi());
    }
}
