// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

//! Griffiths-negative and extremal Finsler metrics on trivial bundles.
//!
//! A rank-two Finsler metric invariant under the diagonal torus is recorded
//! through `f(ξ)² = |ξ₀|²·e^{F(y)}` with `y = log|ξ₁/ξ₀|²`. Plurisubharmonicity
//! of `log f` on the total space becomes joint convexity of `F` in the base
//! and fiber coordinates together with `∂_y F ∈ [0, 1]`, and the extremal
//! metric is the largest such `F` with the given boundary values. The solvers
//! here run on the reduced grids of [`crate::sweep`] and store `ψ = F − B`
//! for a fixed strictly convex background `B`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hcma::DomainSpec;
use crate::quantize::{log_sum_exp, HermitianForm};
use crate::sweep::{
    self, norm_weights, BoundaryData, Degeneracy, EnvelopeOptions, ReducedGrid, SweepStats,
};
use crate::toric::{LogGrid, TOL_CONVEX, TOL_SLOPE};

/// Torus-invariant rank-two Finsler metric sampled on a fiber grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FinslerMetric {
    fiber: LogGrid,
    log_f2: Vec<f64>,
}

impl FinslerMetric {
    /// Metric with `log(f²/|ξ₀|²) = F` at the fiber nodes.
    pub fn from_log_profile(fiber: LogGrid, log_f2: Vec<f64>) -> Result<Self> {
        if log_f2.len() != fiber.n {
            return Err(Error::DimensionMismatch {
                expected: fiber.n,
                found: log_f2.len(),
            });
        }
        if log_f2.iter().any(|v| !v.is_finite()) {
            return Err(Error::ZeroEvaluation);
        }
        Ok(Self { fiber, log_f2 })
    }

    /// `f(ξ)² = g₀|ξ₀|² + g₁|ξ₁|²` for a diagonal form `diag(g₀, g₁)`.
    pub fn hermitian(fiber: LogGrid, form: &HermitianForm) -> Result<Self> {
        if form.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: form.dim(),
            });
        }
        let d = form.log_diagonal().ok_or_else(|| {
            Error::Unsupported("torus-invariant metrics need a diagonal form".into())
        })?;
        let log_f2 = fiber
            .nodes()
            .into_iter()
            .map(|y| log_sum_exp([d[0], d[1] + y].into_iter()))
            .collect();
        Ok(Self { fiber, log_f2 })
    }

    pub fn fiber(&self) -> LogGrid {
        self.fiber
    }

    pub fn log_profile(&self) -> &[f64] {
        &self.log_f2
    }

    /// `F` at an arbitrary `y`, extended with slope 0 on the left and 1 on
    /// the right.
    pub fn log_profile_at(&self, y: f64) -> f64 {
        let n = self.fiber.n;
        let x0 = -self.fiber.half_width;
        let h = self.fiber.spacing();
        if y <= x0 {
            return self.log_f2[0];
        }
        if y >= self.fiber.half_width {
            return self.log_f2[n - 1] + (y - self.fiber.half_width);
        }
        let s = (y - x0) / h;
        let i = (s.floor() as usize).min(n - 2);
        let w = s - i as f64;
        (1.0 - w) * self.log_f2[i] + w * self.log_f2[i + 1]
    }

    /// `f(ξ)`; homogeneous of degree one by construction.
    pub fn eval(&self, xi: [Complex64; 2]) -> f64 {
        let (a, b) = (xi[0].norm(), xi[1].norm());
        if a == 0.0 && b == 0.0 {
            return 0.0;
        }
        if a == 0.0 {
            // the right tail F(y) − y is constant
            let n = self.fiber.n;
            return b * (0.5 * (self.log_f2[n - 1] - self.fiber.half_width)).exp();
        }
        let y = 2.0 * (b / a).ln();
        a * (0.5 * self.log_profile_at(y)).exp()
    }

    /// Smallest of the second differences and of the distances of the
    /// difference quotients to the ends of `[0, 1]`; nonnegative iff the
    /// metric is fiberwise psh on the grid.
    pub fn psh_margin(&self) -> f64 {
        let h = self.fiber.spacing();
        let f = &self.log_f2;
        let mut m = f64::INFINITY;
        for i in 1..f.len() - 1 {
            m = m.min(f[i - 1] + f[i + 1] - 2.0 * f[i]);
        }
        for w in f.windows(2) {
            let s = (w[1] - w[0]) / h;
            m = m.min(s).min(1.0 - s);
        }
        m
    }

    /// Smallest relative three-point convexity defect of `s ↦ f(1, s)`;
    /// nonnegative iff the metric is fiberwise a norm on the grid.
    pub fn norm_margin(&self) -> f64 {
        let (lm, lp) = norm_weights(self.fiber.spacing());
        let f = &self.log_f2;
        (1..f.len() - 1)
            .map(|i| {
                let g = (0.5 * f[i]).exp();
                ((lm + 0.5 * f[i - 1]).exp() + (lp + 0.5 * f[i + 1]).exp()) / g - 1.0
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Relative sup residual of the best fit `e^F ≈ c₀ + c₁·e^y`; zero for
    /// Hermitian metrics.
    pub fn quadratic_fit_residual(&self) -> f64 {
        // weighted least squares on (c₀ + c₁ e^y)·e^{−F} ≈ 1
        let ys = self.fiber.nodes();
        let rows: Vec<[f64; 2]> = ys
            .iter()
            .zip(&self.log_f2)
            .map(|(y, f)| [(-f).exp(), (y - f).exp()])
            .collect();
        let (mut a, mut b) = ([[0.0; 2]; 2], [0.0; 2]);
        for r in &rows {
            for i in 0..2 {
                b[i] += r[i];
                for j in 0..2 {
                    a[i][j] += r[i] * r[j];
                }
            }
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let c0 = (b[0] * a[1][1] - b[1] * a[0][1]) / det;
        let c1 = (a[0][0] * b[1] - a[1][0] * b[0]) / det;
        rows.iter()
            .map(|r| (c0 * r[0] + c1 * r[1] - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Strictly convex background `B = log(h₀ + h₁eʸ) + strength·ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub grid: ReducedGrid,
    pub values: Vec<f64>,
    pub strength: f64,
}

/// Builds the background from a diagonal rank-two form and certifies that
/// its normalized second differences are positive along every solver
/// direction.
pub fn background_metric(
    dom: &DomainSpec,
    fiber: LogGrid,
    h: &HermitianForm,
    strength: f64,
) -> Result<Background> {
    let grid = dom.reduced_grid(fiber)?;
    let profile = FinslerMetric::hermitian(fiber, h)?;
    let nf = fiber.n;
    let values: Vec<f64> = (0..grid.len())
        .map(|idx| profile.log_f2[idx % nf] + strength * dom.rho()[idx / nf])
        .collect();
    let dirs = sweep::stencil(&grid, 1.0);
    let dims = grid.dims();
    let mut worst = (f64::INFINITY, Vec::new());
    for idx in 0..grid.len() {
        if !grid.is_interior(idx) {
            continue;
        }
        for d in &dirs {
            let one = std::slice::from_ref(d);
            let m = sweep::min_curvature_at(&dims, &values, one, idx);
            if m < worst.0 {
                worst = (m, d.offs.clone());
            }
        }
    }
    if worst.0.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InsufficientStrength {
            direction: worst.1,
            margin: worst.0,
        });
    }
    Ok(Background {
        grid,
        values,
        strength,
    })
}

/// A potential on a reduced grid, stored relative to its background.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeGrid {
    pub grid: ReducedGrid,
    /// `ψ = F − B`.
    pub psi: Vec<f64>,
    pub background: Vec<f64>,
    pub stats: Option<SweepStats>,
}

impl EnvelopeGrid {
    fn from_phi(bg: &Background, phi: Vec<f64>, stats: Option<SweepStats>) -> Self {
        let psi = phi.iter().zip(&bg.values).map(|(p, b)| p - b).collect();
        Self {
            grid: bg.grid,
            psi,
            background: bg.values.clone(),
            stats,
        }
    }

    /// `F = ψ + B`.
    pub fn phi(&self) -> Vec<f64> {
        self.psi.iter().zip(&self.background).map(|(p, b)| p + b).collect()
    }

    /// The fiber metric over base node `b`.
    pub fn metric_at(&self, b: usize) -> Result<FinslerMetric> {
        let nf = self.grid.fiber.n;
        let phi: Vec<f64> = (0..nf)
            .map(|i| {
                let idx = self.grid.index(b, i);
                self.psi[idx] + self.background[idx]
            })
            .collect();
        FinslerMetric::from_log_profile(self.grid.fiber, phi)
    }

    /// `sup |F − g|` over base-boundary nodes.
    pub fn boundary_error(&self, data: &[f64]) -> f64 {
        let nf = self.grid.fiber.n;
        let phi = self.phi();
        (0..self.grid.len())
            .filter(|idx| self.grid.is_base_boundary(idx / nf))
            .map(|idx| (phi[idx] - data[idx]).abs())
            .fold(0.0, f64::max)
    }

    /// Degeneracy statistic of `F` over the solver stencil.
    pub fn degeneracy(&self, reach: f64) -> Degeneracy {
        sweep::degeneracy(&self.grid, &self.phi(), &sweep::stencil(&self.grid, reach))
    }

    /// CSV with base coordinates, the fiber coordinate and `psi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header: Vec<String> = match self.grid.base_dim {
            1 => vec!["t".into()],
            _ => vec!["t1".into(), "t2".into()],
        };
        header.extend(["y".into(), "psi".into()]);
        wtr.write_record(&header)?;
        let nf = self.grid.fiber.n;
        for (idx, p) in self.psi.iter().enumerate() {
            let mut rec: Vec<String> = self
                .grid
                .base_coords(idx / nf)
                .iter()
                .map(|c| c.to_string())
                .collect();
            rec.push(self.grid.fiber.node(idx % nf).to_string());
            rec.push(p.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Geodesic `G_t = G₀^{1/2}(G₀^{-1/2} G₁ G₀^{-1/2})^t G₀^{1/2}` between two
/// forms, kept in the factored form `G_t = A† diag(λᵗ) A`.
#[derive(Debug, Clone)]
pub struct GeodesicPencil {
    space: crate::quantize::SpaceTag,
    diagonal: Option<(Vec<f64>, Vec<f64>)>,
    a: DMatrix<Complex64>,
    log_lambda: Vec<f64>,
}

impl GeodesicPencil {
    pub fn new(g0: &HermitianForm, g1: &HermitianForm) -> Result<Self> {
        if g0.dim() != g1.dim() {
            return Err(Error::DimensionMismatch {
                expected: g0.dim(),
                found: g1.dim(),
            });
        }
        if g0.space() != g1.space() {
            return Err(Error::GridMismatch("endpoint forms live on different spaces".into()));
        }
        if let (Some(d0), Some(d1)) = (g0.log_diagonal(), g1.log_diagonal()) {
            return Ok(Self {
                space: g0.space(),
                diagonal: Some((d0.to_vec(), d1.to_vec())),
                a: DMatrix::identity(0, 0),
                log_lambda: Vec::new(),
            });
        }
        let e0 = nalgebra::SymmetricEigen::new(g0.matrix());
        if e0.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::SingularForm);
        }
        let n = g0.dim();
        let sq = |p: f64| {
            let d = DVector::from_iterator(
                n,
                e0.eigenvalues.iter().map(|&l| Complex64::new(l.powf(p), 0.0)),
            );
            &e0.eigenvectors * DMatrix::from_diagonal(&d) * e0.eigenvectors.adjoint()
        };
        let (half, inv_half) = (sq(0.5), sq(-0.5));
        let mut m = &inv_half * g1.matrix() * &inv_half;
        let sym = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        m.copy_from(&sym);
        let e = nalgebra::SymmetricEigen::new(m);
        if e.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::SingularForm);
        }
        Ok(Self {
            space: g0.space(),
            diagonal: None,
            a: e.eigenvectors.adjoint() * half,
            log_lambda: e.eigenvalues.iter().map(|l| l.ln()).collect(),
        })
    }

    pub fn at(&self, t: f64) -> Result<HermitianForm> {
        match &self.diagonal {
            Some((d0, d1)) => HermitianForm::from_log_diagonal(
                d0.iter().zip(d1).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
                self.space,
            ),
            None => {
                let d = DVector::from_iterator(
                    self.log_lambda.len(),
                    self.log_lambda.iter().map(|l| Complex64::new((t * l).exp(), 0.0)),
                );
                let mut m = self.a.adjoint() * DMatrix::from_diagonal(&d) * &self.a;
                let sym = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
                m.copy_from(&sym);
                HermitianForm::from_matrix(m, self.space)
            }
        }
    }

    /// `log(ξ† G_t ξ)` without forming `G_t`.
    pub fn log_quadratic(&self, t: f64, xi: &[Complex64]) -> f64 {
        match &self.diagonal {
            Some((d0, d1)) => log_sum_exp(
                d0.iter()
                    .zip(d1)
                    .zip(xi)
                    .map(|((a, b), z)| (1.0 - t) * a + t * b + z.norm_sqr().ln()),
            ),
            None => {
                let v = &self.a * DVector::from_column_slice(xi);
                log_sum_exp(
                    self.log_lambda
                        .iter()
                        .zip(v.iter())
                        .map(|(l, z)| t * l + z.norm_sqr().ln()),
                )
            }
        }
    }
}

/// Point on the geodesic between two positive-definite forms.
pub fn matrix_geodesic(g0: &HermitianForm, g1: &HermitianForm, t: f64) -> Result<HermitianForm> {
    GeodesicPencil::new(g0, g1)?.at(t)
}

fn sample_boundary(grid: &ReducedGrid, boundary: &BoundaryData) -> Result<Vec<f64>> {
    let data = boundary.sample(grid)?;
    if data
        .iter()
        .enumerate()
        .any(|(idx, v)| grid.is_base_boundary(idx / grid.fiber.n) && !v.is_finite())
    {
        return Err(Error::ZeroEvaluation);
    }
    Ok(data)
}

fn boundary_metrics<'a>(
    grid: &'a ReducedGrid,
    data: &'a [f64],
) -> impl Iterator<Item = (usize, FinslerMetric)> + 'a {
    let nf = grid.fiber.n;
    (0..grid.base_len())
        .filter(|&b| grid.is_base_boundary(b))
        .map(move |b| {
            let slice = data[b * nf..(b + 1) * nf].to_vec();
            (b, FinslerMetric { fiber: grid.fiber, log_f2: slice })
        })
}

fn check_grid(dom: &DomainSpec, bg: &Background) -> Result<()> {
    if bg.grid.base_dim != dom.base_dim() || bg.grid.n_base != dom.n_base {
        return Err(Error::GridMismatch("background and domain disagree".into()));
    }
    Ok(())
}

fn envelope_with(
    dom: &DomainSpec,
    boundary: &BoundaryData,
    bg: &Background,
    barrier: Option<&EnvelopeGrid>,
    opts: &EnvelopeOptions,
    norm: bool,
) -> Result<EnvelopeGrid> {
    check_grid(dom, bg)?;
    let grid = bg.grid;
    let data = sample_boundary(&grid, boundary)?;
    for (b, m) in boundary_metrics(&grid, &data) {
        let margin = m.psh_margin();
        if margin < -TOL_CONVEX.max(TOL_SLOPE) {
            return Err(Error::BoundaryNotPsh { node: b, margin });
        }
        if norm {
            let margin = m.norm_margin();
            if margin < -TOL_CONVEX {
                return Err(Error::BoundaryNotNorm { node: b, margin });
            }
        }
    }
    let upper = match barrier {
        Some(e) if e.grid != grid => {
            return Err(Error::GridMismatch("barrier lives on another grid".into()))
        }
        Some(e) => Some(e.phi()),
        None => None,
    };
    let opts = EnvelopeOptions { norm, ..*opts };
    let (phi, stats) = sweep::envelope(&grid, &data, upper.as_deref(), &opts)?;
    Ok(EnvelopeGrid::from_phi(bg, phi, Some(stats)))
}

/// Largest fiberwise-psh extension of the boundary metrics whose logarithm
/// is jointly convex: the extremal metric in the class of Griffiths-negative
/// metrics. The optional barrier caps every iterate from above.
pub fn perron_envelope(
    dom: &DomainSpec,
    boundary: &BoundaryData,
    bg: &Background,
    barrier: Option<&EnvelopeGrid>,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeGrid> {
    envelope_with(dom, boundary, bg, barrier, opts, false)
}

/// As [`perron_envelope`], with every fiber also required to be a norm.
pub fn perron_envelope_norms(
    dom: &DomainSpec,
    boundary: &BoundaryData,
    bg: &Background,
    barrier: Option<&EnvelopeGrid>,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeGrid> {
    envelope_with(dom, boundary, bg, barrier, opts, true)
}

/// Solution of the trace equation relative to the background; it dominates
/// every candidate of the envelope problems with the same boundary values.
pub fn solve_hym(
    dom: &DomainSpec,
    boundary: &BoundaryData,
    bg: &Background,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeGrid> {
    check_grid(dom, bg)?;
    let data = sample_boundary(&bg.grid, boundary)?;
    let phi = sweep::trace_solve(&bg.grid, &data, &bg.values, opts.tol, opts.max_iter)?;
    Ok(EnvelopeGrid::from_phi(bg, phi, None))
}

/// Boundary data from rank-two diagonal forms along the base boundary.
pub fn hermitian_boundary(
    fiber: LogGrid,
    form: impl Fn(&[f64]) -> HermitianForm + Send + Sync + 'static,
) -> BoundaryData {
    BoundaryData::from_fn(move |t| {
        FinslerMetric::hermitian(fiber, &form(t))
            .map(|m| m.log_f2)
            .unwrap_or_else(|_| vec![f64::NAN; fiber.n])
    })
}

/// Where a metric family lives over the base.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum BaseRegion {
    Disc { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

/// A Finsler metric on a trivial bundle over a planar region.
pub trait MetricFamily {
    fn name(&self) -> String;
    fn rank(&self) -> usize;
    fn region(&self) -> BaseRegion;
    /// `log f(z, ξ)`.
    fn log_f(&self, z: Complex64, xi: &[Complex64]) -> f64;
}

/// `f = e^{c|z|² + Re(bz)}·(ξ† H ξ)^{1/2}`.
#[derive(Debug, Clone)]
pub struct ExpWeighted {
    pub c: f64,
    pub b: Complex64,
    pub h: HermitianForm,
}

impl MetricFamily for ExpWeighted {
    fn name(&self) -> String {
        format!("exp-weighted(c={:.3}, r={})", self.c, self.h.dim())
    }
    fn rank(&self) -> usize {
        self.h.dim()
    }
    fn region(&self) -> BaseRegion {
        BaseRegion::Disc { radius: 1.0 }
    }
    fn log_f(&self, z: Complex64, xi: &[Complex64]) -> f64 {
        self.c * z.norm_sqr() + (self.b * z).re + 0.5 * self.h.quadratic(xi).ln()
    }
}

/// `f = e^{c|z|²}·(Σ wⱼ|ξⱼ|ᵖ)^{1/p}`.
#[derive(Debug, Clone)]
pub struct LpWeighted {
    pub c: f64,
    pub p: f64,
    pub weights: Vec<f64>,
}

impl MetricFamily for LpWeighted {
    fn name(&self) -> String {
        format!("lp-weighted(c={:.3}, p={:.3}, r={})", self.c, self.p, self.weights.len())
    }
    fn rank(&self) -> usize {
        self.weights.len()
    }
    fn region(&self) -> BaseRegion {
        BaseRegion::Disc { radius: 1.0 }
    }
    fn log_f(&self, z: Complex64, xi: &[Complex64]) -> f64 {
        let s = log_sum_exp(
            self.weights
                .iter()
                .zip(xi)
                .map(|(w, x)| w.ln() + self.p * x.norm().ln()),
        );
        self.c * z.norm_sqr() + s / self.p
    }
}

/// `f(w, ξ)² = ξ† G_{t} ξ` with `t = −log|w|` on `{e^{−1} < |w| < 1}`.
#[derive(Debug, Clone)]
pub struct AnnulusGeodesic {
    pub pencil: GeodesicPencil,
    pub rank: usize,
}

impl AnnulusGeodesic {
    pub fn new(g0: &HermitianForm, g1: &HermitianForm) -> Result<Self> {
        Ok(Self {
            pencil: GeodesicPencil::new(g0, g1)?,
            rank: g0.dim(),
        })
    }
}

impl MetricFamily for AnnulusGeodesic {
    fn name(&self) -> String {
        format!("annulus-geodesic(r={})", self.rank)
    }
    fn rank(&self) -> usize {
        self.rank
    }
    fn region(&self) -> BaseRegion {
        BaseRegion::Annulus {
            inner: (-1.0f64).exp(),
            outer: 1.0,
        }
    }
    fn log_f(&self, z: Complex64, xi: &[Complex64]) -> f64 {
        0.5 * self.pencil.log_quadratic(-z.norm().ln(), xi)
    }
}

/// Sampling parameters for [`certify_griffiths_negative`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CertifyOptions {
    pub centers: usize,
    /// Random directions per center; a pure base direction is always added.
    pub directions: usize,
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            centers: 24,
            directions: 4,
            samples: 64,
            radius: 1e-2,
            seed: 7,
        }
    }
}

/// Margin below which a sub-mean-value test counts as failed.
pub const CERTIFY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CriterionMargin {
    pub criterion: String,
    pub worst_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Certificate {
    pub family: String,
    pub options: CertifyOptions,
    pub criteria: Vec<CriterionMargin>,
    pub signs_agree: bool,
    pub griffiths_negative: bool,
}

impl Certificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

type Point = (Complex64, Vec<Complex64>);

fn unit_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    if v.norm() < 1e-3 {
        Complex64::new(1.0, 0.0)
    } else {
        v
    }
}

fn normalize(v: &mut [Complex64]) {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in v {
        *z /= n;
    }
}

/// Mean-value margin `(mean over the circle − center)/r²` of `g` along
/// `ζ ↦ p + ζv`.
fn circle_margin(g: &dyn Fn(&[Complex64]) -> f64, p: &[Complex64], v: &[Complex64], o: &CertifyOptions) -> f64 {
    let center = g(p);
    let mut q = p.to_vec();
    let mut mean = 0.0;
    for j in 0..o.samples {
        let zeta = Complex64::from_polar(o.radius, std::f64::consts::TAU * j as f64 / o.samples as f64);
        for ((qi, pi), vi) in q.iter_mut().zip(p).zip(v) {
            *qi = pi + zeta * vi;
        }
        mean += g(&q);
    }
    (mean / o.samples as f64 - center) / (o.radius * o.radius)
}

/// Complex derivative `∂_ζ g(p + ζv)` at `ζ = 0` by central differences.
fn holomorphic_derivative(g: &dyn Fn(&[Complex64]) -> f64, p: &[Complex64], v: &[Complex64]) -> Complex64 {
    let eps = 1e-6;
    let at = |dz: Complex64| {
        let q: Vec<Complex64> = p.iter().zip(v).map(|(a, b)| a + dz * b).collect();
        g(&q)
    };
    let dx = (at(Complex64::new(eps, 0.0)) - at(Complex64::new(-eps, 0.0))) / (2.0 * eps);
    let dy = (at(Complex64::new(0.0, eps)) - at(Complex64::new(0.0, -eps))) / (2.0 * eps);
    Complex64::new(0.5 * dx, -0.5 * dy)
}

fn sample_center(region: BaseRegion, rank: usize, rng: &mut ChaCha8Rng) -> Point {
    let z = match region {
        BaseRegion::Disc { radius } => {
            let r = 0.8 * radius * rng.gen::<f64>().sqrt();
            Complex64::from_polar(r, rng.gen_range(0.0..std::f64::consts::TAU))
        }
        BaseRegion::Annulus { inner, outer } => {
            let r = inner + (outer - inner) * rng.gen_range(0.1..0.9);
            Complex64::from_polar(r, rng.gen_range(0.0..std::f64::consts::TAU))
        }
    };
    let mut xi: Vec<Complex64> = (0..rank).map(|_| unit_complex(rng)).collect();
    normalize(&mut xi);
    (z, xi)
}

/// Sub-mean-value certificate of Griffiths negativity along random complex
/// lines, in three independent forms: `f` on the total space, `log f` on the
/// total space, and `log` of the induced metric on the tautological line
/// bundle in an affine chart of the projectivization.
///
/// For the test on `f` every direction is also tried after removing its
/// `∂ log f` component along the Euler field, which is where a failure of
/// `f` hides when `log f` fails.
pub fn certify_griffiths_negative(family: &dyn MetricFamily, opts: &CertifyOptions) -> Certificate {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let r = family.rank();
    let joint = |p: &[Complex64]| family.log_f(p[0], &p[1..]);
    let plain = |p: &[Complex64]| joint(p).exp();
    let mut worst = [f64::INFINITY; 3];
    for _ in 0..opts.centers {
        let (z, xi) = sample_center(family.region(), r, &mut rng);
        let mut p = vec![z];
        p.extend(&xi);
        let mut dirs: Vec<Vec<Complex64>> = Vec::with_capacity(opts.directions + 1);
        let mut base = vec![Complex64::new(0.0, 0.0); r + 1];
        base[0] = unit_complex(&mut rng);
        dirs.push(base);
        for _ in 0..opts.directions {
            let mut v: Vec<Complex64> = (0..=r).map(|_| unit_complex(&mut rng)).collect();
            normalize(&mut v);
            dirs.push(v);
        }
        // chart: ξ = s·ξ′ with ξ′ⱼ = 1 at the largest coordinate of the center
        let j = (0..r)
            .max_by(|a, b| xi[*a].norm().total_cmp(&xi[*b].norm()))
            .unwrap_or(0);
        let s0 = xi[j];
        let chart = move |q: &[Complex64]| {
            // q = (z, ξ′ without j, s)
            let s = q[r];
            let mut full = Vec::with_capacity(r);
            let mut k = 1;
            for i in 0..r {
                if i == j {
                    full.push(s);
                } else {
                    full.push(s * q[k]);
                    k += 1;
                }
            }
            family.log_f(q[0], &full)
        };
        let mut pc = vec![z];
        pc.extend((0..r).filter(|&i| i != j).map(|i| xi[i] / s0));
        pc.push(s0);
        for v in &dirs {
            worst[1] = worst[1].min(circle_margin(&joint, &p, v, opts));
            worst[0] = worst[0].min(circle_margin(&plain, &p, v, opts));
            // Euler correction: ∂ log f along (0, ξ) is 1/2
            let d = holomorphic_derivative(&joint, &p, v);
            let mut w = v.clone();
            for (wi, xii) in w[1..].iter_mut().zip(&xi) {
                *wi -= 2.0 * d * xii;
            }
            worst[0] = worst[0].min(circle_margin(&plain, &p, &w, opts));
            worst[2] = worst[2].min(circle_margin(&chart, &pc, v, opts));
        }
    }
    let names = ["f", "log f", "log f_L (chart)"];
    let criteria: Vec<CriterionMargin> = names
        .iter()
        .zip(worst)
        .map(|(n, m)| CriterionMargin {
            criterion: n.to_string(),
            worst_margin: m,
            pass: m >= -CERTIFY_TOL,
        })
        .collect();
    let signs_agree = criteria.iter().all(|c| c.pass == criteria[0].pass);
    let griffiths_negative = criteria.iter().all(|c| c.pass);
    Certificate {
        family: family.name(),
        options: *opts,
        criteria,
        signs_agree,
        griffiths_negative,
    }
}

/// A seeded random family: exponential weight or weighted `ℓᵖ` norm with
/// `c` of random sign and magnitude in `[0.1, 1]`. The flag says whether the
/// family is Griffiths negative, which happens exactly when `c > 0`.
pub fn random_family(seed: u64) -> (Box<dyn MetricFamily>, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.gen_range(0.1..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let r = rng.gen_range(2..=3);
    if rng.gen::<bool>() {
        let mut m = DMatrix::<Complex64>::from_fn(r, r, |_, _| unit_complex(&mut rng));
        m = m.adjoint() * &m + DMatrix::identity(r, r) * Complex64::new(0.5, 0.0);
        let h = HermitianForm::from_matrix(m, crate::quantize::SpaceTag::Sections)
            .expect("shifted gram matrix is positive definite");
        let fam = ExpWeighted {
            c,
            b: unit_complex(&mut rng) * 2.0,
            h,
        };
        (Box::new(fam), c > 0.0)
    } else {
        let fam = LpWeighted {
            c,
            p: rng.gen_range(1.0..4.0),
            weights: (0..r).map(|_| rng.gen_range(0.5..2.0)).collect(),
        };
        (Box::new(fam), c > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hcma::DomainKind;
    use crate::quantize::SpaceTag;

    fn diag(a: f64, b: f64) -> HermitianForm {
        HermitianForm::from_log_diagonal(vec![a.ln(), b.ln()], SpaceTag::Sections).unwrap()
    }

    #[test]
    fn metric_is_homogeneous() {
        let m = FinslerMetric::hermitian(LogGrid::new(20.0, 401), &diag(1.0, 3.0)).unwrap();
        let xi = [Complex64::new(0.3, -0.4), Complex64::new(0.5, 0.0)];
        let lam = Complex64::new(-1.7, 0.4);
        let scaled = [xi[0] * lam, xi[1] * lam];
        assert!((m.eval(scaled) - lam.norm() * m.eval(xi)).abs() < 1e-12);
        let exact = (xi[0].norm_sqr() + 3.0 * xi[1].norm_sqr()).sqrt();
        assert!((m.eval(xi) - exact).abs() < 1e-12);
        assert!(m.psh_margin() >= 0.0 && m.norm_margin() > -1e-12);
        assert!(m.quadratic_fit_residual() < 1e-10);
    }

    #[test]
    fn geodesic_endpoints_and_diagonal_path() {
        let a = diag(1.0, 2.0);
        let b = diag(3.0, 1.0);
        let mid = matrix_geodesic(&a, &b, 0.5).unwrap();
        let d = mid.log_diagonal().unwrap();
        assert!((d[0] - 0.5 * 3f64.ln()).abs() < 1e-15);
        assert!((d[1] - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn full_geodesic_matches_diagonal_route() {
        let a = HermitianForm::from_matrix(diag(1.0, 2.0).matrix(), SpaceTag::Sections).unwrap();
        let b = HermitianForm::from_matrix(diag(3.0, 1.0).matrix(), SpaceTag::Sections).unwrap();
        for t in [0.0, 0.3, 1.0] {
            let full = matrix_geodesic(&a, &b, t).unwrap().matrix();
            let fast = matrix_geodesic(&diag(1.0, 2.0), &diag(3.0, 1.0), t).unwrap().matrix();
            assert!((full - fast).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_strength_background_is_rejected() {
        let dom = DomainSpec::new(DomainKind::Annulus, 9).unwrap();
        let g = LogGrid::new(20.0, 65);
        match background_metric(&dom, g, &diag(1.0, 1.0), 0.0) {
            Err(Error::InsufficientStrength { direction, margin }) => {
                assert_eq!(direction, vec![1, 0]);
                assert!(margin.abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(background_metric(&dom, g, &diag(1.0, 1.0), 1.0).is_ok());
    }

    #[test]
    fn non_psh_boundary_is_rejected() {
        let dom = DomainSpec::new(DomainKind::Annulus, 5).unwrap();
        let g = LogGrid::new(10.0, 41);
        let bg = background_metric(&dom, g, &diag(1.0, 1.0), 1.0).unwrap();
        let bad: Vec<f64> = g.nodes().into_iter().map(|y| 2.0 * y.max(0.0)).collect();
        let bd = BoundaryData::ends(bad.clone(), bad);
        let r = perron_envelope(&dom, &bd, &bg, None, &EnvelopeOptions::default());
        assert!(matches!(r, Err(Error::BoundaryNotPsh { .. })));
    }

    #[test]
    fn constant_boundary_metric_is_reproduced() {
        let dom = DomainSpec::new(DomainKind::Bidisc, 5).unwrap();
        let g = LogGrid::new(10.0, 41);
        let bg = background_metric(&dom, g, &diag(1.0, 1.0), 1.0).unwrap();
        let bd = hermitian_boundary(g, |_| diag(2.0, 0.5));
        let env = perron_envelope(&dom, &bd, &bg, None, &EnvelopeOptions::default()).unwrap();
        let want = FinslerMetric::hermitian(g, &diag(2.0, 0.5)).unwrap();
        for b in 0..env.grid.base_len() {
            let got = env.metric_at(b).unwrap();
            for (x, y) in got.log_profile().iter().zip(want.log_profile()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn certificate_controls() {
        let o = CertifyOptions::default();
        let pos = ExpWeighted {
            c: -1.0,
            b: Complex64::new(0.0, 0.0),
            h: HermitianForm::identity(2, SpaceTag::Sections),
        };
        let cert = certify_griffiths_negative(&pos, &o);
        assert!(cert.signs_agree && !cert.griffiths_negative);
        let geo = AnnulusGeodesic::new(&diag(1.0, 2.0), &diag(3.0, 1.0)).unwrap();
        let cert = certify_griffiths_negative(&geo, &o);
        assert!(cert.signs_agree && cert.griffiths_negative, "{}", cert.to_json());
    }
}
