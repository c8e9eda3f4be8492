// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration, orchestration and emission.
//!
//! An experiment reads a TOML config, runs one pipeline, checks its
//! invariants and writes deterministic CSV files plus a `manifest.json` into
//! the output directory. Invariant failures are collected rather than raised
//! so that every run still leaves its artifacts behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::griffiths::{
    self, background_metric, certify_griffiths_negative, hermitian_boundary, perron_envelope,
    perron_envelope_norms, solve_hym, AnnulusGeodesic, Certificate, CertifyOptions, ExpWeighted,
    GeodesicPencil,
};
use crate::hcma::{self, DomainKind, DomainSpec, FdField};
use crate::quantize::{
    dual_hilbert_map, evaluation_covector, fs, fs_hilb_gap, fs_star, hilbert_map, FinslerNorm,
    HermitianForm, SpaceTag,
};
use crate::sweep::{self, BoundaryData, EnvelopeOptions};
use crate::toric::{profiles, softplus, LogGrid, ToricPotential, TOL_CONVEX};

/// The default experiment battery.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Geodesic,
    Quantize,
    Envelope,
    Hym,
    Converge,
    Certify,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Geodesic => "geodesic",
            Self::Quantize => "quantize",
            Self::Envelope => "envelope",
            Self::Hym => "hym",
            Self::Converge => "converge",
            Self::Certify => "certify",
        }
    }
}

/// A named analytic boundary profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Zero,
    Constant {
        value: f64,
    },
    RampMixture {
        weights: Vec<f64>,
        betas: Vec<f64>,
        centers: Vec<f64>,
    },
    Kink {
        center: f64,
    },
}

impl ProfileSpec {
    pub fn build(&self, grid: LogGrid) -> Result<ToricPotential> {
        match self {
            Self::Zero => Ok(ToricPotential::zero(grid)),
            Self::Constant { value } => Ok(ToricPotential::constant(grid, *value)),
            Self::RampMixture {
                weights,
                betas,
                centers,
            } => profiles::ramp_mixture(grid, weights, betas, centers),
            Self::Kink { center } => Ok(profiles::kink(grid, *center)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: DomainKind,
    /// Number of base intervals per axis.
    pub base_resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    pub half_width: f64,
    /// Number of fiber intervals.
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Profile on the `t = 0` side.
    pub start: ProfileSpec,
    /// Profile on the `t = 1` side.
    pub end: ProfileSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HermitianConfig {
    /// Diagonal entries of the rank-two form on the `t = 0` side.
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub background: [f64; 2],
    pub strength: f64,
    /// Over the bidisc tube, `twist·(t₁ − t₂)²` is added to the logarithm of
    /// the second entry, which makes the boundary data non-affine.
    #[serde(default)]
    pub twist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub families: usize,
    pub seed: u64,
    /// Exponent of the Griffiths-positive control `e^{κt(1−t)}·U_t`.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub sweep: f64,
    pub comparison: f64,
    pub boundary: f64,
    pub degenerate: f64,
    pub nondegenerate: f64,
    pub reach: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    pub k_list: Vec<usize>,
    pub domain: DomainConfig,
    pub fiber: FiberConfig,
    pub boundary: BoundaryConfig,
    pub hermitian: HermitianConfig,
    pub certify: CertifyConfig,
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn default_battery() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("default config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() || self.k_list[0] == 0 {
            return Err(Error::InvalidConfig("k_list must hold positive levels".into()));
        }
        if self.k_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("k_list must be strictly increasing".into()));
        }
        for (name, r) in [
            ("fiber.resolution", self.fiber.resolution),
            ("domain.base_resolution", self.domain.base_resolution),
        ] {
            if !r.is_power_of_two() || r < 2 {
                return Err(Error::InvalidConfig(format!("{name} must be a power of two")));
            }
        }
        if !(self.fiber.half_width > 0.0) {
            return Err(Error::InvalidConfig("fiber.half_width must be positive".into()));
        }
        let grid = self.fiber_grid();
        self.boundary.start.build(grid)?;
        self.boundary.end.build(grid)?;
        Ok(())
    }

    pub fn fiber_grid(&self) -> LogGrid {
        LogGrid::new(self.fiber.half_width, self.fiber.resolution + 1)
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        DomainSpec::new(self.domain.kind, self.domain.base_resolution + 1)
    }

    pub fn envelope_options(&self) -> EnvelopeOptions {
        EnvelopeOptions {
            reach: self.tolerances.reach,
            tol: self.tolerances.sweep,
            ..Default::default()
        }
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    pub fn endpoints(&self) -> Result<(ToricPotential, ToricPotential)> {
        let g = self.fiber_grid();
        Ok((self.boundary.start.build(g)?, self.boundary.end.build(g)?))
    }

    /// Toric boundary data. Over the bidisc tube the two profiles are mixed
    /// with weight `(t₁ + t₂)/2`.
    pub fn toric_boundary(&self) -> Result<BoundaryData> {
        let (a, b) = self.endpoints()?;
        Ok(BoundaryData::from_fn(move |t| {
            let s = t.iter().sum::<f64>() / t.len() as f64;
            a.psi()
                .iter()
                .zip(b.psi())
                .map(|(p, q)| (1.0 - s) * p + s * q)
                .collect()
        }))
    }

    /// Rank-two diagonal boundary forms. Over the bidisc tube the logarithms
    /// of the entries are bilinear in the corner values (the two off-diagonal
    /// corners swap one entry) plus the twist term.
    pub fn hermitian_data(&self) -> BoundaryData {
        let h = self.hermitian.clone();
        let ln = |v: [f64; 2]| [v[0].ln(), v[1].ln()];
        let (a, b) = (ln(h.start), ln(h.end));
        hermitian_boundary(self.fiber_grid(), move |t| {
            let d = match t.len() {
                1 => [(1.0 - t[0]) * a[0] + t[0] * b[0], (1.0 - t[0]) * a[1] + t[0] * b[1]],
                _ => {
                    let c = [a, [b[0], a[1]], [a[0], b[1]], b];
                    let w = [
                        (1.0 - t[0]) * (1.0 - t[1]),
                        t[0] * (1.0 - t[1]),
                        (1.0 - t[0]) * t[1],
                        t[0] * t[1],
                    ];
                    let mut d = [0.0; 2];
                    for (cw, wi) in c.iter().zip(w) {
                        d[0] += wi * cw[0];
                        d[1] += wi * cw[1];
                    }
                    d[1] += h.twist * (t[0] - t[1]).powi(2);
                    d
                }
            };
            HermitianForm::from_log_diagonal(d.to_vec(), SpaceTag::Sections)
                .expect("finite diagonal")
        })
    }
}

/// One failed invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub suite: String,
    pub check: String,
    pub value: f64,
    pub threshold: f64,
}

/// Collected invariant outcomes of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Checks {
    pub passed: Vec<String>,
    pub failures: Vec<Failure>,
}

impl Checks {
    fn at_most(&mut self, suite: &str, check: &str, value: f64, threshold: f64) {
        self.record(suite, check, value, threshold, value <= threshold);
    }

    fn at_least(&mut self, suite: &str, check: &str, value: f64, threshold: f64) {
        self.record(suite, check, value, threshold, value >= threshold);
    }

    fn record(&mut self, suite: &str, check: &str, value: f64, threshold: f64, ok: bool) {
        if ok {
            self.passed.push(format!("{suite}.{check}"));
        } else {
            self.failures.push(Failure {
                suite: suite.into(),
                check: check.into(),
                value,
                threshold,
            });
        }
    }
}

/// Everything an experiment produced.
#[derive(Debug, Default)]
pub struct Artifacts {
    /// File name and contents, written in order.
    pub files: Vec<(String, Vec<u8>)>,
    pub checks: Checks,
    pub wall_times: BTreeMap<String, f64>,
}

impl Artifacts {
    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut wtr = csv_writer(Vec::new());
        wtr.write_record(header)?;
        for r in rows {
            wtr.write_record(&r)?;
        }
        self.add(name, finish(wtr)?);
        Ok(())
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f()?;
        self.wall_times.insert(stage.to_string(), t0.elapsed().as_secs_f64());
        Ok(out)
    }
}

fn csv_writer(buf: Vec<u8>) -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf)
}

fn finish(wtr: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    wtr.into_inner()
        .map_err(|e| Error::IoFailure(std::io::Error::other(e.to_string())))
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// One row of a [`ConvergenceTable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    /// `‖FS*_k(U^{N,k}) − u‖` over the grid.
    pub sup_error_n: f64,
    /// `‖FS*_k(U^{M,k}) − u‖` over the grid.
    pub sup_error_m: f64,
    pub log_k_over_k: f64,
    /// `C·log(k)/k` with the fitted constant.
    pub fitted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares `C` in `error ≈ C·log(k)/k` over the M column.
    pub fitted_c: f64,
    /// `‖C·log(k)/k − error‖₂ / ‖error‖₂`.
    pub fit_residual: f64,
    pub config_hash: String,
    pub wall_time: f64,
}

impl ConvergenceTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["k", "sup_error_n", "sup_error_m", "log_k_over_k", "fitted_c"])?;
        for r in &self.rows {
            wtr.write_record([
                r.k.to_string(),
                r.sup_error_n.to_string(),
                r.sup_error_m.to_string(),
                r.log_k_over_k.to_string(),
                self.fitted_c.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Least-squares fit of `e ≈ C·f`, with the relative residual.
pub fn fit_constant(f: &[f64], e: &[f64]) -> (f64, f64) {
    let ff: f64 = f.iter().map(|v| v * v).sum();
    let c = if ff > 0.0 {
        f.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / ff
    } else {
        0.0
    };
    let res: f64 = f.iter().zip(e).map(|(a, b)| (c * a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    (c, if norm > 0.0 { res / norm } else { 0.0 })
}

/// `FS*_1` of a torus-invariant rank-two metric.
fn fs_star_rank_two(m: &griffiths::FinslerMetric, x: f64) -> f64 {
    let cov = evaluation_covector(x, 1);
    let (c0, c1) = (cov.log_moduli[0], cov.log_moduli[1]);
    // V(ŝ*)² = |ξ₀|²·e^{F(y)} with y = log|ξ₁/ξ₀|²
    2.0 * c0 + m.log_profile_at(2.0 * (c1 - c0))
}

/// Quantized pipeline against the Monge–Ampère solution.
///
/// For each `k`, the boundary profiles are sent through `H*_k`, extended by
/// the extremal envelope, pulled back by `FS*_k` at every grid node and
/// compared with the Monge–Ampère solution `u`. Over one-dimensional bases
/// the extremal envelope of Hermitian data is the matrix geodesic, which is
/// both the norm and the general Finsler envelope. Over the bidisc tube the
/// level `k = 1` is reduced to rank-two envelopes and compared with the
/// finite-difference solution.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceTable> {
    let t0 = Instant::now();
    let grid = cfg.fiber_grid();
    let dom = cfg.domain_spec()?;
    let xs = grid.nodes();
    let rows: Vec<ConvergenceRow> = match dom.kind {
        DomainKind::Strip | DomainKind::Annulus => {
            let (v0, v1) = cfg.endpoints()?;
            let u = hcma::solve_geodesic(&v0, &v1, dom.n_base)?;
            let us: Vec<Vec<f64>> = u.slices.iter().map(|s| s.u()).collect();
            cfg.k_list
                .par_iter()
                .map(|&k| {
                    let level = |e| with_level(e, k);
                    let pencil = GeodesicPencil::new(
                        &dual_hilbert_map(&v0, k).map_err(level)?,
                        &dual_hilbert_map(&v1, k).map_err(level)?,
                    )?;
                    let mut err = 0.0f64;
                    for (t, uj) in u.t.iter().zip(&us) {
                        let form = pencil.at(*t)?;
                        for (x, ui) in xs.iter().zip(uj) {
                            err = err.max((fs_star(&form, k, *x)? - ui).abs());
                        }
                    }
                    Ok(row(k, err, err))
                })
                .collect::<Result<Vec<_>>>()?
        }
        DomainKind::Bidisc => {
            if cfg.k_list != [1] {
                return Err(Error::Unsupported(
                    "over the bidisc tube only k = 1 reduces to rank-two envelopes".into(),
                ));
            }
            let opts = cfg.envelope_options();
            let tb = cfg.toric_boundary()?;
            let fd = hcma::solve_hcma_fd(&dom, grid, &tb, &opts)?;
            let u = fd.u();
            let quantized = BoundaryData::from_fn({
                let tb = cfg.toric_boundary()?;
                move |t| {
                    let p = ToricPotential::from_psi(grid, tb.slice(t)).expect("mixed profile is admissible");
                    let form = dual_hilbert_map(&p, 1).expect("level one quadrature");
                    griffiths::FinslerMetric::hermitian(grid, &form)
                        .map(|m| m.log_profile().to_vec())
                        .unwrap_or_else(|_| vec![f64::NAN; grid.n])
                }
            });
            let h = &cfg.hermitian;
            let bg_form = HermitianForm::from_log_diagonal(
                vec![h.background[0].ln(), h.background[1].ln()],
                SpaceTag::Sections,
            )?;
            let bg = background_metric(&dom, grid, &bg_form, h.strength)?;
            let hym = solve_hym(&dom, &quantized, &bg, &opts)?;
            let m = perron_envelope(&dom, &quantized, &bg, Some(&hym), &opts)?;
            let n = perron_envelope_norms(&dom, &quantized, &bg, Some(&hym), &opts)?;
            let nf = grid.n;
            let err = |e: &griffiths::EnvelopeGrid| -> Result<f64> {
                let mut worst = 0.0f64;
                for b in 0..fd.grid.base_len() {
                    let metric = e.metric_at(b)?;
                    for (i, x) in xs.iter().enumerate() {
                        worst = worst.max((fs_star_rank_two(&metric, *x) - u[b * nf + i]).abs());
                    }
                }
                Ok(worst)
            };
            vec![row(1, err(&n)?, err(&m)?)]
        }
    };
    let f: Vec<f64> = rows.iter().map(|r| r.log_k_over_k).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.sup_error_m).collect();
    let (fitted_c, fit_residual) = fit_constant(&f, &e);
    let rows = rows
        .into_iter()
        .map(|r| ConvergenceRow {
            fitted: fitted_c * r.log_k_over_k,
            ..r
        })
        .collect();
    Ok(ConvergenceTable {
        rows,
        fitted_c,
        fit_residual,
        config_hash: cfg.hash(),
        wall_time: t0.elapsed().as_secs_f64(),
    })
}

fn row(k: usize, n: f64, m: f64) -> ConvergenceRow {
    let kf = k as f64;
    ConvergenceRow {
        k,
        sup_error_n: n,
        sup_error_m: m,
        log_k_over_k: kf.ln() / kf,
        fitted: 0.0,
    }
}

fn with_level(e: Error, k: usize) -> Error {
    match e {
        Error::NoSubsolution(m) => Error::NoSubsolution(format!("k = {k}: {m}")),
        Error::Unsupported(m) => Error::Unsupported(format!("k = {k}: {m}")),
        Error::GridMismatch(m) => Error::GridMismatch(format!("k = {k}: {m}")),
        Error::InvalidConfig(m) => Error::InvalidConfig(format!("k = {k}: {m}")),
        other => other,
    }
}

/// One row of a [`SemiclassicalReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiclassicalRow {
    pub family: String,
    pub k: usize,
    pub worst_margin: f64,
    pub pass: bool,
    /// Whether the family is Griffiths negative by construction.
    pub expected_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiclassicalReport {
    pub rows: Vec<SemiclassicalRow>,
}

impl SemiclassicalReport {
    /// Every Griffiths-negative family passes and every control fails.
    pub fn consistent(&self) -> bool {
        self.rows.iter().all(|r| r.pass == r.expected_pass)
    }
}

/// Worst joint-admissibility margin of `Ψ(t, x) = log(1 + eˣ) + FS*_k(V_t)(x)`.
///
/// Second differences along eight lattice directions, normalized by the
/// squared step, and the distance of the `x` difference quotients to the
/// ends of `[0, 1]`.
pub fn joint_psh_margin(ts: &[f64], xs: &[f64], psi: &[Vec<f64>]) -> f64 {
    let ht = ts[1] - ts[0];
    let hx = xs[1] - xs[0];
    let dirs: [(isize, isize); 8] = [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (1, -2), (2, 1), (2, -1)];
    let (nt, nx) = (ts.len() as isize, xs.len() as isize);
    let mut worst = f64::INFINITY;
    for j in 0..nt {
        for i in 0..nx {
            for &(a, b) in &dirs {
                let (j0, i0, j1, i1) = (j - a, i - b, j + a, i + b);
                if j0 < 0 || j1 >= nt || i0 < 0 || i1 >= nx || i0 >= nx || i1 < 0 {
                    continue;
                }
                let d2 = (a as f64 * ht).powi(2) + (b as f64 * hx).powi(2);
                let v = psi[j0 as usize][i0 as usize] + psi[j1 as usize][i1 as usize]
                    - 2.0 * psi[j as usize][i as usize];
                worst = worst.min(v / d2);
            }
            if i + 1 < nx {
                let s = (psi[j as usize][i as usize + 1] - psi[j as usize][i as usize]) / hx;
                worst = worst.min(s).min(1.0 - s);
            }
        }
    }
    worst
}

/// Joint admissibility of the dual Fubini–Study pullbacks of Griffiths-
/// negative families over `[0, 1]`, with a Griffiths-positive control.
pub fn run_semiclassical_psh_check(cfg: &ExperimentConfig) -> Result<SemiclassicalReport> {
    let (v0, v1) = cfg.endpoints()?;
    let nt = cfg.domain.base_resolution + 1;
    let ts: Vec<f64> = (0..nt).map(|j| j as f64 / (nt - 1) as f64).collect();
    let xs = cfg.fiber_grid().nodes();
    let kappa = cfg.certify.kappa;
    let rows = cfg
        .k_list
        .par_iter()
        .map(|&k| {
            let a = dual_hilbert_map(&v0, k)?;
            let b = dual_hilbert_map(&v1, k)?;
            let pencil = GeodesicPencil::new(&a, &b)?;
            let families: [(&str, bool); 3] = [("constant", true), ("matrix-geodesic", true), ("positive-control", false)];
            families
                .iter()
                .map(|&(name, expected)| {
                    let mut psi = Vec::with_capacity(nt);
                    for &t in &ts {
                        let form: HermitianForm = match name {
                            "constant" => a.clone(),
                            "matrix-geodesic" => pencil.at(t)?,
                            _ => pencil.at(t)?.scaled_log(2.0 * kappa * t * (1.0 - t)),
                        };
                        psi.push(
                            xs.iter()
                                .map(|&x| Ok(softplus(x) + fs_star(&form, k, x)?))
                                .collect::<Result<Vec<_>>>()?,
                        );
                    }
                    let m = joint_psh_margin(&ts, &xs, &psi);
                    Ok(SemiclassicalRow {
                        family: name.into(),
                        k,
                        worst_margin: m,
                        pass: m >= -TOL_CONVEX,
                        expected_pass: expected,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SemiclassicalReport {
        rows: rows.into_iter().flatten().collect(),
    })
}

/// Certificates for the random families and the two controls.
pub fn run_certificates(cfg: &ExperimentConfig) -> Result<Vec<(Certificate, bool)>> {
    let opts = CertifyOptions {
        seed: cfg.certify.seed,
        ..Default::default()
    };
    let mut out = Vec::new();
    for i in 0..cfg.certify.families {
        let (fam, expected) = griffiths::random_family(cfg.certify.seed.wrapping_add(i as u64));
        out.push((certify_griffiths_negative(fam.as_ref(), &opts), expected));
    }
    let ln = |v: [f64; 2]| vec![v[0].ln(), v[1].ln()];
    let h = &cfg.hermitian;
    let geo = AnnulusGeodesic::new(
        &HermitianForm::from_log_diagonal(ln(h.start), SpaceTag::Sections)?,
        &HermitianForm::from_log_diagonal(ln(h.end), SpaceTag::Sections)?,
    )?;
    out.push((certify_griffiths_negative(&geo, &opts), true));
    let control = ExpWeighted {
        c: -1.0,
        b: num_complex::Complex64::new(0.0, 0.0),
        h: HermitianForm::identity(2, SpaceTag::Sections),
    };
    out.push((certify_griffiths_negative(&control, &opts), false));
    Ok(out)
}

/// Runs one experiment and collects its artifacts and invariant checks.
pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut art = Artifacts::default();
    match cfg.experiment {
        ExperimentKind::Geodesic => geodesic(cfg, &mut art)?,
        ExperimentKind::Quantize => quantize(cfg, &mut art)?,
        ExperimentKind::Envelope => envelope(cfg, &mut art, true)?,
        ExperimentKind::Hym => envelope(cfg, &mut art, false)?,
        ExperimentKind::Converge => {
            let table = art.timed("converge", || run_convergence(cfg))?;
            art.add("convergence.csv", to_bytes(|b| table.write_csv(b))?);
            for w in table.rows.iter() {
                art.checks.at_most(
                    "converge",
                    &format!("n_le_m.k{}", w.k),
                    w.sup_error_n - w.sup_error_m,
                    cfg.tolerances.comparison,
                );
            }
        }
        ExperimentKind::Certify => certify(cfg, &mut art)?,
    }
    Ok(art)
}

fn geodesic(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let dom = cfg.domain_spec()?;
    let grid = cfg.fiber_grid();
    let opts = cfg.envelope_options();
    let tol = &cfg.tolerances;
    let boundary = cfg.toric_boundary()?;
    let fd = art.timed("fd", || hcma::solve_hcma_fd(&dom, grid, &boundary, &opts))?;
    art.add("fd.csv", to_bytes(|b| fd.write_csv(b))?);
    let data = boundary.sample(&fd.grid)?;
    let bdry = (0..fd.psi.len())
        .filter(|idx| fd.grid.is_base_boundary(idx / grid.n))
        .map(|idx| (fd.psi[idx] - data[idx]).abs())
        .fold(0.0, f64::max);
    art.checks.at_most("geodesic", "fd_boundary_error", bdry, tol.boundary);
    let deg = sweep::degeneracy(&fd.grid, &fd.psi, &sweep::stencil(&fd.grid, opts.reach));
    art.checks.at_most("geodesic", "fd_degeneracy", deg.median, tol.degenerate);
    art.checks.at_most(
        "geodesic",
        "fd_slack",
        sweep::envelope_slack(&fd.grid, &fd.psi, None, &opts),
        2.0 * opts.tol,
    );
    let mut summary = vec![("fd_degeneracy_median", deg.median), ("fd_boundary_error", bdry)];
    if dom.base_dim() == 1 {
        let (v0, v1) = cfg.endpoints()?;
        let exact = art.timed("closed_form", || hcma::solve_geodesic(&v0, &v1, dom.n_base))?;
        art.add("geodesic.csv", to_bytes(|b| exact.write_csv(b))?);
        let field = FdField {
            grid: fd.grid,
            psi: exact.psi_values(),
            stats: fd.stats,
        };
        let rep = hcma::check_comparison(&field, &fd, &dom)?;
        art.checks
            .at_most("geodesic", "closed_form_below_fd", rep.max_violation, tol.comparison);
        art.checks
            .at_least("geodesic", "joint_convexity", exact.joint_convexity(), -tol.degenerate);
        let gap = field
            .psi
            .iter()
            .zip(&fd.psi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        summary.push(("closed_form_gap", gap));
        summary.push(("closed_form_joint_convexity", exact.joint_convexity()));
    }
    art.csv(
        "geodesic_summary.csv",
        &["quantity", "value"],
        summary.into_iter().map(|(q, v)| vec![q.to_string(), v.to_string()]),
    )
}

fn quantize(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let (v0, _) = cfg.endpoints()?;
    let xs = cfg.fiber_grid().nodes();
    let rows = art.timed("quantize", || {
        cfg.k_list
            .par_iter()
            .map(|&k| {
                let g = hilbert_map(&v0, k)?;
                let dual = g.dual()?;
                let (lower, upper) = fs_hilb_gap(&v0, k)?;
                let mut krw = 0.0f64;
                for &x in &xs {
                    krw = krw.max((fs(&g, k, x)? - fs_star(&dual as &dyn FinslerNorm, k, x)?).abs());
                }
                let bytes = to_bytes(|b| g.write_csv(b))?;
                Ok((k, lower, upper, krw, bytes))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (k, _, _, krw, bytes) in &rows {
        art.add(&format!("gram_k{k}.csv"), bytes.clone());
        art.checks.at_most("quantize", &format!("fs_dual_identity.k{k}"), *krw, 1e-10);
    }
    art.csv(
        "quantize.csv",
        &["k", "max_v_minus_fs_hilb", "max_fs_hilb_minus_v", "fs_dual_identity_error"],
        rows.iter().map(|(k, l, u, e, _)| vec![k.to_string(), l.to_string(), u.to_string(), e.to_string()]),
    )
}

fn envelope(cfg: &ExperimentConfig, art: &mut Artifacts, full: bool) -> Result<()> {
    let dom = cfg.domain_spec()?;
    let grid = cfg.fiber_grid();
    let opts = cfg.envelope_options();
    let tol = cfg.tolerances.clone();
    let h = &cfg.hermitian;
    let bg_form = HermitianForm::from_log_diagonal(
        vec![h.background[0].ln(), h.background[1].ln()],
        SpaceTag::Sections,
    )?;
    let bg = background_metric(&dom, grid, &bg_form, h.strength)?;
    let data = cfg.hermitian_data();
    let sampled = data.sample(&bg.grid)?;
    let hym = art.timed("hym", || solve_hym(&dom, &data, &bg, &opts))?;
    art.add("hym.csv", to_bytes(|b| hym.write_csv(b))?);
    let hdeg = hym.degeneracy(opts.reach);
    art.checks.at_least("hym", "nondegeneracy", hdeg.median, tol.nondegenerate);
    art.checks
        .at_most("hym", "boundary_error", hym.boundary_error(&sampled), tol.boundary);
    let mut summary = vec![("hym_degeneracy_median", hdeg.median)];
    if full {
        let m = art.timed("envelope_m", || perron_envelope(&dom, &data, &bg, Some(&hym), &opts))?;
        let n = art.timed("envelope_n", || {
            perron_envelope_norms(&dom, &data, &bg, Some(&hym), &opts)
        })?;
        art.add("envelope_m.csv", to_bytes(|b| m.write_csv(b))?);
        art.add("envelope_n.csv", to_bytes(|b| n.write_csv(b))?);
        let (pm, pn, ph) = (m.phi(), n.phi(), hym.phi());
        let excess = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max)
        };
        let n_le_m = excess(&pn, &pm);
        let m_le_h = excess(&pm, &ph);
        art.checks.at_most("envelope", "n_le_m", n_le_m, tol.comparison);
        art.checks.at_most("envelope", "m_le_hym", m_le_h, tol.comparison);
        for (name, e, norm) in [("m", &m, false), ("n", &n, true)] {
            let deg = e.degeneracy(opts.reach);
            let b = e.boundary_error(&sampled);
            let slack = sweep::envelope_slack(
                &e.grid,
                &e.phi(),
                Some(&ph),
                &EnvelopeOptions { norm, ..opts },
            );
            art.checks.at_most("envelope", &format!("{name}_degeneracy"), deg.median, tol.degenerate);
            art.checks.at_most("envelope", &format!("{name}_boundary_error"), b, tol.boundary);
            art.checks.at_most("envelope", &format!("{name}_maximality"), slack, 2.0 * opts.tol);
        }
        let center = m.grid.base_len() / 2;
        summary.extend([
            ("m_degeneracy_median", m.degeneracy(opts.reach).median),
            ("n_degeneracy_median", n.degeneracy(opts.reach).median),
            ("max_n_minus_m", n_le_m),
            ("max_m_minus_n", excess(&pm, &pn)),
            ("max_m_minus_hym", m_le_h),
            ("m_clamp_active", m.stats.map_or(0.0, |s| s.clamp_active as f64)),
            ("center_quadratic_fit_residual", m.metric_at(center)?.quadratic_fit_residual()),
        ]);
    }
    art.csv(
        "envelope_summary.csv",
        &["quantity", "value"],
        summary.into_iter().map(|(q, v)| vec![q.to_string(), v.to_string()]),
    )
}

fn certify(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let certs = art.timed("certify", || run_certificates(cfg))?;
    let json: Vec<&Certificate> = certs.iter().map(|(c, _)| c).collect();
    art.add(
        "certificates.json",
        serde_json::to_vec_pretty(&json).expect("certificates serialize"),
    );
    for (c, expected) in &certs {
        art.checks
            .record("certify", &format!("signs_agree.{}", c.family), 0.0, 0.0, c.signs_agree);
        art.checks.record(
            "certify",
            &format!("verdict.{}", c.family),
            c.criteria[1].worst_margin,
            -griffiths::CERTIFY_TOL,
            c.griffiths_negative == *expected,
        );
    }
    let report = art.timed("semiclassical", || run_semiclassical_psh_check(cfg))?;
    for r in &report.rows {
        art.checks.record(
            "semiclassical",
            &format!("{}.k{}", r.family, r.k),
            r.worst_margin,
            -TOL_CONVEX,
            r.pass == r.expected_pass,
        );
    }
    art.csv(
        "semiclassical.csv",
        &["family", "k", "worst_margin", "pass"],
        report
            .rows
            .iter()
            .map(|r| vec![r.family.clone(), r.k.to_string(), r.worst_margin.to_string(), r.pass.to_string()]),
    )
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    version: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
    grid: GridInfo,
    tolerances: &'a Tolerances,
    wall_times: &'a BTreeMap<String, f64>,
    output_dir_created: bool,
    files: Vec<&'a str>,
    passed: usize,
    failures: &'a [Failure],
}

#[derive(Debug, Serialize)]
struct GridInfo {
    fiber_nodes: usize,
    half_width: f64,
    base_nodes_per_axis: usize,
    base_dim: usize,
}

/// Writes artifacts, `failures.csv` when a check failed, and the manifest.
pub fn emit(cfg: &ExperimentConfig, art: &Artifacts, out: &Path) -> Result<PathBuf> {
    let created = !out.exists();
    std::fs::create_dir_all(out)?;
    for (name, bytes) in &art.files {
        std::fs::write(out.join(name), bytes)?;
    }
    let mut files: Vec<&str> = art.files.iter().map(|(n, _)| n.as_str()).collect();
    if !art.checks.failures.is_empty() {
        let mut wtr = csv_writer(Vec::new());
        wtr.write_record(["suite", "check", "value", "threshold"])?;
        for f in &art.checks.failures {
            wtr.write_record([f.suite.clone(), f.check.clone(), f.value.to_string(), f.threshold.to_string()])?;
        }
        std::fs::write(out.join("failures.csv"), finish(wtr)?)?;
        files.push("failures.csv");
    }
    let dom_dim = match cfg.domain.kind {
        DomainKind::Bidisc => 2,
        _ => 1,
    };
    let manifest = Manifest {
        experiment: cfg.experiment.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        config: cfg,
        grid: GridInfo {
            fiber_nodes: cfg.fiber.resolution + 1,
            half_width: cfg.fiber.half_width,
            base_nodes_per_axis: cfg.domain.base_resolution + 1,
            base_dim: dom_dim,
        },
        tolerances: &cfg.tolerances,
        wall_times: &art.wall_times,
        output_dir_created: created,
        files,
        passed: art.checks.passed.len(),
        failures: &art.checks.failures,
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses_and_hashes_stably() {
        let a = ExperimentConfig::default_battery();
        let b = ExperimentConfig::default_battery();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.experiment, ExperimentKind::Converge);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = DEFAULT_CONFIG.to_string();
        let bad_k = base.replace("k_list = [2, 4, 8, 16, 32]", "k_list = [4, 2]");
        assert!(matches!(ExperimentConfig::from_toml(&bad_k), Err(Error::InvalidConfig(_))));
        let bad_res = base.replace("resolution = 512", "resolution = 500");
        assert!(matches!(ExperimentConfig::from_toml(&bad_res), Err(Error::InvalidConfig(_))));
        let bad_name = base.replacen("profile = \"ramp_mixture\"", "profile = \"spiral\"", 1);
        assert!(matches!(ExperimentConfig::from_toml(&bad_name), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn fit_is_exact_on_proportional_data() {
        let f = [0.1, 0.2, 0.4];
        let e = [0.3, 0.6, 1.2];
        let (c, r) = fit_constant(&f, &e);
        assert!((c - 3.0).abs() < 1e-14 && r < 1e-14);
    }

    #[test]
    fn joint_margin_sees_concavity_in_t() {
        let ts: Vec<f64> = (0..5).map(|j| j as f64 / 4.0).collect();
        let xs: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let ok: Vec<Vec<f64>> = ts.iter().map(|_| xs.iter().map(|&x| softplus(x)).collect()).collect();
        assert!(joint_psh_margin(&ts, &xs, &ok) >= 0.0);
        let bad: Vec<Vec<f64>> = ts
            .iter()
            .map(|t| xs.iter().map(|&x| softplus(x) + t * (1.0 - t)).collect())
            .collect();
        assert!(joint_psh_margin(&ts, &xs, &bad) < -1.0);
    }
}
