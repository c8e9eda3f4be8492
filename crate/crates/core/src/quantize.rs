// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

//! Hilbert and Fubini–Study maps on `H⁰(CP¹, O(k))` and its dual.
//!
//! Sections are written in the monomial basis `z⁰, …, zᵏ`. Torus-invariant
//! potentials give diagonal Gram matrices, which are kept as logarithms of
//! their entries so that levels up to `k = 64` stay representable. Full
//! complex matrices are supported for the generic Hermitian identities.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::toric::{softplus, ToricPotential};

/// Which side of the duality a form lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpaceTag {
    Sections,
    DualSections,
}

impl SpaceTag {
    fn flipped(self) -> Self {
        match self {
            SpaceTag::Sections => SpaceTag::DualSections,
            SpaceTag::DualSections => SpaceTag::Sections,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// Logarithms of the diagonal entries.
    Diagonal(Vec<f64>),
    Full(DMatrix<Complex64>),
}

/// Positive-definite Hermitian form in the monomial basis or its dual.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianForm {
    space: SpaceTag,
    repr: Repr,
}

const HERMITIAN_TOL: f64 = 1e-12;

impl HermitianForm {
    pub fn identity(dim: usize, space: SpaceTag) -> Self {
        Self {
            space,
            repr: Repr::Diagonal(vec![0.0; dim]),
        }
    }

    /// Diagonal form with entries `exp(log_diag[j])`.
    pub fn from_log_diagonal(log_diag: Vec<f64>, space: SpaceTag) -> Result<Self> {
        if log_diag.is_empty() || log_diag.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularForm);
        }
        Ok(Self {
            space,
            repr: Repr::Diagonal(log_diag),
        })
    }

    /// Full form; checks Hermitian symmetry and positive definiteness.
    pub fn from_matrix(m: DMatrix<Complex64>, space: SpaceTag) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                    return Err(Error::SingularForm);
                }
            }
        }
        if Cholesky::new(m.clone()).is_none() {
            return Err(Error::SingularForm);
        }
        Ok(Self {
            space,
            repr: Repr::Full(m),
        })
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Diagonal(d) => d.len(),
            Repr::Full(m) => m.nrows(),
        }
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.repr, Repr::Diagonal(_))
    }

    /// Log-diagonal entries of a diagonal form.
    pub fn log_diagonal(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Diagonal(d) => Some(d),
            Repr::Full(_) => None,
        }
    }

    pub fn matrix(&self) -> DMatrix<Complex64> {
        match &self.repr {
            Repr::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_iterator(
                d.len(),
                d.iter().map(|v| Complex64::new(v.exp(), 0.0)),
            )),
            Repr::Full(m) => m.clone(),
        }
    }

    /// The form multiplied by `e^{c}`.
    pub fn scaled_log(&self, c: f64) -> Self {
        let repr = match &self.repr {
            Repr::Diagonal(d) => Repr::Diagonal(d.iter().map(|v| v + c).collect()),
            Repr::Full(m) => Repr::Full(m * Complex64::new(c.exp(), 0.0)),
        };
        Self {
            space: self.space,
            repr,
        }
    }

    /// Value `v† G v` of the quadratic form.
    pub fn quadratic(&self, v: &[Complex64]) -> f64 {
        match &self.repr {
            Repr::Diagonal(d) => d.iter().zip(v).map(|(g, z)| g.exp() * z.norm_sqr()).sum(),
            Repr::Full(m) => {
                let x = DVector::from_column_slice(v);
                (x.adjoint() * m * &x)[(0, 0)].re
            }
        }
    }

    /// The dual form: inverse transpose in the dual monomial basis.
    ///
    /// `G*(λ)² = sup |λ(s)|² / G(s)`, which is `λ† (G⁻¹)ᵀ λ`.
    pub fn dual(&self) -> Result<Self> {
        let repr = match &self.repr {
            Repr::Diagonal(d) => Repr::Diagonal(d.iter().map(|v| -v).collect()),
            Repr::Full(m) => {
                let inv = m.clone().try_inverse().ok_or(Error::SingularForm)?;
                let mut t = inv.transpose();
                // restore exact hermitian symmetry after the inversion
                let sym = (&t + t.adjoint()) * Complex64::new(0.5, 0.0);
                t.copy_from(&sym);
                Repr::Full(t)
            }
        };
        Ok(Self {
            space: self.space.flipped(),
            repr,
        })
    }

    /// `a ⪯ b` in the Loewner order, up to `tol`.
    pub fn loewner_le(a: &Self, b: &Self, tol: f64) -> Result<bool> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                found: b.dim(),
            });
        }
        match (&a.repr, &b.repr) {
            (Repr::Diagonal(x), Repr::Diagonal(y)) => Ok(x
                .iter()
                .zip(y)
                .all(|(p, q)| p.exp() <= q.exp() * (1.0 + tol))),
            _ => {
                let d = b.matrix() - a.matrix();
                let eig = nalgebra::SymmetricEigen::new(d);
                Ok(eig.eigenvalues.iter().all(|&l| l >= -tol))
            }
        }
    }

    /// Full format: rows `i,j,re,im`. Diagonal format: rows `j,log_g`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        match &self.repr {
            Repr::Diagonal(d) => {
                wtr.write_record(["j", "log_g"])?;
                for (j, v) in d.iter().enumerate() {
                    wtr.write_record([j.to_string(), v.to_string()])?;
                }
            }
            Repr::Full(m) => {
                wtr.write_record(["i", "j", "re", "im"])?;
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let z = m[(i, j)];
                        wtr.write_record([
                            i.to_string(),
                            j.to_string(),
                            z.re.to_string(),
                            z.im.to_string(),
                        ])?;
                    }
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A degree-one homogeneous nonnegative function on a vector space.
pub trait FinslerNorm {
    fn dim(&self) -> usize;

    fn norm(&self, v: &[Complex64]) -> f64;

    /// `log L(ŝ*)`; implementors may override with a cancellation-free path.
    fn log_norm_at(&self, cov: &EvaluationCovector) -> f64 {
        self.norm(&cov.coords).ln()
    }
}

impl FinslerNorm for HermitianForm {
    fn dim(&self) -> usize {
        HermitianForm::dim(self)
    }

    fn norm(&self, v: &[Complex64]) -> f64 {
        self.quadratic(v).max(0.0).sqrt()
    }

    fn log_norm_at(&self, cov: &EvaluationCovector) -> f64 {
        match &self.repr {
            Repr::Diagonal(d) => {
                0.5 * log_sum_exp(d.iter().zip(&cov.log_moduli).map(|(g, c)| g + 2.0 * c))
            }
            Repr::Full(_) => self.norm(&cov.coords).ln(),
        }
    }
}

/// Components of the unit evaluation functional `ŝ*_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationCovector {
    pub x: f64,
    pub theta: f64,
    /// `log|coords_j| = j·x/2 − k·log(1 + eˣ)/2`.
    pub log_moduli: Vec<f64>,
    pub coords: Vec<Complex64>,
}

impl EvaluationCovector {
    /// Multiplies every component by the same unimodular factor.
    pub fn rephased(&self, phase: f64) -> Self {
        let u = Complex64::from_polar(1.0, phase);
        Self {
            coords: self.coords.iter().map(|c| c * u).collect(),
            ..self.clone()
        }
    }
}

/// Evaluation covector at the point `z = e^{x/2}` on the positive real ray.
pub fn evaluation_covector(x: f64, k: usize) -> EvaluationCovector {
    evaluation_covector_at(x, 0.0, k)
}

/// Evaluation covector at `z = e^{x/2 + iθ}`.
pub fn evaluation_covector_at(x: f64, theta: f64, k: usize) -> EvaluationCovector {
    let base = 0.5 * k as f64 * softplus(x);
    let log_moduli: Vec<f64> = (0..=k).map(|j| 0.5 * j as f64 * x - base).collect();
    let coords = log_moduli
        .iter()
        .enumerate()
        .map(|(j, l)| Complex64::from_polar(l.exp(), j as f64 * theta))
        .collect();
    EvaluationCovector {
        x,
        theta,
        log_moduli,
        coords,
    }
}

pub(crate) fn log_sum_exp(it: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

fn check_level(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "quantization level must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Hilbert map `H_k(u)(s, s) = ∫ h^k(s, s) e^{−k u} ω`.
///
/// By S¹-invariance the Gram matrix is diagonal; its entries
/// `∫ e^{jx} (1 + eˣ)^{−k} e^{−k u} dμ_FS` are summed by the trapezoid rule
/// in log-sum-exp form.
pub fn hilbert_map(u: &ToricPotential, k: usize) -> Result<HermitianForm> {
    check_level(k)?;
    u.validate()?;
    let grid = u.grid();
    let h = grid.spacing();
    let xs = grid.nodes();
    let uv = u.u();
    let kf = k as f64;
    let log_g = (0..=k)
        .map(|j| {
            let terms = xs.iter().zip(&uv).enumerate().map(|(i, (&x, &ui))| {
                let w = if i == 0 || i + 1 == xs.len() {
                    0.5 * h
                } else {
                    h
                };
                // FS density e^x/(1+e^x)^2 folded into the exponent
                (j as f64 + 1.0) * x - (kf + 2.0) * softplus(x) - kf * ui + w.ln()
            });
            let v = log_sum_exp(terms);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::QuadratureUnderflow { coefficient: j })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    HermitianForm::from_log_diagonal(log_g, SpaceTag::Sections)
}

/// Dual Hilbert map `H*_k(u) = H_k(u)*`.
pub fn dual_hilbert_map(u: &ToricPotential, k: usize) -> Result<HermitianForm> {
    hilbert_map(u, k)?.dual()
}

/// Dual Fubini–Study value `(2/k)·log L(ŝ*_k(x))`.
pub fn fs_star(l: &dyn FinslerNorm, k: usize, x: f64) -> Result<f64> {
    fs_star_cov(l, k, &evaluation_covector(x, k))
}

pub fn fs_star_cov(l: &dyn FinslerNorm, k: usize, cov: &EvaluationCovector) -> Result<f64> {
    check_level(k)?;
    if l.dim() != k + 1 {
        return Err(Error::DimensionMismatch {
            expected: k + 1,
            found: l.dim(),
        });
    }
    let v = l.log_norm_at(cov);
    if !v.is_finite() {
        return Err(Error::ZeroEvaluation);
    }
    Ok(2.0 / k as f64 * v)
}

/// Classical Fubini–Study value `(1/k)·log sup_{G(s) ≤ 1} h^k(s, s)(x)`.
pub fn fs(g: &HermitianForm, k: usize, x: f64) -> Result<f64> {
    fs_at(g, k, x, 0.0)
}

/// [`fs`] at `z = e^{x/2 + iθ}`. The supremum equals `c† G⁻¹ c` for the
/// evaluation vector `c`, obtained by a Cholesky solve.
pub fn fs_at(g: &HermitianForm, k: usize, x: f64, theta: f64) -> Result<f64> {
    check_level(k)?;
    if g.dim() != k + 1 {
        return Err(Error::DimensionMismatch {
            expected: k + 1,
            found: g.dim(),
        });
    }
    let cov = evaluation_covector_at(x, theta, k);
    let kf = k as f64;
    match &g.repr {
        Repr::Diagonal(d) => {
            Ok(log_sum_exp(d.iter().zip(&cov.log_moduli).map(|(l, c)| 2.0 * c - l)) / kf)
        }
        Repr::Full(m) => {
            let chol = Cholesky::new(m.clone()).ok_or(Error::SingularForm)?;
            // h^k(s,s)(x) = |Σ c_j a_j|² = |w† a|² with w = conj(c)
            let w = DVector::from_iterator(k + 1, cov.coords.iter().map(|c| c.conj()));
            let y = chol.solve(&w);
            let q = w.dotc(&y).re;
            if q <= 0.0 {
                return Err(Error::SingularForm);
            }
            Ok(q.ln() / kf)
        }
    }
}

/// Sup-norm gaps `(max(v − FS_k∘H_k(v)), max(FS_k∘H_k(v) − v))` over the grid.
pub fn fs_hilb_gap(v: &ToricPotential, k: usize) -> Result<(f64, f64)> {
    let g = hilbert_map(v, k)?;
    let u = v.u();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for (x, ui) in v.grid().nodes().into_iter().zip(&u) {
        let f = fs(&g, k, x)?;
        lower = lower.max(ui - f);
        upper = upper.max(f - ui);
    }
    Ok((lower, upper))
}

/// `1 / ((k+1)·C(k, j))`: the Gram entries of `H_k(0)`.
pub fn fs_gram_entry(k: usize, j: usize) -> f64 {
    // (k+1) C(k,j) computed in log space
    let lg = |n: usize| (1..=n).map(|i| (i as f64).ln()).sum::<f64>();
    (-(lg(k + 1) - lg(j) - lg(k - j))).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toric::LogGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
        let a = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut m = &a * a.adjoint() + DMatrix::identity(n, n) * Complex64::new(0.5, 0.0);
        let sym = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        m.copy_from(&sym);
        m
    }

    #[test]
    fn fs_gram_entries_match_quadrature() {
        let g = LogGrid::with_nodes(1025);
        for k in [1, 3, 8] {
            let h = hilbert_map(&ToricPotential::zero(g), k).unwrap();
            for (j, l) in h.log_diagonal().unwrap().iter().enumerate() {
                let exact = fs_gram_entry(k, j);
                assert!((l.exp() / exact - 1.0).abs() < 1e-7, "k={k} j={j}");
            }
        }
    }

    #[test]
    fn constants_factor_out_of_hilbert() {
        let g = LogGrid::with_nodes(513);
        let k = 5;
        let h0 = hilbert_map(&ToricPotential::zero(g), k).unwrap();
        let hc = hilbert_map(&ToricPotential::constant(g, 0.4), k).unwrap();
        for (a, b) in h0
            .log_diagonal()
            .unwrap()
            .iter()
            .zip(hc.log_diagonal().unwrap())
        {
            assert!((b - (a - k as f64 * 0.4)).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_of_identity_and_diagonal() {
        let id = HermitianForm::identity(4, SpaceTag::Sections);
        assert_eq!(id.dual().unwrap().matrix(), id.matrix());
        let d = HermitianForm::from_log_diagonal(vec![0.5, -1.0, 2.0], SpaceTag::Sections).unwrap();
        let dd = d.dual().unwrap();
        assert_eq!(dd.space(), SpaceTag::DualSections);
        assert_eq!(dd.log_diagonal().unwrap(), &[-0.5, 1.0, -2.0]);
        assert_eq!(dd.dual().unwrap(), d);
    }

    #[test]
    fn double_dual_restores_random_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=6 {
            let g = HermitianForm::from_matrix(random_pd(&mut rng, n), SpaceTag::Sections).unwrap();
            let back = g.dual().unwrap().dual().unwrap().matrix();
            assert!((back - g.matrix()).norm() < 1e-12 * g.matrix().norm().max(1.0));
        }
    }

    #[test]
    fn covector_is_unit_and_phase_blind() {
        let c = evaluation_covector(0.0, 1);
        assert!((c.coords[0].re - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((c.coords[1].re - 0.5f64.sqrt()).abs() < 1e-15);
        for x in [-7.0, -0.3, 2.0, 15.0] {
            let k = 9;
            let c = evaluation_covector(x, k);
            let total: f64 = (0..=k)
                .map(|j| c.coords[j].norm_sqr() / fs_gram_entry(k, j) / (k as f64 + 1.0))
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = HermitianForm::from_matrix(random_pd(&mut rng, 4), SpaceTag::DualSections).unwrap();
        let c = evaluation_covector(0.7, 3);
        let a = fs_star_cov(&g, 3, &c).unwrap();
        let b = fs_star_cov(&g, 3, &c.rephased(1.234)).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn fs_star_of_euclidean_at_origin() {
        let e = HermitianForm::identity(2, SpaceTag::DualSections);
        assert!(fs_star(&e, 1, 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn fs_of_bergman_form_is_log_k_plus_one_over_k() {
        let g = LogGrid::with_nodes(1025);
        for k in [1, 4, 16] {
            let h = hilbert_map(&ToricPotential::zero(g), k).unwrap();
            let target = ((k + 1) as f64).ln() / k as f64;
            for x in [-5.0, 0.0, 3.0] {
                assert!((fs(&h, k, x).unwrap() - target).abs() < 1e-7);
                assert!((fs_star(&h.dual().unwrap(), k, x).unwrap() - target).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn fs_shifts_under_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 3;
        let g = HermitianForm::from_matrix(random_pd(&mut rng, k + 1), SpaceTag::Sections).unwrap();
        let c = 0.37;
        for x in [-1.0, 0.5] {
            let a = fs(&g.scaled_log(k as f64 * c), k, x).unwrap();
            assert!((a - (fs(&g, k, x).unwrap() - c)).abs() < 1e-12);
        }
    }

    #[test]
    fn fs_agrees_with_dual_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let k = rng.gen_range(1..=7);
            let g =
                HermitianForm::from_matrix(random_pd(&mut rng, k + 1), SpaceTag::Sections).unwrap();
            let d = g.dual().unwrap();
            for _ in 0..5 {
                let (x, th) = (rng.gen_range(-6.0..6.0), rng.gen_range(0.0..std::f64::consts::TAU));
                let a = fs_at(&g, k, x, th).unwrap();
                let b = fs_star_cov(&d, k, &evaluation_covector_at(x, th, k)).unwrap();
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hilbert_is_antitone_and_dual_monotone() {
        let g = LogGrid::with_nodes(257);
        let lo = ToricPotential::constant(g, -0.2);
        let hi = crate::toric::profiles::ramp_mixture(g, &[1.0], &[2.0], &[0.5]).unwrap();
        let lo = crate::toric::project_psh(
            g,
            &lo.u()
                .iter()
                .zip(hi.u())
                .map(|(a, b)| a.min(b))
                .collect::<Vec<_>>(),
        );
        let (hl, hh) = (hilbert_map(&lo, 4).unwrap(), hilbert_map(&hi, 4).unwrap());
        assert!(HermitianForm::loewner_le(&hh, &hl, 1e-12).unwrap());
        assert!(
            HermitianForm::loewner_le(&hl.dual().unwrap(), &hh.dual().unwrap(), 1e-12).unwrap()
        );
        for x in [-3.0, 0.0, 4.0] {
            assert!(
                fs_star(&hl.dual().unwrap(), 4, x).unwrap()
                    <= fs_star(&hh.dual().unwrap(), 4, x).unwrap() + 1e-12
            );
        }
    }

    #[test]
    fn gap_of_zero_potential() {
        let g = LogGrid::with_nodes(513);
        for k in [2, 8] {
            let (lo, up) = fs_hilb_gap(&ToricPotential::zero(g), k).unwrap();
            let t = ((k + 1) as f64).ln() / k as f64;
            assert!((lo + t).abs() < 1e-7 && (up - t).abs() < 1e-7);
            let (lc, uc) = fs_hilb_gap(&ToricPotential::constant(g, 1.1), k).unwrap();
            assert!((lc - lo).abs() < 1e-9 && (uc - up).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_and_mismatched_inputs_error() {
        let z = DMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert!(matches!(
            HermitianForm::from_matrix(z, SpaceTag::Sections),
            Err(Error::SingularForm)
        ));
        let id = HermitianForm::identity(3, SpaceTag::Sections);
        assert!(matches!(
            fs(&id, 4, 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_metric_is_rejected() {
        struct Zero;
        impl FinslerNorm for Zero {
            fn dim(&self) -> usize {
                3
            }
            fn norm(&self, _: &[Complex64]) -> f64 {
                0.0
            }
        }
        assert!(matches!(fs_star(&Zero, 2, 0.0), Err(Error::ZeroEvaluation)));
    }
}
