//! Dense eigenvalue analysis of the Schur complement and its preconditioned forms.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::discretization::StokesSystem;
use crate::error::{Error, Result};
use crate::krylov::{dense_from_operator, DenseSolver};
use crate::schur::SchurApproximation;
use crate::sparse::CsrMatrix;

/// Largest velocity space accepted for dense analysis.
pub const MAX_DENSE_VELOCITY: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumLabel {
    ExactSchur,
    ExactPreconditioned,
    MassPreconditioned,
    DiagBfbtPreconditioned,
    WbfbtPreconditioned,
}

impl SpectrumLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ExactSchur => "exact_schur",
            Self::ExactPreconditioned => "exact_preconditioned",
            Self::MassPreconditioned => "mass_preconditioned",
            Self::DiagBfbtPreconditioned => "diag_bfbt_preconditioned",
            Self::WbfbtPreconditioned => "wbfbt_preconditioned",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub label: SpectrumLabel,
    /// `(real, imaginary)` pairs sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub nullspace_omitted: usize,
}

impl SpectrumReport {
    pub fn real_parts(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.0).collect()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().map_or(f64::NAN, |e| e.0)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().map_or(f64::NAN, |e| e.0)
    }

    pub fn max_imaginary(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, e| m.max(e.1.abs()))
    }

    /// Rows `label,index,real,imag`.
    pub fn write_csv<W: Write>(&self, w: W, header: bool) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            out.write_record(["label", "index", "real", "imag"])?;
        }
        for (i, (re, im)) in self.eigenvalues.iter().enumerate() {
            out.write_record([self.label.as_str().to_string(), i.to_string(), format!("{re:.17e}"), format!("{im:.17e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Refuses systems too large for dense factorizations.
pub fn check_dense_budget(sys: &StokesSystem) -> Result<()> {
    if sys.num_velocity() > MAX_DENSE_VELOCITY {
        return Err(Error::TooLarge(sys.num_velocity()));
    }
    Ok(())
}

/// `S = B A⁻¹ Bᵀ` from a dense factorization of `A`.
pub fn dense_schur(a: &DMatrix<f64>, b: &CsrMatrix) -> Result<DMatrix<f64>> {
    let lu = DenseSolver::new(a.clone(), None)?;
    let bt = b.transpose().to_dense();
    let mut ainv_bt = DMatrix::zeros(bt.nrows(), bt.ncols());
    for j in 0..bt.ncols() {
        let col: Vec<f64> = bt.column(j).iter().copied().collect();
        ainv_bt.column_mut(j).copy_from_slice(&lu.solve(&col));
    }
    let s = b.to_dense() * ainv_bt;
    Ok((&s + s.transpose()) * 0.5)
}

/// Dense `S` of an assembled system.
pub fn system_schur(sys: &StokesSystem) -> Result<DMatrix<f64>> {
    check_dense_budget(sys)?;
    dense_schur(&dense_from_operator(sys.a.as_ref()), &sys.b)
}

/// Orthonormal basis of the complement of `z`: the last `n − 1` columns of
/// the Householder reflector mapping `z/‖z‖` to `e₁`.
pub fn complement_basis(z: &[f64]) -> DMatrix<f64> {
    let n = z.len();
    let zn = DVector::from_column_slice(z).normalize();
    let mut u = zn.clone();
    let sign = if zn[0] >= 0.0 { 1.0 } else { -1.0 };
    u[0] += sign;
    let h = DMatrix::identity(n, n) - (&u * u.transpose()) * (2.0 / u.norm_squared());
    h.columns(1, n - 1).into_owned()
}

/// Eigenvalues of `m` restricted to the complement of `z`, sorted by real part.
pub fn deflated_eigenvalues(m: &DMatrix<f64>, z: &[f64]) -> Result<Vec<(f64, f64)>> {
    let q = complement_basis(z);
    let reduced = q.transpose() * m * &q;
    let n = reduced.nrows();
    let max_iter = 200 * n.max(10);
    // a tight cluster (S̃ close to S) stalls the QR iteration; recentring it at zero does not
    let tau = reduced.trace() / n as f64;
    let shifted = &reduced - DMatrix::identity(n, n) * tau;
    let (schur, shift) = [f64::EPSILON, 1e-14, 1e-12]
        .iter()
        .find_map(|&eps| {
            Schur::try_new(reduced.clone(), eps, max_iter)
                .map(|s| (s, 0.0))
                .or_else(|| Schur::try_new(shifted.clone(), eps, max_iter).map(|s| (s, tau)))
        })
        .ok_or(Error::EigenNoConvergence)?;
    let mut ev: Vec<(f64, f64)> = schur.complex_eigenvalues().iter().map(|c| (c.re + shift, c.im)).collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(ev)
}

/// Spectrum of `S` itself on the zero-mean subspace.
pub fn schur_spectrum(s: &DMatrix<f64>, ones: &[f64]) -> Result<SpectrumReport> {
    Ok(SpectrumReport { label: SpectrumLabel::ExactSchur, eigenvalues: deflated_eigenvalues(s, ones)?, nullspace_omitted: 1 })
}

/// Spectrum of `S̃⁻¹ S` on the zero-mean subspace.
pub fn preconditioned_spectrum(
    s: &DMatrix<f64>,
    approx: &SchurApproximation,
    ones: &[f64],
    label: SpectrumLabel,
) -> Result<SpectrumReport> {
    let n = s.nrows();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let col: Vec<f64> = s.column(j).iter().copied().collect();
        m.column_mut(j).copy_from_slice(&approx.apply_inverse(&col, ones));
    }
    Ok(SpectrumReport { label, eigenvalues: deflated_eigenvalues(&m, ones)?, nullspace_omitted: 1 })
}

/// Relative distance `max_i |λ_i − μ_i| / max_i |λ_i|` of two sorted spectra.
pub fn relative_difference(a: &SpectrumReport, b: &SpectrumReport) -> f64 {
    let scale = a.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.0.hypot(e.1)));
    a.eigenvalues
        .iter()
        .zip(&b.eigenvalues)
        .fold(0.0f64, |m, (x, y)| m.max((x.0 - y.0).hypot(x.1 - y.1)))
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Backend;
    use crate::mesh::StructuredMesh;
    use crate::multigrid::MultigridConfig;
    use crate::schur::{InnerMode, SchurConfig, SchurKind};
    use crate::viscosity::SinkerConfig;

    fn system(level: u32, n: usize, dr: f64) -> (StokesSystem, SinkerConfig) {
        let cfg = SinkerConfig::random(2, n, 11, dr).unwrap();
        let sys = StokesSystem::assemble(StructuredMesh::new(2, level).unwrap(), 2, &cfg, Backend::Assembled).unwrap();
        (sys, cfg)
    }

    #[test]
    fn schur_complement_properties() {
        let (sys, _) = system(3, 2, 1e3);
        let s = system_schur(&sys).unwrap();
        let ones = DVector::from_vec(sys.pspace.constant_vector());
        let raw = {
            let a = dense_from_operator(sys.a.as_ref());
            let lu = DenseSolver::new(a, None).unwrap();
            let b = sys.b.to_dense();
            let mut out = DMatrix::zeros(b.nrows(), b.nrows());
            for j in 0..b.nrows() {
                let col: Vec<f64> = b.row(j).iter().copied().collect();
                let y = DVector::from_vec(lu.solve(&col));
                out.column_mut(j).copy_from(&(&b * y));
            }
            out
        };
        assert!((&raw - raw.transpose()).amax() <= 1e-10 * raw.amax());
        assert!((ones.transpose() * &s * &ones)[(0, 0)].abs() <= 1e-10 * s.amax());
        let spec = schur_spectrum(&s, ones.as_slice()).unwrap();
        assert_eq!(spec.eigenvalues.len(), sys.num_pressure() - 1);
        assert!(spec.min() > 1e-8 * spec.max());
    }

    #[test]
    fn zero_divergence_gives_zero_schur() {
        let (sys, _) = system(2, 0, 1.0);
        let a = dense_from_operator(sys.a.as_ref());
        let zero = CsrMatrix::from_triplets(sys.num_pressure(), sys.num_velocity(), &[]);
        assert_eq!(dense_schur(&a, &zero).unwrap().amax(), 0.0);
    }

    #[test]
    fn exact_preconditioning_gives_unit_spectrum() {
        let (sys, _) = system(3, 3, 1e4);
        let s = system_schur(&sys).unwrap();
        let approx = SchurApproximation::dense(s.clone(), &sys.pspace).unwrap();
        let ones = sys.pspace.constant_vector();
        let rep = preconditioned_spectrum(&s, &approx, &ones, SpectrumLabel::ExactPreconditioned).unwrap();
        assert_eq!(rep.nullspace_omitted, 1);
        assert_eq!(rep.eigenvalues.len(), sys.num_pressure() - 1);
        assert!(rep.eigenvalues.iter().all(|e| (e.0 - 1.0).abs() < 1e-8 && e.1.abs() < 1e-8));
    }

    fn spectrum_of(sys: &StokesSystem, cfg: &SinkerConfig, kind: SchurKind, s: &DMatrix<f64>) -> SpectrumReport {
        let sc = SchurConfig { kind, inner_mode: InnerMode::Exact, ..Default::default() };
        let approx = SchurApproximation::build(sys, cfg, &sc, &MultigridConfig::default()).unwrap();
        preconditioned_spectrum(s, &approx, &sys.pspace.constant_vector(), SpectrumLabel::WbfbtPreconditioned).unwrap()
    }

    #[test]
    fn mass_preconditioning_degrades_with_contrast() {
        let mut mins = Vec::new();
        for dr in [1e2, 1e4] {
            let (sys, cfg) = system(3, 2, dr);
            let s = system_schur(&sys).unwrap();
            let rep = spectrum_of(&sys, &cfg, SchurKind::Mass, &s);
            assert!(rep.max_imaginary() <= 1e-8 * rep.max());
            mins.push(rep.min());
        }
        assert!(mins[1] <= mins[0], "{mins:?}");
    }

    #[test]
    fn wbfbt_spectrum_is_real_and_bounded_below() {
        let (sys, cfg) = system(3, 2, 1e2);
        let s = system_schur(&sys).unwrap();
        let w = spectrum_of(&sys, &cfg, SchurKind::Wbfbt, &s);
        let m = spectrum_of(&sys, &cfg, SchurKind::Mass, &s);
        assert!(w.max_imaginary() <= 1e-8 * w.max());
        assert!(w.min() > m.min());
    }

    #[test]
    fn complement_basis_is_orthonormal() {
        let z = [1.0, 2.0, 0.0, -1.0, 3.0];
        let q = complement_basis(&z);
        assert_eq!(q.ncols(), 4);
        let i = q.transpose() * &q;
        assert!((i - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
        let zt = DVector::from_row_slice(&z).transpose() * &q;
        assert!(zt.amax() < 1e-14);
    }

    #[test]
    fn dense_budget_and_csv() {
        let (sys, _) = system(2, 0, 1.0);
        assert!(check_dense_budget(&sys).is_ok());
        let big = StokesSystem::assemble(StructuredMesh::new(2, 6).unwrap(), 2, &SinkerConfig::random(2, 0, 1, 1.0).unwrap(), Backend::Assembled)
            .unwrap();
        assert!(matches!(check_dense_budget(&big), Err(Error::TooLarge(_))));
        let rep = SpectrumReport { label: SpectrumLabel::MassPreconditioned, eigenvalues: vec![(0.5, 0.0), (1.0, -0.0)], nullspace_omitted: 1 };
        let mut buf = Vec::new();
        rep.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "label,index,real,imag");
        assert!(lines[1].starts_with("mass_preconditioned,0,5.0"));
    }

    #[test]
    fn clustered_spectrum_converges() {
        let n = 80;
        let m = DMatrix::from_fn(n, n, |i, j| {
            let noise = 1e-11 * ((i * 31 + j * 17) as f64).sin();
            if i == j { 1.0 + noise } else { noise }
        });
        let ev = deflated_eigenvalues(&m, &vec![1.0; n]).unwrap();
        assert_eq!(ev.len(), n - 1);
        assert!(ev.iter().all(|e| (e.0 - 1.0).abs() < 1e-8 && e.1.abs() < 1e-8));
    }

    #[test]
    fn relative_difference_examples() {
        let a = SpectrumReport { label: SpectrumLabel::ExactSchur, eigenvalues: vec![(1.0, 0.0), (2.0, 0.0)], nullspace_omitted: 1 };
        let mut b = a.clone();
        assert_eq!(relative_difference(&a, &b), 0.0);
        b.eigenvalues[1].0 = 2.2;
        assert!((relative_difference(&a, &b) - 0.1).abs() < 1e-12);
    }
}
