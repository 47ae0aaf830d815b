use nalgebra::DMatrix;

use super::hierarchy::{MultigridConfig, MultigridHierarchy, ProblemKind};
use super::smoother::{estimate_spectral_bound, Chebyshev};
use crate::discretization::{assemble_mixed_mass, assemble_pressure_mass, ModalSpace, NodalSpace};
use crate::error::{Error, Result};
use crate::krylov::project_out;
use crate::sparse::{CsrMatrix, LinearOperator};
use crate::viscosity::QuadratureField;

/// Block-diagonal inverse of the unweighted modal pressure mass.
fn inverse_pressure_mass(vspace: &NodalSpace, pspace: &ModalSpace) -> Result<CsrMatrix> {
    let one = QuadratureField::constant(pspace.mesh().num_elements(), vspace.tables().quad.len(), 1.0);
    let mp = assemble_pressure_mass(vspace, pspace, &one)?;
    let n = pspace.modes_per_element();
    let mut t = Vec::with_capacity(n * n * pspace.mesh().num_elements());
    for e in 0..pspace.mesh().num_elements() {
        let r = pspace.element_range(e);
        let block = DMatrix::from_fn(n, n, |i, j| mp.get(r.start + i, r.start + j));
        let inv = block.cholesky().ok_or(Error::Singular(0.0))?.inverse();
        for i in 0..n {
            for j in 0..n {
                t.push((r.start + i, r.start + j, inv[(i, j)]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(pspace.num_dofs(), pspace.num_dofs(), &t))
}

/// V-cycle for the modal operator `K_w = B C_w⁻¹ Bᵀ`.
///
/// Smooths on `K_w` in the modal space, moves the residual to a continuous
/// nodal `Q_k` space, applies a Neumann Poisson V-cycle with coefficient
/// `1/w`, moves the correction back by L² projection and smooths again.
/// The output is orthogonal to the constant pressure.
#[derive(Clone, Debug)]
pub struct PressurePoisson {
    k: CsrMatrix,
    smoother: Chebyshev,
    nodal: MultigridHierarchy,
    /// `∫ ψ_i q_j`, nodal × modal.
    m_np: CsrMatrix,
    mp_inv: CsrMatrix,
    ones: Vec<f64>,
}

impl PressurePoisson {
    /// `b` is the constrained divergence, `c_diag` the diagonal of `C_w`, and
    /// `weight` the generating weight `w` at the velocity Gauss points.
    pub fn new(
        b: &CsrMatrix,
        c_diag: &[f64],
        vspace: &NodalSpace,
        pspace: &ModalSpace,
        weight: &QuadratureField,
        cfg: &MultigridConfig,
    ) -> Result<Self> {
        if c_diag.len() != b.ncols() {
            return Err(Error::DimensionMismatch { expected: b.ncols(), got: c_diag.len() });
        }
        weight.ensure_positive("poisson weight")?;
        let cinv: Vec<f64> = c_diag.iter().map(|c| 1.0 / c).collect();
        let k = b.weighted_gram(&cinv);
        let diag = k.diagonal();
        if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::NonPositive { value: diag[i], location: format!("diagonal of K_w, row {i}") });
        }
        let lambda = estimate_spectral_bound(&k, &diag, cfg.power_iterations, cfg.cheb_safety);
        let smoother = Chebyshev::new(&diag, lambda, cfg.cheb_lo_fraction, cfg.cheb_safety, cfg.smoother_sweeps);
        let mesh = *pspace.mesh();
        let order = vspace.order();
        let kappa = weight.map(|w| 1.0 / w);
        let nodal = MultigridHierarchy::build(mesh, ProblemKind::NeumannPoisson, &kappa, order, cfg, None)?;
        let nspace = NodalSpace::scalar(mesh, order)?;
        let m_np = assemble_mixed_mass(pspace, &nspace).transpose();
        let mp_inv = inverse_pressure_mass(vspace, pspace)?;
        Ok(Self { k, smoother, nodal, m_np, mp_inv, ones: pspace.constant_vector() })
    }

    /// The modal operator `K_w`.
    pub fn operator(&self) -> &CsrMatrix {
        &self.k
    }

    pub fn nodal_hierarchy(&self) -> &MultigridHierarchy {
        &self.nodal
    }

    pub fn v_cycle(&self, b_modal: &[f64]) -> Vec<f64> {
        let mut b = b_modal.to_vec();
        project_out(&mut b, &self.ones);
        let mut x = vec![0.0; b.len()];
        self.smoother.smooth(&self.k, &mut x, &b);
        let mut r = self.k.apply_new(&x);
        r.iter_mut().zip(&b).for_each(|(ri, bi)| *ri = bi - *ri);
        let rn = self.m_np.apply_new(&self.mp_inv.apply_new(&r));
        let en = self.nodal.v_cycle(&rn);
        let mut dual = vec![0.0; self.m_np.ncols()];
        self.m_np.apply_transpose(&en, &mut dual);
        let corr = self.mp_inv.apply_new(&dual);
        x.iter_mut().zip(&corr).for_each(|(xi, ci)| *xi += ci);
        self.smoother.smooth(&self.k, &mut x, &b);
        project_out(&mut x, &self.ones);
        x
    }
}

impl LinearOperator for PressurePoisson {
    fn nrows(&self) -> usize {
        self.k.nrows()
    }
    fn ncols(&self) -> usize {
        self.k.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.v_cycle(x));
    }
}

/// Convenience wrapper for [`PressurePoisson::v_cycle`].
pub fn pressure_poisson_vcycle(pp: &PressurePoisson, b_modal: &[f64]) -> Vec<f64> {
    pp.v_cycle(b_modal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble_divergence, assemble_velocity_lumped_mass};
    use crate::krylov::{gmres, GmresConfig, NullSpace};
    use crate::mesh::StructuredMesh;
    use crate::sparse::{dot, norm};
    use crate::viscosity::{weight_field, Side, SinkerConfig, WeightConfig};

    fn setup(level: u32, dr: f64) -> PressurePoisson {
        let mesh = StructuredMesh::new(2, level).unwrap();
        let v = NodalSpace::velocity(mesh, 2).unwrap();
        let p = ModalSpace::new(mesh, 1);
        let cfg = SinkerConfig::random(2, 4, 3, dr).unwrap();
        let w = weight_field(&mesh, &v.tables().quad, &cfg, &WeightConfig::default(), Side::Left);
        let wn = weight_field(&mesh, &v.tables().nodal_quad, &cfg, &WeightConfig::default(), Side::Left);
        let c = assemble_velocity_lumped_mass(&v, &wn).unwrap();
        let b = assemble_divergence(&v, &p).unwrap();
        PressurePoisson::new(&b, &c, &v, &p, &w, &MultigridConfig::default()).unwrap()
    }

    fn wave(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * f).sin()).collect()
    }

    #[test]
    fn constant_mode_maps_to_zero() {
        let pp = setup(3, 1e2);
        let ones = vec![1.0; pp.nrows()];
        assert!(norm(&pp.v_cycle(&ones)) < 1e-12);
        let x = pp.v_cycle(&wave(pp.nrows(), 0.3));
        assert!(dot(&x, &ones).abs() < 1e-10 * norm(&x));
    }

    #[test]
    fn cycle_is_linear() {
        let pp = setup(3, 1e2);
        let n = pp.nrows();
        let (a, b) = (wave(n, 0.3), wave(n, 1.7));
        let comb: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 3.0 * x - y).collect();
        let (va, vb) = (pp.v_cycle(&a), pp.v_cycle(&b));
        let expect: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| 3.0 * x - y).collect();
        let got = pp.v_cycle(&comb);
        let d: Vec<f64> = got.iter().zip(&expect).map(|(x, y)| x - y).collect();
        assert!(norm(&d) <= 1e-12 * norm(&expect));
    }

    #[test]
    fn preconditioned_gmres_is_fast_and_level_stable() {
        let mut counts = Vec::new();
        for level in [4, 5, 6] {
            let pp = setup(level, 1e4);
            let mut g = wave(pp.nrows(), 0.11);
            project_out(&mut g, &vec![1.0; pp.nrows()]);
            let cfg = GmresConfig { null_space: Some(NullSpace::new(0, vec![1.0; pp.nrows()])), ..Default::default() };
            let (_, rep) = gmres(pp.operator(), &pp, &g, &cfg).unwrap();
            assert!(rep.converged);
            counts.push(rep.iterations);
        }
        assert!(counts.iter().all(|&c| c <= 15), "{counts:?}");
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 4, "{counts:?}");
    }

    #[test]
    fn rejects_mismatched_weighting() {
        let mesh = StructuredMesh::new(2, 2).unwrap();
        let v = NodalSpace::velocity(mesh, 2).unwrap();
        let p = ModalSpace::new(mesh, 1);
        let b = assemble_divergence(&v, &p).unwrap();
        let w = QuadratureField::constant(16, v.tables().quad.len(), 1.0);
        let err = PressurePoisson::new(&b, &[1.0; 3], &v, &p, &w, &MultigridConfig::default());
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }
}
