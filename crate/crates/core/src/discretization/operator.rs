//! Viscous operator backends and the assembled Stokes system.

use super::assembly::{assemble_divergence, assemble_load, assemble_viscous_block};
use super::space::{ModalSpace, NodalSpace};
use crate::error::Result;
use crate::mesh::StructuredMesh;
use crate::sparse::{CsrMatrix, LinearOperator};
use crate::viscosity::{QuadratureField, SinkerConfig};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// How the viscous block is stored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Assembled CSR below [`AUTO_NNZ_LIMIT`] estimated nonzeros, matrix-free above.
    #[default]
    Auto,
    Assembled,
    MatrixFree,
}

pub const AUTO_NNZ_LIMIT: usize = 40_000_000;

impl std::str::FromStr for Backend {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "assembled" => Ok(Self::Assembled),
            "matrix_free" | "matrix-free" => Ok(Self::MatrixFree),
            _ => Err(crate::error::Error::InvalidConfig(format!("unknown backend `{s}`"))),
        }
    }
}

/// Upper bound on the stored nonzeros of the viscous block.
pub fn estimated_nnz(space: &NodalSpace) -> usize {
    let coupled = (2 * space.order() + 1).pow(space.dim() as u32) * space.components();
    space.num_dofs() * coupled
}

/// Matrix-free `2μ ε:ε` operator evaluated element by element.
#[derive(Clone, Debug)]
pub struct ElasticityOperator {
    space: NodalSpace,
    /// `μ · w_q · h^{d−2}` per element and quadrature point.
    coef: QuadratureField,
    diag: Vec<f64>,
}

impl ElasticityOperator {
    pub fn new(space: &NodalSpace, mu: &QuadratureField) -> Result<Self> {
        mu.ensure_positive("viscosity")?;
        let d = space.dim();
        let h = space.mesh().element_size();
        let w = space.tables().quad.weights.clone();
        let scale = h.powi(d as i32 - 2);
        let mut coef = mu.clone();
        for chunk in coef.values.chunks_mut(w.len()) {
            chunk.iter_mut().zip(&w).for_each(|(c, wq)| *c *= wq * scale);
        }
        let t = &space.tables().nodal;
        let mut diag = vec![0.0; space.num_dofs()];
        for e in 0..space.mesh().num_elements() {
            let c = coef.element(e);
            let dofs = space.element_dofs(e);
            for a in 0..t.num_nodes {
                let mut g2 = 0.0;
                let mut gi = [0.0; 3];
                for (q, cq) in c.iter().enumerate() {
                    let g = t.grad(q, a);
                    for m in 0..d {
                        g2 += cq * g[m] * g[m];
                        gi[m] += cq * g[m] * g[m];
                    }
                }
                for i in 0..d {
                    if let Some(k) = dofs[a * d + i] {
                        diag[k] += g2 + gi[i];
                    }
                }
            }
        }
        Ok(Self { space: space.clone(), coef, diag })
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl LinearOperator for ElasticityOperator {
    fn nrows(&self) -> usize {
        self.space.num_dofs()
    }
    fn ncols(&self) -> usize {
        self.space.num_dofs()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.space.dim();
        let t = &self.space.tables().nodal;
        let nn = t.num_nodes;
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut ue = vec![0.0; nn * d];
        let mut ye = vec![0.0; nn * d];
        for e in 0..self.space.mesh().num_elements() {
            let dofs = self.space.element_dofs(e);
            for (u, dof) in ue.iter_mut().zip(&dofs) {
                *u = dof.map_or(0.0, |k| x[k]);
            }
            ye.iter_mut().for_each(|v| *v = 0.0);
            for (q, cq) in self.coef.element(e).iter().enumerate() {
                let mut g = [[0.0f64; 3]; 3];
                for b in 0..nn {
                    let gb = t.grad(q, b);
                    for i in 0..d {
                        let u = ue[b * d + i];
                        for m in 0..d {
                            g[i][m] += u * gb[m];
                        }
                    }
                }
                let mut s = [[0.0f64; 3]; 3];
                for i in 0..d {
                    for m in 0..d {
                        s[i][m] = cq * (g[i][m] + g[m][i]);
                    }
                }
                for a in 0..nn {
                    let ga = t.grad(q, a);
                    for i in 0..d {
                        ye[a * d + i] += (0..d).map(|m| s[i][m] * ga[m]).sum::<f64>();
                    }
                }
            }
            for (v, dof) in ye.iter().zip(&dofs) {
                if let Some(k) = dof {
                    y[*k] += v;
                }
            }
        }
    }
}

/// The viscous block in either storage.
#[derive(Clone, Debug)]
pub enum ViscousOperator {
    Assembled(CsrMatrix),
    MatrixFree(ElasticityOperator),
}

impl ViscousOperator {
    pub fn build(space: &NodalSpace, mu: &QuadratureField, backend: Backend) -> Result<Self> {
        let assembled = match backend {
            Backend::Assembled => true,
            Backend::MatrixFree => false,
            Backend::Auto => estimated_nnz(space) <= AUTO_NNZ_LIMIT,
        };
        Ok(if assembled {
            Self::Assembled(assemble_viscous_block(space, mu)?)
        } else {
            Self::MatrixFree(ElasticityOperator::new(space, mu)?)
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Self::Assembled(a) => a.diagonal(),
            Self::MatrixFree(a) => a.diagonal().to_vec(),
        }
    }

    pub fn as_csr(&self) -> Option<&CsrMatrix> {
        match self {
            Self::Assembled(a) => Some(a),
            Self::MatrixFree(_) => None,
        }
    }
}

impl LinearOperator for ViscousOperator {
    fn nrows(&self) -> usize {
        match self {
            Self::Assembled(a) => a.nrows(),
            Self::MatrixFree(a) => a.nrows(),
        }
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Self::Assembled(a) => a.apply(x, y),
            Self::MatrixFree(a) => a.apply(x, y),
        }
    }
}

/// Removes constrained rows and columns from an operator assembled on the
/// unconstrained velocity space; `B`'s columns are restricted the same way.
pub fn apply_dirichlet(a: &CsrMatrix, b: &CsrMatrix, constrained: &NodalSpace) -> (CsrMatrix, CsrMatrix) {
    let map = constrained.constraint_map();
    let n = constrained.num_dofs();
    let prow: Vec<Option<usize>> = (0..b.nrows()).map(Some).collect();
    (a.restrict(&map, &map, n, n), b.restrict(&prow, &map, b.nrows(), n))
}

/// The discrete Stokes problem `[A Bᵀ; B 0] [u; p] = [f; 0]` on constrained dofs.
#[derive(Clone, Debug)]
pub struct StokesSystem {
    pub vspace: NodalSpace,
    pub pspace: ModalSpace,
    pub mu: QuadratureField,
    pub a: Arc<ViscousOperator>,
    pub b: CsrMatrix,
    pub bt: CsrMatrix,
    pub rhs_u: Vec<f64>,
}

impl StokesSystem {
    pub fn assemble(mesh: StructuredMesh, order: usize, cfg: &SinkerConfig, backend: Backend) -> Result<Self> {
        cfg.validate()?;
        let vspace = NodalSpace::velocity(mesh, order)?;
        let pspace = ModalSpace::new(mesh, order - 1);
        let mu = QuadratureField::sample(&mesh, &vspace.tables().quad, |_, x| cfg.viscosity(x));
        let rhs_u = assemble_load(&vspace, |x| cfg.forcing(x));
        Self::from_parts(vspace, pspace, mu, rhs_u, backend)
    }

    pub fn from_parts(
        vspace: NodalSpace,
        pspace: ModalSpace,
        mu: QuadratureField,
        rhs_u: Vec<f64>,
        backend: Backend,
    ) -> Result<Self> {
        let a = Arc::new(ViscousOperator::build(&vspace, &mu, backend)?);
        let b = assemble_divergence(&vspace, &pspace)?;
        let bt = b.transpose();
        Ok(Self { vspace, pspace, mu, a, b, bt, rhs_u })
    }

    pub fn num_velocity(&self) -> usize {
        self.vspace.num_dofs()
    }

    pub fn num_pressure(&self) -> usize {
        self.pspace.num_dofs()
    }

    pub fn num_dofs(&self) -> usize {
        self.num_velocity() + self.num_pressure()
    }

    /// Right-hand side `[f; 0]`.
    pub fn rhs(&self) -> Vec<f64> {
        let mut r = self.rhs_u.clone();
        r.resize(self.num_dofs(), 0.0);
        r
    }
}

impl LinearOperator for StokesSystem {
    fn nrows(&self) -> usize {
        self.num_dofs()
    }
    fn ncols(&self) -> usize {
        self.num_dofs()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nu = self.num_velocity();
        let (xu, xp) = x.split_at(nu);
        let (yu, yp) = y.split_at_mut(nu);
        self.a.apply(xu, yu);
        let mut g = vec![0.0; nu];
        self.bt.apply(xp, &mut g);
        yu.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        self.b.apply(xu, yp);
    }
}
