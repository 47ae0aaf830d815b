use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::smoother::{estimate_spectral_bound, Chebyshev};
use super::transfer::{coarsen_coefficient, interpolation};
use crate::discretization::{assemble_laplacian, Backend, NodalSpace, ViscousOperator};
use crate::error::{Error, Result};
use crate::krylov::DenseSolver;
use crate::mesh::{StructuredMesh, COARSE_LEVEL};
use crate::sparse::{CsrMatrix, LinearOperator};
use crate::viscosity::QuadratureField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultigridConfig {
    /// Chebyshev degree of each pre- and post-smoothing application.
    pub smoother_sweeps: usize,
    pub cheb_lo_fraction: f64,
    pub cheb_safety: f64,
    pub power_iterations: usize,
    pub coarse_level: u32,
    pub backend: Backend,
}

impl Default for MultigridConfig {
    fn default() -> Self {
        Self {
            smoother_sweeps: 3,
            cheb_lo_fraction: 0.2,
            cheb_safety: 1.1,
            power_iterations: 10,
            coarse_level: COARSE_LEVEL,
            backend: Backend::Auto,
        }
    }
}

impl MultigridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cheb_lo_fraction > 0.0 && self.cheb_lo_fraction < 1.0) || !(self.cheb_safety >= 1.0) {
            return Err(Error::InvalidConfig("Chebyshev interval parameters out of range".into()));
        }
        if self.coarse_level < COARSE_LEVEL {
            return Err(Error::InvalidConfig(format!("coarse level must be at least {COARSE_LEVEL}")));
        }
        Ok(())
    }
}

/// Which elliptic problem a hierarchy discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    /// `−∇·(μ(∇u + ∇uᵀ))` with homogeneous Dirichlet conditions.
    Elasticity,
    /// Scalar `−∇·(κ∇p)` with homogeneous Neumann conditions.
    NeumannPoisson,
}

/// `k → ⌈k/2⌉ → … → 1`
pub fn p_schedule(order: usize) -> Vec<usize> {
    let mut s = vec![order];
    let mut k = order;
    while k > 1 {
        k = k.div_ceil(2);
        s.push(k);
    }
    s
}

/// `(order, level)` of every multigrid level, finest first.
pub fn level_schedule(order: usize, level: u32, coarse_level: u32) -> Vec<(usize, u32)> {
    let mut s: Vec<(usize, u32)> = p_schedule(order).into_iter().map(|k| (k, level)).collect();
    for l in (coarse_level..level).rev() {
        s.push((1, l));
    }
    s
}

#[derive(Clone, Debug)]
pub enum LevelOperator {
    Viscous(Arc<ViscousOperator>),
    Laplacian(CsrMatrix),
}

impl LevelOperator {
    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Self::Viscous(a) => a.diagonal(),
            Self::Laplacian(a) => a.diagonal(),
        }
    }
}

impl LinearOperator for LevelOperator {
    fn nrows(&self) -> usize {
        match self {
            Self::Viscous(a) => a.nrows(),
            Self::Laplacian(a) => a.nrows(),
        }
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Self::Viscous(a) => a.apply(x, y),
            Self::Laplacian(a) => a.apply(x, y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Level {
    pub space: NodalSpace,
    pub coefficient: QuadratureField,
    pub op: LevelOperator,
    /// Absent on the coarsest level, which is solved directly.
    pub smoother: Option<Chebyshev>,
    /// Interpolation from the next coarser level.
    pub interp: Option<CsrMatrix>,
}

/// Hybrid p/h multigrid hierarchy with re-discretized level operators.
#[derive(Clone, Debug)]
pub struct MultigridHierarchy {
    kind: ProblemKind,
    levels: Vec<Level>,
    coarse: DenseSolver,
}

fn discretize(kind: ProblemKind, space: &NodalSpace, coeff: &QuadratureField, backend: Backend) -> Result<LevelOperator> {
    Ok(match kind {
        ProblemKind::Elasticity => LevelOperator::Viscous(Arc::new(ViscousOperator::build(space, coeff, backend)?)),
        ProblemKind::NeumannPoisson => LevelOperator::Laplacian(assemble_laplacian(space, coeff)?),
    })
}

impl MultigridHierarchy {
    /// Builds the hierarchy for `kind` on `mesh` with the coefficient sampled
    /// at the order-`order` Gauss points. `fine_op`, when given, is reused as
    /// the finest-level operator instead of rediscretizing it.
    pub fn build(
        mesh: StructuredMesh,
        kind: ProblemKind,
        coefficient: &QuadratureField,
        order: usize,
        cfg: &MultigridConfig,
        fine_op: Option<Arc<ViscousOperator>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if mesh.level() < cfg.coarse_level {
            return Err(Error::InvalidMesh(format!("mesh level {} below coarse level {}", mesh.level(), cfg.coarse_level)));
        }
        let schedule = level_schedule(order, mesh.level(), cfg.coarse_level);
        let make_space = |m: StructuredMesh, k: usize| match kind {
            ProblemKind::Elasticity => NodalSpace::velocity(m, k),
            ProblemKind::NeumannPoisson => NodalSpace::scalar(m, k),
        };
        let mut levels: Vec<Level> = Vec::with_capacity(schedule.len());
        let mut m = mesh;
        let mut coeff = coefficient.clone();
        for (idx, &(k, l)) in schedule.iter().enumerate() {
            if idx > 0 {
                let (kp, lp) = schedule[idx - 1];
                let coarse_mesh = if l < lp { m.coarsen()? } else { m };
                coeff = coarsen_coefficient(&coeff, &m, kp, &coarse_mesh, k)?;
                m = coarse_mesh;
            }
            let space = make_space(m, k)?;
            let op = match (&fine_op, idx, kind) {
                (Some(a), 0, ProblemKind::Elasticity) => {
                    if a.nrows() != space.num_dofs() {
                        return Err(Error::DimensionMismatch { expected: space.num_dofs(), got: a.nrows() });
                    }
                    LevelOperator::Viscous(a.clone())
                }
                _ => discretize(kind, &space, &coeff, cfg.backend)?,
            };
            if let Some(prev) = levels.last_mut() {
                prev.interp = Some(interpolation(&prev.space, &space)?);
            }
            let last = idx + 1 == schedule.len();
            let smoother = if last {
                None
            } else {
                let diag = op.diagonal();
                let lambda = estimate_spectral_bound(&op, &diag, cfg.power_iterations, cfg.cheb_safety);
                Some(Chebyshev::new(&diag, lambda, cfg.cheb_lo_fraction, cfg.cheb_safety, cfg.smoother_sweeps))
            };
            levels.push(Level { space, coefficient: coeff.clone(), op, smoother, interp: None });
        }
        let bottom = levels.last().expect("at least one level");
        let ones = vec![1.0; bottom.space.num_dofs()];
        let nullspace = match kind {
            ProblemKind::Elasticity => None,
            ProblemKind::NeumannPoisson => Some(ones.as_slice()),
        };
        let coarse = DenseSolver::from_operator(&bottom.op, nullspace)?;
        Ok(Self { kind, levels, coarse })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// `(order, mesh level)` of each level, finest first.
    pub fn schedule(&self) -> Vec<(usize, u32)> {
        self.levels.iter().map(|l| (l.space.order(), l.space.mesh().level())).collect()
    }

    pub fn fine_operator(&self) -> &LevelOperator {
        &self.levels[0].op
    }

    fn cycle(&self, idx: usize, b: &[f64]) -> Vec<f64> {
        let level = &self.levels[idx];
        let Some(smoother) = &level.smoother else {
            return self.coarse.solve(b);
        };
        let mut x = vec![0.0; b.len()];
        smoother.smooth(&level.op, &mut x, b);
        let mut r = level.op.apply_new(&x);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let p = self.levels[idx].interp.as_ref().expect("interpolation to coarser level");
        let mut rc = vec![0.0; p.ncols()];
        p.apply_transpose(&r, &mut rc);
        let xc = self.cycle(idx + 1, &rc);
        let corr = p.apply_new(&xc);
        x.iter_mut().zip(&corr).for_each(|(xi, ci)| *xi += ci);
        smoother.smooth(&level.op, &mut x, b);
        x
    }

    /// One V-cycle from a zero initial guess.
    pub fn v_cycle(&self, b: &[f64]) -> Vec<f64> {
        self.cycle(0, b)
    }
}

impl LinearOperator for MultigridHierarchy {
    fn nrows(&self) -> usize {
        self.levels[0].space.num_dofs()
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.v_cycle(x));
    }
}

/// Convenience wrapper for [`MultigridHierarchy::v_cycle`].
pub fn v_cycle(hierarchy: &MultigridHierarchy, b: &[f64]) -> Vec<f64> {
    hierarchy.v_cycle(b)
}
