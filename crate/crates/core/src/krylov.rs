//! Restarted, right-preconditioned GMRES and dense direct solves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm, LinearOperator};

/// Euclidean projection of `x[offset..]` onto the complement of `vector`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullSpace {
    pub offset: usize,
    pub vector: Vec<f64>,
}

impl NullSpace {
    pub fn new(offset: usize, vector: Vec<f64>) -> Self {
        Self { offset, vector }
    }

    pub fn project(&self, x: &mut [f64]) {
        project_out(&mut x[self.offset..], &self.vector);
    }
}

/// `x ← x − (zᵀx / zᵀz) z`
pub fn project_out(x: &mut [f64], z: &[f64]) {
    let zz = dot(z, z);
    if zz > 0.0 {
        axpy(-dot(z, x) / zz, z, x);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmresConfig {
    pub rtol: f64,
    pub restart: usize,
    pub max_iters: usize,
    pub null_space: Option<NullSpace>,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { rtol: 1e-6, restart: 100, max_iters: 1000, null_space: None }
    }
}

impl GmresConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) {
            return Err(Error::InvalidConfig(format!("rtol must be positive, got {}", self.rtol)));
        }
        if self.restart < 1 || self.max_iters < 1 {
            return Err(Error::InvalidConfig("restart and max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Breakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual `‖b − Ax_j‖/‖b‖` after iteration `j`, starting with the initial guess.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub status: SolveStatus,
    /// Recomputed `‖b − Ax‖/‖b‖` of the returned iterate.
    pub final_residual: f64,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn residual(op: &dyn LinearOperator, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = op.apply_new(x);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    r
}

/// Solves `Op x = b` with GMRES on `Op P⁻¹`, starting from `x = 0`.
///
/// `precond` applies `P⁻¹`. Residuals are those of the unpreconditioned
/// system; the Arnoldi estimate is confirmed by an explicit residual before
/// convergence is declared.
pub fn gmres(
    op: &dyn LinearOperator,
    precond: &dyn LinearOperator,
    b: &[f64],
    cfg: &GmresConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = op.nrows();
    if b.len() != n || precond.nrows() != n || op.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("right-hand side is not finite".into()));
    }
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut history = vec![1.0];
    if bnorm == 0.0 {
        return Ok((x, SolveReport { iterations: 0, residual_history: vec![0.0], converged: true, status: SolveStatus::Converged, final_residual: 0.0 }));
    }
    let m = cfg.restart;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIterations;
    let mut r = b.to_vec();
    let mut beta = bnorm;
    'outer: while iterations < cfg.max_iters {
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut steps = 0;
        let mut broke = false;
        for j in 0..m {
            if iterations >= cfg.max_iters {
                break;
            }
            let mut zj = precond.apply_new(&v[j]);
            if let Some(ns) = &cfg.null_space {
                ns.project(&mut zj);
            }
            let mut w = op.apply_new(&zj);
            z.push(zj);
            let w0 = norm(&w);
            for i in 0..=j {
                h[i][j] = dot(&w, &v[i]);
                axpy(-h[i][j], &v[i], &mut w);
            }
            let mut wn = norm(&w);
            // second Gram–Schmidt pass when cancellation is severe
            if wn < 0.7 * w0 {
                for i in 0..=j {
                    let c = dot(&w, &v[i]);
                    h[i][j] += c;
                    axpy(-c, &v[i], &mut w);
                }
                wn = norm(&w);
            }
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let rho = h[j][j].hypot(wn);
            if rho == 0.0 {
                broke = true;
                break;
            }
            cs[j] = h[j][j] / rho;
            sn[j] = wn / rho;
            h[j][j] = rho;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            iterations += 1;
            steps = j + 1;
            let est = g[j + 1].abs() / bnorm;
            history.push(est);
            if est <= cfg.rtol {
                break;
            }
            if wn <= 1e-14 * w0.max(f64::MIN_POSITIVE) {
                broke = true;
                break;
            }
            v.push(w.iter().map(|wi| wi / wn).collect());
        }
        // back substitution for the least-squares coefficients
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let s: f64 = (i + 1..steps).map(|k| h[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            axpy(*yi, zi, &mut x);
        }
        r = residual(op, b, &x);
        beta = norm(&r);
        if let Some(last) = history.last_mut() {
            *last = beta / bnorm;
        }
        if beta / bnorm <= cfg.rtol {
            status = SolveStatus::Converged;
            break 'outer;
        }
        if broke {
            status = SolveStatus::Breakdown;
            break 'outer;
        }
    }
    if let Some(ns) = &cfg.null_space {
        ns.project(&mut x);
    }
    let final_residual = norm(&residual(op, b, &x)) / bnorm;
    let converged = status == SolveStatus::Converged;
    Ok((x, SolveReport { iterations, residual_history: history, converged, status, final_residual }))
}

/// LU-factored dense matrix, optionally deflating a one-dimensional nullspace.
#[derive(Clone, Debug)]
pub struct DenseSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    nullspace: Option<Vec<f64>>,
}

impl DenseSolver {
    /// Factors `m`, or `m + α ẑẑᵀ` with a declared nullspace `z`.
    pub fn new(m: DMatrix<f64>, nullspace: Option<&[f64]>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: m.ncols() });
        }
        let scale = m.diagonal().abs().max().max(m.abs().max());
        let mut m = m;
        let nullspace = nullspace.map(|z| {
            let zn = norm(z);
            z.iter().map(|v| v / zn).collect::<Vec<f64>>()
        });
        if let Some(z) = &nullspace {
            if z.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: z.len() });
            }
            let zv = DVector::from_column_slice(z);
            m += scale * &zv * zv.transpose();
        }
        let lu = m.lu();
        let d = lu.u().diagonal().abs();
        let ratio = if n == 0 { 1.0 } else { d.min() / d.max() };
        if !(ratio > 1e-14) {
            return Err(Error::Singular(ratio));
        }
        Ok(Self { lu, nullspace })
    }

    pub fn from_operator(op: &dyn LinearOperator, nullspace: Option<&[f64]>) -> Result<Self> {
        Self::new(dense_from_operator(op), nullspace)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = DVector::from_column_slice(b);
        if let Some(z) = &self.nullspace {
            project_out(rhs.as_mut_slice(), z);
        }
        let mut x = self.lu.solve(&rhs).expect("factorization checked nonsingular").data.as_vec().clone();
        if let Some(z) = &self.nullspace {
            project_out(&mut x, z);
        }
        x
    }
}

impl LinearOperator for DenseSolver {
    fn nrows(&self) -> usize {
        self.lu.l().nrows()
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.solve(x));
    }
}

/// Columns `Op e_j`.
pub fn dense_from_operator(op: &dyn LinearOperator) -> DMatrix<f64> {
    let (nr, nc) = (op.nrows(), op.ncols());
    let mut m = DMatrix::zeros(nr, nc);
    let mut e = vec![0.0; nc];
    let mut col = vec![0.0; nr];
    for j in 0..nc {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    m
}

/// One-shot dense solve.
pub fn direct_solve(m: &DMatrix<f64>, b: &[f64], nullspace: Option<&[f64]>) -> Result<Vec<f64>> {
    Ok(DenseSolver::new(m.clone(), nullspace)?.solve(b))
}
