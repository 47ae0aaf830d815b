//! Element kernels and their scatter into global CSR matrices.
//!
//! All element integrals use the `(k+1)^d`-point Gauss rule of the velocity
//! space; coefficient fields are sampled at exactly those points.

use super::space::{ModalSpace, NodalSpace};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, PatternBuilder};
use crate::viscosity::QuadratureField;

fn check_field(field: &QuadratureField, space: &NodalSpace, what: &str) -> Result<()> {
    let npts = space.tables().quad.len();
    if field.points_per_element != npts || field.num_elements() != space.mesh().num_elements() {
        return Err(Error::DimensionMismatch {
            expected: npts * space.mesh().num_elements(),
            got: field.values.len(),
        });
    }
    field.ensure_positive(what)
}

/// Generic element-by-element assembly.
pub(crate) fn assemble_elements(
    nrows: usize,
    ncols: usize,
    num_elements: usize,
    row_dofs: impl Fn(usize) -> Vec<Option<usize>>,
    col_dofs: impl Fn(usize) -> Vec<Option<usize>>,
    mut element_matrix: impl FnMut(usize, &mut [f64]),
) -> CsrMatrix {
    let mut pattern = PatternBuilder::new(nrows, ncols);
    for e in 0..num_elements {
        pattern.add_element(&row_dofs(e), &col_dofs(e));
    }
    let mut mat = pattern.build();
    let mut local = Vec::new();
    for e in 0..num_elements {
        let (rows, cols) = (row_dofs(e), col_dofs(e));
        local.clear();
        local.resize(rows.len() * cols.len(), 0.0);
        element_matrix(e, &mut local);
        for (i, r) in rows.iter().enumerate() {
            let Some(r) = *r else { continue };
            let (start, end) = (mat.row_ptr()[r], mat.row_ptr()[r + 1]);
            for (j, c) in cols.iter().enumerate() {
                let Some(c) = *c else { continue };
                let v = local[i * cols.len() + j];
                if v == 0.0 {
                    continue;
                }
                let k = start + mat.col_idx()[start..end].binary_search(&(c as u32)).expect("pattern");
                mat.values_mut()[k] += v;
            }
        }
    }
    mat
}

/// Element matrix of `∫ 2μ ε(u):ε(v)` in local order `node * d + component`.
pub fn elasticity_element_matrix(space: &NodalSpace, h: f64, mu: &[f64], out: &mut [f64]) {
    let d = space.dim();
    let t = &space.tables().nodal;
    let w = &space.tables().quad.weights;
    let nn = t.num_nodes;
    let n = nn * d;
    let scale = h.powi(d as i32 - 2);
    let coef: Vec<f64> = w.iter().zip(mu).map(|(w, m)| w * m * scale).collect();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut s = [0.0f64; 9];
    for a in 0..nn {
        for b in 0..nn {
            s.iter_mut().for_each(|v| *v = 0.0);
            for (q, c) in coef.iter().enumerate() {
                let ga = t.grad(q, a);
                let gb = t.grad(q, b);
                for m in 0..d {
                    let cg = c * ga[m];
                    for l in 0..d {
                        s[m * 3 + l] += cg * gb[l];
                    }
                }
            }
            let tr: f64 = (0..d).map(|m| s[m * 3 + m]).sum();
            for i in 0..d {
                for j in 0..d {
                    // δ_ij ∇φ_a·∇φ_b + ∂_j φ_a ∂_i φ_b
                    let v = if i == j { tr } else { 0.0 } + s[j * 3 + i];
                    out[(a * d + i) * n + b * d + j] = v;
                }
            }
        }
    }
}

/// Element matrix of `∫ κ ∇u·∇v` for a scalar space.
pub fn laplace_element_matrix(space: &NodalSpace, h: f64, kappa: &[f64], out: &mut [f64]) {
    let d = space.dim();
    let t = &space.tables().nodal;
    let w = &space.tables().quad.weights;
    let nn = t.num_nodes;
    let scale = h.powi(d as i32 - 2);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (q, (wq, kq)) in w.iter().zip(kappa).enumerate() {
        let c = wq * kq * scale;
        for a in 0..nn {
            let ga = t.grad(q, a);
            for b in 0..nn {
                let gb = t.grad(q, b);
                let dotg: f64 = (0..d).map(|m| ga[m] * gb[m]).sum();
                out[a * nn + b] += c * dotg;
            }
        }
    }
}

/// Viscous block `A_ij = ∫ 2μ ε(φ_i):ε(φ_j)` on the dofs of `space`.
pub fn assemble_viscous_block(space: &NodalSpace, mu: &QuadratureField) -> Result<CsrMatrix> {
    check_field(mu, space, "viscosity")?;
    let h = space.mesh().element_size();
    Ok(assemble_elements(
        space.num_dofs(),
        space.num_dofs(),
        space.mesh().num_elements(),
        |e| space.element_dofs(e),
        |e| space.element_dofs(e),
        |e, out| elasticity_element_matrix(space, h, mu.element(e), out),
    ))
}

/// Variable-coefficient Laplacian `∫ κ ∇ψ_i·∇ψ_j` on a scalar nodal space.
pub fn assemble_laplacian(space: &NodalSpace, kappa: &QuadratureField) -> Result<CsrMatrix> {
    check_field(kappa, space, "poisson coefficient")?;
    let h = space.mesh().element_size();
    Ok(assemble_elements(
        space.num_dofs(),
        space.num_dofs(),
        space.mesh().num_elements(),
        |e| space.element_dofs(e),
        |e| space.element_dofs(e),
        |e, out| laplace_element_matrix(space, h, kappa.element(e), out),
    ))
}

/// Pressure basis values at the velocity quadrature points, `[q * modes + i]`.
fn pressure_values(vspace: &NodalSpace, pspace: &ModalSpace) -> Vec<f64> {
    vspace.tables().quad.points.iter().flat_map(|p| pspace.basis().eval(p)).collect()
}

/// Divergence `B_ij = −∫ q_i ∇·φ_j`; the discrete gradient is `Bᵀ`.
pub fn assemble_divergence(vspace: &NodalSpace, pspace: &ModalSpace) -> Result<CsrMatrix> {
    if vspace.mesh() != pspace.mesh() {
        return Err(Error::InvalidConfig("velocity and pressure spaces live on different meshes".into()));
    }
    let d = vspace.dim();
    let h = vspace.mesh().element_size();
    let t = &vspace.tables().nodal;
    let w = &vspace.tables().quad.weights;
    let np = pspace.modes_per_element();
    let pv = pressure_values(vspace, pspace);
    let nn = t.num_nodes;
    let ncol = nn * d;
    let scale = h.powi(d as i32 - 1);
    // identical on every element of a uniform mesh
    let mut local = vec![0.0; np * ncol];
    for (q, wq) in w.iter().enumerate() {
        for i in 0..np {
            let c = -wq * scale * pv[q * np + i];
            for a in 0..nn {
                let g = t.grad(q, a);
                for comp in 0..d {
                    local[i * ncol + a * d + comp] += c * g[comp];
                }
            }
        }
    }
    Ok(assemble_elements(
        pspace.num_dofs(),
        vspace.num_dofs(),
        vspace.mesh().num_elements(),
        |e| pspace.element_range(e).map(Some).collect(),
        |e| vspace.element_dofs(e),
        |_, out| out.copy_from_slice(&local),
    ))
}

/// Block-diagonal weighted pressure mass `∫ q_i q_j c`, with `c` sampled at
/// the velocity quadrature points of `vspace`.
pub fn assemble_pressure_mass(vspace: &NodalSpace, pspace: &ModalSpace, coeff: &QuadratureField) -> Result<CsrMatrix> {
    check_field(coeff, vspace, "pressure mass coefficient")?;
    let d = vspace.dim();
    let vol = vspace.mesh().element_size().powi(d as i32);
    let w = &vspace.tables().quad.weights;
    let np = pspace.modes_per_element();
    let pv = pressure_values(vspace, pspace);
    Ok(assemble_elements(
        pspace.num_dofs(),
        pspace.num_dofs(),
        pspace.mesh().num_elements(),
        |e| pspace.element_range(e).map(Some).collect(),
        |e| pspace.element_range(e).map(Some).collect(),
        |e, out| {
            let c = coeff.element(e);
            for (q, wq) in w.iter().enumerate() {
                let s = wq * vol * c[q];
                for i in 0..np {
                    for j in 0..np {
                        out[i * np + j] += s * pv[q * np + i] * pv[q * np + j];
                    }
                }
            }
        },
    ))
}

/// Modal lumping `diag(M 1_q)`: the action of `M` on the coefficient vector
/// of the constant function.
pub fn lump_modal(m: &CsrMatrix, pspace: &ModalSpace) -> Result<Vec<f64>> {
    let ones = pspace.constant_vector();
    let d = crate::sparse::LinearOperator::apply_new(m, &ones);
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositive { value: d[i], location: format!("lumped pressure mass entry {i}") });
    }
    Ok(d)
}

/// Lumped `w`-weighted velocity mass, one entry per dof of `space` (every
/// component of a node gets the same value).
///
/// `weight` is sampled at the element nodes (`tables().nodal_quad`). The
/// entries are row sums of the mass matrix integrated with the collocated
/// GLL rule, `Σ_e ω_a |Ω_e| w_e(x_a)`, so they are positive whenever `w` is.
pub fn assemble_velocity_lumped_mass(space: &NodalSpace, weight: &QuadratureField) -> Result<Vec<f64>> {
    let nq = &space.tables().nodal_quad;
    if weight.points_per_element != nq.len() || weight.num_elements() != space.mesh().num_elements() {
        return Err(Error::DimensionMismatch { expected: nq.len() * space.mesh().num_elements(), got: weight.values.len() });
    }
    weight.ensure_positive("lumped mass weight")?;
    let d = space.dim();
    let vol = space.mesh().element_size().powi(d as i32);
    let mut diag = vec![0.0; space.num_dofs()];
    for e in 0..space.mesh().num_elements() {
        let wf = weight.element(e);
        let dofs = space.element_dofs(e);
        for (a, w) in nq.weights.iter().enumerate() {
            let s = w * vol * wf[a];
            for c in 0..space.components() {
                if let Some(k) = dofs[a * space.components() + c] {
                    diag[k] += s;
                }
            }
        }
    }
    if let Some(i) = diag.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositive { value: diag[i], location: format!("lumped velocity mass dof {i}") });
    }
    Ok(diag)
}

/// Mixed mass `∫ q_i ψ_j` between the modal pressure space and a scalar nodal space.
pub fn assemble_mixed_mass(pspace: &ModalSpace, nspace: &NodalSpace) -> CsrMatrix {
    let d = nspace.dim();
    let vol = nspace.mesh().element_size().powi(d as i32);
    let t = &nspace.tables().nodal;
    let w = &nspace.tables().quad.weights;
    let np = pspace.modes_per_element();
    let pv = pressure_values(nspace, pspace);
    let nn = t.num_nodes;
    let mut local = vec![0.0; np * nn];
    for (q, wq) in w.iter().enumerate() {
        for i in 0..np {
            for a in 0..nn {
                local[i * nn + a] += wq * vol * pv[q * np + i] * t.value(q, a);
            }
        }
    }
    assemble_elements(
        pspace.num_dofs(),
        nspace.num_dofs(),
        nspace.mesh().num_elements(),
        |e| pspace.element_range(e).map(Some).collect(),
        |e| nspace.element_dofs(e),
        |_, out| out.copy_from_slice(&local),
    )
}

/// Load vector `∫ f·φ_i` for a vector body force.
pub fn assemble_load(space: &NodalSpace, f: impl Fn(&[f64]) -> [f64; 3]) -> Vec<f64> {
    let d = space.dim();
    let mesh = space.mesh();
    let vol = mesh.element_size().powi(d as i32);
    let t = &space.tables().nodal;
    let quad = &space.tables().quad;
    let nc = space.components();
    let mut rhs = vec![0.0; space.num_dofs()];
    for e in 0..mesh.num_elements() {
        let dofs = space.element_dofs(e);
        for (q, p) in quad.points.iter().enumerate() {
            let fx = f(&mesh.map_point(e, p));
            let s = quad.weights[q] * vol;
            for a in 0..t.num_nodes {
                let phi = t.value(q, a) * s;
                for c in 0..nc {
                    if let Some(k) = dofs[a * nc + c] {
                        rhs[k] += phi * fx[c];
                    }
                }
            }
        }
    }
    rhs
}
