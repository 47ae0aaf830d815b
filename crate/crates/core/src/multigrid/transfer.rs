use crate::basis::{gauss, multi_indices, Lagrange1D};
use crate::discretization::NodalSpace;
use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;
use crate::sparse::CsrMatrix;
use crate::viscosity::QuadratureField;

/// How a fine element sits inside its coarse element: the coarse element
/// index and the affine map of reference coordinates `ξ_c = (offset + ξ_f) / ratio`.
struct Embedding {
    coarse: usize,
    offset: [f64; 3],
    ratio: f64,
}

fn embedding(fine: &StructuredMesh, coarse: &StructuredMesh, e: usize) -> Result<Embedding> {
    if fine == coarse {
        return Ok(Embedding { coarse: e, offset: [0.0; 3], ratio: 1.0 });
    }
    if fine.dim() != coarse.dim() || fine.level() != coarse.level() + 1 {
        return Err(Error::InvalidMesh(format!(
            "level {} does not refine level {} once",
            fine.level(),
            coarse.level()
        )));
    }
    let c = fine.element_coords(e);
    Ok(Embedding { coarse: fine.parent(e), offset: [(c[0] % 2) as f64, (c[1] % 2) as f64, (c[2] % 2) as f64], ratio: 2.0 })
}

fn tensor_eval(bases: &[Vec<f64>], dim: usize, n: usize) -> Vec<f64> {
    multi_indices(n, dim).map(|a| (0..dim).map(|m| bases[m][a[m]]).product()).collect()
}

/// Finite-element embedding of `coarse` into `fine`: evaluates the coarse
/// basis at the fine nodes. Both spaces must carry the same components and
/// constraint kind; constrained rows and columns are dropped.
pub fn interpolation(fine: &NodalSpace, coarse: &NodalSpace) -> Result<CsrMatrix> {
    if fine.components() != coarse.components() || fine.is_dirichlet() != coarse.is_dirichlet() {
        return Err(Error::InvalidConfig("transfer between incompatible spaces".into()));
    }
    let dim = fine.dim();
    let nc = fine.components();
    let fine_nodes = fine.basis().nodes().to_vec();
    let cb = coarse.basis();
    let mut done = vec![false; fine.num_nodes()];
    let mut triplets = Vec::new();
    for e in 0..fine.mesh().num_elements() {
        let emb = embedding(fine.mesh(), coarse.mesh(), e)?;
        let cnodes = coarse.element_nodes(emb.coarse);
        for (a, fnode) in multi_indices(fine.order() + 1, dim).zip(fine.element_nodes(e)) {
            if done[fnode] {
                continue;
            }
            done[fnode] = true;
            let Some(row) = fine.node_dof(fnode) else { continue };
            let bases: Vec<Vec<f64>> =
                (0..dim).map(|m| cb.eval((emb.offset[m] + fine_nodes[a[m]]) / emb.ratio)).collect();
            for (v, &cn) in tensor_eval(&bases, dim, coarse.order() + 1).iter().zip(&cnodes) {
                if v.abs() < 1e-14 {
                    continue;
                }
                if let Some(col) = coarse.node_dof(cn) {
                    for c in 0..nc {
                        triplets.push((row + c, col + c, *v));
                    }
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.num_dofs(), coarse.num_dofs(), &triplets))
}

/// Coarsens a coefficient stored at Gauss points by the L² adjoint of
/// element-wise interpolation from the coarse Gauss points.
///
/// Constants are reproduced exactly. Values are clamped to the range of the
/// fine samples they are computed from so the coarse coefficient stays
/// positive.
pub fn coarsen_coefficient(
    field: &QuadratureField,
    fine_mesh: &StructuredMesh,
    fine_order: usize,
    coarse_mesh: &StructuredMesh,
    coarse_order: usize,
) -> Result<QuadratureField> {
    let dim = fine_mesh.dim();
    let gf = gauss(fine_order + 1);
    let gc = gauss(coarse_order + 1);
    let nqf = gf.points.len().pow(dim as u32);
    let nqc = gc.points.len().pow(dim as u32);
    if field.points_per_element != nqf || field.num_elements() != fine_mesh.num_elements() {
        return Err(Error::DimensionMismatch { expected: nqf * fine_mesh.num_elements(), got: field.values.len() });
    }
    let lag = Lagrange1D::new(gc.points.clone());
    let fine_vol = fine_mesh.element_size().powi(dim as i32);
    let coarse_vol = coarse_mesh.element_size().powi(dim as i32);
    let mut sums = vec![0.0; coarse_mesh.num_elements() * nqc];
    let mut lo = vec![f64::INFINITY; coarse_mesh.num_elements()];
    let mut hi = vec![f64::NEG_INFINITY; coarse_mesh.num_elements()];
    for e in 0..fine_mesh.num_elements() {
        let emb = embedding(fine_mesh, coarse_mesh, e)?;
        let vals = field.element(e);
        for (q, a) in multi_indices(gf.points.len(), dim).enumerate() {
            let w: f64 = (0..dim).map(|m| gf.weights[a[m]]).product::<f64>() * fine_vol;
            let bases: Vec<Vec<f64>> =
                (0..dim).map(|m| lag.eval((emb.offset[m] + gf.points[a[m]]) / emb.ratio)).collect();
            let base = emb.coarse * nqc;
            for (qc, l) in tensor_eval(&bases, dim, gc.points.len()).iter().enumerate() {
                sums[base + qc] += w * l * vals[q];
            }
            lo[emb.coarse] = lo[emb.coarse].min(vals[q]);
            hi[emb.coarse] = hi[emb.coarse].max(vals[q]);
        }
    }
    let cw: Vec<f64> = multi_indices(gc.points.len(), dim)
        .map(|a| (0..dim).map(|m| gc.weights[a[m]]).product::<f64>() * coarse_vol)
        .collect();
    for (i, s) in sums.iter_mut().enumerate() {
        let ec = i / nqc;
        *s = (*s / cw[i % nqc]).clamp(lo[ec], hi[ec]);
    }
    Ok(QuadratureField { points_per_element: nqc, values: sums })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::LinearOperator;

    fn check_reproduces(fine: &NodalSpace, coarse: &NodalSpace, f: impl Fn(&[f64]) -> [f64; 3]) {
        let p = interpolation(fine, coarse).unwrap();
        let uc = coarse.interpolate(&f);
        let uf = p.apply_new(&uc);
        let expected = fine.interpolate(&f);
        for (a, b) in uf.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn embeddings_reproduce_coarse_functions() {
        let m3 = StructuredMesh::new(2, 3).unwrap();
        let m2 = m3.coarsen().unwrap();
        // p-transfer Q1 → Q2 and Q2 → Q4, on the same mesh
        let bilinear = |x: &[f64]| [x[0] * x[1] + 1.0 - x[0], 0.0, 0.0];
        check_reproduces(&NodalSpace::scalar(m3, 2).unwrap(), &NodalSpace::scalar(m3, 1).unwrap(), bilinear);
        let quad = |x: &[f64]| [x[0] * x[0] * x[1] - x[1] * x[1], 0.0, 0.0];
        check_reproduces(&NodalSpace::scalar(m3, 4).unwrap(), &NodalSpace::scalar(m3, 2).unwrap(), quad);
        // h-transfer Q1 on ℓ=2 → Q1 on ℓ=3, vector valued with Dirichlet
        let bubble = |x: &[f64]| {
            let b = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
            [b, -2.0 * b, 0.0]
        };
        let vf = NodalSpace::velocity(m3, 2).unwrap();
        let vc = NodalSpace::velocity(m2, 2).unwrap();
        check_reproduces(&vf, &vc, bubble);
        let m33 = StructuredMesh::new(3, 3).unwrap();
        let lin = |x: &[f64]| [1.0 + x[0] - 2.0 * x[1] + x[2] * x[0], 0.0, 0.0];
        check_reproduces(
            &NodalSpace::scalar(m33, 1).unwrap(),
            &NodalSpace::scalar(m33.coarsen().unwrap(), 1).unwrap(),
            lin,
        );
    }

    #[test]
    fn rejects_non_nested_meshes() {
        let a = NodalSpace::scalar(StructuredMesh::new(2, 4).unwrap(), 1).unwrap();
        let b = NodalSpace::scalar(StructuredMesh::new(2, 2).unwrap(), 1).unwrap();
        assert!(interpolation(&a, &b).is_err());
        let v = NodalSpace::velocity(StructuredMesh::new(2, 4).unwrap(), 1).unwrap();
        assert!(interpolation(&v, &a).is_err());
    }

    #[test]
    fn coefficient_coarsening_preserves_constants_and_integrals() {
        let fine = StructuredMesh::new(3, 3).unwrap();
        let coarse = fine.coarsen().unwrap();
        let c = QuadratureField::constant(fine.num_elements(), 27, 4.5);
        let p = coarsen_coefficient(&c, &fine, 2, &fine, 1).unwrap();
        assert_eq!(p.points_per_element, 8);
        assert!(p.values.iter().all(|v| (v - 4.5).abs() < 1e-13));
        let h = coarsen_coefficient(&p, &fine, 1, &coarse, 1).unwrap();
        assert!(h.values.iter().all(|v| (v - 4.5).abs() < 1e-13));
        // a smooth positive field keeps its integral and its bounds
        let quad = crate::basis::TensorQuadrature::gauss(3, 2);
        let f = QuadratureField::sample(&fine, &quad, |_, x| 1.0 + x[0] + 0.5 * x[1] * x[2]);
        let g = coarsen_coefficient(&f, &fine, 1, &coarse, 1).unwrap();
        let integral = |fld: &QuadratureField, m: &StructuredMesh| -> f64 {
            let vol = m.element_size().powi(3);
            (0..m.num_elements())
                .map(|e| fld.element(e).iter().zip(&quad.weights).map(|(v, w)| v * w * vol).sum::<f64>())
                .sum()
        };
        assert!((integral(&f, &fine) - integral(&g, &coarse)).abs() < 1e-12);
        let (lo, hi) = (f.values.iter().cloned().fold(f64::MAX, f64::min), f.values.iter().cloned().fold(0.0, f64::max));
        assert!(g.values.iter().all(|v| *v >= lo && *v <= hi));
    }

    #[test]
    fn coarsening_stays_positive_for_sharp_fields() {
        let fine = StructuredMesh::new(2, 4).unwrap();
        let quad = crate::basis::TensorQuadrature::gauss(2, 3);
        let f = QuadratureField::sample(&fine, &quad, |_, x| if x[0] < 0.4 { 1e-4 } else { 1e4 });
        let p = coarsen_coefficient(&f, &fine, 2, &fine, 1).unwrap();
        let h = coarsen_coefficient(&p, &fine, 1, &fine.coarsen().unwrap(), 1).unwrap();
        assert!(h.ensure_positive("coarse").is_ok());
    }
}
