use nalgebra::{DMatrix, SymmetricEigen};
use wbfbt::basis::TensorQuadrature;
use wbfbt::discretization::{assemble_load, assemble_pressure_mass, Backend, ModalSpace, NodalSpace, StokesSystem};
use wbfbt::krylov::{gmres, GmresConfig, NullSpace};
use wbfbt::mesh::StructuredMesh;
use wbfbt::multigrid::MultigridConfig;
use wbfbt::schur::{InnerMode, SchurApproximation, SchurSign, StokesPreconditioner, ViscousInverse};
use wbfbt::spectrum::system_schur;
use wbfbt::viscosity::QuadratureField;

use std::f64::consts::PI;

// stream function a(x) a(y) with a = x²(1−x)²
fn a(x: f64) -> [f64; 4] {
    [x * x * (1.0 - x).powi(2), 2.0 * x - 6.0 * x * x + 4.0 * x.powi(3), 2.0 - 12.0 * x + 12.0 * x * x, -12.0 + 24.0 * x]
}

fn velocity(x: &[f64]) -> [f64; 3] {
    let (ax, ay) = (a(x[0]), a(x[1]));
    [ax[0] * ay[1], -ax[1] * ay[0], 0.0]
}

fn pressure(x: &[f64]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).cos()
}

// −Δu + ∇p with unit viscosity
fn forcing(x: &[f64]) -> [f64; 3] {
    let (ax, ay) = (a(x[0]), a(x[1]));
    let lap1 = ax[2] * ay[1] + ax[0] * ay[3];
    let lap2 = -(ax[3] * ay[0] + ax[1] * ay[2]);
    let (s, c) = ((PI * x[0]).sin_cos(), (PI * x[1]).sin_cos());
    [-lap1 + PI * s.1 * c.1, -lap2 - PI * s.0 * c.0, 0.0]
}

fn unit_viscosity_system(level: u32, order: usize) -> StokesSystem {
    let mesh = StructuredMesh::new(2, level).unwrap();
    let vspace = NodalSpace::velocity(mesh, order).unwrap();
    let pspace = ModalSpace::new(mesh, order - 1);
    let mu = QuadratureField::constant(mesh.num_elements(), vspace.tables().quad.len(), 1.0);
    let rhs = assemble_load(&vspace, forcing);
    StokesSystem::from_parts(vspace, pspace, mu, rhs, Backend::Assembled).unwrap()
}

fn errors(level: u32, order: usize) -> (f64, f64) {
    let sys = unit_viscosity_system(level, order);
    let a_inv = ViscousInverse::build(&sys, InnerMode::Vcycle, 1, &MultigridConfig::default()).unwrap();
    let s = SchurApproximation::mass(&sys.vspace, &sys.pspace, &sys.mu).unwrap();
    let pc = StokesPreconditioner::new(&sys, a_inv, s, SchurSign::Negative);
    let nu = sys.num_velocity();
    let ns = NullSpace::new(nu, sys.pspace.constant_vector());
    let cfg = GmresConfig { rtol: 1e-12, null_space: Some(ns), ..Default::default() };
    let (x, rep) = gmres(&sys, &pc, &sys.rhs(), &cfg).unwrap();
    assert!(rep.converged);
    let (u, p) = x.split_at(nu);

    let mesh = *sys.vspace.mesh();
    let quad = TensorQuadrature::gauss(2, order + 3);
    let vol = mesh.element_size().powi(2);
    // the discrete pressure is defined up to a constant
    let (mut mean, mut area) = (0.0, 0.0);
    for e in 0..mesh.num_elements() {
        for (xi, w) in quad.points.iter().zip(&quad.weights) {
            let x = mesh.map_point(e, xi);
            mean += w * vol * (sys.pspace.evaluate(p, e, xi) - pressure(&x));
            area += w * vol;
        }
    }
    mean /= area;
    let (mut eu, mut ep) = (0.0, 0.0);
    for e in 0..mesh.num_elements() {
        for (xi, w) in quad.points.iter().zip(&quad.weights) {
            let x = mesh.map_point(e, xi);
            let uh = sys.vspace.evaluate(u, e, xi);
            let ue = velocity(&x);
            eu += w * vol * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
            ep += w * vol * (sys.pspace.evaluate(p, e, xi) - pressure(&x) - mean).powi(2);
        }
    }
    (eu.sqrt(), ep.sqrt())
}

#[test]
fn manufactured_solution_rates() {
    let order = 2;
    let e: Vec<(f64, f64)> = [3, 4, 5].iter().map(|&l| errors(l, order)).collect();
    for w in e.windows(2) {
        let ru = (w[0].0 / w[1].0).log2();
        let rp = (w[0].1 / w[1].1).log2();
        assert!((ru - (order + 1) as f64).abs() <= 0.3, "velocity rate {ru}, errors {e:?}");
        assert!(rp >= order as f64 - 0.3, "pressure rate {rp}, errors {e:?}");
    }
}

/// Smallest nonzero eigenvalue of `M_p⁻¹ S`, the squared discrete inf-sup constant.
fn inf_sup(level: u32) -> f64 {
    let sys = unit_viscosity_system(level, 2);
    let s = system_schur(&sys).unwrap();
    let m = assemble_pressure_mass(&sys.vspace, &sys.pspace, &sys.mu).unwrap().to_dense();
    let l = m.cholesky().unwrap().l();
    let linv = l.clone().try_inverse().unwrap();
    let t: DMatrix<f64> = &linv * s * linv.transpose();
    let t = (&t + t.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    assert!(ev[0].abs() < 1e-8 * ev[ev.len() - 1], "one zero eigenvalue for the constant pressure");
    assert!(ev[1] > 1e-4);
    ev[1].sqrt()
}

#[test]
fn inf_sup_constant_is_mesh_stable() {
    let beta: Vec<f64> = [2, 3, 4].iter().map(|&l| inf_sup(l)).collect();
    let (lo, hi) = beta.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &b| (lo.min(b), hi.max(b)));
    assert!(hi / lo <= 1.2, "{beta:?}");
}
