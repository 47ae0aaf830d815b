use crate::basis::{multi_indices, Lagrange1D, ModalBasis, NodalTables, TensorQuadrature};
use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

/// Reference-element data for a Q_k nodal space: the GLL Lagrange basis
/// evaluated at the `(k+1)^d` Gauss points used for integrals, and the
/// collocated GLL rule used for lumped masses.
#[derive(Clone, Debug)]
pub struct ElementTables {
    pub quad: TensorQuadrature,
    pub nodal: NodalTables,
    /// GLL rule whose points are the element nodes, in node order.
    pub nodal_quad: TensorQuadrature,
}

impl ElementTables {
    pub fn new(dim: usize, order: usize) -> Self {
        let quad = TensorQuadrature::gauss(dim, order + 1);
        let nodal = NodalTables::new(&Lagrange1D::gll(order), dim, &quad.points);
        Self { quad, nodal, nodal_quad: TensorQuadrature::gll(dim, order) }
    }
}

/// Continuous, nodal Q_k space with `components` values per node.
///
/// Nodes sit on the global grid of `k·2^ℓ + 1` points per axis built from
/// per-element GLL points. With `dirichlet` set, nodes on `∂Ω` carry no
/// degrees of freedom and interior nodes are numbered lexicographically;
/// otherwise every node is a degree of freedom. Components are interleaved.
#[derive(Clone, Debug)]
pub struct NodalSpace {
    mesh: StructuredMesh,
    order: usize,
    components: usize,
    dirichlet: bool,
    basis: Lagrange1D,
    tables: ElementTables,
}

impl NodalSpace {
    pub fn new(mesh: StructuredMesh, order: usize, components: usize, dirichlet: bool) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidConfig("nodal order must be at least 1".into()));
        }
        Ok(Self {
            mesh,
            order,
            components,
            dirichlet,
            basis: Lagrange1D::gll(order),
            tables: ElementTables::new(mesh.dim(), order),
        })
    }

    /// Vector-valued velocity space with homogeneous Dirichlet conditions.
    pub fn velocity(mesh: StructuredMesh, order: usize) -> Result<Self> {
        Self::new(mesh, order, mesh.dim(), true)
    }

    /// Scalar space without boundary constraints (Neumann problems).
    pub fn scalar(mesh: StructuredMesh, order: usize) -> Result<Self> {
        Self::new(mesh, order, 1, false)
    }

    /// The same space with boundary nodes kept as degrees of freedom.
    pub fn unconstrained(&self) -> Self {
        Self { dirichlet: false, ..self.clone() }
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn is_dirichlet(&self) -> bool {
        self.dirichlet
    }

    pub fn basis(&self) -> &Lagrange1D {
        &self.basis
    }

    pub fn tables(&self) -> &ElementTables {
        &self.tables
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.order * self.mesh.elements_per_axis() + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis().pow(self.dim() as u32)
    }

    pub fn nodes_per_element(&self) -> usize {
        (self.order + 1).pow(self.dim() as u32)
    }

    pub fn dofs_per_element(&self) -> usize {
        self.nodes_per_element() * self.components
    }

    fn free_per_axis(&self) -> usize {
        if self.dirichlet {
            self.nodes_per_axis() - 2
        } else {
            self.nodes_per_axis()
        }
    }

    pub fn num_free_nodes(&self) -> usize {
        self.free_per_axis().pow(self.dim() as u32)
    }

    pub fn num_dofs(&self) -> usize {
        self.num_free_nodes() * self.components
    }

    /// Dof count with boundary nodes included.
    pub fn num_unconstrained_dofs(&self) -> usize {
        self.num_nodes() * self.components
    }

    pub fn node_grid(&self, node: usize) -> [usize; 3] {
        let n = self.nodes_per_axis();
        let mut g = [0; 3];
        let mut rest = node;
        for entry in g.iter_mut().take(self.dim()) {
            *entry = rest % n;
            rest /= n;
        }
        g
    }

    pub fn grid_node(&self, g: [usize; 3]) -> usize {
        let n = self.nodes_per_axis();
        (0..self.dim()).rev().fold(0, |acc, a| acc * n + g[a])
    }

    fn axis_coordinate(&self, g: usize) -> f64 {
        let ne = self.mesh.elements_per_axis();
        let e = (g / self.order).min(ne - 1);
        let a = g - e * self.order;
        (e as f64 + self.basis.nodes()[a]) * self.mesh.element_size()
    }

    pub fn node_coordinates(&self, node: usize) -> [f64; 3] {
        let g = self.node_grid(node);
        let mut x = [0.0; 3];
        for a in 0..self.dim() {
            x[a] = self.axis_coordinate(g[a]);
        }
        x
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let n = self.nodes_per_axis();
        self.node_grid(node).iter().take(self.dim()).any(|&i| i == 0 || i == n - 1)
    }

    /// First dof of `node`, or `None` for a constrained node.
    pub fn node_dof(&self, node: usize) -> Option<usize> {
        let g = self.node_grid(node);
        if !self.dirichlet {
            return Some(node * self.components);
        }
        let n = self.nodes_per_axis();
        let m = n - 2;
        let mut idx = 0;
        for a in (0..self.dim()).rev() {
            if g[a] == 0 || g[a] == n - 1 {
                return None;
            }
            idx = idx * m + (g[a] - 1);
        }
        Some(idx * self.components)
    }

    /// Global node of local node multi-index `a` in element `e`.
    pub fn element_node(&self, e: usize, a: [usize; 3]) -> usize {
        let c = self.mesh.element_coords(e);
        let mut g = [0; 3];
        for m in 0..self.dim() {
            g[m] = c[m] * self.order + a[m];
        }
        self.grid_node(g)
    }

    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        multi_indices(self.order + 1, self.dim()).map(|a| self.element_node(e, a)).collect()
    }

    /// Element dofs in local order `node * components + component`.
    pub fn element_dofs(&self, e: usize) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.dofs_per_element());
        for node in self.element_nodes(e) {
            let base = self.node_dof(node);
            for c in 0..self.components {
                out.push(base.map(|b| b + c));
            }
        }
        out
    }

    /// Map from unconstrained dofs to the dofs of this (possibly constrained) space.
    pub fn constraint_map(&self) -> Vec<Option<usize>> {
        let mut map = Vec::with_capacity(self.num_unconstrained_dofs());
        for node in 0..self.num_nodes() {
            let base = self.node_dof(node);
            for c in 0..self.components {
                map.push(base.map(|b| b + c));
            }
        }
        map
    }

    /// Interpolates a function at the free nodes.
    pub fn interpolate(&self, f: impl Fn(&[f64]) -> [f64; 3]) -> Vec<f64> {
        let mut v = vec![0.0; self.num_dofs()];
        for node in 0..self.num_nodes() {
            if let Some(base) = self.node_dof(node) {
                let val = f(&self.node_coordinates(node));
                for c in 0..self.components {
                    v[base + c] = val[c];
                }
            }
        }
        v
    }

    /// Evaluates the finite element function `u` at reference point `xi` of element `e`.
    pub fn evaluate(&self, u: &[f64], e: usize, xi: &[f64]) -> [f64; 3] {
        let vals: Vec<Vec<f64>> = (0..self.dim()).map(|a| self.basis.eval(xi[a])).collect();
        let mut out = [0.0; 3];
        for (a, dofs) in multi_indices(self.order + 1, self.dim()).zip(self.element_dofs(e).chunks(self.components)) {
            let phi: f64 = (0..self.dim()).map(|m| vals[m][a[m]]).product();
            for c in 0..self.components {
                if let Some(d) = dofs[c] {
                    out[c] += phi * u[d];
                }
            }
        }
        out
    }
}

/// Discontinuous modal pressure space P_{k−1} of total degree `≤ degree` on
/// each element, numbered element by element.
#[derive(Clone, Debug)]
pub struct ModalSpace {
    mesh: StructuredMesh,
    basis: ModalBasis,
}

impl ModalSpace {
    pub fn new(mesh: StructuredMesh, degree: usize) -> Self {
        Self { mesh, basis: ModalBasis::new(mesh.dim(), degree) }
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn basis(&self) -> &ModalBasis {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn modes_per_element(&self) -> usize {
        self.basis.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_elements() * self.modes_per_element()
    }

    pub fn element_range(&self, e: usize) -> std::ops::Range<usize> {
        let n = self.modes_per_element();
        e * n..(e + 1) * n
    }

    /// Coefficient vector `1_{q}` of the constant function one.
    pub fn constant_vector(&self) -> Vec<f64> {
        let local = self.basis.constant_coefficients();
        let mut v = Vec::with_capacity(self.num_dofs());
        for _ in 0..self.mesh.num_elements() {
            v.extend_from_slice(&local);
        }
        v
    }

    pub fn evaluate(&self, p: &[f64], e: usize, xi: &[f64]) -> f64 {
        let q = self.basis.eval(xi);
        self.element_range(e).zip(q).map(|(i, qi)| p[i] * qi).sum()
    }

    /// Interpolates a polynomial of degree `≤ degree` exactly by a local least-squares fit.
    pub fn project(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        use nalgebra::{DMatrix, DVector};
        let n = self.modes_per_element();
        let quad = TensorQuadrature::gauss(self.mesh.dim(), self.degree() + 2);
        let gram = DMatrix::from_row_slice(n, n, &self.basis.reference_gram());
        let chol = gram.cholesky().expect("modal Gram matrix is SPD");
        let mut out = vec![0.0; self.num_dofs()];
        for e in 0..self.mesh.num_elements() {
            let mut rhs = DVector::zeros(n);
            for (p, w) in quad.points.iter().zip(&quad.weights) {
                let q = self.basis.eval(p);
                let fx = f(&self.mesh.map_point(e, p));
                for i in 0..n {
                    rhs[i] += w * fx * q[i];
                }
            }
            let c = chol.solve(&rhs);
            out[self.element_range(e)].copy_from_slice(c.as_slice());
        }
        out
    }
}
