//! One-dimensional quadrature and polynomial bases on the reference interval
//! `[0, 1]`, and their tensor-product extensions to `[0,1]^d`.
//!
//! Multi-indices are linearized with the first axis running fastest.

/// Legendre polynomial `P_n` and its derivative at `x ∈ [-1, 1]`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-14 {
        // P'_n(±1) = (±1)^{n+1} n(n+1)/2
        let s = if x > 0.0 { 1.0 } else if n % 2 == 0 { -1.0 } else { 1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

#[derive(Clone, Debug)]
pub struct Quadrature1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `n`-point Gauss–Legendre rule on `[0, 1]`, exact for degree `2n − 1`.
pub fn gauss(n: usize) -> Quadrature1D {
    assert!(n >= 1);
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points.push(0.5 * (x + 1.0));
        weights.push(0.5 * w);
    }
    Quadrature1D { points, weights }
}

/// The `k + 1` Gauss–Lobatto–Legendre points on `[0, 1]`, ascending.
pub fn gll_points(k: usize) -> Vec<f64> {
    assert!(k >= 1);
    let mut pts = vec![-1.0];
    for i in 1..k {
        // interior points are the roots of P'_k
        let mut x = -(std::f64::consts::PI * i as f64 / k as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(k, x);
            let kf = k as f64;
            let ddp = (2.0 * x * dp - kf * (kf + 1.0) * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        pts.push(x);
    }
    pts.push(1.0);
    pts.into_iter().map(|x| 0.5 * (x + 1.0)).collect()
}

/// Lagrange interpolation basis on a set of distinct nodes.
#[derive(Clone, Debug)]
pub struct Lagrange1D {
    nodes: Vec<f64>,
}

impl Lagrange1D {
    pub fn new(nodes: Vec<f64>) -> Self {
        Self { nodes }
    }

    /// Basis on the GLL points of degree `k`.
    pub fn gll(k: usize) -> Self {
        Self::new(gll_points(k))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let n = &self.nodes;
        (0..n.len())
            .map(|i| {
                (0..n.len())
                    .filter(|&j| j != i)
                    .map(|j| (x - n[j]) / (n[i] - n[j]))
                    .product()
            })
            .collect()
    }

    pub fn deriv(&self, x: f64) -> Vec<f64> {
        let n = &self.nodes;
        (0..n.len())
            .map(|i| {
                let mut sum = 0.0;
                for m in 0..n.len() {
                    if m == i {
                        continue;
                    }
                    let mut prod = 1.0 / (n[i] - n[m]);
                    for j in 0..n.len() {
                        if j != i && j != m {
                            prod *= (x - n[j]) / (n[i] - n[j]);
                        }
                    }
                    sum += prod;
                }
                sum
            })
            .collect()
    }
}

/// Iterates the multi-indices of `[0, n)^dim`, first axis fastest.
pub fn multi_indices(n: usize, dim: usize) -> impl Iterator<Item = [usize; 3]> {
    let total = n.pow(dim as u32);
    (0..total).map(move |mut i| {
        let mut c = [0; 3];
        for entry in c.iter_mut().take(dim) {
            *entry = i % n;
            i /= n;
        }
        c
    })
}

/// Tensor-product Gauss rule on `[0,1]^d`.
#[derive(Clone, Debug)]
pub struct TensorQuadrature {
    pub dim: usize,
    pub rule: Quadrature1D,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TensorQuadrature {
    pub fn gauss(dim: usize, n: usize) -> Self {
        let rule = gauss(n);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for q in multi_indices(n, dim) {
            let mut p = [0.0; 3];
            let mut w = 1.0;
            for a in 0..dim {
                p[a] = rule.points[q[a]];
                w *= rule.weights[q[a]];
            }
            points.push(p);
            weights.push(w);
        }
        Self { dim, rule, points, weights }
    }

    /// Nodal rule on the `(k+1)^d` GLL points, exact for degree `2k − 1`.
    pub fn gll(dim: usize, k: usize) -> Self {
        let lag = Lagrange1D::gll(k);
        let g = gauss(k + 1);
        let mut w1 = vec![0.0; k + 1];
        for (x, w) in g.points.iter().zip(&g.weights) {
            for (acc, l) in w1.iter_mut().zip(lag.eval(*x)) {
                *acc += w * l;
            }
        }
        let rule = Quadrature1D { points: lag.nodes().to_vec(), weights: w1 };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for q in multi_indices(k + 1, dim) {
            let mut p = [0.0; 3];
            let mut w = 1.0;
            for a in 0..dim {
                p[a] = rule.points[q[a]];
                w *= rule.weights[q[a]];
            }
            points.push(p);
            weights.push(w);
        }
        Self { dim, rule, points, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Values and reference gradients of a tensor-product Lagrange basis at a
/// list of reference points.
#[derive(Clone, Debug)]
pub struct NodalTables {
    pub dim: usize,
    pub num_nodes: usize,
    pub num_points: usize,
    /// `values[q * num_nodes + a]`
    pub values: Vec<f64>,
    /// `grads[(q * num_nodes + a) * dim + m]`, derivative along reference axis `m`
    pub grads: Vec<f64>,
}

impl NodalTables {
    pub fn new(basis: &Lagrange1D, dim: usize, points: &[[f64; 3]]) -> Self {
        let n1 = basis.len();
        let num_nodes = n1.pow(dim as u32);
        let mut values = Vec::with_capacity(points.len() * num_nodes);
        let mut grads = Vec::with_capacity(points.len() * num_nodes * dim);
        for p in points {
            let v: Vec<Vec<f64>> = (0..dim).map(|a| basis.eval(p[a])).collect();
            let d: Vec<Vec<f64>> = (0..dim).map(|a| basis.deriv(p[a])).collect();
            for idx in multi_indices(n1, dim) {
                values.push((0..dim).map(|a| v[a][idx[a]]).product());
                for m in 0..dim {
                    grads.push(
                        (0..dim)
                            .map(|a| if a == m { d[a][idx[a]] } else { v[a][idx[a]] })
                            .product(),
                    );
                }
            }
        }
        Self { dim, num_nodes, num_points: points.len(), values, grads }
    }

    #[inline]
    pub fn value(&self, q: usize, a: usize) -> f64 {
        self.values[q * self.num_nodes + a]
    }

    #[inline]
    pub fn grad(&self, q: usize, a: usize) -> &[f64] {
        let s = (q * self.num_nodes + a) * self.dim;
        &self.grads[s..s + self.dim]
    }
}

/// Modal basis of total degree `≤ degree` on `[0,1]^d`: Bernstein polynomials
/// in the barycentric coordinates `λ_0 = 1 − Σξ/d`, `λ_i = ξ_i/d` of the
/// simplex with legs `d`, which contains the reference cube. The functions are
/// nonnegative on the cube and sum to one, so the constant function has the
/// all-ones coefficient vector.
#[derive(Clone, Debug)]
pub struct ModalBasis {
    pub dim: usize,
    pub degree: usize,
    /// Exponents of `λ_1..λ_d`; the exponent of `λ_0` is `degree − |α|`.
    pub exponents: Vec<[u32; 3]>,
    coefficients: Vec<f64>,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

impl ModalBasis {
    pub fn new(dim: usize, degree: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree as u32 {
            let mut block = Vec::new();
            for e in multi_indices(degree + 1, dim) {
                let e = [e[0] as u32, e[1] as u32, e[2] as u32];
                if e.iter().sum::<u32>() == total {
                    block.push(e);
                }
            }
            block.sort_by(|a, b| b.cmp(a));
            exponents.extend(block);
        }
        let n = degree as u32;
        let coefficients = exponents
            .iter()
            .map(|e| factorial(n) / (factorial(n - e.iter().sum::<u32>()) * e.iter().map(|&a| factorial(a)).product::<f64>()))
            .collect();
        Self { dim, degree, exponents, coefficients }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn eval(&self, xi: &[f64]) -> Vec<f64> {
        let d = self.dim as f64;
        let lam0 = 1.0 - xi[..self.dim].iter().sum::<f64>() / d;
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| {
                let e0 = self.degree as i32 - e.iter().sum::<u32>() as i32;
                c * lam0.powi(e0) * (0..self.dim).map(|a| (xi[a] / d).powi(e[a] as i32)).product::<f64>()
            })
            .collect()
    }

    /// Reference Gram matrix `∫_{[0,1]^d} q_α q_β dξ`, row-major.
    pub fn reference_gram(&self) -> Vec<f64> {
        let n = self.len();
        let quad = TensorQuadrature::gauss(self.dim, self.degree + 1);
        let mut g = vec![0.0; n * n];
        for (p, w) in quad.points.iter().zip(&quad.weights) {
            let q = self.eval(p);
            for i in 0..n {
                for j in 0..n {
                    g[i * n + j] += w * q[i] * q[j];
                }
            }
        }
        g
    }

    /// Coefficients of the constant function 1.
    pub fn constant_coefficients(&self) -> Vec<f64> {
        vec![1.0; self.len()]
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_exactness() {
        for n in 1..=6 {
            let q = gauss(n);
            for deg in 0..2 * n {
                let s: f64 = q.points.iter().zip(&q.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((s - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn gll_known_values() {
        assert_eq!(gll_points(1), vec![0.0, 1.0]);
        let p = gll_points(2);
        assert!((p[1] - 0.5).abs() < 1e-15);
        // degree 3: ±1/√5 on [-1,1]
        let p = gll_points(3);
        assert!((p[1] - 0.5 * (1.0 - 1.0 / 5f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn lagrange_partition_of_unity() {
        for k in 1..=5 {
            let b = Lagrange1D::gll(k);
            for &x in &[0.0, 0.13, 0.5, 0.77, 1.0] {
                let v: f64 = b.eval(x).iter().sum();
                let d: f64 = b.deriv(x).iter().sum();
                assert!((v - 1.0).abs() < 1e-12);
                assert!(d.abs() < 1e-10);
            }
            for (i, &xi) in b.nodes().iter().enumerate() {
                let v = b.eval(xi);
                for (j, vj) in v.iter().enumerate() {
                    assert!((vj - if i == j { 1.0 } else { 0.0 }).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn lagrange_derivative_matches_difference() {
        let b = Lagrange1D::gll(4);
        let x = 0.37;
        let eps = 1e-6;
        let (p, m) = (b.eval(x + eps), b.eval(x - eps));
        for (i, d) in b.deriv(x).iter().enumerate() {
            assert!((d - (p[i] - m[i]) / (2.0 * eps)).abs() < 1e-6);
        }
    }

    #[test]
    fn monomial_dimensions() {
        assert_eq!(ModalBasis::new(3, 1).len(), 4);
        assert_eq!(ModalBasis::new(2, 1).len(), 3);
        assert_eq!(ModalBasis::new(3, 2).len(), binomial(5, 3));
        let b = ModalBasis::new(3, 1);
        assert_eq!(b.exponents, vec![[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]);
    }

    #[test]
    fn gll_rule_examples() {
        let q = TensorQuadrature::gll(1, 2);
        assert_eq!(q.rule.points, vec![0.0, 0.5, 1.0]);
        for (w, e) in q.rule.weights.iter().zip([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]) {
            assert!((w - e).abs() < 1e-15);
        }
        let q = TensorQuadrature::gll(3, 3);
        assert_eq!(q.len(), 64);
        let s: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * p[0].powi(5) * p[2]).sum();
        assert!((s - 1.0 / 12.0).abs() < 1e-14);
        assert!(q.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn modal_basis_is_a_positive_partition_of_unity() {
        for (dim, degree) in [(2, 1), (2, 3), (3, 2)] {
            let b = ModalBasis::new(dim, degree);
            for p in TensorQuadrature::gauss(dim, 4).points.iter().chain([[0.0; 3], [1.0; 3]].iter()) {
                let v = b.eval(p);
                assert!(v.iter().all(|&q| q >= 0.0));
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reference_gram_examples() {
        let b = ModalBasis::new(2, 1);
        let g = b.reference_gram();
        // q = (1 − (ξ+η)/2, ξ/2, η/2)
        assert!((g[4] - 1.0 / 12.0).abs() < 1e-15);
        assert!((g[5] - 1.0 / 16.0).abs() < 1e-15);
        assert!((g[0] - 7.0 / 24.0).abs() < 1e-15);
        let row_sums: Vec<f64> = g.chunks(3).map(|r| r.iter().sum()).collect();
        assert!((row_sums[0] - 0.5).abs() < 1e-15 && (row_sums[1] - 0.25).abs() < 1e-15);
    }
}
