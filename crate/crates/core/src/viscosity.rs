//! The multi-sinker benchmark: viscosity, indicator and forcing fields, and
//! the w-BFBT weight functions.
//!
//! Viscosity is `μ(x) = (μ_max − μ_min)(1 − χ_n(x)) + μ_min` with
//! `μ_min = DR^{-1/2}` and `μ_max = DR^{1/2}`, where the indicator
//! `χ_n(x) = ∏_i 1 − exp(−δ max(0, |c_i − x| − ω/2)²)` vanishes at sinker
//! centers and tends to one away from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::TensorQuadrature;
use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

pub const DEFAULT_DELTA: f64 = 200.0;
pub const DEFAULT_OMEGA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_SEED: u64 = 2017;

/// Sinker centers are drawn from ChaCha8 seeded through `seed_from_u64`,
/// one uniform coordinate at a time, so an `n`-sinker draw is a prefix of
/// any larger draw with the same seed.
pub fn generate_centers(n: usize, seed: u64, dim: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coord = || loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    };
    (0..n)
        .map(|_| {
            let mut c = [0.0; 3];
            for entry in c.iter_mut().take(dim) {
                *entry = coord();
            }
            c
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkerConfig {
    pub dim: usize,
    pub centers: Vec<[f64; 3]>,
    pub delta: f64,
    pub omega: f64,
    pub dynamic_ratio: f64,
    pub beta: f64,
}

impl SinkerConfig {
    /// `n` random sinkers with the benchmark's default shape parameters.
    pub fn random(dim: usize, n: usize, seed: u64, dynamic_ratio: f64) -> Result<Self> {
        let cfg = Self {
            dim,
            centers: generate_centers(n, seed, dim),
            delta: DEFAULT_DELTA,
            omega: DEFAULT_OMEGA,
            dynamic_ratio,
            beta: DEFAULT_BETA,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidConfig(format!("dimension {}", self.dim)));
        }
        if !(self.dynamic_ratio >= 1.0) || !self.dynamic_ratio.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "dynamic ratio {} must be at least 1",
                self.dynamic_ratio
            )));
        }
        if !(self.delta > 0.0) || !(self.omega >= 0.0) {
            return Err(Error::InvalidConfig("delta must be positive and omega nonnegative".into()));
        }
        for c in &self.centers {
            if c.iter().take(self.dim).any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::InvalidConfig(format!("sinker center {c:?} outside the domain")));
            }
        }
        Ok(())
    }

    pub fn mu_min(&self) -> f64 {
        self.dynamic_ratio.powf(-0.5)
    }

    pub fn mu_max(&self) -> f64 {
        self.dynamic_ratio.sqrt()
    }

    /// Per-sinker factor `1 − exp(−δ s²)` and the derivative of `s ↦` factor
    /// times `∇s`, where `s = max(0, |x − c| − ω/2)`.
    fn factor(&self, c: &[f64; 3], x: &[f64]) -> (f64, [f64; 3]) {
        let mut diff = [0.0; 3];
        let mut r2 = 0.0;
        for a in 0..self.dim {
            diff[a] = x[a] - c[a];
            r2 += diff[a] * diff[a];
        }
        let r = r2.sqrt();
        let s = (r - 0.5 * self.omega).max(0.0);
        let e = (-self.delta * s * s).exp();
        let mut grad = [0.0; 3];
        if s > 0.0 {
            let scale = e * 2.0 * self.delta * s / r;
            for a in 0..self.dim {
                grad[a] = scale * diff[a];
            }
        }
        (1.0 - e, grad)
    }

    pub fn chi(&self, x: &[f64]) -> f64 {
        self.centers.iter().map(|c| self.factor(c, x).0).product()
    }

    /// `χ_n` and its gradient, using prefix/suffix products so that vanishing
    /// factors are handled exactly.
    pub fn chi_and_gradient(&self, x: &[f64]) -> (f64, [f64; 3]) {
        let parts: Vec<(f64, [f64; 3])> = self.centers.iter().map(|c| self.factor(c, x)).collect();
        let n = parts.len();
        let mut prefix = vec![1.0; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] * parts[i].0;
        }
        let mut suffix = 1.0;
        let mut grad = [0.0; 3];
        for i in (0..n).rev() {
            let others = prefix[i] * suffix;
            for a in 0..self.dim {
                grad[a] += parts[i].1[a] * others;
            }
            suffix *= parts[i].0;
        }
        (prefix[n], grad)
    }

    pub fn viscosity(&self, x: &[f64]) -> f64 {
        let (lo, hi) = (self.mu_min(), self.mu_max());
        (hi - lo) * (1.0 - self.chi(x)) + lo
    }

    pub fn viscosity_gradient(&self, x: &[f64]) -> [f64; 3] {
        let (_, g) = self.chi_and_gradient(x);
        let scale = -(self.mu_max() - self.mu_min());
        [scale * g[0], scale * g[1], scale * g[2]]
    }

    /// Body force `(0, …, 0, β(χ − 1))`; gravity acts along the last axis.
    pub fn forcing(&self, x: &[f64]) -> [f64; 3] {
        let mut f = [0.0; 3];
        f[self.dim - 1] = self.beta * (self.chi(x) - 1.0);
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// `w = √μ`
    SqrtViscosity,
    /// `w = (μ² + |∇μ|²)^{1/4}`
    GradientBased,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Weight-function choice plus boundary amplification factors `a_l, a_r ≥ 1`
/// applied on elements touching the Dirichlet boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub kind: WeightKind,
    pub amp_left: f64,
    pub amp_right: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { kind: WeightKind::SqrtViscosity, amp_left: 1.0, amp_right: 1.0 }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.amp_left >= 1.0 && self.amp_right >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "boundary amplification ({}, {}) must be at least 1",
                self.amp_left, self.amp_right
            )));
        }
        Ok(())
    }

    pub fn amplification(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.amp_left,
            Side::Right => self.amp_right,
        }
    }

    /// Unamplified weight from a viscosity value and its gradient.
    pub fn base_weight(&self, mu: f64, grad_mu: &[f64; 3]) -> f64 {
        match self.kind {
            WeightKind::SqrtViscosity => mu.sqrt(),
            WeightKind::GradientBased => {
                let g2: f64 = grad_mu.iter().map(|g| g * g).sum();
                (mu * mu + g2).powf(0.25)
            }
        }
    }
}

/// w-BFBT weight at `x`, which lies in an element flagged `on_boundary` if
/// that element touches `∂Ω`.
pub fn wbfbt_weight(cfg: &SinkerConfig, wcfg: &WeightConfig, side: Side, x: &[f64], on_boundary: bool) -> f64 {
    let mu = cfg.viscosity(x);
    let grad = match wcfg.kind {
        WeightKind::SqrtViscosity => [0.0; 3],
        WeightKind::GradientBased => cfg.viscosity_gradient(x),
    };
    let amp = if on_boundary { wcfg.amplification(side) } else { 1.0 };
    amp * wcfg.base_weight(mu, &grad)
}

pub fn dynamic_ratio_of_field(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("empty field".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (i, &v) in values.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositive { value: v, location: format!("entry {i}") });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi / lo)
}

/// A scalar field sampled at the quadrature points of every element, stored
/// element by element.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureField {
    pub points_per_element: usize,
    pub values: Vec<f64>,
}

impl QuadratureField {
    pub fn sample<F: FnMut(usize, &[f64]) -> f64>(mesh: &StructuredMesh, quad: &TensorQuadrature, mut f: F) -> Self {
        let mut values = Vec::with_capacity(mesh.num_elements() * quad.len());
        for e in 0..mesh.num_elements() {
            for p in &quad.points {
                let x = mesh.map_point(e, p);
                values.push(f(e, &x));
            }
        }
        Self { points_per_element: quad.len(), values }
    }

    pub fn constant(num_elements: usize, points_per_element: usize, value: f64) -> Self {
        Self { points_per_element, values: vec![value; num_elements * points_per_element] }
    }

    pub fn element(&self, e: usize) -> &[f64] {
        &self.values[e * self.points_per_element..(e + 1) * self.points_per_element]
    }

    pub fn num_elements(&self) -> usize {
        self.values.len() / self.points_per_element
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { points_per_element: self.points_per_element, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Multiplies every value of element `e` by `factor(e)`.
    pub fn scale_elements(&mut self, factor: impl Fn(usize) -> f64) {
        let n = self.points_per_element;
        for (e, chunk) in self.values.chunks_mut(n).enumerate() {
            let s = factor(e);
            chunk.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn ensure_positive(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|&v| !(v > 0.0)) {
            None => Ok(()),
            Some(i) => Err(Error::NonPositive {
                value: self.values[i],
                location: format!("{what}, element {} point {}", i / self.points_per_element, i % self.points_per_element),
            }),
        }
    }
}

/// Samples `√μ` or the gradient-based weight on every element's quadrature
/// points, amplified on boundary elements.
pub fn weight_field(
    mesh: &StructuredMesh,
    quad: &TensorQuadrature,
    cfg: &SinkerConfig,
    wcfg: &WeightConfig,
    side: Side,
) -> QuadratureField {
    let boundary = mesh.boundary_mask();
    QuadratureField::sample(mesh, quad, |e, x| wbfbt_weight(cfg, wcfg, side, x, boundary[e]))
}
