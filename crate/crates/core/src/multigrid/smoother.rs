use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sparse::{axpy, dot, LinearOperator};

/// Power-method estimate of `λ_max(D⁻¹A)` from `iterations` steps, multiplied by `safety`.
///
/// Uses the `D`-weighted Rayleigh quotient of the final iterate, which never
/// exceeds the true maximum before inflation.
pub fn estimate_spectral_bound(op: &dyn LinearOperator, diag: &[f64], iterations: usize, safety: f64) -> f64 {
    let n = diag.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut av = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let dn = dot(&v, &v.iter().zip(diag).map(|(a, d)| a * d).collect::<Vec<_>>()).sqrt();
        if dn == 0.0 {
            return safety;
        }
        v.iter_mut().for_each(|x| *x /= dn);
        op.apply(&v, &mut av);
        lambda = dot(&v, &av);
        for ((x, a), d) in v.iter_mut().zip(&av).zip(diag) {
            *x = a / d;
        }
    }
    lambda * safety
}

/// Chebyshev-accelerated point Jacobi on `[lo, hi]` with a fixed polynomial degree.
#[derive(Clone, Debug)]
pub struct Chebyshev {
    pub diag_inv: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub degree: usize,
}

impl Chebyshev {
    pub fn new(diag: &[f64], lambda_hat: f64, lo_fraction: f64, hi_factor: f64, degree: usize) -> Self {
        Self {
            diag_inv: diag.iter().map(|d| 1.0 / d).collect(),
            lo: lo_fraction * lambda_hat,
            hi: hi_factor * lambda_hat,
            degree,
        }
    }

    /// Polynomial the smoother applies to the error, `x* − x ← q(D⁻¹A)(x* − x)`.
    pub fn error_polynomial(&self, lambda: f64) -> f64 {
        let theta = 0.5 * (self.hi + self.lo);
        let delta = 0.5 * (self.hi - self.lo);
        let t = |s: f64| {
            let (mut t0, mut t1) = (1.0, s);
            if self.degree == 0 {
                return 1.0;
            }
            for _ in 1..self.degree {
                let t2 = 2.0 * s * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
            t1
        };
        t((theta - lambda) / delta) / t(theta / delta)
    }

    pub fn smooth(&self, op: &dyn LinearOperator, x: &mut [f64], b: &[f64]) {
        chebyshev_jacobi_smooth(op, self, x, b)
    }
}

/// Applies `cheb.degree` steps of the Chebyshev recurrence in `D⁻¹A` to `x`.
pub fn chebyshev_jacobi_smooth(op: &dyn LinearOperator, cheb: &Chebyshev, x: &mut [f64], b: &[f64]) {
    if cheb.degree == 0 {
        return;
    }
    let n = x.len();
    let theta = 0.5 * (cheb.hi + cheb.lo);
    let delta = 0.5 * (cheb.hi - cheb.lo);
    let sigma = theta / delta;
    let mut rho = 1.0 / sigma;
    let mut ax = vec![0.0; n];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = (0..n).map(|i| cheb.diag_inv[i] * (b[i] - ax[i])).collect();
    let mut d: Vec<f64> = r.iter().map(|v| v / theta).collect();
    for _ in 1..cheb.degree {
        axpy(1.0, &d, x);
        op.apply(&d, &mut ax);
        for i in 0..n {
            r[i] -= cheb.diag_inv[i] * ax[i];
        }
        let rho_next = 1.0 / (2.0 * sigma - rho);
        for i in 0..n {
            d[i] = rho_next * rho * d[i] + 2.0 * rho_next / delta * r[i];
        }
        rho = rho_next;
    }
    axpy(1.0, &d, x);
}
