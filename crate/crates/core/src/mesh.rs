//! Uniform structured meshes of the unit square and unit cube.
//!
//! A mesh at level `ℓ` has `2^ℓ` elements along each axis. Elements are
//! numbered lexicographically with the first axis running fastest. Node
//! coordinates are never stored; spaces built on the mesh compute them from
//! integer indices.

use crate::error::{Error, Result};

/// Coarsest level of every multigrid hierarchy (`4^d` elements).
pub const COARSE_LEVEL: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StructuredMesh {
    dim: usize,
    level: u32,
}

impl StructuredMesh {
    pub fn new(dim: usize, level: u32) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidMesh(format!("dimension {dim} is not 2 or 3")));
        }
        if level < COARSE_LEVEL {
            return Err(Error::InvalidMesh(format!(
                "level {level} is below the coarse-solve level {COARSE_LEVEL}"
            )));
        }
        if level > 12 {
            return Err(Error::InvalidMesh(format!("level {level} is unreasonably large")));
        }
        Ok(Self { dim, level })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn elements_per_axis(&self) -> usize {
        1 << self.level
    }

    /// Element side length `h = 2^{-ℓ}`.
    pub fn element_size(&self) -> f64 {
        1.0 / self.elements_per_axis() as f64
    }

    pub fn num_elements(&self) -> usize {
        self.elements_per_axis().pow(self.dim as u32)
    }

    /// Multi-index of element `e`; unused trailing axes are zero.
    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        let n = self.elements_per_axis();
        let mut c = [0; 3];
        let mut rest = e;
        for entry in c.iter_mut().take(self.dim) {
            *entry = rest % n;
            rest /= n;
        }
        c
    }

    pub fn element_index(&self, coords: [usize; 3]) -> usize {
        let n = self.elements_per_axis();
        (0..self.dim).rev().fold(0, |acc, a| acc * n + coords[a])
    }

    /// Lower corner of element `e`.
    pub fn element_origin(&self, e: usize) -> [f64; 3] {
        let h = self.element_size();
        let c = self.element_coords(e);
        [c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h]
    }

    /// Maps reference coordinates `ξ ∈ [0,1]^d` of element `e` to physical space.
    pub fn map_point(&self, e: usize, xi: &[f64]) -> [f64; 3] {
        let h = self.element_size();
        let o = self.element_origin(e);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = o[a] + h * xi[a];
        }
        x
    }

    /// Element containing `x` (points on interior faces go to the upper element).
    pub fn locate(&self, x: &[f64]) -> usize {
        let n = self.elements_per_axis();
        let mut c = [0; 3];
        for a in 0..self.dim {
            let i = (x[a] * n as f64).floor();
            c[a] = (i.max(0.0) as usize).min(n - 1);
        }
        self.element_index(c)
    }

    /// The mesh one level coarser; every coarse element is the union of
    /// `2^d` children of `self`.
    pub fn coarsen(&self) -> Result<Self> {
        if self.level <= COARSE_LEVEL {
            return Err(Error::InvalidMesh(format!(
                "cannot coarsen below level {COARSE_LEVEL}"
            )));
        }
        Self::new(self.dim, self.level - 1)
    }

    /// Parent of fine element `e` in the mesh one level coarser.
    pub fn parent(&self, e: usize) -> usize {
        let c = self.element_coords(e);
        let coarse = Self { dim: self.dim, level: self.level - 1 };
        coarse.element_index([c[0] / 2, c[1] / 2, c[2] / 2])
    }

    pub fn is_boundary_element(&self, e: usize) -> bool {
        let n = self.elements_per_axis();
        let c = self.element_coords(e);
        c.iter().take(self.dim).any(|&i| i == 0 || i == n - 1)
    }

    /// Elements whose closure touches `∂Ω`, in increasing index order.
    pub fn boundary_element_set(&self) -> Vec<usize> {
        (0..self.num_elements()).filter(|&e| self.is_boundary_element(e)).collect()
    }

    /// Per-element boundary flags, indexed by element.
    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.num_elements()).map(|e| self.is_boundary_element(e)).collect()
    }
}
