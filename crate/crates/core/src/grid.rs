//! Uniform grids on box domains with lumped (trapezoid) quadrature.
//!
//! Nodes cover the closed box including the boundary; in 1D a grid with `n`
//! interior nodes has `n + 2` nodes at spacing `h = extent / (n + 1)`, and the
//! 2D grid is the tensor product. Quadrature weights are the tensor trapezoid
//! rule (`h` per interior node, `h/2` on faces), so the weights sum exactly to
//! the box volume and the mirror-closure Neumann operator stays self-adjoint
//! in the weighted inner product.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::Tridiagonal;
use crate::spectral::SpectralDecomposition;

/// Default cap on the node count for dense spectral decompositions.
pub const DEFAULT_SPECTRAL_CAP: usize = 4096;

/// Uniform grid over `(0, extent)` or `(0, extent)^2`.
#[derive(Debug)]
pub struct Grid {
    dim: usize,
    extent: f64,
    n_interior: usize,
    h: f64,
    weights: Vec<f64>,
    boundary: Vec<bool>,
    spectral_cap: usize,
    pub(crate) dirichlet_factor: OnceLock<Tridiagonal>,
    pub(crate) neumann_factor: OnceLock<Tridiagonal>,
    pub(crate) dirichlet_modes: OnceLock<SpectralDecomposition>,
    pub(crate) neumann_modes: OnceLock<SpectralDecomposition>,
}

impl Grid {
    /// Builds a uniform grid. `n` is the interior node count per axis.
    pub fn new(dim: usize, extent: f64, n: usize) -> Result<Grid> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 3 {
            return Err(Error::Config(format!(
                "need at least 3 interior nodes per axis, got {n}"
            )));
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::Config(format!("extent must be positive, got {extent}")));
        }

        let per_axis = n + 2;
        let h = extent / (n + 1) as f64;
        // 1D trapezoid weights; the 2D weights are their tensor product.
        let axis_w: Vec<f64> = (0..per_axis)
            .map(|i| if i == 0 || i == per_axis - 1 { 0.5 * h } else { h })
            .collect();

        let (weights, boundary) = match dim {
            1 => {
                let boundary = (0..per_axis)
                    .map(|i| i == 0 || i == per_axis - 1)
                    .collect();
                (axis_w.clone(), boundary)
            }
            _ => {
                let mut w = Vec::with_capacity(per_axis * per_axis);
                let mut b = Vec::with_capacity(per_axis * per_axis);
                for j in 0..per_axis {
                    for i in 0..per_axis {
                        w.push(axis_w[i] * axis_w[j]);
                        b.push(
                            i == 0 || i == per_axis - 1 || j == 0 || j == per_axis - 1,
                        );
                    }
                }
                (w, b)
            }
        };

        Ok(Grid {
            dim,
            extent,
            n_interior: n,
            h,
            weights,
            boundary,
            spectral_cap: DEFAULT_SPECTRAL_CAP,
            dirichlet_factor: OnceLock::new(),
            neumann_factor: OnceLock::new(),
            dirichlet_modes: OnceLock::new(),
            neumann_modes: OnceLock::new(),
        })
    }

    /// Overrides the node budget for dense spectral decompositions.
    pub fn with_spectral_cap(mut self, cap: usize) -> Grid {
        self.spectral_cap = cap;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Interior node count per axis.
    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn spectral_cap(&self) -> usize {
        self.spectral_cap
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n_interior + 2
    }

    /// Total node count including the boundary.
    pub fn node_count(&self) -> usize {
        match self.dim {
            1 => self.nodes_per_axis(),
            _ => self.nodes_per_axis() * self.nodes_per_axis(),
        }
    }

    /// Box volume `extent^dim`.
    pub fn volume(&self) -> f64 {
        self.extent.powi(self.dim as i32)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.boundary[idx]
    }

    /// Flat index of node `(i, j)` on a 2D grid (row-major, x fastest).
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_axis() + i
    }

    /// Physical coordinates of a node.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        match self.dim {
            1 => (idx as f64 * self.h, 0.0),
            _ => {
                let m = self.nodes_per_axis();
                ((idx % m) as f64 * self.h, (idx / m) as f64 * self.h)
            }
        }
    }

    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(|&i| !self.boundary[i])
    }

    /// Quadrature inner product `sum_i w_i v_i z_i`.
    pub fn inner(&self, v: &[f64], z: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.weights.len());
        debug_assert_eq!(z.len(), self.weights.len());
        let mut acc = 0.0;
        for i in 0..v.len() {
            acc += self.weights[i] * v[i] * z[i];
        }
        acc
    }

    /// Quadrature integral `sum_i w_i v_i`.
    pub fn integral(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.weights.len());
        v.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// Same shape (dim, extent, resolution): fields are interchangeable.
    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.extent == other.extent && self.n_interior == other.n_interior
    }

    pub(crate) fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.node_count() {
            return Err(Error::DimensionMismatch {
                expected: self.node_count(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval_weights() {
        let g = Grid::new(1, 1.0, 9).unwrap();
        assert_eq!(g.node_count(), 11);
        assert!((g.h() - 0.1).abs() < 1e-15);
        assert_eq!(g.interior_indices().count(), 9);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn square_weights() {
        let g = Grid::new(2, 1.0, 9).unwrap();
        assert_eq!(g.interior_indices().count(), 81);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12 * 1.0);
    }

    #[test]
    fn scaled_interval() {
        let g = Grid::new(1, 2.0, 19).unwrap();
        assert!((g.h() - 0.1).abs() < 1e-15);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 2.0).abs() <= 2e-12);
    }

    #[test]
    fn boundary_partitions_nodes() {
        for grid in [Grid::new(1, 1.0, 5).unwrap(), Grid::new(2, 1.5, 4).unwrap()] {
            let boundary = (0..grid.node_count())
                .filter(|&i| grid.is_boundary(i))
                .count();
            let interior = grid.interior_indices().count();
            assert_eq!(boundary + interior, grid.node_count());
            assert!(grid.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(Grid::new(3, 1.0, 9).is_err());
        assert!(Grid::new(1, 1.0, 2).is_err());
        assert!(Grid::new(1, -1.0, 9).is_err());
    }
}
