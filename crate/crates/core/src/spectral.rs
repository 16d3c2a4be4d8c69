//! Dense spectral decompositions of the discrete elliptic operators.
//!
//! Both operators are self-adjoint in the lumped quadrature inner product, so
//! the eigenproblem is symmetrized with `D^{1/2} L D^{-1/2}` (D the weight
//! matrix), solved densely, and mapped back. The resulting mode vectors are
//! orthonormal in the weighted inner product. Dense solves are gated by the
//! grid's spectral node cap.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators;

/// Which operator's eigenbasis a decomposition refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeBasis {
    /// Dirichlet Laplacian on interior nodes (the `H^1_0` Riesz map).
    Dirichlet,
    /// `-laplacian + identity` with Neumann closure (the `H^1` Riesz map).
    Neumann,
}

/// Eigenpairs of a discrete operator, ascending by eigenvalue.
///
/// Mode vectors are stored full-length (Dirichlet modes carry zeros on the
/// boundary) and are orthonormal under the grid's weighted inner product.
#[derive(Debug)]
pub struct SpectralDecomposition {
    pub basis: ModeBasis,
    pub eigenvalues: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Expansion coefficients of `v` in the mode basis (weighted inner product).
    pub fn coefficients(&self, grid: &Grid, v: &[f64]) -> Vec<f64> {
        self.modes.iter().map(|m| grid.inner(m, v)).collect()
    }

    /// Reassembles `sum_k c_k mode_k`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.modes.first().map_or(0, |m| m.len());
        let mut out = vec![0.0; n];
        for (c, m) in coeffs.iter().zip(&self.modes) {
            if *c != 0.0 {
                for i in 0..n {
                    out[i] += c * m[i];
                }
            }
        }
        out
    }
}

fn check_cap(grid: &Grid) -> Result<()> {
    let nodes = grid.node_count();
    if nodes > grid.spectral_cap() {
        return Err(Error::SpectralCap {
            nodes,
            cap: grid.spectral_cap(),
        });
    }
    Ok(())
}

/// Cached decomposition of the requested operator on this grid.
pub fn decomposition(grid: &Grid, basis: ModeBasis) -> Result<&SpectralDecomposition> {
    check_cap(grid)?;
    let cell = match basis {
        ModeBasis::Dirichlet => &grid.dirichlet_modes,
        ModeBasis::Neumann => &grid.neumann_modes,
    };
    Ok(cell.get_or_init(|| build(grid, basis)))
}

fn build(grid: &Grid, basis: ModeBasis) -> SpectralDecomposition {
    let total = grid.node_count();
    let active: Vec<usize> = match basis {
        ModeBasis::Dirichlet => grid.interior_indices().collect(),
        ModeBasis::Neumann => (0..total).collect(),
    };
    let apply = |v: &[f64]| -> Vec<f64> {
        match basis {
            ModeBasis::Dirichlet => operators::apply_dirichlet(grid, v).expect("grid-sized field"),
            ModeBasis::Neumann => operators::apply_neumann(grid, v).expect("grid-sized field"),
        }
    };
    let (eigenvalues, modes) = symmetric_eigen(grid, &active, apply);
    SpectralDecomposition {
        basis,
        eigenvalues,
        modes,
    }
}

/// Dense weighted-symmetric eigensolve of an operator restricted to `active`
/// nodes. Returns ascending eigenvalues with weighted-orthonormal, full-length
/// eigenvectors.
pub(crate) fn symmetric_eigen(
    grid: &Grid,
    active: &[usize],
    apply: impl Fn(&[f64]) -> Vec<f64>,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let total = grid.node_count();
    let m = active.len();
    let w = grid.weights();
    let sqrt_w: Vec<f64> = active.iter().map(|&i| w[i].sqrt()).collect();

    // Column-by-column assembly of D^{1/2} L D^{-1/2} on the active set.
    let mut sym = DMatrix::zeros(m, m);
    let mut unit = vec![0.0; total];
    for (col, &j) in active.iter().enumerate() {
        unit[j] = 1.0 / sqrt_w[col];
        let lu = apply(&unit);
        unit[j] = 0.0;
        for (row, &i) in active.iter().enumerate() {
            sym[(row, col)] = sqrt_w[row] * lu[i];
        }
    }
    // Symmetrize away assembly roundoff.
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }

    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut eigenvalues = Vec::with_capacity(m);
    let mut modes = Vec::with_capacity(m);
    for &k in &order {
        eigenvalues.push(eig.eigenvalues[k]);
        let mut mode = vec![0.0; total];
        for (row, &i) in active.iter().enumerate() {
            mode[i] = eig.eigenvectors[(row, k)] / sqrt_w[row];
        }
        modes.push(mode);
    }
    (eigenvalues, modes)
}
