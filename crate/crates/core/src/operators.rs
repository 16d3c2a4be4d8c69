//! Finite-difference realizations of the two elliptic operators and the
//! discrete norms built on them.
//!
//! * `apply_dirichlet` / `solve_dirichlet`: second-order Laplacian with
//!   homogeneous Dirichlet data, acting on interior nodes (the `H^1_0` Riesz
//!   map). Boundary entries of the argument are read as zero and the result
//!   is zero on the boundary.
//! * `apply_neumann` / `solve_neumann`: `-laplacian + identity` with mirror
//!   ghost nodes (the `H^1` Riesz map). The mirror closure annihilates
//!   constants exactly and keeps the operator self-adjoint in the lumped
//!   quadrature inner product.
//!
//! Direct tridiagonal factorizations serve the 1D solves; 2D solves use
//! conjugate gradients in the weighted inner product (the preconditioner slot
//! is the identity at desk scale).

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{conjugate_gradient, Tridiagonal};
use crate::spectral::{decomposition, ModeBasis};

/// Relative tolerance of the iterative elliptic solves.
pub const SOLVE_TOL: f64 = 1e-10;

/// Dirichlet Laplacian action; zero on the boundary, boundary data read as 0.
pub fn apply_dirichlet(grid: &Grid, v: &[f64]) -> Result<Vec<f64>> {
    grid.check_len(v)?;
    let h2 = grid.h() * grid.h();
    let m = grid.nodes_per_axis();
    let mut out = vec![0.0; grid.node_count()];
    match grid.dim() {
        1 => {
            for i in 1..m - 1 {
                let left = if i == 1 { 0.0 } else { v[i - 1] };
                let right = if i == m - 2 { 0.0 } else { v[i + 1] };
                out[i] = (2.0 * v[i] - left - right) / h2;
            }
        }
        _ => {
            for j in 1..m - 1 {
                for i in 1..m - 1 {
                    let c = grid.idx2(i, j);
                    let west = if i == 1 { 0.0 } else { v[c - 1] };
                    let east = if i == m - 2 { 0.0 } else { v[c + 1] };
                    let south = if j == 1 { 0.0 } else { v[c - m] };
                    let north = if j == m - 2 { 0.0 } else { v[c + m] };
                    out[c] = (4.0 * v[c] - west - east - south - north) / h2;
                }
            }
        }
    }
    Ok(out)
}

/// `(-laplacian + I)` with mirror-ghost Neumann closure.
pub fn apply_neumann(grid: &Grid, v: &[f64]) -> Result<Vec<f64>> {
    grid.check_len(v)?;
    let h2 = grid.h() * grid.h();
    let m = grid.nodes_per_axis();
    let mut out = vec![0.0; grid.node_count()];
    match grid.dim() {
        1 => {
            for i in 0..m {
                let left = if i == 0 { v[1] } else { v[i - 1] };
                let right = if i == m - 1 { v[m - 2] } else { v[i + 1] };
                out[i] = (2.0 * v[i] - left - right) / h2 + v[i];
            }
        }
        _ => {
            for j in 0..m {
                for i in 0..m {
                    let c = grid.idx2(i, j);
                    let west = if i == 0 { v[c + 1] } else { v[c - 1] };
                    let east = if i == m - 1 { v[c - 1] } else { v[c + 1] };
                    let south = if j == 0 { v[c + m] } else { v[c - m] };
                    let north = if j == m - 1 { v[c - m] } else { v[c + m] };
                    out[c] = (4.0 * v[c] - west - east - south - north) / h2 + v[c];
                }
            }
        }
    }
    Ok(out)
}

fn dirichlet_tridiagonal(grid: &Grid) -> &Tridiagonal {
    grid.dirichlet_factor.get_or_init(|| {
        let n = grid.n_interior();
        let h2 = grid.h() * grid.h();
        let a = vec![-1.0 / h2; n - 1];
        let b = vec![2.0 / h2; n];
        Tridiagonal::new(&a, &b, &a).expect("SPD tridiagonal")
    })
}

fn neumann_tridiagonal(grid: &Grid) -> &Tridiagonal {
    grid.neumann_factor.get_or_init(|| {
        let m = grid.nodes_per_axis();
        let h2 = grid.h() * grid.h();
        let mut lower = vec![-1.0 / h2; m - 1];
        let mut upper = vec![-1.0 / h2; m - 1];
        let diag = vec![1.0 + 2.0 / h2; m];
        upper[0] = -2.0 / h2; // mirror doubles the single neighbor
        lower[m - 2] = -2.0 / h2;
        Tridiagonal::new(&lower, &diag, &upper).expect("diagonally dominant tridiagonal")
    })
}

/// Solves the Dirichlet problem; `rhs` is read on interior nodes only.
pub fn solve_dirichlet(grid: &Grid, rhs: &[f64]) -> Result<Vec<f64>> {
    grid.check_len(rhs)?;
    match grid.dim() {
        1 => {
            let m = grid.nodes_per_axis();
            let interior: Vec<f64> = rhs[1..m - 1].to_vec();
            let x = dirichlet_tridiagonal(grid).solve(&interior);
            let mut out = vec![0.0; m];
            out[1..m - 1].copy_from_slice(&x);
            Ok(out)
        }
        _ => {
            let mut masked = rhs.to_vec();
            for i in 0..masked.len() {
                if grid.is_boundary(i) {
                    masked[i] = 0.0;
                }
            }
            let apply = |v: &[f64]| apply_dirichlet(grid, v).expect("sized field");
            let (x, _) = conjugate_gradient(
                apply,
                grid.weights(),
                &masked,
                SOLVE_TOL,
                40 * grid.nodes_per_axis().max(50),
                "2D Dirichlet solve",
            )?;
            Ok(x)
        }
    }
}

/// Solves `(-laplacian + I) z = rhs` with Neumann closure.
pub fn solve_neumann(grid: &Grid, rhs: &[f64]) -> Result<Vec<f64>> {
    grid.check_len(rhs)?;
    match grid.dim() {
        1 => Ok(neumann_tridiagonal(grid).solve(rhs)),
        _ => {
            let apply = |v: &[f64]| apply_neumann(grid, v).expect("sized field");
            let (x, _) = conjugate_gradient(
                apply,
                grid.weights(),
                rhs,
                SOLVE_TOL,
                40 * grid.nodes_per_axis().max(50),
                "2D Neumann solve",
            )?;
            Ok(x)
        }
    }
}

/// Edge-difference bilinear form `sum over edges of dv dz / h` with stored
/// boundary values; this is the adjoint form of `apply_neumann` minus mass.
pub fn h1_semi_inner(grid: &Grid, v: &[f64], z: &[f64]) -> f64 {
    debug_assert_eq!(v.len(), grid.node_count());
    let m = grid.nodes_per_axis();
    let h = grid.h();
    let mut acc = 0.0;
    match grid.dim() {
        1 => {
            for i in 0..m - 1 {
                acc += (v[i + 1] - v[i]) * (z[i + 1] - z[i]);
            }
            acc / h
        }
        _ => {
            let axis_w = |k: usize| if k == 0 || k == m - 1 { 0.5 * h } else { h };
            for j in 0..m {
                let wy = axis_w(j);
                for i in 0..m - 1 {
                    let c = grid.idx2(i, j);
                    acc += wy * (v[c + 1] - v[c]) * (z[c + 1] - z[c]);
                }
            }
            for i in 0..m {
                let wx = axis_w(i);
                for j in 0..m - 1 {
                    let c = grid.idx2(i, j);
                    acc += wx * (v[c + m] - v[c]) * (z[c + m] - z[c]);
                }
            }
            acc / h
        }
    }
}

/// Same form with the boundary trace forced to zero (the `H^1_0` pairing).
pub fn zero_trace_semi_inner(grid: &Grid, v: &[f64], z: &[f64]) -> f64 {
    debug_assert_eq!(v.len(), grid.node_count());
    let read = |field: &[f64], idx: usize| -> f64 {
        if grid.is_boundary(idx) {
            0.0
        } else {
            field[idx]
        }
    };
    let m = grid.nodes_per_axis();
    let h = grid.h();
    let mut acc = 0.0;
    match grid.dim() {
        1 => {
            for i in 0..m - 1 {
                acc += (read(v, i + 1) - read(v, i)) * (read(z, i + 1) - read(z, i));
            }
            acc / h
        }
        _ => {
            let axis_w = |k: usize| if k == 0 || k == m - 1 { 0.5 * h } else { h };
            for j in 0..m {
                let wy = axis_w(j);
                for i in 0..m - 1 {
                    let c = grid.idx2(i, j);
                    acc += wy * (read(v, c + 1) - read(v, c)) * (read(z, c + 1) - read(z, c));
                }
            }
            for i in 0..m {
                let wx = axis_w(i);
                for j in 0..m - 1 {
                    let c = grid.idx2(i, j);
                    acc += wx * (read(v, c + m) - read(v, c)) * (read(z, c + m) - read(z, c));
                }
            }
            acc / h
        }
    }
}

/// Weighted `L^p` norm; `p = infinity` gives the max norm.
pub fn lp_norm(grid: &Grid, v: &[f64], p: f64) -> Result<f64> {
    grid.check_len(v)?;
    if p.is_nan() || p < 1.0 {
        return Err(Error::Domain(format!("L^p norm requires p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    let mut acc = 0.0;
    for (x, w) in v.iter().zip(grid.weights()) {
        acc += w * x.abs().powf(p);
    }
    Ok(acc.powf(1.0 / p))
}

/// Weighted `L^2` norm.
pub fn l2_norm(grid: &Grid, v: &[f64]) -> f64 {
    grid.inner(v, v).sqrt()
}

/// `H^1_0` norm: square root of the zero-trace Dirichlet form.
pub fn grad_norm(grid: &Grid, v: &[f64]) -> f64 {
    zero_trace_semi_inner(grid, v, v).max(0.0).sqrt()
}

/// Full `H^1` norm (gradient form with stored boundary values plus mass).
pub fn h1_norm(grid: &Grid, v: &[f64]) -> f64 {
    (h1_semi_inner(grid, v, v) + grid.inner(v, v)).max(0.0).sqrt()
}

/// Discrete `H^{-1}` norm `sqrt(<e, L^{-1} e>)` with the Dirichlet solve;
/// `e` is read on interior nodes.
pub fn dual_norm(grid: &Grid, e: &[f64]) -> Result<f64> {
    let z = solve_dirichlet(grid, e)?;
    let mut acc = 0.0;
    for i in grid.interior_indices() {
        acc += grid.weights()[i] * e[i] * z[i];
    }
    Ok(acc.max(0.0).sqrt())
}

/// Fractional graph norm `|| L^s v ||` over the Neumann eigenbasis,
/// `s` in `(0, 2]`.
pub fn fractional_norm(grid: &Grid, v: &[f64], s: f64) -> Result<f64> {
    grid.check_len(v)?;
    if !(s > 0.0 && s <= 2.0) {
        return Err(Error::Domain(format!(
            "fractional exponent must lie in (0, 2], got {s}"
        )));
    }
    let dec = decomposition(grid, ModeBasis::Neumann)?;
    let mut acc = 0.0;
    for (mu, mode) in dec.eigenvalues.iter().zip(&dec.modes) {
        let c = grid.inner(mode, v);
        acc += mu.powf(2.0 * s) * c * c;
    }
    Ok(acc.sqrt())
}

/// Orthogonal projection of `v` onto the `k` lowest eigenmodes of the chosen
/// operator (weighted inner product).
pub fn project_low_modes(grid: &Grid, v: &[f64], k: usize, basis: ModeBasis) -> Result<Vec<f64>> {
    grid.check_len(v)?;
    let dec = decomposition(grid, basis)?;
    if k == 0 || k > dec.len() {
        return Err(Error::Domain(format!(
            "mode count must lie in 1..={}, got {k}",
            dec.len()
        )));
    }
    let mut out = vec![0.0; v.len()];
    for idx in 0..k {
        let c = grid.inner(&dec.modes[idx], v);
        for (o, m) in out.iter_mut().zip(&dec.modes[idx]) {
            *o += c * m;
        }
    }
    Ok(out)
}
