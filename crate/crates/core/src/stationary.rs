//! Equilibrium states: `theta = 1` together with order parameters solving
//!
//! ```text
//!   B chi + W'(chi) - chi = 0
//! ```
//!
//! (the Riesz-map form of `-laplacian chi + W'(chi) = 0` with Neumann data).
//! Solutions are found by a damped Newton iteration from configurable seed
//! fields, classified by the smallest eigenvalue of the linearization
//! `B + diag(W''(chi) - 1)`, and cataloged after dedupe. Constant equilibria
//! are exactly the roots of `W'`; the catalog makes no completeness claim.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bicgstab, Banded};
use crate::model::{self, MetricParams, Problem, State};
use crate::operators::{apply_neumann, l2_norm, solve_neumann};
use crate::spectral;

/// Sign of the smallest linearization eigenvalue, with a `1e-8` margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

/// A solved stationary order parameter with its classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Equilibrium {
    pub chi: Vec<f64>,
    /// Max-norm of `B chi + W'(chi) - chi` at the solution.
    pub residual_norm: f64,
    pub stability: Stability,
    pub smallest_eigenvalue: f64,
    pub label: String,
    /// Free energy of the embedded state `(theta = 1, chi)`.
    pub energy: f64,
}

const RESIDUAL_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 100;

fn stationary_residual(problem: &Problem, chi: &[f64]) -> Result<Vec<f64>> {
    let b = apply_neumann(&problem.grid, chi)?;
    Ok(chi
        .iter()
        .zip(b)
        .map(|(&c, bv)| bv + problem.potential.effective_derivative(c))
        .collect())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// One Newton direction for the stationary system: solves
/// `(B + diag(W'' - 1)) d = -r`.
fn stationary_direction(problem: &Problem, chi: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    let grid = &*problem.grid;
    let m = grid.nodes_per_axis();
    let h2 = grid.h() * grid.h();
    match grid.dim() {
        1 => {
            let mut triplets = Vec::with_capacity(3 * m);
            for i in 0..m {
                let diag = 2.0 / h2 + problem.potential.second_derivative(chi[i]);
                triplets.push((i, i, diag));
                if i == 0 {
                    triplets.push((i, 1, -2.0 / h2));
                } else if i == m - 1 {
                    triplets.push((i, m - 2, -2.0 / h2));
                } else {
                    triplets.push((i, i - 1, -1.0 / h2));
                    triplets.push((i, i + 1, -1.0 / h2));
                }
            }
            let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
            let mut band = Banded::from_triplets(m, &triplets);
            band.factor()?;
            Ok(band.solve(&rhs))
        }
        _ => {
            let apply = |v: &[f64]| -> Vec<f64> {
                let bv = apply_neumann(grid, v).expect("sized");
                v.iter()
                    .zip(bv)
                    .zip(chi)
                    .map(|((x, b), &c)| b + (problem.potential.second_derivative(c) - 1.0) * x)
                    .collect()
            };
            let precondition = |v: &[f64]| solve_neumann(grid, v).expect("sized");
            let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
            let (d, _) = bicgstab(apply, precondition, &rhs, 1e-12, 600, "stationary system")?;
            Ok(d)
        }
    }
}

/// Smallest eigenvalue of `B + diag(W''(chi) - 1)` (dense, cap-gated).
fn smallest_linearization_eigenvalue(problem: &Problem, chi: &[f64]) -> Result<f64> {
    let grid = &*problem.grid;
    if grid.node_count() > grid.spectral_cap() {
        return Err(Error::SpectralCap {
            nodes: grid.node_count(),
            cap: grid.spectral_cap(),
        });
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        let bv = apply_neumann(grid, v).expect("sized");
        v.iter()
            .zip(bv)
            .zip(chi)
            .map(|((x, b), &c)| b + (problem.potential.second_derivative(c) - 1.0) * x)
            .collect()
    };
    let active: Vec<usize> = (0..grid.node_count()).collect();
    let (eigenvalues, _) = spectral::symmetric_eigen(grid, &active, apply);
    Ok(eigenvalues[0])
}

fn classify(mu: f64) -> Stability {
    if mu > 1e-8 {
        Stability::Stable
    } else if mu < -1e-8 {
        Stability::Unstable
    } else {
        Stability::Marginal
    }
}

fn label_for(problem: &Problem, chi: &[f64]) -> String {
    let lo = chi.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = chi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-8 {
        return format!("const({:+.3})", 0.5 * (hi + lo));
    }
    // Count sign changes along the x axis (first row in 2D).
    let m = problem.grid.nodes_per_axis();
    let mut changes = 0usize;
    let mut last = 0.0f64;
    for i in 0..m {
        let v = chi[i];
        if v.abs() > 1e-8 {
            if last != 0.0 && v.signum() != last {
                changes += 1;
            }
            last = v.signum();
        }
    }
    match changes {
        1 => "kink".to_string(),
        k => format!("profile-{k}"),
    }
}

/// Damped Newton solve of the stationary problem from `chi_guess`.
pub fn solve_equilibrium(problem: &Problem, chi_guess: &[f64]) -> Result<Equilibrium> {
    let grid = &*problem.grid;
    grid.check_len(chi_guess)?;
    let mut chi = chi_guess.to_vec();
    let mut r = stationary_residual(problem, &chi)?;
    let mut rnorm = sup(&r);

    let mut converged = rnorm <= RESIDUAL_TOL;
    let mut iterations = 0usize;
    while !converged && iterations < MAX_ITERS {
        iterations += 1;
        let d = stationary_direction(problem, &chi, &r)?;
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = chi.iter().zip(&d).map(|(c, x)| c + alpha * x).collect();
            let tr = stationary_residual(problem, &trial)?;
            let tn = sup(&tr);
            if tn < rnorm || tn <= RESIDUAL_TOL {
                chi = trial;
                r = tr;
                rnorm = tn;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(Error::EquilibriumFailure {
                    residual: rnorm,
                    iterations,
                });
            }
        }
        converged = rnorm <= RESIDUAL_TOL;
    }
    if !converged {
        return Err(Error::EquilibriumFailure {
            residual: rnorm,
            iterations,
        });
    }

    let mu = smallest_linearization_eigenvalue(problem, &chi)?;
    let state = State::new(problem.grid.clone(), vec![1.0; chi.len()], chi.clone(), 0.0)?;
    let energy = model::energy(problem, &state)?.total;
    Ok(Equilibrium {
        label: label_for(problem, &chi),
        chi,
        residual_norm: rnorm,
        stability: classify(mu),
        smallest_eigenvalue: mu,
        energy,
    })
}

/// Default seed family: constants, single cosine modes, and tanh profiles.
pub fn default_seeds(problem: &Problem) -> Vec<Vec<f64>> {
    let grid = &*problem.grid;
    let n = grid.node_count();
    let l = grid.extent();
    let mut seeds = Vec::new();
    for k in 0..13 {
        let c = -1.5 + 0.25 * k as f64;
        seeds.push(vec![c; n]);
    }
    for mode in 1..=2 {
        for amp in [0.5, -0.5] {
            seeds.push(
                (0..n)
                    .map(|i| {
                        let (x, y) = grid.coords(i);
                        let base = (mode as f64 * std::f64::consts::PI * x / l).cos();
                        let tail = if grid.dim() == 2 {
                            (mode as f64 * std::f64::consts::PI * y / l).cos()
                        } else {
                            1.0
                        };
                        amp * base * tail
                    })
                    .collect(),
            );
        }
    }
    for width in [0.1, 0.2] {
        seeds.push(
            (0..n)
                .map(|i| ((grid.coords(i).0 - 0.5 * l) / (width * l)).tanh())
                .collect(),
        );
    }
    seeds
}

/// Builds a deduplicated catalog from the seed family (failures are skipped).
pub fn build_catalog(problem: &Problem, seeds: &[Vec<f64>]) -> Vec<Equilibrium> {
    let grid = &*problem.grid;
    let mut catalog: Vec<Equilibrium> = Vec::new();
    for seed in seeds {
        let Ok(eq) = solve_equilibrium(problem, seed) else {
            continue;
        };
        let duplicate = catalog.iter().any(|known| {
            let diff: Vec<f64> = known.chi.iter().zip(&eq.chi).map(|(a, b)| a - b).collect();
            l2_norm(grid, &diff) < 1e-6
        });
        if !duplicate {
            catalog.push(eq);
        }
    }
    catalog.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    catalog
}

/// Phase-space distance from `state` to the nearest cataloged equilibrium
/// (embedded as `theta = 1`); ties break on the first index.
pub fn equilibrium_distance(
    problem: &Problem,
    state: &State,
    catalog: &[Equilibrium],
    params: &MetricParams,
) -> Result<(f64, String)> {
    if catalog.is_empty() {
        return Err(Error::Domain("equilibrium catalog is empty".into()));
    }
    let mut best = f64::INFINITY;
    let mut label = String::new();
    for eq in catalog {
        let target = State::new(
            problem.grid.clone(),
            vec![1.0; eq.chi.len()],
            eq.chi.clone(),
            0.0,
        )?;
        let d = model::metric_distance(problem, state, &target, params)?;
        if d < best {
            best = d;
            label = eq.label.clone();
        }
    }
    Ok((best, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::stepper::{step, StepConfig};
    use std::sync::Arc;

    fn problem(extent: f64, n: usize) -> Problem {
        Problem::double_well(Arc::new(Grid::new(1, extent, n).unwrap()))
    }

    #[test]
    fn constant_guesses_find_the_well_roots() {
        let problem = problem(1.0, 41);
        let n = problem.grid.node_count();
        let plus = solve_equilibrium(&problem, &vec![0.9; n]).unwrap();
        assert!(plus.residual_norm <= RESIDUAL_TOL);
        assert!(plus.chi.iter().all(|c| (c - 1.0).abs() <= 1e-9));
        assert_eq!(plus.stability, Stability::Stable);

        let minus = solve_equilibrium(&problem, &vec![-0.9; n]).unwrap();
        assert!(minus.chi.iter().all(|c| (c + 1.0).abs() <= 1e-9));

        let zero = solve_equilibrium(&problem, &vec![1e-13; n]).unwrap();
        assert!(zero.chi.iter().all(|c| c.abs() <= 1e-9));
        assert_eq!(zero.stability, Stability::Unstable);
        // Linearization at 0: smallest eigenvalue 1 + W''(0) - 1 = -4.
        assert!((zero.smallest_eigenvalue + 4.0).abs() <= 1e-6);
    }

    #[test]
    fn solver_is_idempotent_at_solutions() {
        let problem = problem(1.0, 41);
        let n = problem.grid.node_count();
        let eq = solve_equilibrium(&problem, &vec![0.7; n]).unwrap();
        let again = solve_equilibrium(&problem, &eq.chi).unwrap();
        for (a, b) in eq.chi.iter().zip(&again.chi) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn short_domain_tanh_guess_descends_to_a_constant() {
        // No nonconstant equilibria exist below the bifurcation length pi/2.
        let problem = problem(1.0, 41);
        let grid = &*problem.grid;
        let guess: Vec<f64> = (0..grid.node_count())
            .map(|i| ((grid.coords(i).0 - 0.5) / 0.2).tanh())
            .collect();
        let eq = solve_equilibrium(&problem, &guess).unwrap();
        assert!(eq.residual_norm <= RESIDUAL_TOL);
        let spread = eq.chi.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - eq.chi.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= 1e-8, "expected a constant, spread {spread}");
    }

    #[test]
    fn long_domain_carries_an_unstable_kink() {
        let problem = problem(4.0, 127);
        let grid = &*problem.grid;
        let guess: Vec<f64> = (0..grid.node_count())
            .map(|i| ((grid.coords(i).0 - 2.0) / 0.5).tanh())
            .collect();
        let eq = solve_equilibrium(&problem, &guess).unwrap();
        assert!(eq.residual_norm <= RESIDUAL_TOL);
        assert_eq!(eq.label, "kink");
        assert_eq!(eq.stability, Stability::Unstable);
        // Idempotence at the kink.
        let again = solve_equilibrium(&problem, &eq.chi).unwrap();
        for (a, b) in eq.chi.iter().zip(&again.chi) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn catalog_dedupes_and_orders_by_energy() {
        let problem = problem(1.0, 41);
        let catalog = build_catalog(&problem, &default_seeds(&problem));
        assert_eq!(catalog.len(), 3, "{:?}", catalog.iter().map(|e| &e.label).collect::<Vec<_>>());
        // The pure phases sit at energy |domain| = 1, the mixture at 2.
        assert!((catalog[0].energy - 1.0).abs() <= 1e-9);
        assert!((catalog[1].energy - 1.0).abs() <= 1e-9);
        assert!((catalog[2].energy - 2.0).abs() <= 1e-9);
        assert_eq!(catalog[2].stability, Stability::Unstable);

        // Brute-force root scan of W' agrees with the constant members.
        let mut roots = Vec::new();
        let w = &problem.potential;
        let mut prev = w.derivative(-3.0);
        let mut prev_r = -3.0;
        let mut r = -3.0;
        while r < 3.0 {
            r += 1e-3;
            let v = w.derivative(r);
            if prev == 0.0 || (prev < 0.0) != (v < 0.0) {
                roots.push(0.5 * (prev_r + r));
            }
            prev = v;
            prev_r = r;
        }
        assert_eq!(roots.len(), 3);
        for eq in &catalog {
            let c = eq.chi[0];
            assert!(
                roots.iter().any(|root| (root - c).abs() <= 1e-2),
                "constant {c} is not a root of W'"
            );
        }
    }

    #[test]
    fn equilibria_are_fixed_points_of_the_stepper() {
        let problem = problem(1.0, 41);
        let catalog = build_catalog(&problem, &default_seeds(&problem));
        let cfg = StepConfig::default();
        for eq in &catalog {
            let s = State::new(
                problem.grid.clone(),
                vec![1.0; eq.chi.len()],
                eq.chi.clone(),
                0.0,
            )
            .unwrap();
            let (next, _) = step(&problem, &s, &cfg).unwrap();
            for i in 0..next.chi.len() {
                assert!((next.chi[i] - s.chi[i]).abs() <= 1e-8);
                assert!((next.theta[i] - 1.0).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn distance_to_catalog() {
        let problem = problem(1.0, 24);
        let catalog = build_catalog(&problem, &default_seeds(&problem));
        let params = MetricParams::default();

        let member = State::new(
            problem.grid.clone(),
            vec![1.0; catalog[0].chi.len()],
            catalog[0].chi.clone(),
            0.0,
        )
        .unwrap();
        let (d, label) = equilibrium_distance(&problem, &member, &catalog, &params).unwrap();
        assert!(d <= 1e-9);
        assert_eq!(label, catalog[0].label);

        // Distance shrinks monotonically as a single-mode perturbation fades.
        let grid = &*problem.grid;
        let mut last = f64::INFINITY;
        for amp in [0.2, 0.1, 0.05, 0.025] {
            let chi: Vec<f64> = (0..grid.node_count())
                .map(|i| {
                    1.0 + amp * (std::f64::consts::PI * grid.coords(i).0).cos()
                })
                .collect();
            let s = State::new(problem.grid.clone(), vec![1.0; chi.len()], chi, 0.0).unwrap();
            let (d, _) = equilibrium_distance(&problem, &s, &catalog, &params).unwrap();
            assert!(d < last);
            last = d;
        }
        assert!(last <= 0.5);
    }
}
