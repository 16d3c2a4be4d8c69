//! Fully implicit Euler stepping of the coupled system with a damped Newton
//! solve.
//!
//! One step from `(theta_n, chi_n)` solves, on interior nodes and the whole
//! node set respectively,
//!
//! ```text
//!   (theta - theta_n)/dt + (chi - chi_n)/dt + A (1 - 1/theta)        = 0
//!   (chi - chi_n)/dt + B chi + W'(chi) - chi - (1 - 1/theta)         = 0
//! ```
//!
//! with `A` the Dirichlet Laplacian and `B` the Neumann `-laplacian + I`;
//! the explicit `-chi` keeps `B` the plain `H^1` Riesz map. The boundary
//! temperature is pinned to 1, so `1 - 1/theta` has an exact zero trace.
//!
//! Newton iterates from the previous state, backtracking the update until the
//! trial temperature clears the positivity floor and the residual decreases
//! (damping only, never clipping). A failed Newton solve halves `dt` and
//! retries. For `dt <= 2/lambda` the free energy decreases at every accepted
//! step.
//!
//! Linear solves: direct banded LU with partial pivoting in 1D; in 2D,
//! BiCGStab on the coupled system with a block lower-triangular preconditioner
//! whose blocks are solved by conjugate gradients.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DiagnosticsRow};
use crate::error::{Error, Result};
use crate::linalg::{bicgstab, conjugate_gradient, Banded};
use crate::model::{Problem, State};
use crate::operators::{apply_dirichlet, apply_neumann};

/// Time stepping and Newton controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    /// Target time step.
    pub dt: f64,
    /// Newton residual tolerance, relative to `1 + sup |state|`.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Positivity floor: trial temperatures must stay strictly above this.
    pub theta_floor: f64,
    /// On Newton failure the step retries with `dt/2`, this many times.
    pub max_dt_halvings: usize,
    /// Warning threshold: steps larger than `dt_cap_rel * 2/lambda` void the
    /// per-step energy decrease guarantee.
    pub dt_cap_rel: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            dt: 0.0625, // 0.25 / lambda for the default quartic
            newton_tol: 1e-10,
            newton_max_iters: 50,
            theta_floor: 1e-8,
            max_dt_halvings: 10,
            dt_cap_rel: 1.0,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0) {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.newton_tol > 0.0) {
            problems.push(format!(
                "newton_tol must be positive, got {}",
                self.newton_tol
            ));
        }
        if !(self.theta_floor > 0.0) {
            problems.push(format!(
                "theta_floor must be positive, got {}",
                self.theta_floor
            ));
        }
        if self.newton_max_iters == 0 {
            problems.push("newton_max_iters must be at least 1".into());
        }
        problems
    }
}

/// Per-step solver report.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepStats {
    /// Residual assemblies in the accepted Newton run (1 for a fixed point).
    pub newton_iterations: usize,
    /// Final residual max-norm relative to `1 + sup |state|`.
    pub final_residual: f64,
    /// Total backtracking halvings across the accepted Newton run.
    pub damping_events: usize,
    pub dt_used: f64,
    /// Smallest temperature seen over the accepted iterates.
    pub min_theta_seen: f64,
}

/// Residual of the implicit system at `next` given the previous state.
///
/// Returns `(r_theta, r_chi)`; `r_theta` is zero on the boundary.
pub fn residual(
    problem: &Problem,
    next: &State,
    prev: &State,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = &*problem.grid;
    let min_theta = next.min_theta();
    if !(min_theta > 0.0) {
        return Err(Error::Singularity { min_theta });
    }
    let u = next.flux_potential();
    let au = apply_dirichlet(grid, &u)?;
    let bchi = apply_neumann(grid, &next.chi)?;
    let n = grid.node_count();
    let mut r_theta = vec![0.0; n];
    let mut r_chi = vec![0.0; n];
    for i in 0..n {
        if !grid.is_boundary(i) {
            r_theta[i] =
                (next.theta[i] - prev.theta[i]) / dt + (next.chi[i] - prev.chi[i]) / dt + au[i];
        }
        r_chi[i] = (next.chi[i] - prev.chi[i]) / dt + bchi[i]
            + problem.potential.effective_derivative(next.chi[i])
            - u[i];
    }
    Ok((r_theta, r_chi))
}

/// Action of the Newton matrix at `next` on a direction `(d_theta, d_chi)`.
///
/// Boundary entries of `d_theta` are read as zero (the boundary temperature
/// is data, not an unknown).
pub fn jacobian_apply(
    problem: &Problem,
    next: &State,
    dt: f64,
    d_theta: &[f64],
    d_chi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = &*problem.grid;
    grid.check_len(d_theta)?;
    grid.check_len(d_chi)?;
    let n = grid.node_count();
    let mut scaled = vec![0.0; n];
    for i in 0..n {
        if !grid.is_boundary(i) {
            let s = 1.0 / (next.theta[i] * next.theta[i]);
            scaled[i] = s * d_theta[i];
        }
    }
    let a_part = apply_dirichlet(grid, &scaled)?;
    let b_part = apply_neumann(grid, d_chi)?;
    let mut j_theta = vec![0.0; n];
    let mut j_chi = vec![0.0; n];
    for i in 0..n {
        if !grid.is_boundary(i) {
            j_theta[i] = d_theta[i] / dt + a_part[i] + d_chi[i] / dt;
        }
        j_chi[i] = -scaled[i]
            + d_chi[i] / dt
            + b_part[i]
            + (problem.potential.second_derivative(next.chi[i]) - 1.0) * d_chi[i];
    }
    Ok((j_theta, j_chi))
}

fn sup_pair(r_theta: &[f64], r_chi: &[f64]) -> f64 {
    let a = r_theta.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let b = r_chi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.max(b)
}

const NO_UNKNOWN: usize = usize::MAX;

/// Node-interleaved unknown numbering: theta on interior nodes, chi on all.
struct UnknownMap {
    theta: Vec<usize>,
    chi: Vec<usize>,
    count: usize,
}

fn unknown_map(problem: &Problem) -> UnknownMap {
    let grid = &*problem.grid;
    let n = grid.node_count();
    let mut theta = vec![NO_UNKNOWN; n];
    let mut chi = vec![NO_UNKNOWN; n];
    let mut count = 0;
    for i in 0..n {
        if !grid.is_boundary(i) {
            theta[i] = count;
            count += 1;
        }
        chi[i] = count;
        count += 1;
    }
    UnknownMap { theta, chi, count }
}

/// Direct banded Newton direction for 1D grids: solves `J d = -r`.
fn direction_banded(
    problem: &Problem,
    next: &State,
    dt: f64,
    r_theta: &[f64],
    r_chi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = &*problem.grid;
    let m = grid.nodes_per_axis();
    let h2 = grid.h() * grid.h();
    let map = unknown_map(problem);
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(6 * map.count);
    let mut rhs = vec![0.0; map.count];

    let s: Vec<f64> = next.theta.iter().map(|&t| 1.0 / (t * t)).collect();
    for i in 0..m {
        if map.theta[i] != NO_UNKNOWN {
            let row = map.theta[i];
            triplets.push((row, map.theta[i], 1.0 / dt + 2.0 * s[i] / h2));
            for nb in [i.wrapping_sub(1), i + 1] {
                if nb < m && map.theta[nb] != NO_UNKNOWN {
                    triplets.push((row, map.theta[nb], -s[nb] / h2));
                }
            }
            triplets.push((row, map.chi[i], 1.0 / dt));
            rhs[row] = -r_theta[i];
        }
        let row = map.chi[i];
        if map.theta[i] != NO_UNKNOWN {
            triplets.push((row, map.theta[i], -s[i]));
        }
        let w2 = problem.potential.second_derivative(next.chi[i]);
        triplets.push((row, map.chi[i], 1.0 / dt + 2.0 / h2 + w2));
        if i == 0 {
            triplets.push((row, map.chi[1], -2.0 / h2));
        } else if i == m - 1 {
            triplets.push((row, map.chi[m - 2], -2.0 / h2));
        } else {
            triplets.push((row, map.chi[i - 1], -1.0 / h2));
            triplets.push((row, map.chi[i + 1], -1.0 / h2));
        }
        rhs[row] = -r_chi[i];
    }

    let mut band = Banded::from_triplets(map.count, &triplets);
    band.factor()?;
    let x = band.solve(&rhs);

    let n = grid.node_count();
    let mut d_theta = vec![0.0; n];
    let mut d_chi = vec![0.0; n];
    for i in 0..n {
        if map.theta[i] != NO_UNKNOWN {
            d_theta[i] = x[map.theta[i]];
        }
        d_chi[i] = x[map.chi[i]];
    }
    Ok((d_theta, d_chi))
}

/// Krylov Newton direction for 2D grids: BiCGStab on the coupled system with
/// a block lower-triangular preconditioner (frozen-coefficient heat block,
/// then the Riesz-map phase block), each block solved by conjugate gradients.
fn direction_krylov(
    problem: &Problem,
    next: &State,
    dt: f64,
    r_theta: &[f64],
    r_chi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = &*problem.grid;
    let n = grid.node_count();
    let s: Vec<f64> = (0..n)
        .map(|i| {
            if grid.is_boundary(i) {
                0.0
            } else {
                1.0 / (next.theta[i] * next.theta[i])
            }
        })
        .collect();
    let interior_count = grid.interior_indices().count().max(1);
    let s_mean = grid.interior_indices().map(|i| s[i]).sum::<f64>() / interior_count as f64;

    let apply = |v: &[f64]| -> Vec<f64> {
        let (jt, jc) =
            jacobian_apply(problem, next, dt, &v[..n], &v[n..]).expect("sized direction");
        let mut out = jt;
        out.extend(jc);
        out
    };

    let inner_iters = 60 * grid.nodes_per_axis().max(40);
    let precondition = |r: &[f64]| -> Vec<f64> {
        let heat = |v: &[f64]| -> Vec<f64> {
            let av = apply_dirichlet(grid, v).expect("sized");
            v.iter()
                .zip(av)
                .map(|(x, a)| x / dt + s_mean * a)
                .collect()
        };
        let mut rt = r[..n].to_vec();
        for i in 0..n {
            if grid.is_boundary(i) {
                rt[i] = 0.0;
            }
        }
        let (z1, _) =
            conjugate_gradient(heat, grid.weights(), &rt, 1e-12, inner_iters, "heat block")
                .unwrap_or((rt, 0));
        let phase = |v: &[f64]| -> Vec<f64> {
            let bv = apply_neumann(grid, v).expect("sized");
            v.iter().zip(bv).map(|(x, b)| x / dt + b).collect()
        };
        let rc: Vec<f64> = (0..n).map(|i| r[n + i] + s[i] * z1[i]).collect();
        let (z2, _) =
            conjugate_gradient(phase, grid.weights(), &rc, 1e-12, inner_iters, "phase block")
                .unwrap_or((rc, 0));
        let mut out = z1;
        out.extend(z2);
        out
    };

    let mut rhs = vec![0.0; 2 * n];
    for i in 0..n {
        rhs[i] = -r_theta[i];
        rhs[n + i] = -r_chi[i];
    }
    let (x, _) = bicgstab(apply, precondition, &rhs, 1e-12, 400, "coupled Newton system")?;
    Ok((x[..n].to_vec(), x[n..].to_vec()))
}

fn direction(
    problem: &Problem,
    next: &State,
    dt: f64,
    r_theta: &[f64],
    r_chi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    match problem.grid.dim() {
        1 => direction_banded(problem, next, dt, r_theta, r_chi),
        _ => direction_krylov(problem, next, dt, r_theta, r_chi),
    }
}

struct NewtonFailure {
    residual: f64,
    min_theta: f64,
}

fn newton(
    problem: &Problem,
    prev: &State,
    dt: f64,
    cfg: &StepConfig,
) -> std::result::Result<(State, StepStats), NewtonFailure> {
    let grid = &*problem.grid;
    let mut next = prev.clone().with_boundary_pin();
    next.time = prev.time + dt;

    let (mut r_theta, mut r_chi) = match residual(problem, &next, prev, dt) {
        Ok(r) => r,
        Err(_) => {
            return Err(NewtonFailure {
                residual: f64::INFINITY,
                min_theta: next.min_theta(),
            })
        }
    };
    let mut rnorm = sup_pair(&r_theta, &r_chi);
    let mut damping_events = 0usize;
    let mut min_theta_seen = next.min_theta();

    for iter in 1..=cfg.newton_max_iters {
        let scale = 1.0 + next.sup_norm();
        if rnorm <= cfg.newton_tol * scale {
            return Ok((
                next,
                StepStats {
                    newton_iterations: iter,
                    final_residual: rnorm / scale,
                    damping_events,
                    dt_used: dt,
                    min_theta_seen,
                },
            ));
        }
        let (d_theta, d_chi) = match direction(problem, &next, dt, &r_theta, &r_chi) {
            Ok(d) => d,
            Err(_) => {
                return Err(NewtonFailure {
                    residual: rnorm,
                    min_theta: min_theta_seen,
                })
            }
        };

        // Backtrack until the trial clears the floor and reduces the residual.
        let mut alpha = 1.0;
        loop {
            let mut trial = next.clone();
            for i in 0..trial.theta.len() {
                if !grid.is_boundary(i) {
                    trial.theta[i] += alpha * d_theta[i];
                }
                trial.chi[i] += alpha * d_chi[i];
            }
            let trial_min = trial.min_theta();
            if trial_min > cfg.theta_floor {
                if let Ok((rt, rc)) = residual(problem, &trial, prev, dt) {
                    let tn = sup_pair(&rt, &rc);
                    let tscale = 1.0 + trial.sup_norm();
                    if tn < rnorm || tn <= cfg.newton_tol * tscale {
                        next = trial;
                        r_theta = rt;
                        r_chi = rc;
                        rnorm = tn;
                        min_theta_seen = min_theta_seen.min(trial_min);
                        break;
                    }
                }
            }
            alpha *= 0.5;
            damping_events += 1;
            if alpha < 1e-9 {
                return Err(NewtonFailure {
                    residual: rnorm,
                    min_theta: min_theta_seen,
                });
            }
        }
    }
    let scale = 1.0 + next.sup_norm();
    if rnorm <= cfg.newton_tol * scale {
        return Ok((
            next,
            StepStats {
                newton_iterations: cfg.newton_max_iters,
                final_residual: rnorm / scale,
                damping_events,
                dt_used: dt,
                min_theta_seen,
            },
        ));
    }
    Err(NewtonFailure {
        residual: rnorm,
        min_theta: min_theta_seen,
    })
}

/// Advances one step, halving `dt` on Newton failure.
pub fn step(problem: &Problem, state: &State, cfg: &StepConfig) -> Result<(State, StepStats)> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let mut last = NewtonFailure {
        residual: f64::INFINITY,
        min_theta: state.min_theta(),
    };
    for halving in 0..=cfg.max_dt_halvings {
        let dt = cfg.dt / (1u64 << halving) as f64;
        match newton(problem, state, dt, cfg) {
            Ok(out) => return Ok(out),
            Err(info) => last = info,
        }
    }
    Err(Error::StepFailure {
        time: state.time,
        residual: last.residual,
        min_theta: last.min_theta,
        halvings: cfg.max_dt_halvings,
    })
}

/// Integrates to `t_end`, emitting one diagnostics row per accepted step.
///
/// The sink sees each row together with the state it describes. Deterministic
/// for fixed inputs: no randomness enters the Newton path.
pub fn run(
    problem: &Problem,
    state0: State,
    t_end: f64,
    cfg: &StepConfig,
    lp_exponent: f64,
    mut sink: impl FnMut(&DiagnosticsRow, &State),
) -> Result<State> {
    if t_end < state0.time {
        return Err(Error::Domain(format!(
            "t_end = {t_end} precedes the initial time {}",
            state0.time
        )));
    }
    let mut state = state0;
    let mut step_index = 0usize;
    let time_eps = 1e-12 * t_end.abs().max(1.0);
    while state.time < t_end - time_eps {
        let mut cfg_k = cfg.clone();
        cfg_k.dt = cfg.dt.min(t_end - state.time);
        let (next, stats) = step(problem, &state, &cfg_k)?;
        step_index += 1;
        let row = diagnostics::build_row(problem, &state, &next, &stats, step_index, lp_exponent)?;
        sink(&row, &next);
        state = next;
    }
    Ok(state)
}
