//! Physical model: the double-well potential, paired temperature/order
//! parameter states, the free energy, its dissipation rate, and the phase
//! space metric.
//!
//! The kinetic equation is written against the `H^1` Riesz map, so the order
//! parameter mass term is split off explicitly: the residual carries
//! `W'(chi) - chi` and the free energy integrand is
//!
//! ```text
//!   (theta - log theta) + |grad chi|^2 / 2 + W(chi)
//! ```
//!
//! with the configured `W` literal. Its reported parts are the thermal
//! integral, `||chi||^2 / 2`, the gradient term, and `int (W(chi) - chi^2/2)`,
//! which sum exactly to the total. This is the quantity that decreases along
//! discrete trajectories; at the constant states `chi = +-1` on the unit box
//! it evaluates to 1 and at `chi = 0` to 2.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators;

/// Smooth polynomial potential with a semiconvexity constant.
///
/// `lambda` bounds the curvature from below (`W'' >= -lambda`), which makes
/// `beta(r) = W'(r) + lambda r` monotone nondecreasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Potential {
    pub name: String,
    /// Polynomial coefficients, ascending powers.
    pub coeffs: Vec<f64>,
    pub lambda: f64,
}

impl Potential {
    /// The canonical double well `W(r) = (r^2 - 1)^2` with `lambda = 4`.
    pub fn double_well() -> Potential {
        Potential {
            name: "double_well".into(),
            coeffs: vec![1.0, 0.0, -2.0, 0.0, 1.0],
            lambda: 4.0,
        }
    }

    pub fn polynomial(coeffs: Vec<f64>, lambda: f64) -> Potential {
        Potential {
            name: "polynomial".into(),
            coeffs,
            lambda,
        }
    }

    fn horner(coeffs: &[f64], r: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
    }

    pub fn value(&self, r: f64) -> f64 {
        Self::horner(&self.coeffs, r)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * r + k as f64 * c;
        }
        acc
    }

    pub fn second_derivative(&self, r: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(2).rev() {
            acc = acc * r + (k * (k - 1)) as f64 * c;
        }
        acc
    }

    /// Monotone part `W'(r) + lambda r`.
    pub fn beta(&self, r: f64) -> f64 {
        self.derivative(r) + self.lambda * r
    }

    /// Potential with the Riesz-map mass shift removed: `W(r) - r^2/2`.
    pub fn effective_value(&self, r: f64) -> f64 {
        self.value(r) - 0.5 * r * r
    }

    /// `W'(r) - r`, the nonlinearity appearing next to the `H^1` Riesz map.
    pub fn effective_derivative(&self, r: f64) -> f64 {
        self.derivative(r) - r
    }

    /// Structural checks on a sample grid; returns every violation found.
    pub fn validate(&self, range: (f64, f64), samples: usize) -> Vec<String> {
        let mut problems = Vec::new();
        if self.coeffs.is_empty() {
            problems.push("potential has no coefficients".into());
            return problems;
        }
        if !(self.lambda >= 0.0) {
            problems.push(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.derivative(0.0).abs() > 1e-12 {
            problems.push(format!(
                "W'(0) must vanish, got {:.3e}",
                self.derivative(0.0)
            ));
        }
        let (lo, hi) = range;
        let step = (hi - lo) / (samples.max(2) - 1) as f64;
        let mut worst = f64::INFINITY;
        for k in 0..samples.max(2) {
            let r = lo + k as f64 * step;
            worst = worst.min(self.second_derivative(r));
        }
        if worst < -self.lambda - 1e-9 {
            problems.push(format!(
                "W'' dips to {worst:.6} below -lambda = {} on [{lo}, {hi}]",
                -self.lambda
            ));
        }
        // Coercive growth: W'(r) r must be positive at both ends of the range.
        if self.derivative(hi) * hi <= 0.0 || self.derivative(lo) * lo <= 0.0 {
            problems.push("W'(r) r must be positive at large |r| (growth condition)".into());
        }
        problems
    }
}

/// Phase space metric parameters: the temperature `L^p` exponent and the
/// fractional-norm margin for the order parameter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub p: f64,
    pub eps: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams { p: 4.0, eps: 0.5 }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.p > 3.0) {
            problems.push(format!("metric exponent p must exceed 3, got {}", self.p));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            problems.push(format!("metric eps must lie in (0, 1), got {}", self.eps));
        }
        problems
    }

    /// Exponent `s` so that the order parameter seminorm is `|| B^s . ||`.
    pub fn fractional_exponent(&self) -> f64 {
        (3.0 + self.eps) / 4.0
    }
}

/// Grid plus potential: everything the propagator needs besides a state.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Arc<Grid>,
    pub potential: Potential,
}

impl Problem {
    pub fn new(grid: Arc<Grid>, potential: Potential) -> Problem {
        Problem { grid, potential }
    }

    pub fn double_well(grid: Arc<Grid>) -> Problem {
        Problem::new(grid, Potential::double_well())
    }

    /// Largest time step with a guaranteed per-step energy decrease.
    pub fn energy_stable_dt(&self) -> f64 {
        2.0 / self.potential.lambda.max(f64::MIN_POSITIVE)
    }
}

/// One time slice of the coupled fields.
///
/// The temperature is strictly positive everywhere; the order parameter is
/// free on the whole node set. Initial data may carry any positive boundary
/// temperature, but every state produced by the propagator has `theta = 1`
/// on the boundary (the Dirichlet pin), so `1 - 1/theta` has an exact zero
/// trace along trajectories.
#[derive(Debug, Clone)]
pub struct State {
    pub grid: Arc<Grid>,
    pub theta: Vec<f64>,
    pub chi: Vec<f64>,
    pub time: f64,
}

impl State {
    pub fn new(grid: Arc<Grid>, theta: Vec<f64>, chi: Vec<f64>, time: f64) -> Result<State> {
        grid.check_len(&theta)?;
        grid.check_len(&chi)?;
        let min_theta = theta.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_theta > 0.0) {
            return Err(Error::Singularity { min_theta });
        }
        if chi.iter().any(|x| !x.is_finite()) || theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("state fields must be finite".into()));
        }
        Ok(State {
            grid,
            theta,
            chi,
            time,
        })
    }

    pub fn constant(grid: Arc<Grid>, theta: f64, chi: f64) -> Result<State> {
        let n = grid.node_count();
        State::new(grid.clone(), vec![theta; n], vec![chi; n], 0.0)
    }

    pub fn min_theta(&self) -> f64 {
        self.theta.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_theta(&self) -> f64 {
        self.theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `1 - 1/theta`; exactly zero on the boundary for propagated states.
    pub fn flux_potential(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| 1.0 - 1.0 / t).collect()
    }

    /// Copy with the boundary temperature pinned to the Dirichlet value 1.
    pub fn with_boundary_pin(mut self) -> State {
        for i in 0..self.theta.len() {
            if self.grid.is_boundary(i) {
                self.theta[i] = 1.0;
            }
        }
        self
    }

    /// Max-norm over both fields; scales Newton tolerances.
    pub fn sup_norm(&self) -> f64 {
        let a = self.theta.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let b = self.chi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        a.max(b)
    }
}

/// Free energy split into its quadrature parts. `total` is the sum of the
/// four parts; `chi_mass + well` together integrate the literal `W(chi)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    /// `int (theta - log theta)`
    pub thermal: f64,
    /// `||chi||^2 / 2`
    pub chi_mass: f64,
    /// `||grad chi||^2 / 2`
    pub chi_grad: f64,
    /// `int (W(chi) - chi^2/2)`
    pub well: f64,
}

/// Evaluates the free energy of a state.
pub fn energy(problem: &Problem, state: &State) -> Result<EnergyReport> {
    let grid = &*problem.grid;
    let min_theta = state.min_theta();
    if !(min_theta > 0.0) {
        return Err(Error::Singularity { min_theta });
    }
    let mut thermal = 0.0;
    let mut well = 0.0;
    let w = grid.weights();
    for i in 0..state.theta.len() {
        thermal += w[i] * (state.theta[i] - state.theta[i].ln());
        well += w[i] * problem.potential.effective_value(state.chi[i]);
    }
    let chi_mass = 0.5 * grid.inner(&state.chi, &state.chi);
    let chi_grad = 0.5 * operators::h1_semi_inner(grid, &state.chi, &state.chi);
    Ok(EnergyReport {
        total: thermal + chi_mass + chi_grad + well,
        thermal,
        chi_mass,
        chi_grad,
        well,
    })
}

/// Instantaneous dissipation rate `||1 - 1/theta||_{H^1_0}^2 + ||chi_t||^2`.
pub fn dissipation(state: &State, chi_rate: &[f64]) -> Result<f64> {
    state.grid.check_len(chi_rate)?;
    let u = state.flux_potential();
    let du = operators::grad_norm(&state.grid, &u);
    let rate = operators::l2_norm(&state.grid, chi_rate);
    Ok(du * du + rate * rate)
}

/// Nodewise enthalpy `theta + chi`.
pub fn enthalpy(state: &State) -> Vec<f64> {
    state
        .theta
        .iter()
        .zip(&state.chi)
        .map(|(t, c)| t + c)
        .collect()
}

/// Phase space distance
/// `||dtheta||_{L^p} + ||B^s dchi|| + ||log^- theta_1 - log^- theta_2||_{L^1}
///  + ||beta(chi_1) - beta(chi_2)||_{L^1}`.
pub fn metric_distance(
    problem: &Problem,
    a: &State,
    b: &State,
    params: &MetricParams,
) -> Result<f64> {
    if !a.grid.same_shape(&b.grid) {
        return Err(Error::GridMismatch);
    }
    let violations = params.validate();
    if !violations.is_empty() {
        return Err(Error::Domain(violations.join("; ")));
    }
    let grid = &*a.grid;
    let n = grid.node_count();

    let dtheta: Vec<f64> = (0..n).map(|i| a.theta[i] - b.theta[i]).collect();
    let dchi: Vec<f64> = (0..n).map(|i| a.chi[i] - b.chi[i]).collect();

    let lp = operators::lp_norm(grid, &dtheta, params.p)?;
    let frac = operators::fractional_norm(grid, &dchi, params.fractional_exponent())?;

    let neg_log = |t: f64| (-t.ln()).max(0.0);
    let mut log_l1 = 0.0;
    let mut beta_l1 = 0.0;
    let w = grid.weights();
    for i in 0..n {
        log_l1 += w[i] * (neg_log(a.theta[i]) - neg_log(b.theta[i])).abs();
        beta_l1 +=
            w[i] * (problem.potential.beta(a.chi[i]) - problem.potential.beta(b.chi[i])).abs();
    }
    Ok(lp + frac + log_l1 + beta_l1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn unit_grid(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(1, 1.0, n).unwrap())
    }

    #[test]
    fn quartic_potential_algebra() {
        let w = Potential::double_well();
        for r in [-2.0, -1.0, -0.3, 0.0, 0.7, 1.0, 2.5] {
            assert!((w.value(r) - (r * r - 1.0).powi(2)).abs() <= 1e-12);
            assert!((w.derivative(r) - (4.0 * r * r * r - 4.0 * r)).abs() <= 1e-12);
            assert!((w.second_derivative(r) - (12.0 * r * r - 4.0)).abs() <= 1e-12);
            // With lambda = 4 the monotone part collapses to 4 r^3.
            assert!((w.beta(r) - 4.0 * r * r * r).abs() <= 1e-12);
        }
        assert_eq!(w.beta(0.0), 0.0);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let r = -10.0 + 0.05 * k as f64;
            let b = w.beta(r);
            assert!(b >= prev - 1e-12);
            prev = b;
        }
        assert!(w.validate((-10.0, 10.0), 2001).is_empty());
    }

    #[test]
    fn potential_derivative_matches_finite_differences() {
        let w = Potential::double_well();
        for r in [-1.7, -0.4, 0.9, 2.2] {
            let mut errs = Vec::new();
            for delta in [1e-3, 5e-4, 2.5e-4] {
                let fd = (w.value(r + delta) - w.value(r - delta)) / (2.0 * delta);
                errs.push((fd - w.derivative(r)).abs() / (delta * delta));
            }
            // Second-order: error / delta^2 stays bounded by a fixed constant.
            let c = errs.iter().cloned().fold(0.0f64, f64::max);
            assert!(c <= 12.0 * (1.0 + r.abs().powi(2)), "r={r}: C={c}");
        }
    }

    #[test]
    fn potential_validation_catches_violations() {
        let bad_slope = Potential::polynomial(vec![0.0, 1.0, 1.0], 0.0);
        assert!(bad_slope
            .validate((-5.0, 5.0), 101)
            .iter()
            .any(|m| m.contains("W'(0)")));

        let too_concave = Potential::polynomial(vec![0.0, 0.0, -3.0, 0.0, 0.25], 1.0);
        assert!(too_concave
            .validate((-5.0, 5.0), 101)
            .iter()
            .any(|m| m.contains("below -lambda")));

        let shrinking = Potential::polynomial(vec![0.0, 0.0, -1.0], 2.0);
        assert!(shrinking
            .validate((-5.0, 5.0), 101)
            .iter()
            .any(|m| m.contains("growth")));
    }

    #[test]
    fn state_enforces_positivity() {
        let grid = unit_grid(9);
        let n = grid.node_count();
        assert!(State::new(grid.clone(), vec![0.0; n], vec![0.0; n], 0.0).is_err());
        assert!(State::new(grid.clone(), vec![f64::NAN; n], vec![0.0; n], 0.0).is_err());
        let mut theta = vec![2.0; n];
        theta[0] = 7.0;
        let s = State::new(grid.clone(), theta, vec![0.0; n], 0.0)
            .unwrap()
            .with_boundary_pin();
        assert_eq!(s.theta[0], 1.0);
        assert_eq!(s.theta[n - 1], 1.0);
        let u = s.flux_potential();
        assert_eq!(u[0], 0.0);
        assert_eq!(u[n - 1], 0.0);
    }

    #[test]
    fn energy_on_constant_states() {
        let grid = unit_grid(31);
        let problem = Problem::double_well(grid.clone());

        let rest = State::constant(grid.clone(), 1.0, 0.0).unwrap();
        let e = energy(&problem, &rest).unwrap();
        assert!((e.total - 2.0).abs() <= 1e-12);

        let hot = State::constant(grid.clone(), E, 0.0).unwrap();
        let e = energy(&problem, &hot).unwrap();
        assert!((e.total - E).abs() <= 1e-12);

        // Pure phase: thermal 1, mass 1/2, shifted well -1/2.
        let phase = State::constant(grid.clone(), 1.0, 1.0).unwrap();
        let e = energy(&problem, &phase).unwrap();
        assert!((e.total - 1.0).abs() <= 1e-12);
        assert!((e.chi_mass - 0.5).abs() <= 1e-12);
        assert!((e.well + 0.5).abs() <= 1e-12);
    }

    #[test]
    fn energy_parts_sum_and_lower_bound() {
        let grid = unit_grid(17);
        let problem = Problem::double_well(grid.clone());
        let n = grid.node_count();
        let theta: Vec<f64> = (0..n).map(|i| 0.5 + (i % 5) as f64 * 0.3).collect();
        let chi: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
        let s = State::new(grid.clone(), theta, chi, 0.0).unwrap();
        let e = energy(&problem, &s).unwrap();
        let sum = e.thermal + e.chi_mass + e.chi_grad + e.well;
        assert!((e.total - sum).abs() <= 1e-12 * e.total.abs().max(1.0));
        // theta - log theta >= 1 and min W = 0 for the quartic.
        assert!(e.total >= grid.volume() * (1.0 + 0.0) - 1e-12);
    }

    #[test]
    fn dissipation_examples() {
        let grid = unit_grid(63);
        let n = grid.node_count();

        let rest = State::constant(grid.clone(), 1.0, 0.0).unwrap();
        assert_eq!(dissipation(&rest, &vec![0.0; n]).unwrap(), 0.0);

        let c = 0.7;
        let d = dissipation(&rest, &vec![c; n]).unwrap();
        assert!((d - c * c).abs() <= 1e-12);

        // theta = 1/(1 - eps sin(pi x)) gives flux potential eps sin(pi x).
        let eps = 1e-2;
        let theta: Vec<f64> = (0..n)
            .map(|i| 1.0 / (1.0 - eps * (PI * grid.coords(i).0).sin()))
            .collect();
        let s = State::new(grid.clone(), theta, vec![0.0; n], 0.0).unwrap();
        let d = dissipation(&s, &vec![0.0; n]).unwrap();
        let exact = eps * eps * PI * PI / 2.0;
        assert!((d - exact).abs() <= 0.1 * grid.h() * grid.h() * exact / (grid.h() * grid.h()));
        assert!((d - exact).abs() <= 5.0 * grid.h() * grid.h() * exact);
    }

    #[test]
    fn enthalpy_examples() {
        let grid = unit_grid(9);
        let n = grid.node_count();
        let s = State::constant(grid.clone(), 1.0, 1.0).unwrap();
        assert!(enthalpy(&s).iter().all(|&e| (e - 2.0).abs() <= 1e-15));

        // theta = 1 + x with chi = -x gives constant enthalpy away from the pin.
        let theta: Vec<f64> = (0..n).map(|i| 1.0 + grid.coords(i).0).collect();
        let chi: Vec<f64> = (0..n).map(|i| -grid.coords(i).0).collect();
        let s = State::new(grid.clone(), theta, chi, 0.0).unwrap();
        let e = enthalpy(&s);
        for i in grid.interior_indices() {
            assert!((e[i] - 1.0).abs() <= 1e-14);
        }

        // Linearity over differences.
        let s2 = State::constant(grid.clone(), 2.0, -0.5).unwrap();
        let e1 = enthalpy(&s);
        let e2 = enthalpy(&s2);
        for i in grid.interior_indices() {
            let direct = (s.theta[i] - s2.theta[i]) + (s.chi[i] - s2.chi[i]);
            assert!((e1[i] - e2[i] - direct).abs() <= 1e-14);
        }
    }

    #[test]
    fn metric_basics() {
        let grid = unit_grid(15);
        let problem = Problem::double_well(grid.clone());
        let params = MetricParams::default();

        let a = State::constant(grid.clone(), 2.0, 0.3).unwrap();
        let b = State::constant(grid.clone(), 1.0, 0.3).unwrap();
        assert_eq!(metric_distance(&problem, &a, &a, &params).unwrap(), 0.0);

        let dab = metric_distance(&problem, &a, &b, &params).unwrap();
        let dba = metric_distance(&problem, &b, &a, &params).unwrap();
        assert!((dab - dba).abs() <= 1e-12);
        // Constants >= 1: only the L^p term contributes and equals 1.
        assert!((dab - 1.0).abs() <= 1e-10);

        let bad = MetricParams { p: 2.0, eps: 0.5 };
        assert!(metric_distance(&problem, &a, &b, &bad).is_err());
    }

    #[test]
    fn energy_is_metric_continuous_on_smooth_families() {
        // |E(s1) - E(s2)| <= C d_X on a bounded family of smooth perturbations.
        let grid = unit_grid(24);
        let problem = Problem::double_well(grid.clone());
        let params = MetricParams::default();
        let n = grid.node_count();
        let base = State::constant(grid.clone(), 1.0, 0.5).unwrap();
        let e_base = energy(&problem, &base).unwrap().total;
        let mut prev_ratio: f64 = 0.0;
        for amp in [0.2, 0.1, 0.05, 0.025] {
            let theta: Vec<f64> = (0..n)
                .map(|i| 1.0 + amp * (PI * grid.coords(i).0).sin())
                .collect();
            let chi: Vec<f64> = (0..n)
                .map(|i| 0.5 + amp * (PI * grid.coords(i).0).cos())
                .collect();
            let s = State::new(grid.clone(), theta, chi, 0.0).unwrap();
            let de = (energy(&problem, &s).unwrap().total - e_base).abs();
            let d = metric_distance(&problem, &s, &base, &params).unwrap();
            assert!(d > 0.0);
            let ratio = de / d;
            prev_ratio = prev_ratio.max(ratio);
        }
        assert!(prev_ratio < 10.0, "Lipschitz ratio grew to {prev_ratio}");
    }
}
