//! Trajectory- and ensemble-level verifiers for the structural properties of
//! the flow: monotone energy, long-time regularization of the temperature,
//! pairwise enthalpy contraction, low-mode squeezing, exponential
//! attraction-rate fits, and Hoelder continuity in time.
//!
//! Verifiers are pure functions over completed records, so re-running them on
//! stored data reproduces the original verdicts.

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};
use crate::model::{self, MetricParams, Problem, State};
use crate::operators;
use crate::spectral::{self, ModeBasis};
use crate::stationary::Equilibrium;
use crate::stepper::{self, StepConfig};

/// Relative slack on the pairwise growth envelope.
pub const GROWTH_SLACK: f64 = 1e-6;
/// Per-step energy tolerance `1e-8 * (1 + |E|)`.
pub fn energy_tolerance(energy: f64) -> f64 {
    1e-8 * (1.0 + energy.abs())
}

/// A stored state along a trajectory.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub state: State,
}

/// Diagnostics rows plus periodic state snapshots for one trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub rows: Vec<DiagnosticsRow>,
    pub snapshots: Vec<Snapshot>,
    pub cadence: usize,
    /// Step failure context, if the run ended early; rows up to the failure
    /// are preserved.
    pub failure: Option<String>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> Option<&State> {
        self.snapshots.last().map(|s| &s.state)
    }
}

/// Integrates a trajectory, keeping every row and every `cadence`-th state
/// (plus the initial and final states).
pub fn run_trajectory(
    problem: &Problem,
    state0: State,
    t_end: f64,
    cfg: &StepConfig,
    lp_exponent: f64,
    cadence: usize,
) -> TrajectoryRecord {
    let cadence = cadence.max(1);
    let mut rows: Vec<DiagnosticsRow> = Vec::new();
    let mut snapshots = vec![Snapshot {
        step: 0,
        t: state0.time,
        state: state0.clone(),
    }];
    let mut latest: Option<Snapshot> = None;
    let result = stepper::run(problem, state0, t_end, cfg, lp_exponent, |row, state| {
        let snap = Snapshot {
            step: row.step,
            t: row.t,
            state: state.clone(),
        };
        if row.step % cadence == 0 {
            snapshots.push(snap);
            latest = None;
        } else {
            latest = Some(snap);
        }
        rows.push(row.clone());
    });
    let failure = result.err().map(|e| e.to_string());
    // Keep the final state even when the cadence does not divide the count.
    if let Some(snap) = latest {
        snapshots.push(snap);
    }
    TrajectoryRecord {
        rows,
        snapshots,
        cadence,
        failure,
    }
}

/// Monotone-energy verdict over a diagnostics stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovVerdict {
    pub pass: bool,
    /// First offending row, with the size of the uptick.
    pub first_violation: Option<EnergyUptick>,
    pub total_decay: f64,
    pub rows_checked: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyUptick {
    pub step: usize,
    pub t: f64,
    pub jump: f64,
    pub tolerance: f64,
}

/// Checks that the energy column never rises beyond the per-step tolerance.
///
/// Both the row-to-row differences and each row's discrete dissipation (which
/// encodes the drop from the unrecorded predecessor state) are inspected.
pub fn check_lyapunov(rows: &[DiagnosticsRow]) -> LyapunovVerdict {
    let mut first_violation = None;
    for pair in rows.windows(2) {
        let tol = energy_tolerance(pair[0].energy.total);
        let jump = pair[1].energy.total - pair[0].energy.total;
        if jump > tol {
            first_violation = Some(EnergyUptick {
                step: pair[1].step,
                t: pair[1].t,
                jump,
                tolerance: tol,
            });
            break;
        }
    }
    if first_violation.is_none() {
        for row in rows {
            let tol = energy_tolerance(row.energy.total);
            // dissipation_discrete < 0 means the step gained energy.
            let jump = -row.stats.dt_used * row.dissipation_discrete;
            if jump > tol {
                first_violation = Some(EnergyUptick {
                    step: row.step,
                    t: row.t,
                    jump,
                    tolerance: tol,
                });
                break;
            }
        }
    }
    let total_decay = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => a.energy.total - b.energy.total,
        _ => 0.0,
    };
    LyapunovVerdict {
        pass: first_violation.is_none(),
        first_violation,
        total_decay,
        rows_checked: rows.len(),
    }
}

/// Tail suprema of the regularization quantities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailBounds {
    pub max_theta: f64,
    pub max_inv_theta: f64,
    pub theta_h1: f64,
    pub inv_theta_h1: f64,
    pub chi_h2: f64,
}

impl TailBounds {
    fn from_rows(rows: &[&DiagnosticsRow]) -> TailBounds {
        let fold = |f: fn(&DiagnosticsRow) -> f64| {
            rows.iter().map(|r| f(r)).fold(f64::NEG_INFINITY, f64::max)
        };
        TailBounds {
            max_theta: fold(|r| r.max_theta),
            max_inv_theta: fold(|r| r.inv_theta_max),
            theta_h1: fold(|r| r.theta_h1),
            inv_theta_h1: fold(|r| r.inv_theta_h1),
            chi_h2: fold(|r| r.chi_h2),
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.max_theta,
            self.max_inv_theta,
            self.theta_h1,
            self.inv_theta_h1,
            self.chi_h2,
        ]
    }

    /// Largest relative gap between two bound sets.
    pub fn max_relative_gap(&self, other: &TailBounds) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-300))
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Measured long-time boundedness of `theta`, `1/theta`, and the `H^2` proxy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularizationReport {
    pub conclusive: bool,
    /// First time after which all monitored quantities stay within 1.05x
    /// their tail suprema.
    pub onset_time: Option<f64>,
    pub tail_window: (f64, f64),
    pub tail_bounds: TailBounds,
}

/// Scans a record for the onset of uniform bounds; the tail is the trailing
/// `tail_fraction` of the time span.
pub fn regularization_report(rows: &[DiagnosticsRow], tail_fraction: f64) -> RegularizationReport {
    let inconclusive = RegularizationReport {
        conclusive: false,
        onset_time: None,
        tail_window: (0.0, 0.0),
        tail_bounds: TailBounds {
            max_theta: f64::NAN,
            max_inv_theta: f64::NAN,
            theta_h1: f64::NAN,
            inv_theta_h1: f64::NAN,
            chi_h2: f64::NAN,
        },
    };
    if rows.len() < 10 {
        return inconclusive;
    }
    let t0 = rows.first().map(|r| r.t).unwrap_or(0.0);
    let t1 = rows.last().map(|r| r.t).unwrap_or(0.0);
    let tail_start = t1 - tail_fraction.clamp(0.05, 1.0) * (t1 - t0);
    let tail: Vec<&DiagnosticsRow> = rows.iter().filter(|r| r.t >= tail_start).collect();
    if tail.len() < 3 {
        return inconclusive;
    }
    let bounds = TailBounds::from_rows(&tail);

    // Earliest time after which every quantity stays below 1.05x its tail sup.
    let within = |r: &DiagnosticsRow| -> bool {
        r.max_theta <= 1.05 * bounds.max_theta
            && r.inv_theta_max <= 1.05 * bounds.max_inv_theta
            && r.theta_h1 <= 1.05 * bounds.theta_h1
            && r.inv_theta_h1 <= 1.05 * bounds.inv_theta_h1
            && r.chi_h2 <= 1.05 * bounds.chi_h2
    };
    let mut onset = None;
    for (k, row) in rows.iter().enumerate() {
        if rows[k..].iter().all(|r| within(r)) {
            onset = Some(row.t);
            break;
        }
    }
    let conclusive = bounds.all_finite() && onset.map(|t| t < tail_start).unwrap_or(false);
    RegularizationReport {
        conclusive,
        onset_time: onset,
        tail_window: (tail_start, t1),
        tail_bounds: bounds,
    }
}

/// Squared contraction-norm components of a trajectory pair at one time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairDistance {
    pub t: f64,
    /// `||e_1 - e_2||^2_{H^{-1}}` for the enthalpies.
    pub n_dual: f64,
    /// `||chi_1 - chi_2||^2`.
    pub n_chi: f64,
    /// `||theta_1 - theta_2||^2`.
    pub n_theta: f64,
    /// `||chi_1 - chi_2||^2_{H^1}`.
    pub n_chi_h1: f64,
}

impl PairDistance {
    /// The contraction norm `N = n_dual + n_chi`.
    pub fn contraction(&self) -> f64 {
        self.n_dual + self.n_chi
    }
}

/// Pairwise contraction verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub rows: Vec<PairDistance>,
    /// `N(t) <= N(0) exp(2 lambda (t - t0)) (1 + slack)` at every sample.
    pub growth_ok: bool,
    /// Per-step dual-norm balance identity within solver tolerance.
    pub balance_ok: bool,
    pub max_balance_defect: f64,
    /// Measured temperature coercivity stays above `1/(max theta_1 max theta_2)`.
    pub coercivity_ok: bool,
    pub min_coercivity: f64,
    pub pass: bool,
}

fn aligned_snapshots<'a>(
    rec1: &'a TrajectoryRecord,
    rec2: &'a TrajectoryRecord,
) -> Result<Vec<(&'a Snapshot, &'a Snapshot)>> {
    if rec1.snapshots.len() != rec2.snapshots.len() {
        return Err(Error::Record(format!(
            "records hold {} vs {} snapshots",
            rec1.snapshots.len(),
            rec2.snapshots.len()
        )));
    }
    let pairs: Vec<_> = rec1.snapshots.iter().zip(rec2.snapshots.iter()).collect();
    for (a, b) in &pairs {
        if (a.t - b.t).abs() > 1e-12 * (1.0 + a.t.abs()) {
            return Err(Error::Record(format!(
                "snapshot times diverge: {} vs {}",
                a.t, b.t
            )));
        }
        if !a.state.grid.same_shape(&b.state.grid) {
            return Err(Error::GridMismatch);
        }
    }
    Ok(pairs)
}

/// Verifies the pairwise enthalpy contraction structure along two lock-step
/// records (cadence 1): the exact per-step dual-norm balance, the Gronwall
/// growth envelope with rate `2 lambda`, and the pointwise temperature
/// coercivity bound.
pub fn contraction_check(
    problem: &Problem,
    rec1: &TrajectoryRecord,
    rec2: &TrajectoryRecord,
) -> Result<ContractionReport> {
    let grid = &*problem.grid;
    let pairs = aligned_snapshots(rec1, rec2)?;
    if pairs.is_empty() {
        return Err(Error::Record("empty records".into()));
    }
    let lambda = problem.potential.lambda;
    let n = grid.node_count();

    struct PairFields {
        t: f64,
        e_diff: Vec<f64>,
        chi_diff: Vec<f64>,
        theta_diff: Vec<f64>,
        flux_diff: Vec<f64>,
        well_slope_diff: Vec<f64>,
        max_theta_product: f64,
        sup: f64,
    }
    let fields: Vec<PairFields> = pairs
        .iter()
        .map(|(a, b)| {
            let sa = &a.state;
            let sb = &b.state;
            let mut e_diff = vec![0.0; n];
            let mut chi_diff = vec![0.0; n];
            let mut theta_diff = vec![0.0; n];
            let mut flux_diff = vec![0.0; n];
            let mut well_slope_diff = vec![0.0; n];
            for i in 0..n {
                theta_diff[i] = sa.theta[i] - sb.theta[i];
                chi_diff[i] = sa.chi[i] - sb.chi[i];
                e_diff[i] = theta_diff[i] + chi_diff[i];
                flux_diff[i] = (1.0 - 1.0 / sa.theta[i]) - (1.0 - 1.0 / sb.theta[i]);
                well_slope_diff[i] = problem.potential.effective_derivative(sa.chi[i])
                    - problem.potential.effective_derivative(sb.chi[i]);
            }
            PairFields {
                t: a.t,
                e_diff,
                chi_diff,
                theta_diff,
                flux_diff,
                well_slope_diff,
                max_theta_product: sa.max_theta() * sb.max_theta(),
                sup: sa.sup_norm().max(sb.sup_norm()),
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(fields.len());
    for f in &fields {
        let n_dual = operators::dual_norm(grid, &f.e_diff)?.powi(2);
        let n_chi = grid.inner(&f.chi_diff, &f.chi_diff);
        let n_theta = grid.inner(&f.theta_diff, &f.theta_diff);
        let n_chi_h1 = operators::h1_semi_inner(grid, &f.chi_diff, &f.chi_diff) + n_chi;
        rows.push(PairDistance {
            t: f.t,
            n_dual,
            n_chi,
            n_theta,
            n_chi_h1,
        });
    }

    // Growth envelope.
    let n0 = rows[0].contraction();
    let t0 = rows[0].t;
    let mut growth_ok = true;
    for row in &rows {
        let bound = n0 * (2.0 * lambda * (row.t - t0)).exp() * (1.0 + GROWTH_SLACK);
        if row.contraction() > bound + 1e-300 {
            growth_ok = false;
        }
    }

    // Exact balance per step, up to the achieved Newton residuals.
    let worst_residual = |rec: &TrajectoryRecord, step: usize| -> f64 {
        rec.rows
            .iter()
            .find(|r| r.step == step)
            .map(|r| r.stats.final_residual)
            .unwrap_or(1e-10)
    };
    let mut balance_ok = true;
    let mut max_defect = 0.0f64;
    for k in 1..fields.len() {
        let prev = &fields[k - 1];
        let cur = &fields[k];
        let dt = cur.t - prev.t;
        if dt <= 0.0 {
            return Err(Error::Record("snapshot times must increase".into()));
        }
        let de: Vec<f64> = (0..n).map(|i| cur.e_diff[i] - prev.e_diff[i]).collect();
        let dchi: Vec<f64> = (0..n).map(|i| cur.chi_diff[i] - prev.chi_diff[i]).collect();
        let half_dn = 0.5 * (rows[k].contraction() - rows[k - 1].contraction());
        let half_inc =
            0.5 * (operators::dual_norm(grid, &de)?.powi(2) + grid.inner(&dchi, &dchi));
        let coercive = grid.inner(&cur.flux_diff, &cur.theta_diff);
        let slope = grid.inner(&cur.well_slope_diff, &cur.chi_diff);
        let balance = half_dn + half_inc + dt * (coercive + rows[k].n_chi_h1 + slope);

        let step = pairs[k].0.step;
        let rho = (worst_residual(rec1, step) + worst_residual(rec2, step)) * (1.0 + cur.sup);
        let scale = half_dn.abs()
            + half_inc
            + dt * (coercive.abs() + rows[k].n_chi_h1 + slope.abs());
        let tol = 1e-6 * scale + 100.0 * rho * dt * (rows[k].contraction().sqrt() + 1e-300);
        if balance.abs() > tol {
            balance_ok = false;
        }
        max_defect = max_defect.max(balance.abs() / (scale + 1e-300));
    }

    // Temperature coercivity: 2 <flux_diff, theta_diff> / ||theta_diff||^2
    // is at least 1/(max theta_1 max theta_2) by the monotone-difference
    // identity (x - y)(1/y - 1/x) = (x - y)^2 / (x y).
    let mut coercivity_ok = true;
    let mut min_coercivity = f64::INFINITY;
    for (f, row) in fields.iter().zip(&rows) {
        if row.n_theta < 1e-28 {
            continue;
        }
        let measured = 2.0 * grid.inner(&f.flux_diff, &f.theta_diff) / row.n_theta;
        min_coercivity = min_coercivity.min(measured);
        if measured < (1.0 / f.max_theta_product) * (1.0 - 1e-9) {
            coercivity_ok = false;
        }
    }

    Ok(ContractionReport {
        rows,
        growth_ok,
        balance_ok,
        max_balance_defect: max_defect,
        coercivity_ok,
        min_coercivity,
        pass: growth_ok && balance_ok && coercivity_ok,
    })
}

/// Outcome of the squeezing inequality for one pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SqueezeOutcome {
    /// `|| shifted w ||^2` over the window, in `L^2(H x H^1)`.
    pub shifted: f64,
    pub base: f64,
    /// `|| P w ||^2 + || P shifted w ||^2`.
    pub projected: f64,
    /// Smallest coefficient certifying this pair, if finite.
    pub required_coefficient: Option<f64>,
}

/// Report of the low-mode squeezing probe (report-grade; no hard pass/fail).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SqueezeReport {
    pub window_steps: usize,
    pub modes: usize,
    pub gamma: f64,
    /// Smallest gamma the chosen mode count actually certifies.
    pub gamma_required: f64,
    pub gamma_ok: bool,
    pub outcomes: Vec<SqueezeOutcome>,
    /// All pairs satisfied the inequality with a finite coefficient.
    pub certified: bool,
    /// Largest per-pair coefficient (the reported constant).
    pub coefficient: f64,
}

/// Evaluates both sides of the shift-window inequality
/// `||Lw||^2 <= 1/8 ||w||^2 + c (||Pw||^2 + ||PLw||^2)` over trajectory-pair
/// differences, where `L` shifts by `window_steps` snapshots and `P` keeps the
/// lowest `modes` eigenmodes (Dirichlet modes for the temperature factor,
/// Riesz-map modes for the order parameter).
pub fn squeezing_probe(
    problem: &Problem,
    pairs: &[(&TrajectoryRecord, &TrajectoryRecord)],
    window_steps: usize,
    modes: usize,
    gamma: f64,
) -> Result<SqueezeReport> {
    let grid = &*problem.grid;
    let dir = spectral::decomposition(grid, ModeBasis::Dirichlet)?;
    let neu = spectral::decomposition(grid, ModeBasis::Neumann)?;
    if modes == 0 || modes >= dir.len() || modes >= neu.len() {
        return Err(Error::Domain(format!(
            "mode count {modes} out of range for this grid"
        )));
    }
    let gamma_required = (1.0 / dir.eigenvalues[modes]).max(1.0 / neu.eigenvalues[modes]);

    let mut outcomes = Vec::new();
    for (rec1, rec2) in pairs {
        let aligned = aligned_snapshots(rec1, rec2)?;
        if aligned.len() < 2 * window_steps + 1 {
            return Err(Error::Record(format!(
                "records too short for a shift window of {window_steps} steps"
            )));
        }
        let n = grid.node_count();
        // Accumulate the three window norms with left-rectangle weights.
        let mut base = 0.0;
        let mut shifted = 0.0;
        let mut projected = 0.0;
        for k in 0..window_steps {
            let dt = aligned[k + 1].0.t - aligned[k].0.t;
            for (offset, target) in [(0usize, &mut base), (window_steps, &mut shifted)] {
                let (a, b) = &aligned[k + offset];
                let mut theta_diff = vec![0.0; n];
                let mut chi_diff = vec![0.0; n];
                for i in 0..n {
                    theta_diff[i] = a.state.theta[i] - b.state.theta[i];
                    chi_diff[i] = a.state.chi[i] - b.state.chi[i];
                }
                let chi_h1 =
                    operators::h1_semi_inner(grid, &chi_diff, &chi_diff)
                        + grid.inner(&chi_diff, &chi_diff);
                *target += dt * (grid.inner(&theta_diff, &theta_diff) + chi_h1);

                // Low-mode projections in the respective strong norms.
                let mut p_theta = 0.0;
                for j in 0..modes {
                    let c = grid.inner(&dir.modes[j], &theta_diff);
                    p_theta += c * c;
                }
                let mut p_chi = 0.0;
                for j in 0..modes {
                    let c = grid.inner(&neu.modes[j], &chi_diff);
                    p_chi += neu.eigenvalues[j] * c * c;
                }
                projected += dt * (p_theta + p_chi);
            }
        }
        let excess = shifted - base / 8.0;
        let required_coefficient = if excess <= 0.0 {
            Some(0.0)
        } else if projected > 1e-300 {
            Some(excess / projected)
        } else {
            None
        };
        outcomes.push(SqueezeOutcome {
            shifted,
            base,
            projected,
            required_coefficient,
        });
    }
    let certified = outcomes.iter().all(|o| o.required_coefficient.is_some());
    let coefficient = outcomes
        .iter()
        .filter_map(|o| o.required_coefficient)
        .fold(0.0, f64::max);
    Ok(SqueezeReport {
        window_steps,
        modes,
        gamma,
        gamma_required,
        gamma_ok: gamma >= gamma_required,
        outcomes,
        certified,
        coefficient,
    })
}

/// Hoelder-in-time verdict from snapshot pairs at dyadic gaps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderReport {
    /// `sup ||w(t) - w(s)||^2_{H x H^1} / |t - s|` over the sampled pairs.
    pub max_quotient: f64,
    /// Log-log slope of distance against gap, when distances are resolvable.
    pub exponent: Option<f64>,
    pub samples: usize,
    pub pass: bool,
}

/// Measures the in-time modulus of continuity on dyadic snapshot gaps.
pub fn holder_in_time_check(problem: &Problem, record: &TrajectoryRecord) -> Result<HolderReport> {
    let grid = &*problem.grid;
    let snaps = &record.snapshots;
    if snaps.len() < 3 {
        return Err(Error::Record("record too short for gap sampling".into()));
    }
    let n = grid.node_count();
    let dist = |a: &State, b: &State| -> f64 {
        let mut theta_diff = vec![0.0; n];
        let mut chi_diff = vec![0.0; n];
        for i in 0..n {
            theta_diff[i] = a.theta[i] - b.theta[i];
            chi_diff[i] = a.chi[i] - b.chi[i];
        }
        let chi_h1 = operators::h1_semi_inner(grid, &chi_diff, &chi_diff)
            + grid.inner(&chi_diff, &chi_diff);
        grid.inner(&theta_diff, &theta_diff) + chi_h1
    };

    let span = snaps.last().unwrap().t - snaps.first().unwrap().t;
    let mut max_quotient = 0.0f64;
    let mut samples = 0usize;
    let mut fit_points: Vec<(f64, f64)> = Vec::new();
    let bases = [0usize, snaps.len() / 4, snaps.len() / 2];
    for &b in &bases {
        let mut gap = 1usize;
        let mut fit_here = Vec::new();
        while b + gap < snaps.len() {
            let d2 = dist(&snaps[b].state, &snaps[b + gap].state);
            let dt = snaps[b + gap].t - snaps[b].t;
            if dt > 0.0 {
                max_quotient = max_quotient.max(d2 / dt);
                samples += 1;
                // The modulus of continuity is a small-gap property; large
                // gaps saturate at the total variation and would flatten the
                // regression.
                if d2 > 1e-28 && dt <= span / 8.0 {
                    fit_here.push((dt.ln(), d2.sqrt().ln()));
                }
            }
            gap *= 2;
        }
        if fit_here.len() > fit_points.len() {
            fit_points = fit_here;
        }
    }
    let exponent = if fit_points.len() >= 3 {
        Some(least_squares_slope(&fit_points))
    } else {
        None
    };
    let pass = max_quotient.is_finite() && exponent.map(|e| e >= 0.4).unwrap_or(true);
    Ok(HolderReport {
        max_quotient,
        exponent,
        samples,
        pass,
    })
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// A set of initial states evolved under one configuration.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub members: Vec<State>,
    /// Metric radius about the bundle's own center state.
    pub radius: f64,
    pub step: StepConfig,
}

impl Bundle {
    pub fn new(
        problem: &Problem,
        center: &State,
        members: Vec<State>,
        step: StepConfig,
        params: &MetricParams,
    ) -> Result<Bundle> {
        let radius = bundle_radius(problem, &members, center, params)?;
        Ok(Bundle {
            members,
            radius,
            step,
        })
    }
}

/// Metric radius of a member set about a reference state.
pub fn bundle_radius(
    problem: &Problem,
    members: &[State],
    reference: &State,
    params: &MetricParams,
) -> Result<f64> {
    let mut radius: f64 = 0.0;
    for m in members {
        radius = radius.max(model::metric_distance(problem, m, reference, params)?);
    }
    Ok(radius)
}

/// Exponential attraction-rate fit for a bundle of trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttractionReport {
    /// Fitted decay rate of the bundle's distance to the target surrogate.
    pub rate: f64,
    pub r_squared: f64,
    /// `(t, sup over members of distance to surrogate)` samples in the window.
    pub samples: Vec<(f64, f64)>,
    /// Samples dropped because the distance hit the solver floor.
    pub censored: usize,
    pub floor_censored: bool,
    pub initial_spread: f64,
    pub final_spread: f64,
    pub pass: bool,
}

const DISTANCE_FLOOR: f64 = 1e-11;

/// Distance from a state to the nearest surrogate target in the weak product
/// norm `H^{-1} x L^2` (enthalpy-contraction topology).
fn surrogate_distance(
    problem: &Problem,
    state: &State,
    targets: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let grid = &*problem.grid;
    let n = grid.node_count();
    let mut best = f64::INFINITY;
    for (theta, chi) in targets {
        let mut dtheta = vec![0.0; n];
        let mut dchi = vec![0.0; n];
        for i in 0..n {
            dtheta[i] = state.theta[i] - theta[i];
            dchi[i] = state.chi[i] - chi[i];
        }
        let dual = operators::dual_norm(grid, &dtheta)?;
        let d = (dual * dual + grid.inner(&dchi, &dchi)).sqrt();
        best = best.min(d);
    }
    Ok(best)
}

/// Runs the distance fit over completed bundle records against the catalog
/// plus the pooled final states (the computable attractor surrogate). The
/// fit window covers `[0.35, 0.9]` of the common time span.
pub fn attraction_fit(
    problem: &Problem,
    records: &[TrajectoryRecord],
    catalog: &[Equilibrium],
) -> Result<AttractionReport> {
    if records.is_empty() {
        return Err(Error::Record("no bundle records".into()));
    }
    let count = records[0].snapshots.len();
    for rec in records {
        if rec.snapshots.len() != count || rec.failure.is_some() {
            return Err(Error::Record(
                "bundle members must share the time grid and finish cleanly".into(),
            ));
        }
    }
    let n = problem.grid.node_count();
    let mut targets: Vec<(Vec<f64>, Vec<f64>)> = catalog
        .iter()
        .map(|eq| (vec![1.0; n], eq.chi.clone()))
        .collect();
    for rec in records {
        if let Some(last) = rec.final_state() {
            targets.push((last.theta.clone(), last.chi.clone()));
        }
    }

    let t0 = records[0].snapshots.first().map(|s| s.t).unwrap_or(0.0);
    let t1 = records[0].snapshots.last().map(|s| s.t).unwrap_or(0.0);
    let window = (t0 + 0.35 * (t1 - t0), t0 + 0.9 * (t1 - t0));

    let mut samples = Vec::new();
    let mut censored = 0usize;
    let mut fit_points = Vec::new();
    for k in 0..count {
        let t = records[0].snapshots[k].t;
        if t < window.0 || t > window.1 {
            continue;
        }
        let mut hausdorff = 0.0f64;
        for rec in records {
            let d = surrogate_distance(problem, &rec.snapshots[k].state, &targets)?;
            hausdorff = hausdorff.max(d);
        }
        samples.push((t, hausdorff));
        if hausdorff <= DISTANCE_FLOOR {
            censored += 1;
        } else {
            fit_points.push((t, hausdorff.ln()));
        }
    }
    if samples.is_empty() {
        return Err(Error::Record("fit window holds no samples".into()));
    }
    let floor_censored = fit_points.len() < 3;
    let (rate, r_squared) = if floor_censored {
        (f64::NAN, f64::NAN)
    } else {
        let slope = least_squares_slope(&fit_points);
        // R^2 against the fitted line.
        let nf = fit_points.len() as f64;
        let mean_y = fit_points.iter().map(|p| p.1).sum::<f64>() / nf;
        let mean_x = fit_points.iter().map(|p| p.0).sum::<f64>() / nf;
        let intercept = mean_y - slope * mean_x;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for (x, y) in &fit_points {
            let fitted = slope * x + intercept;
            ss_res += (y - fitted) * (y - fitted);
            ss_tot += (y - mean_y) * (y - mean_y);
        }
        let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
        (-slope, r2)
    };

    let initial_spread = samples.first().map(|s| s.1).unwrap_or(f64::NAN);
    let final_spread = samples.last().map(|s| s.1).unwrap_or(f64::NAN);
    let decayed = final_spread <= (0.01 * initial_spread).max(1e-8);
    let pass = if floor_censored {
        // Everything already sits on the surrogate: attraction is immediate.
        final_spread <= DISTANCE_FLOOR.max(1e-8)
    } else {
        rate > 0.0 && r_squared >= 0.9 && decayed
    };
    Ok(AttractionReport {
        rate,
        r_squared,
        samples,
        censored,
        floor_censored,
        initial_spread,
        final_spread,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::stationary;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn problem(n: usize) -> Problem {
        Problem::double_well(Arc::new(Grid::new(1, 1.0, n).unwrap()))
    }

    fn cfg() -> StepConfig {
        StepConfig::default()
    }

    #[test]
    fn equilibrium_record_is_flat_and_lyapunov_passes() {
        let problem = problem(24);
        let s = State::constant(problem.grid.clone(), 1.0, 1.0).unwrap();
        let record = run_trajectory(&problem, s, 2.0, &cfg(), 4.0, 1);
        assert!(record.failure.is_none());
        let verdict = check_lyapunov(&record.rows);
        assert!(verdict.pass);
        assert!(verdict.total_decay.abs() <= 1e-12);
    }

    #[test]
    fn lyapunov_flags_an_injected_energy_bump() {
        let problem = problem(24);
        let grid = &*problem.grid;
        let nn = grid.node_count();
        let chi: Vec<f64> = (0..nn).map(|i| 0.4 * (PI * grid.coords(i).0).cos()).collect();
        let s = State::new(problem.grid.clone(), vec![1.2; nn], chi, 0.0).unwrap();
        let mut record = run_trajectory(&problem, s, 2.0, &cfg(), 4.0, 1);
        let verdict = check_lyapunov(&record.rows);
        assert!(verdict.pass);
        assert!(verdict.total_decay > 0.0);

        // Inject the bump near equilibrium, where it cannot hide inside the
        // natural per-step decay.
        let k = record.rows.len() - 3;
        record.rows[k].energy.total += 1e-3;
        let verdict = check_lyapunov(&record.rows);
        assert!(!verdict.pass);
        let violation = verdict.first_violation.unwrap();
        assert_eq!(violation.step, record.rows[k].step);
    }

    #[test]
    fn contraction_of_identical_states_is_zero() {
        let problem = problem(24);
        let s = State::constant(problem.grid.clone(), 1.3, 0.5).unwrap();
        let r1 = run_trajectory(&problem, s.clone(), 1.0, &cfg(), 4.0, 1);
        let r2 = run_trajectory(&problem, s, 1.0, &cfg(), 4.0, 1);
        let report = contraction_check(&problem, &r1, &r2).unwrap();
        assert!(report.pass);
        for row in &report.rows {
            assert_eq!(row.contraction(), 0.0);
        }
    }

    #[test]
    fn contraction_envelope_holds_for_perturbed_pairs() {
        let problem = problem(32);
        let grid = &*problem.grid;
        let nn = grid.node_count();
        // Relax first so the pair lives in the regularized regime.
        let rough: Vec<f64> = (0..nn)
            .map(|i| 1.0 + 0.8 * (PI * grid.coords(i).0).sin())
            .collect();
        let chi: Vec<f64> = (0..nn).map(|i| 0.45 + 0.3 * (PI * grid.coords(i).0).cos()).collect();
        let seed = State::new(problem.grid.clone(), rough, chi, 0.0).unwrap();
        let base = stepper::run(&problem, seed, 2.0, &cfg(), 4.0, |_, _| {}).unwrap();

        let mut perturbed = base.clone();
        for i in 0..nn {
            perturbed.chi[i] += 1e-4 * (2.0 * PI * grid.coords(i).0).cos();
        }
        let r1 = run_trajectory(&problem, base, 4.0, &cfg(), 4.0, 1);
        let r2 = run_trajectory(&problem, perturbed, 4.0, &cfg(), 4.0, 1);
        let report = contraction_check(&problem, &r1, &r2).unwrap();
        assert!(report.growth_ok, "growth envelope violated");
        assert!(
            report.balance_ok,
            "balance defect {}",
            report.max_balance_defect
        );
        assert!(report.coercivity_ok, "min coercivity {}", report.min_coercivity);
        // The pair actually contracts.
        let first = report.rows.first().unwrap().contraction();
        let last = report.rows.last().unwrap().contraction();
        assert!(last < first);
    }

    #[test]
    fn regularization_report_finds_an_onset() {
        let problem = problem(48);
        let grid = &*problem.grid;
        let nn = grid.node_count();
        let theta: Vec<f64> = (0..nn)
            .map(|i| {
                let x = grid.coords(i).0;
                // Range spanning two decades either side of 1.
                0.05 + 20.0 * (PI * x).sin().powi(4)
            })
            .collect();
        let chi: Vec<f64> = (0..nn).map(|i| 0.2 * (2.0 * PI * grid.coords(i).0).cos()).collect();
        let s = State::new(problem.grid.clone(), theta, chi, 0.0).unwrap();
        let record = run_trajectory(&problem, s, 20.0, &cfg(), 4.0, 1);
        assert!(record.failure.is_none());
        let report = regularization_report(&record.rows, 0.5);
        assert!(report.conclusive);
        assert!(report.tail_bounds.all_finite());
        assert!(report.tail_bounds.max_theta < 21.0);
        assert!(report.onset_time.unwrap() < 10.0);

        let short = regularization_report(&record.rows[..5], 0.5);
        assert!(!short.conclusive);
    }

    #[test]
    fn squeezing_probe_trivial_and_low_mode_cases() {
        let problem = problem(20);
        let s = State::constant(problem.grid.clone(), 1.0, 0.8).unwrap();
        let r1 = run_trajectory(&problem, s.clone(), 2.0, &cfg(), 4.0, 1);
        let r2 = run_trajectory(&problem, s, 2.0, &cfg(), 4.0, 1);
        let report = squeezing_probe(&problem, &[(&r1, &r2)], 8, 4, 0.2).unwrap();
        assert!(report.certified);
        assert_eq!(report.coefficient, 0.0);

        // A difference supported on the lowest modes projects onto itself, so
        // any coefficient >= 1 works even discarding the 1/8 term.
        let grid = &*problem.grid;
        let dir = spectral::decomposition(grid, ModeBasis::Dirichlet).unwrap();
        let neu = spectral::decomposition(grid, ModeBasis::Neumann).unwrap();
        let make_record = |sign: f64| -> TrajectoryRecord {
            let snapshots: Vec<Snapshot> = (0..17)
                .map(|k| {
                    let theta: Vec<f64> = dir.modes[0]
                        .iter()
                        .map(|&v| 1.0 + sign * 0.01 * v)
                        .collect();
                    let chi: Vec<f64> = neu.modes[1].iter().map(|&v| sign * 0.01 * v).collect();
                    Snapshot {
                        step: k,
                        t: k as f64 * 0.0625,
                        state: State::new(problem.grid.clone(), theta, chi, k as f64 * 0.0625)
                            .unwrap(),
                    }
                })
                .collect();
            TrajectoryRecord {
                rows: Vec::new(),
                snapshots,
                cadence: 1,
                failure: None,
            }
        };
        let ra = make_record(1.0);
        let rb = make_record(-1.0);
        let report = squeezing_probe(&problem, &[(&ra, &rb)], 8, 4, 0.2).unwrap();
        assert!(report.certified);
        assert!(report.coefficient <= 1.0 + 1e-9);
    }

    #[test]
    fn holder_check_on_fixed_point_and_decaying_runs() {
        let problem = problem(24);
        let s = State::constant(problem.grid.clone(), 1.0, -1.0).unwrap();
        let record = run_trajectory(&problem, s, 2.0, &cfg(), 4.0, 1);
        let report = holder_in_time_check(&problem, &record).unwrap();
        assert!(report.pass);
        assert!(report.max_quotient <= 1e-12);

        let grid = &*problem.grid;
        let nn = grid.node_count();
        let chi: Vec<f64> = (0..nn).map(|i| 0.3 + 0.5 * (PI * grid.coords(i).0).cos()).collect();
        let s = State::new(problem.grid.clone(), vec![1.4; nn], chi, 0.0).unwrap();
        let record = run_trajectory(&problem, s, 4.0, &cfg(), 4.0, 1);
        let report = holder_in_time_check(&problem, &record).unwrap();
        assert!(report.pass, "exponent {:?}", report.exponent);
        assert!(report.exponent.unwrap() >= 0.4);
        assert!(report.max_quotient.is_finite());
    }

    #[test]
    fn attraction_fit_near_a_stable_phase() {
        let problem = problem(32);
        let grid = &*problem.grid;
        let nn = grid.node_count();
        let catalog = stationary::build_catalog(&problem, &stationary::default_seeds(&problem));
        let params = MetricParams::default();

        let center = State::constant(problem.grid.clone(), 1.0, 1.0).unwrap();
        let mut members = Vec::new();
        for k in 0..4 {
            let amp = 0.02 + 0.01 * k as f64;
            let theta: Vec<f64> = (0..nn)
                .map(|i| 1.0 + amp * (PI * grid.coords(i).0).sin())
                .collect();
            let chi: Vec<f64> = (0..nn)
                .map(|i| 1.0 + amp * ((k + 1) as f64 * PI * grid.coords(i).0).cos())
                .collect();
            members.push(State::new(problem.grid.clone(), theta, chi, 0.0).unwrap());
        }
        let bundle = Bundle::new(&problem, &center, members, cfg(), &params).unwrap();
        assert!(bundle.radius > 0.0);

        let records: Vec<TrajectoryRecord> = bundle
            .members
            .iter()
            .map(|m| run_trajectory(&problem, m.clone(), 6.0, &bundle.step, 4.0, 1))
            .collect();
        let report = attraction_fit(&problem, &records, &catalog).unwrap();
        assert!(report.pass, "rate {}, r2 {}", report.rate, report.r_squared);
        assert!(report.rate > 0.0);
        assert!(report.r_squared >= 0.9);

        // A bundle of exact equilibria is floor-censored.
        let eq_members: Vec<State> = catalog
            .iter()
            .take(2)
            .map(|eq| {
                State::new(problem.grid.clone(), vec![1.0; nn], eq.chi.clone(), 0.0).unwrap()
            })
            .collect();
        let eq_records: Vec<TrajectoryRecord> = eq_members
            .iter()
            .map(|m| run_trajectory(&problem, m.clone(), 6.0, &cfg(), 4.0, 1))
            .collect();
        let report = attraction_fit(&problem, &eq_records, &catalog).unwrap();
        assert!(report.floor_censored);
        assert!(report.pass);
    }
}
