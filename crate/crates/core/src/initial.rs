//! Initial data generators.
//!
//! Every recipe produces a strictly positive temperature with finite fields.
//! Smooth temperature perturbations are built from sine products (so the
//! boundary keeps the Dirichlet value), order parameter perturbations from
//! cosine products (the Neumann-natural modes). `random_smooth` prescribes an
//! exact temperature range by affine rescaling of a random low-mode field;
//! the range does not need to contain the boundary value 1 — rough,
//! boundary-incompatible data is legitimate and the first implicit step
//! installs the boundary condition.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Problem, State};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recipe {
    Constant {
        theta: f64,
        chi: f64,
    },
    SingleMode {
        #[serde(default = "one")]
        theta_base: f64,
        theta_amplitude: f64,
        #[serde(default = "one_usize")]
        theta_mode: usize,
        #[serde(default)]
        chi_base: f64,
        chi_amplitude: f64,
        #[serde(default = "one_usize")]
        chi_mode: usize,
    },
    RandomSmooth {
        theta_min: f64,
        theta_max: f64,
        chi_amplitude: f64,
        #[serde(default = "default_modes")]
        modes: usize,
    },
    File {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_modes() -> usize {
    5
}

impl Recipe {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match self {
            Recipe::Constant { theta, .. } => {
                if !(*theta > 0.0) {
                    problems.push(format!("constant theta must be positive, got {theta}"));
                }
            }
            Recipe::SingleMode {
                theta_base,
                theta_amplitude,
                theta_mode,
                chi_mode,
                ..
            } => {
                if !(*theta_base - theta_amplitude.abs() > 0.0) {
                    problems.push(format!(
                        "single_mode temperature can reach {} <= 0",
                        theta_base - theta_amplitude.abs()
                    ));
                }
                if *theta_mode == 0 || *chi_mode == 0 {
                    problems.push("mode numbers start at 1".into());
                }
            }
            Recipe::RandomSmooth {
                theta_min,
                theta_max,
                modes,
                ..
            } => {
                if !(*theta_min > 0.0) {
                    problems.push(format!("theta_min must be positive, got {theta_min}"));
                }
                if !(theta_max >= theta_min) {
                    problems.push(format!(
                        "theta range is empty: [{theta_min}, {theta_max}]"
                    ));
                }
                if *modes == 0 {
                    problems.push("random_smooth needs at least one mode".into());
                }
            }
            Recipe::File { .. } => {}
        }
        problems
    }

    /// Materializes the recipe on the problem's grid.
    pub fn generate(&self, problem: &Problem, rng: &mut impl Rng) -> Result<State> {
        let grid = &*problem.grid;
        let n = grid.node_count();
        let l = grid.extent();
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(Error::Config(violations.join("; ")));
        }
        match self {
            Recipe::Constant { theta, chi } => {
                State::new(problem.grid.clone(), vec![*theta; n], vec![*chi; n], 0.0)
            }
            Recipe::SingleMode {
                theta_base,
                theta_amplitude,
                theta_mode,
                chi_base,
                chi_amplitude,
                chi_mode,
            } => {
                let kt = *theta_mode as f64 * PI / l;
                let kc = *chi_mode as f64 * PI / l;
                let theta: Vec<f64> = (0..n)
                    .map(|i| {
                        let (x, y) = grid.coords(i);
                        let tail = if grid.dim() == 2 { (kt * y).sin() } else { 1.0 };
                        theta_base + theta_amplitude * (kt * x).sin() * tail
                    })
                    .collect();
                let chi: Vec<f64> = (0..n)
                    .map(|i| {
                        let (x, y) = grid.coords(i);
                        let tail = if grid.dim() == 2 { (kc * y).cos() } else { 1.0 };
                        chi_base + chi_amplitude * (kc * x).cos() * tail
                    })
                    .collect();
                State::new(problem.grid.clone(), theta, chi, 0.0)
            }
            Recipe::RandomSmooth {
                theta_min,
                theta_max,
                chi_amplitude,
                modes,
            } => {
                let theta_raw = random_field(grid, *modes, rng, Parity::Sine);
                let chi_raw = random_field(grid, *modes, rng, Parity::Cosine);
                let theta = rescale(&theta_raw, *theta_min, *theta_max);
                let chi = rescale(&chi_raw, -chi_amplitude, *chi_amplitude);
                State::new(problem.grid.clone(), theta, chi, 0.0)
            }
            Recipe::File { path } => {
                let (state, _) = io::load_state(path, Some(&problem.grid))?;
                Ok(state)
            }
        }
    }
}

enum Parity {
    Sine,
    Cosine,
}

fn random_field(grid: &crate::grid::Grid, modes: usize, rng: &mut impl Rng, parity: Parity) -> Vec<f64> {
    let n = grid.node_count();
    let l = grid.extent();
    let mut field = vec![0.0; n];
    for kx in 1..=modes {
        for ky in 0..=(if grid.dim() == 2 { modes } else { 0 }) {
            // Spectral decay keeps the sample smooth at every resolution.
            let amp = rng.gen_range(-1.0..1.0) / ((kx + ky) as f64);
            let fx = kx as f64 * PI / l;
            let fy = ky as f64 * PI / l;
            for i in 0..n {
                let (x, y) = grid.coords(i);
                let base = match parity {
                    Parity::Sine => (fx * x).sin(),
                    Parity::Cosine => (fx * x).cos(),
                };
                let tail = if grid.dim() == 2 {
                    match parity {
                        Parity::Sine if ky > 0 => (fy * y).sin(),
                        Parity::Cosine if ky > 0 => (fy * y).cos(),
                        _ => 1.0,
                    }
                } else {
                    1.0
                };
                field[i] += amp * base * tail;
            }
        }
    }
    field
}

fn rescale(raw: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span <= 0.0 {
        return vec![0.5 * (lo + hi); raw.len()];
    }
    raw.iter()
        .map(|&v| lo + (hi - lo) * (v - min) / span)
        .collect()
}
