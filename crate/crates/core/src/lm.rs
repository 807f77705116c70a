//! Levenberg-Marquardt driver over dense normal equations.
//!
//! Problems supply `JᵀJ` and `Jᵀr` at the current state and a retraction
//! applying a parameter increment. The driver only accepts steps that
//! strictly decrease the energy, so the accepted energy sequence is
//! monotone non-increasing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub jtj: DMatrix<f64>,
    pub jtr: DVector<f64>,
    pub energy: f64,
}

impl NormalEquations {
    pub fn zeros(n: usize) -> Self {
        Self {
            jtj: DMatrix::zeros(n, n),
            jtr: DVector::zeros(n),
            energy: 0.0,
        }
    }

    fn check_finite(&self) -> Result<()> {
        if !self.energy.is_finite() {
            return Err(Error::NonFinite(format!("energy = {}", self.energy)));
        }
        if self.jtj.iter().chain(self.jtr.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Jacobian".into()));
        }
        Ok(())
    }
}

pub trait LeastSquares {
    type State: Clone;

    fn num_params(&self) -> usize;
    fn energy(&self, state: &Self::State) -> f64;
    fn linearize(&self, state: &Self::State) -> NormalEquations;
    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    pub param_tolerance: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ZeroEnergy,
    CostTolerance,
    ParamTolerance,
    MaxIterations,
    /// Damping grew without finding a decreasing step.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub iterations: usize,
    /// Initial energy followed by the energy after every accepted step.
    pub energies: Vec<f64>,
    pub termination: Termination,
}

impl LmReport {
    pub fn initial_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn final_energy(&self) -> f64 {
        *self.energies.last().unwrap()
    }

    pub fn is_monotone(&self) -> bool {
        self.energies.windows(2).all(|w| w[1] <= w[0])
    }
}

const LAMBDA_MAX: f64 = 1e20;
const LAMBDA_MIN: f64 = 1e-15;

pub fn minimize<P: LeastSquares>(
    problem: &P,
    initial: P::State,
    settings: &LmSettings,
) -> Result<(P::State, LmReport)> {
    let n = problem.num_params();
    let mut state = initial;
    let mut lin = problem.linearize(&state);
    lin.check_finite()?;
    let mut energy = lin.energy;
    let mut energies = vec![energy];
    let mut lambda = settings.lambda_init;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < settings.max_iterations {
        if energy == 0.0 {
            termination = Termination::ZeroEnergy;
            break;
        }
        iterations += 1;
        let max_diag = (0..n).map(|i| lin.jtj[(i, i)]).fold(0.0f64, f64::max);
        let floor = 1e-9 * max_diag.max(1.0);
        let accepted = loop {
            let mut a = lin.jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * lin.jtj[(i, i)].max(floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= settings.lambda_factor;
                if lambda > LAMBDA_MAX {
                    break None;
                }
                continue;
            };
            let delta = -chol.solve(&lin.jtr);
            let candidate = problem.retract(&state, &delta);
            let e_new = problem.energy(&candidate);
            if e_new.is_finite() && e_new < energy {
                lambda = (lambda / settings.lambda_factor).max(LAMBDA_MIN);
                break Some((candidate, e_new, delta.norm()));
            }
            lambda *= settings.lambda_factor;
            if lambda > LAMBDA_MAX {
                break None;
            }
        };
        let Some((candidate, e_new, step)) = accepted else {
            termination = Termination::Stalled;
            break;
        };
        let relative = (energy - e_new) / energy;
        state = candidate;
        energy = e_new;
        energies.push(energy);
        if step < settings.param_tolerance {
            termination = Termination::ParamTolerance;
            break;
        }
        if relative < settings.cost_tolerance {
            termination = Termination::CostTolerance;
            break;
        }
        lin = problem.linearize(&state);
        lin.check_finite()?;
    }

    Ok((
        state,
        LmReport {
            iterations,
            energies,
            termination,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as residuals r = (1 - x, 10 (y - x²)).
    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        type State = [f64; 2];

        fn num_params(&self) -> usize {
            2
        }

        fn energy(&self, s: &[f64; 2]) -> f64 {
            let r0 = 1.0 - s[0];
            let r1 = 10.0 * (s[1] - s[0] * s[0]);
            r0 * r0 + r1 * r1
        }

        fn linearize(&self, s: &[f64; 2]) -> NormalEquations {
            let r = DVector::from_vec(vec![1.0 - s[0], 10.0 * (s[1] - s[0] * s[0])]);
            let j = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * s[0], 10.0]);
            NormalEquations {
                jtj: j.transpose() * &j,
                jtr: j.transpose() * &r,
                energy: r.norm_squared(),
            }
        }

        fn retract(&self, s: &[f64; 2], d: &DVector<f64>) -> [f64; 2] {
            [s[0] + d[0], s[1] + d[1]]
        }
    }

    #[test]
    fn solves_rosenbrock_monotonically() {
        let settings = LmSettings {
            max_iterations: 200,
            cost_tolerance: 1e-15,
            param_tolerance: 1e-12,
            lambda_init: 1e-3,
            lambda_factor: 10.0,
        };
        let (s, report) = minimize(&Rosenbrock, [-1.2, 1.0], &settings).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-6 && (s[1] - 1.0).abs() < 1e-6, "{s:?}");
        assert!(report.is_monotone());
        assert!(report.final_energy() <= report.initial_energy());
    }

    struct Nan;

    impl LeastSquares for Nan {
        type State = f64;

        fn num_params(&self) -> usize {
            1
        }

        fn energy(&self, _: &f64) -> f64 {
            f64::NAN
        }

        fn linearize(&self, _: &f64) -> NormalEquations {
            NormalEquations {
                jtj: DMatrix::from_element(1, 1, 1.0),
                jtr: DVector::from_element(1, f64::NAN),
                energy: f64::NAN,
            }
        }

        fn retract(&self, s: &f64, d: &DVector<f64>) -> f64 {
            s + d[0]
        }
    }

    #[test]
    fn non_finite_is_reported() {
        let settings = LmSettings {
            max_iterations: 10,
            cost_tolerance: 1e-8,
            param_tolerance: 1e-6,
            lambda_init: 1e-3,
            lambda_factor: 10.0,
        };
        assert!(matches!(minimize(&Nan, 0.0, &settings), Err(Error::NonFinite(_))));
    }
}
