//! Spherical quartic (biweight) kernel and the bandwidth rule.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{DrmaError, Result};

/// `K(u) = c_q (1 − ‖u‖²)²` on the unit ball in `q` dimensions, normalized
/// to integrate to one. For `q = 1` this is `15/16 (1 − u²)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    arity: usize,
    constant: f64,
}

impl KernelSpec {
    pub fn quartic(arity: usize) -> Result<Self> {
        if arity == 0 {
            return Err(DrmaError::InvalidInput("kernel arity must be at least 1".into()));
        }
        let half = arity as f64 / 2.0;
        // ∫_{‖u‖≤1} (1 − ‖u‖²)² du = 2 π^{q/2} / Γ(q/2 + 3)
        let constant = gamma(half + 3.0) / (2.0 * std::f64::consts::PI.powf(half));
        Ok(KernelSpec { arity, constant })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn normalizing_constant(&self) -> f64 {
        self.constant
    }

    /// Kernel as a function of the squared norm of its argument.
    #[inline]
    pub fn of_squared_norm(&self, r2: f64) -> f64 {
        if r2 >= 1.0 {
            0.0
        } else {
            let s = 1.0 - r2;
            self.constant * s * s
        }
    }

    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.arity {
            return Err(DrmaError::InvalidInput(format!(
                "kernel of arity {} evaluated at a {}-vector",
                self.arity,
                u.len()
            )));
        }
        Ok(self.of_squared_norm(u.iter().map(|v| v * v).sum()))
    }
}

/// `h = c · n^{−1/(4+q)}`.
pub fn bandwidth_rule(n: usize, q: usize, c: f64) -> Result<f64> {
    if n < 2 || q < 1 {
        return Err(DrmaError::InvalidInput(format!(
            "bandwidth rule needs n ≥ 2 and q ≥ 1 (got n={n}, q={q})"
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(DrmaError::InvalidInput(format!(
            "bandwidth scale must be positive, got {c}"
        )));
    }
    Ok(c * (n as f64).powf(-1.0 / (4.0 + q as f64)))
}
