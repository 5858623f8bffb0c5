//! Transition matrices of the linearized flow along a trajectory.
//!
//! The variational equation `Ψ' = J(t, x(t)) Ψ` is integrated together with
//! the state, restarting from `Ψ = I` at every step, so the sequence stores
//! one-step matrices `M_j ≈ Φ(t_{j+1}, t_j)`. Longer transitions are ordered
//! products kept in [`ScaledMatrix`] form.

use crate::error::{Error, Result};
use crate::integrators::{integrate_impl, Method, Trajectory};
use crate::linalg::{Matrix, NormWorkspace, ScaledMatrix};
use crate::systems::System;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSequence {
    base: Trajectory,
    dim: usize,
    /// `n * d * d` entries, one row-major block per step.
    steps: Vec<f64>,
}

impl TransitionSequence {
    /// Assembles a sequence from explicit matrices; `steps.len()` must match
    /// the number of steps of `base`.
    pub fn from_parts(base: Trajectory, steps: Vec<Matrix>) -> Result<Self> {
        let d = base.dimension();
        if steps.len() != base.steps() {
            return Err(Error::usage(format!(
                "trajectory has {} steps but {} matrices were given",
                base.steps(),
                steps.len()
            )));
        }
        let mut flat = Vec::with_capacity(steps.len() * d * d);
        for m in steps {
            if m.dim() != d {
                return Err(Error::usage("transition matrix dimension mismatch"));
            }
            if !m.is_finite() {
                return Err(Error::usage("transition matrices must be finite"));
            }
            flat.extend(m.into_vec());
        }
        Ok(TransitionSequence {
            base,
            dim: d,
            steps: flat,
        })
    }

    pub fn base(&self) -> &Trajectory {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.base.steps()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major slice of `M_j`.
    #[inline]
    pub fn step_slice(&self, j: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.steps[j * dd..(j + 1) * dd]
    }

    pub fn step_matrix(&self, j: usize) -> Matrix {
        Matrix::from_row_major(self.dim, self.step_slice(j).to_vec()).expect("square block")
    }

    /// `Φ(t_n, t_j) = M_{n-1} ⋯ M_j`.
    pub fn transition(&self, j: usize, n: usize) -> Result<ScaledMatrix> {
        if j > n || n > self.len() {
            return Err(Error::usage(format!(
                "transition indices need 0 <= j <= n <= {} (got j={j}, n={n})",
                self.len()
            )));
        }
        let d = self.dim;
        let mut ws = NormWorkspace::new(d);
        let mut scratch = vec![0.0; d * d];
        let mut p = ScaledMatrix::identity(d);
        for k in (j..n).rev() {
            p.mul_assign_slice(self.step_slice(k), &mut scratch, &mut ws);
        }
        Ok(p)
    }
}

/// Integrates state and variational equation together with `method`. The
/// base trajectory is bitwise identical to [`crate::integrators::integrate`].
pub fn transition_sequence(
    method: &Method,
    system: &System,
    x0: &[f64],
    t0: f64,
    t_final: f64,
    h: f64,
) -> Result<TransitionSequence> {
    let (base, steps) = integrate_impl(method, system, x0, t0, t_final, h, true)?;
    Ok(TransitionSequence {
        dim: system.dimension(),
        base,
        steps,
    })
}

/// Operator 2-norm of a plain matrix.
pub fn norm2(m: &Matrix) -> f64 {
    m.norm2()
}

/// 2-norm of a scaled matrix as `(value, log_scale)`, meaning
/// `value * exp(log_scale)`.
pub fn norm2_scaled(m: &ScaledMatrix) -> (f64, f64) {
    (m.mantissa_norm(), m.log_scale())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{decay, rotation, zero};

    #[test]
    fn decay_steps_match_exponential() {
        for m in Method::all() {
            let seq = transition_sequence(&m, &decay(), &[1.0], 0.0, 1.0, 0.01).unwrap();
            let want = (-0.01f64).exp();
            // Euler's one-step factor 1 - h is only first-order accurate
            let tol = if m.order() == 1 { 5e-5 } else { 1e-6 };
            for j in 0..seq.len() {
                assert!((seq.step_slice(j)[0] - want).abs() < tol, "{}", m.name());
            }
            if m.order() == 1 {
                assert_eq!(seq.step_slice(0)[0], 1.0 - 0.01);
            }
        }
    }

    #[test]
    fn rotation_steps_are_rotations() {
        let h: f64 = 0.01;
        let seq = transition_sequence(&Method::rk4(), &rotation(), &[1.0, 0.0], 0.0, 1.0, h).unwrap();
        let (s, c) = h.sin_cos();
        let want = [c, s, -s, c];
        for j in 0..seq.len() {
            for (a, b) in seq.step_slice(j).iter().zip(want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_field_gives_identity() {
        for m in Method::all() {
            let seq = transition_sequence(&m, &zero(3), &[1.0, 2.0, 3.0], 0.0, 1.0, 0.1).unwrap();
            for j in 0..seq.len() {
                assert_eq!(seq.step_matrix(j), Matrix::identity(3));
            }
        }
    }

    #[test]
    fn transition_examples() {
        let seq = transition_sequence(&Method::rk4(), &decay(), &[1.0], 0.0, 1.0, 0.01).unwrap();
        let id = seq.transition(7, 7).unwrap();
        assert_eq!(id.to_matrix(), Matrix::identity(1));
        assert_eq!(id.log_scale(), 0.0);
        let full = seq.transition(0, 100).unwrap().to_matrix();
        assert!((full.get(0, 0) - (-1f64).exp()).abs() < 1e-5);
        assert!(seq.transition(5, 4).is_err());
        assert!(seq.transition(0, 101).is_err());
    }

    #[test]
    fn base_matches_plain_integration() {
        let m = Method::rk4();
        let sys = crate::systems::van_der_pol();
        let seq = transition_sequence(&m, &sys, &[0.5, 0.0], 0.0, 3.0, 0.01).unwrap();
        let tr = crate::integrators::integrate(&m, &sys, &[0.5, 0.0], 0.0, 3.0, 0.01).unwrap();
        assert_eq!(seq.base(), &tr);
    }

    #[test]
    fn from_parts_validates() {
        let tr = crate::integrators::integrate(&Method::euler(), &decay(), &[1.0], 0.0, 1.0, 0.5).unwrap();
        assert!(TransitionSequence::from_parts(tr.clone(), vec![Matrix::identity(1)]).is_err());
        assert!(TransitionSequence::from_parts(tr, vec![Matrix::identity(1); 2]).is_ok());
    }
}
