//! Ground-truth solutions and global-error curves.
//!
//! Systems with a closed-form flow are sampled directly. Everything else is
//! integrated with RK4, halving the step until two consecutive refinements
//! agree at the query times; the final disagreement is reported as the
//! reference's accuracy certificate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{check_interval, rk_step, step_count, Method, StepWork, Trajectory};
use crate::systems::{StateVector, System};

/// Coarsest reference step is the interval length over this many steps.
pub const REFERENCE_BASE_STEPS: f64 = 1e4;
/// Relative tolerance on agreement between consecutive refinements.
pub const REFERENCE_REL_TOL: f64 = 1e-10;
pub const MAX_HALVINGS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    /// States sampled exactly at the query times.
    pub trajectory: Trajectory,
    /// Estimated accuracy: max discrepancy between the two finest levels,
    /// zero for closed-form flows.
    pub certificate: f64,
    /// Step of the finest refinement, `None` for closed-form flows.
    pub h_ref: Option<f64>,
    pub halvings: usize,
}

fn validate_queries(t0: f64, t_final: f64, query_times: &[f64]) -> Result<()> {
    if query_times.is_empty() {
        return Err(Error::usage("reference needs at least one query time"));
    }
    if query_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::usage("query times must be strictly increasing"));
    }
    let slack = 1e-12 * t_final.abs().max(1.0);
    if query_times[0] < t0 - slack || *query_times.last().unwrap() > t_final + slack {
        return Err(Error::usage(format!(
            "query times must lie in [{t0}, {t_final}]"
        )));
    }
    Ok(())
}

fn nominal_spacing(query_times: &[f64], t0: f64, t_final: f64) -> f64 {
    if query_times.len() > 1 {
        (query_times[query_times.len() - 1] - query_times[0]) / (query_times.len() - 1) as f64
    } else {
        t_final - t0
    }
}

/// RK4 from `t0` through each checkpoint in turn, splitting every gap into
/// equal sub-steps no longer than `h`.
fn integrate_through(system: &System, x0: &[f64], t0: f64, checkpoints: &[f64], h: f64) -> Result<Vec<StateVector>> {
    let method = Method::rk4();
    let mut work = StepWork::new(system.dimension(), method.tableau().stages);
    let mut x = x0.to_vec();
    let mut t = t0;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut global_step = 0;
    for &target in checkpoints {
        if target > t {
            let k = step_count(t, target, h);
            let dt = (target - t) / k as f64;
            let start = t;
            for i in 0..k {
                let ti = start + i as f64 * dt;
                let hi = if i + 1 == k { target - ti } else { dt };
                if !rk_step(&method, system, ti, &x, hi, &mut work, false) {
                    return Err(Error::BlowUp {
                        step: global_step,
                        t: ti,
                        method: "reference".into(),
                        h,
                    });
                }
                x.copy_from_slice(&work.next);
                global_step += 1;
            }
            t = target;
        }
        out.push(StateVector::new_unchecked(x.clone()));
    }
    Ok(out)
}

/// A certified approximation of the true solution at `query_times`.
///
/// Closed-form flows are taken to start at `t0` (the suite is autonomous).
pub fn reference_trajectory(
    system: &System,
    x0: &[f64],
    t0: f64,
    t_final: f64,
    query_times: &[f64],
) -> Result<ReferenceSolution> {
    check_interval(t0, t_final, (t_final - t0) / REFERENCE_BASE_STEPS)?;
    validate_queries(t0, t_final, query_times)?;
    let x0v = StateVector::new(x0.to_vec())?;
    if x0v.dim() != system.dimension() {
        return Err(Error::usage("initial state dimension does not match the system"));
    }
    let spacing = nominal_spacing(query_times, t0, t_final);

    if system.has_exact() {
        let mut states = Vec::with_capacity(query_times.len());
        for &t in query_times {
            states.push(system.exact(t - t0, x0).expect("has exact")?);
        }
        return Ok(ReferenceSolution {
            trajectory: Trajectory::new(query_times.to_vec(), states, spacing, system.name(), "exact")?,
            certificate: 0.0,
            h_ref: None,
            halvings: 0,
        });
    }

    let mut h = (t_final - t0) / REFERENCE_BASE_STEPS;
    let mut coarse = integrate_through(system, x0, t0, query_times, h)?;
    let mut last_disc = f64::INFINITY;
    let mut last_tol = 0.0;
    for halving in 1..=MAX_HALVINGS {
        h *= 0.5;
        let fine = integrate_through(system, x0, t0, query_times, h)?;
        let disc = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max);
        let max_norm = fine.iter().map(|s| s.norm()).fold(0.0, f64::max);
        let tol = REFERENCE_REL_TOL * (1.0 + max_norm);
        log::debug!("reference {}: h={h:e} discrepancy={disc:e} tol={tol:e}", system.name());
        if disc < tol {
            return Ok(ReferenceSolution {
                trajectory: Trajectory::new(query_times.to_vec(), fine, spacing, system.name(), "reference")?,
                certificate: disc,
                h_ref: Some(h),
                halvings: halving,
            });
        }
        last_disc = disc;
        last_tol = tol;
        coarse = fine;
    }
    Err(Error::ReferencePrecision {
        system: system.name().to_string(),
        discrepancy: last_disc,
        tolerance: last_tol,
        halvings: MAX_HALVINGS,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub h: f64,
    pub method_name: String,
    pub system_name: String,
    pub reference_certificate: f64,
}

impl ErrorCurve {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Euclidean distance between two trajectories at each query time. Both must
/// belong to the same system and start from the same state.
pub fn global_error(approx: &Trajectory, reference: &Trajectory, query_times: &[f64]) -> Result<ErrorCurve> {
    if approx.system_name() != reference.system_name() {
        return Err(Error::usage(format!(
            "trajectories belong to different systems (`{}` vs `{}`)",
            approx.system_name(),
            reference.system_name()
        )));
    }
    if approx.dimension() != reference.dimension() {
        return Err(Error::usage("trajectories differ in dimension"));
    }
    if approx.t0() == reference.t0() && approx.states()[0] != reference.states()[0] {
        return Err(Error::usage("trajectories start from different initial states"));
    }
    if approx.t0() != reference.t0() {
        return Err(Error::usage("trajectories start at different times"));
    }
    let mut errors = Vec::with_capacity(query_times.len());
    for &t in query_times {
        let i = approx.snap(t)?;
        let j = reference.snap(t)?;
        errors.push(approx.states()[i].distance(&reference.states()[j]));
    }
    Ok(ErrorCurve {
        times: query_times.to_vec(),
        errors,
        h: approx.h(),
        method_name: approx.method_name().to_string(),
        system_name: approx.system_name().to_string(),
        reference_certificate: 0.0,
    })
}

/// [`global_error`] against a certified reference, carrying its certificate.
pub fn global_error_certified(
    approx: &Trajectory,
    reference: &ReferenceSolution,
    query_times: &[f64],
) -> Result<ErrorCurve> {
    let mut curve = global_error(approx, &reference.trajectory, query_times)?;
    curve.reference_certificate = reference.certificate;
    Ok(curve)
}
