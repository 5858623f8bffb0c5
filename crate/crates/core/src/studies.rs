//! End-to-end experiments: observed convergence order, the empirical constant
//! `K` in `‖x̃(t;h) − x(t)‖ ≤ K (E(t) + ε) h^r`, and growth regimes of `E`.

use serde::{Deserialize, Serialize};

use crate::conditioning::{
    classify_growth, conditioning_curve_with, uniform_queries, ConditioningCurve, GrowthParams,
    GrowthReport, DEFAULT_QUERIES,
};
use crate::error::{Error, Result};
use crate::integrators::{integrate, step_count, Method};
use crate::linalg::NormKind;
use crate::reference::{global_error_certified, reference_trajectory, ErrorCurve, ReferenceSolution};
use crate::systems::System;
use crate::variational::transition_sequence;

/// Observed orders must fall within this distance of the method order for a
/// convergence study to count as verified.
pub const ORDER_TOLERANCE: f64 = 0.3;
/// Largest allowed ratio between `K` at consecutive step sizes.
pub const K_STABILITY_LIMIT: f64 = 2.0;
/// Reference certificate must stay below this fraction of the smallest error.
pub const CERTIFICATE_FRACTION: f64 = 0.01;
pub const DEFAULT_EPSILON: f64 = 1e-2;

/// Query times shared by every refinement level: points of the coarsest
/// grid `t0 + j*h0` (hence of every halved grid) thinned to at most
/// `max_points`, plus `t_final`.
pub fn study_queries(t0: f64, t_final: f64, h0: f64, max_points: usize) -> Vec<f64> {
    let n0 = step_count(t0, t_final, h0);
    let stride = n0.div_ceil(max_points.max(2) - 1).max(1);
    let mut q: Vec<f64> = (0..n0)
        .step_by(stride)
        .map(|j| t0 + j as f64 * h0)
        .collect();
    q.push(t_final);
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub h: f64,
    pub max_error: f64,
    #[serde(skip)]
    pub curve: Option<ErrorCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub system_name: String,
    pub method_name: String,
    pub order: u32,
    pub t_final: f64,
    pub levels: Vec<Level>,
    /// `log2(e(h) / e(h/2))` between consecutive successful levels; NaN when
    /// either error is zero.
    pub observed_orders: Vec<f64>,
    /// Step sizes whose integration blew up, excluded from `levels`.
    pub failed_levels: Vec<f64>,
    /// Every level reproduced the reference exactly.
    pub degenerate: bool,
    pub reference_certificate: f64,
    pub query_times: Vec<f64>,
}

impl ConvergenceStudy {
    /// All observed orders lie within [`ORDER_TOLERANCE`] of the method order.
    pub fn verified(&self) -> bool {
        !self.degenerate
            && !self.observed_orders.is_empty()
            && self
                .observed_orders
                .iter()
                .all(|p| (p - self.order as f64).abs() <= ORDER_TOLERANCE)
    }
}

fn check_levels(h0: f64, n_levels: usize, t_final: f64) -> Result<()> {
    if n_levels < 3 {
        return Err(Error::usage(format!("studies need at least 3 levels (got {n_levels})")));
    }
    if !(h0 > 0.0) || h0 > t_final {
        return Err(Error::usage(format!("h0 = {h0} must lie in (0, T]")));
    }
    Ok(())
}

struct LevelRun {
    levels: Vec<Level>,
    failed: Vec<f64>,
    reference: ReferenceSolution,
    queries: Vec<f64>,
}

fn run_levels(
    system: &System,
    method: &Method,
    x0: &[f64],
    t_final: f64,
    h0: f64,
    n_levels: usize,
) -> Result<LevelRun> {
    check_levels(h0, n_levels, t_final)?;
    let t0 = 0.0;
    let queries = study_queries(t0, t_final, h0, DEFAULT_QUERIES);
    let reference = reference_trajectory(system, x0, t0, t_final, &queries)?;
    let mut levels = Vec::with_capacity(n_levels);
    let mut failed = Vec::new();
    for k in 0..n_levels {
        let h = h0 / 2f64.powi(k as i32);
        match integrate(method, system, x0, t0, t_final, h) {
            Ok(tr) => {
                let curve = global_error_certified(&tr, &reference, &queries)?;
                levels.push(Level {
                    h,
                    max_error: curve.max_error(),
                    curve: Some(curve),
                });
            }
            Err(e @ Error::BlowUp { .. }) => {
                log::warn!("level h={h} excluded: {e}");
                failed.push(h);
            }
            Err(e) => return Err(e),
        }
    }
    let smallest = levels
        .iter()
        .map(|l| l.max_error)
        .filter(|&e| e > 0.0)
        .fold(f64::INFINITY, f64::min);
    if smallest.is_finite() && reference.certificate > CERTIFICATE_FRACTION * smallest {
        return Err(Error::ReferencePrecision {
            system: system.name().to_string(),
            discrepancy: reference.certificate,
            tolerance: CERTIFICATE_FRACTION * smallest,
            halvings: reference.halvings,
        });
    }
    Ok(LevelRun {
        levels,
        failed,
        reference,
        queries,
    })
}

fn observed_orders(levels: &[Level]) -> Vec<f64> {
    levels
        .windows(2)
        .map(|w| {
            if w[0].max_error > 0.0 && w[1].max_error > 0.0 {
                (w[0].max_error / w[1].max_error).log2()
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Max-over-grid global error at `h0 / 2^k`, `k = 0..n_levels`, on `[0, T]`.
pub fn convergence_study(
    system: &System,
    method: &Method,
    x0: &[f64],
    t_final: f64,
    h0: f64,
    n_levels: usize,
) -> Result<ConvergenceStudy> {
    let run = run_levels(system, method, x0, t_final, h0, n_levels)?;
    let degenerate = !run.levels.is_empty() && run.levels.iter().all(|l| l.max_error == 0.0);
    if degenerate {
        log::info!("degenerate: exact on this system ({})", system.name());
    }
    Ok(ConvergenceStudy {
        system_name: system.name().to_string(),
        method_name: method.name().to_string(),
        order: method.order(),
        t_final,
        observed_orders: observed_orders(&run.levels),
        levels: run.levels,
        failed_levels: run.failed,
        degenerate,
        reference_certificate: run.reference.certificate,
        query_times: run.queries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KLevel {
    pub h: f64,
    pub k: f64,
    /// Query time where the ratio peaks.
    pub argmax_time: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub system_name: String,
    pub method_name: String,
    pub order: u32,
    pub t_final: f64,
    pub epsilon: f64,
    pub per_level: Vec<KLevel>,
    /// Largest of `K(h)/K(h/2)` and its reciprocal over consecutive levels.
    pub k_stability: f64,
    pub verified: bool,
    pub growth: Option<GrowthReport>,
    pub conditioning: ConditioningCurve,
    pub failed_levels: Vec<f64>,
    pub reference_certificate: f64,
}

/// Max over the grid of `e(t) / ((E(t) + ε) h^r)`, returning `(K, argmax t)`.
pub fn k_estimate(errors: &ErrorCurve, conditioning: &ConditioningCurve, epsilon: f64, h: f64, order: u32) -> (f64, f64) {
    let hr = h.powi(order as i32);
    errors
        .errors
        .iter()
        .zip(&conditioning.values)
        .zip(&errors.times)
        .map(|((e, big_e), t)| (e / ((big_e + epsilon) * hr), *t))
        .fold((0.0, errors.times[0]), |best, cur| if cur.0 > best.0 { cur } else { best })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::usage(format!(
            "epsilon must be positive: the bound holds for any ε > 0, and E(0) = 0 leaves ε = 0 undefined at t = 0 (got {epsilon})"
        )));
    }
    Ok(())
}

/// Estimates `K(h)` at each level and checks that it settles: the bound
/// counts as verified when no two consecutive `K` differ by more than a
/// factor [`K_STABILITY_LIMIT`].
///
/// `E` comes from an RK4 variational solve at the finest step, as a proxy for
/// the true solution, on the same query grid as the errors.
#[allow(clippy::too_many_arguments)]
pub fn bound_check(
    system: &System,
    method: &Method,
    x0: &[f64],
    t_final: f64,
    h0: f64,
    n_levels: usize,
    epsilon: f64,
    params: &GrowthParams,
) -> Result<BoundReport> {
    check_epsilon(epsilon)?;
    let run = run_levels(system, method, x0, t_final, h0, n_levels)?;
    let h_fine = h0 / 2f64.powi(n_levels as i32 - 1);
    let seq = transition_sequence(&Method::rk4(), system, x0, 0.0, t_final, h_fine)?;
    let conditioning = conditioning_curve_with(&seq, &run.queries, NormKind::Two)?;
    let per_level: Vec<KLevel> = run
        .levels
        .iter()
        .map(|l| {
            let (k, argmax_time) = k_estimate(
                l.curve.as_ref().expect("curve kept"),
                &conditioning,
                epsilon,
                l.h,
                method.order(),
            );
            KLevel {
                h: l.h,
                k,
                argmax_time,
                max_error: l.max_error,
            }
        })
        .collect();
    let k_stability = per_level
        .windows(2)
        .map(|w| {
            let r = w[0].k / w[1].k;
            r.max(1.0 / r)
        })
        .fold(if per_level.len() < 2 { f64::NAN } else { 1.0 }, f64::max);
    let verified = per_level.len() >= 2
        && per_level.iter().all(|l| l.k > 0.0)
        && k_stability <= K_STABILITY_LIMIT;
    let growth = classify_growth(&conditioning, params).ok();
    Ok(BoundReport {
        system_name: system.name().to_string(),
        method_name: method.name().to_string(),
        order: method.order(),
        t_final,
        epsilon,
        per_level,
        k_stability,
        verified,
        growth,
        conditioning,
        failed_levels: run.failed,
        reference_certificate: run.reference.certificate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeOptions {
    pub method: Method,
    pub t0: f64,
    pub t_final: f64,
    pub h: f64,
    pub x0: Option<Vec<f64>>,
    pub queries: usize,
    pub params: GrowthParams,
    pub norm: NormKind,
}

impl RegimeOptions {
    pub fn new(t_final: f64, h: f64) -> Self {
        RegimeOptions {
            method: Method::rk4(),
            t0: 0.0,
            t_final,
            h,
            x0: None,
            queries: DEFAULT_QUERIES,
            params: GrowthParams::default(),
            norm: NormKind::Two,
        }
    }
}

/// Integrates with variational equation, evaluates `E` on the default query
/// grid and classifies its growth.
pub fn regime_experiment(
    system: &System,
    t_final: f64,
    h: f64,
    method: &Method,
) -> Result<(ConditioningCurve, GrowthReport)> {
    let mut opts = RegimeOptions::new(t_final, h);
    opts.method = method.clone();
    regime_experiment_with(system, &opts)
}

pub fn regime_experiment_with(system: &System, opts: &RegimeOptions) -> Result<(ConditioningCurve, GrowthReport)> {
    let x0 = opts
        .x0
        .clone()
        .unwrap_or_else(|| system.default_x0().as_slice().to_vec());
    let seq = transition_sequence(&opts.method, system, &x0, opts.t0, opts.t_final, opts.h)?;
    let queries = uniform_queries(opts.t0, opts.t_final, opts.queries);
    let curve = conditioning_curve_with(&seq, &queries, opts.norm)?;
    let report = classify_growth(&curve, &opts.params)?;
    Ok((curve, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{decay, zero};

    #[test]
    fn queries_lie_on_every_level() {
        let q = study_queries(0.0, 20.0, 0.05, 200);
        assert!(q.len() <= 202);
        for k in 0..4 {
            let h = 0.05 / 2f64.powi(k);
            let grid = crate::integrators::uniform_grid(0.0, 20.0, h);
            for t in &q {
                assert!(grid.contains(t), "t={t} missing at h={h}");
            }
        }
    }

    #[test]
    fn rk4_decay_orders() {
        let s = convergence_study(&decay(), &Method::rk4(), &[1.0], 1.0, 0.1, 4).unwrap();
        assert_eq!(s.observed_orders.len(), 3);
        for p in &s.observed_orders {
            assert!((3.7..=4.3).contains(p), "{p}");
        }
        assert!(s.verified());
    }

    #[test]
    fn zero_field_is_degenerate() {
        for m in Method::all() {
            let s = convergence_study(&zero(2), &m, &[1.0, 2.0], 1.0, 0.1, 3).unwrap();
            assert!(s.degenerate);
            assert!(s.observed_orders.iter().all(|p| p.is_nan()));
            assert!(s.levels.iter().all(|l| l.max_error == 0.0));
            assert!(!s.verified());
        }
    }

    #[test]
    fn too_few_levels() {
        assert!(matches!(
            convergence_study(&decay(), &Method::rk4(), &[1.0], 1.0, 0.1, 2),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn epsilon_must_be_positive() {
        let err = bound_check(&decay(), &Method::rk4(), &[1.0], 20.0, 0.05, 4, 0.0, &GrowthParams::default())
            .unwrap_err();
        match err {
            Error::Usage(msg) => assert!(msg.contains("any ε > 0")),
            other => panic!("{other:?}"),
        }
    }
}
