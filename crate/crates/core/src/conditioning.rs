//! The conditioning function `E(t) = ∫_{t0}^{t} ‖Φ(t, s)‖ ds` and its growth
//! classification.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::integrators::snap_to_grid;
use crate::linalg::{NormKind, NormWorkspace, ScaledMatrix};
use crate::variational::TransitionSequence;

/// Norms with `log_scale` above this switch the accumulator to log form
/// (`ln 1e100`).
const LOG_SWITCH: f64 = 230.258_509_299_404_57;

pub const DEFAULT_QUERIES: usize = 200;
pub const MIN_CLASSIFY_POINTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningCurve {
    /// Grid times actually used.
    pub query_times: Vec<f64>,
    /// Times as requested, before snapping to the grid.
    pub requested_times: Vec<f64>,
    pub values: Vec<f64>,
    /// `ln E`; stays finite when `values` overflow. `-inf` where `E = 0`.
    pub log_values: Vec<f64>,
    pub h: f64,
    pub system_name: String,
    pub method_name: String,
    pub norm: NormKind,
}

impl ConditioningCurve {
    /// Builds a curve from raw samples, e.g. read back from CSV.
    pub fn from_samples(times: Vec<f64>, values: Vec<f64>, log_values: Option<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::usage("times and values differ in length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::usage("curve times must be strictly increasing"));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::usage("conditioning values must be non-negative"));
        }
        let log_values = match log_values {
            Some(l) if l.len() == values.len() => l,
            Some(_) => return Err(Error::usage("log values differ in length")),
            None => values.iter().map(|v| v.ln()).collect(),
        };
        let h = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        Ok(ConditioningCurve {
            requested_times: times.clone(),
            query_times: times,
            values,
            log_values,
            h: if h.is_finite() { h } else { 0.0 },
            system_name: String::new(),
            method_name: String::new(),
            norm: NormKind::Two,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last_value(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    /// Value at the query nearest `t`.
    pub fn value_near(&self, t: f64) -> f64 {
        let i = self
            .query_times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.values[i]
    }

    /// Same curve with every value multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> ConditioningCurve {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        let lc = c.ln();
        out.log_values.iter_mut().for_each(|v| *v += lc);
        out
    }
}

/// `n` uniformly spaced times covering `[t0, t_final]`, endpoints included.
pub fn uniform_queries(t0: f64, t_final: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![t_final];
    }
    let span = t_final - t0;
    let mut q: Vec<f64> = (0..n).map(|k| t0 + span * (k as f64) / ((n - 1) as f64)).collect();
    q[n - 1] = t_final;
    q
}

/// Sum of positive terms `a * exp(l)` that falls back to a shared log scale
/// once any term gets large.
struct ScaledSum {
    sum: f64,
    log_scale: f64,
    logged: bool,
}

impl ScaledSum {
    fn new() -> Self {
        ScaledSum {
            sum: 0.0,
            log_scale: 0.0,
            logged: false,
        }
    }

    #[inline]
    fn add(&mut self, a: f64, l: f64) {
        if !self.logged && l <= LOG_SWITCH {
            self.sum += a * l.exp();
            return;
        }
        self.logged = true;
        if a == 0.0 {
            return;
        }
        if l <= self.log_scale {
            self.sum += a * (l - self.log_scale).exp();
        } else {
            self.sum = self.sum * (self.log_scale - l).exp() + a;
            self.log_scale = l;
        }
    }

    fn value_and_log(&self) -> (f64, f64) {
        let log = self.sum.ln() + self.log_scale;
        let value = if self.logged { log.exp() } else { self.sum };
        (value, log)
    }
}

/// Evaluates `E` at each query time by the composite trapezoid rule on the
/// trajectory grid, accumulating `Φ(t_q, t_k)` backwards from `k = q`.
pub fn conditioning_curve(seq: &TransitionSequence, query_times: &[f64]) -> Result<ConditioningCurve> {
    conditioning_curve_with(seq, query_times, NormKind::Two)
}

pub fn conditioning_curve_with(
    seq: &TransitionSequence,
    query_times: &[f64],
    norm: NormKind,
) -> Result<ConditioningCurve> {
    let base = seq.base();
    let times = base.times();
    let mut indices = Vec::with_capacity(query_times.len());
    for &t in query_times {
        indices.push(snap_to_grid(times, base.h(), t)?);
    }
    if indices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::usage(
            "query times must be increasing and map to distinct grid points",
        ));
    }
    let d = seq.dim();
    let mut ws = NormWorkspace::new(d);
    let mut scratch = vec![0.0; d * d];
    let mut values = Vec::with_capacity(indices.len());
    let mut log_values = Vec::with_capacity(indices.len());
    for &m in &indices {
        if m == 0 {
            values.push(0.0);
            log_values.push(f64::NEG_INFINITY);
            continue;
        }
        let mut p = ScaledMatrix::identity(d);
        let mut acc = ScaledSum::new();
        let mut k = m;
        loop {
            let left = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
            let right = if k < m { times[k + 1] - times[k] } else { 0.0 };
            let weight = 0.5 * (left + right);
            let g = match norm {
                NormKind::Two => p.mantissa_norm(),
                NormKind::Frobenius => ws.norm(p.mantissa().as_slice(), NormKind::Frobenius),
            };
            acc.add(weight * g, p.log_scale());
            if k == 0 {
                break;
            }
            k -= 1;
            p.mul_assign_slice(seq.step_slice(k), &mut scratch, &mut ws);
        }
        let (v, l) = acc.value_and_log();
        values.push(v);
        log_values.push(l);
    }
    Ok(ConditioningCurve {
        query_times: indices.iter().map(|&i| times[i]).collect(),
        requested_times: query_times.to_vec(),
        values,
        log_values,
        h: base.h(),
        system_name: base.system_name().to_string(),
        method_name: base.method_name().to_string(),
        norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthClass {
    Constant,
    Linear,
    Exponential,
    Undetermined,
}

impl fmt::Display for GrowthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    /// Constant if the tail rises by less than this fraction of `E(T)`.
    pub delta_const: f64,
    /// Minimum coefficient of determination for a fit to count.
    pub r2_min: f64,
    /// Minimum log-slope (per unit time) for Exponential.
    pub rho_min: f64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            delta_const: 0.05,
            r2_min: 0.99,
            rho_min: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`. `r_squared` is 1 for data with no
/// spread and NaN if any input is non-finite.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    if x.is_empty() || x.iter().chain(y).any(|v| !v.is_finite()) {
        return LinearFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
        };
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - (intercept + slope * a);
                r * r
            })
            .sum();
        1.0 - ss_res / syy
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub class: GrowthClass,
    /// Fit of `E` against `t` on the tail window.
    pub tail_linear_fit: LinearFit,
    /// Fit of `ln E` against `t` on the tail window; `slope` is the rate.
    pub tail_exp_fit: LinearFit,
    /// `(E(T) - E(T/2)) / E(T)`.
    pub constancy_ratio: f64,
    pub tail_start: f64,
    pub horizon: f64,
    pub params: GrowthParams,
}

/// Classifies the long-time growth of `E` from its tail `[T/2, T]`.
///
/// Rules, first match wins: Constant if the tail barely rises; Linear if a
/// straight line fits and the log-slope over half the horizon stays below 1;
/// Exponential if `ln E` is straight with a rate above `rho_min`; otherwise
/// Undetermined.
pub fn classify_growth(curve: &ConditioningCurve, params: &GrowthParams) -> Result<GrowthReport> {
    let n = curve.len();
    if n < MIN_CLASSIFY_POINTS {
        return Err(Error::usage(format!(
            "growth classification needs at least {MIN_CLASSIFY_POINTS} points, got {n}"
        )));
    }
    let t = &curve.query_times;
    let (t0, horizon) = (t[0], t[n - 1]);
    let half_span = 0.5 * (horizon - t0);
    if !(half_span > 0.0) {
        return Err(Error::usage("curve spans no time"));
    }
    let mid = t0 + half_span;
    let start = t.partition_point(|&s| s < mid).min(n - 1);
    let tail_t = &t[start..];
    let tail_e = &curve.values[start..];
    let tail_l = &curve.log_values[start..];

    let (log_end, log_mid) = (curve.log_values[n - 1], curve.log_values[start]);
    let constancy_ratio = if log_end == f64::NEG_INFINITY {
        0.0
    } else {
        1.0 - (log_mid - log_end).exp()
    };
    let lin = linear_fit(tail_t, tail_e);
    let exp = linear_fit(tail_t, tail_l);

    let class = if constancy_ratio < params.delta_const {
        GrowthClass::Constant
    } else if lin.r_squared >= params.r2_min && exp.slope * half_span < 1.0 {
        GrowthClass::Linear
    } else if exp.r_squared >= params.r2_min && exp.slope > params.rho_min {
        GrowthClass::Exponential
    } else {
        GrowthClass::Undetermined
    };
    Ok(GrowthReport {
        class,
        tail_linear_fit: lin,
        tail_exp_fit: exp,
        constancy_ratio,
        tail_start: t[start],
        horizon,
        params: *params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(f: impl Fn(f64) -> f64, t_final: f64, n: usize) -> ConditioningCurve {
        let t = uniform_queries(0.0, t_final, n);
        let v: Vec<f64> = t.iter().map(|&s| f(s)).collect();
        ConditioningCurve::from_samples(t, v, None).unwrap()
    }

    #[test]
    fn classify_examples() {
        let p = GrowthParams::default();
        let c = curve(|t| 1.0 - (-t).exp(), 40.0, 200);
        let r = classify_growth(&c, &p).unwrap();
        assert_eq!(r.class, GrowthClass::Constant);
        assert!(r.constancy_ratio < 4e-9);

        let c = curve(|t| t, 40.0, 200);
        let r = classify_growth(&c, &p).unwrap();
        assert_eq!(r.class, GrowthClass::Linear);
        assert!((r.tail_linear_fit.r_squared - 1.0).abs() < 1e-12);

        let c = curve(|t| t.exp() - 1.0, 20.0, 200);
        let r = classify_growth(&c, &p).unwrap();
        assert_eq!(r.class, GrowthClass::Exponential);
        assert!((r.tail_exp_fit.slope - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constancy_ratio_of_identity_curve_is_one_half() {
        let c = curve(|t| t, 10.0, 201);
        let r = classify_growth(&c, &GrowthParams::default()).unwrap();
        assert!((r.constancy_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let c = curve(|t| t, 10.0, 15);
        assert!(matches!(classify_growth(&c, &GrowthParams::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn noisy_curve_is_undetermined() {
        let c = curve(|t| 2.0 + t * (1.0 + (0.7 * t).sin()), 40.0, 200);
        let r = classify_growth(&c, &GrowthParams::default()).unwrap();
        assert_eq!(r.class, GrowthClass::Undetermined);
    }

    #[test]
    fn linear_fit_basics() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((f.slope - 2.0).abs() < 1e-15);
        assert!((f.intercept - 1.0).abs() < 1e-15);
        assert_eq!(f.r_squared, 1.0);
        assert_eq!(linear_fit(&[0.0, 1.0], &[4.0, 4.0]).r_squared, 1.0);
        assert!(linear_fit(&[0.0, 1.0], &[f64::INFINITY, 4.0]).r_squared.is_nan());
    }

    #[test]
    fn scaled_sum_switches_to_logs() {
        let mut s = ScaledSum::new();
        s.add(1.0, 0.0);
        s.add(1.0, 1000.0);
        s.add(1.0, 1000.0);
        let (v, l) = s.value_and_log();
        assert!(v.is_infinite());
        assert!((l - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn uniform_queries_hit_endpoints() {
        let q = uniform_queries(0.0, 40.0, 200);
        assert_eq!(q.len(), 200);
        assert_eq!(q[0], 0.0);
        assert_eq!(q[199], 40.0);
    }
}
