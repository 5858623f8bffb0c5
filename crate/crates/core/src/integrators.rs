//! Explicit fixed-step Runge–Kutta methods and the trajectories they produce.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::systems::{JacobianScratch, StateVector, System};

/// Butcher tableau of an explicit method; `a` is strictly lower triangular,
/// stored row-major `s x s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tableau {
    pub stages: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Tableau {
    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.stages + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Euler,
    Midpoint,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    kind: MethodKind,
    order: u32,
    tableau: Tableau,
}

impl Method {
    pub fn euler() -> Self {
        Method {
            kind: MethodKind::Euler,
            order: 1,
            tableau: Tableau {
                stages: 1,
                a: vec![0.0],
                b: vec![1.0],
                c: vec![0.0],
            },
        }
    }

    /// Explicit midpoint rule.
    pub fn midpoint() -> Self {
        Method {
            kind: MethodKind::Midpoint,
            order: 2,
            tableau: Tableau {
                stages: 2,
                a: vec![0.0, 0.0, 0.5, 0.0],
                b: vec![0.0, 1.0],
                c: vec![0.0, 0.5],
            },
        }
    }

    /// Classical fourth-order Runge–Kutta.
    pub fn rk4() -> Self {
        #[rustfmt::skip]
        let a = vec![
            0.0, 0.0, 0.0, 0.0,
            0.5, 0.0, 0.0, 0.0,
            0.0, 0.5, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        ];
        Method {
            kind: MethodKind::Rk4,
            order: 4,
            tableau: Tableau {
                stages: 4,
                a,
                b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
                c: vec![0.0, 0.5, 0.5, 1.0],
            },
        }
    }

    pub fn from_kind(kind: MethodKind) -> Self {
        match kind {
            MethodKind::Euler => Self::euler(),
            MethodKind::Midpoint => Self::midpoint(),
            MethodKind::Rk4 => Self::rk4(),
        }
    }

    pub fn all() -> Vec<Method> {
        vec![Self::euler(), Self::midpoint(), Self::rk4()]
    }

    pub fn kind(&self) -> MethodKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MethodKind::Euler => "euler",
            MethodKind::Midpoint => "midpoint",
            MethodKind::Rk4 => "rk4",
        }
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn tableau(&self) -> &Tableau {
        &self.tableau
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::euler()),
            "midpoint" => Ok(Self::midpoint()),
            "rk4" => Ok(Self::rk4()),
            other => Err(Error::usage(format!(
                "unknown method `{other}` (available: euler, midpoint, rk4)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Time grid plus states. Produced by [`integrate`], by the reference solver,
/// or by sampling an exact flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<StateVector>,
    h: f64,
    system_name: String,
    method_name: String,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        states: Vec<StateVector>,
        h: f64,
        system_name: &str,
        method_name: &str,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::usage(format!(
                "trajectory needs matching non-empty times/states ({} vs {})",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::usage("trajectory times must be strictly increasing"));
        }
        if !(h > 0.0) {
            return Err(Error::usage("trajectory step must be positive"));
        }
        Ok(Trajectory {
            times,
            states,
            h,
            system_name: system_name.to_string(),
            method_name: method_name.to_string(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of steps (grid intervals).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn system_name(&self) -> &str {
        &self.system_name
    }

    pub fn method_name(&self) -> &str {
        &self.method_name
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("non-empty")
    }

    pub fn dimension(&self) -> usize {
        self.states[0].dim()
    }

    /// Index of the grid point nearest `t`, provided it lies strictly within
    /// half a step of `t`.
    pub fn snap(&self, t: f64) -> Result<usize> {
        snap_to_grid(&self.times, self.h, t)
    }
}

/// Nearest index in a sorted grid with nominal spacing `h`; fails if `t` is
/// outside the grid or at least `h/2` from every grid point.
pub fn snap_to_grid(times: &[f64], h: f64, t: f64) -> Result<usize> {
    let (first, last) = (times[0], *times.last().expect("non-empty grid"));
    let slack = 1e-12 * first.abs().max(last.abs()).max(1.0);
    if !(t >= first - slack && t <= last + slack) {
        return Err(Error::usage(format!(
            "query time {t} outside [{first}, {last}]"
        )));
    }
    let idx = times.partition_point(|&s| s < t);
    let best = match idx {
        0 => 0,
        i if i >= times.len() => times.len() - 1,
        i => {
            if (times[i] - t).abs() < (t - times[i - 1]).abs() {
                i
            } else {
                i - 1
            }
        }
    };
    if (times[best] - t).abs() >= 0.5 * h && times.len() > 1 {
        return Err(Error::usage(format!(
            "query time {t} is not within h/2 of any grid point"
        )));
    }
    Ok(best)
}

/// Number of steps needed to cover `[t0, t_final]` with step `h`, treating
/// ratios within rounding of an integer as that integer.
pub fn step_count(t0: f64, t_final: f64, h: f64) -> usize {
    let r = (t_final - t0) / h;
    let nearest = r.round();
    if (r - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest.max(1.0) as usize
    } else {
        r.ceil() as usize
    }
}

/// Uniform grid `t0 + j*h` with the last point pinned to `t_final`.
pub fn uniform_grid(t0: f64, t_final: f64, h: f64) -> Vec<f64> {
    let n = step_count(t0, t_final, h);
    let mut times: Vec<f64> = (0..n).map(|j| t0 + j as f64 * h).collect();
    times.push(t_final);
    times
}

pub(crate) fn check_interval(t0: f64, t_final: f64, h: f64) -> Result<()> {
    if !t0.is_finite() || !t_final.is_finite() || !h.is_finite() {
        return Err(Error::usage("t0, t_final and h must be finite"));
    }
    if !(t_final > t0) {
        return Err(Error::usage(format!("need t_final > t0 (got {t0} .. {t_final})")));
    }
    if !(h > 0.0) {
        return Err(Error::usage(format!("step h must be positive (got {h})")));
    }
    if h > (t_final - t0) * (1.0 + 1e-12) {
        return Err(Error::usage(format!(
            "step h = {h} exceeds the interval length {}",
            t_final - t0
        )));
    }
    Ok(())
}

/// Buffers reused across steps so the inner loop does not allocate.
pub(crate) struct StepWork {
    d: usize,
    k: Vec<Vec<f64>>,
    stage: Vec<f64>,
    pub(crate) next: Vec<f64>,
    // variational
    jac: Vec<f64>,
    kv: Vec<Vec<f64>>,
    psi: Vec<f64>,
    pub(crate) m: Vec<f64>,
    jscratch: JacobianScratch,
}

impl StepWork {
    pub(crate) fn new(d: usize, stages: usize) -> Self {
        StepWork {
            d,
            k: vec![vec![0.0; d]; stages],
            stage: vec![0.0; d],
            next: vec![0.0; d],
            jac: vec![0.0; d * d],
            kv: vec![vec![0.0; d * d]; stages],
            psi: vec![0.0; d * d],
            m: vec![0.0; d * d],
            jscratch: JacobianScratch::new(d),
        }
    }
}

/// One Runge–Kutta step from `(t, x)` into `work.next`. With `variational`
/// set, also integrates `Ψ' = J(t, x(t)) Ψ` from `Ψ = I` over the same step,
/// evaluating `J` at the stage states, and leaves the result in `work.m`.
/// The state arithmetic is identical either way. Returns `false` if any
/// stage or the result is non-finite.
pub(crate) fn rk_step(
    method: &Method,
    system: &System,
    t: f64,
    x: &[f64],
    h: f64,
    work: &mut StepWork,
    variational: bool,
) -> bool {
    let tab = &method.tableau;
    let d = work.d;
    let dd = d * d;
    for i in 0..tab.stages {
        work.stage.copy_from_slice(x);
        for c in 0..d {
            let mut acc = 0.0;
            for j in 0..i {
                let a = tab.a(i, j);
                if a != 0.0 {
                    acc += a * work.k[j][c];
                }
            }
            if i > 0 {
                work.stage[c] = x[c] + h * acc;
            }
        }
        let ti = t + tab.c[i] * h;
        system.rhs_into(ti, &work.stage, &mut work.k[i]);
        if work.k[i].iter().any(|v| !v.is_finite()) {
            return false;
        }
        if variational {
            // Ψ_i = I + h Σ_j a_ij K_j
            for e in 0..dd {
                let mut acc = 0.0;
                for j in 0..i {
                    let a = tab.a(i, j);
                    if a != 0.0 {
                        acc += a * work.kv[j][e];
                    }
                }
                let id = if e % (d + 1) == 0 { 1.0 } else { 0.0 };
                work.psi[e] = id + h * acc;
            }
            system.jacobian_into(ti, &work.stage, &mut work.jac, &mut work.jscratch);
            crate::linalg::mul_into(&work.jac, &work.psi, &mut work.kv[i], d);
            if work.kv[i].iter().any(|v| !v.is_finite()) {
                return false;
            }
        }
    }
    for c in 0..d {
        let mut acc = 0.0;
        for i in 0..tab.stages {
            let b = tab.b[i];
            if b != 0.0 {
                acc += b * work.k[i][c];
            }
        }
        work.next[c] = x[c] + h * acc;
    }
    if work.next.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if variational {
        for e in 0..dd {
            let mut acc = 0.0;
            for i in 0..tab.stages {
                let b = tab.b[i];
                if b != 0.0 {
                    acc += b * work.kv[i][e];
                }
            }
            let id = if e % (d + 1) == 0 { 1.0 } else { 0.0 };
            work.m[e] = id + h * acc;
        }
        if work.m.iter().any(|v| !v.is_finite()) {
            return false;
        }
    }
    true
}

fn check_state(system: &System, x: &[f64]) -> Result<()> {
    if x.len() != system.dimension() {
        return Err(Error::usage(format!(
            "system `{}` has dimension {}, got initial state of length {}",
            system.name(),
            system.dimension(),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage("initial state must be finite"));
    }
    Ok(())
}

/// A single step of `method` from `(t, x)` with step `h`.
pub fn step(method: &Method, system: &System, t: f64, x: &[f64], h: f64) -> Result<StateVector> {
    check_state(system, x)?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::usage(format!("step h must be positive (got {h})")));
    }
    let mut work = StepWork::new(system.dimension(), method.tableau.stages);
    if !rk_step(method, system, t, x, h, &mut work, false) {
        return Err(Error::BlowUp {
            step: 0,
            t,
            method: method.name().to_string(),
            h,
        });
    }
    Ok(StateVector::new_unchecked(work.next))
}

/// Integrates from `x0` at `t0` to exactly `t_final` with uniform step `h`,
/// shortening the final step if `h` does not divide the interval.
pub fn integrate(
    method: &Method,
    system: &System,
    x0: &[f64],
    t0: f64,
    t_final: f64,
    h: f64,
) -> Result<Trajectory> {
    let (traj, _) = integrate_impl(method, system, x0, t0, t_final, h, false)?;
    Ok(traj)
}

/// Shared driver for plain and variational integration. The second return
/// value holds the flattened per-step matrices when `variational` is set.
pub(crate) fn integrate_impl(
    method: &Method,
    system: &System,
    x0: &[f64],
    t0: f64,
    t_final: f64,
    h: f64,
    variational: bool,
) -> Result<(Trajectory, Vec<f64>)> {
    check_state(system, x0)?;
    check_interval(t0, t_final, h)?;
    let d = system.dimension();
    let times = uniform_grid(t0, t_final, h);
    let n = times.len() - 1;
    let mut states = Vec::with_capacity(n + 1);
    states.push(StateVector::new_unchecked(x0.to_vec()));
    let mut mats = if variational {
        Vec::with_capacity(n * d * d)
    } else {
        Vec::new()
    };
    let mut work = StepWork::new(d, method.tableau.stages);
    for j in 0..n {
        let t = times[j];
        let hj = times[j + 1] - t;
        let x = states[j].as_slice();
        if !rk_step(method, system, t, x, hj, &mut work, variational) {
            return Err(Error::BlowUp {
                step: j,
                t,
                method: method.name().to_string(),
                h,
            });
        }
        states.push(StateVector::new_unchecked(work.next.clone()));
        if variational {
            mats.extend_from_slice(&work.m);
        }
    }
    let traj = Trajectory::new(times, states, h, system.name(), method.name())?;
    Ok((traj, mats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{decay, expand, rotation, zero};

    #[test]
    fn tableaux_are_consistent() {
        for m in Method::all() {
            let t = m.tableau();
            let bsum: f64 = t.b.iter().sum();
            assert!((bsum - 1.0).abs() < 1e-15, "{}", m.name());
            for i in 0..t.stages {
                let row: f64 = (0..t.stages).map(|j| t.a(i, j)).sum();
                assert!((row - t.c[i]).abs() < 1e-15);
                for j in i..t.stages {
                    assert_eq!(t.a(i, j), 0.0, "explicit tableau");
                }
            }
        }
        assert_eq!(Method::euler().order(), 1);
        assert_eq!(Method::midpoint().order(), 2);
        assert_eq!(Method::rk4().order(), 4);
    }

    #[test]
    fn step_examples() {
        let x = step(&Method::euler(), &decay(), 0.0, &[1.0], 0.5).unwrap();
        assert_eq!(x.as_slice(), &[0.5]);

        let h: f64 = 0.1;
        let taylor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let x = step(&Method::rk4(), &expand(), 0.0, &[1.0], h).unwrap();
        assert!((x[0] - taylor).abs() < 1e-15, "{} vs {taylor}", x[0]);
        assert!((x[0] - 1.1051708333333333).abs() < 1e-15);

        for m in Method::all() {
            let x = step(&m, &zero(2), 0.0, &[3.0, 4.0], 0.7).unwrap();
            assert_eq!(x.as_slice(), &[3.0, 4.0]);
        }
    }

    #[test]
    fn step_rejects_bad_input() {
        assert!(step(&Method::rk4(), &decay(), 0.0, &[1.0], 0.0).is_err());
        assert!(step(&Method::rk4(), &decay(), 0.0, &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn blow_up_is_an_error() {
        let sys = System::new("pole", vec![1.0], |_, x, out| out[0] = 1.0 / (1.0 - x[0])).unwrap();
        match integrate(&Method::rk4(), &sys, &[1.0], 0.0, 1.0, 0.1) {
            Err(Error::BlowUp { step, method, .. }) => {
                assert_eq!(step, 0);
                assert_eq!(method, "rk4");
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
        // x' = x^2 from 1 hits infinity at t = 1
        let sys = System::new("riccati", vec![1.0], |_, x, out| out[0] = x[0] * x[0]).unwrap();
        let err = integrate(&Method::euler(), &sys, &[1.0], 0.0, 50.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::BlowUp { step, .. } if step > 0));
    }

    #[test]
    fn integrate_examples() {
        let tr = integrate(&Method::rk4(), &decay(), &[1.0], 0.0, 1.0, 0.1).unwrap();
        assert_eq!(tr.len(), 11);
        assert_eq!(tr.t_final(), 1.0);
        // |p(-h)^10 - e^-1| with p the degree-4 Taylor polynomial, from a
        // 40-digit evaluation
        let err = (tr.final_state()[0] - (-1f64).exp()).abs();
        assert!((err - 3.3324105611e-7).abs() < 1e-15, "{err:e}");

        let tp = 2.0 * std::f64::consts::PI;
        let tr = integrate(&Method::euler(), &rotation(), &[1.0, 0.0], 0.0, tp, tp / 1000.0).unwrap();
        assert_eq!(tr.steps(), 1000);
        assert!(tr.final_state().norm() > 1.0);

        for m in Method::all() {
            let tr = integrate(&m, &zero(1), &[5.0], 0.0, 10.0, 1.0).unwrap();
            assert!(tr.states().iter().all(|s| s.as_slice() == [5.0]));
        }
    }

    #[test]
    fn last_step_is_shortened() {
        let tr = integrate(&Method::rk4(), &decay(), &[1.0], 0.0, 1.0, 0.3).unwrap();
        assert_eq!(tr.times().len(), 5);
        assert_eq!(tr.t_final(), 1.0);
        assert!((tr.times()[3] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn grid_spacing_is_uniform() {
        let tr = integrate(&Method::midpoint(), &rotation(), &[1.0, 0.0], 0.5, 7.25, 0.01).unwrap();
        let t = tr.times();
        for j in 0..t.len() - 2 {
            assert!((t[j + 1] - t[j] - 0.01).abs() < 1e-12 * t[j].abs().max(1.0));
        }
        assert_eq!(*t.last().unwrap(), 7.25);
    }

    #[test]
    fn integrate_rejects_bad_intervals() {
        let m = Method::rk4();
        assert!(integrate(&m, &decay(), &[1.0], 1.0, 1.0, 0.1).is_err());
        assert!(integrate(&m, &decay(), &[1.0], 0.0, 1.0, 2.0).is_err());
        assert!(integrate(&m, &decay(), &[1.0], 0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn snapping() {
        let tr = integrate(&Method::rk4(), &decay(), &[1.0], 0.0, 1.0, 0.1).unwrap();
        assert_eq!(tr.snap(0.5).unwrap(), 5);
        assert_eq!(tr.snap(0.53).unwrap(), 5);
        assert_eq!(tr.snap(1.0).unwrap(), 10);
        assert!(tr.snap(1.5).is_err());
        assert!(tr.snap(-0.2).is_err());
    }

    #[test]
    fn step_count_tolerates_rounding() {
        let tp = 2.0 * std::f64::consts::PI;
        assert_eq!(step_count(0.0, tp, tp / 1000.0), 1000);
        assert_eq!(step_count(0.0, 1.0, 0.1), 10);
        assert_eq!(step_count(0.0, 1.0, 0.3), 4);
    }
}
