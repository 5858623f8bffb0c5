//! Right-hand sides `x' = f(t, x)` and the built-in benchmark suite.
//!
//! A [`System`] is expected to be continuous in `t` and locally Lipschitz in
//! `x`; studies that integrate the variational equation additionally need
//! `f` to be continuously differentiable in `x`. None of this is checked.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A finite point in `R^d`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if let Some(i) = components.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!(
                "state component {i} is not finite ({})",
                components[i]
            )));
        }
        Ok(StateVector(components))
    }

    pub(crate) fn new_unchecked(components: Vec<f64>) -> Self {
        StateVector(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        euclidean(&self.0)
    }

    /// Euclidean distance to another state of the same dimension.
    pub fn distance(&self, other: &StateVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl TryFrom<Vec<f64>> for StateVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        StateVector::new(v)
    }
}

impl From<StateVector> for Vec<f64> {
    fn from(s: StateVector) -> Self {
        s.0
    }
}

pub(crate) fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `f(t, x, out)` writes the derivative into `out`.
pub type RhsFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `jac(t, x, out)` writes the row-major `d x d` Jacobian into `out`.
pub type JacobianFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `exact(t, x0)` is the closed-form flow from time 0.
pub type ExactFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Which stability picture a built-in system illustrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Attracted to a stable hyperbolic equilibrium.
    FixedPoint,
    /// Attracted to a stable hyperbolic limit cycle.
    HyperbolicCycle,
    /// Attracted to a contracting invariant torus with quasiperiodic flow.
    QuasiperiodicTorus,
    /// Outside the stability hypotheses; included for contrast.
    Contrast,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::FixedPoint => "fixed-point",
            Regime::HyperbolicCycle => "hyperbolic-cycle",
            Regime::QuasiperiodicTorus => "quasiperiodic-torus",
            Regime::Contrast => "contrast",
        };
        f.write_str(s)
    }
}

#[derive(Clone)]
pub struct System {
    name: String,
    dimension: usize,
    rhs: RhsFn,
    jacobian: Option<JacobianFn>,
    exact: Option<ExactFn>,
    default_x0: StateVector,
    description: String,
    regime: Regime,
}

impl fmt::Debug for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("System")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("has_jacobian", &self.jacobian.is_some())
            .field("has_exact", &self.exact.is_some())
            .field("default_x0", &self.default_x0)
            .finish()
    }
}

impl System {
    pub fn new<F>(name: &str, default_x0: Vec<f64>, rhs: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let default_x0 = StateVector::new(default_x0)?;
        if default_x0.dim() == 0 {
            return Err(Error::usage("system dimension must be positive"));
        }
        Ok(System {
            name: name.to_string(),
            dimension: default_x0.dim(),
            rhs: Arc::new(rhs),
            jacobian: None,
            exact: None,
            default_x0,
            description: String::new(),
            regime: Regime::Contrast,
        })
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_exact<F>(mut self, exact: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.exact = Some(Arc::new(exact));
        self
    }

    pub fn with_description(mut self, text: &str) -> Self {
        self.description = text.to_string();
        self
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn default_x0(&self) -> &StateVector {
        &self.default_x0
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::usage(format!(
                "system `{}` has dimension {}, got state of length {}",
                self.name,
                self.dimension,
                x.len()
            )));
        }
        Ok(())
    }

    fn domain_error(&self, t: f64, x: &[f64]) -> Error {
        Error::NumericalDomain {
            system: self.name.clone(),
            t,
            x: x.to_vec(),
        }
    }

    /// `f(t, x)`.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<StateVector> {
        self.check_dim(x)?;
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("evaluate needs finite t and x"));
        }
        let mut out = vec![0.0; self.dimension];
        (self.rhs)(t, x, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(self.domain_error(t, x));
        }
        Ok(StateVector(out))
    }

    /// Unchecked evaluation for integrator inner loops.
    #[inline]
    pub(crate) fn rhs_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.rhs)(t, x, out)
    }

    /// `∂f/∂x` at `(t, x)`: the analytic Jacobian when present, else central
    /// finite differences.
    pub fn jacobian_at(&self, t: f64, x: &[f64]) -> Result<Matrix> {
        self.check_dim(x)?;
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("jacobian_at needs finite t and x"));
        }
        let d = self.dimension;
        let mut out = vec![0.0; d * d];
        let mut scratch = JacobianScratch::new(d);
        self.jacobian_into(t, x, &mut out, &mut scratch);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(self.domain_error(t, x));
        }
        Matrix::from_row_major(d, out)
    }

    #[inline]
    pub(crate) fn jacobian_into(&self, t: f64, x: &[f64], out: &mut [f64], scratch: &mut JacobianScratch) {
        match &self.jacobian {
            Some(jac) => jac(t, x, out),
            None => self.fd_jacobian_into(t, x, out, scratch),
        }
    }

    /// Central-difference Jacobian, step `cbrt(eps) * max(1, |x_i|)` per column.
    pub fn finite_difference_jacobian(&self, t: f64, x: &[f64]) -> Result<Matrix> {
        self.check_dim(x)?;
        let d = self.dimension;
        let mut out = vec![0.0; d * d];
        let mut scratch = JacobianScratch::new(d);
        self.fd_jacobian_into(t, x, &mut out, &mut scratch);
        Matrix::from_row_major(d, out)
    }

    fn fd_jacobian_into(&self, t: f64, x: &[f64], out: &mut [f64], s: &mut JacobianScratch) {
        let d = self.dimension;
        s.x.copy_from_slice(x);
        let base = f64::EPSILON.cbrt();
        for j in 0..d {
            let delta = base * x[j].abs().max(1.0);
            s.x[j] = x[j] + delta;
            let up = s.x[j];
            (self.rhs)(t, &s.x, &mut s.fp);
            s.x[j] = x[j] - delta;
            let down = s.x[j];
            (self.rhs)(t, &s.x, &mut s.fm);
            s.x[j] = x[j];
            let width = up - down;
            for i in 0..d {
                out[i * d + j] = (s.fp[i] - s.fm[i]) / width;
            }
        }
    }

    /// Closed-form flow `x(t)` from `x(0) = x0`, if the system has one.
    pub fn exact(&self, t: f64, x0: &[f64]) -> Option<Result<StateVector>> {
        let exact = self.exact.as_ref()?;
        if let Err(e) = self.check_dim(x0) {
            return Some(Err(e));
        }
        let v = exact(t, x0);
        if v.iter().any(|c| !c.is_finite()) {
            return Some(Err(self.domain_error(t, x0)));
        }
        Some(Ok(StateVector(v)))
    }
}

pub(crate) struct JacobianScratch {
    x: Vec<f64>,
    fp: Vec<f64>,
    fm: Vec<f64>,
}

impl JacobianScratch {
    pub(crate) fn new(d: usize) -> Self {
        JacobianScratch {
            x: vec![0.0; d],
            fp: vec![0.0; d],
            fm: vec![0.0; d],
        }
    }
}

pub const VDP_MU: f64 = 1.0;
pub const LORENZ_SIGMA: f64 = 10.0;
pub const LORENZ_RHO: f64 = 28.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;
pub const TORUS_OMEGA1: f64 = 1.0;

/// Second torus frequency: the golden ratio keeps the two rotations
/// rationally independent.
pub fn torus_omega2() -> f64 {
    (1.0 + 5f64.sqrt()) / 2.0
}

/// `x' = -x`.
pub fn decay() -> System {
    System::new("decay", vec![1.0], |_, x, out| out[0] = -x[0])
        .expect("valid")
        .with_jacobian(|_, _, j| j[0] = -1.0)
        .with_exact(|t, x0| vec![(-t).exp() * x0[0]])
        .with_regime(Regime::FixedPoint)
        .with_description("scalar linear decay x' = -x")
}

/// `x' = x`.
pub fn expand() -> System {
    System::new("expand", vec![1.0], |_, x, out| out[0] = x[0])
        .expect("valid")
        .with_jacobian(|_, _, j| j[0] = 1.0)
        .with_exact(|t, x0| vec![t.exp() * x0[0]])
        .with_regime(Regime::Contrast)
        .with_description("scalar linear growth x' = x (unstable)")
}

/// `x' = [x2, -x1]`; the flow rotates clockwise by angle `t`.
pub fn rotation() -> System {
    System::new("rotation", vec![1.0, 0.0], |_, x, out| {
        out[0] = x[1];
        out[1] = -x[0];
    })
    .expect("valid")
    .with_jacobian(|_, _, j| j.copy_from_slice(&[0.0, 1.0, -1.0, 0.0]))
    .with_exact(|t, x0| {
        let (s, c) = t.sin_cos();
        vec![c * x0[0] + s * x0[1], -s * x0[0] + c * x0[1]]
    })
    .with_regime(Regime::Contrast)
    .with_description("planar rotation x' = [x2, -x1] (neutrally stable)")
}

/// `x' = [-x1 + x2, -x1 - x2]`, a stable spiral into the origin.
pub fn stable_focus() -> System {
    System::new("stable_focus", vec![1.0, 0.0], |_, x, out| {
        out[0] = -x[0] + x[1];
        out[1] = -x[0] - x[1];
    })
    .expect("valid")
    .with_jacobian(|_, _, j| j.copy_from_slice(&[-1.0, 1.0, -1.0, -1.0]))
    .with_exact(|t, x0| {
        let (s, c) = t.sin_cos();
        let e = (-t).exp();
        vec![e * (c * x0[0] + s * x0[1]), e * (-s * x0[0] + c * x0[1])]
    })
    .with_regime(Regime::FixedPoint)
    .with_description("stable focus x' = [-x1 + x2, -x1 - x2]")
}

/// Van der Pol oscillator with `mu = 1`.
pub fn van_der_pol() -> System {
    let mu = VDP_MU;
    System::new("vdp", vec![0.5, 0.0], move |_, x, out| {
        out[0] = x[1];
        out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
    })
    .expect("valid")
    .with_jacobian(move |_, x, j| {
        j[0] = 0.0;
        j[1] = 1.0;
        j[2] = -2.0 * mu * x[0] * x[1] - 1.0;
        j[3] = mu * (1.0 - x[0] * x[0]);
    })
    .with_regime(Regime::HyperbolicCycle)
    .with_description("van der Pol oscillator, mu = 1 (stable limit cycle)")
}

/// Hopf normal form in one plane: `(u, v)` with angular speed `omega`.
#[inline]
fn hopf_rhs(u: f64, v: f64, omega: f64) -> (f64, f64) {
    let g = 1.0 - u * u - v * v;
    (u * g - omega * v, v * g + omega * u)
}

#[inline]
fn hopf_jacobian(u: f64, v: f64, omega: f64) -> [f64; 4] {
    [
        1.0 - 3.0 * u * u - v * v,
        -2.0 * u * v - omega,
        -2.0 * u * v + omega,
        1.0 - u * u - 3.0 * v * v,
    ]
}

/// Closed-form Hopf flow: radius obeys `r' = r(1 - r^2)`, phase advances at `omega`.
fn hopf_flow(t: f64, u0: f64, v0: f64, omega: f64) -> (f64, f64) {
    let r0sq = u0 * u0 + v0 * v0;
    if r0sq == 0.0 {
        return (0.0, 0.0);
    }
    let factor = 1.0 / (r0sq + (1.0 - r0sq) * (-2.0 * t).exp()).sqrt();
    let (s, c) = (omega * t).sin_cos();
    (factor * (c * u0 - s * v0), factor * (s * u0 + c * v0))
}

/// Two Hopf oscillators in `R^4` with frequencies `1` and the golden ratio.
/// The product of their limit cycles is an attracting invariant 2-torus
/// carrying quasiperiodic flow.
pub fn torus4() -> System {
    let w1 = TORUS_OMEGA1;
    let w2 = torus_omega2();
    System::new("torus4", vec![0.5, 0.0, 0.5, 0.0], move |_, x, out| {
        let (a, b) = hopf_rhs(x[0], x[1], w1);
        let (c, d) = hopf_rhs(x[2], x[3], w2);
        out[0] = a;
        out[1] = b;
        out[2] = c;
        out[3] = d;
    })
    .expect("valid")
    .with_jacobian(move |_, x, j| {
        j.iter_mut().for_each(|v| *v = 0.0);
        let a = hopf_jacobian(x[0], x[1], w1);
        let b = hopf_jacobian(x[2], x[3], w2);
        j[0] = a[0];
        j[1] = a[1];
        j[4] = a[2];
        j[5] = a[3];
        j[10] = b[0];
        j[11] = b[1];
        j[14] = b[2];
        j[15] = b[3];
    })
    .with_exact(move |t, x0| {
        if t == 0.0 {
            return x0.to_vec();
        }
        let (u, v) = hopf_flow(t, x0[0], x0[1], w1);
        let (p, q) = hopf_flow(t, x0[2], x0[3], w2);
        vec![u, v, p, q]
    })
    .with_regime(Regime::QuasiperiodicTorus)
    .with_description("two Hopf oscillators, frequency ratio golden (attracting invariant torus)")
}

/// Lorenz system with the classic chaotic parameters.
pub fn lorenz() -> System {
    let (sigma, rho, beta) = (LORENZ_SIGMA, LORENZ_RHO, LORENZ_BETA);
    System::new("lorenz", vec![1.0, 1.0, 1.0], move |_, x, out| {
        out[0] = sigma * (x[1] - x[0]);
        out[1] = x[0] * (rho - x[2]) - x[1];
        out[2] = x[0] * x[1] - beta * x[2];
    })
    .expect("valid")
    .with_jacobian(move |_, x, j| {
        j.copy_from_slice(&[
            -sigma,
            sigma,
            0.0,
            rho - x[2],
            -1.0,
            -x[0],
            x[1],
            x[0],
            -beta,
        ]);
    })
    .with_regime(Regime::Contrast)
    .with_description("Lorenz system sigma=10, rho=28, beta=8/3 (chaotic)")
}

/// `x' = 0` in `R^d`. Deliberately has no closed-form flow attached so the
/// reference machinery gets exercised on it.
pub fn zero(dim: usize) -> System {
    System::new("zero", vec![0.0; dim.max(1)], |_, _, out| {
        out.iter_mut().for_each(|v| *v = 0.0)
    })
    .expect("valid")
    .with_jacobian(|_, _, j| j.iter_mut().for_each(|v| *v = 0.0))
    .with_description("zero vector field")
}

pub fn builtin_suite() -> Vec<System> {
    vec![
        decay(),
        expand(),
        rotation(),
        stable_focus(),
        van_der_pol(),
        torus4(),
        lorenz(),
    ]
}

/// Looks up a built-in system by name.
pub fn builtin(name: &str) -> Result<System> {
    builtin_suite()
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| {
            let names: Vec<String> = builtin_suite().iter().map(|s| s.name().to_string()).collect();
            Error::usage(format!(
                "unknown system `{name}` (available: {})",
                names.join(", ")
            ))
        })
}

/// Largest relative discrepancy between the analytic and finite-difference
/// Jacobians, measured entrywise against `max(1, max|J|)`.
pub fn jacobian_discrepancy(system: &System, t: f64, x: &[f64]) -> Result<f64> {
    let analytic = system.jacobian_at(t, x)?;
    let fd = system.finite_difference_jacobian(t, x)?;
    let scale = analytic.max_abs().max(1.0);
    Ok(analytic.sub(&fd).max_abs() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_examples() {
        assert_eq!(decay().evaluate(0.0, &[2.0]).unwrap().as_slice(), &[-2.0]);
        assert_eq!(rotation().evaluate(0.0, &[1.0, 0.0]).unwrap().as_slice(), &[0.0, -1.0]);
        assert_eq!(van_der_pol().evaluate(0.0, &[2.0, 0.0]).unwrap().as_slice(), &[0.0, -2.0]);
    }

    #[test]
    fn evaluate_rejects_wrong_dimension() {
        assert!(matches!(decay().evaluate(0.0, &[1.0, 2.0]), Err(Error::Usage(_))));
        assert!(matches!(decay().evaluate(0.0, &[f64::NAN]), Err(Error::Usage(_))));
    }

    #[test]
    fn evaluate_reports_non_finite_output() {
        let sys = System::new("blowup", vec![1.0], |_, x, out| out[0] = 1.0 / (x[0] - 1.0)).unwrap();
        match sys.evaluate(0.0, &[1.0]) {
            Err(Error::NumericalDomain { system, .. }) => assert_eq!(system, "blowup"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(decay().jacobian_at(3.0, &[7.0]).unwrap().as_slice(), &[-1.0]);
        assert_eq!(
            rotation().jacobian_at(0.0, &[0.3, 0.4]).unwrap().as_slice(),
            &[0.0, 1.0, -1.0, 0.0]
        );
        let j = van_der_pol().jacobian_at(0.0, &[2.0, 0.0]).unwrap();
        assert_eq!(j.as_slice(), &[0.0, 1.0, -1.0, -3.0]);
        let fd = van_der_pol().finite_difference_jacobian(0.0, &[2.0, 0.0]).unwrap();
        assert!(j.sub(&fd).max_abs() < 1e-8);
    }

    #[test]
    fn jacobian_falls_back_to_finite_differences() {
        let sys = System::new("quad", vec![1.0, 2.0], |_, x, out| {
            out[0] = x[0] * x[1];
            out[1] = x[1] * x[1];
        })
        .unwrap();
        let j = sys.jacobian_at(0.0, &[1.5, -2.0]).unwrap();
        let want = [-2.0, 1.5, 0.0, -4.0];
        for (a, b) in j.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn suite_contents() {
        let names: Vec<_> = builtin_suite().iter().map(|s| s.name().to_string()).collect();
        for n in ["decay", "expand", "rotation", "stable_focus", "vdp", "torus4", "lorenz"] {
            assert!(names.iter().any(|m| m == n), "missing {n}");
        }
        let d = builtin("decay").unwrap();
        assert_eq!(d.exact(1.0, &[1.0]).unwrap().unwrap().as_slice(), &[(-1f64).exp()]);
        let v = builtin("vdp").unwrap();
        assert_eq!(v.dimension(), 2);
        assert!(!v.has_exact());
        assert!(builtin("nope").is_err());
        assert!(builtin_suite().iter().all(|s| s.has_jacobian()));
    }

    #[test]
    fn exact_flows_start_at_x0_exactly() {
        let x0s: [&[f64]; 4] = [&[0.3], &[0.3, -0.7], &[0.3, -0.7], &[0.3, 0.1, -0.2, 0.9]];
        for s in builtin_suite().iter().filter(|s| s.has_exact()) {
            let x0: Vec<f64> = x0s.iter().find(|v| v.len() == s.dimension()).unwrap().to_vec();
            assert_eq!(s.exact(0.0, &x0).unwrap().unwrap().as_slice(), x0.as_slice(), "{}", s.name());
        }
    }

    #[test]
    fn state_vector_rejects_non_finite() {
        assert!(StateVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(StateVector::new(vec![1.0, 2.0]).is_ok());
    }
}
