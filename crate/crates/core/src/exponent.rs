//! Solvers for the backward equation `d/dt Phi = -Psi(Phi)`, `Phi(0,q) = q`.
//!
//! Two independent routes are provided. The exact route represents the flow
//! through the total-number curve of the fundamental solution and its
//! inverse: with `zeta(tau) = integral_tau^infinity du/Psi(u)` and
//! `eta = zeta^(-1)`, the flow is `Phi(t,q) = eta(t + zeta(q))`. The second
//! route is the implicit Euler scheme, whose steps are Bernstein-preserving
//! by construction. Weak solutions with initial data compose the fundamental
//! flow with the initial exponent.

use crate::error::{Error, Result};
use crate::gml::SelfSimilarFamily;
use crate::mechanism::{AtomicMeasure, BranchingMechanism};
use crate::numeric::{self, Kahan};

const TAU_MIN: f64 = 1e-8;
const TAU_MAX: f64 = 1e8;
const NODES_PER_DECADE: usize = 8;

/// Exact representation of the fundamental flow of a critical mechanism
/// satisfying the extinction condition.
///
/// Holds the hitting-time table for `zeta` over levels `[1e-8, 1e8]`;
/// arguments outside that window raise `OutOfRange` rather than silently
/// extrapolating. Immutable and freely shareable once built.
#[derive(Debug, Clone)]
pub struct ExactSolver {
    mech: BranchingMechanism,
    quad_tol: f64,
    /// `(coefficient, exponent)` when the whole mechanism is an exact power.
    power: Option<(f64, f64)>,
    tau_grid: Vec<f64>,
    zeta_vals: Vec<f64>,
}

impl ExactSolver {
    /// Builds the hitting-time table. Refuses non-critical mechanisms and
    /// mechanisms whose extinction-condition verdict is not `Holds`.
    pub fn build(mech: BranchingMechanism, quad_tol: f64) -> Result<Self> {
        if !(quad_tol > 0.0 && quad_tol < 1e-2) {
            return Err(Error::domain(format!(
                "quadrature tolerance out of range: {quad_tol}"
            )));
        }
        if !mech.is_critical() {
            return Err(Error::NotCritical {
                alpha: mech.alpha(),
            });
        }
        let verdict = mech.greys_check(1.0, quad_tol)?;
        if !verdict.holds() {
            return Err(Error::GreyNotSatisfied { verdict });
        }

        let power = mech.as_power_law();
        let decades = (TAU_MAX / TAU_MIN).log10().round() as usize;
        let n = decades * NODES_PER_DECADE;
        let step = (TAU_MAX / TAU_MIN).ln() / n as f64;
        let tau_grid: Vec<f64> = (0..=n).map(|i| TAU_MIN * (step * i as f64).exp()).collect();

        let zeta_vals = if let Some((coeff, g)) = power {
            tau_grid
                .iter()
                .map(|&tau| tau.powf(1.0 - g) / (coeff * (g - 1.0)))
                .collect()
        } else {
            // tail beyond the table top, then cumulative decade pieces downward
            let tail = match crate::mechanism::grey_verdict_of(
                |u| mech.psi(u).unwrap_or(f64::INFINITY),
                TAU_MAX,
                0.1 * quad_tol,
            ) {
                crate::mechanism::GreyVerdict::Holds(integral) => integral,
                other => return Err(Error::GreyNotSatisfied { verdict: other }),
            };
            let mut vals = vec![0.0; n + 1];
            vals[n] = tail;
            for i in (0..n).rev() {
                let inc = Self::segment_integral(&mech, tau_grid[i], tau_grid[i + 1], quad_tol);
                vals[i] = vals[i + 1] + inc;
            }
            vals
        };

        Ok(Self {
            mech,
            quad_tol,
            power,
            tau_grid,
            zeta_vals,
        })
    }

    fn segment_integral(mech: &BranchingMechanism, a: f64, b: f64, quad_tol: f64) -> f64 {
        // log substitution keeps the integrand mild across the whole window
        let f = |v: f64| {
            let u = v.exp();
            u / mech.psi(u).unwrap_or(f64::INFINITY)
        };
        let rough = f(0.5 * (a.ln() + b.ln())) * (b / a).ln();
        numeric::integrate(
            f,
            a.ln(),
            b.ln(),
            (0.1 * quad_tol * rough.abs()).max(1e-300),
        )
    }

    pub fn mechanism(&self) -> &BranchingMechanism {
        &self.mech
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn tau_grid(&self) -> &[f64] {
        &self.tau_grid
    }

    /// Time at which the fundamental total number reaches `level`:
    /// `zeta(level) = integral_level^infinity du/Psi(u)`.
    pub fn hitting_time(&self, level: f64) -> Result<f64> {
        if !(level > 0.0) {
            return Err(Error::domain(format!(
                "level must be positive, got {level}"
            )));
        }
        if let Some((coeff, g)) = self.power {
            return Ok(level.powf(1.0 - g) / (coeff * (g - 1.0)));
        }
        if !(TAU_MIN..=TAU_MAX).contains(&level) {
            return Err(Error::OutOfRange {
                value: level,
                lo: TAU_MIN,
                hi: TAU_MAX,
            });
        }
        let idx = self
            .tau_grid
            .partition_point(|&tau| tau <= level)
            .min(self.tau_grid.len())
            - 1;
        let node = self.tau_grid[idx];
        // signed remainder from the nearest node below
        let inc =
            Self::segment_integral(&self.mech, node.min(level), node.max(level), self.quad_tol);
        Ok(self.zeta_vals[idx] - inc)
    }

    /// Total number of the fundamental solution at time `t`, the inverse of
    /// `hitting_time`; satisfies `|zeta(eta(t)) - t| <= quad_tol (1 + t)`.
    pub fn total_number_at(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        if let Some((coeff, g)) = self.power {
            return Ok((coeff * (g - 1.0) * t).powf(1.0 / (1.0 - g)));
        }
        let n = self.zeta_vals.len();
        if t < self.zeta_vals[n - 1] || t > self.zeta_vals[0] {
            return Err(Error::OutOfRange {
                value: t,
                lo: self.zeta_vals[n - 1],
                hi: self.zeta_vals[0],
            });
        }
        // zeta_vals decrease along the grid
        let idx = self.zeta_vals.partition_point(|&z| z > t).min(n - 1).max(1) - 1;
        let (mut lo, mut hi) = (self.tau_grid[idx], self.tau_grid[idx + 1]);
        // log-log interpolation seed, then guarded Newton on zeta(tau) = t
        let (za, zb) = (self.zeta_vals[idx], self.zeta_vals[idx + 1]);
        let frac = ((za.ln() - t.ln()) / (za.ln() - zb.ln())).clamp(0.0, 1.0);
        let mut tau = lo * (hi / lo).powf(frac);
        let tol = 0.5 * self.quad_tol * (1.0 + t);
        for _ in 0..80 {
            let residual = self.hitting_time(tau)? - t;
            if residual.abs() <= tol {
                return Ok(tau);
            }
            if residual > 0.0 {
                // zeta too large means tau too small
                lo = tau;
            } else {
                hi = tau;
            }
            let step = tau + residual * self.mech.psi(tau)?;
            tau = if step > lo && step < hi {
                step
            } else {
                (lo * hi).sqrt()
            };
        }
        Err(Error::NonConvergence(format!("inversion stalled at t={t}")))
    }

    /// Fundamental flow `Phi(t, q) = eta(t + zeta(q))`; `q` may be infinite,
    /// which gives the total number at `t`.
    pub fn phi(&self, t: f64, q: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("time must be nonnegative, got {t}")));
        }
        if q == f64::INFINITY {
            return self.total_number_at(t);
        }
        if !(q > 0.0) {
            return Err(Error::domain(format!(
                "transform argument must be positive, got {q}"
            )));
        }
        self.total_number_at(t + self.hitting_time(q)?)
    }

    /// Finite-difference residual of `dPhi/dt + Psi(q) dPhi/dq = 0`, a solver
    /// health check.
    pub fn forward_residual(&self, t: f64, q: f64) -> Result<f64> {
        if !(t > 0.0 && q > 0.0) {
            return Err(Error::domain("residual probe needs t, q > 0"));
        }
        let cbrt_eps = f64::EPSILON.cbrt();
        let ht = (cbrt_eps * (1.0 + t)).min(0.5 * t);
        let hq = (cbrt_eps * (1.0 + q)).min(0.5 * q);
        let dt = (self.phi(t + ht, q)? - self.phi(t - ht, q)?) / (2.0 * ht);
        let dq = (self.phi(t, q + hq)? - self.phi(t, q - hq)?) / (2.0 * hq);
        Ok(dt + self.mech.psi(q)? * dq)
    }
}

/// Implicit Euler approximation of the fundamental flow: `steps` backward
/// steps of size `t/steps`, each inner equation `u + h Psi(u) = prev` solved
/// by Newton from the warm start with a bisection-guarded bracket.
pub fn euler_phi(mech: &BranchingMechanism, t: f64, q: f64, steps: u32) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(format!("time must be positive, got {t}")));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::domain(format!(
            "initial value must be positive finite, got {q}"
        )));
    }
    if steps == 0 {
        return Err(Error::domain("need at least one step"));
    }
    let h = t / steps as f64;
    if 1.0 + h * mech.alpha() <= 0.0 {
        return Err(Error::domain(format!(
            "step size {h} too large for drift {} (inner map not monotone)",
            mech.alpha()
        )));
    }
    let mut value = q;
    for _ in 0..steps {
        value = euler_inner_solve(mech, h, value)?;
    }
    Ok(value)
}

fn euler_inner_solve(mech: &BranchingMechanism, h: f64, target: f64) -> Result<f64> {
    let g = |u: f64| -> Result<f64> { Ok(u + h * mech.psi(u)? - target) };
    let mut lo = 0.0;
    let mut hi = target;
    // for critical mechanisms g(target) >= 0 already; expand otherwise
    while g(hi)? < 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Bracket("inner solve lost its upper bracket".into()));
        }
    }
    let mut u = target.min(hi);
    for _ in 0..200 {
        let gu = g(u)?;
        if gu.abs() <= 1e-14 * (1.0 + u.abs()) {
            return Ok(u);
        }
        if gu > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let slope = 1.0 + h * mech.psi_derivative(u, 1)?;
        let newton = u - gu / slope;
        u = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            return Ok(u);
        }
    }
    Err(Error::NonConvergence(
        "inner Newton exceeded 200 iterations".into(),
    ))
}

/// Initial exponent of a weak solution: the transform of the initial
/// cluster-size measure, the identity for the fundamental solution, or a
/// power `q^rho` (the transform of a stable initial state).
#[derive(Debug, Clone, PartialEq)]
pub enum InitialExponent {
    Identity,
    Measure(AtomicMeasure),
    Power { rho: f64 },
}

impl InitialExponent {
    pub fn eval(&self, q: f64) -> f64 {
        match self {
            InitialExponent::Identity => q,
            InitialExponent::Measure(nu) => nu.exponent(q),
            InitialExponent::Power { rho } => {
                if q == f64::INFINITY {
                    f64::INFINITY
                } else {
                    q.powf(*rho)
                }
            }
        }
    }

    /// `d/dq` of the exponent.
    pub fn derivative(&self, q: f64) -> f64 {
        match self {
            InitialExponent::Identity => 1.0,
            InitialExponent::Measure(nu) => nu
                .atoms()
                .iter()
                .map(|&(x, w)| w * x * (-q * x).exp())
                .sum(),
            InitialExponent::Power { rho } => rho * q.powf(rho - 1.0),
        }
    }

    /// Total measure `phi_0(infinity)`; infinite for the identity and for
    /// powers with `rho < 1`.
    pub fn total(&self) -> f64 {
        match self {
            InitialExponent::Identity | InitialExponent::Power { .. } => f64::INFINITY,
            InitialExponent::Measure(nu) => nu.total(),
        }
    }
}

/// Which solver realizes the fundamental flow.
#[derive(Debug, Clone)]
pub enum FlowBackend {
    /// Closed-form homogeneous family; its exponent already carries the
    /// family's own initial data `q^rho`.
    ClosedForm(SelfSimilarFamily),
    Exact(ExactSolver),
    Euler {
        mech: BranchingMechanism,
        steps: u32,
    },
}

impl FlowBackend {
    fn phi_fundamental(&self, t: f64, q: f64) -> Result<f64> {
        match self {
            FlowBackend::ClosedForm(fam) => fam.phi(t, q),
            FlowBackend::Exact(solver) => solver.phi(t, q),
            FlowBackend::Euler { mech, steps } => {
                if t == 0.0 {
                    Ok(q)
                } else if q == f64::INFINITY {
                    Err(Error::domain("Euler backend cannot start from infinity"))
                } else {
                    euler_phi(mech, t, q, *steps)
                }
            }
        }
    }

    fn psi(&self, u: f64) -> Result<f64> {
        match self {
            FlowBackend::ClosedForm(fam) => Ok(fam.beta * u.powf(fam.gamma)),
            FlowBackend::Exact(solver) => solver.mechanism().psi(u),
            FlowBackend::Euler { mech, .. } => mech.psi(u),
        }
    }

    fn psi_prime(&self, u: f64) -> Result<f64> {
        match self {
            FlowBackend::ClosedForm(fam) => Ok(fam.beta * fam.gamma * u.powf(fam.gamma - 1.0)),
            FlowBackend::Exact(solver) => solver.mechanism().psi_derivative(u, 1),
            FlowBackend::Euler { mech, .. } => mech.psi_derivative(u, 1),
        }
    }
}

/// A weak-solution exponent `phi(t, q) = Phi(t, phi_0(q))`.
#[derive(Debug, Clone)]
pub struct ExponentFlow {
    backend: FlowBackend,
    initial: InitialExponent,
}

impl ExponentFlow {
    pub fn new(backend: FlowBackend, initial: InitialExponent) -> Self {
        Self { backend, initial }
    }

    /// Fundamental solution flow (identity initial data).
    pub fn fundamental(backend: FlowBackend) -> Self {
        Self::new(backend, InitialExponent::Identity)
    }

    pub fn backend(&self) -> &FlowBackend {
        &self.backend
    }

    pub fn initial(&self) -> &InitialExponent {
        &self.initial
    }

    /// Weak-solution exponent at `(t, q)`; `q = infinity` is a legitimate
    /// argument and yields the total number.
    pub fn phi(&self, t: f64, q: f64) -> Result<f64> {
        if !(q > 0.0) {
            return Err(Error::domain(format!(
                "transform argument must be positive, got {q}"
            )));
        }
        self.backend.phi_fundamental(t, self.initial.eval(q))
    }

    /// Total number `<nu_t, 1> = Phi(t, phi_0(infinity))`.
    pub fn total_number(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        self.backend.phi_fundamental(t, self.initial.total())
    }

    /// Transform of the mass measure, `d/dq phi(t, q)`.
    ///
    /// The flow derivative satisfies
    /// `dPhi/dq(t, Q) = exp(-integral_0^t Psi'(Phi(s, Q)) ds)`, and along the
    /// flow the integrand is a total derivative of `ln Psi(Phi)`, so for the
    /// exact backends the integral evaluates to `Psi(Phi(t,Q)) / Psi(Q)`.
    /// The Euler backend integrates the representation by quadrature over
    /// its own nodes. Cross-checks against central differences live in the
    /// test suite.
    pub fn mass_transform(&self, t: f64, q: f64) -> Result<f64> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::domain(format!(
                "transform argument must be positive, got {q}"
            )));
        }
        let inner = self.initial.eval(q);
        let outer = match &self.backend {
            FlowBackend::ClosedForm(_) | FlowBackend::Exact(_) => {
                if t == 0.0 {
                    1.0
                } else {
                    let phi_t = self.backend.phi_fundamental(t, inner)?;
                    self.backend.psi(phi_t)? / self.backend.psi(inner)?
                }
            }
            FlowBackend::Euler { .. } => {
                let integral = self.ode_exponent_quadrature(t, inner)?;
                (-integral).exp()
            }
        };
        Ok(self.initial.derivative(q) * outer)
    }

    /// Quadrature of `integral_0^t Psi'(Phi(s, Q)) ds` over flow nodes.
    pub fn ode_exponent_quadrature(&self, t: f64, inner_q: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        // geometric panels resolve the fast early decay of the integrand
        let panels: Vec<f64> = {
            let mut edges = vec![0.0];
            let mut edge = (t / 256.0).min(1e-3 * t);
            while edge < t {
                edges.push(edge);
                edge *= 2.0;
            }
            edges.push(t);
            edges
        };
        let mut acc = Kahan::new();
        for pair in panels.windows(2) {
            let val = numeric::integrate_gl(
                |s| {
                    let phi = self
                        .backend
                        .phi_fundamental(s.max(1e-300), inner_q)
                        .unwrap_or(f64::NAN);
                    self.backend.psi_prime(phi).unwrap_or(f64::NAN)
                },
                pair[0],
                pair[1],
                16,
            );
            acc.add(val);
        }
        Ok(acc.value())
    }
}
