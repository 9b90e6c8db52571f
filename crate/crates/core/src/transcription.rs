//! Direct transcription of the minimum-time ergodic problem: decision
//! layout, problem description, objective, initial guesses and the full
//! gradient assembly used by the solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::{self, ConstraintSet};
use crate::distributions::PhiCoefficients;
use crate::dynamics::{DynamicsModel, IntegratorKind};
use crate::ergodic::{self, BasisSet, KnotView, Workspace};
use crate::error::{Error, Result};

/// Knot states `x_0..x_N`, controls `u_0..u_{N-1}` and the final time,
/// stored flat as `[x_0 .. x_N | u_0 .. u_{N-1} | t_f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    state_dim: usize,
    control_dim: usize,
    intervals: usize,
    data: Vec<f64>,
}

impl DecisionVector {
    pub fn zeros(state_dim: usize, control_dim: usize, intervals: usize) -> Self {
        let len = (intervals + 1) * state_dim + intervals * control_dim + 1;
        Self {
            state_dim,
            control_dim,
            intervals,
            data: vec![0.0; len],
        }
    }

    pub fn from_flat(
        state_dim: usize,
        control_dim: usize,
        intervals: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let len = (intervals + 1) * state_dim + intervals * control_dim + 1;
        if data.len() != len {
            return Err(Error::contract(format!(
                "flat decision has {} entries, expected {len}",
                data.len()
            )));
        }
        Ok(Self {
            state_dim,
            control_dim,
            intervals,
            data,
        })
    }

    /// Builds a decision from per-knot rows.
    pub fn from_knots(states: &[Vec<f64>], controls: &[Vec<f64>], t_f: f64) -> Result<Self> {
        let intervals = controls.len();
        if states.len() != intervals + 1 || intervals == 0 {
            return Err(Error::contract("need N >= 1 controls and N + 1 states"));
        }
        let n = states[0].len();
        let m = controls[0].len();
        if states.iter().any(|s| s.len() != n) || controls.iter().any(|c| c.len() != m) {
            return Err(Error::contract("ragged knot rows"));
        }
        let mut data: Vec<f64> = states.concat();
        data.extend(controls.concat());
        data.push(t_f);
        Self::from_flat(n, m, intervals, data)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn states(&self) -> &[f64] {
        &self.data[..self.controls_offset()]
    }

    pub fn controls(&self) -> &[f64] {
        &self.data[self.controls_offset()..self.tf_index()]
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.data[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn state_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.state_dim;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn control(&self, t: usize) -> &[f64] {
        let o = self.controls_offset() + t * self.control_dim;
        &self.data[o..o + self.control_dim]
    }

    pub fn control_mut(&mut self, t: usize) -> &mut [f64] {
        let o = self.controls_offset() + t * self.control_dim;
        let m = self.control_dim;
        &mut self.data[o..o + m]
    }

    pub fn t_f(&self) -> f64 {
        self.data[self.tf_index()]
    }

    pub fn set_t_f(&mut self, t_f: f64) {
        let i = self.tf_index();
        self.data[i] = t_f;
    }

    /// `t_f / N`; never stored separately.
    pub fn dt(&self) -> f64 {
        self.t_f() / self.intervals as f64
    }

    pub fn state_offset(&self, t: usize) -> usize {
        t * self.state_dim
    }

    pub fn controls_offset(&self) -> usize {
        (self.intervals + 1) * self.state_dim
    }

    pub fn control_offset(&self, t: usize) -> usize {
        self.controls_offset() + t * self.control_dim
    }

    pub fn tf_index(&self) -> usize {
        self.data.len() - 1
    }

    pub fn state_rows(&self) -> Vec<Vec<f64>> {
        self.states().chunks(self.state_dim).map(|c| c.to_vec()).collect()
    }

    pub fn control_rows(&self) -> Vec<Vec<f64>> {
        self.controls().chunks(self.control_dim).map(|c| c.to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Mode {
    /// Minimize `t_f` subject to the ergodic upper bound.
    TimeOptimal,
    /// Fixed horizon; minimize the ergodic metric plus `sum u^T R u dt`.
    FixedTimeBaseline { t_f: f64, r_diag: Vec<f64> },
}

/// Everything needed to evaluate the transcribed program.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub model: DynamicsModel,
    pub ws: Workspace,
    pub basis: BasisSet,
    pub phi: PhiCoefficients,
    pub constraints: ConstraintSet,
    pub intervals: usize,
    pub integrator: IntegratorKind,
    pub mode: Mode,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.model.state_dim(), self.model.control_dim());
        if self.intervals < 2 {
            return Err(Error::contract("need at least N = 2 intervals"));
        }
        if self.model.position_indices().len() != self.ws.dims() {
            return Err(Error::contract("position selector does not match workspace dimensions"));
        }
        if self.basis.dims() != self.ws.dims() || self.phi.values.len() != self.basis.len() {
            return Err(Error::contract("basis, workspace and phi coefficients disagree"));
        }
        self.constraints.validate(n, m, self.ws.dims(), matches!(self.mode, Mode::TimeOptimal))?;
        if let Mode::FixedTimeBaseline { t_f, r_diag } = &self.mode {
            if !(t_f.is_finite() && *t_f > 0.0) {
                return Err(Error::contract("fixed-time baseline needs a positive horizon"));
            }
            if r_diag.len() != m || r_diag.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(Error::contract(format!(
                    "control penalty needs {m} nonnegative diagonal entries"
                )));
            }
        }
        Ok(())
    }

    pub fn check_decision(&self, d: &DecisionVector) -> Result<()> {
        if d.state_dim() != self.model.state_dim()
            || d.control_dim() != self.model.control_dim()
            || d.intervals() != self.intervals
        {
            return Err(Error::contract(format!(
                "decision shape ({}, {}, N={}) does not match problem ({}, {}, N={})",
                d.state_dim(),
                d.control_dim(),
                d.intervals(),
                self.model.state_dim(),
                self.model.control_dim(),
                self.intervals
            )));
        }
        Ok(())
    }

    pub fn is_time_optimal(&self) -> bool {
        matches!(self.mode, Mode::TimeOptimal)
    }

    /// Time-optimal with a finite ergodic bound.
    pub fn has_ergodic_row(&self) -> bool {
        self.is_time_optimal() && self.constraints.gamma.is_finite()
    }

    pub fn knot_view<'a>(&'a self, d: &'a DecisionVector) -> KnotView<'a> {
        KnotView::new(d.states(), d.state_dim(), self.model.position_indices())
    }

    /// Discrete ergodic metric of the decision (knots `0..N`, no workspace check).
    pub fn ergodic_metric(&self, d: &DecisionVector) -> f64 {
        let view = self.knot_view(d);
        let c = ergodic::coefficients_unchecked(&view, &self.ws, &self.basis, self.intervals);
        ergodic::ergodic_metric(&c, &self.phi.values, &self.basis)
            .expect("basis and coefficients are aligned by validation")
    }
}

/// `t_f` in time-optimal mode; metric plus control effort in the baseline.
pub fn objective(d: &DecisionVector, spec: &ProblemSpec) -> f64 {
    match &spec.mode {
        Mode::TimeOptimal => d.t_f(),
        Mode::FixedTimeBaseline { r_diag, .. } => {
            spec.ergodic_metric(d) + control_effort(d, r_diag) * d.dt()
        }
    }
}

fn control_effort(d: &DecisionVector, r_diag: &[f64]) -> f64 {
    (0..d.intervals())
        .map(|t| {
            d.control(t)
                .iter()
                .zip(r_diag)
                .map(|(u, r)| r * u * u)
                .sum::<f64>()
        })
        .sum()
}

/// Gradient of [`objective`] over the whole decision vector.
pub fn objective_gradient(d: &DecisionVector, spec: &ProblemSpec) -> Vec<f64> {
    let mut grad = vec![0.0; d.len()];
    match &spec.mode {
        Mode::TimeOptimal => grad[d.tf_index()] = 1.0,
        Mode::FixedTimeBaseline { r_diag, .. } => {
            let view = spec.knot_view(d);
            let (_, g) = ergodic::metric_and_gradient(
                &view,
                &spec.ws,
                &spec.basis,
                &spec.phi.values,
                spec.intervals,
            )
            .expect("aligned by validation");
            grad[..g.len()].copy_from_slice(&g);
            let dt = d.dt();
            for t in 0..d.intervals() {
                let o = d.control_offset(t);
                for (j, r) in r_diag.iter().enumerate() {
                    grad[o + j] = 2.0 * r * d.control(t)[j] * dt;
                }
            }
            grad[d.tf_index()] = control_effort(d, r_diag) / d.intervals() as f64;
        }
    }
    grad
}

/// Objective gradient and the residual vector-Jacobian product `J^T w`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_objective: Vec<f64>,
    pub residual_vjp: Vec<f64>,
}

/// Assembles `grad f` and `J_eq^T w_eq + J_ineq^T w_ineq`.
pub fn gradients(
    d: &DecisionVector,
    spec: &ProblemSpec,
    w_eq: &[f64],
    w_ineq: &[f64],
) -> Result<Gradients> {
    spec.check_decision(d)?;
    Ok(Gradients {
        d_objective: objective_gradient(d, spec),
        residual_vjp: constraints::residual_vjp(d, spec, w_eq, w_ineq)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum GuessShape {
    #[default]
    Lerp,
    LerpNoise {
        sigma: f64,
    },
    Sinusoid,
    UniformRandom,
}

/// Initial decision: states from `x0` to `xf`, zero controls, `t_f = tf_init`.
pub fn initial_guess(
    spec: &ProblemSpec,
    tf_init: f64,
    shape: GuessShape,
    seed: u64,
) -> Result<DecisionVector> {
    if !(tf_init.is_finite() && tf_init > 0.0) {
        return Err(Error::contract(format!("tf_init must be positive, got {tf_init}")));
    }
    let (n, m, big_n) = (spec.model.state_dim(), spec.model.control_dim(), spec.intervals);
    let x0 = &spec.constraints.x0;
    let xf = &spec.constraints.xf;
    let mut d = DecisionVector::zeros(n, m, big_n);
    for t in 0..=big_n {
        let s = t as f64 / big_n as f64;
        for (i, x) in d.state_mut(t).iter_mut().enumerate() {
            *x = x0[i] + s * (xf[i] - x0[i]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = spec.model.position_indices().to_vec();
    match shape {
        GuessShape::Lerp => {}
        GuessShape::LerpNoise { sigma } => {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::contract("noise sigma must be nonnegative"));
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::contract(e.to_string()))?;
            for t in 1..big_n {
                for x in d.state_mut(t) {
                    *x += normal.sample(&mut rng);
                }
            }
        }
        GuessShape::Sinusoid => {
            let axis = pos.len() - 1;
            let amp = 0.25 * spec.ws.lengths()[axis];
            for t in 0..=big_n {
                let s = t as f64 / big_n as f64;
                let x = d.state_mut(t);
                let shifted = x[pos[axis]] + amp * (2.0 * std::f64::consts::PI * s).sin();
                x[pos[axis]] = shifted.clamp(spec.ws.lower(axis), spec.ws.upper(axis));
            }
        }
        GuessShape::UniformRandom => {
            for t in 1..big_n {
                let x = d.state_mut(t);
                for (axis, &i) in pos.iter().enumerate() {
                    x[i] = spec.ws.lower(axis) + rng.random::<f64>() * spec.ws.lengths()[axis];
                }
            }
        }
    }
    let tf = match &spec.mode {
        Mode::TimeOptimal => tf_init,
        Mode::FixedTimeBaseline { t_f, .. } => *t_f,
    };
    d.set_t_f(tf);
    Ok(d)
}

/// Rolls controls forward from `x0` with the problem's integrator.
pub fn forward_simulate(
    spec: &ProblemSpec,
    controls: &[Vec<f64>],
    t_f: f64,
) -> Result<DecisionVector> {
    if controls.len() != spec.intervals {
        return Err(Error::contract("need one control per interval"));
    }
    let dt = t_f / spec.intervals as f64;
    let mut states = vec![spec.constraints.x0.clone()];
    for u in controls {
        let next = crate::dynamics::step(&spec.model, states.last().unwrap(), u, dt, spec.integrator)?;
        states.push(next);
    }
    DecisionVector::from_knots(&states, controls, t_f)
}
