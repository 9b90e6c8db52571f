//! Augmented Lagrangian solver and the discrete KKT residual report.
//!
//! Inequalities use the Powell-Hestenes-Rockafellar shifted penalty, so
//! iterates are allowed to be infeasible. By default the states are rolled
//! out from the controls, and the inner loop minimizes the augmented
//! Lagrangian over controls and final time with projected L-BFGS. Diagonally
//! scaled gradient steps (AdaGrad, RMSProp) remain available.

use serde::{Deserialize, Serialize};

use crate::constraints::{residual_bundle, residual_vjp, BundleLayout, ResidualBundle};
use crate::dynamics;
use crate::error::{Error, Result};
use crate::transcription::{objective, objective_gradient, DecisionVector, Mode, ProblemSpec};

/// Per-coordinate step-size adaptation used by the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum StepRule {
    /// Accumulate squared gradients without decay.
    Adagrad,
    /// Exponentially decayed accumulation.
    Rmsprop { decay: f64 },
    /// Limited-memory quasi-Newton direction restricted to the free
    /// coordinates, with backtracking along the projection arc.
    Lbfgs { memory: usize },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Lbfgs { memory: 20 }
    }
}

/// How the dynamics defects enter the inner problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsHandling {
    /// States are recomputed from the controls after every step, so defects
    /// vanish by construction and their multipliers come from an adjoint pass.
    #[default]
    Rollout,
    /// Defects are carried by the augmented Lagrangian like any other row.
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    pub eta0: f64,
    pub adagrad_eps: f64,
    pub rho0: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub tol_stationarity: f64,
    pub tol_eq: f64,
    pub tol_ineq: f64,
    pub step_rule: StepRule,
    /// Clip controls into their box after every inner step.
    pub clip_controls: bool,
    pub dynamics: DynamicsHandling,
    /// Inner loop stops once the projected gradient norm drops below this.
    pub inner_tol: f64,
    /// Zero the step-size accumulators at the start of every outer iteration.
    pub reset_accumulators: bool,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer: 100,
            max_inner: 3000,
            eta0: 0.1,
            adagrad_eps: 1e-8,
            rho0: 1.0,
            rho_growth: 10.0,
            rho_max: 1e8,
            tol_stationarity: 1e-3,
            tol_eq: 1e-4,
            tol_ineq: 1e-4,
            step_rule: StepRule::default(),
            clip_controls: true,
            dynamics: DynamicsHandling::Rollout,
            inner_tol: 5e-4,
            reset_accumulators: true,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta0", self.eta0),
            ("adagrad_eps", self.adagrad_eps),
            ("rho0", self.rho0),
            ("tol_stationarity", self.tol_stationarity),
            ("tol_eq", self.tol_eq),
            ("tol_ineq", self.tol_ineq),
            ("inner_tol", self.inner_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.rho_growth > 1.0) {
            return Err(Error::config("rho_growth", "must exceed 1"));
        }
        if !(self.rho_max >= self.rho0) {
            return Err(Error::config("rho_max", "must be at least rho0"));
        }
        match self.step_rule {
            StepRule::Rmsprop { decay } if !(decay > 0.0 && decay < 1.0) => {
                return Err(Error::config("step_rule.decay", "must lie in (0, 1)"));
            }
            StepRule::Lbfgs { memory: 0 } => {
                return Err(Error::config("step_rule.memory", "must be positive"));
            }
            _ => {}
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::config("max_outer/max_inner", "must be positive"));
        }
        Ok(())
    }
}

/// Lagrange multipliers aligned with the residual bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(layout: &BundleLayout) -> Self {
        Self {
            eq: vec![0.0; layout.eq_len],
            ineq: vec![0.0; layout.ineq_len],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub objective: f64,
    pub max_eq: f64,
    pub max_ineq: f64,
    pub stationarity: f64,
    pub rho: f64,
    pub inner_iterations: usize,
}

/// Mutable solver state carried across outer iterations.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub multipliers: Multipliers,
    pub rho: f64,
    pub accumulators: Vec<f64>,
    pub iterate: DecisionVector,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity_norm: f64,
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    pub complementarity_max: f64,
    pub converged: bool,
    pub reason: String,
}

/// Tolerances used to judge a [`KktReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktTolerances {
    pub stationarity: f64,
    pub eq: f64,
    pub ineq: f64,
    pub complementarity: f64,
}

impl From<&SolverOptions> for KktTolerances {
    fn from(o: &SolverOptions) -> Self {
        Self {
            stationarity: o.tol_stationarity,
            eq: o.tol_eq,
            ineq: o.tol_ineq,
            complementarity: o.tol_stationarity,
        }
    }
}

impl Default for KktTolerances {
    fn default() -> Self {
        (&SolverOptions::default()).into()
    }
}

/// Stationarity, feasibility and complementarity of `(d, multipliers)`.
pub fn kkt_residuals(
    d: &DecisionVector,
    spec: &ProblemSpec,
    multipliers: &Multipliers,
    tol: KktTolerances,
) -> Result<KktReport> {
    let bundle = residual_bundle(d, spec)?;
    kkt_from_bundle(d, spec, multipliers, &bundle, tol)
}

fn kkt_from_bundle(
    d: &DecisionVector,
    spec: &ProblemSpec,
    multipliers: &Multipliers,
    bundle: &ResidualBundle,
    tol: KktTolerances,
) -> Result<KktReport> {
    if multipliers.eq.len() != bundle.eq.len() || multipliers.ineq.len() != bundle.ineq.len() {
        return Err(Error::contract("multipliers are not aligned with the residual bundle"));
    }
    let mut grad = objective_gradient(d, spec);
    let jt = residual_vjp(d, spec, &multipliers.eq, &multipliers.ineq)?;
    for (g, j) in grad.iter_mut().zip(&jt) {
        *g += j;
    }
    let mut mask = vec![true; d.len()];
    if let Mode::FixedTimeBaseline { .. } = spec.mode {
        mask[d.tf_index()] = false;
    }
    let stationarity_norm = grad
        .iter()
        .zip(&mask)
        .filter(|(_, free)| **free)
        .fold(0.0, |a: f64, (g, _)| a.max(g.abs()));
    let max_eq_violation = bundle.max_eq_violation();
    let max_ineq_violation = bundle.max_ineq_violation();
    let negative_mu = multipliers.ineq.iter().fold(0.0, |a: f64, m| a.max(-m));
    let complementarity_max = multipliers
        .ineq
        .iter()
        .zip(&bundle.ineq)
        .fold(0.0, |a: f64, (m, g)| a.max((m * g).abs()))
        .max(negative_mu);
    let mut failures = Vec::new();
    if !(stationarity_norm <= tol.stationarity) {
        failures.push(format!("stationarity {stationarity_norm:.3e} > {:.1e}", tol.stationarity));
    }
    if !(max_eq_violation <= tol.eq) {
        failures.push(format!("equality violation {max_eq_violation:.3e} > {:.1e}", tol.eq));
    }
    if !(max_ineq_violation <= tol.ineq) {
        failures.push(format!("inequality violation {max_ineq_violation:.3e} > {:.1e}", tol.ineq));
    }
    if !(complementarity_max <= tol.complementarity) {
        failures.push(format!(
            "complementarity {complementarity_max:.3e} > {:.1e}",
            tol.complementarity
        ));
    }
    let converged = failures.is_empty();
    Ok(KktReport {
        stationarity_norm,
        max_eq_violation,
        max_ineq_violation,
        complementarity_max,
        converged,
        reason: if converged {
            "all KKT tolerances met".to_string()
        } else {
            failures.join("; ")
        },
    })
}

/// Final result of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub decision: DecisionVector,
    pub multipliers: Multipliers,
    pub kkt: KktReport,
    pub history: Vec<HistoryEntry>,
    pub rho: f64,
}

/// Which residual rows the augmented Lagrangian carries explicitly. Rows that
/// are satisfied by construction (rollout, projection) get their multipliers
/// estimated instead.
struct Handling {
    eq_managed: Vec<bool>,
    ineq_managed: Vec<bool>,

    rollout: bool,
    clip: bool,
}

impl Handling {
    fn new(layout: &BundleLayout, spec: &ProblemSpec, opts: &SolverOptions) -> Self {
        let rollout = opts.dynamics == DynamicsHandling::Rollout;
        let mut eq_managed = vec![false; layout.eq_len];
        let mut ineq_managed = vec![false; layout.ineq_len];
        let mark = |name: &str, rows: &mut Vec<bool>| {
            if let Some(b) = layout.block(name) {
                rows[b.range.clone()].iter_mut().for_each(|r| *r = true);
            }
        };
        if rollout {
            mark("dynamics", &mut eq_managed);
            mark("initial", &mut eq_managed);
        }
        if opts.clip_controls {
            mark("control", &mut ineq_managed);
        }
        if spec.is_time_optimal() {
            mark("tf_floor", &mut ineq_managed);
        }
        Self {
            eq_managed,
            ineq_managed,
            rollout,
            clip: opts.clip_controls,
        }
    }
}

/// Entries the inner loop steps on directly.
fn free_mask(d: &DecisionVector, spec: &ProblemSpec, rollout: bool) -> Vec<bool> {
    let mut mask = vec![true; d.len()];
    if rollout {
        mask[..d.controls_offset()].iter_mut().for_each(|m| *m = false);
    }
    if let Mode::FixedTimeBaseline { .. } = spec.mode {
        mask[d.tf_index()] = false;
    }
    mask
}

/// Recomputes every state knot from `x0` and the controls.
fn rollout(d: &mut DecisionVector, spec: &ProblemSpec) {
    let dt = d.dt();
    d.state_mut(0).copy_from_slice(&spec.constraints.x0);
    for t in 0..d.intervals() {
        let next = dynamics::step_unchecked(&spec.model, d.state(t), d.control(t), dt, spec.integrator);
        d.state_mut(t + 1).copy_from_slice(&next);
    }
}

/// Folds the state part of `grad` into the controls and final time through
/// the rollout map. Returns the adjoint vectors `p_0..p_N`, one per knot.
fn reduce_through_rollout(d: &DecisionVector, spec: &ProblemSpec, grad: &mut [f64]) -> Vec<f64> {
    let (n, m, big_n) = (d.state_dim(), d.control_dim(), d.intervals());
    let dt = d.dt();
    let mut jac = dynamics::StepJacobian::zeros(n, m);
    let mut p = vec![0.0; (big_n + 1) * n];
    let last = d.state_offset(big_n);
    p[big_n * n..].copy_from_slice(&grad[last..last + n]);
    let tf_i = d.tf_index();
    for t in (0..big_n).rev() {
        let (head, tail) = p.split_at_mut((t + 1) * n);
        let next = &tail[..n];
        dynamics::step_with_jacobian_into(&spec.model, d.state(t), d.control(t), dt, spec.integrator, &mut jac);
        let xo = d.state_offset(t);
        for k in 0..n {
            let s: f64 = (0..n).map(|i| jac.dx[i * n + k] * next[i]).sum();
            head[t * n + k] = grad[xo + k] + s;
        }
        let uo = d.control_offset(t);
        for j in 0..m {
            grad[uo + j] += (0..n).map(|i| jac.du[i * m + j] * next[i]).sum::<f64>();
        }
        grad[tf_i] += (0..n).map(|i| jac.ddt[i] * next[i]).sum::<f64>() / big_n as f64;
    }
    grad[..d.controls_offset()].iter_mut().for_each(|g| *g = 0.0);
    p
}

/// Value and gradient (over the free entries) of the PHR augmented Lagrangian.
fn augmented_lagrangian(
    d: &DecisionVector,
    spec: &ProblemSpec,
    mult: &Multipliers,
    rho: f64,
    handling: &Handling,
) -> Result<(f64, Vec<f64>)> {
    let bundle = residual_bundle(d, spec)?;
    let mut value = objective(d, spec);
    let mut w_eq = vec![0.0; bundle.eq.len()];
    for i in 0..bundle.eq.len() {
        if handling.eq_managed[i] {
            continue;
        }
        let (l, c) = (mult.eq[i], bundle.eq[i]);
        value += l * c + 0.5 * rho * c * c;
        w_eq[i] = l + rho * c;
    }
    let mut w_ineq = vec![0.0; bundle.ineq.len()];
    for i in 0..bundle.ineq.len() {
        if handling.ineq_managed[i] {
            continue;
        }
        let (m, g) = (mult.ineq[i], bundle.ineq[i]);
        let shifted = (m + rho * g).max(0.0);
        value += (shifted * shifted - m * m) / (2.0 * rho);
        w_ineq[i] = shifted;
    }
    let mut grad = objective_gradient(d, spec);
    let jt = residual_vjp(d, spec, &w_eq, &w_ineq)?;
    for (g, j) in grad.iter_mut().zip(&jt) {
        *g += j;
    }
    if handling.rollout {
        reduce_through_rollout(d, spec, &mut grad);
    }
    Ok((value, grad))
}

fn project(d: &mut DecisionVector, spec: &ProblemSpec, clip: bool) {
    match &spec.mode {
        Mode::TimeOptimal => {
            if !(d.t_f() >= spec.constraints.tf_floor) {
                d.set_t_f(spec.constraints.tf_floor);
            }
        }
        Mode::FixedTimeBaseline { t_f, .. } => d.set_t_f(*t_f),
    }
    if clip {
        let c = &spec.constraints;
        for t in 0..d.intervals() {
            for (j, u) in d.control_mut(t).iter_mut().enumerate() {
                *u = u.clamp(c.u_lower[j], c.u_upper[j]);
            }
        }
    }
}

/// Infinity norm of the gradient after removing components that push into
/// an active projected bound.
fn projected_norm(d: &DecisionVector, spec: &ProblemSpec, grad: &[f64], mask: &[bool], h: &Handling) -> f64 {
    let c = &spec.constraints;
    let m = d.control_dim();
    let co = d.controls_offset();
    let tf_i = d.tf_index();
    let mut norm: f64 = 0.0;
    for (i, &g) in grad.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let blocked = if h.clip && i >= co && i < tf_i {
            let j = (i - co) % m;
            let u = d.as_slice()[i];
            (u >= c.u_upper[j] && g < 0.0) || (u <= c.u_lower[j] && g > 0.0)
        } else if i == tf_i && spec.is_time_optimal() {
            d.t_f() <= c.tf_floor && g > 0.0
        } else {
            false
        };
        if !blocked {
            norm = norm.max(g.abs());
        }
    }
    norm
}

/// Fills in multipliers of the rows the augmented Lagrangian does not carry:
/// rollout defects from the adjoint pass, projected bounds from the sign of
/// the remaining gradient.
fn estimate_managed(d: &DecisionVector, spec: &ProblemSpec, mult: &mut Multipliers, layout: &BundleLayout, h: &Handling) -> Result<()> {
    for (l, managed) in mult.eq.iter_mut().zip(&h.eq_managed) {
        if *managed {
            *l = 0.0;
        }
    }
    for (mu, managed) in mult.ineq.iter_mut().zip(&h.ineq_managed) {
        if *managed {
            *mu = 0.0;
        }
    }
    let mut grad = objective_gradient(d, spec);
    let jt = residual_vjp(d, spec, &mult.eq, &mult.ineq)?;
    for (g, j) in grad.iter_mut().zip(&jt) {
        *g += j;
    }
    if h.rollout {
        let n = d.state_dim();
        let p = reduce_through_rollout(d, spec, &mut grad);
        let dyn_r = layout.block("dynamics").unwrap().range.clone();
        for (l, pv) in mult.eq[dyn_r].iter_mut().zip(&p[n..]) {
            *l = -pv;
        }
        let init_r = layout.block("initial").unwrap().range.clone();
        for (l, pv) in mult.eq[init_r].iter_mut().zip(&p[..n]) {
            *l = -pv;
        }
    }
    let c = &spec.constraints;
    if h.clip {
        let m = d.control_dim();
        let r = layout.block("control").unwrap().range.clone();
        let mus = &mut mult.ineq[r];
        for t in 0..d.intervals() {
            for j in 0..m {
                let u = d.control(t)[j];
                let g = grad[d.control_offset(t) + j];
                let k = 2 * (t * m + j);
                if u >= c.u_upper[j] && g < 0.0 {
                    mus[k] = -g;
                } else if u <= c.u_lower[j] && g > 0.0 {
                    mus[k + 1] = g;
                }
            }
        }
    }
    if spec.is_time_optimal() {
        let g = grad[d.tf_index()];
        if d.t_f() <= c.tf_floor && g > 0.0 {
            mult.ineq[layout.block("tf_floor").unwrap().range.start] = g;
        }
    }
    Ok(())
}

struct InnerContext<'a> {
    spec: &'a ProblemSpec,
    opts: &'a SolverOptions,
    handling: &'a Handling,
    mask: &'a [bool],
    outer: usize,
}

impl InnerContext<'_> {
    fn evaluate(&self, d: &DecisionVector, state: &SolverState, inner: usize) -> Result<(f64, Vec<f64>)> {
        let (value, grad) = augmented_lagrangian(d, self.spec, &state.multipliers, state.rho, self.handling)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                outer: self.outer,
                inner,
                reason: "non-finite augmented Lagrangian or gradient".to_string(),
                last_finite: state.iterate.as_slice().to_vec(),
            });
        }
        Ok((value, grad))
    }

    fn settle(&self, d: &mut DecisionVector) {
        project(d, self.spec, self.handling.clip);
        if self.handling.rollout {
            rollout(d, self.spec);
        }
    }
}

/// Diagonally scaled sub-gradient steps. Returns the number of steps taken.
fn inner_adaptive(ctx: &InnerContext, state: &mut SolverState) -> Result<usize> {
    let opts = ctx.opts;
    for inner in 0..opts.max_inner {
        let (_, grad) = ctx.evaluate(&state.iterate, state, inner)?;
        if projected_norm(&state.iterate, ctx.spec, &grad, ctx.mask, ctx.handling) <= opts.inner_tol {
            return Ok(inner);
        }
        let z = state.iterate.as_mut_slice();
        for i in 0..z.len() {
            if !ctx.mask[i] {
                continue;
            }
            let g = grad[i];
            let acc = &mut state.accumulators[i];
            match opts.step_rule {
                StepRule::Rmsprop { decay } => *acc = decay * *acc + (1.0 - decay) * g * g,
                _ => *acc += g * g,
            }
            z[i] -= opts.eta0 * g / (*acc + opts.adagrad_eps).sqrt();
        }
        ctx.settle(&mut state.iterate);
    }
    Ok(opts.max_inner)
}

/// Coordinates held at an active bound with the gradient pushing outward.
fn pinned(d: &DecisionVector, spec: &ProblemSpec, grad: &[f64], mask: &[bool], h: &Handling) -> Vec<bool> {
    let c = &spec.constraints;
    let m = d.control_dim();
    let co = d.controls_offset();
    let tf_i = d.tf_index();
    (0..d.len())
        .map(|i| {
            if !mask[i] {
                return true;
            }
            let g = grad[i];
            if h.clip && i >= co && i < tf_i {
                let j = (i - co) % m;
                let u = d.as_slice()[i];
                (u >= c.u_upper[j] && g < 0.0) || (u <= c.u_lower[j] && g > 0.0)
            } else if i == tf_i && spec.is_time_optimal() {
                d.t_f() <= c.tf_floor && g > 0.0
            } else {
                false
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected limited-memory BFGS. Returns the number of accepted steps.
fn inner_lbfgs(ctx: &InnerContext, state: &mut SolverState, memory: usize) -> Result<usize> {
    let opts = ctx.opts;
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let (mut value, mut grad) = ctx.evaluate(&state.iterate, state, 0)?;
    for inner in 0..opts.max_inner {
        let fixed = pinned(&state.iterate, ctx.spec, &grad, ctx.mask, ctx.handling);
        let pg: Vec<f64> = grad
            .iter()
            .zip(&fixed)
            .map(|(g, f)| if *f { 0.0 } else { *g })
            .collect();
        if pg.iter().fold(0.0f64, |a, g| a.max(g.abs())) <= opts.inner_tol {
            return Ok(inner);
        }
        // two-loop recursion on the free coordinates
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, r) in pairs.iter().rev() {
            let a = r * dot(s, &q);
            for ((qi, yi), f) in q.iter_mut().zip(y).zip(&fixed) {
                if !*f {
                    *qi -= a * yi;
                }
            }
            alphas.push(a);
        }
        let scale = pairs
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| opts.eta0 / pg.iter().fold(0.0f64, |a, g| a.max(g.abs())));
        q.iter_mut().for_each(|v| *v *= scale);
        for ((s, y, r), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = r * dot(y, &q);
            for ((qi, si), f) in q.iter_mut().zip(s).zip(&fixed) {
                if !*f {
                    *qi += (a - b) * si;
                }
            }
        }
        let mut dir: Vec<f64> = q.iter().zip(&fixed).map(|(v, f)| if *f { 0.0 } else { -v }).collect();
        if dot(&dir, &pg) >= 0.0 {
            pairs.clear();
            let s = opts.eta0 / pg.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            dir = pg.iter().map(|g| -s * g).collect();
        }
        // backtracking along the projection arc
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = state.iterate.clone();
            for ((z, di), free) in trial.as_mut_slice().iter_mut().zip(&dir).zip(ctx.mask) {
                if *free {
                    *z += step * di;
                }
            }
            ctx.settle(&mut trial);
            let moved: Vec<f64> = trial
                .as_slice()
                .iter()
                .zip(state.iterate.as_slice())
                .zip(ctx.mask)
                .map(|((a, b), free)| if *free { a - b } else { 0.0 })
                .collect();
            let decrease = dot(&grad, &moved);
            let (tv, tg) = augmented_lagrangian(&trial, ctx.spec, &state.multipliers, state.rho, ctx.handling)?;
            if !tv.is_finite() || tg.iter().any(|g| !g.is_finite()) {
                step *= 0.5;
                continue;
            }
            if tv <= value + 1e-4 * decrease && decrease < 0.0 {
                accepted = Some((trial, tv, tg, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, tv, tg, s)) = accepted else {
            if !pairs.is_empty() {
                pairs.clear();
                continue;
            }
            return Ok(inner);
        };
        let y: Vec<f64> = tg.iter().zip(&grad).zip(ctx.mask).map(|((a, b), f)| if *f { a - b } else { 0.0 }).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        state.iterate = trial;
        value = tv;
        grad = tg;
    }
    Ok(opts.max_inner)
}

/// Runs the augmented Lagrangian method from `init`.
pub fn solve(spec: &ProblemSpec, opts: &SolverOptions, init: DecisionVector) -> Result<SolveResult> {
    spec.validate()?;
    opts.validate()?;
    spec.check_decision(&init)?;
    let layout = BundleLayout::new(spec);
    let handling = Handling::new(&layout, spec, opts);
    let tol = KktTolerances::from(opts);
    let mut iterate = init;
    project(&mut iterate, spec, opts.clip_controls);
    if handling.rollout {
        rollout(&mut iterate, spec);
    }
    let mask = free_mask(&iterate, spec, handling.rollout);
    let mut state = SolverState {
        multipliers: Multipliers::zeros(&layout),
        rho: opts.rho0,
        accumulators: vec![0.0; iterate.len()],
        iterate,
        history: Vec::new(),
    };
    let mut prev_violation = f64::INFINITY;
    let mut last_report = None;

    for outer in 0..opts.max_outer {
        if opts.reset_accumulators {
            state.accumulators.iter_mut().for_each(|a| *a = 0.0);
        }
        let ctx = InnerContext {
            spec,
            opts,
            handling: &handling,
            mask: &mask,
            outer,
        };
        let inner_done = match opts.step_rule {
            StepRule::Lbfgs { memory } => inner_lbfgs(&ctx, &mut state, memory)?,
            _ => inner_adaptive(&ctx, &mut state)?,
        };
        let bundle = residual_bundle(&state.iterate, spec)?;
        for i in 0..bundle.eq.len() {
            if !handling.eq_managed[i] {
                state.multipliers.eq[i] += state.rho * bundle.eq[i];
            }
        }
        for i in 0..bundle.ineq.len() {
            if !handling.ineq_managed[i] {
                let mu = &mut state.multipliers.ineq[i];
                *mu = (*mu + state.rho * bundle.ineq[i]).max(0.0);
            }
        }
        estimate_managed(&state.iterate, spec, &mut state.multipliers, &layout, &handling)?;
        let report = kkt_from_bundle(&state.iterate, spec, &state.multipliers, &bundle, tol)?;
        let violation = bundle.max_violation();
        state.history.push(HistoryEntry {
            iteration: outer,
            objective: objective(&state.iterate, spec),
            max_eq: report.max_eq_violation,
            max_ineq: report.max_ineq_violation,
            stationarity: report.stationarity_norm,
            rho: state.rho,
            inner_iterations: inner_done,
        });
        let converged = report.converged;
        let feasible = report.max_eq_violation <= tol.eq && report.max_ineq_violation <= tol.ineq;
        last_report = Some(report);
        if converged {
            break;
        }
        if !feasible && violation > 0.25 * prev_violation {
            state.rho = (state.rho * opts.rho_growth).min(opts.rho_max);
        }
        prev_violation = violation;
    }

    let mut kkt = last_report.expect("at least one outer iteration");
    if !kkt.converged {
        kkt.reason = format!("iteration cap reached: {}", kkt.reason);
    }
    Ok(SolveResult {
        decision: state.iterate,
        multipliers: state.multipliers,
        kkt,
        history: state.history,
        rho: state.rho,
    })
}
