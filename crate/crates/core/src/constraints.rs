//! Constraint residuals of the transcribed program and their vector-Jacobian
//! products: dynamics defects, boundary states, control boxes, workspace
//! containment, discrete barrier constraints, the ergodic bound and the
//! final-time floor.
//!
//! Equalities are reported as `c(z) = 0`, inequalities as `g(z) <= 0`.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, step_with_jacobian, DynamicsModel, IntegratorKind};
use crate::ergodic;
use crate::error::{Error, Result};
use crate::par;
use crate::transcription::{DecisionVector, ProblemSpec};

/// Box obstacle with rounded corners, described by its centre, per-axis
/// half-extents and a world-to-body rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    center: Vec<f64>,
    half_extents: Vec<f64>,
    /// Row-major `v x v`, maps world offsets into the obstacle frame.
    rotation: Vec<f64>,
}

impl Obstacle {
    pub fn new(center: Vec<f64>, half_extents: Vec<f64>, rotation: Vec<f64>) -> Result<Self> {
        let v = center.len();
        if v == 0 || half_extents.len() != v || rotation.len() != v * v {
            return Err(Error::contract("obstacle dimensions are inconsistent"));
        }
        if half_extents.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::contract("obstacle half-extents must be positive"));
        }
        for i in 0..v {
            for j in 0..v {
                let dot: f64 = (0..v).map(|k| rotation[i * v + k] * rotation[j * v + k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-9 {
                    return Err(Error::contract("obstacle rotation is not orthonormal"));
                }
            }
        }
        Ok(Self {
            center,
            half_extents,
            rotation,
        })
    }

    pub fn axis_aligned(center: Vec<f64>, half_extents: Vec<f64>) -> Result<Self> {
        let v = center.len();
        let mut rotation = vec![0.0; v * v];
        for i in 0..v {
            rotation[i * v + i] = 1.0;
        }
        Self::new(center, half_extents, rotation)
    }

    /// Planar obstacle rotated counter-clockwise by `angle` radians.
    pub fn planar(center: [f64; 2], half_extents: [f64; 2], angle: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Self::new(center.to_vec(), half_extents.to_vec(), vec![c, s, -s, c])
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn half_extents(&self) -> &[f64] {
        &self.half_extents
    }

    pub fn rotation(&self) -> &[f64] {
        &self.rotation
    }

    pub fn dims(&self) -> usize {
        self.center.len()
    }

    /// Scaled body-frame offset `D R (p - c)`.
    fn body(&self, p: &[f64]) -> Vec<f64> {
        let v = self.dims();
        (0..v)
            .map(|i| {
                let r: f64 = (0..v)
                    .map(|k| self.rotation[i * v + k] * (p[k] - self.center[k]))
                    .sum();
                r / self.half_extents[i]
            })
            .collect()
    }
}

/// `||D R (p - c)||_4 - 1`: positive outside, zero on the rounded surface,
/// `-1` at the centre.
pub fn l4_barrier(obs: &Obstacle, p: &[f64]) -> f64 {
    let d = obs.body(p);
    d.iter().map(|x| x.powi(4)).sum::<f64>().powf(0.25) - 1.0
}

/// Barrier value and gradient in `p`. The gradient is taken as zero at the
/// centre, where the norm is not differentiable.
pub fn l4_barrier_gradient(obs: &Obstacle, p: &[f64]) -> (f64, Vec<f64>) {
    let v = obs.dims();
    let d = obs.body(p);
    let s: f64 = d.iter().map(|x| x.powi(4)).sum();
    let norm = s.powf(0.25);
    let mut grad = vec![0.0; v];
    if norm > 0.0 {
        let n3 = norm * norm * norm;
        for (i, di) in d.iter().enumerate() {
            let dn = di.powi(3) / n3 / obs.half_extents[i];
            for (k, g) in grad.iter_mut().enumerate() {
                *g += dn * obs.rotation[i * v + k];
            }
        }
    }
    (norm - 1.0, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfParams {
    pub alpha: f64,
}

impl CbfParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::contract(format!("CBF alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

impl Default for CbfParams {
    fn default() -> Self {
        Self { alpha: 0.1 }
    }
}

/// `h(g(step(x, u))) - h(g(x)) + alpha h(g(x))`; feasible when `>= 0`.
pub fn cbf_residual(
    obs: &Obstacle,
    x_t: &[f64],
    u_t: &[f64],
    model: &DynamicsModel,
    dt: f64,
    cbf: CbfParams,
    scheme: IntegratorKind,
) -> Result<f64> {
    let next = dynamics::step(model, x_t, u_t, dt, scheme)?;
    if obs.dims() != model.position_indices().len() {
        return Err(Error::contract("obstacle and position dimensions differ"));
    }
    let h_now = l4_barrier(obs, &model.position_of(x_t));
    let h_next = l4_barrier(obs, &model.position_of(&next));
    Ok(h_next - h_now + cbf.alpha * h_now)
}

/// User-supplied residual block appended after the built-in ones.
pub trait ResidualHook: Send + Sync {
    fn name(&self) -> &str;
    fn is_equality(&self) -> bool;
    fn len(&self, spec: &ProblemSpec) -> usize;
    fn eval(&self, d: &DecisionVector, spec: &ProblemSpec, out: &mut [f64]);
    /// Accumulates `J^T weights` into `grad`.
    fn vjp(&self, d: &DecisionVector, spec: &ProblemSpec, weights: &[f64], grad: &mut [f64]);
}

/// Constraint data of the program.
#[derive(Clone)]
pub struct ConstraintSet {
    /// Ergodic upper bound; only read in time-optimal mode. Infinite drops the row.
    pub gamma: f64,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
    pub cbf: CbfParams,
    pub tf_floor: f64,
    /// `x_N = x_f`; on by default.
    pub enforce_terminal: bool,
    pub hooks: Vec<Arc<dyn ResidualHook>>,
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("gamma", &self.gamma)
            .field("u_lower", &self.u_lower)
            .field("u_upper", &self.u_upper)
            .field("x0", &self.x0)
            .field("xf", &self.xf)
            .field("obstacles", &self.obstacles)
            .field("cbf", &self.cbf)
            .field("tf_floor", &self.tf_floor)
            .field("enforce_terminal", &self.enforce_terminal)
            .field("hooks", &self.hooks.iter().map(|h| h.name().to_string()).collect::<Vec<_>>())
            .finish()
    }
}

impl ConstraintSet {
    /// Symmetric control box `|u_j| <= u_max`.
    pub fn new(gamma: f64, u_max: f64, m: usize, x0: Vec<f64>, xf: Vec<f64>) -> Self {
        Self {
            gamma,
            u_lower: vec![-u_max; m],
            u_upper: vec![u_max; m],
            x0,
            xf,
            obstacles: Vec::new(),
            cbf: CbfParams::default(),
            tf_floor: 0.01,
            enforce_terminal: true,
            hooks: Vec::new(),
        }
    }

    pub(crate) fn validate(&self, n: usize, m: usize, v: usize, uses_gamma: bool) -> Result<()> {
        if uses_gamma && !(self.gamma > 0.0) {
            return Err(Error::contract(format!(
                "gamma must be positive (infinite disables the bound), got {}",
                self.gamma
            )));
        }
        if !(self.tf_floor.is_finite() && self.tf_floor > 0.0) {
            return Err(Error::contract("tf_floor must be positive"));
        }
        if self.u_lower.len() != m || self.u_upper.len() != m {
            return Err(Error::contract(format!("control bounds need {m} entries")));
        }
        if self
            .u_lower
            .iter()
            .zip(&self.u_upper)
            .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
        {
            return Err(Error::contract("control bounds must be finite with lower <= upper"));
        }
        if self.x0.len() != n || self.xf.len() != n {
            return Err(Error::contract(format!("boundary states need {n} entries")));
        }
        if self.obstacles.iter().any(|o| o.dims() != v) {
            return Err(Error::contract("obstacle dimension differs from workspace"));
        }
        CbfParams::new(self.cbf.alpha)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Equality,
    Inequality,
}

/// A named contiguous range of residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub range: Range<usize>,
}

/// Residual ordering.
///
/// Equalities: `dynamics` (`x_{t+1} - step(x_t, u_t)`, `t = 0..N`, `n` each),
/// `initial` (`x_0 - x0`), `terminal` (`x_N - xf`, when enforced), then hooks.
///
/// Inequalities: `control` (per knot and component: `u - hi`, `lo - u`),
/// `workspace` (per knot `0..=N` and axis: `lo - p`, `p - hi`), `cbf` (per
/// obstacle, per knot `0..N`: minus the barrier residual), then in
/// time-optimal mode `ergodic` (`E - gamma`, finite gamma only) and `tf_floor` (`floor - t_f`),
/// then hooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleLayout {
    pub blocks: Vec<Block>,
    pub eq_len: usize,
    pub ineq_len: usize,
}

impl BundleLayout {
    pub fn new(spec: &ProblemSpec) -> Self {
        let (n, m, big_n, v) = (
            spec.model.state_dim(),
            spec.model.control_dim(),
            spec.intervals,
            spec.ws.dims(),
        );
        let mut blocks = Vec::new();
        let mut eq = 0;
        let mut ineq = 0;
        let mut push = |name: &str, kind: BlockKind, len: usize| {
            let cursor = match kind {
                BlockKind::Equality => &mut eq,
                BlockKind::Inequality => &mut ineq,
            };
            blocks.push(Block {
                name: name.to_string(),
                kind,
                range: *cursor..*cursor + len,
            });
            *cursor += len;
        };
        push("dynamics", BlockKind::Equality, big_n * n);
        push("initial", BlockKind::Equality, n);
        if spec.constraints.enforce_terminal {
            push("terminal", BlockKind::Equality, n);
        }
        for hook in spec.constraints.hooks.iter().filter(|h| h.is_equality()) {
            push(&format!("hook:{}", hook.name()), BlockKind::Equality, hook.len(spec));
        }
        push("control", BlockKind::Inequality, big_n * m * 2);
        push("workspace", BlockKind::Inequality, (big_n + 1) * v * 2);
        push("cbf", BlockKind::Inequality, spec.constraints.obstacles.len() * big_n);
        if spec.has_ergodic_row() {
            push("ergodic", BlockKind::Inequality, 1);
        }
        if spec.is_time_optimal() {
            push("tf_floor", BlockKind::Inequality, 1);
        }
        for hook in spec.constraints.hooks.iter().filter(|h| !h.is_equality()) {
            push(&format!("hook:{}", hook.name()), BlockKind::Inequality, hook.len(spec));
        }
        Self {
            blocks,
            eq_len: eq,
            ineq_len: ineq,
        }
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBundle {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub layout: BundleLayout,
}

impl ResidualBundle {
    pub fn max_eq_violation(&self) -> f64 {
        self.eq.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn max_ineq_violation(&self) -> f64 {
        self.ineq.iter().fold(0.0, |a, v| a.max(*v))
    }

    pub fn max_violation(&self) -> f64 {
        self.max_eq_violation().max(self.max_ineq_violation())
    }

    /// Largest violation per named block.
    pub fn block_violations(&self) -> Vec<(String, f64)> {
        self.layout
            .blocks
            .iter()
            .map(|b| {
                let worst = match b.kind {
                    BlockKind::Equality => self.eq[b.range.clone()]
                        .iter()
                        .fold(0.0, |a: f64, v| a.max(v.abs())),
                    BlockKind::Inequality => {
                        self.ineq[b.range.clone()].iter().fold(0.0, |a: f64, v| a.max(*v))
                    }
                };
                (b.name.clone(), worst)
            })
            .collect()
    }

    pub fn block_values(&self, name: &str) -> Option<&[f64]> {
        let b = self.layout.block(name)?;
        Some(match b.kind {
            BlockKind::Equality => &self.eq[b.range.clone()],
            BlockKind::Inequality => &self.ineq[b.range.clone()],
        })
    }
}

/// Evaluates every residual of the program.
pub fn residual_bundle(d: &DecisionVector, spec: &ProblemSpec) -> Result<ResidualBundle> {
    spec.check_decision(d)?;
    let layout = BundleLayout::new(spec);
    let (n, m, big_n) = (spec.model.state_dim(), spec.model.control_dim(), spec.intervals);
    let c = &spec.constraints;
    let dt = d.dt();
    let mut eq = vec![0.0; layout.eq_len];
    let mut ineq = vec![0.0; layout.ineq_len];

    let dyn_block = layout.block("dynamics").unwrap().range.clone();
    par::for_each_chunk(&mut eq[dyn_block], n, |t, out| {
        let next = dynamics::step_unchecked(&spec.model, d.state(t), d.control(t), dt, spec.integrator);
        for i in 0..n {
            out[i] = d.state(t + 1)[i] - next[i];
        }
    });
    let r = layout.block("initial").unwrap().range.clone();
    for (i, e) in eq[r].iter_mut().enumerate() {
        *e = d.state(0)[i] - c.x0[i];
    }
    if let Some(b) = layout.block("terminal") {
        for (i, e) in eq[b.range.clone()].iter_mut().enumerate() {
            *e = d.state(big_n)[i] - c.xf[i];
        }
    }

    let r = layout.block("control").unwrap().range.clone();
    for (k, g) in ineq[r].chunks_mut(2).enumerate() {
        let (t, j) = (k / m, k % m);
        let u = d.control(t)[j];
        g[0] = u - c.u_upper[j];
        g[1] = c.u_lower[j] - u;
    }
    let r = layout.block("workspace").unwrap().range.clone();
    let v = spec.ws.dims();
    for (k, g) in ineq[r].chunks_mut(2).enumerate() {
        let (t, axis) = (k / v, k % v);
        let p = d.state(t)[spec.model.position_indices()[axis]];
        g[0] = spec.ws.lower(axis) - p;
        g[1] = p - spec.ws.upper(axis);
    }
    let r = layout.block("cbf").unwrap().range.clone();
    if !c.obstacles.is_empty() {
        let alpha = c.cbf.alpha;
        par::for_each_chunk(&mut ineq[r], big_n, |o, out| {
            let obs = &c.obstacles[o];
            for (t, g) in out.iter_mut().enumerate() {
                let next = dynamics::step_unchecked(&spec.model, d.state(t), d.control(t), dt, spec.integrator);
                let h_now = l4_barrier(obs, &spec.model.position_of(d.state(t)));
                let h_next = l4_barrier(obs, &spec.model.position_of(&next));
                *g = -(h_next - (1.0 - alpha) * h_now);
            }
        });
    }
    if let Some(b) = layout.block("ergodic") {
        ineq[b.range.start] = spec.ergodic_metric(d) - c.gamma;
    }
    if let Some(b) = layout.block("tf_floor") {
        ineq[b.range.start] = c.tf_floor - d.t_f();
    }
    for hook in &c.hooks {
        let b = layout.block(&format!("hook:{}", hook.name())).unwrap();
        let out = match b.kind {
            BlockKind::Equality => &mut eq[b.range.clone()],
            BlockKind::Inequality => &mut ineq[b.range.clone()],
        };
        hook.eval(d, spec, out);
    }
    let _ = m;
    Ok(ResidualBundle { eq, ineq, layout })
}

/// `J_eq^T w_eq + J_ineq^T w_ineq` over the whole decision vector.
pub fn residual_vjp(
    d: &DecisionVector,
    spec: &ProblemSpec,
    w_eq: &[f64],
    w_ineq: &[f64],
) -> Result<Vec<f64>> {
    spec.check_decision(d)?;
    let layout = BundleLayout::new(spec);
    if w_eq.len() != layout.eq_len || w_ineq.len() != layout.ineq_len {
        return Err(Error::contract(format!(
            "weights ({}, {}) do not match residual sizes ({}, {})",
            w_eq.len(),
            w_ineq.len(),
            layout.eq_len,
            layout.ineq_len
        )));
    }
    let (n, m, big_n) = (spec.model.state_dim(), spec.model.control_dim(), spec.intervals);
    let c = &spec.constraints;
    let dt = d.dt();
    let tf_i = d.tf_index();
    let mut grad = vec![0.0; d.len()];

    // Per-knot contributions to (x_t, u_t, t_f) from dynamics and barrier rows,
    // computed in parallel and reduced in knot order.
    let dyn_w = &w_eq[layout.block("dynamics").unwrap().range.clone()];
    let cbf_w = &w_ineq[layout.block("cbf").unwrap().range.clone()];
    let alpha = c.cbf.alpha;
    let width = n + m + 1;
    let mut local = vec![0.0; big_n * width];
    par::for_each_chunk(&mut local, width, |t, out| {
        let w = &dyn_w[t * n..(t + 1) * n];
        let xt = d.state(t);
        let ut = d.control(t);
        let barrier_idle = (0..c.obstacles.len()).all(|o| cbf_w[o * big_n + t] == 0.0);
        if barrier_idle && w.iter().all(|&x| x == 0.0) {
            return;
        }
        let jac = step_with_jacobian(&spec.model, xt, ut, dt, spec.integrator);
        // defect = x_{t+1} - step(x_t, u_t, t_f / N)
        for k in 0..n {
            let s: f64 = (0..n).map(|i| jac.dx[i * n + k] * w[i]).sum();
            out[k] -= s;
        }
        for j in 0..m {
            let s: f64 = (0..n).map(|i| jac.du[i * m + j] * w[i]).sum();
            out[n + j] -= s;
        }
        let s: f64 = (0..n).map(|i| jac.ddt[i] * w[i]).sum();
        out[n + m] -= s / big_n as f64;
        // barrier rows: -(h(g(next)) - (1 - alpha) h(g(x_t)))
        for (o, obs) in c.obstacles.iter().enumerate() {
            let wt = cbf_w[o * big_n + t];
            if wt == 0.0 {
                continue;
            }
            let (_, gn) = l4_barrier_gradient(obs, &spec.model.position_of(&jac.next));
            let (_, gc) = l4_barrier_gradient(obs, &spec.model.position_of(xt));
            let pos = spec.model.position_indices();
            // d h(next) / d next, lifted to state space
            let mut dh_next = vec![0.0; n];
            for (axis, &pi) in pos.iter().enumerate() {
                dh_next[pi] = gn[axis];
            }
            for k in 0..n {
                let s: f64 = (0..n).map(|i| jac.dx[i * n + k] * dh_next[i]).sum();
                out[k] -= wt * s;
            }
            for (axis, &pi) in pos.iter().enumerate() {
                out[pi] += wt * (1.0 - alpha) * gc[axis];
            }
            for j in 0..m {
                let s: f64 = (0..n).map(|i| jac.du[i * m + j] * dh_next[i]).sum();
                out[n + j] -= wt * s;
            }
            let s: f64 = (0..n).map(|i| jac.ddt[i] * dh_next[i]).sum();
            out[n + m] -= wt * s / big_n as f64;
        }
    });
    for t in 0..big_n {
        let row = &local[t * width..(t + 1) * width];
        let xo = d.state_offset(t);
        for k in 0..n {
            grad[xo + k] += row[k];
            grad[d.state_offset(t + 1) + k] += dyn_w[t * n + k];
        }
        let uo = d.control_offset(t);
        for j in 0..m {
            grad[uo + j] += row[n + j];
        }
        grad[tf_i] += row[n + m];
    }

    let w = &w_eq[layout.block("initial").unwrap().range.clone()];
    for k in 0..n {
        grad[k] += w[k];
    }
    if let Some(b) = layout.block("terminal") {
        let o = d.state_offset(big_n);
        for (k, wk) in w_eq[b.range.clone()].iter().enumerate() {
            grad[o + k] += wk;
        }
    }

    let w = &w_ineq[layout.block("control").unwrap().range.clone()];
    for (k, pair) in w.chunks(2).enumerate() {
        let (t, j) = (k / m, k % m);
        grad[d.control_offset(t) + j] += pair[0] - pair[1];
    }
    let v = spec.ws.dims();
    let w = &w_ineq[layout.block("workspace").unwrap().range.clone()];
    for (k, pair) in w.chunks(2).enumerate() {
        let (t, axis) = (k / v, k % v);
        grad[d.state_offset(t) + spec.model.position_indices()[axis]] += pair[1] - pair[0];
    }

    if let Some(b) = layout.block("ergodic") {
        let we = w_ineq[b.range.start];
        if we != 0.0 {
            let view = spec.knot_view(d);
            let (_, g) = ergodic::metric_and_gradient(
                &view,
                &spec.ws,
                &spec.basis,
                &spec.phi.values,
                big_n,
            )?;
            for (gi, e) in grad.iter_mut().zip(&g) {
                *gi += we * e;
            }
        }
    }
    if let Some(b) = layout.block("tf_floor") {
        grad[tf_i] -= w_ineq[b.range.start];
    }
    for hook in &c.hooks {
        let b = layout.block(&format!("hook:{}", hook.name())).unwrap();
        let w = match b.kind {
            BlockKind::Equality => &w_eq[b.range.clone()],
            BlockKind::Inequality => &w_ineq[b.range.clone()],
        };
        hook.vjp(d, spec, w, &mut grad);
    }
    Ok(grad)
}
