//! Continuous-time models `xdot = f(x, u)`, the position selector `g`, and
//! one-step integrators with analytic Jacobians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    /// Point mass in `dims` dimensions: state `(p, v)`, control acceleration.
    DoubleIntegrator { dims: usize },
    /// Kinematic point in `dims` dimensions: state `p`, control velocity.
    SingleIntegrator { dims: usize },
    /// Fixed-wing kinematics with state `(x, y, z, heading, pitch, speed)`
    /// and controls `(heading rate, pitch rate, speed rate)`.
    Aircraft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    kind: ModelKind,
    state_dim: usize,
    control_dim: usize,
    position: Vec<usize>,
    state_labels: Vec<String>,
    control_labels: Vec<String>,
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl DynamicsModel {
    pub fn from_kind(kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::DoubleIntegrator { dims } if dims > 0 => {
                let mut state_labels: Vec<String> = (0..dims).map(|i| format!("p{i}")).collect();
                state_labels.extend((0..dims).map(|i| format!("v{i}")));
                Ok(Self {
                    kind,
                    state_dim: 2 * dims,
                    control_dim: dims,
                    position: (0..dims).collect(),
                    state_labels,
                    control_labels: (0..dims).map(|i| format!("a{i}")).collect(),
                })
            }
            ModelKind::SingleIntegrator { dims } if dims > 0 => Ok(Self {
                kind,
                state_dim: dims,
                control_dim: dims,
                position: (0..dims).collect(),
                state_labels: (0..dims).map(|i| format!("p{i}")).collect(),
                control_labels: (0..dims).map(|i| format!("v{i}")).collect(),
            }),
            ModelKind::Aircraft => Ok(Self {
                kind,
                state_dim: 6,
                control_dim: 3,
                position: vec![0, 1, 2],
                state_labels: labels(&["x", "y", "z", "heading", "pitch", "speed"]),
                control_labels: labels(&["heading_rate", "pitch_rate", "speed_rate"]),
            }),
            _ => Err(Error::contract("integrator models need at least one dimension")),
        }
    }

    /// State `(px, py, vx, vy)`, control `(ax, ay)`.
    pub fn double_integrator_2d() -> Self {
        Self::from_kind(ModelKind::DoubleIntegrator { dims: 2 }).expect("valid model")
    }

    pub fn double_integrator_1d() -> Self {
        Self::from_kind(ModelKind::DoubleIntegrator { dims: 1 }).expect("valid model")
    }

    /// State `(px, py)`, control `(vx, vy)`.
    pub fn single_integrator_2d() -> Self {
        Self::from_kind(ModelKind::SingleIntegrator { dims: 2 }).expect("valid model")
    }

    pub fn aircraft_3d() -> Self {
        Self::from_kind(ModelKind::Aircraft).expect("valid model")
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Indices of the state realizing `g(x) = I_p x`.
    pub fn position_indices(&self) -> &[usize] {
        &self.position
    }

    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }

    pub fn control_labels(&self) -> &[String] {
        &self.control_labels
    }

    pub fn position_of(&self, x: &[f64]) -> Vec<f64> {
        self.position.iter().map(|&i| x[i]).collect()
    }

    pub fn flow_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self.kind {
            ModelKind::DoubleIntegrator { dims } => {
                out[..dims].copy_from_slice(&x[dims..2 * dims]);
                out[dims..2 * dims].copy_from_slice(&u[..dims]);
            }
            ModelKind::SingleIntegrator { dims } => out[..dims].copy_from_slice(&u[..dims]),
            ModelKind::Aircraft => {
                let (psi, phi, v) = (x[3], x[4], x[5]);
                out[0] = v * phi.cos() * psi.cos();
                out[1] = v * phi.cos() * psi.sin();
                out[2] = v * phi.sin();
                out[3] = u[0];
                out[4] = u[1];
                out[5] = u[2];
            }
        }
    }

    pub fn flow(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        self.flow_into(x, u, &mut out);
        out
    }

    /// `(df/dx, df/du)` as row-major `n x n` and `n x m` matrices.
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.state_dim, self.control_dim);
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n * m];
        self.jacobians_into(x, u, &mut a, &mut b);
        (a, b)
    }

    /// [`Self::jacobians`] into caller buffers, which are overwritten.
    pub fn jacobians_into(&self, x: &[f64], _u: &[f64], a: &mut [f64], b: &mut [f64]) {
        let (n, m) = (self.state_dim, self.control_dim);
        a.fill(0.0);
        b.fill(0.0);
        match self.kind {
            ModelKind::DoubleIntegrator { dims } => {
                for i in 0..dims {
                    a[i * n + dims + i] = 1.0;
                    b[(dims + i) * m + i] = 1.0;
                }
            }
            ModelKind::SingleIntegrator { dims } => {
                for i in 0..dims {
                    b[i * m + i] = 1.0;
                }
            }
            ModelKind::Aircraft => {
                let (psi, phi, v) = (x[3], x[4], x[5]);
                let (sp, cp) = psi.sin_cos();
                let (sf, cf) = phi.sin_cos();
                a[3] = -v * cf * sp;
                a[4] = -v * sf * cp;
                a[5] = cf * cp;
                a[n + 3] = v * cf * cp;
                a[n + 4] = -v * sf * sp;
                a[n + 5] = cf * sp;
                a[2 * n + 4] = v * cf;
                a[2 * n + 5] = sf;
                for i in 0..3 {
                    b[(3 + i) * m + i] = 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    #[default]
    ExplicitEuler,
    Rk4,
}

/// One integration step and its derivatives with respect to `x`, `u` and `dt`.
#[derive(Debug, Clone)]
pub struct StepJacobian {
    pub next: Vec<f64>,
    /// Row-major `n x n`.
    pub dx: Vec<f64>,
    /// Row-major `n x m`.
    pub du: Vec<f64>,
    pub ddt: Vec<f64>,
}

impl StepJacobian {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            next: vec![0.0; n],
            dx: vec![0.0; n * n],
            du: vec![0.0; n * m],
            ddt: vec![0.0; n],
        }
    }
}

/// [`step_with_jacobian`] into a reusable buffer sized by [`StepJacobian::zeros`].
pub fn step_with_jacobian_into(
    model: &DynamicsModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
    scheme: IntegratorKind,
    out: &mut StepJacobian,
) {
    match scheme {
        IntegratorKind::ExplicitEuler => {
            let n = model.state_dim;
            model.flow_into(x, u, &mut out.ddt);
            model.jacobians_into(x, u, &mut out.dx, &mut out.du);
            for i in 0..n {
                out.next[i] = x[i] + dt * out.ddt[i];
            }
            out.dx.iter_mut().for_each(|d| *d *= dt);
            for i in 0..n {
                out.dx[i * n + i] += 1.0;
            }
            out.du.iter_mut().for_each(|d| *d *= dt);
        }
        IntegratorKind::Rk4 => *out = step_with_jacobian(model, x, u, dt, scheme),
    }
}

/// Advances `x` by `dt` under constant control `u`.
pub fn step(
    model: &DynamicsModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
    scheme: IntegratorKind,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::contract(format!("step size must be positive, got {dt}")));
    }
    if x.len() != model.state_dim || u.len() != model.control_dim {
        return Err(Error::contract("state or control dimension mismatch"));
    }
    Ok(step_unchecked(model, x, u, dt, scheme))
}

pub(crate) fn step_unchecked(
    model: &DynamicsModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
    scheme: IntegratorKind,
) -> Vec<f64> {
    let n = model.state_dim;
    match scheme {
        IntegratorKind::ExplicitEuler => {
            let f = model.flow(x, u);
            (0..n).map(|i| x[i] + dt * f[i]).collect()
        }
        IntegratorKind::Rk4 => {
            let k1 = model.flow(x, u);
            let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
            let k2 = model.flow(&x2, u);
            let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2[i]).collect();
            let k3 = model.flow(&x3, u);
            let x4: Vec<f64> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
            let k4 = model.flow(&x4, u);
            (0..n)
                .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    }
}

fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for k in 0..inner {
            let av = a[r * inner + k];
            if av == 0.0 {
                continue;
            }
            for c in 0..cols {
                out[r * cols + c] += av * b[k * cols + c];
            }
        }
    }
    out
}

fn matvec(a: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| a[r * cols + c] * x[c]).sum())
        .collect()
}

fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
    out
}

/// Step plus analytic Jacobians; no argument checks.
pub fn step_with_jacobian(
    model: &DynamicsModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
    scheme: IntegratorKind,
) -> StepJacobian {
    let (n, m) = (model.state_dim, model.control_dim);
    match scheme {
        IntegratorKind::ExplicitEuler => {
            let f = model.flow(x, u);
            let (a, b) = model.jacobians(x, u);
            let next = (0..n).map(|i| x[i] + dt * f[i]).collect();
            let mut dx = identity(n);
            for (d, av) in dx.iter_mut().zip(&a) {
                *d += dt * av;
            }
            let du = b.iter().map(|bv| dt * bv).collect();
            StepJacobian {
                next,
                dx,
                du,
                ddt: f,
            }
        }
        IntegratorKind::Rk4 => {
            // Stage s: k_s = f(x + c_s h k_{s-1}, u); propagate d k_s / d(x, u, h).
            let coeffs = [0.0, 0.5, 0.5, 1.0];
            let mut ks: Vec<Vec<f64>> = Vec::with_capacity(4);
            let mut kx: Vec<Vec<f64>> = Vec::with_capacity(4);
            let mut ku: Vec<Vec<f64>> = Vec::with_capacity(4);
            let mut kh: Vec<Vec<f64>> = Vec::with_capacity(4);
            for (s, &c) in coeffs.iter().enumerate() {
                let (xs, sx, su, sh) = if s == 0 {
                    (x.to_vec(), identity(n), vec![0.0; n * m], vec![0.0; n])
                } else {
                    let prev = &ks[s - 1];
                    let xs: Vec<f64> = (0..n).map(|i| x[i] + c * dt * prev[i]).collect();
                    let mut sx = identity(n);
                    for (d, p) in sx.iter_mut().zip(&kx[s - 1]) {
                        *d += c * dt * p;
                    }
                    let su: Vec<f64> = ku[s - 1].iter().map(|p| c * dt * p).collect();
                    let sh: Vec<f64> = (0..n)
                        .map(|i| c * prev[i] + c * dt * kh[s - 1][i])
                        .collect();
                    (xs, sx, su, sh)
                };
                let k = model.flow(&xs, u);
                let (a, b) = model.jacobians(&xs, u);
                let dkx = matmul(&a, &sx, n, n, n);
                let mut dku = matmul(&a, &su, n, n, m);
                for (d, bv) in dku.iter_mut().zip(&b) {
                    *d += bv;
                }
                let dkh = matvec(&a, &sh, n, n);
                ks.push(k);
                kx.push(dkx);
                ku.push(dku);
                kh.push(dkh);
            }
            let w = [1.0, 2.0, 2.0, 1.0];
            let next = step_unchecked(model, x, u, dt, scheme);
            let mut dx = identity(n);
            let mut du = vec![0.0; n * m];
            let mut ddt = vec![0.0; n];
            for s in 0..4 {
                let f = w[s] / 6.0;
                for i in 0..n {
                    ddt[i] += f * ks[s][i] + dt * f * kh[s][i];
                }
                for (d, v) in dx.iter_mut().zip(&kx[s]) {
                    *d += dt * f * v;
                }
                for (d, v) in du.iter_mut().zip(&ku[s]) {
                    *d += dt * f * v;
                }
            }
            StepJacobian { next, dx, du, ddt }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn double_integrator_flow() {
        let m = DynamicsModel::double_integrator_2d();
        assert_eq!(m.flow(&[0.0, 0.0, 1.0, 2.0], &[0.0, 0.0]), vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(m.flow(&[0.0; 4], &[1.0, -1.0]), vec![0.0, 0.0, 1.0, -1.0]);
        let next = step(&m, &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0], 0.1, IntegratorKind::ExplicitEuler).unwrap();
        assert_eq!(next, vec![0.1, 0.0, 1.0, 0.0]);
        assert_eq!(m.position_indices(), &[0, 1]);
    }

    #[test]
    fn single_integrator_flow_and_linearity() {
        let m = DynamicsModel::single_integrator_2d();
        assert_eq!(m.flow(&[1.0, 1.0], &[0.5, -0.5]), vec![0.5, -0.5]);
        assert_eq!(m.flow(&[1.0, 1.0], &[0.0, 0.0]), vec![0.0, 0.0]);
        let x = [0.3, -0.7];
        let u = [0.25, 1.5];
        let next = step(&m, &x, &u, 0.125, IntegratorKind::ExplicitEuler).unwrap();
        for i in 0..2 {
            assert_eq!(next[i] - x[i], 0.125 * u[i]);
        }
        let rk = step(&m, &x, &u, 0.125, IntegratorKind::Rk4).unwrap();
        assert_eq!(next, rk);
    }

    #[test]
    fn single_integrator_two_half_steps_equal_one_step() {
        let m = DynamicsModel::single_integrator_2d();
        let x = [0.5, 0.25];
        let u = [1.0, -2.0];
        let half = step(&m, &x, &u, 0.25, IntegratorKind::ExplicitEuler).unwrap();
        let two = step(&m, &half, &u, 0.25, IntegratorKind::ExplicitEuler).unwrap();
        let one = step(&m, &x, &u, 0.5, IntegratorKind::ExplicitEuler).unwrap();
        assert_eq!(two, one);
    }

    #[test]
    fn aircraft_flow() {
        let m = DynamicsModel::aircraft_3d();
        let f = m.flow(&[0.0, 0.0, 0.0, 0.0, 0.0, 2.0], &[0.1, 0.2, 0.3]);
        assert_eq!(f, vec![2.0, 0.0, 0.0, 0.1, 0.2, 0.3]);
        let f = m.flow(&[0.0, 0.0, 0.0, 0.3, PI / 2.0, 1.5], &[0.0; 3]);
        assert!(f[0].abs() < 1e-15 && f[1].abs() < 1e-15);
        assert_relative_eq!(f[2], 1.5);
        let x = [1.0, 2.0, 3.0, 0.7, -0.4, 2.5];
        let f = m.flow(&x, &[0.0; 3]);
        assert_relative_eq!(f[0], 2.5 * (-0.4f64).cos() * 0.7f64.cos(), epsilon = 1e-15);
        assert_relative_eq!(f[1], 2.5 * (-0.4f64).cos() * 0.7f64.sin(), epsilon = 1e-15);
        assert_relative_eq!(f[2], 2.5 * (-0.4f64).sin(), epsilon = 1e-15);
    }

    #[test]
    fn rk4_exact_for_constant_acceleration() {
        let m = DynamicsModel::double_integrator_2d();
        let x = [0.1, -0.2, 0.5, 1.0];
        let u = [0.8, -0.3];
        let h = 0.37;
        let next = step(&m, &x, &u, h, IntegratorKind::Rk4).unwrap();
        for i in 0..2 {
            assert_relative_eq!(next[i], x[i] + x[2 + i] * h + 0.5 * u[i] * h * h, epsilon = 1e-12);
            assert_relative_eq!(next[2 + i], x[2 + i] + u[i] * h, epsilon = 1e-12);
        }
    }

    #[test]
    fn nonpositive_step_rejected() {
        let m = DynamicsModel::single_integrator_2d();
        assert!(step(&m, &[0.0; 2], &[0.0; 2], 0.0, IntegratorKind::ExplicitEuler).is_err());
        assert!(step(&m, &[0.0; 2], &[0.0; 2], -0.1, IntegratorKind::Rk4).is_err());
        assert!(step(&m, &[0.0; 3], &[0.0; 2], 0.1, IntegratorKind::Rk4).is_err());
    }

    fn fd_check(model: &DynamicsModel, scheme: IntegratorKind, x: &[f64], u: &[f64], dt: f64) {
        let (n, m) = (model.state_dim(), model.control_dim());
        let jac = step_with_jacobian(model, x, u, dt, scheme);
        let h = 1e-6;
        let check = |analytic: f64, plus: &[f64], minus: &[f64], i: usize| {
            let fd = (plus[i] - minus[i]) / (2.0 * h);
            let scale = fd.abs().max(analytic.abs()).max(1.0);
            assert!((fd - analytic).abs() / scale < 1e-5, "fd {fd} analytic {analytic}");
        };
        for j in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let p = step_unchecked(model, &xp, u, dt, scheme);
            let q = step_unchecked(model, &xm, u, dt, scheme);
            for i in 0..n {
                check(jac.dx[i * n + j], &p, &q, i);
            }
        }
        for j in 0..m {
            let mut up = u.to_vec();
            let mut um = u.to_vec();
            up[j] += h;
            um[j] -= h;
            let p = step_unchecked(model, x, &up, dt, scheme);
            let q = step_unchecked(model, x, &um, dt, scheme);
            for i in 0..n {
                check(jac.du[i * m + j], &p, &q, i);
            }
        }
        let p = step_unchecked(model, x, u, dt + h, scheme);
        let q = step_unchecked(model, x, u, dt - h, scheme);
        for i in 0..n {
            check(jac.ddt[i], &p, &q, i);
        }
        assert_eq!(jac.next, step_unchecked(model, x, u, dt, scheme));
    }

    #[test]
    fn step_jacobians_match_finite_differences() {
        let x = [1.0, 2.0, 0.5, 0.7, -0.4, 2.5];
        let u = [0.3, -0.2, 0.9];
        for scheme in [IntegratorKind::ExplicitEuler, IntegratorKind::Rk4] {
            fd_check(&DynamicsModel::aircraft_3d(), scheme, &x, &u, 0.2);
            fd_check(&DynamicsModel::double_integrator_2d(), scheme, &x[..4], &u[..2], 0.2);
            fd_check(&DynamicsModel::single_integrator_2d(), scheme, &x[..2], &u[..2], 0.2);
        }
    }
}
