//! Numerical check of the minimum-time optimality conditions on a solved
//! trajectory, using the state augmented with the accumulated coefficient
//! defect `z`.
//!
//! The Hamiltonian is `H = 1 + lambda^T fbar(xbar, u)` with
//! `fbar = [f(x, u); F(g(x)) - phi]`. Costates are integrated backward with
//! explicit Euler from the terminal condition implied by the NLP multipliers.
//! Nothing here solves anything; every check is reported quantitatively.

use serde::{Deserialize, Serialize};

use crate::constraints::BundleLayout;
use crate::dynamics::{self, DynamicsModel};
use crate::ergodic::{BasisSet, Workspace};
use crate::error::{Error, Result};
use crate::solver::Multipliers;
use crate::transcription::{DecisionVector, ProblemSpec};

/// `1 + lambda^T fbar(xbar, u)`. `xbar` is `[x; z]`; `z` does not enter.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(
    xbar: &[f64],
    u: &[f64],
    costate: &[f64],
    model: &DynamicsModel,
    phi_k: &[f64],
    basis: &BasisSet,
    ws: &Workspace,
) -> Result<f64> {
    let n = model.state_dim();
    let kn = basis.len();
    if xbar.len() != n + kn || costate.len() != n + kn || u.len() != model.control_dim() {
        return Err(Error::contract(format!(
            "extended state and costate need {} entries, control {}",
            n + kn,
            model.control_dim()
        )));
    }
    if phi_k.len() != kn {
        return Err(Error::contract("phi coefficient length does not match basis"));
    }
    Ok(hamiltonian_unchecked(xbar, u, costate, model, phi_k, basis, ws))
}

fn hamiltonian_unchecked(
    xbar: &[f64],
    u: &[f64],
    costate: &[f64],
    model: &DynamicsModel,
    phi_k: &[f64],
    basis: &BasisSet,
    ws: &Workspace,
) -> f64 {
    let n = model.state_dim();
    let x = &xbar[..n];
    let f = model.flow(x, u);
    let mut h = 1.0;
    for (l, fi) in costate[..n].iter().zip(&f) {
        h += l * fi;
    }
    let lz = &costate[n..];
    if lz.iter().any(|l| *l != 0.0) {
        let mut values = vec![0.0; basis.len()];
        basis.eval_into(ws, &model.position_of(x), &mut values);
        for ((l, fk), p) in lz.iter().zip(&values).zip(phi_k) {
            h += l * (fk - p);
        }
    }
    h
}

/// `dH/dxbar`. The `z` block is identically zero.
pub fn hamiltonian_state_gradient(
    xbar: &[f64],
    u: &[f64],
    costate: &[f64],
    model: &DynamicsModel,
    basis: &BasisSet,
    ws: &Workspace,
) -> Vec<f64> {
    let n = model.state_dim();
    let kn = basis.len();
    let x = &xbar[..n];
    let (a, _) = model.jacobians(x, u);
    let mut out = vec![0.0; n + kn];
    for k in 0..n {
        out[k] = (0..n).map(|i| a[i * n + k] * costate[i]).sum();
    }
    let lz = &costate[n..];
    if lz.iter().any(|l| *l != 0.0) {
        let v = ws.dims();
        let mut values = vec![0.0; kn];
        let mut grads = vec![0.0; kn * v];
        basis.eval_with_gradient_into(ws, &model.position_of(x), &mut values, &mut grads);
        for (axis, &pi) in model.position_indices().iter().enumerate() {
            out[pi] += (0..kn).map(|k| lz[k] * grads[k * v + axis]).sum::<f64>();
        }
    }
    out
}

/// Extended knots and costates recovered from a solved decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedTrajectory {
    /// `[x_t; z_t]` for `t = 0..=N`.
    pub xbar_knots: Vec<Vec<f64>>,
    /// Costate at each knot, from the backward pass.
    pub costate_knots: Vec<Vec<f64>>,
    /// `[rho_ergodic, rho_terminal...]`; the ergodic weight is
    /// `mu_ergodic * (gamma - E)`.
    pub rho: Vec<f64>,
    /// Multiplier of the ergodic inequality in the NLP (zero when absent).
    pub ergodic_multiplier: f64,
    /// Costates implied by the NLP dynamics multipliers, `t = 1..=N`.
    pub nlp_costate_knots: Vec<Vec<f64>>,
    /// Set when the backward pass produced non-finite values.
    pub inconclusive: Option<String>,
}

/// Lifts the decision with `z` and integrates the costate backward.
pub fn lift_and_costate(
    d: &DecisionVector,
    spec: &ProblemSpec,
    multipliers: &Multipliers,
) -> Result<ExtendedTrajectory> {
    spec.check_decision(d)?;
    let layout = BundleLayout::new(spec);
    if multipliers.eq.len() != layout.eq_len || multipliers.ineq.len() != layout.ineq_len {
        return Err(Error::contract("multipliers are not aligned with the residual bundle"));
    }
    let (n, big_n) = (d.state_dim(), d.intervals());
    let kn = spec.basis.len();
    let dt = d.dt();
    let t_f = d.t_f();

    // forward pass for z (left Riemann sum)
    let mut xbar_knots = Vec::with_capacity(big_n + 1);
    let mut z = vec![0.0; kn];
    let mut values = vec![0.0; kn];
    for t in 0..=big_n {
        let mut row = d.state(t).to_vec();
        row.extend_from_slice(&z);
        xbar_knots.push(row);
        if t < big_n {
            spec.basis
                .eval_into(&spec.ws, &spec.model.position_of(d.state(t)), &mut values);
            for ((zk, f), p) in z.iter_mut().zip(&values).zip(&spec.phi.values) {
                *zk += (f - p) * dt;
            }
        }
    }

    let mu_erg = layout
        .block("ergodic")
        .map(|b| multipliers.ineq[b.range.start])
        .unwrap_or(0.0);
    let rho_terminal: Vec<f64> = match layout.block("terminal") {
        Some(b) => multipliers.eq[b.range.clone()].to_vec(),
        None => vec![0.0; n],
    };
    let z_n = &xbar_knots[big_n][n..];
    let e: f64 = spec
        .basis
        .indices()
        .iter()
        .zip(z_n)
        .map(|(b, zk)| b.lambda_k * zk * zk)
        .sum::<f64>()
        / (t_f * t_f);
    let slack = if spec.has_ergodic_row() {
        spec.constraints.gamma - e
    } else {
        0.0
    };
    let mut rho = vec![mu_erg * slack];
    rho.extend_from_slice(&rho_terminal);

    // lambda(t_f) = dpsi/dxbar^T rho
    let mut terminal = rho_terminal.clone();
    for (b, zk) in spec.basis.indices().iter().zip(z_n) {
        terminal.push(mu_erg * 2.0 * b.lambda_k * zk / (t_f * t_f));
    }
    let mut costate_knots = vec![Vec::new(); big_n + 1];
    costate_knots[big_n] = terminal;
    for t in (0..big_n).rev() {
        let next = &costate_knots[t + 1];
        let g = hamiltonian_state_gradient(
            &xbar_knots[t],
            d.control(t),
            next,
            &spec.model,
            &spec.basis,
            &spec.ws,
        );
        costate_knots[t] = next.iter().zip(&g).map(|(l, gi)| l + dt * gi).collect();
    }
    let inconclusive = if costate_knots.iter().flatten().any(|v| !v.is_finite()) {
        Some("backward costate pass produced non-finite values".to_string())
    } else {
        None
    };

    let dyn_r = layout.block("dynamics").unwrap().range.clone();
    let nlp_costate_knots = multipliers.eq[dyn_r]
        .chunks(n)
        .map(|l| l.iter().map(|v| -v).collect())
        .collect();

    Ok(ExtendedTrajectory {
        xbar_knots,
        costate_knots,
        rho,
        ergodic_multiplier: mu_erg,
        nlp_costate_knots,
        inconclusive,
    })
}

/// Grid and tolerance settings for [`check_conditions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PmpOptions {
    /// Samples per control axis when minimizing `H` over the control box.
    pub grid_per_axis: usize,
    /// Knot passes when `H(u_t) <= min_grid H + rel_tol * (1 + |min_grid H|)`.
    pub rel_tol: f64,
}

impl Default for PmpOptions {
    fn default() -> Self {
        Self {
            grid_per_axis: 21,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmpReport {
    /// `H(xbar_t, u_t, lambda_{t+1})` for `t < N`, then `H` at the final knot.
    pub hamiltonian_values: Vec<f64>,
    /// Largest gap between the backward-pass costate and the one implied by
    /// the NLP dynamics multipliers.
    pub costate_defect_max: f64,
    /// Largest forward defect of `xbar` under the transcription's integrator.
    pub forward_defect_max: f64,
    pub input_stationarity_fraction: f64,
    /// `[E - gamma (when bounded), x_N - x_f ...]`.
    pub terminal_condition_residuals: Vec<f64>,
    pub initial_condition_residual: f64,
    /// Final NLP costate minus `dpsi/dx^T rho`, infinity norm.
    pub terminal_costate_residual: f64,
    /// `H(t_f) + rho^T dpsi/dt_f`.
    pub transversality_residual: f64,
    pub rho: Vec<f64>,
    pub inconclusive: Option<String>,
    pub notes: Vec<String>,
}

fn grid_points(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let m = lo.len();
    let total = per_axis.pow(m as u32);
    (0..total)
        .map(|mut flat| {
            let mut u = vec![0.0; m];
            for j in (0..m).rev() {
                let i = flat % per_axis;
                flat /= per_axis;
                u[j] = if per_axis == 1 {
                    0.5 * (lo[j] + hi[j])
                } else {
                    lo[j] + (hi[j] - lo[j]) * i as f64 / (per_axis - 1) as f64
                };
            }
            u
        })
        .collect()
}

/// Evaluates the optimality conditions on a lifted trajectory.
pub fn check_conditions(
    ext: &ExtendedTrajectory,
    d: &DecisionVector,
    spec: &ProblemSpec,
    opts: PmpOptions,
) -> Result<PmpReport> {
    spec.check_decision(d)?;
    let (n, big_n) = (d.state_dim(), d.intervals());
    if ext.xbar_knots.len() != big_n + 1 || ext.costate_knots.len() != big_n + 1 {
        return Err(Error::contract("lifted trajectory length does not match the decision"));
    }
    if opts.grid_per_axis == 0 || !(opts.rel_tol > 0.0) {
        return Err(Error::config("pmp", "grid_per_axis and rel_tol must be positive"));
    }
    let dt = d.dt();
    let t_f = d.t_f();
    let c = &spec.constraints;
    let phi = &spec.phi.values;
    let h_at = |t: usize, u: &[f64], lam: &[f64]| {
        hamiltonian_unchecked(&ext.xbar_knots[t], u, lam, &spec.model, phi, &spec.basis, &spec.ws)
    };

    let mut hamiltonian_values: Vec<f64> = (0..big_n)
        .map(|t| h_at(t, d.control(t), &ext.costate_knots[t + 1]))
        .collect();
    let h_final = h_at(big_n, d.control(big_n - 1), &ext.costate_knots[big_n]);
    hamiltonian_values.push(h_final);

    let grid = grid_points(&c.u_lower, &c.u_upper, opts.grid_per_axis);
    let attained = crate::par::map_range(big_n, |t| {
        let lam = &ext.costate_knots[t + 1];
        let h_sol = h_at(t, d.control(t), lam);
        let h_min = grid
            .iter()
            .map(|u| h_at(t, u, lam))
            .fold(f64::INFINITY, f64::min);
        h_sol <= h_min + opts.rel_tol * (1.0 + h_min.abs())
    });
    let input_stationarity_fraction =
        attained.iter().filter(|a| **a).count() as f64 / big_n as f64;

    let mut forward_defect_max: f64 = 0.0;
    for t in 0..big_n {
        let next = dynamics::step_unchecked(&spec.model, d.state(t), d.control(t), dt, spec.integrator);
        for i in 0..n {
            forward_defect_max = forward_defect_max.max((d.state(t + 1)[i] - next[i]).abs());
        }
    }

    let mut costate_defect_max: f64 = 0.0;
    for (t, nlp) in ext.nlp_costate_knots.iter().enumerate() {
        for (a, b) in ext.costate_knots[t + 1][..n].iter().zip(nlp) {
            costate_defect_max = costate_defect_max.max((a - b).abs());
        }
    }
    let terminal_costate_residual = ext
        .nlp_costate_knots
        .last()
        .map(|nlp| {
            nlp.iter()
                .zip(&ext.rho[1..])
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
        })
        .unwrap_or(0.0);

    let z_n = &ext.xbar_knots[big_n][n..];
    let e: f64 = spec
        .basis
        .indices()
        .iter()
        .zip(z_n)
        .map(|(b, zk)| b.lambda_k * zk * zk)
        .sum::<f64>()
        / (t_f * t_f);
    let mut terminal_condition_residuals = Vec::new();
    if spec.has_ergodic_row() {
        terminal_condition_residuals.push(e - c.gamma);
    }
    for i in 0..n {
        terminal_condition_residuals.push(d.state(big_n)[i] - c.xf[i]);
    }
    let initial_condition_residual = (0..n)
        .map(|i| (d.state(0)[i] - c.x0[i]).abs())
        .fold(0.0, f64::max);
    // rho^T dpsi/dt_f reduces to -2 mu E / t_f for the barrier row
    let transversality_residual = h_final - 2.0 * ext.ergodic_multiplier * e / t_f;

    let mut notes = vec![
        "ergodic barrier weight recovered as mu_ergodic * (gamma - E); terminal costate uses mu_ergodic directly"
            .to_string(),
    ];
    if !spec.constraints.obstacles.is_empty() {
        notes.push("path constraints (workspace, barrier) enter the NLP costate but not the backward pass".to_string());
    }
    Ok(PmpReport {
        hamiltonian_values,
        costate_defect_max,
        forward_defect_max,
        input_stationarity_fraction,
        terminal_condition_residuals,
        initial_condition_residual,
        terminal_costate_residual,
        transversality_residual,
        rho: ext.rho.clone(),
        inconclusive: ext.inconclusive.clone(),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSet;
    use crate::distributions::{phi_coefficients, InfoDistribution};
    use crate::dynamics::IntegratorKind;
    use crate::ergodic::{fourier_basis, Normalization};
    use crate::test_support::{a1_spec, random_decision};
    use crate::transcription::{forward_simulate, Mode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn models() -> Vec<DynamicsModel> {
        vec![
            DynamicsModel::double_integrator_2d(),
            DynamicsModel::single_integrator_2d(),
            DynamicsModel::aircraft_3d(),
        ]
    }

    fn setup(model: &DynamicsModel) -> (Workspace, BasisSet, Vec<f64>) {
        let ws = Workspace::unit(model.position_indices().len());
        let basis = BasisSet::new(&ws, 3, Normalization::Orthonormal).unwrap();
        let phi = phi_coefficients(&InfoDistribution::uniform(&ws), &basis, &ws, 12).unwrap();
        (ws, basis, phi.values)
    }

    fn random_point(model: &DynamicsModel, kn: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = model.state_dim();
        let mut xbar: Vec<f64> = (0..n + kn).map(|_| rng.random_range(-0.8..0.8)).collect();
        for &i in model.position_indices() {
            xbar[i] = rng.random_range(0.05..0.95);
        }
        let u = (0..model.control_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lam = (0..n + kn).map(|_| rng.random_range(-2.0..2.0)).collect();
        (xbar, u, lam)
    }

    #[test]
    fn zero_costate_gives_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for model in models() {
            let (ws, basis, phi) = setup(&model);
            let (xbar, u, _) = random_point(&model, basis.len(), &mut rng);
            let lam = vec![0.0; xbar.len()];
            assert_eq!(hamiltonian(&xbar, &u, &lam, &model, &phi, &basis, &ws).unwrap(), 1.0);
        }
    }

    #[test]
    fn single_integrator_costate_along_control() {
        let model = DynamicsModel::single_integrator_2d();
        let (ws, basis, phi) = setup(&model);
        let mut xbar = vec![0.3, 0.6];
        xbar.extend(vec![0.1; basis.len()]);
        let mut lam = vec![0.5, -1.5];
        lam.extend(vec![0.0; basis.len()]);
        let u = [0.2, 0.4];
        let h = hamiltonian(&xbar, &u, &lam, &model, &phi, &basis, &ws).unwrap();
        assert!((h - (1.0 + 0.5 * 0.2 - 1.5 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in models() {
            let (ws, basis, phi) = setup(&model);
            let n = model.state_dim();
            for _ in 0..5 {
                let (xbar, u, lam) = random_point(&model, basis.len(), &mut rng);
                let f = model.flow(&xbar[..n], &u);
                let p = model.position_of(&xbar[..n]);
                let mut expected = 1.0;
                for i in 0..n {
                    expected += lam[i] * f[i];
                }
                for (k, idx) in basis.indices().iter().enumerate() {
                    expected += lam[n + k] * (fourier_basis(idx, &p, &ws).unwrap() - phi[k]);
                }
                let h = hamiltonian(&xbar, &u, &lam, &model, &phi, &basis, &ws).unwrap();
                assert!((h - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn state_gradient_matches_finite_differences_and_z_block_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for model in models() {
            let (ws, basis, phi) = setup(&model);
            let (xbar, u, lam) = random_point(&model, basis.len(), &mut rng);
            let g = hamiltonian_state_gradient(&xbar, &u, &lam, &model, &basis, &ws);
            let step = 1e-6;
            for i in 0..xbar.len() {
                let mut plus = xbar.clone();
                plus[i] += step;
                let mut minus = xbar.clone();
                minus[i] -= step;
                let fp = hamiltonian(&plus, &u, &lam, &model, &phi, &basis, &ws).unwrap();
                let fm = hamiltonian(&minus, &u, &lam, &model, &phi, &basis, &ws).unwrap();
                let fd = (fp - fm) / (2.0 * step);
                if i >= model.state_dim() {
                    assert_eq!(g[i], 0.0);
                    assert!(fd.abs() <= 1e-10, "z entry {i}: {fd}");
                } else {
                    assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "entry {i}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    fn multipliers_with(spec: &ProblemSpec, terminal: &[f64], ergodic: f64) -> Multipliers {
        let layout = BundleLayout::new(spec);
        let mut m = Multipliers::zeros(&layout);
        if let Some(b) = layout.block("terminal") {
            m.eq[b.range.clone()].copy_from_slice(terminal);
        }
        if let Some(b) = layout.block("ergodic") {
            m.ineq[b.range.start] = ergodic;
        }
        m
    }

    #[test]
    fn lifted_z_matches_extended_state() {
        let spec = a1_spec(30, Mode::TimeOptimal);
        let controls: Vec<Vec<f64>> = (0..30).map(|t| vec![(t as f64 * 0.3).sin() * 0.2, 0.1]).collect();
        let d = forward_simulate(&spec, &controls, 3.0).unwrap();
        let m = multipliers_with(&spec, &[0.0; 4], 0.0);
        let ext = lift_and_costate(&d, &spec, &m).unwrap();
        let view = spec.knot_view(&d);
        let traj = crate::ergodic::extended_state_trajectory(
            &view,
            &spec.phi.values,
            &spec.ws,
            &spec.basis,
            30,
            3.0,
        )
        .unwrap();
        for (row, z) in ext.xbar_knots.iter().zip(&traj) {
            for (a, b) in row[4..].iter().zip(&z.z) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(ext.xbar_knots[0][4..].iter().all(|z| *z == 0.0));
    }

    #[test]
    fn zero_information_limit_keeps_z_costate_constant() {
        let spec = a1_spec(20, Mode::TimeOptimal);
        let d = random_decision(&spec, 4);
        let m = multipliers_with(&spec, &[0.3, -0.2, 0.5, 0.1], 0.0);
        let ext = lift_and_costate(&d, &spec, &m).unwrap();
        let n = 4;
        for lam in &ext.costate_knots {
            assert!(lam[n..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn double_integrator_costate_is_linear_in_time() {
        // lambda_p constant, lambda_v(t) = lambda_v(t_f) + lambda_p (t_f - t)
        let spec = a1_spec(25, Mode::TimeOptimal);
        let d = random_decision(&spec, 9);
        let rho = [0.7, -0.4, 0.2, 0.9];
        let m = multipliers_with(&spec, &rho, 0.0);
        let ext = lift_and_costate(&d, &spec, &m).unwrap();
        let (t_f, dt) = (d.t_f(), d.dt());
        for (t, lam) in ext.costate_knots.iter().enumerate() {
            let remaining = t_f - t as f64 * dt;
            assert!((lam[0] - rho[0]).abs() < 1e-12);
            assert!((lam[1] - rho[1]).abs() < 1e-12);
            assert!((lam[2] - (rho[2] + rho[0] * remaining)).abs() < 1e-9);
            assert!((lam[3] - (rho[3] + rho[1] * remaining)).abs() < 1e-9);
        }
    }

    /// 1-D rest-to-rest transfer over `dist` with `|u| <= 1`.
    fn bang_bang_spec(intervals: usize, dist: f64) -> ProblemSpec {
        let ws = Workspace::from_bounds(&[(-0.5, dist + 0.5)]).unwrap();
        let basis = BasisSet::new(&ws, 2, Normalization::Orthonormal).unwrap();
        let phi = phi_coefficients(&InfoDistribution::uniform(&ws), &basis, &ws, 8).unwrap();
        ProblemSpec {
            model: DynamicsModel::double_integrator_1d(),
            ws,
            basis,
            phi,
            constraints: ConstraintSet::new(f64::INFINITY, 1.0, 1, vec![0.0, 0.0], vec![dist, 0.0]),
            intervals,
            integrator: IntegratorKind::ExplicitEuler,
            mode: Mode::TimeOptimal,
        }
    }

    #[test]
    fn analytic_bang_bang_passes_input_stationarity() {
        // Discrete bang-bang with the exact Euler switching structure: the
        // NLP costate for x_{t+1} = x_t + dt f is lambda_p const and lambda_v
        // linear, so u_t = -sign(lambda_v(t+1)).
        let n_half = 20;
        let big_n = 2 * n_half;
        let dist = 1.0;
        let spec = bang_bang_spec(big_n, dist);
        let controls: Vec<Vec<f64>> = (0..big_n)
            .map(|t| vec![if t < n_half { 1.0 } else { -1.0 }])
            .collect();
        // Euler: position after the transfer is dt^2 * n_half^2, solve for t_f
        let dt = (dist / (n_half * n_half) as f64).sqrt();
        let t_f = dt * big_n as f64;
        let d = forward_simulate(&spec, &controls, t_f).unwrap();
        assert!((d.state(big_n)[0] - dist).abs() < 1e-12);
        assert!(d.state(big_n)[1].abs() < 1e-12);
        // lambda_p = -2/t_f and lambda_v(t_k) = lambda_v(t_f) + lambda_p (t_f - t_k),
        // crossing zero half a step after mid-horizon, so H(0) = 0
        let layout = BundleLayout::new(&spec);
        let mut m = Multipliers::zeros(&layout);
        let b = 2.0 / t_f;
        let term = layout.block("terminal").unwrap().range.clone();
        m.eq[term].copy_from_slice(&[-b, b * (t_f / 2.0 - dt / 2.0)]);
        let ext = lift_and_costate(&d, &spec, &m).unwrap();
        let report = check_conditions(&ext, &d, &spec, PmpOptions::default()).unwrap();
        assert!(report.input_stationarity_fraction >= 0.95, "{report:?}");
        assert!(report.forward_defect_max < 1e-12);
        assert!(report.terminal_condition_residuals.iter().all(|r| r.abs() < 1e-12));

        // perturbing the controls strictly lowers attainment
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy: Vec<Vec<f64>> = controls
            .iter()
            .map(|u| vec![(u[0] + rng.random_range(-0.6..0.6)).clamp(-1.0, 1.0)])
            .collect();
        let dn = forward_simulate(&spec, &noisy, t_f).unwrap();
        let extn = lift_and_costate(&dn, &spec, &m).unwrap();
        let rn = check_conditions(&extn, &dn, &spec, PmpOptions::default()).unwrap();
        assert!(rn.input_stationarity_fraction < report.input_stationarity_fraction);
    }

    #[test]
    fn report_serializes() {
        let spec = a1_spec(10, Mode::TimeOptimal);
        let d = random_decision(&spec, 2);
        let m = multipliers_with(&spec, &[0.1; 4], 0.5);
        let ext = lift_and_costate(&d, &spec, &m).unwrap();
        let r = check_conditions(&ext, &d, &spec, PmpOptions::default()).unwrap();
        assert_eq!(r.hamiltonian_values.len(), 11);
        assert!(r.hamiltonian_values.iter().all(|h| h.is_finite()));
        let json = serde_json::to_string(&r).unwrap();
        let back: PmpReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.hamiltonian_values.len(), 11);
    }
}
