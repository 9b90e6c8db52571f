//! Problem builders shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{ConstraintSet, Obstacle};
use crate::distributions::{phi_coefficients, InfoDistribution};
use crate::dynamics::{DynamicsModel, IntegratorKind};
use crate::ergodic::{BasisSet, Normalization, Workspace};
use crate::transcription::{DecisionVector, Mode, ProblemSpec};

pub fn a1_spec(intervals: usize, mode: Mode) -> ProblemSpec {
    let ws = Workspace::unit(2);
    let basis = BasisSet::new(&ws, 4, Normalization::Orthonormal).unwrap();
    let phi = phi_coefficients(&InfoDistribution::uniform(&ws), &basis, &ws, 20).unwrap();
    let spec = ProblemSpec {
        model: DynamicsModel::double_integrator_2d(),
        ws,
        basis,
        phi,
        constraints: ConstraintSet::new(
            0.05,
            1.0,
            2,
            vec![0.1, 0.1, 0.0, 0.0],
            vec![0.9, 0.9, 0.0, 0.0],
        ),
        intervals,
        integrator: IntegratorKind::ExplicitEuler,
        mode,
    };
    spec.validate().unwrap();
    spec
}

pub fn clutter_spec(intervals: usize, gamma: f64) -> ProblemSpec {
    let ws = Workspace::from_bounds(&[(0.0, 3.5), (-1.0, 3.5)]).unwrap();
    let basis = BasisSet::new(&ws, 4, Normalization::Orthonormal).unwrap();
    let phi = phi_coefficients(&InfoDistribution::uniform(&ws), &basis, &ws, 20).unwrap();
    let mut constraints = ConstraintSet::new(gamma, 2.0, 2, vec![0.2, -0.8], vec![3.2, 3.2]);
    constraints.obstacles = vec![
        Obstacle::planar([1.2, 0.6], [0.3, 0.2], 0.4).unwrap(),
        Obstacle::planar([2.4, 2.0], [0.25, 0.4], -0.3).unwrap(),
    ];
    let spec = ProblemSpec {
        model: DynamicsModel::single_integrator_2d(),
        ws,
        basis,
        phi,
        constraints,
        intervals,
        integrator: IntegratorKind::ExplicitEuler,
        mode: Mode::TimeOptimal,
    };
    spec.validate().unwrap();
    spec
}

pub fn random_decision(spec: &ProblemSpec, seed: u64) -> DecisionVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (spec.model.state_dim(), spec.model.control_dim());
    let mut d = DecisionVector::zeros(n, m, spec.intervals);
    for t in 0..=spec.intervals {
        for x in d.state_mut(t) {
            *x = rng.random_range(-0.5..0.5);
        }
        for (axis, &i) in spec.model.position_indices().iter().enumerate() {
            d.state_mut(t)[i] = spec.ws.lower(axis) + rng.random::<f64>() * spec.ws.lengths()[axis];
        }
    }
    for t in 0..spec.intervals {
        for u in d.control_mut(t) {
            *u = rng.random_range(-1.5..1.5);
        }
    }
    d.set_t_f(rng.random_range(2.0..8.0));
    d
}
