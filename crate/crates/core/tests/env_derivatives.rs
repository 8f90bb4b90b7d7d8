mod common;

use cacto::envs::{toy1d_cost, ModelKind, SampleRegion, TimeState};
use cacto::Problem;
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn random_point(kind: ModelKind, rng: &mut impl Rng) -> (DVector<f64>, DVector<f64>) {
    let t = task(kind);
    let x = DVector::from_fn(t.model.n(), |i, _| {
        let (lo, hi) = (t.model.workspace.lower[i], t.model.workspace.upper[i]);
        rng.random_range(lo..hi)
    });
    let u = DVector::from_fn(t.model.m(), |i, _| {
        let b = t.model.u_max[i];
        rng.random_range(-b..b)
    });
    (x, u)
}

#[test]
fn point_mass_rest_is_a_fixed_point() {
    let m = model(ModelKind::PointMass);
    let s = TimeState::from_slice(&[0.0, 0.0, 0.0, 0.0], 0);
    let next = m.step(&s, &DVector::zeros(2)).unwrap();
    assert_eq!(next.x, DVector::zeros(4));
    assert_eq!(next.t, 1);
}

#[test]
fn point_mass_euler_step() {
    let m = model(ModelKind::PointMass);
    let s = TimeState::from_slice(&[0.0, 0.0, 1.0, 0.0], 3);
    let next = m.step(&s, &DVector::zeros(2)).unwrap();
    assert_eq!(next.x.as_slice(), &[0.05, 0.0, 1.0, 0.0]);
    assert_eq!(next.t, 4);
}

#[test]
fn step_rejects_bad_dimensions_and_times() {
    let m = model(ModelKind::PointMass);
    let s = TimeState::from_slice(&[0.0; 3], 0);
    assert!(m.step(&s, &DVector::zeros(2)).is_err());
    let s = TimeState::from_slice(&[0.0; 4], 0);
    assert!(m.step(&s, &DVector::zeros(3)).is_err());
    let s = TimeState::from_slice(&[0.0; 4], 60);
    assert!(matches!(
        m.step(&s, &DVector::zeros(2)),
        Err(cacto::Error::TimeOutOfRange { .. })
    ));
}

#[test]
fn linear_jacobians_are_exact() {
    let m = model(ModelKind::PointMass);
    let s = TimeState::from_slice(&[1.0, 2.0, 3.0, 4.0], 0);
    let (fx, fu) = m.dynamics_jacobians(&s, &DVector::zeros(2)).unwrap();
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    let mut b = DMatrix::zeros(4, 2);
    b[(2, 0)] = 1.0;
    b[(3, 1)] = 1.0;
    assert_eq!(fx, DMatrix::identity(4, 4) + a * 0.05);
    assert_eq!(fu, b * 0.05);

    let toy = model(ModelKind::Toy1d);
    let (fx, fu) = toy
        .dynamics_jacobians(&TimeState::from_slice(&[0.3], 0), &DVector::from_element(1, 0.5))
        .unwrap();
    assert_eq!(fx, DMatrix::from_element(1, 1, 1.0));
    assert_eq!(fu, DMatrix::from_element(1, 1, 0.05));
}

#[test]
fn dubins_jacobians_match_finite_differences() {
    let t = task(ModelKind::DubinsCar);
    let mut r = rng(11);
    for _ in 0..100 {
        let (x, u) = random_point(ModelKind::DubinsCar, &mut r);
        let (fx, fu) = t.dynamics_jacobians(&x, &u, 0);
        let fd_x = fd_jacobian(|xx| t.dynamics(xx, &u, 0), &x, 1e-5);
        let fd_u = fd_jacobian(|uu| t.dynamics(&x, uu, 0), &u, 1e-5);
        assert!((fx - fd_x).amax() < 1e-6);
        assert!((fu - fd_u).amax() < 1e-6);
    }
}

#[test]
fn all_dynamics_jacobians_match_finite_differences() {
    let mut r = rng(12);
    for kind in ALL_KINDS {
        let t = task(kind);
        for _ in 0..100 {
            let (x, u) = random_point(kind, &mut r);
            let (fx, fu) = t.dynamics_jacobians(&x, &u, 0);
            let fd_x = fd_jacobian(|xx| t.dynamics(xx, &u, 0), &x, 1e-5);
            let fd_u = fd_jacobian(|uu| t.dynamics(&x, uu, 0), &u, 1e-5);
            let ex = max_rel_err(&fx, &fd_x, 1.0);
            let eu = max_rel_err(&fu, &fd_u, 1.0);
            assert!(ex < 1e-5 && eu < 1e-5, "{kind}: f_x err {ex}, f_u err {eu}");
        }
    }
}

#[test]
fn all_cost_derivatives_match_finite_differences() {
    let mut r = rng(13);
    for kind in ALL_KINDS {
        let t = task(kind);
        for _ in 0..100 {
            let (x, u) = random_point(kind, &mut r);
            let c = t.running_cost_derivatives(&x, &u, 0);
            assert!((c.l - t.running_cost(&x, &u, 0)).abs() <= 1e-12 * c.l.abs().max(1.0));
            let grad_x = |xx: &DVector<f64>| t.running_cost_derivatives(xx, &u, 0).l_x;
            let grad_u = |uu: &DVector<f64>| t.running_cost_derivatives(&x, uu, 0).l_u;
            let grad_x_of_u = |uu: &DVector<f64>| t.running_cost_derivatives(&x, uu, 0).l_x;
            let val_x = |xx: &DVector<f64>| DVector::from_element(1, t.running_cost(xx, &u, 0));
            let val_u = |uu: &DVector<f64>| DVector::from_element(1, t.running_cost(&x, uu, 0));
            let h = 1e-5;
            let checks = [
                ("l_x", DMatrix::from_column_slice(1, x.len(), c.l_x.as_slice()), fd_jacobian(val_x, &x, h)),
                ("l_u", DMatrix::from_column_slice(1, u.len(), c.l_u.as_slice()), fd_jacobian(val_u, &u, h)),
                ("l_xx", c.l_xx.clone(), fd_jacobian(grad_x, &x, h)),
                ("l_uu", c.l_uu.clone(), fd_jacobian(grad_u, &u, h)),
                ("l_ux", c.l_ux.clone(), fd_jacobian(grad_x_of_u, &u, h).transpose()),
            ];
            for (name, exact, fd) in checks {
                let err = max_rel_err(&exact, &fd, 1.0);
                assert!(err < 1e-5, "{kind} {name}: rel err {err}");
            }
        }
    }
}

#[test]
fn terminal_cost_is_running_cost_without_control() {
    let mut r = rng(14);
    for kind in ALL_KINDS {
        let t = task(kind);
        for _ in 0..50 {
            let (x, u) = random_point(kind, &mut r);
            let control_part = t.field.control_weight * u.norm_squared();
            let running = t.running_cost(&x, &u, 0);
            let terminal = t.terminal_cost(&x);
            assert!((terminal - (running - control_part)).abs() < 1e-9);
            assert_eq!(terminal, t.running_cost(&x, &DVector::zeros(t.model.m()), 0));
        }
    }
}

#[test]
fn cost_at_target_is_the_reward_well() {
    let t = task(ModelKind::PointMass);
    let x = DVector::from_column_slice(&[-7.0, 0.0, 0.0, 0.0]);
    let l = t.running_cost(&x, &DVector::zeros(2), 0);
    let residue = l + t.field.target_reward_weight;
    assert!(residue >= 0.0 && residue < 1e-3, "obstacle residue {residue}");
}

#[test]
fn control_gradient_is_the_effort_term() {
    let t = task(ModelKind::PointMass);
    let x = DVector::from_column_slice(&[3.0, 1.0, 0.0, 0.0]);
    let c = t.running_cost_derivatives(&x, &DVector::from_column_slice(&[1.0, 0.0]), 0);
    assert_eq!(c.l_u.as_slice(), &[2.0 * t.field.control_weight, 0.0]);
    assert!(c.l_ux.iter().all(|&v| v == 0.0));
}

#[test]
fn manipulator_step_is_second_order_close_to_rk4() {
    let t = task(ModelKind::Manipulator3dof);
    let m = &t.model;
    let mut r = rng(15);
    for _ in 0..20 {
        let x = random_vec(&mut r, 6, 1.0);
        let u = random_vec(&mut r, 3, 5.0);
        let euler = m.step(&TimeState::new(x.clone(), 0), &u).unwrap().x;
        // Reference: RK4 with dt / 100.
        let sub = 100;
        let h = m.dt / sub as f64;
        let mut y = x.clone();
        for _ in 0..sub {
            let k1 = m.continuous_dynamics(&y, &u);
            let k2 = m.continuous_dynamics(&(&y + &k1 * (h / 2.0)), &u);
            let k3 = m.continuous_dynamics(&(&y + &k2 * (h / 2.0)), &u);
            let k4 = m.continuous_dynamics(&(&y + &k3 * h), &u);
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        let bound = 10.0 * m.dt * m.dt * (1.0 + y.amax());
        let err = (euler - y).amax();
        assert!(err < bound, "Euler vs RK4 error {err} above O(dt^2) bound {bound}");
    }
}

#[test]
fn bounded_rollouts_stay_finite() {
    let mut r = rng(16);
    for kind in ALL_KINDS {
        let t = task(kind);
        let starts = t.model.sample_initial_states(10, 4, SampleRegion::Workspace).unwrap();
        for s in starts {
            let mut cur = s;
            while cur.t < t.model.horizon {
                let u = DVector::from_fn(t.model.m(), |i, _| {
                    let b = t.model.u_max[i];
                    r.random_range(-b..=b)
                });
                cur = t.model.step(&cur, &u).unwrap();
                assert!(cur.x.iter().all(|v| v.is_finite()), "{kind} produced a non-finite state");
                assert!(t.running_cost(&cur.x, &u, cur.t).is_finite());
            }
        }
    }
}

#[test]
fn toy_cost_has_two_wells() {
    let fd = |x: f64| (toy1d_cost(x + 1e-6) - toy1d_cost(x - 1e-6)) / 2e-6;
    let grid: Vec<f64> = (0..10_000).map(|i| -2.0 + 4.0 * i as f64 / 9_999.0).collect();
    let mut minima = Vec::new();
    let mut maxima = Vec::new();
    for w in grid.windows(2) {
        let (a, b) = (fd(w[0]), fd(w[1]));
        if a < 0.0 && b >= 0.0 {
            minima.push(0.5 * (w[0] + w[1]));
        } else if a > 0.0 && b <= 0.0 {
            maxima.push(0.5 * (w[0] + w[1]));
        }
    }
    assert_eq!(minima.len(), 2, "minima at {minima:?}");
    assert_eq!(maxima.len(), 1);
    let (x_g, x_l) = (minima[0], minima[1]);
    assert!(toy1d_cost(x_g) < toy1d_cost(x_l));
    assert!(fd(x_g).abs() < 1e-2 && fd(x_l).abs() < 1e-2);
    let x_b = maxima[0];
    assert!(x_g < x_b && x_b < x_l);
    assert!(toy1d_cost(x_b) > toy1d_cost(x_g) && toy1d_cost(x_b) > toy1d_cost(x_l));
}

#[test]
fn sampler_contract() {
    let m = model(ModelKind::PointMass);
    assert!(m.sample_initial_states(0, 1, SampleRegion::Workspace).is_err());
    let a = m.sample_initial_states(20, 5, SampleRegion::Workspace).unwrap();
    let b = m.sample_initial_states(20, 5, SampleRegion::Workspace).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|s| s.t == 0 && m.workspace.contains(&s.x)));
    let hard = m.sample_initial_states(20, 5, SampleRegion::HardRegion).unwrap();
    assert!(hard.iter().all(|s| m.hard_region.contains(&s.x) && s.x[2] == 0.0 && s.x[3] == 0.0));

    let mut empty = m.clone();
    empty.hard_region.lower[0] = 10.0;
    assert!(empty.sample_initial_states(5, 1, SampleRegion::HardRegion).is_err());
}

#[test]
fn uniform_sample_means_are_centered() {
    let m = model(ModelKind::PointMass);
    let count = 10_000;
    let samples = m.sample_initial_states(count, 21, SampleRegion::Workspace).unwrap();
    for i in 0..4 {
        let (lo, hi) = (m.workspace.lower[i], m.workspace.upper[i]);
        let mean = samples.iter().map(|s| s.x[i]).sum::<f64>() / count as f64;
        let sigma = (hi - lo) / 12f64.sqrt() / (count as f64).sqrt();
        assert!((mean - 0.5 * (lo + hi)).abs() < 3.0 * sigma, "dim {i}: mean {mean}");
    }
}
