#![allow(dead_code)]

use cacto::envs::{ArmParams, CostField, Ellipse, ModelKind, ModelSpec, Region, Task};
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn wall_field() -> CostField<f64> {
    CostField {
        target: Vector2::new(-7.0, 0.0),
        obstacles: vec![
            Ellipse {
                center: Vector2::new(-2.0, -3.0),
                semi_axes: Vector2::new(1.0, 2.0),
                angle: 0.3,
            },
            Ellipse {
                center: Vector2::new(-2.5, 0.0),
                semi_axes: Vector2::new(1.2, 1.8),
                angle: 0.0,
            },
            Ellipse {
                center: Vector2::new(-2.0, 3.0),
                semi_axes: Vector2::new(1.0, 2.0),
                angle: -0.3,
            },
        ],
        obstacle_weight: 50.0,
        obstacle_sharpness: 4.0,
        target_reward_weight: 20.0,
        target_reward_radius: 1.5,
        control_weight: 0.01,
        distance_weight: 0.1,
    }
}

fn region(lo: &[f64], hi: &[f64]) -> Region<f64> {
    Region::new(DVector::from_column_slice(lo), DVector::from_column_slice(hi)).unwrap()
}

pub fn model(kind: ModelKind) -> ModelSpec<f64> {
    match kind {
        ModelKind::Toy1d => ModelSpec::new(
            kind,
            0.05,
            60,
            DVector::from_element(1, 2.0),
            region(&[-2.0], &[2.0]),
            region(&[-0.2], &[0.2]),
        ),
        ModelKind::PointMass => ModelSpec::new(
            kind,
            0.05,
            60,
            DVector::from_element(2, 10.0),
            region(&[-15.0, -15.0, -6.0, -6.0], &[15.0, 15.0, 6.0, 6.0]),
            region(&[2.0, -2.0, 0.0, 0.0], &[6.0, 2.0, 0.0, 0.0]),
        ),
        ModelKind::DubinsCar => ModelSpec::new(
            kind,
            0.05,
            100,
            DVector::from_column_slice(&[1.0, 2.0]),
            region(&[-15.0, -15.0, -3.1, -3.0, -2.0], &[15.0, 15.0, 3.1, 3.0, 2.0]),
            region(&[2.0, -2.0, -3.1, 0.0, 0.0], &[6.0, 2.0, 3.1, 0.0, 0.0]),
        ),
        ModelKind::Manipulator3dof => ModelSpec::new(
            kind,
            0.05,
            100,
            DVector::from_element(3, 20.0),
            region(&[-3.1, -3.1, -3.1, -2.0, -2.0, -2.0], &[3.1, 3.1, 3.1, 2.0, 2.0, 2.0]),
            region(&[-0.5, -0.5, -0.5, 0.0, 0.0, 0.0], &[0.5, 0.5, 0.5, 0.0, 0.0, 0.0]),
        )
        .map(|m| m.with_arm(ArmParams::default())),
    }
    .unwrap()
}

pub fn task(kind: ModelKind) -> Task<f64> {
    let field = if kind == ModelKind::Toy1d {
        CostField {
            distance_weight: 1.0,
            control_weight: 0.05,
            ..CostField::zero()
        }
    } else {
        wall_field()
    };
    Task::new(model(kind), field)
}

pub const ALL_KINDS: [ModelKind; 4] = [
    ModelKind::Toy1d,
    ModelKind::PointMass,
    ModelKind::DubinsCar,
    ModelKind::Manipulator3dof,
];

pub fn random_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let y0 = f(x);
    let mut jac = DMatrix::zeros(y0.len(), x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Largest entrywise relative error, with `floor` guarding near-zero references.
pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Cyclic Jacobi eigenvalue iteration for symmetric matrices; sorted ascending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = DMatrix::identity(n, n);
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = s;
                rot[(q, p)] = -s;
                m = rot.transpose() * &m * &rot;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

/// Linear dynamics `x' = A x + B u` with cost `x^T Q x + u^T R u` and terminal `x^T Qf x`.
pub struct Lqr {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub horizon: usize,
    pub bound: DVector<f64>,
}

fn random_spd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * floor
}

impl Lqr {
    pub fn random<R: Rng>(rng: &mut R, n: usize, m: usize, horizon: usize) -> Self {
        Self {
            a: DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1)),
            b: DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.5..0.5)),
            q: random_spd(rng, n, 0.1),
            r: random_spd(rng, m, 0.1),
            qf: random_spd(rng, n, 0.1),
            horizon,
            bound: DVector::from_element(m, 1e9),
        }
    }

    /// Riccati matrices `P_0..P_T` and gains `K_0..K_{T-1}` (`u = -K x`).
    pub fn riccati(&self) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut p = self.qf.clone();
        let mut ps = vec![p.clone()];
        let mut ks = Vec::new();
        for _ in 0..self.horizon {
            let btp = self.b.transpose() * &p;
            let k = (&self.r + &btp * &self.b).try_inverse().unwrap() * &btp * &self.a;
            p = &self.q + self.a.transpose() * &p * &self.a - self.a.transpose() * &p * &self.b * &k;
            p = (&p + p.transpose()) * 0.5;
            ps.push(p.clone());
            ks.push(k);
        }
        ps.reverse();
        ks.reverse();
        (ps, ks)
    }
}

impl cacto::Problem<f64> for Lqr {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn control_bound(&self) -> &DVector<f64> {
        &self.bound
    }
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, _t: usize) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn dynamics_jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, _t: usize) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }
    fn running_cost_derivatives(&self, x: &DVector<f64>, u: &DVector<f64>, t: usize) -> cacto::CostDerivatives<f64> {
        cacto::CostDerivatives {
            l: self.running_cost(x, u, t),
            l_x: &self.q * x * 2.0,
            l_u: &self.r * u * 2.0,
            l_xx: &self.q * 2.0,
            l_uu: &self.r * 2.0,
            l_ux: DMatrix::zeros(u.len(), x.len()),
        }
    }
    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.qf * x))
    }
    fn terminal_cost_derivatives(&self, x: &DVector<f64>) -> cacto::TerminalDerivatives<f64> {
        cacto::TerminalDerivatives {
            l: self.terminal_cost(x),
            l_x: &self.qf * x * 2.0,
            l_xx: &self.qf * 2.0,
        }
    }
}
