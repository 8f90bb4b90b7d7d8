//! Benchmark systems: state/control conventions, explicit-Euler dynamics with
//! exact Jacobians, task-space costs and initial-state samplers.

mod arm;
mod cost;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use arm::ArmParams;
pub use cost::{toy1d_cost, toy1d_cost_derivatives, CostField, Ellipse};

use crate::error::check_dim;
use crate::problem::{CostDerivatives, Problem, TerminalDerivatives};
use crate::{Error, Result, Scalar};

/// Augmented state `[x, t]`: physical state plus discrete time index.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeState<T: Scalar> {
    pub x: DVector<T>,
    pub t: usize,
}

impl<T: Scalar> TimeState<T> {
    pub fn new(x: DVector<T>, t: usize) -> Self {
        Self { x, t }
    }

    pub fn from_slice(x: &[T], t: usize) -> Self {
        Self {
            x: DVector::from_column_slice(x),
            t,
        }
    }
}

/// Control vector, one entry per actuator.
pub type Control<T> = DVector<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Toy1d,
    PointMass,
    DubinsCar,
    Manipulator3dof,
}

impl ModelKind {
    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::Toy1d => 1,
            ModelKind::PointMass => 4,
            ModelKind::DubinsCar => 5,
            ModelKind::Manipulator3dof => 6,
        }
    }

    pub fn control_dim(self) -> usize {
        match self {
            ModelKind::Toy1d => 1,
            ModelKind::PointMass | ModelKind::DubinsCar => 2,
            ModelKind::Manipulator3dof => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Toy1d => "toy1d",
            ModelKind::PointMass => "point_mass",
            ModelKind::DubinsCar => "dubins_car",
            ModelKind::Manipulator3dof => "manipulator3dof",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            ModelKind::Toy1d,
            ModelKind::PointMass,
            ModelKind::DubinsCar,
            ModelKind::Manipulator3dof,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned box over the physical state.
#[derive(Clone, Debug, PartialEq)]
pub struct Region<T: Scalar> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Scalar> Region<T> {
    pub fn new(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        check_dim("region bounds", lower.len(), upper.len())?;
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty() || self.lower.iter().zip(self.upper.iter()).any(|(lo, hi)| lo > hi)
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    pub fn midpoint(&self) -> DVector<T> {
        (&self.lower + &self.upper) * crate::lit::<T>(0.5)
    }

    pub fn half_widths(&self) -> DVector<T> {
        (&self.upper - &self.lower) * crate::lit::<T>(0.5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRegion {
    Workspace,
    HardRegion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec<T: Scalar> {
    pub kind: ModelKind,
    /// Integration step (s).
    pub dt: T,
    /// Maximum horizon `T_max` in steps.
    pub horizon: usize,
    pub u_max: DVector<T>,
    pub workspace: Region<T>,
    pub hard_region: Region<T>,
    pub arm: ArmParams<T>,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(
        kind: ModelKind,
        dt: T,
        horizon: usize,
        u_max: DVector<T>,
        workspace: Region<T>,
        hard_region: Region<T>,
    ) -> Result<Self> {
        let spec = Self {
            kind,
            dt,
            horizon,
            u_max,
            workspace,
            hard_region,
            arm: ArmParams::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_arm(mut self, arm: ArmParams<T>) -> Self {
        self.arm = arm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("u_max", self.m(), self.u_max.len())?;
        check_dim("workspace", self.n(), self.workspace.dim())?;
        check_dim("hard region", self.n(), self.hard_region.dim())?;
        if !(self.dt > T::zero()) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least one step".into()));
        }
        if self.u_max.iter().any(|&b| !(b > T::zero())) {
            return Err(Error::InvalidArgument("u_max must be positive".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn m(&self) -> usize {
        self.kind.control_dim()
    }

    fn check_inputs(&self, state: &TimeState<T>, u: &DVector<T>) -> Result<()> {
        check_dim("state", self.n(), state.x.len())?;
        check_dim("control", self.m(), u.len())?;
        if state.t >= self.horizon {
            return Err(Error::TimeOutOfRange {
                t: state.t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// Continuous-time state derivative.
    fn derivative(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        match self.kind {
            ModelKind::Toy1d => DVector::from_element(1, u[0]),
            ModelKind::PointMass => DVector::from_column_slice(&[x[2], x[3], u[0], u[1]]),
            ModelKind::DubinsCar => {
                let (theta, v, a) = (x[2], x[3], x[4]);
                DVector::from_column_slice(&[v * theta.cos(), v * theta.sin(), u[0], a, u[1]])
            }
            ModelKind::Manipulator3dof => arm::state_derivative(&self.arm, x, u),
        }
    }

    /// Continuous-time Jacobians `(A, B)`.
    fn derivative_jacobians(&self, x: &DVector<T>, u: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        let (n, m) = (self.n(), self.m());
        let one = T::one();
        match self.kind {
            ModelKind::Toy1d => (DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, one)),
            ModelKind::PointMass => {
                let mut a = DMatrix::zeros(n, n);
                a[(0, 2)] = one;
                a[(1, 3)] = one;
                let mut b = DMatrix::zeros(n, m);
                b[(2, 0)] = one;
                b[(3, 1)] = one;
                (a, b)
            }
            ModelKind::DubinsCar => {
                let (theta, v) = (x[2], x[3]);
                let (s, c) = (theta.sin(), theta.cos());
                let mut a = DMatrix::zeros(n, n);
                a[(0, 2)] = -v * s;
                a[(0, 3)] = c;
                a[(1, 2)] = v * c;
                a[(1, 3)] = s;
                a[(3, 4)] = one;
                let mut b = DMatrix::zeros(n, m);
                b[(2, 0)] = one;
                b[(4, 1)] = one;
                (a, b)
            }
            ModelKind::Manipulator3dof => arm::state_jacobians(&self.arm, x, u),
        }
    }

    /// Explicit-Euler step of the physical state, without checks.
    pub(crate) fn euler(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        x + self.derivative(x, u) * self.dt
    }

    pub(crate) fn euler_jacobians(&self, x: &DVector<T>, u: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        let (a, b) = self.derivative_jacobians(x, u);
        let n = self.n();
        (DMatrix::identity(n, n) + a * self.dt, b * self.dt)
    }

    /// One explicit-Euler step; advances the time index by one.
    pub fn step(&self, state: &TimeState<T>, u: &Control<T>) -> Result<TimeState<T>> {
        self.check_inputs(state, u)?;
        Ok(TimeState::new(self.euler(&state.x, u), state.t + 1))
    }

    /// Exact Jacobians `(f_x, f_u)` of [`ModelSpec::step`].
    pub fn dynamics_jacobians(&self, state: &TimeState<T>, u: &Control<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
        self.check_inputs(state, u)?;
        Ok(self.euler_jacobians(&state.x, u))
    }

    /// Continuous dynamics, exposed for reference integrators in tests.
    pub fn continuous_dynamics(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        self.derivative(x, u)
    }

    /// Task-space position: end effector for the arm, the first coordinate
    /// (padded with zero) for the 1D toy, `(x, y)` otherwise.
    pub fn task_position(&self, x: &DVector<T>) -> Vector2<T> {
        match self.kind {
            ModelKind::Toy1d => Vector2::new(x[0], T::zero()),
            ModelKind::PointMass | ModelKind::DubinsCar => Vector2::new(x[0], x[1]),
            ModelKind::Manipulator3dof => self.arm.forward_kinematics(&x.as_slice()[..arm::LINKS]),
        }
    }

    pub fn region(&self, region: SampleRegion) -> &Region<T> {
        match region {
            SampleRegion::Workspace => &self.workspace,
            SampleRegion::HardRegion => &self.hard_region,
        }
    }

    /// Draws `count` i.i.d. uniform states from the requested box, all at `t = 0`.
    pub fn sample_initial_states(&self, count: usize, seed: u64, region: SampleRegion) -> Result<Vec<TimeState<T>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_initial_states_with(count, &mut rng, region)
    }

    pub fn sample_initial_states_with<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
        region: SampleRegion,
    ) -> Result<Vec<TimeState<T>>> {
        if count == 0 {
            return Err(Error::InvalidArgument("initial-state count must be at least one".into()));
        }
        let bounds = self.region(region);
        if bounds.is_empty() {
            return Err(Error::Empty("sampling region"));
        }
        Ok((0..count)
            .map(|_| {
                let x = DVector::from_fn(bounds.dim(), |i, _| {
                    let u: f64 = rng.random();
                    bounds.lower[i] + (bounds.upper[i] - bounds.lower[i]) * crate::lit::<T>(u)
                });
                TimeState::new(x, 0)
            })
            .collect())
    }
}

/// A benchmark system paired with its cost landscape.
#[derive(Clone, Debug)]
pub struct Task<T: Scalar> {
    pub model: ModelSpec<T>,
    pub field: CostField<T>,
}

impl<T: Scalar> Task<T> {
    pub fn new(model: ModelSpec<T>, field: CostField<T>) -> Self {
        Self { model, field }
    }

    fn state_cost(&self, x: &DVector<T>) -> (T, DVector<T>, DMatrix<T>) {
        let n = self.model.n();
        match self.model.kind {
            ModelKind::Toy1d => {
                let w = self.field.distance_weight;
                let (d1, d2) = toy1d_cost_derivatives(x[0]);
                (
                    w * toy1d_cost(x[0]),
                    DVector::from_element(1, w * d1),
                    DMatrix::from_element(1, 1, w * d2),
                )
            }
            ModelKind::PointMass | ModelKind::DubinsCar => {
                let p = Vector2::new(x[0], x[1]);
                let (v, g, h) = self.field.planar_cost(&p);
                let mut grad = DVector::zeros(n);
                let mut hess = DMatrix::zeros(n, n);
                grad.rows_mut(0, 2).copy_from(&g);
                hess.view_mut((0, 0), (2, 2)).copy_from(&h);
                (v, grad, hess)
            }
            ModelKind::Manipulator3dof => {
                let q = &x.as_slice()[..arm::LINKS];
                let p = self.model.arm.forward_kinematics(q);
                let (v, g, h) = self.field.planar_cost(&p);
                let (jac, p_hess) = self.model.arm.kinematics_derivatives(q);
                let grad_q = jac.transpose() * g;
                let hess_q = jac.transpose() * h * jac + p_hess[0] * g.x + p_hess[1] * g.y;
                let mut grad = DVector::zeros(n);
                let mut hess = DMatrix::zeros(n, n);
                grad.rows_mut(0, arm::LINKS).copy_from(&grad_q);
                hess.view_mut((0, 0), (arm::LINKS, arm::LINKS)).copy_from(&hess_q);
                (v, grad, hess)
            }
        }
    }

    fn state_cost_value(&self, x: &DVector<T>) -> T {
        match self.model.kind {
            ModelKind::Toy1d => self.field.distance_weight * toy1d_cost(x[0]),
            _ => {
                let p = self.model.task_position(x);
                planar_value(&self.field, &p)
            }
        }
    }

    /// Running cost and exact derivatives at `(x̃, u)`, with dimension checks.
    pub fn running_cost_checked(&self, state: &TimeState<T>, u: &Control<T>) -> Result<CostDerivatives<T>> {
        check_dim("state", self.model.n(), state.x.len())?;
        check_dim("control", self.model.m(), u.len())?;
        Ok(self.running_cost_derivatives(&state.x, u, state.t))
    }

    /// Terminal cost: the running cost without its control terms.
    pub fn terminal_cost_checked(&self, state: &TimeState<T>) -> Result<TerminalDerivatives<T>> {
        check_dim("state", self.model.n(), state.x.len())?;
        Ok(self.terminal_cost_derivatives(&state.x))
    }
}

fn planar_value<T: Scalar>(field: &CostField<T>, p: &Vector2<T>) -> T {
    // Value-only path; shares the closed form with `planar_cost`.
    let d = p - field.target;
    let dist_sq = d.norm_squared();
    let mut value = field.distance_weight * dist_sq;
    if field.target_reward_weight > T::zero() {
        let r_sq = field.target_reward_radius * field.target_reward_radius;
        value -= field.target_reward_weight * (-dist_sq / r_sq).exp();
    }
    if field.obstacle_weight > T::zero() {
        let kappa = field.obstacle_sharpness;
        for ob in &field.obstacles {
            let z = kappa * (T::one() - ob.level(p));
            value += field.obstacle_weight * crate::softplus(z) / kappa;
        }
    }
    value
}

impl<T: Scalar> Problem<T> for Task<T> {
    fn state_dim(&self) -> usize {
        self.model.n()
    }

    fn control_dim(&self) -> usize {
        self.model.m()
    }

    fn horizon(&self) -> usize {
        self.model.horizon
    }

    fn control_bound(&self) -> &DVector<T> {
        &self.model.u_max
    }

    fn dynamics(&self, x: &DVector<T>, u: &DVector<T>, _t: usize) -> DVector<T> {
        self.model.euler(x, u)
    }

    fn dynamics_jacobians(&self, x: &DVector<T>, u: &DVector<T>, _t: usize) -> (DMatrix<T>, DMatrix<T>) {
        self.model.euler_jacobians(x, u)
    }

    fn running_cost(&self, x: &DVector<T>, u: &DVector<T>, _t: usize) -> T {
        self.state_cost_value(x) + self.field.control_weight * u.norm_squared()
    }

    fn running_cost_derivatives(&self, x: &DVector<T>, u: &DVector<T>, _t: usize) -> CostDerivatives<T> {
        let (ls, lx, lxx) = self.state_cost(x);
        let (lc, lu, luu) = self.field.control_cost(u);
        CostDerivatives {
            l: ls + lc,
            l_x: lx,
            l_u: lu,
            l_xx: lxx,
            l_uu: luu,
            l_ux: DMatrix::zeros(self.model.m(), self.model.n()),
        }
    }

    fn terminal_cost(&self, x: &DVector<T>) -> T {
        self.state_cost_value(x)
    }

    fn terminal_cost_derivatives(&self, x: &DVector<T>) -> TerminalDerivatives<T> {
        let (l, l_x, l_xx) = self.state_cost(x);
        TerminalDerivatives { l, l_x, l_xx }
    }
}
