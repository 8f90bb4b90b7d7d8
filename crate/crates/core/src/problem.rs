//! The finite-horizon optimal control problem seen by the solver and the
//! actor loss: discrete dynamics, running cost and terminal cost together
//! with their first and second derivatives.

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

/// Running-cost value with gradient and Hessian blocks at one `(x, u)` point.
#[derive(Clone, Debug)]
pub struct CostDerivatives<T: Scalar> {
    pub l: T,
    pub l_x: DVector<T>,
    pub l_u: DVector<T>,
    pub l_xx: DMatrix<T>,
    pub l_uu: DMatrix<T>,
    /// Mixed block `d²l / du dx`, shape `m × n`.
    pub l_ux: DMatrix<T>,
}

impl<T: Scalar> CostDerivatives<T> {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            l: T::zero(),
            l_x: DVector::zeros(n),
            l_u: DVector::zeros(m),
            l_xx: DMatrix::zeros(n, n),
            l_uu: DMatrix::zeros(m, m),
            l_ux: DMatrix::zeros(m, n),
        }
    }
}

/// Terminal-cost value with gradient and Hessian.
#[derive(Clone, Debug)]
pub struct TerminalDerivatives<T: Scalar> {
    pub l: T,
    pub l_x: DVector<T>,
    pub l_xx: DMatrix<T>,
}

/// A discrete-time optimal control problem over time indices `0..=horizon`.
///
/// Implementations must be pure: every method is a function of its
/// arguments only, so problems can be solved concurrently.
pub trait Problem<T: Scalar>: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Terminal time index; a trajectory started at `t0` has `horizon - t0` controls.
    fn horizon(&self) -> usize;
    /// Per-component bound `|u_i| <= u_max_i`.
    fn control_bound(&self) -> &DVector<T>;

    fn dynamics(&self, x: &DVector<T>, u: &DVector<T>, t: usize) -> DVector<T>;
    /// Returns `(f_x, f_u)` of the discrete map.
    fn dynamics_jacobians(&self, x: &DVector<T>, u: &DVector<T>, t: usize) -> (DMatrix<T>, DMatrix<T>);

    fn running_cost(&self, x: &DVector<T>, u: &DVector<T>, t: usize) -> T;
    fn running_cost_derivatives(&self, x: &DVector<T>, u: &DVector<T>, t: usize) -> CostDerivatives<T>;

    fn terminal_cost(&self, x: &DVector<T>) -> T;
    fn terminal_cost_derivatives(&self, x: &DVector<T>) -> TerminalDerivatives<T>;

    /// Clamps `u` into the control box.
    fn clamp_control(&self, u: &mut DVector<T>) {
        for (ui, &bound) in u.iter_mut().zip(self.control_bound().iter()) {
            *ui = (*ui).max(-bound).min(bound);
        }
    }
}

impl<T: Scalar, P: Problem<T> + ?Sized> Problem<T> for &P {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn control_bound(&self) -> &DVector<T> {
        (**self).control_bound()
    }
    fn dynamics(&self, x: &DVector<T>, u: &DVector<T>, t: usize) -> DVector<T> {
        (**self).dynamics(x, u, t)
    }
    fn dynamics_jacobians(&self, x: &DVector<T>, u: &DVector<T>, t: usize) -> (DMatrix<T>, DMatrix<T>) {
        (**self).dynamics_jacobians(x, u, t)
    }
    fn running_cost(&self, x: &DVector<T>, u: &DVector<T>, t: usize) -> T {
        (**self).running_cost(x, u, t)
    }
    fn running_cost_derivatives(&self, x: &DVector<T>, u: &DVector<T>, t: usize) -> CostDerivatives<T> {
        (**self).running_cost_derivatives(x, u, t)
    }
    fn terminal_cost(&self, x: &DVector<T>) -> T {
        (**self).terminal_cost(x)
    }
    fn terminal_cost_derivatives(&self, x: &DVector<T>) -> TerminalDerivatives<T> {
        (**self).terminal_cost_derivatives(x)
    }
}
