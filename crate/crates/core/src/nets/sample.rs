use nalgebra::DVector;

use crate::envs::TimeState;
use crate::Scalar;

/// Replay record produced from one step of an optimized trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TOSample<T: Scalar> {
    pub state: TimeState<T>,
    pub control: DVector<T>,
    /// Partial cost-to-go over the next `K` steps (terminal cost included when the horizon is reached).
    pub v_bar: T,
    pub v_bar_x: DVector<T>,
    /// State reached `K` steps later, or at the horizon.
    pub state_after: TimeState<T>,
}

impl<T: Scalar> TOSample<T> {
    pub fn is_valid(&self, n: usize, m: usize) -> bool {
        self.state.x.len() == n
            && self.control.len() == m
            && self.v_bar_x.len() == n
            && self.state_after.x.len() == n
            && self.v_bar.is_finite()
    }
}
