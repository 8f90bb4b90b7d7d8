use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::boxqp::box_qp;
use super::{regularize_psd, RegularizerConfig, Trajectory};
use crate::{lit, Error, Problem, Result, Scalar};

/// Affine control update `du = k + K dx` for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Gain<T: Scalar> {
    pub feedforward: DVector<T>,
    pub feedback: DMatrix<T>,
}

#[derive(Clone, Debug)]
pub struct BackwardPass<T: Scalar> {
    pub gains: Vec<Gain<T>>,
    /// Value gradient of the local quadratic model, `T + 1` entries.
    pub v_x: Vec<DVector<T>>,
    /// Regularized value Hessian, `T + 1` entries.
    pub v_xx: Vec<DMatrix<T>>,
    /// Cost decrease predicted by the quadratic model for a full step.
    pub expected_decrease: T,
}

fn finite_or(ok: bool, what: &'static str, step: usize) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite { what, step })
    }
}

/// How the solver treats the control box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlLimits {
    /// Unconstrained Newton step; the forward rollout clamps controls.
    #[default]
    Clamp,
    /// Feedforward from the box-constrained QP, zero feedback on saturated
    /// controls. The rollout still clamps.
    BoxQp,
}

/// Gauss-Newton backward recursion along `traj` with [`ControlLimits::Clamp`].
/// Both `Q_uu` and `V_xx` pass through [`regularize_psd`] before use.
pub fn backward_pass<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    traj: &Trajectory<T>,
    reg: &RegularizerConfig<T>,
) -> Result<BackwardPass<T>> {
    backward_pass_with(problem, traj, reg, ControlLimits::Clamp)
}

pub fn backward_pass_with<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    traj: &Trajectory<T>,
    reg: &RegularizerConfig<T>,
    limits: ControlLimits,
) -> Result<BackwardPass<T>> {
    let steps = traj.len();
    let last = traj.final_state();
    let terminal = problem.terminal_cost_derivatives(&last.x);
    let mut v_x = terminal.l_x;
    let mut v_xx = regularize_psd(&terminal.l_xx, reg.eps).map_err(|_| Error::NonFinite {
        what: "terminal cost Hessian",
        step: steps,
    })?;

    let mut gains = Vec::with_capacity(steps);
    let mut vx_seq = Vec::with_capacity(steps + 1);
    let mut vxx_seq = Vec::with_capacity(steps + 1);
    vx_seq.push(v_x.clone());
    vxx_seq.push(v_xx.clone());
    let mut linear_term = T::zero();
    let mut quadratic_term = T::zero();
    let half = lit::<T>(0.5);

    for k in (0..steps).rev() {
        let state = &traj.states[k];
        let u = &traj.controls[k];
        let c = problem.running_cost_derivatives(&state.x, u, state.t);
        let (f_x, f_u) = problem.dynamics_jacobians(&state.x, u, state.t);

        let f_x_t = f_x.transpose();
        let f_u_t = f_u.transpose();
        let vxx_fx = &v_xx * &f_x;
        let vxx_fu = &v_xx * &f_u;
        let q_x = &c.l_x + &f_x_t * &v_x;
        let q_u = &c.l_u + &f_u_t * &v_x;
        let q_xx = &c.l_xx + &f_x_t * &vxx_fx;
        let q_uu = &c.l_uu + &f_u_t * &vxx_fu;
        let q_ux = &c.l_ux + &f_u_t * &vxx_fx;
        finite_or(
            q_u.iter().chain(q_uu.iter()).chain(q_ux.iter()).all(|v| v.is_finite()),
            "Q-function expansion",
            k,
        )?;

        let q_uu_reg = regularize_psd(&q_uu, reg.eps).map_err(|_| Error::NonFinite {
            what: "control Hessian",
            step: k,
        })?;
        let (feedforward, free) = match limits {
            ControlLimits::Clamp => (DVector::zeros(u.len()), (0..u.len()).collect::<Vec<_>>()),
            ControlLimits::BoxQp => {
                let bound = problem.control_bound();
                let qp = box_qp(&q_uu_reg, &q_u, &(-bound - u), &(bound - u));
                let free = (0..u.len()).filter(|&i| qp.free[i]).collect();
                (qp.x, free)
            }
        };
        let mut feedforward = feedforward;
        let mut feedback = DMatrix::zeros(u.len(), state.x.len());
        if !free.is_empty() {
            let h_free = DMatrix::from_fn(free.len(), free.len(), |r, c| q_uu_reg[(free[r], free[c])]);
            let chol = h_free.cholesky().ok_or(Error::NonFinite {
                what: "Cholesky factor of the regularized control Hessian",
                step: k,
            })?;
            let q_ux_free = DMatrix::from_fn(free.len(), q_ux.ncols(), |r, c| q_ux[(free[r], c)]);
            let k_free = -chol.solve(&q_ux_free);
            for (r, &i) in free.iter().enumerate() {
                feedback.set_row(i, &k_free.row(r));
            }
            if limits == ControlLimits::Clamp {
                feedforward = -chol.solve(&q_u);
            }
        }

        linear_term += feedforward.dot(&q_u);
        quadratic_term += half * feedforward.dot(&(&q_uu * &feedforward));

        let k_t = feedback.transpose();
        v_x = &q_x + &k_t * (&q_uu * &feedforward) + &k_t * &q_u + q_ux.transpose() * &feedforward;
        let v_xx_raw = &q_xx + &k_t * &q_uu * &feedback + &k_t * &q_ux + q_ux.transpose() * &feedback;
        v_xx = regularize_psd(&v_xx_raw, reg.eps).map_err(|_| Error::NonFinite {
            what: "value Hessian",
            step: k,
        })?;
        finite_or(v_x.iter().all(|v| v.is_finite()), "value gradient", k)?;

        vx_seq.push(v_x.clone());
        vxx_seq.push(v_xx.clone());
        gains.push(Gain { feedforward, feedback });
    }
    gains.reverse();
    vx_seq.reverse();
    vxx_seq.reverse();
    Ok(BackwardPass {
        gains,
        v_x: vx_seq,
        v_xx: vxx_seq,
        expected_decrease: -(linear_term + quadratic_term),
    })
}
