//! Planar three-link arm in the horizontal plane.
//!
//! Each link carries a point mass at its distal end and every joint adds a
//! constant armature inertia, so the mass matrix stays positive definite in
//! all configurations. Joint torques are the controls.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

use crate::{lit, Scalar};

pub const LINKS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ArmParams<T: Scalar> {
    pub lengths: [T; LINKS],
    pub masses: [T; LINKS],
    pub armature: T,
    pub damping: T,
    pub base: [T; 2],
}

impl<T: Scalar> Default for ArmParams<T> {
    fn default() -> Self {
        Self {
            lengths: [lit(3.0); LINKS],
            masses: [T::one(); LINKS],
            armature: lit(0.1),
            damping: lit(0.1),
            base: [T::zero(); 2],
        }
    }
}

/// Mass matrix with its first and second derivatives in joint angles.
///
/// `d_mass[k]` is `dM/dq_k`, `dd_mass[k][l]` is `d²M/dq_k dq_l`.
pub(crate) struct MassTerms<T: Scalar> {
    pub mass: Matrix3<T>,
    pub d_mass: [Matrix3<T>; LINKS],
    pub dd_mass: [[Matrix3<T>; LINKS]; LINKS],
}

fn absolute_angles<T: Scalar>(q: &[T]) -> [T; LINKS] {
    let mut phi = [T::zero(); LINKS];
    let mut acc = T::zero();
    for j in 0..LINKS {
        acc += q[j];
        phi[j] = acc;
    }
    phi
}

impl<T: Scalar> ArmParams<T> {
    /// End-effector position.
    pub fn forward_kinematics(&self, q: &[T]) -> Vector2<T> {
        let phi = absolute_angles(q);
        let mut p = Vector2::new(self.base[0], self.base[1]);
        for j in 0..LINKS {
            p.x += self.lengths[j] * phi[j].cos();
            p.y += self.lengths[j] * phi[j].sin();
        }
        p
    }

    /// Position Jacobian `dp/dq` (2 × 3) and the per-coordinate Hessians.
    pub fn kinematics_derivatives(&self, q: &[T]) -> (nalgebra::Matrix2x3<T>, [Matrix3<T>; 2]) {
        let phi = absolute_angles(q);
        let mut jac = nalgebra::Matrix2x3::zeros();
        let mut hess = [Matrix3::zeros(), Matrix3::zeros()];
        for a in 0..LINKS {
            for j in a..LINKS {
                jac[(0, a)] -= self.lengths[j] * phi[j].sin();
                jac[(1, a)] += self.lengths[j] * phi[j].cos();
            }
            for b in 0..LINKS {
                for j in a.max(b)..LINKS {
                    hess[0][(a, b)] -= self.lengths[j] * phi[j].cos();
                    hess[1][(a, b)] -= self.lengths[j] * phi[j].sin();
                }
            }
        }
        (jac, hess)
    }

    pub(crate) fn mass_terms(&self, q: &[T]) -> MassTerms<T> {
        let phi = absolute_angles(q);
        let mut mass = Matrix3::identity() * self.armature;
        let mut d_mass = [Matrix3::zeros(); LINKS];
        let mut dd_mass = [[Matrix3::zeros(); LINKS]; LINKS];
        // M_ab = sum over link pairs (j >= a, j' >= b) of mu_jj' l_j l_j' cos(phi_j - phi_j'),
        // mu_jj' being the mass carried beyond both links.
        for j in 0..LINKS {
            for jp in 0..LINKS {
                let carried = (j.max(jp)..LINKS).fold(T::zero(), |acc, i| acc + self.masses[i]);
                let coef = carried * self.lengths[j] * self.lengths[jp];
                let delta = phi[j] - phi[jp];
                let (s, c) = (delta.sin(), delta.cos());
                let sel: [T; LINKS] = std::array::from_fn(|k| {
                    let in_j = if k <= j { T::one() } else { T::zero() };
                    let in_jp = if k <= jp { T::one() } else { T::zero() };
                    in_j - in_jp
                });
                for a in 0..=j {
                    for b in 0..=jp {
                        mass[(a, b)] += coef * c;
                        for k in 0..LINKS {
                            d_mass[k][(a, b)] -= coef * s * sel[k];
                            for l in 0..LINKS {
                                dd_mass[k][l][(a, b)] -= coef * c * sel[k] * sel[l];
                            }
                        }
                    }
                }
            }
        }
        MassTerms {
            mass,
            d_mass,
            dd_mass,
        }
    }

    /// Joint accelerations for joint positions `q`, velocities `qd` and torques `tau`.
    pub fn acceleration(&self, q: &[T], qd: &[T], tau: &[T]) -> Vector3<T> {
        let terms = self.mass_terms(q);
        let qd = Vector3::from_column_slice(qd);
        let rhs = Vector3::from_column_slice(tau) - coriolis(&terms.d_mass, &qd) - qd * self.damping;
        solve3(&terms.mass, &rhs)
    }

    /// Accelerations with their Jacobians in `q`, `qd` and `tau`.
    pub fn acceleration_derivatives(&self, q: &[T], qd: &[T], tau: &[T]) -> (Vector3<T>, Matrix3<T>, Matrix3<T>, Matrix3<T>) {
        let terms = self.mass_terms(q);
        let qd = Vector3::from_column_slice(qd);
        let rhs = Vector3::from_column_slice(tau) - coriolis(&terms.d_mass, &qd) - qd * self.damping;
        let inv = terms
            .mass
            .try_inverse()
            .expect("arm mass matrix is positive definite");
        let acc = inv * rhs;

        // Christoffel symbols gamma[k](a, b) and their q-derivatives.
        let gamma = christoffel(&terms.d_mass);
        let mut d_acc_dq = Matrix3::zeros();
        for l in 0..LINKS {
            let mut d_rhs = Vector3::zeros();
            for k in 0..LINKS {
                let mut dc = T::zero();
                for a in 0..LINKS {
                    for b in 0..LINKS {
                        let dgamma = lit::<T>(0.5)
                            * (terms.dd_mass[l][a][(k, b)] + terms.dd_mass[l][b][(k, a)]
                                - terms.dd_mass[l][k][(a, b)]);
                        dc += dgamma * qd[a] * qd[b];
                    }
                }
                d_rhs[k] = -dc;
            }
            let col = inv * (d_rhs - terms.d_mass[l] * acc);
            d_acc_dq.set_column(l, &col);
        }
        let mut d_rhs_dqd = Matrix3::zeros();
        for k in 0..LINKS {
            for a in 0..LINKS {
                let mut v = T::zero();
                for b in 0..LINKS {
                    v += gamma[k][(a, b)] * qd[b];
                }
                d_rhs_dqd[(k, a)] = -(v + v);
            }
            d_rhs_dqd[(k, k)] -= self.damping;
        }
        let d_acc_dqd = inv * d_rhs_dqd;
        (acc, d_acc_dq, d_acc_dqd, inv)
    }
}

fn christoffel<T: Scalar>(d_mass: &[Matrix3<T>; LINKS]) -> [Matrix3<T>; LINKS] {
    let half = lit::<T>(0.5);
    std::array::from_fn(|k| {
        Matrix3::from_fn(|a, b| half * (d_mass[a][(k, b)] + d_mass[b][(k, a)] - d_mass[k][(a, b)]))
    })
}

fn coriolis<T: Scalar>(d_mass: &[Matrix3<T>; LINKS], qd: &Vector3<T>) -> Vector3<T> {
    let gamma = christoffel(d_mass);
    Vector3::from_fn(|k, _| (qd.transpose() * gamma[k] * qd)[(0, 0)])
}

fn solve3<T: Scalar>(m: &Matrix3<T>, rhs: &Vector3<T>) -> Vector3<T> {
    m.cholesky()
        .map(|c| c.solve(rhs))
        .or_else(|| m.try_inverse().map(|inv| inv * rhs))
        .expect("arm mass matrix is positive definite")
}

/// Continuous-time state derivative for state `(q, qd)` and torques `tau`.
pub(crate) fn state_derivative<T: Scalar>(arm: &ArmParams<T>, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    let acc = arm.acceleration(&x.as_slice()[..LINKS], &x.as_slice()[LINKS..], u.as_slice());
    let mut out = DVector::zeros(2 * LINKS);
    for i in 0..LINKS {
        out[i] = x[LINKS + i];
        out[LINKS + i] = acc[i];
    }
    out
}

/// Continuous-time Jacobians `(A, B)` of [`state_derivative`].
pub(crate) fn state_jacobians<T: Scalar>(
    arm: &ArmParams<T>,
    x: &DVector<T>,
    u: &DVector<T>,
) -> (DMatrix<T>, DMatrix<T>) {
    let (_, d_q, d_qd, inv) =
        arm.acceleration_derivatives(&x.as_slice()[..LINKS], &x.as_slice()[LINKS..], u.as_slice());
    let mut a = DMatrix::zeros(2 * LINKS, 2 * LINKS);
    let mut b = DMatrix::zeros(2 * LINKS, LINKS);
    for i in 0..LINKS {
        a[(i, LINKS + i)] = T::one();
        for j in 0..LINKS {
            a[(LINKS + i, j)] = d_q[(i, j)];
            a[(LINKS + i, LINKS + j)] = d_qd[(i, j)];
            b[(LINKS + i, j)] = inv[(i, j)];
        }
    }
    (a, b)
}
