//! Task-space cost landscape: quadratic tracking of a 2D target, a Gaussian
//! reward well around it, smooth barriers for elliptical obstacles and a
//! quadratic control-effort term.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::{lit, sigmoid, softplus, Scalar};

/// Rotated ellipse `{ p : (p - c)^T A (p - c) <= 1 }`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse<T: Scalar> {
    pub center: Vector2<T>,
    pub semi_axes: Vector2<T>,
    /// Rotation of the first semi-axis from the x axis (rad).
    pub angle: T,
}

impl<T: Scalar> Ellipse<T> {
    /// Shape matrix `A = R diag(1/a², 1/b²) R^T`.
    pub fn shape(&self) -> Matrix2<T> {
        let (s, c) = (self.angle.sin(), self.angle.cos());
        let rot = Matrix2::new(c, -s, s, c);
        let inv_sq = Matrix2::from_diagonal(&Vector2::new(
            T::one() / (self.semi_axes.x * self.semi_axes.x),
            T::one() / (self.semi_axes.y * self.semi_axes.y),
        ));
        rot * inv_sq * rot.transpose()
    }

    /// Level-set value: below one inside, one on the boundary.
    pub fn level(&self, p: &Vector2<T>) -> T {
        let d = p - self.center;
        (d.transpose() * self.shape() * d)[(0, 0)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostField<T: Scalar> {
    pub target: Vector2<T>,
    pub obstacles: Vec<Ellipse<T>>,
    pub obstacle_weight: T,
    /// Steepness of the softplus barrier; larger values approach a hinge on the level set.
    pub obstacle_sharpness: T,
    pub target_reward_weight: T,
    pub target_reward_radius: T,
    pub control_weight: T,
    pub distance_weight: T,
}

impl<T: Scalar> CostField<T> {
    /// A field whose every weight is zero.
    pub fn zero() -> Self {
        Self {
            target: Vector2::zeros(),
            obstacles: Vec::new(),
            obstacle_weight: T::zero(),
            obstacle_sharpness: T::one(),
            target_reward_weight: T::zero(),
            target_reward_radius: T::one(),
            control_weight: T::zero(),
            distance_weight: T::zero(),
        }
    }

    /// Whether `p` lies within one reward radius of the target.
    pub fn in_target_neighborhood(&self, p: &Vector2<T>) -> bool {
        (p - self.target).norm() <= self.target_reward_radius
    }

    /// Planar state cost (everything except control effort) with gradient and Hessian.
    pub fn planar_cost(&self, p: &Vector2<T>) -> (T, Vector2<T>, Matrix2<T>) {
        let two = lit::<T>(2.0);
        let d = p - self.target;
        let dist_sq = d.norm_squared();

        let mut value = self.distance_weight * dist_sq;
        let mut grad = d * (two * self.distance_weight);
        let mut hess = Matrix2::identity() * (two * self.distance_weight);

        if self.target_reward_weight > T::zero() {
            let r_sq = self.target_reward_radius * self.target_reward_radius;
            let e = (-dist_sq / r_sq).exp();
            let w = self.target_reward_weight;
            value -= w * e;
            let k = two * w * e / r_sq;
            grad += d * k;
            hess += (Matrix2::identity() - d * d.transpose() * (two / r_sq)) * k;
        }

        if self.obstacle_weight > T::zero() {
            let kappa = self.obstacle_sharpness;
            for ob in &self.obstacles {
                let a = ob.shape();
                let rel = p - ob.center;
                let level = (rel.transpose() * a * rel)[(0, 0)];
                let z = kappa * (T::one() - level);
                let s = sigmoid(z);
                let level_grad = a * rel * two;
                value += self.obstacle_weight * softplus(z) / kappa;
                grad -= level_grad * (self.obstacle_weight * s);
                hess += (level_grad * level_grad.transpose() * (kappa * s * (T::one() - s))
                    - a * (two * s))
                    * self.obstacle_weight;
            }
        }
        (value, grad, hess)
    }

    /// Control-effort term `control_weight * |u|^2` with its derivatives.
    pub fn control_cost(&self, u: &DVector<T>) -> (T, DVector<T>, DMatrix<T>) {
        let two = lit::<T>(2.0);
        let m = u.len();
        (
            self.control_weight * u.norm_squared(),
            u * (two * self.control_weight),
            DMatrix::identity(m, m) * (two * self.control_weight),
        )
    }
}

/// Tilted double well with a global minimum near `-1` and a worse local minimum near `+1`.
pub fn toy1d_cost<T: Scalar>(x: T) -> T {
    let s = x * x - T::one();
    s * s + lit::<T>(TOY1D_TILT) * x
}

pub(crate) const TOY1D_TILT: f64 = 0.3;

/// First and second derivative of [`toy1d_cost`].
pub fn toy1d_cost_derivatives<T: Scalar>(x: T) -> (T, T) {
    let four = lit::<T>(4.0);
    let d1 = four * x * (x * x - T::one()) + lit::<T>(TOY1D_TILT);
    let d2 = lit::<T>(12.0) * x * x - four;
    (d1, d2)
}
