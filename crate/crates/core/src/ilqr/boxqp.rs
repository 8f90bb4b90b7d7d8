use nalgebra::{DMatrix, DVector};

use crate::{lit, Scalar};

const MAX_ITER: usize = 100;
const MAX_BACKTRACK: usize = 30;

/// Solution of a box-constrained quadratic program.
#[derive(Clone, Debug)]
pub(crate) struct BoxQpSolution<T: Scalar> {
    pub x: DVector<T>,
    /// `true` for coordinates strictly inside the box at the solution.
    pub free: Vec<bool>,
}

fn objective<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>, x: &DVector<T>) -> T {
    x.dot(g) + lit::<T>(0.5) * x.dot(&(h * x))
}

fn project<T: Scalar>(x: &mut DVector<T>, lo: &DVector<T>, hi: &DVector<T>) {
    for i in 0..x.len() {
        x[i] = x[i].max(lo[i]).min(hi[i]);
    }
}

/// Projected Newton method for `min ½xᵀHx + gᵀx` subject to `lo ≤ x ≤ hi`,
/// with `H` positive definite and `lo ≤ 0 ≤ hi`.
pub(crate) fn box_qp<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>) -> BoxQpSolution<T> {
    let m = g.len();
    let mut x = DVector::zeros(m);
    let mut value = T::zero();
    let mut free = vec![true; m];
    let tiny = lit::<T>(1e-13);
    for _ in 0..MAX_ITER {
        let grad = g + h * &x;
        let mut changed = false;
        for i in 0..m {
            let clamped = (x[i] <= lo[i] && grad[i] > T::zero()) || (x[i] >= hi[i] && grad[i] < T::zero());
            changed |= free[i] == clamped;
            free[i] = !clamped;
        }
        let idx: Vec<usize> = (0..m).filter(|&i| free[i]).collect();
        if idx.is_empty() {
            break;
        }
        let grad_free = DVector::from_iterator(idx.len(), idx.iter().map(|&i| grad[i]));
        if !changed && grad_free.norm() < tiny * (T::one() + g.norm()) {
            break;
        }
        let h_free = DMatrix::from_fn(idx.len(), idx.len(), |r, c| h[(idx[r], idx[c])]);
        let Some(chol) = h_free.cholesky() else { break };
        let step_free = -chol.solve(&grad_free);
        let mut direction = DVector::zeros(m);
        for (r, &i) in idx.iter().enumerate() {
            direction[i] = step_free[r];
        }
        let expected = grad.dot(&direction);
        if expected >= T::zero() {
            break;
        }
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut trial = &x + &direction * alpha;
            project(&mut trial, lo, hi);
            let v = objective(h, g, &trial);
            if v - value <= lit::<T>(0.1) * (&trial - &x).dot(&grad) && v < value {
                accepted = Some((trial, v));
                break;
            }
            alpha *= lit(0.5);
        }
        let Some((trial, v)) = accepted else { break };
        let improvement = value - v;
        x = trial;
        value = v;
        if improvement <= tiny * (T::one() + value.abs()) && !changed {
            break;
        }
    }
    for i in 0..m {
        let grad_i = g[i] + (h.row(i) * &x)[0];
        free[i] = !((x[i] <= lo[i] && grad_i > T::zero()) || (x[i] >= hi[i] && grad_i < T::zero()));
    }
    BoxQpSolution { x, free }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_solution_is_the_newton_step() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![0.3, -0.2]);
        let big = DVector::from_element(2, 10.0);
        let sol = box_qp(&h, &g, &-&big, &big);
        let newton = -h.clone().cholesky().unwrap().solve(&g);
        assert!((sol.x - newton).amax() < 1e-12);
        assert_eq!(sol.free, vec![true, true]);
    }

    #[test]
    fn active_bound_matches_enumeration() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let g = DVector::from_vec(vec![-5.0, 1.0]);
        let lo = DVector::from_vec(vec![-1.0, -1.0]);
        let hi = DVector::from_vec(vec![1.0, 1.0]);
        let sol = box_qp(&h, &g, &lo, &hi);
        // Brute force over a fine grid.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..=400 {
                let x = DVector::from_vec(vec![-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0]);
                let v = objective(&h, &g, &x);
                if v < best.0 {
                    best = (v, x[0], x[1]);
                }
            }
        }
        assert!(objective(&h, &g, &sol.x) <= best.0 + 1e-12);
        assert_eq!(sol.x[0], 1.0);
        assert_eq!(sol.free, vec![false, true]);
    }
}
