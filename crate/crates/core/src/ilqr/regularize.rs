use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result, Scalar};

/// Eigenvalue floor applied to Hessians in the backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig<T: Scalar> {
    pub eps: T,
}

impl<T: Scalar> RegularizerConfig<T> {
    pub fn new(eps: T) -> Result<Self> {
        if eps > T::zero() {
            Ok(Self { eps })
        } else {
            Err(Error::InvalidArgument("regularizer eps must be positive".into()))
        }
    }
}

impl<T: Scalar> Default for RegularizerConfig<T> {
    fn default() -> Self {
        Self { eps: crate::lit(1e-6) }
    }
}

/// Projects a symmetric matrix onto `{ Q : eig(Q) >= eps }` by clipping its
/// eigenvalues from below and reassembling `W diag(max(S, eps)) W^T`.
pub fn regularize_psd<T: Scalar>(q: &DMatrix<T>, eps: T) -> Result<DMatrix<T>> {
    if !q.is_square() {
        return Err(Error::Dimension {
            what: "regularize_psd input (columns)",
            expected: q.nrows(),
            got: q.ncols(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "matrix passed to regularize_psd",
            step: 0,
        });
    }
    let half = crate::lit::<T>(0.5);
    let sym = (q + q.transpose()) * half;
    let n = sym.nrows();
    if n == 1 {
        return Ok(DMatrix::from_element(1, 1, sym[(0, 0)].max(eps)));
    }
    let eig = SymmetricEigen::new(sym);
    let w = eig.eigenvectors;
    let clipped = eig.eigenvalues.map(|s| s.max(eps));
    let mut scaled = w.clone();
    for (mut col, &s) in scaled.column_iter_mut().zip(clipped.iter()) {
        col *= s;
    }
    let q_plus = scaled * w.transpose();
    let q_psd = (&q_plus + q_plus.transpose()) * half;
    if q_psd.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "eigendecomposition in regularize_psd",
            step: 0,
        });
    }
    Ok(q_psd)
}
