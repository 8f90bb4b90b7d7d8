use cacto::ilqr::regularize_psd;
use cacto::Error;
use nalgebra::DMatrix;
use approx::assert_relative_eq;
use nalgebra::dmatrix;

#[test]
fn identity_above_floor_is_unchanged() {
    let q = DMatrix::<f64>::identity(2, 2);
    assert_relative_eq!(regularize_psd(&q, 0.1).unwrap(), q, epsilon = 1e-14);
}

#[test]
fn negative_diagonal_entry_is_clipped() {
    let q = dmatrix![-1.0, 0.0; 0.0, 2.0];
    let out = regularize_psd(&q, 0.1).unwrap();
    assert_relative_eq!(out, dmatrix![0.1, 0.0; 0.0, 2.0], epsilon = 1e-14);
}

#[test]
fn non_finite_input_is_an_error() {
    let q = dmatrix![f64::NAN, 0.0; 0.0, 1.0];
    assert!(matches!(regularize_psd(&q, 0.1), Err(Error::NonFinite { .. })));
}

#[test]
fn non_square_input_is_an_error() {
    let q = DMatrix::<f64>::zeros(2, 3);
    assert!(regularize_psd(&q, 0.1).is_err());
}

#[test]
fn asymmetric_input_is_symmetrized_first() {
    let q = dmatrix![2.0, 1.0; 0.0, 2.0];
    let out = regularize_psd(&q, 1e-3).unwrap();
    assert_relative_eq!(out, dmatrix![2.0, 0.5; 0.5, 2.0], epsilon = 1e-12);
}

#[test]
fn works_in_single_precision() {
    let q = DMatrix::<f32>::from_diagonal(&nalgebra::dvector![-3.0, 0.5, 4.0]);
    let out = regularize_psd(&q, 0.25f32).unwrap();
    assert_relative_eq!(out[(0, 0)], 0.25, epsilon = 1e-6);
    assert_relative_eq!(out[(1, 1)], 0.5, epsilon = 1e-6);
    assert_relative_eq!(out[(2, 2)], 4.0, epsilon = 1e-6);
}
