//! Continuous 6D rotation parameterization.
//!
//! A [`Rotation6D`] stores the first two columns of a rotation matrix as
//! `[c1x, c1y, c1z, c2x, c2y, c2z]`. Decoding runs Gram–Schmidt on the two
//! columns and recovers the third column with a cross product, so any
//! non-degenerate input maps to a proper rotation.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Columns shorter than this (or closer to colinear than this) are rejected.
pub const DEGENERACY_EPS: f64 = 1e-12;
/// Orthonormality tolerance accepted by [`matrix_to_rot6d`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub const IDENTITY: Rotation6D = Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_slice(values: &[f64]) -> Self {
        let mut r = [0.0; 6];
        r.copy_from_slice(&values[..6]);
        Rotation6D(r)
    }

    pub fn first_column(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second_column(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        rot6d_to_matrix(self)
    }
}

pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<Matrix3<f64>> {
    if r.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRotation("non-finite entry".into()));
    }
    let a1 = r.first_column();
    let a2 = r.second_column();
    let n1 = a1.norm();
    if n1 < DEGENERACY_EPS {
        return Err(Error::DegenerateRotation("first column is zero".into()));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 < DEGENERACY_EPS * a2.norm().max(1.0) {
        return Err(Error::DegenerateRotation(
            "columns are zero or colinear".into(),
        ));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Max-abs deviation of `MᵀM` from the identity.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Result<Rotation6D> {
    let err = orthonormality_error(m);
    if !err.is_finite() || err > ORTHONORMAL_TOL || m.determinant() <= 0.0 {
        return Err(Error::NotARotation(err));
    }
    Ok(Rotation6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]))
}

/// Projects an arbitrary 6-vector onto the nearest 6D encoding of a valid
/// rotation (Gram–Schmidt). Degenerate blocks become the identity.
pub fn project_rot6d(values: &mut [f64]) {
    let r = Rotation6D::from_slice(values);
    let projected = rot6d_to_matrix(&r)
        .and_then(|m| matrix_to_rot6d(&m))
        .unwrap_or(Rotation6D::IDENTITY);
    values[..6].copy_from_slice(&projected.0);
}

/// Rotation of `angle` radians about a unit `axis`.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Geodesic angle of a rotation matrix, in `[0, π]`.
pub fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

/// Backpropagates a gradient on the decoded matrix to the 6D parameters.
///
/// `grad_m` holds `∂L/∂M` for `M = rot6d_to_matrix(r)`.
pub fn rot6d_backward(r: &Rotation6D, grad_m: &Matrix3<f64>) -> [f64; 6] {
    let a1 = r.first_column();
    let a2 = r.second_column();
    let n1 = a1.norm();
    let b1 = a1 / n1;
    let d = b1.dot(&a2);
    let u2 = a2 - b1 * d;
    let n2 = u2.norm();
    let b2 = u2 / n2;

    let g1 = grad_m.column(0).into_owned();
    let g2 = grad_m.column(1).into_owned();
    let g3 = grad_m.column(2).into_owned();

    // b3 = b1 × b2
    let mut gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);

    // b2 = u2 / |u2|
    let gu2 = (gb2 - b2 * b2.dot(&gb2)) / n2;
    // u2 = a2 - b1 (b1·a2)
    let mut ga2 = gu2;
    let gd = -b1.dot(&gu2);
    gb1 += -gu2 * d + a2 * gd;
    ga2 += b1 * gd;
    // b1 = a1 / |a1|
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;

    [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_encoding() {
        let m = rot6d_to_matrix(&Rotation6D::IDENTITY).unwrap();
        assert_eq!(m, Matrix3::identity());
        assert_eq!(matrix_to_rot6d(&Matrix3::identity()).unwrap(), Rotation6D::IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = rot6d_to_matrix(&Rotation6D([0.0, 1.0, 0.0, -1.0, 0.0, 0.0])).unwrap();
        let expected = axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2);
        assert!((m - expected).abs().max() < 1e-12);
    }

    #[test]
    fn half_turn_about_x() {
        let m = axis_angle(Vector3::x(), std::f64::consts::PI);
        let r = matrix_to_rot6d(&m).unwrap();
        let expected = [1.0, 0.0, 0.0, 0.0, -1.0, 0.0];
        for (a, b) in r.0.iter().zip(expected) {
            assert!(close(*a, b, 1e-12));
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(
            rot6d_to_matrix(&Rotation6D([0.0; 6])),
            Err(Error::DegenerateRotation(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&Rotation6D([1.0, 2.0, 3.0, 2.0, 4.0, 6.0])),
            Err(Error::DegenerateRotation(_))
        ));
    }

    #[test]
    fn non_rotation_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 2.0;
        assert!(matches!(matrix_to_rot6d(&m), Err(Error::NotARotation(_))));
        // reflection
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matrix_to_rot6d(&r).is_err());
    }

    #[test]
    fn first_column_is_normalized_input() {
        let r = Rotation6D([3.0, 0.0, 4.0, 0.3, 1.0, -0.2]);
        let m = rot6d_to_matrix(&r).unwrap();
        assert!(close(m[(0, 0)], 0.6, 1e-15));
        assert!(close(m[(2, 0)], 0.8, 1e-15));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let r = Rotation6D([0.3, -1.2, 0.5, 0.9, 0.4, -0.7]);
        // L = sum(W ∘ M) for a fixed weight matrix W.
        let w = Matrix3::new(0.1, -0.4, 0.7, 1.3, 0.2, -0.9, 0.5, 0.8, -0.3);
        let loss = |r: &Rotation6D| rot6d_to_matrix(r).unwrap().component_mul(&w).sum();
        let grad = rot6d_backward(&r, &w);
        let h = 1e-6;
        for i in 0..6 {
            let mut p = r;
            let mut m = r;
            p.0[i] += h;
            m.0[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!(close(grad[i], fd, 1e-7), "component {i}: {} vs {fd}", grad[i]);
        }
    }
}
