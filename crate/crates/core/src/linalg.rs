//! Small dense linear-algebra helpers shared by the information and W code.

use nalgebra::DMatrix;

use crate::error::{MscsError, Result};

/// Matrices whose 2-norm condition number exceeds this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Ratio of the largest to the smallest singular value.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a · x = b` with full pivoting after a condition-number guard.
/// `order` only labels the error.
pub fn guarded_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, order: usize) -> Result<DMatrix<f64>> {
    let condition = condition_number(a);
    if !(condition <= MAX_CONDITION) {
        return Err(MscsError::SingularMatrix { order, condition });
    }
    a.clone()
        .full_piv_lu()
        .solve(b)
        .ok_or(MscsError::SingularMatrix { order, condition })
}

/// Computes `x · a⁻¹` as `(a⁻ᵀ xᵀ)ᵀ`.
pub fn right_solve(x: &DMatrix<f64>, a: &DMatrix<f64>, order: usize) -> Result<DMatrix<f64>> {
    Ok(guarded_solve(&a.transpose(), &x.transpose(), order)?.transpose())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_solve_inverts() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = right_solve(&x, &a, 1).unwrap();
        let back = &y * &a;
        assert!((back - x).norm() < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::identity(2, 2);
        assert!(matches!(
            guarded_solve(&a, &b, 3),
            Err(MscsError::SingularMatrix { order: 3, .. })
        ));
    }
}
