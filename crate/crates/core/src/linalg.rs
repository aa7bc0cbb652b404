//! Dense least squares for the per-station baseline fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest singular value, relative to the largest, still treated as full rank.
const RANK_RCOND: f64 = 1e-10;

/// Minimizes `‖design · β − y‖₂` by SVD. Rank-deficient designs are rejected
/// with the ratio of extreme singular values as condition estimate.
pub(crate) fn least_squares(design: DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if design.nrows() < design.ncols() {
        return Err(Error::Underdetermined {
            samples: design.nrows(),
            params: design.ncols(),
        });
    }
    let svd = design.svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if min.is_nan() || min <= max * RANK_RCOND {
        return Err(Error::SingularSystem { condition });
    }
    svd.solve(y, 0.0).map_err(|_| Error::SingularSystem { condition })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_overdetermined_line() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_column_slice(&[1.0, 3.0, 5.0, 7.0]);
        let b = least_squares(x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_rank_deficiency() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        assert!(matches!(least_squares(x, &y), Err(Error::SingularSystem { .. })));
    }
}
