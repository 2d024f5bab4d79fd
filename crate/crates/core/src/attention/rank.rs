use nalgebra::DMatrix;

use super::AttentionError;

/// `max(m, n) * machine epsilon`.
pub fn default_rel_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Numerical rank: the number of singular values above `rel_tol * s_max`.
/// `rel_tol` defaults to [`default_rel_tol`]; an all-zero matrix has rank 0.
pub fn svd_rank(m: &DMatrix<f64>, rel_tol: Option<f64>) -> Result<usize, AttentionError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(AttentionError::Domain("matrix has non-finite entries".into()));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(0);
    }
    let tol = rel_tol.unwrap_or_else(|| default_rel_tol(rows, cols));
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(AttentionError::Domain(format!("relative tolerance {tol} must be finite and non-negative")));
    }
    let singular = m.singular_values();
    let max = singular.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(singular.iter().filter(|&&s| s > tol * max).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn identity_zero_and_outer_product() {
        assert_eq!(svd_rank(&DMatrix::identity(3, 3), None).unwrap(), 3);
        assert_eq!(svd_rank(&DMatrix::zeros(4, 4), None).unwrap(), 0);
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, 0.25, 1.0, -1.0]);
        assert_eq!(svd_rank(&(&u * v.transpose()), None).unwrap(), 1);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(svd_rank(&m, None).is_err());
    }

    #[test]
    fn scale_and_transpose_invariance() {
        let m = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0, 0.0, 1.0, 0.0, 1.0]);
        let r = svd_rank(&m, None).unwrap();
        assert_eq!(r, 2);
        assert_eq!(svd_rank(&(&m * -3.5), None).unwrap(), r);
        assert_eq!(svd_rank(&m.transpose(), None).unwrap(), r);
    }
}
