//! Small dense solvers used by the imputer.

use crate::error::{Error, Result};

/// Solves `a x = b` for a symmetric positive-definite `a` (row-major, n×n)
/// by Cholesky factorization.
pub fn cholesky_solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Singular(format!(
                        "matrix not positive definite at pivot {i}"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Ridge-damped least squares with an intercept.
///
/// `predictors` are column vectors of equal length; only `rows` participate
/// in the fit. Returns `[intercept, coef_0, coef_1, ...]`.
pub fn least_squares_fit(
    predictors: &[&[f64]],
    target: &[f64],
    rows: &[usize],
    ridge: f64,
) -> Result<Vec<f64>> {
    let p = predictors.len() + 1;
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut design = vec![0.0; p];
    for &i in rows {
        design[0] = 1.0;
        for (k, col) in predictors.iter().enumerate() {
            design[k + 1] = col[i];
        }
        for r in 0..p {
            rhs[r] += design[r] * target[i];
            for c in 0..=r {
                gram[r * p + c] += design[r] * design[c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            gram[c * p + r] = gram[r * p + c];
        }
        gram[r * p + r] += ridge;
    }
    cholesky_solve(&gram, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, &[2.0, 5.0]).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(cholesky_solve(&[0.0, 1.0, 1.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let beta = least_squares_fit(&[&x], &y, &[0, 1, 2, 3], 0.0).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
    }
}
