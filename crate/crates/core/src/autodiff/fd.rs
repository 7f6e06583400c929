use crate::error::Result;

use super::tensor::Tensor;

/// Central-difference gradient estimate of a scalar-valued function at `x`:
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` per coordinate.
///
/// The function is evaluated on detached constant tensors, so the estimate is
/// independent of the reverse-mode path it is used to check.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    assert!(eps > 0.0, "eps must be positive");
    let base = x.to_vec();
    let shape = x.shape().to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let fp = f(&Tensor::constant(&shape, plus)?)?;
        let fm = f(&Tensor::constant(&shape, minus)?)?;
        grad[i] = (fp.item() - fm.item()) / (2.0 * eps);
    }
    Tensor::constant(&shape, grad)
}

/// Central-difference Jacobian of a vector-valued map, row-major `n x n`.
pub fn finite_difference_jacobian<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut jac = vec![0.0; n * n];
    for j in 0..n {
        let mut plus = x.to_vec();
        plus[j] += eps;
        let mut minus = x.to_vec();
        minus[j] -= eps;
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        for i in 0..n {
            jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

/// Determinant of a row-major `n x n` matrix via LU with partial pivoting.
pub fn lu_det(matrix: &[f64], n: usize) -> f64 {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        det *= a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
        }
    }
    det
}

/// True when `|a - b| <= abs_tol + rel_tol * max(|a|, |b|)`.
pub fn close(a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> bool {
    (a - b).abs() <= abs_tol + rel_tol * a.abs().max(b.abs())
}

/// True when every pair of entries satisfies [`close`].
pub fn all_close(a: &[f64], b: &[f64], rel_tol: f64, abs_tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| close(x, y, rel_tol, abs_tol))
}
