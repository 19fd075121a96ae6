//! Small dense solvers for the least-squares fits. Matrices are row-major.

/// Solve `a x = b` for symmetric positive definite `a` (n x n) by Cholesky.
/// Returns `None` when a pivot is not safely positive.
pub fn cholesky_solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-12 * scale {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

/// Gram matrix `xᵀx` and moment vector `xᵀy` for an n x p design.
pub fn normal_equations(x: &[f64], n: usize, p: usize, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut g = vec![0.0; p * p];
    let mut m = vec![0.0; p];
    for r in 0..n {
        let row = &x[r * p..(r + 1) * p];
        for i in 0..p {
            m[i] += row[i] * y[r];
            for j in 0..p {
                g[i * p + j] += row[i] * row[j];
            }
        }
    }
    (g, m)
}

/// Householder QR least squares. Returns the coefficients and the numerical
/// column rank; coefficients are only meaningful when the rank is `p`.
pub fn qr_lstsq(x: &[f64], n: usize, p: usize, y: &[f64]) -> (Vec<f64>, usize) {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    let norm_x = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let tol = 1e-10 * norm_x;
    let mut rank = 0;
    let steps = p.min(n);
    for k in 0..steps {
        let alpha = (k..n).map(|r| a[r * p + k] * a[r * p + k]).sum::<f64>().sqrt();
        if alpha <= tol {
            continue;
        }
        rank += 1;
        let sign = if a[k * p + k] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (k..n).map(|r| a[r * p + k]).collect();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..p {
            let dot: f64 = (k..n).map(|r| v[r - k] * a[r * p + j]).sum();
            let f = 2.0 * dot / vnorm2;
            for r in k..n {
                a[r * p + j] -= f * v[r - k];
            }
        }
        let dot: f64 = (k..n).map(|r| v[r - k] * b[r]).sum();
        let f = 2.0 * dot / vnorm2;
        for r in k..n {
            b[r] -= f * v[r - k];
        }
    }
    let mut coef = vec![0.0; p];
    if rank == p {
        for i in (0..p).rev() {
            let mut s = b[i];
            for j in i + 1..p {
                s -= a[i * p + j] * coef[j];
            }
            coef[i] = s / a[i * p + i];
        }
    }
    (coef, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_small_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, 2, &[2.0, 1.0]).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
        assert!(cholesky_solve(&[1.0, 1.0, 1.0, 1.0], 2, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn qr_recovers_exact_fit_and_reports_rank() {
        // y = 2 a - b
        let x = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 3.0];
        let y = [2.0, -1.0, 1.0, 1.0];
        let (c, rank) = qr_lstsq(&x, 4, 2, &y);
        assert_eq!(rank, 2);
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] + 1.0).abs() < 1e-12);

        let collinear = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        assert_eq!(qr_lstsq(&collinear, 3, 2, &[1.0, 2.0, 3.0]).1, 1);
    }
}
