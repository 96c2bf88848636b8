//! Dense helpers for the small symmetric systems solved at every tree node.
//!
//! Matrices are row-major `dim × dim` slices. Nothing here allocates except
//! the factor buffers the caller hands in.

/// Cholesky factorization of `a + ridge·I` into `l` (lower triangle,
/// row-major). Returns false if a pivot is not safely positive.
pub fn cholesky_into(a: &[f64], dim: usize, ridge: f64, l: &mut [f64]) -> bool {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(l.len(), dim * dim);
    let scale = (0..dim).map(|i| a[i * dim + i].abs()).fold(ridge.abs(), f64::max);
    let tiny = scale * 1e-13;
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = a[i * dim + j];
            if i == j {
                sum += ridge;
            }
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if !(sum > tiny) || !sum.is_finite() {
                    return false;
                }
                l[i * dim + i] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
        for j in (i + 1)..dim {
            l[i * dim + j] = 0.0;
        }
    }
    true
}

/// Solves `L Lᵀ x = b` in place.
pub fn cholesky_solve(l: &[f64], dim: usize, b: &mut [f64]) {
    for i in 0..dim {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * dim + k] * b[k];
        }
        b[i] = sum / l[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut sum = b[i];
        for k in (i + 1)..dim {
            sum -= l[k * dim + i] * b[k];
        }
        b[i] = sum / l[i * dim + i];
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `xᵀ A x` for a row-major square matrix.
pub fn quad_form(a: &[f64], dim: usize, x: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..dim {
        let row = &a[i * dim..(i + 1) * dim];
        total += x[i] * dot(row, x);
    }
    total
}

/// Max-norm residual of `(a + ridge·I) x − b`, relative to `max(|b|, |a||x|)`.
pub fn relative_residual(a: &[f64], dim: usize, ridge: f64, x: &[f64], b: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..dim {
        let mut r = ridge * x[i] - b[i];
        let mut mag = (ridge * x[i]).abs() + b[i].abs();
        for j in 0..dim {
            r += a[i * dim + j] * x[j];
            mag += (a[i * dim + j] * x[j]).abs();
        }
        worst = worst.max(r.abs());
        scale = scale.max(mag);
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}
