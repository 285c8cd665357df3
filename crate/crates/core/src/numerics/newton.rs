use super::{lu_factor, DenseMatrix, NumericsError};

/// Central-difference Jacobian with per-component step `eps * (1 + |x_i|)`.
pub fn fd_jacobian(f: &mut dyn FnMut(&[f64]) -> Vec<f64>, x: &[f64], eps: f64) -> DenseMatrix {
    let n = x.len();
    let mut xp = x.to_vec();
    let f0 = f(x);
    let m = f0.len();
    let mut jac = DenseMatrix::zeros(m, n);
    for j in 0..n {
        let h = eps * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

pub struct NewtonResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton iteration with finite-difference Jacobians.
pub fn newton_solve(
    f: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<NewtonResult, NumericsError> {
    newton_solve_with_jacobian(f, &mut |x, f2| fd_jacobian(f2, x, 1e-7), x0, tol, max_iter)
}

/// Newton iteration with a caller-supplied Jacobian.
pub fn newton_solve_with_jacobian(
    f: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    jac: &mut dyn FnMut(&[f64], &mut dyn FnMut(&[f64]) -> Vec<f64>) -> DenseMatrix,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<NewtonResult, NumericsError> {
    let mut x = x0.to_vec();
    let mut residual = f(&x);
    let mut norm = inf_norm(&residual);
    if !norm.is_finite() {
        return Err(NumericsError::NonFinite("newton residual at x0"));
    }
    for it in 0..max_iter {
        if norm <= tol {
            return Ok(NewtonResult {
                x,
                iterations: it,
                residual_norm: norm,
            });
        }
        let j = jac(&x, f);
        let factors = lu_factor(&j)?;
        let dx = factors.solve(&residual);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi -= di;
        }
        residual = f(&x);
        norm = inf_norm(&residual);
        if !norm.is_finite() {
            return Err(NumericsError::NonFinite("newton residual"));
        }
    }
    if norm <= tol {
        return Ok(NewtonResult {
            x,
            iterations: max_iter,
            residual_norm: norm,
        });
    }
    Err(NumericsError::NonConvergence {
        iterations: max_iter,
        residual: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_in_one_iteration() {
        let c = [3.0, -2.0];
        let mut f = |x: &[f64]| vec![x[0] - c[0], x[1] - c[1]];
        let r = newton_solve_with_jacobian(
            &mut f,
            &mut |_, _| DenseMatrix::identity(2),
            &[10.0, 10.0],
            1e-12,
            10,
        )
        .unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.x[0] - 3.0).abs() < 1e-12 && (r.x[1] + 2.0).abs() < 1e-12);

        // The finite-difference default lands on the root too.
        let r2 = newton_solve(&mut f, &[10.0, 10.0], 1e-12, 10).unwrap();
        assert!(r2.iterations <= 2);
        assert!((r2.x[0] - 3.0).abs() < 1e-10 && (r2.x[1] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_quadratic_root() {
        let mut f = |x: &[f64]| vec![x[0] * x[0] - 4.0];
        let r = newton_solve(&mut f, &[3.0], 1e-10, 50).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fd_jacobian_linear_exact() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]);
        let mc = m.clone();
        let mut f = move |x: &[f64]| mc.mul_vec(x);
        let j = fd_jacobian(&mut f, &[0.3, -0.7], 1e-7);
        for i in 0..2 {
            for jj in 0..2 {
                assert!((j[(i, jj)] - m[(i, jj)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fd_jacobian_scalar_quadratic() {
        let mut f = |x: &[f64]| vec![x[0] * x[0]];
        let j = fd_jacobian(&mut f, &[3.0], 1e-7);
        assert!((j[(0, 0)] - 6.0).abs() < 1e-6);
    }
}
