use num_complex::Complex64;

use super::{DenseMatrix, NumericsError};

/// LU factorization with partial pivoting.
pub struct LuFactors {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

/// Factor a square matrix. A pivot below `1e-14 *` the largest entry of the
/// input is treated as singular.
pub fn lu_factor(a: &DenseMatrix) -> Result<LuFactors, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::Dimension(format!(
            "lu_factor needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.all_finite() {
        return Err(NumericsError::NonFinite("lu_factor input"));
    }
    let n = a.rows();
    let threshold = 1e-14 * a.max_abs();
    let mut lu = a.data().to_vec();
    let mut piv: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let mut p = k;
        let mut max = lu[k * n + k].abs();
        for i in (k + 1)..n {
            let v = lu[i * n + k].abs();
            if v > max {
                max = v;
                p = i;
            }
        }
        if max <= threshold {
            return Err(NumericsError::SingularMatrix {
                row: k,
                pivot: max,
                threshold,
            });
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            piv.swap(k, p);
        }
        let pivot = lu[k * n + k];
        for i in (k + 1)..n {
            let factor = lu[i * n + k] / pivot;
            lu[i * n + k] = factor;
            if factor != 0.0 {
                for j in (k + 1)..n {
                    lu[i * n + j] -= factor * lu[k * n + j];
                }
            }
        }
    }
    Ok(LuFactors { n, lu, piv })
}

impl LuFactors {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = vec![0.0; self.n];
        for (i, &p) in self.piv.iter().enumerate() {
            x[i] = b[p];
        }
        self.solve_permuted_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let x = self.solve(b);
        b.copy_from_slice(&x);
    }

    fn solve_permuted_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
    }
}

/// Solve `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if b.len() != a.rows() {
        return Err(NumericsError::Dimension(format!(
            "lu_solve rhs length {} does not match {} rows",
            b.len(),
            a.rows()
        )));
    }
    Ok(lu_factor(a)?.solve(b))
}

/// Complex LU with partial pivoting, used for shifted inverse iteration.
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    piv: Vec<usize>,
}

impl ComplexLu {
    pub fn factor(a: &[Complex64], n: usize) -> Result<Self, NumericsError> {
        assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let threshold = 1e-300f64.max(1e-16 * scale);
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut max = lu[k * n + k].norm();
            for i in (k + 1)..n {
                let v = lu[i * n + k].norm();
                if v > max {
                    max = v;
                    p = i;
                }
            }
            if max <= threshold {
                return Err(NumericsError::SingularMatrix {
                    row: k,
                    pivot: max,
                    threshold,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                for j in (k + 1)..n {
                    let sub = factor * lu[k * n + j];
                    lu[i * n + j] -= sub;
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for (i, &p) in self.piv.iter().enumerate() {
            x[i] = b[p];
        }
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let a = DenseMatrix::identity(3);
        let x = lu_solve(&a, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        let x = lu_solve(&a, &[2.0, 4.0]).unwrap();
        assert_eq!(x, vec![1.0, 1.0]);
    }

    #[test]
    fn singular_reports() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(
            lu_solve(&a, &[1.0, 1.0]),
            Err(NumericsError::SingularMatrix { .. })
        ));
    }
}
