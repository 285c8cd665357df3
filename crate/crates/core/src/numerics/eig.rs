use num_complex::Complex64;

use super::{ComplexLu, DenseMatrix, NumericsError};

/// Eigenvalues of a real matrix, closed under conjugation for real input.
#[derive(Clone, Debug)]
pub struct ComplexSpectrum {
    /// Sorted by descending real part, then descending imaginary part.
    pub eigenvalues: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn max_real(&self) -> f64 {
        self.eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |m, e| m.max(e.re))
    }

    pub fn rightmost(&self) -> Option<Complex64> {
        self.eigenvalues.first().copied()
    }
}

fn sort_spectrum(mut ev: Vec<Complex64>) -> Vec<Complex64> {
    ev.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    ev
}

/// Householder reduction of a square matrix to upper Hessenberg form.
pub fn hessenberg(a: &DenseMatrix) -> DenseMatrix {
    assert!(a.is_square());
    let n = a.rows();
    let mut h = a.clone();
    if n < 3 {
        return h;
    }
    let low = 0;
    let high = n - 1;
    let mut ort = vec![0.0; n];

    for m in (low + 1)..high {
        let mut scale = 0.0;
        for i in m..=high {
            scale += h[(i, m - 1)].abs();
        }
        if scale == 0.0 {
            continue;
        }
        let mut hsum = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hsum += ort[i] * ort[i];
        }
        let mut g = hsum.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hsum -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[(i, j)];
            }
            f /= hsum;
            for i in m..=high {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h[(i, j)];
            }
            f /= hsum;
            for j in m..=high {
                h[(i, j)] -= f * ort[j];
            }
        }
        h[(m, m - 1)] = scale * g;
        for i in (m + 1)..=high {
            h[(i, m - 1)] = 0.0;
        }
    }
    h
}

/// All eigenvalues of a real square matrix via Hessenberg reduction followed
/// by the implicitly shifted double QR iteration.
pub fn eigenvalues(a: &DenseMatrix) -> Result<ComplexSpectrum, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::Dimension(format!(
            "eigenvalues needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.all_finite() {
        return Err(NumericsError::NonFinite("eigenvalues input"));
    }
    let nn = a.rows();
    if nn == 0 {
        return Ok(ComplexSpectrum {
            eigenvalues: vec![],
        });
    }
    let mut h = hessenberg(a);
    let mut d = vec![0.0; nn];
    let mut e = vec![0.0; nn];

    // Francis double-shift QR on the Hessenberg matrix (EISPACK hqr).
    let low = 0usize;
    let high = nn - 1;
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    #[allow(unused_assignments)]
    let (mut p, mut q, mut r): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let (mut s, mut z): (f64, f64);
    let (mut x, mut y, mut w): (f64, f64, f64);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }

    let mut n = high as isize;
    let mut iter = 0usize;
    let mut total_iter = 0usize;
    let budget = 40 * nn.max(1);

    while n >= low as isize {
        let nu = n as usize;
        // Look for a single small sub-diagonal element.
        let mut l = nu;
        while l > low {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            // One root found.
            h[(nu, nu)] += exshift;
            d[nu] = h[(nu, nu)];
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l == nu - 1 {
            // Two roots found.
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            x = h[(nu, nu)];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = d[nu - 1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
            } else {
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            // No convergence yet: form shift.
            x = h[(nu, nu)];
            y = h[(nu - 1, nu - 1)];
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            if iter == 10 || iter == 20 {
                // Exceptional shift.
                exshift += x;
                for i in low..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            iter += 1;
            total_iter += 1;
            if total_iter > budget {
                let mut partial = Vec::new();
                for i in (nu + 1)..nn {
                    partial.push(Complex64::new(d[i], e[i]));
                }
                return Err(NumericsError::EigNonConvergence {
                    converged: sort_spectrum(partial),
                    total: nn,
                });
            }

            // Look for two consecutive small sub-diagonal elements.
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps
                        * (p.abs()
                            * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in (m + 2)..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // Double QR sweep rows m..n.
            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    // Row modification.
                    for j in k..=nu {
                        let mut pp = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            pp += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= pp * z;
                        }
                        h[(k, j)] -= pp * x;
                        h[(k + 1, j)] -= pp * y;
                    }

                    // Column modification.
                    let upper = nu.min(k + 3);
                    for i in l..=upper {
                        let mut pp = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            pp += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= pp * r;
                        }
                        h[(i, k)] -= pp;
                        h[(i, k + 1)] -= pp * q;
                    }
                }
            }
        }
    }

    let ev: Vec<Complex64> = (0..nn).map(|i| Complex64::new(d[i], e[i])).collect();
    Ok(ComplexSpectrum {
        eigenvalues: sort_spectrum(ev),
    })
}

fn shifted_inverse_iteration(
    a: &DenseMatrix,
    lambda: Complex64,
) -> Result<Vec<Complex64>, NumericsError> {
    let n = a.rows();
    // Tiny relative shift keeps the factorization nonsingular at an exact eigenvalue.
    let shift = lambda + Complex64::new(1e-8 * (1.0 + lambda.norm()), 1e-10);
    let mut m = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = Complex64::new(a[(i, j)], 0.0);
            if i == j {
                m[i * n + j] -= shift;
            }
        }
    }
    let lu = ComplexLu::factor(&m, n)?;
    let mut v = vec![Complex64::new(1.0, 0.0); n];
    for _ in 0..3 {
        let w = lu.solve(&v);
        let norm = w.iter().fold(0.0f64, |acc, c| acc.max(c.norm()));
        if norm == 0.0 || !norm.is_finite() {
            return Err(NumericsError::NonFinite("inverse iteration"));
        }
        v = w.into_iter().map(|c| c / norm).collect();
    }
    // Fix the phase so the largest component is real and positive.
    let mut kmax = 0;
    let mut best = 0.0;
    for (k, c) in v.iter().enumerate() {
        if c.norm() > best {
            best = c.norm();
            kmax = k;
        }
    }
    let phase = v[kmax] / v[kmax].norm();
    Ok(v.into_iter().map(|c| c / phase).collect())
}

/// Right eigenvector for an eigenvalue previously computed by [`eigenvalues`].
pub fn right_eigenvector(
    a: &DenseMatrix,
    lambda: Complex64,
) -> Result<Vec<Complex64>, NumericsError> {
    shifted_inverse_iteration(a, lambda)
}

/// Normalized participation factors |v_k w_k| / sum, combining right and left
/// eigenvectors of `lambda`.
pub fn participation_factors(
    a: &DenseMatrix,
    lambda: Complex64,
) -> Result<Vec<f64>, NumericsError> {
    let v = shifted_inverse_iteration(a, lambda)?;
    let w = shifted_inverse_iteration(&a.transpose(), lambda)?;
    let prods: Vec<f64> = v.iter().zip(&w).map(|(vi, wi)| (vi * wi).norm()).collect();
    let total: f64 = prods.iter().sum();
    if total <= 0.0 {
        return Err(NumericsError::NonFinite("participation factors"));
    }
    Ok(prods.into_iter().map(|p| p / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_spectrum(a: &DenseMatrix, expected: &[Complex64], tol: f64) {
        let got = eigenvalues(a).unwrap().eigenvalues;
        assert_eq!(got.len(), expected.len());
        let mut exp = expected.to_vec();
        for g in &got {
            let (idx, _) = exp
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - g).norm().partial_cmp(&(*b - g).norm()).unwrap()
                })
                .unwrap();
            assert!(
                (exp[idx] - g).norm() < tol,
                "eigenvalue {g} not within {tol} of any expected value"
            );
            exp.remove(idx);
        }
    }

    #[test]
    fn rotation_matrix() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]);
        assert_spectrum(
            &a,
            &[Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0)],
            1e-12,
        );
    }

    #[test]
    fn diagonal_matrix() {
        let a = DenseMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ]);
        assert_spectrum(
            &a,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(3.0, 0.0),
            ],
            1e-12,
        );
    }

    #[test]
    fn companion_of_quartic() {
        // (l+1)(l+2)(l^2+2l+5) = l^4 + 5 l^3 + 13 l^2 + 19 l + 10
        let a = DenseMatrix::from_rows(&[
            vec![-5.0, -13.0, -19.0, -10.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        assert_spectrum(
            &a,
            &[
                Complex64::new(-1.0, 0.0),
                Complex64::new(-2.0, 0.0),
                Complex64::new(-1.0, 2.0),
                Complex64::new(-1.0, -2.0),
            ],
            1e-8,
        );
    }

    #[test]
    fn conjugate_closure() {
        let a = DenseMatrix::from_rows(&[
            vec![0.3, 2.0, 0.1],
            vec![-1.5, 0.2, 0.4],
            vec![0.0, 0.3, -0.7],
        ]);
        let ev = eigenvalues(&a).unwrap().eigenvalues;
        for e in &ev {
            if e.im.abs() > 1e-12 {
                let conj_found = ev.iter().any(|f| (f - e.conj()).norm() < 1e-9);
                assert!(conj_found, "missing conjugate of {e}");
            }
        }
    }

    #[test]
    fn participation_of_decoupled_blocks() {
        // Block diagonal: state 0 belongs to eigenvalue -1, state 1 to -5.
        let a = DenseMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -5.0]]);
        let p = participation_factors(&a, Complex64::new(-1.0, 0.0)).unwrap();
        assert!(p[0] > 0.99 && p[1] < 0.01);
    }
}
