use thiserror::Error;

use crate::OMEGA_B;

#[derive(Debug, Error)]
pub enum ComplexFrequencyError {
    #[error("signal magnitude {0:.3e} below 1e-6 pu inside the window")]
    MagnitudeTooSmall(f64),
    #[error("need at least 5 samples, got {0}")]
    TooShort(usize),
    #[error("samples must be uniformly spaced")]
    NonUniform,
}

/// Complex-frequency trajectory of a rotating pair sampled in a device frame.
///
/// Returns `(rho, omega)` per sample: `rho = d/dt ln|(d, q)|` in 1/s and
/// `omega` in pu, where the local angle rate (5-point central stencil, one-
/// sided at the ends) is referred to the frame frequency supplied per sample.
pub fn complex_frequency(
    t: &[f64],
    d: &[f64],
    q: &[f64],
    frame_omega: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ComplexFrequencyError> {
    let n = t.len();
    if n < 5 {
        return Err(ComplexFrequencyError::TooShort(n));
    }
    assert_eq!(d.len(), n);
    assert_eq!(q.len(), n);
    assert_eq!(frame_omega.len(), n);
    let h = t[1] - t[0];
    for k in 1..n {
        if ((t[k] - t[k - 1]) - h).abs() > 1e-9 * (1.0 + h.abs()) {
            return Err(ComplexFrequencyError::NonUniform);
        }
    }

    let mut log_mag = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    for k in 0..n {
        let mag = d[k].hypot(q[k]);
        if mag < 1e-6 {
            return Err(ComplexFrequencyError::MagnitudeTooSmall(mag));
        }
        log_mag.push(mag.ln());
        angle.push(q[k].atan2(d[k]));
    }
    // Unwrap the angle so the stencil sees a continuous signal.
    for k in 1..n {
        let mut delta = angle[k] - angle[k - 1];
        while delta > std::f64::consts::PI {
            delta -= 2.0 * std::f64::consts::PI;
        }
        while delta < -std::f64::consts::PI {
            delta += 2.0 * std::f64::consts::PI;
        }
        angle[k] = angle[k - 1] + delta;
    }

    let rho = stencil_derivative(&log_mag, h);
    let dtheta = stencil_derivative(&angle, h);
    let omega = dtheta
        .iter()
        .zip(frame_omega)
        .map(|(dth, w)| w + dth / OMEGA_B)
        .collect();
    Ok((rho, omega))
}

/// 5-point central first derivative with progressively lower-order stencils
/// at the boundary samples.
fn stencil_derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        out[k] = if k >= 2 && k + 2 < n {
            (-v[k + 2] + 8.0 * v[k + 1] - 8.0 * v[k - 1] + v[k - 2]) / (12.0 * h)
        } else if k >= 1 && k + 1 < n {
            (v[k + 1] - v[k - 1]) / (2.0 * h)
        } else if k == 0 {
            (v[1] - v[0]) / h
        } else {
            (v[n - 1] - v[n - 2]) / h
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::OMEGA_S;

    fn sample(n: usize, h: f64, f: impl Fn(f64) -> (f64, f64)) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut t = Vec::new();
        let mut d = Vec::new();
        let mut q = Vec::new();
        for k in 0..n {
            let tk = k as f64 * h;
            let (dk, qk) = f(tk);
            t.push(tk);
            d.push(dk);
            q.push(qk);
        }
        (t, d, q)
    }

    #[test]
    fn constant_phasor() {
        let (t, d, q) = sample(100, 1e-3, |_| (0.8, 0.3));
        let frame = vec![OMEGA_S; 100];
        let (rho, omega) = complex_frequency(&t, &d, &q, &frame).unwrap();
        for k in 0..100 {
            assert!(rho[k].abs() < 1e-9);
            assert!((omega[k] - OMEGA_S).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_growth_rate() {
        let sigma = 4.0;
        let (t, d, q) = sample(200, 1e-3, |t| ((sigma * t).exp(), 0.0));
        let frame = vec![OMEGA_S; 200];
        let (rho, _) = complex_frequency(&t, &d, &q, &frame).unwrap();
        // Interior samples within 1%.
        for k in 5..195 {
            assert!(
                (rho[k] - sigma).abs() < 0.01 * sigma,
                "rho {} at {k}",
                rho[k]
            );
        }
    }

    #[test]
    fn frame_relative_rotation() {
        let d_omega = 0.002; // pu
        let (t, d, q) = sample(400, 1e-3, |t| {
            let ang = d_omega * OMEGA_B * t;
            (ang.cos(), ang.sin())
        });
        let frame = vec![OMEGA_S; 400];
        let (_, omega) = complex_frequency(&t, &d, &q, &frame).unwrap();
        for k in 5..395 {
            assert!(
                (omega[k] - (OMEGA_S + d_omega)).abs() < 0.01 * d_omega,
                "omega {} at {k}",
                omega[k]
            );
        }
    }

    #[test]
    fn rejects_vanishing_magnitude() {
        let (t, d, q) = sample(10, 1e-3, |_| (1e-8, 0.0));
        let frame = vec![OMEGA_S; 10];
        assert!(matches!(
            complex_frequency(&t, &d, &q, &frame),
            Err(ComplexFrequencyError::MagnitudeTooSmall(_))
        ));
    }
}
