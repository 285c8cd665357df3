use num_complex::Complex64;

/// Bus voltage magnitude below which constant-power load injections are
/// frozen (magnitude clamped) to avoid division blow-up; a run in this region
/// is declared collapsed anyway.
pub const LOAD_FREEZE_VOLTAGE: f64 = 0.01;

/// Current drawn by a constant-power load at a bus voltage (load convention:
/// the returned value is the current flowing *out* of the bus into the load).
///
/// Returns `(current, frozen)`; `frozen` reports that the voltage magnitude
/// was below the freeze threshold and the injection was evaluated on the
/// clamped voltage.
pub fn constant_power_current(p: f64, q: f64, v: Complex64) -> (Complex64, bool) {
    let mag = v.norm();
    if mag >= LOAD_FREEZE_VOLTAGE {
        ((Complex64::new(p, q) / v).conj(), false)
    } else if mag > 0.0 {
        let clamped = v * (LOAD_FREEZE_VOLTAGE / mag);
        ((Complex64::new(p, q) / clamped).conj(), true)
    } else {
        (Complex64::new(0.0, 0.0), true)
    }
}

/// Current drawn by a constant-impedance load with admittance derived from
/// `(p, q)` at 1 pu voltage.
pub fn constant_impedance_current(p: f64, q: f64, v: Complex64) -> Complex64 {
    // S = |V|^2 conj(Y)  =>  Y = conj(S) at 1 pu.
    let y = Complex64::new(p, -q);
    y * v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_power_unit_voltage() {
        let (i, frozen) = constant_power_current(1.0, 0.0, Complex64::new(1.0, 0.0));
        assert!(!frozen);
        assert!((i - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn impedance_scales_quadratically() {
        // Derived from P = 1, Q = 0 at 1 pu: at half voltage the current is
        // halved and the consumed power quarters.
        let i = constant_impedance_current(1.0, 0.0, Complex64::new(0.5, 0.0));
        assert!((i - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        let s = Complex64::new(0.5, 0.0) * i.conj();
        assert!((s.re - 0.25).abs() < 1e-15);
    }

    #[test]
    fn freeze_below_threshold() {
        let (i, frozen) = constant_power_current(1.0, 0.0, Complex64::new(0.001, 0.0));
        assert!(frozen);
        // Clamped at 0.01 pu: current magnitude capped at 100.
        assert!((i.norm() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn reactive_sign() {
        // Inductive load (q > 0) draws lagging current.
        let (i, _) = constant_power_current(0.0, 1.0, Complex64::new(1.0, 0.0));
        assert!((i - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }
}
