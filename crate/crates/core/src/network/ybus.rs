use num_complex::Complex64;

use super::{LoadKind, NetworkData, NetworkError};

/// Dense complex bus admittance matrix.
#[derive(Clone, Debug)]
pub struct YBus {
    pub n: usize,
    y: Vec<Complex64>,
}

impl YBus {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.y[i * self.n + j]
    }

    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.n);
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        for i in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..self.n {
                acc += self.y[i * self.n + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }
}

/// Assemble the bus admittance matrix from branch data, line charging, and
/// constant-impedance loads (converted at 1 pu voltage).
pub fn build_ybus(net: &NetworkData) -> Result<YBus, NetworkError> {
    net.validate()?;
    let n = net.n_buses();
    let mut y = vec![Complex64::new(0.0, 0.0); n * n];
    for br in &net.branches {
        let i = net.bus_index(&br.from).unwrap();
        let j = net.bus_index(&br.to).unwrap();
        let z = Complex64::new(br.r, br.x);
        let ys = 1.0 / z;
        let sh = Complex64::new(0.0, br.b / 2.0);
        let tap = br.tap;
        // Standard pi model with an off-nominal tap on the `from` side.
        y[i * n + i] += ys / (tap * tap) + sh;
        y[j * n + j] += ys + sh;
        y[i * n + j] -= ys / tap;
        y[j * n + i] -= ys / tap;
    }
    for load in &net.loads {
        if load.kind == LoadKind::ConstantImpedance {
            let i = net.bus_index(&load.bus).unwrap();
            // S = V conj(I) = |V|^2 conj(Y); at 1 pu, Y = conj(S) = p - jq.
            y[i * n + i] += Complex64::new(load.p, -load.q);
        }
    }
    Ok(YBus { n, y })
}

/// Per-bus complex current balance `I_inj - Y V`, written as two real
/// residuals per bus (real, imaginary).
pub fn network_residual(ybus: &YBus, v: &[Complex64], injections: &[Complex64], out: &mut [f64]) {
    assert_eq!(out.len(), 2 * ybus.n);
    let yv = ybus.mul(v);
    for i in 0..ybus.n {
        let mis = injections[i] - yv[i];
        out[2 * i] = mis.re;
        out[2 * i + 1] = mis.im;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, Bus, BusKind, LoadSpec, NetworkData};

    fn two_bus(x: f64) -> NetworkData {
        NetworkData {
            buses: vec![
                Bus {
                    id: "a".into(),
                    kind: BusKind::Slack,
                    v_set: 1.0,
                    p_set: 0.0,
                    q_set: 0.0,
                },
                Bus {
                    id: "b".into(),
                    kind: BusKind::Pq,
                    v_set: 1.0,
                    p_set: 0.0,
                    q_set: 0.0,
                },
            ],
            branches: vec![Branch {
                from: "a".into(),
                to: "b".into(),
                r: 0.0,
                x,
                b: 0.0,
                tap: 1.0,
            }],
            loads: vec![],
        }
    }

    #[test]
    fn single_branch_off_diagonal() {
        let y = build_ybus(&two_bus(0.1)).unwrap();
        // -1/(j 0.1) = j10
        assert!((y.get(0, 1) - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 0) - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(0, 0) - Complex64::new(0.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn shunt_only_single_bus() {
        let net = NetworkData {
            buses: vec![Bus {
                id: "a".into(),
                kind: BusKind::Slack,
                v_set: 1.0,
                p_set: 0.0,
                q_set: 0.0,
            }],
            branches: vec![],
            loads: vec![LoadSpec {
                bus: "a".into(),
                kind: LoadKind::ConstantImpedance,
                p: 0.0,
                q: -0.5, // capacitive shunt injecting 0.5 pu at 1 pu voltage
            }],
        };
        let y = build_ybus(&net).unwrap();
        assert!((y.get(0, 0) - Complex64::new(0.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn ohms_law_residual() {
        let net = two_bus(0.1);
        let y = build_ybus(&net).unwrap();
        let v = vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        // No voltage difference: no branch current, zero injections balance.
        let inj = vec![Complex64::new(0.0, 0.0); 2];
        let mut out = vec![0.0; 4];
        network_residual(&y, &v, &inj, &mut out);
        assert!(out.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn zero_states_zero_residual() {
        let y = build_ybus(&two_bus(0.1)).unwrap();
        let v = vec![Complex64::new(0.0, 0.0); 2];
        let inj = vec![Complex64::new(0.0, 0.0); 2];
        let mut out = vec![0.0; 4];
        network_residual(&y, &v, &inj, &mut out);
        assert!(out.iter().all(|r| r.abs() == 0.0));
    }
}
