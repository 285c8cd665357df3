use num_complex::Complex64;

use super::{build_ybus, BusKind, LoadKind, NetworkData, NetworkError};
use crate::numerics::{fd_jacobian, newton_solve_with_jacobian};

#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    /// Per-bus voltage magnitude (pu) in network bus order.
    pub v_mag: Vec<f64>,
    /// Per-bus voltage angle (rad).
    pub v_ang: Vec<f64>,
    /// Net injector (generation) active power per bus: calculated injection
    /// plus local specified load.
    pub p_inj: Vec<f64>,
    /// Net injector reactive power per bus.
    pub q_inj: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
}

impl PowerFlowSolution {
    pub fn phasor(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.v_mag[i], self.v_ang[i])
    }
}

/// Newton–Raphson power flow on the polar mismatch equations, flat start.
///
/// Constant-power loads enter the specified injections; constant-impedance
/// loads are part of the Y-bus and therefore of the calculated injections.
pub fn solve_power_flow(net: &NetworkData) -> Result<PowerFlowSolution, NetworkError> {
    let ybus = build_ybus(net)?;
    let n = net.n_buses();
    let slack = net
        .buses
        .iter()
        .position(|b| b.kind == BusKind::Slack)
        .expect("validated");

    // Specified injections from setpoints minus constant-power loads.
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for (i, b) in net.buses.iter().enumerate() {
        p_spec[i] += b.p_set;
        q_spec[i] += b.q_set;
    }
    for load in &net.loads {
        if load.kind == LoadKind::ConstantPower {
            let i = net.bus_index(&load.bus).unwrap();
            p_spec[i] -= load.p;
            q_spec[i] -= load.q;
        }
    }

    // Unknown layout: angles at all non-slack buses, magnitudes at PQ buses.
    let ang_buses: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mag_buses: Vec<usize> = (0..n)
        .filter(|&i| net.buses[i].kind == BusKind::Pq)
        .collect();
    let n_unknowns = ang_buses.len() + mag_buses.len();
    if n_unknowns == 0 {
        // Single-bus network: everything pinned by the slack.
        let v = vec![Complex64::from_polar(net.buses[slack].v_set, 0.0); 1];
        let s = calc_injections(&ybus, &v);
        let mut p_inj = vec![s[0].re];
        let mut q_inj = vec![s[0].im];
        add_back_loads(net, &mut p_inj, &mut q_inj);
        return Ok(PowerFlowSolution {
            v_mag: vec![net.buses[slack].v_set],
            v_ang: vec![0.0],
            p_inj,
            q_inj,
            iterations: 0,
            mismatch: 0.0,
        });
    }

    let assemble_voltages = |z: &[f64]| -> Vec<Complex64> {
        let mut v_mag = vec![0.0; n];
        let mut v_ang = vec![0.0; n];
        for (i, b) in net.buses.iter().enumerate() {
            v_mag[i] = match b.kind {
                BusKind::Pq => 1.0, // replaced below
                _ => b.v_set,
            };
        }
        for (k, &i) in ang_buses.iter().enumerate() {
            v_ang[i] = z[k];
        }
        for (k, &i) in mag_buses.iter().enumerate() {
            v_mag[i] = z[ang_buses.len() + k];
        }
        (0..n)
            .map(|i| Complex64::from_polar(v_mag[i], v_ang[i]))
            .collect()
    };

    let mut mismatch_fn = |z: &[f64]| -> Vec<f64> {
        let v = assemble_voltages(z);
        let s = calc_injections(&ybus, &v);
        let mut out = Vec::with_capacity(n_unknowns);
        for &i in &ang_buses {
            out.push(s[i].re - p_spec[i]);
        }
        for &i in &mag_buses {
            out.push(s[i].im - q_spec[i]);
        }
        out
    };

    let mut z0 = vec![0.0; n_unknowns];
    for k in 0..mag_buses.len() {
        z0[ang_buses.len() + k] = 1.0;
    }

    let result = newton_solve_with_jacobian(
        &mut mismatch_fn,
        &mut |x, f| fd_jacobian(f, x, 1e-7),
        &z0,
        1e-10,
        50,
    )
    .map_err(|e| NetworkError::PowerFlowDiverged(e.to_string()))?;

    let v = assemble_voltages(&result.x);
    let s = calc_injections(&ybus, &v);
    let mut p_inj: Vec<f64> = s.iter().map(|c| c.re).collect();
    let mut q_inj: Vec<f64> = s.iter().map(|c| c.im).collect();
    add_back_loads(net, &mut p_inj, &mut q_inj);

    Ok(PowerFlowSolution {
        v_mag: v.iter().map(|c| c.norm()).collect(),
        v_ang: v.iter().map(|c| c.arg()).collect(),
        p_inj,
        q_inj,
        iterations: result.iterations,
        mismatch: result.residual_norm,
    })
}

fn calc_injections(ybus: &super::YBus, v: &[Complex64]) -> Vec<Complex64> {
    let yv = ybus.mul(v);
    v.iter().zip(&yv).map(|(vi, yi)| vi * yi.conj()).collect()
}

/// Translate calculated bus injections into generator injections by adding
/// back the local constant-power load.
fn add_back_loads(net: &NetworkData, p: &mut [f64], q: &mut [f64]) {
    for load in &net.loads {
        if load.kind == LoadKind::ConstantPower {
            let i = net.bus_index(&load.bus).unwrap();
            p[i] += load.p;
            q[i] += load.q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{wscc9, Branch, Bus, NetworkData};

    #[test]
    fn flat_no_load() {
        let mut net = wscc9(0.0, 0.0);
        net.loads.clear();
        for b in net.buses.iter_mut() {
            b.v_set = 1.0;
        }
        for br in net.branches.iter_mut() {
            br.b = 0.0;
        }
        let sol = solve_power_flow(&net).unwrap();
        for i in 0..9 {
            assert!((sol.v_mag[i] - 1.0).abs() < 1e-9);
            assert!(sol.v_ang[i].abs() < 1e-9);
            assert!(sol.p_inj[i].abs() < 1e-9);
        }
    }

    #[test]
    fn two_bus_closed_form_angle() {
        // P = 0.5 over x = 0.1 with both ends at 1 pu: angle = asin(0.05).
        let net = NetworkData {
            buses: vec![
                Bus {
                    id: "1".into(),
                    kind: BusKind::Slack,
                    v_set: 1.0,
                    p_set: 0.0,
                    q_set: 0.0,
                },
                Bus {
                    id: "2".into(),
                    kind: BusKind::Pv,
                    v_set: 1.0,
                    p_set: 0.5,
                    q_set: 0.0,
                },
            ],
            branches: vec![Branch {
                from: "1".into(),
                to: "2".into(),
                r: 0.0,
                x: 0.1,
                b: 0.0,
                tap: 1.0,
            }],
            loads: vec![],
        };
        let sol = solve_power_flow(&net).unwrap();
        let expected = (0.5_f64 * 0.1).asin();
        assert!(
            (sol.v_ang[1] - expected).abs() < 1e-9,
            "angle {} vs {}",
            sol.v_ang[1],
            expected
        );
    }

    #[test]
    fn nine_bus_standard_dispatch() {
        let sol = solve_power_flow(&wscc9(1.63, 0.85)).unwrap();
        assert!(sol.mismatch < 1e-8, "mismatch {}", sol.mismatch);
        // Published solution values for the standard data.
        assert!((sol.p_inj[0] - 0.716).abs() < 2e-3, "slack P {}", sol.p_inj[0]);
        assert!((sol.v_mag[4] - 0.9956).abs() < 1e-3, "V5 {}", sol.v_mag[4]);
        assert!((sol.v_mag[6] - 1.0258).abs() < 1e-3, "V7 {}", sol.v_mag[6]);
    }

    #[test]
    fn injections_balance_with_losses() {
        let net = wscc9(1.63, 0.85);
        let sol = solve_power_flow(&net).unwrap();
        let ybus = build_ybus(&net).unwrap();
        let v: Vec<Complex64> = (0..9).map(|i| sol.phasor(i)).collect();
        // Series losses via branch currents.
        let mut loss = 0.0;
        for br in &net.branches {
            let i = net.bus_index(&br.from).unwrap();
            let j = net.bus_index(&br.to).unwrap();
            let z = Complex64::new(br.r, br.x);
            let cur = (v[i] - v[j]) / z;
            loss += br.r * cur.norm_sqr();
        }
        let _ = ybus;
        let gen: f64 = sol.p_inj.iter().sum();
        let (p_load, _) = net.total_constant_power();
        assert!(
            (gen - p_load - loss).abs() < 1e-7,
            "gen {gen} load {p_load} loss {loss}"
        );
    }

    #[test]
    fn load_bus_consistency() {
        // Power-flow mismatch for a PQ bus equals the residual of the
        // current-balance equations mapped through S = V conj(I).
        let net = wscc9(1.63, 0.85);
        let sol = solve_power_flow(&net).unwrap();
        let ybus = build_ybus(&net).unwrap();
        let v: Vec<Complex64> = (0..9).map(|i| sol.phasor(i)).collect();
        let mut inj = vec![Complex64::new(0.0, 0.0); 9];
        // Generator currents at buses 1-3, load currents elsewhere.
        for i in 0..3 {
            inj[i] += (Complex64::new(sol.p_inj[i], sol.q_inj[i]) / v[i]).conj();
        }
        for load in &net.loads {
            if load.kind == LoadKind::ConstantPower {
                let i = net.bus_index(&load.bus).unwrap();
                inj[i] -= (Complex64::new(load.p, load.q) / v[i]).conj();
            }
        }
        let mut out = vec![0.0; 18];
        network_residual(&ybus, &v, &inj, &mut out);
        let max = out.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(max < 1e-8, "dynamic algebraic residual {max}");
    }

    use crate::network::{network_residual, LoadKind};
}
