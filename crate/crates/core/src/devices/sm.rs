use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    apply_param_object, normalize_key, to_device_frame, Coupling, DeviceError, DeviceInit,
    DeviceModel, DeviceSpec, Measurement, PhData, StorageQuadratic,
};
use crate::numerics::DenseMatrix;
use crate::{OMEGA_B, OMEGA_S};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SmParams {
    /// Inertia constant (s).
    pub h: f64,
    /// Synchronous reactance (pu).
    pub x_s: f64,
    /// Internal EMF magnitude (pu); recomputed at initialization when 0.
    pub e: f64,
    /// Frequency damping coefficient.
    pub d: f64,
}

impl Default for SmParams {
    fn default() -> Self {
        Self {
            h: 3.0,
            x_s: 0.3,
            e: 0.0,
            d: 0.0,
        }
    }
}

/// Second-order synchronous machine: swing dynamics behind a constant EMF and
/// synchronous reactance, with constant mechanical torque.
pub struct SynchronousMachine {
    name: String,
    bus: String,
    pub params: SmParams,
    tau_m: f64,
}

impl SynchronousMachine {
    pub fn new(name: &str, bus: &str, params: SmParams) -> Result<Self, DeviceError> {
        if params.h <= 0.0 || params.x_s <= 0.0 {
            return Err(DeviceError::Invalid {
                device: name.to_string(),
                message: "h and x_s must be positive".into(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            bus: bus.to_string(),
            params,
            tau_m: 0.0,
        })
    }

    pub fn from_spec(spec: &DeviceSpec) -> Result<Self, DeviceError> {
        let mut params = SmParams::default();
        apply_param_object(&spec.name, &spec.params, |k, v| {
            match normalize_key(k).as_str() {
                "h" => params.h = v,
                "xs" => params.x_s = v,
                "e" => params.e = v,
                "d" => params.d = v,
                _ => {
                    return Err(DeviceError::UnknownParameter {
                        device: spec.name.clone(),
                        key: k.to_string(),
                    })
                }
            }
            Ok(())
        })?;
        Self::new(&spec.name, &spec.bus, params)
    }

    pub fn mechanical_torque(&self) -> f64 {
        self.tau_m
    }

    pub fn electrical_power(&self, delta: f64, v_bus: Complex64) -> f64 {
        let (v_h, theta_h) = (v_bus.norm(), v_bus.arg());
        v_h * self.params.e / self.params.x_s * (delta - theta_h).sin()
    }
}

impl DeviceModel for SynchronousMachine {
    fn kind(&self) -> &'static str {
        "sm"
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn bus(&self) -> &str {
        &self.bus
    }

    fn n_states(&self) -> usize {
        2
    }

    fn n_algebraic(&self) -> usize {
        0
    }

    fn state_names(&self) -> Vec<String> {
        vec!["delta".into(), "omega".into()]
    }

    fn coupling(&self) -> Coupling {
        Coupling::CurrentSource
    }

    fn residual(
        &self,
        x: &[f64],
        xp: &[f64],
        _y: &[f64],
        v_bus: Complex64,
        f: &mut [f64],
        _g: &mut [f64],
    ) {
        let p = &self.params;
        let (delta, omega) = (x[0], x[1]);
        let (v_h, theta_h) = (v_bus.norm(), v_bus.arg());
        f[0] = xp[0] - OMEGA_B * (omega - OMEGA_S);
        f[1] = 2.0 * p.h * xp[1]
            - (self.tau_m
                - v_h * p.e / (p.x_s * omega) * (delta - theta_h).sin()
                - p.d * (omega - OMEGA_S));
    }

    fn injection(&self, x: &[f64], _y: &[f64], v_bus: Complex64) -> Complex64 {
        let emf = Complex64::from_polar(self.params.e, x[0]);
        (emf - v_bus) / Complex64::new(0.0, self.params.x_s)
    }

    fn initialize(&mut self, init: &DeviceInit) -> Result<(Vec<f64>, Vec<f64>), DeviceError> {
        let v = Complex64::from_polar(init.v_mag, init.v_ang);
        let i = (Complex64::new(init.p, init.q) / v).conj();
        let emf = v + Complex64::new(0.0, self.params.x_s) * i;
        if self.params.e == 0.0 {
            self.params.e = emf.norm();
        } else if (self.params.e - emf.norm()).abs() > 1e-9 {
            return Err(DeviceError::InitFailed {
                device: self.name.clone(),
                message: format!(
                    "fixed EMF {} is inconsistent with the operating point (needs {})",
                    self.params.e,
                    emf.norm()
                ),
            });
        }
        let delta = emf.arg();
        // Rotor balance at synchronous speed.
        self.tau_m = init.v_mag * self.params.e / self.params.x_s * (delta - init.v_ang).sin();
        Ok((vec![delta, OMEGA_S], vec![]))
    }

    fn measurement(&self, x: &[f64], _y: &[f64], v_bus: Complex64) -> Measurement {
        let inj = self.injection(x, &[], v_bus);
        let s = v_bus * inj.conj();
        let (i_d, i_q) = to_device_frame(inj, 0.0);
        Measurement {
            omega: x[1],
            p: s.re,
            q: s.im,
            v_local: (v_bus.re, v_bus.im),
            i_local: (i_d, i_q),
            frame_angle: 0.0,
            v_ac: v_bus.norm(),
            v_dc: None,
            rho: None,
            omega_pll: None,
            bound_hit: None,
        }
    }

    fn ph_data(&self, x: &[f64], _y: &[f64], v_bus: Complex64) -> Option<PhData> {
        let p = &self.params;
        let (delta, omega) = (x[0], x[1]);
        let (v_h, theta_h) = (v_bus.norm(), v_bus.arg());
        let two_h = 2.0 * p.h;
        let mut j = DenseMatrix::zeros(2, 2);
        j[(0, 1)] = 1.0 / two_h;
        j[(1, 0)] = -1.0 / two_h;
        let r = DenseMatrix::zeros(2, 2);
        // Columns: interconnection (EMF), source (torque), control (damping).
        let mut g = DenseMatrix::zeros(2, 3);
        g[(1, 0)] = -v_h * (delta - theta_h).sin() / (p.x_s * omega * two_h);
        g[(1, 1)] = 1.0 / two_h;
        g[(1, 2)] = 1.0 / two_h;
        Some(PhData {
            ph_states: vec![0, 1],
            h: p.h * omega * omega,
            grad: vec![0.0, two_h * omega],
            j,
            r,
            g: reorder_sm_ports(g),
            u_source: vec![self.tau_m],
            u_control: vec![-p.d * (omega - OMEGA_S)],
            u_interconnection: vec![p.e],
        })
    }

    fn storage_quadratic(&self) -> Option<StorageQuadratic> {
        Some(StorageQuadratic {
            diag: vec![0.0, 2.0 * self.params.h],
            storage_positions: vec![1],
        })
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<(), DeviceError> {
        match normalize_key(key).as_str() {
            "h" => self.params.h = value,
            "xs" => self.params.x_s = value,
            "e" => self.params.e = value,
            "d" => self.params.d = value,
            "taum" => self.tau_m = value,
            _ => {
                return Err(DeviceError::UnknownParameter {
                    device: self.name.clone(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    fn params_json(&self) -> serde_json::Value {
        serde_json::to_value(self.params).expect("params serialize")
    }
}

/// Rebuild the port matrix in (source, control, interconnection) column order
/// from the assembly order (interconnection, source, control).
fn reorder_sm_ports(g: DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(2, 3);
    for i in 0..2 {
        out[(i, 0)] = g[(i, 1)]; // source (torque)
        out[(i, 1)] = g[(i, 2)]; // control (damping)
        out[(i, 2)] = g[(i, 0)]; // interconnection (EMF)
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unloaded_equilibrium_zero_residual() {
        let mut sm = SynchronousMachine::new("g", "b", SmParams::default()).unwrap();
        let init = DeviceInit {
            p: 0.0,
            q: 0.0,
            v_mag: 1.0,
            v_ang: 0.2,
        };
        let (x, y) = sm.initialize(&init).unwrap();
        assert!((x[0] - 0.2).abs() < 1e-12, "delta aligns with the bus");
        assert!(sm.tau_m.abs() < 1e-12);
        let mut f = [0.0; 2];
        sm.residual(&x, &[0.0; 2], &y, Complex64::from_polar(1.0, 0.2), &mut f, &mut []);
        assert!(f[0].abs() < 1e-12 && f[1].abs() < 1e-12);
    }

    #[test]
    fn electrical_power_matches_port_term() {
        let mut sm = SynchronousMachine::new("g", "b", SmParams::default()).unwrap();
        let init = DeviceInit {
            p: 0.4,
            q: 0.1,
            v_mag: 1.0,
            v_ang: 0.0,
        };
        let (x, _) = sm.initialize(&init).unwrap();
        let v_bus = Complex64::new(1.0, 0.0);
        let p_formula = sm.electrical_power(x[0], v_bus);
        let s = v_bus * sm.injection(&x, &[], v_bus).conj();
        assert!((p_formula - s.re).abs() < 1e-12);
        assert!((p_formula - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_rotor_momentum() {
        let sm = SynchronousMachine::new("g", "b", SmParams { h: 3.0, ..SmParams::default() })
            .unwrap();
        let ph = sm
            .ph_data(&[0.0, 1.0], &[], Complex64::new(1.0, 0.0))
            .unwrap();
        assert_eq!(ph.grad, vec![0.0, 6.0]);
        assert!((ph.h - 3.0).abs() < 1e-15);
    }

    #[test]
    fn port_power_is_mechanical_minus_electrical() {
        let mut sm = SynchronousMachine::new("g", "b", SmParams::default()).unwrap();
        let init = DeviceInit {
            p: 0.5,
            q: 0.0,
            v_mag: 1.0,
            v_ang: 0.0,
        };
        let (mut x, _) = sm.initialize(&init).unwrap();
        // Perturb off equilibrium.
        x[0] += 0.2;
        x[1] = 1.01;
        let v_bus = Complex64::new(1.0, 0.0);
        let ph = sm.ph_data(&x, &[], v_bus).unwrap();
        let p_m = sm.tau_m * x[1];
        let p_e = sm.electrical_power(x[0], v_bus);
        let u_y = ph.source_power() + ph.control_power() - ph.interconnection_power();
        assert!(
            ((p_m - p_e) - u_y).abs() < 1e-12,
            "{} vs {}",
            p_m - p_e,
            u_y
        );
    }
}
