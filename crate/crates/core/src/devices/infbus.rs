use num_complex::Complex64;

use super::{
    apply_param_object, normalize_key, Coupling, DeviceError, DeviceInit, DeviceModel, DeviceSpec,
    Measurement,
};
use crate::OMEGA_S;

/// Ideal voltage source pinning its bus at a fixed phasor. The injected
/// current is the algebraic unknown pair.
pub struct InfiniteBus {
    name: String,
    bus: String,
    v_mag: f64,
    v_ang: f64,
}

impl InfiniteBus {
    pub fn new(name: &str, bus: &str) -> Self {
        Self {
            name: name.to_string(),
            bus: bus.to_string(),
            v_mag: 1.0,
            v_ang: 0.0,
        }
    }

    pub fn from_spec(spec: &DeviceSpec) -> Result<Self, DeviceError> {
        let mut dev = Self::new(&spec.name, &spec.bus);
        apply_param_object(&spec.name, &spec.params, |k, v| {
            match normalize_key(k).as_str() {
                "vmag" | "v" => dev.v_mag = v,
                "vang" | "theta" => dev.v_ang = v,
                _ => {
                    return Err(DeviceError::UnknownParameter {
                        device: spec.name.clone(),
                        key: k.to_string(),
                    })
                }
            }
            Ok(())
        })?;
        Ok(dev)
    }
}

impl DeviceModel for InfiniteBus {
    fn kind(&self) -> &'static str {
        "infinite-bus"
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn bus(&self) -> &str {
        &self.bus
    }

    fn n_states(&self) -> usize {
        0
    }

    fn n_algebraic(&self) -> usize {
        2
    }

    fn state_names(&self) -> Vec<String> {
        vec![]
    }

    fn coupling(&self) -> Coupling {
        Coupling::VoltageSource
    }

    fn residual(
        &self,
        _x: &[f64],
        _xp: &[f64],
        _y: &[f64],
        v_bus: Complex64,
        _f: &mut [f64],
        g: &mut [f64],
    ) {
        let pin = Complex64::from_polar(self.v_mag, self.v_ang);
        g[0] = v_bus.re - pin.re;
        g[1] = v_bus.im - pin.im;
    }

    fn injection(&self, _x: &[f64], y: &[f64], _v_bus: Complex64) -> Complex64 {
        Complex64::new(y[0], y[1])
    }

    fn initialize(&mut self, init: &DeviceInit) -> Result<(Vec<f64>, Vec<f64>), DeviceError> {
        self.v_mag = init.v_mag;
        self.v_ang = init.v_ang;
        let v = Complex64::from_polar(init.v_mag, init.v_ang);
        let i = (Complex64::new(init.p, init.q) / v).conj();
        Ok((vec![], vec![i.re, i.im]))
    }

    fn measurement(&self, _x: &[f64], y: &[f64], v_bus: Complex64) -> Measurement {
        let inj = Complex64::new(y[0], y[1]);
        let s = v_bus * inj.conj();
        Measurement {
            omega: OMEGA_S,
            p: s.re,
            q: s.im,
            v_local: (v_bus.re, v_bus.im),
            i_local: (y[0], y[1]),
            frame_angle: 0.0,
            v_ac: v_bus.norm(),
            v_dc: None,
            rho: None,
            omega_pll: None,
            bound_hit: None,
        }
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<(), DeviceError> {
        match normalize_key(key).as_str() {
            "vmag" | "v" => self.v_mag = value,
            "vang" | "theta" => self.v_ang = value,
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
        serde_json::json!({ "v_mag": self.v_mag, "v_ang": self.v_ang })
    }
}
