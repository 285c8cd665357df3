//! Dynamic device models behind a common trait, selected by name through the
//! registry. The family covers grid-following converters (three controller
//! stages), grid-forming droop converters (with and without the dc-side
//! reserve controller), a virtual synchronous machine, a second-order
//! synchronous machine, and an infinite bus.

mod gfl;
mod gfm;
mod ibr;
mod infbus;
mod load;
mod sm;

pub use gfl::{GflCase, GflConverter};
pub use gfm::{GfmCase, GfmConverter, VsmConverter};
pub use ibr::{
    bridge_dc_current, ibr_ph_data, ibr_storage_energy, ibr_storage_gradient,
    physical_layer_residual, BridgeInputs, IbrParams,
};
pub use infbus::InfiniteBus;
pub use load::{constant_impedance_current, constant_power_current, LOAD_FREEZE_VOLTAGE};
pub use sm::{SmParams, SynchronousMachine};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::numerics::DenseMatrix;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("unknown device model `{0}`")]
    UnknownModel(String),
    #[error("unknown parameter `{key}` for device `{device}`")]
    UnknownParameter { device: String, key: String },
    #[error("device `{device}`: {message}")]
    Invalid { device: String, message: String },
    #[error("device `{device}` initialization failed: {message}")]
    InitFailed { device: String, message: String },
}

/// How a device attaches to its bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// The device's terminal voltage states pin the bus voltage; its grid
    /// current is an algebraic unknown.
    VoltageSource,
    /// The device injects a current computed from its states and the bus
    /// voltage.
    CurrentSource,
}

/// Operating point handed to a device at initialization.
#[derive(Clone, Copy, Debug)]
pub struct DeviceInit {
    pub p: f64,
    pub q: f64,
    pub v_mag: f64,
    pub v_ang: f64,
}

/// Gauge-invariant signals exposed for recording, classification, and the
/// synchronization checks.
#[derive(Clone, Debug, Default)]
pub struct Measurement {
    /// Device frame frequency (pu).
    pub omega: f64,
    /// Active power delivered at the interconnection (pu).
    pub p: f64,
    /// Reactive power delivered (pu).
    pub q: f64,
    /// Terminal voltage in the device frame (d, q).
    pub v_local: (f64, f64),
    /// Interconnection current in the device frame (d, q).
    pub i_local: (f64, f64),
    /// Device frame angle relative to the network reference (rad).
    pub frame_angle: f64,
    /// Terminal voltage magnitude (pu).
    pub v_ac: f64,
    pub v_dc: Option<f64>,
    /// Current-limiter scaling, 1 when inactive.
    pub rho: Option<f64>,
    /// Synchronization-loop frequency estimate when measured separately.
    pub omega_pll: Option<f64>,
    /// Name of a declared bound the operating point is pinned at, if any.
    pub bound_hit: Option<&'static str>,
}

/// Port-Hamiltonian data evaluated at one state.
#[derive(Clone, Debug)]
pub struct PhData {
    /// Indices of the storage states within the device state vector.
    pub ph_states: Vec<usize>,
    /// Storage function value (pu*s).
    pub h: f64,
    /// Gradient of the storage function over the storage states.
    pub grad: Vec<f64>,
    pub j: DenseMatrix,
    pub r: DenseMatrix,
    pub g: DenseMatrix,
    pub u_source: Vec<f64>,
    pub u_control: Vec<f64>,
    pub u_interconnection: Vec<f64>,
}

impl PhData {
    pub fn n_ports(&self) -> usize {
        self.u_source.len() + self.u_control.len() + self.u_interconnection.len()
    }

    /// Port output vector y = G^T grad(H).
    pub fn port_outputs(&self) -> Vec<f64> {
        self.g.transpose().mul_vec(&self.grad)
    }

    pub fn u_full(&self) -> Vec<f64> {
        let mut u = self.u_source.clone();
        u.extend_from_slice(&self.u_control);
        u.extend_from_slice(&self.u_interconnection);
        u
    }

    /// Power entering through the source port, u_S . y_S.
    pub fn source_power(&self) -> f64 {
        let y = self.port_outputs();
        self.u_source
            .iter()
            .zip(&y[..self.u_source.len()])
            .map(|(u, y)| u * y)
            .sum()
    }

    pub fn control_power(&self) -> f64 {
        let y = self.port_outputs();
        let o = self.u_source.len();
        self.u_control
            .iter()
            .zip(&y[o..o + self.u_control.len()])
            .map(|(u, y)| u * y)
            .sum()
    }

    /// Power leaving through the interconnection port (export positive):
    /// -u_I . y_I.
    pub fn interconnection_power(&self) -> f64 {
        let y = self.port_outputs();
        let o = self.u_source.len() + self.u_control.len();
        -self
            .u_interconnection
            .iter()
            .zip(&y[o..])
            .map(|(u, y)| u * y)
            .sum::<f64>()
    }

    /// Dissipated power grad(H)^T R grad(H), non-negative for PSD R.
    pub fn dissipation(&self) -> f64 {
        let rg = self.r.mul_vec(&self.grad);
        self.grad.iter().zip(&rg).map(|(a, b)| a * b).sum()
    }

    /// Storage rate implied by the ports: u^T y - dissipation.
    pub fn h_dot_ports(&self) -> f64 {
        self.source_power() + self.control_power() - self.interconnection_power()
            - self.dissipation()
    }
}

/// Quadratic-form declaration of the storage function, H = 1/2 x^T diag(q) x
/// over the PH states.
#[derive(Clone, Debug)]
pub struct StorageQuadratic {
    /// Diagonal of the quadratic form over the PH states (these are also the
    /// storage masses of the differential equations).
    pub diag: Vec<f64>,
    /// Positions (within the PH state list) declared as energy-carrying.
    pub storage_positions: Vec<usize>,
}

pub trait DeviceModel: Send + Sync {
    fn kind(&self) -> &'static str;
    fn name(&self) -> &str;
    fn bus(&self) -> &str;
    fn n_states(&self) -> usize;
    fn n_algebraic(&self) -> usize;
    fn state_names(&self) -> Vec<String>;
    fn coupling(&self) -> Coupling;

    /// Device residuals. `f_out` receives `n_states` differential residuals
    /// (linear in `xp` with constant masses), `g_out` the `n_algebraic`
    /// algebraic residuals.
    fn residual(
        &self,
        x: &[f64],
        xp: &[f64],
        y: &[f64],
        v_bus: Complex64,
        f_out: &mut [f64],
        g_out: &mut [f64],
    );

    /// Current injected into the network bus, network frame.
    fn injection(&self, x: &[f64], y: &[f64], v_bus: Complex64) -> Complex64;

    /// Back-solve a steady state from a power-flow operating point. Fixes the
    /// device's internal references so the returned state is an exact
    /// equilibrium.
    fn initialize(&mut self, init: &DeviceInit) -> Result<(Vec<f64>, Vec<f64>), DeviceError>;

    fn measurement(&self, x: &[f64], y: &[f64], v_bus: Complex64) -> Measurement;

    /// Port-Hamiltonian evaluation, `None` for devices without a declared
    /// energy structure.
    fn ph_data(&self, _x: &[f64], _y: &[f64], _v_bus: Complex64) -> Option<PhData> {
        None
    }

    fn storage_quadratic(&self) -> Option<StorageQuadratic> {
        None
    }

    /// Whether the source-port input has declared (non-constant) dynamics.
    fn source_input_is_dynamic(&self) -> bool {
        false
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<(), DeviceError>;

    /// Current parameter values as a flat JSON object.
    fn params_json(&self) -> serde_json::Value;
}

/// Scenario-level device description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub bus: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<u8>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
    /// Active-power share when several devices sit at one bus; the single
    /// device at a bus takes the full power-flow injection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_set: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_set: Option<f64>,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self {
            name: String::new(),
            bus: String::new(),
            model: String::new(),
            case: None,
            params: serde_json::Value::Null,
            p_set: None,
            q_set: None,
        }
    }
}

type BuilderFn =
    Box<dyn Fn(&DeviceSpec) -> Result<Box<dyn DeviceModel>, DeviceError> + Send + Sync>;

/// Name-keyed registry of device builders. Scenario files select models by
/// the registered name.
pub struct DeviceRegistry {
    builders: BTreeMap<String, BuilderFn>,
}

impl DeviceRegistry {
    pub fn new() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    /// Registry with every built-in model.
    pub fn standard() -> Self {
        let mut reg = Self::new();
        reg.register("gfl", |spec| {
            Ok(Box::new(GflConverter::from_spec(spec)?) as Box<dyn DeviceModel>)
        });
        reg.register("gfm", |spec| {
            Ok(Box::new(GfmConverter::from_spec(spec)?) as Box<dyn DeviceModel>)
        });
        reg.register("vsm", |spec| {
            Ok(Box::new(VsmConverter::from_spec(spec)?) as Box<dyn DeviceModel>)
        });
        reg.register("sm", |spec| {
            Ok(Box::new(SynchronousMachine::from_spec(spec)?) as Box<dyn DeviceModel>)
        });
        reg.register("infinite-bus", |spec| {
            Ok(Box::new(InfiniteBus::from_spec(spec)?) as Box<dyn DeviceModel>)
        });
        reg
    }

    pub fn register(
        &mut self,
        name: &str,
        builder: impl Fn(&DeviceSpec) -> Result<Box<dyn DeviceModel>, DeviceError>
            + Send
            + Sync
            + 'static,
    ) {
        self.builders.insert(name.to_string(), Box::new(builder));
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(|s| s.as_str()).collect()
    }

    pub fn build(&self, spec: &DeviceSpec) -> Result<Box<dyn DeviceModel>, DeviceError> {
        match self.builders.get(&spec.model) {
            Some(b) => b(spec),
            None => Err(DeviceError::UnknownModel(spec.model.clone())),
        }
    }
}

impl Default for DeviceRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

/// Current-limit scaling: rho = min(1, i_max / |(i_d, i_q)|), 1 at zero
/// current.
pub fn current_limit_rho(i_d: f64, i_q: f64, i_max: f64) -> f64 {
    let mag = i_d.hypot(i_q);
    if mag <= i_max {
        1.0
    } else {
        i_max / mag
    }
}

/// Rotate a device-frame pair into the network frame.
pub fn to_network_frame(d: f64, q: f64, frame_angle: f64) -> Complex64 {
    Complex64::new(d, q) * Complex64::from_polar(1.0, frame_angle)
}

/// Rotate a network-frame phasor into a device frame.
pub fn to_device_frame(v: Complex64, frame_angle: f64) -> (f64, f64) {
    let local = v * Complex64::from_polar(1.0, -frame_angle);
    (local.re, local.im)
}

/// Normalize a parameter key: lowercase with separators stripped, so that
/// `Cdc`, `c_dc`, and `CDC` all address the same parameter.
pub(crate) fn normalize_key(key: &str) -> String {
    key.chars()
        .filter(|c| *c != '_' && *c != '-')
        .flat_map(|c| c.to_lowercase())
        .collect()
}

/// Apply a flat JSON object of parameter overrides through `set`.
pub(crate) fn apply_param_object(
    dev_name: &str,
    params: &serde_json::Value,
    mut set: impl FnMut(&str, f64) -> Result<(), DeviceError>,
) -> Result<(), DeviceError> {
    if params.is_null() {
        return Ok(());
    }
    let map = params.as_object().ok_or_else(|| DeviceError::Invalid {
        device: dev_name.to_string(),
        message: "params must be an object of name: value pairs".into(),
    })?;
    for (k, v) in map {
        let value = v.as_f64().ok_or_else(|| DeviceError::Invalid {
            device: dev_name.to_string(),
            message: format!("parameter `{k}` must be a number"),
        })?;
        set(k, value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_below_limit() {
        assert_eq!(current_limit_rho(0.5, 0.5, 1.5), 1.0);
    }

    #[test]
    fn rho_three_four_five() {
        assert!((current_limit_rho(3.0, 4.0, 1.5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rho_boundary_and_zero() {
        assert_eq!(current_limit_rho(1.5, 0.0, 1.5), 1.0);
        assert_eq!(current_limit_rho(0.0, 0.0, 1.5), 1.0);
    }

    #[test]
    fn rho_caps_current_magnitude() {
        for k in 0..100 {
            let i_d = -3.0 + 0.07 * k as f64;
            let i_q = 2.5 - 0.05 * k as f64;
            let rho = current_limit_rho(i_d, i_q, 1.5);
            assert!(rho * i_d.hypot(i_q) <= 1.5 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn frame_roundtrip() {
        let v = Complex64::new(0.3, -0.8);
        let (d, q) = to_device_frame(v, 0.7);
        let back = to_network_frame(d, q, 0.7);
        assert!((back - v).norm() < 1e-15);
    }

    #[test]
    fn key_normalization() {
        assert_eq!(normalize_key("Cdc"), "cdc");
        assert_eq!(normalize_key("t_slack"), "tslack");
        assert_eq!(normalize_key("K_omega"), "komega");
    }
}
