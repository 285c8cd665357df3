//! Scenario files: the unit of one simulation run (network, devices, events,
//! integrator settings, output selection), plus the shipped study presets.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::devices::DeviceSpec;
use crate::network::{
    split_load_composition, wscc9, Event, EventAction, LoadTarget, NetworkData, NetworkError,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario JSON invalid at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario `{scenario}` invalid: {message}")]
    Invalid { scenario: String, message: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("unknown case id {0} (valid: 1..=6)")]
    UnknownCase(u8),
    #[error("override `{0}` not understood (use name=value or name@bus=value)")]
    BadOverride(String),
}

/// Solver and verdict tolerances, all overridable per scenario.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Integration Newton tolerance.
    pub newton: f64,
    /// Trailing-window peak-to-peak bound for the settled classification.
    pub settle: f64,
    /// Trailing evaluation window (s).
    pub window: f64,
    /// Condition-3 storage-rate bound (pu).
    pub cond3_h_dot: f64,
    /// Condition-3 frequency bound (pu).
    pub cond3_omega: f64,
    /// Condition-3 magnitude-rate bound (1/s).
    pub cond3_rho: f64,
    /// Voltage-magnitude collapse bounds (pu).
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            newton: 1e-8,
            settle: 1e-4,
            window: 2.0,
            cond3_h_dot: 1e-4,
            cond3_omega: 1e-4,
            cond3_rho: 1e-3,
            v_min: 0.01,
            v_max: 5.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub network: NetworkData,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Channel selection for file output; `None` emits every channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<String>>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_t_end() -> f64 {
    15.0
}

fn default_step() -> f64 {
    1e-3
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |message: String| {
            Err(ScenarioError::Invalid {
                scenario: self.name.clone(),
                message,
            })
        };
        self.network.validate()?;
        if !(self.t_end > 0.0) {
            return fail(format!("t_end = {} must be positive", self.t_end));
        }
        if !(self.step > 0.0) {
            return fail(format!("step = {} must be positive", self.step));
        }
        for (i, d) in self.devices.iter().enumerate() {
            if self.network.bus_index(&d.bus).is_none() {
                return fail(format!("device `{}` references unknown bus `{}`", d.name, d.bus));
            }
            if self.devices[..i].iter().any(|o| o.name == d.name) {
                return fail(format!("duplicate device name `{}`", d.name));
            }
        }
        for e in &self.events {
            e.validate()?;
            if let EventAction::ScaleLoadTotal {
                target: LoadTarget::Bus(b),
                ..
            } = &e.action
            {
                if self.network.bus_index(b).is_none() {
                    return fail(format!("event targets unknown bus `{b}`"));
                }
            }
        }
        for w in self.events.windows(2) {
            if w[1].time < w[0].time {
                return fail("events must be sorted by time".into());
            }
        }
        Ok(())
    }

    /// Apply a `name=value` or `name@bus=value` override. Scenario-level keys
    /// (`t_end`, `step`, `event_mag`) are recognized; anything else is pushed
    /// into the parameter object of the matching devices.
    pub fn apply_override(&mut self, key: &str, value: f64) -> Result<(), ScenarioError> {
        let (name, bus) = match key.split_once('@') {
            Some((n, b)) => (n.trim(), Some(b.trim())),
            None => (key.trim(), None),
        };
        match (name.to_ascii_lowercase().as_str(), bus) {
            ("t_end" | "tend", None) => {
                self.t_end = value;
                return Ok(());
            }
            ("step", None) => {
                self.step = value;
                return Ok(());
            }
            ("event_mag" | "eventmag", None) => {
                for e in self.events.iter_mut() {
                    if let EventAction::ScaleLoadTotal { magnitude, .. } = &mut e.action {
                        *magnitude = value;
                        return Ok(());
                    }
                }
                return Err(ScenarioError::BadOverride(
                    "event_mag: scenario has no load-step event".into(),
                ));
            }
            _ => {}
        }
        let mut touched = 0;
        for d in self.devices.iter_mut() {
            let by_bus = bus.map(|b| d.bus == b).unwrap_or(true);
            let by_name = bus.map(|b| d.name == b).unwrap_or(false);
            if by_bus || by_name {
                if !d.params.is_object() {
                    d.params = serde_json::json!({});
                }
                d.params
                    .as_object_mut()
                    .unwrap()
                    .insert(name.to_string(), serde_json::json!(value));
                touched += 1;
            }
        }
        if touched == 0 {
            return Err(ScenarioError::BadOverride(format!(
                "`{key}` matched no device"
            )));
        }
        Ok(())
    }
}

pub fn scenario_from_json(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    scenario_from_json(&text)
}

/// Constant-impedance share carried by each load in the study presets.
pub const PRESET_LOAD_Z_FRACTION: f64 = 0.05;
/// Case-preset dispatch (pu).
pub const PRESET_DISPATCH: (f64, f64) = (1.10, 0.80);
/// Dispatch of the current-limiter study, placing the first converter just
/// below the reduced limit before the load step.
pub const LIMITER_DISPATCH: (f64, f64) = (1.00, 0.78);

fn preset_network(dispatch: (f64, f64)) -> NetworkData {
    let mut net = wscc9(dispatch.0, dispatch.1);
    split_load_composition(&mut net, PRESET_LOAD_Z_FRACTION);
    net
}

fn load_step_event(time: f64, magnitude: f64, bus: &str) -> Event {
    Event {
        time,
        action: EventAction::ScaleLoadTotal {
            magnitude,
            target: LoadTarget::Bus(bus.to_string()),
        },
    }
}

fn ibr_devices(model: &str, case: u8, params: serde_json::Value) -> Vec<DeviceSpec> {
    ["1", "2", "3"]
        .iter()
        .enumerate()
        .map(|(i, bus)| DeviceSpec {
            name: format!("ibr{}", i + 1),
            bus: bus.to_string(),
            model: model.to_string(),
            case: Some(case),
            params: params.clone(),
            p_set: None,
            q_set: None,
        })
        .collect()
}

/// Study-case presets:
/// 1-3 grid-following (base, +reserve controller, +frequency droop),
/// 4-5 grid-forming droop (base, +reserve controller),
/// 6 virtual synchronous machine.
/// Cases 1-5 apply a 5% total-load step at bus 5 at t = 1 s; case 6 a 10%
/// step.
pub fn case_preset(case_id: u8) -> Result<Scenario, ScenarioError> {
    let (model, magnitude): (&str, f64) = match case_id {
        1 | 2 | 3 => ("gfl", 0.05),
        4 | 5 => ("gfm", 0.05),
        6 => ("vsm", 0.10),
        other => return Err(ScenarioError::UnknownCase(other)),
    };
    let scenario = Scenario {
        name: format!("case{case_id}"),
        network: preset_network(PRESET_DISPATCH),
        devices: ibr_devices(model, case_id, serde_json::Value::Null),
        events: vec![load_step_event(1.0, magnitude, "5")],
        t_end: 15.0,
        step: 1e-3,
        channels: None,
        tolerances: Tolerances::default(),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Current-limiter study (two presets): the reserve-equipped grid-forming
/// case on a dispatch that loads converter 1 close to its limit. In the
/// `limited` variant, converter 1's limit is reduced to 1.415 pu so the load
/// step drives it onto the limiter.
pub fn limiter_study_preset(limited: bool) -> Scenario {
    let mut devices = ibr_devices("gfm", 5, serde_json::Value::Null);
    if limited {
        devices[0].params = serde_json::json!({ "i_max": 1.415 });
    }
    let scenario = Scenario {
        name: if limited {
            "case5_limited".into()
        } else {
            "case5_unlimited".into()
        },
        network: preset_network(LIMITER_DISPATCH),
        devices,
        events: vec![load_step_event(1.0, 0.05, "5")],
        t_end: 15.0,
        step: 1e-3,
        channels: None,
        tolerances: Tolerances::default(),
    };
    scenario.validate().expect("preset is valid");
    scenario
}

/// Virtual-inertia study preset: the case-6 scenario at a chosen inertia,
/// with a horizon long enough for the slowest setting to settle.
pub fn inertia_study_preset(m: f64) -> Scenario {
    let mut scenario = case_preset(6).expect("case 6 exists");
    scenario.name = format!("case6_m{}", m as i64);
    for d in scenario.devices.iter_mut() {
        d.params = serde_json::json!({ "m": m });
    }
    scenario.t_end = 25.0;
    scenario
}

/// Storage-capacity study preset (time-domain side): case 3 at a chosen dc
/// capacitance.
pub fn storage_study_preset(c_dc: f64) -> Scenario {
    let mut scenario = case_preset(3).expect("case 3 exists");
    scenario.name = format!("case3_cdc{:04}", (c_dc * 1000.0) as i64);
    for d in scenario.devices.iter_mut() {
        d.params = serde_json::json!({ "c_dc": c_dc });
    }
    scenario
}

/// Reserve-speed study preset (time-domain side): case 3 at a chosen reserve
/// time constant.
pub fn reserve_study_preset(t_slack: f64) -> Scenario {
    let mut scenario = case_preset(3).expect("case 3 exists");
    scenario.name = format!("case3_tslack{:04}", (t_slack * 1000.0) as i64);
    for d in scenario.devices.iter_mut() {
        d.params = serde_json::json!({ "t_slack": t_slack });
    }
    scenario
}
