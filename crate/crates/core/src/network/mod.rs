//! Static network model: bus/branch/load data, Y-bus assembly, Newton–Raphson
//! power-flow initialization, and timed events.

mod powerflow;
mod ybus;

pub use powerflow::{solve_power_flow, PowerFlowSolution};
pub use ybus::{build_ybus, network_residual, YBus};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("duplicate bus id `{0}`")]
    DuplicateBus(String),
    #[error("branch {from}-{to} has zero impedance")]
    ZeroImpedanceBranch { from: String, to: String },
    #[error("network is not connected (bus `{0}` unreachable from the first bus)")]
    Disconnected(String),
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("power flow diverged: {0}")]
    PowerFlowDiverged(String),
    #[error("invalid network data: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    /// Angle/voltage reference for power-flow initialization.
    Slack,
    /// Fixed P and |V| at initialization.
    Pv,
    /// Fixed P and Q.
    Pq,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    /// Voltage setpoint (pu), used for slack and PV buses.
    #[serde(default = "default_one")]
    pub v_set: f64,
    /// Active-power injection setpoint (pu), used for PV buses.
    #[serde(default)]
    pub p_set: f64,
    /// Reactive-power injection setpoint (pu), used for PQ buses with generation.
    #[serde(default)]
    pub q_set: f64,
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Branch {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance (pu); half placed at each end.
    #[serde(default)]
    pub b: f64,
    #[serde(default = "default_one")]
    pub tap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadKind {
    ConstantPower,
    ConstantImpedance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: String,
    pub kind: LoadKind,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkData {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
}

impl NetworkData {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        for (i, b) in self.buses.iter().enumerate() {
            if self.buses[..i].iter().any(|o| o.id == b.id) {
                return Err(NetworkError::DuplicateBus(b.id.clone()));
            }
            if !b.v_set.is_finite() || !b.p_set.is_finite() || !b.q_set.is_finite() {
                return Err(NetworkError::Invalid(format!(
                    "non-finite setpoint at bus {}",
                    b.id
                )));
            }
        }
        let slack = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slack != 1 {
            return Err(NetworkError::SlackCount(slack));
        }
        for br in &self.branches {
            if br.r == 0.0 && br.x == 0.0 {
                return Err(NetworkError::ZeroImpedanceBranch {
                    from: br.from.clone(),
                    to: br.to.clone(),
                });
            }
            if br.tap <= 0.0 {
                return Err(NetworkError::Invalid(format!(
                    "branch {}-{} has non-positive tap",
                    br.from, br.to
                )));
            }
            for id in [&br.from, &br.to] {
                if self.bus_index(id).is_none() {
                    return Err(NetworkError::UnknownBus(id.clone()));
                }
            }
        }
        for ld in &self.loads {
            if self.bus_index(&ld.bus).is_none() {
                return Err(NetworkError::UnknownBus(ld.bus.clone()));
            }
        }
        // Connectivity over branches.
        if !self.buses.is_empty() {
            let n = self.buses.len();
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for br in &self.branches {
                    let a = self.bus_index(&br.from).unwrap();
                    let b = self.bus_index(&br.to).unwrap();
                    let next = if a == i {
                        Some(b)
                    } else if b == i {
                        Some(a)
                    } else {
                        None
                    };
                    if let Some(j) = next {
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            if let Some(k) = seen.iter().position(|s| !s) {
                return Err(NetworkError::Disconnected(self.buses[k].id.clone()));
            }
        }
        Ok(())
    }

    /// Total constant-power load (pu).
    pub fn total_constant_power(&self) -> (f64, f64) {
        self.loads
            .iter()
            .filter(|l| l.kind == LoadKind::ConstantPower)
            .fold((0.0, 0.0), |(p, q), l| (p + l.p, q + l.q))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum LoadTarget {
    All,
    Bus(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum EventAction {
    /// Scale the system constant-power load. With target `all`, every
    /// constant-power load's P and Q are multiplied by `1 + magnitude`; with
    /// a bus target, an additional constant-power load of
    /// `magnitude x (total constant-power P)` is switched on at that bus.
    ScaleLoadTotal {
        magnitude: f64,
        #[serde(default = "default_target")]
        target: LoadTarget,
    },
    /// Replace a named device parameter, target `device.param`.
    SetParameter { target: String, value: f64 },
}

fn default_target() -> LoadTarget {
    LoadTarget::All
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub action: EventAction,
}

impl Event {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.time < 0.0 || !self.time.is_finite() {
            return Err(NetworkError::Invalid(format!(
                "event time {} must be non-negative",
                self.time
            )));
        }
        if let EventAction::ScaleLoadTotal { magnitude, .. } = &self.action {
            if *magnitude <= -1.0 {
                return Err(NetworkError::Invalid(format!(
                    "load-step magnitude {magnitude} must exceed -1"
                )));
            }
        }
        Ok(())
    }
}

/// The standard 9-bus test network (100 MVA, 60 Hz base) with the classic
/// generator dispatch. Case presets override the dispatch.
pub fn wscc9(p2: f64, p3: f64) -> NetworkData {
    let bus = |id: &str, kind, v_set: f64, p_set: f64| Bus {
        id: id.into(),
        kind,
        v_set,
        p_set,
        q_set: 0.0,
    };
    let line = |from: &str, to: &str, r: f64, x: f64, b: f64| Branch {
        from: from.into(),
        to: to.into(),
        r,
        x,
        b,
        tap: 1.0,
    };
    NetworkData {
        buses: vec![
            bus("1", BusKind::Slack, 1.04, 0.0),
            bus("2", BusKind::Pv, 1.025, p2),
            bus("3", BusKind::Pv, 1.025, p3),
            bus("4", BusKind::Pq, 1.0, 0.0),
            bus("5", BusKind::Pq, 1.0, 0.0),
            bus("6", BusKind::Pq, 1.0, 0.0),
            bus("7", BusKind::Pq, 1.0, 0.0),
            bus("8", BusKind::Pq, 1.0, 0.0),
            bus("9", BusKind::Pq, 1.0, 0.0),
        ],
        branches: vec![
            line("1", "4", 0.0, 0.0576, 0.0),
            line("2", "7", 0.0, 0.0625, 0.0),
            line("3", "9", 0.0, 0.0586, 0.0),
            line("4", "5", 0.010, 0.085, 0.176),
            line("4", "6", 0.017, 0.092, 0.158),
            line("5", "7", 0.032, 0.161, 0.306),
            line("6", "9", 0.039, 0.170, 0.358),
            line("7", "8", 0.0085, 0.072, 0.149),
            line("8", "9", 0.0119, 0.1008, 0.209),
        ],
        loads: vec![
            LoadSpec {
                bus: "5".into(),
                kind: LoadKind::ConstantPower,
                p: 1.25,
                q: 0.50,
            },
            LoadSpec {
                bus: "6".into(),
                kind: LoadKind::ConstantPower,
                p: 0.90,
                q: 0.30,
            },
            LoadSpec {
                bus: "8".into(),
                kind: LoadKind::ConstantPower,
                p: 1.00,
                q: 0.35,
            },
        ],
    }
}

/// Split every constant-power load into a constant-power part and a
/// constant-impedance part carrying `z_fraction` of it.
pub fn split_load_composition(net: &mut NetworkData, z_fraction: f64) {
    assert!((0.0..1.0).contains(&z_fraction));
    if z_fraction == 0.0 {
        return;
    }
    let mut extra = Vec::new();
    for load in net.loads.iter_mut() {
        if load.kind == LoadKind::ConstantPower {
            extra.push(LoadSpec {
                bus: load.bus.clone(),
                kind: LoadKind::ConstantImpedance,
                p: load.p * z_fraction,
                q: load.q * z_fraction,
            });
            load.p *= 1.0 - z_fraction;
            load.q *= 1.0 - z_fraction;
        }
    }
    net.loads.extend(extra);
}
