use num_complex::Complex64;
use serde::Serialize;

use super::ibr::{
    frame_constraint, ibr_ph_data, init_physical, physical_layer_residual, BridgeInputs,
    IbrParams,
};
use super::{
    apply_param_object, current_limit_rho, Coupling, DeviceError, DeviceInit, DeviceModel,
    DeviceSpec, Measurement, PhData, StorageQuadratic,
};
use crate::{OMEGA_B, OMEGA_S};

/// Grid-forming variant: plain droop (stage 4) or droop with the dc-side
/// reserve controller (stage 5).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GfmCase {
    Four,
    Five,
}

impl GfmCase {
    pub fn id(&self) -> u8 {
        match self {
            GfmCase::Four => 4,
            GfmCase::Five => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
struct GfmRefs {
    e0: f64,
    p_star: f64,
    q_star: f64,
    i_dc_star: f64,
}

/// Grid-forming droop converter: primary p-f and q-V droops set the frame and
/// the voltage reference; cascaded voltage and current controllers with
/// anti-windup and a current limiter drive the bridge.
pub struct GfmConverter {
    name: String,
    bus: String,
    case: GfmCase,
    pub params: IbrParams,
    refs: GfmRefs,
}

// State layout: v_dc i_d i_q v_d v_q delta g_p g_q2 g_avd g_avq g_ccd g_ccq
//               (+ i_dcs g_s for stage 5)
const N4: usize = 12;
const N5: usize = 14;

struct GfmOutputs {
    omega: f64,
    rho: f64,
    i_d_star: f64,
    i_q_star: f64,
    e_star_d: f64,
    v_t_d: f64,
    v_t_q: f64,
}

impl GfmConverter {
    pub fn new(name: &str, bus: &str, case: GfmCase, params: IbrParams) -> Result<Self, DeviceError> {
        params.validate(name)?;
        if params.ki_avc == 0.0 || params.ki_cc == 0.0 {
            return Err(DeviceError::Invalid {
                device: name.to_string(),
                message: "grid-forming voltage/current controllers need nonzero integral gains"
                    .into(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            bus: bus.to_string(),
            case,
            params,
            refs: GfmRefs::default(),
        })
    }

    pub fn from_spec(spec: &DeviceSpec) -> Result<Self, DeviceError> {
        let case = match spec.case.unwrap_or(4) {
            4 => GfmCase::Four,
            5 => GfmCase::Five,
            other => {
                return Err(DeviceError::Invalid {
                    device: spec.name.clone(),
                    message: format!("gfm case must be 4 or 5 (got {other})"),
                })
            }
        };
        let mut params = IbrParams::gfm();
        apply_param_object(&spec.name, &spec.params, |k, v| {
            params.set(&spec.name, k, v)
        })?;
        Self::new(&spec.name, &spec.bus, case, params)
    }

    pub fn case(&self) -> GfmCase {
        self.case
    }

    fn outputs(&self, x: &[f64]) -> GfmOutputs {
        let p = &self.params;
        let (i_d, i_q, v_d, v_q) = (x[1], x[2], x[3], x[4]);
        let (g_p, g_q2, g_avd, g_avq, g_ccd, g_ccq) = (x[6], x[7], x[8], x[9], x[10], x[11]);
        let w_c = p.omega_c * OMEGA_B;
        let omega = OMEGA_S + p.m_p * w_c * g_p;
        let e_star_d = self.refs.e0 + p.m_q * w_c * g_q2;
        let rho = current_limit_rho(i_d, i_q, p.i_max);
        let d_w = 1.0 - p.kp_avc * p.k_w * (1.0 - rho);
        let i_d_star = (p.kp_avc * (e_star_d - v_d) + p.ki_avc * g_avd) / d_w;
        let i_q_star = (p.kp_avc * (0.0 - v_q) + p.ki_avc * g_avq) / d_w;
        let v_t_d = p.kp_cc * (rho * i_d_star - i_d) + p.ki_cc * g_ccd + v_d - omega * p.l_f * i_q;
        let v_t_q = p.kp_cc * (rho * i_q_star - i_q) + p.ki_cc * g_ccq + v_q + omega * p.l_f * i_d;
        GfmOutputs {
            omega,
            rho,
            i_d_star,
            i_q_star,
            e_star_d,
            v_t_d,
            v_t_q,
        }
    }

    fn i_dc_source(&self, x: &[f64]) -> f64 {
        match self.case {
            GfmCase::Four => self.refs.i_dc_star,
            GfmCase::Five => x[12],
        }
    }
}

impl DeviceModel for GfmConverter {
    fn kind(&self) -> &'static str {
        "gfm"
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn bus(&self) -> &str {
        &self.bus
    }

    fn n_states(&self) -> usize {
        match self.case {
            GfmCase::Four => N4,
            GfmCase::Five => N5,
        }
    }

    fn n_algebraic(&self) -> usize {
        2
    }

    fn state_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "v_dc", "i_d", "i_q", "v_d", "v_q", "delta", "g_p", "g_q", "g_avd", "g_avq", "g_ccd",
            "g_ccq",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        if self.case == GfmCase::Five {
            names.extend(["i_dcs", "g_s"].map(String::from));
        }
        names
    }

    fn coupling(&self) -> Coupling {
        Coupling::VoltageSource
    }

    fn residual(
        &self,
        x: &[f64],
        xp: &[f64],
        y: &[f64],
        v_bus: Complex64,
        f: &mut [f64],
        g: &mut [f64],
    ) {
        let p = &self.params;
        let (v_dc, v_d, v_q) = (x[0], x[3], x[4]);
        let i_g = (y[0], y[1]);
        let out = self.outputs(x);
        let inp = BridgeInputs {
            v_t_d: out.v_t_d,
            v_t_q: out.v_t_q,
            omega: out.omega,
            i_dc_source: self.i_dc_source(x),
        };
        physical_layer_residual(p, &x[..5], &xp[..5], i_g, &inp, &mut f[..5]);

        let w_c = p.omega_c * OMEGA_B;
        let p_h = v_d * i_g.0 + v_q * i_g.1;
        let q_h = v_q * i_g.0 - v_d * i_g.1;
        f[5] = xp[5] - OMEGA_B * (out.omega - OMEGA_S);
        f[6] = xp[6] - ((self.refs.p_star - p_h) - w_c * x[6]);
        f[7] = xp[7] - ((self.refs.q_star - q_h) - w_c * x[7]);
        f[8] = xp[8] - (out.e_star_d - v_d - (1.0 - out.rho) * p.k_w * out.i_d_star);
        f[9] = xp[9] - (0.0 - v_q - (1.0 - out.rho) * p.k_w * out.i_q_star);
        f[10] = xp[10] - (out.rho * out.i_d_star - x[1]);
        f[11] = xp[11] - (out.rho * out.i_q_star - x[2]);
        if self.case == GfmCase::Five {
            let (i_dcs, g_s) = (x[12], x[13]);
            f[12] = p.t_slack * xp[12]
                - (p.kp_slack * (p.v_dc_star - v_dc) + p.ki_slack * g_s - i_dcs);
            f[13] = xp[13] - (p.v_dc_star - v_dc);
        }
        frame_constraint(v_d, v_q, x[5], v_bus, g);
    }

    fn injection(&self, x: &[f64], y: &[f64], _v_bus: Complex64) -> Complex64 {
        super::to_network_frame(y[0], y[1], x[5])
    }

    fn initialize(&mut self, init: &DeviceInit) -> Result<(Vec<f64>, Vec<f64>), DeviceError> {
        let p = self.params;
        let (x5, i_g, _vtd, _vtq, i_dc) = init_physical(&p, init);
        let (i_d, i_q) = (x5[1], x5[2]);
        if i_d.hypot(i_q) > p.i_max {
            return Err(DeviceError::InitFailed {
                device: self.name.clone(),
                message: format!(
                    "operating current {:.4} pu exceeds the limit {:.4} pu",
                    i_d.hypot(i_q),
                    p.i_max
                ),
            });
        }
        self.refs.e0 = init.v_mag;
        self.refs.p_star = x5[3] * i_g.0 + x5[4] * i_g.1;
        self.refs.q_star = x5[4] * i_g.0 - x5[3] * i_g.1;
        self.refs.i_dc_star = i_dc;
        let mut x = x5.to_vec();
        x.extend([
            init.v_ang,
            0.0,
            0.0,
            i_d / p.ki_avc,
            i_q / p.ki_avc,
            p.r_f * i_d / p.ki_cc,
            p.r_f * i_q / p.ki_cc,
        ]);
        if self.case == GfmCase::Five {
            x.extend([i_dc, i_dc / p.ki_slack]);
        }
        Ok((x, vec![i_g.0, i_g.1]))
    }

    fn measurement(&self, x: &[f64], y: &[f64], _v_bus: Complex64) -> Measurement {
        let out = self.outputs(x);
        let (v_d, v_q) = (x[3], x[4]);
        Measurement {
            omega: out.omega,
            p: v_d * y[0] + v_q * y[1],
            q: v_q * y[0] - v_d * y[1],
            v_local: (v_d, v_q),
            i_local: (y[0], y[1]),
            frame_angle: x[5],
            v_ac: v_d.hypot(v_q),
            v_dc: Some(x[0]),
            rho: Some(out.rho),
            omega_pll: None,
            bound_hit: (out.rho < 1.0 - 1e-9).then_some("i_max"),
        }
    }

    fn ph_data(&self, x: &[f64], y: &[f64], _v_bus: Complex64) -> Option<PhData> {
        let out = self.outputs(x);
        let inp = BridgeInputs {
            v_t_d: out.v_t_d,
            v_t_q: out.v_t_q,
            omega: out.omega,
            i_dc_source: self.i_dc_source(x),
        };
        Some(ibr_ph_data(&self.params, &x[..5], (y[0], y[1]), &inp))
    }

    fn storage_quadratic(&self) -> Option<StorageQuadratic> {
        let p = &self.params;
        Some(StorageQuadratic {
            diag: vec![p.c_dc, p.l_f, p.l_f, p.c_f, p.c_f],
            storage_positions: vec![0, 1, 2, 3, 4],
        })
    }

    fn source_input_is_dynamic(&self) -> bool {
        self.case == GfmCase::Five
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<(), DeviceError> {
        self.params.set(&self.name.clone(), key, value)
    }

    fn params_json(&self) -> serde_json::Value {
        serde_json::to_value(self.params).expect("params serialize")
    }
}

/// Virtual synchronous machine: the droop pair is replaced by a swing-type
/// rotor equation with virtual inertia. With zero inertia the frequency turns
/// into an algebraic variable.
pub struct VsmConverter {
    name: String,
    bus: String,
    pub params: IbrParams,
    refs: GfmRefs,
}

// State layout (m > 0): v_dc i_d i_q v_d v_q delta omega g_avd g_avq g_ccd
//                       g_ccq i_dcs g_s                             (13)
// With m = 0 the omega state is dropped and appears as a third algebraic
// variable after the grid-current pair.
impl VsmConverter {
    pub fn new(name: &str, bus: &str, params: IbrParams) -> Result<Self, DeviceError> {
        params.validate(name)?;
        if params.ki_avc == 0.0 || params.ki_cc == 0.0 {
            return Err(DeviceError::Invalid {
                device: name.to_string(),
                message: "voltage/current controllers need nonzero integral gains".into(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            bus: bus.to_string(),
            params,
            refs: GfmRefs::default(),
        })
    }

    pub fn from_spec(spec: &DeviceSpec) -> Result<Self, DeviceError> {
        if let Some(case) = spec.case {
            if case != 6 {
                return Err(DeviceError::Invalid {
                    device: spec.name.clone(),
                    message: format!("vsm corresponds to case 6 (got {case})"),
                });
            }
        }
        let mut params = IbrParams::gfm();
        apply_param_object(&spec.name, &spec.params, |k, v| {
            params.set(&spec.name, k, v)
        })?;
        Self::new(&spec.name, &spec.bus, params)
    }

    fn inertial(&self) -> bool {
        self.params.m > 0.0
    }

    fn omega(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.inertial() {
            x[6]
        } else {
            y[2]
        }
    }

    fn controller_offset(&self) -> usize {
        if self.inertial() {
            7
        } else {
            6
        }
    }

    fn outputs(&self, x: &[f64], y: &[f64]) -> GfmOutputs {
        let p = &self.params;
        let (i_d, i_q, v_d, v_q) = (x[1], x[2], x[3], x[4]);
        let o = self.controller_offset();
        let (g_avd, g_avq, g_ccd, g_ccq) = (x[o], x[o + 1], x[o + 2], x[o + 3]);
        let omega = self.omega(x, y);
        let e_star_d = self.refs.e0;
        let rho = current_limit_rho(i_d, i_q, p.i_max);
        let d_w = 1.0 - p.kp_avc * p.k_w * (1.0 - rho);
        let i_d_star = (p.kp_avc * (e_star_d - v_d) + p.ki_avc * g_avd) / d_w;
        let i_q_star = (p.kp_avc * (0.0 - v_q) + p.ki_avc * g_avq) / d_w;
        let v_t_d = p.kp_cc * (rho * i_d_star - i_d) + p.ki_cc * g_ccd + v_d - omega * p.l_f * i_q;
        let v_t_q = p.kp_cc * (rho * i_q_star - i_q) + p.ki_cc * g_ccq + v_q + omega * p.l_f * i_d;
        GfmOutputs {
            omega,
            rho,
            i_d_star,
            i_q_star,
            e_star_d,
            v_t_d,
            v_t_q,
        }
    }
}

impl DeviceModel for VsmConverter {
    fn kind(&self) -> &'static str {
        "vsm"
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn bus(&self) -> &str {
        &self.bus
    }

    fn n_states(&self) -> usize {
        if self.inertial() {
            13
        } else {
            12
        }
    }

    fn n_algebraic(&self) -> usize {
        if self.inertial() {
            2
        } else {
            3
        }
    }

    fn state_names(&self) -> Vec<String> {
        let mut names = vec![
            "v_dc".to_string(),
            "i_d".into(),
            "i_q".into(),
            "v_d".into(),
            "v_q".into(),
            "delta".into(),
        ];
        if self.inertial() {
            names.push("omega".into());
        }
        names.extend(["g_avd", "g_avq", "g_ccd", "g_ccq", "i_dcs", "g_s"].map(String::from));
        names
    }

    fn coupling(&self) -> Coupling {
        Coupling::VoltageSource
    }

    fn residual(
        &self,
        x: &[f64],
        xp: &[f64],
        y: &[f64],
        v_bus: Complex64,
        f: &mut [f64],
        g: &mut [f64],
    ) {
        let p = &self.params;
        let (v_dc, v_d, v_q) = (x[0], x[3], x[4]);
        let i_g = (y[0], y[1]);
        let out = self.outputs(x, y);
        let o = self.controller_offset();
        let (i_dcs, g_s) = (x[o + 4], x[o + 5]);
        let inp = BridgeInputs {
            v_t_d: out.v_t_d,
            v_t_q: out.v_t_q,
            omega: out.omega,
            i_dc_source: i_dcs,
        };
        physical_layer_residual(p, &x[..5], &xp[..5], i_g, &inp, &mut f[..5]);

        let p_h = v_d * i_g.0 + v_q * i_g.1;
        f[5] = xp[5] - OMEGA_B * (out.omega - OMEGA_S);
        if self.inertial() {
            f[6] = p.m * xp[6] - ((self.refs.p_star - p_h) - out.omega / p.m_p);
        }
        f[o] = xp[o] - (out.e_star_d - v_d - (1.0 - out.rho) * p.k_w * out.i_d_star);
        f[o + 1] = xp[o + 1] - (0.0 - v_q - (1.0 - out.rho) * p.k_w * out.i_q_star);
        f[o + 2] = xp[o + 2] - (out.rho * out.i_d_star - x[1]);
        f[o + 3] = xp[o + 3] - (out.rho * out.i_q_star - x[2]);
        f[o + 4] =
            p.t_slack * xp[o + 4] - (p.kp_slack * (p.v_dc_star - v_dc) + p.ki_slack * g_s - i_dcs);
        f[o + 5] = xp[o + 5] - (p.v_dc_star - v_dc);

        frame_constraint(v_d, v_q, x[5], v_bus, g);
        if !self.inertial() {
            g[2] = (self.refs.p_star - p_h) - out.omega / p.m_p;
        }
    }

    fn injection(&self, x: &[f64], y: &[f64], _v_bus: Complex64) -> Complex64 {
        super::to_network_frame(y[0], y[1], x[5])
    }

    fn initialize(&mut self, init: &DeviceInit) -> Result<(Vec<f64>, Vec<f64>), DeviceError> {
        let p = self.params;
        let (x5, i_g, _vtd, _vtq, i_dc) = init_physical(&p, init);
        let (i_d, i_q) = (x5[1], x5[2]);
        if i_d.hypot(i_q) > p.i_max {
            return Err(DeviceError::InitFailed {
                device: self.name.clone(),
                message: format!(
                    "operating current {:.4} pu exceeds the limit {:.4} pu",
                    i_d.hypot(i_q),
                    p.i_max
                ),
            });
        }
        self.refs.e0 = init.v_mag;
        let p_h = x5[3] * i_g.0 + x5[4] * i_g.1;
        // The rotor equation balances at synchronous speed when the reference
        // absorbs the omega/m_p bias.
        self.refs.p_star = p_h + OMEGA_S / p.m_p;
        self.refs.i_dc_star = i_dc;
        let mut x = x5.to_vec();
        x.push(init.v_ang);
        if self.inertial() {
            x.push(OMEGA_S);
        }
        x.extend([
            i_d / p.ki_avc,
            i_q / p.ki_avc,
            p.r_f * i_d / p.ki_cc,
            p.r_f * i_q / p.ki_cc,
            i_dc,
            i_dc / p.ki_slack,
        ]);
        let mut y = vec![i_g.0, i_g.1];
        if !self.inertial() {
            y.push(OMEGA_S);
        }
        Ok((x, y))
    }

    fn measurement(&self, x: &[f64], y: &[f64], _v_bus: Complex64) -> Measurement {
        let out = self.outputs(x, y);
        let (v_d, v_q) = (x[3], x[4]);
        Measurement {
            omega: out.omega,
            p: v_d * y[0] + v_q * y[1],
            q: v_q * y[0] - v_d * y[1],
            v_local: (v_d, v_q),
            i_local: (y[0], y[1]),
            frame_angle: x[5],
            v_ac: v_d.hypot(v_q),
            v_dc: Some(x[0]),
            rho: Some(out.rho),
            omega_pll: None,
            bound_hit: (out.rho < 1.0 - 1e-9).then_some("i_max"),
        }
    }

    fn ph_data(&self, x: &[f64], y: &[f64], _v_bus: Complex64) -> Option<PhData> {
        let out = self.outputs(x, y);
        let o = self.controller_offset();
        let inp = BridgeInputs {
            v_t_d: out.v_t_d,
            v_t_q: out.v_t_q,
            omega: out.omega,
            i_dc_source: x[o + 4],
        };
        Some(ibr_ph_data(&self.params, &x[..5], (y[0], y[1]), &inp))
    }

    fn storage_quadratic(&self) -> Option<StorageQuadratic> {
        let p = &self.params;
        Some(StorageQuadratic {
            diag: vec![p.c_dc, p.l_f, p.l_f, p.c_f, p.c_f],
            storage_positions: vec![0, 1, 2, 3, 4],
        })
    }

    fn source_input_is_dynamic(&self) -> bool {
        true
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<(), DeviceError> {
        self.params.set(&self.name.clone(), key, value)
    }

    fn params_json(&self) -> serde_json::Value {
        serde_json::to_value(self.params).expect("params serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn init_point() -> DeviceInit {
        DeviceInit {
            p: 1.0,
            q: 0.15,
            v_mag: 1.025,
            v_ang: -0.05,
        }
    }

    fn check_equilibrium(dev: &dyn DeviceModel, x: &[f64], y: &[f64], v_bus: Complex64) {
        let mut f = vec![0.0; dev.n_states()];
        let mut g = vec![0.0; dev.n_algebraic()];
        dev.residual(x, &vec![0.0; dev.n_states()], y, v_bus, &mut f, &mut g);
        let worst = f.iter().chain(&g).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-9, "{} residual {worst}", dev.kind());
    }

    #[test]
    fn gfm_equilibrium_both_stages() {
        for case in [GfmCase::Four, GfmCase::Five] {
            let mut dev = GfmConverter::new("t", "b", case, IbrParams::gfm()).unwrap();
            let init = init_point();
            let (x, y) = dev.initialize(&init).unwrap();
            check_equilibrium(&dev, &x, &y, Complex64::from_polar(init.v_mag, init.v_ang));
        }
    }

    #[test]
    fn droop_at_setpoint_is_stationary() {
        // With p_h = p*, q_h = q*, the droop filter states decay to zero and
        // the frame holds synchronous speed.
        let mut dev = GfmConverter::new("t", "b", GfmCase::Four, IbrParams::gfm()).unwrap();
        let init = init_point();
        let (x, y) = dev.initialize(&init).unwrap();
        assert_eq!(x[6], 0.0);
        assert_eq!(x[7], 0.0);
        let m = dev.measurement(&x, &y, Complex64::from_polar(init.v_mag, init.v_ang));
        assert!((m.omega - OMEGA_S).abs() < 1e-14);
    }

    #[test]
    fn vsm_equilibrium_inertial_and_algebraic() {
        for m in [50.0, 10.0, 0.0] {
            let mut params = IbrParams::gfm();
            params.m = m;
            let mut dev = VsmConverter::new("t", "b", params).unwrap();
            let init = init_point();
            let (x, y) = dev.initialize(&init).unwrap();
            check_equilibrium(&dev, &x, &y, Complex64::from_polar(init.v_mag, init.v_ang));
            let meas = dev.measurement(&x, &y, Complex64::from_polar(init.v_mag, init.v_ang));
            assert!((meas.omega - OMEGA_S).abs() < 1e-12, "m = {m}");
        }
    }

    #[test]
    fn vsm_zero_inertia_layout() {
        let mut params = IbrParams::gfm();
        params.m = 0.0;
        let dev = VsmConverter::new("t", "b", params).unwrap();
        assert_eq!(dev.n_states(), 12);
        assert_eq!(dev.n_algebraic(), 3);
    }

    #[test]
    fn limiter_reported_when_binding() {
        let mut params = IbrParams::gfm();
        params.i_max = 0.5;
        let mut dev = GfmConverter::new("t", "b", GfmCase::Five, params).unwrap();
        let err = dev.initialize(&init_point());
        assert!(err.is_err(), "initialization on the limiter must fail");
    }

    #[test]
    fn gfl_gfm_share_physical_layer_exactly() {
        // Same physical states and bridge inputs produce bit-identical
        // physical residual rows through both device types.
        let gfl_params = IbrParams::gfl();
        let mut gfm_params = IbrParams::gfm();
        // Align the physical parameters (they already match by default).
        gfm_params.c_dc = gfl_params.c_dc;
        let x5 = [0.97, 1.1, -0.25, 1.01, 0.015];
        let xp5 = [0.3, -0.2, 0.11, 0.07, -0.4];
        let i_g = (1.05, -0.3);
        let inp = BridgeInputs {
            v_t_d: 1.04,
            v_t_q: 0.06,
            omega: 1.003,
            i_dc_source: 1.12,
        };
        let mut f1 = [0.0; 5];
        let mut f2 = [0.0; 5];
        physical_layer_residual(&gfl_params, &x5, &xp5, i_g, &inp, &mut f1);
        physical_layer_residual(&gfm_params, &x5, &xp5, i_g, &inp, &mut f2);
        assert_eq!(f1, f2);
    }
}
