use num_complex::Complex64;
use serde::Serialize;

use super::ibr::{
    bridge_dc_current, frame_constraint, ibr_ph_data, init_physical, physical_layer_residual,
    BridgeInputs, IbrParams,
};
use super::{
    apply_param_object, Coupling, DeviceError, DeviceInit, DeviceModel, DeviceSpec, Measurement,
    PhData, StorageQuadratic,
};
use crate::{OMEGA_B, OMEGA_S};

/// Controller stage of the grid-following converter.
///
/// - `One`: dc-voltage and ac-voltage controllers only; constant dc source
///   current.
/// - `Two`: adds the dc-side reserve controller driving the source current.
/// - `Three`: adds the power-frequency droop; the d-axis current loop is
///   repurposed to carry the delivered power and the reserve controller owns
///   the dc-bus voltage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GflCase {
    One,
    Two,
    Three,
}

impl GflCase {
    pub fn id(&self) -> u8 {
        match self {
            GflCase::One => 1,
            GflCase::Two => 2,
            GflCase::Three => 3,
        }
    }
}

/// References fixed at initialization.
#[derive(Clone, Copy, Debug, Default, Serialize)]
struct GflRefs {
    v_ac_star: f64,
    /// Constant source current (stage 1).
    i_dc_star: f64,
    /// Scheduled active power anchor (stage 3).
    p0: f64,
}

/// Grid-following converter: PLL-synchronized current-controlled inverter
/// with a dc-bus capacitor behind a lossless bridge.
pub struct GflConverter {
    name: String,
    bus: String,
    case: GflCase,
    pub params: IbrParams,
    refs: GflRefs,
}

// State layouts.
// Case 1:  v_dc i_d i_q v_d v_q g_dvc g_d g_q v_qf g_pll theta            (11)
// Case 2:  ... + i_dcs g_s                                                 (13)
// Case 3:  v_dc i_d i_q v_d v_q g_d g_q theta g_w g_pll theta_pll
//          i_dcs g_s p_f                                                   (14)
const N1: usize = 11;
const N2: usize = 13;
const N3: usize = 14;

impl GflConverter {
    pub fn new(name: &str, bus: &str, case: GflCase, params: IbrParams) -> Result<Self, DeviceError> {
        params.validate(name)?;
        if params.ki_avc != 0.0 {
            return Err(DeviceError::Invalid {
                device: name.to_string(),
                message: "the grid-following voltage controller is proportional-only (ki_avc must be 0)"
                    .into(),
            });
        }
        if params.ki_cc == 0.0 {
            return Err(DeviceError::Invalid {
                device: name.to_string(),
                message: "ki_cc must be nonzero".into(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            bus: bus.to_string(),
            case,
            params,
            refs: GflRefs::default(),
        })
    }

    pub fn from_spec(spec: &DeviceSpec) -> Result<Self, DeviceError> {
        let case = match spec.case.unwrap_or(1) {
            1 => GflCase::One,
            2 => GflCase::Two,
            3 => GflCase::Three,
            other => {
                return Err(DeviceError::Invalid {
                    device: spec.name.clone(),
                    message: format!("gfl case must be 1, 2, or 3 (got {other})"),
                })
            }
        };
        let mut params = IbrParams::gfl();
        apply_param_object(&spec.name, &spec.params, |k, v| {
            params.set(&spec.name, k, v)
        })?;
        Self::new(&spec.name, &spec.bus, case, params)
    }

    pub fn case(&self) -> GflCase {
        self.case
    }

    /// Controller outputs at a state: bridge voltages, frame frequency, and
    /// the conversion current drawn from the dc bus.
    pub fn converter_outputs(&self, x: &[f64]) -> (f64, f64, f64, f64) {
        let inp = self.bridge_inputs(x);
        let i_dc = bridge_dc_current(&x[..5], &inp);
        (inp.v_t_d, inp.v_t_q, inp.omega, i_dc)
    }

    fn bridge_inputs(&self, x: &[f64]) -> BridgeInputs {
        let p = &self.params;
        let (v_dc, i_d, i_q, v_d, v_q) = (x[0], x[1], x[2], x[3], x[4]);
        let v_ac = v_d.hypot(v_q);
        let i_q_star = p.kp_avc * (v_ac - self.refs.v_ac_star);
        let (omega, i_d_star, g_d, g_q) = match self.case {
            GflCase::One | GflCase::Two => {
                let (g_dvc, g_d, g_q, v_qf, g_pll) = (x[5], x[6], x[7], x[8], x[9]);
                let omega = p.kp_pll * v_qf + p.ki_pll * g_pll + OMEGA_S;
                let i_d_star = p.kp_dvc * (v_dc - p.v_dc_star) + p.ki_dvc * g_dvc;
                (omega, i_d_star, g_d, g_q)
            }
            GflCase::Three => {
                let (g_d, g_q, g_w, p_f) = (x[5], x[6], x[8], x[13]);
                let omega = OMEGA_S + g_w / p.k_omega;
                let i_d_star = if p.case3_literal_pstar_form {
                    p_f / v_d - i_q
                } else {
                    (p_f - v_q * i_q) / v_d
                };
                (omega, i_d_star, g_d, g_q)
            }
        };
        let v_t_d = p.kp_cc * (i_d_star - i_d) + p.ki_cc * g_d - omega * p.l_f * i_q + v_d;
        let v_t_q = p.kp_cc * (i_q_star - i_q) + p.ki_cc * g_q + omega * p.l_f * i_d + v_q;
        let i_dc_source = match self.case {
            GflCase::One => self.refs.i_dc_star,
            GflCase::Two => x[11],
            GflCase::Three => x[11],
        };
        BridgeInputs {
            v_t_d,
            v_t_q,
            omega,
            i_dc_source,
        }
    }

    fn frame_angle(&self, x: &[f64]) -> f64 {
        match self.case {
            GflCase::One | GflCase::Two => x[10],
            GflCase::Three => x[7],
        }
    }
}

impl DeviceModel for GflConverter {
    fn kind(&self) -> &'static str {
        "gfl"
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn bus(&self) -> &str {
        &self.bus
    }

    fn n_states(&self) -> usize {
        match self.case {
            GflCase::One => N1,
            GflCase::Two => N2,
            GflCase::Three => N3,
        }
    }

    fn n_algebraic(&self) -> usize {
        2
    }

    fn state_names(&self) -> Vec<String> {
        let base = ["v_dc", "i_d", "i_q", "v_d", "v_q"];
        let mut names: Vec<String> = base.iter().map(|s| s.to_string()).collect();
        match self.case {
            GflCase::One => {
                names.extend(["g_dvc", "g_d", "g_q", "v_qf", "g_pll", "theta"].map(String::from));
            }
            GflCase::Two => {
                names.extend(
                    ["g_dvc", "g_d", "g_q", "v_qf", "g_pll", "theta", "i_dcs", "g_s"]
                        .map(String::from),
                );
            }
            GflCase::Three => {
                names.extend(
                    [
                        "g_d", "g_q", "theta", "g_w", "g_pll", "theta_pll", "i_dcs", "g_s", "p_f",
                    ]
                    .map(String::from),
                );
            }
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
        let (v_dc, i_d, i_q, v_d, v_q) = (x[0], x[1], x[2], x[3], x[4]);
        let i_g = (y[0], y[1]);
        let inp = self.bridge_inputs(x);
        physical_layer_residual(p, &x[..5], &xp[..5], i_g, &inp, &mut f[..5]);

        let v_ac = v_d.hypot(v_q);
        let i_q_star = p.kp_avc * (v_ac - self.refs.v_ac_star);
        match self.case {
            GflCase::One | GflCase::Two => {
                let i_d_star = p.kp_dvc * (v_dc - p.v_dc_star) + p.ki_dvc * x[5];
                let v_qf = x[8];
                f[5] = xp[5] - (v_dc - p.v_dc_star);
                f[6] = xp[6] - (i_d_star - i_d);
                f[7] = xp[7] - (i_q_star - i_q);
                f[8] = p.tau_pll * xp[8] - (v_q - v_qf);
                f[9] = xp[9] - v_qf;
                f[10] = xp[10] - OMEGA_B * (inp.omega - OMEGA_S);
                if self.case == GflCase::Two {
                    let (i_dcs, g_s) = (x[11], x[12]);
                    f[11] = p.t_slack * xp[11]
                        - (p.kp_slack * (p.v_dc_star - v_dc) + p.ki_slack * g_s - i_dcs);
                    f[12] = xp[12] - (p.v_dc_star - v_dc);
                }
            }
            GflCase::Three => {
                let (g_w, g_pll, theta_pll, i_dcs, g_s, p_f) =
                    (x[8], x[9], x[10], x[11], x[12], x[13]);
                let p_h = v_d * i_g.0 + v_q * i_g.1;
                let i_d_star = if p.case3_literal_pstar_form {
                    p_f / v_d - i_q
                } else {
                    (p_f - v_q * i_q) / v_d
                };
                f[5] = xp[5] - (i_d_star - i_d);
                f[6] = xp[6] - (i_q_star - i_q);
                f[7] = xp[7] - OMEGA_B * (inp.omega - OMEGA_S);
                f[8] = p.t_omega * xp[8] - ((self.refs.p0 - p_h) - g_w);
                // Synchronization measurement loop on the bus voltage.
                let v_q_pll = (v_bus * Complex64::from_polar(1.0, -theta_pll)).im;
                f[9] = xp[9] - v_q_pll;
                f[10] = xp[10] - OMEGA_B * (p.kp_pll * v_q_pll + p.ki_pll * g_pll);
                f[11] = p.t_slack * xp[11]
                    - (p.kp_slack * (p.v_dc_star - v_dc) + p.ki_slack * g_s - i_dcs);
                f[12] = xp[12] - (p.v_dc_star - v_dc);
                f[13] = p.tau_track * xp[13] - (p_h - p_f);
            }
        }
        frame_constraint(v_d, v_q, self.frame_angle(x), v_bus, g);
    }

    fn injection(&self, x: &[f64], y: &[f64], _v_bus: Complex64) -> Complex64 {
        super::to_network_frame(y[0], y[1], self.frame_angle(x))
    }

    fn initialize(&mut self, init: &DeviceInit) -> Result<(Vec<f64>, Vec<f64>), DeviceError> {
        let p = self.params;
        if init.v_mag <= 0.0 {
            return Err(DeviceError::InitFailed {
                device: self.name.clone(),
                message: format!("bus voltage {} must be positive", init.v_mag),
            });
        }
        let (x5, i_g, _v_t_d, _v_t_q, i_dc) = init_physical(&p, init);
        let (i_d, i_q) = (x5[1], x5[2]);
        // Proportional-only voltage controller: offset the reference so the
        // q-current matches the operating point.
        self.refs.v_ac_star = init.v_mag - i_q / p.kp_avc;
        let g_d = p.r_f * i_d / p.ki_cc;
        let g_q = p.r_f * i_q / p.ki_cc;
        let theta = init.v_ang;
        let mut x = x5.to_vec();
        match self.case {
            GflCase::One => {
                self.refs.i_dc_star = i_dc;
                if p.ki_dvc == 0.0 {
                    return Err(DeviceError::InitFailed {
                        device: self.name.clone(),
                        message: "ki_dvc must be nonzero to hold the operating point".into(),
                    });
                }
                x.extend([i_d / p.ki_dvc, g_d, g_q, 0.0, 0.0, theta]);
            }
            GflCase::Two => {
                x.extend([
                    i_d / p.ki_dvc,
                    g_d,
                    g_q,
                    0.0,
                    0.0,
                    theta,
                    i_dc,
                    i_dc / p.ki_slack,
                ]);
            }
            GflCase::Three => {
                let p_h = x5[3] * i_g.0 + x5[4] * i_g.1;
                self.refs.p0 = p_h;
                // p_f such that the commanded d-current equals the operating
                // current ((p_f - v_q i_q)/v_d = i_d with v_q = 0).
                let p_f = if p.case3_literal_pstar_form {
                    x5[3] * (i_d + i_q)
                } else {
                    x5[3] * i_d
                };
                x.extend([
                    g_d,
                    g_q,
                    theta,
                    0.0,
                    0.0,
                    theta,
                    i_dc,
                    i_dc / p.ki_slack,
                    p_f,
                ]);
            }
        }
        Ok((x, vec![i_g.0, i_g.1]))
    }

    fn measurement(&self, x: &[f64], y: &[f64], v_bus: Complex64) -> Measurement {
        let p = &self.params;
        let inp = self.bridge_inputs(x);
        let (v_d, v_q) = (x[3], x[4]);
        let p_h = v_d * y[0] + v_q * y[1];
        let q_h = v_q * y[0] - v_d * y[1];
        let omega_pll = match self.case {
            GflCase::One | GflCase::Two => inp.omega,
            GflCase::Three => {
                let v_q_pll = (v_bus * Complex64::from_polar(1.0, -x[10])).im;
                OMEGA_S + p.kp_pll * v_q_pll + p.ki_pll * x[9]
            }
        };
        Measurement {
            omega: inp.omega,
            p: p_h,
            q: q_h,
            v_local: (v_d, v_q),
            i_local: (y[0], y[1]),
            frame_angle: self.frame_angle(x),
            v_ac: v_d.hypot(v_q),
            v_dc: Some(x[0]),
            rho: None,
            omega_pll: Some(omega_pll),
            bound_hit: None,
        }
    }

    fn ph_data(&self, x: &[f64], y: &[f64], _v_bus: Complex64) -> Option<PhData> {
        let inp = self.bridge_inputs(x);
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
        self.case != GflCase::One
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
    use crate::numerics::fd_jacobian;

    fn equilibrium(case: GflCase) -> (GflConverter, Vec<f64>, Vec<f64>, Complex64) {
        let mut dev = GflConverter::new("t", "b", case, IbrParams::gfl()).unwrap();
        let init = DeviceInit {
            p: 0.9,
            q: 0.2,
            v_mag: 1.03,
            v_ang: 0.1,
        };
        let (x, y) = dev.initialize(&init).unwrap();
        let v_bus = Complex64::from_polar(init.v_mag, init.v_ang);
        (dev, x, y, v_bus)
    }

    #[test]
    fn equilibrium_residual_vanishes_all_cases() {
        for case in [GflCase::One, GflCase::Two, GflCase::Three] {
            let (dev, x, y, v_bus) = equilibrium(case);
            let mut f = vec![0.0; dev.n_states()];
            let mut g = vec![0.0; 2];
            let xp = vec![0.0; dev.n_states()];
            dev.residual(&x, &xp, &y, v_bus, &mut f, &mut g);
            let worst = f
                .iter()
                .chain(&g)
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-9, "case {:?} residual {worst}", case);
        }
    }

    #[test]
    fn injection_matches_operating_point() {
        let (dev, x, y, v_bus) = equilibrium(GflCase::Three);
        let s = v_bus * dev.injection(&x, &y, v_bus).conj();
        assert!((s.re - 0.9).abs() < 1e-12);
        assert!((s.im - 0.2).abs() < 1e-12);
    }

    #[test]
    fn power_frame_invariance() {
        // p, q computed in the device frame equal p, q in the network frame.
        let (dev, x, y, v_bus) = equilibrium(GflCase::One);
        let m = dev.measurement(&x, &y, v_bus);
        let inj = dev.injection(&x, &y, v_bus);
        let s_net = v_bus * inj.conj();
        assert!((m.p - s_net.re).abs() < 1e-10);
        assert!((m.q - s_net.im).abs() < 1e-10);
    }

    #[test]
    fn implied_derivative_jacobian_entry() {
        // d(i_d')/d(i_d) = -(r_f + kp_cc)/l_f for the closed current loop;
        // with the bridge-voltage feedforward the raw -r_f/l_f appears when
        // the controller contribution is removed. Check the open-loop entry
        // by differencing the filter row with frozen controller outputs.
        let p = IbrParams::gfl();
        let x5 = [1.0, 0.8, -0.1, 1.0, 0.0];
        let inp = BridgeInputs {
            v_t_d: 1.0,
            v_t_q: 0.0,
            omega: 1.0,
            i_dc_source: 0.8,
        };
        let mut f = |xv: &[f64]| {
            let mut x5v = x5;
            x5v[1] = xv[0];
            let mut out = [0.0; 5];
            physical_layer_residual(&p, &x5v, &[0.0; 5], (0.8, -0.1), &inp, &mut out);
            // x' implied by the inductor row.
            vec![-out[1] / p.l_f]
        };
        let j = fd_jacobian(&mut f, &[0.8], 1e-7);
        assert!(
            (j[(0, 0)] - (-p.r_f / p.l_f)).abs() < 1e-6,
            "got {}",
            j[(0, 0)]
        );
    }

    #[test]
    fn case_three_droop_settles_frequency_relation() {
        // At the initialized point the droop filter input is zero.
        let (dev, x, y, v_bus) = equilibrium(GflCase::Three);
        let mut f = vec![0.0; dev.n_states()];
        let mut g = vec![0.0; 2];
        dev.residual(&x, &vec![0.0; dev.n_states()], &y, v_bus, &mut f, &mut g);
        assert!(f[8].abs() < 1e-12);
        let m = dev.measurement(&x, &y, v_bus);
        assert!((m.omega - 1.0).abs() < 1e-12);
        assert!((m.omega_pll.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_integral_avc() {
        let mut p = IbrParams::gfl();
        p.ki_avc = 0.5;
        assert!(GflConverter::new("t", "b", GflCase::One, p).is_err());
    }
}
