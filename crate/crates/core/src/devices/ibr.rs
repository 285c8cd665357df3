use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{normalize_key, DeviceError, PhData};
use crate::numerics::DenseMatrix;

/// Converter parameters. One struct covers the whole inverter family; each
/// model reads the fields it uses. Values default to the study parameters
/// (100 MVA system base).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IbrParams {
    // Physical components
    pub c_dc: f64,
    pub l_f: f64,
    pub c_f: f64,
    pub r_f: f64,
    // dc-bus voltage controller
    pub kp_dvc: f64,
    pub ki_dvc: f64,
    // ac-bus voltage controller
    pub kp_avc: f64,
    pub ki_avc: f64,
    // Current controller
    pub kp_cc: f64,
    pub ki_cc: f64,
    // Synchronization loop
    pub kp_pll: f64,
    pub ki_pll: f64,
    /// Lag on the synchronization loop's q-voltage measurement (s).
    pub tau_pll: f64,
    // Primary droop (grid-forming)
    pub m_p: f64,
    pub m_q: f64,
    /// Droop power-filter cutoff (pu frequency).
    pub omega_c: f64,
    /// Anti-windup gain of the voltage controller.
    pub k_w: f64,
    pub i_max: f64,
    // dc-side reserve (input-power) controller
    pub t_slack: f64,
    pub kp_slack: f64,
    pub ki_slack: f64,
    // Power-frequency droop (grid-following stage 3)
    pub t_omega: f64,
    pub k_omega: f64,
    /// Delivered-power tracking lag for the d-current command (s).
    pub tau_track: f64,
    // Virtual inertia (s); 0 switches the rotor equation to algebraic.
    pub m: f64,
    pub v_dc_star: f64,
    /// Use the literal reference-power form p* = v_d i*_d + v_d i_q instead
    /// of the dimensionally consistent v_d i*_d + v_q i_q.
    pub case3_literal_pstar_form: bool,
}

impl IbrParams {
    /// Grid-following defaults.
    pub fn gfl() -> Self {
        Self {
            c_dc: 0.1,
            l_f: 0.0031,
            c_f: 0.001,
            r_f: 0.001,
            kp_dvc: 2.0,
            ki_dvc: 4.0,
            kp_avc: 0.7,
            ki_avc: 0.0,
            kp_cc: 20.0,
            ki_cc: 200.0,
            kp_pll: 10.0,
            ki_pll: 100.0,
            tau_pll: 0.002,
            m_p: 0.04,
            m_q: 0.04,
            omega_c: 1.0,
            k_w: 0.1,
            i_max: 1.5,
            t_slack: 0.01,
            kp_slack: 2.0,
            ki_slack: 4.0,
            t_omega: 0.05,
            k_omega: 25.0,
            tau_track: 0.002,
            m: 10.0,
            v_dc_star: 1.0,
            case3_literal_pstar_form: false,
        }
    }

    /// Grid-forming defaults (voltage and current loops tuned for the
    /// voltage-forming structure).
    pub fn gfm() -> Self {
        Self {
            kp_avc: 14.476,
            ki_avc: 0.273,
            kp_cc: 9.817,
            ki_cc: 0.018,
            ..Self::gfl()
        }
    }

    pub fn validate(&self, device: &str) -> Result<(), DeviceError> {
        let bad = |message: String| {
            Err(DeviceError::Invalid {
                device: device.to_string(),
                message,
            })
        };
        if self.c_dc < 0.0 {
            return bad(format!("c_dc = {} must be non-negative", self.c_dc));
        }
        if self.l_f <= 0.0 || self.c_f <= 0.0 {
            return bad("l_f and c_f must be positive".into());
        }
        if self.r_f < 0.0 {
            return bad("r_f must be non-negative".into());
        }
        if self.i_max <= 0.0 {
            return bad("i_max must be positive".into());
        }
        if self.m_p <= 0.0 || self.m_q <= 0.0 {
            return bad("droop gains m_p, m_q must be positive".into());
        }
        if self.m < 0.0 {
            return bad("virtual inertia must be non-negative".into());
        }
        Ok(())
    }

    pub fn set(&mut self, device: &str, key: &str, value: f64) -> Result<(), DeviceError> {
        match normalize_key(key).as_str() {
            "cdc" => self.c_dc = value,
            "lf" => self.l_f = value,
            "cf" => self.c_f = value,
            "rf" => self.r_f = value,
            "kpdvc" => self.kp_dvc = value,
            "kidvc" => self.ki_dvc = value,
            "kpavc" => self.kp_avc = value,
            "kiavc" => self.ki_avc = value,
            "kpcc" => self.kp_cc = value,
            "kicc" => self.ki_cc = value,
            "kppll" => self.kp_pll = value,
            "kipll" => self.ki_pll = value,
            "taupll" => self.tau_pll = value,
            "mp" => self.m_p = value,
            "mq" => self.m_q = value,
            "omegac" | "wc" => self.omega_c = value,
            "kw" => self.k_w = value,
            "imax" => self.i_max = value,
            "tslack" => self.t_slack = value,
            "kpslack" => self.kp_slack = value,
            "kislack" => self.ki_slack = value,
            "tomega" | "tw" => self.t_omega = value,
            "komega" => self.k_omega = value,
            "tautrack" => self.tau_track = value,
            "m" => self.m = value,
            "vdcstar" => self.v_dc_star = value,
            "case3literalpstarform" => self.case3_literal_pstar_form = value != 0.0,
            _ => {
                return Err(DeviceError::UnknownParameter {
                    device: device.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

/// Operating inputs of the converter bridge and filter shared by the whole
/// inverter family.
#[derive(Clone, Copy, Debug)]
pub struct BridgeInputs {
    pub v_t_d: f64,
    pub v_t_q: f64,
    /// Frame frequency (pu) used in the rotation couplings.
    pub omega: f64,
    /// dc-side source current.
    pub i_dc_source: f64,
}

/// Conversion current drawn from the dc bus, from the lossless bridge power
/// identity v_dc i_dc = v_t_d i_d + v_t_q i_q.
pub fn bridge_dc_current(x5: &[f64], inp: &BridgeInputs) -> f64 {
    (inp.v_t_d * x5[1] + inp.v_t_q * x5[2]) / x5[0]
}

/// Residuals of the physical layer (dc capacitor, filter inductor, filter
/// capacitor), identical for grid-following and grid-forming converters.
/// `x5 = [v_dc, i_d, i_q, v_d, v_q]`.
pub fn physical_layer_residual(
    p: &IbrParams,
    x5: &[f64],
    xp5: &[f64],
    i_g: (f64, f64),
    inp: &BridgeInputs,
    f: &mut [f64],
) {
    let (i_d, i_q, v_d, v_q) = (x5[1], x5[2], x5[3], x5[4]);
    let i_dc = bridge_dc_current(x5, inp);
    let w = inp.omega;
    f[0] = p.c_dc * xp5[0] - (inp.i_dc_source - i_dc);
    f[1] = p.l_f * xp5[1] - (-p.r_f * i_d + w * p.l_f * i_q + inp.v_t_d - v_d);
    f[2] = p.l_f * xp5[2] - (-p.r_f * i_q - w * p.l_f * i_d + inp.v_t_q - v_q);
    f[3] = p.c_f * xp5[3] - (w * p.c_f * v_q + i_d - i_g.0);
    f[4] = p.c_f * xp5[4] - (-w * p.c_f * v_d + i_q - i_g.1);
}

/// Storage function of the converter: dc capacitor plus ac filter energies.
pub fn ibr_storage_energy(p: &IbrParams, x5: &[f64]) -> f64 {
    0.5 * p.c_dc * x5[0] * x5[0]
        + 0.5 * p.l_f * (x5[1] * x5[1] + x5[2] * x5[2])
        + 0.5 * p.c_f * (x5[3] * x5[3] + x5[4] * x5[4])
}

pub fn ibr_storage_gradient(p: &IbrParams, x5: &[f64]) -> Vec<f64> {
    vec![
        p.c_dc * x5[0],
        p.l_f * x5[1],
        p.l_f * x5[2],
        p.c_f * x5[3],
        p.c_f * x5[4],
    ]
}

/// Port-Hamiltonian structure of the converter at one state. The
/// interconnection matrix carries the control-dependent energy conversion
/// (bridge voltages and frame frequency enter J); the explicit ports are the
/// dc-side source current and the grid current.
pub fn ibr_ph_data(p: &IbrParams, x5: &[f64], i_g: (f64, f64), inp: &BridgeInputs) -> PhData {
    let w = inp.omega;
    let lc_dc = p.l_f * p.c_dc * x5[0];
    let lc = p.l_f * p.c_f;
    let mut j = DenseMatrix::zeros(5, 5);
    j[(0, 1)] = -inp.v_t_d / lc_dc;
    j[(0, 2)] = -inp.v_t_q / lc_dc;
    j[(1, 0)] = inp.v_t_d / lc_dc;
    j[(1, 2)] = w / p.l_f;
    j[(1, 3)] = -1.0 / lc;
    j[(2, 0)] = inp.v_t_q / lc_dc;
    j[(2, 1)] = -w / p.l_f;
    j[(2, 4)] = -1.0 / lc;
    j[(3, 1)] = 1.0 / lc;
    j[(3, 4)] = w / p.c_f;
    j[(4, 2)] = 1.0 / lc;
    j[(4, 3)] = -w / p.c_f;

    let mut r = DenseMatrix::zeros(5, 5);
    let rl = p.r_f / (p.l_f * p.l_f);
    r[(1, 1)] = rl;
    r[(2, 2)] = rl;

    let mut g = DenseMatrix::zeros(5, 3);
    g[(0, 0)] = 1.0 / p.c_dc;
    g[(3, 1)] = -1.0 / p.c_f;
    g[(4, 2)] = -1.0 / p.c_f;

    PhData {
        ph_states: vec![0, 1, 2, 3, 4],
        h: ibr_storage_energy(p, x5),
        grad: ibr_storage_gradient(p, x5),
        j,
        r,
        g,
        u_source: vec![inp.i_dc_source],
        u_control: vec![],
        u_interconnection: vec![i_g.0, i_g.1],
    }
}

/// Frame-consistency constraint for voltage-source coupling: the terminal
/// voltage states, rotated to the network frame, equal the bus voltage.
pub fn frame_constraint(v_d: f64, v_q: f64, frame_angle: f64, v_bus: Complex64, g: &mut [f64]) {
    let rotated = Complex64::new(v_d, v_q) * Complex64::from_polar(1.0, frame_angle);
    g[0] = rotated.re - v_bus.re;
    g[1] = rotated.im - v_bus.im;
}

/// Common back-initialization of the physical layer from a power-flow
/// operating point. Returns `(x5, i_g, v_t_d, v_t_q, i_dc)` in the device
/// frame aligned with the terminal voltage.
pub fn init_physical(p: &IbrParams, init: &super::DeviceInit) -> ([f64; 5], (f64, f64), f64, f64, f64) {
    let v = Complex64::from_polar(init.v_mag, init.v_ang);
    let s = Complex64::new(init.p, init.q);
    let i_net = (s / v).conj();
    let i_loc = i_net * Complex64::from_polar(1.0, -init.v_ang);
    let (i_gd, i_gq) = (i_loc.re, i_loc.im);
    let (v_d, v_q) = (init.v_mag, 0.0);
    let w = crate::OMEGA_S;
    // Capacitor rows at rest: i_d = i_gd - w c_f v_q, i_q = i_gq + w c_f v_d.
    let i_d = i_gd - w * p.c_f * v_q;
    let i_q = i_gq + w * p.c_f * v_d;
    // Inductor rows at rest give the bridge voltages.
    let v_t_d = p.r_f * i_d - w * p.l_f * i_q + v_d;
    let v_t_q = p.r_f * i_q + w * p.l_f * i_d + v_q;
    let v_dc = p.v_dc_star;
    let i_dc = (v_t_d * i_d + v_t_q * i_q) / v_dc;
    ([v_dc, i_d, i_q, v_d, v_q], (i_gd, i_gq), v_t_d, v_t_q, i_dc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_row_cancels_at_unity() {
        // i_d = 1, i_q = 0, omega = 1, v_t_d - v_d = 0.001 with r_f = 0.001:
        // the d-axis inductor residual right side is -0.001 + 0.001 = 0.
        let p = IbrParams::gfl();
        let x5 = [1.0, 1.0, 0.0, 1.0, 0.0];
        let xp5 = [0.0; 5];
        let inp = BridgeInputs {
            v_t_d: x5[3] + 0.001,
            v_t_q: 0.0,
            omega: 1.0,
            i_dc_source: bridge_dc_current(&x5, &BridgeInputs {
                v_t_d: x5[3] + 0.001,
                v_t_q: 0.0,
                omega: 1.0,
                i_dc_source: 0.0,
            }),
        };
        let mut f = [0.0; 5];
        physical_layer_residual(&p, &x5, &xp5, (1.0, 0.0), &inp, &mut f);
        assert!(f[1].abs() < 1e-15, "d-axis filter residual {}", f[1]);
    }

    #[test]
    fn bridge_power_identity() {
        let x5 = [0.97, 1.2, -0.3, 1.01, 0.02];
        let inp = BridgeInputs {
            v_t_d: 1.05,
            v_t_q: 0.08,
            omega: 0.998,
            i_dc_source: 0.0,
        };
        let i_dc = bridge_dc_current(&x5, &inp);
        let lhs = x5[0] * i_dc;
        let rhs = inp.v_t_d * x5[1] + inp.v_t_q * x5[2];
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn storage_energy_dc_only() {
        let p = IbrParams::gfl();
        let h = ibr_storage_energy(&p, &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((h - 0.05).abs() < 1e-15);
    }

    #[test]
    fn storage_zero_state() {
        let p = IbrParams::gfl();
        assert_eq!(ibr_storage_energy(&p, &[0.0; 5]), 0.0);
        assert!(ibr_storage_gradient(&p, &[0.0; 5]).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = IbrParams::gfl();
        let x5 = [0.95, 1.3, -0.4, 1.02, -0.05];
        let grad = ibr_storage_gradient(&p, &x5);
        for k in 0..5 {
            let mut xp = x5;
            let h = 1e-6;
            xp[k] += h;
            let up = ibr_storage_energy(&p, &xp);
            xp[k] -= 2.0 * h;
            let dn = ibr_storage_energy(&p, &xp);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7, "component {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn ph_reproduces_physical_rhs() {
        // (J - R) grad H + G u equals the storage-state derivatives implied
        // by the residual rows at arbitrary states.
        let p = IbrParams::gfm();
        let x5 = [1.05, 0.8, -0.2, 0.99, 0.03];
        let i_g = (0.75, -0.18);
        let inp = BridgeInputs {
            v_t_d: 1.02,
            v_t_q: 0.05,
            omega: 1.002,
            i_dc_source: 0.9,
        };
        let ph = ibr_ph_data(&p, &x5, i_g, &inp);
        let mut rhs = DenseMatrix::zeros(5, 5);
        for i in 0..5 {
            for k in 0..5 {
                rhs[(i, k)] = ph.j[(i, k)] - ph.r[(i, k)];
            }
        }
        let mut xdot_ph = rhs.mul_vec(&ph.grad);
        let gu = ph.g.mul_vec(&ph.u_full());
        for i in 0..5 {
            xdot_ph[i] += gu[i];
        }
        // Implied derivative from the residual: f(x, 0, y) = -mass * x'.
        let mut f = [0.0; 5];
        physical_layer_residual(&p, &x5, &[0.0; 5], i_g, &inp, &mut f);
        let masses = [p.c_dc, p.l_f, p.l_f, p.c_f, p.c_f];
        for i in 0..5 {
            let xdot_res = -f[i] / masses[i];
            assert!(
                (xdot_ph[i] - xdot_res).abs() < 1e-9,
                "row {i}: {} vs {}",
                xdot_ph[i],
                xdot_res
            );
        }
    }

    #[test]
    fn ph_j_skew_r_psd() {
        let p = IbrParams::gfl();
        let x5 = [0.9, -1.0, 0.5, 1.1, -0.2];
        let inp = BridgeInputs {
            v_t_d: 0.97,
            v_t_q: -0.12,
            omega: 0.95,
            i_dc_source: -0.4,
        };
        let ph = ibr_ph_data(&p, &x5, (0.3, 0.4), &inp);
        assert!(ph.j.skew_residual() < 1e-12);
        let eigs = ph.r.symmetric_eigenvalues();
        assert!(eigs[0] >= -1e-12);
        let rl = p.r_f / (p.l_f * p.l_f);
        assert!((eigs[4] - rl).abs() < 1e-9 && (eigs[3] - rl).abs() < 1e-9);
    }

    #[test]
    fn port_outputs_match_bridge_terms() {
        let p = IbrParams::gfl();
        let x5 = [1.0, 0.9, -0.1, 1.02, 0.01];
        let inp = BridgeInputs {
            v_t_d: 1.0,
            v_t_q: 0.0,
            omega: 1.0,
            i_dc_source: 0.92,
        };
        let ph = ibr_ph_data(&p, &x5, (0.88, -0.11), &inp);
        let y = ph.port_outputs();
        assert!((y[0] - x5[0]).abs() < 1e-15); // v_dc
        assert!((y[1] + x5[3]).abs() < 1e-15); // -v_d
        assert!((y[2] + x5[4]).abs() < 1e-15); // -v_q
    }
}
