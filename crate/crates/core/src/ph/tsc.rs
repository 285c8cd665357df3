use num_complex::Complex64;
use serde::Serialize;

use super::audit::AuditRecord;
use super::freq::complex_frequency;
use crate::devices::DeviceModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotEvaluated,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub verdict: Verdict,
    pub diagnostics: String,
}

impl ConditionReport {
    fn pass(diag: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Pass,
            diagnostics: diag.into(),
        }
    }
    fn fail(diag: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Fail,
            diagnostics: diag.into(),
        }
    }
    fn not_evaluated(diag: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::NotEvaluated,
            diagnostics: diag.into(),
        }
    }
}

/// Verdicts for the three device-level conditions.
#[derive(Clone, Debug, Serialize)]
pub struct TscVerdict {
    pub condition1: ConditionReport,
    pub condition2: ConditionReport,
    pub condition3: ConditionReport,
}

/// Condition 1: storage capacity. The declared storage quadratic form must be
/// positive semi-definite and nonzero, positive definite when restricted to
/// the declared storage states, and (when a trajectory is available) the
/// sampled passivity inequality H' <= u^T y must hold.
pub fn tsc_condition1(dev: &dyn DeviceModel, audit: Option<&[AuditRecord]>) -> ConditionReport {
    let Some(q) = dev.storage_quadratic() else {
        return ConditionReport::fail("no storage function declared");
    };
    if q.diag.is_empty() || q.diag.iter().all(|v| *v == 0.0) {
        return ConditionReport::fail("storage quadratic form is identically zero");
    }
    if q.diag.iter().any(|v| *v < -1e-12) {
        return ConditionReport::fail(format!(
            "storage quadratic form is not positive semi-definite (min {:.3e})",
            q.diag.iter().cloned().fold(f64::INFINITY, f64::min)
        ));
    }
    if q.storage_positions.is_empty() {
        return ConditionReport::fail("no states declared as energy-carrying");
    }
    for &k in &q.storage_positions {
        if q.diag[k] <= 0.0 {
            return ConditionReport::fail(format!(
                "storage restriction not positive definite at position {k}"
            ));
        }
    }
    if let Some(records) = audit {
        let mut worst = f64::NEG_INFINITY;
        for r in records {
            // u^T y = total input/output port power = p_source - p_export.
            let violation = r.h_dot_gradient - (r.p_source - r.p_interconnection);
            worst = worst.max(violation);
        }
        if worst > 1e-9 {
            return ConditionReport::fail(format!(
                "passivity violated along trajectory (max H' - u^T y = {worst:.3e})"
            ));
        }
        return ConditionReport::pass(format!(
            "quadratic storage positive definite on declared states; passivity margin {:.3e}",
            -worst
        ));
    }
    ConditionReport::pass("quadratic storage positive definite on declared states")
}

/// Condition 2: controlled input power. Passes when the source-port column
/// of G is nonzero and the source input has declared dynamics.
pub fn tsc_condition2(
    dev: &dyn DeviceModel,
    x: &[f64],
    y: &[f64],
    v_bus: Complex64,
) -> ConditionReport {
    let Some(ph) = dev.ph_data(x, y, v_bus) else {
        return ConditionReport::fail("no port structure declared");
    };
    if ph.u_source.is_empty() {
        return ConditionReport::fail("no source port");
    }
    let n_s = ph.u_source.len();
    let mut g_s_norm = 0.0f64;
    for i in 0..ph.g.rows() {
        for j in 0..n_s {
            g_s_norm = g_s_norm.max(ph.g[(i, j)].abs());
        }
    }
    if g_s_norm == 0.0 {
        return ConditionReport::fail("source port does not couple to the storage states");
    }
    if !dev.source_input_is_dynamic() {
        return ConditionReport::fail("source input is constant (no controlled dynamics)");
    }
    ConditionReport::pass(format!(
        "source port coupled (|G_S| = {g_s_norm:.3e}) with controlled input dynamics"
    ))
}

/// Per-device trajectory slices used by the condition-3 synchronization and
/// energy-balance checks. Channels are device-frame signals plus the frame
/// frequency, all sampled on the shared time grid.
#[derive(Clone, Debug)]
pub struct DeviceTrace {
    pub name: String,
    pub v_d: Vec<f64>,
    pub v_q: Vec<f64>,
    pub i_d: Vec<f64>,
    pub i_q: Vec<f64>,
    pub omega: Vec<f64>,
    /// Storage rate from the audit (port route).
    pub h_dot: Vec<f64>,
    /// Limiter scaling per sample; empty when the device has no limiter.
    pub rho: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct Condition3Tolerances {
    /// |H'| bound (pu).
    pub h_dot: f64,
    /// Frequency agreement/drift bound (pu).
    pub omega: f64,
    /// Magnitude-rate bound (1/s).
    pub rho: f64,
    /// Trailing evaluation window (s).
    pub window: f64,
}

impl Default for Condition3Tolerances {
    fn default() -> Self {
        Self {
            h_dot: 1e-4,
            omega: 1e-4,
            rho: 1e-3,
            window: 2.0,
        }
    }
}

pub struct Condition3Inputs {
    pub t: Vec<f64>,
    pub traces: Vec<DeviceTrace>,
    pub collapsed: bool,
    pub last_event_time: f64,
}

/// Condition 3: control-driven energy balance and synchronization over the
/// trailing window. All devices must agree on one settled frequency (the
/// synchronous frequency after the perturbation), magnitude rates and
/// storage rates must vanish, and no variable may be pinned at a declared
/// bound.
pub fn tsc_condition3(
    inputs: &Condition3Inputs,
    tol: &Condition3Tolerances,
) -> Vec<ConditionReport> {
    let n_dev = inputs.traces.len();
    if inputs.collapsed {
        return vec![ConditionReport::fail("COLLAPSE: trajectory did not survive"); n_dev];
    }
    let t = &inputs.t;
    if t.len() < 16 {
        return vec![ConditionReport::not_evaluated("trajectory too short"); n_dev];
    }
    let t_end = *t.last().unwrap();
    if t_end - inputs.last_event_time < tol.window {
        return vec![
            ConditionReport::not_evaluated(format!(
                "trajectory extends only {:.3} s past the last event (window {} s)",
                t_end - inputs.last_event_time,
                tol.window
            ));
            n_dev
        ];
    }
    let start = t.partition_point(|&tk| tk < t_end - tol.window);
    // Trim stencil edges.
    let lo = start.saturating_sub(2);

    struct DevWindow {
        max_rho_v: f64,
        max_rho_i: f64,
        mean_omega_v: f64,
        mean_omega_i: f64,
        max_omega_dev: f64,
        max_h_dot: f64,
        limited_fraction: f64,
        freq_error: Option<String>,
    }

    let mut windows = Vec::with_capacity(n_dev);
    for trace in &inputs.traces {
        let tw = &t[lo..];
        let fw = &trace.omega[lo..];
        let vd = &trace.v_d[lo..];
        let vq = &trace.v_q[lo..];
        let id = &trace.i_d[lo..];
        let iq = &trace.i_q[lo..];
        let skip = start - lo + 2;
        let take = tw.len().saturating_sub(skip + 2);
        let freq_v = complex_frequency(tw, vd, vq, fw);
        let freq_i = complex_frequency(tw, id, iq, fw);
        let (mut max_rho_v, mut max_rho_i) = (0.0f64, 0.0f64);
        let (mut sum_wv, mut sum_wi) = (0.0, 0.0);
        let mut omegas = Vec::new();
        let mut freq_error = None;
        match (freq_v, freq_i) {
            (Ok((rv, wv)), Ok((ri, wi))) => {
                for k in skip..skip + take {
                    max_rho_v = max_rho_v.max(rv[k].abs());
                    max_rho_i = max_rho_i.max(ri[k].abs());
                    sum_wv += wv[k];
                    sum_wi += wi[k];
                    omegas.push(wv[k]);
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                freq_error = Some(format!("complex frequency unavailable: {e}"));
            }
        }
        let nsamp = take.max(1) as f64;
        let mean_omega_v = sum_wv / nsamp;
        let mean_omega_i = sum_wi / nsamp;
        let max_omega_dev = omegas
            .iter()
            .fold(0.0f64, |m, w| m.max((w - mean_omega_v).abs()));
        let mut max_h_dot = 0.0f64;
        for k in start..trace.h_dot.len() {
            max_h_dot = max_h_dot.max(trace.h_dot[k].abs());
        }
        let limited_fraction = if trace.rho.is_empty() {
            0.0
        } else {
            let w = &trace.rho[start..];
            w.iter().filter(|r| **r < 1.0 - 1e-9).count() as f64 / w.len().max(1) as f64
        };
        windows.push(DevWindow {
            max_rho_v,
            max_rho_i,
            mean_omega_v,
            mean_omega_i,
            max_omega_dev,
            max_h_dot,
            limited_fraction,
            freq_error,
        });
    }

    // The settled synchronous frequency is common to the system; the median
    // keeps the reference meaningful when a single device drifts away.
    let system_omega = {
        let mut means: Vec<f64> = windows.iter().map(|w| w.mean_omega_v).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if means.is_empty() {
            0.0
        } else {
            means[means.len() / 2]
        }
    };

    windows
        .into_iter()
        .map(|w| {
            if let Some(e) = w.freq_error {
                return ConditionReport::fail(e);
            }
            let mut failures = Vec::new();
            if w.max_h_dot >= tol.h_dot {
                failures.push(format!("|H'| = {:.3e} >= {:.1e}", w.max_h_dot, tol.h_dot));
            }
            if w.max_rho_v >= tol.rho || w.max_rho_i >= tol.rho {
                failures.push(format!(
                    "magnitude rates rho_v = {:.3e}, rho_i = {:.3e} >= {:.1e}",
                    w.max_rho_v, w.max_rho_i, tol.rho
                ));
            }
            if (w.mean_omega_v - w.mean_omega_i).abs() >= tol.omega {
                failures.push(format!(
                    "omega_v = {:.6} and omega_i = {:.6} disagree",
                    w.mean_omega_v, w.mean_omega_i
                ));
            }
            if w.max_omega_dev >= tol.omega {
                failures.push(format!(
                    "frequency not settled (in-window deviation {:.3e})",
                    w.max_omega_dev
                ));
            }
            if (w.mean_omega_v - system_omega).abs() >= tol.omega {
                failures.push(format!(
                    "device frequency {:.6} off the system frequency {:.6}",
                    w.mean_omega_v, system_omega
                ));
            }
            if w.limited_fraction > 0.1 {
                failures.push(format!(
                    "pinned at the current limit for {:.0}% of the window",
                    w.limited_fraction * 100.0
                ));
            }
            if failures.is_empty() {
                ConditionReport::pass(format!(
                    "settled at omega = {:.6} pu (system {:.6}), |H'| <= {:.2e}",
                    w.mean_omega_v, system_omega, w.max_h_dot
                ))
            } else {
                ConditionReport::fail(failures.join("; "))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{
        DeviceInit, DeviceModel, GflCase, GflConverter, IbrParams, StorageQuadratic,
        SynchronousMachine,
    };
    use crate::OMEGA_S;

    #[test]
    fn condition1_converter_passes() {
        let dev = GflConverter::new("t", "b", GflCase::One, IbrParams::gfl()).unwrap();
        assert_eq!(tsc_condition1(&dev, None).verdict, Verdict::Pass);
    }

    #[test]
    fn condition1_machine_passes() {
        let dev = SynchronousMachine::new("g", "b", Default::default()).unwrap();
        assert_eq!(tsc_condition1(&dev, None).verdict, Verdict::Pass);
    }

    #[test]
    fn condition1_rejects_storage_free_model() {
        // A resistive load declares dissipation only: zero quadratic form.
        struct Resistor;
        impl DeviceModel for Resistor {
            fn kind(&self) -> &'static str {
                "resistor"
            }
            fn name(&self) -> &str {
                "r"
            }
            fn bus(&self) -> &str {
                "b"
            }
            fn n_states(&self) -> usize {
                0
            }
            fn n_algebraic(&self) -> usize {
                0
            }
            fn state_names(&self) -> Vec<String> {
                vec![]
            }
            fn coupling(&self) -> crate::devices::Coupling {
                crate::devices::Coupling::CurrentSource
            }
            fn residual(
                &self,
                _x: &[f64],
                _xp: &[f64],
                _y: &[f64],
                _v: Complex64,
                _f: &mut [f64],
                _g: &mut [f64],
            ) {
            }
            fn injection(&self, _x: &[f64], _y: &[f64], v: Complex64) -> Complex64 {
                -v
            }
            fn initialize(
                &mut self,
                _init: &DeviceInit,
            ) -> Result<(Vec<f64>, Vec<f64>), crate::devices::DeviceError> {
                Ok((vec![], vec![]))
            }
            fn measurement(
                &self,
                _x: &[f64],
                _y: &[f64],
                _v: Complex64,
            ) -> crate::devices::Measurement {
                Default::default()
            }
            fn storage_quadratic(&self) -> Option<StorageQuadratic> {
                Some(StorageQuadratic {
                    diag: vec![],
                    storage_positions: vec![],
                })
            }
            fn set_param(
                &mut self,
                key: &str,
                _value: f64,
            ) -> Result<(), crate::devices::DeviceError> {
                Err(crate::devices::DeviceError::UnknownParameter {
                    device: "r".into(),
                    key: key.into(),
                })
            }
            fn params_json(&self) -> serde_json::Value {
                serde_json::json!({})
            }
        }
        assert_eq!(tsc_condition1(&Resistor, None).verdict, Verdict::Fail);
    }

    #[test]
    fn condition2_by_case() {
        let init = DeviceInit {
            p: 0.8,
            q: 0.1,
            v_mag: 1.02,
            v_ang: 0.0,
        };
        let v_bus = Complex64::from_polar(init.v_mag, init.v_ang);
        for (case, expect) in [
            (GflCase::One, Verdict::Fail),
            (GflCase::Two, Verdict::Pass),
            (GflCase::Three, Verdict::Pass),
        ] {
            let mut dev = GflConverter::new("t", "b", case, IbrParams::gfl()).unwrap();
            let (x, y) = dev.initialize(&init).unwrap();
            assert_eq!(
                tsc_condition2(&dev, &x, &y, v_bus).verdict,
                expect,
                "case {case:?}"
            );
        }
    }

    fn flat_trace(name: &str, n: usize, omega: f64) -> DeviceTrace {
        DeviceTrace {
            name: name.into(),
            v_d: vec![1.0; n],
            v_q: vec![0.0; n],
            i_d: vec![0.9; n],
            i_q: vec![-0.1; n],
            omega: vec![omega; n],
            h_dot: vec![0.0; n],
            rho: vec![],
        }
    }

    #[test]
    fn condition3_settled_common_frequency() {
        let n = 4000;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * 1e-3).collect();
        let inputs = Condition3Inputs {
            t,
            traces: vec![
                flat_trace("a", n, OMEGA_S - 0.002),
                flat_trace("b", n, OMEGA_S - 0.002),
            ],
            collapsed: false,
            last_event_time: 1.0,
        };
        let reports = tsc_condition3(&inputs, &Condition3Tolerances::default());
        assert!(reports.iter().all(|r| r.verdict == Verdict::Pass));
    }

    #[test]
    fn condition3_detects_drifting_device() {
        let n = 4000;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * 1e-3).collect();
        let mut drifting = flat_trace("a", n, OMEGA_S);
        // Frequency walks off at 1e-3 pu/s.
        for k in 0..n {
            drifting.omega[k] = OMEGA_S - 1e-3 * (k as f64 * 1e-3);
        }
        let inputs = Condition3Inputs {
            t,
            traces: vec![
                drifting,
                flat_trace("b", n, OMEGA_S),
                flat_trace("c", n, OMEGA_S),
            ],
            collapsed: false,
            last_event_time: 1.0,
        };
        let reports = tsc_condition3(&inputs, &Condition3Tolerances::default());
        assert_eq!(reports[0].verdict, Verdict::Fail);
        assert_eq!(reports[1].verdict, Verdict::Pass);
        assert_eq!(reports[2].verdict, Verdict::Pass);
    }

    #[test]
    fn condition3_collapse_fails_all() {
        let n = 100;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * 1e-3).collect();
        let inputs = Condition3Inputs {
            t,
            traces: vec![flat_trace("a", n, OMEGA_S)],
            collapsed: true,
            last_event_time: 0.0,
        };
        let reports = tsc_condition3(&inputs, &Condition3Tolerances::default());
        assert_eq!(reports[0].verdict, Verdict::Fail);
        assert!(reports[0].diagnostics.contains("COLLAPSE"));
    }

    #[test]
    fn condition3_pinned_limiter_fails() {
        let n = 4000;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * 1e-3).collect();
        let mut limited = flat_trace("a", n, OMEGA_S);
        limited.rho = vec![0.93; n];
        let inputs = Condition3Inputs {
            t,
            traces: vec![limited],
            collapsed: false,
            last_event_time: 1.0,
        };
        let reports = tsc_condition3(&inputs, &Condition3Tolerances::default());
        assert_eq!(reports[0].verdict, Verdict::Fail);
        assert!(reports[0].diagnostics.contains("current limit"));
    }
}
