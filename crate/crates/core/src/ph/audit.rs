use num_complex::Complex64;

use super::port_power_balance;
use crate::devices::DeviceModel;

/// Per-step energy bookkeeping for one device.
#[derive(Clone, Debug)]
pub struct AuditRecord {
    pub t: f64,
    pub device: String,
    /// Storage function (pu*s).
    pub h: f64,
    /// Storage rate from the gradient route, grad(H)^T x'.
    pub h_dot_gradient: f64,
    /// Storage rate from the port route, u^T y - dissipation.
    pub h_dot_ports: f64,
    /// |h_dot_gradient - h_dot_ports|.
    pub balance_residual: f64,
    pub p_source: f64,
    pub p_interconnection: f64,
    pub p_dissipation: f64,
    /// Current-limiter scaling (1 when absent or inactive).
    pub rho: f64,
    /// Skew-symmetry residual of J at this evaluation.
    pub j_skew_residual: f64,
    /// Smallest eigenvalue of R (PSD check).
    pub r_min_eigenvalue: f64,
}

/// Evaluate the energy audit for one device at an accepted integration point.
/// `xp` is the device state derivative at the point. Returns `None` for
/// devices without a declared energy structure.
pub fn audit_device(
    dev: &dyn DeviceModel,
    t: f64,
    x: &[f64],
    xp: &[f64],
    y: &[f64],
    v_bus: Complex64,
) -> Option<AuditRecord> {
    let ph = dev.ph_data(x, y, v_bus)?;
    let h_dot_gradient: f64 = ph
        .ph_states
        .iter()
        .zip(&ph.grad)
        .map(|(&k, g)| g * xp[k])
        .sum();
    let h_dot_ports = ph.h_dot_ports();
    let balance = port_power_balance(&ph, xp);
    let meas = dev.measurement(x, y, v_bus);
    Some(AuditRecord {
        t,
        device: dev.name().to_string(),
        h: ph.h,
        h_dot_gradient,
        h_dot_ports,
        balance_residual: balance.abs(),
        p_source: ph.source_power() + ph.control_power(),
        p_interconnection: ph.interconnection_power(),
        p_dissipation: ph.dissipation(),
        rho: meas.rho.unwrap_or(1.0),
        j_skew_residual: ph.j.skew_residual(),
        r_min_eigenvalue: ph.r.symmetric_eigenvalues().first().copied().unwrap_or(0.0),
    })
}

/// Worst-case audit violations over a run, used by the acceptance checks.
#[derive(Clone, Copy, Debug, Default)]
pub struct AuditExtremes {
    pub max_balance_residual: f64,
    pub max_j_skew: f64,
    pub min_r_eigenvalue: f64,
    pub min_dissipation: f64,
    pub min_h: f64,
}

impl AuditExtremes {
    pub fn from_records(records: &[AuditRecord]) -> Self {
        let mut ex = AuditExtremes {
            min_r_eigenvalue: f64::INFINITY,
            min_dissipation: f64::INFINITY,
            min_h: f64::INFINITY,
            ..Default::default()
        };
        for r in records {
            ex.max_balance_residual = ex.max_balance_residual.max(r.balance_residual);
            ex.max_j_skew = ex.max_j_skew.max(r.j_skew_residual);
            ex.min_r_eigenvalue = ex.min_r_eigenvalue.min(r.r_min_eigenvalue);
            ex.min_dissipation = ex.min_dissipation.min(r.p_dissipation);
            ex.min_h = ex.min_h.min(r.h);
        }
        if records.is_empty() {
            ex.min_r_eigenvalue = 0.0;
            ex.min_dissipation = 0.0;
            ex.min_h = 0.0;
        }
        ex
    }
}
