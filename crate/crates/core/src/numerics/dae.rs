use super::{lu_factor, DenseMatrix, LuFactors, NumericsError};

/// Semi-explicit DAE in residual form. The differential residuals are linear
/// in `xp` (constant mass coefficients); the algebraic residuals must not
/// depend on `xp`.
pub trait DaeSystem {
    fn n_states(&self) -> usize;
    fn n_algebraic(&self) -> usize;
    /// Evaluate residuals at `(t, x, x', y)`. `f_out` receives the
    /// `n_states` differential residuals, `g_out` the algebraic ones.
    fn residual(&self, t: f64, x: &[f64], xp: &[f64], y: &[f64], f_out: &mut [f64], g_out: &mut [f64]);
}

#[derive(Clone, Copy, Debug)]
pub struct StepperOptions {
    pub newton_tol: f64,
    pub max_newton: usize,
    pub fd_eps: f64,
    /// Rebuild the iteration Jacobian when the previous step needed more
    /// Newton iterations than this.
    pub jacobian_refresh_iters: usize,
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-8,
            max_newton: 20,
            fd_eps: 1e-7,
            jacobian_refresh_iters: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMethod {
    /// Implicit trapezoidal (2nd order, preserves quadratic invariants).
    Trapezoidal,
    /// Backward Euler; used to restart cleanly after discontinuities.
    BackwardEuler,
}

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub newton_iterations: usize,
    pub jacobian_rebuilt: bool,
}

/// Implicit one-step integrator for [`DaeSystem`] with a chord-Newton
/// iteration: the Jacobian (and its LU factorization) is reused across steps
/// until convergence degrades or the caller invalidates it.
pub struct TrapezoidalStepper {
    opts: StepperOptions,
    nx: usize,
    ny: usize,
    lu: Option<LuFactors>,
    lu_key: (u64, u8),
    last_iterations: usize,
    fbuf: Vec<f64>,
    gbuf: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl TrapezoidalStepper {
    pub fn new(nx: usize, ny: usize, opts: StepperOptions) -> Self {
        Self {
            opts,
            nx,
            ny,
            lu: None,
            lu_key: (0, 0),
            last_iterations: 0,
            fbuf: vec![0.0; nx],
            gbuf: vec![0.0; ny],
        }
    }

    pub fn invalidate_jacobian(&mut self) {
        self.lu = None;
    }

    /// Residual of the discrete step equations in the unknown `z = (x1, y1)`.
    /// For trapezoidal, `xp1 = 2 (x1 - x0)/h - xp0`; for backward Euler,
    /// `xp1 = (x1 - x0)/h`.
    #[allow(clippy::too_many_arguments)]
    fn step_residual(
        &mut self,
        sys: &dyn DaeSystem,
        method: StepMethod,
        t1: f64,
        h: f64,
        x0: &[f64],
        xp0: &[f64],
        z: &[f64],
        out: &mut [f64],
    ) {
        let (x1, y1) = z.split_at(self.nx);
        let mut xp1 = vec![0.0; self.nx];
        match method {
            StepMethod::Trapezoidal => {
                for i in 0..self.nx {
                    xp1[i] = 2.0 * (x1[i] - x0[i]) / h - xp0[i];
                }
            }
            StepMethod::BackwardEuler => {
                for i in 0..self.nx {
                    xp1[i] = (x1[i] - x0[i]) / h;
                }
            }
        }
        sys.residual(t1, x1, &xp1, y1, &mut self.fbuf, &mut self.gbuf);
        out[..self.nx].copy_from_slice(&self.fbuf);
        out[self.nx..].copy_from_slice(&self.gbuf);
    }

    #[allow(clippy::too_many_arguments)]
    fn build_jacobian(
        &mut self,
        sys: &dyn DaeSystem,
        method: StepMethod,
        t1: f64,
        h: f64,
        x0: &[f64],
        xp0: &[f64],
        z: &[f64],
        base: &[f64],
    ) -> Result<LuFactors, NumericsError> {
        let n = self.nx + self.ny;
        let mut jac = DenseMatrix::zeros(n, n);
        let mut zp = z.to_vec();
        let mut col = vec![0.0; n];
        for j in 0..n {
            let dh = self.opts.fd_eps * (1.0 + z[j].abs());
            zp[j] = z[j] + dh;
            self.step_residual(sys, method, t1, h, x0, xp0, &zp, &mut col);
            zp[j] = z[j];
            for i in 0..n {
                jac[(i, j)] = (col[i] - base[i]) / dh;
            }
        }
        lu_factor(&jac)
    }

    /// Advance one step of size `h` from `(t, x, y)` with derivative memory
    /// `xp`. On success, `x`, `y`, `xp` are updated in place to the accepted
    /// point at `t + h`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        sys: &dyn DaeSystem,
        method: StepMethod,
        t: f64,
        h: f64,
        x: &mut [f64],
        y: &mut [f64],
        xp: &mut [f64],
    ) -> Result<StepStats, NumericsError> {
        let n = self.nx + self.ny;
        let t1 = t + h;
        let x0 = x.to_vec();
        let xp0 = xp.to_vec();
        let mut z = Vec::with_capacity(n);
        z.extend_from_slice(x);
        z.extend_from_slice(y);

        // A cached factorization is only valid for the same step size/method.
        let key = (h.to_bits(), method as u8);
        if key != self.lu_key {
            self.lu = None;
            self.lu_key = key;
        }
        if self.last_iterations > self.opts.jacobian_refresh_iters {
            self.lu = None;
        }

        let mut residual = vec![0.0; n];
        let mut rebuilt = false;
        let mut rebuilds = 0;
        self.step_residual(sys, method, t1, h, &x0, &xp0, &z, &mut residual);
        let mut norm = inf_norm(&residual);
        if !norm.is_finite() {
            return Err(NumericsError::StepRejected(
                "non-finite residual at step start".into(),
            ));
        }
        let mut it = 0;
        loop {
            if norm <= self.opts.newton_tol {
                break;
            }
            if it >= self.opts.max_newton {
                // One retry with a fresh Jacobian before rejecting.
                if rebuilds == 0 && self.lu.is_some() {
                    self.lu = None;
                } else {
                    self.last_iterations = it;
                    return Err(NumericsError::StepRejected(format!(
                        "Newton stalled at |F| = {norm:.3e} after {it} iterations"
                    )));
                }
            }
            if self.lu.is_none() {
                let lu =
                    self.build_jacobian(sys, method, t1, h, &x0, &xp0, &z, &residual)
                        .map_err(|e| NumericsError::StepRejected(format!("jacobian: {e}")))?;
                self.lu = Some(lu);
                rebuilt = true;
                rebuilds += 1;
                if rebuilds > 2 {
                    return Err(NumericsError::StepRejected(
                        "repeated jacobian rebuilds without progress".into(),
                    ));
                }
            }
            let dz = self.lu.as_ref().unwrap().solve(&residual);
            for (zi, di) in z.iter_mut().zip(&dz) {
                *zi -= di;
            }
            it += 1;
            self.step_residual(sys, method, t1, h, &x0, &xp0, &z, &mut residual);
            let new_norm = inf_norm(&residual);
            if !new_norm.is_finite() {
                self.last_iterations = it;
                self.lu = None;
                return Err(NumericsError::StepRejected(
                    "non-finite residual during Newton".into(),
                ));
            }
            // Stale-Jacobian divergence guard.
            if new_norm > 10.0 * norm.max(self.opts.newton_tol) {
                if rebuilds == 0 {
                    self.lu = None;
                } else {
                    self.last_iterations = it;
                    return Err(NumericsError::StepRejected(format!(
                        "Newton diverging: |F| {norm:.3e} -> {new_norm:.3e}"
                    )));
                }
            }
            norm = new_norm;
        }
        self.last_iterations = it;

        let (x1, y1) = z.split_at(self.nx);
        match method {
            StepMethod::Trapezoidal => {
                for i in 0..self.nx {
                    xp[i] = 2.0 * (x1[i] - x0[i]) / h - xp0[i];
                }
            }
            StepMethod::BackwardEuler => {
                for i in 0..self.nx {
                    xp[i] = (x1[i] - x0[i]) / h;
                }
            }
        }
        x.copy_from_slice(x1);
        y.copy_from_slice(y1);
        Ok(StepStats {
            newton_iterations: it,
            jacobian_rebuilt: rebuilt,
        })
    }
}

/// One implicit trapezoidal step returning the new `(x, y)`. The derivative
/// at the starting point is recovered from the mass matrix, so `(x, y)` must
/// be consistent (small algebraic residual) at `t`.
pub fn trapezoidal_step(
    sys: &dyn DaeSystem,
    t: f64,
    h: f64,
    x: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
    let mut x1 = x.to_vec();
    let mut y1 = y.to_vec();
    let mut xp = derivative_from_state(sys, t, x, y)?;
    let mut stepper =
        TrapezoidalStepper::new(sys.n_states(), sys.n_algebraic(), StepperOptions::default());
    stepper.step(
        sys,
        StepMethod::Trapezoidal,
        t,
        h,
        &mut x1,
        &mut y1,
        &mut xp,
    )?;
    Ok((x1, y1))
}

/// Solve the algebraic residuals for `y` at fixed `(t, x)` by Newton.
pub fn solve_consistent_algebraic(
    sys: &dyn DaeSystem,
    t: f64,
    x: &[f64],
    y0: &[f64],
    tol: f64,
) -> Result<Vec<f64>, NumericsError> {
    let nx = sys.n_states();
    let ny = sys.n_algebraic();
    let xp = vec![0.0; nx];
    let mut fbuf = vec![0.0; nx];
    let mut y = y0.to_vec();
    let mut g = vec![0.0; ny];
    let mut gp = vec![0.0; ny];
    for _ in 0..30 {
        sys.residual(t, x, &xp, &y, &mut fbuf, &mut g);
        let norm = inf_norm(&g);
        if !norm.is_finite() {
            return Err(NumericsError::NonFinite("algebraic residual"));
        }
        if norm <= tol {
            return Ok(y);
        }
        let mut jac = DenseMatrix::zeros(ny, ny);
        let mut yp = y.clone();
        for j in 0..ny {
            let dh = 1e-7 * (1.0 + y[j].abs());
            yp[j] = y[j] + dh;
            sys.residual(t, x, &xp, &yp, &mut fbuf, &mut gp);
            yp[j] = y[j];
            for i in 0..ny {
                jac[(i, j)] = (gp[i] - g[i]) / dh;
            }
        }
        let dy = lu_factor(&jac)?.solve(&g);
        for (yi, di) in y.iter_mut().zip(&dy) {
            *yi -= di;
        }
    }
    sys.residual(t, x, &xp, &y, &mut fbuf, &mut g);
    let norm = inf_norm(&g);
    if norm <= tol {
        Ok(y)
    } else {
        Err(NumericsError::NonConvergence {
            iterations: 30,
            residual: norm,
        })
    }
}

/// Recover `x'` from the differential residuals at a consistent point by
/// solving the (constant) mass matrix system `M x' = -f(t, x, 0, y)`.
pub fn derivative_from_state(
    sys: &dyn DaeSystem,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>, NumericsError> {
    let nx = sys.n_states();
    let ny = sys.n_algebraic();
    let mut f0 = vec![0.0; nx];
    let mut f1 = vec![0.0; nx];
    let mut gbuf = vec![0.0; ny];
    let zero = vec![0.0; nx];
    sys.residual(t, x, &zero, y, &mut f0, &mut gbuf);
    let mut mass = DenseMatrix::zeros(nx, nx);
    let mut e = vec![0.0; nx];
    for j in 0..nx {
        e[j] = 1.0;
        sys.residual(t, x, &e, y, &mut f1, &mut gbuf);
        e[j] = 0.0;
        for i in 0..nx {
            mass[(i, j)] = f1[i] - f0[i];
        }
    }
    let rhs: Vec<f64> = f0.iter().map(|v| -v).collect();
    lu_factor(&mass).map(|lu| lu.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// x' = -x as a residual system with no algebraic part.
    struct Decay;
    impl DaeSystem for Decay {
        fn n_states(&self) -> usize {
            1
        }
        fn n_algebraic(&self) -> usize {
            0
        }
        fn residual(&self, _t: f64, x: &[f64], xp: &[f64], _y: &[f64], f: &mut [f64], _g: &mut [f64]) {
            f[0] = xp[0] + x[0];
        }
    }

    /// Undamped oscillator x' = v, v' = -x.
    struct Oscillator;
    impl DaeSystem for Oscillator {
        fn n_states(&self) -> usize {
            2
        }
        fn n_algebraic(&self) -> usize {
            0
        }
        fn residual(&self, _t: f64, x: &[f64], xp: &[f64], _y: &[f64], f: &mut [f64], _g: &mut [f64]) {
            f[0] = xp[0] - x[1];
            f[1] = xp[1] + x[0];
        }
    }

    /// Constant dynamics x' = 0 with one algebraic variable pinned to x.
    struct Constant;
    impl DaeSystem for Constant {
        fn n_states(&self) -> usize {
            1
        }
        fn n_algebraic(&self) -> usize {
            1
        }
        fn residual(&self, _t: f64, x: &[f64], xp: &[f64], y: &[f64], f: &mut [f64], g: &mut [f64]) {
            f[0] = xp[0];
            g[0] = y[0] - x[0];
        }
    }

    fn integrate(sys: &dyn DaeSystem, x0: &[f64], h: f64, t_end: f64) -> Vec<f64> {
        let mut x = x0.to_vec();
        let mut y = vec![0.0; sys.n_algebraic()];
        if sys.n_algebraic() > 0 {
            y = solve_consistent_algebraic(sys, 0.0, &x, &y, 1e-12).unwrap();
        }
        let mut xp = derivative_from_state(sys, 0.0, &x, &y).unwrap();
        let mut stepper =
            TrapezoidalStepper::new(sys.n_states(), sys.n_algebraic(), StepperOptions::default());
        let steps = (t_end / h).round() as usize;
        let mut t = 0.0;
        for _ in 0..steps {
            stepper
                .step(sys, StepMethod::Trapezoidal, t, h, &mut x, &mut y, &mut xp)
                .unwrap();
            t += h;
        }
        x
    }

    #[test]
    fn constant_dynamics_stay_exact() {
        let x = integrate(&Constant, &[0.7], 1e-2, 1.0);
        assert_eq!(x[0], 0.7);
    }

    #[test]
    fn exponential_decay_accuracy() {
        let x = integrate(&Decay, &[1.0], 1e-3, 1.0);
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn oscillator_conserves_energy_per_step() {
        let sys = Oscillator;
        let mut x = vec![1.0, 0.0];
        let mut y = vec![];
        let mut xp = derivative_from_state(&sys, 0.0, &x, &y).unwrap();
        let mut stepper = TrapezoidalStepper::new(2, 0, StepperOptions {
            newton_tol: 1e-13,
            ..StepperOptions::default()
        });
        let h = 1e-2;
        let mut t = 0.0;
        for _ in 0..200 {
            let before = x[0] * x[0] + x[1] * x[1];
            stepper
                .step(&sys, StepMethod::Trapezoidal, t, h, &mut x, &mut y, &mut xp)
                .unwrap();
            let after = x[0] * x[0] + x[1] * x[1];
            assert!((after - before).abs() < 1e-9, "energy drift {}", after - before);
            t += h;
        }
    }

    #[test]
    fn second_order_convergence() {
        let exact = (-1.0f64).exp();
        let e1 = (integrate(&Decay, &[1.0], 2e-3, 1.0)[0] - exact).abs();
        let e2 = (integrate(&Decay, &[1.0], 1e-3, 1.0)[0] - exact).abs();
        let ratio = e1 / e2;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "convergence ratio {ratio} outside [3.5, 4.5]"
        );
    }

    #[test]
    fn one_shot_step_matches_stepper() {
        let (x1, _y1) = trapezoidal_step(&Decay, 0.0, 1e-3, &[1.0], &[]).unwrap();
        // One trapezoidal step of x' = -x: x1 = x0 (1 - h/2)/(1 + h/2).
        let expect = (1.0 - 5e-4) / (1.0 + 5e-4);
        assert!((x1[0] - expect).abs() < 1e-12);
    }
}
