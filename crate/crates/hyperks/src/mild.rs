//! Duhamel mild-solution engine: exponential-integrator time stepping for the
//! semilinear chemotaxis problem, the frozen-coefficient linear solution
//! operator, the Picard fixed point and the splitting check that separates an
//! almost periodic solution from its decaying initial layer.
//!
//! Both integrators step with the exact heat propagator, so the only time
//! discretization error is the quadrature of the Duhamel integral: left
//! endpoint for `evolve`, trapezoid for the frozen-coefficient march.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::bounds;
use crate::elliptic::{k_gamma, ResolventSolver};
use crate::geometry::{lp_norm, RadialField, RadialGrid};
use crate::semigroup::{DispersiveConstants, HeatFlow};
use crate::signals::AAPSignal;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub n: usize,
    pub p: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub chi: f64,
    pub grid: Arc<RadialGrid>,
    pub dt: f64,
    pub t_end: f64,
    pub rho: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub use_heun: bool,
}

impl SolverConfig {
    /// Panics on any violated standing hypothesis. alpha = 0 is admitted even
    /// though the full model has alpha > 0: the linear problem is the oracle
    /// for half the checks.
    pub fn validate(&self) {
        assert!(self.n == 2 || self.n == 3, "dimension must be 2 or 3, got {}", self.n);
        assert_eq!(self.grid.n, self.n, "grid dimension disagrees with config");
        let lower = 3.0_f64.max(self.n as f64);
        let upper = 2.0 * self.n as f64;
        assert!(
            self.p > lower && self.p < upper,
            "integrability exponent p = {} outside ({lower}, {upper})",
            self.p
        );
        assert!(self.alpha >= 0.0, "production rate must be nonnegative");
        assert!(self.gamma >= 0.0, "chemical decay must be nonnegative");
        assert!(self.chi == 1.0, "sensitivity is fixed at 1, got {}", self.chi);
        assert!(self.dt > 0.0 && self.dt <= 0.1, "time step must lie in (0, 0.1]");
        assert!(self.t_end > 0.0, "horizon must be positive");
        let steps = self.t_end / self.dt;
        assert!(
            (steps - steps.round()).abs() < 1e-9,
            "horizon must be a whole number of steps"
        );
        assert!(self.rho > 0.0, "ball radius must be positive");
        assert!(self.picard_tol > 0.0, "fixed-point tolerance must be positive");
        assert!(self.picard_max_iters >= 1, "need at least one iteration");
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn p_half(&self) -> f64 {
        self.p / 2.0
    }
}

/// Separable forcing vector field f(t, r) = temporal(t) * spatial(r), the
/// radial component of a divergence-form drive.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub temporal: AAPSignal,
    pub spatial: RadialField,
}

impl Forcing {
    pub fn zero(grid: Arc<RadialGrid>) -> Self {
        Forcing { temporal: AAPSignal::zero(), spatial: RadialField::zeros(grid) }
    }

    pub fn at(&self, t: f64) -> RadialField {
        self.spatial.scale(self.temporal.eval(t))
    }

    /// Upper bound for sup_t of the L^q norm of the realized field.
    pub fn sup_spatial_norm(&self, q: f64) -> f64 {
        self.temporal.aap_norm() * lp_norm(&self.spatial, q)
    }
}

/// Solution curve on a uniform time grid with cached L^{p/2} norms.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<RadialField>,
    norms: Vec<f64>,
    p_half: f64,
}

impl Trajectory {
    pub fn new(states: Vec<RadialField>, dt: f64, p_half: f64) -> Self {
        assert!(states.len() >= 2, "a trajectory holds at least two states");
        assert!(dt > 0.0);
        let times = (0..states.len()).map(|m| m as f64 * dt).collect();
        let norms = states.iter().map(|u| lp_norm(u, p_half)).collect();
        Trajectory { times, states, norms, p_half }
    }

    pub fn zeros(grid: Arc<RadialGrid>, steps: usize, dt: f64, p_half: f64) -> Self {
        Self::new(vec![RadialField::zeros(grid); steps + 1], dt, p_half)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[RadialField] {
        &self.states
    }

    pub fn state(&self, m: usize) -> &RadialField {
        &self.states[m]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn p_half(&self) -> f64 {
        self.p_half
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn sup_norm(&self) -> f64 {
        self.norms.iter().fold(0.0, |a, v| a.max(*v))
    }

    /// sup over grid times of the L^{p/2} distance, the horizon restriction
    /// of the contraction norm.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "trajectories on different time grids");
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| lp_norm(&a.sub(b), self.p_half))
            .fold(0.0, f64::max)
    }

    /// The segment from time t0 (a grid time) onward, re-based to start at 0.
    pub fn tail_from(&self, t0: f64) -> Trajectory {
        let dt = self.dt();
        let k = (t0 / dt).round() as usize;
        assert!((t0 - k as f64 * dt).abs() < 1e-9, "tail must start on the time grid");
        assert!(k + 2 <= self.len(), "tail too short");
        Self::new(self.states[k..].to_vec(), dt, self.p_half)
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("norm {norm:.6e} at t = {t:.4} exceeds the blow-up guard {guard:.6e}")]
    BlowUp { t: f64, norm: f64, guard: f64 },
    #[error("contraction condition 2 alpha k(gamma) rho = {value:.4} is not < 1")]
    ContractionCondition { value: f64 },
    #[error("ball-invariance estimate fails: {lhs:.6e} > rho = {rho:.6e}")]
    BallCondition { lhs: f64, rho: f64 },
    #[error("Picard iterate left the radius-{rho} ball: sup norm {norm:.6e}")]
    BallExit { rho: f64, norm: f64 },
    #[error("Picard stopped contracting: consecutive ratios {first:.4}, {second:.4}")]
    NotContracting { first: f64, second: f64 },
    #[error("no convergence in {iters} iterations, last difference {diff:.6e}")]
    NoConvergence { iters: usize, diff: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardDiagnostics {
    pub diffs: Vec<f64>,
    pub ratios: Vec<f64>,
    pub iterations: usize,
    pub k_tilde: f64,
    pub core_lhs: f64,
    pub contraction_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MasseraReport {
    pub times: Vec<f64>,
    pub diff_norms: Vec<f64>,
    pub final_diff: f64,
    pub fitted_decay_rate: f64,
    pub initial_layer_rate: f64,
    pub initial_layer_required: f64,
    pub initial_layer_passed: bool,
    pub ap_iterations: usize,
}

pub struct MildEngine {
    cfg: SolverConfig,
    constants: DispersiveConstants,
    c_resolvent: f64,
    flow: HeatFlow,
    resolvent: ResolventSolver,
}

impl MildEngine {
    pub fn new(cfg: SolverConfig, constants: DispersiveConstants) -> Self {
        cfg.validate();
        assert_eq!(constants.n, cfg.n, "constants dimension disagrees with config");
        let flow = HeatFlow::new(cfg.grid.clone());
        let resolvent = ResolventSolver::new(cfg.grid.clone());
        MildEngine { cfg, constants, c_resolvent: 1.0, flow, resolvent }
    }

    pub fn with_resolvent_constant(mut self, c: f64) -> Self {
        assert!(c > 0.0, "resolvent constant must be positive");
        self.c_resolvent = c;
        self
    }

    pub fn cfg(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn constants(&self) -> &DispersiveConstants {
        &self.constants
    }

    pub fn flow(&self) -> &HeatFlow {
        &self.flow
    }

    pub fn resolvent(&self) -> &ResolventSolver {
        &self.resolvent
    }

    /// The chemotactic vector field -alpha u v' with v' the unit-production
    /// resolvent gradient, so alpha enters exactly once.
    pub fn nonlinear_term(&self, u: &RadialField) -> RadialField {
        if self.cfg.alpha == 0.0 {
            return RadialField::zeros(self.cfg.grid.clone());
        }
        let vp = self.resolvent.gradient_of_resolvent(u, self.cfg.gamma, 1.0);
        let values = u
            .values()
            .iter()
            .zip(vp.values())
            .map(|(ui, gi)| -self.cfg.alpha * ui * gi)
            .collect();
        RadialField::new(self.cfg.grid.clone(), values)
    }

    /// Everything the theory admits is an order of magnitude below this;
    /// crossing it means the run left the small-data regime.
    fn guard_threshold(&self, u0_norm: f64, forcing: &Forcing) -> f64 {
        let kt = bounds::k_tilde(&self.cfg, &self.constants, self.c_resolvent);
        let k = k_gamma(self.cfg.gamma, self.cfg.n);
        let f_sup = forcing.sup_spatial_norm(self.cfg.p / 3.0);
        10.0 * (u0_norm
            + self.cfg.rho
            + kt * (self.cfg.alpha * k * self.cfg.rho * self.cfg.rho + f_sup))
    }

    /// Exponential-Euler stepping of the semilinear problem, with an optional
    /// trapezoid corrector.
    pub fn evolve(&self, u0: &RadialField, forcing: &Forcing) -> Result<Trajectory, SolverError> {
        let dt = self.cfg.dt;
        let p_half = self.cfg.p_half();
        let steps = self.cfg.steps();
        let guard = self.guard_threshold(lp_norm(u0, p_half), forcing);

        let mut states = Vec::with_capacity(steps + 1);
        let mut u = u0.clone();
        states.push(u.clone());
        for m in 0..steps {
            let t_m = m as f64 * dt;
            let g_m = self.nonlinear_term(&u).add(&forcing.at(t_m));
            let drift = self.flow.apply(&u, dt);
            let div_m = self.flow.apply_div(&g_m, dt);
            let mut next = drift.add_scaled(dt, &div_m);
            if self.cfg.use_heun {
                let g_pred = self.nonlinear_term(&next).add(&forcing.at(t_m + dt));
                next = drift
                    .add_scaled(dt / 2.0, &div_m)
                    .add_scaled(dt / 2.0, &self.flow.apply_div(&g_pred, 0.0));
            }
            let norm = lp_norm(&next, p_half);
            if norm > guard {
                return Err(SolverError::BlowUp { t: t_m + dt, norm, guard });
            }
            states.push(next.clone());
            u = next;
        }
        Ok(Trajectory::new(states, dt, p_half))
    }

    /// One application of the frozen-coefficient solution operator: the mild
    /// solution of the linear problem with coefficient omega, by trapezoid
    /// quadrature of the Duhamel integral.
    pub fn linear_solution_operator(
        &self,
        forcing: &Forcing,
        omega: &Trajectory,
        u0: &RadialField,
    ) -> Result<Trajectory, SolverError> {
        assert_eq!(omega.len(), self.cfg.steps() + 1, "coefficient not on the time grid");
        self.frozen_march(forcing, omega, u0, 0.0)
    }

    fn frozen_march(
        &self,
        forcing: &Forcing,
        omega: &Trajectory,
        u0: &RadialField,
        time_shift: f64,
    ) -> Result<Trajectory, SolverError> {
        let dt = self.cfg.dt;
        let p_half = self.cfg.p_half();
        let steps = omega.len() - 1;
        let guard = self.guard_threshold(lp_norm(u0, p_half), forcing);

        let mut states = Vec::with_capacity(steps + 1);
        let mut u = u0.clone();
        states.push(u.clone());
        let mut g_prev = self.nonlinear_term(omega.state(0)).add(&forcing.at(-time_shift));
        for m in 0..steps {
            let t_next = (m + 1) as f64 * dt;
            let g_next =
                self.nonlinear_term(omega.state(m + 1)).add(&forcing.at(t_next - time_shift));
            let next = self
                .flow
                .apply(&u, dt)
                .add_scaled(dt / 2.0, &self.flow.apply_div(&g_prev, dt))
                .add_scaled(dt / 2.0, &self.flow.apply_div(&g_next, 0.0));
            let norm = lp_norm(&next, p_half);
            if norm > guard {
                return Err(SolverError::BlowUp { t: t_next, norm, guard });
            }
            states.push(next.clone());
            u = next;
            g_prev = g_next;
        }
        Ok(Trajectory::new(states, dt, p_half))
    }

    /// Picard iteration of the frozen-coefficient operator from omega = 0.
    /// Both smallness preconditions are checked with the computed constants
    /// before any stepping.
    pub fn picard_solve(
        &self,
        u0: &RadialField,
        forcing: &Forcing,
    ) -> Result<(Trajectory, PicardDiagnostics), SolverError> {
        let k = k_gamma(self.cfg.gamma, self.cfg.n);
        let contraction_bound = 2.0 * self.cfg.alpha * k * self.cfg.rho;
        if contraction_bound >= 1.0 {
            return Err(SolverError::ContractionCondition { value: contraction_bound });
        }
        let kt = bounds::k_tilde(&self.cfg, &self.constants, self.c_resolvent);
        let u0_norm = lp_norm(u0, self.cfg.p_half());
        let f_sup = forcing.sup_spatial_norm(self.cfg.p / 3.0);
        let core_lhs =
            u0_norm + kt * (self.cfg.alpha * k * self.cfg.rho * self.cfg.rho + f_sup);
        if core_lhs > self.cfg.rho {
            return Err(SolverError::BallCondition { lhs: core_lhs, rho: self.cfg.rho });
        }

        let mut omega = Trajectory::zeros(
            self.cfg.grid.clone(),
            self.cfg.steps(),
            self.cfg.dt,
            self.cfg.p_half(),
        );
        let mut diffs = Vec::new();
        let mut ratios = Vec::new();
        let mut noncontracting_streak = 0;
        for iter in 1..=self.cfg.picard_max_iters {
            let next = self.linear_solution_operator(forcing, &omega, u0)?;
            let sup = next.sup_norm();
            if sup > self.cfg.rho {
                return Err(SolverError::BallExit { rho: self.cfg.rho, norm: sup });
            }
            let d = next.sup_distance(&omega);
            if let Some(&prev) = diffs.last() {
                if prev > 0.0 {
                    let ratio = d / prev;
                    ratios.push(ratio);
                    if ratio >= 1.0 {
                        noncontracting_streak += 1;
                        if noncontracting_streak >= 2 {
                            let len = ratios.len();
                            return Err(SolverError::NotContracting {
                                first: ratios[len - 2],
                                second: ratios[len - 1],
                            });
                        }
                    } else {
                        noncontracting_streak = 0;
                    }
                }
            }
            diffs.push(d);
            omega = next;
            if d < self.cfg.picard_tol {
                return Ok((
                    omega,
                    PicardDiagnostics {
                        diffs,
                        ratios,
                        iterations: iter,
                        k_tilde: kt,
                        core_lhs,
                        contraction_bound,
                    },
                ));
            }
        }
        let diff = *diffs.last().unwrap();
        Err(SolverError::NoConvergence { iters: self.cfg.picard_max_iters, diff })
    }

    /// One frozen-coefficient application of the whole-line solution map,
    /// truncated at -burn_in with zero state. The returned trajectory is in
    /// shifted time (starts at the truncation point); its `tail_from(burn_in)`
    /// is the physical window, accurate up to e^{-sigma_eff burn_in}.
    pub fn whole_line_ap_solution(
        &self,
        forcing: &Forcing,
        omega_ap: &Trajectory,
        burn_in: f64,
    ) -> Result<Trajectory, SolverError> {
        assert!(
            forcing.temporal.c0_part.is_empty(),
            "whole-line construction needs a purely almost periodic forcing"
        );
        let sigma_eff = bounds::rates(&self.cfg, &self.constants)
            .sigma_eff(bounds::DEFAULT_SIGMA_MARGIN);
        assert!(
            burn_in >= 5.0 / sigma_eff,
            "burn-in {burn_in} shorter than the memory horizon {}",
            5.0 / sigma_eff
        );
        let burn_steps = burn_in / self.cfg.dt;
        assert!(
            (burn_steps - burn_steps.round()).abs() < 1e-9,
            "burn-in must be a whole number of steps"
        );
        let total = self.cfg.steps() + burn_steps.round() as usize;
        assert_eq!(omega_ap.len(), total + 1, "coefficient not on the extended grid");
        let zero = RadialField::zeros(self.cfg.grid.clone());
        self.frozen_march(forcing, omega_ap, &zero, burn_in)
    }

    /// Fixed point of the whole-line map, in shifted time.
    pub fn ap_fixed_point(
        &self,
        ap_forcing: &Forcing,
        burn_in: f64,
    ) -> Result<(Trajectory, usize), SolverError> {
        let burn_steps = (burn_in / self.cfg.dt).round() as usize;
        let total = self.cfg.steps() + burn_steps;
        let mut omega =
            Trajectory::zeros(self.cfg.grid.clone(), total, self.cfg.dt, self.cfg.p_half());
        for iter in 1..=self.cfg.picard_max_iters {
            let next = self.whole_line_ap_solution(ap_forcing, &omega, burn_in)?;
            let d = next.sup_distance(&omega);
            omega = next;
            if d < self.cfg.picard_tol {
                return Ok((omega, iter));
            }
        }
        Err(SolverError::NoConvergence {
            iters: self.cfg.picard_max_iters,
            diff: f64::NAN,
        })
    }

    /// Splits the half-line solution into its almost periodic part and a
    /// decaying remainder: computes both fixed points, the norm of their
    /// difference over time, and the decay of the initial layer
    /// e^{t Laplacian}(u0 - u_ap(0)).
    pub fn verify_massera_splitting(
        &self,
        u0: &RadialField,
        forcing: &Forcing,
        burn_in: f64,
    ) -> Result<MasseraReport, SolverError> {
        let ap_forcing = Forcing {
            temporal: AAPSignal::ap_only(forcing.temporal.ap_part.clone()),
            spatial: forcing.spatial.clone(),
        };
        let (ap_shifted, ap_iterations) = self.ap_fixed_point(&ap_forcing, burn_in)?;
        let u_ap = ap_shifted.tail_from(burn_in);
        let (u_full, _) = self.picard_solve(u0, forcing)?;

        let times = u_full.times().to_vec();
        let diff_norms: Vec<f64> = u_full
            .states()
            .iter()
            .zip(u_ap.states())
            .map(|(a, b)| lp_norm(&a.sub(b), self.cfg.p_half()))
            .collect();
        let final_diff = *diff_norms.last().unwrap();
        let fitted_decay_rate = crate::numerics::fit_exp_decay_rate(&times, &diff_norms);

        let r = bounds::rates(&self.cfg, &self.constants);
        let initial_layer_required = 0.9 * r.gamma_pp;
        let layer0 = u0.sub(u_ap.state(0));
        let layer0_norm = lp_norm(&layer0, self.cfg.p_half());
        let (initial_layer_rate, initial_layer_passed) = if layer0_norm < 1e-13 {
            (f64::INFINITY, true)
        } else {
            let samples = 24.min(u_full.len() - 1);
            let stride = (u_full.len() - 1) / samples;
            let mut ts = Vec::new();
            let mut vals = Vec::new();
            for k in 0..=samples {
                let m = k * stride;
                let t = times[m];
                ts.push(t);
                vals.push(lp_norm(&self.flow.apply(&layer0, t), self.cfg.p_half()));
            }
            let rate = crate::numerics::fit_exp_decay_rate(&ts, &vals);
            (rate, rate >= initial_layer_required)
        };

        Ok(MasseraReport {
            times,
            diff_norms,
            final_diff,
            fitted_decay_rate,
            initial_layer_rate,
            initial_layer_required,
            initial_layer_passed,
            ap_iterations,
        })
    }
}
