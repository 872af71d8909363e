//! The explicit constants of the contraction and decay estimates: rates beta,
//! beta_hat, sigma, the Duhamel constant K-tilde, the Gronwall constants, and
//! report types that compare them against simulated trajectories.
//!
//! Every rejected precondition is a panic with a named quantity, never a NaN
//! that travels.

use serde::Serialize;

use crate::geometry::lp_norm;
use crate::mild::{Forcing, SolverConfig, Trajectory};
use crate::numerics::{fit_exp_decay_rate, lanczos_gamma};
use crate::semigroup::{gamma_pq, DispersiveConstants};
use crate::signals::DecayShape;

/// Gamma function on the positive half line.
pub fn gamma_function(x: f64) -> f64 {
    assert!(x > 0.0, "gamma function argument must be positive, got {x}");
    lanczos_gamma(x)
}

/// The three decay rates of the smoothing chain. sigma is the exact min of
/// its three candidates, so equality holds in at least one slot.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Rates {
    pub gamma_pp: f64,
    pub beta: f64,
    pub beta_hat: f64,
    pub sigma: f64,
}

impl Rates {
    /// sigma shrunk by a strict-inequality margin; the Gronwall constants
    /// diverge at sigma itself whenever sigma equals beta_hat.
    pub fn sigma_eff(&self, margin: f64) -> f64 {
        assert!(
            margin > 0.0 && margin < 0.5,
            "sigma margin must lie in (0, 0.5), got {margin}"
        );
        (1.0 - margin) * self.sigma
    }
}

pub const DEFAULT_SIGMA_MARGIN: f64 = 0.05;

pub fn rates(cfg: &SolverConfig, constants: &DispersiveConstants) -> Rates {
    cfg.validate();
    let (n, p) = (cfg.n as f64, cfg.p);
    let q = p / 2.0;
    let p_mid = p * n / (4.0 * n - p);
    assert!(p_mid <= q, "smoothing pair ordering violated: {p_mid} > {q}");
    assert!(p / 3.0 <= q, "forcing pair ordering violated");

    let gamma_pp = gamma_pq(q, q, constants);
    let beta = (gamma_pp + gamma_pq(p_mid, q, constants)) / 2.0;
    let beta_hat = (gamma_pp + gamma_pq(p / 3.0, q, constants)) / 2.0;
    let sigma = gamma_pp.min(beta).min(beta_hat);
    assert!(sigma > 0.0, "rates must be positive, got sigma = {sigma}");
    Rates { gamma_pp, beta, beta_hat, sigma }
}

/// Duhamel constant of the linear sup bound, the max of two brackets.
pub fn k_tilde(cfg: &SolverConfig, constants: &DispersiveConstants, c_resolvent: f64) -> f64 {
    let (n, p) = (cfg.n as f64, cfg.p);
    let e1 = 1.0 - n / p;
    let e2 = 0.5 - n / (2.0 * p);
    assert!(e1 > 0.0 && e1 < 1.0, "exponent 1 - n/p = {e1} outside (0, 1)");
    assert!(e2 > 0.0 && e2 < 0.5, "exponent 1/2 - n/2p = {e2} outside (0, 1/2)");
    assert!(constants.c_tilde > 0.0, "dispersive constant must be positive");
    assert!(c_resolvent > 0.0, "resolvent constant must be positive");

    let r = rates(cfg, constants);
    let first =
        (gamma_function(e1) / r.beta.powf(e1) + 1.0 / r.beta) * constants.c_tilde.powf(2.0 / p)
            * c_resolvent;
    let second = (gamma_function(e2) / r.beta_hat.powf(e2) + 1.0 / r.beta_hat)
        * constants.c_tilde.powf(1.0 / p + 1.0 / n);
    first.max(second)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GronwallConstants {
    pub d_hat: f64,
    pub d_tilde: f64,
    /// e^{alpha C-tilde^{2/p} C k(gamma) rho D-tilde}, the Gronwall premultiplier.
    pub exp_factor: f64,
}

pub fn gronwall_constants(
    cfg: &SolverConfig,
    constants: &DispersiveConstants,
    sigma_eff: f64,
    c_resolvent: f64,
) -> GronwallConstants {
    let (n, p) = (cfg.n as f64, cfg.p);
    let r = rates(cfg, constants);
    assert!(
        sigma_eff < r.beta && sigma_eff < r.beta_hat,
        "sigma_eff = {sigma_eff} must stay strictly below beta = {} and beta_hat = {}",
        r.beta,
        r.beta_hat
    );
    let e1 = 1.0 - n / p;
    let e2 = 0.5 - n / (2.0 * p);
    let d_tilde =
        gamma_function(e1) / (r.beta - sigma_eff).powf(e1) + 1.0 / (r.beta - sigma_eff);
    let d_hat = constants.c_tilde.powf(1.0 / p + 1.0 / n)
        * (gamma_function(e2) / (r.beta_hat - sigma_eff).powf(e2)
            + 1.0 / (r.beta_hat - sigma_eff));
    let exp_factor = (cfg.alpha
        * constants.c_tilde.powf(2.0 / p)
        * c_resolvent
        * crate::elliptic::k_gamma(cfg.gamma, cfg.n)
        * cfg.rho
        * d_tilde)
        .exp();
    GronwallConstants { d_hat, d_tilde, exp_factor }
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearBoundReport {
    pub sup_norm: f64,
    pub initial_norm: f64,
    pub omega_sup: f64,
    pub forcing_sup: f64,
    pub k_tilde: f64,
    pub bound: f64,
    pub slack: f64,
    pub passed: bool,
}

/// sup_t ||u(t)||_{p/2} <= ||u0||_{p/2} + K-tilde (alpha k(gamma) sup||omega||^2
/// + sup||f||_{p/3}), checked on a frozen-coefficient trajectory.
pub fn linear_bound_check(
    trajectory: &Trajectory,
    u0_norm: f64,
    forcing: &Forcing,
    omega: &Trajectory,
    cfg: &SolverConfig,
    constants: &DispersiveConstants,
    c_resolvent: f64,
) -> LinearBoundReport {
    let kt = k_tilde(cfg, constants, c_resolvent);
    let omega_sup = omega.sup_norm();
    let forcing_sup = forcing.sup_spatial_norm(cfg.p / 3.0);
    let sup_norm = trajectory.sup_norm();
    let k = crate::elliptic::k_gamma(cfg.gamma, cfg.n);
    let bound = u0_norm + kt * (cfg.alpha * k * omega_sup * omega_sup + forcing_sup);
    let slack = bound - sup_norm;
    LinearBoundReport {
        sup_norm,
        initial_norm: u0_norm,
        omega_sup,
        forcing_sup,
        k_tilde: kt,
        bound,
        slack,
        passed: slack >= 0.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub sigma_eff: f64,
    pub premultiplier: f64,
    pub fitted_rate: f64,
    pub rate_passed: bool,
    pub envelope_passed: bool,
    /// Largest ratio of trajectory norm to the decay envelope.
    pub worst_envelope_ratio: f64,
}

/// Tail decay of a trajectory against the Gronwall envelope
/// premultiplier e^{-sigma_eff t}. The forcing must be purely decaying, at
/// rate >= sigma_eff, for the envelope hypothesis to hold.
pub fn decay_check(
    trajectory: &Trajectory,
    forcing: &Forcing,
    cfg: &SolverConfig,
    constants: &DispersiveConstants,
    c_hat: f64,
    c_resolvent: f64,
) -> DecayReport {
    let u0_norm = trajectory.norms()[0];
    let r = rates(cfg, constants);
    let sigma_eff = r.sigma_eff(DEFAULT_SIGMA_MARGIN);
    assert!(
        forcing.temporal.ap_part.terms().is_empty(),
        "decay regime requires a vanishing forcing, found an almost periodic part"
    );
    let mut weighted_sup = 0.0;
    for term in &forcing.temporal.c0_part {
        assert!(
            term.shape == DecayShape::Exponential && term.rate >= sigma_eff,
            "decay regime needs exponential forcing terms with rate >= {sigma_eff}"
        );
        weighted_sup += term.amplitude.abs();
    }
    let forcing_sup = weighted_sup * lp_norm(&forcing.spatial, cfg.p / 3.0);
    let g = gronwall_constants(cfg, constants, sigma_eff, c_resolvent);
    let premultiplier = (c_hat * u0_norm + g.d_hat * forcing_sup) * g.exp_factor;

    let times = trajectory.times();
    let norms = trajectory.norms();
    let mut worst_ratio = 0.0_f64;
    for (t, nm) in times.iter().zip(norms) {
        let envelope = premultiplier * (-sigma_eff * t).exp();
        if envelope > 0.0 {
            worst_ratio = worst_ratio.max(nm / envelope);
        }
    }

    let half = times.len() / 2;
    let fitted_rate = fit_exp_decay_rate(&times[half..], &norms[half..]);
    let all_zero = norms.iter().all(|&v| v == 0.0);
    let rate_passed = all_zero || fitted_rate >= sigma_eff * 0.9;
    DecayReport {
        sigma_eff,
        premultiplier,
        fitted_rate,
        rate_passed,
        envelope_passed: worst_ratio <= 1.0,
        worst_envelope_ratio: worst_ratio,
    }
}

/// Flat aggregate for serialization: one row per verified scenario.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub beta: f64,
    pub beta_hat: f64,
    pub sigma: f64,
    pub sigma_eff: f64,
    pub k_tilde: f64,
    pub gronwall_d_hat: f64,
    pub gronwall_d_tilde: f64,
    pub c_hat: f64,
    pub theoretical_sup_bound: f64,
    pub measured_sup: f64,
    pub fitted_decay_rate: f64,
    pub sup_bound_passed: bool,
    pub decay_passed: bool,
}

impl BoundsReport {
    pub fn csv_header() -> &'static str {
        "beta,beta_hat,sigma,sigma_eff,k_tilde,gronwall_d_hat,gronwall_d_tilde,c_hat,\
         theoretical_sup_bound,measured_sup,fitted_decay_rate,sup_bound_passed,decay_passed"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            self.beta,
            self.beta_hat,
            self.sigma,
            self.sigma_eff,
            self.k_tilde,
            self.gronwall_d_hat,
            self.gronwall_d_tilde,
            self.c_hat,
            self.theoretical_sup_bound,
            self.measured_sup,
            self.fitted_decay_rate,
            self.sup_bound_passed,
            self.decay_passed
        )
    }
}
