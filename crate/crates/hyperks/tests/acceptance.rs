//! The acceptance gate: one test per headline claim of the laboratory, each
//! printing a single verdict line before asserting. Run with --nocapture to
//! see the whole table on a green run.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use hyperks::bounds::{
    self, decay_check, linear_bound_check, rates, DEFAULT_SIGMA_MARGIN,
};
use hyperks::elliptic::{k_gamma, ResolventSolver};
use hyperks::geometry::{
    lp_norm, surface_factor, volume_weight, weighted_integral, RadialField, RadialGrid,
};
use hyperks::mild::{Forcing, MildEngine, PicardDiagnostics, SolverConfig};
use hyperks::numerics::{adaptive_simpson, coth, gauss_legendre};
use hyperks::semigroup::{
    calibrate, calibration_profiles, check_dispersive, heat_kernel, DispersiveConstants,
    HeatFlow, Provenance,
};
use hyperks::signals::{
    find_translation_numbers, relative_density_check, AAPSignal, DecayShape, DecayingTerm,
    TrigPolynomial, TrigTerm,
};

fn verdict(index: usize, label: &str, pass: bool, detail: &str) {
    let status = if pass { "pass" } else { "FAIL" };
    println!("[{index:>2}/11] {label}: {status} ({detail})");
}

fn field_from(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> RadialField {
    RadialField::new(grid.clone(), grid.nodes().map(f).collect())
}

/// Profile scaled so its L^p norm on this grid is exactly `target`.
fn normalized(grid: &Arc<RadialGrid>, p: f64, target: f64, f: impl Fn(f64) -> f64) -> RadialField {
    let raw = field_from(grid, f);
    let norm = lp_norm(&raw, p);
    raw.scale(target / norm)
}

/// The headline configuration: n = 3, p = 4, unit couplings, small ball.
fn headline_config(grid: Arc<RadialGrid>, dt: f64, t_end: f64) -> SolverConfig {
    SolverConfig {
        n: grid.n,
        p: 4.0,
        alpha: 1.0,
        gamma: 1.0,
        chi: 1.0,
        grid,
        dt,
        t_end,
        rho: 0.1,
        picard_tol: 1e-8,
        picard_max_iters: 40,
        use_heun: false,
    }
}

/// Constants sharpened by a calibrate run on the headline grids; the same
/// values the shipped scenario declares.
fn headline_constants() -> DispersiveConstants {
    DispersiveConstants {
        n: 3,
        c_tilde: 1.0,
        delta_n: 1.0,
        provenance: Provenance::Calibrated,
    }
}

fn sin_pair() -> TrigPolynomial {
    TrigPolynomial::new(vec![
        TrigTerm { lambda: 1.0, a: 0.0, b: 1.0 },
        TrigTerm { lambda: SQRT_2, a: 0.0, b: 1.0 },
    ])
}

/// Gauss-Legendre panels for the half-line image integral, with the volume
/// weight and the initial profile folded into the quadrature weights.
fn image_quadrature(u0: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let (xs, ws) = gauss_legendre(16);
    let width = 0.25;
    let mut nodes = Vec::with_capacity(56 * 16);
    for panel in 0..56 {
        let a = panel as f64 * width;
        for (x, w) in xs.iter().zip(&ws) {
            let rho = a + width * 0.5 * (x + 1.0);
            nodes.push((rho, w * width * 0.5 * rho.sinh() * u0(rho)));
        }
    }
    nodes
}

/// Closed-form n = 3 propagator: the half-line Dirichlet heat solution for
/// sinh(r) u, image form, with the r -> 0 limit at the axis.
fn closed_form_h3(quad: &[(f64, f64)], t: f64, r: f64) -> f64 {
    let pref = (-t).exp() / (4.0 * PI * t).sqrt();
    if r == 0.0 {
        let acc: f64 = quad
            .iter()
            .map(|&(rho, w)| w * (rho / t) * (-rho * rho / (4.0 * t)).exp())
            .sum();
        pref * acc
    } else {
        let acc: f64 = quad
            .iter()
            .map(|&(rho, w)| {
                let near = (-(r - rho) * (r - rho) / (4.0 * t)).exp();
                let far = (-(r + rho) * (r + rho) / (4.0 * t)).exp();
                w * (near - far)
            })
            .sum();
        pref * acc / r.sinh()
    }
}

#[test]
fn propagator_matches_the_closed_form_and_conserves_mass() {
    let grid = RadialGrid::new(3, 30.0, 2048);
    let flow = HeatFlow::new(grid.clone());
    let mut worst_err = 0.0f64;
    let mut worst_law = 0.0f64;
    let mut worst_mass = 0.0f64;
    let mut min_val = f64::INFINITY;
    for (a, w) in [(1.0, 1.0), (0.5, 0.7), (0.25, 1.8)] {
        let profile = move |r: f64| a * (-(r / w) * (r / w)).exp();
        let u0 = field_from(&grid, profile);
        let quad = image_quadrature(profile);
        let mass0 = weighted_integral(&u0);
        for t in [0.1, 1.0, 5.0] {
            let out = flow.apply(&u0, t);
            for (i, v) in out.values().iter().enumerate() {
                worst_err = worst_err.max((v - closed_form_h3(&quad, t, grid.node(i))).abs());
                min_val = min_val.min(*v);
            }
            worst_mass = worst_mass.max((weighted_integral(&out) / mass0 - 1.0).abs());
        }
        let law1 = flow.apply(&flow.apply(&u0, 0.1), 0.9).sub(&flow.apply(&u0, 1.0));
        let law5 = flow.apply(&flow.apply(&u0, 1.0), 4.0).sub(&flow.apply(&u0, 5.0));
        worst_law = worst_law
            .max(lp_norm(&law1, f64::INFINITY))
            .max(lp_norm(&law5, f64::INFINITY));
    }
    let pass =
        worst_err <= 1e-6 && worst_law <= 1e-6 && worst_mass <= 1e-6 && min_val >= -1e-12;
    verdict(
        1,
        "closed-form propagation, semigroup law, mass, positivity",
        pass,
        &format!(
            "err {worst_err:.2e}, law {worst_law:.2e}, mass {worst_mass:.2e}, min {min_val:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn kernels_are_unit_mass_densities() {
    let mut worst = 0.0f64;
    for (n, r_cut) in [(2usize, 25.0), (3, 30.0)] {
        for t in [0.1, 1.0] {
            let mass = adaptive_simpson(
                &|r: f64| heat_kernel(t, r, n) * surface_factor(n) * volume_weight(r, n),
                0.0,
                r_cut,
                1e-9,
            );
            worst = worst.max((mass - 1.0).abs());
        }
    }
    let pass = worst <= 1e-6;
    verdict(2, "kernel normalization in both dimensions", pass, &format!("worst {worst:.2e}"));
    assert!(pass);
}

/// Decay rate fitted to log v = a - rate t + p log t + c/t. The norm decays
/// like t^p e^{-rate t} (1 + O(1/t)) off a spectral edge, and on a window as
/// short as [1, 10] the 1/t term still moves the plain power-corrected fit
/// by several percent (worst on H^2).
fn fitted_edge_rate(ts: &[f64], vs: &[f64]) -> f64 {
    let mut a = [[0.0f64; 4]; 4];
    let mut b = [0.0f64; 4];
    for (&t, &v) in ts.iter().zip(vs) {
        let row = [1.0, -t, t.ln(), 1.0 / t];
        let y = v.ln();
        for i in 0..4 {
            b[i] += row[i] * y;
            for j in 0..4 {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..4 {
            let f = a[row][col] / a[col][col];
            for j in col..4 {
                a[row][j] -= f * a[col][j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for i in (0..4).rev() {
        let mut acc = b[i];
        for j in (i + 1)..4 {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    x[1]
}

#[test]
fn l2_decay_rate_matches_the_spectral_gap() {
    let mut detail = String::new();
    let mut pass = true;
    for (n, num_nodes, gap) in [(2usize, 768, 0.25), (3, 1536, 1.0)] {
        let grid = RadialGrid::new(n, 30.0, num_nodes);
        let flow = HeatFlow::new(grid.clone());
        let u0 = field_from(&grid, |r| (-r * r).exp());
        let ts: Vec<f64> = (0..19).map(|k| 1.0 + 0.5 * k as f64).collect();
        let norms: Vec<f64> = ts.iter().map(|&t| lp_norm(&flow.apply(&u0, t), 2.0)).collect();
        let rate = fitted_edge_rate(&ts, &norms);
        pass &= (rate - gap).abs() <= 0.05 * gap;
        detail.push_str(&format!("n={n}: {rate:.4} vs {gap}; "));
    }
    verdict(3, "spectral-gap decay of the flow", pass, detail.trim_end_matches("; "));
    assert!(pass);
}

#[test]
fn resolvent_is_second_order_with_exact_gradient_constants() {
    let exact = |r: f64| (-r * r).exp();
    // -lap v + gamma v for v = e^{-r^2} on the n = 3 space
    let gamma = 1.0;
    let source = move |r: f64| {
        let r_coth = if r == 0.0 { 1.0 } else { r * coth(r) };
        (2.0 - 4.0 * r * r + 4.0 * r_coth + gamma) * (-r * r).exp()
    };
    let mut errs = Vec::new();
    for num_nodes in [257usize, 513, 1025] {
        let grid = RadialGrid::new(3, 12.0, num_nodes);
        let solver = ResolventSolver::new(grid.clone());
        let v = solver.solve_resolvent(&field_from(&grid, source), gamma, 1.0);
        let err = v
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - exact(grid.node(i))).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    let k_ok = k_gamma(0.0, 2) == 1.0
        && k_gamma(0.0, 3) == 1.0
        && (k_gamma(2.0, 3) - 0.25).abs() <= 1e-15;
    let pass = (o1 - 2.0).abs() <= 0.2 && (o2 - 2.0).abs() <= 0.2 && k_ok;
    verdict(
        4,
        "resolvent convergence order and gradient constants",
        pass,
        &format!("orders {o1:.3}, {o2:.3}; k(0)=1, k(2)=1/4"),
    );
    assert!(pass);
}

#[test]
fn dispersive_envelope_certifies_all_exponent_pairs() {
    let times = [0.05, 0.08, 0.13, 0.22, 0.36, 0.6, 1.0, 1.7, 2.8, 4.6, 7.0, 10.0];
    let cal_pairs = [(2.0, 2.0), (1.5, 2.0), (4.0 / 3.0, 2.0)];
    let mut pass = true;
    let mut detail = String::new();
    for (n, num_nodes) in [(2usize, 512), (3, 1024)] {
        let grid = RadialGrid::new(n, 30.0, num_nodes);
        let flow = HeatFlow::new(grid.clone());
        let profiles = calibration_profiles(&grid);
        let (constants, _) =
            calibrate(&flow, &profiles, &times, &cal_pairs).expect("calibration succeeds");
        let mut worst = 0.0f64;
        for (p, q) in [(2.0, 2.0), (1.5, 2.0), (4.0 / 3.0, 2.0), (1.0, f64::INFINITY)] {
            let rep = check_dispersive(&flow, &profiles, &times, p, q, &constants);
            pass &= rep.certified;
            worst = worst.max(rep.max_ratio);
        }
        detail.push_str(&format!("n={n}: worst ratio {worst:.3}; "));
    }
    verdict(5, "dispersive envelope after calibration", pass, detail.trim_end_matches("; "));
    assert!(pass);
}

#[test]
fn frozen_coefficient_sup_bound_has_positive_slack() {
    let grid = RadialGrid::new(3, 16.0, 512);
    let constants = DispersiveConstants::defaults(3);
    let shapes: [fn(f64) -> f64; 3] = [
        |r| (-r * r).exp(),
        |r| r * (-r * r).exp(),
        |r| (-(r - 2.0) * (r - 2.0)).exp(),
    ];
    let mut min_slack = f64::INFINITY;
    let mut pass = true;
    for shape in shapes {
        let u0 = normalized(&grid, 2.0, 1e-3, shape);
        for amp in [2e-4, 1e-3, 5e-3] {
            let forcing = Forcing {
                temporal: AAPSignal::ap_only(TrigPolynomial::new(vec![TrigTerm {
                    lambda: 1.0,
                    a: 0.0,
                    b: 1.0,
                }])),
                spatial: normalized(&grid, 4.0 / 3.0, amp, |r| r * (-r * r).exp()),
            };
            for gamma in [0.0, 1.0, 4.0] {
                let mut cfg = headline_config(grid.clone(), 0.02, 5.0);
                cfg.gamma = gamma;
                let engine = MildEngine::new(cfg, constants);
                let omega = engine.evolve(&u0, &forcing).expect("coefficient trajectory");
                let u = engine
                    .linear_solution_operator(&forcing, &omega, &u0)
                    .expect("frozen march");
                let rep = linear_bound_check(
                    &u,
                    lp_norm(&u0, 2.0),
                    &forcing,
                    &omega,
                    engine.cfg(),
                    engine.constants(),
                    1.0,
                );
                pass &= rep.passed;
                min_slack = min_slack.min(rep.slack);
            }
        }
    }
    verdict(
        6,
        "linear sup bound over profiles, amplitudes, gammas",
        pass,
        &format!("27 runs, min slack {min_slack:.3e}"),
    );
    assert!(pass);
}

#[test]
fn small_data_fixed_point_contracts_and_matches_stepping() {
    let grid = RadialGrid::new(3, 20.0, 2048);
    let constants = headline_constants();
    let u0 = normalized(&grid, 2.0, 1e-3, |r| (-r * r).exp());
    let forcing = Forcing {
        temporal: AAPSignal::new(
            sin_pair(),
            vec![DecayingTerm::new(0.5, 1.0, DecayShape::Exponential)],
        ),
        spatial: normalized(&grid, 4.0 / 3.0, 4e-4, |r| r * (-r * r).exp()),
    };
    let run = |dt: f64| -> (f64, PicardDiagnostics) {
        let engine = MildEngine::new(headline_config(grid.clone(), dt, 20.0), constants);
        let (fixed, diag) = engine.picard_solve(&u0, &forcing).expect("fixed point");
        let marched = engine.evolve(&u0, &forcing).expect("stepped solution");
        (fixed.sup_distance(&marched), diag)
    };
    let (gap, diag) = run(0.01);
    let (gap_half, _) = run(0.005);
    // the gap is first order in dt, so halving dt calibrates its slope
    let slope = gap_half / 0.005;
    let max_ratio = diag.ratios.iter().fold(0.0f64, |a, &b| a.max(b));
    let pass = diag.iterations <= 15 && max_ratio <= 0.22 && gap <= 5.0 * 0.01 * slope;
    verdict(
        7,
        "contraction of the small-data fixed point",
        pass,
        &format!(
            "{} iterations, worst ratio {max_ratio:.2e}, gap {gap:.2e} within {:.2e}",
            diag.iterations,
            5.0 * 0.01 * slope
        ),
    );
    assert!(pass);
}

#[test]
fn gronwall_envelope_holds_with_the_exact_rate_triple() {
    let grid = RadialGrid::new(3, 20.0, 2048);
    let constants = headline_constants();
    let cfg = headline_config(grid.clone(), 0.01, 20.0);
    let r = rates(&cfg, &constants);
    let triple_ok = (r.gamma_pp - 1.0).abs() <= 1e-12
        && (r.beta - 0.875).abs() <= 1e-12
        && (r.beta_hat - 0.8125).abs() <= 1e-12
        && (r.sigma - 0.8125).abs() <= 1e-12;
    let sigma_eff = r.sigma_eff(DEFAULT_SIGMA_MARGIN);
    let u0 = normalized(&grid, 2.0, 1e-3, |r| (-r * r).exp());
    let forcing = Forcing {
        temporal: AAPSignal::new(
            TrigPolynomial::zero(),
            vec![DecayingTerm::new(1.0, sigma_eff, DecayShape::Exponential)],
        ),
        spatial: normalized(&grid, 4.0 / 3.0, 1e-3, |r| r * (-r * r).exp()),
    };
    let engine = MildEngine::new(cfg, constants);
    let traj = engine.evolve(&u0, &forcing).expect("decaying run");
    let rep = decay_check(&traj, &forcing, engine.cfg(), engine.constants(), 1.0, 1.0);
    let pass = triple_ok && rep.envelope_passed && rep.rate_passed;
    verdict(
        8,
        "decay envelope at the forced rate",
        pass,
        &format!(
            "rates (1, 7/8, 13/16), envelope ratio {:.3e}, fitted rate {:.4}",
            rep.worst_envelope_ratio, rep.fitted_rate
        ),
    );
    assert!(pass);
}

#[test]
fn massera_splitting_separates_ap_and_decaying_parts() {
    let grid = RadialGrid::new(3, 20.0, 1024);
    let constants = headline_constants();
    let engine = MildEngine::new(headline_config(grid.clone(), 0.01, 16.0), constants);
    let u0 = normalized(&grid, 2.0, 1e-3, |r| (-r * r).exp());
    let spatial = normalized(&grid, 4.0 / 3.0, 4e-4, |r| r * (-r * r).exp());
    let forcing = Forcing {
        temporal: AAPSignal::new(
            sin_pair(),
            vec![DecayingTerm::new(0.5, 1.0, DecayShape::Exponential)],
        ),
        spatial: spatial.clone(),
    };
    let rep = engine.verify_massera_splitting(&u0, &forcing, 8.0).expect("splitting");
    let idx = (15.0_f64 / 0.01).round() as usize;
    let mismatched_ok =
        rep.fitted_decay_rate > 0.0 && rep.diff_norms[idx] < 1e-3 && rep.initial_layer_passed;

    // starting on the almost periodic solution leaves nothing to decay
    let ap_forcing = Forcing { temporal: AAPSignal::ap_only(sin_pair()), spatial };
    let (shifted, _) = engine.ap_fixed_point(&ap_forcing, 8.0).expect("ap fixed point");
    let u0_matched = shifted.tail_from(8.0).state(0).clone();
    let rep2 = engine
        .verify_massera_splitting(&u0_matched, &ap_forcing, 8.0)
        .expect("matched splitting");
    let matched_sup = rep2.diff_norms.iter().fold(0.0f64, |a, &b| a.max(b));
    let pass = mismatched_ok && matched_sup <= 1e-6;
    verdict(
        9,
        "remainder decay and matched-data collapse",
        pass,
        &format!(
            "rate {:.3}, diff(15) {:.2e}, matched sup {matched_sup:.2e}",
            rep.fitted_decay_rate, rep.diff_norms[idx]
        ),
    );
    assert!(pass);
}

#[test]
fn translation_numbers_are_certified_and_relatively_dense() {
    let pair = sin_pair();
    let taus = find_translation_numbers(&pair, 0.1, 0.0, 200.0);
    assert!(!taus.is_empty(), "the scan window must contain translation numbers");
    let mut worst_emp = 0.0f64;
    for &tau in &taus {
        for k in 0..100_000 {
            let t = k as f64 * 0.005;
            worst_emp = worst_emp.max((pair.eval(t + tau) - pair.eval(t)).abs());
        }
    }
    let scan_ok = worst_emp <= 0.1;

    let density = relative_density_check(&pair, 0.6, 20, 50.0);

    // the fixed point inherits each translation number, with displacement
    // controlled by the forcing displacement through the linear gain
    let tau_star = taus
        .iter()
        .copied()
        .filter(|&t| t >= 1.0)
        .min_by(|a, b| pair.displacement_bound(*a).total_cmp(&pair.displacement_bound(*b)))
        .expect("a nontrivial translation number");
    let dt = 0.02;
    let shift_steps = (tau_star / dt).round() as usize;
    let tau_grid = shift_steps as f64 * dt;
    let b_grid = pair.displacement_bound(tau_grid);
    let grid = RadialGrid::new(3, 16.0, 256);
    let constants = headline_constants();
    let engine = MildEngine::new(headline_config(grid.clone(), dt, 240.0), constants);
    let spatial = normalized(&grid, 4.0 / 3.0, 4e-4, |r| r * (-r * r).exp());
    let forcing = Forcing { temporal: AAPSignal::ap_only(pair.clone()), spatial: spatial.clone() };
    let (shifted, _) = engine.ap_fixed_point(&forcing, 8.0).expect("ap fixed point");
    let traj = shifted.tail_from(8.0);
    let mut moved = 0.0f64;
    for m in 0..(traj.len() - shift_steps) {
        moved = moved.max(lp_norm(&traj.state(m + shift_steps).sub(traj.state(m)), 2.0));
    }
    let gain = bounds::k_tilde(engine.cfg(), engine.constants(), 1.0)
        * lp_norm(&spatial, 4.0 / 3.0)
        * b_grid;
    let pass = scan_ok && density.all_windows_hit && moved <= gain;
    verdict(
        10,
        "translation numbers of forcing and solution",
        pass,
        &format!(
            "{} taus, emp {worst_emp:.3}, density 20 windows, moved {moved:.2e} within {gain:.2e}",
            taus.len()
        ),
    );
    assert!(pass);
}

#[test]
fn shipped_scenario_reruns_bit_identically() {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/small_h3_p4.toml");
    let run = |out_dir: &Path| {
        let out = Command::new(env!("CARGO_BIN_EXE_hyperks"))
            .args([
                "simulate",
                "--scenario",
                scenario.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    run(dir1.path());
    run(dir2.path());
    let mut compared = 0;
    let mut pass = true;
    for name in ["trajectory.csv", "snapshot_000.csv", "snapshot_001.csv", "snapshot_002.csv"] {
        let a = std::fs::read(dir1.path().join("small_h3_p4").join(name)).expect(name);
        let b = std::fs::read(dir2.path().join("small_h3_p4").join(name)).expect(name);
        pass &= a == b;
        compared += 1;
    }
    verdict(
        11,
        "deterministic rerun of the shipped scenario",
        pass,
        &format!("{compared} artifacts byte-identical"),
    );
    assert!(pass);
}
