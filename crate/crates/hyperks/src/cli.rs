//! Scenario-driven front end: TOML scenario files in, CSV and JSON artifacts
//! out. One scenario per dispatch; `--jobs` fans independent scenarios across
//! threads. Everything is seedless, so identical scenario files produce
//! byte-identical artifacts.
//!
//! Exit codes: 0 all checks pass, 2 validation error, 3 a check failed,
//! 4 the blow-up guard fired.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bounds;
use crate::geometry::{lp_norm, weighted_integral, RadialField, RadialGrid};
use crate::mild::{Forcing, MildEngine, SolverConfig, SolverError};
use crate::semigroup::{self, DispersiveConstants, HeatFlow, Provenance};
use crate::signals::{find_translation_numbers, relative_density_check, AAPSignal, DecayShape,
    DecayingTerm, TrigPolynomial, TrigTerm};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;
pub const EXIT_BLOW_UP: u8 = 4;

#[derive(Parser)]
#[command(name = "hyperks", version, about = "Chemotaxis-diffusion laboratory on hyperbolic space")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Step the semilinear problem and write trajectory artifacts.
    Simulate(RunArgs),
    /// Check the frozen-coefficient sup bound on a stepped trajectory.
    VerifyLinear(RunArgs),
    /// Run the Picard iteration and compare it with direct stepping.
    VerifyFixedPoint(RunArgs),
    /// Check the exponential decay envelope under vanishing forcing.
    VerifyDecay(RunArgs),
    /// Split the solution into an almost periodic part and a decaying rest.
    VerifyMassera(RunArgs),
    /// Fit dispersive constants on the scenario grid and write them out.
    Calibrate(RunArgs),
    /// Scan the forcing signal for certified translation numbers.
    TranslationScan(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; repeat the flag to fan several scenarios out.
    #[arg(long, required = true)]
    scenario: Vec<PathBuf>,
    /// Base output directory; each scenario writes under <out>/<stem>.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Maximum number of scenarios run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Dispersive constants JSON from a calibrate run; overrides [constants].
    #[arg(long)]
    constants: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CommandKind {
    Simulate,
    VerifyLinear,
    VerifyFixedPoint,
    VerifyDecay,
    VerifyMassera,
    Calibrate,
    TranslationScan,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::VerifyLinear => "verify-linear",
            CommandKind::VerifyFixedPoint => "verify-fixed-point",
            CommandKind::VerifyDecay => "verify-decay",
            CommandKind::VerifyMassera => "verify-massera",
            CommandKind::Calibrate => "calibrate",
            CommandKind::TranslationScan => "translation-scan",
        }
    }
}

fn split(command: Command) -> (CommandKind, RunArgs) {
    match command {
        Command::Simulate(a) => (CommandKind::Simulate, a),
        Command::VerifyLinear(a) => (CommandKind::VerifyLinear, a),
        Command::VerifyFixedPoint(a) => (CommandKind::VerifyFixedPoint, a),
        Command::VerifyDecay(a) => (CommandKind::VerifyDecay, a),
        Command::VerifyMassera(a) => (CommandKind::VerifyMassera, a),
        Command::Calibrate(a) => (CommandKind::Calibrate, a),
        Command::TranslationScan(a) => (CommandKind::TranslationScan, a),
    }
}

fn one() -> f64 {
    1.0
}

fn default_picard_tol() -> f64 {
    1e-8
}

fn default_picard_iters() -> usize {
    40
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    config: ConfigSection,
    initial: ProfileSection,
    forcing: ForcingSection,
    #[serde(default)]
    constants: ConstantsSection,
    #[serde(default)]
    checks: ChecksSection,
    #[serde(default)]
    translation: Option<TranslationSection>,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigSection {
    n: usize,
    p: f64,
    alpha: f64,
    gamma: f64,
    #[serde(default = "one")]
    chi: f64,
    r_max: f64,
    num_nodes: usize,
    dt: f64,
    t_end: f64,
    rho: f64,
    #[serde(default = "default_picard_tol")]
    picard_tol: f64,
    #[serde(default = "default_picard_iters")]
    picard_max_iters: usize,
    #[serde(default)]
    use_heun: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileSection {
    family: String,
    #[serde(default = "one")]
    width: f64,
    amplitude: Option<f64>,
    norm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForcingSection {
    profile: String,
    #[serde(default = "one")]
    width: f64,
    amplitude: Option<f64>,
    norm: Option<f64>,
    #[serde(default)]
    ap: Vec<ApTerm>,
    #[serde(default)]
    c0: Vec<C0Term>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApTerm {
    lambda: f64,
    a: f64,
    b: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct C0Term {
    c: f64,
    kappa: f64,
    shape: DecayShape,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsSection {
    c_tilde: Option<f64>,
    delta_n: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChecksSection {
    #[serde(default = "one")]
    c_hat: f64,
    #[serde(default = "one")]
    c_resolvent: f64,
    burn_in: Option<f64>,
}

impl Default for ChecksSection {
    fn default() -> Self {
        ChecksSection { c_hat: 1.0, c_resolvent: 1.0, burn_in: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TranslationSection {
    epsilon: f64,
    #[serde(default)]
    window_start: f64,
    window_length: f64,
    num_windows: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<String>,
    #[serde(default)]
    snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ResolvedProfile {
    family: String,
    width: f64,
    amplitude: f64,
    norm: f64,
    norm_exponent: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    command: String,
    scenario: String,
    config: ConfigSection,
    initial: ResolvedProfile,
    forcing_profile: ResolvedProfile,
    forcing_ap: Vec<ApTerm>,
    forcing_c0: Vec<C0Term>,
    forcing_sup_norm: f64,
    constants: DispersiveConstants,
    constants_file: Option<String>,
    c_hat: f64,
    c_resolvent: f64,
    burn_in: f64,
    sigma_eff: f64,
    translation: Option<TranslationSection>,
    output_dir: String,
    snapshot_times: Vec<f64>,
}

#[derive(Debug)]
struct Scenario {
    cfg: SolverConfig,
    constants: DispersiveConstants,
    initial: RadialField,
    forcing: Forcing,
    c_hat: f64,
    c_resolvent: f64,
    burn_in: f64,
    translation: Option<TranslationSection>,
    snapshot_times: Vec<f64>,
    out_dir: PathBuf,
    manifest: Manifest,
}

enum CmdError {
    Validation(String),
    Solver(SolverError),
}

impl From<SolverError> for CmdError {
    fn from(e: SolverError) -> Self {
        CmdError::Solver(e)
    }
}

fn profile_values(family: &str, width: f64, r: f64) -> f64 {
    let x = r / width;
    match family {
        "gaussian" => (-x * x).exp(),
        "ring" => x * (-x * x).exp(),
        "bump" => {
            if x < 1.0 {
                (-1.0 / (1.0 - x * x)).exp()
            } else {
                0.0
            }
        }
        "zero" => 0.0,
        _ => f64::NAN,
    }
}

/// Builds the profile and resolves amplitude-or-norm into both: the returned
/// echo carries the actual amplitude used and the actual L^q norm.
fn resolve_profile(
    grid: &Arc<RadialGrid>,
    family: &str,
    width: f64,
    amplitude: Option<f64>,
    norm: Option<f64>,
    q: f64,
) -> Result<(RadialField, ResolvedProfile), String> {
    const FAMILIES: [&str; 4] = ["gaussian", "ring", "bump", "zero"];
    if !FAMILIES.contains(&family) {
        return Err(format!(
            "unknown profile family '{family}' (expected one of {FAMILIES:?})"
        ));
    }
    if !(width > 0.0) {
        return Err(format!("profile width must be positive, got {width}"));
    }
    let fam = family.to_owned();
    let base = RadialField::from_fn(grid.clone(), move |r| profile_values(&fam, width, r));
    let base_norm = lp_norm(&base, q);
    let amp = match (amplitude, norm) {
        (Some(_), Some(_)) => {
            return Err("give amplitude or norm for a profile, not both".into());
        }
        (None, Some(target)) => {
            if !(target >= 0.0) {
                return Err(format!("profile norm must be nonnegative, got {target}"));
            }
            if base_norm == 0.0 && target > 0.0 {
                return Err("cannot scale the zero profile to a positive norm".into());
            }
            if target == 0.0 { 0.0 } else { target / base_norm }
        }
        (amp, None) => amp.unwrap_or(1.0),
    };
    let field = base.scale(amp);
    let echo = ResolvedProfile {
        family: family.to_owned(),
        width,
        amplitude: amp,
        norm: lp_norm(&field, q),
        norm_exponent: q,
    };
    Ok((field, echo))
}

fn load_scenario(
    path: &Path,
    out_base: &Path,
    constants_path: Option<&Path>,
    command: CommandKind,
) -> Result<Scenario, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read scenario {}: {e}", path.display()))?;
    let file: ScenarioFile = toml::from_str(&text)
        .map_err(|e| format!("scenario {} is malformed: {e}", path.display()))?;

    let c = &file.config;
    let grid = RadialGrid::new(c.n, c.r_max, c.num_nodes);
    let cfg = SolverConfig {
        n: c.n,
        p: c.p,
        alpha: c.alpha,
        gamma: c.gamma,
        chi: c.chi,
        grid: grid.clone(),
        dt: c.dt,
        t_end: c.t_end,
        rho: c.rho,
        picard_tol: c.picard_tol,
        picard_max_iters: c.picard_max_iters,
        use_heun: c.use_heun,
    };
    cfg.validate();

    let mut constants = DispersiveConstants::defaults(c.n);
    let mut constants_file = None;
    if let Some(cp) = constants_path {
        let ctext = fs::read_to_string(cp)
            .map_err(|e| format!("cannot read constants {}: {e}", cp.display()))?;
        constants = serde_json::from_str(&ctext)
            .map_err(|e| format!("constants {} are malformed: {e}", cp.display()))?;
        constants_file = Some(cp.display().to_string());
    } else {
        if let Some(ct) = file.constants.c_tilde {
            constants.c_tilde = ct;
            constants.provenance = Provenance::Calibrated;
        }
        if let Some(d) = file.constants.delta_n {
            constants.delta_n = d;
            constants.provenance = Provenance::Calibrated;
        }
    }
    if constants.n != c.n {
        return Err(format!(
            "constants are for dimension {}, scenario has n = {}",
            constants.n, c.n
        ));
    }

    let (initial, initial_echo) = resolve_profile(
        &grid,
        &file.initial.family,
        file.initial.width,
        file.initial.amplitude,
        file.initial.norm,
        c.p / 2.0,
    )?;
    let (spatial, forcing_echo) = resolve_profile(
        &grid,
        &file.forcing.profile,
        file.forcing.width,
        file.forcing.amplitude,
        file.forcing.norm,
        c.p / 3.0,
    )?;
    let ap_terms: Vec<TrigTerm> = file
        .forcing
        .ap
        .iter()
        .map(|t| TrigTerm { lambda: t.lambda, a: t.a, b: t.b })
        .collect();
    let c0_terms: Vec<DecayingTerm> = file
        .forcing
        .c0
        .iter()
        .map(|t| DecayingTerm::new(t.c, t.kappa, t.shape))
        .collect();
    let forcing = Forcing {
        temporal: AAPSignal::new(TrigPolynomial::new(ap_terms), c0_terms),
        spatial,
    };
    let forcing_sup_norm = forcing.sup_spatial_norm(c.p / 3.0);

    let sigma_eff =
        bounds::rates(&cfg, &constants).sigma_eff(bounds::DEFAULT_SIGMA_MARGIN);
    let raw_burn = file.checks.burn_in.unwrap_or(5.0 / sigma_eff);
    let burn_in = (raw_burn / c.dt).ceil() * c.dt;

    let mut snapshot_times = Vec::new();
    for &t in &file.output.snapshot_times {
        let m = (t / c.dt).round();
        let snapped = m * c.dt;
        if !(0.0..=c.t_end).contains(&snapped) || (t - snapped).abs() > 1e-9 {
            return Err(format!("snapshot time {t} is not on the trajectory time grid"));
        }
        snapshot_times.push(snapped);
    }

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let out_dir = out_base.join(&stem);

    let manifest = Manifest {
        command: command.name().to_owned(),
        scenario: path.display().to_string(),
        config: c.clone(),
        initial: initial_echo,
        forcing_profile: forcing_echo,
        forcing_ap: file.forcing.ap.clone(),
        forcing_c0: file.forcing.c0.clone(),
        forcing_sup_norm,
        constants,
        constants_file,
        c_hat: file.checks.c_hat,
        c_resolvent: file.checks.c_resolvent,
        burn_in,
        sigma_eff,
        translation: file.translation.clone(),
        output_dir: out_dir.display().to_string(),
        snapshot_times: snapshot_times.clone(),
    };

    Ok(Scenario {
        cfg,
        constants,
        initial,
        forcing,
        c_hat: file.checks.c_hat,
        c_resolvent: file.checks.c_resolvent,
        burn_in,
        translation: file.translation,
        snapshot_times,
        out_dir,
        manifest,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CmdError> {
    fs::write(path, contents)
        .map_err(|e| CmdError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn trajectory_csv(s: &Scenario, traj: &crate::mild::Trajectory) -> String {
    let mut out = String::from("t,norm_p2,norm_p3_forcing,mass,min_u,max_u\n");
    for (m, t) in traj.times().iter().enumerate() {
        let state = traj.state(m);
        let f_norm = lp_norm(&s.forcing.at(*t), s.cfg.p / 3.0);
        let mass = weighted_integral(state);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in state.values() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let _ = writeln!(
            out,
            "{t:.16e},{:.16e},{f_norm:.16e},{mass:.16e},{lo:.16e},{hi:.16e}",
            traj.norms()[m]
        );
    }
    out
}

fn write_snapshots(
    s: &Scenario,
    engine: &MildEngine,
    traj: &crate::mild::Trajectory,
) -> Result<Vec<String>, CmdError> {
    let mut written = Vec::new();
    for (idx, &t) in s.snapshot_times.iter().enumerate() {
        let m = (t / s.cfg.dt).round() as usize;
        let u = traj.state(m);
        let v = if s.cfg.alpha == 0.0 {
            RadialField::zeros(s.cfg.grid.clone())
        } else {
            engine.resolvent().solve_resolvent(u, s.cfg.gamma, s.cfg.alpha)
        };
        let mut text = format!("# t = {t:.16e}\nr,u,v\n");
        for i in 0..s.cfg.grid.num_nodes {
            let _ = writeln!(
                text,
                "{:.16e},{:.16e},{:.16e}",
                s.cfg.grid.node(i),
                u.values()[i],
                v.values()[i]
            );
        }
        let name = format!("snapshot_{idx:03}.csv");
        write_file(&s.out_dir.join(&name), &text)?;
        written.push(name);
    }
    Ok(written)
}

fn execute(
    kind: CommandKind,
    path: &Path,
    out_base: &Path,
    constants_path: Option<&Path>,
) -> Result<(String, bool), CmdError> {
    let s = load_scenario(path, out_base, constants_path, kind).map_err(CmdError::Validation)?;
    fs::create_dir_all(&s.out_dir)
        .map_err(|e| CmdError::Validation(format!("cannot create {}: {e}", s.out_dir.display())))?;
    let manifest_json = serde_json::to_string_pretty(&s.manifest).expect("manifest serializes");
    write_file(&s.out_dir.join("manifest.json"), &manifest_json)?;

    let (report, passed) = match kind {
        CommandKind::Simulate => cmd_simulate(&s)?,
        CommandKind::VerifyLinear => cmd_verify_linear(&s)?,
        CommandKind::VerifyFixedPoint => cmd_verify_fixed_point(&s)?,
        CommandKind::VerifyDecay => cmd_verify_decay(&s)?,
        CommandKind::VerifyMassera => cmd_verify_massera(&s)?,
        CommandKind::Calibrate => cmd_calibrate(&s)?,
        CommandKind::TranslationScan => cmd_translation_scan(&s)?,
    };
    let envelope = json!({
        "command": kind.name(),
        "scenario": s.manifest.scenario,
        "passed": passed,
        "report": report,
    });
    let text = serde_json::to_string_pretty(&envelope).expect("report serializes");
    write_file(&s.out_dir.join("report.json"), &text)?;
    Ok((text, passed))
}

fn engine_for(s: &Scenario) -> MildEngine {
    MildEngine::new(s.cfg.clone(), s.constants).with_resolvent_constant(s.c_resolvent)
}

fn cmd_simulate(s: &Scenario) -> Result<(serde_json::Value, bool), CmdError> {
    let engine = engine_for(s);
    let traj = engine.evolve(&s.initial, &s.forcing)?;
    write_file(&s.out_dir.join("trajectory.csv"), &trajectory_csv(s, &traj))?;
    let snapshots = write_snapshots(s, &engine, &traj)?;
    let mass0 = weighted_integral(traj.state(0));
    let mass_end = weighted_integral(traj.state(traj.len() - 1));
    let report = json!({
        "steps": traj.len() - 1,
        "sup_norm": traj.sup_norm(),
        "final_norm": traj.norms().last(),
        "mass_initial": mass0,
        "mass_final": mass_end,
        "snapshots": snapshots,
    });
    Ok((report, true))
}

fn cmd_verify_linear(s: &Scenario) -> Result<(serde_json::Value, bool), CmdError> {
    let engine = engine_for(s);
    let omega = engine.evolve(&s.initial, &s.forcing)?;
    let u = engine.linear_solution_operator(&s.forcing, &omega, &s.initial)?;
    let report = bounds::linear_bound_check(
        &u,
        lp_norm(&s.initial, s.cfg.p / 2.0),
        &s.forcing,
        &omega,
        &s.cfg,
        &s.constants,
        s.c_resolvent,
    );
    let passed = report.passed;
    Ok((serde_json::to_value(report).expect("report serializes"), passed))
}

fn cmd_verify_fixed_point(s: &Scenario) -> Result<(serde_json::Value, bool), CmdError> {
    let engine = engine_for(s);
    let (fixed, diagnostics) = engine.picard_solve(&s.initial, &s.forcing)?;
    let evolved = engine.evolve(&s.initial, &s.forcing)?;
    let report = json!({
        "diagnostics": diagnostics,
        "sup_norm": fixed.sup_norm(),
        "stepping_gap": fixed.sup_distance(&evolved),
    });
    Ok((report, true))
}

fn cmd_verify_decay(s: &Scenario) -> Result<(serde_json::Value, bool), CmdError> {
    let engine = engine_for(s);
    let traj = engine.evolve(&s.initial, &s.forcing)?;
    write_file(&s.out_dir.join("trajectory.csv"), &trajectory_csv(s, &traj))?;
    let report =
        bounds::decay_check(&traj, &s.forcing, &s.cfg, &s.constants, s.c_hat, s.c_resolvent);
    let passed = report.rate_passed && report.envelope_passed;
    Ok((serde_json::to_value(report).expect("report serializes"), passed))
}

fn cmd_verify_massera(s: &Scenario) -> Result<(serde_json::Value, bool), CmdError> {
    let engine = engine_for(s);
    let report = engine.verify_massera_splitting(&s.initial, &s.forcing, s.burn_in)?;
    let max_diff = report.diff_norms.iter().fold(0.0_f64, |a, &b| a.max(b));
    let remainder_decays = max_diff < 1e-9 || report.final_diff <= 0.5 * max_diff;
    let passed = report.initial_layer_passed && remainder_decays;
    let value = json!({
        "burn_in": s.burn_in,
        "max_diff": max_diff,
        "remainder_decays": remainder_decays,
        "splitting": report,
    });
    Ok((value, passed))
}

fn cmd_calibrate(s: &Scenario) -> Result<(serde_json::Value, bool), CmdError> {
    let grid = s.cfg.grid.clone();
    let flow = HeatFlow::new(grid.clone());
    let profiles = semigroup::calibration_profiles(&grid);
    let times = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];
    let (n, p) = (s.cfg.n as f64, s.cfg.p);
    let pairs = [
        (p / 2.0, p / 2.0),
        (p * n / (4.0 * n - p), p / 2.0),
        (p / 3.0, p / 2.0),
    ];
    match semigroup::calibrate(&flow, &profiles, &times, &pairs) {
        Ok((constants, report)) => {
            let text = serde_json::to_string_pretty(&constants).expect("constants serialize");
            write_file(&s.out_dir.join("constants.json"), &text)?;
            Ok((serde_json::to_value(report).expect("report serializes"), true))
        }
        Err(e) => Ok((json!({ "error": e.to_string() }), false)),
    }
}

fn cmd_translation_scan(s: &Scenario) -> Result<(serde_json::Value, bool), CmdError> {
    let tr = s.translation.as_ref().ok_or_else(|| {
        CmdError::Validation("translation-scan needs a [translation] section".into())
    })?;
    let signal = &s.forcing.temporal.ap_part;
    let taus = find_translation_numbers(signal, tr.epsilon, tr.window_start, tr.window_length);
    let mut csv = String::from("tau,displacement_bound\n");
    for tau in &taus {
        let _ = writeln!(csv, "{tau:.16e},{:.16e}", signal.displacement_bound(*tau));
    }
    write_file(&s.out_dir.join("taus.csv"), &csv)?;
    let density = tr
        .num_windows
        .map(|nw| relative_density_check(signal, tr.epsilon, nw, tr.window_length));
    let passed = match &density {
        Some(d) => d.all_windows_hit,
        None => !taus.is_empty(),
    };
    let report = json!({
        "certified_count": taus.len(),
        "first": taus.first(),
        "last": taus.last(),
        "density": density,
    });
    Ok((report, passed))
}

thread_local! {
    static PANIC_MESSAGE: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn install_panic_hook() {
    panic::set_hook(Box::new(|info| {
        let msg = if let Some(s) = info.payload().downcast_ref::<&str>() {
            (*s).to_owned()
        } else if let Some(s) = info.payload().downcast_ref::<String>() {
            s.clone()
        } else {
            "unknown panic".to_owned()
        };
        PANIC_MESSAGE.with(|m| *m.borrow_mut() = Some(msg));
    }));
}

fn take_panic_message() -> String {
    PANIC_MESSAGE
        .with(|m| m.borrow_mut().take())
        .unwrap_or_else(|| "unknown panic".into())
}

fn outcome_code(result: Result<(String, bool), CmdError>) -> (u8, String, Option<String>) {
    match result {
        Ok((report, true)) => (EXIT_PASS, report, None),
        Ok((report, false)) => (EXIT_CHECK_FAILED, report, None),
        Err(CmdError::Validation(msg)) => {
            (EXIT_VALIDATION, String::new(), Some(format!("error: {msg}")))
        }
        Err(CmdError::Solver(e)) => {
            let code = match e {
                SolverError::BlowUp { .. } => EXIT_BLOW_UP,
                _ => EXIT_CHECK_FAILED,
            };
            (code, String::new(), Some(format!("error: {e}")))
        }
    }
}

fn run_one(
    kind: CommandKind,
    path: &Path,
    out_base: &Path,
    constants_path: Option<&Path>,
    print_lock: &Mutex<()>,
) -> u8 {
    let result = panic::catch_unwind(AssertUnwindSafe(|| {
        execute(kind, path, out_base, constants_path)
    }))
    .unwrap_or_else(|_| Err(CmdError::Validation(take_panic_message())));
    let (code, report, err) = outcome_code(result);
    let _guard = print_lock.lock().unwrap();
    if !report.is_empty() {
        println!("{report}");
    }
    if let Some(line) = err {
        eprintln!("{line}");
    }
    code
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("warn"),
    )
    .try_init();
    install_panic_hook();

    let (kind, args) = split(cli.command);
    let jobs = args.jobs.max(1).min(args.scenario.len().max(1));
    let print_lock = Mutex::new(());
    let constants_path = args.constants.as_deref();

    let worst = if jobs == 1 {
        let mut worst = 0u8;
        for path in &args.scenario {
            worst = worst.max(run_one(kind, path, &args.out, constants_path, &print_lock));
        }
        worst
    } else {
        let next = AtomicUsize::new(0);
        let worst = Mutex::new(0u8);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= args.scenario.len() {
                        break;
                    }
                    let code = run_one(
                        kind,
                        &args.scenario[i],
                        &args.out,
                        constants_path,
                        &print_lock,
                    );
                    let mut w = worst.lock().unwrap();
                    *w = (*w).max(code);
                });
            }
        });
        let w = *worst.lock().unwrap();
        w
    };
    ExitCode::from(worst)
}
