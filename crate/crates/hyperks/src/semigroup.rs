//! Heat propagation on H^n for n in {2, 3}, the dispersive estimate
//! machinery (rates gamma_{p,q}, prefactor h_n) and empirical calibration
//! of the constants C-tilde and delta_n.
//!
//! The n = 3 propagator is spectral: w = sinh(r) u turns the radial heat
//! equation into w_t = w_rr - w on a line, solved exactly per mode by a
//! discrete sine transform. The n = 2 propagator is a direct spherical
//! convolution against the kernel, O(N^2), kept as an independent slow
//! path that exercises the kernel code.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::geometry::{lp_norm, radial_divergence, RadialField, RadialGrid};
use crate::numerics::{gauss_legendre, sinh_over_x, x_over_sinh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Default,
    Calibrated,
}

/// Constants of the dispersive estimate: prefactor scale C-tilde and the
/// rate scale delta_n.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DispersiveConstants {
    pub n: usize,
    pub c_tilde: f64,
    pub delta_n: f64,
    pub provenance: Provenance,
}

impl DispersiveConstants {
    /// Safe starting point: delta_n at the spectral gap (n-1)^2/4,
    /// C-tilde = 2. Refined by calibrate.
    pub fn defaults(n: usize) -> Self {
        assert!(n >= 2);
        let gap = ((n - 1) as f64).powi(2) / 4.0;
        DispersiveConstants {
            n,
            c_tilde: 2.0,
            delta_n: gap,
            provenance: Provenance::Default,
        }
    }
}

/// Prefactor h_n(t) = C-tilde * max(t^{-n/2}, 1).
pub fn h_n(t: f64, constants: &DispersiveConstants) -> f64 {
    assert!(t > 0.0, "h_n needs t > 0");
    constants.c_tilde * (t.powf(-(constants.n as f64) / 2.0)).max(1.0)
}

/// Decay rate gamma_{p,q} = (delta_n/2) [(1/p - 1/q) + (8/q)(1 - 1/p)].
/// q may be f64::INFINITY.
pub fn gamma_pq(p: f64, q: f64, constants: &DispersiveConstants) -> f64 {
    assert!((1.0..=q).contains(&p), "need 1 <= p <= q");
    constants.delta_n / 2.0 * ((1.0 / p - 1.0 / q) + 8.0 / q * (1.0 - 1.0 / p))
}

/// Heat kernel density with respect to hyperbolic volume.
///
/// n = 3 is closed form; n = 2 carries an integral evaluated after the
/// substitution s = r + xi^2, which cancels the inverse square root at the
/// lower endpoint through
/// cosh s - cosh r = 2 sinh(r + xi^2/2) sinh(xi^2/2).
pub fn heat_kernel(t: f64, r: f64, n: usize) -> f64 {
    assert!(t > 0.0, "heat kernel needs t > 0");
    assert!(r >= 0.0);
    match n {
        3 => {
            (4.0 * PI * t).powf(-1.5) * (-t).exp() * x_over_sinh(r) * (-r * r / (4.0 * t)).exp()
        }
        2 => {
            let integral = crate::numerics::adaptive_simpson(
                &|xi: f64| {
                    let s = r + xi * xi;
                    let scale = (r + xi * xi / 2.0).sinh() * sinh_over_x(xi * xi / 2.0);
                    if scale == 0.0 {
                        return 0.0;
                    }
                    2.0 * s * (-s * s / (4.0 * t)).exp() / scale.sqrt()
                },
                0.0,
                (184.0 * t).powf(0.25).max(0.5),
                1e-9,
            );
            2f64.sqrt() / (4.0 * PI * t).powf(1.5) * (-t / 4.0).exp() * integral
        }
        _ => panic!("heat kernel implemented for n in {{2,3}} only"),
    }
}

struct KernelTable {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// The heat semigroup on radial fields of a fixed grid.
pub struct HeatFlow {
    grid: Arc<RadialGrid>,
    fft: Option<Arc<dyn Fft<f64>>>,
    symbols: Mutex<HashMap<u64, Arc<Vec<f64>>>>,
    kernel_tables: Mutex<HashMap<u64, Arc<KernelTable>>>,
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
}

impl HeatFlow {
    pub fn new(grid: Arc<RadialGrid>) -> Self {
        assert!(
            grid.n == 2 || grid.n == 3,
            "propagation implemented for n in {{2,3}} only"
        );
        let fft = if grid.n == 3 {
            Some(FftPlanner::new().plan_fft_forward(2 * (grid.num_nodes - 1)))
        } else {
            None
        };
        let (gl_nodes, gl_weights) = gauss_legendre(12);
        HeatFlow {
            grid,
            fft,
            symbols: Mutex::new(HashMap::new()),
            kernel_tables: Mutex::new(HashMap::new()),
            gl_nodes,
            gl_weights,
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// e^{t Delta} applied to a field. t = 0 is the exact identity.
    pub fn apply(&self, field: &RadialField, t: f64) -> RadialField {
        assert!(t >= 0.0, "negative propagation time");
        assert!(field.grid().as_ref() == self.grid.as_ref(), "field grid mismatch");
        if t == 0.0 {
            return field.clone();
        }
        match self.grid.n {
            3 => self.apply_h3(field, t),
            2 => self.apply_h2(field, t),
            _ => unreachable!(),
        }
    }

    /// e^{t Delta} (div V), divergence first; commutes with the flow.
    pub fn apply_div(&self, vfield: &RadialField, t: f64) -> RadialField {
        self.apply(&radial_divergence(vfield), t)
    }

    fn symbol_for(&self, t: f64) -> Arc<Vec<f64>> {
        let mut cache = self.symbols.lock().unwrap();
        cache
            .entry(t.to_bits())
            .or_insert_with(|| {
                let m = self.grid.num_nodes - 1;
                let sym: Vec<f64> = (1..m)
                    .map(|k| {
                        let lambda = k as f64 * PI / self.grid.r_max;
                        (-t * (1.0 + lambda * lambda)).exp()
                    })
                    .collect();
                Arc::new(sym)
            })
            .clone()
    }

    fn apply_h3(&self, field: &RadialField, t: f64) -> RadialField {
        let g = &self.grid;
        let m = g.num_nodes - 1;
        let symbol = self.symbol_for(t);
        let fft = self.fft.as_ref().unwrap();

        // odd extension of w = sinh(r) u into a length-2m complex buffer;
        // the imaginary part of the FFT carries the sine coefficients
        let mut w_in = vec![0.0; g.num_nodes];
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * m];
        for i in 1..m {
            let w = g.node(i).sinh() * field.values()[i];
            w_in[i] = w;
            buf[i].re = w;
            buf[2 * m - i].re = -w;
        }
        fft.process(&mut buf);
        let mut evolved = vec![Complex::new(0.0, 0.0); 2 * m];
        for k in 1..m {
            let coeff = -0.5 * buf[k].im * symbol[k - 1];
            evolved[k].re = coeff;
            evolved[2 * m - k].re = -coeff;
        }
        fft.process(&mut evolved);

        let scale = 1.0 / m as f64;
        let mut w_out = vec![0.0; g.num_nodes];
        for i in 1..m {
            w_out[i] = -evolved[i].im * scale;
        }
        self.refresh_far_tail(&w_in, t, &mut w_out);

        let mut out = vec![0.0; g.num_nodes];
        for i in 1..m {
            out[i] = w_out[i] / g.node(i).sinh();
        }
        // axis value from the odd-series derivative of w
        out[0] = (8.0 * w_out[1] - w_out[2]) / (6.0 * g.spacing);
        RadialField::new(g.clone(), out)
    }

    /// The transform's rounding error is absolute, a few eps * max|w| at
    /// every node regardless of the local value. Under the sinh^2 volume
    /// weight those far-field crumbs integrate to visible mass, so every
    /// node whose evolved value sits below 2e-5 of the peak (where the
    /// coherent part of that error would exceed ~5e-13 relative) is
    /// recomputed by direct image quadrature, which is accurate in relative
    /// terms at any magnitude.
    fn refresh_far_tail(&self, w_in: &[f64], t: f64, w_out: &mut [f64]) {
        let g = &self.grid;
        let m = g.num_nodes - 1;
        let mut peak = 0.0_f64;
        for &w in &w_out[1..m] {
            peak = peak.max(w.abs());
        }
        let floor = 2e-5 * peak;
        let mut cut = m;
        while cut > 1 && w_out[cut - 1].abs() < floor {
            cut -= 1;
        }
        if cut >= m {
            return;
        }
        let h = g.spacing;
        // e^{-700} underflows the kernel to an exact zero, so this window
        // loses nothing representable in f64
        let dmax = (((2800.0 * t).sqrt() / h).ceil() as usize).min(2 * m);
        let kernel: Vec<f64> = (0..=dmax)
            .map(|d| {
                let x = d as f64 * h;
                (-x * x / (4.0 * t)).exp()
            })
            .collect();
        let supp_lo = (1..m).find(|&j| w_in[j] != 0.0).unwrap_or(m);
        let supp_hi = (1..m).rev().find(|&j| w_in[j] != 0.0).unwrap_or(0);
        let pref = h * (-t).exp() / (4.0 * PI * t).sqrt();
        for i in cut..m {
            let j_lo = i.saturating_sub(dmax).max(supp_lo);
            let j_hi = (i + dmax).min(supp_hi);
            let mut acc = 0.0;
            for j in j_lo..=j_hi {
                let d = i.abs_diff(j);
                let mut k = kernel[d];
                if i + j <= dmax {
                    k -= kernel[i + j];
                }
                acc += k * w_in[j];
            }
            w_out[i] = pref * acc;
        }
    }

    fn kernel_table(&self, t: f64) -> Arc<KernelTable> {
        let mut cache = self.kernel_tables.lock().unwrap();
        cache
            .entry(t.to_bits())
            .or_insert_with(|| {
                // covers the outward drift (speed n-1 = 1) plus the
                // Gaussian spread down to e^{-36} relative
                let s_max = t + 12.0 * t.sqrt() + 2.0;
                let width = (0.5 * (2.0 * t).sqrt()).clamp(0.1, 1.0);
                let panels = (s_max / width).ceil() as usize;
                let mut nodes = Vec::with_capacity(panels * self.gl_nodes.len());
                let mut weights = Vec::with_capacity(panels * self.gl_nodes.len());
                for p in 0..panels {
                    let lo = s_max * p as f64 / panels as f64;
                    let hi = s_max * (p + 1) as f64 / panels as f64;
                    let half = 0.5 * (hi - lo);
                    let mid = 0.5 * (hi + lo);
                    for (x, w) in self.gl_nodes.iter().zip(&self.gl_weights) {
                        let s = mid + half * x;
                        nodes.push(s);
                        weights.push(2.0 * PI * heat_kernel(t, s, 2) * s.sinh() * w * half);
                    }
                }
                Arc::new(KernelTable { nodes, weights })
            })
            .clone()
    }

    fn apply_h2(&self, field: &RadialField, t: f64) -> RadialField {
        let g = &self.grid;
        let table = self.kernel_table(t);
        let mut out = vec![0.0; g.num_nodes];
        for (i, slot) in out.iter_mut().enumerate() {
            let r = g.node(i);
            let mut acc = 0.0;
            for (s, w) in table.nodes.iter().zip(&table.weights) {
                acc += w * self.circle_mean(field, r, *s);
            }
            *slot = acc;
        }
        RadialField::new(g.clone(), out)
    }

    /// Mean of the field over the geodesic circle of radius s centered at
    /// radius r: (1/pi) int_a^b u(rho) sinh(rho)
    /// [(cosh rho - cosh a)(cosh b - cosh rho)]^{-1/2} drho with a=|r-s|,
    /// b=r+s. The endpoint square roots cancel under rho = a + xi^2 and
    /// rho = b - eta^2.
    fn circle_mean(&self, field: &RadialField, r: f64, s: f64) -> f64 {
        let a = (r - s).abs();
        let b = r + s;
        if b - a < 1e-4 {
            return self.interp(field, 0.5 * (a + b));
        }
        if a >= self.grid.r_max {
            return 0.0;
        }
        (self.half_circle(field, a, b, true) + self.half_circle(field, a, b, false)) / PI
    }

    fn half_circle(&self, field: &RadialField, a: f64, b: f64, left: bool) -> f64 {
        let span = (0.5 * (b - a)).sqrt();
        let panels = (span / 0.75).ceil().max(1.0) as usize;
        let mut acc = 0.0;
        for p in 0..panels {
            let lo = span * p as f64 / panels as f64;
            let hi = span * (p + 1) as f64 / panels as f64;
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, w) in self.gl_nodes.iter().zip(&self.gl_weights) {
                let xi = mid + half * x;
                let rho = if left { a + xi * xi } else { b - xi * xi };
                let u = self.interp(field, rho);
                if u == 0.0 {
                    continue;
                }
                // near factor: (cosh rho - cosh endpoint)/xi^2, regular
                let near = if left {
                    (a + xi * xi / 2.0).sinh() * sinh_over_x(xi * xi / 2.0)
                } else {
                    (b - xi * xi / 2.0).sinh() * sinh_over_x(xi * xi / 2.0)
                };
                let far = if left {
                    2.0 * ((b + rho) / 2.0).sinh() * ((b - rho) / 2.0).sinh()
                } else {
                    2.0 * ((rho + a) / 2.0).sinh() * ((rho - a) / 2.0).sinh()
                };
                acc += w * half * 2.0 * u * rho.sinh() / (near * far).sqrt();
            }
        }
        acc
    }

    /// Six-point Lagrange interpolation of the field; zero beyond r_max.
    fn interp(&self, field: &RadialField, rho: f64) -> f64 {
        let g = &self.grid;
        if rho >= g.r_max {
            return 0.0;
        }
        let x = (rho / g.spacing).max(0.0);
        let base = (x as usize).saturating_sub(2).min(g.num_nodes - 6);
        let mut total = 0.0;
        for j in 0..6 {
            let xj = (base + j) as f64;
            let mut w = 1.0;
            for k in 0..6 {
                if k != j {
                    let xk = (base + k) as f64;
                    w *= (x - xk) / (xj - xk);
                }
            }
            total += w * field.values()[base + j];
        }
        total
    }
}

/// One certified comparison: lhs = ||e^{tD}u||_q against the dispersive
/// right-hand side assembled from the constants.
#[derive(Debug, Clone, Copy)]
struct DispersiveSample {
    t: f64,
    lhs: f64,
    input_norm: f64,
}

fn dispersive_samples(
    flow: &HeatFlow,
    profiles: &[RadialField],
    times: &[f64],
    p: f64,
    q: f64,
) -> Vec<DispersiveSample> {
    let mut samples = Vec::with_capacity(profiles.len() * times.len());
    for u0 in profiles {
        let input_norm = lp_norm(u0, p);
        for &t in times {
            let lhs = lp_norm(&flow.apply(u0, t), q);
            samples.push(DispersiveSample { t, lhs, input_norm });
        }
    }
    samples
}

fn worst_ratio(samples: &[DispersiveSample], p: f64, q: f64, c: &DispersiveConstants) -> f64 {
    let theta = 1.0 / p - 1.0 / q;
    let gamma = gamma_pq(p, q, c);
    samples
        .iter()
        .map(|s| s.lhs / (h_n(s.t, c).powf(theta) * (-s.t * gamma).exp() * s.input_norm))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct DispersiveReport {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub max_ratio: f64,
    pub certified: bool,
}

/// Checks the dispersive estimate on given profiles and times; violations
/// are report content, not errors.
pub fn check_dispersive(
    flow: &HeatFlow,
    profiles: &[RadialField],
    times: &[f64],
    p: f64,
    q: f64,
    constants: &DispersiveConstants,
) -> DispersiveReport {
    assert!((1.0..=q).contains(&p), "need 1 <= p <= q");
    assert!(times.iter().all(|t| *t > 0.0));
    let samples = dispersive_samples(flow, profiles, times, p, q);
    let max_ratio = worst_ratio(&samples, p, q, constants);
    DispersiveReport {
        n: flow.grid().n,
        p,
        q,
        max_ratio,
        certified: max_ratio <= 1.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub c_tilde: f64,
    pub delta_n: f64,
    pub worst_ratio: f64,
    pub profiles_used: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("no dispersive constants in the search box certify the profile sweep")]
pub struct CalibrationFailed;

/// The standard calibration family: three Gaussian profiles of distinct
/// widths and amplitudes.
pub fn calibration_profiles(grid: &Arc<RadialGrid>) -> Vec<RadialField> {
    [(1.0, 0.5), (1.0, 1.0), (0.5, 2.0)]
        .iter()
        .map(|&(a, w): &(f64, f64)| {
            RadialField::from_fn(grid.clone(), move |r| a * (-(r / w) * (r / w)).exp())
        })
        .collect()
}

/// Searches a logarithmic grid for the largest delta_n, and the smallest
/// C-tilde >= 1, certifying every supplied (p, q) pair. Propagations are
/// computed once; the search itself is arithmetic on the stored norms.
/// Deterministic for fixed inputs.
pub fn calibrate(
    flow: &HeatFlow,
    profiles: &[RadialField],
    times: &[f64],
    pairs: &[(f64, f64)],
) -> Result<(DispersiveConstants, CalibrationReport), CalibrationFailed> {
    assert!(!profiles.is_empty() && !times.is_empty() && !pairs.is_empty());
    let n = flow.grid().n;
    let tables: Vec<(f64, f64, Vec<DispersiveSample>)> = pairs
        .iter()
        .map(|&(p, q)| (p, q, dispersive_samples(flow, profiles, times, p, q)))
        .collect();

    let delta_lo: f64 = 1e-3;
    let delta_hi = ((n - 1) as f64).powi(2);
    let grid_len = 241;
    for j in (0..grid_len).rev() {
        let delta = delta_lo * (delta_hi / delta_lo).powf(j as f64 / (grid_len - 1) as f64);
        let probe = DispersiveConstants {
            n,
            c_tilde: 1.0,
            delta_n: delta,
            provenance: Provenance::Calibrated,
        };
        let mut delta_ok = true;
        let mut c_needed: f64 = 1.0;
        for (p, q, samples) in &tables {
            if p == q {
                // the prefactor cancels: these pairs constrain delta alone
                if worst_ratio(samples, *p, *q, &probe) > 1.0 {
                    delta_ok = false;
                    break;
                }
            } else {
                let theta = 1.0 / p - 1.0 / q;
                let gamma = gamma_pq(*p, *q, &probe);
                for s in samples {
                    let bare = (s.t.powf(-(n as f64) / 2.0)).max(1.0).powf(theta)
                        * (-s.t * gamma).exp()
                        * s.input_norm;
                    c_needed = c_needed.max((s.lhs / bare).powf(1.0 / theta));
                }
            }
        }
        if delta_ok && c_needed <= 1e3 {
            let constants = DispersiveConstants {
                n,
                c_tilde: c_needed,
                delta_n: delta,
                provenance: Provenance::Calibrated,
            };
            let worst = tables
                .iter()
                .map(|(p, q, samples)| worst_ratio(samples, *p, *q, &constants))
                .fold(0.0, f64::max);
            let report = CalibrationReport {
                n,
                c_tilde: constants.c_tilde,
                delta_n: constants.delta_n,
                worst_ratio: worst,
                profiles_used: profiles.len(),
            };
            return Ok((constants, report));
        }
    }
    Err(CalibrationFailed)
}
