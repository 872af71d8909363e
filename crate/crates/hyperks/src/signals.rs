//! Almost periodic and asymptotically almost periodic temporal signals:
//! trigonometric polynomials, decaying remainders, Bohr translation numbers
//! and their relative-density certificates.
//!
//! A translation number tau is *certified* when the term-wise bound
//! 2 sum_j sqrt(a_j^2+b_j^2) |sin(lambda_j tau / 2)| < epsilon holds; the bound
//! dominates sup_t |h(t+tau) - h(t)| over all of R, so certification is exact
//! rather than sampled.

use serde::{Deserialize, Serialize};

/// Finite trigonometric polynomial sum_j a_j cos(lambda_j t) + b_j sin(lambda_j t).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrigPolynomial {
    terms: Vec<TrigTerm>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrigTerm {
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
}

impl TrigPolynomial {
    pub fn new(terms: Vec<TrigTerm>) -> Self {
        for t in &terms {
            assert!(
                t.lambda.is_finite() && t.a.is_finite() && t.b.is_finite(),
                "trig term data must be finite"
            );
        }
        for (i, ti) in terms.iter().enumerate() {
            for tj in &terms[i + 1..] {
                assert!(ti.lambda != tj.lambda, "frequencies must be pairwise distinct");
            }
        }
        TrigPolynomial { terms }
    }

    pub fn zero() -> Self {
        TrigPolynomial { terms: Vec::new() }
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|tm| tm.a * (tm.lambda * t).cos() + tm.b * (tm.lambda * t).sin())
            .sum()
    }

    /// Coefficient mass sum_j sqrt(a_j^2 + b_j^2), an upper bound for the sup norm.
    pub fn amplitude_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.a.hypot(t.b)).sum()
    }

    /// The polynomial t -> h(t + t0), rotated coefficients, same frequencies.
    pub fn time_shifted(&self, t0: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let (s, c) = (t.lambda * t0).sin_cos();
                TrigTerm { lambda: t.lambda, a: t.a * c + t.b * s, b: t.b * c - t.a * s }
            })
            .collect();
        TrigPolynomial { terms }
    }

    /// Upper bound on sup_t |h(t+tau) - h(t)| over all of R.
    pub fn displacement_bound(&self, tau: f64) -> f64 {
        2.0 * self
            .terms
            .iter()
            .map(|t| t.a.hypot(t.b) * (t.lambda * tau / 2.0).sin().abs())
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    Exponential,
    Stretched,
}

/// One vanishing-at-infinity term: c e^{-kappa t} or c (1+t)^{-kappa}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayingTerm {
    pub amplitude: f64,
    pub rate: f64,
    pub shape: DecayShape,
}

impl DecayingTerm {
    pub fn new(amplitude: f64, rate: f64, shape: DecayShape) -> Self {
        assert!(rate > 0.0, "decay rate must be positive, got {rate}");
        assert!(amplitude.is_finite(), "amplitude must be finite");
        DecayingTerm { amplitude, rate, shape }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.shape {
            DecayShape::Exponential => self.amplitude * (-self.rate * t).exp(),
            DecayShape::Stretched => self.amplitude * (1.0 + t).powf(-self.rate),
        }
    }

    /// sup over t >= 0 of |value|, attained at t = 0.
    pub fn sup_norm(&self) -> f64 {
        self.amplitude.abs()
    }
}

/// Asymptotically almost periodic signal, stored decomposed: an almost
/// periodic part plus vanishing terms. The decomposition is data, never
/// inferred from samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AAPSignal {
    pub ap_part: TrigPolynomial,
    pub c0_part: Vec<DecayingTerm>,
}

impl AAPSignal {
    pub fn new(ap_part: TrigPolynomial, c0_part: Vec<DecayingTerm>) -> Self {
        AAPSignal { ap_part, c0_part }
    }

    pub fn ap_only(ap_part: TrigPolynomial) -> Self {
        AAPSignal { ap_part, c0_part: Vec::new() }
    }

    pub fn zero() -> Self {
        AAPSignal { ap_part: TrigPolynomial::zero(), c0_part: Vec::new() }
    }

    /// The AP part alone is meaningful for t < 0; vanishing terms are
    /// evaluated as written there too (callers restrict to t >= 0).
    pub fn eval(&self, t: f64) -> f64 {
        self.ap_part.eval(t) + self.c0_part.iter().map(|d| d.eval(t)).sum::<f64>()
    }

    /// sup|ap| + sup|c0| with the sup of each part bounded term-wise.
    pub fn aap_norm(&self) -> f64 {
        self.ap_part.amplitude_sum() + self.c0_part.iter().map(|d| d.sup_norm()).sum::<f64>()
    }
}

/// (upper, lower) bracket of sup_t |h(t)|: coefficient mass above, a dense
/// scan over [0, t_scan] below.
pub fn ap_sup_norm(p: &TrigPolynomial, t_scan: f64) -> (f64, f64) {
    let upper = p.amplitude_sum();
    if p.terms().is_empty() {
        return (0.0, 0.0);
    }
    let max_freq = p.terms().iter().map(|t| t.lambda.abs()).fold(0.0_f64, f64::max);
    let step = if max_freq > 0.0 { (0.05 / max_freq).min(0.01 * t_scan) } else { t_scan };
    let steps = (t_scan / step).ceil() as usize;
    let mut lower = 0.0_f64;
    for k in 0..=steps {
        lower = lower.max(p.eval(k as f64 * step).abs());
    }
    (upper, lower)
}

/// Scan a window for certified epsilon-translation numbers. The scan step is
/// fine enough that the displacement bound cannot cross epsilon between
/// consecutive grid points without being detected near the crossing.
pub fn find_translation_numbers(
    p: &TrigPolynomial,
    epsilon: f64,
    window_start: f64,
    window_length: f64,
) -> Vec<f64> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    assert!(window_length > 0.0, "window length must be positive");
    let slope: f64 = p.terms().iter().map(|t| t.lambda.abs() * t.a.hypot(t.b)).sum();
    let step = if slope > 0.0 { (0.01_f64).min(epsilon / (4.0 * slope)) } else { 0.01 };
    let count = (window_length / step).ceil() as usize;
    let mut out = Vec::new();
    for k in 0..=count {
        let tau = window_start + k as f64 * step;
        if tau > window_start + window_length {
            break;
        }
        if p.displacement_bound(tau) < epsilon {
            out.push(tau);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub epsilon: f64,
    pub window_length: f64,
    pub num_windows: usize,
    pub all_windows_hit: bool,
    /// One certified tau per window, in order; None marks a miss.
    pub witnesses: Vec<Option<f64>>,
}

/// Check that every one of `num_windows` consecutive windows of the given
/// length contains a certified translation number. A miss is evidence the
/// inclusion length l_epsilon exceeds window_length, not an error.
pub fn relative_density_check(
    p: &TrigPolynomial,
    epsilon: f64,
    num_windows: usize,
    window_length: f64,
) -> DensityReport {
    assert!(num_windows >= 10, "need at least 10 windows for a density claim");
    let witnesses: Vec<Option<f64>> = (0..num_windows)
        .map(|k| {
            let start = k as f64 * window_length;
            find_translation_numbers(p, epsilon, start, window_length)
                .first()
                .copied()
        })
        .collect();
    let all_windows_hit = witnesses.iter().all(|w| w.is_some());
    DensityReport { epsilon, window_length, num_windows, all_windows_hit, witnesses }
}
