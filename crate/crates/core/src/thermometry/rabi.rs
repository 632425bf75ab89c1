use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::thermal::{thermal_pn, truncation};
use crate::stats::{thermal_quantile, CompensatedSum};
use crate::{Error, Result};

/// How the carrier Rabi frequency depends on the occupation number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RabiMethod {
    /// `Ω₀ L_n(η²)`.
    Laguerre,
    /// `Ω₀ (1 − η² n)`.
    #[default]
    Linearized,
}

/// Laguerre polynomial `L_n(x)` by the three-term recurrence.
pub fn laguerre(n: u64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 - x) * cur - k * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Carrier Rabi frequency for occupation `n`.
pub fn carrier_rabi(omega0: f64, eta: f64, n: u64, method: RabiMethod) -> f64 {
    omega0 * rabi_factor(eta * eta, n, method)
}

fn rabi_factor(eta_sq: f64, n: u64, method: RabiMethod) -> f64 {
    match method {
        RabiMethod::Laguerre => laguerre(n, eta_sq),
        RabiMethod::Linearized => 1.0 - eta_sq * n as f64,
    }
}

/// One thermally occupied motional mode seen by the probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalMode {
    /// Mode angular frequency (rad/s); only used for temperature conversion.
    pub frequency: f64,
    pub nbar: f64,
    pub eta: f64,
}

impl ThermalMode {
    pub fn new(frequency: f64, nbar: f64, eta: f64) -> Result<Self> {
        if !(nbar.is_finite() && nbar >= 0.0) {
            return Err(Error::invalid("mode.nbar", format!("must be ≥ 0, got {nbar}")));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::invalid("mode.eta", format!("must be ≥ 0, got {eta}")));
        }
        Ok(Self { frequency, nbar, eta })
    }

    fn is_active(&self) -> bool {
        self.nbar > 0.0 && self.eta > 0.0
    }
}

/// Carrier Rabi-flop model with finite contrast and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiModel {
    pub omega0: f64,
    pub modes: Vec<ThermalMode>,
    pub contrast: f64,
    pub offset: f64,
    pub method: RabiMethod,
    /// Optional exponential decay rate (1/s) of the flop contrast.
    pub decay_rate: Option<f64>,
}

impl RabiModel {
    pub fn new(omega0: f64, modes: Vec<ThermalMode>, contrast: f64, offset: f64) -> Result<Self> {
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(Error::invalid("omega0", format!("must be > 0, got {omega0}")));
        }
        if !(contrast > 0.0 && contrast <= 1.0) {
            return Err(Error::invalid(
                "contrast",
                format!("must lie in (0, 1], got {contrast}"),
            ));
        }
        if !(0.0..1.0).contains(&offset) {
            return Err(Error::invalid("offset", format!("must lie in [0, 1), got {offset}")));
        }
        if offset + contrast > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "contrast",
                format!("offset + contrast must not exceed 1, got {}", offset + contrast),
            ));
        }
        Ok(Self {
            omega0,
            modes,
            contrast,
            offset,
            method: RabiMethod::default(),
            decay_rate: None,
        })
    }

    pub fn with_method(mut self, method: RabiMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_decay_rate(mut self, rate: f64) -> Self {
        self.decay_rate = Some(rate);
        self
    }

    /// `Σ η_i² n̄_i` over the modes.
    pub fn sum_eta2_nbar(&self) -> f64 {
        self.modes.iter().map(|m| m.eta * m.eta * m.nbar).sum()
    }
}

/// Number of explicitly enumerated terms above which [`Evaluation::Auto`]
/// switches to Monte Carlo.
pub const DIRECT_TERM_LIMIT: u64 = 1_000_000;
pub const MIN_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_MC_SEED: u64 = 0x5EED_1762;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Evaluation {
    #[default]
    Auto,
    Direct,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluationPath {
    Direct,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalEvaluation {
    pub values: Vec<f64>,
    /// Monte Carlo standard errors of `values`; `None` on the direct path.
    pub std_errors: Option<Vec<f64>>,
    pub path: EvaluationPath,
}

/// Truncated and renormalised thermal distribution of one mode, with the
/// Rabi factor of every retained level.
struct LevelTable {
    weights: Vec<f64>,
    factors: Vec<f64>,
}

impl LevelTable {
    fn new(mode: &ThermalMode, method: RabiMethod) -> Self {
        let top = truncation(mode.nbar);
        let mut weights: Vec<f64> = (0..=top).map(|n| thermal_pn(mode.nbar, n)).collect();
        let norm: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= norm);
        let factors = rabi_factors(mode.eta * mode.eta, top, method);
        Self { weights, factors }
    }
}

fn rabi_factors(eta_sq: f64, top: u64, method: RabiMethod) -> Vec<f64> {
    match method {
        RabiMethod::Linearized => (0..=top).map(|n| 1.0 - eta_sq * n as f64).collect(),
        RabiMethod::Laguerre => {
            let mut out = Vec::with_capacity(top as usize + 1);
            let (mut prev, mut cur) = (1.0, 1.0 - eta_sq);
            out.push(prev);
            for k in 1..=top {
                out.push(cur);
                let kf = k as f64;
                let next = ((2.0 * kf + 1.0 - eta_sq) * cur - kf * prev) / (kf + 1.0);
                prev = cur;
                cur = next;
            }
            out
        }
    }
}

/// `Σ_n p_n cos(a (1 − x n))` over the full thermal distribution, in closed form.
fn linearized_thermal_cos(a: f64, eta_sq: f64, nbar: f64) -> f64 {
    let q = nbar / (nbar + 1.0);
    let w = Complex64::from_polar(q, -a * eta_sq);
    let sum = Complex64::from_polar(1.0, a) * (1.0 - q) / (1.0 - w);
    sum.re
}

/// Split of the active modes into enumerated ones and an optional mode that
/// is summed analytically.
struct Plan {
    enumerated: Vec<ThermalMode>,
    analytic: Option<ThermalMode>,
}

impl Plan {
    fn new(model: &RabiModel) -> Self {
        let mut enumerated: Vec<ThermalMode> = model.modes.iter().copied().filter(ThermalMode::is_active).collect();
        let analytic = match model.method {
            RabiMethod::Linearized => enumerated.pop(),
            RabiMethod::Laguerre => None,
        };
        Self { enumerated, analytic }
    }

    fn direct_terms(&self) -> u64 {
        self.enumerated
            .iter()
            .map(|m| truncation(m.nbar) + 1)
            .fold(1u64, |acc, k| acc.saturating_mul(k))
    }

    /// Coherence given the product of Rabi factors of the enumerated modes.
    fn inner(&self, phase: f64) -> f64 {
        match &self.analytic {
            Some(m) => linearized_thermal_cos(phase, m.eta * m.eta, m.nbar),
            None => phase.cos(),
        }
    }
}

/// Expected shelving probability at each probe time (s), choosing the
/// evaluation path automatically.
pub fn shelving_signal(model: &RabiModel, times: &[f64]) -> Vec<f64> {
    shelving_signal_with(model, times, Evaluation::Auto).values
}

/// Shelving probability with an explicit evaluation path.
///
/// The carrier Rabi frequency of a joint occupation `n⃗` is
/// `Ω₀ Π_i f_i(n_i)` with `f_i` given by the model's [`RabiMethod`]. Modes
/// with η = 0 or n̄ = 0 have `f_i ≡ 1` and are dropped. Under the linearized
/// method the last active mode is summed in closed form (a geometric series),
/// so only the remaining modes are enumerated or sampled.
pub fn shelving_signal_with(model: &RabiModel, times: &[f64], evaluation: Evaluation) -> SignalEvaluation {
    let plan = Plan::new(model);
    let (path, samples, seed) = match evaluation {
        Evaluation::Direct => (EvaluationPath::Direct, 0, 0),
        Evaluation::MonteCarlo { samples, seed } => (EvaluationPath::MonteCarlo, samples.max(1), seed),
        Evaluation::Auto => {
            if plan.direct_terms() <= DIRECT_TERM_LIMIT {
                (EvaluationPath::Direct, 0, 0)
            } else {
                (EvaluationPath::MonteCarlo, MIN_MC_SAMPLES, DEFAULT_MC_SEED)
            }
        }
    };

    let finish = |t: f64, coherence: f64| {
        let damping = model.decay_rate.map_or(1.0, |g| (-g * t).exp());
        model.offset + model.contrast * 0.5 * (1.0 - coherence * damping)
    };

    match path {
        EvaluationPath::Direct => {
            let terms = enumerate_terms(&plan, model.method);
            let values = times
                .par_iter()
                .map(|&t| {
                    let a = 2.0 * model.omega0 * t;
                    let c: CompensatedSum = terms.iter().map(|(w, f)| w * plan.inner(a * f)).collect();
                    finish(t, c.value())
                })
                .collect();
            SignalEvaluation {
                values,
                std_errors: None,
                path,
            }
        }
        EvaluationPath::MonteCarlo => {
            let factors = sample_factors(&plan, model.method, samples, seed);
            let n = factors.len() as f64;
            let (values, errors): (Vec<f64>, Vec<f64>) = times
                .par_iter()
                .map(|&t| {
                    let a = 2.0 * model.omega0 * t;
                    let mut sum = CompensatedSum::new();
                    let mut sum_sq = CompensatedSum::new();
                    for f in &factors {
                        let v = plan.inner(a * f);
                        sum.add(v);
                        sum_sq.add(v * v);
                    }
                    let mean = sum.value() / n;
                    let var = ((sum_sq.value() / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0);
                    let damping = model.decay_rate.map_or(1.0, |g| (-g * t).exp());
                    let se = 0.5 * model.contrast * damping * (var / n).sqrt();
                    (finish(t, mean), se)
                })
                .unzip();
            SignalEvaluation {
                values,
                std_errors: Some(errors),
                path,
            }
        }
    }
}

/// All `(weight, Π f_i)` pairs of the enumerated modes.
fn enumerate_terms(plan: &Plan, method: RabiMethod) -> Vec<(f64, f64)> {
    let mut terms = vec![(1.0, 1.0)];
    for mode in &plan.enumerated {
        let table = LevelTable::new(mode, method);
        let mut next = Vec::with_capacity(terms.len() * table.weights.len());
        for &(w, f) in &terms {
            for (pw, pf) in table.weights.iter().zip(&table.factors) {
                next.push((w * pw, f * pf));
            }
        }
        terms = next;
    }
    terms
}

/// Sampled `Π f_i` of the enumerated modes, one entry per Monte Carlo sample.
fn sample_factors(plan: &Plan, method: RabiMethod, samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            plan.enumerated
                .iter()
                .map(|m| {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    let n = thermal_quantile(m.nbar, u);
                    rabi_factor(m.eta * m.eta, n, method)
                })
                .product()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn mode(nbar: f64, eta: f64) -> ThermalMode {
        ThermalMode::new(0.0, nbar, eta).unwrap()
    }

    /// Explicit power-basis Laguerre polynomial, summed with exact integer
    /// binomials; independent of the recurrence.
    fn laguerre_direct(n: u64, x: f64) -> f64 {
        let mut sum = 0.0;
        let mut binom = 1.0f64; // C(n, 0)
        let mut fact = 1.0f64; // k!
        for k in 0..=n {
            if k > 0 {
                binom *= (n - k + 1) as f64 / k as f64;
                fact *= k as f64;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binom * x.powi(k as i32) / fact;
        }
        sum
    }

    #[test]
    fn laguerre_recurrence_matches_direct_sum() {
        for n in 0..=30 {
            for x in [1e-4, 0.01, 0.2, 0.7] {
                let r = laguerre(n, x);
                let d = laguerre_direct(n, x);
                assert!(
                    (r - d).abs() <= 1e-10 * d.abs().max(1e-300) + 1e-14,
                    "n={n} x={x}: {r} {d}"
                );
            }
        }
    }

    #[test]
    fn carrier_rabi_examples() {
        assert_eq!(carrier_rabi(3.0, 0.1, 0, RabiMethod::Laguerre), 3.0);
        assert_eq!(carrier_rabi(3.0, 0.1, 0, RabiMethod::Linearized), 3.0);
        assert_relative_eq!(
            carrier_rabi(1.0, 0.02, 100, RabiMethod::Linearized),
            0.96,
            max_relative = 1e-14
        );
        // 0.96039427937622 from a 40-digit evaluation of L_100(4e-4).
        let lag = carrier_rabi(1.0, 0.02, 100, RabiMethod::Laguerre);
        assert_relative_eq!(lag, 0.960_394_279_376_22, max_relative = 1e-12);
        // Third-order series; the next term is below 5e-9.
        let x: f64 = 4e-4;
        let series = 1.0 - 100.0 * x + 100.0 * 99.0 * x * x / 4.0 - 100.0 * 99.0 * 98.0 * x.powi(3) / 36.0;
        assert!((lag - series).abs() < 1e-8);
    }

    #[test]
    fn signal_starts_at_offset() {
        let m = RabiModel::new(1e5, vec![mode(20.0, 0.02), mode(15.0, 0.03)], 0.9, 0.05).unwrap();
        assert_relative_eq!(shelving_signal(&m, &[0.0])[0], 0.05, max_relative = 1e-14);
    }

    #[test]
    fn ground_state_is_pure_sinusoid() {
        let m = RabiModel::new(2.0 * PI * 1e4, vec![mode(0.0, 0.05)], 0.8, 0.1).unwrap();
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 3e-6).collect();
        for (t, p) in times.iter().zip(shelving_signal(&m, &times)) {
            let expected = 0.1 + 0.8 * 0.5 * (1.0 - (2.0 * m.omega0 * t).cos());
            assert!((p - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn single_mode_closed_form_matches_enumeration() {
        let nbar = 12.0;
        let eta = 0.05;
        let m = RabiModel::new(1.0, vec![mode(nbar, eta)], 1.0, 0.0).unwrap();
        let times = [0.3, 5.0, 17.0, 80.0];
        let got = shelving_signal(&m, &times);
        for (t, p) in times.iter().zip(got) {
            let mut c = 0.0;
            for n in 0..20_000u64 {
                c += thermal_pn(nbar, n) * (2.0 * t * (1.0 - eta * eta * n as f64)).cos();
            }
            assert!((p - 0.5 * (1.0 - c)).abs() < 1e-12, "{p}");
        }
    }

    #[test]
    fn zero_eta_mode_drops_out_exactly() {
        let base = vec![mode(30.0, 0.02), mode(10.0, 0.04)];
        let mut extra = base.clone();
        extra.insert(1, mode(50.0, 0.0));
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 7.3).collect();
        let a = RabiModel::new(0.1, base, 0.95, 0.02).unwrap();
        let b = RabiModel::new(0.1, extra, 0.95, 0.02).unwrap();
        assert_eq!(shelving_signal(&a, &times), shelving_signal(&b, &times));
    }

    #[test]
    fn hot_limit_approaches_half_contrast() {
        let m = RabiModel::new(1.0, vec![mode(400.0, 0.05), mode(400.0, 0.05)], 0.9, 0.04).unwrap();
        // Σ η² n̄ = 2: dephasing time ~ 1/(2 Ω₀ Σ η² n̄).
        let p = shelving_signal(&m, &[500.0, 1000.0]);
        for v in p {
            assert!((v - (0.04 + 0.45)).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn monte_carlo_agrees_with_direct_sum() {
        let m = RabiModel::new(1.0, vec![mode(30.0, 0.03), mode(20.0, 0.025)], 1.0, 0.0).unwrap();
        let times: Vec<f64> = (0..25).map(|k| k as f64 * 4.0).collect();
        let direct = shelving_signal_with(&m, &times, Evaluation::Direct);
        let mc = shelving_signal_with(
            &m,
            &times,
            Evaluation::MonteCarlo {
                samples: 100_000,
                seed: 7,
            },
        );
        assert_eq!(direct.path, EvaluationPath::Direct);
        let se = mc.std_errors.unwrap();
        for ((d, v), s) in direct.values.iter().zip(&mc.values).zip(&se) {
            assert!((d - v).abs() <= 3.0 * s + 1e-12, "{d} {v} {s}");
        }
    }

    #[test]
    fn auto_switches_to_monte_carlo_for_many_modes() {
        let modes = vec![mode(40.0, 0.02); 4];
        let m = RabiModel::new(1.0, modes, 1.0, 0.0).unwrap();
        let out = shelving_signal_with(&m, &[1.0, 2.0], Evaluation::Auto);
        assert_eq!(out.path, EvaluationPath::MonteCarlo);
        let again = shelving_signal_with(&m, &[1.0, 2.0], Evaluation::Auto);
        assert_eq!(out.values, again.values);
    }

    #[test]
    fn laguerre_multi_mode_direct() {
        let m = RabiModel::new(1.0, vec![mode(3.0, 0.1), mode(2.0, 0.1)], 1.0, 0.0)
            .unwrap()
            .with_method(RabiMethod::Laguerre);
        let p = shelving_signal(&m, &[0.0, 1.0, 10.0]);
        assert_eq!(p[0], 0.0);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(RabiModel::new(0.0, vec![], 1.0, 0.0).is_err());
        assert!(RabiModel::new(1.0, vec![], 0.9, 0.2).is_err());
        assert!(RabiModel::new(1.0, vec![], 1.2, 0.0).is_err());
        assert!(ThermalMode::new(1.0, -1.0, 0.1).is_err());
    }
}
