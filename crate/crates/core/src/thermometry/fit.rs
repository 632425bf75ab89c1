use std::f64::consts::PI;

use nalgebra::Matrix4;
use num_complex::Complex64;

use super::dataset::{ScanKind, ShelvingDataset};
use super::rabi::{shelving_signal_with, Evaluation, RabiMethod, RabiModel, ThermalMode};
use super::thermal::nbar_temperature;
use crate::optimize::{levenberg_marquardt, nelder_mead, LeastSquaresOptions, SimplexOptions};
use crate::{Error, Result};

const MIN_POINTS: usize = 8;

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// All modes share one η; report `Σ n̄ = Σ η² n̄ / η²`.
    pub equal_eta: bool,
    pub method: RabiMethod,
    pub evaluation: Evaluation,
    /// Mode angular frequency (rad/s) used to express the fitted per-mode
    /// occupation as a temperature (equal-η fits only).
    pub mode_frequency: Option<f64>,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            equal_eta: false,
            method: RabiMethod::Linearized,
            evaluation: Evaluation::Auto,
            mode_frequency: None,
            max_iterations: 500,
        }
    }
}

/// Result of a thermal Rabi-flop fit. Parameter order in the covariance is
/// `[Ω₀, Σ η² n̄, contrast, offset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationFit {
    pub omega0: f64,
    pub sum_eta2_nbar: f64,
    pub contrast: f64,
    pub offset: f64,
    /// `Σ_i n̄_i`, equal-η fits only.
    pub sum_nbar: Option<f64>,
    pub sum_nbar_std_error: Option<f64>,
    pub nbar_per_mode: Option<f64>,
    /// Temperature (K) of one mode at [`FitOptions::mode_frequency`].
    pub temperature: Option<f64>,
    pub covariance: Matrix4<f64>,
    pub std_errors: [f64; 4],
    pub chi_squared: f64,
    pub reduced_chi_squared: f64,
    /// Relative uncertainty of Ω₀ or Σ η² n̄ exceeds 100%, or the normal
    /// matrix is singular.
    pub ill_conditioned: bool,
    pub iterations: usize,
}

/// Shared-share model: every active mode carries `S / M` of `Σ η² n̄`.
struct FitModel<'a> {
    times: &'a [f64],
    etas: Vec<f64>,
    method: RabiMethod,
    evaluation: Evaluation,
}

impl FitModel<'_> {
    fn evaluate(&self, p: &[f64]) -> Vec<f64> {
        let share = p[1].max(0.0) / self.etas.len() as f64;
        let modes = self
            .etas
            .iter()
            .map(|&eta| ThermalMode {
                frequency: 0.0,
                nbar: share / (eta * eta),
                eta,
            })
            .collect();
        let model = RabiModel {
            omega0: p[0],
            modes,
            contrast: p[2],
            offset: p[3],
            method: self.method,
            decay_rate: None,
        };
        shelving_signal_with(&model, self.times, self.evaluation).values
    }
}

fn in_bounds(p: &[f64], lower: &[f64], upper: &[f64]) -> bool {
    p.iter().zip(lower).zip(upper).all(|((x, lo), hi)| x >= lo && x <= hi)
}

/// Dominant angular frequency of the mean-subtracted samples.
fn dominant_frequency(times: &[f64], y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let span = times[times.len() - 1] - times[0];
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let gap = gaps[gaps.len() / 2];
    let power = |w: f64| {
        let s: Complex64 = times
            .iter()
            .zip(y)
            .map(|(&t, &v)| (v - mean) * Complex64::from_polar(1.0, -w * t))
            .sum();
        s.norm_sqr()
    };
    let step = 2.0 * PI / (8.0 * span);
    let w_max = PI / gap;
    let mut best = (step, power(step));
    let mut w = step;
    while w <= w_max {
        let p = power(w);
        if p > best.1 {
            best = (w, p);
        }
        w += step;
    }
    // Golden-section refinement within one grid step.
    let (mut a, mut b) = ((best.0 - step).max(step * 0.5), best.0 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if power(c) > power(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Weighted fit of `y ≈ a + b g` returning `(a, b, χ²)`.
fn linear_fit(g: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let (mut sw, mut sg, mut sy, mut sgg, mut sgy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&gi, &yi), &wi) in g.iter().zip(y).zip(w) {
        sw += wi;
        sg += wi * gi;
        sy += wi * yi;
        sgg += wi * gi * gi;
        sgy += wi * gi * yi;
    }
    let det = sw * sgg - sg * sg;
    let (a, b) = if det.abs() > 1e-300 {
        ((sgg * sy - sg * sgy) / det, (sw * sgy - sg * sy) / det)
    } else {
        (sy / sw, 0.0)
    };
    let chi2 = g
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&gi, &yi), &wi)| wi * (yi - a - b * gi).powi(2))
        .sum();
    (a, b, chi2)
}

/// Starting point from the flop frequency and the decay envelope.
///
/// The envelope uses the continuous (high-n̄) limit of the thermal sum,
/// `Re[e^{iA} (1 + i A S/M)^{-M}]` with `A = 2Ω₀t`, scanned over `S` on a log
/// grid with contrast and offset solved linearly.
fn initial_guess(times: &[f64], y: &[f64], sigma: &[f64], modes: usize) -> [f64; 4] {
    let omega0 = 0.5 * dominant_frequency(times, y);
    let weights: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let a_max = 2.0 * omega0 * t_max;
    let m = modes as f64;
    let envelope = |s: f64| -> Vec<f64> {
        times
            .iter()
            .map(|&t| {
                let a = 2.0 * omega0 * t;
                let damp = Complex64::new(1.0, a * s / m).powf(-m);
                (Complex64::from_polar(1.0, a) * damp).re
            })
            .collect()
    };
    let mut best = {
        let (a, b, chi2) = linear_fit(&envelope(0.0), y, &weights);
        (0.0, a, b, chi2)
    };
    let (lo, hi) = ((1e-2 / a_max).ln(), (1e2 / a_max).ln());
    for k in 0..=80 {
        let s = (lo + (hi - lo) * k as f64 / 80.0).exp();
        let (a, b, chi2) = linear_fit(&envelope(s), y, &weights);
        if chi2 < best.3 {
            best = (s, a, b, chi2);
        }
    }
    let (s, a, b, _) = best;
    let contrast = (-2.0 * b).clamp(0.05, 1.0);
    let offset = (a - 0.5 * contrast).clamp(0.0, 0.9);
    [omega0, s, contrast, offset]
}

/// Fits `{Ω₀, Σ η² n̄, contrast, offset}` to a time-scan shelving dataset.
///
/// `etas` lists the Lamb-Dicke parameter of every addressed mode; each mode
/// is assigned an equal share of `Σ η² n̄`. The search runs a simplex from
/// the spectral/envelope starting point and refines it by finite-difference
/// Levenberg-Marquardt until the relative parameter change drops below 10⁻⁸.
pub fn fit_occupation(data: &ShelvingDataset, etas: &[f64], options: &FitOptions) -> Result<OccupationFit> {
    if data.kind() != ScanKind::TimeScan {
        return Err(Error::invalid("data", "occupation fits need a time scan"));
    }
    if data.len() < MIN_POINTS {
        return Err(Error::invalid(
            "data",
            format!("need at least {MIN_POINTS} points, got {}", data.len()),
        ));
    }
    if etas.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::invalid("etas", "must be finite and ≥ 0"));
    }
    let active: Vec<f64> = etas.iter().copied().filter(|&e| e > 0.0).collect();
    if active.is_empty() {
        return Err(Error::invalid("etas", "at least one mode needs η > 0"));
    }
    let equal_eta = if options.equal_eta {
        let first = etas[0];
        if etas.iter().any(|&e| (e - first).abs() > 1e-12 * first) || first <= 0.0 {
            return Err(Error::invalid("etas", "equal_eta requires identical positive η values"));
        }
        Some(first)
    } else {
        None
    };

    let times = data.abscissae_si();
    let y = data.probabilities();
    let sigma = data.sigmas();
    let model = FitModel {
        times: &times,
        etas: active,
        method: options.method,
        evaluation: options.evaluation,
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        model
            .evaluate(p)
            .iter()
            .zip(&y)
            .zip(&sigma)
            .map(|((m, d), s)| (m - d) / s)
            .collect()
    };

    let start = initial_guess(&times, &y, &sigma, model.etas.len());
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let s_scale = 1.0 / (2.0 * start[0] * t_max);
    let lower = vec![0.0, 0.0, 0.0, 0.0];
    let upper = vec![f64::INFINITY, f64::INFINITY, 1.0, 1.0];

    let chi2 = |p: &[f64]| -> f64 {
        if !in_bounds(p, &lower, &upper) {
            return f64::INFINITY;
        }
        residuals(p).iter().map(|r| r * r).sum()
    };
    let steps = [0.01 * start[0], (0.3 * start[1]).max(0.05 * s_scale), 0.05, 0.02];
    let simplex = nelder_mead(
        chi2,
        &start,
        &steps,
        &SimplexOptions {
            max_iterations: 2000,
            x_tolerance: 1e-6,
            f_tolerance: 1e-10,
        },
    );

    let lm = levenberg_marquardt(
        residuals,
        &simplex.x,
        &LeastSquaresOptions {
            max_iterations: options.max_iterations,
            x_tolerance: 1e-8,
            fd_relative_step: 1e-6,
            lower,
            upper,
            scales: vec![start[0], s_scale, 1e-2, 1e-2],
        },
    );
    if !lm.converged {
        return Err(Error::NonConvergence {
            what: "occupation fit".into(),
            iterations: lm.iterations,
        });
    }

    let p = &lm.x;
    let (covariance, singular) = match &lm.covariance {
        Some(c) => (Matrix4::from_iterator(c.iter().copied()), false),
        None => (Matrix4::from_element(f64::NAN), true),
    };
    let std_errors = [0, 1, 2, 3].map(|k| covariance[(k, k)].max(0.0).sqrt());
    let ill_conditioned = singular || std_errors[0] > p[0].abs() || std_errors[1] > p[1].abs();
    let dof = (times.len() - 4).max(1) as f64;

    let sum_nbar = equal_eta.map(|eta| p[1] / (eta * eta));
    let sum_nbar_std_error = equal_eta.map(|eta| std_errors[1] / (eta * eta));
    let nbar_per_mode = sum_nbar.map(|s| s / etas.len() as f64);
    let temperature = match (nbar_per_mode, options.mode_frequency) {
        (Some(n), Some(w)) => Some(nbar_temperature(n, w)),
        _ => None,
    };

    Ok(OccupationFit {
        omega0: p[0],
        sum_eta2_nbar: p[1],
        contrast: p[2],
        offset: p[3],
        sum_nbar,
        sum_nbar_std_error,
        nbar_per_mode,
        temperature,
        covariance,
        std_errors,
        chi_squared: lm.cost,
        reduced_chi_squared: lm.cost / dof,
        ill_conditioned,
        iterations: simplex.iterations + lm.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::mhz;
    use crate::thermometry::rabi::shelving_signal;

    fn synthetic(omega0: f64, sum_nbar: f64, eta: f64, contrast: f64, offset: f64, times: &[f64]) -> Vec<f64> {
        let modes = vec![ThermalMode::new(mhz(1.1), sum_nbar / 2.0, eta).unwrap(); 2];
        let m = RabiModel::new(omega0, modes, contrast, offset).unwrap();
        shelving_signal(&m, times)
    }

    fn times(n: usize, t_max: f64) -> Vec<f64> {
        (0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let omega0 = 2.0 * PI * 20e3;
        let ts = times(40, 250e-6);
        let y = synthetic(omega0, 129.0, 0.0146, 0.9, 0.03, &ts);
        let data = ShelvingDataset::from_si(ScanKind::TimeScan, &ts, &y, &vec![0.05; 40]).unwrap();
        let fit = fit_occupation(
            &data,
            &[0.0146, 0.0146],
            &FitOptions {
                equal_eta: true,
                mode_frequency: Some(mhz(1.1)),
                ..Default::default()
            },
        )
        .unwrap();
        let s = 0.0146f64.powi(2) * 129.0;
        assert!((fit.omega0 / omega0 - 1.0).abs() < 1e-6, "{}", fit.omega0 / omega0);
        assert!((fit.sum_eta2_nbar / s - 1.0).abs() < 1e-6, "{}", fit.sum_eta2_nbar / s);
        assert!((fit.contrast - 0.9).abs() < 1e-6 && (fit.offset - 0.03).abs() < 1e-6);
        assert!((fit.sum_nbar.unwrap() - 129.0).abs() < 1e-4);
        let t = fit.temperature.unwrap();
        assert!((t - 3.43e-3).abs() < 0.05e-3, "{t}");
        assert!(!fit.ill_conditioned);
    }

    #[test]
    fn fitted_occupation_is_invariant_under_time_rescaling() {
        let omega0 = 2.0 * PI * 20e3;
        let ts = times(40, 250e-6);
        let y = synthetic(omega0, 129.0, 0.0146, 0.9, 0.03, &ts);
        let noisy: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(k, v)| (v + 0.04 * ((k as f64 * 1.7).sin())).clamp(0.0, 1.0))
            .collect();
        let sig = vec![0.05; 40];
        let opts = FitOptions::default();
        let a = fit_occupation(
            &ShelvingDataset::from_si(ScanKind::TimeScan, &ts, &noisy, &sig).unwrap(),
            &[0.0146; 2],
            &opts,
        )
        .unwrap();
        let scaled: Vec<f64> = ts.iter().map(|t| t * 3.0).collect();
        let b = fit_occupation(
            &ShelvingDataset::from_si(ScanKind::TimeScan, &scaled, &noisy, &sig).unwrap(),
            &[0.0146; 2],
            &opts,
        )
        .unwrap();
        assert!(
            (a.sum_eta2_nbar / b.sum_eta2_nbar - 1.0).abs() < 1e-6,
            "{} {}",
            a.sum_eta2_nbar,
            b.sum_eta2_nbar
        );
        assert!((a.omega0 / (3.0 * b.omega0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ts = times(5, 1e-4);
        let data = ShelvingDataset::from_si(ScanKind::TimeScan, &ts, &[0.1; 5], &[0.05; 5]).unwrap();
        assert!(fit_occupation(&data, &[0.01], &FitOptions::default()).is_err());
        let ts = times(10, 1e-4);
        let data = ShelvingDataset::from_si(ScanKind::FrequencyScan, &ts, &[0.1; 10], &[0.05; 10]).unwrap();
        assert!(fit_occupation(&data, &[0.01], &FitOptions::default()).is_err());
        let data = ShelvingDataset::from_si(ScanKind::TimeScan, &ts, &[0.1; 10], &[0.05; 10]).unwrap();
        assert!(fit_occupation(&data, &[0.0], &FitOptions::default()).is_err());
        let opts = FitOptions {
            equal_eta: true,
            ..Default::default()
        };
        assert!(fit_occupation(&data, &[0.01, 0.02], &opts).is_err());
    }
}
