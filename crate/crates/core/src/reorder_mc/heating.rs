use std::io::{Read, Write};

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use super::curve::ReorderCurve;
use crate::optimize::{nelder_mead, numeric_jacobian, LeastSquaresOptions, SimplexOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkTimeRecord {
    /// Uncooled interval (s).
    pub dark_time: f64,
    pub p_stable: f64,
    pub sigma: f64,
}

/// Measured order-stability probability versus dark time.
#[derive(Debug, Clone, PartialEq)]
pub struct DarkTimeDataset {
    records: Vec<DarkTimeRecord>,
}

const DARK_HEADER: [&str; 3] = ["dark_time_s", "p_stable", "sigma"];

impl DarkTimeDataset {
    pub fn new(records: Vec<DarkTimeRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if !(r.dark_time.is_finite() && r.dark_time >= 0.0) {
                return Err(Error::Csv {
                    row,
                    message: format!("dark time {} must be ≥ 0", r.dark_time),
                });
            }
            if i > 0 && r.dark_time <= records[i - 1].dark_time {
                return Err(Error::Csv {
                    row,
                    message: "dark times must be strictly increasing".into(),
                });
            }
            if !(0.0..=1.0).contains(&r.p_stable) {
                return Err(Error::Csv {
                    row,
                    message: format!("p_stable {} outside [0, 1]", r.p_stable),
                });
            }
            if !(r.sigma.is_finite() && r.sigma > 0.0) {
                return Err(Error::Csv {
                    row,
                    message: format!("sigma {} must be > 0", r.sigma),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[DarkTimeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(DARK_HEADER).map_err(io)?;
        for r in &self.records {
            w.write_record([r.dark_time.to_string(), r.p_stable.to_string(), r.sigma.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Csv {
            row: 1,
            message: e.to_string(),
        })?;
        if headers.iter().ne(DARK_HEADER) {
            return Err(Error::Csv {
                row: 1,
                message: format!("expected columns `{}`", DARK_HEADER.join(",")),
            });
        }
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Csv {
                row,
                message: e.to_string(),
            })?;
            let field = |k: usize| -> Result<f64> {
                rec[k].parse::<f64>().map_err(|e| Error::Csv {
                    row,
                    message: format!("`{}`: {e}", DARK_HEADER[k]),
                })
            };
            records.push(DarkTimeRecord {
                dark_time: field(0)?,
                p_stable: field(1)?,
                sigma: field(2)?,
            });
        }
        Self::new(records).map_err(|e| match e {
            Error::Csv { row, message } => Error::Csv { row: row + 1, message },
            other => other,
        })
    }
}

/// Shape-preserving cubic (Fritsch-Carlson) interpolant of a reorder curve.
///
/// The simulated probabilities are first made non-increasing by pooling
/// adjacent violators, so the interpolant is monotone even when Monte Carlo
/// noise is not.
#[derive(Debug, Clone)]
pub struct StabilityInterpolant {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

fn pool_adjacent_violators(y: &[f64], weights: &[f64]) -> Vec<f64> {
    // Blocks of (value, weight, count), kept non-increasing.
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &w) in y.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (b, a) = (blocks[blocks.len() - 1], blocks[blocks.len() - 2]);
            if a.0 >= b.0 {
                break;
            }
            let w = a.1 + b.1;
            blocks.truncate(blocks.len() - 2);
            blocks.push(((a.0 * a.1 + b.0 * b.1) / w, w, a.2 + b.2));
        }
    }
    blocks.iter().flat_map(|&(v, _, n)| std::iter::repeat_n(v, n)).collect()
}

impl StabilityInterpolant {
    pub fn new(curve: &ReorderCurve) -> Result<Self> {
        if curve.len() < 2 {
            return Err(Error::invalid("curve", "need at least two temperatures"));
        }
        if curve.temperatures.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("curve", "temperatures must increase strictly"));
        }
        let x = curve.temperatures.clone();
        let weights: Vec<f64> = curve.trials.iter().map(|&n| n.max(1) as f64).collect();
        let y = pool_adjacent_violators(&curve.p_stable, &weights);
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes = vec![delta[0]; 2];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
                let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
                if s * d0 <= 0.0 {
                    0.0
                } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
                    3.0 * d0
                } else {
                    s
                }
            };
            slopes[0] = end(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, slopes })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    /// Interpolated stability probability; errors outside the simulated range.
    pub fn eval(&self, temperature: f64) -> Result<f64> {
        let (low, high) = self.domain();
        if !(temperature >= low && temperature <= high) {
            return Err(Error::Extrapolation { temperature, low, high });
        }
        let k = match self.x.partition_point(|&v| v <= temperature) {
            0 => 0,
            i => (i - 1).min(self.x.len() - 2),
        };
        let h = self.x[k + 1] - self.x[k];
        let t = (temperature - self.x[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * self.y[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.y[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1];
        Ok(value.clamp(0.0, 1.0))
    }
}

/// Initial temperature and linear heating rate fitted to dark-time data.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatingFit {
    /// Temperature at zero dark time (K).
    pub t0: f64,
    /// Heating rate (K/s).
    pub rate: f64,
    /// Covariance of `(t0, rate)`.
    pub covariance: Matrix2<f64>,
    pub std_errors: [f64; 2],
    pub chi_squared: f64,
    pub reduced_chi_squared: f64,
    pub iterations: usize,
}

const GRID: usize = 40;

/// Weighted least-squares fit of `p_stable(t0 + rate·t)` to dark-time data.
///
/// A grid over the admissible `(t0, rate)` region seeds a simplex search;
/// candidates whose temperatures leave the simulated range are rejected. An
/// optimum pressed against the top of that range means the curve is too
/// short and is reported as an extrapolation error.
pub fn fit_heating(data: &DarkTimeDataset, curve: &ReorderCurve) -> Result<HeatingFit> {
    if data.len() < 3 {
        return Err(Error::invalid("data", "need at least three dark times"));
    }
    let interp = StabilityInterpolant::new(curve)?;
    let (low, high) = interp.domain();
    let times: Vec<f64> = data.records.iter().map(|r| r.dark_time).collect();
    let t_max = times[times.len() - 1];
    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        data.records
            .iter()
            .map(|r| Ok((interp.eval(p[0] + p[1] * r.dark_time)? - r.p_stable) / r.sigma))
            .collect()
    };
    let chi2 = |p: &[f64]| -> f64 {
        if p[0] < low || p[1] < 0.0 {
            return f64::INFINITY;
        }
        match residuals(p) {
            Ok(r) => r.iter().map(|v| v * v).sum(),
            Err(_) => f64::INFINITY,
        }
    };

    let span = high - low;
    let rate_max = if t_max > 0.0 { span / t_max } else { 0.0 };
    let mut best = (f64::INFINITY, [low, 0.0]);
    for i in 0..=GRID {
        let t0 = low + span * i as f64 / GRID as f64;
        for j in 0..=GRID {
            let rate = (high - t0) / t_max.max(f64::MIN_POSITIVE) * j as f64 / GRID as f64;
            let v = chi2(&[t0, rate]);
            if v < best.0 {
                best = (v, [t0, rate]);
            }
        }
    }
    let steps = [span / GRID as f64, rate_max.max(f64::MIN_POSITIVE) / GRID as f64];
    let mut simplex = nelder_mead(chi2, &best.1, &steps, &SimplexOptions::default());
    // Restart once from the optimum to shake off a collapsed simplex.
    let restart = nelder_mead(chi2, &simplex.x, &steps.map(|s| 0.1 * s), &SimplexOptions::default());
    let iterations = simplex.iterations + restart.iterations;
    if restart.value <= simplex.value {
        simplex = restart;
    }
    if !simplex.value.is_finite() || !simplex.converged {
        return Err(Error::NonConvergence {
            what: "heating fit".into(),
            iterations,
        });
    }
    let p = [simplex.x[0], simplex.x[1]];
    let top = p[0] + p[1] * t_max;
    if top >= high - 1e-6 * span {
        return Err(Error::Extrapolation {
            temperature: top,
            low,
            high,
        });
    }

    let rate_room = ((high - p[0]) / t_max.max(f64::MIN_POSITIVE)).max(p[1]);
    let mut res_fn = |q: &[f64]| residuals(q).unwrap_or_else(|_| vec![f64::NAN; times.len()]);
    let jac = numeric_jacobian(
        &mut res_fn,
        &p,
        &LeastSquaresOptions {
            max_iterations: 0,
            x_tolerance: 0.0,
            fd_relative_step: 1e-4,
            lower: vec![low, 0.0],
            upper: vec![high, rate_room],
            scales: vec![span, rate_max.max(f64::MIN_POSITIVE)],
        },
    );
    let normal = jac.transpose() * &jac;
    let covariance = Matrix2::new(normal[(0, 0)], normal[(0, 1)], normal[(1, 0)], normal[(1, 1)])
        .try_inverse()
        .unwrap_or_else(|| Matrix2::from_element(f64::NAN));
    let dof = (data.len() as f64 - 2.0).max(1.0);
    Ok(HeatingFit {
        t0: p[0],
        rate: p[1],
        covariance,
        std_errors: [covariance[(0, 0)].max(0.0).sqrt(), covariance[(1, 1)].max(0.0).sqrt()],
        chi_squared: simplex.value,
        reduced_chi_squared: simplex.value / dof,
        iterations,
    })
}

/// Dark-time dataset drawn from a curve at `(t0, rate)` with binomial
/// counting noise of `shots` repetitions per point. `shots = 0` gives the
/// noiseless probabilities. Uncertainties use the Laplace-smoothed estimate
/// `p̂ = (k+1)/(n+2)` so that all-or-nothing points keep a finite weight.
pub fn synthesize_dark_time(
    curve: &ReorderCurve,
    t0: f64,
    rate: f64,
    dark_times: &[f64],
    shots: u64,
    seed: u64,
) -> Result<DarkTimeDataset> {
    let interp = StabilityInterpolant::new(curve)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(dark_times.len());
    for &t in dark_times {
        let p = interp.eval(t0 + rate * t)?;
        let (p_stable, sigma) = if shots == 0 {
            (p, 0.01)
        } else {
            let n = shots as f64;
            let k = Binomial::new(shots, p)
                .map_err(|e| Error::invalid("p_stable", e.to_string()))?
                .sample(&mut rng) as f64;
            let smoothed = (k + 1.0) / (n + 2.0);
            (k / n, (smoothed * (1.0 - smoothed) / n).sqrt())
        };
        records.push(DarkTimeRecord {
            dark_time: t,
            p_stable,
            sigma,
        });
    }
    DarkTimeDataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic_curve() -> ReorderCurve {
        let temperatures: Vec<f64> = (0..=30).map(|k| 0.15 * k as f64).collect();
        let p_stable: Vec<f64> = temperatures
            .iter()
            .map(|t| 1.0 / (1.0 + ((t - 2.0) / 0.35f64).exp()))
            .collect();
        ReorderCurve {
            ci_low: p_stable.clone(),
            ci_high: p_stable.clone(),
            trials: vec![200; temperatures.len()],
            ejected: vec![0; temperatures.len()],
            temperatures,
            p_stable,
            seed: 0,
            max_energy_drift: 0.0,
            energy_checks: 0,
            dt: 0.0,
            duration: 0.0,
        }
    }

    fn dark_times() -> Vec<f64> {
        (0..30).map(|k| 0.25 * k as f64).collect()
    }

    #[test]
    fn interpolant_is_monotone_and_exact_at_nodes() {
        let mut curve = logistic_curve();
        curve.p_stable[5] += 0.02;
        let f = StabilityInterpolant::new(&curve).unwrap();
        let mut prev = 1.0;
        for k in 0..=4500 {
            let v = f.eval(k as f64 * 1e-3).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert_eq!(f.eval(3.0).unwrap(), curve.p_stable[20]);
        assert!(matches!(f.eval(5.0), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn noiseless_recovery() {
        let curve = logistic_curve();
        let data = synthesize_dark_time(&curve, 0.206, 0.46, &dark_times(), 0, 0).unwrap();
        let fit = fit_heating(&data, &curve).unwrap();
        assert!((fit.t0 - 0.206).abs() < 1e-5, "{}", fit.t0);
        assert!((fit.rate - 0.46).abs() < 1e-5, "{}", fit.rate);
    }

    #[test]
    fn constant_temperature_gives_zero_rate() {
        let curve = logistic_curve();
        let data = synthesize_dark_time(&curve, 1.9, 0.0, &dark_times(), 100, 4).unwrap();
        let fit = fit_heating(&data, &curve).unwrap();
        assert!(
            fit.rate <= 2.0 * fit.std_errors[1] + 1e-9,
            "{} ± {}",
            fit.rate,
            fit.std_errors[1]
        );
    }

    #[test]
    fn short_curve_is_an_extrapolation() {
        let curve = logistic_curve();
        let data = synthesize_dark_time(&curve, 0.2, 0.46, &dark_times(), 0, 0).unwrap();
        let mut stretched = data.records().to_vec();
        stretched.push(DarkTimeRecord {
            dark_time: 30.0,
            p_stable: 0.0,
            sigma: 0.01,
        });
        let data = DarkTimeDataset::new(stretched).unwrap();
        assert!(matches!(fit_heating(&data, &curve), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn dark_time_csv() {
        let data = synthesize_dark_time(&logistic_curve(), 0.206, 0.46, &dark_times(), 100, 1).unwrap();
        assert_eq!(
            DarkTimeDataset::read_csv(data.to_csv_string().as_bytes()).unwrap(),
            data
        );
        let bad = "dark_time_s,p_stable,sigma\n0,1,0.1\n1,1.5,0.1\n";
        assert!(matches!(
            DarkTimeDataset::read_csv(bad.as_bytes()),
            Err(Error::Csv { row: 3, .. })
        ));
    }
}
