//! Derivative-free simplex search and a bounded Levenberg-Marquardt refinement
//! with finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Relative spread of the vertices below which the search stops.
    pub x_tolerance: f64,
    /// Absolute spread of the objective below which the search stops.
    pub f_tolerance: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            x_tolerance: 1e-9,
            f_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead minimisation of `f` starting from `x0` with initial edge
/// lengths `steps`. Non-finite objective values are treated as +∞.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], options: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for j in 0..n {
        let mut v = x0.to_vec();
        v[j] += steps[j];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let f_spread = values[n] - values[0];
        let x_spread = (1..=n)
            .flat_map(|k| {
                let best = &simplex[0];
                simplex[k]
                    .iter()
                    .zip(best)
                    .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-300))
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max);
        if x_spread < options.x_tolerance && f_spread.abs() <= options.f_tolerance.max(1e-15 * values[0].abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect() };

        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(-0.5);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(0.5);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for k in 1..=n {
            simplex[k] = simplex[k].iter().zip(&best).map(|(x, b)| b + 0.5 * (x - b)).collect();
            values[k] = eval(&simplex[k]);
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    SimplexResult {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquaresOptions {
    pub max_iterations: usize,
    /// Stop when every relative parameter change falls below this.
    pub x_tolerance: f64,
    /// Finite-difference step relative to `max(|p_j|, scale_j)`.
    pub fd_relative_step: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Typical magnitude of each parameter; guards steps near zero.
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LeastSquaresResult {
    pub x: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub residuals: Vec<f64>,
    /// `(JᵀJ)⁻¹` at the solution, if the normal matrix is invertible.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp_to(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Central-difference Jacobian of `residuals` at `x`, one-sided at bounds.
pub fn numeric_jacobian<F>(residuals: &mut F, x: &[f64], options: &LeastSquaresOptions) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let r0 = residuals(x);
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = options.fd_relative_step * x[j].abs().max(options.scales[j]);
        let up = (x[j] + h).min(options.upper[j]);
        let down = (x[j] - h).max(options.lower[j]);
        let mut xp = x.to_vec();
        xp[j] = up;
        let mut xm = x.to_vec();
        xm[j] = down;
        let (rp, rm) = if up > x[j] && down < x[j] {
            (residuals(&xp), residuals(&xm))
        } else if up > x[j] {
            xm[j] = x[j];
            (residuals(&xp), r0.clone())
        } else {
            xp[j] = x[j];
            (r0.clone(), residuals(&xm))
        };
        let width = xp[j] - xm[j];
        if width > 0.0 {
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / width;
            }
        }
    }
    jac
}

/// Bounded Levenberg-Marquardt on weighted residuals.
pub fn levenberg_marquardt<F>(mut residuals: F, x0: &[f64], options: &LeastSquaresOptions) -> LeastSquaresResult
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_to(&mut x, &options.lower, &options.upper);
    let mut r = residuals(&x);
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    'outer: while iterations < options.max_iterations {
        iterations += 1;
        let jac = numeric_jacobian(&mut residuals, &x, options);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_vec(r.clone());
        // Parameters on a bound whose descent direction points outward stay put.
        let pinned: Vec<bool> = (0..n)
            .map(|j| (x[j] <= options.lower[j] && jtr[j] > 0.0) || (x[j] >= options.upper[j] && jtr[j] < 0.0))
            .collect();
        loop {
            let mut a = jtj.clone();
            let mut rhs = -&jtr;
            for j in 0..n {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-300);
            }
            for j in (0..n).filter(|&j| pinned[j]) {
                a.row_mut(j).fill(0.0);
                a.column_mut(j).fill(0.0);
                a[(j, j)] = 1.0;
                rhs[j] = 0.0;
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&rhs)) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break 'outer;
                }
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp_to(&mut trial, &options.lower, &options.upper);
            let rel_change = trial
                .iter()
                .zip(&x)
                .zip(&options.scales)
                .map(|((t, v), s)| (t - v).abs() / v.abs().max(*s))
                .fold(0.0, f64::max);
            let r_trial = residuals(&trial);
            let c_trial = sum_sq(&r_trial);
            if c_trial.is_finite() && c_trial <= cost {
                x = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 3.0).max(1e-12);
                if rel_change < options.x_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if rel_change < options.x_tolerance {
                // No downhill step larger than the tolerance exists.
                converged = true;
                break 'outer;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                converged = true;
                break 'outer;
            }
        }
    }

    let jac = numeric_jacobian(&mut residuals, &x, options);
    let covariance = (jac.transpose() * &jac).try_inverse();
    LeastSquaresResult {
        x,
        cost,
        residuals: r,
        covariance,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], &[0.1, 0.1], &SimplexOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn levenberg_marquardt_pins_active_bound() {
        // The unconstrained optimum has a negative offset; the fit must settle on the bound.
        let ts: Vec<f64> = (0..30).map(|k| k as f64 * 0.2).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (-0.5 * t).exp() - 0.05).collect();
        let res = |p: &[f64]| -> Vec<f64> {
            ts.iter()
                .zip(&ys)
                .map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y)
                .collect()
        };
        let opts = LeastSquaresOptions {
            max_iterations: 100,
            x_tolerance: 1e-10,
            fd_relative_step: 1e-7,
            lower: vec![0.0, 0.0, 0.0],
            upper: vec![10.0, 10.0, 1.0],
            scales: vec![1.0, 1.0, 0.1],
        };
        let out = levenberg_marquardt(res, &[1.0, 0.3, 0.2], &opts);
        assert!(out.converged, "{} iterations", out.iterations);
        assert_eq!(out.x[2], 0.0);
    }

    #[test]
    fn levenberg_marquardt_exponential_fit() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-0.7 * t).exp() + 0.1).collect();
        let res = |p: &[f64]| -> Vec<f64> {
            ts.iter()
                .zip(&ys)
                .map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y)
                .collect()
        };
        let opts = LeastSquaresOptions {
            max_iterations: 200,
            x_tolerance: 1e-12,
            fd_relative_step: 1e-7,
            lower: vec![0.0, 0.0, -1.0],
            upper: vec![10.0, 10.0, 1.0],
            scales: vec![1.0, 1.0, 0.1],
        };
        let out = levenberg_marquardt(res, &[1.0, 0.3, 0.0], &opts);
        assert!(out.converged);
        for (a, b) in out.x.iter().zip([2.5, 0.7, 0.1]) {
            assert!((a - b).abs() < 1e-7, "{:?}", out.x);
        }
        assert!(out.covariance.is_some());
    }
}
