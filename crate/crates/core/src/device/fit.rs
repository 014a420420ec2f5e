//! Four-parameter least-squares fit of `A·e^(βx) + B·e^(γx)` to pulse
//! response traces.
//!
//! Damped Gauss–Newton (Levenberg–Marquardt with diagonal scaling) on the
//! analytic Jacobian, restarted from eight sign/scale patterns of the two
//! rates. Each start gets its amplitudes from the linear sub-problem.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

use super::{DeviceError, PolarityCurve};
use crate::kv::KvMap;

pub const MIN_FIT_POINTS: usize = 8;
const PARAMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative SS decrease below which an accepted step counts as converged.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-15,
        }
    }
}

/// Fitted coefficients ordered so that `|beta| <= |gamma|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub a: f64,
    pub beta: f64,
    pub b: f64,
    pub gamma: f64,
}

impl Coefficients {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * (self.beta * x).exp() + self.b * (self.gamma * x).exp()
    }

    pub fn curve(&self, x_sat: f64) -> Result<PolarityCurve, DeviceError> {
        PolarityCurve::new(self.a, self.beta, self.b, self.gamma, x_sat)
    }

    fn from_vec(p: &Vector4<f64>) -> Self {
        let (a, beta, b, gamma) = (p[0], p[1], p[2], p[3]);
        if beta.abs() <= gamma.abs() {
            Self { a, beta, b, gamma }
        } else {
            Self {
                a: b,
                beta: gamma,
                b: a,
                gamma: beta,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub coefficients: Coefficients,
    pub r_square: f64,
    pub adj_r_square: f64,
    pub rmse: f64,
    pub sse: f64,
    pub n: usize,
    pub iterations: usize,
}

impl FitReport {
    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        let c = &self.coefficients;
        m.set("a", c.a);
        m.set("beta", c.beta);
        m.set("b", c.b);
        m.set("gamma", c.gamma);
        m.set("r_square", self.r_square);
        m.set("adj_r_square", self.adj_r_square);
        m.set("rmse", self.rmse);
        m.set("sse", self.sse);
        m.set("n", self.n);
        m.set("iterations", self.iterations);
        m
    }
}

pub fn fit_pulse_response(points: &[(f64, f64)]) -> Result<FitReport, DeviceError> {
    fit_pulse_response_with(points, &FitOptions::default())
}

pub fn fit_pulse_response_with(
    points: &[(f64, f64)],
    opts: &FitOptions,
) -> Result<FitReport, DeviceError> {
    if points.len() < MIN_FIT_POINTS {
        return Err(DeviceError::TooFewPoints {
            got: points.len(),
            need: MIN_FIT_POINTS,
        });
    }
    if points
        .windows(2)
        .any(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater))
    {
        return Err(DeviceError::InvalidTrace(
            "x must be strictly increasing".into(),
        ));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(DeviceError::InvalidTrace("non-finite point".into()));
    }
    let n = points.len();
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    if ss_tot <= f64::EPSILON * mean.abs().max(1.0) * n as f64 {
        return Err(DeviceError::Degenerate);
    }

    let span = points[n - 1].0 - points[0].0;
    let mut best: Option<(Vector4<f64>, f64, usize)> = None;
    for (slow, fast) in [(0.1, 10.0), (1.0, 30.0)] {
        for (s1, s2) in [(1.0, -1.0), (-1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            let beta0 = s1 * slow / span;
            let gamma0 = s2 * fast / span;
            let Some((a0, b0)) = linear_amplitudes(points, beta0, gamma0) else {
                continue;
            };
            let start = Vector4::new(a0, beta0, b0, gamma0);
            if let Some((p, sse, iters)) = levenberg_marquardt(points, start, opts) {
                if best.as_ref().is_none_or(|(_, s, _)| sse < *s) {
                    best = Some((p, sse, iters));
                }
            }
        }
    }
    let (p, sse, iterations) = best.ok_or(DeviceError::NonConvergence {
        iterations: opts.max_iterations,
    })?;
    let dof = (n - PARAMS) as f64;
    let r_square = 1.0 - sse / ss_tot;
    Ok(FitReport {
        coefficients: Coefficients::from_vec(&p),
        r_square,
        adj_r_square: 1.0 - (1.0 - r_square) * (n as f64 - 1.0) / dof,
        rmse: (sse / dof).sqrt(),
        sse,
        n,
        iterations,
    })
}

/// Least-squares `(A, B)` for fixed rates.
fn linear_amplitudes(points: &[(f64, f64)], beta: f64, gamma: f64) -> Option<(f64, f64)> {
    let mut m = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for &(x, y) in points {
        let u = Vector2::new((beta * x).exp(), (gamma * x).exp());
        m += u * u.transpose();
        rhs += u * y;
    }
    let sol = m.lu().solve(&rhs)?;
    (sol[0].is_finite() && sol[1].is_finite()).then_some((sol[0], sol[1]))
}

fn sse_of(points: &[(f64, f64)], p: &Vector4<f64>) -> f64 {
    points
        .iter()
        .map(|&(x, y)| {
            let r = p[0] * (p[1] * x).exp() + p[2] * (p[3] * x).exp() - y;
            r * r
        })
        .sum()
}

/// Returns `(params, sse, iterations)` when the run converges inside the budget.
fn levenberg_marquardt(
    points: &[(f64, f64)],
    mut p: Vector4<f64>,
    opts: &FitOptions,
) -> Option<(Vector4<f64>, f64, usize)> {
    let mut sse = sse_of(points, &p);
    if !sse.is_finite() {
        return None;
    }
    let mut lambda = 1e-3;
    for iter in 1..=opts.max_iterations {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for &(x, y) in points {
            let e1 = (p[1] * x).exp();
            let e2 = (p[3] * x).exp();
            let r = p[0] * e1 + p[2] * e2 - y;
            let j = Vector4::new(e1, p[0] * x * e1, e2, p[2] * x * e2);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let diag = Vector4::from_fn(|i, _| jtj[(i, i)].max(f64::MIN_POSITIVE).sqrt());
        // Solve in scaled coordinates so the four parameter scales do not matter.
        let scaled = Matrix4::from_fn(|i, k| jtj[(i, k)] / (diag[i] * diag[k]));
        let grad = Vector4::from_fn(|i, _| jtr[i] / diag[i]);
        if grad.amax() <= 1e-14 * sse.sqrt().max(1e-300) {
            return Some((p, sse, iter));
        }
        loop {
            let damped = scaled + Matrix4::identity() * lambda;
            let step = damped
                .cholesky()
                .map(|c| c.solve(&(-grad)))
                .filter(|s| s.iter().all(|v| v.is_finite()));
            if let Some(z) = step {
                let delta = Vector4::from_fn(|i, _| z[i] / diag[i]);
                let trial = p + delta;
                let trial_sse = sse_of(points, &trial);
                if trial_sse.is_finite() && trial_sse < sse {
                    let rel_drop = (sse - trial_sse) / sse;
                    let rel_step = (0..PARAMS)
                        .map(|i| delta[i].abs() / trial[i].abs().max(1e-300))
                        .fold(0.0, f64::max);
                    p = trial;
                    sse = trial_sse;
                    lambda = (lambda * 0.3).max(1e-12);
                    if rel_drop < opts.tolerance || rel_step < 1e-13 || sse == 0.0 {
                        return Some((p, sse, iter));
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // No descent direction left: a (possibly numerical) minimum.
                return Some((p, sse, iter));
            }
        }
    }
    None
}
