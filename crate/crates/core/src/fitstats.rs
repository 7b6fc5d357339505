//! Truncated-normal densities and the mean-constrained least-squares fit,
//! normal summaries of realization means, and linear regression.

use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use thiserror::Error;

/// Every accepted fit satisfies the mean constraint to this tolerance.
pub const CONSTRAINT_TOL: f64 = 1e-8;
pub const MU_BISECTION_TOL: f64 = 1e-10;
const SIGMA_MIN: f64 = 0.1;
/// Standardised bounds are kept inside this range while solving for mu.
const Z_LIMIT: f64 = 35.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("distribution has {0} entries, expected {1}")]
    Length(usize, usize),
    #[error("distribution is degenerate (mass on a single state)")]
    Degenerate,
    #[error("distribution is not a probability vector: {0}")]
    NotProbability(String),
    #[error("mean {mean} cannot be matched inside [{a}, {b}] with sigma {sigma}")]
    Unreachable { mean: f64, a: f64, b: f64, sigma: f64 },
    #[error("constraint residual {0:e} above {CONSTRAINT_TOL:e}")]
    Constraint(f64),
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
    #[error("all abscissae identical; slope undefined")]
    DegenerateAbscissa,
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, written with `erfc` so the lower tail keeps full relative precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - normal_cdf(x)`.
fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `normal_cdf(hi) - normal_cdf(lo)` without cancellation in either tail.
fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        normal_sf(lo) - normal_sf(hi)
    } else {
        normal_cdf(hi) - normal_cdf(lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncNormParams {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

impl TruncNormParams {
    pub fn new(mu: f64, sigma: f64, a: f64, b: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        assert!(a < b, "need a < b");
        Self { mu, sigma, a, b }
    }

    fn z(&self, x: f64) -> f64 {
        (x - self.mu) / self.sigma
    }

    /// Probability mass of the parent normal inside `[a, b]`.
    pub fn mass(&self) -> f64 {
        normal_mass(self.z(self.a), self.z(self.b))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        truncnorm_pdf(x, self)
    }

    pub fn mean(&self) -> f64 {
        truncnorm_mean(self)
    }

    /// Probability of `[lo, hi]` clipped to the support.
    pub fn interval_probability(&self, lo: f64, hi: f64) -> f64 {
        let (lo, hi) = (lo.max(self.a), hi.min(self.b));
        if hi <= lo {
            return 0.0;
        }
        normal_mass(self.z(lo), self.z(hi)) / self.mass()
    }
}

/// Density of the normal truncated to `[a, b]`; zero outside.
pub fn truncnorm_pdf(x: f64, p: &TruncNormParams) -> f64 {
    if x < p.a || x > p.b {
        return 0.0;
    }
    normal_pdf(p.z(x)) / (p.sigma * p.mass())
}

pub fn truncnorm_mean(p: &TruncNormParams) -> f64 {
    let (za, zb) = (p.z(p.a), p.z(p.b));
    p.mu + p.sigma * (normal_pdf(za) - normal_pdf(zb)) / normal_mass(za, zb)
}

/// How model values are compared with a probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Density evaluated at each integer state.
    #[default]
    PointDensity,
    /// Probability of the unit bin centred on each state.
    BinIntegrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub mode: FitMode,
    /// Coarse sigma grid size before golden-section refinement.
    pub sigma_grid: usize,
    pub sigma_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { mode: FitMode::PointDensity, sigma_grid: 160, sigma_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncNormFit {
    pub params: TruncNormParams,
    pub sse: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
}

/// Solve `truncnorm_mean(mu, sigma, a, b) = target` for mu by bisection.
pub fn solve_mu(target: f64, sigma: f64, a: f64, b: f64) -> Result<f64, FitError> {
    let unreachable = || FitError::Unreachable { mean: target, a, b, sigma };
    if !(target > a && target < b) {
        return Err(unreachable());
    }
    let mean_at = |mu: f64| truncnorm_mean(&TruncNormParams { mu, sigma, a, b });
    let (mu_min, mu_max) = (a - Z_LIMIT * sigma + sigma, b + Z_LIMIT * sigma - sigma);
    let (mut lo, mut hi) = (target, target);
    let mut step = sigma;
    while mean_at(lo) > target {
        lo -= step;
        step *= 2.0;
        if lo < mu_min {
            lo = mu_min;
            if mean_at(lo) > target {
                return Err(unreachable());
            }
        }
    }
    step = sigma;
    while mean_at(hi) < target {
        hi += step;
        step *= 2.0;
        if hi > mu_max {
            hi = mu_max;
            if mean_at(hi) < target {
                return Err(unreachable());
            }
        }
    }
    for _ in 0..200 {
        if hi - lo <= MU_BISECTION_TOL * 1e-2 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn model_values(params: &TruncNormParams, n_states: usize, mode: FitMode) -> Vec<f64> {
    (0..=n_states)
        .map(|j| {
            let x = j as f64;
            match mode {
                FitMode::PointDensity => truncnorm_pdf(x, params),
                FitMode::BinIntegrated => params.interval_probability(x - 0.5, x + 0.5),
            }
        })
        .collect()
}

/// Least-squares fit of a truncated normal on `[0, n_states]` to a probability
/// vector, with the truncated mean pinned to the vector's mean.
///
/// For each trial sigma the constraint fixes mu; sigma is then chosen by a
/// coarse grid followed by golden-section refinement.
pub fn fit_constrained(pi: &[f64], n_states: usize, options: &FitOptions) -> Result<TruncNormFit, FitError> {
    if pi.len() != n_states + 1 {
        return Err(FitError::Length(pi.len(), n_states + 1));
    }
    if pi.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(FitError::NotProbability("negative or non-finite entry".into()));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(FitError::NotProbability(format!("sums to {total}")));
    }
    if pi.iter().filter(|&&p| p > 0.0).count() < 2 {
        return Err(FitError::Degenerate);
    }

    let (a, b) = (0.0, n_states as f64);
    let target: f64 = pi.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
    let evaluations = Cell::new(0usize);
    let objective = |sigma: f64| -> Option<(f64, f64)> {
        evaluations.set(evaluations.get() + 1);
        let mu = solve_mu(target, sigma, a, b).ok()?;
        let params = TruncNormParams { mu, sigma, a, b };
        let sse = model_values(&params, n_states, options.mode)
            .iter()
            .zip(pi)
            .map(|(m, p)| (m - p) * (m - p))
            .sum();
        Some((sse, mu))
    };

    let sigma_max = b.max(2.0 * SIGMA_MIN);
    let n = options.sigma_grid.max(8);
    let ratio = (sigma_max / SIGMA_MIN).ln();
    let grid: Vec<f64> = (0..n).map(|k| SIGMA_MIN * (ratio * k as f64 / (n - 1) as f64).exp()).collect();
    let scored: Vec<Option<f64>> = grid.iter().map(|&s| objective(s).map(|(sse, _)| sse)).collect();
    let best = scored
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(k, _)| k)
        .ok_or(FitError::Unreachable { mean: target, a, b, sigma: SIGMA_MIN })?;

    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n - 1)]);
    let sse_of = |s: f64| objective(s).map_or(f64::INFINITY, |v| v.0);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = sse_of(x1);
    let mut f2 = sse_of(x2);
    while hi - lo > options.sigma_tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = sse_of(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = sse_of(x2);
        }
    }
    let sigma = 0.5 * (lo + hi);
    let (sse, mu) = objective(sigma).ok_or(FitError::Unreachable { mean: target, a, b, sigma })?;
    let params = TruncNormParams { mu, sigma, a, b };
    let constraint_residual = (truncnorm_mean(&params) - target).abs();
    if constraint_residual > CONSTRAINT_TOL {
        return Err(FitError::Constraint(constraint_residual));
    }
    Ok(TruncNormFit { params, sse, constraint_residual, iterations: evaluations.get() })
}

/// Sum of squared residuals for given sigma with mu re-solved from the constraint.
pub fn constrained_sse(pi: &[f64], n_states: usize, sigma: f64, mode: FitMode) -> Result<f64, FitError> {
    let b = n_states as f64;
    let target: f64 = pi.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
    let mu = solve_mu(target, sigma, 0.0, b)?;
    let params = TruncNormParams { mu, sigma, a: 0.0, b };
    Ok(model_values(&params, n_states, mode).iter().zip(pi).map(|(m, p)| (m - p) * (m - p)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Sample mean and (n - 1) standard deviation.
pub fn realization_mean_summary(samples: &[f64]) -> Result<NormalSummary, FitError> {
    let n = samples.len();
    if n < 2 {
        return Err(FitError::TooFewSamples(2));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(NormalSummary { mean, std: var.sqrt(), count: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl RegressionResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linregress(points: &[(f64, f64)]) -> Result<RegressionResult, FitError> {
    if points.len() < 2 {
        return Err(FitError::TooFewSamples(2));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::DegenerateAbscissa);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(RegressionResult { slope, intercept, r_squared })
}


#[cfg(test)]
mod tests {
    use super::quadrature::simpson;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_normal_values() {
        assert_eq!(normal_pdf(0.0), 0.3989422804014327);
        assert_eq!(normal_cdf(0.0), 0.5);
        // quadrature oracle for the CDF
        let oracle = 0.5 + simpson(normal_pdf, 0.0, 1.96, 20_000);
        assert!((oracle - 0.9750021048517795).abs() < 1e-13);
        assert!((normal_cdf(1.96) - oracle).abs() < 1e-14);
        assert!((normal_cdf(-1.96) - (1.0 - oracle)).abs() < 1e-14);
    }

    #[test]
    fn truncnorm_pdf_cases() {
        let wide = TruncNormParams::new(2.0, 0.7, 2.0 - 50.0 * 0.7, 2.0 + 50.0 * 0.7);
        assert!((truncnorm_pdf(2.0, &wide) - normal_pdf(0.0) / 0.7).abs() < 1e-12);

        let p = TruncNormParams::new(3.0, 1.6, 0.0, 13.0);
        let integral = simpson(|x| truncnorm_pdf(x, &p), 0.0, 13.0, 20_000);
        assert!((integral - 1.0).abs() < 1e-8);

        let sym = TruncNormParams::new(4.0, 1.3, 1.5, 6.5);
        for d in [0.1, 0.9, 2.0, 2.5] {
            assert!((truncnorm_pdf(4.0 - d, &sym) - truncnorm_pdf(4.0 + d, &sym)).abs() < 1e-15);
        }
        assert_eq!(truncnorm_pdf(-0.1, &p), 0.0);
        assert_eq!(truncnorm_pdf(13.1, &p), 0.0);
    }

    #[test]
    fn truncnorm_mean_cases() {
        let sym = TruncNormParams::new(4.0, 1.3, 1.5, 6.5);
        assert!((truncnorm_mean(&sym) - 4.0).abs() < 1e-14);
        let half = TruncNormParams::new(0.0, 1.0, 0.0, 60.0);
        let oracle = simpson(|x| x * truncnorm_pdf(x, &half), 0.0, 60.0, 200_000);
        assert!((oracle - (2.0 / PI).sqrt()).abs() < 1e-10);
        assert!((truncnorm_mean(&half) - 0.7978845608028654).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mean_lies_inside_support(mu in -20.0f64..30.0, sigma in 0.1f64..10.0, a in 0.0f64..5.0, w in 0.5f64..13.0) {
            let p = TruncNormParams::new(mu, sigma, a, a + w);
            if p.mass() > 0.0 {
                let m = truncnorm_mean(&p);
                prop_assert!(m > p.a && m < p.b, "{m} not in ({}, {})", p.a, p.b);
            }
        }

        #[test]
        fn solve_mu_hits_target(target in 0.5f64..12.5, sigma in 0.2f64..13.0) {
            let mu = solve_mu(target, sigma, 0.0, 13.0).unwrap();
            let m = truncnorm_mean(&TruncNormParams::new(mu, sigma, 0.0, 13.0));
            prop_assert!((m - target).abs() < 1e-10);
        }
    }

    fn discretised(mu: f64, sigma: f64, ns: usize) -> Vec<f64> {
        let p = TruncNormParams::new(mu, sigma, 0.0, ns as f64);
        let raw: Vec<f64> = (0..=ns).map(|j| truncnorm_pdf(j as f64, &p)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }

    #[test]
    fn synthetic_roundtrip_recovers_parameters() {
        for (mu, sigma) in [(6.5, 1.5), (5.0, 1.0), (6.8, 1.6), (6.0, 1.2)] {
            let pi = discretised(mu, sigma, 13);
            let fit = fit_constrained(&pi, 13, &FitOptions::default()).unwrap();
            assert!((fit.params.mu - mu).abs() < 1e-3, "mu {} vs {mu}", fit.params.mu);
            assert!((fit.params.sigma - sigma).abs() < 1e-3, "sigma {} vs {sigma}", fit.params.sigma);
            assert!(fit.constraint_residual <= CONSTRAINT_TOL);
            let integral = simpson(|x| fit.params.pdf(x), 0.0, 13.0, 20_000);
            assert!((integral - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_is_minimum_along_sigma() {
        let pi = [0.04, 0.12, 0.2, 0.23, 0.19, 0.12, 0.06, 0.025, 0.01, 0.005];
        let total: f64 = pi.iter().sum();
        let pi: Vec<f64> = pi.iter().map(|x| x / total).collect();
        for mode in [FitMode::PointDensity, FitMode::BinIntegrated] {
            let options = FitOptions { mode, ..FitOptions::default() };
            let fit = fit_constrained(&pi, 9, &options).unwrap();
            let s = fit.params.sigma;
            let at = constrained_sse(&pi, 9, s, mode).unwrap();
            assert!((at - fit.sse).abs() < 1e-15);
            for f in [0.99, 1.01] {
                assert!(constrained_sse(&pi, 9, s * f, mode).unwrap() >= fit.sse);
            }
        }
    }

    #[test]
    fn degenerate_and_malformed_inputs() {
        let mut pi = vec![0.0; 14];
        pi[3] = 1.0;
        assert_eq!(fit_constrained(&pi, 13, &FitOptions::default()), Err(FitError::Degenerate));
        assert!(matches!(fit_constrained(&pi, 12, &FitOptions::default()), Err(FitError::Length(14, 13))));
        let bad = vec![0.5; 14];
        assert!(matches!(fit_constrained(&bad, 13, &FitOptions::default()), Err(FitError::NotProbability(_))));
    }

    #[test]
    fn summaries() {
        let s = realization_mean_summary(&[3.1; 5]).unwrap();
        assert_eq!((s.mean, s.std), (3.1, 0.0));
        let s = realization_mean_summary(&[2.0, 4.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert!(realization_mean_summary(&[1.0]).is_err());
    }

    #[test]
    fn regression_cases() {
        let pts: Vec<_> = (0..5).map(|k| (k as f64 * 0.2, 2.0 * k as f64 * 0.2 + 1.0)).collect();
        let r = linregress(&pts).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!((r.intercept - 1.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(linregress(&[(0.5, 1.0), (0.5, 2.0)]), Err(FitError::DegenerateAbscissa));
        assert!(linregress(&[(0.5, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn regression_residuals_sum_to_zero(ys in prop::collection::vec(-5.0f64..5.0, 5)) {
            let pts: Vec<(f64, f64)> = [0.1, 0.3, 0.5, 0.7, 0.9].iter().copied().zip(ys).collect();
            let r = linregress(&pts).unwrap();
            let sum: f64 = pts.iter().map(|&(x, y)| y - r.predict(x)).sum();
            prop_assert!(sum.abs() < 1e-10);
            prop_assert!((0.0..=1.0).contains(&r.r_squared));
        }
    }
}
