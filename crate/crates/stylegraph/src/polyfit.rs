//! Polynomial fits of centrality series with conditioning diagnostics.
//!
//! The design is the Vandermonde matrix over frame times shifted to start at
//! 0 within the fit window (derivatives are shift-equivariant, so downstream
//! style estimates never see the shift). Solves go through the SVD: the
//! ordinary fit applies 1/σ_i, the Tikhonov fit applies σ_i/(σ_i² + α²),
//! so the two coincide bit-for-bit at α = 0.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::centrality::{CentralityKind, CentralitySeries};
use crate::error::{Error, Result};

/// T×(d+1) Vandermonde design: row r = [1, t_r, t_r², …, t_r^d].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    entries: DMatrix<f64>,
    degree: usize,
}

impl DesignMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn samples(&self) -> usize {
        self.entries.nrows()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
}

/// Builds the Vandermonde design with exact monomial entries.
pub fn vandermonde(times: &[f64], degree: usize) -> Result<DesignMatrix> {
    if times.is_empty() {
        return Err(Error::EmptyInput("no sample times".into()));
    }
    let entries = DMatrix::from_fn(times.len(), degree + 1, |r, c| times[r].powi(c as i32));
    Ok(DesignMatrix { entries, degree })
}

/// Fitted centrality polynomial over a frame window. Coefficients are in
/// window-shifted time (τ = t − window.0); `eval_poly` takes absolute
/// frames and shifts internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityPolynomial {
    pub beta: Vec<f64>,
    pub degree: usize,
    pub alpha: f64,
    pub window: (u64, u64),
    /// Condition number in effect at fit time (regularized when α > 0).
    pub kappa: f64,
    pub kind: CentralityKind,
}

/// Ordinary least squares fit: β = (MᵀM)⁻¹Mᵀζ, solved via the SVD rather
/// than an explicit inverse.
pub fn fit_ols(series: &CentralitySeries, degree: usize) -> Result<CentralityPolynomial> {
    fit_tikhonov(series, degree, 0.0)
}

/// Tikhonov-regularized fit: β = (MᵀM + α²I)⁻¹Mᵀζ, i.e. singular values
/// filtered as σ_i/(σ_i² + α²). α = 0 reduces to `fit_ols` exactly.
pub fn fit_tikhonov(
    series: &CentralitySeries,
    degree: usize,
    alpha: f64,
) -> Result<CentralityPolynomial> {
    fit_values(
        series.values(),
        series.window().0,
        series.kind(),
        degree,
        alpha,
    )
}

/// Fit over raw samples starting at an absolute frame; shared by the series
/// fits and the sliding-window style machinery.
pub fn fit_values(
    values: &[f64],
    window_start: u64,
    kind: CentralityKind,
    degree: usize,
    alpha: f64,
) -> Result<CentralityPolynomial> {
    let times: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    fit_samples(&times, values, window_start, kind, degree, alpha)
}

/// Fit with explicit (window-shifted) sample times; duplicate times make
/// the design rank-deficient, which is an error unless regularized.
pub fn fit_samples(
    times: &[f64],
    values: &[f64],
    window_start: u64,
    kind: CentralityKind,
    degree: usize,
    alpha: f64,
) -> Result<CentralityPolynomial> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be non-negative, got {alpha}")));
    }
    if times.len() != values.len() {
        return Err(Error::Domain(format!(
            "time/value length mismatch: {} vs {}",
            times.len(),
            values.len()
        )));
    }
    if values.len() < degree + 1 {
        return Err(Error::Domain(format!(
            "need at least {} samples for degree {degree}, got {}",
            degree + 1,
            values.len()
        )));
    }
    DesignSvd::new(times, degree)?.solve(values, window_start, kind, alpha)
}

/// Factorized design, reusable across fits that share sample times (the
/// sliding-window machinery refits the same design at every frame).
#[derive(Debug, Clone)]
pub struct DesignSvd {
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    sigma: DVector<f64>,
    degree: usize,
    samples: usize,
}

impl DesignSvd {
    pub fn new(times: &[f64], degree: usize) -> Result<Self> {
        let design = vandermonde(times, degree)?;
        let samples = design.samples();
        let svd = design.entries.svd(true, true);
        Ok(Self {
            u: svd.u.expect("svd computed with u"),
            v_t: svd.v_t.expect("svd computed with v_t"),
            sigma: svd.singular_values,
            degree,
            samples,
        })
    }

    pub fn solve(
        &self,
        values: &[f64],
        window_start: u64,
        kind: CentralityKind,
        alpha: f64,
    ) -> Result<CentralityPolynomial> {
        if values.len() != self.samples {
            return Err(Error::Domain(format!(
                "expected {} samples, got {}",
                self.samples,
                values.len()
            )));
        }
        let s_max = self.sigma[0];
        let s_min = self.sigma[self.sigma.len() - 1];
        if alpha == 0.0 && (s_max == 0.0 || s_min <= s_max * 1e-12) {
            return Err(Error::Singular(format!(
                "rank-deficient design (σ_min = {s_min:e}, σ_max = {s_max:e}); \
                 regularize or deduplicate sample times"
            )));
        }

        let zeta = DVector::from_column_slice(values);
        let mut projected = self.u.tr_mul(&zeta);
        for i in 0..projected.len() {
            let s = self.sigma[i];
            let filter = if alpha == 0.0 {
                1.0 / s
            } else {
                s / (s * s + alpha * alpha)
            };
            projected[i] *= filter;
        }
        let beta = self.v_t.tr_mul(&projected);

        let kappa = (s_max * s_max + alpha * alpha) / (s_min * s_min + alpha * alpha);
        Ok(CentralityPolynomial {
            beta: beta.iter().copied().collect(),
            degree: self.degree,
            alpha,
            window: (window_start, window_start + values.len() as u64 - 1),
            kappa,
            kind,
        })
    }
}

/// Condition number of the normal equations: σ_max²/σ_min² unregularized,
/// (σ_max² + α²)/(σ_min² + α²) under Tikhonov. Singular designs with α = 0
/// return the infinity sentinel.
pub fn condition_number(design: &DesignMatrix, alpha: f64) -> f64 {
    let sigma = design.entries.clone().svd(false, false).singular_values;
    let s_max = sigma[0];
    let s_min = sigma[sigma.len() - 1];
    if alpha == 0.0 && s_min == 0.0 {
        return f64::INFINITY;
    }
    (s_max * s_max + alpha * alpha) / (s_min * s_min + alpha * alpha)
}

type AlphaCache = RwLock<HashMap<(usize, usize, u64), f64>>;

fn alpha_cache() -> &'static AlphaCache {
    static CACHE: OnceLock<AlphaCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Smallest α on a decade grid such that the regularized condition number
/// stays at or below `delta`; 0 when the design is already well enough
/// conditioned. Cached per (T, d, delta).
pub fn select_alpha(samples: usize, degree: usize, delta: f64) -> Result<f64> {
    if !(delta > 1.0) {
        return Err(Error::Domain(format!("delta must exceed 1, got {delta}")));
    }
    if samples < degree + 1 {
        return Err(Error::Domain(format!(
            "need at least {} samples for degree {degree}, got {samples}",
            degree + 1
        )));
    }
    let key = (samples, degree, delta.to_bits());
    if let Some(&alpha) = alpha_cache().read().expect("alpha cache poisoned").get(&key) {
        return Ok(alpha);
    }

    let times: Vec<f64> = (0..samples).map(|i| i as f64).collect();
    let design = vandermonde(&times, degree)?;
    let mut alpha = 0.0;
    if condition_number(&design, 0.0) > delta {
        alpha = (-12..=15)
            .map(|k| 10f64.powi(k))
            .find(|&a| condition_number(&design, a) <= delta)
            // κ_α → 1 as α grows, so the grid always terminates; 1e15
            // dominates any σ reachable at these sizes.
            .unwrap_or(1e15);
    }
    alpha_cache()
        .write()
        .expect("alpha cache poisoned")
        .insert(key, alpha);
    Ok(alpha)
}

/// Evaluates the polynomial or one of its derivatives at absolute frame `t`.
/// Orders above the degree evaluate to 0.
pub fn eval_poly(p: &CentralityPolynomial, t: f64, order: usize) -> f64 {
    if order > p.degree {
        return 0.0;
    }
    let tau = t - p.window.0 as f64;
    // Derivative coefficients: β_k · k!/(k−order)! for k ≥ order.
    let mut acc = 0.0;
    for k in (order..p.beta.len()).rev() {
        let mut coeff = p.beta[k];
        for m in 0..order {
            coeff *= (k - m) as f64;
        }
        acc = acc * tau + coeff;
    }
    acc
}

/// One row of the conditioning study (the condition-number figure's data).
#[derive(Debug, Clone, Serialize)]
pub struct ConditionRow {
    pub samples: usize,
    pub kappa_unregularized: f64,
    pub kappa_regularized: f64,
    pub alpha: f64,
}

/// Unregularized vs regularized condition numbers for T = t_min..=t_max at
/// fixed degree, with α chosen by `select_alpha` at the given bound.
pub fn condition_study(
    degree: usize,
    t_min: usize,
    t_max: usize,
    delta: f64,
) -> Result<Vec<ConditionRow>> {
    if t_min < degree + 1 {
        return Err(Error::Domain(format!(
            "t_min {t_min} is below degree+1 = {}",
            degree + 1
        )));
    }
    if t_max < t_min {
        return Err(Error::Domain(format!("t_max {t_max} precedes t_min {t_min}")));
    }
    let mut rows = Vec::with_capacity(t_max - t_min + 1);
    for samples in t_min..=t_max {
        let times: Vec<f64> = (0..samples).map(|i| i as f64).collect();
        let design = vandermonde(&times, degree)?;
        let alpha = select_alpha(samples, degree, delta)?;
        rows.push(ConditionRow {
            samples,
            kappa_unregularized: condition_number(&design, 0.0),
            kappa_regularized: condition_number(&design, alpha),
            alpha,
        });
    }
    Ok(rows)
}

/// Conditioning study serialized as plot CSV.
pub fn condition_study_csv(rows: &[ConditionRow]) -> String {
    let mut out = String::from("T,kappa_unregularized,kappa_regularized,alpha\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.samples, row.kappa_unregularized, row.kappa_regularized, row.alpha
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::AgentId;

    fn series(values: Vec<f64>) -> CentralitySeries {
        CentralitySeries::new(AgentId::from("a"), CentralityKind::Degree, values, 0).unwrap()
    }

    fn quadratic_samples(b0: f64, b1: f64, b2: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                b0 + b1 * t + b2 * t * t
            })
            .collect()
    }

    #[test]
    fn vandermonde_matches_definition() {
        let m = vandermonde(&[0.0, 1.0, 2.0], 2).unwrap();
        let expected = [[1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1.0, 2.0, 4.0]];
        for (r, row) in expected.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_eq!(m.entries()[(r, c)], *v);
            }
        }
    }

    #[test]
    fn degree_zero_is_ones_column() {
        let m = vandermonde(&[3.0, 5.0, 9.0], 0).unwrap();
        assert_eq!(m.entries().ncols(), 1);
        assert!(m.entries().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn appendix_study_shape() {
        let times: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let m = vandermonde(&times, 2).unwrap();
        assert_eq!((m.samples(), m.entries().ncols()), (20, 3));
    }

    #[test]
    fn ols_recovers_exact_quadratic() {
        let s = series(quadratic_samples(1.0, 2.0, 3.0, 6));
        let p = fit_ols(&s, 2).unwrap();
        for (got, want) in p.beta.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-9, "beta {got} vs {want}");
        }
    }

    #[test]
    fn ols_constant_series() {
        let s = series(vec![4.0; 8]);
        let p = fit_ols(&s, 2).unwrap();
        assert!((p.beta[0] - 4.0).abs() < 1e-9);
        assert!(p.beta[1].abs() < 1e-9);
        assert!(p.beta[2].abs() < 1e-9);
    }

    #[test]
    fn ols_normal_equation_residual_is_tiny() {
        let s = series(
            quadratic_samples(0.5, -1.25, 0.75, 30)
                .iter()
                .enumerate()
                .map(|(i, v)| v + ((i * 7919) % 13) as f64 * 1e-3)
                .collect(),
        );
        let p = fit_ols(&s, 2).unwrap();
        let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let m = vandermonde(&times, 2).unwrap();
        let zeta = DVector::from_column_slice(s.values());
        let beta = DVector::from_column_slice(&p.beta);
        let residual = m.entries().tr_mul(&(zeta.clone() - m.entries() * beta));
        let scale = m.entries().tr_mul(&zeta).abs().max();
        assert!(residual.abs().max() <= 1e-8 * scale);
    }

    #[test]
    fn noisy_ols_error_stays_under_frozen_seed_sweep_bound() {
        // Oracle (seed sweep, uniform noise 1e-3, T = 30): max ‖β̂−β‖ over
        // seeds 0..100 measured at 1.12e-3; frozen with headroom.
        use crate::io::inject_series_noise;
        let clean = series(quadratic_samples(2.0, -0.4, 0.05, 30));
        let p_clean = fit_ols(&clean, 2).unwrap();
        let mut worst = 0.0f64;
        for seed in 0..100 {
            let noisy = inject_series_noise(&clean, 1e-3, seed).unwrap();
            let p = fit_ols(&noisy, 2).unwrap();
            let err: f64 = p
                .beta
                .iter()
                .zip(&p_clean.beta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(err);
        }
        assert!(worst <= 2.0e-3, "seed-sweep worst error {worst}");
    }

    #[test]
    fn duplicate_times_without_regularization_is_singular() {
        let p = fit_samples(
            &[0.0, 0.0, 1.0],
            &[1.0, 2.0, 1.5],
            0,
            CentralityKind::Degree,
            2,
            0.0,
        );
        assert!(matches!(p, Err(Error::Singular(_))));
        // The same design is fine once regularized.
        assert!(fit_samples(
            &[0.0, 0.0, 1.0],
            &[1.0, 2.0, 1.5],
            0,
            CentralityKind::Degree,
            2,
            0.5,
        )
        .is_ok());
    }

    #[test]
    fn tikhonov_at_zero_equals_ols_exactly() {
        let s = series(quadratic_samples(1.0, 0.3, -0.02, 15));
        let a = fit_ols(&s, 2).unwrap();
        let b = fit_tikhonov(&s, 2, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn huge_alpha_shrinks_coefficients_monotonically() {
        let s = series(quadratic_samples(1.0, 1.0, 1.0, 12));
        let mut last = f64::INFINITY;
        for alpha in [0.0, 1.0, 1e3, 1e6, 1e9] {
            let p = fit_tikhonov(&s, 2, alpha).unwrap();
            let norm: f64 = p.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(norm <= last + 1e-12, "norm {norm} after {last} at alpha {alpha}");
            last = norm;
        }
        assert!(last < 1e-6, "norm should vanish at alpha=1e9, got {last}");
    }

    #[test]
    fn tikhonov_matches_normal_equation_route() {
        // Independent algebraic route: solve (MᵀM + α²I)β = Mᵀζ directly.
        let values: Vec<f64> = quadratic_samples(0.2, 0.9, -0.03, 18)
            .iter()
            .enumerate()
            .map(|(i, v)| v + ((i * 31) % 7) as f64 * 1e-2)
            .collect();
        let s = series(values);
        let alpha = 3.7;
        let p = fit_tikhonov(&s, 2, alpha).unwrap();
        let times: Vec<f64> = (0..18).map(|i| i as f64).collect();
        let m = vandermonde(&times, 2).unwrap().entries().clone();
        let zeta = DVector::from_column_slice(s.values());
        let lhs = m.tr_mul(&m) + DMatrix::identity(3, 3) * (alpha * alpha);
        let rhs = m.tr_mul(&zeta);
        let direct = lhs.lu().solve(&rhs).unwrap();
        for (a, b) in p.beta.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_design_condition_is_one() {
        let m = DesignMatrix {
            entries: DMatrix::identity(3, 3),
            degree: 2,
        };
        assert_eq!(condition_number(&m, 0.0), 1.0);
    }

    #[test]
    fn unregularized_kappa_strictly_increases_with_samples() {
        let mut last = 0.0;
        for t in 3..=20 {
            let times: Vec<f64> = (0..t).map(|i| i as f64).collect();
            let m = vandermonde(&times, 2).unwrap();
            let k = condition_number(&m, 0.0);
            assert!(k > last, "kappa {k} at T={t} not above {last}");
            last = k;
        }
    }

    #[test]
    fn regularized_kappa_is_monotone_in_alpha_with_limit_one() {
        let times: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let m = vandermonde(&times, 2).unwrap();
        let mut last = condition_number(&m, 0.0);
        for k in -6..=12 {
            let alpha = 10f64.powi(k);
            let kappa = condition_number(&m, alpha);
            assert!(kappa <= last * (1.0 + 1e-12), "kappa not monotone at alpha {alpha}");
            assert!(kappa >= 1.0);
            last = kappa;
        }
        assert!((condition_number(&m, 1e12) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn select_alpha_zero_when_already_conditioned() {
        // T=4, d=0: kappa is exactly 1.
        assert_eq!(select_alpha(4, 0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn select_alpha_is_tight_on_the_decade_grid() {
        let alpha = select_alpha(20, 2, 2.0).unwrap();
        let times: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let m = vandermonde(&times, 2).unwrap();
        assert!(condition_number(&m, alpha) <= 2.0);
        assert!(condition_number(&m, alpha / 10.0) > 2.0);
    }

    #[test]
    fn select_alpha_is_monotone_in_delta() {
        let tight = select_alpha(20, 2, 2.0).unwrap();
        let loose = select_alpha(20, 2, 50.0).unwrap();
        assert!(loose <= tight);
    }

    #[test]
    fn select_alpha_rejects_delta_at_most_one() {
        assert!(matches!(select_alpha(20, 2, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn eval_poly_values_and_derivatives() {
        let p = CentralityPolynomial {
            beta: vec![1.0, 2.0, 3.0],
            degree: 2,
            alpha: 0.0,
            window: (0, 10),
            kappa: 1.0,
            kind: CentralityKind::Degree,
        };
        // 1 + 2t + 3t² at t = 2.
        assert_eq!(eval_poly(&p, 2.0, 0), 17.0);
        assert_eq!(eval_poly(&p, 2.0, 1), 14.0);
        assert_eq!(eval_poly(&p, 2.0, 2), 6.0);
        assert_eq!(eval_poly(&p, 2.0, 3), 0.0);
        // Second derivative of a quadratic is constant in t.
        assert_eq!(eval_poly(&p, 7.0, 2), eval_poly(&p, -3.0, 2));
    }

    #[test]
    fn eval_poly_shifts_by_window_start() {
        let p = CentralityPolynomial {
            beta: vec![1.0, 2.0, 3.0],
            degree: 2,
            alpha: 0.0,
            window: (100, 110),
            kappa: 1.0,
            kind: CentralityKind::Degree,
        };
        assert_eq!(eval_poly(&p, 102.0, 0), 17.0);
    }

    #[test]
    fn derivatives_match_central_finite_differences() {
        let s = series(quadratic_samples(0.3, -1.1, 0.21, 25));
        let p = fit_ols(&s, 2).unwrap();
        let h = 1e-4;
        for t in [2.0, 9.5, 17.0] {
            let fd1 = (eval_poly(&p, t + h, 0) - eval_poly(&p, t - h, 0)) / (2.0 * h);
            let an1 = eval_poly(&p, t, 1);
            assert!((fd1 - an1).abs() <= 1e-6 * an1.abs().max(1.0));
            let fd2 = (eval_poly(&p, t + h, 1) - eval_poly(&p, t - h, 1)) / (2.0 * h);
            let an2 = eval_poly(&p, t, 2);
            assert!((fd2 - an2).abs() <= 1e-6 * an2.abs().max(1.0));
        }
    }

    #[test]
    fn condition_study_rows_cover_requested_range() {
        let rows = condition_study(2, 3, 20, 2.0).unwrap();
        assert_eq!(rows.len(), 18);
        assert!(rows.iter().all(|r| r.kappa_regularized <= 2.0));
        let csv = condition_study_csv(&rows);
        assert!(csv.starts_with("T,kappa_unregularized"));
        assert_eq!(csv.lines().count(), 19);
    }
}
