//! Style likelihood and intensity estimates per specific driving style.
//!
//! SLE is the magnitude of the first derivative of a centrality polynomial,
//! SIE the magnitude of the second. Overspeeding reads the degree
//! polynomial, overtaking and sudden lane-changes read the closeness
//! polynomial. Weaving counts sharp critical points of the closeness series
//! (a single quadratic cannot oscillate, so detection aggregates critical
//! points of sliding-window quadratic fits). The full per-agent report is
//! likewise built from sliding fits so that maxima land at the maneuver,
//! not at a window boundary.

use serde::{Deserialize, Serialize};

use crate::centrality::{closeness_series, degree_series, CentralityKind, CentralitySeries};
use crate::config::AnalysisConfig;
use crate::error::{Error, Result};
use crate::graph::accumulate_states;
use crate::io::{inject_series_noise, AgentId, TrajectorySet};
use crate::polyfit::{eval_poly, select_alpha, CentralityPolynomial, DesignSvd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StyleKind {
    Overspeeding,
    Overtaking,
    SuddenLaneChange,
    Weaving,
    Conservative,
}

impl StyleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Overspeeding => "overspeeding",
            Self::Overtaking => "overtaking",
            Self::SuddenLaneChange => "sudden_lane_change",
            Self::Weaving => "weaving",
            Self::Conservative => "conservative",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "overspeeding" => Ok(Self::Overspeeding),
            "overtaking" => Ok(Self::Overtaking),
            "sudden_lane_change" | "sudden-lane-change" => Ok(Self::SuddenLaneChange),
            "weaving" => Ok(Self::Weaving),
            "conservative" => Ok(Self::Conservative),
            other => Err(Error::Type(format!("unknown style {other:?}"))),
        }
    }

    /// Centrality kind this style's polynomial estimator reads.
    fn centrality(&self) -> Option<CentralityKind> {
        match self {
            Self::Overspeeding => Some(CentralityKind::Degree),
            Self::Overtaking | Self::SuddenLaneChange => Some(CentralityKind::Closeness),
            Self::Weaving | Self::Conservative => None,
        }
    }
}

/// Per-frame SLE/SIE curves for one polynomial-backed style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleChannel {
    pub sle: Vec<f64>,
    pub sie: Vec<f64>,
    pub sle_max: f64,
    /// Frame attaining `sle_max` (earliest on ties).
    pub t_sle: u64,
}

/// Critical point of the closeness fit admitted by the sharpness filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub t: f64,
    pub sharpness: f64,
}

/// Weaving evidence: |𝒯| is the style's SLE, per-point sharpness its SIE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeavingChannel {
    pub critical_points: Vec<CriticalPoint>,
    pub count: usize,
    pub max_sharpness: f64,
    /// Critical point of maximum sharpness, if any.
    pub t_peak: Option<f64>,
}

impl WeavingChannel {
    fn from_points(critical_points: Vec<CriticalPoint>) -> Self {
        let mut max_sharpness = 0.0;
        let mut t_peak = None;
        for p in &critical_points {
            if p.sharpness > max_sharpness {
                max_sharpness = p.sharpness;
                t_peak = Some(p.t);
            }
        }
        Self {
            count: critical_points.len(),
            critical_points,
            max_sharpness,
            t_peak,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleReport {
    pub agent: AgentId,
    pub window: (u64, u64),
    pub overspeeding: StyleChannel,
    pub overtaking: StyleChannel,
    pub sudden_lane_change: StyleChannel,
    pub weaving: WeavingChannel,
    pub conservative: bool,
}

impl StyleReport {
    pub fn channel(&self, style: StyleKind) -> Option<&StyleChannel> {
        match style {
            StyleKind::Overspeeding => Some(&self.overspeeding),
            StyleKind::Overtaking => Some(&self.overtaking),
            StyleKind::SuddenLaneChange => Some(&self.sudden_lane_change),
            _ => None,
        }
    }

    /// Largest SLE maximum over the polynomial-backed styles.
    pub fn max_sle(&self) -> f64 {
        self.overspeeding
            .sle_max
            .max(self.overtaking.sle_max)
            .max(self.sudden_lane_change.sle_max)
    }
}

/// Report plus the whole-window fits it was computed from (the fits double
/// as classifier features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAnalysis {
    pub report: StyleReport,
    pub degree_poly: CentralityPolynomial,
    pub closeness_poly: CentralityPolynomial,
}

fn check_style_kind(p: &CentralityPolynomial, kind: StyleKind) -> Result<()> {
    match kind.centrality() {
        Some(expected) if expected == p.kind => Ok(()),
        Some(expected) => Err(Error::Type(format!(
            "style {} reads the {expected:?} polynomial, got {:?}",
            kind.as_str(),
            p.kind
        ))),
        None => Err(Error::Type(format!(
            "style {} has no polynomial estimator",
            kind.as_str()
        ))),
    }
}

/// SLE curve of one polynomial: |∂ζ/∂t| sampled per frame over the fit
/// window, with its maximum and earliest argmax.
pub fn style_likelihood(
    p: &CentralityPolynomial,
    kind: StyleKind,
) -> Result<(Vec<f64>, f64, u64)> {
    check_style_kind(p, kind)?;
    let curve: Vec<f64> = (p.window.0..=p.window.1)
        .map(|t| eval_poly(p, t as f64, 1).abs())
        .collect();
    let (sle_max, t_sle) = curve_max(&curve, p.window.0);
    Ok((curve, sle_max, t_sle))
}

/// SIE curve: |∂²ζ/∂t²| per frame.
pub fn style_intensity(p: &CentralityPolynomial, kind: StyleKind) -> Result<Vec<f64>> {
    check_style_kind(p, kind)?;
    Ok((p.window.0..=p.window.1)
        .map(|t| eval_poly(p, t as f64, 2).abs())
        .collect())
}

fn curve_max(curve: &[f64], window_start: u64) -> (f64, u64) {
    let mut best = f64::NEG_INFINITY;
    let mut at = 0usize;
    for (i, &v) in curve.iter().enumerate() {
        if v > best {
            best = v;
            at = i;
        }
    }
    (best, window_start + at as u64)
}

/// Weaving detection: quadratic fits over sliding windows of the closeness
/// series; a window's interior critical point t_c is admitted iff its
/// ε-sharpness max_{t∈B_ε(t_c)} |ζ(t) − ζ(t_c)|/ε exceeds `sharp_tol`.
/// Points within `eps_ball` of an admitted point deduplicate to the sharper
/// one.
pub fn detect_weaving(
    series: &CentralitySeries,
    window_len: usize,
    stride: usize,
    eps_ball: f64,
    sharp_tol: f64,
) -> Result<Vec<CriticalPoint>> {
    if series.kind() != CentralityKind::Closeness {
        return Err(Error::Type(
            "weaving detection reads the closeness series".into(),
        ));
    }
    if stride == 0 {
        return Err(Error::Domain("stride must be positive".into()));
    }
    if window_len < 3 {
        return Err(Error::Domain(
            "window_len must be at least 3 (quadratic fit)".into(),
        ));
    }
    if window_len > series.len() {
        return Err(Error::Domain(format!(
            "window_len {window_len} exceeds series length {}",
            series.len()
        )));
    }
    if !(eps_ball > 0.0) {
        return Err(Error::Domain("eps_ball must be positive".into()));
    }

    let times: Vec<f64> = (0..window_len).map(|i| i as f64).collect();
    let design = DesignSvd::new(&times, 2)?;
    let values = series.values();
    let start_frame = series.window().0;

    let mut admitted: Vec<CriticalPoint> = Vec::new();
    let mut start = 0usize;
    loop {
        let window = &values[start..start + window_len];
        let p = design.solve(
            window,
            start_frame + start as u64,
            CentralityKind::Closeness,
            0.0,
        )?;
        let b1 = p.beta[1];
        let b2 = p.beta[2];
        if b2 != 0.0 {
            let tau = -b1 / (2.0 * b2);
            // Interior critical points only (open interval).
            if tau > 0.0 && tau < (window_len - 1) as f64 {
                let t_c = start_frame as f64 + start as f64 + tau;
                let at = |t: f64| eval_poly(&p, t, 0);
                let sharpness = (at(t_c + eps_ball) - at(t_c))
                    .abs()
                    .max((at(t_c - eps_ball) - at(t_c)).abs())
                    / eps_ball;
                if sharpness > sharp_tol {
                    match admitted.iter_mut().find(|q| (q.t - t_c).abs() <= eps_ball) {
                        Some(q) => {
                            if sharpness > q.sharpness {
                                *q = CriticalPoint { t: t_c, sharpness };
                            }
                        }
                        None => admitted.push(CriticalPoint { t: t_c, sharpness }),
                    }
                }
            }
        }
        if start + window_len >= values.len() {
            break;
        }
        start = (start + stride).min(values.len() - window_len);
    }
    admitted.sort_by(|a, b| a.t.partial_cmp(&b.t).expect("critical times are finite"));
    Ok(admitted)
}

/// Conservative iff every style's SLE maximum stays at or below `tol` and
/// no weaving critical point was admitted.
pub fn classify_conservative(report: &StyleReport, tol: f64) -> bool {
    report.max_sle() <= tol && report.weaving.count == 0
}

/// SLE/SIE curves from quadratic fits over sliding windows centered (and
/// clamped) around each frame, regularized at the configured condition
/// bound. Falls back to a single whole-series fit when the series is
/// shorter than the window.
fn sliding_curves(
    series: &CentralitySeries,
    config: &AnalysisConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = series.len();
    let len = config.window_len.min(n);
    if len < config.degree + 1 {
        return Err(Error::Domain(format!(
            "series of {n} samples cannot support a degree-{} fit",
            config.degree
        )));
    }
    let alpha = select_alpha(len, config.degree, config.delta)?;
    let times: Vec<f64> = (0..len).map(|i| i as f64).collect();
    let design = DesignSvd::new(&times, config.degree)?;
    let start_frame = series.window().0;
    let values = series.values();

    let mut fits: Vec<Option<CentralityPolynomial>> = vec![None; n - len + 1];
    let mut sle = Vec::with_capacity(n);
    let mut sie = Vec::with_capacity(n);
    for i in 0..n {
        let start = i.saturating_sub(len / 2).min(n - len);
        if fits[start].is_none() {
            fits[start] = Some(design.solve(
                &values[start..start + len],
                start_frame + start as u64,
                series.kind(),
                alpha,
            )?);
        }
        let p = fits[start].as_ref().expect("fit just inserted");
        let t = start_frame as f64 + i as f64;
        sle.push(eval_poly(p, t, 1).abs());
        sie.push(eval_poly(p, t, 2).abs());
    }
    Ok((sle, sie))
}

fn channel_from_series(
    series: &CentralitySeries,
    config: &AnalysisConfig,
) -> Result<StyleChannel> {
    let (sle, sie) = sliding_curves(series, config)?;
    let (sle_max, t_sle) = curve_max(&sle, series.window().0);
    Ok(StyleChannel {
        sle,
        sie,
        sle_max,
        t_sle,
    })
}

/// Runs the full pipeline for every analyzable agent of an episode:
/// graphs → centrality series → regularized fits → SLE/SIE, weaving and the
/// conservative flag. Agents observed for fewer than `degree + 1` frames
/// are skipped. Deterministic given (trajectories, config).
pub fn episode_analyses(ts: &TrajectorySet, config: &AnalysisConfig) -> Result<Vec<AgentAnalysis>> {
    config.validate()?;
    let states = accumulate_states(ts, config.mu, config.capacity, config.dwell_frames)?;
    let frames = ts.frames();

    let mut partial = Vec::new();
    for agent in ts.agents() {
        let (first, last) = ts.presence(agent).expect("agent has observations");
        if (last - first) as usize + 1 < config.degree + 1 {
            continue;
        }
        let a = frames
            .binary_search_by_key(&first, |f| f.t)
            .map_err(|_| Error::Range(format!("frame {first} missing")))?;
        let b = frames
            .binary_search_by_key(&last, |f| f.t)
            .map_err(|_| Error::Range(format!("frame {last} missing")))?;

        let mut deg = degree_series(&states[a..=b], agent)?;
        let mut clo = closeness_series(ts, config.mu, agent, (first, last))?;
        if config.series_epsilon > 0.0 {
            let idx = ts.agent_index()[agent] as u64;
            let base = config
                .noise_seed
                .wrapping_mul(0x100000001b3)
                .wrapping_add(idx);
            deg = inject_series_noise(&deg, config.series_epsilon, base.wrapping_mul(2))?;
            clo = inject_series_noise(
                &clo,
                config.series_epsilon,
                base.wrapping_mul(2).wrapping_add(1),
            )?;
        }

        let alpha = select_alpha(deg.len(), config.degree, config.delta)?;
        let degree_poly = crate::polyfit::fit_tikhonov(&deg, config.degree, alpha)?;
        let closeness_poly = crate::polyfit::fit_tikhonov(&clo, config.degree, alpha)?;

        let overspeeding = channel_from_series(&deg, config)?;
        let overtaking = channel_from_series(&clo, config)?;
        let sudden_lane_change = overtaking.clone();
        let weaving = WeavingChannel::from_points(detect_weaving(
            &clo,
            config.window_len.min(clo.len()),
            config.stride,
            config.eps_ball,
            config.sharp_tol,
        )?);

        partial.push(AgentAnalysis {
            report: StyleReport {
                agent: agent.clone(),
                window: (first, last),
                overspeeding,
                overtaking,
                sudden_lane_change,
                weaving,
                conservative: false,
            },
            degree_poly,
            closeness_poly,
        });
    }

    let tol = match config.conservative_tol {
        Some(t) => t,
        None => 0.05 * median(partial.iter().map(|a| a.report.max_sle()).collect()),
    };
    for a in &mut partial {
        a.report.conservative = classify_conservative(&a.report, tol);
    }
    Ok(partial)
}

/// Full pipeline for a single agent (computes the episode anyway: the
/// conservative threshold is episode-relative).
pub fn style_report(
    ts: &TrajectorySet,
    agent: &AgentId,
    config: &AnalysisConfig,
) -> Result<StyleReport> {
    episode_analyses(ts, config)?
        .into_iter()
        .find(|a| &a.report.agent == agent)
        .map(|a| a.report)
        .ok_or_else(|| Error::Lookup(format!("agent {agent} not analyzable in this episode")))
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("SLE maxima are finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
