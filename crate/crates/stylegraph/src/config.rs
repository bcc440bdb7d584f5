use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All analysis knobs in one serializable document. Every run is reproducible
/// from this plus the input data and a seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Proximity threshold for traffic-graph edges, meters.
    pub mu: f64,
    /// Maximum number of vehicles tracked by the adjacency matrix (N).
    pub capacity: usize,
    /// Frames an edgeless agent may stay out of view before it is dropped.
    pub dwell_frames: u64,
    /// Polynomial degree for centrality fits.
    pub degree: usize,
    /// Target bound on the regularized condition number (> 1).
    pub delta: f64,
    /// Sliding-window length (frames) for SLE/SIE curves and weaving fits.
    pub window_len: usize,
    /// Stride (frames) between weaving windows.
    pub stride: usize,
    /// Radius (frames) of the ball used for sharpness and deduplication.
    pub eps_ball: f64,
    /// Minimum sharpness for a critical point to count as weaving.
    pub sharp_tol: f64,
    /// Conservative threshold on SLE maxima. `None` derives 5% of the
    /// episode median across agents.
    pub conservative_tol: Option<f64>,
    /// Frames per second of the input data.
    pub frame_rate_hz: f64,
    /// Uniform noise half-width injected into centrality series before
    /// fitting (robustness experiments; 0 disables).
    pub series_epsilon: f64,
    /// Seed for series-noise injection.
    pub noise_seed: u64,
    /// Feature layout: false = fit coefficients only, true = coefficients
    /// plus SLE maxima and the weaving critical-point count.
    pub extended_features: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            mu: 10.0,
            capacity: 1000,
            dwell_frames: 10,
            degree: 2,
            delta: 2.0,
            window_len: 11,
            stride: 2,
            eps_ball: 2.0,
            sharp_tol: 1e-3,
            conservative_tol: None,
            frame_rate_hz: 10.0,
            series_epsilon: 0.0,
            noise_seed: 0,
            extended_features: false,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Domain(format!("mu must be positive, got {}", self.mu)));
        }
        if self.capacity == 0 {
            return Err(Error::Domain("capacity must be at least 1".into()));
        }
        if !(self.delta > 1.0) {
            return Err(Error::Domain(format!(
                "delta must exceed 1, got {}",
                self.delta
            )));
        }
        if self.window_len < self.degree + 1 {
            return Err(Error::Domain(format!(
                "window_len {} is below degree+1 = {}",
                self.window_len,
                self.degree + 1
            )));
        }
        if self.stride == 0 {
            return Err(Error::Domain("stride must be positive".into()));
        }
        if !(self.eps_ball > 0.0) {
            return Err(Error::Domain("eps_ball must be positive".into()));
        }
        if self.sharp_tol < 0.0 {
            return Err(Error::Domain("sharp_tol must be non-negative".into()));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(Error::Domain(format!(
                "frame_rate_hz must be positive, got {}",
                self.frame_rate_hz
            )));
        }
        if self.series_epsilon < 0.0 {
            return Err(Error::Domain("series_epsilon must be non-negative".into()));
        }
        if let Some(tol) = self.conservative_tol {
            if tol < 0.0 {
                return Err(Error::Domain("conservative_tol must be non-negative".into()));
            }
        }
        Ok(())
    }
}
