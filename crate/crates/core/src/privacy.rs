//! Threat scoring and adaptive differential privacy.
//!
//! A regional threat score in [0, 1] is the weighted average of three
//! indicators (gradient rejection rate, behavioral anomaly, communication
//! anomaly). The privacy budget interpolates linearly between `eps_max` at
//! no threat and `eps_min` at full threat. Gradients are L1-clipped and
//! perturbed with per-coordinate Laplace noise of scale `2*C/eps`
//! (replace-one sensitivity `2C`); shared positions get fixed-budget
//! Laplace noise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradient::GradientVector;
use crate::model::Vec3;
use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("threat weights must be non-negative and sum to 1, got {0}")]
    InvalidWeights(f64),
    #[error("indicator out of [0, 1]: {0}")]
    IndicatorRange(f64),
    #[error("threat score out of [0, 1]: {0}")]
    ThreatRange(f64),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("gradient must be clipped before noising")]
    NotClipped,
    #[error("invalid privacy config: {0}")]
    InvalidConfig(&'static str),
    #[error("ewma lambda must be in (0, 1], got {0}")]
    InvalidLambda(f64),
}

/// The three security indicators, each normalized to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThreatIndicators {
    pub r_reject: f64,
    pub d_anomaly: f64,
    pub c_comm: f64,
}

impl ThreatIndicators {
    pub fn new(r_reject: f64, d_anomaly: f64, c_comm: f64) -> Result<Self, PrivacyError> {
        for v in [r_reject, d_anomaly, c_comm] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PrivacyError::IndicatorRange(v));
            }
        }
        Ok(Self {
            r_reject,
            d_anomaly,
            c_comm,
        })
    }
}

/// Weights of the three indicators; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreatWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ThreatWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.2,
        }
    }
}

impl ThreatWeights {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        let sum = self.alpha + self.beta + self.gamma;
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 || (sum - 1.0).abs() > 1e-12 {
            return Err(PrivacyError::InvalidWeights(sum));
        }
        Ok(())
    }
}

/// Privacy budget bounds, clipping bound, and the fixed Layer-1 position
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrivacyConfig {
    pub eps_min: f64,
    pub eps_max: f64,
    /// L1 clipping bound on gradients.
    pub clip_c: f64,
    /// Fixed budget for shared positions.
    pub layer1_epsilon: f64,
    /// Per-coordinate position sensitivity in meters.
    pub position_sensitivity_m: f64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            eps_min: 0.1,
            eps_max: 1.0,
            clip_c: 1.0,
            layer1_epsilon: 0.5,
            position_sensitivity_m: 1.0,
        }
    }
}

impl PrivacyConfig {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if !(self.eps_min > 0.0 && self.eps_min <= self.eps_max) {
            return Err(PrivacyError::InvalidConfig("eps_min/eps_max"));
        }
        if self.clip_c <= 0.0 {
            return Err(PrivacyError::InvalidConfig("clip_c"));
        }
        if self.layer1_epsilon <= 0.0 || self.position_sensitivity_m <= 0.0 {
            return Err(PrivacyError::InvalidConfig("layer1 noise"));
        }
        Ok(())
    }
}

/// Weighted average of the three indicators.
pub fn threat_score(ind: &ThreatIndicators, w: &ThreatWeights) -> Result<f64, PrivacyError> {
    w.validate()?;
    for v in [ind.r_reject, ind.d_anomaly, ind.c_comm] {
        if !(0.0..=1.0).contains(&v) {
            return Err(PrivacyError::IndicatorRange(v));
        }
    }
    Ok((w.alpha * ind.r_reject + w.beta * ind.d_anomaly + w.gamma * ind.c_comm).clamp(0.0, 1.0))
}

/// `eps = eps_min + (1 - theta) * (eps_max - eps_min)`: full budget at no
/// threat, minimum budget at full threat.
pub fn adaptive_epsilon(theta_threat: f64, cfg: &PrivacyConfig) -> Result<f64, PrivacyError> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&theta_threat) {
        return Err(PrivacyError::ThreatRange(theta_threat));
    }
    Ok(cfg.eps_min + (1.0 - theta_threat) * (cfg.eps_max - cfg.eps_min))
}

/// Scale the vector onto the L1 ball of radius `clip_c` and mark the
/// sensitivity bound established.
pub fn clip_gradient(g: &GradientVector, clip_c: f64) -> GradientVector {
    assert!(clip_c > 0.0, "clip bound must be positive");
    let mut out = g.clone();
    // Rescale until the recomputed norm stops shrinking; committing only
    // strictly-improving candidates makes the fixed point exact, so a
    // second clip is a no-op even when rounding parks the norm an ulp
    // above the bound.
    let mut norm = out.l1_norm();
    while norm > clip_c {
        let scale = clip_c / norm;
        let candidate: Vec<f64> = out.values.iter().map(|v| v * scale).collect();
        let next: f64 = candidate.iter().map(|v| v.abs()).sum();
        if next >= norm {
            break;
        }
        out.values = candidate;
        norm = next;
    }
    out.clipped = true;
    out
}

/// Per-coordinate Laplace noise of scale `2 * clip_c / eps`. Requires the
/// input to have been clipped; records the budget spent.
pub fn add_dp_noise(
    g: &GradientVector,
    eps: f64,
    clip_c: f64,
    rng: &mut RngStream,
) -> Result<GradientVector, PrivacyError> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(PrivacyError::InvalidEpsilon(eps));
    }
    if !g.clipped {
        return Err(PrivacyError::NotClipped);
    }
    let scale = 2.0 * clip_c / eps;
    let mut out = g.clone();
    for v in &mut out.values {
        *v += rng.laplace(scale);
    }
    out.epsilon_used = Some(eps);
    Ok(out)
}

/// Fixed-budget Laplace noise on a shared position (Layer-1 sharing).
pub fn dp_noise_position(
    pos: Vec3,
    eps: f64,
    sensitivity_m: f64,
    rng: &mut RngStream,
) -> Vec3 {
    let scale = 2.0 * sensitivity_m / eps;
    Vec3::new(
        pos.x + rng.laplace(scale),
        pos.y + rng.laplace(scale),
        pos.z + rng.laplace(scale),
    )
}

/// Raw observations accumulated over one threat window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThreatObservations {
    pub submitted: u64,
    pub rejected: u64,
    pub anomaly_score_sum: f64,
    pub anomaly_score_count: u64,
    /// Fraction of sends lost in the window.
    pub loss_rate: f64,
    /// Mean delivery delay over the window, seconds.
    pub mean_delay_s: f64,
}

/// EWMA update of the indicators from one window of observations. Missing
/// observations default to 0, so quiet windows decay each indicator by
/// `(1 - lambda)`.
pub fn update_threat_indicators(
    prev: &ThreatIndicators,
    obs: &ThreatObservations,
    ewma_lambda: f64,
    delay_max_s: f64,
) -> Result<ThreatIndicators, PrivacyError> {
    if !(ewma_lambda > 0.0 && ewma_lambda <= 1.0) {
        return Err(PrivacyError::InvalidLambda(ewma_lambda));
    }
    let reject_obs = if obs.submitted > 0 {
        obs.rejected as f64 / obs.submitted as f64
    } else {
        0.0
    };
    let anomaly_obs = if obs.anomaly_score_count > 0 {
        obs.anomaly_score_sum / obs.anomaly_score_count as f64
    } else {
        0.0
    };
    let comm_obs = 0.5 * obs.loss_rate.clamp(0.0, 1.0)
        + 0.5 * (obs.mean_delay_s / delay_max_s).min(1.0).max(0.0);
    let blend = |prev: f64, o: f64| ((1.0 - ewma_lambda) * prev + ewma_lambda * o).clamp(0.0, 1.0);
    Ok(ThreatIndicators {
        r_reject: blend(prev.r_reject, reject_obs.clamp(0.0, 1.0)),
        d_anomaly: blend(prev.d_anomaly, anomaly_obs.clamp(0.0, 1.0)),
        c_comm: blend(prev.c_comm, comm_obs),
    })
}
