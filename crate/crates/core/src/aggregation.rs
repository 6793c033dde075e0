//! Byzantine-resilient asynchronous aggregation at a regional server.
//!
//! Incoming gradients pass a staleness bound and an anomaly gate; accepted
//! gradients buffer until `2f + 1` are present, then a coordinate-wise
//! trimmed mean updates the model and the buffer clears. A plain-mean
//! variant with the gate disabled serves as the non-robust baseline.

use thiserror::Error;

use crate::gradient::GradientVector;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("gradient dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} gradients for trim {trim}, got {got}")]
    InsufficientGradients {
        needed: usize,
        trim: usize,
        got: usize,
    },
    #[error("cannot aggregate an empty gradient set")]
    EmptyInput,
}

/// Anomaly score in [0, 1]: half from direction disagreement with the
/// reference, half from the order-of-magnitude norm ratio. A zero
/// reference scores 0 (cold-start accepts); non-finite gradients score 1.
pub fn detect_anomaly(values: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(values.len(), reference.len(), "dimension mismatch");
    if values.iter().any(|v| !v.is_finite()) {
        return 1.0;
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ref_norm = norm(reference);
    if ref_norm == 0.0 {
        return 0.0;
    }
    let g_norm = norm(values);
    let cosine = if g_norm > 0.0 {
        values
            .iter()
            .zip(reference)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (g_norm * ref_norm)
    } else {
        0.0
    };
    let direction_term = (1.0 - cosine.clamp(-1.0, 1.0)) / 2.0;
    let ratio_term = if g_norm > 0.0 {
        ((g_norm / ref_norm).ln().abs() / 10f64.ln()).min(1.0)
    } else {
        1.0
    };
    0.5 * direction_term + 0.5 * ratio_term
}

/// Coordinate-wise trimmed mean: per coordinate, sort ascending, drop the
/// lowest and highest `f`, average the rest. Requires `2f + 1` inputs.
pub fn trimmed_mean(gradients: &[GradientVector], f: usize) -> Result<Vec<f64>, AggregationError> {
    let n = gradients.len();
    if n < 2 * f + 1 {
        return Err(AggregationError::InsufficientGradients {
            needed: 2 * f + 1,
            trim: f,
            got: n,
        });
    }
    let dim = gradients[0].len();
    for g in gradients {
        if g.len() != dim {
            return Err(AggregationError::DimensionMismatch {
                expected: dim,
                got: g.len(),
            });
        }
    }
    let keep = (n - 2 * f) as f64;
    let mut out = vec![0.0; dim];
    let mut column = vec![0.0; n];
    for (j, slot) in out.iter_mut().enumerate() {
        for (i, g) in gradients.iter().enumerate() {
            column[i] = g.values[j];
        }
        column.sort_by(f64::total_cmp);
        *slot = column[f..n - f].iter().sum::<f64>() / keep;
    }
    Ok(out)
}

/// Unweighted coordinate-wise mean (the vanilla baseline).
pub fn fedavg_mean(gradients: &[GradientVector]) -> Result<Vec<f64>, AggregationError> {
    if gradients.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    let dim = gradients[0].len();
    let mut out = vec![0.0; dim];
    for g in gradients {
        if g.len() != dim {
            return Err(AggregationError::DimensionMismatch {
                expected: dim,
                got: g.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(&g.values) {
            *o += v;
        }
    }
    let inv = 1.0 / gradients.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    Ok(out)
}

/// One descent step: `theta' = theta - eta * gradient`.
pub fn apply_update(theta: &[f64], agg_gradient: &[f64], eta: f64) -> Vec<f64> {
    assert_eq!(theta.len(), agg_gradient.len(), "dimension mismatch");
    assert!(eta > 0.0, "learning rate must be positive");
    theta
        .iter()
        .zip(agg_gradient)
        .map(|(t, g)| t - eta * g)
        .collect()
}

/// Outcome of one gradient submission.
#[derive(Debug, Clone, PartialEq)]
pub enum SubmitOutcome {
    /// Accepted into the buffer; below the aggregation trigger.
    Buffered,
    Rejected(RejectReason),
    /// Trigger reached: the new global model.
    Aggregated(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    /// Gradient computed against a model more than `staleness_max`
    /// versions old.
    Stale { staleness: u32 },
    Anomaly { score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionRecord {
    pub uav_id: u32,
    pub score: f64,
    pub time: f64,
}

/// Counters accumulated since the last threat-window drain.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowCounters {
    pub submitted: u64,
    pub rejected: u64,
    pub anomaly_score_sum: f64,
    pub anomaly_score_count: u64,
}

/// Regional server state machine.
#[derive(Debug, Clone)]
pub struct AggregatorState {
    theta: Vec<f64>,
    version: u32,
    f: usize,
    eta: f64,
    buffer: Vec<GradientVector>,
    tau_anomaly: f64,
    staleness_max: u32,
    reference: Vec<f64>,
    reference_lambda: f64,
    /// Anomaly gate + trimmed mean when true; plain mean, gate disabled
    /// when false (the vanilla variant).
    robust: bool,
    rejection_log: Vec<RejectionRecord>,
    window: WindowCounters,
}

impl AggregatorState {
    pub fn new(initial_theta: Vec<f64>, n_region: usize, eta: f64) -> Self {
        let dim = initial_theta.len();
        Self {
            theta: initial_theta,
            version: 0,
            f: n_region / 3,
            eta,
            buffer: Vec::new(),
            tau_anomaly: 0.3,
            staleness_max: 5,
            reference: vec![0.0; dim],
            reference_lambda: 0.1,
            robust: true,
            rejection_log: Vec::new(),
            window: WindowCounters::default(),
        }
    }

    /// The vanilla-FedAvg variant: same buffering, no gate, plain mean.
    pub fn fedavg(initial_theta: Vec<f64>, n_region: usize, eta: f64) -> Self {
        Self {
            robust: false,
            ..Self::new(initial_theta, n_region, eta)
        }
    }

    pub fn with_tau_anomaly(mut self, tau: f64) -> Self {
        self.tau_anomaly = tau;
        self
    }

    pub fn with_staleness_max(mut self, s: u32) -> Self {
        self.staleness_max = s;
        self
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn f(&self) -> usize {
        self.f
    }

    /// Aggregation trigger: `2f + 1` buffered gradients.
    pub fn trigger(&self) -> usize {
        2 * self.f + 1
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn rejection_log(&self) -> &[RejectionRecord] {
        &self.rejection_log
    }

    /// Drain the threat-window counters.
    pub fn take_window(&mut self) -> WindowCounters {
        std::mem::take(&mut self.window)
    }

    /// Process one gradient through the staleness bound, anomaly gate,
    /// buffer, and (on trigger) aggregation.
    pub fn submit_gradient(
        &mut self,
        g: GradientVector,
        now: f64,
    ) -> Result<SubmitOutcome, AggregationError> {
        if g.len() != self.theta.len() {
            return Err(AggregationError::DimensionMismatch {
                expected: self.theta.len(),
                got: g.len(),
            });
        }
        self.window.submitted += 1;

        let staleness = self.version.saturating_sub(g.model_version);
        if staleness > self.staleness_max {
            self.window.rejected += 1;
            return Ok(SubmitOutcome::Rejected(RejectReason::Stale { staleness }));
        }

        if self.robust {
            let score = detect_anomaly(&g.values, &self.reference);
            self.window.anomaly_score_sum += score;
            self.window.anomaly_score_count += 1;
            if score >= self.tau_anomaly {
                self.window.rejected += 1;
                self.rejection_log.push(RejectionRecord {
                    uav_id: g.owner,
                    score,
                    time: now,
                });
                return Ok(SubmitOutcome::Rejected(RejectReason::Anomaly { score }));
            }
        }

        self.buffer.push(g);
        if self.buffer.len() >= self.trigger() {
            let agg = if self.robust {
                trimmed_mean(&self.buffer, self.f)?
            } else {
                fedavg_mean(&self.buffer)?
            };
            self.theta = apply_update(&self.theta, &agg, self.eta);
            self.version += 1;
            let lambda = self.reference_lambda;
            for (r, a) in self.reference.iter_mut().zip(&agg) {
                *r = (1.0 - lambda) * *r + lambda * a;
            }
            self.buffer.clear();
            return Ok(SubmitOutcome::Aggregated(self.theta.clone()));
        }
        Ok(SubmitOutcome::Buffered)
    }
}
