//! Temporal graph attention over neighbor windows.
//!
//! Per time step, an ego agent attends over its neighbors with scaled
//! query/key dot products; the attended key values feed a sigmoid readout
//! that scores each neighbor's collision risk. The same forward pass backs
//! both the dense local layer and the sparse regional layer, and the
//! analytic gradient of a binary cross-entropy loss on the max risk drives
//! federated training.
//!
//! Flat parameter ordering (shared with the gradient wire format):
//! `W_q` row-major, then `W_k` row-major, then `w_out`, then `bias`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{UavState, Vec3};
use crate::rng::RngStream;

/// Fixed embedding width: relative position (3), relative velocity (3),
/// separation, closing speed.
pub const FEATURE_DIM: usize = 8;
/// Positions enter features divided by this many meters.
pub const POSITION_SCALE_M: f64 = 100.0;
/// Velocities (and closing speeds) enter features divided by this many m/s.
pub const VELOCITY_SCALE_MPS: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("gradient batch is empty")]
    EmptyBatch,
    #[error("neighbor windows must share length {expected}, got {got}")]
    WindowLength { expected: usize, got: usize },
    #[error("flat parameter vector has wrong length: expected {expected}, got {got}")]
    FlatLength { expected: usize, got: usize },
    #[error("cluster size must be at least 2, got {0}")]
    InvalidClusterSize(usize),
}

/// Dense row-major matrix; everything here is small (d_k x d_h).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// `self += scale * u v^T`
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                self.data[r * self.cols + c] += scale * u[r] * v[c];
            }
        }
    }
}

/// One embedded state, length [`FEATURE_DIM`] in the default pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Query/key transforms and the risk readout head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_out: Vec<f64>,
    pub bias: f64,
}

impl AttentionParams {
    pub fn d_k(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_h(&self) -> usize {
        self.w_q.cols()
    }

    /// Flat parameter count: `2*d_k*d_h + d_k + 1`.
    pub fn dim(&self) -> usize {
        2 * self.d_k() * self.d_h() + self.d_k() + 1
    }

    pub fn flat_dim(d_k: usize, d_h: usize) -> usize {
        2 * d_k * d_h + d_k + 1
    }

    /// Seeded uniform init in [-0.1, 0.1]; draw order matches the flat
    /// parameter ordering.
    pub fn seeded(d_k: usize, d_h: usize, stream: &mut RngStream) -> Self {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| stream.uniform01() * 0.2 - 0.1).collect()
        };
        let w_q = Matrix::from_vec(d_k, d_h, draw(d_k * d_h));
        let w_k = Matrix::from_vec(d_k, d_h, draw(d_k * d_h));
        let w_out = draw(d_k);
        let bias = draw(1)[0];
        Self {
            w_q,
            w_k,
            w_out,
            bias,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(self.w_q.data());
        out.extend_from_slice(self.w_k.data());
        out.extend_from_slice(&self.w_out);
        out.push(self.bias);
        out
    }

    pub fn from_flat(d_k: usize, d_h: usize, flat: &[f64]) -> Result<Self, AttentionError> {
        let expected = Self::flat_dim(d_k, d_h);
        if flat.len() != expected {
            return Err(AttentionError::FlatLength {
                expected,
                got: flat.len(),
            });
        }
        let m = d_k * d_h;
        Ok(Self {
            w_q: Matrix::from_vec(d_k, d_h, flat[..m].to_vec()),
            w_k: Matrix::from_vec(d_k, d_h, flat[m..2 * m].to_vec()),
            w_out: flat[2 * m..2 * m + d_k].to_vec(),
            bias: flat[2 * m + d_k],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.w_q.data().iter().all(|v| v.is_finite())
            && self.w_k.data().iter().all(|v| v.is_finite())
            && self.w_out.iter().all(|v| v.is_finite())
            && self.bias.is_finite()
    }
}

/// Observed trajectory window of one neighbor: `(position, velocity)` per
/// tick, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborWindow {
    pub uav_id: u32,
    pub samples: Vec<(Vec3, Vec3)>,
}

/// Ego state plus the neighbor windows it attends over.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub ego: UavState,
    pub neighbors: Vec<NeighborWindow>,
    pub window_length: usize,
}

impl LocalGraph {
    pub fn new(
        ego: UavState,
        neighbors: Vec<NeighborWindow>,
        window_length: usize,
    ) -> Result<Self, AttentionError> {
        if window_length == 0 {
            return Err(AttentionError::WindowLength {
                expected: 1,
                got: 0,
            });
        }
        for n in &neighbors {
            if n.samples.len() != window_length {
                return Err(AttentionError::WindowLength {
                    expected: window_length,
                    got: n.samples.len(),
                });
            }
        }
        Ok(Self {
            ego,
            neighbors,
            window_length,
        })
    }
}

/// Per-neighbor collision risk plus the raw attention rows behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskAssessment {
    pub per_neighbor_risk: BTreeMap<u32, f64>,
    pub max_risk: f64,
    /// One row per time step; each row sums to 1 when neighbors exist.
    pub attention: Vec<Vec<f64>>,
}

fn embed(dp: Vec3, dv: Vec3) -> FeatureVector {
    let dist = dp.norm();
    let closing = if dist > 0.0 { -dp.dot(dv) / dist } else { 0.0 };
    FeatureVector(vec![
        dp.x / POSITION_SCALE_M,
        dp.y / POSITION_SCALE_M,
        dp.z / POSITION_SCALE_M,
        dv.x / VELOCITY_SCALE_MPS,
        dv.y / VELOCITY_SCALE_MPS,
        dv.z / VELOCITY_SCALE_MPS,
        dist / POSITION_SCALE_M,
        closing / VELOCITY_SCALE_MPS,
    ])
}

/// Embed one neighbor window relative to the ego state: one feature vector
/// per time step, translation invariant by construction. Closing speed is
/// positive while the neighbor approaches.
pub fn build_features(window: &NeighborWindow, ego: &UavState) -> Vec<FeatureVector> {
    window
        .samples
        .iter()
        .map(|&(p, v)| embed(p - ego.position, v - ego.velocity))
        .collect()
}

/// Query-side features: the ego relative to the neighborhood centroid at
/// step `t`. Keeps the query informative while staying in the same
/// translation-invariant embedding as the keys.
pub fn ego_query_features(graph: &LocalGraph, t: usize) -> FeatureVector {
    let m = graph.neighbors.len();
    if m == 0 {
        return FeatureVector(vec![0.0; FEATURE_DIM]);
    }
    let mut pc = Vec3::ZERO;
    let mut vc = Vec3::ZERO;
    for n in &graph.neighbors {
        let (p, v) = n.samples[t];
        pc = pc + p;
        vc = vc + v;
    }
    let inv = 1.0 / m as f64;
    embed(
        graph.ego.position - pc * inv,
        graph.ego.velocity - vc * inv,
    )
}

/// Softmax of scaled query/key dot products over the neighbor axis.
/// Returns one weight per neighbor; an empty neighbor list yields an empty
/// row with no normalization attempted.
pub fn attention_weights(
    params: &AttentionParams,
    ego_features: &FeatureVector,
    neighbor_features: &[FeatureVector],
) -> Vec<f64> {
    if neighbor_features.is_empty() {
        return Vec::new();
    }
    let q = params.w_q.matvec(ego_features.values());
    let inv_sqrt_dk = 1.0 / (params.d_k() as f64).sqrt();
    let scores: Vec<f64> = neighbor_features
        .iter()
        .map(|h| {
            let k = params.w_k.matvec(h.values());
            q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt_dk
        })
        .collect();
    softmax(&scores)
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediates of one forward pass, shared by risk scoring and the
/// analytic gradient.
struct Forward {
    /// Per step: ego features, per-neighbor features, query, keys, alpha row.
    steps: Vec<StepForward>,
    /// Per neighbor: attended key accumulator (sum over t of alpha * key).
    acc: Vec<Vec<f64>>,
    /// Per neighbor readout logits.
    logits: Vec<f64>,
    /// Index (into graph.neighbors) of the max-risk neighbor; ties go to
    /// the lowest uav id.
    argmax: Option<usize>,
}

struct StepForward {
    ego: FeatureVector,
    features: Vec<FeatureVector>,
    query: Vec<f64>,
    keys: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

fn forward(graph: &LocalGraph, params: &AttentionParams) -> Forward {
    let m = graph.neighbors.len();
    let t_len = graph.window_length;
    let d_k = params.d_k();
    let inv_sqrt_dk = 1.0 / (d_k as f64).sqrt();

    let per_neighbor_features: Vec<Vec<FeatureVector>> = graph
        .neighbors
        .iter()
        .map(|w| build_features(w, &graph.ego))
        .collect();

    let mut steps = Vec::with_capacity(t_len);
    let mut acc = vec![vec![0.0; d_k]; m];
    for t in 0..t_len {
        let ego = ego_query_features(graph, t);
        let query = params.w_q.matvec(ego.values());
        let features: Vec<FeatureVector> = per_neighbor_features
            .iter()
            .map(|f| f[t].clone())
            .collect();
        let keys: Vec<Vec<f64>> = features
            .iter()
            .map(|h| params.w_k.matvec(h.values()))
            .collect();
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| query.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt_dk)
            .collect();
        let alpha = if m > 0 { softmax(&scores) } else { Vec::new() };
        for j in 0..m {
            for d in 0..d_k {
                acc[j][d] += alpha[j] * keys[j][d];
            }
        }
        steps.push(StepForward {
            ego,
            features,
            query,
            keys,
            alpha,
        });
    }

    let inv_t = 1.0 / t_len as f64;
    let logits: Vec<f64> = acc
        .iter()
        .map(|a| {
            params
                .w_out
                .iter()
                .zip(a)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                * inv_t
                + params.bias
        })
        .collect();

    let mut argmax: Option<usize> = None;
    for j in 0..m {
        let better = match argmax {
            None => true,
            Some(b) => {
                logits[j] > logits[b]
                    || (logits[j] == logits[b]
                        && graph.neighbors[j].uav_id < graph.neighbors[b].uav_id)
            }
        };
        if better {
            argmax = Some(j);
        }
    }

    Forward {
        steps,
        acc,
        logits,
        argmax,
    }
}

/// Dense temporal attention risk over every neighbor in the graph.
pub fn local_risk(graph: &LocalGraph, params: &AttentionParams) -> RiskAssessment {
    let fwd = forward(graph, params);
    let mut per_neighbor_risk = BTreeMap::new();
    let mut max_risk = 0.0f64;
    for (j, w) in graph.neighbors.iter().enumerate() {
        let r = sigmoid(fwd.logits[j]);
        per_neighbor_risk.insert(w.uav_id, r);
        if r > max_risk {
            max_risk = r;
        }
    }
    RiskAssessment {
        per_neighbor_risk,
        max_risk,
        attention: fwd.steps.into_iter().map(|s| s.alpha).collect(),
    }
}

/// `k = ceil(log2 n)` via bit arithmetic; exact for every `n >= 2`.
pub fn sparse_k(n: usize) -> usize {
    debug_assert!(n >= 2);
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// Select up to `k = ceil(log2 n)` strategic neighbors: the 3 nearest, the
/// 2 most velocity-aligned of the rest, any designated leaders, then
/// nearest-fill. All orderings tie-break by ascending uav id; the ego is
/// never selected.
pub fn select_sparse_neighbors(
    all_states: &[UavState],
    ego: &UavState,
    leaders: &BTreeSet<u32>,
    n: usize,
) -> Result<BTreeSet<u32>, AttentionError> {
    if n < 2 {
        return Err(AttentionError::InvalidClusterSize(n));
    }
    let k = sparse_k(n);
    let mut candidates: Vec<&UavState> = all_states
        .iter()
        .filter(|s| s.uav_id != ego.uav_id)
        .collect();
    candidates.sort_by(|a, b| {
        let da = a.position.distance(ego.position);
        let db = b.position.distance(ego.position);
        da.total_cmp(&db).then(a.uav_id.cmp(&b.uav_id))
    });

    let mut picked: Vec<u32> = Vec::new();
    let push = |picked: &mut Vec<u32>, id: u32| {
        if !picked.contains(&id) {
            picked.push(id);
        }
    };

    for s in candidates.iter().take(3) {
        push(&mut picked, s.uav_id);
    }

    // Velocity alignment among the rest; zero-norm velocities score 0.
    let mut rest: Vec<&&UavState> = candidates.iter().skip(3).collect();
    rest.sort_by(|a, b| {
        let cos = |s: &UavState| {
            let nn = s.velocity.norm() * ego.velocity.norm();
            if nn > 0.0 {
                s.velocity.dot(ego.velocity) / nn
            } else {
                0.0
            }
        };
        cos(b).total_cmp(&cos(a)).then(a.uav_id.cmp(&b.uav_id))
    });
    for s in rest.iter().take(2) {
        push(&mut picked, s.uav_id);
    }

    for id in leaders {
        if *id != ego.uav_id && candidates.iter().any(|s| s.uav_id == *id) {
            push(&mut picked, *id);
        }
    }

    for s in &candidates {
        push(&mut picked, s.uav_id);
    }

    picked.truncate(k.min(candidates.len()));
    Ok(picked.into_iter().collect())
}

/// Mean binary cross-entropy of max risk against encounter labels,
/// computed through logits for stability. Graphs without neighbors carry
/// no prediction and are skipped.
pub fn risk_loss(params: &AttentionParams, batch: &[(LocalGraph, bool)]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (graph, label) in batch {
        let fwd = forward(graph, params);
        let Some(j) = fwd.argmax else { continue };
        let z = fwd.logits[j];
        let y = if *label { 1.0 } else { 0.0 };
        total += z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Analytic gradient of [`risk_loss`] with respect to every parameter, in
/// the flat ordering. The loss sees only the max-risk neighbor, so each
/// sample backpropagates through its argmax readout and the softmax rows
/// feeding it.
pub fn risk_gradient(
    params: &AttentionParams,
    batch: &[(LocalGraph, bool)],
) -> Result<Vec<f64>, AttentionError> {
    if batch.is_empty() {
        return Err(AttentionError::EmptyBatch);
    }
    let d_k = params.d_k();
    let d_h = params.d_h();
    let inv_sqrt_dk = 1.0 / (d_k as f64).sqrt();

    let mut g_wq = Matrix::zeros(d_k, d_h);
    let mut g_wk = Matrix::zeros(d_k, d_h);
    let mut g_wout = vec![0.0; d_k];
    let mut g_bias = 0.0;
    let mut count = 0usize;

    for (graph, label) in batch {
        let fwd = forward(graph, params);
        let Some(js) = fwd.argmax else { continue };
        count += 1;
        let y = if *label { 1.0 } else { 0.0 };
        let dldz = sigmoid(fwd.logits[js]) - y;
        let inv_t = 1.0 / graph.window_length as f64;

        for d in 0..d_k {
            g_wout[d] += dldz * fwd.acc[js][d] * inv_t;
        }
        g_bias += dldz;

        for step in &fwd.steps {
            let m = step.alpha.len();
            // dz/d(score_j) through the softmax row feeding the argmax.
            let c_t = params
                .w_out
                .iter()
                .zip(&step.keys[js])
                .map(|(w, k)| w * k)
                .sum::<f64>()
                * inv_t;
            let a_star = step.alpha[js];
            let mut dq = vec![0.0; d_k];
            for j in 0..m {
                let delta = if j == js { 1.0 } else { 0.0 };
                let ds = c_t * a_star * (delta - step.alpha[j]);
                for d in 0..d_k {
                    dq[d] += ds * step.keys[j][d] * inv_sqrt_dk;
                }
                // dz/d(key_j): score path plus, for the argmax, the value path.
                let mut dk_j = vec![0.0; d_k];
                for d in 0..d_k {
                    dk_j[d] = ds * step.query[d] * inv_sqrt_dk;
                }
                if j == js {
                    for d in 0..d_k {
                        dk_j[d] += a_star * params.w_out[d] * inv_t;
                    }
                }
                g_wk.add_outer(&dk_j, step.features[j].values(), dldz);
            }
            g_wq.add_outer(&dq, step.ego.values(), dldz);
        }
    }

    let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let mut flat = Vec::with_capacity(AttentionParams::flat_dim(d_k, d_h));
    flat.extend(g_wq.data().iter().map(|v| v * scale));
    flat.extend(g_wk.data().iter().map(|v| v * scale));
    flat.extend(g_wout.iter().map(|v| v * scale));
    flat.push(g_bias * scale);
    Ok(flat)
}
