//! Geometric and kinematic primitives shared by every layer.
//!
//! Agents are point masses with bounded acceleration and speed; the
//! simulator consumes nothing but `(position, velocity)` sequences, so no
//! richer dynamics are modeled here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
    #[error("duplicate uav id {0}")]
    DuplicateUavId(u32),
    #[error("states carry mismatched timestamps ({0} vs {1})")]
    TimestampMismatch(f64, f64),
}

/// 3-component vector in meters (or m/s when holding a velocity).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the same direction; the zero vector maps to itself.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec3::ZERO
        }
    }

    /// Rescale onto the closed ball of radius `max_norm`. Never increases
    /// the norm and preserves direction when it does clamp.
    pub fn clamp_norm(self, max_norm: f64) -> Vec3 {
        let n = self.norm();
        if n > max_norm {
            self * (max_norm / n)
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// Position/velocity snapshot of one agent at a simulated instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub uav_id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Simulated seconds; monotone per uav across updates.
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    Collision,
    NearMiss,
}

/// One below-threshold separation between a pair of agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    /// Ordered ascending by uav id.
    pub pair: (u32, u32),
    pub distance: f64,
    pub time: f64,
    pub kind: CollisionKind,
}

/// One explicit-Euler step: position advances with the old velocity, the
/// new velocity is clamped onto the speed ball.
pub fn step_kinematics(
    state: &UavState,
    accel: Vec3,
    dt: f64,
    v_max: f64,
) -> Result<UavState, ModelError> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(ModelError::InvalidTimeStep(dt));
    }
    if !accel.is_finite() {
        return Err(ModelError::NonFinite("accel"));
    }
    if !state.position.is_finite() || !state.velocity.is_finite() || !state.timestamp.is_finite() {
        return Err(ModelError::NonFinite("state"));
    }
    if !v_max.is_finite() || v_max <= 0.0 {
        return Err(ModelError::NonFinite("v_max"));
    }
    Ok(UavState {
        uav_id: state.uav_id,
        position: state.position + state.velocity * dt,
        velocity: (state.velocity + accel * dt).clamp_norm(v_max),
        timestamp: state.timestamp + dt,
    })
}

/// Pairwise proximity events at a common instant. A pair below
/// `2 * safety_radius` separation is a collision; otherwise below
/// `near_miss_radius` is a near miss. Both thresholds are strict.
///
/// Events come out ordered by ascending pair ids.
pub fn detect_collisions(
    states: &[UavState],
    safety_radius: f64,
    near_miss_radius: f64,
) -> Result<Vec<CollisionEvent>, ModelError> {
    let mut sorted: Vec<&UavState> = states.iter().collect();
    sorted.sort_by_key(|s| s.uav_id);
    for w in sorted.windows(2) {
        if w[0].uav_id == w[1].uav_id {
            return Err(ModelError::DuplicateUavId(w[0].uav_id));
        }
    }
    if let Some(first) = sorted.first() {
        for s in &sorted[1..] {
            if s.timestamp != first.timestamp {
                return Err(ModelError::TimestampMismatch(first.timestamp, s.timestamp));
            }
        }
    }

    let collision_limit = 2.0 * safety_radius;
    let mut events = Vec::new();
    for i in 0..sorted.len() {
        for j in (i + 1)..sorted.len() {
            let d = sorted[i].position.distance(sorted[j].position);
            let kind = if d < collision_limit {
                CollisionKind::Collision
            } else if d < near_miss_radius {
                CollisionKind::NearMiss
            } else {
                continue;
            };
            events.push(CollisionEvent {
                pair: (sorted[i].uav_id, sorted[j].uav_id),
                distance: d,
                time: sorted[i].timestamp,
                kind,
            });
        }
    }
    Ok(events)
}
