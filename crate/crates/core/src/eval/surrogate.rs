//! Deterministic motif-scoring surrogate used in place of simulation.
//!
//! Features are computed on the body's primitive tile (the smallest body
//! whose tiling reproduces it), so a body and any of its `k x k` tilings
//! score identically. Each feature lies in `[0, 1]`:
//!
//! | feature            | definition                                                        |
//! |--------------------|-------------------------------------------------------------------|
//! | `actuator_balance` | `1 - |A/N - 0.35| / 0.65` for `A` actuators among `N` filled cells  |
//! | `bottom_material`  | filled cells in the bottom grid row / grid width                  |
//! | `actuator_support` | rigid-actuator 4-adjacent pairs / `4A`                            |
//! | `frame_perimeter`  | max over rigid components of bounding-box `(h + w) / 2n`          |
//! | `soft_contact`     | soft cells in the bottom grid row / grid width                    |
//!
//! Fitness is `base + sum(weight * feature)`. A lone actuator voxel away
//! from the bottom row therefore scores exactly `base` (1.0 for every
//! built-in profile).
//!
//! With `w_support >= 4 * w_balance / 0.65`, filling an empty cell next to
//! an actuator with rigid material strictly raises fitness: the support term
//! grows by at least `1/(4A)` while the balance term can drop by at most
//! `A / (0.65 N (N+1))`, and every other term is non-decreasing. Every
//! built-in profile satisfies this bound.

use serde::{Deserialize, Serialize};

use crate::voxel::{is_valid, primitive_tile, Body, VoxelType};

use super::EvalError;

const TARGET_ACTUATOR_SHARE: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskProfile {
    WalkerLike,
    CarrierLike,
    PusherLike,
}

impl TaskProfile {
    pub fn name(self) -> &'static str {
        match self {
            TaskProfile::WalkerLike => "walker_like",
            TaskProfile::CarrierLike => "carrier_like",
            TaskProfile::PusherLike => "pusher_like",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "walker_like" => Some(TaskProfile::WalkerLike),
            "carrier_like" => Some(TaskProfile::CarrierLike),
            "pusher_like" => Some(TaskProfile::PusherLike),
            _ => None,
        }
    }

    /// Default profile for a task name or env id such as `Carrier-v0-10x10`.
    pub fn for_task(task: &str) -> Self {
        let base = task.split('-').next().unwrap_or(task);
        match base {
            "Carrier" => TaskProfile::CarrierLike,
            "Pusher" => TaskProfile::PusherLike,
            _ => TaskProfile::WalkerLike,
        }
    }

    pub fn weights(self) -> ProfileWeights {
        match self {
            TaskProfile::WalkerLike => ProfileWeights {
                base: 1.0,
                actuator_balance: 0.6,
                bottom_material: 2.0,
                actuator_support: 4.0,
                frame_perimeter: 1.5,
                soft_contact: 0.3,
            },
            TaskProfile::CarrierLike => ProfileWeights {
                base: 1.0,
                actuator_balance: 0.5,
                bottom_material: 1.5,
                actuator_support: 3.5,
                frame_perimeter: 2.5,
                soft_contact: 1.0,
            },
            TaskProfile::PusherLike => ProfileWeights {
                base: 1.0,
                actuator_balance: 0.5,
                bottom_material: 1.0,
                actuator_support: 3.5,
                frame_perimeter: 1.0,
                soft_contact: 2.5,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileWeights {
    pub base: f64,
    pub actuator_balance: f64,
    pub bottom_material: f64,
    pub actuator_support: f64,
    pub frame_perimeter: f64,
    pub soft_contact: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotifFeatures {
    pub actuator_balance: f64,
    pub bottom_material: f64,
    pub actuator_support: f64,
    pub frame_perimeter: f64,
    pub soft_contact: f64,
}

impl MotifFeatures {
    pub fn of(body: &Body) -> Self {
        let p = primitive_tile(body);
        let n = p.size();
        let filled = p.filled() as f64;
        let actuators = p.actuators();
        let is_act = |r: usize, c: usize| p.voxel(r, c).is_some_and(VoxelType::is_actuator);
        let is_rigid = |r: usize, c: usize| p.voxel(r, c) == Some(VoxelType::Rigid);

        let actuator_balance = if filled == 0.0 {
            0.0
        } else {
            1.0 - ((actuators as f64 / filled) - TARGET_ACTUATOR_SHARE).abs() / (1.0 - TARGET_ACTUATOR_SHARE)
        };

        let bottom = n - 1;
        let bottom_material = (0..n).filter(|&c| p.get(bottom, c) != 0).count() as f64 / n as f64;
        let soft_contact =
            (0..n).filter(|&c| p.voxel(bottom, c) == Some(VoxelType::Soft)).count() as f64 / n as f64;

        let mut pairs = 0usize;
        for r in 0..n {
            for c in 0..n {
                if is_act(r, c) {
                    pairs += p.neighbors(r, c).filter(|&(rr, cc)| is_rigid(rr, cc)).count();
                }
            }
        }
        let actuator_support = if actuators == 0 { 0.0 } else { pairs as f64 / (4 * actuators) as f64 };

        MotifFeatures {
            actuator_balance,
            bottom_material,
            actuator_support,
            frame_perimeter: rigid_frame_extent(&p),
            soft_contact,
        }
    }
}

/// Largest bounding-box half-perimeter over 4-connected rigid components,
/// normalised by the grid's own half-perimeter.
fn rigid_frame_extent(body: &Body) -> f64 {
    let n = body.size();
    let mut seen = vec![false; n * n];
    let mut best = 0usize;
    for start in 0..n * n {
        if seen[start] || body.cells()[start] != VoxelType::Rigid.code() {
            continue;
        }
        let (mut r0, mut r1, mut c0, mut c1) = (n, 0, n, 0);
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / n, i % n);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            for (rr, cc) in body.neighbors(r, c) {
                let j = rr * n + cc;
                if !seen[j] && body.cells()[j] == VoxelType::Rigid.code() {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        best = best.max((r1 - r0 + 1) + (c1 - c0 + 1));
    }
    best as f64 / (2 * n) as f64
}

pub fn score(features: &MotifFeatures, w: &ProfileWeights) -> f64 {
    w.base
        + w.actuator_balance * features.actuator_balance
        + w.bottom_material * features.bottom_material
        + w.actuator_support * features.actuator_support
        + w.frame_perimeter * features.frame_perimeter
        + w.soft_contact * features.soft_contact
}

pub fn surrogate_fitness(body: &Body, profile: TaskProfile) -> Result<f64, EvalError> {
    if !is_valid(body) {
        return Err(EvalError::InvalidBody(body.to_json_string()));
    }
    Ok(score(&MotifFeatures::of(body), &profile.weights()))
}
