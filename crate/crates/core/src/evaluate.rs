//! Error measures of learned fields against ground-truth grids.

use serde::Serialize;

use crate::blend::PosedAvatarSdf;
use crate::dataset::{joint_pose, Character};
use crate::distance_field::{GridSdf, GridSpec, LabelGrid};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::partition::mask_distance;
use crate::rig::joint_local_transform;
use crate::ssdf::{NetKind, SsdfModel};

/// `|φ_learned − φ_gt|` statistics over the nodes with `|φ_gt| < δ`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BandError {
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

impl BandError {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>, delta: f64) -> Self {
        let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
        for (learned, gt) in pairs {
            if gt.abs() < delta {
                let e = (learned - gt).abs();
                sum += e;
                max = max.max(e);
                count += 1;
            }
        }
        Self {
            mean: if count > 0 { sum / count as f64 } else { 0.0 },
            max,
            count,
        }
    }
}

/// Ground truth of one joint at one of its poses, on `spec`.
pub fn joint_ground_truth(ch: &Character, joint: usize, pose: &[f64], spec: &GridSpec) -> Result<(GridSdf, LabelGrid)> {
    let state = joint_pose(&ch.rig, joint, pose)?;
    let mut f = ch.pose_fields(&state, spec, Some(joint))?;
    Ok((f.regions.remove(0), f.labels.remove(0)))
}

/// Network outputs at every node of `spec`, with the joint at `pose`.
pub fn network_on_grid(ch: &Character, model: &SsdfModel, pose: &[f64], spec: &GridSpec) -> Result<Vec<f32>> {
    let state = joint_pose(&ch.rig, model.joint, pose)?;
    let t = joint_local_transform(&ch.rig, &state, model.joint)?;
    let xs: Vec<[f32; 3]> = (0..spec.len())
        .map(|n| {
            let x = t.apply(&spec.node_position(n));
            [x.x as f32, x.y as f32, x.z as f32]
        })
        .collect();
    Ok(model.effective_params(pose)?.forward_batch(&xs))
}

/// Band error of a distance network against its region field.
pub fn joint_band_error(model: &SsdfModel, values: &[f32], gt: &GridSdf, delta: f64) -> Result<BandError> {
    if model.kind != NetKind::Sdf {
        return Err(Error::validation("band error needs a distance network"));
    }
    if values.len() != gt.values.len() {
        return Err(Error::Dimension {
            what: "network values",
            expected: gt.values.len(),
            got: values.len(),
        });
    }
    Ok(BandError::from_pairs(
        values.iter().zip(&gt.values).map(|(&l, &g)| (l as f64, g as f64)),
        delta,
    ))
}

/// Sign agreement of a boolean network with the labels, counted on band
/// nodes (`|φ_gt| < δ`) farther than `margin` from the label interface.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn add(&mut self, other: Accuracy) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

pub fn label_accuracy(values: &[f32], gt: &GridSdf, labels: &LabelGrid, delta: f64, margin: f64) -> Result<Accuracy> {
    let positive: Vec<bool> = labels.labels.iter().map(|&l| l > 0).collect();
    let interface = if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
        None
    } else {
        Some(mask_distance(&positive, &labels.spec)?)
    };
    let mut acc = Accuracy::default();
    for n in 0..values.len() {
        if (gt.values[n] as f64).abs() >= delta {
            continue;
        }
        if let Some(rho) = &interface {
            if (rho.values[n] as f64).abs() <= margin {
                continue;
            }
        }
        acc.total += 1;
        if (values[n] > 0.0) == positive[n] {
            acc.correct += 1;
        }
    }
    Ok(acc)
}

/// Band error of a posed avatar against a body field.
pub fn avatar_band_error(posed: &PosedAvatarSdf, gt: &GridSdf, delta: f64) -> BandError {
    let xs: Vec<Vec3> = (0..gt.spec.len()).map(|n| gt.spec.node_position(n)).collect();
    let phi = posed.query_batch(&xs);
    BandError::from_pairs(phi.into_iter().zip(gt.values.iter().map(|&g| g as f64)), delta)
}
