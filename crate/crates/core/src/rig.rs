//! Skeletal kinematics: joint hierarchy, forward kinematics, linear blend
//! skinning and the joint-local canonical frames.
//!
//! Multi-axis joints rotate about their axes in declared order with fixed
//! (extrinsic) axes, so a joint with axes `[x, y, z]` has local rotation
//! `Rz(θ3)·Ry(θ2)·Rx(θ1)`. Angles are radians everywhere except the rig
//! config file, which uses degrees.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};

const AXIS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` about the line through `pivot` along unit `axis`.
    pub fn rotation_about(pivot: &Vec3, axis: &Vec3, angle: f64) -> Self {
        let r = *Rotation3::from_axis_angle(&Unit::new_unchecked(*axis), angle).matrix();
        Self {
            rotation: r,
            translation: pivot - r * pivot,
        }
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).amax() <= tol && (r.determinant() - 1.0).abs() <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub id: usize,
    #[serde(default)]
    pub parent: Option<usize>,
    pub center: [f64; 3],
    pub axes: Vec<[f64; 3]>,
    /// Training range per DOF as `[min, increment, max]` in degrees.
    #[serde(default)]
    pub range: Vec<[f64; 3]>,
}

impl Joint {
    pub fn dof(&self) -> usize {
        self.axes.len()
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn axis(&self, k: usize) -> Vec3 {
        Vec3::from(self.axes[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    #[serde(rename = "joint")]
    pub joints: Vec<Joint>,
}

impl Rig {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        let rig = Rig { joints };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::validation("rig has no joints"));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if j.id != i {
                return Err(Error::validation(format!("joint at position {i} has id {}", j.id)));
            }
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::validation(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )));
                }
            }
            if !(1..=3).contains(&j.dof()) {
                return Err(Error::validation(format!("joint {i} has {} DOF (1..=3 allowed)", j.dof())));
            }
            for (k, a) in j.axes.iter().enumerate() {
                let n = Vec3::from(*a).norm();
                if (n - 1.0).abs() > AXIS_TOL {
                    return Err(Error::validation(format!(
                        "joint {i} axis {k} has length {n}, expected unit"
                    )));
                }
            }
            if !j.range.is_empty() && j.range.len() != j.dof() {
                return Err(Error::validation(format!(
                    "joint {i} lists {} ranges for {} DOF",
                    j.range.len(),
                    j.dof()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn total_dof(&self) -> usize {
        self.joints.iter().map(Joint::dof).sum()
    }

    /// Start offset of each joint's slice in the concatenated state vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.joints
            .iter()
            .map(|j| {
                let o = acc;
                acc += j.dof();
                o
            })
            .collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let rig: Rig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rig serializes")
    }
}

/// Concatenated joint angles (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    values: Vec<f64>,
}

impl JointState {
    pub fn zeros(rig: &Rig) -> Self {
        Self {
            values: vec![0.0; rig.total_dof()],
        }
    }

    pub fn new(rig: &Rig, values: Vec<f64>) -> Result<Self> {
        if values.len() != rig.total_dof() {
            return Err(Error::Dimension {
                what: "joint state",
                expected: rig.total_dof(),
                got: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn from_degrees(rig: &Rig, degrees: &[f64]) -> Result<Self> {
        Self::new(rig, degrees.iter().map(|d| d.to_radians()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn joint<'a>(&'a self, rig: &Rig, i: usize) -> &'a [f64] {
        let o = rig.offsets()[i];
        &self.values[o..o + rig.joints[i].dof()]
    }

    pub fn set_joint(&mut self, rig: &Rig, i: usize, angles: &[f64]) -> Result<()> {
        let d = rig.joints[i].dof();
        if angles.len() != d {
            return Err(Error::Dimension {
                what: "joint sub-state",
                expected: d,
                got: angles.len(),
            });
        }
        let o = rig.offsets()[i];
        self.values[o..o + d].copy_from_slice(angles);
        Ok(())
    }

    pub fn lerp(&self, other: &JointState, t: f64) -> JointState {
        JointState {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + (b - a) * t)
                .collect(),
        }
    }
}

fn check_state(rig: &Rig, state: &JointState) -> Result<()> {
    if state.values.len() != rig.total_dof() {
        return Err(Error::Dimension {
            what: "joint state",
            expected: rig.total_dof(),
            got: state.values.len(),
        });
    }
    Ok(())
}

/// Local rotation of joint `i` about its own pivot.
fn local_transform(joint: &Joint, angles: &[f64]) -> RigidTransform {
    let c = joint.center();
    angles
        .iter()
        .enumerate()
        .fold(RigidTransform::identity(), |acc, (k, &a)| {
            RigidTransform::rotation_about(&c, &joint.axis(k), a).compose(&acc)
        })
}

/// Forward kinematics: world transform of every joint, mapping rest-pose
/// positions to posed positions.
pub fn pose_transforms(rig: &Rig, state: &JointState) -> Result<Vec<RigidTransform>> {
    rig.validate()?;
    check_state(rig, state)?;
    let mut world: Vec<RigidTransform> = Vec::with_capacity(rig.len());
    let mut offset = 0;
    for joint in &rig.joints {
        let d = joint.dof();
        let local = local_transform(joint, &state.values[offset..offset + d]);
        offset += d;
        let w = match joint.parent {
            Some(p) => world[p].compose(&local),
            None => local,
        };
        world.push(w);
    }
    Ok(world)
}

/// Transform taking posed world points into joint `i`'s canonical frame:
/// the inverse of the parent's world transform composed with a translation
/// to the joint pivot. Only ancestors of `i` influence it.
pub fn joint_local_transform(rig: &Rig, state: &JointState, joint: usize) -> Result<RigidTransform> {
    if joint >= rig.len() {
        return Err(Error::Range {
            what: "joint",
            index: joint,
            len: rig.len(),
        });
    }
    let placement = RigidTransform::translation(rig.joints[joint].center());
    let frame = match rig.joints[joint].parent {
        Some(p) => pose_transforms(rig, state)?[p].compose(&placement),
        None => placement,
    };
    Ok(frame.inverse())
}

/// Per-vertex sparse skin weights: `(transform index, weight)`.
pub type SkinWeights = Vec<Vec<(u32, f64)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SkinnedMesh {
    pub mesh: TriMesh,
    pub weights: SkinWeights,
}

impl SkinnedMesh {
    pub fn new(mesh: TriMesh, weights: SkinWeights) -> Result<Self> {
        let s = Self { mesh, weights };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.mesh.vertices.len() {
            return Err(Error::Dimension {
                what: "skin weight rows",
                expected: self.mesh.vertices.len(),
                got: self.weights.len(),
            });
        }
        for (v, row) in self.weights.iter().enumerate() {
            if row.iter().any(|&(_, w)| w < 0.0 || !w.is_finite()) {
                return Err(Error::validation(format!("vertex {v} has a negative weight")));
            }
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!("vertex {v} weights sum to {sum}")));
            }
        }
        self.mesh.validate_closed()
    }

    pub fn max_transform_index(&self) -> Option<u32> {
        self.weights.iter().flatten().map(|&(t, _)| t).max()
    }

    pub fn load(mesh_path: impl AsRef<Path>, weights_path: impl AsRef<Path>) -> Result<Self> {
        let mesh = TriMesh::read_obj(mesh_path)?;
        let weights = read_weights(weights_path, mesh.vertices.len())?;
        Self::new(mesh, weights)
    }
}

/// Parses the `vertexIndex transformIndex weight` sidecar table. Blank lines
/// and `#` comments are skipped.
pub fn parse_weights(text: &str, vertex_count: usize) -> Result<SkinWeights> {
    let mut rows = vec![Vec::new(); vertex_count];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("weights line {}: expected 3 fields", n + 1)));
        }
        let bad = |e: &dyn std::fmt::Display| Error::Parse(format!("weights line {}: {e}", n + 1));
        let v: usize = f[0].parse().map_err(|e| bad(&e))?;
        let t: u32 = f[1].parse().map_err(|e| bad(&e))?;
        let w: f64 = f[2].parse().map_err(|e| bad(&e))?;
        let row = rows.get_mut(v).ok_or(Error::Range {
            what: "weight vertex",
            index: v,
            len: vertex_count,
        })?;
        row.push((t, w));
    }
    Ok(rows)
}

pub fn read_weights(path: impl AsRef<Path>, vertex_count: usize) -> Result<SkinWeights> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_weights(&text, vertex_count).map_err(|e| Error::format(path, e.to_string()))
}

pub fn weights_to_string(weights: &SkinWeights) -> String {
    let mut s = String::new();
    for (v, row) in weights.iter().enumerate() {
        for &(t, w) in row {
            s.push_str(&format!("{v} {t} {w}\n"));
        }
    }
    s
}

/// Linear blend skinning of the rest vertices.
pub fn lbs_deform(mesh: &SkinnedMesh, transforms: &[RigidTransform]) -> Result<Vec<Vec3>> {
    blend_points(&mesh.mesh.vertices, &mesh.weights, transforms)
}

/// LBS for an arbitrary point set carrying its own weights.
pub fn blend_points(
    points: &[Vec3],
    weights: &SkinWeights,
    transforms: &[RigidTransform],
) -> Result<Vec<Vec3>> {
    if points.len() != weights.len() {
        return Err(Error::Dimension {
            what: "skin weight rows",
            expected: points.len(),
            got: weights.len(),
        });
    }
    points
        .iter()
        .zip(weights)
        .map(|(x, row)| {
            row.iter().try_fold(Vec3::zeros(), |acc, &(t, w)| {
                let tr = transforms.get(t as usize).ok_or_else(|| {
                    Error::validation(format!(
                        "weight references transform {t} but only {} exist",
                        transforms.len()
                    ))
                })?;
                Ok(acc + tr.apply(x) * w)
            })
        })
        .collect()
}
