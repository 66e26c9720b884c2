//! Training data per joint: pose product spaces, ground-truth region fields
//! per pose, ε/β node selection and boundary labels.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::distance_field::{
    classify_boundary, grid_sdf_from_mesh, inside_mask, read_f32, read_u32, GridSdf, GridSpec, LabelGrid,
};
use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};
use crate::partition::{
    auto_dilate, diffuse_weights, grow_regions, region_surface, seed_regions, RegionPartition, WeightField,
};
use crate::rig::{joint_local_transform, lbs_deform, pose_transforms, Joint, JointState, Rig, SkinnedMesh};
use crate::seed;

pub const DATASET_MAGIC: [u8; 4] = *b"SDFD";

/// Per-DOF `[min, inc, max]` in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRange {
    pub dofs: Vec<[f64; 3]>,
}

impl PoseRange {
    pub fn new(dofs: Vec<[f64; 3]>) -> Result<Self> {
        for (k, &[min, inc, max]) in dofs.iter().enumerate() {
            if !(inc > 0.0) || min > max {
                return Err(Error::validation(format!("pose range {k}: need inc > 0 and min <= max")));
            }
            let steps = (max - min) / inc;
            if (steps - steps.round()).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "pose range {k}: ({max} - {min}) / {inc} is not integral"
                )));
            }
        }
        Ok(Self { dofs })
    }

    pub fn of_joint(joint: &Joint) -> Result<Self> {
        Self::new(joint.range.clone())
    }

    pub fn values(&self, dof: usize) -> Vec<f64> {
        let [min, inc, max] = self.dofs[dof];
        let steps = ((max - min) / inc).round() as usize;
        (0..=steps).map(|k| min + k as f64 * inc).collect()
    }

    pub fn count(&self) -> usize {
        (0..self.dofs.len()).map(|d| self.values(d).len()).product()
    }
}

/// Cartesian product of the per-DOF values in lexicographic order (first DOF
/// slowest), converted to radians.
pub fn pose_grid(range: &PoseRange) -> Vec<Vec<f64>> {
    let mut poses: Vec<Vec<f64>> = vec![Vec::new()];
    for d in 0..range.dofs.len() {
        let vals = range.values(d);
        poses = poses
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.to_radians());
                    q
                })
            })
            .collect();
    }
    poses
}

/// Node indices kept for training: every node with `|s| < eps`, plus nodes
/// passing `u·|s| < beta` with one uniform draw per node.
pub fn select_samples(grid: &GridSdf, eps: f64, beta: f64, rng: &mut impl Rng) -> Vec<usize> {
    grid.values
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            let s = (v as f64).abs();
            let u: f64 = rng.gen();
            (s < eps || u * s < beta).then_some(i)
        })
        .collect()
}

/// Rig, skinned body and the overlapping region surfaces derived from it.
#[derive(Debug, Clone)]
pub struct Character {
    pub rig: Rig,
    pub skin: SkinnedMesh,
    pub weights: WeightField,
    pub partition: RegionPartition,
    pub margin: usize,
    pub regions: Vec<SkinnedMesh>,
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub resolution: usize,
    pub threshold: f64,
    pub start_margin: usize,
    pub max_margin: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            resolution: 48,
            threshold: 0.4,
            start_margin: 3,
            max_margin: 16,
        }
    }
}

/// Padded cubic grid around a bounding box.
pub fn padded_grid(lo: Vec3, hi: Vec3, resolution: usize) -> Result<GridSpec> {
    GridSpec::cubified(lo, hi, resolution, 0.1)
}

fn posed(mesh: &SkinnedMesh, rig: &Rig, state: &JointState) -> Result<TriMesh> {
    let tf = pose_transforms(rig, state)?;
    let mut m = mesh.mesh.clone();
    m.vertices = lbs_deform(mesh, &tf)?;
    Ok(m)
}

/// A-pose with only `joint` set to `pose`.
pub fn joint_pose(rig: &Rig, joint: usize, pose: &[f64]) -> Result<JointState> {
    let mut s = JointState::zeros(rig);
    s.set_joint(rig, joint, pose)?;
    Ok(s)
}

/// Every training pose of every joint, as full joint states.
pub fn training_states(rig: &Rig) -> Result<Vec<JointState>> {
    let mut out = Vec::new();
    for (j, joint) in rig.joints.iter().enumerate() {
        for p in pose_grid(&PoseRange::of_joint(joint)?) {
            out.push(joint_pose(rig, j, &p)?);
        }
    }
    Ok(out)
}

fn skin_regions(partition: &RegionPartition, body: &GridSdf, weights: &WeightField) -> Result<Vec<SkinnedMesh>> {
    (0..partition.count)
        .map(|r| {
            let mesh = region_surface(partition, r, body)?;
            let w = weights.skin_points(&mesh.vertices);
            SkinnedMesh::new(mesh, w)
        })
        .collect()
}

/// Ground truth at one full pose on one grid.
#[derive(Debug, Clone)]
pub struct PoseFields {
    pub body: Vec<bool>,
    pub regions: Vec<GridSdf>,
    pub labels: Vec<LabelGrid>,
}

impl Character {
    /// Partitions the rest body and dilates the regions until every body node
    /// has at least one region labelled +1 at every training pose.
    pub fn build(rig: Rig, skin: SkinnedMesh, cfg: &PartitionConfig) -> Result<Self> {
        rig.validate()?;
        skin.validate()?;
        let (lo, hi) = skin.mesh.bounds().ok_or_else(|| Error::validation("empty body mesh"))?;
        let spec = padded_grid(lo, hi, cfg.resolution)?;
        let body_sdf = grid_sdf_from_mesh(&skin.mesh, &spec)?;
        let body = body_sdf.inside_mask();
        let weights = diffuse_weights(&skin, &body, &spec, rig.len())?;
        let seeds = seed_regions(&weights, cfg.threshold);
        let grown = grow_regions(&seeds, &body, &spec, rig.len())?;
        for r in 0..rig.len() {
            if grown.region_size(r) == 0 {
                return Err(Error::validation(format!(
                    "joint {r} has no body node with weight >= {}",
                    cfg.threshold
                )));
            }
        }
        let states = training_states(&rig)?;
        let mut regions = Vec::new();
        let (partition, margin) = auto_dilate(&grown, &body, cfg.start_margin, cfg.max_margin, |p, _| {
            let candidate = Self {
                rig: rig.clone(),
                skin: skin.clone(),
                weights: weights.clone(),
                partition: p.clone(),
                margin: 0,
                regions: skin_regions(p, &body_sdf, &weights)?,
                resolution: cfg.resolution,
            };
            for state in &states {
                if candidate.uncovered_nodes(state)? > 0 {
                    return Ok(false);
                }
            }
            regions = candidate.regions;
            Ok(true)
        })?;
        Ok(Self {
            rig,
            skin,
            weights,
            partition,
            margin,
            regions,
            resolution: cfg.resolution,
        })
    }

    /// Rebuilds a character from a stored partition without repeating the
    /// dilation search. Everything else is recomputed deterministically.
    pub fn assemble(rig: Rig, skin: SkinnedMesh, partition: RegionPartition, margin: usize, resolution: usize) -> Result<Self> {
        rig.validate()?;
        skin.validate()?;
        let (lo, hi) = skin.mesh.bounds().ok_or_else(|| Error::validation("empty body mesh"))?;
        let spec = padded_grid(lo, hi, resolution)?;
        if partition.spec != spec {
            return Err(Error::validation("partition grid does not match the body grid at this resolution"));
        }
        if partition.count != rig.len() {
            return Err(Error::Dimension {
                what: "partition regions",
                expected: rig.len(),
                got: partition.count,
            });
        }
        let body_sdf = grid_sdf_from_mesh(&skin.mesh, &spec)?;
        let weights = diffuse_weights(&skin, &body_sdf.inside_mask(), &spec, rig.len())?;
        let regions = skin_regions(&partition, &body_sdf, &weights)?;
        Ok(Self {
            rig,
            skin,
            weights,
            partition,
            margin,
            regions,
            resolution,
        })
    }

    pub fn posed_body(&self, state: &JointState) -> Result<TriMesh> {
        posed(&self.skin, &self.rig, state)
    }

    pub fn posed_region(&self, region: usize, state: &JointState) -> Result<TriMesh> {
        posed(&self.regions[region], &self.rig, state)
    }

    /// Grid around the posed body.
    pub fn body_grid(&self, state: &JointState, resolution: usize) -> Result<GridSpec> {
        let (lo, hi) = self.posed_body(state)?.bounds().unwrap();
        padded_grid(lo, hi, resolution)
    }

    /// Training grid of a joint: the region's bounding box over all its
    /// training poses, padded by 10% per side.
    pub fn joint_grid(&self, joint: usize, range: &PoseRange, resolution: usize) -> Result<GridSpec> {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in pose_grid(range) {
            let state = joint_pose(&self.rig, joint, &p)?;
            let (a, b) = self.posed_region(joint, &state)?.bounds().unwrap();
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        padded_grid(lo, hi, resolution)
    }

    /// Region fields and labels at a full pose; `only` restricts to one region.
    ///
    /// The body used for labelling is the union of the posed regions rather
    /// than the posed skin: both approximate the same surface, but only the
    /// union agrees node-for-node with the region masks.
    pub fn pose_fields(&self, state: &JointState, spec: &GridSpec, only: Option<usize>) -> Result<PoseFields> {
        let posed: Vec<TriMesh> = (0..self.regions.len())
            .map(|r| self.posed_region(r, state))
            .collect::<Result<_>>()?;
        let which: Vec<usize> = match only {
            Some(r) => vec![r],
            None => (0..self.regions.len()).collect(),
        };
        let mut regions = Vec::new();
        let mut body = vec![false; spec.len()];
        for (r, mesh) in posed.iter().enumerate() {
            let mask = if which.contains(&r) {
                let sdf = grid_sdf_from_mesh(mesh, spec)?;
                let m = sdf.inside_mask();
                regions.push(sdf);
                m
            } else {
                inside_mask(mesh, spec)
            };
            body.iter_mut().zip(&mask).for_each(|(b, &m)| *b |= m);
        }
        let labels = regions
            .iter()
            .map(|sdf| classify_boundary(&sdf.inside_mask(), &body, sdf))
            .collect::<Result<_>>()?;
        Ok(PoseFields { body, regions, labels })
    }

    /// Body nodes at `state` where every region is labelled -1.
    pub fn uncovered_nodes(&self, state: &JointState) -> Result<usize> {
        let spec = self.body_grid(state, self.resolution)?;
        let f = self.pose_fields(state, &spec, None)?;
        Ok((0..spec.len())
            .filter(|&n| f.body[n] && f.labels.iter().all(|l| l.labels[n] < 0))
            .count())
    }
}

/// One training record: canonical position, joint sub-pose (radians), signed
/// distance and boundary label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub x: [f32; 3],
    pub pose: Vec<f32>,
    pub s: f32,
    pub label: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub joint: usize,
    pub dof: usize,
    pub box_side: f32,
    pub samples: Vec<TrainingSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub eps_factor: f64,
    pub beta_factor: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            eps_factor: 0.025,
            beta_factor: 0.001,
        }
    }
}

/// Samples of one joint at one pose, in canonical coordinates.
pub fn pose_samples(
    ch: &Character,
    joint: usize,
    pose: &[f64],
    spec: &GridSpec,
    sel: &SelectionConfig,
    rng: &mut impl Rng,
) -> Result<Vec<TrainingSample>> {
    let state = joint_pose(&ch.rig, joint, pose)?;
    let f = ch.pose_fields(&state, spec, Some(joint))?;
    let (sdf, labels) = (&f.regions[0], &f.labels[0]);
    let lg = spec.box_side();
    let nodes = select_samples(sdf, sel.eps_factor * lg, sel.beta_factor * lg, rng);
    let t = joint_local_transform(&ch.rig, &state, joint)?;
    let pose32: Vec<f32> = pose.iter().map(|&p| p as f32).collect();
    Ok(nodes
        .into_iter()
        .map(|n| {
            let x = t.apply(&spec.node_position(n));
            TrainingSample {
                x: [x.x as f32, x.y as f32, x.z as f32],
                pose: pose32.clone(),
                s: sdf.values[n],
                label: labels.labels[n] as f32,
            }
        })
        .collect())
}

/// Full dataset of one joint over its pose grid. Poses run in parallel, each
/// with its own derived random stream, so the result does not depend on
/// scheduling.
pub fn build_dataset(
    ch: &Character,
    joint: usize,
    range: &PoseRange,
    spec: &GridSpec,
    sel: &SelectionConfig,
    seed: u64,
) -> Result<Dataset> {
    let dof = ch.rig.joints.get(joint).map(|j| j.dof()).ok_or(Error::Range {
        what: "joint",
        index: joint,
        len: ch.rig.len(),
    })?;
    if range.dofs.len() != dof {
        return Err(Error::Dimension {
            what: "pose range DOFs",
            expected: dof,
            got: range.dofs.len(),
        });
    }
    let poses = pose_grid(range);
    let per_pose: Vec<Vec<TrainingSample>> = poses
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = seed::rng(seed, &format!("dataset/{joint}/{k}"));
            pose_samples(ch, joint, p, spec, sel, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        joint,
        dof,
        box_side: spec.box_side() as f32,
        samples: per_pose.into_iter().flatten().collect(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&DATASET_MAGIC)?;
        w.write_all(&(self.joint as u32).to_le_bytes())?;
        w.write_all(&(self.dof as u32).to_le_bytes())?;
        w.write_all(&self.box_side.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u32).to_le_bytes())?;
        for s in &self.samples {
            for v in s.x.iter().chain(&s.pose).chain([&s.s, &s.label]) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r).map_err(|e| match e {
            Error::Io(io) => Error::format(path, io.to_string()),
            Error::Parse(m) => Error::format(path, m),
            e => e,
        })
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != DATASET_MAGIC {
            return Err(Error::Parse(format!("bad magic {magic:?}")));
        }
        let joint = read_u32(r)? as usize;
        let dof = read_u32(r)? as usize;
        let box_side = read_f32(r)?;
        let count = read_u32(r)? as usize;
        if !(1..=3).contains(&dof) {
            return Err(Error::Parse(format!("dof {dof} outside 1..=3")));
        }
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let x = [read_f32(r)?, read_f32(r)?, read_f32(r)?];
            let pose = (0..dof).map(|_| read_f32(r)).collect::<std::io::Result<Vec<f32>>>()?;
            let s = read_f32(r)?;
            let label = read_f32(r)?;
            samples.push(TrainingSample { x, pose, s, label });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Parse("trailing bytes after the last record".into()));
        }
        Ok(Self {
            joint,
            dof,
            box_side,
            samples,
        })
    }
}
