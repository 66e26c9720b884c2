//! The global body SDF assembled from per-joint augmented fields.
//!
//! Each joint contributes a distance `φ_i` and a boolean `b_i` evaluated in
//! its canonical frame. At a point `x` the body distance is the minimum of
//! `φ_i` over the joints whose boolean is set; if none is set the minimum is
//! taken over all joints and the fallback is counted.
//!
//! Joints are backed either by trained networks or by ground-truth grids
//! (oracle mode). Both go through the same posing and query code.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance_field::{GridSdf, LabelGrid};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rig::{joint_local_transform, JointState, RigidTransform, Rig};
use crate::ssdf::{EffectiveParams, NetKind, SsdfModel};

/// Batches above this size are split across threads.
const PAR_CHUNK: usize = 2048;

#[derive(Debug, Clone)]
pub enum JointField {
    Net {
        sdf: SsdfModel,
        boolean: SsdfModel,
    },
    /// Ground-truth grids; `frame` maps canonical coordinates to grid
    /// coordinates.
    Grid {
        sdf: Arc<GridSdf>,
        labels: Arc<LabelGrid>,
        frame: RigidTransform,
    },
}

impl JointField {
    /// Grids computed in world space at `state`: at that state the field
    /// reproduces them exactly, at other states it moves rigidly with the
    /// joint's canonical frame.
    pub fn grid_at_pose(rig: &Rig, state: &JointState, joint: usize, sdf: GridSdf, labels: LabelGrid) -> Result<Self> {
        if sdf.spec != labels.spec {
            return Err(Error::validation("distance and label grids differ in layout"));
        }
        let frame = joint_local_transform(rig, state, joint)?.inverse();
        Ok(JointField::Grid {
            sdf: Arc::new(sdf),
            labels: Arc::new(labels),
            frame,
        })
    }

    fn box_side(&self) -> f64 {
        match self {
            JointField::Net { sdf, .. } => sdf.box_side as f64,
            JointField::Grid { sdf, .. } => sdf.box_side(),
        }
    }
}

/// Instrumentation shared by an avatar and every posed copy of it.
#[derive(Debug, Default)]
pub struct Counters {
    /// Point evaluations of the blended field.
    pub queries: AtomicU64,
    /// Points where no boolean was set.
    pub s_empty: AtomicU64,
    /// Effective parameters computed by pose updates.
    pub effective_params: AtomicU64,
    pub pose_updates: AtomicU64,
}

impl Counters {
    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn s_empty(&self) -> u64 {
        self.s_empty.load(Ordering::Relaxed)
    }

    pub fn effective_params(&self) -> u64 {
        self.effective_params.load(Ordering::Relaxed)
    }

    pub fn pose_updates(&self) -> u64 {
        self.pose_updates.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct AvatarSdf {
    pub rig: Rig,
    pub joints: Vec<JointField>,
    /// Forward-difference step.
    pub h_fd: f64,
    counters: Arc<Counters>,
}

impl AvatarSdf {
    /// `h_fd` defaults to `1e-3` times the largest canonical box side.
    pub fn new(rig: Rig, joints: Vec<JointField>) -> Result<Self> {
        rig.validate()?;
        if joints.is_empty() {
            return Err(Error::validation("an avatar needs at least one joint"));
        }
        if joints.len() != rig.len() {
            return Err(Error::Dimension {
                what: "joint fields",
                expected: rig.len(),
                got: joints.len(),
            });
        }
        for (i, j) in joints.iter().enumerate() {
            if let JointField::Net { sdf, boolean } = j {
                let dof = rig.joints[i].dof();
                for (m, kind) in [(sdf, NetKind::Sdf), (boolean, NetKind::Bool)] {
                    if m.joint != i || m.topology.dof != dof || m.kind != kind {
                        return Err(Error::validation(format!(
                            "{} network for joint {i} is for joint {} with {} DOF ({})",
                            kind.name(),
                            m.joint,
                            m.topology.dof,
                            m.kind.name()
                        )));
                    }
                }
            }
        }
        let h_fd = 1e-3 * joints.iter().map(JointField::box_side).fold(0.0, f64::max);
        Ok(Self {
            rig,
            joints,
            h_fd,
            counters: Arc::default(),
        })
    }

    /// Largest canonical box side over the joints.
    pub fn box_side(&self) -> f64 {
        self.joints.iter().map(JointField::box_side).fold(0.0, f64::max)
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Specialize every joint to `state`: effective parameters and canonical
    /// transforms are computed here once and reused by all queries.
    pub fn pose_update(&self, state: &JointState) -> Result<PosedAvatarSdf> {
        let mut joints = Vec::with_capacity(self.joints.len());
        let mut evaluated = 0u64;
        for (i, field) in self.joints.iter().enumerate() {
            let t = joint_local_transform(&self.rig, state, i)?;
            let posed = match field {
                JointField::Net { sdf, boolean } => {
                    let pose = state.joint(&self.rig, i);
                    let s = sdf.effective_params(pose)?;
                    let b = boolean.effective_params(pose)?;
                    evaluated += (s.values.len() + b.values.len()) as u64;
                    PosedField::Net {
                        to_canonical: Affine32::from(&t),
                        sdf: s,
                        boolean: b,
                    }
                }
                JointField::Grid { sdf, labels, frame } => PosedField::Grid {
                    to_grid: frame.compose(&t),
                    sdf: sdf.clone(),
                    labels: labels.clone(),
                },
            };
            joints.push(posed);
        }
        self.counters.effective_params.fetch_add(evaluated, Ordering::Relaxed);
        self.counters.pose_updates.fetch_add(1, Ordering::Relaxed);
        Ok(PosedAvatarSdf {
            joints,
            h_fd: self.h_fd,
            counters: self.counters.clone(),
        })
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let rig = Rig::load(dir.join(&m.rig))?;
        let mut joints: Vec<Option<JointField>> = vec![None; rig.len()];
        for j in &m.joints {
            let slot = joints.get_mut(j.index).ok_or(Error::Range {
                what: "manifest joint",
                index: j.index,
                len: rig.len(),
            })?;
            *slot = Some(JointField::Net {
                sdf: SsdfModel::read(dir.join(&j.sdf))?,
                boolean: SsdfModel::read(dir.join(&j.boolean))?,
            });
        }
        let joints = joints
            .into_iter()
            .enumerate()
            .map(|(i, j)| j.ok_or_else(|| Error::format(path, format!("joint {i} has no networks"))))
            .collect::<Result<Vec<_>>>()?;
        let mut avatar = Self::new(rig, joints)?;
        if let Some(h) = m.h_fd {
            if !(h > 0.0) {
                return Err(Error::format(path, "h_fd must be positive"));
            }
            avatar.h_fd = h;
        }
        Ok(avatar)
    }
}

/// Avatar bundle: a rig config and the two network bundles of every joint,
/// with paths relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub rig: PathBuf,
    #[serde(default)]
    pub h_fd: Option<f64>,
    #[serde(rename = "joint")]
    pub joints: Vec<ManifestJoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestJoint {
    pub index: usize,
    pub sdf: PathBuf,
    #[serde(rename = "bool")]
    pub boolean: PathBuf,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

/// Single-precision rigid transform for network inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine32 {
    r: [[f32; 3]; 3],
    t: [f32; 3],
}

impl From<&RigidTransform> for Affine32 {
    fn from(t: &RigidTransform) -> Self {
        Self {
            r: [0, 1, 2].map(|i| [0, 1, 2].map(|j| t.rotation[(i, j)] as f32)),
            t: [0, 1, 2].map(|i| t.translation[i] as f32),
        }
    }
}

impl Affine32 {
    #[inline]
    fn apply(&self, x: &Vec3) -> [f32; 3] {
        let p = [x.x as f32, x.y as f32, x.z as f32];
        [0, 1, 2].map(|i| self.r[i][0] * p[0] + self.r[i][1] * p[1] + self.r[i][2] * p[2] + self.t[i])
    }
}

#[derive(Debug, Clone)]
enum PosedField {
    Net {
        to_canonical: Affine32,
        sdf: EffectiveParams,
        boolean: EffectiveParams,
    },
    Grid {
        to_grid: RigidTransform,
        sdf: Arc<GridSdf>,
        labels: Arc<LabelGrid>,
    },
}

impl PosedField {
    /// Distance and boolean for a batch of world points.
    fn eval(&self, xs: &[Vec3], phi: &mut Vec<f64>, valid: &mut Vec<bool>) {
        phi.clear();
        valid.clear();
        match self {
            PosedField::Net {
                to_canonical,
                sdf,
                boolean,
            } => {
                let xc: Vec<[f32; 3]> = xs.iter().map(|x| to_canonical.apply(x)).collect();
                phi.extend(sdf.forward_batch(&xc).into_iter().map(f64::from));
                valid.extend(boolean.forward_batch(&xc).into_iter().map(|b| b > 0.0));
            }
            PosedField::Grid { to_grid, sdf, labels } => {
                for x in xs {
                    let g = to_grid.apply(x);
                    phi.push(sample_extended(sdf, &g));
                    valid.push(labels.sample(&g) > 0.0);
                }
            }
        }
    }
}

/// Trilinear sample; outside the lattice the clamped value is increased by
/// the distance to the lattice box.
fn sample_extended(sdf: &GridSdf, x: &Vec3) -> f64 {
    let s = &sdf.spec;
    let hi = s.max_corner();
    let c = Vec3::new(
        x.x.clamp(s.origin.x, hi.x),
        x.y.clamp(s.origin.y, hi.y),
        x.z.clamp(s.origin.z, hi.z),
    );
    sdf.sample(&c).0 + (x - c).norm()
}

/// An avatar specialized to one joint state. Immutable; queries may run
/// concurrently.
#[derive(Debug, Clone)]
pub struct PosedAvatarSdf {
    joints: Vec<PosedField>,
    pub h_fd: f64,
    counters: Arc<Counters>,
}

impl PosedAvatarSdf {
    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Blended values and whether each point needed the all-joint fallback.
    fn blend_chunk(&self, xs: &[Vec3]) -> (Vec<f64>, usize) {
        let mut best_valid = vec![f64::INFINITY; xs.len()];
        let mut best_any = vec![f64::INFINITY; xs.len()];
        let (mut phi, mut valid) = (Vec::new(), Vec::new());
        for j in &self.joints {
            j.eval(xs, &mut phi, &mut valid);
            for k in 0..xs.len() {
                best_any[k] = best_any[k].min(phi[k]);
                if valid[k] {
                    best_valid[k] = best_valid[k].min(phi[k]);
                }
            }
        }
        let mut empty = 0;
        for (v, a) in best_valid.iter_mut().zip(&best_any) {
            if *v == f64::INFINITY {
                *v = *a;
                empty += 1;
            }
        }
        (best_valid, empty)
    }

    fn record(&self, points: usize, empty: usize) {
        self.counters.queries.fetch_add(points as u64, Ordering::Relaxed);
        self.counters.s_empty.fetch_add(empty as u64, Ordering::Relaxed);
    }

    pub fn query(&self, x: &Vec3) -> f64 {
        self.query_flagged(x).0
    }

    /// Value and whether no joint claimed the point.
    pub fn query_flagged(&self, x: &Vec3) -> (f64, bool) {
        let (v, empty) = self.blend_chunk(std::slice::from_ref(x));
        self.record(1, empty);
        (v[0], empty == 1)
    }

    pub fn query_batch(&self, xs: &[Vec3]) -> Vec<f64> {
        let parts: Vec<(Vec<f64>, usize)> = if xs.len() > PAR_CHUNK {
            xs.par_chunks(PAR_CHUNK).map(|c| self.blend_chunk(c)).collect()
        } else {
            vec![self.blend_chunk(xs)]
        };
        let mut out = Vec::with_capacity(xs.len());
        let mut empty = 0;
        for (v, e) in parts {
            out.extend(v);
            empty += e;
        }
        self.record(xs.len(), empty);
        out
    }

    /// Forward-difference gradient given the value at `x` (3 queries).
    pub fn gradient_from(&self, x: &Vec3, phi: f64) -> Vec3 {
        let h = self.h_fd;
        let probes = [x + Vec3::x() * h, x + Vec3::y() * h, x + Vec3::z() * h];
        let (v, empty) = self.blend_chunk(&probes);
        self.record(3, empty);
        Vec3::new(v[0] - phi, v[1] - phi, v[2] - phi) / h
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        let phi = self.query(x);
        self.gradient_from(x, phi)
    }

    /// Closest-point estimate `x - φ∇φ`.
    pub fn project(&self, x: &Vec3) -> Vec3 {
        let phi = self.query(x);
        x - self.gradient_from(x, phi) * phi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance_field::{classify_boundary, grid_sdf_from_mesh, GridSpec};
    use crate::geometry::{box_mesh, signed_distance_brute, TriMesh};
    use crate::rig::Joint;
    use crate::ssdf::Topology;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixed_rig(n: usize) -> Rig {
        Rig::new(
            (0..n)
                .map(|i| Joint {
                    id: i,
                    parent: None,
                    center: [0.0; 3],
                    axes: vec![[0.0, 0.0, 1.0]],
                    range: vec![[0.0, 10.0, 0.0]],
                })
                .collect(),
        )
        .unwrap()
    }

    fn all_true(spec: GridSpec) -> LabelGrid {
        LabelGrid {
            spec,
            labels: vec![1; spec.len()],
        }
    }

    /// Box body split into two overlapping halves, ground-truth fields. The
    /// overlap is wider than the cross-section, so the zones where each half
    /// is closer to its cut than to the true surface stay disjoint.
    fn two_box_avatar() -> (AvatarSdf, TriMesh, GridSpec) {
        let spec = GridSpec::new(Vec3::repeat(-0.5), 3.0 / 47.0, [48, 48, 48]).unwrap();
        let o = Vec3::repeat(0.013);
        let body = box_mesh(o, Vec3::new(2.0, 1.0, 1.0) + o);
        let left = box_mesh(o, Vec3::new(1.6, 1.0, 1.0) + o);
        let right = box_mesh(Vec3::new(0.4, 0.0, 0.0) + o, Vec3::new(2.0, 1.0, 1.0) + o);
        let body_mask = grid_sdf_from_mesh(&body, &spec).unwrap().inside_mask();
        let rig = fixed_rig(2);
        let rest = JointState::zeros(&rig);
        let fields = [left, right]
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let sdf = grid_sdf_from_mesh(m, &spec).unwrap();
                let labels = classify_boundary(&sdf.inside_mask(), &body_mask, &sdf).unwrap();
                JointField::grid_at_pose(&rig, &rest, i, sdf, labels).unwrap()
            })
            .collect();
        (AvatarSdf::new(rig, fields).unwrap(), body, spec)
    }

    fn sphere_avatar(r: f64) -> AvatarSdf {
        let spec = GridSpec::new(Vec3::repeat(-2.0), 4.0 / 63.0, [64, 64, 64]).unwrap();
        let sdf = GridSdf::from_fn(spec, |x| x.norm() - r);
        let rig = fixed_rig(1);
        let f = JointField::grid_at_pose(&rig, &JointState::zeros(&rig), 0, sdf, all_true(spec)).unwrap();
        AvatarSdf::new(rig, vec![f]).unwrap()
    }

    fn random_net(joint: usize, kind: NetKind, topo: Topology, seed: u64) -> SsdfModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SsdfModel::zeros(joint, topo, kind, 2.0, [0.0; 3]);
        for p in &mut m.params {
            *p = rng.gen_range(-0.6..0.6);
        }
        m
    }

    fn hinge_rig() -> Rig {
        Rig::new(vec![
            Joint {
                id: 0,
                parent: None,
                center: [0.0; 3],
                axes: vec![[0.0, 0.0, 1.0]],
                range: vec![[0.0, 10.0, 0.0]],
            },
            Joint {
                id: 1,
                parent: Some(0),
                center: [1.0, 0.0, 0.0],
                axes: vec![[0.0, 0.0, 1.0]],
                range: vec![[-90.0, 10.0, 0.0]],
            },
        ])
        .unwrap()
    }

    fn net_avatar() -> AvatarSdf {
        let rig = hinge_rig();
        let joints = (0..2)
            .map(|i| JointField::Net {
                sdf: random_net(i, NetKind::Sdf, Topology::sdf(1), 10 + i as u64),
                boolean: random_net(i, NetKind::Bool, Topology::boolean(1), 20 + i as u64),
            })
            .collect();
        AvatarSdf::new(rig, joints).unwrap()
    }

    #[test]
    fn oracle_blend_matches_union_distance() {
        let (avatar, body, spec) = two_box_avatar();
        let posed = avatar.pose_update(&JointState::zeros(&avatar.rig)).unwrap();
        let h = spec.spacing;
        let lattice = GridSpec::new(Vec3::new(-0.3, -0.3, -0.3), 2.6 / 31.0, [32, 32, 32]).unwrap();
        let xs: Vec<Vec3> = (0..lattice.len()).map(|i| lattice.node_position(i)).collect();
        let got = posed.query_batch(&xs);
        let worst = xs
            .iter()
            .zip(&got)
            .map(|(x, v)| (v - signed_distance_brute(&body, x)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 2.0 * h, "max error {worst}, h {h}");
        assert_eq!(posed.counters().s_empty(), 0);
    }

    #[test]
    fn cut_side_region_is_excluded() {
        // just inside the right half next to its cut face: only the left
        // region sees the true surface there
        let (avatar, body, spec) = two_box_avatar();
        let posed = avatar.pose_update(&JointState::zeros(&avatar.rig)).unwrap();
        let x = Vec3::new(0.55, 0.5, 0.5);
        let JointField::Grid { sdf, labels, .. } = &avatar.joints[1] else { unreachable!() };
        assert!(labels.sample(&x) <= 0.0);
        assert!(sdf.sample(&x).0 > posed.query(&x) + 0.2);
        assert!((posed.query(&x) - signed_distance_brute(&body, &x)).abs() <= 2.0 * spec.spacing);
    }

    #[test]
    fn far_points_are_positive_for_every_joint() {
        let (avatar, _, _) = two_box_avatar();
        let posed = avatar.pose_update(&JointState::zeros(&avatar.rig)).unwrap();
        for x in [Vec3::new(5.0, 0.0, 0.0), Vec3::new(-3.0, 4.0, 1.0)] {
            let (v, empty) = posed.query_flagged(&x);
            assert!(v > 0.0 && !empty);
        }
    }

    #[test]
    fn single_joint_equals_its_network() {
        let rig = fixed_rig(1);
        let sdf = random_net(0, NetKind::Sdf, Topology::sdf(1), 1);
        let mut boolean = random_net(0, NetKind::Bool, Topology::boolean(1), 2);
        // constant positive boolean
        boolean.params.iter_mut().for_each(|p| *p = 0.0);
        let last = boolean.topology.param_offset(boolean.topology.transitions() - 1, 0) + 8;
        boolean.params[last] = 1.0;
        let avatar = AvatarSdf::new(rig.clone(), vec![JointField::Net { sdf: sdf.clone(), boolean }]).unwrap();
        let state = JointState::new(&rig, vec![0.3]).unwrap();
        let posed = avatar.pose_update(&state).unwrap();
        let eff = sdf.effective_params(&[0.3]).unwrap();
        let t = joint_local_transform(&rig, &state, 0).unwrap();
        for x in [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.5, 0.4, 0.0)] {
            let c = t.apply(&x);
            let want = eff.forward([c.x as f32, c.y as f32, c.z as f32]) as f64;
            assert!((posed.query(&x) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn min_over_valid_set() {
        let avatar = net_avatar();
        let rig = &avatar.rig;
        let state = JointState::new(rig, vec![0.0, -0.7]).unwrap();
        let posed = avatar.pose_update(&state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = Vec3::new(rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (phi, empty) = posed.query_flagged(&x);
            let mut any = false;
            for (i, f) in avatar.joints.iter().enumerate() {
                let JointField::Net { sdf, boolean } = f else { unreachable!() };
                let c = joint_local_transform(rig, &state, i).unwrap().apply(&x);
                let c = [c.x as f32, c.y as f32, c.z as f32];
                let pose = state.joint(rig, i);
                if boolean.effective_params(pose).unwrap().forward(c) > 0.0 {
                    any = true;
                    assert!(phi <= sdf.effective_params(pose).unwrap().forward(c) as f64 + 1e-12);
                }
            }
            assert_eq!(empty, !any);
        }
    }

    #[test]
    fn pose_update_is_deterministic_and_counted() {
        let avatar = net_avatar();
        let state = JointState::new(&avatar.rig, vec![0.0, -0.4]).unwrap();
        let before = avatar.counters().effective_params();
        let a = avatar.pose_update(&state).unwrap();
        let b = avatar.pose_update(&state).unwrap();
        let per_update = (Topology::sdf(1).inference_params() + Topology::boolean(1).inference_params()) as u64 * 2;
        assert_eq!(avatar.counters().effective_params() - before, 2 * per_update);
        let xs: Vec<Vec3> = (0..100).map(|i| Vec3::new(i as f64 * 0.02, 0.1, 0.0)).collect();
        assert_eq!(a.query_batch(&xs), b.query_batch(&xs));
        // queries never recompute effective parameters
        assert_eq!(avatar.counters().effective_params() - before, 2 * per_update);
        for (pa, pb) in a.joints.iter().zip(&b.joints) {
            let (PosedField::Net { sdf: sa, boolean: ba, .. }, PosedField::Net { sdf: sb, boolean: bb, .. }) = (pa, pb) else {
                unreachable!()
            };
            assert_eq!(sa, sb);
            assert_eq!(ba, bb);
        }
        // the rest pose uses the constant terms
        let rest = avatar.pose_update(&JointState::zeros(&avatar.rig)).unwrap();
        let PosedField::Net { sdf, .. } = &rest.joints[1] else { unreachable!() };
        let JointField::Net { sdf: model, .. } = &avatar.joints[1] else { unreachable!() };
        assert_eq!(sdf, &model.effective_params(&[0.0]).unwrap());
    }

    #[test]
    fn batch_agrees_with_single_queries() {
        let avatar = net_avatar();
        let posed = avatar.pose_update(&JointState::new(&avatar.rig, vec![0.0, -1.2]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Vec3> = (0..4096)
            .map(|_| Vec3::new(rng.gen_range(-1.0..2.5), rng.gen_range(-1.5..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let batch = posed.query_batch(&xs);
        for (x, b) in xs.iter().zip(&batch) {
            assert!((posed.query(x) - b).abs() <= 1e-6);
        }
        assert_eq!(posed.query_batch(&xs[..1])[0], posed.query(&xs[0]));
        let mut joined = posed.query_batch(&xs[..1500]);
        joined.extend(posed.query_batch(&xs[1500..]));
        assert_eq!(joined, batch);
    }

    #[test]
    fn gradient_of_linear_piece_is_exact() {
        // a one-joint network that is affine everywhere: every hidden unit
        // stays active on the probed region
        let rig = fixed_rig(1);
        let topo = Topology::new(3, 2, 1).unwrap();
        let mut sdf = SsdfModel::zeros(0, topo, NetKind::Sdf, 2.0, [0.0; 3]);
        // hidden: u0 = x + 0.1, u1 = y + 0.1; output = 0.5 u0 - 0.25 u1
        let p = &mut sdf.params;
        p[0] = 1.0;
        p[4] = 1.0;
        p[6] = 0.1;
        p[7] = 0.1;
        let o = topo.param_offset(1, 0);
        p[o] = 0.5;
        p[o + 1] = -0.25;
        let mut boolean = SsdfModel::zeros(0, Topology::boolean(1), NetKind::Bool, 2.0, [0.0; 3]);
        let last = boolean.topology.param_offset(2, 0) + 8;
        boolean.params[last] = 1.0;
        let avatar = AvatarSdf::new(rig.clone(), vec![JointField::Net { sdf, boolean }]).unwrap();
        let posed = avatar.pose_update(&JointState::zeros(&rig)).unwrap();
        let g = posed.gradient(&Vec3::new(0.01, 0.02, -0.03));
        assert!((g - Vec3::new(0.5, -0.25, 0.0)).amax() < 1e-5, "{g:?}");
    }

    #[test]
    fn oracle_gradient_near_a_face_is_the_normal() {
        let (avatar, _, _) = two_box_avatar();
        let posed = avatar.pose_update(&JointState::zeros(&avatar.rig)).unwrap();
        let g = posed.gradient(&Vec3::new(0.5, 1.1, 0.5));
        assert!((g - Vec3::y()).norm() < 1e-2, "{g:?}");
    }

    #[test]
    fn projection_onto_sphere() {
        let r = 0.8;
        let avatar = sphere_avatar(r);
        let posed = avatar.pose_update(&JointState::zeros(&avatar.rig)).unwrap();
        let x = Vec3::new(1.0, 1.0, 0.4).normalize() * (2.0 * r);
        assert!((posed.project(&x).norm() - r).abs() < 2e-2);
        // already on the (interpolated) surface: bisect along a ray
        let (mut lo, mut hi) = (0.5 * r, 1.5 * r);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if posed.query(&Vec3::new(0.0, 0.3 * mid, mid)) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let on = Vec3::new(0.0, 0.3 * lo, lo);
        assert!(posed.query(&on).abs() < 1e-6);
        assert!((posed.project(&on) - on).norm() < 1e-5);
        // one projection contracts near-surface points
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lg = avatar.box_side();
        for _ in 0..200 {
            let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let x = dir * (r + rng.gen_range(-0.05..0.05) * lg);
            let before = posed.query(&x);
            let after = posed.query(&posed.project(&x));
            assert!(after.abs() <= 0.2 * before.abs() + 1e-9, "{before} -> {after}");
        }
    }

    #[test]
    fn oracle_is_continuous_across_the_cut() {
        let (avatar, _, spec) = two_box_avatar();
        let posed = avatar.pose_update(&JointState::zeros(&avatar.rig)).unwrap();
        let xs: Vec<Vec3> = (0..=400).map(|k| Vec3::new(0.4 + k as f64 * 0.002, 0.3, 0.6)).collect();
        let v = posed.query_batch(&xs);
        for w in v.windows(2) {
            assert!((w[1] - w[0]).abs() <= 2.0 * spec.spacing);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let avatar = net_avatar();
        std::fs::write(dir.path().join("rig.toml"), avatar.rig.to_toml()).unwrap();
        let mut joints = Vec::new();
        for (i, f) in avatar.joints.iter().enumerate() {
            let JointField::Net { sdf, boolean } = f else { unreachable!() };
            let (a, b) = (format!("j{i}.sdf.bin"), format!("j{i}.bool.bin"));
            sdf.write(dir.path().join(&a)).unwrap();
            boolean.write(dir.path().join(&b)).unwrap();
            joints.push(ManifestJoint {
                index: i,
                sdf: a.into(),
                boolean: b.into(),
            });
        }
        let m = Manifest {
            rig: "rig.toml".into(),
            h_fd: Some(0.004),
            joints,
        };
        m.write(dir.path().join("avatar.toml")).unwrap();
        let back = AvatarSdf::load_manifest(dir.path().join("avatar.toml")).unwrap();
        assert_eq!(back.h_fd, 0.004);
        let state = JointState::new(&back.rig, vec![0.0, -0.5]).unwrap();
        let x = Vec3::new(1.3, -0.2, 0.1);
        assert_eq!(
            back.pose_update(&state).unwrap().query(&x),
            avatar.pose_update(&state).unwrap().query(&x)
        );
    }

    #[test]
    fn mismatched_networks_are_rejected() {
        let rig = hinge_rig();
        let joints = (0..2)
            .map(|i| JointField::Net {
                sdf: random_net(0, NetKind::Sdf, Topology::sdf(1), 1),
                boolean: random_net(i, NetKind::Bool, Topology::boolean(1), 2),
            })
            .collect();
        assert!(AvatarSdf::new(rig, joints).is_err());
    }
}
