//! Project configuration and the stages run by the `ssdf` command.
//!
//! A project is a TOML file naming the rig, rest mesh and skin weights plus
//! the build settings. All artifacts go under the project's output directory:
//!
//! ```text
//! rig.toml, partition.bin, partition.toml, regions/region{r}.obj
//! gt/joint{j}/pose{k}.sdf, .labels, poses.toml
//! datasets/joint{j}.bin
//! models/joint{j}_{sdf|bool}.bin, models/joint{j}_{sdf|bool}_loss.csv
//! avatar.toml, eval.toml, meshes/{learned|gt}.obj, sim/frame{n}.obj, sim/timing.csv
//! ```
//!
//! Relative paths in the project file are resolved against its directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blend::{AvatarSdf, JointField, Manifest, ManifestJoint};
use crate::cloth::{run_scene, timing_csv, Scene};
use crate::dataset::{build_dataset, pose_grid, Character, Dataset, PartitionConfig, PoseRange, SelectionConfig};
use crate::distance_field::{grid_sdf_from_mesh, marching_cubes, GridSdf, GridSpec};
use crate::error::{Error, Result};
use crate::evaluate::{
    avatar_band_error, joint_band_error, joint_ground_truth, label_accuracy, network_on_grid, Accuracy, BandError,
};
use crate::geometry::TriMesh;
use crate::partition::RegionPartition;
use crate::rig::{joint_local_transform, JointState, Rig, SkinnedMesh};
use crate::seed;
use crate::ssdf::{train_with, NetKind, SsdfModel, Topology, TrainConfig, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub threshold: f64,
    pub start_margin: usize,
    pub max_margin: usize,
}

impl Default for PartitionSection {
    fn default() -> Self {
        let d = PartitionConfig::default();
        Self {
            threshold: d.threshold,
            start_margin: d.start_margin,
            max_margin: d.max_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub eps_factor: f64,
    pub beta_factor: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let d = SelectionConfig::default();
        Self {
            eps_factor: d.eps_factor,
            beta_factor: d.beta_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clamp width and evaluation band, as a fraction of `L_G`.
    pub delta_factor: f64,
    pub validation_fraction: f64,
    pub sdf_layers: usize,
    pub sdf_hidden: usize,
    pub bool_layers: usize,
    pub bool_hidden: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        let (s, b) = (Topology::sdf(1), Topology::boolean(1));
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            delta_factor: d.delta_factor,
            validation_fraction: d.validation_fraction,
            sdf_layers: s.n_layers,
            sdf_hidden: s.hidden,
            bool_layers: b.n_layers,
            bool_hidden: b.hidden,
        }
    }
}

/// Override of a joint's training range, `[min, inc, max]` degrees per DOF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRangeEntry {
    pub joint: usize,
    pub dofs: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub rig: PathBuf,
    pub mesh: PathBuf,
    pub weights: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default, rename = "pose_range", skip_serializing_if = "Vec::is_empty")]
    pub pose_ranges: Vec<PoseRangeEntry>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_resolution() -> usize {
    48
}

impl ProjectConfig {
    pub fn new(rig: impl Into<PathBuf>, mesh: impl Into<PathBuf>, weights: impl Into<PathBuf>) -> Self {
        Self {
            rig: rig.into(),
            mesh: mesh.into(),
            weights: weights.into(),
            output: default_output(),
            resolution: default_resolution(),
            seed: 0,
            partition: PartitionSection::default(),
            sampling: SamplingSection::default(),
            training: TrainingSection::default(),
            pose_ranges: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("project serializes")
    }

    /// Settings only; file existence is checked by [`Project::open`].
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_factor", self.sampling.eps_factor),
            ("beta_factor", self.sampling.beta_factor),
            ("delta_factor", self.training.delta_factor),
            ("learning_rate", self.training.learning_rate),
            ("threshold", self.partition.threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.resolution < 4 {
            return Err(Error::validation("resolution must be at least 4"));
        }
        Topology::new(self.training.sdf_layers, self.training.sdf_hidden, 1)?;
        Topology::new(self.training.bool_layers, self.training.bool_hidden, 1)?;
        self.train_config(0).validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            epochs: t.epochs,
            batch_size: t.batch_size,
            delta_factor: t.delta_factor,
            validation_fraction: t.validation_fraction,
            seed,
        }
    }

    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            resolution: self.resolution,
            threshold: self.partition.threshold,
            start_margin: self.partition.start_margin,
            max_margin: self.partition.max_margin,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            eps_factor: self.sampling.eps_factor,
            beta_factor: self.sampling.beta_factor,
        }
    }
}

/// Stored next to the partition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PartitionInfo {
    margin: usize,
    resolution: usize,
    region_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    pub margin: usize,
    pub region_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetReport {
    pub joint: usize,
    pub poses: usize,
    pub samples: usize,
    pub box_side: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointEval {
    pub joint: usize,
    pub sdf: BandError,
    pub boolean: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub oracle: bool,
    pub degrees: Vec<f64>,
    pub delta: f64,
    pub spacing: f64,
    /// Per-joint networks against their region fields; empty in oracle mode.
    pub joints: Vec<JointEval>,
    /// Blended field against the posed body.
    pub avatar: BandError,
    pub s_empty: u64,
}

impl EvalReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshSource {
    Learned,
    GroundTruth,
    Both,
}

impl std::str::FromStr for MeshSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(Self::Learned),
            "gt" => Ok(Self::GroundTruth),
            "both" => Ok(Self::Both),
            _ => Err(Error::Parse(format!("unknown mesh source {s:?} (learned, gt, both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub frames: usize,
    pub particles: usize,
    pub max_penetration: f64,
    pub box_side: f64,
    pub queries: usize,
    pub inside: usize,
    pub sdf_percent: f64,
}

/// A loaded project: configuration plus the directory it came from.
#[derive(Debug, Clone)]
pub struct Project {
    pub config: ProjectConfig,
    pub base: PathBuf,
}

impl Project {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::format(path, e.to_string()))?;
        let config = ProjectConfig::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::new(config, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn new(config: ProjectConfig, base: impl Into<PathBuf>) -> Result<Self> {
        let p = Self {
            config,
            base: base.into(),
        };
        for f in [&p.config.rig, &p.config.mesh, &p.config.weights] {
            let full = p.resolve(f);
            if !full.is_file() {
                return Err(Error::format(full, "file not found"));
            }
        }
        p.config.validate()?;
        Ok(p)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output(&self) -> PathBuf {
        self.resolve(&self.config.output)
    }

    fn out(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.output().join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(p)
    }

    pub fn rig(&self) -> Result<Rig> {
        Rig::load(self.resolve(&self.config.rig))
    }

    pub fn skin(&self) -> Result<SkinnedMesh> {
        SkinnedMesh::load(self.resolve(&self.config.mesh), self.resolve(&self.config.weights))
    }

    /// Training range of `joint`: the project override or the rig's own.
    pub fn pose_range(&self, rig: &Rig, joint: usize) -> Result<PoseRange> {
        let j = rig.joints.get(joint).ok_or(Error::Range {
            what: "joint",
            index: joint,
            len: rig.len(),
        })?;
        match self.config.pose_ranges.iter().rev().find(|e| e.joint == joint) {
            Some(e) => {
                if e.dofs.len() != j.dof() {
                    return Err(Error::Dimension {
                        what: "pose range DOFs",
                        expected: j.dof(),
                        got: e.dofs.len(),
                    });
                }
                PoseRange::new(e.dofs.clone())
            }
            None => PoseRange::of_joint(j),
        }
    }

    /// Joints selected by an optional `--joint`.
    pub fn joints(&self, rig: &Rig, joint: Option<usize>) -> Result<Vec<usize>> {
        match joint {
            Some(j) if j >= rig.len() => Err(Error::Range {
                what: "joint",
                index: j,
                len: rig.len(),
            }),
            Some(j) => Ok(vec![j]),
            None => Ok((0..rig.len()).collect()),
        }
    }

    pub fn cmd_partition(&self) -> Result<PartitionReport> {
        let rig = self.rig()?;
        let ch = Character::build(rig, self.skin()?, &self.config.partition_config())?;
        let sizes: Vec<usize> = (0..ch.partition.count).map(|r| ch.partition.region_size(r)).collect();
        ch.partition.write(self.out("partition.bin")?)?;
        let info = PartitionInfo {
            margin: ch.margin,
            resolution: ch.resolution,
            region_sizes: sizes.clone(),
        };
        std::fs::write(self.out("partition.toml")?, toml::to_string(&info).expect("info serializes"))?;
        std::fs::write(self.out("rig.toml")?, ch.rig.to_toml())?;
        for (r, region) in ch.regions.iter().enumerate() {
            region.mesh.write_obj(self.out(format!("regions/region{r}.obj"))?)?;
        }
        Ok(PartitionReport {
            margin: ch.margin,
            region_sizes: sizes,
        })
    }

    /// The character from the stored partition.
    pub fn character(&self) -> Result<Character> {
        let info_path = self.output().join("partition.toml");
        let text = std::fs::read_to_string(&info_path)
            .map_err(|e| Error::format(&info_path, format!("{e}; run `partition` first")))?;
        let info: PartitionInfo = toml::from_str(&text).map_err(|e| Error::format(&info_path, e.to_string()))?;
        if info.resolution != self.config.resolution {
            return Err(Error::validation(format!(
                "partition was built at resolution {}, project uses {}; rerun `partition`",
                info.resolution, self.config.resolution
            )));
        }
        let partition = RegionPartition::read(self.output().join("partition.bin"))?;
        Character::assemble(self.rig()?, self.skin()?, partition, info.margin, info.resolution)
    }

    fn joint_grid(&self, ch: &Character, joint: usize) -> Result<(PoseRange, GridSpec)> {
        let range = self.pose_range(&ch.rig, joint)?;
        let spec = ch.joint_grid(joint, &range, self.config.resolution)?;
        Ok((range, spec))
    }

    /// Ground-truth region fields and labels at every training pose.
    pub fn cmd_gensdf(&self, joint: usize) -> Result<usize> {
        let ch = self.character()?;
        let (range, spec) = self.joint_grid(&ch, joint)?;
        let poses = pose_grid(&range);
        let mut index = String::from("# pose index -> joint angles in degrees\n");
        for (k, p) in poses.iter().enumerate() {
            let (sdf, labels) = joint_ground_truth(&ch, joint, p, &spec)?;
            sdf.write(self.out(format!("gt/joint{joint}/pose{k:04}.sdf"))?)?;
            labels.write(self.out(format!("gt/joint{joint}/pose{k:04}.labels"))?)?;
            let deg: Vec<String> = p.iter().map(|v| format!("{}", v.to_degrees())).collect();
            index.push_str(&format!("pose{k:04} = [{}]\n", deg.join(", ")));
        }
        std::fs::write(self.out(format!("gt/joint{joint}/poses.toml"))?, index)?;
        Ok(poses.len())
    }

    pub fn build_dataset(&self, ch: &Character, joint: usize) -> Result<(Dataset, DatasetReport)> {
        let (range, spec) = self.joint_grid(ch, joint)?;
        let data = build_dataset(ch, joint, &range, &spec, &self.config.selection(), self.config.seed)?;
        let report = DatasetReport {
            joint,
            poses: range.count(),
            samples: data.len(),
            box_side: spec.box_side(),
            spacing: spec.spacing,
        };
        Ok((data, report))
    }

    pub fn dataset_path(&self, joint: usize) -> PathBuf {
        self.output().join(format!("datasets/joint{joint}.bin"))
    }

    pub fn cmd_dataset(&self, joint: usize) -> Result<DatasetReport> {
        let ch = self.character()?;
        let (data, report) = self.build_dataset(&ch, joint)?;
        data.write(self.out(format!("datasets/joint{joint}.bin"))?)?;
        Ok(report)
    }

    pub fn topology(&self, kind: NetKind, dof: usize) -> Result<Topology> {
        let t = &self.config.training;
        match kind {
            NetKind::Sdf => Topology::new(t.sdf_layers, t.sdf_hidden, dof),
            NetKind::Bool => Topology::new(t.bool_layers, t.bool_hidden, dof),
        }
    }

    pub fn model_path(&self, joint: usize, kind: NetKind) -> PathBuf {
        self.output().join(format!("models/joint{joint}_{}.bin", kind.name()))
    }

    /// Trains on the stored dataset; `on_epoch` sees `(epoch, train, validation)`.
    pub fn cmd_train(
        &self,
        joint: usize,
        kind: NetKind,
        on_epoch: impl FnMut(usize, f64, f64),
    ) -> Result<(SsdfModel, TrainHistory)> {
        let data = Dataset::read(self.dataset_path(joint))?;
        if data.joint != joint {
            return Err(Error::validation(format!(
                "dataset file holds joint {}, expected {joint}",
                data.joint
            )));
        }
        let rig = self.rig()?;
        let topo = self.topology(kind, data.dof)?;
        let cfg = self.train_config_for(joint, kind);
        let (mut model, history) = train_with(&data, topo, kind, &cfg, on_epoch)?;
        let rest = joint_local_transform(&rig, &JointState::zeros(&rig), joint)?;
        model.set_canonical(&rest);
        model.write(self.out(format!("models/joint{joint}_{}.bin", kind.name()))?)?;
        std::fs::write(
            self.out(format!("models/joint{joint}_{}_loss.csv", kind.name()))?,
            history.to_csv(),
        )?;
        self.write_manifest(&rig)?;
        Ok((model, history))
    }

    pub fn train_config_for(&self, joint: usize, kind: NetKind) -> TrainConfig {
        self.config
            .train_config(seed::derive(self.config.seed, &format!("train/{joint}/{}", kind.name())))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output().join("avatar.toml")
    }

    fn write_manifest(&self, rig: &Rig) -> Result<()> {
        let rig_path = self.out("rig.toml")?;
        if !rig_path.is_file() {
            std::fs::write(&rig_path, rig.to_toml())?;
        }
        let joints = (0..rig.len())
            .map(|j| ManifestJoint {
                index: j,
                sdf: format!("models/joint{j}_sdf.bin").into(),
                boolean: format!("models/joint{j}_bool.bin").into(),
            })
            .collect();
        Manifest {
            rig: "rig.toml".into(),
            h_fd: None,
            joints,
        }
        .write(self.manifest_path())
    }

    pub fn avatar(&self) -> Result<AvatarSdf> {
        AvatarSdf::load_manifest(self.manifest_path())
    }

    /// Full-rig state from concatenated degrees; empty means the A-pose.
    pub fn state(&self, rig: &Rig, degrees: &[f64]) -> Result<JointState> {
        if degrees.is_empty() {
            Ok(JointState::zeros(rig))
        } else {
            JointState::from_degrees(rig, degrees)
        }
    }

    fn body_truth(&self, ch: &Character, state: &JointState) -> Result<GridSdf> {
        let spec = ch.body_grid(state, self.config.resolution)?;
        grid_sdf_from_mesh(&ch.posed_body(state)?, &spec)
    }

    /// Grid-backed avatar built from the ground truth at `state`.
    pub fn oracle_avatar(&self, ch: &Character, state: &JointState) -> Result<AvatarSdf> {
        let spec = ch.body_grid(state, self.config.resolution)?;
        let f = ch.pose_fields(state, &spec, None)?;
        let joints = f
            .regions
            .into_iter()
            .zip(f.labels)
            .enumerate()
            .map(|(j, (sdf, labels))| JointField::grid_at_pose(&ch.rig, state, j, sdf, labels))
            .collect::<Result<_>>()?;
        AvatarSdf::new(ch.rig.clone(), joints)
    }

    /// Learned (or oracle) field against the ground truth at one pose.
    pub fn cmd_eval(&self, degrees: &[f64], oracle: bool) -> Result<EvalReport> {
        let ch = self.character()?;
        let state = self.state(&ch.rig, degrees)?;
        let body = self.body_truth(&ch, &state)?;
        let delta = self.config.training.delta_factor * body.box_side();
        let mut joints = Vec::new();
        let avatar = if oracle {
            self.oracle_avatar(&ch, &state)?
        } else {
            let avatar = self.avatar()?;
            for j in 0..ch.rig.len() {
                let JointField::Net { sdf, boolean } = &avatar.joints[j] else {
                    unreachable!("manifest avatars are network-backed")
                };
                let (_, spec) = self.joint_grid(&ch, j)?;
                let pose = state.joint(&ch.rig, j);
                let (gt, labels) = joint_ground_truth(&ch, j, pose, &spec)?;
                let jd = self.config.training.delta_factor * spec.box_side();
                let s = network_on_grid(&ch, sdf, pose, &spec)?;
                let b = network_on_grid(&ch, boolean, pose, &spec)?;
                joints.push(JointEval {
                    joint: j,
                    sdf: joint_band_error(sdf, &s, &gt, jd)?,
                    boolean: label_accuracy(&b, &gt, &labels, jd, 2.0 * spec.spacing)?,
                });
            }
            avatar
        };
        let posed = avatar.pose_update(&state)?;
        let report = EvalReport {
            oracle,
            degrees: state.values().iter().map(|v| v.to_degrees()).collect(),
            delta,
            spacing: body.spec.spacing,
            joints,
            avatar: avatar_band_error(&posed, &body, delta),
            s_empty: avatar.counters().s_empty(),
        };
        std::fs::write(self.out("eval.toml")?, report.to_toml())?;
        Ok(report)
    }

    /// Zero level sets at one pose; returns the written files.
    pub fn cmd_mesh(&self, degrees: &[f64], source: MeshSource) -> Result<Vec<(PathBuf, TriMesh)>> {
        let rig = self.rig()?;
        let state = self.state(&rig, degrees)?;
        let mut out = Vec::new();
        if matches!(source, MeshSource::GroundTruth | MeshSource::Both) {
            let ch = self.character()?;
            let mesh = marching_cubes(&self.body_truth(&ch, &state)?, 0.0);
            let p = self.out("meshes/gt.obj")?;
            mesh.write_obj(&p)?;
            out.push((p, mesh));
        }
        if matches!(source, MeshSource::Learned | MeshSource::Both) {
            let avatar = self.avatar()?;
            let spec = learned_mesh_grid(&avatar, &state, self.config.resolution)?;
            let mesh = zero_level_set(&avatar, &state, &spec)?;
            let p = self.out("meshes/learned.obj")?;
            mesh.write_obj(&p)?;
            out.push((p, mesh));
        }
        Ok(out)
    }

    /// Runs a cloth scene against the trained avatar.
    pub fn cmd_sim(&self, scene: &Scene) -> Result<SimReport> {
        simulate(&self.avatar()?, scene, &self.output().join("sim"))
    }
}

/// Samples the blended field on `spec` and extracts its zero level set.
pub fn zero_level_set(avatar: &AvatarSdf, state: &JointState, spec: &GridSpec) -> Result<TriMesh> {
    let posed = avatar.pose_update(state)?;
    let xs: Vec<_> = (0..spec.len()).map(|n| spec.node_position(n)).collect();
    let values: Vec<f32> = posed.query_batch(&xs).into_iter().map(|v| v as f32).collect();
    Ok(marching_cubes(&GridSdf::new(*spec, values)?, 0.0))
}

/// Grid enclosing every joint's canonical box at `state`.
pub fn learned_mesh_grid(avatar: &AvatarSdf, state: &JointState, resolution: usize) -> Result<GridSpec> {
    let mut lo = crate::geometry::Vec3::repeat(f64::INFINITY);
    let mut hi = crate::geometry::Vec3::repeat(f64::NEG_INFINITY);
    for (j, field) in avatar.joints.iter().enumerate() {
        let JointField::Net { sdf, .. } = field else {
            return Err(Error::validation("mesh export needs network-backed joints"));
        };
        let to_world = joint_local_transform(&avatar.rig, state, j)?.inverse();
        let c = sdf.center.map(|v| v as f64);
        let half = 0.5 * sdf.box_side as f64;
        for corner in 0..8 {
            let x = crate::geometry::Vec3::from_fn(|a, _| c[a] + if corner >> a & 1 == 1 { half } else { -half });
            let w = to_world.apply(&x);
            lo = lo.inf(&w);
            hi = hi.sup(&w);
        }
    }
    GridSpec::cubified(lo, hi, resolution, 0.0)
}

/// Runs `scene`, writing OBJ frames and `timing.csv` into `dir`.
pub fn simulate(avatar: &AvatarSdf, scene: &Scene, dir: &Path) -> Result<SimReport> {
    std::fs::create_dir_all(dir)?;
    let every = scene.obj_every;
    let frames = run_scene(avatar, scene, |stats, cloth| {
        if every > 0 && stats.frame % every == 0 {
            cloth.mesh().write_obj(dir.join(format!("frame{:04}.obj", stats.frame)))?;
        }
        Ok(())
    })?;
    std::fs::write(dir.join("timing.csv"), timing_csv(&frames))?;
    let (sim, sdf) = frames.iter().fold((0.0, 0.0), |(a, b), f| {
        (a + f.sim_time.as_secs_f64(), b + f.sdf_time.as_secs_f64())
    });
    Ok(SimReport {
        frames: frames.len(),
        particles: scene.cloth.nx * scene.cloth.nz,
        max_penetration: frames.iter().map(|f| f.penetration).fold(0.0, f64::max),
        box_side: avatar.box_side(),
        queries: frames.iter().map(|f| f.queries).sum(),
        inside: frames.iter().map(|f| f.inside).sum(),
        sdf_percent: 100.0 * sdf / sim.max(1e-12),
    })
}
