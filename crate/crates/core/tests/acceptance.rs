//! Acceptance run over the hinged two-capsule character. Prints one
//! PASS/FAIL line per criterion and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shallow_sdf::blend::{AvatarSdf, JointField};
use shallow_sdf::cloth::{run_scene, Scene};
use shallow_sdf::dataset::{build_dataset, Character, Dataset, PartitionConfig, PoseRange, SelectionConfig};
use shallow_sdf::distance_field::{classify_boundary, grid_sdf_from_mesh, GridSpec};
use shallow_sdf::evaluate::{joint_band_error, joint_ground_truth, label_accuracy, network_on_grid, Accuracy};
use shallow_sdf::geometry::{box_mesh, icosphere, signed_distance_brute, Vec3};
use shallow_sdf::rig::{Joint, JointState, Rig};
use shallow_sdf::seed;
use shallow_sdf::shapes::HingedCapsule;
use shallow_sdf::ssdf::{
    inference_param_count, train_with, training_param_count, NetKind, SsdfModel, Topology, TrainConfig, TrainHistory,
};

type Outcome = Result<String, String>;

const SEED: u64 = 2024;
const RESOLUTION: usize = 48;
const EPOCHS: usize = 10_000;
const HINGE: usize = 1;
/// Between the 10° training poses.
const HELD_OUT: [f64; 3] = [-35.0, -65.0, -95.0];

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Artifacts shared between criteria, built on first use.
#[derive(Default)]
struct Shared {
    character: Option<Character>,
    grids: Vec<Option<(PoseRange, GridSpec)>>,
    datasets: Vec<Option<Dataset>>,
    /// Per joint: distance network with the default width, boolean network.
    sdf: Vec<Option<(SsdfModel, TrainHistory)>>,
    boolean: Vec<Option<SsdfModel>>,
}

impl Shared {
    fn character(&mut self) -> Result<&Character, String> {
        if self.character.is_none() {
            let shape = HingedCapsule::default();
            let cfg = PartitionConfig {
                resolution: RESOLUTION,
                ..Default::default()
            };
            let ch = Character::build(shape.rig().map_err(err)?, shape.skinned_mesh().map_err(err)?, &cfg).map_err(err)?;
            self.grids = vec![None; ch.rig.len()];
            self.datasets = vec![None; ch.rig.len()];
            self.sdf = vec![None; ch.rig.len()];
            self.boolean = vec![None; ch.rig.len()];
            self.character = Some(ch);
        }
        Ok(self.character.as_ref().unwrap())
    }

    fn grid(&mut self, joint: usize) -> Result<(PoseRange, GridSpec), String> {
        self.character()?;
        if self.grids[joint].is_none() {
            let ch = self.character.as_ref().unwrap();
            let range = PoseRange::of_joint(&ch.rig.joints[joint]).map_err(err)?;
            let spec = ch.joint_grid(joint, &range, RESOLUTION).map_err(err)?;
            self.grids[joint] = Some((range, spec));
        }
        Ok(self.grids[joint].clone().unwrap())
    }

    fn dataset(&mut self, joint: usize) -> Result<&Dataset, String> {
        let (range, spec) = self.grid(joint)?;
        if self.datasets[joint].is_none() {
            let ch = self.character.as_ref().unwrap();
            let data = build_dataset(ch, joint, &range, &spec, &SelectionConfig::default(), SEED).map_err(err)?;
            self.datasets[joint] = Some(data);
        }
        Ok(self.datasets[joint].as_ref().unwrap())
    }

    fn train(&mut self, joint: usize, topo: Topology, kind: NetKind, epochs: usize) -> Result<(SsdfModel, TrainHistory), String> {
        let data = self.dataset(joint)?;
        let cfg = train_config(joint, kind, epochs);
        train_with(data, topo, kind, &cfg, |_, _, _| {}).map_err(err)
    }

    fn sdf_net(&mut self, joint: usize) -> Result<(SsdfModel, TrainHistory), String> {
        if self.sdf.get(joint).map_or(true, Option::is_none) {
            let r = self.train(joint, Topology::sdf(1), NetKind::Sdf, EPOCHS)?;
            self.sdf[joint] = Some(r);
        }
        Ok(self.sdf[joint].clone().unwrap())
    }

    fn bool_net(&mut self, joint: usize) -> Result<SsdfModel, String> {
        if self.boolean.get(joint).map_or(true, Option::is_none) {
            let (m, _) = self.train(joint, Topology::boolean(1), NetKind::Bool, EPOCHS)?;
            self.boolean[joint] = Some(m);
        }
        Ok(self.boolean[joint].clone().unwrap())
    }

    /// Mean band error of a hinge distance network over the held-out poses,
    /// in units of `L_G`, plus the per-pose values.
    fn held_out_band_error(&mut self, model: &SsdfModel) -> Result<(f64, Vec<f64>), String> {
        let (_, spec) = self.grid(HINGE)?;
        let ch = self.character.as_ref().unwrap();
        let lg = spec.box_side();
        let mut per_pose = Vec::new();
        for deg in HELD_OUT {
            let pose = [deg.to_radians()];
            let (gt, _) = joint_ground_truth(ch, HINGE, &pose, &spec).map_err(err)?;
            let values = network_on_grid(ch, model, &pose, &spec).map_err(err)?;
            let e = joint_band_error(model, &values, &gt, 0.2 * lg).map_err(err)?;
            per_pose.push(e.mean / lg);
        }
        Ok((per_pose.iter().sum::<f64>() / per_pose.len() as f64, per_pose))
    }
}

fn train_config(joint: usize, kind: NetKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: seed::derive(SEED, &format!("train/{joint}/{}", kind.name())),
        ..Default::default()
    }
}

fn parameter_counts(_: &mut Shared) -> Outcome {
    let rows = [(5, 4, 61, 183), (5, 8, 185, 555), (5, 16, 625, 1875), (5, 32, 2273, 6819), (7, 32, 4385, 13155)];
    let mut bad = Vec::new();
    for (nl, nh, pi, pt) in rows {
        let t = Topology::new(nl, nh, 2).map_err(err)?;
        let got = (inference_param_count(nl, nh), training_param_count(nl, nh, 2), t.inference_params(), t.training_params());
        if got != (pi, pt, pi, pt) {
            bad.push(format!("N_L={nl} N_H={nh}: {got:?}, want ({pi}, {pt})"));
        }
    }
    if bad.is_empty() {
        Ok("all five rows reproduced".into())
    } else {
        Err(bad.join("; "))
    }
}

fn gradient_check(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(SEED, "acceptance/gradient"));
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for _ in 0..100 {
        let topo = Topology::new(rng.gen_range(3..8), rng.gen_range(2..17), rng.gen_range(1..4)).map_err(err)?;
        let mut m = SsdfModel::zeros(0, topo, NetKind::Sdf, rng.gen_range(0.5..3.0), [0.0; 3]);
        m.center = [0, 1, 2].map(|_| rng.gen_range(-0.3..0.3));
        for p in &mut m.params {
            *p = rng.gen_range(-0.8..0.8);
        }
        let pose: Vec<f64> = (0..topo.dof).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
        let s = rng.gen_range(-0.2..0.2);
        let delta = 10.0;
        let p: Vec<f64> = m.params.iter().map(|&v| v as f64).collect();
        let (_, g) = m.loss_and_gradient(&p, &pose, x, s, delta).map_err(err)?;
        let step = 1e-4;
        for k in 0..p.len() {
            if g[k].abs() <= 1e-6 {
                continue;
            }
            let mut q = p.clone();
            q[k] = p[k] + step;
            let lp = m.loss_and_gradient(&q, &pose, x, s, delta).map_err(err)?.0;
            q[k] = p[k] - step;
            let lm = m.loss_and_gradient(&q, &pose, x, s, delta).map_err(err)?.0;
            let fd = (lp - lm) / (2.0 * step);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(fd.abs()));
            checked += 1;
        }
    }
    let detail = format!("{checked} parameters over 100 triples, worst relative error {worst:.2e}");
    if worst <= 1e-4 && checked > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fast_marching(_: &mut Shared) -> Outcome {
    let (c, r) = (Vec3::new(0.013, -0.021, 0.008), 0.6);
    let spec = GridSpec::new(Vec3::repeat(-1.0), 2.0 / 47.0, [48, 48, 48]).map_err(err)?;
    let g = grid_sdf_from_mesh(&icosphere(c, r, 5), &spec).map_err(err)?;
    let h = spec.spacing;
    let worst = (0..spec.len())
        .map(|i| (g.values[i] as f64 - ((spec.node_position(i) - c).norm() - r)).abs())
        .fold(0.0, f64::max);
    let detail = format!("max error {:.3} h", worst / h);
    if worst <= 2.0 * h {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_blend(_: &mut Shared) -> Outcome {
    let spec = GridSpec::new(Vec3::repeat(-0.5), 3.0 / 47.0, [48, 48, 48]).map_err(err)?;
    let o = Vec3::repeat(0.013);
    let body = box_mesh(o, Vec3::new(2.0, 1.0, 1.0) + o);
    let halves = [
        box_mesh(o, Vec3::new(1.6, 1.0, 1.0) + o),
        box_mesh(Vec3::new(0.4, 0.0, 0.0) + o, Vec3::new(2.0, 1.0, 1.0) + o),
    ];
    let body_mask = grid_sdf_from_mesh(&body, &spec).map_err(err)?.inside_mask();
    let rig = Rig::new(
        (0..2)
            .map(|i| Joint {
                id: i,
                parent: None,
                center: [0.0; 3],
                axes: vec![[0.0, 0.0, 1.0]],
                range: vec![[0.0, 10.0, 0.0]],
            })
            .collect(),
    )
    .map_err(err)?;
    let rest = JointState::zeros(&rig);
    let mut joints = Vec::new();
    for (i, m) in halves.iter().enumerate() {
        let sdf = grid_sdf_from_mesh(m, &spec).map_err(err)?;
        let labels = classify_boundary(&sdf.inside_mask(), &body_mask, &sdf).map_err(err)?;
        joints.push(JointField::grid_at_pose(&rig, &rest, i, sdf, labels).map_err(err)?);
    }
    let avatar = AvatarSdf::new(rig, joints).map_err(err)?;
    let posed = avatar.pose_update(&rest).map_err(err)?;
    let lattice = GridSpec::new(Vec3::repeat(-0.3), 2.6 / 31.0, [32, 32, 32]).map_err(err)?;
    let xs: Vec<Vec3> = (0..lattice.len()).map(|i| lattice.node_position(i)).collect();
    let got = posed.query_batch(&xs);
    let worst = xs
        .iter()
        .zip(&got)
        .map(|(x, v)| (v - signed_distance_brute(&body, x)).abs())
        .fold(0.0, f64::max);
    let h = spec.spacing;
    let empty = posed.counters().s_empty();
    let detail = format!("max error {:.3} h over 32^3 lattice, S-empty fallbacks {empty}", worst / h);
    if worst <= 2.0 * h && empty == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn learnability(sh: &mut Shared) -> Outcome {
    let (model, history) = sh.sdf_net(HINGE)?;
    let lg = model.box_side as f64;
    let (t, v) = (history.final_train() / (lg * lg), history.final_validation() / (lg * lg));
    let (mean, per_pose) = sh.held_out_band_error(&model)?;
    let worst = per_pose.iter().cloned().fold(0.0, f64::max);
    let detail = format!(
        "train {t:.2e} L_G^2, validation {v:.2e} L_G^2, held-out band error {:?} L_G (mean {mean:.4})",
        per_pose.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>()
    );
    if v <= 5e-4 && v <= 2.0 * t && worst <= 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn boolean_accuracy(sh: &mut Shared) -> Outcome {
    let model = sh.bool_net(HINGE)?;
    let (_, spec) = sh.grid(HINGE)?;
    let ch = sh.character.as_ref().unwrap();
    let (mut all, mut band) = (Accuracy::default(), Accuracy::default());
    for deg in HELD_OUT {
        let pose = [deg.to_radians()];
        let (gt, labels) = joint_ground_truth(ch, HINGE, &pose, &spec).map_err(err)?;
        let values = network_on_grid(ch, &model, &pose, &spec).map_err(err)?;
        let margin = 2.0 * spec.spacing;
        all.add(label_accuracy(&values, &gt, &labels, f64::INFINITY, margin).map_err(err)?);
        band.add(label_accuracy(&values, &gt, &labels, 0.2 * spec.box_side(), margin).map_err(err)?);
    }
    let detail = format!(
        "{:.2}% of {} nodes farther than 2h from the interface ({:.2}% of {} within the clamp band)",
        100.0 * all.fraction(),
        all.total,
        100.0 * band.fraction(),
        band.total
    );
    if all.fraction() >= 0.97 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cloth(sh: &mut Shared) -> Outcome {
    let ch = sh.character()?.clone();
    let mut joints = Vec::new();
    for j in 0..ch.rig.len() {
        let (sdf, _) = sh.sdf_net(j)?;
        let boolean = sh.bool_net(j)?;
        joints.push(JointField::Net { sdf, boolean });
    }
    let avatar = AvatarSdf::new(ch.rig.clone(), joints).map_err(err)?;
    let scene_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets/capsule/scene.toml");
    let scene = Scene::load(&scene_path).map_err(err)?;
    let particles = scene.cloth.nx * scene.cloth.nz;
    let before = avatar.counters().queries();
    let mut last = None;
    let frames = run_scene(&avatar, &scene, |_, cloth| {
        last = Some(cloth.positions.clone());
        Ok(())
    })
    .map_err(err)?;
    let counted = avatar.counters().queries() - before;
    let lg = avatar.box_side();
    let penetration = frames.iter().map(|f| f.penetration).fold(0.0, f64::max);

    // query accounting: the collision rounds plus one penetration sweep per frame
    let steps = scene.frames * scene.substeps;
    let collision: usize = frames.iter().map(|f| f.queries).sum();
    let inside: usize = frames.iter().map(|f| f.inside).sum();
    let extra = collision as i64 - (steps * particles + 3 * inside) as i64;
    let bound = 4 * (scene.collision.max_projections.saturating_sub(1) * inside) as i64;
    let accounted = counted == (collision + scene.frames * particles) as u64 && (0..=bound).contains(&extra);

    // informative: final cloth against the posed skin rather than the learned field
    let t_end = scene.frames as f64;
    let state = scene.state_at(&avatar, t_end).map_err(err)?;
    let skin_spec = ch.body_grid(&state, RESOLUTION).map_err(err)?;
    let skin = grid_sdf_from_mesh(&ch.posed_body(&state).map_err(err)?, &skin_spec).map_err(err)?;
    let skin_depth = last
        .unwrap_or_default()
        .iter()
        .map(|x| -skin.sample(x).0)
        .fold(0.0, f64::max);

    let detail = format!(
        "{} frames, {particles} particles, max penetration {:.2e} L_G, {inside} inside over {steps} steps, \
         {extra} re-projection queries, counter {counted}, final depth against skin {:.2e} L_G",
        frames.len(),
        penetration / lg,
        skin_depth / lg
    );
    if frames.len() == 200 && particles >= 4096 && penetration <= 2e-3 * lg && accounted {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn width_ablation(sh: &mut Shared) -> Outcome {
    let mut errors = Vec::new();
    for hidden in [4, 8, 16] {
        let model = if hidden == Topology::sdf(1).hidden {
            sh.sdf_net(HINGE)?.0
        } else {
            sh.train(HINGE, Topology::new(5, hidden, 1).map_err(err)?, NetKind::Sdf, EPOCHS)?.0
        };
        errors.push(sh.held_out_band_error(&model)?.0);
    }
    let detail = format!(
        "band error N_H=4 {:.4}, 8 {:.4}, 16 {:.4} L_G",
        errors[0], errors[1], errors[2]
    );
    if errors[0] > errors[1] && errors[1] > errors[2] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism(sh: &mut Shared) -> Outcome {
    let first = sh.dataset(HINGE)?.to_bytes();
    let (range, spec) = sh.grid(HINGE)?;
    let ch = sh.character.as_ref().unwrap();
    let second = build_dataset(ch, HINGE, &range, &spec, &SelectionConfig::default(), SEED).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    std::fs::write(&a, &first).map_err(err)?;
    second.write(&b).map_err(err)?;
    let same_files = std::fs::read(&a).map_err(err)? == std::fs::read(&b).map_err(err)?;
    let losses: Vec<f64> = (0..2)
        .map(|_| sh.train(HINGE, Topology::sdf(1), NetKind::Sdf, 300).map(|(_, h)| h.final_train()))
        .collect::<Result<_, _>>()?;
    let diff = (losses[0] - losses[1]).abs();
    let detail = format!(
        "dataset files {} ({} bytes), final loss difference {diff:e}",
        if same_files { "identical" } else { "differ" },
        first.len()
    );
    if same_files && diff <= 1e-7 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [(&str, fn(&mut Shared) -> Outcome); 9] = [
        ("parameter counts", parameter_counts),
        ("gradient correctness", gradient_check),
        ("fast-marching accuracy", fast_marching),
        ("oracle blending", oracle_blend),
        ("learnability", learnability),
        ("boolean accuracy", boolean_accuracy),
        ("cloth non-penetration", cloth),
        ("width ablation", width_ablation),
        ("determinism", determinism),
    ];
    // optional criterion numbers select a subset: `cargo test --test acceptance -- 2 4`
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut shared))).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
