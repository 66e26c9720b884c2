//! Band error of the capsule hinge network for several hidden widths at a
//! fixed number of epochs.
//!
//! cargo run --release --example width_sweep -- [epochs] [resolution]

use shallow_sdf::dataset::{build_dataset, Character, PartitionConfig, PoseRange, SelectionConfig};
use shallow_sdf::evaluate::{joint_band_error, joint_ground_truth, network_on_grid};
use shallow_sdf::shapes::HingedCapsule;
use shallow_sdf::ssdf::{train_with, NetKind, Topology, TrainConfig};

fn main() -> shallow_sdf::Result<()> {
    let a: Vec<usize> = std::env::args().skip(1).map(|v| v.parse().expect("integer argument")).collect();
    let epochs = a.first().copied().unwrap_or(2000);
    let resolution = a.get(1).copied().unwrap_or(32);
    let shape = HingedCapsule::default();
    let cfg = PartitionConfig {
        resolution,
        ..Default::default()
    };
    let ch = Character::build(shape.rig()?, shape.skinned_mesh()?, &cfg)?;
    let range = PoseRange::of_joint(&ch.rig.joints[1])?;
    let spec = ch.joint_grid(1, &range, resolution)?;
    let data = build_dataset(&ch, 1, &range, &spec, &SelectionConfig::default(), 0)?;
    let lg = spec.box_side();
    let held_out: Vec<_> = [-35.0f64, -65.0, -95.0]
        .iter()
        .map(|d| {
            let pose = [d.to_radians()];
            joint_ground_truth(&ch, 1, &pose, &spec).map(|(gt, _)| (pose, gt))
        })
        .collect::<shallow_sdf::Result<_>>()?;
    println!("N_H  params  train (L_G^2)  band mean (L_G)");
    for hidden in [4, 8, 16, 32] {
        let topo = Topology::new(5, hidden, 1)?;
        let tc = TrainConfig {
            epochs,
            ..Default::default()
        };
        let (model, history) = train_with(&data, topo, NetKind::Sdf, &tc, |_, _, _| {})?;
        let mut mean = 0.0;
        for (pose, gt) in &held_out {
            let values = network_on_grid(&ch, &model, pose, &spec)?;
            mean += joint_band_error(&model, &values, gt, 0.2 * lg)?.mean / lg / held_out.len() as f64;
        }
        println!(
            "{hidden:>3}  {:>6}  {:>13.3e}  {mean:.4}",
            topo.inference_params(),
            history.final_train() / (lg * lg)
        );
    }
    Ok(())
}
