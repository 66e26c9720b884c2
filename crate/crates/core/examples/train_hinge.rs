//! Trains the capsule hinge distance network and reports its error at poses
//! between the training samples.
//!
//! cargo run --release --example train_hinge -- [epochs] [hidden] [resolution]

use shallow_sdf::dataset::{build_dataset, Character, PartitionConfig, PoseRange, SelectionConfig};
use shallow_sdf::evaluate::{joint_band_error, joint_ground_truth, network_on_grid};
use shallow_sdf::shapes::HingedCapsule;
use shallow_sdf::ssdf::{train_with, NetKind, Topology, TrainConfig};

fn main() -> shallow_sdf::Result<()> {
    let a: Vec<usize> = std::env::args().skip(1).map(|v| v.parse().expect("integer argument")).collect();
    let epochs = a.first().copied().unwrap_or(1000);
    let hidden = a.get(1).copied().unwrap_or(8);
    let resolution = a.get(2).copied().unwrap_or(32);
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
    let tc = TrainConfig {
        epochs,
        ..Default::default()
    };
    let every = (epochs / 10).max(1);
    let start = std::time::Instant::now();
    let (model, history) = train_with(&data, Topology::new(5, hidden, 1)?, NetKind::Sdf, &tc, |e, t, v| {
        if e % every == 0 {
            println!("epoch {e:>6}: train {:.3e} validation {:.3e} L_G^2", t / (lg * lg), v / (lg * lg));
        }
    })?;
    println!("{} samples, {epochs} epochs in {:?}", data.len(), start.elapsed());
    std::fs::write("train_hinge_loss.csv", history.to_csv())?;
    for deg in [-35.0f64, -65.0, -95.0] {
        let pose = [deg.to_radians()];
        let (gt, _) = joint_ground_truth(&ch, 1, &pose, &spec)?;
        let values = network_on_grid(&ch, &model, &pose, &spec)?;
        let e = joint_band_error(&model, &values, &gt, 0.2 * lg)?;
        println!("{deg:>6} deg: band mean {:.4} L_G, max {:.4} L_G", e.mean / lg, e.max / lg);
    }
    Ok(())
}
