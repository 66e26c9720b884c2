//! A box split into two overlapping halves, each backed by its ground-truth
//! grid and boundary labels. The blended field is compared with the exact
//! distance to the whole box, and with a naive minimum over both halves.
//!
//! cargo run --release --example oracle_blend

use shallow_sdf::blend::{AvatarSdf, JointField};
use shallow_sdf::distance_field::{classify_boundary, grid_sdf_from_mesh, GridSpec};
use shallow_sdf::geometry::{box_mesh, signed_distance_brute, Vec3};
use shallow_sdf::rig::{Joint, JointState, Rig};

fn main() -> shallow_sdf::Result<()> {
    let spec = GridSpec::new(Vec3::repeat(-0.5), 3.0 / 47.0, [48, 48, 48])?;
    let body = box_mesh(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0));
    let halves = [
        box_mesh(Vec3::zeros(), Vec3::new(1.6, 1.0, 1.0)),
        box_mesh(Vec3::new(0.4, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0)),
    ];
    let body_mask = grid_sdf_from_mesh(&body, &spec)?.inside_mask();
    let joint = |id| Joint {
        id,
        parent: None,
        center: [0.0; 3],
        axes: vec![[0.0, 0.0, 1.0]],
        range: vec![[0.0, 10.0, 0.0]],
    };
    let rig = Rig::new(vec![joint(0), joint(1)])?;
    let rest = JointState::zeros(&rig);
    let mut fields = Vec::new();
    let mut grids = Vec::new();
    for (i, m) in halves.iter().enumerate() {
        let sdf = grid_sdf_from_mesh(m, &spec)?;
        let labels = classify_boundary(&sdf.inside_mask(), &body_mask, &sdf)?;
        grids.push(sdf.clone());
        fields.push(JointField::grid_at_pose(&rig, &rest, i, sdf, labels)?);
    }
    let avatar = AvatarSdf::new(rig, fields)?;
    let posed = avatar.pose_update(&rest)?;
    let mut worst = [0.0f64; 2];
    for k in 0..=40 {
        let x = Vec3::new(-0.2 + 2.4 * k as f64 / 40.0, 0.5, 0.5);
        let exact = signed_distance_brute(&body, &x);
        let naive = grids.iter().map(|g| g.sample(&x).0).fold(f64::INFINITY, f64::min);
        worst[0] = worst[0].max((posed.query(&x) - exact).abs());
        worst[1] = worst[1].max((naive - exact).abs());
    }
    println!("along the axis: blended max error {:.4}, naive minimum {:.4} (h = {:.4})", worst[0], worst[1], spec.spacing);
    println!("{} queries, {} without a true-boundary joint", avatar.counters().queries(), avatar.counters().s_empty());
    Ok(())
}
