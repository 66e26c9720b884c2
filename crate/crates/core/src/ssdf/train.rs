//! Mini-batch Adam on the clamped loss.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::kernel::{backward_block, clamp, forward_block, loss_block, Workspace};
use super::{chain_effective, effective_into, NetKind, SsdfModel, Topology};
use crate::dataset::{Dataset, TrainingSample};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Clamp width as a fraction of `L_G` (distance networks only; boolean
    /// networks always clamp at 1).
    pub delta_factor: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10_000,
            batch_size: 1024,
            delta_factor: 0.2,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(self.delta_factor > 0.0) {
            return Err(Error::validation("clamp width must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::validation("validation fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean clamped loss per epoch, in squared world units. Validation entries
/// are NaN when the split leaves no validation samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

impl TrainHistory {
    pub fn final_train(&self) -> f64 {
        self.train.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_validation(&self) -> f64 {
        self.validation.last().copied().unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,validation_loss\n");
        for (e, (t, v)) in self.train.iter().zip(&self.validation).enumerate() {
            s.push_str(&format!("{},{:e},{:e}\n", e + 1, t, v));
        }
        s
    }
}

pub fn train(data: &Dataset, topology: Topology, cfg: &TrainConfig) -> Result<(SsdfModel, TrainHistory)> {
    train_with(data, topology, NetKind::Sdf, cfg, |_, _, _| {})
}

pub fn train_bool(data: &Dataset, topology: Topology, cfg: &TrainConfig) -> Result<(SsdfModel, TrainHistory)> {
    if let Some(s) = data.samples.iter().find(|s| s.label != 1.0 && s.label != -1.0) {
        return Err(Error::validation(format!("label {} is not +1 or -1", s.label)));
    }
    train_with(data, topology, NetKind::Bool, cfg, |_, _, _| {})
}

/// Fresh initializations tried after the output collapses to a constant.
const MAX_RESTARTS: usize = 4;

/// Samples of one pose inside a batch, with the pose they share.
struct Run<'a> {
    pose: &'a [f32],
    items: Vec<&'a TrainingSample>,
}

fn group_by_pose<'a>(ids: &[usize], data: &'a [TrainingSample], pose_of: &[usize], poses: &'a [Vec<f32>]) -> Vec<Run<'a>> {
    let mut sorted: Vec<usize> = ids.to_vec();
    sorted.sort_by_key(|&i| (pose_of[i], i));
    let mut runs: Vec<Run> = Vec::new();
    for i in sorted {
        let p = pose_of[i];
        match runs.last_mut() {
            Some(r) if std::ptr::eq(r.pose, poses[p].as_slice()) => r.items.push(&data[i]),
            _ => runs.push(Run {
                pose: &poses[p],
                items: vec![&data[i]],
            }),
        }
    }
    runs
}

struct Pass {
    dims: Vec<usize>,
    ws: Workspace<f32>,
    eff: Vec<f32>,
    geff: Vec<f32>,
    targets: Vec<f32>,
    center: [f32; 3],
    in_scale: f32,
    out_scale: f32,
    delta: f32,
    /// Set when a run produces two different outputs.
    output_varies: bool,
}

impl Pass {
    /// Summed loss of one run; adds the parameter gradient into `grad` when
    /// given.
    fn run(&mut self, topo: &Topology, params: &[f32], run: &Run, grad: Option<&mut [f32]>, label: bool) -> f32 {
        let b = run.items.len();
        effective_into(topo, params, run.pose, &mut self.eff);
        let input = &mut self.ws.acts[0];
        input.clear();
        input.resize(3 * b, 0.0);
        self.targets.clear();
        for (k, s) in run.items.iter().enumerate() {
            for d in 0..3 {
                input[d * b + k] = (s.x[d] - self.center[d]) * self.in_scale;
            }
            self.targets.push(if label { s.label } else { s.s });
        }
        forward_block(&self.dims, &self.eff, b, &mut self.ws);
        let last = self.dims.len() - 1;
        let y = &self.ws.acts[last];
        if y.iter().any(|&v| v != y[0]) {
            self.output_varies = true;
        }
        let loss = loss_block(&mut self.ws, last, &self.targets, self.out_scale, self.delta);
        if let Some(grad) = grad {
            self.geff.clear();
            self.geff.resize(self.eff.len(), 0.0);
            backward_block(&self.dims, &self.eff, b, &mut self.ws, &mut self.geff);
            chain_effective(topo, run.pose, &self.geff, grad);
        }
        loss
    }
}

/// Center of the samples' bounding box.
fn sample_center(samples: &[TrainingSample]) -> [f32; 3] {
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for s in samples {
        for k in 0..3 {
            lo[k] = lo[k].min(s.x[k]);
            hi[k] = hi[k].max(s.x[k]);
        }
    }
    [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]))
}

/// Train a network of the given kind. `on_epoch(epoch, train, validation)`
/// is called after every epoch.
///
/// If the output is constant within every batch of an epoch although the
/// targets are not,
/// training starts over from a fresh initialization (up to
/// `MAX_RESTARTS` times) and epochs are reported again from 1.
pub fn train_with(
    data: &Dataset,
    topology: Topology,
    kind: NetKind,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(SsdfModel, TrainHistory)> {
    fit(data, topology, kind, cfg, |_, m, rng| m.init(rng), on_epoch)
}

/// `init(attempt, model, rng)` sets the starting parameters of each attempt.
fn fit(
    data: &Dataset,
    topology: Topology,
    kind: NetKind,
    cfg: &TrainConfig,
    init: impl Fn(usize, &mut SsdfModel, &mut rand_chacha::ChaCha8Rng),
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(SsdfModel, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    if topology.dof != data.dof {
        return Err(Error::Dimension {
            what: "network pose inputs",
            expected: data.dof,
            got: topology.dof,
        });
    }
    if !(data.box_side > 0.0) {
        return Err(Error::validation("dataset box side must be positive"));
    }

    let mut poses: Vec<Vec<f32>> = Vec::new();
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    let pose_of: Vec<usize> = data
        .samples
        .iter()
        .map(|s| {
            let key: Vec<u32> = s.pose.iter().map(|v| v.to_bits()).collect();
            *index.entry(key).or_insert_with(|| {
                poses.push(s.pose.clone());
                poses.len() - 1
            })
        })
        .collect();

    let center = sample_center(&data.samples);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(cfg.seed, "train/split"));
    let n_val = (cfg.validation_fraction * data.len() as f64).round() as usize;
    let n_val = n_val.min(data.len() - 1);
    let (val_ids, train_ids) = order.split_at(n_val);
    let val_runs = group_by_pose(val_ids, &data.samples, &pose_of, &poses);

    let label = kind == NetKind::Bool;
    let delta = match kind {
        NetKind::Sdf => (cfg.delta_factor * data.box_side as f64) as f32,
        NetKind::Bool => 1.0,
    };
    let target = |i: &usize| {
        let s = &data.samples[*i];
        clamp(if label { s.label } else { s.s }, delta).to_bits()
    };
    let varied = train_ids.iter().any(|i| target(i) != target(&train_ids[0]));
    let dims = topology.dims();
    let mut pass = Pass {
        ws: Workspace::new(&dims),
        dims,
        eff: Vec::new(),
        geff: Vec::new(),
        targets: Vec::new(),
        center,
        in_scale: 2.0 / data.box_side,
        out_scale: kind.out_scale(data.box_side),
        delta,
        output_varies: false,
    };

    for attempt in 0..=MAX_RESTARTS {
        let role = if attempt == 0 {
            "train/init".to_string()
        } else {
            format!("train/init/{attempt}")
        };
        let mut model = SsdfModel::zeros(data.joint, topology, kind, data.box_side, center);
        init(attempt, &mut model, &mut seed::rng(cfg.seed, &role));
        let mut train_ids = train_ids.to_vec();
        let n = model.params.len();
        let mut grad = vec![0f32; n];
        let mut m1 = vec![0f32; n];
        let mut m2 = vec![0f32; n];
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let mut step = 0i32;
        let mut shuffle = seed::rng(cfg.seed, "train/shuffle");
        let mut history = TrainHistory::default();
        let mut collapsed = false;

        for epoch in 1..=cfg.epochs {
            train_ids.shuffle(&mut shuffle);
            pass.output_varies = false;
            let mut epoch_loss = 0f64;
            for batch in train_ids.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut batch_loss = 0f64;
                for run in group_by_pose(batch, &data.samples, &pose_of, &poses) {
                    batch_loss += pass.run(&topology, &model.params, &run, Some(&mut grad), label) as f64;
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("batch loss {batch_loss} after {step} steps"),
                    });
                }
                epoch_loss += batch_loss;

                step += 1;
                let inv = 1.0 / batch.len() as f32;
                let c1 = (1.0 - b1.powi(step)) as f32;
                let c2 = (1.0 - b2.powi(step)) as f32;
                let (b1f, b2f) = (b1 as f32, b2 as f32);
                let lr = cfg.learning_rate as f32;
                let eps = cfg.eps as f32;
                for k in 0..n {
                    let g = grad[k] * inv;
                    m1[k] = b1f * m1[k] + (1.0 - b1f) * g;
                    m2[k] = b2f * m2[k] + (1.0 - b2f) * g * g;
                    let mh = m1[k] / c1;
                    let vh = m2[k] / c2;
                    model.params[k] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite parameter after update".into(),
                });
            }
            // within every batch the output ignores the input although the
            // targets differ: the ReLUs feeding the output are dead
            if varied && !pass.output_varies {
                collapsed = true;
                break;
            }
            let train_loss = epoch_loss / train_ids.len() as f64;
            let val_loss = if val_ids.is_empty() {
                f64::NAN
            } else {
                let total: f64 = val_runs
                    .iter()
                    .map(|r| pass.run(&topology, &model.params, r, None, label) as f64)
                    .sum();
                total / val_ids.len() as f64
            };
            history.train.push(train_loss);
            history.validation.push(val_loss);
            on_epoch(epoch, train_loss, val_loss);
        }
        if !collapsed {
            return Ok((model, history));
        }
    }
    Err(Error::Diverged {
        epoch: 0,
        detail: format!("output collapsed to a constant in {} initializations", MAX_RESTARTS + 1),
    })
}

/// Mean clamped loss of a trained model over a dataset.
pub fn evaluate_loss(model: &SsdfModel, data: &Dataset, delta: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in &data.samples {
        let pose: Vec<f64> = s.pose.iter().map(|&v| v as f64).collect();
        let eff = model.effective_params(&pose)?;
        let target = if model.kind == NetKind::Bool { s.label } else { s.s };
        total += super::clamped_loss(eff.forward(s.x) as f64, target as f64, delta);
    }
    Ok(total / data.len().max(1) as f64)
}
