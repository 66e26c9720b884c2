//! Shallow joint-conditioned networks.
//!
//! A network maps a canonical-frame point to a scalar through `N_L - 2`
//! ReLU hidden layers of width `N_H` and a linear output. Every weight and
//! bias is affine in the joint angles `θ` (radians):
//! `ŵ(θ) = w_0 + Σ_α θ_α w_α`. Before the first layer the point is mapped
//! to roughly `[-1, 1]³` with `(X - center) · 2 / L_G`; the raw output is
//! multiplied by `L_G / 2` for distance networks and by 1 for boolean ones.
//!
//! # Parameter layout
//!
//! Transitions `n = 0 .. N_L - 1` have widths `din → dout` with
//! `[3, N_H, ..., N_H, 1]`. The training vector stores, for each transition,
//! the slabs `α = 0 ..= D` in order; a slab is the `dout × din` weight
//! matrix (row-major, one row per output channel) followed by the `dout`
//! biases. Effective parameters use the same per-transition slab layout
//! with a single slab per transition.
//!
//! # Bundle file
//!
//! Little-endian: magic `SDFM`, `u32` joint, `u32` D, `u32` N_L, `u32` N_H,
//! `u32` kind (0 distance, 1 boolean), `f32` L_G, 9 `f32` rotation
//! (row-major) and 3 `f32` translation of the rest-pose canonical frame,
//! 3 `f32` input center, `u32` parameter count, then the `f32` parameters.

mod kernel;
mod train;

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Matrix3;
use rand::Rng;

use crate::distance_field::{read_f32, read_u32};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rig::RigidTransform;

pub use kernel::Real;
pub use train::{evaluate_loss, train, train_bool, train_with, TrainConfig, TrainHistory};

pub(crate) use kernel::{backward_block, forward_block, loss_block, Workspace};

pub const MODEL_MAGIC: [u8; 4] = *b"SDFM";
/// Widest hidden layer accepted; single-point inference keeps activations on
/// the stack.
pub const MAX_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub n_layers: usize,
    pub hidden: usize,
    pub dof: usize,
}

impl Topology {
    pub fn new(n_layers: usize, hidden: usize, dof: usize) -> Result<Self> {
        if n_layers < 3 {
            return Err(Error::validation(format!("need at least 3 layers, got {n_layers}")));
        }
        if hidden == 0 || hidden > MAX_HIDDEN {
            return Err(Error::validation(format!("hidden width {hidden} outside 1..={MAX_HIDDEN}")));
        }
        Ok(Self { n_layers, hidden, dof })
    }

    /// Distance network used for every joint.
    pub fn sdf(dof: usize) -> Self {
        Self { n_layers: 5, hidden: 8, dof }
    }

    /// Boolean companion network.
    pub fn boolean(dof: usize) -> Self {
        Self { n_layers: 4, hidden: 8, dof }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![3];
        d.extend(std::iter::repeat(self.hidden).take(self.n_layers - 2));
        d.push(1);
        d
    }

    pub fn transitions(&self) -> usize {
        self.n_layers - 1
    }

    /// Parameters of one pose-specialized network.
    pub fn inference_params(&self) -> usize {
        inference_param_count(self.n_layers, self.hidden)
    }

    pub fn training_params(&self) -> usize {
        training_param_count(self.n_layers, self.hidden, self.dof)
    }

    fn slab(&self, n: usize) -> usize {
        kernel::slab_len(&self.dims(), n)
    }

    /// Offset of slab `α` of transition `n` in the training vector.
    pub fn param_offset(&self, n: usize, alpha: usize) -> usize {
        let before: usize = (0..n).map(|m| self.slab(m)).sum();
        (self.dof + 1) * before + alpha * self.slab(n)
    }
}

pub fn inference_param_count(n_layers: usize, hidden: usize) -> usize {
    4 * hidden + (n_layers - 3) * (hidden * hidden + hidden) + hidden + 1
}

pub fn training_param_count(n_layers: usize, hidden: usize, dof: usize) -> usize {
    (dof + 1) * inference_param_count(n_layers, hidden)
}

/// Substitute a pose into the affine parameters. `out` is overwritten with
/// the effective parameters.
pub fn effective_into<T: Real>(topo: &Topology, params: &[T], pose: &[T], out: &mut Vec<T>) {
    let dims = topo.dims();
    out.clear();
    for n in 0..topo.transitions() {
        let len = kernel::slab_len(&dims, n);
        let base = topo.param_offset(n, 0);
        let start = out.len();
        out.extend_from_slice(&params[base..base + len]);
        for (a, &t) in pose.iter().enumerate() {
            let off = base + (a + 1) * len;
            for (o, &p) in out[start..].iter_mut().zip(&params[off..off + len]) {
                *o += t * p;
            }
        }
    }
}

/// Fold a gradient over effective parameters back onto the training
/// parameters: `∂/∂w_α = θ_α · ∂/∂ŵ` with `θ_0 = 1`.
pub fn chain_effective<T: Real>(topo: &Topology, pose: &[T], grad_eff: &[T], grad: &mut [T]) {
    let dims = topo.dims();
    let mut e = 0;
    for n in 0..topo.transitions() {
        let len = kernel::slab_len(&dims, n);
        let base = topo.param_offset(n, 0);
        let ge = &grad_eff[e..e + len];
        for (g, &v) in grad[base..base + len].iter_mut().zip(ge) {
            *g += v;
        }
        for (a, &t) in pose.iter().enumerate() {
            let off = base + (a + 1) * len;
            for (g, &v) in grad[off..off + len].iter_mut().zip(ge) {
                *g += t * v;
            }
        }
        e += len;
    }
}

pub fn clamped_loss(pred: f64, s: f64, delta: f64) -> f64 {
    let r = pred.clamp(-delta, delta) - s.clamp(-delta, delta);
    r * r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Sdf,
    Bool,
}

impl NetKind {
    fn code(self) -> u32 {
        match self {
            NetKind::Sdf => 0,
            NetKind::Bool => 1,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(NetKind::Sdf),
            1 => Ok(NetKind::Bool),
            _ => Err(Error::Parse(format!("unknown network kind {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Sdf => "sdf",
            NetKind::Bool => "bool",
        }
    }

    pub fn out_scale(self, box_side: f32) -> f32 {
        match self {
            NetKind::Sdf => 0.5 * box_side,
            NetKind::Bool => 1.0,
        }
    }
}

impl std::str::FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdf" => Ok(NetKind::Sdf),
            "bool" => Ok(NetKind::Bool),
            _ => Err(Error::Parse(format!("network kind must be sdf or bool, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsdfModel {
    pub joint: usize,
    pub topology: Topology,
    pub kind: NetKind,
    /// Canonical box side `L_G`.
    pub box_side: f32,
    /// Rest-pose canonical frame: rotation (row-major) then translation.
    pub canonical: [f32; 12],
    pub center: [f32; 3],
    pub params: Vec<f32>,
}

impl SsdfModel {
    /// Model with all parameters zero.
    pub fn zeros(joint: usize, topology: Topology, kind: NetKind, box_side: f32, center: [f32; 3]) -> Self {
        let mut canonical = [0.0; 12];
        canonical[0] = 1.0;
        canonical[4] = 1.0;
        canonical[8] = 1.0;
        Self {
            joint,
            topology,
            kind,
            box_side,
            canonical,
            center,
            params: vec![0.0; topology.training_params()],
        }
    }

    /// Glorot-uniform constant weights; pose slabs and biases zero.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let topo = self.topology;
        let dims = topo.dims();
        self.params.iter_mut().for_each(|p| *p = 0.0);
        for n in 0..topo.transitions() {
            let (din, dout) = (dims[n], dims[n + 1]);
            let bound = (6.0 / (din + dout) as f64).sqrt();
            let off = topo.param_offset(n, 0);
            for p in &mut self.params[off..off + din * dout] {
                *p = rng.gen_range(-bound..bound) as f32;
            }
        }
    }

    pub fn set_canonical(&mut self, t: &RigidTransform) {
        for r in 0..3 {
            for c in 0..3 {
                self.canonical[3 * r + c] = t.rotation[(r, c)] as f32;
            }
            self.canonical[9 + r] = t.translation[r] as f32;
        }
    }

    pub fn canonical_transform(&self) -> RigidTransform {
        let c = &self.canonical;
        RigidTransform {
            rotation: Matrix3::from_fn(|r, k| c[3 * r + k] as f64),
            translation: Vec3::new(c[9] as f64, c[10] as f64, c[11] as f64),
        }
    }

    fn check_pose(&self, len: usize) -> Result<()> {
        if len != self.topology.dof {
            return Err(Error::Dimension {
                what: "joint pose",
                expected: self.topology.dof,
                got: len,
            });
        }
        Ok(())
    }

    pub fn effective_params(&self, pose: &[f64]) -> Result<EffectiveParams> {
        self.check_pose(pose.len())?;
        let theta: Vec<f32> = pose.iter().map(|&t| t as f32).collect();
        let mut values = Vec::with_capacity(self.topology.inference_params());
        effective_into(&self.topology, &self.params, &theta, &mut values);
        Ok(EffectiveParams {
            dims: self.topology.dims(),
            values,
            center: self.center,
            in_scale: 2.0 / self.box_side,
            out_scale: self.kind.out_scale(self.box_side),
        })
    }

    fn normalized(&self, x: [f64; 3]) -> [f64; 3] {
        let s = 2.0 / self.box_side as f64;
        [0, 1, 2].map(|k| (x[k] - self.center[k] as f64) * s)
    }

    /// Loss and its gradient over every training parameter for one sample,
    /// evaluated in double precision on `params`.
    pub fn loss_and_gradient(&self, params: &[f64], pose: &[f64], x: [f64; 3], s: f64, delta: f64) -> Result<(f64, Vec<f64>)> {
        self.check_pose(pose.len())?;
        if params.len() != self.params.len() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.params.len(),
                got: params.len(),
            });
        }
        let topo = &self.topology;
        let dims = topo.dims();
        let mut eff = Vec::new();
        effective_into(topo, params, pose, &mut eff);
        let mut ws = Workspace::<f64>::new(&dims);
        ws.acts[0] = self.normalized(x).to_vec();
        forward_block(&dims, &eff, 1, &mut ws);
        let scale = self.kind.out_scale(self.box_side) as f64;
        let loss = loss_block(&mut ws, dims.len() - 1, &[s], scale, delta);
        let mut geff = vec![0.0; eff.len()];
        backward_block(&dims, &eff, 1, &mut ws, &mut geff);
        let mut grad = vec![0.0; params.len()];
        chain_effective(topo, pose, &geff, &mut grad);
        Ok((loss, grad))
    }

    /// Gradient of the clamped loss at the model's own parameters.
    pub fn backward(&self, pose: &[f64], x: [f64; 3], s: f64, delta: f64) -> Result<Vec<f64>> {
        let p: Vec<f64> = self.params.iter().map(|&v| v as f64).collect();
        Ok(self.loss_and_gradient(&p, pose, x, s, delta)?.1)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MODEL_MAGIC)?;
        let t = &self.topology;
        for v in [self.joint, t.dof, t.n_layers, t.hidden] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.kind.code().to_le_bytes())?;
        w.write_all(&self.box_side.to_le_bytes())?;
        for v in self.canonical.iter().chain(&self.center) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for v in &self.params {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r).map_err(|e| match e {
            Error::Io(io) => Error::format(path, io.to_string()),
            Error::Parse(m) | Error::Validation(m) => Error::format(path, m),
            e => e,
        })
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MODEL_MAGIC {
            return Err(Error::Parse(format!("bad magic {magic:?}")));
        }
        let joint = read_u32(r)? as usize;
        let dof = read_u32(r)? as usize;
        let n_layers = read_u32(r)? as usize;
        let hidden = read_u32(r)? as usize;
        let kind = NetKind::from_code(read_u32(r)?)?;
        let topology = Topology::new(n_layers, hidden, dof)?;
        let box_side = read_f32(r)?;
        let mut canonical = [0.0; 12];
        for v in &mut canonical {
            *v = read_f32(r)?;
        }
        let center = [read_f32(r)?, read_f32(r)?, read_f32(r)?];
        let count = read_u32(r)? as usize;
        if count != topology.training_params() {
            return Err(Error::Parse(format!(
                "parameter count {count} does not match topology ({})",
                topology.training_params()
            )));
        }
        let params = (0..count).map(|_| read_f32(r)).collect::<std::io::Result<Vec<f32>>>()?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Parse("trailing bytes after parameters".into()));
        }
        if !(box_side > 0.0) {
            return Err(Error::Parse(format!("box side {box_side} must be positive")));
        }
        Ok(Self {
            joint,
            topology,
            kind,
            box_side,
            canonical,
            center,
            params,
        })
    }
}

/// A network specialized to one pose, ready for spatial queries.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveParams {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
    pub center: [f32; 3],
    pub in_scale: f32,
    pub out_scale: f32,
}

const BLOCK: usize = 256;

impl EffectiveParams {
    /// Network value at a canonical-frame point, in world units.
    pub fn forward(&self, x: [f32; 3]) -> f32 {
        let dims = &self.dims;
        let last = dims.len() - 1;
        let mut a = [0f32; MAX_HIDDEN];
        let mut b = [0f32; MAX_HIDDEN];
        for k in 0..3 {
            a[k] = (x[k] - self.center[k]) * self.in_scale;
        }
        let mut off = 0;
        for n in 0..last {
            let (din, dout) = (dims[n], dims[n + 1]);
            let w = &self.values[off..off + dout * din];
            let c = &self.values[off + dout * din..off + dout * din + dout];
            off += dout * din + dout;
            for j in 0..dout {
                let mut v = c[j];
                for i in 0..din {
                    v += w[j * din + i] * a[i];
                }
                b[j] = if n + 1 < last { v.max(0.0) } else { v };
            }
            std::mem::swap(&mut a, &mut b);
        }
        self.out_scale * a[0]
    }

    pub fn forward_batch(&self, xs: &[[f32; 3]]) -> Vec<f32> {
        let mut out = Vec::with_capacity(xs.len());
        let mut ws = Workspace::<f32>::new(&self.dims);
        for chunk in xs.chunks(BLOCK) {
            self.forward_block_into(chunk, &mut ws, &mut out);
        }
        out
    }

    fn forward_block_into(&self, xs: &[[f32; 3]], ws: &mut Workspace<f32>, out: &mut Vec<f32>) {
        let b = xs.len();
        let input = &mut ws.acts[0];
        input.clear();
        input.resize(3 * b, 0.0);
        for (k, x) in xs.iter().enumerate() {
            for d in 0..3 {
                input[d * b + k] = (x[d] - self.center[d]) * self.in_scale;
            }
        }
        forward_block(&self.dims, &self.values, b, ws);
        out.extend(ws.acts[self.dims.len() - 1].iter().map(|&y| self.out_scale * y));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(topo: Topology, seed: u64) -> SsdfModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SsdfModel::zeros(0, topo, NetKind::Sdf, 1.6, [0.1, -0.2, 0.05]);
        for p in &mut m.params {
            *p = rng.gen_range(-0.8..0.8);
        }
        m
    }

    /// Plain re-implementation straight from the definitions: explicit
    /// matrices per layer, affine in the pose, evaluated in f64.
    fn reference_forward(m: &SsdfModel, pose: &[f64], x: [f64; 3]) -> f64 {
        let t = m.topology;
        let dims = t.dims();
        let d = t.dof;
        let mut y: Vec<f64> = (0..3).map(|k| (x[k] - m.center[k] as f64) * 2.0 / m.box_side as f64).collect();
        let mut cursor = 0;
        for n in 0..dims.len() - 1 {
            let (din, dout) = (dims[n], dims[n + 1]);
            let mut mats = Vec::new();
            for _ in 0..=d {
                let w: Vec<Vec<f64>> = (0..dout)
                    .map(|j| (0..din).map(|i| m.params[cursor + j * din + i] as f64).collect())
                    .collect();
                cursor += din * dout;
                let c: Vec<f64> = (0..dout).map(|j| m.params[cursor + j] as f64).collect();
                cursor += dout;
                mats.push((w, c));
            }
            let mut next = vec![0.0; dout];
            for j in 0..dout {
                let mut acc = 0.0;
                for a in 0..=d {
                    let th = if a == 0 { 1.0 } else { pose[a - 1] };
                    let (w, c) = &mats[a];
                    let dot: f64 = w[j].iter().zip(&y).map(|(p, q)| p * q).sum();
                    acc += th * (dot + c[j]);
                }
                next[j] = if n + 1 < dims.len() - 1 { acc.max(0.0) } else { acc };
            }
            y = next;
        }
        assert_eq!(cursor, m.params.len());
        0.5 * m.box_side as f64 * y[0]
    }

    #[test]
    fn table_parameter_counts() {
        let rows = [(5, 4, 61, 183), (5, 8, 185, 555), (5, 16, 625, 1875), (5, 32, 2273, 6819), (7, 32, 4385, 13155)];
        for (nl, nh, pi, pt) in rows {
            assert_eq!(inference_param_count(nl, nh), pi);
            assert_eq!(training_param_count(nl, nh, 2), pt);
            let t = Topology::new(nl, nh, 2).unwrap();
            let eff = random_model(t, 1).effective_params(&[0.1, 0.2]).unwrap();
            assert_eq!(eff.values.len(), pi);
        }
    }

    #[test]
    fn effective_params_at_zero_and_unit_pose() {
        let m = random_model(Topology::new(5, 8, 1).unwrap(), 2);
        let zero = m.effective_params(&[0.0]).unwrap();
        let one = m.effective_params(&[1.0]).unwrap();
        let t = m.topology;
        let dims = t.dims();
        let mut e = 0;
        for n in 0..t.transitions() {
            let len = dims[n + 1] * dims[n] + dims[n + 1];
            let w0 = &m.params[t.param_offset(n, 0)..][..len];
            let w1 = &m.params[t.param_offset(n, 1)..][..len];
            for k in 0..len {
                assert_eq!(zero.values[e + k], w0[k]);
                assert_eq!(one.values[e + k], w0[k] + w1[k]);
            }
            e += len;
        }
        assert!(matches!(m.effective_params(&[0.0, 1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn effective_params_are_bitwise_stable() {
        let m = random_model(Topology::sdf(2), 3);
        assert_eq!(m.effective_params(&[0.3, -1.1]).unwrap(), m.effective_params(&[0.3, -1.1]).unwrap());
    }

    #[test]
    fn constant_network() {
        let mut m = SsdfModel::zeros(0, Topology::sdf(1), NetKind::Bool, 2.0, [0.0; 3]);
        // output bias of the constant slab
        let last = m.topology.param_offset(m.topology.transitions() - 1, 0);
        m.params[last + 8] = 0.37;
        let eff = m.effective_params(&[0.7]).unwrap();
        for x in [[0.0, 0.0, 0.0], [5.0, -3.0, 1.0]] {
            assert_eq!(eff.forward(x), 0.37);
        }
    }

    #[test]
    fn single_channel_passthrough() {
        // first hidden channel copies X1, then each layer passes channel 0 on
        let topo = Topology::new(4, 4, 1).unwrap();
        let mut m = SsdfModel::zeros(0, topo, NetKind::Bool, 2.0, [0.0; 3]);
        for n in 0..topo.transitions() {
            m.params[topo.param_offset(n, 0)] = 1.0;
        }
        let eff = m.effective_params(&[0.0]).unwrap();
        for x in [-0.7f32, 0.0, 0.4] {
            assert_eq!(eff.forward([x, 0.3, -0.2]), x.max(0.0));
        }
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (seed, topo) in [Topology::sdf(1), Topology::sdf(2), Topology::boolean(3), Topology::new(6, 16, 2).unwrap()]
            .into_iter()
            .enumerate()
        {
            let m = random_model(topo, seed as u64);
            for _ in 0..50 {
                let pose: Vec<f64> = (0..topo.dof).map(|_| rng.gen_range(-2.0..0.5)).collect();
                let eff = m.effective_params(&pose).unwrap();
                let x = [0, 1, 2].map(|_| rng.gen_range(-0.8..0.8f32));
                let want = reference_forward(&m, &pose, x.map(|v| v as f64));
                let got = eff.forward(x) as f64;
                // f32 evaluation against f64; scaled to the output magnitude
                assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0) * 4.0, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn batch_matches_loop() {
        let m = random_model(Topology::sdf(2), 5);
        let eff = m.effective_params(&[-0.4, 0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<[f32; 3]> = (0..4096).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0f32))).collect();
        let batch = eff.forward_batch(&xs);
        for (x, b) in xs.iter().zip(&batch) {
            assert!((eff.forward(*x) - b).abs() <= 1e-6);
        }
        assert_eq!(eff.forward_batch(&xs[..1])[0], eff.forward(xs[0]));
        let mut joined = eff.forward_batch(&xs[..1000]);
        joined.extend(eff.forward_batch(&xs[1000..]));
        assert_eq!(joined, batch);
    }

    #[test]
    fn clamped_loss_examples() {
        assert_eq!(clamped_loss(0.3, 0.3, 0.2), 0.0);
        assert_eq!(clamped_loss(0.4, 0.6, 0.2), 0.0);
        assert!((clamped_loss(0.1, -0.1, 0.2) - 0.04).abs() < 1e-15);
    }

    fn check_fd(m: &SsdfModel, pose: &[f64], x: [f64; 3], s: f64, delta: f64) -> usize {
        let p: Vec<f64> = m.params.iter().map(|&v| v as f64).collect();
        let (_, g) = m.loss_and_gradient(&p, pose, x, s, delta).unwrap();
        let step = 1e-4;
        let mut checked = 0;
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k] = p[k] + step;
            let lp = m.loss_and_gradient(&q, pose, x, s, delta).unwrap().0;
            q[k] = p[k] - step;
            let lm = m.loss_and_gradient(&q, pose, x, s, delta).unwrap().0;
            let fd = (lp - lm) / (2.0 * step);
            if g[k].abs() > 1e-6 {
                let rel = (fd - g[k]).abs() / g[k].abs().max(fd.abs());
                assert!(rel <= 1e-4, "param {k}: fd {fd} vs {}", g[k]);
                checked += 1;
            }
        }
        checked
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut total = 0;
        for seed in 0..20 {
            let topo = Topology::new(rng.gen_range(3..6), rng.gen_range(2..9), rng.gen_range(1..4)).unwrap();
            let m = random_model(topo, 100 + seed);
            let pose: Vec<f64> = (0..topo.dof).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let x = [0, 1, 2].map(|_| rng.gen_range(-0.7..0.7));
            let s = rng.gen_range(-0.1..0.1);
            total += check_fd(&m, &pose, x, s, 10.0);
        }
        assert!(total > 100);
    }

    #[test]
    fn saturated_loss_has_zero_gradient() {
        let mut m = SsdfModel::zeros(0, Topology::sdf(1), NetKind::Sdf, 2.0, [0.0; 3]);
        let last_bias = m.topology.param_offset(3, 0) + 8;
        m.params[last_bias] = 3.0;
        let g = m.backward(&[0.5], [0.1, 0.2, 0.3], 5.0, 0.2).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_pose_leaves_pose_slabs_untouched() {
        let m = random_model(Topology::sdf(2), 8);
        let g = m.backward(&[0.0, 0.0], [0.2, -0.1, 0.3], 0.05, 10.0).unwrap();
        let t = m.topology;
        let dims = t.dims();
        for n in 0..t.transitions() {
            let len = dims[n + 1] * dims[n] + dims[n + 1];
            for a in 1..=2 {
                assert!(g[t.param_offset(n, a)..][..len].iter().all(|&v| v == 0.0));
            }
            assert!(g[t.param_offset(n, 0)..][..len].iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn bundle_round_trip() {
        let mut m = random_model(Topology::boolean(2), 9);
        m.joint = 3;
        m.kind = NetKind::Bool;
        m.set_canonical(&RigidTransform::rotation_about(&Vec3::new(1.0, 0.0, 0.0), &Vec3::z(), 0.3));
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        let back = SsdfModel::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        bytes.push(0);
        assert!(SsdfModel::read_from(&mut bytes.as_slice()).is_err());
        let t = back.canonical_transform();
        assert!(t.is_rigid(1e-6));
    }

    proptest! {
        #[test]
        fn affinity(seed in 0u64..1000, a in prop::collection::vec(-2.0f64..2.0, 2), b in prop::collection::vec(-2.0f64..2.0, 2)) {
            let m = random_model(Topology::sdf(2), seed);
            let ea = m.effective_params(&a).unwrap();
            let eb = m.effective_params(&b).unwrap();
            let e0 = m.effective_params(&[0.0, 0.0]).unwrap();
            let eab = m.effective_params(&[a[0] + b[0], a[1] + b[1]]).unwrap();
            for k in 0..e0.values.len() {
                let lhs = ea.values[k] + eb.values[k] - e0.values[k];
                prop_assert!((lhs - eab.values[k]).abs() <= 1e-6 * (1.0 + eab.values[k].abs()) * 4.0);
            }
        }

        #[test]
        fn piecewise_linear_along_segments(seed in 0u64..1000, t in 0.0f64..1.0) {
            let m = random_model(Topology::sdf(1), seed);
            let pose = [0.4];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p0 = [0, 1, 2].map(|_| rng.gen_range(-0.5..0.5));
            let dir = [0, 1, 2].map(|_| rng.gen_range(-0.1..0.1));
            let point = |u: f64| [0, 1, 2].map(|k| p0[k] + u * dir[k]);
            let us = [t, t + 0.01, t + 0.02];
            let pattern = activation_pattern(&m, &pose, point(us[0]));
            for u in [t + 0.005, us[1], t + 0.015, us[2]] {
                prop_assume!(activation_pattern(&m, &pose, point(u)) == pattern);
            }
            let [a, b, c] = us.map(|u| reference_forward(&m, &pose, point(u)));
            prop_assert!((a - 2.0 * b + c).abs() <= 1e-6);
        }
    }

    fn activation_pattern(m: &SsdfModel, pose: &[f64], x: [f64; 3]) -> Vec<bool> {
        let p: Vec<f64> = m.params.iter().map(|&v| v as f64).collect();
        let mut eff = Vec::new();
        effective_into(&m.topology, &p, pose, &mut eff);
        let dims = m.topology.dims();
        let mut ws = Workspace::<f64>::new(&dims);
        ws.acts[0] = m.normalized(x).to_vec();
        forward_block(&dims, &eff, 1, &mut ws);
        ws.acts[1..dims.len() - 1].iter().flatten().map(|&v| v > 0.0).collect()
    }
}
