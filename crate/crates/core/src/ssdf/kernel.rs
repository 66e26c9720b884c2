//! Batched forward and reverse passes over effective parameters.
//!
//! Activations are stored feature-major (`a[j * b + k]` for feature `j` of
//! sample `k`) so the inner loops run over the batch and vectorize.

use std::ops::{AddAssign, MulAssign};

use num_traits::Float;

pub trait Real: Float + AddAssign + MulAssign + Send + Sync + std::fmt::Debug + 'static {}
impl Real for f32 {}
impl Real for f64 {}

/// Layer widths `[3, H, ..., H, 1]`.
pub(crate) fn slab_len(dims: &[usize], n: usize) -> usize {
    dims[n + 1] * dims[n] + dims[n + 1]
}

/// Scratch space for one block of samples.
#[derive(Debug, Clone, Default)]
pub(crate) struct Workspace<T> {
    pub acts: Vec<Vec<T>>,
    pub delta: Vec<T>,
    pub delta_prev: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new(dims: &[usize]) -> Self {
        Self {
            acts: vec![Vec::new(); dims.len()],
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }
}

/// Forward pass of `b` samples whose normalized inputs are already in
/// `ws.acts[0]` (feature-major). Leaves every layer's activations in `ws`;
/// the raw network outputs end up in `ws.acts[last]`.
pub(crate) fn forward_block<T: Real>(dims: &[usize], eff: &[T], b: usize, ws: &mut Workspace<T>) {
    let last = dims.len() - 1;
    let mut off = 0;
    for n in 0..last {
        let (din, dout) = (dims[n], dims[n + 1]);
        let w = &eff[off..off + dout * din];
        let c = &eff[off + dout * din..off + dout * din + dout];
        off += slab_len(dims, n);
        let (lo, hi) = ws.acts.split_at_mut(n + 1);
        let input = &lo[n];
        let out = &mut hi[0];
        out.clear();
        out.resize(dout * b, T::zero());
        for j in 0..dout {
            let row = &mut out[j * b..(j + 1) * b];
            row.iter_mut().for_each(|v| *v = c[j]);
            for i in 0..din {
                let wji = w[j * din + i];
                let col = &input[i * b..(i + 1) * b];
                for (o, &x) in row.iter_mut().zip(col) {
                    *o += wji * x;
                }
            }
            if n + 1 < last {
                row.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
        }
    }
}

/// Reverse pass after [`forward_block`]. `ws.delta` must hold dL/d(output)
/// per sample; gradients with respect to the effective parameters are added
/// into `grad`.
pub(crate) fn backward_block<T: Real>(dims: &[usize], eff: &[T], b: usize, ws: &mut Workspace<T>, grad: &mut [T]) {
    let last = dims.len() - 1;
    let mut offs = Vec::with_capacity(last);
    let mut off = 0;
    for n in 0..last {
        offs.push(off);
        off += slab_len(dims, n);
    }
    for n in (0..last).rev() {
        let (din, dout) = (dims[n], dims[n + 1]);
        let o = offs[n];
        let input = &ws.acts[n];
        let g = &ws.delta;
        for j in 0..dout {
            let gj = &g[j * b..(j + 1) * b];
            let mut cb = T::zero();
            for &v in gj {
                cb += v;
            }
            grad[o + dout * din + j] += cb;
            for i in 0..din {
                let col = &input[i * b..(i + 1) * b];
                let mut s = T::zero();
                for (&gv, &x) in gj.iter().zip(col) {
                    s += gv * x;
                }
                grad[o + j * din + i] += s;
            }
        }
        if n == 0 {
            break;
        }
        // propagate to the previous layer through the ReLU mask
        let w = &eff[o..o + dout * din];
        ws.delta_prev.clear();
        ws.delta_prev.resize(din * b, T::zero());
        for j in 0..dout {
            let gj = &ws.delta[j * b..(j + 1) * b];
            for i in 0..din {
                let wji = w[j * din + i];
                let dst = &mut ws.delta_prev[i * b..(i + 1) * b];
                for (d, &gv) in dst.iter_mut().zip(gj) {
                    *d += wji * gv;
                }
            }
        }
        for (d, &a) in ws.delta_prev.iter_mut().zip(&ws.acts[n]) {
            if a <= T::zero() {
                *d = T::zero();
            }
        }
        std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
    }
}

#[inline]
pub(crate) fn clamp<T: Real>(v: T, delta: T) -> T {
    v.max(-delta).min(delta)
}

/// Clamped squared error of `scale · y` against `target`; writes dL/dy into
/// `ws.delta` and returns the summed loss.
pub(crate) fn loss_block<T: Real>(ws: &mut Workspace<T>, last: usize, targets: &[T], scale: T, delta: T) -> T {
    let y = &ws.acts[last];
    ws.delta.clear();
    ws.delta.resize(y.len(), T::zero());
    let two = T::one() + T::one();
    let mut total = T::zero();
    for ((d, &yk), &s) in ws.delta.iter_mut().zip(y.iter()).zip(targets) {
        let pred = scale * yk;
        let r = clamp(pred, delta) - clamp(s, delta);
        total += r * r;
        if pred.abs() < delta {
            *d = two * r * scale;
        }
    }
    total
}
