//! First-order Fast Marching for |∇φ| = 1, seeded from a known band.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::band::SdfBand;
use super::grid::GridSdf;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
struct Trial {
    value: f64,
    node: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on value, ties by node index for determinism
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Upwind solution of Σ_k (u - a_k)₊² = h² from the per-axis smallest
/// accepted neighbor magnitudes.
pub(crate) fn eikonal_update(mut a: [f64; 3], n: usize, h: f64) -> f64 {
    let a = &mut a[..n];
    a.sort_by(f64::total_cmp);
    let mut u = a[0] + h;
    if n > 1 && u > a[1] {
        let d = a[0] - a[1];
        u = 0.5 * (a[0] + a[1] + (2.0 * h * h - d * d).max(0.0).sqrt());
        if n > 2 && u > a[2] {
            let s: f64 = a.iter().sum();
            let s2: f64 = a.iter().map(|x| x * x).sum();
            let disc = s * s - 3.0 * (s2 - h * h);
            u = (s + disc.max(0.0).sqrt()) / 3.0;
        }
    }
    u
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Far,
    Trial,
    Done,
}

/// Marches outward from the band through unknown nodes on one side.
/// `side` is +1 (outside) or -1 (inside); magnitudes are stored in `mag`.
fn march_side(band: &SdfBand, side: f64, mag: &mut [f64], claimed: &mut [bool]) {
    let spec = &band.spec;
    let h = spec.spacing;
    let n = spec.len();
    let mut state = vec![State::Far; n];
    // the other side's seeds and previously claimed nodes are walls
    let mut wall = vec![false; n];
    for i in 0..n {
        if band.known[i] && band.values[i] * side >= 0.0 {
            state[i] = State::Done;
            mag[i] = band.values[i].abs();
        } else if band.known[i] || claimed[i] {
            state[i] = State::Done;
            wall[i] = true;
        }
    }
    let accepted = |state: &[State], i: usize| state[i] == State::Done && !wall[i];

    let solve = |node: usize, state: &[State], mag: &[f64]| -> f64 {
        let c = spec.coords(node);
        let mut a = [0.0f64; 3];
        let mut count = 0;
        for axis in 0..3 {
            let mut best = f64::INFINITY;
            for up in [false, true] {
                let mut c2 = c;
                if up {
                    if c[axis] + 1 >= spec.dims[axis] {
                        continue;
                    }
                    c2[axis] += 1;
                } else {
                    if c[axis] == 0 {
                        continue;
                    }
                    c2[axis] -= 1;
                }
                let nb = spec.index(c2[0], c2[1], c2[2]);
                if accepted(state, nb) {
                    best = best.min(mag[nb]);
                }
            }
            if best.is_finite() {
                a[count] = best;
                count += 1;
            }
        }
        eikonal_update(a, count, h)
    };

    let mut heap = BinaryHeap::new();
    for i in 0..n {
        if state[i] == State::Done && accepted(&state, i) {
            for nb in spec.neighbors(i) {
                if state[nb] == State::Far {
                    state[nb] = State::Trial;
                    let v = solve(nb, &state, mag);
                    mag[nb] = v;
                    heap.push(Trial { value: v, node: nb });
                }
            }
        }
    }
    while let Some(Trial { value, node }) = heap.pop() {
        if state[node] == State::Done || value > mag[node] {
            continue;
        }
        state[node] = State::Done;
        claimed[node] = true;
        mag[node] = value;
        for nb in spec.neighbors(node) {
            if state[nb] != State::Done {
                let v = solve(nb, &state, mag);
                if state[nb] == State::Far || v < mag[nb] {
                    state[nb] = State::Trial;
                    mag[nb] = v;
                    heap.push(Trial { value: v, node: nb });
                }
            }
        }
    }
}

/// Fills every unknown node with the first-order upwind distance from the
/// band, outside and inside handled as separate marches.
pub fn fast_march(band: &SdfBand) -> Result<GridSdf> {
    let n = band.spec.len();
    if !band.known.iter().any(|&k| k) {
        return Err(Error::EmptyBand);
    }
    if band
        .values
        .iter()
        .zip(&band.known)
        .any(|(v, &k)| k && !v.is_finite())
    {
        return Err(Error::validation("band contains non-finite values"));
    }
    let mut out_mag = vec![f64::NAN; n];
    let mut in_mag = vec![f64::NAN; n];
    let mut claimed_out = vec![false; n];
    march_side(band, 1.0, &mut out_mag, &mut claimed_out);
    let mut claimed_in = claimed_out.clone();
    march_side(band, -1.0, &mut in_mag, &mut claimed_in);

    let mut values = Vec::with_capacity(n);
    let mut unreached = 0;
    for i in 0..n {
        let v = if band.known[i] {
            band.values[i]
        } else if claimed_out[i] {
            out_mag[i]
        } else if claimed_in[i] {
            -in_mag[i]
        } else {
            unreached += 1;
            f64::NAN
        };
        values.push(v as f32);
    }
    if unreached > 0 {
        return Err(Error::validation(format!("{unreached} grid node(s) unreachable from the band")));
    }
    GridSdf::new(band.spec, values)
}
