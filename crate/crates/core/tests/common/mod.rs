//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use distgan::nn::{Activation, LayerSpec, NetworkSpec};
use distgan::protocol::SelectionPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Activation written out from its textbook definition.
pub fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::LeakyRelu { slope } => {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

/// Forward pass of one input row. Parameters are read as
/// `[W_0 (out x in, row-major), b_0, W_1, b_1, ...]`.
pub fn naive_forward(spec: &NetworkSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut off = 0;
    for layer in spec.layers() {
        match *layer {
            LayerSpec::Dense { in_dim, out_dim } => {
                let mut y = vec![0.0; out_dim];
                for (o, yo) in y.iter_mut().enumerate() {
                    let mut s = params[off + in_dim * out_dim + o];
                    for i in 0..in_dim {
                        s += params[off + o * in_dim + i] * h[i];
                    }
                    *yo = s;
                }
                off += in_dim * out_dim + out_dim;
                h = y;
            }
            LayerSpec::Activation(a) => h = h.iter().map(|&v| act(a, v)).collect(),
        }
    }
    assert_eq!(off, params.len());
    h
}

/// `sum_r weights[r] . f(x_r)` with the naive forward.
pub fn weighted_output(spec: &NetworkSpec, params: &[f64], xs: &[Vec<f64>], upstream: &[Vec<f64>]) -> f64 {
    xs.iter()
        .zip(upstream)
        .map(|(x, u)| naive_forward(spec, params, x).iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Central difference of `f` at `x0`, or `None` when the one-sided slopes
/// disagree (a ReLU kink lies inside `[x0 - h, x0 + h]`).
pub fn central_diff(f: impl Fn(f64) -> f64, x0: f64, h: f64) -> Option<f64> {
    let (plus, mid, minus) = (f(x0 + h), f(x0), f(x0 - h));
    let right = (plus - mid) / h;
    let left = (mid - minus) / h;
    if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1e-3) {
        return None;
    }
    Some((plus - minus) / (2.0 * h))
}

/// Central finite differences of `weighted_output` in every parameter.
pub fn fd_param_grad(
    spec: &NetworkSpec,
    params: &[f64],
    xs: &[Vec<f64>],
    upstream: &[Vec<f64>],
    h: f64,
) -> Vec<Option<f64>> {
    (0..params.len())
        .map(|k| {
            central_diff(
                |t| {
                    let mut p = params.to_vec();
                    p[k] = t;
                    weighted_output(spec, &p, xs, upstream)
                },
                params[k],
                h,
            )
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Smallest k with k >= f * n, allowing for representation error in `f * n`.
pub fn ceil_count(f: f64, n: usize) -> usize {
    let mut k = 0;
    while (k as f64) < f * n as f64 - 1e-9 {
        k += 1;
    }
    k.min(n)
}

/// Top-k by magnitude via repeated linear scans; ties to the lower index.
pub fn oracle_select(values: &[f64], fraction: f64) -> Vec<(usize, f64)> {
    let k = ceil_count(fraction, values.len());
    let mut taken = vec![false; values.len()];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..values.len() {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if values[i].abs() > values[b].abs() => best = Some(i),
                _ => {}
            }
        }
        taken[best.unwrap()] = true;
    }
    (0..values.len()).filter(|&i| taken[i]).map(|i| (i, values[i])).collect()
}

/// Per-index reference for every policy. `uploads` are `(user_id, entries)`.
/// For random selection the chosen index set is supplied by the caller.
pub fn oracle_aggregate(
    policy: SelectionPolicy,
    uploads: &[(usize, Vec<(usize, f64)>)],
    n: usize,
    random_keep: Option<&[usize]>,
) -> Vec<f64> {
    let mut order: Vec<&(usize, Vec<(usize, f64)>)> = uploads.iter().collect();
    order.sort_by_key(|u| u.0);
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let contribs: Vec<f64> = order
            .iter()
            .filter_map(|(_, e)| e.iter().find(|(j, _)| *j == i).map(|&(_, v)| v))
            .collect();
        if contribs.is_empty() {
            continue;
        }
        let mut mean = 0.0;
        for v in &contribs {
            mean += v;
        }
        mean /= contribs.len() as f64;
        *slot = match policy {
            SelectionPolicy::MaxMagnitude => {
                let mut best = contribs[0];
                for &v in &contribs[1..] {
                    if v.abs() > best.abs() {
                        best = v;
                    }
                }
                best
            }
            SelectionPolicy::Threshold { tau } => {
                if mean.abs() > tau {
                    mean
                } else {
                    0.0
                }
            }
            SelectionPolicy::RandomFraction { .. } => {
                if random_keep.expect("keep set").contains(&i) {
                    mean
                } else {
                    0.0
                }
            }
        };
    }
    out
}

/// Random sparse uploads for `users` users over `n` coordinates.
pub fn random_uploads(rng: &mut ChaCha8Rng, users: usize, n: usize) -> Vec<(usize, Vec<(usize, f64)>)> {
    (0..users)
        .map(|u| {
            let mut entries = Vec::new();
            for i in 0..n {
                if !rng.random_bool(0.6) {
                    continue;
                }
                // Coarse grid values make exact magnitude ties common.
                let v = if rng.random_bool(0.3) {
                    f64::from(rng.random_range(-3i32..=3)) * 0.25
                } else {
                    rng.random_range(-2.0..2.0)
                };
                entries.push((i, v));
            }
            (u, entries)
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
