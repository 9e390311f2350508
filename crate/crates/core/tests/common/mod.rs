//! Test-side oracles and random inputs. Nothing here calls into the code it checks.
#![allow(dead_code)]

use rand::Rng;
use ssc_core::grid::{CameraModel, Dims, SemanticGrid, UNKNOWN};

pub const FREE: u8 = 0;

pub fn random_labels(rng: &mut impl Rng, n: usize, classes: u8, unknown_rate: f64) -> Vec<u8> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(unknown_rate) {
                UNKNOWN
            } else {
                rng.gen_range(0..classes)
            }
        })
        .collect()
}

/// Random grid whose every dimension is a multiple of `s`, at most `max_blocks·s` long.
pub fn random_grid(
    rng: &mut impl Rng,
    s: usize,
    max_blocks: usize,
    classes: u8,
    unknown_rate: f64,
) -> SemanticGrid {
    let dims = Dims::new(
        s * rng.gen_range(1..=max_blocks),
        s * rng.gen_range(1..=max_blocks),
        s * rng.gen_range(1..=max_blocks),
    );
    let labels = random_labels(rng, dims.len(), classes, unknown_rate);
    SemanticGrid::new(dims, [0.0; 3], 0.5, classes, labels).unwrap()
}

/// A camera some distance from the grid centre, aimed near it so part of the grid is visible.
pub fn camera_near(
    rng: &mut impl Rng,
    grid: &SemanticGrid,
    width: u32,
    height: u32,
) -> CameraModel {
    let d = grid.dims();
    let s = grid.voxel_size() as f64;
    let o = grid.origin();
    let centre = [
        o[0] as f64 + 0.5 * d.x as f64 * s,
        o[1] as f64 + 0.5 * d.y as f64 * s,
        o[2] as f64 + 0.5 * d.z as f64 * s,
    ];
    let extent = (d.x.max(d.y).max(d.z) as f64) * s;
    let r = extent * rng.gen_range(1.2..3.0);
    let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let eye = [
        centre[0] + r * az.cos(),
        centre[1] + r * az.sin(),
        centre[2] + rng.gen_range(0.2..1.5) * extent,
    ];
    let jitter = 0.3 * extent;
    let target = [
        centre[0] + rng.gen_range(-jitter..jitter),
        centre[1] + rng.gen_range(-jitter..jitter),
        centre[2] + rng.gen_range(-jitter..jitter),
    ];
    let f = rng.gen_range(0.6..1.4) * width as f64;
    let intr = [
        f,
        f,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
    ];
    CameraModel::look_at(eye, target, intr, width, height).unwrap()
}

fn block_of(d: Dims, s: usize, v: usize) -> usize {
    let i = v % d.x;
    let j = (v / d.x) % d.y;
    let k = v / (d.x * d.y);
    let (bx, by) = (d.x / s, d.y / s);
    i / s + bx * (j / s + by * (k / s))
}

fn pair(a: u8, b: u8) -> usize {
    match (a == FREE, b == FREE) {
        (true, true) => 0,
        (true, false) | (false, true) => 1,
        (false, false) if a == b => 2,
        _ => 3,
    }
}

/// All-pairs relation ground truth: `(f_s, f_d, o_s, o_d, mask)`, each `N × n_super` row-major.
pub fn relation_oracle(grid: &SemanticGrid, s: usize) -> [Vec<bool>; 5] {
    let d = grid.dims();
    let n = d.len();
    let n_super = n / (s * s * s);
    let l = grid.labels();
    let mut out: [Vec<bool>; 5] = std::array::from_fn(|_| vec![false; n * n_super]);
    for v in 0..n {
        if l[v] == UNKNOWN {
            continue;
        }
        for w in 0..n {
            if l[w] == UNKNOWN {
                continue;
            }
            let cell = v * n_super + block_of(d, s, w);
            out[pair(l[v], l[w])][cell] = true;
            out[4][cell] = true;
        }
    }
    out
}

/// Bilinear sample with zero padding as a sum of tent weights over every pixel.
pub fn tent_sample(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    x: f64,
    y: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for py in 0..height {
        for px in 0..width {
            let w = (1.0 - (x - px as f64).abs()).max(0.0) * (1.0 - (y - py as f64).abs()).max(0.0);
            if w > 0.0 {
                for c in 0..channels {
                    out[c] += w * data[(py * width + px) * channels + c];
                }
            }
        }
    }
    out
}

/// Central differences of `f` at `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + h;
            let up = f(&x);
            x[i] = x0 - h;
            let down = f(&x);
            x[i] = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Scene-class affinity by explicit per-class loops over `probs[voxel][class]`,
/// skipping classes absent from the labels and undefined ratios.
pub fn scal_oracle(probs: &[Vec<f64>], labels: &[u8], classes: usize) -> f64 {
    let mut sum = 0.0;
    let mut terms = 0usize;
    for c in 0..classes {
        let (mut tp, mut pred, mut pos, mut tn, mut neg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (p, &y) in probs.iter().zip(labels) {
            if y == UNKNOWN {
                continue;
            }
            let is_c = y as usize == c;
            pred += p[c];
            if is_c {
                tp += p[c];
                pos += 1.0;
            } else {
                tn += 1.0 - p[c];
                neg += 1.0;
            }
        }
        if pos == 0.0 {
            continue;
        }
        if pred > 0.0 {
            sum += (tp / pred).ln();
            terms += 1;
        }
        sum += (tp / pos).ln();
        terms += 1;
        if neg > 0.0 {
            sum += (tn / neg).ln();
            terms += 1;
        }
    }
    -3.0 * sum / terms as f64
}

/// KL between ground-truth class proportions and mean predicted proportions of one frustum.
pub fn kl_oracle(probs: &[Vec<f64>], labels: &[u8], classes: usize) -> f64 {
    let defined: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] != UNKNOWN)
        .collect();
    let mut loss = 0.0;
    for c in 0..classes {
        let p = defined.iter().filter(|&&i| labels[i] as usize == c).count() as f64
            / defined.len() as f64;
        if p == 0.0 {
            continue;
        }
        let mass: f64 = defined.iter().map(|&i| probs[i][c]).sum();
        let total: f64 = defined.iter().map(|&i| probs[i].iter().sum::<f64>()).sum();
        loss += p * (p / (mass / total)).ln();
    }
    loss
}

/// Class-balanced binary cross-entropy of one relation over masked entries.
pub fn bce_oracle(pred: &[f64], truth: &[bool], mask: &[bool]) -> (f64, Option<f64>) {
    let idx: Vec<usize> = (0..truth.len()).filter(|&i| mask[i]).collect();
    let pos = idx.iter().filter(|&&i| truth[i]).count() as f64;
    if pos == 0.0 {
        return (0.0, None);
    }
    let w = (idx.len() as f64 - pos) / pos;
    let mut sum = 0.0;
    for &i in &idx {
        let q = pred[i].clamp(1e-12, 1.0 - 1e-12);
        sum += if truth[i] {
            -w * q.ln()
        } else {
            -(1.0 - q).ln()
        };
    }
    (sum / idx.len() as f64, Some(w))
}
