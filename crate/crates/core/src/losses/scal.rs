//! Scene-class affinity: log precision, recall and specificity per class.
//!
//! For class `c` over defined voxels,
//! `P_c = ln(Σ p̂_c⟦y=c⟧ / Σ p̂_c)`, `R_c = ln(Σ p̂_c⟦y=c⟧ / Σ⟦y=c⟧)`,
//! `S_c = ln(Σ (1−p̂_c)⟦y≠c⟧ / Σ⟦y≠c⟧)`. The loss is `−3 · mean(terms)`, so it
//! equals `−(1/C) Σ_c (P_c + R_c + S_c)` whenever every term is defined.
//!
//! Classes absent from the ground truth contribute no terms. Within a present
//! class, `P_c` is dropped when the predicted mass is zero and `S_c` when no
//! voxel has another class.

use super::{check_shapes, softmax_backward, LossValue, LOG_EPS};
use crate::error::{Error, Result};
use crate::grid::{ProbGrid, SemanticGrid, UNKNOWN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalOptions {
    /// Whether the free class (index 0) takes part in the class average.
    pub include_free: bool,
}

impl Default for ScalOptions {
    fn default() -> Self {
        Self { include_free: true }
    }
}

pub fn scal_loss(probs: &ProbGrid, labels: &SemanticGrid) -> Result<LossValue> {
    scal_loss_with(probs, labels, ScalOptions::default())
}

pub fn scal_loss_with(
    probs: &ProbGrid,
    labels: &SemanticGrid,
    options: ScalOptions,
) -> Result<LossValue> {
    check_shapes(probs, labels)?;
    let (value, grad_probs) = scal_value_and_prob_grad(probs, labels, options)?;
    Ok(LossValue {
        value,
        grad: softmax_backward(probs, &grad_probs),
    })
}

/// Geometric affinity on two-class (free, occupied) probabilities.
pub fn scal_geo(probs: &ProbGrid, geo_labels: &SemanticGrid) -> Result<LossValue> {
    if probs.class_count() != 2 {
        return Err(Error::Shape(format!(
            "geometric affinity needs 2 classes, got {}",
            probs.class_count()
        )));
    }
    scal_loss(probs, geo_labels)
}

/// Geometric affinity with occupancy taken from semantic probabilities as
/// `Σ_{c≥1} p̂_c`; the gradient is with respect to the semantic logits.
pub fn scal_geo_from_semantic(probs: &ProbGrid, geo_labels: &SemanticGrid) -> Result<LossValue> {
    if geo_labels.class_count() != 2 || probs.dims() != geo_labels.dims() {
        return Err(Error::Shape(
            "geometric labels must be 2-class and match the grid".into(),
        ));
    }
    let k = probs.class_count();
    let geo_values = probs
        .values()
        .chunks_exact(k)
        .flat_map(|p| [p[0], p[1..].iter().sum()])
        .collect();
    let geo = ProbGrid::from_raw(probs.dims(), 2, geo_values);
    let (value, geo_grad) = scal_value_and_prob_grad(&geo, geo_labels, ScalOptions::default())?;
    let mut grad_probs = vec![0.0; probs.values().len()];
    for (g, gg) in grad_probs.chunks_exact_mut(k).zip(geo_grad.chunks_exact(2)) {
        g[0] = gg[0];
        g[1..].iter_mut().for_each(|x| *x = gg[1]);
    }
    Ok(LossValue {
        value,
        grad: softmax_backward(probs, &grad_probs),
    })
}

/// ln of a clamped ratio, and whether the ratio lies above the clamp (so the
/// log has a non-zero derivative).
fn clamped_log(num: f64, den: f64) -> (f64, bool) {
    let ratio = num / den;
    (ratio.clamp(LOG_EPS, 1.0).ln(), ratio >= LOG_EPS)
}

fn scal_value_and_prob_grad(
    probs: &ProbGrid,
    labels: &SemanticGrid,
    options: ScalOptions,
) -> Result<(f64, Vec<f64>)> {
    let k = probs.class_count();
    let defined: Vec<usize> = (0..labels.len())
        .filter(|&i| labels.labels()[i] != UNKNOWN)
        .collect();
    if defined.is_empty() {
        return Err(Error::Degenerate(
            "no voxel with defined ground truth".into(),
        ));
    }
    let n_defined = defined.len() as f64;

    // Per-class derivative coefficients: dT/dp_ic = a_c·⟦y=c⟧ + b_c·⟦y≠c⟧ + d_c.
    let mut on_class = vec![0.0; k];
    let mut off_class = vec![0.0; k];
    let mut everywhere = vec![0.0; k];
    let mut term_sum = 0.0;
    let mut terms = 0usize;

    let first = if options.include_free { 0 } else { 1 };
    for c in first..k {
        let mut count = 0.0;
        let mut tp = 0.0;
        let mut mass = 0.0;
        let mut tn = 0.0;
        for &i in &defined {
            let p = probs.voxel(i)[c];
            mass += p;
            if labels.labels()[i] as usize == c {
                count += 1.0;
                tp += p;
            } else {
                tn += 1.0 - p;
            }
        }
        if count == 0.0 {
            continue;
        }
        let negatives = n_defined - count;

        if mass > 0.0 {
            let (t, live) = clamped_log(tp, mass);
            term_sum += t;
            terms += 1;
            if live {
                on_class[c] += 1.0 / tp;
                everywhere[c] -= 1.0 / mass;
            }
        }
        let (t, live) = clamped_log(tp, count);
        term_sum += t;
        terms += 1;
        if live {
            on_class[c] += 1.0 / tp;
        }
        if negatives > 0.0 {
            let (t, live) = clamped_log(tn, negatives);
            term_sum += t;
            terms += 1;
            if live {
                off_class[c] -= 1.0 / tn;
            }
        }
    }

    let mut grad = vec![0.0; probs.values().len()];
    if terms == 0 {
        return Ok((0.0, grad));
    }
    let scale = -3.0 / terms as f64;
    for &i in &defined {
        let y = labels.labels()[i] as usize;
        let g = &mut grad[i * k..(i + 1) * k];
        for c in first..k {
            let local = if y == c { on_class[c] } else { off_class[c] };
            g[c] = scale * (local + everywhere[c]);
        }
    }
    Ok((scale * term_sum, grad))
}
