//! Differentiable scene-completion losses.
//!
//! Every loss reads per-voxel class probabilities, ignores voxels whose label
//! is [`UNKNOWN`](crate::grid::UNKNOWN), and returns its gradient with respect
//! to the pre-softmax logits. Logarithms are clamped at [`LOG_EPS`].

mod ce;
mod frustum;
mod scal;
mod total;

pub use ce::weighted_cross_entropy;
pub use frustum::{frustum_assignment, frustum_proportion_loss, FrustumAssignment};
pub use scal::{scal_geo, scal_geo_from_semantic, scal_loss, scal_loss_with, ScalOptions};
pub use total::{total_loss, LossConfig, LossContext, LossReport, LossToggles, RelationInput};

use crate::error::{Error, Result};
use crate::grid::{LogitGrid, ProbGrid, SemanticGrid};

/// Lower clamp applied before every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// A scalar loss with its gradient with respect to logits (voxel-major, then class).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Per-voxel softmax with max subtraction.
pub fn softmax(logits: &LogitGrid) -> ProbGrid {
    let k = logits.class_count();
    let mut values = Vec::with_capacity(logits.values().len());
    for row in logits.values().chunks_exact(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        let mut sum = 0.0;
        for &z in row {
            let e = (z - max).exp();
            sum += e;
            values.push(e);
        }
        values[start..].iter_mut().for_each(|p| *p /= sum);
    }
    ProbGrid::from_raw(logits.dims(), k, values)
}

/// Chain rule through the softmax: `dL/dz_c = p_c · (g_c − Σ_k p_k g_k)`.
pub fn softmax_backward(probs: &ProbGrid, grad_probs: &[f64]) -> Vec<f64> {
    let k = probs.class_count();
    let mut out = vec![0.0; grad_probs.len()];
    for ((o, p), g) in out
        .chunks_exact_mut(k)
        .zip(probs.values().chunks_exact(k))
        .zip(grad_probs.chunks_exact(k))
    {
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for c in 0..k {
            o[c] = p[c] * (g[c] - inner);
        }
    }
    out
}

fn check_shapes(probs: &ProbGrid, labels: &SemanticGrid) -> Result<()> {
    if probs.dims() != labels.dims() || probs.class_count() != labels.class_count() {
        return Err(Error::Shape(format!(
            "probabilities {:?}x{} vs labels {:?}x{}",
            probs.dims(),
            probs.class_count(),
            labels.dims(),
            labels.class_count()
        )));
    }
    Ok(())
}
