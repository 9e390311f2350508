use super::{check_shapes, softmax_backward, LossValue, LOG_EPS};
use crate::error::{Error, Result};
use crate::flosp::{project_centroids, ProjectionTable};
use crate::grid::{CameraModel, ProbGrid, SemanticGrid, UNKNOWN};

/// Frustum index per voxel for an `ell × ell` tiling of the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrustumAssignment {
    ell: usize,
    index: Vec<Option<usize>>,
}

impl FrustumAssignment {
    /// Patch of each projected voxel: `floor(v / (H/ℓ))·ℓ + floor(u / (W/ℓ))`.
    pub fn from_table(table: &ProjectionTable, ell: usize) -> Result<Self> {
        if ell == 0 {
            return Err(Error::Invalid("frustum tiling needs ell >= 1".into()));
        }
        let patch_w = table.width() as f64 / ell as f64;
        let patch_h = table.height() as f64 / ell as f64;
        let last = ell - 1;
        let index = table
            .entries()
            .iter()
            .map(|e| {
                e.map(|p| {
                    let col = ((p.u / patch_w).floor() as usize).min(last);
                    let row = ((p.v / patch_h).floor() as usize).min(last);
                    row * ell + col
                })
            })
            .collect();
        Ok(Self { ell, index })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn frustum_count(&self) -> usize {
        self.ell * self.ell
    }

    pub fn index(&self) -> &[Option<usize>] {
        &self.index
    }
}

pub fn frustum_assignment(
    camera: &CameraModel,
    grid: &SemanticGrid,
    ell: usize,
) -> Result<FrustumAssignment> {
    FrustumAssignment::from_table(&project_centroids(camera, grid), ell)
}

/// Sum over local frustums of `KL(P_k ‖ P̂_k)` restricted to the classes present
/// in each frustum's ground truth.
///
/// `P_k` counts defined voxels; `P̂_k` sums their predicted probabilities and is
/// normalised over all classes. Frustums without defined voxels, and voxels
/// outside every frustum, contribute nothing.
pub fn frustum_proportion_loss(
    probs: &ProbGrid,
    labels: &SemanticGrid,
    assign: &FrustumAssignment,
) -> Result<LossValue> {
    check_shapes(probs, labels)?;
    if assign.index.len() != labels.len() {
        return Err(Error::Shape(format!(
            "frustum assignment has {} voxels, grid has {}",
            assign.index.len(),
            labels.len()
        )));
    }
    let k = probs.class_count();
    let frustums = assign.frustum_count();
    let mut counts = vec![0.0; frustums * k];
    let mut pred = vec![0.0; frustums * k];
    for (i, (&label, slot)) in labels.labels().iter().zip(&assign.index).enumerate() {
        let (Some(f), true) = (slot, label != UNKNOWN) else {
            continue;
        };
        counts[f * k + label as usize] += 1.0;
        for (acc, p) in pred[f * k..(f + 1) * k].iter_mut().zip(probs.voxel(i)) {
            *acc += p;
        }
    }

    let mut value = 0.0;
    // Per frustum: dL/dp_ic = coef[c] + shared.
    let mut coef = vec![0.0; frustums * k];
    let mut shared = vec![0.0; frustums];
    for f in 0..frustums {
        let n: f64 = counts[f * k..(f + 1) * k].iter().sum();
        if n == 0.0 {
            continue;
        }
        let mass: f64 = pred[f * k..(f + 1) * k].iter().sum();
        for c in 0..k {
            let count = counts[f * k + c];
            if count == 0.0 {
                continue;
            }
            let target = count / n;
            let q = pred[f * k + c] / mass;
            value += target * (target / q.max(LOG_EPS)).ln();
            if q >= LOG_EPS {
                coef[f * k + c] -= target / pred[f * k + c];
                shared[f] += target / mass;
            }
        }
    }

    let mut grad_probs = vec![0.0; probs.values().len()];
    for (i, (&label, slot)) in labels.labels().iter().zip(&assign.index).enumerate() {
        let (Some(f), true) = (slot, label != UNKNOWN) else {
            continue;
        };
        for (c, g) in grad_probs[i * k..(i + 1) * k].iter_mut().enumerate() {
            *g = coef[f * k + c] + shared[*f];
        }
    }
    Ok(LossValue {
        value,
        grad: softmax_backward(probs, &grad_probs),
    })
}
