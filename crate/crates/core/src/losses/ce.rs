use super::{check_shapes, LossValue, LOG_EPS};
use crate::error::{Error, Result};
use crate::grid::{ClassWeights, ProbGrid, SemanticGrid, UNKNOWN};

/// Class-weighted cross-entropy averaged by total weight over defined voxels:
/// `Σ w_{y_i}·(−ln p_{i,y_i}) / Σ w_{y_i}`.
pub fn weighted_cross_entropy(
    probs: &ProbGrid,
    labels: &SemanticGrid,
    weights: &ClassWeights,
) -> Result<LossValue> {
    check_shapes(probs, labels)?;
    let k = probs.class_count();
    if weights.len() != k {
        return Err(Error::Shape(format!(
            "{} weights for {k} classes",
            weights.len()
        )));
    }
    let total_weight: f64 = labels
        .labels()
        .iter()
        .filter(|&&l| l != UNKNOWN)
        .map(|&l| weights[l as usize])
        .sum();
    if total_weight == 0.0 {
        return Err(Error::Degenerate(
            "no voxel with defined ground truth".into(),
        ));
    }

    let mut value = 0.0;
    let mut grad = vec![0.0; probs.values().len()];
    for (i, &label) in labels.labels().iter().enumerate() {
        if label == UNKNOWN {
            continue;
        }
        let y = label as usize;
        let p = probs.voxel(i);
        let scale = weights[y] / total_weight;
        value -= scale * p[y].max(LOG_EPS).ln();
        if p[y] >= LOG_EPS {
            let g = &mut grad[i * k..(i + 1) * k];
            for c in 0..k {
                g[c] = scale * p[c];
            }
            g[y] -= scale;
        }
    }
    Ok(LossValue { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{class_weights, Dims};
    use approx::assert_relative_eq;

    fn labels(l: &[u8], k: u8) -> SemanticGrid {
        SemanticGrid::new(Dims::new(l.len(), 1, 1), [0.0; 3], 1.0, k, l.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let gt = labels(&[0, 1, 2, 1], 3);
        let probs = ProbGrid::one_hot(&gt, 0).unwrap();
        let w = class_weights(&[0.2, 0.5, 0.3]);
        let loss = weighted_cross_entropy(&probs, &gt, &w).unwrap();
        assert!(loss.value <= 1e-10);
    }

    #[test]
    fn uniform_prediction_is_ln_k_for_any_weights() {
        let gt = labels(&[0, 1, 2, 2, UNKNOWN], 3);
        let probs = ProbGrid::new(gt.dims(), 3, vec![1.0 / 3.0; 15]).unwrap();
        for w in [vec![1.0, 1.0, 1.0], vec![0.5, 7.0, 2.0]] {
            let loss = weighted_cross_entropy(&probs, &gt, &ClassWeights::new(w).unwrap()).unwrap();
            assert_relative_eq!(loss.value, 3f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn unknown_voxels_are_ignored() {
        let gt = labels(&[0, UNKNOWN, 1], 2);
        let a = ProbGrid::new(gt.dims(), 2, vec![0.7, 0.3, 0.1, 0.9, 0.4, 0.6]).unwrap();
        let b = ProbGrid::new(gt.dims(), 2, vec![0.7, 0.3, 0.8, 0.2, 0.4, 0.6]).unwrap();
        let w = ClassWeights::uniform(2);
        let la = weighted_cross_entropy(&a, &gt, &w).unwrap();
        let lb = weighted_cross_entropy(&b, &gt, &w).unwrap();
        assert_eq!(la.value, lb.value);
        assert_eq!(la.grad, lb.grad);
        assert_eq!(&la.grad[2..4], &[0.0, 0.0]);
    }

    #[test]
    fn all_unknown_is_degenerate() {
        let gt = labels(&[UNKNOWN; 3], 2);
        let probs = ProbGrid::new(gt.dims(), 2, vec![0.5; 6]).unwrap();
        assert!(matches!(
            weighted_cross_entropy(&probs, &gt, &ClassWeights::uniform(2)),
            Err(Error::Degenerate(_))
        ));
    }
}
