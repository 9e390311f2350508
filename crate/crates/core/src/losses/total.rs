use std::collections::BTreeMap;

use serde::Serialize;

use super::{
    frustum_assignment, frustum_proportion_loss, scal_geo_from_semantic, scal_loss_with, softmax,
    weighted_cross_entropy, FrustumAssignment, LossValue, ScalOptions,
};
use crate::crp::{
    build_relation_ground_truth, relation_loss, relation_loss_logits, RelationPrediction,
    RelationSet,
};
use crate::error::{Error, Result};
use crate::grid::{
    class_frequencies, class_weights, derive_geometric_labels, CameraModel, ClassWeights,
    LogitGrid, SemanticGrid,
};

/// Which loss terms take part in the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LossToggles {
    pub ce: bool,
    pub rel: bool,
    pub scal_sem: bool,
    pub scal_geo: bool,
    pub fp: bool,
}

impl LossToggles {
    pub const ALL: LossToggles = LossToggles {
        ce: true,
        rel: true,
        scal_sem: true,
        scal_geo: true,
        fp: true,
    };

    pub const NONE: LossToggles = LossToggles {
        ce: false,
        rel: false,
        scal_sem: false,
        scal_geo: false,
        fp: false,
    };
}

impl Default for LossToggles {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Frustum tiling is `ell × ell`.
    pub ell: usize,
    /// Supervoxel edge length for the relation ground truth.
    pub supervoxel: usize,
    pub toggles: LossToggles,
    pub scal: ScalOptions,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ell: 2,
            supervoxel: 2,
            toggles: LossToggles::ALL,
            scal: ScalOptions::default(),
        }
    }
}

/// Relation predictions supplied to the total loss.
#[derive(Debug, Clone, Copy)]
pub enum RelationInput<'a> {
    /// Values already in (0, 1).
    Probabilities(&'a RelationPrediction),
    /// Pre-sigmoid scores; evaluated with the fused stable path.
    Logits(&'a RelationPrediction),
}

/// Sum of the enabled loss terms, with gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
    #[serde(skip)]
    pub grad_logits: Vec<f64>,
    /// Gradient with respect to the relation input, when `rel` was evaluated.
    #[serde(skip)]
    pub grad_relations: Option<[Vec<f64>; 4]>,
}

impl LossReport {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

/// Everything the total loss derives from the ground truth, computed once.
#[derive(Debug, Clone)]
pub struct LossContext {
    labels: SemanticGrid,
    geo_labels: SemanticGrid,
    weights: ClassWeights,
    frustums: FrustumAssignment,
    relations: Option<RelationSet>,
    config: LossConfig,
}

impl LossContext {
    pub fn new(labels: &SemanticGrid, camera: &CameraModel, config: LossConfig) -> Result<Self> {
        let weights = class_weights(&class_frequencies(labels)?);
        let relations = if config.toggles.rel {
            Some(build_relation_ground_truth(labels, config.supervoxel)?)
        } else {
            None
        };
        Ok(Self {
            labels: labels.clone(),
            geo_labels: derive_geometric_labels(labels),
            weights,
            frustums: frustum_assignment(camera, labels, config.ell)?,
            relations,
            config,
        })
    }

    pub fn labels(&self) -> &SemanticGrid {
        &self.labels
    }

    pub fn weights(&self) -> &ClassWeights {
        &self.weights
    }

    pub fn frustums(&self) -> &FrustumAssignment {
        &self.frustums
    }

    /// Relation ground truth, present when the `rel` term is enabled.
    pub fn relations(&self) -> Option<&RelationSet> {
        self.relations.as_ref()
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    /// Evaluates every enabled term. `rel` is skipped when no relation input is given.
    pub fn evaluate(
        &self,
        logits: &LogitGrid,
        relations: Option<RelationInput<'_>>,
    ) -> Result<LossReport> {
        if logits.dims() != self.labels.dims() || logits.class_count() != self.labels.class_count()
        {
            return Err(Error::Shape(
                "logits do not match the ground-truth grid".into(),
            ));
        }
        let probs = softmax(logits);
        let toggles = self.config.toggles;

        let mut grad_relations = None;
        let rel = match (&self.relations, relations) {
            (Some(truth), Some(input)) => {
                let loss = match input {
                    RelationInput::Probabilities(pred) => relation_loss(pred, truth)?,
                    RelationInput::Logits(pred) => relation_loss_logits(pred, truth)?,
                };
                grad_relations = Some(loss.grad);
                Some(loss.value)
            }
            _ => None,
        };

        let mut terms: Vec<(&str, LossValue)> = Vec::with_capacity(4);
        if toggles.ce {
            terms.push((
                "ce",
                weighted_cross_entropy(&probs, &self.labels, &self.weights)?,
            ));
        }
        if toggles.scal_sem {
            terms.push((
                "scal_sem",
                scal_loss_with(&probs, &self.labels, self.config.scal)?,
            ));
        }
        if toggles.scal_geo {
            terms.push((
                "scal_geo",
                scal_geo_from_semantic(&probs, &self.geo_labels)?,
            ));
        }
        if toggles.fp {
            terms.push((
                "fp",
                frustum_proportion_loss(&probs, &self.labels, &self.frustums)?,
            ));
        }

        let mut components = BTreeMap::new();
        let mut grad_logits = vec![0.0; logits.values().len()];
        let mut total = rel.unwrap_or(0.0);
        if let Some(value) = rel {
            components.insert("rel".to_string(), value);
        }
        for (name, loss) in terms {
            total += loss.value;
            for (g, d) in grad_logits.iter_mut().zip(&loss.grad) {
                *g += d;
            }
            components.insert(name.to_string(), loss.value);
        }

        Ok(LossReport {
            total,
            components,
            grad_logits,
            grad_relations,
        })
    }
}

/// One-shot total loss; see [`LossContext`] to reuse the derived ground truth.
pub fn total_loss(
    logits: &LogitGrid,
    labels: &SemanticGrid,
    camera: &CameraModel,
    config: LossConfig,
    relations: Option<RelationInput<'_>>,
) -> Result<LossReport> {
    LossContext::new(labels, camera, config)?.evaluate(logits, relations)
}
