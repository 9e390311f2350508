//! Plain gradient descent on free per-voxel logits.
//!
//! Each step tries `x − η·∇L` with the configured `η` and halves `η` until the
//! total loss does not increase, up to [`MAX_HALVINGS`] times. If every trial
//! increases the loss the iterate stays put, so the loss trace never increases.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::crp::{sigmoid, RelationPrediction};
use crate::error::{Error, Result};
use crate::grid::{CameraModel, LogitGrid, ProbGrid, SemanticGrid};
use crate::losses::{softmax, LossConfig, LossContext, LossReport, RelationInput};

pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub step_size: f64,
    pub loss: LossConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            step_size: 200.0,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub step: usize,
    pub total: f64,
    pub components: BTreeMap<String, f64>,
    /// Step size that produced this iterate; 0 for the initial point and for rejected steps.
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub logits: LogitGrid,
    pub probs: ProbGrid,
    /// Sigmoid of the relation logits, when the relation term was enabled.
    pub relations: Option<RelationPrediction>,
    /// Entry 0 is the initial point; entry `n` follows step `n`.
    pub trace: Vec<TraceEntry>,
}

struct Params {
    logits: LogitGrid,
    relations: Option<RelationPrediction>,
}

impl Params {
    fn evaluate(&self, ctx: &LossContext, step: usize) -> Result<LossReport> {
        let report = ctx.evaluate(
            &self.logits,
            self.relations.as_ref().map(RelationInput::Logits),
        )?;
        if !report.total.is_finite() {
            return Err(Error::Numerical { step });
        }
        Ok(report)
    }

    fn stepped(&self, report: &LossReport, lr: f64) -> Params {
        let mut logits = self.logits.clone();
        for (x, g) in logits.values_mut().iter_mut().zip(&report.grad_logits) {
            *x -= lr * g;
        }
        let relations = self.relations.as_ref().map(|r| {
            let mut r = r.clone();
            if let Some(grad) = &report.grad_relations {
                for (values, grads) in r.values_mut().iter_mut().zip(grad) {
                    for (x, g) in values.iter_mut().zip(grads) {
                        *x -= lr * g;
                    }
                }
            }
            r
        });
        Params { logits, relations }
    }
}

fn entry(step: usize, report: &LossReport, step_size: f64) -> TraceEntry {
    TraceEntry {
        step,
        total: report.total,
        components: report.components.clone(),
        step_size,
    }
}

/// Fits logits (and relation logits, when enabled) to `gt` from an all-zero start.
pub fn optimize_logits(
    gt: &SemanticGrid,
    camera: &CameraModel,
    config: &OptimizeConfig,
) -> Result<OptimizeResult> {
    if !(config.step_size > 0.0 && config.step_size.is_finite()) {
        return Err(Error::Invalid(format!(
            "step size must be > 0, got {}",
            config.step_size
        )));
    }
    let ctx = LossContext::new(gt, camera, config.loss)?;
    let mut params = Params {
        logits: LogitGrid::zeros(gt.dims(), gt.class_count()),
        relations: ctx
            .relations()
            .map(|truth| RelationPrediction::filled_like(truth, 0.0)),
    };
    let mut report = params.evaluate(&ctx, 0)?;
    let mut trace = vec![entry(0, &report, 0.0)];

    for step in 1..=config.steps {
        let mut lr = config.step_size;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = params.stepped(&report, lr);
            let candidate_report = candidate.evaluate(&ctx, step)?;
            if candidate_report.total <= report.total {
                accepted = Some((candidate, candidate_report));
                break;
            }
            lr *= 0.5;
        }
        match accepted {
            Some((p, r)) => {
                params = p;
                report = r;
                trace.push(entry(step, &report, lr));
            }
            None => trace.push(entry(step, &report, 0.0)),
        }
    }

    let relations = params.relations.map(|r| {
        let values = std::array::from_fn(|m| r.values()[m].iter().map(|&z| sigmoid(z)).collect());
        RelationPrediction::new(r.n_voxels(), r.n_super(), values).expect("same layout")
    });
    Ok(OptimizeResult {
        probs: softmax(&params.logits),
        logits: params.logits,
        relations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use crate::losses::LossToggles;

    fn tiny_scene() -> (SemanticGrid, CameraModel) {
        let grid = SemanticGrid::new(
            Dims::new(2, 2, 2),
            [0.0; 3],
            0.5,
            3,
            vec![1, 1, 1, 1, 0, 2, 0, 0],
        )
        .unwrap();
        let cam = CameraModel::look_at(
            [0.5, -1.5, 1.5],
            [0.5, 0.5, 0.25],
            [20.0, 20.0, 15.5, 11.5],
            32,
            24,
        )
        .unwrap();
        (grid, cam)
    }

    #[test]
    fn zero_steps_is_uniform() {
        let (grid, cam) = tiny_scene();
        let config = OptimizeConfig {
            steps: 0,
            ..Default::default()
        };
        let result = optimize_logits(&grid, &cam, &config).unwrap();
        assert_eq!(result.trace.len(), 1);
        assert!(result
            .probs
            .values()
            .iter()
            .all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(result.trace[0].total > 0.0);
    }

    #[test]
    fn cross_entropy_only_converges() {
        let (grid, cam) = tiny_scene();
        let config = OptimizeConfig {
            steps: 200,
            step_size: 1.0,
            loss: LossConfig {
                toggles: LossToggles {
                    ce: true,
                    ..LossToggles::NONE
                },
                ..Default::default()
            },
        };
        let result = optimize_logits(&grid, &cam, &config).unwrap();
        let last = result.trace.last().unwrap();
        assert!(
            last.components["ce"] < 0.05,
            "final CE {}",
            last.components["ce"]
        );
        for w in result.trace.windows(2) {
            assert!(w[1].total <= w[0].total);
        }
    }

    #[test]
    fn rejects_bad_step_size() {
        let (grid, cam) = tiny_scene();
        let config = OptimizeConfig {
            step_size: 0.0,
            ..Default::default()
        };
        assert!(optimize_logits(&grid, &cam, &config).is_err());
    }
}
