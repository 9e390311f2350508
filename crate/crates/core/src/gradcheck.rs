//! Central finite-difference checks of every loss gradient on random small scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crp::{relation_loss, RelationPrediction};
use crate::error::Result;
use crate::grid::{
    class_frequencies, class_weights, derive_geometric_labels, CameraModel, Dims, LogitGrid,
    SemanticGrid, UNKNOWN,
};
use crate::losses::{
    frustum_assignment, frustum_proportion_loss, scal_geo_from_semantic, scal_loss, softmax,
    weighted_cross_entropy, LossConfig, LossContext, LossToggles, RelationInput,
};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

/// A random scene with logits and relation probabilities to differentiate at.
#[derive(Debug, Clone)]
pub struct Instance {
    pub labels: SemanticGrid,
    pub camera: CameraModel,
    pub logits: LogitGrid,
    pub relations: RelationPrediction,
    pub config: LossConfig,
}

/// Grids up to 4×4×4 with 2 to 5 classes, about a fifth of voxels UNKNOWN.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let supervoxel = rng.gen_range(1..=2);
    let dim = |rng: &mut dyn rand::RngCore| {
        if supervoxel == 2 {
            [2, 4][rng.gen_range(0..2)]
        } else {
            rng.gen_range(1..=4)
        }
    };
    let dims = Dims::new(dim(rng), dim(rng), dim(rng));
    let class_count: u8 = rng.gen_range(2..=5);
    let mut labels: Vec<u8> = (0..dims.len())
        .map(|_| {
            if rng.gen_bool(0.2) {
                UNKNOWN
            } else {
                rng.gen_range(0..class_count)
            }
        })
        .collect();
    labels[0] = rng.gen_range(0..class_count);
    let voxel_size = 0.5;
    let labels =
        SemanticGrid::new(dims, [0.0; 3], voxel_size, class_count, labels).expect("valid labels");

    let center = [
        dims.x as f64 * 0.25,
        dims.y as f64 * 0.25,
        dims.z as f64 * 0.25,
    ];
    let radius = 2.5 + rng.gen_range(0.0..1.5);
    let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    let position = [
        center[0] + radius * azimuth.cos(),
        center[1] + radius * azimuth.sin(),
        center[2] + rng.gen_range(0.5..2.0),
    ];
    let camera = CameraModel::look_at(position, center, [14.0, 14.0, 7.5, 5.5], 16, 12)
        .expect("valid camera");

    let k = class_count as usize;
    let logits = LogitGrid::new(
        dims,
        k,
        (0..dims.len() * k)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect(),
    )
    .expect("shape");
    let n_super = dims.len() / (supervoxel * supervoxel * supervoxel);
    let relations = RelationPrediction::new(
        dims.len(),
        n_super,
        std::array::from_fn(|_| {
            (0..dims.len() * n_super)
                .map(|_| rng.gen_range(0.05..0.95))
                .collect()
        }),
    )
    .expect("shape");
    let config = LossConfig {
        ell: rng.gen_range(1..=3),
        supervoxel,
        ..Default::default()
    };
    Instance {
        labels,
        camera,
        logits,
        relations,
        config,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Rel,
    ScalSem,
    ScalGeo,
    Fp,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Ce,
        LossKind::Rel,
        LossKind::ScalSem,
        LossKind::ScalGeo,
        LossKind::Fp,
        LossKind::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Rel => "rel",
            LossKind::ScalSem => "scal_sem",
            LossKind::ScalGeo => "scal_geo",
            LossKind::Fp => "fp",
            LossKind::Total => "total",
        }
    }

    /// Loss value and gradient with respect to the concatenation of the logits
    /// and the four relation matrices (zero where the loss ignores them).
    pub fn evaluate(
        self,
        inst: &Instance,
        logits: &LogitGrid,
        relations: &RelationPrediction,
    ) -> Result<(f64, Vec<f64>)> {
        let probs = softmax(logits);
        let n_rel: usize = relations.values().iter().map(Vec::len).sum();
        let with_rel_zero = |value: f64, mut grad: Vec<f64>| {
            grad.resize(grad.len() + n_rel, 0.0);
            (value, grad)
        };
        Ok(match self {
            LossKind::Ce => {
                let w = class_weights(&class_frequencies(&inst.labels)?);
                let l = weighted_cross_entropy(&probs, &inst.labels, &w)?;
                with_rel_zero(l.value, l.grad)
            }
            LossKind::ScalSem => {
                let l = scal_loss(&probs, &inst.labels)?;
                with_rel_zero(l.value, l.grad)
            }
            LossKind::ScalGeo => {
                let l = scal_geo_from_semantic(&probs, &derive_geometric_labels(&inst.labels))?;
                with_rel_zero(l.value, l.grad)
            }
            LossKind::Fp => {
                let assign = frustum_assignment(&inst.camera, &inst.labels, inst.config.ell)?;
                let l = frustum_proportion_loss(&probs, &inst.labels, &assign)?;
                with_rel_zero(l.value, l.grad)
            }
            LossKind::Rel => {
                let truth =
                    crate::crp::build_relation_ground_truth(&inst.labels, inst.config.supervoxel)?;
                let l = relation_loss(relations, &truth)?;
                let mut grad = vec![0.0; logits.values().len()];
                grad.extend(l.grad.iter().flatten());
                (l.value, grad)
            }
            LossKind::Total => {
                let config = LossConfig {
                    toggles: LossToggles::ALL,
                    ..inst.config
                };
                let ctx = LossContext::new(&inst.labels, &inst.camera, config)?;
                let r = ctx.evaluate(logits, Some(RelationInput::Probabilities(relations)))?;
                let mut grad = r.grad_logits;
                grad.extend(r.grad_relations.expect("rel enabled").iter().flatten());
                (r.total, grad)
            }
        })
    }

    fn uses_relations(self) -> bool {
        matches!(self, LossKind::Rel | LossKind::Total)
    }

    fn uses_logits(self) -> bool {
        !matches!(self, LossKind::Rel)
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Relative error between the analytic gradient and central differences.
pub fn check(kind: LossKind, inst: &Instance) -> Result<f64> {
    let (_, analytic) = kind.evaluate(inst, &inst.logits, &inst.relations)?;
    let n_logits = inst.logits.values().len();
    let mut numeric = vec![0.0; analytic.len()];

    if kind.uses_logits() {
        let mut logits = inst.logits.clone();
        for p in 0..n_logits {
            let x = logits.values()[p];
            logits.values_mut()[p] = x + STEP;
            let (up, _) = kind.evaluate(inst, &logits, &inst.relations)?;
            logits.values_mut()[p] = x - STEP;
            let (down, _) = kind.evaluate(inst, &logits, &inst.relations)?;
            logits.values_mut()[p] = x;
            numeric[p] = (up - down) / (2.0 * STEP);
        }
    }
    if kind.uses_relations() {
        let mut rel = inst.relations.clone();
        let mut offset = n_logits;
        for m in 0..4 {
            for cell in 0..rel.values()[m].len() {
                let x = rel.values()[m][cell];
                rel.values_mut()[m][cell] = x + STEP;
                let (up, _) = kind.evaluate(inst, &inst.logits, &rel)?;
                rel.values_mut()[m][cell] = x - STEP;
                let (down, _) = kind.evaluate(inst, &inst.logits, &rel)?;
                rel.values_mut()[m][cell] = x;
                numeric[offset + cell] = (up - down) / (2.0 * STEP);
            }
            offset += rel.values()[m].len();
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckRow {
    pub loss: &'static str,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Checks every loss on `instances` random scenes drawn from `seed`.
pub fn run(seed: u64, instances: usize) -> Result<Vec<GradcheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes: Vec<Instance> = (0..instances).map(|_| random_instance(&mut rng)).collect();
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let mut worst = 0.0f64;
            for inst in &scenes {
                worst = worst.max(check(kind, inst)?);
            }
            Ok(GradcheckRow {
                loss: kind.name(),
                instances,
                max_relative_error: worst,
                passed: worst <= TOLERANCE,
            })
        })
        .collect()
}
