//! Scene-completion metrics: per-class IoU, mIoU over semantic classes, and
//! scene-completion IoU on the free/occupied collapse, each restricted to a
//! field-of-view scope.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flosp::project_centroids;
use crate::grid::{CameraModel, SemanticGrid, UNKNOWN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    InFov,
    OutFov,
    Whole,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_fov" => Ok(Scope::InFov),
            "out_fov" => Ok(Scope::OutFov),
            "whole" => Ok(Scope::Whole),
            other => Err(Error::Invalid(format!("unknown scope {other:?}"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::InFov => "in_fov",
            Scope::OutFov => "out_fov",
            Scope::Whole => "whole",
        })
    }
}

/// Voxel masks for the three evaluation scopes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeMasks {
    pub in_fov: Vec<bool>,
    pub out_fov: Vec<bool>,
    pub whole: Vec<bool>,
}

impl ScopeMasks {
    pub fn get(&self, scope: Scope) -> &[bool] {
        match scope {
            Scope::InFov => &self.in_fov,
            Scope::OutFov => &self.out_fov,
            Scope::Whole => &self.whole,
        }
    }
}

/// In-FOV voxels are those whose centroid projects into the image.
pub fn scope_masks(camera: &CameraModel, grid: &SemanticGrid) -> ScopeMasks {
    let table = project_centroids(camera, grid);
    let in_fov: Vec<bool> = table.entries().iter().map(Option::is_some).collect();
    let out_fov = in_fov.iter().map(|v| !v).collect();
    ScopeMasks {
        in_fov,
        out_fov,
        whole: vec![true; grid.len()],
    }
}

/// Counts indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_count: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_count: usize) -> Self {
        Self {
            class_count,
            counts: vec![0; class_count * class_count],
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.class_count + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, gt: usize, pred: usize) {
        self.counts[gt * self.class_count + pred] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_count != self.class_count {
            return Err(Error::Shape(
                "confusion matrices differ in class count".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Tallies voxels that have defined ground truth and lie in `scope`.
pub fn accumulate(
    pred: &SemanticGrid,
    gt: &SemanticGrid,
    scope: &[bool],
) -> Result<ConfusionMatrix> {
    if pred.dims() != gt.dims() || pred.class_count() != gt.class_count() || scope.len() != gt.len()
    {
        return Err(Error::Shape(format!(
            "prediction {:?}x{}, ground truth {:?}x{}, scope {}",
            pred.dims(),
            pred.class_count(),
            gt.dims(),
            gt.class_count(),
            scope.len()
        )));
    }
    if pred.labels().contains(&UNKNOWN) {
        return Err(Error::Invalid(
            "predictions must not contain UNKNOWN".into(),
        ));
    }
    let mut cm = ConfusionMatrix::new(gt.class_count());
    for ((&p, &g), &inside) in pred.labels().iter().zip(gt.labels()).zip(scope) {
        if inside && g != UNKNOWN {
            cm.add(g as usize, p as usize);
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    /// IoU per class including free; `None` where the class is absent from
    /// both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean IoU over semantic (non-free) classes with a defined IoU.
    pub miou: f64,
    /// IoU of occupied versus free, ignoring semantics.
    pub sc_iou: f64,
}

fn ratio(tp: u64, fp: u64, fn_: u64) -> Option<f64> {
    let den = tp + fp + fn_;
    (den > 0).then(|| tp as f64 / den as f64)
}

pub fn iou_report(cm: &ConfusionMatrix) -> Result<IouReport> {
    let k = cm.class_count;
    let per_class_iou: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let fp: u64 = (0..k).filter(|&r| r != c).map(|r| cm.get(r, c)).sum();
            let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
            ratio(tp, fp, fn_)
        })
        .collect();
    let semantic: Vec<f64> = per_class_iou[1..].iter().flatten().copied().collect();
    if semantic.is_empty() {
        return Err(Error::Degenerate(
            "no semantic class present in prediction or ground truth".into(),
        ));
    }
    let miou = semantic.iter().sum::<f64>() / semantic.len() as f64;

    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for g in 0..k {
        for p in 0..k {
            let n = cm.get(g, p);
            match (g > 0, p > 0) {
                (true, true) => tp += n,
                (false, true) => fp += n,
                (true, false) => fn_ += n,
                (false, false) => {}
            }
        }
    }
    // Some semantic class is present, so the occupied collapse is non-empty.
    let sc_iou = ratio(tp, fp, fn_).unwrap_or(0.0);
    Ok(IouReport {
        per_class_iou,
        miou,
        sc_iou,
    })
}

/// Metric report as emitted by the command line, tagged with its scope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopedReport {
    #[serde(flatten)]
    pub iou: IouReport,
    pub scope: Scope,
}

/// Accumulates and scores `pred` against `gt` within `scope`.
pub fn evaluate(
    pred: &SemanticGrid,
    gt: &SemanticGrid,
    camera: &CameraModel,
    scope: Scope,
) -> Result<ScopedReport> {
    let masks = scope_masks(camera, gt);
    let cm = accumulate(pred, gt, masks.get(scope))?;
    Ok(ScopedReport {
        iou: iou_report(&cm)?,
        scope,
    })
}
