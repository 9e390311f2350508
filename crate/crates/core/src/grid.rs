//! Voxel grids, cameras and label statistics.
//!
//! Voxels are stored flat in x-fastest order: the voxel `(i, j, k)` lives at
//! `i + Dx * (j + Dy * k)`. Label `0` is the free (empty space) class and
//! [`UNKNOWN`] marks voxels without ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel label for voxels whose ground truth is undefined.
pub const UNKNOWN: u8 = 255;

/// Label of the free (empty space) class.
pub const FREE: u8 = 0;

/// Voxel counts along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub const fn len(&self) -> usize {
        self.x * self.y * self.z
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.x * (j + self.y * k)
    }

    #[inline]
    pub const fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.x;
        let rest = idx / self.x;
        (i, rest % self.y, rest / self.y)
    }

    pub fn contains(&self, i: i64, j: i64, k: i64) -> bool {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < self.x
            && (j as usize) < self.y
            && (k as usize) < self.z
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }
}

/// Dense voxel label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    dims: Dims,
    origin: [f32; 3],
    voxel_size: f32,
    class_count: u8,
    labels: Vec<u8>,
}

impl SemanticGrid {
    pub fn new(
        dims: Dims,
        origin: [f32; 3],
        voxel_size: f32,
        class_count: u8,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if dims.x == 0 || dims.y == 0 || dims.z == 0 {
            return Err(Error::Invalid(format!(
                "grid dims must be >= 1, got {dims:?}"
            )));
        }
        if class_count < 2 {
            return Err(Error::Invalid(format!(
                "class_count {class_count} outside [2, 255]"
            )));
        }
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::Invalid(format!(
                "voxel_size must be > 0, got {voxel_size}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Invalid("origin must be finite".into()));
        }
        if labels.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} voxels",
                labels.len(),
                dims.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != UNKNOWN && l >= class_count) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            dims,
            origin,
            voxel_size,
            class_count,
            labels,
        })
    }

    /// Grid at the origin with unit voxels filled with `fill`.
    pub fn filled(dims: Dims, class_count: u8, fill: u8) -> Result<Self> {
        Self::new(dims, [0.0; 3], 1.0, class_count, vec![fill; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn voxel_size(&self) -> f32 {
        self.voxel_size
    }

    pub fn class_count(&self) -> usize {
        self.class_count as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[self.dims.index(i, j, k)]
    }

    /// Copy of this grid with new labels; geometry and class count are kept.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::new(
            self.dims,
            self.origin,
            self.voxel_size,
            self.class_count,
            labels,
        )
    }

    /// World-space centroid of voxel `idx`: `origin + (i + ½, j + ½, k + ½) · voxel_size`.
    pub fn centroid(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.dims.coords(idx);
        let size = self.voxel_size as f64;
        [
            self.origin[0] as f64 + (i as f64 + 0.5) * size,
            self.origin[1] as f64 + (j as f64 + 0.5) * size,
            self.origin[2] as f64 + (k as f64 + 0.5) * size,
        ]
    }

    /// Number of voxels with defined ground truth.
    pub fn defined_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNKNOWN).count()
    }
}

/// Collapse semantic labels to free (0) / occupied (1), keeping [`UNKNOWN`].
pub fn derive_geometric_labels(grid: &SemanticGrid) -> SemanticGrid {
    let labels = grid
        .labels
        .iter()
        .map(|&l| match l {
            UNKNOWN => UNKNOWN,
            FREE => FREE,
            _ => 1,
        })
        .collect();
    SemanticGrid {
        dims: grid.dims,
        origin: grid.origin,
        voxel_size: grid.voxel_size,
        class_count: 2,
        labels,
    }
}

/// Fraction of defined voxels carrying each class.
pub fn class_frequencies(grid: &SemanticGrid) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; grid.class_count()];
    let mut total = 0usize;
    for &l in grid.labels.iter().filter(|&&l| l != UNKNOWN) {
        counts[l as usize] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Degenerate("every voxel is UNKNOWN".into()));
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / total as f64)
        .collect())
}

/// Per-class weights for the cross-entropy term.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Invalid(
                "class weights must be finite and > 0".into(),
            ));
        }
        Ok(Self(weights))
    }

    pub fn uniform(class_count: usize) -> Self {
        Self(vec![1.0; class_count])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for ClassWeights {
    type Output = f64;
    fn index(&self, c: usize) -> &f64 {
        &self.0[c]
    }
}

/// Inverse log-frequency weighting, `w_c = 1 / ln(1.02 + f_c)`.
pub fn class_weights(frequencies: &[f64]) -> ClassWeights {
    ClassWeights(
        frequencies
            .iter()
            .map(|&f| 1.0 / (1.02 + f.clamp(0.0, 1.0)).ln())
            .collect(),
    )
}

/// Unconstrained per-voxel class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrid {
    dims: Dims,
    class_count: usize,
    values: Vec<f64>,
}

impl LogitGrid {
    pub fn new(dims: Dims, class_count: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() * class_count {
            return Err(Error::Shape(format!(
                "{} logits for {} voxels x {} classes",
                values.len(),
                dims.len(),
                class_count
            )));
        }
        Ok(Self {
            dims,
            class_count,
            values,
        })
    }

    pub fn zeros(dims: Dims, class_count: usize) -> Self {
        Self {
            dims,
            class_count,
            values: vec![0.0; dims.len() * class_count],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn voxel(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.class_count..(idx + 1) * self.class_count]
    }
}

/// Per-voxel class probability vectors, each summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    dims: Dims,
    class_count: usize,
    values: Vec<f64>,
}

impl ProbGrid {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(dims: Dims, class_count: usize, values: Vec<f64>) -> Result<Self> {
        if class_count == 0 || values.len() != dims.len() * class_count {
            return Err(Error::Shape(format!(
                "{} probabilities for {} voxels x {} classes",
                values.len(),
                dims.len(),
                class_count
            )));
        }
        for (idx, row) in values.chunks_exact(class_count).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Invalid(format!(
                    "voxel {idx} has a negative or non-finite probability"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(Error::Invalid(format!(
                    "voxel {idx} probabilities sum to {sum}"
                )));
            }
        }
        Ok(Self {
            dims,
            class_count,
            values,
        })
    }

    /// One-hot probabilities of `grid`; UNKNOWN voxels get `fallback`.
    pub fn one_hot(grid: &SemanticGrid, fallback: u8) -> Result<Self> {
        let k = grid.class_count();
        if fallback as usize >= k {
            return Err(Error::Invalid(format!("fallback class {fallback} >= {k}")));
        }
        let mut values = vec![0.0; grid.len() * k];
        for (idx, &l) in grid.labels().iter().enumerate() {
            let c = if l == UNKNOWN { fallback } else { l };
            values[idx * k + c as usize] = 1.0;
        }
        Ok(Self {
            dims: grid.dims(),
            class_count: k,
            values,
        })
    }

    pub(crate) fn from_raw(dims: Dims, class_count: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.len() * class_count);
        Self {
            dims,
            class_count,
            values,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn voxel(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.class_count..(idx + 1) * self.class_count]
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Most probable class per voxel; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<u8> {
        self.values
            .chunks_exact(self.class_count)
            .map(|row| {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera space is x right, y down, z forward. Pixel `(0, 0)` has its centre
/// at image coordinate `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major 4x4 world-to-camera transform.
    pub extrinsic: [f64; 16],
}

impl CameraModel {
    pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

    pub const IDENTITY: [f64; 16] = [
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ];

    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        extrinsic: [f64; 16],
    ) -> Result<Self> {
        let camera = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Camera at `position` looking towards `target`, with world +z as up.
    pub fn look_at(
        position: [f64; 3],
        target: [f64; 3],
        intrinsics: [f64; 4],
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = normalize(sub(target, position))
            .ok_or_else(|| Error::Invalid("camera position equals target".into()))?;
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]))
            .ok_or_else(|| Error::Invalid("camera looks straight up or down".into()))?;
        let down = cross(forward, right);
        let mut extrinsic = Self::IDENTITY;
        for (row, axis) in [right, down, forward].iter().enumerate() {
            extrinsic[row * 4..row * 4 + 3].copy_from_slice(axis);
            extrinsic[row * 4 + 3] = -dot(*axis, position);
        }
        let [fx, fy, cx, cy] = intrinsics;
        Self::new(fx, fy, cx, cy, width, height, extrinsic)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.extrinsic.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("camera parameters must be finite".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid("focal lengths must be > 0".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("image size must be >= 1".into()));
        }
        let m = &self.extrinsic;
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..3).map(|c| m[a * 4 + c] * m[b * 4 + c]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                if (d - expected).abs() > Self::ORTHONORMAL_TOLERANCE {
                    return Err(Error::Invalid(
                        "extrinsic rotation is not orthonormal".into(),
                    ));
                }
            }
        }
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom
            .iter()
            .zip([0.0, 0.0, 0.0, 1.0])
            .any(|(v, e)| (v - e).abs() > Self::ORTHONORMAL_TOLERANCE)
        {
            return Err(Error::Invalid(
                "extrinsic bottom row must be (0, 0, 0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.extrinsic;
        let row =
            |r: usize| m[r * 4] * p[0] + m[r * 4 + 1] * p[1] + m[r * 4 + 2] * p[2] + m[r * 4 + 3];
        [row(0), row(1), row(2)]
    }

    /// Camera centre in world coordinates, `-Rᵀ t`.
    pub fn position(&self) -> [f64; 3] {
        let m = &self.extrinsic;
        let t = [m[3], m[7], m[11]];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = -(0..3).map(|r| m[r * 4 + c] * t[r]).sum::<f64>();
        }
        out
    }

    /// World-space direction (not normalised) of the ray through image point `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> [f64; 3] {
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let m = &self.extrinsic;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|r| m[r * 4 + c] * d[r]).sum();
        }
        out
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(v, v).sqrt();
    (n > 1e-12).then(|| [v[0] / n, v[1] / n, v[2] / n])
}
