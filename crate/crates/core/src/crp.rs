//! Supervoxel↔voxel context relations.
//!
//! A supervoxel is a non-overlapping `s×s×s` block of voxels. For every voxel
//! `i` and supervoxel `j` the ground truth records which of the four pair
//! relations occur between `i` and the labelled members of `j`. Predicted
//! relation matrices gather supervoxel features into per-voxel context, and
//! are supervised with a class-balanced binary cross-entropy.

use crate::error::{Error, Result};
use crate::flosp::Feature3D;
use crate::grid::{Dims, ProbGrid, SemanticGrid, FREE, UNKNOWN};

/// Log clamp for predicted relation probabilities.
pub const RELATION_EPS: f64 = 1e-12;

/// Relation between two labelled voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationKind {
    /// Both free.
    FreeSimilar,
    /// Exactly one free.
    FreeDifferent,
    /// Both occupied, same class.
    OccupiedSimilar,
    /// Both occupied, different classes.
    OccupiedDifferent,
}

impl RelationKind {
    pub const ALL: [RelationKind; 4] = [
        RelationKind::FreeSimilar,
        RelationKind::FreeDifferent,
        RelationKind::OccupiedSimilar,
        RelationKind::OccupiedDifferent,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            RelationKind::FreeSimilar => "f_s",
            RelationKind::FreeDifferent => "f_d",
            RelationKind::OccupiedSimilar => "o_s",
            RelationKind::OccupiedDifferent => "o_d",
        }
    }
}

/// Relation between two labels. Both must be defined; callers mask UNKNOWN first.
pub fn pair_relation(a: u8, b: u8) -> RelationKind {
    debug_assert!(
        a != UNKNOWN && b != UNKNOWN,
        "pair_relation on UNKNOWN label"
    );
    match (a == FREE, b == FREE) {
        (true, true) => RelationKind::FreeSimilar,
        (true, false) | (false, true) => RelationKind::FreeDifferent,
        (false, false) if a == b => RelationKind::OccupiedSimilar,
        (false, false) => RelationKind::OccupiedDifferent,
    }
}

/// Block decomposition of a grid into `s³` supervoxels, indexed x-fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupervoxelLayout {
    dims: Dims,
    size: usize,
    blocks: Dims,
}

impl SupervoxelLayout {
    pub fn new(dims: Dims, size: usize) -> Result<Self> {
        if size == 0
            || !dims.x.is_multiple_of(size)
            || !dims.y.is_multiple_of(size)
            || !dims.z.is_multiple_of(size)
        {
            return Err(Error::Shape(format!(
                "supervoxel size {size} does not divide grid dims {}x{}x{}",
                dims.x, dims.y, dims.z
            )));
        }
        Ok(Self {
            dims,
            size,
            blocks: Dims::new(dims.x / size, dims.y / size, dims.z / size),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.len()
    }

    pub fn n_super(&self) -> usize {
        self.blocks.len()
    }

    pub fn supervoxel_of(&self, voxel: usize) -> usize {
        let (i, j, k) = self.dims.coords(voxel);
        self.blocks
            .index(i / self.size, j / self.size, k / self.size)
    }

    /// Flat indices of the voxels in supervoxel `sv`.
    pub fn members(&self, sv: usize) -> impl Iterator<Item = usize> + '_ {
        let (bi, bj, bk) = self.blocks.coords(sv);
        let s = self.size;
        (0..s).flat_map(move |dk| {
            (0..s).flat_map(move |dj| {
                (0..s).map(move |di| self.dims.index(bi * s + di, bj * s + dj, bk * s + dk))
            })
        })
    }
}

/// Binary relation ground truth: four `N × N/s³` matrices plus a validity mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSet {
    supervoxel_size: usize,
    n_voxels: usize,
    n_super: usize,
    relations: [Vec<bool>; 4],
    mask: Vec<bool>,
}

impl RelationSet {
    pub fn from_parts(
        supervoxel_size: usize,
        n_voxels: usize,
        n_super: usize,
        relations: [Vec<bool>; 4],
        mask: Vec<bool>,
    ) -> Result<Self> {
        let cells = n_voxels * n_super;
        if mask.len() != cells || relations.iter().any(|r| r.len() != cells) {
            return Err(Error::Shape(format!(
                "relation matrices must hold {n_voxels}x{n_super} entries"
            )));
        }
        for cell in 0..cells {
            let any = relations.iter().any(|r| r[cell]);
            if mask[cell] != any {
                return Err(Error::Invalid(format!(
                    "cell {cell}: mask {} but relation bits {}",
                    mask[cell], any
                )));
            }
        }
        Ok(Self {
            supervoxel_size,
            n_voxels,
            n_super,
            relations,
            mask,
        })
    }

    pub fn supervoxel_size(&self) -> usize {
        self.supervoxel_size
    }

    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn n_super(&self) -> usize {
        self.n_super
    }

    pub fn relation(&self, kind: RelationKind) -> &[bool] {
        &self.relations[kind.index()]
    }

    pub fn relations(&self) -> &[Vec<bool>; 4] {
        &self.relations
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, kind: RelationKind, voxel: usize, sv: usize) -> bool {
        self.relations[kind.index()][voxel * self.n_super + sv]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Real-valued relation matrices with the same layout as [`RelationSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct RelationPrediction {
    n_voxels: usize,
    n_super: usize,
    values: [Vec<f64>; 4],
}

impl RelationPrediction {
    pub fn new(n_voxels: usize, n_super: usize, values: [Vec<f64>; 4]) -> Result<Self> {
        if values.iter().any(|v| v.len() != n_voxels * n_super) {
            return Err(Error::Shape(format!(
                "relation predictions must hold {n_voxels}x{n_super} entries"
            )));
        }
        Ok(Self {
            n_voxels,
            n_super,
            values,
        })
    }

    /// Prediction shaped like `truth`, every entry set to `value`.
    pub fn filled_like(truth: &RelationSet, value: f64) -> Self {
        let cells = truth.n_voxels * truth.n_super;
        Self {
            n_voxels: truth.n_voxels,
            n_super: truth.n_super,
            values: std::array::from_fn(|_| vec![value; cells]),
        }
    }

    /// The ground truth matrices as 0/1 reals.
    pub fn from_truth(truth: &RelationSet) -> Self {
        Self {
            n_voxels: truth.n_voxels,
            n_super: truth.n_super,
            values: std::array::from_fn(|m| {
                truth.relations[m]
                    .iter()
                    .map(|&b| if b { 1.0 } else { 0.0 })
                    .collect()
            }),
        }
    }

    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn n_super(&self) -> usize {
        self.n_super
    }

    pub fn values(&self) -> &[Vec<f64>; 4] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec<f64>; 4] {
        &mut self.values
    }

    pub fn relation(&self, kind: RelationKind) -> &[f64] {
        &self.values[kind.index()]
    }

    fn check_layout(&self, n_voxels: usize, n_super: usize) -> Result<()> {
        if self.n_voxels != n_voxels || self.n_super != n_super {
            return Err(Error::Shape(format!(
                "relation predictions are {}x{}, expected {n_voxels}x{n_super}",
                self.n_voxels, self.n_super
            )));
        }
        Ok(())
    }
}

#[derive(Default, Clone)]
struct BlockSummary {
    any_known: bool,
    has_free: bool,
    occupied: Vec<bool>,
    distinct_occupied: usize,
}

fn summarize_blocks(grid: &SemanticGrid, layout: &SupervoxelLayout) -> Vec<BlockSummary> {
    let k = grid.class_count();
    (0..layout.n_super())
        .map(|sv| {
            let mut summary = BlockSummary {
                occupied: vec![false; k],
                ..Default::default()
            };
            for v in layout.members(sv) {
                match grid.labels()[v] {
                    UNKNOWN => continue,
                    FREE => summary.has_free = true,
                    c => {
                        if !summary.occupied[c as usize] {
                            summary.occupied[c as usize] = true;
                            summary.distinct_occupied += 1;
                        }
                    }
                }
                summary.any_known = true;
            }
            summary
        })
        .collect()
}

/// Which relations occur between each voxel and the labelled members of each supervoxel.
pub fn build_relation_ground_truth(grid: &SemanticGrid, s: usize) -> Result<RelationSet> {
    let layout = SupervoxelLayout::new(grid.dims(), s)?;
    let n = layout.n_voxels();
    let n_super = layout.n_super();
    let blocks = summarize_blocks(grid, &layout);
    let mut relations: [Vec<bool>; 4] = std::array::from_fn(|_| vec![false; n * n_super]);
    let mut mask = vec![false; n * n_super];

    for (i, &label) in grid.labels().iter().enumerate() {
        if label == UNKNOWN {
            continue;
        }
        for (j, block) in blocks.iter().enumerate() {
            if !block.any_known {
                continue;
            }
            let cell = i * n_super + j;
            mask[cell] = true;
            let bits = if label == FREE {
                [block.has_free, block.distinct_occupied > 0, false, false]
            } else {
                let same = block.occupied[label as usize];
                [
                    false,
                    block.has_free,
                    same,
                    block.distinct_occupied > usize::from(same),
                ]
            };
            for (rel, bit) in relations.iter_mut().zip(bits) {
                rel[cell] = bit;
            }
        }
    }
    Ok(RelationSet {
        supervoxel_size: s,
        n_voxels: n,
        n_super,
        relations,
        mask,
    })
}

/// Mean feature of each supervoxel's `s³` members.
pub fn supervoxel_pool(features: &Feature3D, dims: Dims, s: usize) -> Result<Feature3D> {
    let layout = SupervoxelLayout::new(dims, s)?;
    if features.rows() != dims.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} voxels",
            features.rows(),
            dims.len()
        )));
    }
    let e = features.channels();
    let inv = 1.0 / (s * s * s) as f64;
    let mut out = Feature3D::zeros(layout.n_super(), e);
    for sv in 0..layout.n_super() {
        let row = out.row_mut(sv);
        for v in layout.members(sv) {
            for (o, f) in row.iter_mut().zip(features.row(v)) {
                *o += f;
            }
        }
        row.iter_mut().for_each(|o| *o *= inv);
    }
    Ok(out)
}

/// Context gathering: for each relation `m`, `Â^m · sv_features`, concatenated
/// over relations into an `N × 4E` matrix. Cells with `mask = false` count as 0.
pub fn relation_aggregate(
    predictions: &RelationPrediction,
    mask: &[bool],
    sv_features: &Feature3D,
) -> Result<Feature3D> {
    let n = predictions.n_voxels;
    let n_super = predictions.n_super;
    if mask.len() != n * n_super || sv_features.rows() != n_super {
        return Err(Error::Shape(format!(
            "relations {n}x{n_super}, mask {}, supervoxel features {} rows",
            mask.len(),
            sv_features.rows()
        )));
    }
    let e = sv_features.channels();
    let mut out = Feature3D::zeros(n, 4 * e);
    for i in 0..n {
        let row = out.row_mut(i);
        for (m, values) in predictions.values.iter().enumerate() {
            let block = &mut row[m * e..(m + 1) * e];
            for j in 0..n_super {
                let cell = i * n_super + j;
                if !mask[cell] || values[cell] == 0.0 {
                    continue;
                }
                let a = values[cell];
                for (o, f) in block.iter_mut().zip(sv_features.row(j)) {
                    *o += a * f;
                }
            }
        }
    }
    Ok(out)
}

/// Loss value and gradient with respect to the four relation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationLoss {
    pub value: f64,
    pub grad: [Vec<f64>; 4],
    /// Positive-class weight `w_m` per relation; `None` when the relation was skipped.
    pub weights: [Option<f64>; 4],
}

struct RelationStats {
    masked: usize,
    weights: [Option<f64>; 4],
}

fn relation_stats(truth: &RelationSet) -> Result<RelationStats> {
    let masked = truth.masked_count();
    if masked == 0 {
        return Err(Error::Degenerate("relation mask is empty".into()));
    }
    let weights = std::array::from_fn(|m| {
        let positives = truth.relations[m]
            .iter()
            .zip(&truth.mask)
            .filter(|(a, k)| **a && **k)
            .count();
        (positives > 0).then(|| (masked - positives) as f64 / positives as f64)
    });
    Ok(RelationStats { masked, weights })
}

/// Class-balanced multi-label BCE over masked cells, on probabilities in (0, 1).
///
/// Per relation: mean over masked cells of `-[(1-A)·ln(1-Â) + w·A·ln Â]` with
/// `w = #neg / #pos`; relations with no positive cell are skipped. Predictions
/// are clamped to `[ε, 1-ε]` and the gradient is that of the clamped loss.
pub fn relation_loss(
    predictions: &RelationPrediction,
    truth: &RelationSet,
) -> Result<RelationLoss> {
    predictions.check_layout(truth.n_voxels, truth.n_super)?;
    let stats = relation_stats(truth)?;
    let inv = 1.0 / stats.masked as f64;
    let mut value = 0.0;
    let mut grad: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; predictions.values[0].len()]);
    for m in 0..4 {
        let Some(w) = stats.weights[m] else { continue };
        let mut sum = 0.0;
        for (cell, &a_hat) in predictions.values[m].iter().enumerate() {
            if !truth.mask[cell] {
                continue;
            }
            let clamped = a_hat.clamp(RELATION_EPS, 1.0 - RELATION_EPS);
            let inside = clamped == a_hat;
            if truth.relations[m][cell] {
                sum -= w * clamped.ln();
                if inside {
                    grad[m][cell] = -w / clamped * inv;
                }
            } else {
                sum -= (1.0 - clamped).ln();
                if inside {
                    grad[m][cell] = 1.0 / (1.0 - clamped) * inv;
                }
            }
        }
        value += sum * inv;
    }
    Ok(RelationLoss {
        value,
        grad,
        weights: stats.weights,
    })
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// [`relation_loss`] evaluated on pre-sigmoid logits, without clamping.
/// The gradient is with respect to the logits.
pub fn relation_loss_logits(
    logits: &RelationPrediction,
    truth: &RelationSet,
) -> Result<RelationLoss> {
    logits.check_layout(truth.n_voxels, truth.n_super)?;
    let stats = relation_stats(truth)?;
    let inv = 1.0 / stats.masked as f64;
    let mut value = 0.0;
    let mut grad: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; logits.values[0].len()]);
    for m in 0..4 {
        let Some(w) = stats.weights[m] else { continue };
        let mut sum = 0.0;
        for (cell, &z) in logits.values[m].iter().enumerate() {
            if !truth.mask[cell] {
                continue;
            }
            // -ln σ(z) = softplus(-z), -ln(1 - σ(z)) = softplus(z)
            if truth.relations[m][cell] {
                sum += w * softplus(-z);
                grad[m][cell] = -w * sigmoid(-z) * inv;
            } else {
                sum += softplus(z);
                grad[m][cell] = sigmoid(z) * inv;
            }
        }
        value += sum * inv;
    }
    Ok(RelationLoss {
        value,
        grad,
        weights: stats.weights,
    })
}

/// Probability that each relation occurs between voxel `i` and supervoxel `j`
/// when voxel classes are drawn independently from `probs`.
///
/// Only members of `j` with a defined label in `labels` take part, matching the
/// support of the ground truth. One-hot `probs` reproduce the ground truth exactly.
pub fn expected_relations(
    probs: &ProbGrid,
    labels: &SemanticGrid,
    s: usize,
) -> Result<RelationPrediction> {
    if probs.dims() != labels.dims() || probs.class_count() != labels.class_count() {
        return Err(Error::Shape(
            "probabilities and labels disagree in shape".into(),
        ));
    }
    let layout = SupervoxelLayout::new(labels.dims(), s)?;
    let n = layout.n_voxels();
    let n_super = layout.n_super();
    let members: Vec<Vec<usize>> = (0..n_super)
        .map(|sv| {
            layout
                .members(sv)
                .filter(|&v| labels.labels()[v] != UNKNOWN)
                .collect()
        })
        .collect();
    let mut values: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n * n_super]);
    for i in 0..n {
        let p = probs.voxel(i);
        for (j, block) in members.iter().enumerate() {
            // Product of per-pair "relation absent" probabilities.
            let mut absent = [1.0f64; 4];
            for &v in block {
                let q = probs.voxel(v);
                let same_occupied: f64 = p.iter().zip(q).skip(1).map(|(a, b)| a * b).sum();
                let both_occupied = (1.0 - p[0]) * (1.0 - q[0]);
                let pair = [
                    p[0] * q[0],
                    p[0] * (1.0 - q[0]) + (1.0 - p[0]) * q[0],
                    same_occupied,
                    (both_occupied - same_occupied).max(0.0),
                ];
                for (a, r) in absent.iter_mut().zip(pair) {
                    *a *= 1.0 - r;
                }
            }
            let cell = i * n_super + j;
            for m in 0..4 {
                values[m][cell] = 1.0 - absent[m];
            }
        }
    }
    RelationPrediction::new(n, n_super, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cube(labels: Vec<u8>, classes: u8) -> SemanticGrid {
        SemanticGrid::new(Dims::new(2, 2, 2), [0.0; 3], 1.0, classes, labels).unwrap()
    }

    #[test]
    fn pair_relations() {
        assert_eq!(pair_relation(0, 0), RelationKind::FreeSimilar);
        assert_eq!(pair_relation(0, 3), RelationKind::FreeDifferent);
        assert_eq!(pair_relation(3, 0), RelationKind::FreeDifferent);
        assert_eq!(pair_relation(3, 2), RelationKind::OccupiedDifferent);
        assert_eq!(pair_relation(3, 3), RelationKind::OccupiedSimilar);
    }

    #[test]
    fn all_free_cube() {
        let rel = build_relation_ground_truth(&cube(vec![0; 8], 3), 2).unwrap();
        assert_eq!(rel.n_super(), 1);
        assert!(rel.relation(RelationKind::FreeSimilar).iter().all(|&b| b));
        for kind in &RelationKind::ALL[1..] {
            assert!(rel.relation(*kind).iter().all(|&b| !b));
        }
        assert!(rel.mask().iter().all(|&b| b));
    }

    #[test]
    fn half_free_half_car() {
        let rel = build_relation_ground_truth(&cube(vec![0, 0, 0, 0, 2, 2, 2, 2], 3), 2).unwrap();
        for v in 0..4 {
            assert!(rel.get(RelationKind::FreeSimilar, v, 0));
            assert!(rel.get(RelationKind::FreeDifferent, v, 0));
            assert!(!rel.get(RelationKind::OccupiedSimilar, v, 0));
            assert!(!rel.get(RelationKind::OccupiedDifferent, v, 0));
        }
        for v in 4..8 {
            assert!(!rel.get(RelationKind::FreeSimilar, v, 0));
            assert!(rel.get(RelationKind::FreeDifferent, v, 0));
            assert!(rel.get(RelationKind::OccupiedSimilar, v, 0));
            assert!(!rel.get(RelationKind::OccupiedDifferent, v, 0));
        }
    }

    #[test]
    fn unknown_cube_is_fully_masked() {
        let rel = build_relation_ground_truth(&cube(vec![UNKNOWN; 8], 3), 2).unwrap();
        assert_eq!(rel.masked_count(), 0);
        assert!(rel.relations().iter().all(|r| r.iter().all(|&b| !b)));
    }

    #[test]
    fn non_dividing_supervoxel() {
        let g = SemanticGrid::filled(Dims::new(4, 4, 3), 3, 0).unwrap();
        assert!(matches!(
            build_relation_ground_truth(&g, 2),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            build_relation_ground_truth(&g, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pooling() {
        let dims = Dims::new(2, 2, 2);
        let constant = Feature3D::new(8, 2, [1.0, -3.0].repeat(8)).unwrap();
        assert_eq!(
            supervoxel_pool(&constant, dims, 2).unwrap().row(0),
            &[1.0, -3.0]
        );

        let mut single = Feature3D::zeros(8, 3);
        single.row_mut(5)[0] = 1.0;
        assert_eq!(
            supervoxel_pool(&single, dims, 2).unwrap().row(0),
            &[0.125, 0.0, 0.0]
        );

        let f = Feature3D::new(8, 1, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(supervoxel_pool(&f, dims, 1).unwrap(), f);
        assert!(supervoxel_pool(&f, Dims::new(2, 2, 3), 2).is_err());
    }

    #[test]
    fn aggregate() {
        let sv = Feature3D::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mask = vec![true; 6];
        let zeros = RelationPrediction::new(3, 2, std::array::from_fn(|_| vec![0.0; 6])).unwrap();
        assert!(relation_aggregate(&zeros, &mask, &sv)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        // Voxel 0 selects supervoxel 0 through relation o_s only.
        let mut values: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; 6]);
        values[2][0] = 1.0;
        let pred = RelationPrediction::new(3, 2, values).unwrap();
        let out = relation_aggregate(&pred, &mask, &sv).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);

        let one = Feature3D::new(1, 2, vec![5.0, 7.0]).unwrap();
        let ones = RelationPrediction::new(3, 1, std::array::from_fn(|_| vec![1.0; 3])).unwrap();
        let out = relation_aggregate(&ones, &[true; 3], &one).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), &[5.0, 7.0, 5.0, 7.0, 5.0, 7.0, 5.0, 7.0]);
        }
        let masked = relation_aggregate(&ones, &[true, false, true], &one).unwrap();
        assert!(masked.row(1).iter().all(|&v| v == 0.0));
        assert!(relation_aggregate(&ones, &[true; 2], &one).is_err());
    }

    fn single_column_truth(bits: [bool; 4]) -> RelationSet {
        // Four voxels, one supervoxel; only relation f_s carries the bits.
        let mut relations: [Vec<bool>; 4] = std::array::from_fn(|_| vec![false; 4]);
        relations[0] = bits.to_vec();
        for (cell, bit) in bits.iter().enumerate() {
            if !bit {
                relations[1][cell] = true;
            }
        }
        RelationSet::from_parts(1, 4, 1, relations, vec![true; 4]).unwrap()
    }

    #[test]
    fn positive_weight_is_negative_to_positive_ratio() {
        let truth = single_column_truth([true, false, false, false]);
        let pred = RelationPrediction::filled_like(&truth, 0.5);
        let loss = relation_loss(&pred, &truth).unwrap();
        assert_eq!(loss.weights[0], Some(3.0));
        assert_eq!(loss.weights[1], Some(1.0 / 3.0));
        assert_eq!(loss.weights[2], None);
        assert_eq!(loss.weights[3], None);
    }

    #[test]
    fn perfect_relation_prediction() {
        let truth = build_relation_ground_truth(&cube(vec![0, 1, 2, 0, 2, 2, 1, 0], 3), 1).unwrap();
        let loss = relation_loss(&RelationPrediction::from_truth(&truth), &truth).unwrap();
        assert!(loss.value <= 4.0 * RELATION_EPS * 10.0, "{}", loss.value);
    }

    #[test]
    fn logit_path_matches_probability_path() {
        let truth =
            build_relation_ground_truth(&cube(vec![0, 1, 2, 0, 2, UNKNOWN, 1, 0], 3), 1).unwrap();
        let mut logits = RelationPrediction::filled_like(&truth, 0.0);
        for (m, v) in logits.values_mut().iter_mut().enumerate() {
            for (cell, x) in v.iter_mut().enumerate() {
                *x = ((cell * 7 + m * 3) % 11) as f64 * 0.4 - 2.0;
            }
        }
        let probs = RelationPrediction::new(
            logits.n_voxels(),
            logits.n_super(),
            std::array::from_fn(|m| logits.values()[m].iter().map(|&z| sigmoid(z)).collect()),
        )
        .unwrap();
        let fused = relation_loss_logits(&logits, &truth).unwrap();
        let plain = relation_loss(&probs, &truth).unwrap();
        assert_relative_eq!(fused.value, plain.value, max_relative = 1e-12);
        for m in 0..4 {
            for cell in 0..probs.values()[m].len() {
                let p = probs.values()[m][cell];
                // chain rule through the sigmoid
                assert_relative_eq!(
                    fused.grad[m][cell],
                    plain.grad[m][cell] * p * (1.0 - p),
                    max_relative = 1e-9,
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let truth = build_relation_ground_truth(&cube(vec![UNKNOWN; 8], 3), 2).unwrap();
        let pred = RelationPrediction::filled_like(&truth, 0.5);
        assert!(matches!(
            relation_loss(&pred, &truth),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn expected_relations_of_one_hot_is_truth() {
        let grid = cube(vec![0, 1, 2, UNKNOWN, 2, 2, 1, 0], 3);
        let truth = build_relation_ground_truth(&grid, 2).unwrap();
        let probs = ProbGrid::one_hot(&grid, 0).unwrap();
        let expected = expected_relations(&probs, &grid, 2).unwrap();
        for m in 0..4 {
            for cell in 0..truth.mask().len() {
                if truth.mask()[cell] {
                    let want = if truth.relations()[m][cell] { 1.0 } else { 0.0 };
                    assert_eq!(expected.values()[m][cell], want);
                }
            }
        }
    }
}
