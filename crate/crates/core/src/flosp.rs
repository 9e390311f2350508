//! Line-of-sight lifting of 2D feature maps onto a voxel grid.
//!
//! Every voxel centroid is projected into the image; each pyramid level is
//! sampled at the projected location (scaled by `1/s`) and the samples are
//! summed over levels. Voxels that do not project into the image receive a
//! zero feature row. The operator is linear in the pyramid values, and
//! [`flosp_adjoint`] applies its exact transpose.
//!
//! Summation order is fixed (levels ascending, voxels in flat order) so both
//! directions are bit-reproducible.

use crate::error::{Error, Result};
use crate::grid::{CameraModel, SemanticGrid};

/// Interpolation kernel used when sampling a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Bilinear over the four surrounding pixel centres, zero outside the map.
    #[default]
    Bilinear,
    /// Nearest pixel centre, zero outside the map. Intended for debugging.
    Nearest,
}

/// One pyramid level: a `height × width × channels` map, row-major then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    scale: u32,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Feature vector of pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize, channels: usize) -> &[f64] {
        let start = (y * self.width + x) * channels;
        &self.data[start..start + channels]
    }
}

/// Sizes and scales of a pyramid, without its values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidShape {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub scales: Vec<u32>,
}

impl PyramidShape {
    /// Map size `(ceil(W/s), ceil(H/s))` at scale `s`.
    pub fn level_size(&self, scale: u32) -> (usize, usize) {
        (
            self.width.div_ceil(scale) as usize,
            self.height.div_ceil(scale) as usize,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Shape("pyramid base size must be >= 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Shape("pyramid needs at least one channel".into()));
        }
        if self.scales.is_empty() {
            return Err(Error::Shape("pyramid needs at least one scale".into()));
        }
        if self.scales[0] == 0 || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Shape(format!(
                "scales must be >= 1 and strictly increasing, got {:?}",
                self.scales
            )));
        }
        Ok(())
    }
}

/// Multi-scale 2D feature maps sharing a channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    shape: PyramidShape,
    levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    /// Builds a pyramid from `(scale, values)` pairs; each level must hold
    /// `ceil(H/s) · ceil(W/s) · channels` values.
    pub fn new(
        width: u32,
        height: u32,
        channels: usize,
        levels: Vec<(u32, Vec<f64>)>,
    ) -> Result<Self> {
        let shape = PyramidShape {
            width,
            height,
            channels,
            scales: levels.iter().map(|(s, _)| *s).collect(),
        };
        shape.validate()?;
        let levels = levels
            .into_iter()
            .map(|(scale, data)| {
                let (w, h) = shape.level_size(scale);
                if data.len() != w * h * channels {
                    return Err(Error::Shape(format!(
                        "scale {scale}: expected {}x{}x{channels} = {} values, got {}",
                        h,
                        w,
                        w * h * channels,
                        data.len()
                    )));
                }
                Ok(FeatureMap {
                    scale,
                    width: w,
                    height: h,
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shape, levels })
    }

    pub fn zeros(shape: &PyramidShape) -> Result<Self> {
        shape.validate()?;
        let levels = shape
            .scales
            .iter()
            .map(|&scale| {
                let (w, h) = shape.level_size(scale);
                FeatureMap {
                    scale,
                    width: w,
                    height: h,
                    data: vec![0.0; w * h * shape.channels],
                }
            })
            .collect();
        Ok(Self {
            shape: shape.clone(),
            levels,
        })
    }

    pub fn shape(&self) -> &PyramidShape {
        &self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [FeatureMap] {
        &mut self.levels
    }

    /// Euclidean inner product over all levels.
    pub fn dot(&self, other: &FeaturePyramid) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(x, y)| x * y)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Projection of a voxel centroid into the image at scale 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Per-voxel image coordinates; `None` for voxels behind the camera or outside the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTable {
    width: u32,
    height: u32,
    entries: Vec<Option<Projection>>,
}

impl ProjectionTable {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn entries(&self) -> &[Option<Projection>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.entries[idx].is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}

/// Projects every voxel centroid of `grid` through `camera`.
pub fn project_centroids(camera: &CameraModel, grid: &SemanticGrid) -> ProjectionTable {
    let entries = (0..grid.len())
        .map(|idx| project_point(camera, camera.world_to_camera(grid.centroid(idx))))
        .collect();
    ProjectionTable {
        width: camera.width,
        height: camera.height,
        entries,
    }
}

/// Perspective projection of a camera-space point; `None` unless it lands in the image
/// with strictly positive depth.
pub fn project_point(camera: &CameraModel, p: [f64; 3]) -> Option<Projection> {
    let [x, y, z] = p;
    if z.is_nan() || z <= 0.0 {
        return None;
    }
    let u = camera.fx * x / z + camera.cx;
    let v = camera.fy * y / z + camera.cy;
    let inside =
        (0.0..camera.width as f64).contains(&u) && (0.0..camera.height as f64).contains(&v);
    inside.then_some(Projection { u, v, depth: z })
}

/// Dense `rows × channels` voxel features in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature3D {
    rows: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Feature3D {
    pub fn new(rows: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * channels {
            return Err(Error::Shape(format!(
                "{} values for {rows} rows x {channels} channels",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            channels,
            data,
        })
    }

    pub fn zeros(rows: usize, channels: usize) -> Self {
        Self {
            rows,
            channels,
            data: vec![0.0; rows * channels],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn dot(&self, other: &Feature3D) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Visits the pixels (flat index into the level, weight) that contribute to a
/// sample at continuous map coordinate `(x, y)`.
///
/// Forward sampling and the adjoint scatter both go through this function, so
/// the two share exactly the same linear map.
#[inline]
fn for_each_tap(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    sampling: Sampling,
    mut visit: impl FnMut(usize, f64),
) {
    let inside =
        |px: i64, py: i64| px >= 0 && py >= 0 && (px as usize) < width && (py as usize) < height;
    match sampling {
        Sampling::Nearest => {
            let px = (x + 0.5).floor() as i64;
            let py = (y + 0.5).floor() as i64;
            if inside(px, py) {
                visit(py as usize * width + px as usize, 1.0);
            }
        }
        Sampling::Bilinear => {
            let x0 = x.floor();
            let y0 = y.floor();
            let tx = x - x0;
            let ty = y - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let taps = [
                (x0, y0, (1.0 - tx) * (1.0 - ty)),
                (x0 + 1, y0, tx * (1.0 - ty)),
                (x0, y0 + 1, (1.0 - tx) * ty),
                (x0 + 1, y0 + 1, tx * ty),
            ];
            for (px, py, w) in taps {
                if w != 0.0 && inside(px, py) {
                    visit(py as usize * width + px as usize, w);
                }
            }
        }
    }
}

fn check_table(shape: &PyramidShape, table: &ProjectionTable) -> Result<()> {
    if shape.width != table.width || shape.height != table.height {
        return Err(Error::Shape(format!(
            "pyramid base {}x{} does not match camera image {}x{}",
            shape.width, shape.height, table.width, table.height
        )));
    }
    Ok(())
}

/// Lifts `pyramid` onto the voxels of `table` with bilinear sampling.
pub fn flosp_forward(pyramid: &FeaturePyramid, table: &ProjectionTable) -> Result<Feature3D> {
    flosp_forward_with(pyramid, table, Sampling::Bilinear)
}

pub fn flosp_forward_with(
    pyramid: &FeaturePyramid,
    table: &ProjectionTable,
    sampling: Sampling,
) -> Result<Feature3D> {
    check_table(pyramid.shape(), table)?;
    let channels = pyramid.channels();
    let mut out = Feature3D::zeros(table.len(), channels);
    for (idx, proj) in table.entries.iter().enumerate() {
        let Some(p) = proj else { continue };
        let row = out.row_mut(idx);
        for level in &pyramid.levels {
            let s = level.scale as f64;
            for_each_tap(
                level.width,
                level.height,
                p.u / s,
                p.v / s,
                sampling,
                |pix, w| {
                    let src = &level.data[pix * channels..(pix + 1) * channels];
                    for (o, f) in row.iter_mut().zip(src) {
                        *o += w * f;
                    }
                },
            );
        }
    }
    Ok(out)
}

/// Transpose of [`flosp_forward`] (bilinear): scatters voxel gradients back onto the pyramid.
pub fn flosp_adjoint(
    grad3d: &Feature3D,
    table: &ProjectionTable,
    shape: &PyramidShape,
) -> Result<FeaturePyramid> {
    flosp_adjoint_with(grad3d, table, shape, Sampling::Bilinear)
}

pub fn flosp_adjoint_with(
    grad3d: &Feature3D,
    table: &ProjectionTable,
    shape: &PyramidShape,
    sampling: Sampling,
) -> Result<FeaturePyramid> {
    check_table(shape, table)?;
    if grad3d.rows != table.len() || grad3d.channels != shape.channels {
        return Err(Error::Shape(format!(
            "gradient is {}x{}, expected {}x{}",
            grad3d.rows,
            grad3d.channels,
            table.len(),
            shape.channels
        )));
    }
    let channels = shape.channels;
    let mut out = FeaturePyramid::zeros(shape)?;
    for (idx, proj) in table.entries.iter().enumerate() {
        let Some(p) = proj else { continue };
        let g = grad3d.row(idx);
        for level in &mut out.levels {
            let s = level.scale as f64;
            let data = &mut level.data;
            for_each_tap(
                level.width,
                level.height,
                p.u / s,
                p.v / s,
                sampling,
                |pix, w| {
                    for (d, gi) in data[pix * channels..(pix + 1) * channels].iter_mut().zip(g) {
                        *d += w * gi;
                    }
                },
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use approx::assert_relative_eq;

    fn principal_camera() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, CameraModel::IDENTITY).unwrap()
    }

    /// Single voxel whose centroid sits at `center`.
    fn voxel_at(center: [f32; 3]) -> SemanticGrid {
        let origin = [center[0] - 0.05, center[1] - 0.05, center[2] - 0.05];
        SemanticGrid::new(Dims::new(1, 1, 1), origin, 0.1, 2, vec![0]).unwrap()
    }

    fn constant_pyramid(width: u32, height: u32, levels: &[(u32, Vec<f64>)]) -> FeaturePyramid {
        let channels = levels[0].1.len();
        let levels = levels
            .iter()
            .map(|(s, f)| {
                let w = width.div_ceil(*s) as usize;
                let h = height.div_ceil(*s) as usize;
                (
                    *s,
                    f.iter().cloned().cycle().take(w * h * channels).collect(),
                )
            })
            .collect();
        FeaturePyramid::new(width, height, channels, levels).unwrap()
    }

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let cam = principal_camera();
        let p = project_point(&cam, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!((p.u, p.v), (50.0, 50.0));
        let table = project_centroids(&cam, &voxel_at([0.0, 0.0, 1.0]));
        let p = table.entries()[0].unwrap();
        assert_relative_eq!(p.u, 50.0, epsilon = 1e-4);
        assert_relative_eq!(p.v, 50.0, epsilon = 1e-4);
    }

    #[test]
    fn right_edge_and_behind_are_invalid() {
        let cam = principal_camera();
        // u = 100 * 0.5 / 1 + 50 = 100 = W, outside [0, W).
        assert!(project_point(&cam, [0.5, 0.0, 1.0]).is_none());
        assert!(project_point(&cam, [0.0, 0.0, -1.0]).is_none());
        assert!(project_point(&cam, [0.0, 0.0, 0.0]).is_none());
        assert!(project_point(&cam, [0.499, 0.0, 1.0]).is_some());
    }

    #[test]
    fn constant_map_fills_valid_rows_only() {
        let cam = CameraModel::new(4.0, 4.0, 4.0, 4.0, 8, 8, CameraModel::IDENTITY).unwrap();
        // Column along the optical axis: behind the camera, at depth 0, in front.
        let grid =
            SemanticGrid::new(Dims::new(1, 1, 3), [-0.5, -0.5, -1.5], 1.0, 2, vec![0; 3]).unwrap();
        let table = project_centroids(&cam, &grid);
        assert_eq!(table.valid_count(), 1);
        let pyr = constant_pyramid(8, 8, &[(1, vec![1.5, -2.0])]);
        let f = flosp_forward(&pyr, &table).unwrap();
        assert_eq!(f.row(0), &[0.0, 0.0]);
        assert_eq!(f.row(1), &[0.0, 0.0]);
        assert_eq!(f.row(2), &[1.5, -2.0]);
    }

    #[test]
    fn scales_are_summed() {
        let cam = principal_camera();
        let table = project_centroids(&cam, &voxel_at([0.0, 0.0, 1.0]));
        let pyr = constant_pyramid(100, 100, &[(1, vec![1.0, 2.0]), (2, vec![10.0, 20.0])]);
        let f = flosp_forward(&pyr, &table).unwrap();
        assert_relative_eq!(f.row(0)[0], 11.0, epsilon = 1e-12);
        assert_relative_eq!(f.row(0)[1], 22.0, epsilon = 1e-12);
    }

    fn one_hot_pyramid(width: u32, height: u32, x: usize, y: usize) -> FeaturePyramid {
        let mut data = vec![0.0; (width * height) as usize];
        data[y * width as usize + x] = 1.0;
        FeaturePyramid::new(width, height, 1, vec![(1, data)]).unwrap()
    }

    fn table_at(width: u32, height: u32, u: f64, v: f64) -> ProjectionTable {
        ProjectionTable {
            width,
            height,
            entries: vec![Some(Projection { u, v, depth: 1.0 })],
        }
    }

    #[test]
    fn sampling_on_pixel_center_reads_that_pixel() {
        let pyr = one_hot_pyramid(4, 4, 2, 1);
        for sampling in [Sampling::Bilinear, Sampling::Nearest] {
            let hit = flosp_forward_with(&pyr, &table_at(4, 4, 2.0, 1.0), sampling).unwrap();
            assert_eq!(hit.row(0), &[1.0]);
            let miss = flosp_forward_with(&pyr, &table_at(4, 4, 1.0, 1.0), sampling).unwrap();
            assert_eq!(miss.row(0), &[0.0]);
        }
    }

    #[test]
    fn bilinear_weights_and_zero_padding() {
        let pyr = one_hot_pyramid(4, 4, 3, 3);
        let f = flosp_forward(&pyr, &table_at(4, 4, 2.75, 2.5)).unwrap();
        assert_relative_eq!(f.row(0)[0], 0.75 * 0.5, epsilon = 1e-15);
        // Beyond the last pixel centre the missing neighbours read as zero.
        let f = flosp_forward(&pyr, &table_at(4, 4, 3.5, 3.0)).unwrap();
        assert_relative_eq!(f.row(0)[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn adjoint_of_pixel_center_hit() {
        let shape = PyramidShape {
            width: 4,
            height: 4,
            channels: 2,
            scales: vec![1],
        };
        let table = table_at(4, 4, 1.0, 2.0);
        let g = Feature3D::new(1, 2, vec![3.0, -1.0]).unwrap();
        let adj = flosp_adjoint(&g, &table, &shape).unwrap();
        let level = &adj.levels()[0];
        assert_eq!(level.pixel(1, 2, 2), &[3.0, -1.0]);
        let total: f64 = level.data().iter().map(|v| v.abs()).sum();
        assert_eq!(total, 4.0);

        let zero = flosp_adjoint(&Feature3D::zeros(1, 2), &table, &shape).unwrap();
        assert!(zero.levels()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let shape = PyramidShape {
            width: 4,
            height: 4,
            channels: 2,
            scales: vec![1, 2],
        };
        let table = table_at(4, 4, 1.0, 1.0);
        assert!(matches!(
            flosp_adjoint(&Feature3D::zeros(1, 3), &table, &shape),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            flosp_adjoint(&Feature3D::zeros(2, 2), &table, &shape),
            Err(Error::Shape(_))
        ));
        let pyr = constant_pyramid(8, 8, &[(1, vec![1.0])]);
        assert!(matches!(flosp_forward(&pyr, &table), Err(Error::Shape(_))));
        assert!(
            FeaturePyramid::new(4, 4, 2, vec![(1, vec![0.0; 32]), (2, vec![0.0; 12])]).is_err()
        );
        assert!(FeaturePyramid::new(4, 4, 2, vec![(2, vec![0.0; 8]), (1, vec![0.0; 32])]).is_err());
    }

    #[test]
    fn level_sizes_use_ceil_division() {
        let shape = PyramidShape {
            width: 9,
            height: 5,
            channels: 1,
            scales: vec![1, 2, 4, 8],
        };
        assert_eq!(shape.level_size(1), (9, 5));
        assert_eq!(shape.level_size(2), (5, 3));
        assert_eq!(shape.level_size(4), (3, 2));
        assert_eq!(shape.level_size(8), (2, 1));
    }
}
