//! Deterministic synthetic scenes.
//!
//! A scene is a ground plane (class 1) filling the bottom voxel layer plus
//! axis-aligned boxes of classes `2..class_count`. All random draws come from
//! ChaCha8 seeded with [`ChaCha8Rng::seed_from_u64`]; each draw is
//! `next_u64() % n`. This keeps scenes bit-identical across platforms and
//! independent of `rand`'s range-sampling internals.
//!
//! Per box the draws are, in order: class, size x, size y, size z, corner x,
//! corner y, corner z. Later boxes overwrite earlier ones.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flosp::FeaturePyramid;
use crate::grid::{CameraModel, Dims, SemanticGrid, FREE, UNKNOWN};

/// Where the camera sits and what it sees.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPlacement {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    /// `[fx, fy, cx, cy]` in pixels.
    pub intrinsics: [f64; 4],
    pub width: u32,
    pub height: u32,
}

impl CameraPlacement {
    /// A 64×48 camera in front of the scene's `-y` face, above it and looking
    /// down into the grid. Some voxels near the top fall outside the view.
    pub fn overlooking(dims: Dims, voxel_size: f32) -> Self {
        let s = voxel_size as f64;
        let (ex, ey, ez) = (dims.x as f64 * s, dims.y as f64 * s, dims.z as f64 * s);
        Self {
            position: [0.5 * ex, -0.45 * ey, ez + 0.45 * ey],
            look_at: [0.5 * ex, 0.55 * ey, 0.0],
            intrinsics: [64.0, 64.0, 31.5, 23.5],
            width: 64,
            height: 48,
        }
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::look_at(
            self.position,
            self.look_at,
            self.intrinsics,
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub dims: Dims,
    pub voxel_size: f32,
    pub class_count: u8,
    pub n_boxes: usize,
    pub camera: CameraPlacement,
}

impl SceneSpec {
    /// Scene with the default camera for `dims`, voxels of 0.25 m at the origin.
    pub fn new(seed: u64, dims: Dims, class_count: u8, n_boxes: usize) -> Self {
        let voxel_size = 0.25;
        Self {
            seed,
            dims,
            voxel_size,
            class_count,
            n_boxes,
            camera: CameraPlacement::overlooking(dims, voxel_size),
        }
    }
}

impl Default for SceneSpec {
    /// 8×8×4 voxels, 4 classes, 2 boxes.
    fn default() -> Self {
        Self::new(0, Dims::new(8, 8, 4), 4, 2)
    }
}

/// Axis-aligned box in voxel coordinates, half-open `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneBox {
    pub class: u8,
    pub min: [usize; 3],
    pub max: [usize; 3],
}

fn draw(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// Box layout for `spec`, in placement order.
pub fn scene_boxes(spec: &SceneSpec) -> Result<Vec<SceneBox>> {
    let d = spec.dims;
    if spec.n_boxes == 0 {
        return Ok(Vec::new());
    }
    if spec.class_count < 3 {
        return Err(Error::Spec(format!(
            "boxes need classes >= 3 (free, ground, objects), got {}",
            spec.class_count
        )));
    }
    if d.z < 2 {
        return Err(Error::Spec(
            "boxes need at least one voxel layer above the ground".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let object_classes = spec.class_count as usize - 2;
    let extent = [d.x, d.y, d.z - 1];
    let mut boxes = Vec::with_capacity(spec.n_boxes);
    for _ in 0..spec.n_boxes {
        let class = 2 + draw(&mut rng, object_classes) as u8;
        let mut size = [0; 3];
        for (s, &e) in size.iter_mut().zip(&extent) {
            *s = 1 + draw(&mut rng, (e / 2).max(1));
        }
        let mut min = [0; 3];
        for a in 0..3 {
            min[a] = draw(&mut rng, extent[a] - size[a] + 1);
        }
        min[2] += 1;
        let max = [min[0] + size[0], min[1] + size[1], min[2] + size[2]];
        if max[0] > d.x || max[1] > d.y || max[2] > d.z {
            return Err(Error::Spec(format!(
                "box {min:?}..{max:?} exceeds grid {d:?}"
            )));
        }
        boxes.push(SceneBox { class, min, max });
    }
    Ok(boxes)
}

/// Ground-truth grid and camera for `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(SemanticGrid, CameraModel)> {
    let d = spec.dims;
    if d.x == 0 || d.y == 0 || d.z == 0 {
        return Err(Error::Spec(format!("empty grid {d:?}")));
    }
    if spec.class_count < 2 {
        return Err(Error::Spec(
            "scenes need at least free and ground classes".into(),
        ));
    }
    let mut labels = vec![FREE; d.len()];
    for j in 0..d.y {
        for i in 0..d.x {
            labels[d.index(i, j, 0)] = 1;
        }
    }
    for b in scene_boxes(spec)? {
        for k in b.min[2]..b.max[2] {
            for j in b.min[1]..b.max[1] {
                for i in b.min[0]..b.max[0] {
                    labels[d.index(i, j, k)] = b.class;
                }
            }
        }
    }
    let grid = SemanticGrid::new(d, [0.0; 3], spec.voxel_size, spec.class_count, labels)
        .map_err(|e| Error::Spec(e.to_string()))?;
    let camera = spec
        .camera
        .camera()
        .map_err(|e| Error::Spec(e.to_string()))?;
    Ok((grid, camera))
}

/// Per-pixel class image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticImage {
    pub width: u32,
    pub height: u32,
    pub class_count: u8,
    pub labels: Vec<u8>,
}

impl SemanticImage {
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[(y * self.width + x) as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visibility {
    /// Class of the first occupied voxel along each pixel ray, free if none.
    pub image: SemanticImage,
    /// Voxels traversed by some pixel ray up to and including its first hit.
    pub visible: Vec<bool>,
}

/// Casts one ray per pixel centre through the grid with a 3D DDA.
pub fn raycast_visibility(grid: &SemanticGrid, camera: &CameraModel) -> Visibility {
    let mut visible = vec![false; grid.len()];
    let mut labels = Vec::with_capacity((camera.width * camera.height) as usize);
    let origin = camera.position();
    for v in 0..camera.height {
        for u in 0..camera.width {
            let dir = camera.pixel_ray(u as f64, v as f64);
            let mut hit = FREE;
            traverse(grid, origin, dir, |idx| {
                visible[idx] = true;
                let l = grid.labels()[idx];
                if l != FREE && l != UNKNOWN {
                    hit = l;
                    false
                } else {
                    true
                }
            });
            labels.push(hit);
        }
    }
    Visibility {
        image: SemanticImage {
            width: camera.width,
            height: camera.height,
            class_count: grid.class_count() as u8,
            labels,
        },
        visible,
    }
}

/// Visits voxels pierced by the ray `origin + t·dir`, `t ≥ 0`, in order, until
/// `visit` returns false or the ray leaves the grid.
pub fn traverse(
    grid: &SemanticGrid,
    origin: [f64; 3],
    dir: [f64; 3],
    mut visit: impl FnMut(usize) -> bool,
) {
    let dims = grid.dims().as_array();
    let size = grid.voxel_size() as f64;
    let g0: [f64; 3] = std::array::from_fn(|a| (origin[a] - grid.origin()[a] as f64) / size);
    let d: [f64; 3] = std::array::from_fn(|a| dir[a] / size);

    let mut t_enter = 0.0f64;
    let mut t_exit = f64::INFINITY;
    for a in 0..3 {
        let extent = dims[a] as f64;
        if d[a] == 0.0 {
            if g0[a] < 0.0 || g0[a] >= extent {
                return;
            }
            continue;
        }
        let t1 = -g0[a] / d[a];
        let t2 = (extent - g0[a]) / d[a];
        t_enter = t_enter.max(t1.min(t2));
        t_exit = t_exit.min(t1.max(t2));
    }
    if t_enter >= t_exit {
        return;
    }

    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let p = g0[a] + d[a] * t_enter;
        cell[a] = (p.floor() as i64).clamp(0, dims[a] as i64 - 1);
        if d[a] > 0.0 {
            step[a] = 1;
            t_max[a] = ((cell[a] + 1) as f64 - g0[a]) / d[a];
            t_delta[a] = 1.0 / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (cell[a] as f64 - g0[a]) / d[a];
            t_delta[a] = -1.0 / d[a];
        }
    }

    let grid_dims = grid.dims();
    while grid_dims.contains(cell[0], cell[1], cell[2]) {
        let idx = grid_dims.index(cell[0] as usize, cell[1] as usize, cell[2] as usize);
        if !visit(idx) {
            return;
        }
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[a] > t_exit {
            return;
        }
        cell[a] += step[a];
        t_max[a] += t_delta[a];
    }
}

/// Marks occupied voxels that no pixel ray reaches as UNKNOWN.
pub fn mask_unknown(grid: &SemanticGrid, visibility: &Visibility) -> Result<SemanticGrid> {
    if visibility.visible.len() != grid.len() {
        return Err(Error::Shape("visibility mask does not match grid".into()));
    }
    let labels = grid
        .labels()
        .iter()
        .zip(&visibility.visible)
        .map(|(&l, &seen)| if l != FREE && !seen { UNKNOWN } else { l })
        .collect();
    grid.with_labels(labels)
}

/// One-hot class maps padded to `channels`, area-averaged down to each scale.
pub fn render_feature_pyramid(
    image: &SemanticImage,
    scales: &[u32],
    channels: usize,
) -> Result<FeaturePyramid> {
    if channels < image.class_count as usize {
        return Err(Error::Spec(format!(
            "{channels} channels cannot one-hot encode {} classes",
            image.class_count
        )));
    }
    let (w, h) = (image.width as usize, image.height as usize);
    let levels = scales
        .iter()
        .map(|&s| {
            let s_us = s.max(1) as usize;
            let (lw, lh) = (w.div_ceil(s_us), h.div_ceil(s_us));
            let mut data = vec![0.0; lw * lh * channels];
            for y in 0..lh {
                for x in 0..lw {
                    let ys = y * s_us..((y + 1) * s_us).min(h);
                    let xs = x * s_us..((x + 1) * s_us).min(w);
                    let area = (ys.len() * xs.len()) as f64;
                    let cell = &mut data[(y * lw + x) * channels..(y * lw + x + 1) * channels];
                    for py in ys {
                        for px in xs.clone() {
                            let l = image.labels[py * w + px];
                            if l != UNKNOWN {
                                cell[l as usize] += 1.0 / area;
                            }
                        }
                    }
                }
            }
            (s, data)
        })
        .collect();
    FeaturePyramid::new(image.width, image.height, channels, levels)
}
