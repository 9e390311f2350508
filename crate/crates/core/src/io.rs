//! Binary file formats. All integers and floats are little-endian; there is no padding.
//!
//! | magic  | contents |
//! |--------|----------|
//! | `SSCV` | u8 version, u32 Dx Dy Dz, f32 origin[3], f32 voxel_size, u8 class_count, Dx·Dy·Dz label bytes (x-fastest) |
//! | `SSCP` | u8 version, u32 Dx Dy Dz, u8 class_count, Dx·Dy·Dz·class_count f32 (voxel-major, then class) |
//! | `SSCF` | u8 version, u32 W H, u8 n_scales, u32 E, then per scale: u32 s and ceil(H/s)·ceil(W/s)·E f32 (row-major, then channel) |
//! | `SSCR` | u8 version, u32 N, u32 n_super, u8 s, then f_s, f_d, o_s, o_d and mask bitmaps of ceil(N·n_super/8) bytes each (row-major, LSB-first) |
//! | `SSCT` | u8 version, u32 rows, u32 channels, rows·channels f32 (row-major) |
//!
//! Every format is at version 1.

use std::fs;
use std::path::Path;

use crate::crp::RelationSet;
use crate::error::{Error, Result};
use crate::flosp::{Feature3D, FeaturePyramid, PyramidShape};
use crate::grid::{Dims, ProbGrid, SemanticGrid};

pub const VERSION: u8 = 1;

pub const GRID_MAGIC: &[u8; 4] = b"SSCV";
pub const PROBS_MAGIC: &[u8; 4] = b"SSCP";
pub const PYRAMID_MAGIC: &[u8; 4] = b"SSCF";
pub const RELATIONS_MAGIC: &[u8; 4] = b"SSCR";
pub const FEATURES_MAGIC: &[u8; 4] = b"SSCT";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Self { bytes, pos: 0 };
        let found = r.take(4)?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn product(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Error::Format(format!("dimensions {parts:?} overflow")))
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.push(VERSION);
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_dims(r: &mut Reader<'_>) -> Result<Dims> {
    Ok(Dims::new(
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    ))
}

fn as_format(e: Error) -> Error {
    match e {
        Error::Format(_) => e,
        other => Error::Format(other.to_string()),
    }
}

pub fn encode_grid(grid: &SemanticGrid) -> Result<Vec<u8>> {
    let mut out = header(GRID_MAGIC);
    for d in grid.dims().as_array() {
        put_u32(&mut out, d)?;
    }
    for o in grid.origin() {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&grid.voxel_size().to_le_bytes());
    out.push(grid.class_count() as u8);
    out.extend_from_slice(grid.labels());
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<SemanticGrid> {
    let mut r = Reader::new(bytes, GRID_MAGIC)?;
    let dims = read_dims(&mut r)?;
    let n = product(&dims.as_array())?;
    let origin = [r.f32()?, r.f32()?, r.f32()?];
    let voxel_size = r.f32()?;
    let class_count = r.u8()?;
    let labels = r.take(n)?.to_vec();
    r.finish()?;
    SemanticGrid::new(dims, origin, voxel_size, class_count, labels).map_err(as_format)
}

pub fn encode_probs(probs: &ProbGrid) -> Result<Vec<u8>> {
    let mut out = header(PROBS_MAGIC);
    for d in probs.dims().as_array() {
        put_u32(&mut out, d)?;
    }
    let k = u8::try_from(probs.class_count())
        .map_err(|_| Error::Format("class_count does not fit in u8".into()))?;
    out.push(k);
    put_f32s(&mut out, probs.values());
    Ok(out)
}

pub fn decode_probs(bytes: &[u8]) -> Result<ProbGrid> {
    let mut r = Reader::new(bytes, PROBS_MAGIC)?;
    let dims = read_dims(&mut r)?;
    let class_count = r.u8()? as usize;
    let n = product(&[dims.x, dims.y, dims.z, class_count])?;
    let values = r.f32s(n)?;
    r.finish()?;
    ProbGrid::new(dims, class_count, values).map_err(as_format)
}

pub fn encode_pyramid(pyramid: &FeaturePyramid) -> Result<Vec<u8>> {
    let shape = pyramid.shape();
    let mut out = header(PYRAMID_MAGIC);
    put_u32(&mut out, shape.width as usize)?;
    put_u32(&mut out, shape.height as usize)?;
    let n_scales = u8::try_from(shape.scales.len())
        .map_err(|_| Error::Format("more than 255 scales".into()))?;
    out.push(n_scales);
    put_u32(&mut out, shape.channels)?;
    for level in pyramid.levels() {
        put_u32(&mut out, level.scale() as usize)?;
        put_f32s(&mut out, level.data());
    }
    Ok(out)
}

pub fn decode_pyramid(bytes: &[u8]) -> Result<FeaturePyramid> {
    let mut r = Reader::new(bytes, PYRAMID_MAGIC)?;
    let width = r.u32()?;
    let height = r.u32()?;
    let n_scales = r.u8()? as usize;
    let channels = r.u32()? as usize;
    let mut levels = Vec::with_capacity(n_scales);
    for _ in 0..n_scales {
        let scale = r.u32()?;
        if scale == 0 {
            return Err(Error::Format("scale 0 in pyramid".into()));
        }
        let shape = PyramidShape {
            width,
            height,
            channels,
            scales: vec![scale],
        };
        let (w, h) = shape.level_size(scale);
        levels.push((scale, r.f32s(product(&[w, h, channels])?)?));
    }
    r.finish()?;
    FeaturePyramid::new(width, height, channels, levels).map_err(as_format)
}

pub fn encode_relations(rel: &RelationSet) -> Result<Vec<u8>> {
    let mut out = header(RELATIONS_MAGIC);
    put_u32(&mut out, rel.n_voxels())?;
    put_u32(&mut out, rel.n_super())?;
    let s = u8::try_from(rel.supervoxel_size())
        .map_err(|_| Error::Format("supervoxel size does not fit in u8".into()))?;
    out.push(s);
    for bits in rel
        .relations()
        .iter()
        .map(Vec::as_slice)
        .chain([rel.mask()])
    {
        out.extend(pack_bits(bits));
    }
    Ok(out)
}

pub fn decode_relations(bytes: &[u8]) -> Result<RelationSet> {
    let mut r = Reader::new(bytes, RELATIONS_MAGIC)?;
    let n = r.u32()? as usize;
    let n_super = r.u32()? as usize;
    let s = r.u8()? as usize;
    let cells = product(&[n, n_super])?;
    let mut maps = Vec::with_capacity(5);
    for _ in 0..5 {
        maps.push(unpack_bits(r.take(cells.div_ceil(8))?, cells)?);
    }
    r.finish()?;
    let mask = maps.pop().unwrap();
    let relations: [Vec<bool>; 4] = maps.try_into().unwrap();
    RelationSet::from_parts(s, n, n_super, relations, mask).map_err(as_format)
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Result<Vec<bool>> {
    let bits: Vec<bool> = (0..bytes.len() * 8)
        .map(|i| bytes[i / 8] >> (i % 8) & 1 == 1)
        .collect();
    if bits[n..].iter().any(|&b| b) {
        return Err(Error::Format("non-zero padding bits in bitmap".into()));
    }
    Ok(bits[..n].to_vec())
}

pub fn encode_features(features: &Feature3D) -> Result<Vec<u8>> {
    let mut out = header(FEATURES_MAGIC);
    put_u32(&mut out, features.rows())?;
    put_u32(&mut out, features.channels())?;
    put_f32s(&mut out, features.data());
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Feature3D> {
    let mut r = Reader::new(bytes, FEATURES_MAGIC)?;
    let rows = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let data = r.f32s(product(&[rows, channels])?)?;
    r.finish()?;
    Feature3D::new(rows, channels, data).map_err(as_format)
}

macro_rules! file_pair {
    ($load:ident, $save:ident, $ty:ty, $decode:ident, $encode:ident) => {
        pub fn $load(path: impl AsRef<Path>) -> Result<$ty> {
            $decode(&fs::read(path)?)
        }

        pub fn $save(value: &$ty, path: impl AsRef<Path>) -> Result<()> {
            fs::write(path, $encode(value)?)?;
            Ok(())
        }
    };
}

file_pair!(load_grid, save_grid, SemanticGrid, decode_grid, encode_grid);
file_pair!(load_probs, save_probs, ProbGrid, decode_probs, encode_probs);
file_pair!(
    load_pyramid,
    save_pyramid,
    FeaturePyramid,
    decode_pyramid,
    encode_pyramid
);
file_pair!(
    load_relations,
    save_relations,
    RelationSet,
    decode_relations,
    encode_relations
);
file_pair!(
    load_features,
    save_features,
    Feature3D,
    decode_features,
    encode_features
);

pub fn load_camera(path: impl AsRef<Path>) -> Result<crate::grid::CameraModel> {
    let camera: crate::grid::CameraModel = serde_json::from_slice(&fs::read(path)?)?;
    camera.validate()?;
    Ok(camera)
}

pub fn save_camera(camera: &crate::grid::CameraModel, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(camera)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
