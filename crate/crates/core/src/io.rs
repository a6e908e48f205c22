//! On-disk formats.
//!
//! Tensor files are a small fixed header followed by the raw payload:
//!
//! | bytes        | field                                        |
//! |--------------|----------------------------------------------|
//! | 4            | magic `VGEO`                                 |
//! | 4            | version, u32 little-endian, always 1         |
//! | 1            | dtype: 1 = f32, 2 = f64, 3 = u8 mask         |
//! | 1            | ndim                                         |
//! | 8 × ndim     | dims, u64 little-endian                      |
//! | rest         | row-major little-endian values               |
//!
//! Sequences on disk are directories of per-frame files named
//! `<prefix>_<frame:04>.vgeo`. A model checkpoint is a directory holding
//! `manifest.txt` (`name = relative/path.vgeo` per parameter),
//! `config.txt` and the parameter files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{SceneData, SceneSpec, ValidMask};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Tensor, Tensor64};

pub const MAGIC: [u8; 4] = *b"VGEO";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;
pub const DTYPE_MASK: u8 = 3;

/// Any tensor a file can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor),
    F64(Tensor64),
    Mask(ValidMask),
}

impl AnyTensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
            AnyTensor::Mask(m) => m.dims(),
        }
    }

    pub fn dtype(&self) -> u8 {
        match self {
            AnyTensor::F32(_) => DTYPE_F32,
            AnyTensor::F64(_) => DTYPE_F64,
            AnyTensor::Mask(_) => DTYPE_MASK,
        }
    }

    /// Float tensors of either width, as f32.
    pub fn into_f32(self) -> Result<Tensor> {
        match self {
            AnyTensor::F32(t) => Ok(t),
            AnyTensor::F64(t) => Ok(t.cast()),
            AnyTensor::Mask(_) => Err(Error::Config("expected a float tensor, found a mask".into())),
        }
    }

    pub fn into_mask(self) -> Result<ValidMask> {
        match self {
            AnyTensor::Mask(m) => Ok(m),
            _ => Err(Error::Config("expected a mask, found a float tensor".into())),
        }
    }
}

impl From<Tensor> for AnyTensor {
    fn from(t: Tensor) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor64> for AnyTensor {
    fn from(t: Tensor64) -> Self {
        AnyTensor::F64(t)
    }
}

impl From<ValidMask> for AnyTensor {
    fn from(m: ValidMask) -> Self {
        AnyTensor::Mask(m)
    }
}

pub fn header_len(ndim: usize) -> usize {
    10 + 8 * ndim
}

pub fn encode(t: &AnyTensor) -> Result<Vec<u8>> {
    let dims = t.dims();
    let ndim = u8::try_from(dims.len()).map_err(|_| Error::shape(format!("{} dims exceed 255", dims.len())))?;
    let elem = match t {
        AnyTensor::F32(_) => 4,
        AnyTensor::F64(_) => 8,
        AnyTensor::Mask(_) => 1,
    };
    let count: usize = dims.iter().product();
    let mut out = Vec::with_capacity(header_len(dims.len()) + elem * count);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.dtype());
    out.push(ndim);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t {
        AnyTensor::F32(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        AnyTensor::F64(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        AnyTensor::Mask(m) => out.extend(m.bits().iter().map(|&b| b as u8)),
    }
    Ok(out)
}

/// Parses file contents; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<AnyTensor> {
    let fail = |field: &'static str, detail: String| Error::Format {
        path: path.to_path_buf(),
        field,
        detail,
    };
    if bytes.len() < 4 {
        return Err(fail("magic", format!("file is {} bytes, too short for a header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(fail("magic", format!("expected \"VGEO\", found {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes.len() < 10 {
        return Err(fail("header", format!("truncated header: {} bytes", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(fail("version", format!("expected {VERSION}, found {version}")));
    }
    let dtype = bytes[8];
    let elem = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        DTYPE_MASK => 1,
        other => return Err(fail("dtype", format!("unknown code {other}"))),
    };
    let ndim = bytes[9] as usize;
    let hl = header_len(ndim);
    if bytes.len() < hl {
        return Err(fail("dims", format!("header declares {ndim} dims but file ends at byte {}", bytes.len())));
    }
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        let d = u64::from_le_bytes(bytes[10 + 8 * k..18 + 8 * k].try_into().expect("8 bytes"));
        dims.push(usize::try_from(d).map_err(|_| fail("dims", format!("dim {k} = {d} overflows")))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|c| c.checked_mul(elem))
        .ok_or_else(|| fail("dims", format!("{dims:?} overflows")))?;
    let payload = &bytes[hl..];
    if payload.len() != count {
        return Err(fail(
            "payload",
            format!("expected {count} bytes for {dims:?}, found {}", payload.len()),
        ));
    }
    Ok(match dtype {
        DTYPE_F32 => AnyTensor::F32(Tensor::new(
            dims,
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect(),
        )?),
        DTYPE_F64 => AnyTensor::F64(Tensor64::new(
            dims,
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
        )?),
        _ => {
            if let Some(pos) = payload.iter().position(|&b| b > 1) {
                return Err(fail("payload", format!("mask byte {pos} is {}", payload[pos])));
            }
            AnyTensor::Mask(ValidMask::new(dims, payload.iter().map(|&b| b == 1).collect())?)
        }
    })
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn write_tensor(path: &Path, t: &AnyTensor) -> Result<()> {
    fs::write(path, encode(t)?).map_err(with_path(path))
}

pub fn read_tensor(path: &Path) -> Result<AnyTensor> {
    decode(&fs::read(path).map_err(with_path(path))?, path)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(with_path(path))
}

pub fn read_f32(path: &Path) -> Result<Tensor> {
    read_tensor(path)?.into_f32()
}

pub fn read_mask(path: &Path) -> Result<ValidMask> {
    read_tensor(path)?.into_mask()
}

pub fn frame_path(dir: &Path, prefix: &str, frame: usize) -> PathBuf {
    dir.join(format!("{prefix}_{frame:04}.vgeo"))
}

/// Number of consecutive `<prefix>_NNNN.vgeo` files starting at 0.
pub fn count_frames(dir: &Path, prefix: &str) -> usize {
    (0..).take_while(|&i| frame_path(dir, prefix, i).is_file()).count()
}

/// Splits `t` along its first axis into per-frame files.
pub fn write_frames(dir: &Path, prefix: &str, t: &AnyTensor) -> Result<()> {
    let n = *t.dims().first().ok_or_else(|| Error::shape("cannot split a scalar into frames"))?;
    for i in 0..n {
        let frame = match t {
            AnyTensor::F32(t) => AnyTensor::F32(drop_lead(t.slice_rows(i, i + 1))?),
            AnyTensor::F64(t) => AnyTensor::F64(drop_lead(t.slice_rows(i, i + 1))?),
            AnyTensor::Mask(m) => {
                let s = m.slice_rows(i, i + 1);
                AnyTensor::Mask(ValidMask::new(&s.dims()[1..], s.bits().to_vec())?)
            }
        };
        write_tensor(&frame_path(dir, prefix, i), &frame)?;
    }
    Ok(())
}

fn drop_lead<T: crate::tensor::Real>(t: Tensor<T>) -> Result<Tensor<T>> {
    let dims = t.dims()[1..].to_vec();
    t.reshape(dims)
}

fn read_stack(dir: &Path, prefix: &str) -> Result<Vec<AnyTensor>> {
    let n = count_frames(dir, prefix);
    if n == 0 {
        return Err(Error::Config(format!(
            "no {} in {}",
            frame_path(Path::new(""), prefix, 0).display(),
            dir.display()
        )));
    }
    let frames = (0..n)
        .map(|i| read_tensor(&frame_path(dir, prefix, i)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = frames.iter().position(|f| f.dims() != frames[0].dims()) {
        return Err(Error::shape(format!(
            "{}: frame {bad} is {:?}, frame 0 is {:?}",
            dir.display(),
            frames[bad].dims(),
            frames[0].dims()
        )));
    }
    Ok(frames)
}

/// Reads and stacks `<prefix>_0000.vgeo`, `<prefix>_0001.vgeo`, ...
pub fn read_frames(dir: &Path, prefix: &str) -> Result<Tensor> {
    let frames = read_stack(dir, prefix)?
        .into_iter()
        .map(AnyTensor::into_f32)
        .collect::<Result<Vec<_>>>()?;
    let mut dims = vec![frames.len()];
    dims.extend_from_slice(frames[0].dims());
    Tensor::new(dims, frames.into_iter().flat_map(Tensor::into_data).collect())
}

pub fn read_mask_frames(dir: &Path, prefix: &str) -> Result<ValidMask> {
    let frames = read_stack(dir, prefix)?
        .into_iter()
        .map(AnyTensor::into_mask)
        .collect::<Result<Vec<_>>>()?;
    let mut dims = vec![frames.len()];
    dims.extend_from_slice(frames[0].dims());
    ValidMask::new(dims, frames.iter().flat_map(|m| m.bits().iter().copied()).collect())
}

/// Writes a rendered scene: `frame_*`, `points_*`, `depth_*`, `normals_*`,
/// `valid_*` and `scene.txt`.
pub fn write_scene(dir: &Path, spec: &SceneSpec, scene: &SceneData) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_frames(dir, "frame", &scene.frames.clone().into())?;
    write_frames(dir, "points", &scene.points.clone().into())?;
    write_frames(dir, "depth", &scene.depth.clone().into())?;
    write_frames(dir, "normals", &scene.normals.clone().into())?;
    write_frames(dir, "valid", &scene.valid.clone().into())?;
    fs::write(dir.join("scene.txt"), spec.to_text())?;
    Ok(())
}

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG: &str = "config.txt";

pub fn save_checkpoint(dir: &Path, model: &Model) -> Result<()> {
    fs::create_dir_all(dir.join("params"))?;
    let mut manifest = String::new();
    for (name, t) in model.param_names().iter().zip(model.params()) {
        let rel = format!("params/{name}.vgeo");
        write_tensor(&dir.join(&rel), &t.clone().into())?;
        manifest.push_str(&format!("{name} = {rel}\n"));
    }
    fs::write(dir.join(CONFIG), model.config().to_text())?;
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let text = read_text(&dir.join(MANIFEST))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let (name, rel) = l
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("manifest line {}: expected name = path", i + 1)))?;
            Ok((name.trim().to_string(), dir.join(rel.trim())))
        })
        .collect()
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let config = ModelConfig::parse(&read_text(&dir.join(CONFIG))?)?;
    let named = read_manifest(dir)?
        .into_iter()
        .map(|(name, path)| Ok((name, read_f32(&path)?)))
        .collect::<Result<Vec<_>>>()?;
    Model::from_named(config, named)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tensor_is_header_only() {
        let t = AnyTensor::F32(Tensor::new([0], vec![]).unwrap());
        let bytes = encode(&t).unwrap();
        assert_eq!(bytes.len(), 18);
        assert_eq!(decode(&bytes, Path::new("x")).unwrap(), t);
    }

    #[test]
    fn field_specific_errors() {
        let good = encode(&AnyTensor::F64(Tensor64::from_fn([2, 2], |i| i as f64))).unwrap();
        let field = |b: &[u8]| match decode(b, Path::new("t.vgeo")) {
            Err(Error::Format { field, .. }) => field,
            other => panic!("expected a format error, got {other:?}"),
        };
        let mut b = good.clone();
        b[0] = b'X';
        assert_eq!(field(&b), "magic");
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(field(&b), "version");
        let mut b = good.clone();
        b[8] = 9;
        assert_eq!(field(&b), "dtype");
        assert_eq!(field(&good[..good.len() - 1]), "payload");
        assert_eq!(field(&good[..20]), "dims");
        let mut b = good.clone();
        b.push(0);
        assert_eq!(field(&b), "payload");
        let mask = encode(&AnyTensor::Mask(ValidMask::full([3], true))).unwrap();
        let mut b = mask.clone();
        *b.last_mut().unwrap() = 7;
        assert_eq!(field(&b), "payload");
    }

    #[test]
    fn frames_and_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn([3, 2, 4], |i| i as f32 * 0.5);
        write_frames(dir.path(), "depth", &t.clone().into()).unwrap();
        assert_eq!(count_frames(dir.path(), "depth"), 3);
        assert_eq!(read_frames(dir.path(), "depth").unwrap(), t);
        assert!(read_frames(dir.path(), "points").is_err());

        let cfg = ModelConfig {
            patch_size: 4,
            width: 16,
            heads: 2,
            backbone_layers: 3,
            decoder_layers: 1,
            feature_channels: 4,
            head_hidden: 4,
            seed: 5,
            ..Default::default()
        };
        let model = Model::new(cfg).unwrap();
        save_checkpoint(&dir.path().join("ckpt"), &model).unwrap();
        let back = load_checkpoint(&dir.path().join("ckpt")).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), model.params());
    }
}
