//! Binary checkpoint format.
//!
//! Layout: `"UGSC"`, `u32` version, `u64` count `N`, then little-endian `f32`
//! arrays `means[3N]`, `l_raw[6N]`, `intensity_raw[N]`, `opacity_raw[N]`,
//! `bg_intensity_raw`, `bg_opacity_raw`, `beta`, then a `u64` byte length and
//! a UTF-8 JSON trailer holding [`CheckpointMeta`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::GaussianCloud;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UGSC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Default image geometry offered to clients of a trained scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewDefaults {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub iteration: usize,
    /// `[min, max]` world corners in mm.
    pub world_bounds_mm: [[f64; 3]; 2],
    pub default_view: ViewDefaults,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cloud: GaussianCloud<f32>,
    pub meta: CheckpointMeta,
}

fn put(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let c = &ckpt.cloud;
    c.validate()?;
    let n = c.len();
    let mut buf = Vec::with_capacity(16 + 4 * (11 * n + 3));
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    put(&mut buf, c.means.iter().flatten().copied());
    put(&mut buf, c.l_raw.iter().flatten().copied());
    put(&mut buf, c.intensity_raw.iter().copied());
    put(&mut buf, c.opacity_raw.iter().copied());
    put(&mut buf, [c.bg_intensity_raw, c.bg_opacity_raw, c.beta]);
    let trailer = serde_json::to_vec(&ckpt.meta)?;
    buf.extend_from_slice(&(trailer.len() as u64).to_le_bytes());
    buf.extend_from_slice(&trailer);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.path,
                format!("truncated while reading {what}: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "count overflow"))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic bytes)"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let n = usize::try_from(r.u64("count")?).map_err(|_| Error::format(path, "count overflow"))?;
    let means = r.f32s(n.saturating_mul(3), "means")?;
    let l_raw = r.f32s(n.saturating_mul(6), "l_raw")?;
    let intensity_raw = r.f32s(n, "intensity_raw")?;
    let opacity_raw = r.f32s(n, "opacity_raw")?;
    let scalars = r.f32s(3, "background and beta")?;
    let len = r.u64("trailer length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len, "trailer")?)
        .map_err(|e| Error::format(path, format!("bad JSON trailer: {e}")))?;
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let cloud = GaussianCloud {
        means: means.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        l_raw: l_raw.chunks_exact(6).map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]]).collect(),
        intensity_raw,
        opacity_raw,
        bg_intensity_raw: scalars[0],
        bg_opacity_raw: scalars[1],
        beta: scalars[2],
    };
    cloud.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(Checkpoint { cloud, meta })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut cloud = GaussianCloud::empty(0.01);
        cloud.push([1.0, -2.0, 3.5], [4.0, 4.5, 4.9, 0.1, -0.3, 0.25], 0.2, 1.0);
        cloud.push([0.1, 0.2, 0.3], [1.0; 6], -1.0, 2.0);
        Checkpoint {
            cloud,
            meta: CheckpointMeta {
                config: TrainConfig::default(),
                iteration: 42,
                world_bounds_mm: [[-1.0; 3], [1.0; 3]],
                default_view: ViewDefaults { width: 8, height: 8, spacing: 0.5 },
            },
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode_checkpoint(&back).unwrap(), fs::read(&path).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        assert_eq!(&bytes[0..4], b"UGSC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1.0);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = Path::new("x.ckpt");
        let good = encode_checkpoint(&sample()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::Format { .. })));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(decode_checkpoint(&bad, p).unwrap_err().to_string().contains("version 9"));
        assert!(decode_checkpoint(&good[..40], p).unwrap_err().to_string().contains("truncated"));
        let mut bad = good.clone();
        bad.push(0);
        assert!(decode_checkpoint(&bad, p).is_err());
    }
}
