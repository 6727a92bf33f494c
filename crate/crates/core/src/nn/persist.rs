//! Model files.
//!
//! Layout (little-endian): magic `EROCNET1`, `u32` version, `u64` header
//! length, JSON header (architecture and scaling), `u64` parameter count,
//! `f32` parameters in layer order, then the SHA-256 of all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::growth::GrowthStep;
use super::net::{Architecture, MultiTaskNet, Scaling};
use super::train::{TrainConfig, TrainHistory};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EROCNET1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    scaling: Scaling,
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "model",
        reason: reason.into(),
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes `net`; parameters are rounded to `f32`.
pub fn encode_model(net: &MultiTaskNet) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        architecture: net.architecture().clone(),
        scaling: net.scaling().clone(),
    })?;
    let mut out = Vec::with_capacity(64 + header.len() + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<MultiTaskNet> {
    if bytes.len() < 8 + 4 + 8 + 8 + 32 {
        return Err(format_err("file too short"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(format_err("checksum mismatch"));
    }
    if &body[..8] != MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = body.get(pos..pos + n).ok_or_else(|| format_err("truncated"))?;
        pos += n;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(hlen)?)?;
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut net = MultiTaskNet::new(header.architecture, header.scaling)?;
    if n != net.param_count() {
        return Err(format_err(format!(
            "parameter count {n} does not match the architecture ({})",
            net.param_count()
        )));
    }
    let raw = take(4 * n)?;
    for (p, c) in net.params_mut().iter_mut().zip(raw.chunks_exact(4)) {
        *p = f64::from(f32::from_le_bytes(c.try_into().unwrap()));
    }
    if pos != body.len() {
        return Err(format_err("trailing bytes"));
    }
    Ok(net)
}

pub fn save_model(net: &MultiTaskNet, path: &Path) -> Result<String> {
    let bytes = encode_model(net)?;
    std::fs::write(path, &bytes)?;
    Ok(to_hex(&bytes[bytes.len() - 32..]))
}

pub fn load_model(path: &Path) -> Result<MultiTaskNet> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `eroc train` first".into(),
            }
        } else {
            e.into()
        }
    })?;
    decode_model(&bytes)
}

/// JSON record written next to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub param_count: usize,
    /// Checksum trailer of the model file.
    pub sha256: String,
    pub history: TrainHistory,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub growth: Vec<GrowthStep>,
}

impl ModelManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::rng::{stream, Purpose};

    fn net() -> MultiTaskNet {
        let arch = Architecture::standard(6, 6, 1, 1, 3, 3, 2);
        let mut n = MultiTaskNet::new(arch, Scaling::identity(2)).unwrap();
        n.init_weights(&mut stream(3, Purpose::WeightInit, 0));
        n
    }

    #[test]
    fn round_trip_to_f32_precision() {
        let a = net();
        let b = decode_model(&encode_model(&a).unwrap()).unwrap();
        assert_eq!(a.architecture(), b.architecture());
        for (x, y) in a.params().iter().zip(b.params()) {
            assert_eq!(*y, f64::from(*x as f32));
        }
        let g = Image::from_vec(6, 6, (0..36).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        let (oa, ob) = (a.forward(&g).unwrap(), b.forward(&g).unwrap());
        assert!((oa.p - ob.p).abs() < 1e-5);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_model(&net()).unwrap();
        bytes[40] ^= 1;
        assert!(matches!(decode_model(&bytes), Err(Error::Format { .. })));
        assert!(decode_model(&bytes[..10]).is_err());
    }

    #[test]
    fn missing_file_is_a_missing_artifact() {
        let r = load_model(Path::new("/nonexistent/model.bin"));
        assert!(matches!(r, Err(Error::MissingArtifact { .. })));
    }
}
