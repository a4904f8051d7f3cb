//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   6 bytes  "MCOUT1"
//! version u32
//! count   u32              number of tensors
//! tensor  repeated count times:
//!     name_len u16, name (UTF-8), dtype u8 (1 = f32, 2 = f64),
//!     rank u8, dims u64 x rank, payload (IEEE-754 little-endian)
//! config  UTF-8 JSON, everything to end of file
//! ```
//!
//! Tensors are written in name order, so identical content produces
//! identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mcout_core::{Error, Scalar, Tensor};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 6] = b"MCOUT1";
pub const FORMAT_VERSION: u32 = 1;

fn contract(msg: String) -> CliError {
    CliError::Contract(Error::Contract(msg))
}

pub fn to_bytes<T: Scalar>(
    tensors: &BTreeMap<String, Tensor<T>>,
    config_json: &str,
) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| contract(format!("{} tensors exceed format limit", tensors.len())))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| contract(format!("tensor name of {} bytes too long", name.len())))?;
        if name_len == 0 {
            return Err(contract("tensor name must be non-empty".into()));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE_CODE);
        let rank = u8::try_from(tensor.rank())
            .map_err(|_| contract(format!("rank {} too large", tensor.rank())))?;
        out.push(rank);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            match T::DTYPE_CODE {
                1 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
            }
        }
    }
    out.extend_from_slice(config_json.as_bytes());
    Ok(out)
}

pub fn save<T: Scalar>(
    path: &Path,
    tensors: &BTreeMap<String, Tensor<T>>,
    config_json: &str,
) -> CliResult<()> {
    let bytes = to_bytes(tensors, config_json)?;
    fs::write(path, bytes)
        .map_err(|e| CliError::io(&format!("writing checkpoint {}", path.display()), e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(CliError::Io(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> CliResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> CliResult<(BTreeMap<String, Tensor<T>>, String)> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(6)? != MAGIC {
        return Err(contract("not a checkpoint: bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(contract(format!(
            "checkpoint format version {version} unsupported (expected {FORMAT_VERSION})"
        )));
    }
    let count = cur.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| contract("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = cur.take(1)?[0];
        if dtype != T::DTYPE_CODE {
            return Err(contract(format!(
                "tensor {name:?} has dtype code {dtype}, expected {}",
                T::DTYPE_CODE
            )));
        }
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = cur.u64()?;
            let d = usize::try_from(d).map_err(|_| contract(format!("dim {d} too large")))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| contract(format!("tensor {name:?} dims overflow")))?;
            shape.push(d);
        }
        let width = if T::DTYPE_CODE == 1 { 4 } else { 8 };
        let payload = cur.take(numel * width)?;
        let data: Vec<T> = payload
            .chunks_exact(width)
            .map(|c| {
                if T::DTYPE_CODE == 1 {
                    T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                } else {
                    T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap()))
                }
            })
            .collect();
        let tensor = Tensor::new(shape, data).map_err(CliError::Contract)?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(contract(format!("duplicate tensor {name:?}")));
        }
    }
    let config = std::str::from_utf8(&bytes[cur.at..])
        .map_err(|_| contract("config blob is not UTF-8".into()))?
        .to_string();
    Ok((tensors, config))
}

pub fn load<T: Scalar>(path: &Path) -> CliResult<(BTreeMap<String, Tensor<T>>, String)> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::io(&format!("reading checkpoint {}", path.display()), e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, Tensor<f64>> {
        let mut m = BTreeMap::new();
        m.insert("b".into(), Tensor::from_slice(&[1.5f64, -2.25, 3.125]));
        m.insert(
            "a.w".into(),
            Tensor::new(vec![2, 2], vec![0.1f64, 0.2, 0.3, 0.4]).unwrap(),
        );
        m.insert("scalar".into(), Tensor::scalar(42.0f64));
        m
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let tensors = sample();
        let json = r#"{"mu":0.5}"#;
        let bytes = to_bytes(&tensors, json).unwrap();
        let (back, cfg) = from_bytes::<f64>(&bytes).unwrap();
        assert_eq!(cfg, json);
        assert_eq!(back.len(), tensors.len());
        for (k, v) in &tensors {
            assert_eq!(back[k].shape(), v.shape());
            assert_eq!(back[k].data(), v.data());
        }
        let again = to_bytes(&back, &cfg).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn f32_round_trip() {
        let mut m: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        m.insert("x".into(), Tensor::from_slice(&[1.0f32, -0.5, 3.25e-7]));
        let bytes = to_bytes(&m, "{}").unwrap();
        let (back, _) = from_bytes::<f32>(&bytes).unwrap();
        assert_eq!(back["x"].data(), m["x"].data());
        assert_eq!(to_bytes(&back, "{}").unwrap(), bytes);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = to_bytes(&sample(), "{}").unwrap();
        bytes[0] ^= 0xff;
        let err = from_bytes::<f64>(&bytes).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(format!("{err}").contains("magic"));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = to_bytes(&sample(), "{}").unwrap();
        bytes[6] = 9;
        let err = from_bytes::<f64>(&bytes).unwrap_err();
        assert!(format!("{err}").contains("version"));
    }

    #[test]
    fn truncation_detected() {
        let bytes = to_bytes(&sample(), "").unwrap();
        let err = from_bytes::<f64>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let mut m: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        m.insert("x".into(), Tensor::from_slice(&[1.0f32]));
        let bytes = to_bytes(&m, "{}").unwrap();
        let err = from_bytes::<f64>(&bytes).unwrap_err();
        assert!(format!("{err}").contains("dtype"));
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mcout");
        save(&path, &sample(), r#"{"k":1}"#).unwrap();
        let (back, cfg) = load::<f64>(&path).unwrap();
        assert_eq!(back["scalar"].data(), &[42.0]);
        assert_eq!(cfg, r#"{"k":1}"#);
    }
}
