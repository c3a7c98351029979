//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "DOMLMCKP"
//! version    u32      FORMAT_VERSION
//! endian     u8       b'L'
//! config     u64 length + UTF-8 JSON
//! count      u32      number of tensors
//! tensor*    u32 name length + name, u64 rows, u64 cols, rows*cols f32
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use crate::tensor::{Mat, Scalar};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DOMLMCKP";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unsupported endianness marker {0:#x}")]
    Endianness(u8),
    #[error("checkpoint config: {0}")]
    Config(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Mat<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Mat<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Copies tensors named `prefix + name` into `targets`, checking shapes.
    pub fn load_into<F: Scalar>(
        &self,
        prefix: &str,
        targets: Vec<(String, &mut Mat<F>)>,
    ) -> Result<(), CheckpointError> {
        for (name, dst) in targets {
            let full = format!("{prefix}{name}");
            let src = self
                .get(&full)
                .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor {full}")))?;
            if src.shape() != dst.shape() {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {full} has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.cast();
        }
        Ok(())
    }
}

pub fn write_checkpoint<F: Scalar>(
    mut w: impl Write,
    config: &serde_json::Value,
    tensors: &[(String, &Mat<F>)],
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(b"L")?;
    let cfg = serde_json::to_vec(config)?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows as u64).to_le_bytes())?;
        w.write_all(&(m.cols as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(m.data.len() * 4);
        for x in &m.data {
            buf.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

const MAX_ELEMENTS: u64 = 1 << 32;

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut endian = [0u8; 1];
    r.read_exact(&mut endian)?;
    if endian[0] != b'L' {
        return Err(CheckpointError::Endianness(endian[0]));
    }
    let cfg_len = read_u64(&mut r)?;
    if cfg_len > MAX_ELEMENTS {
        return Err(CheckpointError::Malformed("config too large".into()));
    }
    let mut cfg = vec![0u8; cfg_len as usize];
    r.read_exact(&mut cfg)?;
    let config = serde_json::from_slice(&cfg)?;
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)?;
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("tensor name not UTF-8".into()))?;
        let rows = read_u64(&mut r)?;
        let cols = read_u64(&mut r)?;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} too large")))?;
        let mut buf = vec![0u8; n as usize * 4];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Mat::from_vec(rows as usize, cols as usize, data)));
    }
    Ok(Checkpoint { config, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_checks() {
        let a = Mat::from_vec(2, 3, vec![1.0f32, -2.5, 3.0, 0.0, 1e-7, 7.0]);
        let b = Mat::from_vec(1, 1, vec![42.0f32]);
        let cfg = serde_json::json!({"hidden": 8});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(buf[12], b'L');
        let ck = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.get("a"), Some(&a));
        assert_eq!(ck.get("b"), Some(&b));

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(CheckpointError::BadMagic)
        ));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(CheckpointError::Version(9))
        ));
        assert!(read_checkpoint(&buf[..buf.len() - 2]).is_err());
    }

    #[test]
    fn load_into_checks_shapes() {
        let a = Mat::from_vec(1, 2, vec![1.0f32, 2.0]);
        let ck = Checkpoint {
            config: serde_json::Value::Null,
            tensors: vec![("x.a".into(), a)],
        };
        let mut dst = Mat::<f64>::zeros(1, 2);
        ck.load_into("x.", vec![("a".into(), &mut dst)]).unwrap();
        assert_eq!(dst.data, vec![1.0, 2.0]);
        let mut wrong = Mat::<f64>::zeros(2, 1);
        assert!(ck.load_into("x.", vec![("a".into(), &mut wrong)]).is_err());
        assert!(ck.load_into("y.", vec![("a".into(), &mut dst)]).is_err());
    }
}
