//! Binary checkpoint format.
//!
//! ```text
//! "RATN1\n"
//! u32 config_len, config text (flat key = value, UTF-8)
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rank, rank × u32 extent, f32 payload
//! ```
//! All integers and floats little-endian. The configuration is stored so a
//! checkpoint alone is enough to rebuild its detector.

use std::io::{self, Read, Write};
use std::path::Path;

use roiattn_core::config::DetectionConfig;
use roiattn_core::params::ParamStore;
use roiattn_core::tensor::Tensor;
use roiattn_core::train::Trainer;
use thiserror::Error;

use crate::configfile;

pub const MAGIC: &[u8; 6] = b"RATN1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] configfile::ConfigFileError),
    #[error("checkpoint does not match its config: {0}")]
    Mismatch(#[from] roiattn_core::Error),
}

pub fn write(out: &mut impl Write, cfg: &DetectionConfig, store: &ParamStore) -> io::Result<()> {
    out.write_all(MAGIC)?;
    let text = cfg.to_text();
    write_u32(out, text.len())?;
    out.write_all(text.as_bytes())?;
    let entries = store.to_entries();
    write_u32(out, entries.len())?;
    for (name, t) in &entries {
        write_u32(out, name.len())?;
        out.write_all(name.as_bytes())?;
        write_u32(out, t.rank())?;
        for &e in t.shape() {
            write_u32(out, e)?;
        }
        let mut buf = Vec::with_capacity(4 * t.numel());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn to_bytes(cfg: &DetectionConfig, store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf, cfg, store).expect("writing to a Vec");
    buf
}

pub fn save(path: &Path, cfg: &DetectionConfig, store: &ParamStore) -> io::Result<()> {
    std::fs::write(path, to_bytes(cfg, store))
}

fn write_u32(out: &mut impl Write, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))?;
    out.write_all(&v.to_le_bytes())
}

fn read_u32(inp: &mut impl Read) -> Result<usize, CheckpointError> {
    let mut b = [0u8; 4];
    inp.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn truncated(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Corrupt("truncated".into())
    } else {
        CheckpointError::Io(e)
    }
}

fn read_string(inp: &mut impl Read, limit: usize) -> Result<String, CheckpointError> {
    let n = read_u32(inp)?;
    if n > limit {
        return Err(CheckpointError::Corrupt(format!("string length {n}")));
    }
    let mut b = vec![0u8; n];
    inp.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| CheckpointError::Corrupt("non-UTF-8 text".into()))
}

/// Raw contents: the stored config and `(name, tensor)` pairs.
pub fn read(inp: &mut impl Read) -> Result<(DetectionConfig, Vec<(String, Tensor)>), CheckpointError> {
    let mut magic = [0u8; 6];
    inp.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let text = read_string(inp, 1 << 20)?;
    let cfg = configfile::parse(&text, "checkpoint")?;
    let count = read_u32(inp)?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name = read_string(inp, 4096)?;
        let rank = read_u32(inp)?;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank).map(|_| read_u32(inp)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| CheckpointError::Corrupt(format!("shape {shape:?} for {name}")))?;
        let mut bytes = vec![0u8; 4 * numel];
        inp.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        entries.push((name, t));
    }
    let mut rest = [0u8; 1];
    if inp.read(&mut rest)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok((cfg, entries))
}

/// Rebuilds the trainer (detector and parameters) a checkpoint was taken from.
pub fn load(path: &Path) -> Result<Trainer, CheckpointError> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer, CheckpointError> {
    let (cfg, entries) = read(&mut &bytes[..])?;
    configfile::validate(&cfg, "checkpoint")?;
    let mut trainer = Trainer::new(&cfg)?;
    trainer.store.load(entries)?;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DetectionConfig {
        DetectionConfig {
            channels: 8,
            fc_hidden: 16,
            reg_mid: 4,
            reg_out: 8,
            ..DetectionConfig::default()
        }
    }

    #[test]
    fn round_trip() {
        let t = Trainer::new(&small()).unwrap();
        let bytes = to_bytes(&t.cfg, &t.store);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.cfg, t.cfg);
        assert_eq!(back.store.to_entries(), t.store.to_entries());
        assert_eq!(to_bytes(&back.cfg, &back.store), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Trainer::new(&small()).unwrap();
        let mut bytes = to_bytes(&t.cfg, &t.store);
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Corrupt(_))));
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(CheckpointError::BadMagic)));
        assert!(matches!(from_bytes(b""), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn rejects_mismatched_parameters() {
        let t = Trainer::new(&small()).unwrap();
        let mut other = small();
        other.d = 20;
        let t2 = Trainer::new(&other).unwrap();
        // config of one, tensors of the other
        let mut bytes = Vec::new();
        write(&mut bytes, &t.cfg, &t2.store).unwrap();
        assert!(matches!(from_bytes(&bytes), Err(CheckpointError::Mismatch(_))));
    }
}
