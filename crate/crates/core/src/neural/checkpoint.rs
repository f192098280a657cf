//! Binary network checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic       4 bytes  "EVQN"
//! version     u32      1
//! arch id     u32      0 = large_mlp, 1 = small_conv
//! shape len   u32
//! shape       u32 * shape len
//! seed        u64
//! step        u64
//! param count u64
//! params      f64 * param count
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Architecture, QNetwork};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EVQN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &QNetwork, mut out: W) -> Result<()> {
    let arch = net.architecture();
    let shape = arch.shape();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&arch.id().to_le_bytes())?;
    out.write_all(&(shape.len() as u32).to_le_bytes())?;
    for s in shape {
        out.write_all(&s.to_le_bytes())?;
    }
    out.write_all(&net.seed.to_le_bytes())?;
    out.write_all(&net.step.to_le_bytes())?;
    out.write_all(&(net.parameter_count() as u64).to_le_bytes())?;
    for p in net.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<QNetwork> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let id = read_u32(&mut input)?;
    let len = read_u32(&mut input)? as usize;
    if len > 16 {
        return Err(Error::Format(format!("implausible shape length {len}")));
    }
    let shape = (0..len).map(|_| read_u32(&mut input)).collect::<Result<Vec<_>>>()?;
    let arch = Architecture::from_parts(id, &shape)?;
    let seed = read_u64(&mut input)?;
    let step = read_u64(&mut input)?;
    let count = read_u64(&mut input)? as usize;
    if count != arch.parameter_count() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameters, {} expects {}",
            arch.name(),
            arch.parameter_count()
        )));
    }
    let mut bytes = vec![0u8; count * 8];
    input.read_exact(&mut bytes)?;
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut net = QNetwork::from_params(arch, params)?;
    net.seed = seed;
    net.step = step;
    Ok(net)
}

pub fn save_checkpoint(net: &QNetwork, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<QNetwork> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
