//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!   magic "DNCK" | version u16 | param count u32 | per parameter:
//!   name len u32, name bytes (UTF-8), dim count u32, dims u64…, values f64…
//!
//! Values are written as raw f64 bits, so load(save(p)) == p bit-exact.

use crate::error::{Error, Result};
use crate::gradcore::tensor::{ParamSet, Tensor};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DNCK";
const VERSION: u16 = 1;

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let display = path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, &display, "magic")?;
    if &magic != MAGIC {
        return Err(Error::malformed(&display, "bad magic, not a checkpoint"));
    }
    let version = read_u16(&mut r, &display)?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = read_u32(&mut r, &display)?;

    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, &display)? as usize;
        if name_len > 4096 {
            return Err(Error::malformed(&display, "parameter name too long"));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, &display, "parameter name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::malformed(&display, "parameter name is not UTF-8"))?;

        let ndims = read_u32(&mut r, &display)? as usize;
        if ndims > 8 {
            return Err(Error::malformed(&display, "too many dimensions"));
        }
        let mut shape = Vec::with_capacity(ndims);
        let mut numel: u64 = 1;
        for _ in 0..ndims {
            let d = read_u64(&mut r, &display)?;
            numel = numel.saturating_mul(d.max(1));
            shape.push(d as usize);
        }
        if numel > 100_000_000 {
            return Err(Error::malformed(&display, "parameter too large"));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut r, &mut buf, &display, "parameter values")?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(name, Tensor::new(shape, data)?)?;
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::malformed(&display, "trailing bytes after last parameter"));
    }
    Ok(params)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &str, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::malformed(path, format!("truncated while reading {what}")))
}

fn read_u16(r: &mut impl Read, path: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, path, "u16 field")?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, path: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, "u32 field")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path, "u64 field")?;
    Ok(u64::from_le_bytes(b))
}
