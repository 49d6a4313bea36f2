//! Flat binary parameter files.
//!
//! Layout: the 8-byte magic `CLARPRM1`, then records until end of file. Each
//! record is `u32` name length, UTF-8 name, `u32` rank, `rank` x `u64` dims,
//! then `prod(dims)` x `f64`. All integers and floats are little-endian.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{ClarError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLARPRM1";

pub fn write_checkpoint<W: Write>(mut w: W, records: &[(String, Tensor)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in records {
        let name_len = u32::try_from(name.len()).map_err(|_| ClarError::Checkpoint("name too long".into()))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= buf.len()).ok_or_else(|| {
        ClarError::Checkpoint(format!("truncated record at byte {}", *pos))
    })?;
    let s = &buf[*pos..end];
    *pos = end;
    Ok(s)
}

fn u32_at(buf: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, pos, 4)?.try_into().expect("4 bytes")))
}

fn u64_at(buf: &[u8], pos: &mut usize) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, pos, 8)?.try_into().expect("8 bytes")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 8 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(ClarError::Checkpoint("bad magic, expected CLARPRM1".into()));
    }
    let mut pos = 8;
    let mut out = Vec::new();
    while pos < buf.len() {
        let n = u32_at(&buf, &mut pos)? as usize;
        let name = std::str::from_utf8(take(&buf, &mut pos, n)?)
            .map_err(|_| ClarError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = u32_at(&buf, &mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64_at(&buf, &mut pos)? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = take(&buf, &mut pos, numel.checked_mul(8).unwrap_or(usize::MAX))?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| ClarError::Checkpoint(format!("`{name}`: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}
