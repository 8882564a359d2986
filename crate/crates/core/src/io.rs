//! Binary serialization helpers and atomic file writes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes a file by first writing to a sibling temp file and renaming into
/// place, so a failed command never leaves a partial artifact behind.
pub fn write_atomic<F>(path: &Path, write_fn: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut writer = BufWriter::new(file);
    write_fn(&mut writer)?;
    writer
        .into_inner()
        .map_err(|e| Error::io(&tmp, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn open_reader(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file))
}

pub fn put_u8(w: &mut impl Write, v: u8, path: &Path) -> Result<()> {
    w.write_all(&[v]).map_err(|e| Error::io(path, e))
}

pub fn put_u32(w: &mut impl Write, v: u32, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

pub fn put_u64(w: &mut impl Write, v: u64, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

pub fn put_f64(w: &mut impl Write, v: f64, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

pub fn put_f64_slice(w: &mut impl Write, vs: &[f64], path: &Path) -> Result<()> {
    for v in vs {
        put_f64(w, *v, path)?;
    }
    Ok(())
}

pub fn put_str(w: &mut impl Write, s: &str, path: &Path) -> Result<()> {
    put_u32(w, s.len() as u32, path)?;
    w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn get_u8(r: &mut impl Read, path: &Path) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf[0])
}

pub fn get_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn get_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn get_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(f64::from_le_bytes(buf))
}

pub fn get_f64_vec(r: &mut impl Read, len: usize, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(get_f64(r, path)?);
    }
    Ok(out)
}

pub fn get_str(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = get_u32(r, path)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    String::from_utf8(buf).map_err(|_| Error::Data(format!("invalid utf-8 string in {}", path.display())))
}

pub fn expect_magic(r: &mut impl Read, magic: &[u8; 4], path: &Path) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    if &buf != magic {
        return Err(Error::Data(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            buf,
            magic
        )));
    }
    Ok(())
}
