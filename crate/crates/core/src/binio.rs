//! Minimal little-endian framing for the binary operator and spectrum files.

use std::io::{self, Read, Write};

pub(crate) fn invalid_data(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub(crate) fn put_u64(w: &mut impl Write, x: u64) -> io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

pub(crate) fn put_usizes(w: &mut impl Write, xs: &[usize]) -> io::Result<()> {
    put_u64(w, xs.len() as u64)?;
    xs.iter().try_for_each(|&x| put_u64(w, x as u64))
}

pub(crate) fn put_f64s(w: &mut impl Write, xs: &[f64]) -> io::Result<()> {
    put_u64(w, xs.len() as u64)?;
    xs.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))
}

pub(crate) fn put_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a length prefix, refusing values that cannot be real.
fn get_len(r: &mut impl Read) -> io::Result<usize> {
    let n = get_u64(r)?;
    if n > (1 << 40) {
        return Err(invalid_data(format!("implausible length {n}")));
    }
    Ok(n as usize)
}

pub(crate) fn get_usize(r: &mut impl Read) -> io::Result<usize> {
    usize::try_from(get_u64(r)?).map_err(|_| invalid_data("value exceeds usize"))
}

pub(crate) fn get_usizes(r: &mut impl Read) -> io::Result<Vec<usize>> {
    let n = get_len(r)?;
    (0..n).map(|_| get_usize(r)).collect()
}

pub(crate) fn get_f64s(r: &mut impl Read) -> io::Result<Vec<f64>> {
    let n = get_len(r)?;
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub(crate) fn get_str(r: &mut impl Read) -> io::Result<String> {
    let n = get_len(r)?;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| invalid_data("node id is not valid UTF-8"))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 8]) -> io::Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(invalid_data(format!(
            "bad file header (expected {})",
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}
