//! Binary cube and mask files, and the per-pixel score CSV.
//!
//! Cube layout: `b"HSI1"`, then `n1`, `n2`, `n3` as little-endian `u32`, then
//! `n1·n2·n3` little-endian `f64` values in [`Tensor3`] storage order.
//! Mask layout: `b"MSK1"`, `n1`, `n2` as little-endian `u32`, then `n1·n2`
//! bytes each 0 or 1, first index fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::detector::{Mask, ScoreMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const HSI_MAGIC: &[u8; 4] = b"HSI1";
pub const MASK_MAGIC: &[u8; 4] = b"MSK1";

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, "header")?;
    Ok(u32::from_le_bytes(b))
}

fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    read_exact_or(r, &mut m, "header")?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

fn checked_len(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::Format("dimensions overflow".into()))
}

pub fn read_hsi<R: Read>(mut r: R) -> Result<Tensor3> {
    read_magic(&mut r, HSI_MAGIC)?;
    let dims = [read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?];
    if dims.contains(&0) {
        return Err(Error::Format("zero dimension".into()));
    }
    let n = checked_len(&dims)?;
    let mut data = Vec::new();
    let mut buf = [0u8; 8];
    // grow as the payload arrives so a lying header cannot force a huge allocation
    for _ in 0..n {
        read_exact_or(&mut r, &mut buf, "payload")?;
        data.push(f64::from_le_bytes(buf));
    }
    expect_eof(&mut r)?;
    let dims = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite value in cube".into()));
    }
    Tensor3::new(dims, data)
}

pub fn write_hsi<W: Write>(mut w: W, t: &Tensor3) -> Result<()> {
    let (n1, n2, n3) = t.dims();
    w.write_all(HSI_MAGIC)?;
    for d in [n1, n2, n3] {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_hsi(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_hsi(BufReader::new(File::open(path)?))
}

pub fn save_hsi(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    write_hsi(BufWriter::new(File::create(path)?), t)
}

pub fn read_mask<R: Read>(mut r: R) -> Result<Mask> {
    read_magic(&mut r, MASK_MAGIC)?;
    let dims = [read_u32(&mut r)?, read_u32(&mut r)?];
    if dims.contains(&0) {
        return Err(Error::Format("zero dimension".into()));
    }
    let n = checked_len(&dims)?;
    let mut bytes = Vec::new();
    r.by_ref().take(n as u64).read_to_end(&mut bytes)?;
    if bytes.len() != n {
        return Err(Error::Format("truncated payload".into()));
    }
    expect_eof(&mut r)?;
    let data = bytes
        .into_iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("mask byte {v} is not 0 or 1"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    Mask::new((dims[0] as usize, dims[1] as usize), data)
}

pub fn write_mask<W: Write>(mut w: W, m: &Mask) -> Result<()> {
    let (n1, n2) = m.dims();
    w.write_all(MASK_MAGIC)?;
    for d in [n1, n2] {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let bytes: Vec<u8> = m.data().iter().map(|&b| b as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    read_mask(BufReader::new(File::open(path)?))
}

pub fn save_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    write_mask(BufWriter::new(File::create(path)?), m)
}

/// Score CSV: header `i,j,score`, one row per pixel with `i` fastest, scores
/// with 17 significant digits.
pub fn write_scores<W: Write>(out: W, scores: &ScoreMap) -> Result<()> {
    let (n1, n2) = scores.dims();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["i", "j", "score"])?;
    for j in 0..n2 {
        for i in 0..n1 {
            w.write_record([i.to_string(), j.to_string(), format!("{:.16e}", scores.get(i, j))])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores<R: Read>(input: R) -> Result<ScoreMap> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["i", "j", "score"] {
        return Err(Error::Format("score CSV header must be i,j,score".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse_idx = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Format(format!("bad index {s:?}")));
        let i = parse_idx(&rec[0])?;
        let j = parse_idx(&rec[1])?;
        let v: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad score {:?}", &rec[2])))?;
        rows.push((i, j, v));
    }
    if rows.is_empty() {
        return Err(Error::Format("score CSV has no rows".into()));
    }
    let n1 = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    let n2 = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
    if rows.len() != n1 * n2 {
        return Err(Error::Format(format!("expected {} score rows, found {}", n1 * n2, rows.len())));
    }
    let mut values = vec![f64::NAN; n1 * n2];
    for (i, j, v) in rows {
        let slot = &mut values[i + n1 * j];
        if !slot.is_nan() {
            return Err(Error::Format(format!("duplicate pixel ({i}, {j})")));
        }
        *slot = v;
    }
    ScoreMap::new((n1, n2), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreMap> {
    read_scores(BufReader::new(File::open(path)?))
}

pub fn save_scores(path: impl AsRef<Path>, scores: &ScoreMap) -> Result<()> {
    write_scores(BufWriter::new(File::create(path)?), scores)
}
