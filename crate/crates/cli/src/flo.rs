//! Middlebury `.flo` optical-flow files.
//!
//! Layout (little-endian): `f32` magic 202021.25, `i32` width, `i32` height,
//! then `width * height` interleaved `(u, v)` `f32` pairs in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const FLO_MAGIC: f32 = 202021.25;

/// Decoded flow: width, height and per-pixel `[u, v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Flo {
    pub width: usize,
    pub height: usize,
    pub vectors: Vec<[f32; 2]>,
}

pub fn decode(mut reader: impl Read) -> Result<Flo> {
    let mut head = [0u8; 12];
    reader.read_exact(&mut head).context("flo header")?;
    let magic = f32::from_le_bytes(head[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        bail!("bad flo magic {magic}, expected {FLO_MAGIC}");
    }
    let width = i32::from_le_bytes(head[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(head[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        bail!("invalid flo dimensions {width}x{height}");
    }
    let (width, height) = (width as usize, height as usize);
    let mut body = vec![0u8; width * height * 8];
    reader.read_exact(&mut body).context("truncated flo data")?;
    let vectors = body
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            ]
        })
        .collect();
    Ok(Flo {
        width,
        height,
        vectors,
    })
}

pub fn encode(flo: &Flo, mut writer: impl Write) -> Result<()> {
    if flo.vectors.len() != flo.width * flo.height {
        bail!(
            "{} vectors for a {}x{} flow",
            flo.vectors.len(),
            flo.width,
            flo.height
        );
    }
    writer.write_all(&FLO_MAGIC.to_le_bytes())?;
    writer.write_all(&(flo.width as i32).to_le_bytes())?;
    writer.write_all(&(flo.height as i32).to_le_bytes())?;
    for [u, v] in &flo.vectors {
        writer.write_all(&u.to_le_bytes())?;
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Flo> {
    let file = File::open(path).with_context(|| format!("open {}", path.display()))?;
    decode(BufReader::new(file)).with_context(|| format!("read {}", path.display()))
}

pub fn write(path: &Path, flo: &Flo) -> Result<()> {
    let file = File::create(path).with_context(|| format!("create {}", path.display()))?;
    encode(flo, BufWriter::new(file)).with_context(|| format!("write {}", path.display()))
}
