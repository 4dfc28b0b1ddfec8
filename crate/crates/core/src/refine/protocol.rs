//! Wire format spoken with external refiner processes.
//!
//! Little-endian throughout.
//!
//! ```text
//! handshake  engine -> process   "STMR" u32 version
//!            process -> engine   "OKRF" u32 version
//! request    u32 len | u32 frame | u32 object | u32 width | u32 height
//!            | i32 crop_x | i32 crop_y | u32 crop_w | u32 crop_h
//!            | width*height*3 RGB bytes | width*height mask bytes
//! response   u32 len | u32 frame | width*height mask bytes
//! ```
//!
//! `len` counts the bytes after the length field. Mask bytes are
//! `round(255 * value)`.

use std::io::{Read, Write};

use crate::datamodel::{ImageFrame, SoftMask};
use crate::error::{Error, Result};
use crate::morphology::bounding_box;

pub const ENGINE_MAGIC: [u8; 4] = *b"STMR";
pub const PROCESS_MAGIC: [u8; 4] = *b"OKRF";
pub const PROTOCOL_VERSION: u32 = 1;

const REQUEST_HEADER: usize = 8 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub x: i32,
    pub y: i32,
    pub width: u32,
    pub height: u32,
}

/// Bounding box of the coarse mask's support (values >= 0.5), grown by 50%
/// around its center and clipped to the frame. An empty mask yields the
/// whole frame.
pub fn crop_hint(coarse: &SoftMask) -> CropBox {
    let dims = coarse.dims();
    let support: Vec<u8> = coarse.values().iter().map(|&v| (v >= 0.5) as u8).collect();
    let full = CropBox {
        x: 0,
        y: 0,
        width: dims.width as u32,
        height: dims.height as u32,
    };
    let Some((r0, c0, r1, c1)) = bounding_box(&support, dims) else {
        return full;
    };
    let grow = |lo: usize, hi: usize, limit: usize| {
        let len = (hi - lo + 1) as f64;
        let extra = (len * 0.25).ceil() as i64;
        let a = (lo as i64 - extra).max(0);
        let b = (hi as i64 + extra).min(limit as i64 - 1);
        (a, b)
    };
    let (y0, y1) = grow(r0, r1, dims.height);
    let (x0, x1) = grow(c0, c1, dims.width);
    CropBox {
        x: x0 as i32,
        y: y0 as i32,
        width: (x1 - x0 + 1) as u32,
        height: (y1 - y0 + 1) as u32,
    }
}

pub fn mask_to_bytes(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect()
}

pub fn bytes_to_mask(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| b as f64 / 255.0).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefineRequest {
    pub frame_index: u32,
    pub object_id: u32,
    pub width: u32,
    pub height: u32,
    pub crop: CropBox,
    pub rgb: Vec<u8>,
    pub mask: Vec<u8>,
}

impl RefineRequest {
    pub fn from_inputs(frame: &ImageFrame, coarse: &SoftMask) -> Result<Self> {
        if frame.dims() != coarse.dims() {
            return Err(Error::validation("frame and coarse mask sizes differ"));
        }
        Ok(RefineRequest {
            frame_index: coarse.frame_index() as u32,
            object_id: coarse.object_id(),
            width: frame.width() as u32,
            height: frame.height() as u32,
            crop: crop_hint(coarse),
            rgb: frame.rgb().to_vec(),
            mask: mask_to_bytes(coarse.values()),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let body = REQUEST_HEADER + self.rgb.len() + self.mask.len();
        let mut out = Vec::with_capacity(4 + body);
        out.extend_from_slice(&(body as u32).to_le_bytes());
        for v in [self.frame_index, self.object_id, self.width, self.height] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.crop.x.to_le_bytes());
        out.extend_from_slice(&self.crop.y.to_le_bytes());
        out.extend_from_slice(&self.crop.width.to_le_bytes());
        out.extend_from_slice(&self.crop.height.to_le_bytes());
        out.extend_from_slice(&self.rgb);
        out.extend_from_slice(&self.mask);
        out
    }

    /// Decodes a request body (the bytes after the length field).
    pub fn decode_body(body: &[u8]) -> Result<Self> {
        if body.len() < REQUEST_HEADER {
            return Err(Error::Protocol(format!(
                "request body of {} bytes is shorter than its header",
                body.len()
            )));
        }
        let u = |i: usize| u32::from_le_bytes(body[i * 4..i * 4 + 4].try_into().unwrap());
        let (frame_index, object_id, width, height) = (u(0), u(1), u(2), u(3));
        let crop = CropBox {
            x: u(4) as i32,
            y: u(5) as i32,
            width: u(6),
            height: u(7),
        };
        let n = width as usize * height as usize;
        if body.len() != REQUEST_HEADER + 4 * n {
            return Err(Error::Protocol(format!(
                "request for {width}x{height} has {} body bytes, expected {}",
                body.len(),
                REQUEST_HEADER + 4 * n
            )));
        }
        Ok(RefineRequest {
            frame_index,
            object_id,
            width,
            height,
            crop,
            rgb: body[REQUEST_HEADER..REQUEST_HEADER + 3 * n].to_vec(),
            mask: body[REQUEST_HEADER + 3 * n..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefineResponse {
    pub frame_index: u32,
    pub mask: Vec<u8>,
}

impl RefineResponse {
    pub fn encode(&self) -> Vec<u8> {
        let body = 4 + self.mask.len();
        let mut out = Vec::with_capacity(4 + body);
        out.extend_from_slice(&(body as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_index.to_le_bytes());
        out.extend_from_slice(&self.mask);
        out
    }

    /// Decodes a response body for a request with `pixels` pixels.
    pub fn decode_body(body: &[u8], pixels: usize) -> Result<Self> {
        if body.len() != 4 + pixels {
            return Err(Error::Protocol(format!(
                "response body has {} bytes, expected {}",
                body.len(),
                4 + pixels
            )));
        }
        Ok(RefineResponse {
            frame_index: u32::from_le_bytes(body[..4].try_into().unwrap()),
            mask: body[4..].to_vec(),
        })
    }
}

pub fn handshake_bytes(magic: [u8; 4]) -> [u8; 8] {
    let mut out = [0u8; 8];
    out[..4].copy_from_slice(&magic);
    out[4..].copy_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    out
}

/// Validates a peer handshake and returns its version.
pub fn parse_handshake(bytes: &[u8; 8], magic: [u8; 4]) -> Result<u32> {
    if bytes[..4] != magic {
        return Err(Error::Protocol(format!(
            "bad handshake magic {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..].try_into().unwrap());
    if version != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!(
            "unsupported protocol version {version}"
        )));
    }
    Ok(version)
}

/// Reads one length-prefixed frame. Returns `None` on a clean end of stream
/// before the length field.
pub fn read_frame(reader: &mut impl Read) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(Error::Protocol("stream ended inside a length field".into())),
            n => got += n,
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Protocol(format!("truncated message: expected {len} bytes"))
        } else {
            Error::Io(e)
        }
    })?;
    Ok(Some(body))
}

/// Runs the process side of the protocol until the engine closes the
/// stream. `handler` maps each request to refined mask bytes.
pub fn serve<R: Read, W: Write>(
    mut reader: R,
    mut writer: W,
    mut handler: impl FnMut(&RefineRequest) -> Vec<u8>,
) -> Result<()> {
    let mut hello = [0u8; 8];
    reader.read_exact(&mut hello)?;
    parse_handshake(&hello, ENGINE_MAGIC)?;
    writer.write_all(&handshake_bytes(PROCESS_MAGIC))?;
    writer.flush()?;
    while let Some(body) = read_frame(&mut reader)? {
        let req = RefineRequest::decode_body(&body)?;
        let resp = RefineResponse {
            frame_index: req.frame_index,
            mask: handler(&req),
        };
        writer.write_all(&resp.encode())?;
        writer.flush()?;
    }
    Ok(())
}
