//! Sequence directories on disk.
//!
//! ```text
//! frames/00000.png          24-bit RGB
//! gt/<object_id>/00000.png  8-bit grayscale, nonzero = object
//! gt/00000.png              or one indexed/grayscale image, value i = object i
//! masks/<object_id>/...     initial masks, same layout as gt
//! responses/<object_id>/... 8-bit grayscale, value / 255 = probability
//! flow/fw1_00000.flo        flow from frame 0 to frame 1 (fw2: to frame 2,
//!                           bw1/bw2: to frames t-1 / t-2)
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use png::{BitDepth, ColorType, Transformations};
use stmrf::synth::SyntheticSequence;
use stmrf::{Dims, FlowField, ImageFrame, LabelField, SoftMask};

use crate::flo::{self, Flo};
use crate::InputError;

pub const FLOW_STEPS: [i32; 4] = [-2, -1, 1, 2];

/// Masks of several objects, `object_id -> frame -> mask`. Frames may be sparse.
pub type ObjectMasks = BTreeMap<u32, BTreeMap<usize, LabelField>>;

pub fn frame_name(t: usize) -> String {
    format!("{t:05}.png")
}

pub fn flow_name(source: usize, step: i32) -> String {
    let dir = if step > 0 { "fw" } else { "bw" };
    format!("{dir}{}_{source:05}.flo", step.unsigned_abs())
}

struct Raster {
    width: usize,
    height: usize,
    color: ColorType,
    data: Vec<u8>,
}

fn decode_png(path: &Path, transformations: Transformations) -> Result<Raster> {
    let file =
        File::open(path).map_err(|e| InputError::Missing(format!("{}: {e}", path.display())))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(transformations);
    let mut reader = decoder
        .read_info()
        .with_context(|| format!("decode {}", path.display()))?;
    let mut data = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut data)
        .with_context(|| format!("decode {}", path.display()))?;
    if info.bit_depth != BitDepth::Eight {
        bail!(
            "{}: unsupported bit depth {:?}",
            path.display(),
            info.bit_depth
        );
    }
    data.truncate(info.buffer_size());
    Ok(Raster {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        data,
    })
}

fn encode_png(path: &Path, dims: Dims, color: ColorType, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), dims.width as u32, dims.height as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

pub fn read_frame(path: &Path, frame_index: usize) -> Result<ImageFrame> {
    let r = decode_png(path, Transformations::EXPAND | Transformations::STRIP_16)?;
    let rgb = match r.color {
        ColorType::Rgb => r.data,
        ColorType::Rgba => r
            .data
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        ColorType::Grayscale => r.data.iter().flat_map(|&g| [g, g, g]).collect(),
        ColorType::GrayscaleAlpha => r.data.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
        ColorType::Indexed => bail!("{}: palette was not expanded", path.display()),
    };
    ImageFrame::new(r.width, r.height, rgb)
        .with_context(|| format!("frame {frame_index} ({})", path.display()))
}

pub fn write_frame(path: &Path, frame: &ImageFrame) -> Result<()> {
    encode_png(path, frame.dims(), ColorType::Rgb, frame.rgb())
}

/// Reads one 8-bit channel: gray levels, or raw palette indices for indexed
/// images.
pub fn read_gray(path: &Path) -> Result<(Dims, Vec<u8>)> {
    let r = decode_png(path, Transformations::IDENTITY)?;
    let values = match r.color {
        ColorType::Grayscale | ColorType::Indexed => r.data,
        ColorType::GrayscaleAlpha => r.data.chunks_exact(2).map(|p| p[0]).collect(),
        other => bail!(
            "{}: expected a grayscale or indexed image, found {other:?}",
            path.display()
        ),
    };
    Ok((Dims::new(r.width, r.height)?, values))
}

pub fn write_gray(path: &Path, dims: Dims, values: &[u8]) -> Result<()> {
    encode_png(path, dims, ColorType::Grayscale, values)
}

pub fn read_mask(path: &Path, frame_index: usize, object_id: u32) -> Result<LabelField> {
    let (dims, values) = read_gray(path)?;
    let labels = values.iter().map(|&v| (v != 0) as u8).collect();
    Ok(LabelField::new(frame_index, object_id, dims, labels)?)
}

pub fn write_mask(path: &Path, mask: &LabelField) -> Result<()> {
    let values: Vec<u8> = mask.labels().iter().map(|&l| l * 255).collect();
    write_gray(path, mask.dims(), &values)
}

pub fn read_response(path: &Path, frame_index: usize, object_id: u32) -> Result<SoftMask> {
    let (dims, values) = read_gray(path)?;
    let values = values.iter().map(|&v| v as f64 / 255.0).collect();
    Ok(SoftMask::new(frame_index, object_id, dims, values)?)
}

/// Frame indices of the `%05d.png` files in `dir`, sorted.
pub fn list_indices(dir: &Path) -> Result<Vec<usize>> {
    let entries =
        fs::read_dir(dir).map_err(|e| InputError::Missing(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(t) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
        {
            out.push(t);
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn numeric_subdirs(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        if let Some(id) = path
            .file_name()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
        {
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Reads a mask directory in either layout: one subdirectory per object, or
/// multi-object index images directly in `dir`.
pub fn read_object_masks(dir: &Path) -> Result<ObjectMasks> {
    if !dir.is_dir() {
        bail!(InputError::Missing(format!(
            "mask directory {}",
            dir.display()
        )));
    }
    let subdirs = numeric_subdirs(dir)?;
    let mut out = ObjectMasks::new();
    if !subdirs.is_empty() {
        for (id, sub) in subdirs {
            let frames = list_indices(&sub)?
                .into_iter()
                .map(|t| Ok((t, read_mask(&sub.join(frame_name(t)), t, id)?)))
                .collect::<Result<_>>()?;
            out.insert(id, frames);
        }
        return Ok(out);
    }
    let indices = list_indices(dir)?;
    let mut images = Vec::with_capacity(indices.len());
    for &t in &indices {
        images.push((t, read_gray(&dir.join(frame_name(t)))?));
    }
    let mut ids: Vec<u32> = images
        .iter()
        .flat_map(|(_, (_, v))| v.iter().map(|&i| i as u32))
        .filter(|&i| i != 0)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    for id in ids {
        let frames = images
            .iter()
            .map(|(t, (dims, v))| {
                let labels = v.iter().map(|&i| (i as u32 == id) as u8).collect();
                Ok((*t, LabelField::new(*t, id, *dims, labels)?))
            })
            .collect::<Result<_>>()?;
        out.insert(id, frames);
    }
    Ok(out)
}

pub fn write_object_masks(dir: &Path, masks: &[Vec<LabelField>]) -> Result<()> {
    for object in masks {
        for m in object {
            let path = dir
                .join(m.object_id().to_string())
                .join(frame_name(m.frame_index()));
            write_mask(&path, m)?;
        }
    }
    Ok(())
}

pub fn read_flow(path: &Path, source: usize, step: i32) -> Result<FlowField> {
    let f = flo::read(path)?;
    Ok(FlowField::new(
        source,
        step,
        Dims::new(f.width, f.height)?,
        f.vectors,
    )?)
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let dims = flow.dims();
    flo::write(
        path,
        &Flo {
            width: dims.width,
            height: dims.height,
            vectors: flow.vectors().to_vec(),
        },
    )
}

/// A sequence directory rooted at `root`.
#[derive(Debug, Clone)]
pub struct SequenceDir {
    pub root: PathBuf,
}

impl SequenceDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SequenceDir { root: root.into() }
    }

    pub fn name(&self) -> String {
        self.root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into())
    }

    pub fn frame_path(&self, t: usize) -> PathBuf {
        self.root.join("frames").join(frame_name(t))
    }

    pub fn flow_path(&self, source: usize, step: i32) -> PathBuf {
        self.root.join("flow").join(flow_name(source, step))
    }

    pub fn frames(&self) -> Result<Vec<ImageFrame>> {
        let dir = self.root.join("frames");
        let indices = list_indices(&dir)?;
        if indices.is_empty() {
            bail!(InputError::Missing(format!(
                "no frames in {}",
                dir.display()
            )));
        }
        if let Some((pos, &t)) = indices.iter().enumerate().find(|(i, &t)| *i != t) {
            bail!(InputError::Missing(format!(
                "frame {pos} ({}) is missing; next present is {t}",
                self.frame_path(pos).display()
            )));
        }
        let frames: Vec<ImageFrame> = indices
            .iter()
            .map(|&t| read_frame(&self.frame_path(t), t))
            .collect::<Result<_>>()?;
        stmrf::validate_sequence(&frames)?;
        Ok(frames)
    }

    pub fn gt(&self) -> Result<ObjectMasks> {
        read_object_masks(&self.root.join("gt"))
    }

    /// Loads every flow file whose target frame exists. Each file must have
    /// its reverse, and backward step-1 flows are required for all `t >= 1`.
    pub fn flows(&self, frame_count: usize) -> Result<Vec<FlowField>> {
        let mut out = Vec::new();
        for t in 0..frame_count {
            for step in FLOW_STEPS {
                let target = t as i64 + step as i64;
                if target < 0 || target >= frame_count as i64 {
                    continue;
                }
                let path = self.flow_path(t, step);
                let reverse = self.flow_path(target as usize, -step);
                let required = step == -1 || reverse.exists();
                if path.exists() {
                    out.push(read_flow(&path, t, step)?);
                } else if required {
                    bail!(InputError::Missing(format!(
                        "flow ({t}, {step:+}) not found at {}",
                        path.display()
                    )));
                }
            }
        }
        Ok(out)
    }

    /// Per-object response maps for every frame, from `responses/` or, when
    /// that is absent, the binary masks in `masks/`.
    pub fn responses(&self, object_ids: &[u32], frame_count: usize) -> Result<Vec<Vec<SoftMask>>> {
        let responses = self.root.join("responses");
        let masks = self.root.join("masks");
        let (dir, soft) = if responses.is_dir() {
            (responses, true)
        } else if masks.is_dir() {
            (masks, false)
        } else {
            bail!(InputError::Missing(format!(
                "neither responses/ nor masks/ in {}",
                self.root.display()
            )));
        };
        if !soft {
            let all = read_object_masks(&dir)?;
            return object_ids
                .iter()
                .map(|&id| {
                    (0..frame_count)
                        .map(|t| {
                            all.get(&id)
                                .and_then(|m| m.get(&t))
                                .map(LabelField::to_soft)
                                .ok_or_else(|| {
                                    InputError::Missing(format!(
                                        "initial mask for object {id}, frame {t}"
                                    ))
                                    .into()
                                })
                        })
                        .collect()
                })
                .collect();
        }
        object_ids
            .iter()
            .map(|&id| {
                (0..frame_count)
                    .map(|t| read_response(&dir.join(id.to_string()).join(frame_name(t)), t, id))
                    .collect()
            })
            .collect()
    }

    /// Writes a generated sequence. `responses` are `[object][frame]`.
    pub fn write_synthetic(
        &self,
        seq: &SyntheticSequence,
        responses: &[Vec<LabelField>],
    ) -> Result<()> {
        for (t, f) in seq.frames.iter().enumerate() {
            write_frame(&self.frame_path(t), f)?;
        }
        write_object_masks(&self.root.join("gt"), &seq.gt)?;
        write_object_masks(&self.root.join("responses"), responses)?;
        fs::create_dir_all(self.root.join("flow"))?;
        for flow in &seq.flows {
            write_flow(&self.flow_path(flow.source_frame(), flow.step()), flow)?;
        }
        let occlusions = serde_json::to_string_pretty(&seq.occlusions)?;
        fs::write(self.root.join("occlusions.json"), occlusions + "\n")?;
        Ok(())
    }
}
