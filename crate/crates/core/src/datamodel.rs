//! Value types shared across the engine: frames, label fields, soft masks,
//! likelihoods, flow fields, parameters and energy breakdowns.
//!
//! Pixels are addressed row-major with 0-based indices; frame indices are
//! 0-based except where a function explicitly takes a 1-based frame number.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clamp applied to every per-pixel likelihood.
pub const LIKELIHOOD_EPS: f64 = 1e-4;

/// Width and height of a pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Dims { width, height })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn flatten(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn unflatten(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    /// Bounds check for signed coordinates.
    #[inline]
    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    fn check(&self, other: Dims, frame: usize) -> Result<()> {
        if *self != other {
            return Err(Error::Dimension {
                frame,
                expected: (self.width, self.height),
                found: (other.width, other.height),
            });
        }
        Ok(())
    }
}

/// One RGB video frame, 8 bits per channel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFrame {
    dims: Dims,
    rgb: Vec<u8>,
}

impl ImageFrame {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        let dims = Dims::new(width, height)?;
        if rgb.len() != dims.len() * 3 {
            return Err(Error::validation(format!(
                "rgb buffer has {} bytes, expected {}",
                rgb.len(),
                dims.len() * 3
            )));
        }
        Ok(ImageFrame { dims, rgb })
    }

    pub fn filled(dims: Dims, color: [u8; 3]) -> Self {
        let rgb = color.iter().copied().cycle().take(dims.len() * 3).collect();
        ImageFrame { dims, rgb }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> [u8; 3] {
        let o = index * 3;
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    pub fn set_pixel(&mut self, index: usize, color: [u8; 3]) {
        let o = index * 3;
        self.rgb[o..o + 3].copy_from_slice(&color);
    }
}

/// Checks that a sequence has at least two frames of identical size.
///
/// Returns `(width, height, frame_count)`.
pub fn validate_sequence(frames: &[ImageFrame]) -> Result<(usize, usize, usize)> {
    if frames.len() < 2 {
        return Err(Error::SequenceTooShort(frames.len()));
    }
    let dims = frames[0].dims();
    for (i, f) in frames.iter().enumerate().skip(1) {
        dims.check(f.dims(), i)?;
    }
    Ok((dims.width, dims.height, frames.len()))
}

/// Binary labeling of one frame for one object.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelField {
    frame_index: usize,
    object_id: u32,
    dims: Dims,
    labels: Vec<u8>,
}

impl LabelField {
    pub fn new(frame_index: usize, object_id: u32, dims: Dims, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::validation(format!(
                "label buffer has {} values, expected {}",
                labels.len(),
                dims.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::validation(format!(
                "label value {bad} is not binary"
            )));
        }
        Ok(LabelField {
            frame_index,
            object_id,
            dims,
            labels,
        })
    }

    pub fn zeros(frame_index: usize, object_id: u32, dims: Dims) -> Self {
        LabelField {
            frame_index,
            object_id,
            dims,
            labels: vec![0; dims.len()],
        }
    }

    pub(crate) fn from_raw(
        frame_index: usize,
        object_id: u32,
        dims: Dims,
        labels: Vec<u8>,
    ) -> Self {
        debug_assert!(labels.len() == dims.len() && labels.iter().all(|&l| l <= 1));
        LabelField {
            frame_index,
            object_id,
            dims,
            labels,
        }
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn object_id(&self) -> u32 {
        self.object_id
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, index: usize) -> u8 {
        self.labels[index]
    }

    #[inline]
    pub fn set(&mut self, index: usize, label: bool) {
        self.labels[index] = label as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    pub fn with_index(mut self, frame_index: usize, object_id: u32) -> Self {
        self.frame_index = frame_index;
        self.object_id = object_id;
        self
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            frame_index: self.frame_index,
            object_id: self.object_id,
            dims: self.dims,
            values: self.labels.iter().map(|&l| l as f64).collect(),
        }
    }

    pub fn hamming(&self, other: &LabelField) -> Result<usize> {
        self.dims.check(other.dims, other.frame_index)?;
        Ok(self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count())
    }
}

/// Real-valued mask with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    frame_index: usize,
    object_id: u32,
    dims: Dims,
    values: Vec<f64>,
}

impl SoftMask {
    pub fn new(frame_index: usize, object_id: u32, dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::validation(format!(
                "mask buffer has {} values, expected {}",
                values.len(),
                dims.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!(
                "mask value {bad} outside [0, 1]"
            )));
        }
        Ok(SoftMask {
            frame_index,
            object_id,
            dims,
            values,
        })
    }

    /// Builds a mask from arbitrary reals, clamping into `[0, 1]`.
    /// Non-finite values are rejected.
    pub fn clamped(
        frame_index: usize,
        object_id: u32,
        dims: Dims,
        mut values: Vec<f64>,
    ) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite mask value {bad}")));
        }
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        SoftMask::new(frame_index, object_id, dims, values)
    }

    pub fn zeros(frame_index: usize, object_id: u32, dims: Dims) -> Self {
        SoftMask {
            frame_index,
            object_id,
            dims,
            values: vec![0.0; dims.len()],
        }
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn object_id(&self) -> u32 {
        self.object_id
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn with_index(mut self, frame_index: usize, object_id: u32) -> Self {
        self.frame_index = frame_index;
        self.object_id = object_id;
        self
    }

    /// Label 1 wherever the value is at least `threshold`.
    pub fn binarize(&self, threshold: f64) -> LabelField {
        LabelField {
            frame_index: self.frame_index,
            object_id: self.object_id,
            dims: self.dims,
            labels: self
                .values
                .iter()
                .map(|&v| (v >= threshold) as u8)
                .collect(),
        }
    }
}

/// Per-pixel `p(X_i = 1)`, clamped into `[LIKELIHOOD_EPS, 1 - LIKELIHOOD_EPS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodField {
    frame_index: usize,
    object_id: u32,
    dims: Dims,
    probs: Vec<f64>,
}

impl LikelihoodField {
    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn object_id(&self) -> u32 {
        self.object_id
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// A field with the same value everywhere (clamped).
    pub fn uniform(frame_index: usize, object_id: u32, dims: Dims, p: f64) -> Result<Self> {
        clamp_likelihood(frame_index, object_id, dims, &vec![p; dims.len()])
    }
}

/// Clamps raw probabilities into the likelihood band. Values already inside
/// the band are passed through bit-for-bit.
pub fn clamp_likelihood(
    frame_index: usize,
    object_id: u32,
    dims: Dims,
    raw: &[f64],
) -> Result<LikelihoodField> {
    if raw.len() != dims.len() {
        return Err(Error::validation(format!(
            "likelihood buffer has {} values, expected {}",
            raw.len(),
            dims.len()
        )));
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite likelihood {bad}")));
    }
    let probs = raw
        .iter()
        .map(|&p| p.clamp(LIKELIHOOD_EPS, 1.0 - LIKELIHOOD_EPS))
        .collect();
    Ok(LikelihoodField {
        frame_index,
        object_id,
        dims,
        probs,
    })
}

/// Dense displacement field from `source_frame` to `source_frame + step`.
///
/// Each vector is `(u, v)`: `u` along columns, `v` along rows, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    source_frame: usize,
    step: i32,
    dims: Dims,
    vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(source_frame: usize, step: i32, dims: Dims, vectors: Vec<[f32; 2]>) -> Result<Self> {
        if step == 0 || step.abs() > 2 {
            return Err(Error::validation(format!(
                "flow step must be in {{-2,-1,1,2}}, got {step}"
            )));
        }
        if (source_frame as i64) + (step as i64) < 0 {
            return Err(Error::validation(format!(
                "flow from frame {source_frame} with step {step} targets a negative frame"
            )));
        }
        if vectors.len() != dims.len() {
            return Err(Error::validation(format!(
                "flow buffer has {} vectors, expected {}",
                vectors.len(),
                dims.len()
            )));
        }
        if vectors
            .iter()
            .any(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(Error::validation("flow contains non-finite displacements"));
        }
        Ok(FlowField {
            source_frame,
            step,
            dims,
            vectors,
        })
    }

    pub fn zeros(source_frame: usize, step: i32, dims: Dims) -> Result<Self> {
        FlowField::new(source_frame, step, dims, vec![[0.0, 0.0]; dims.len()])
    }

    pub fn uniform(source_frame: usize, step: i32, dims: Dims, u: f32, v: f32) -> Result<Self> {
        FlowField::new(source_frame, step, dims, vec![[u, v]; dims.len()])
    }

    pub fn source_frame(&self) -> usize {
        self.source_frame
    }

    pub fn step(&self) -> i32 {
        self.step
    }

    pub fn target_frame(&self) -> usize {
        (self.source_frame as i64 + self.step as i64) as usize
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, index: usize) -> [f32; 2] {
        self.vectors[index]
    }
}

/// Connectivity used when grouping pixels into blobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// Energy weights and schedule for inference plus initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub theta_u: f64,
    pub theta_t: f64,
    /// Spatial weight; `None` means it follows the current penalty `beta`.
    pub theta_s: Option<f64>,
    pub beta0: f64,
    pub beta_growth: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub fb_tolerance: f64,
    pub binarize_threshold: f64,
    pub dilate_radius: f64,
    /// `None` means half the previous frame's object bounding-box diagonal.
    pub sigma_motion: Option<f64>,
    /// `None` means `dilate_radius / 2`.
    pub sigma_uncertain: Option<f64>,
    pub blob_connectivity: Connectivity,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            theta_u: 1.0,
            theta_t: 1.0,
            theta_s: None,
            beta0: 1.5,
            beta_growth: 1.2,
            outer_iterations: 3,
            inner_iterations: 5,
            fb_tolerance: 1.5,
            binarize_threshold: 0.5,
            dilate_radius: 20.0,
            sigma_motion: None,
            sigma_uncertain: None,
            blob_connectivity: Connectivity::Four,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("theta_u", self.theta_u),
            ("theta_t", self.theta_t),
            ("beta0", self.beta0),
            ("fb_tolerance", self.fb_tolerance),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if let Some(ts) = self.theta_s {
            if !(ts.is_finite() && ts >= 0.0) {
                return Err(Error::config(format!("theta_s must be >= 0, got {ts}")));
            }
        }
        if !(self.beta_growth.is_finite() && self.beta_growth >= 1.0) {
            return Err(Error::config(format!(
                "beta_growth must be >= 1, got {}",
                self.beta_growth
            )));
        }
        if self.outer_iterations < 1 || self.inner_iterations < 1 {
            return Err(Error::config(
                "outer and inner iteration counts must be >= 1",
            ));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::config(format!(
                "binarize_threshold must be in (0, 1), got {}",
                self.binarize_threshold
            )));
        }
        if !(self.dilate_radius >= 1.0) {
            return Err(Error::config("dilate_radius must be >= 1"));
        }
        for (name, v) in [
            ("sigma_motion", self.sigma_motion),
            ("sigma_uncertain", self.sigma_uncertain),
        ] {
            if let Some(s) = v {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::config(format!("{name} must be > 0, got {s}")));
                }
            }
        }
        Ok(())
    }

    /// Penalty used in outer iteration `k` (1-based).
    pub fn beta_at(&self, k: usize) -> f64 {
        self.beta0 * self.beta_growth.powi(k.saturating_sub(1) as i32)
    }

    pub fn theta_s_for(&self, beta: f64) -> f64 {
        self.theta_s.unwrap_or(beta)
    }

    pub fn sigma_uncertain(&self) -> f64 {
        self.sigma_uncertain.unwrap_or(self.dilate_radius / 2.0)
    }
}

/// The four summands of the decoupled objective and their total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub unary: f64,
    pub temporal: f64,
    pub coupling: f64,
    pub spatial: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(unary: f64, temporal: f64, coupling: f64, spatial: f64) -> Self {
        EnergyBreakdown {
            unary,
            temporal,
            coupling,
            spatial,
            total: unary + temporal + coupling + spatial,
        }
    }

    /// Component-wise sum; the total is recomputed from the parts.
    pub fn combine(&self, other: &EnergyBreakdown) -> EnergyBreakdown {
        EnergyBreakdown::new(
            self.unary + other.unary,
            self.temporal + other.temporal,
            self.coupling + other.coupling,
            self.spatial + other.spatial,
        )
    }

    pub fn is_additive(&self) -> bool {
        let parts = self.unary + self.temporal + self.coupling + self.spatial;
        (self.total - parts).abs() <= 1e-9 * self.total.abs().max(parts.abs()).max(1.0)
    }
}
