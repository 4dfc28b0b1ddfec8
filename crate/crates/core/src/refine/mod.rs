//! Mask-refinement operators.
//!
//! A [`Refiner`] maps an image and a coarse mask to a refined mask of the same
//! size with values in `[0, 1]`. The spatial energy of a mask is its squared
//! distance to its own refinement, so a refiner that leaves good masks
//! untouched and pulls bad ones toward the object yields a useful energy.

mod exemplar;
mod external;
pub mod protocol;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{ImageFrame, LabelField, SoftMask};
use crate::error::{Error, Result};

pub use exemplar::{
    exemplar_build, exemplar_refine, ExemplarConfig, ExemplarModel, ExemplarRefiner,
};
pub use external::{Endpoint, ExternalRefiner, DEFAULT_TIMEOUT};

pub trait Refiner: Send + Sync {
    /// Refines `coarse`, whose `frame_index`/`object_id` identify the call.
    /// Implementations must be deterministic for identical inputs.
    fn refine(&self, frame: &ImageFrame, coarse: &SoftMask) -> Result<SoftMask>;
}

impl<R: Refiner + ?Sized> Refiner for Box<R> {
    fn refine(&self, frame: &ImageFrame, coarse: &SoftMask) -> Result<SoftMask> {
        (**self).refine(frame, coarse)
    }
}

impl<R: Refiner + ?Sized> Refiner for &R {
    fn refine(&self, frame: &ImageFrame, coarse: &SoftMask) -> Result<SoftMask> {
        (**self).refine(frame, coarse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefinerKind {
    Identity,
    Oracle,
    Exemplar,
    External,
}

impl std::str::FromStr for RefinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(RefinerKind::Identity),
            "oracle" => Ok(RefinerKind::Oracle),
            "exemplar" => Ok(RefinerKind::Exemplar),
            "external" => Ok(RefinerKind::External),
            other => Err(Error::config(format!("unknown refiner kind {other:?}"))),
        }
    }
}

/// Checks output size and clamps values into `[0, 1]`, tagging the result
/// with the request's frame and object.
pub fn enforce_output(coarse: &SoftMask, dims_values: Vec<f64>) -> Result<SoftMask> {
    if dims_values.len() != coarse.dims().len() {
        return Err(Error::Refiner(format!(
            "refined mask has {} values, expected {}",
            dims_values.len(),
            coarse.dims().len()
        )));
    }
    SoftMask::clamped(
        coarse.frame_index(),
        coarse.object_id(),
        coarse.dims(),
        dims_values,
    )
}

/// Returns the coarse mask unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

pub fn identity_refine(_frame: &ImageFrame, coarse: &SoftMask) -> SoftMask {
    coarse.clone()
}

impl Refiner for IdentityRefiner {
    fn refine(&self, frame: &ImageFrame, coarse: &SoftMask) -> Result<SoftMask> {
        Ok(identity_refine(frame, coarse))
    }
}

/// Returns the ground-truth mask of the requested frame and object,
/// ignoring the coarse input.
#[derive(Debug, Clone, Default)]
pub struct OracleRefiner {
    gt: BTreeMap<(u32, usize), LabelField>,
}

impl OracleRefiner {
    pub fn new(gt: impl IntoIterator<Item = LabelField>) -> Self {
        OracleRefiner {
            gt: gt
                .into_iter()
                .map(|m| ((m.object_id(), m.frame_index()), m))
                .collect(),
        }
    }
}

pub fn oracle_refine(coarse: &SoftMask, gt: Option<&LabelField>) -> Result<SoftMask> {
    let gt = gt.ok_or_else(|| {
        Error::config(format!(
            "no ground truth for object {} in frame {}",
            coarse.object_id(),
            coarse.frame_index()
        ))
    })?;
    if gt.dims() != coarse.dims() {
        return Err(Error::validation(
            "ground truth and coarse mask sizes differ",
        ));
    }
    Ok(gt
        .to_soft()
        .with_index(coarse.frame_index(), coarse.object_id()))
}

impl Refiner for OracleRefiner {
    fn refine(&self, _frame: &ImageFrame, coarse: &SoftMask) -> Result<SoftMask> {
        oracle_refine(
            coarse,
            self.gt.get(&(coarse.object_id(), coarse.frame_index())),
        )
    }
}
