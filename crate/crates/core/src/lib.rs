//! Video label propagation by MAP inference in a spatio-temporal binary
//! Markov random field.
//!
//! Temporal links come from optical flow ([`flowgraph`]), per-pixel
//! likelihoods from response maps ([`init`]), and the spatial prior is
//! delegated to a mask-refinement operator ([`refine`]). Inference
//! ([`infer`]) alternates ICM-based temporal fusion with refinement under a
//! growing coupling penalty.

// `!(a >= b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datamodel;
pub mod energy;
pub mod error;
pub mod eval;
pub mod flowgraph;
pub mod infer;
pub mod init;
pub mod morphology;
pub mod refine;
pub mod synth;

pub use datamodel::{
    clamp_likelihood, validate_sequence, Connectivity, Dims, EnergyBreakdown, FlowField,
    ImageFrame, LabelField, LikelihoodField, Params, SoftMask, LIKELIHOOD_EPS,
};
pub use error::{Error, Result};
pub use flowgraph::{build_temporal_graph, TemporalGraph};
pub use infer::{run_inference, AblationMode, InferenceOutput};
pub use refine::{Refiner, RefinerKind};
