//! Evaluation of the unary, temporal, coupling and spatial energy terms.
//!
//! All functions operate on one object's fields across every frame of the
//! sequence; multi-object totals are sums of per-object breakdowns.

use rayon::prelude::*;

use crate::datamodel::{
    EnergyBreakdown, ImageFrame, LabelField, LikelihoodField, Params, SoftMask, LIKELIHOOD_EPS,
};
use crate::error::{Error, Result};
use crate::flowgraph::TemporalGraph;
use crate::refine::Refiner;

/// `-theta_u * ln p(X_i = label)` with `p` the likelihood of label 1.
pub fn unary_energy(label: u8, p: f64, theta_u: f64) -> Result<f64> {
    if !(LIKELIHOOD_EPS - 1e-15..=1.0 - LIKELIHOOD_EPS + 1e-15).contains(&p) {
        return Err(Error::validation(format!(
            "likelihood {p} is outside the clamped band"
        )));
    }
    Ok(unary_unchecked(label, p, theta_u))
}

#[inline]
pub(crate) fn unary_unchecked(label: u8, p: f64, theta_u: f64) -> f64 {
    if label == 1 {
        -theta_u * p.ln()
    } else {
        -theta_u * (1.0 - p).ln()
    }
}

/// `theta_t * w * (x_i - x_j)^2` for binary labels.
#[inline]
pub fn temporal_energy(xi: u8, xj: u8, weight: f64, theta_t: f64) -> f64 {
    if xi == xj {
        0.0
    } else {
        theta_t * weight
    }
}

/// `theta_s * |y - g(frame, y)|^2` for one frame.
pub fn spatial_energy(
    y: &SoftMask,
    frame: &ImageFrame,
    refiner: &dyn Refiner,
    theta_s: f64,
) -> Result<f64> {
    let refined = refiner.refine(frame, y).map_err(|e| Error::Refinement {
        frame: y.frame_index(),
        object_id: y.object_id(),
        source: Box::new(e),
    })?;
    Ok(theta_s * squared_distance(y.values(), refined.values()))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `(beta / 2) * |x - y|^2` for one frame.
pub fn coupling_energy(x: &LabelField, y: &SoftMask, beta: f64) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::validation(format!(
            "label dims {:?} differ from mask dims {:?}",
            x.dims(),
            y.dims()
        )));
    }
    Ok(0.5
        * beta
        * x.labels()
            .iter()
            .zip(y.values())
            .map(|(&l, &v)| (l as f64 - v) * (l as f64 - v))
            .sum::<f64>())
}

fn check_layout(
    x: &[LabelField],
    graph: &TemporalGraph,
    likelihoods: &[LikelihoodField],
) -> Result<()> {
    let c = graph.frame_count();
    if x.len() != c || likelihoods.len() != c {
        return Err(Error::validation(format!(
            "expected {c} frames of labels and likelihoods, got {} and {}",
            x.len(),
            likelihoods.len()
        )));
    }
    for (t, (xl, l)) in x.iter().zip(likelihoods).enumerate() {
        if xl.dims() != graph.dims() || l.dims() != graph.dims() {
            return Err(Error::Dimension {
                frame: t,
                expected: (graph.dims().width, graph.dims().height),
                found: (xl.dims().width, xl.dims().height),
            });
        }
    }
    Ok(())
}

/// Sum of unary energies over all pixels of all frames.
pub fn total_unary(x: &[LabelField], likelihoods: &[LikelihoodField], theta_u: f64) -> f64 {
    x.iter()
        .zip(likelihoods)
        .map(|(xl, l)| {
            xl.labels()
                .iter()
                .zip(l.probs())
                .map(|(&lab, &p)| unary_unchecked(lab, p, theta_u))
                .sum::<f64>()
        })
        .sum()
}

/// Sum of temporal energies, each undirected edge counted once.
pub fn total_temporal(x: &[LabelField], graph: &TemporalGraph, theta_t: f64) -> f64 {
    graph
        .edges()
        .iter()
        .map(|e| {
            temporal_energy(
                x[e.a.frame].get(e.a.index),
                x[e.b.frame].get(e.b.index),
                e.weight,
                theta_t,
            )
        })
        .sum()
}

/// The temporal-fusion objective: every term of the decoupled energy except
/// the spatial one, which does not depend on the labeling.
pub fn fusion_objective(
    x: &[LabelField],
    y: &[SoftMask],
    graph: &TemporalGraph,
    likelihoods: &[LikelihoodField],
    params: &Params,
    beta: f64,
) -> Result<EnergyBreakdown> {
    check_layout(x, graph, likelihoods)?;
    if y.len() != x.len() {
        return Err(Error::validation("x and y cover different frame counts"));
    }
    let coupling = x
        .iter()
        .zip(y)
        .map(|(xl, yl)| coupling_energy(xl, yl, beta))
        .sum::<Result<f64>>()?;
    Ok(EnergyBreakdown::new(
        total_unary(x, likelihoods, params.theta_u),
        total_temporal(x, graph, params.theta_t),
        coupling,
        0.0,
    ))
}

fn total_spatial(
    masks: &[SoftMask],
    frames: &[ImageFrame],
    refiner: &dyn Refiner,
    theta_s: f64,
) -> Result<f64> {
    if masks.len() != frames.len() {
        return Err(Error::validation(format!(
            "{} masks for {} frames",
            masks.len(),
            frames.len()
        )));
    }
    let parts = masks
        .par_iter()
        .zip(frames.par_iter())
        .map(|(m, f)| spatial_energy(m, f, refiner, theta_s))
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum())
}

/// The decoupled energy with auxiliary masks `y` at penalty `beta`.
#[allow(clippy::too_many_arguments)]
pub fn decoupled_energy(
    x: &[LabelField],
    y: &[SoftMask],
    graph: &TemporalGraph,
    likelihoods: &[LikelihoodField],
    frames: &[ImageFrame],
    refiner: &dyn Refiner,
    params: &Params,
    beta: f64,
) -> Result<EnergyBreakdown> {
    let fusion = fusion_objective(x, y, graph, likelihoods, params, beta)?;
    let spatial = total_spatial(y, frames, refiner, params.theta_s_for(beta))?;
    Ok(EnergyBreakdown::new(
        fusion.unary,
        fusion.temporal,
        fusion.coupling,
        spatial,
    ))
}

/// The original (non-decoupled) energy of a labeling: one refiner pass per
/// frame on `x` itself. `theta_s` defaults to the initial penalty.
pub fn full_energy(
    x: &[LabelField],
    graph: &TemporalGraph,
    likelihoods: &[LikelihoodField],
    frames: &[ImageFrame],
    refiner: &dyn Refiner,
    params: &Params,
) -> Result<EnergyBreakdown> {
    check_layout(x, graph, likelihoods)?;
    let soft: Vec<SoftMask> = x.iter().map(LabelField::to_soft).collect();
    let spatial = total_spatial(&soft, frames, refiner, params.theta_s_for(params.beta0))?;
    Ok(EnergyBreakdown::new(
        total_unary(x, likelihoods, params.theta_u),
        total_temporal(x, graph, params.theta_t),
        0.0,
        spatial,
    ))
}
