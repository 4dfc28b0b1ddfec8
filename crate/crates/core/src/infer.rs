//! Alternating temporal-fusion / mask-refinement inference.
//!
//! Fields are indexed `[object][frame]`. Every object shares one temporal
//! graph; objects only interact through [`resolve_overlaps`].

use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::{
    EnergyBreakdown, ImageFrame, LabelField, LikelihoodField, Params, SoftMask,
};
use crate::energy::{decoupled_energy, unary_unchecked};
use crate::error::{Error, Result};
use crate::flowgraph::TemporalGraph;
use crate::morphology::label_components;
use crate::refine::Refiner;

/// Which half-steps of the alternation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AblationMode {
    #[serde(rename = "tf-only")]
    TfOnly,
    #[serde(rename = "mr-only")]
    MrOnly,
    #[serde(rename = "tf-mr")]
    TfAndMr,
}

impl AblationMode {
    pub fn runs_fusion(self) -> bool {
        matches!(self, AblationMode::TfOnly | AblationMode::TfAndMr)
    }

    pub fn runs_refinement(self) -> bool {
        matches!(self, AblationMode::MrOnly | AblationMode::TfAndMr)
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::TfOnly => "tf-only",
            AblationMode::MrOnly => "mr-only",
            AblationMode::TfAndMr => "tf-mr",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tf-only" => Ok(AblationMode::TfOnly),
            "mr-only" => Ok(AblationMode::MrOnly),
            "tf-mr" => Ok(AblationMode::TfAndMr),
            other => Err(Error::config(format!(
                "unknown mode {other:?}, expected tf-only, mr-only or tf-mr"
            ))),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Energy after one outer iteration (iteration 0 is the initialization).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub beta: f64,
    pub total: EnergyBreakdown,
    /// `(object_id, breakdown)` in object order.
    pub per_object: Vec<(u32, EnergyBreakdown)>,
}

#[derive(Debug, Clone)]
pub struct InferenceState {
    pub x: Vec<Vec<LabelField>>,
    pub y: Vec<Vec<SoftMask>>,
    pub beta: f64,
    pub iteration: usize,
    pub energy_trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    /// Final binarized masks, `[object][frame]`, pairwise disjoint.
    pub masks: Vec<Vec<LabelField>>,
    pub state: InferenceState,
}

impl InferenceOutput {
    pub fn energy_trace(&self) -> &[TraceEntry] {
        &self.state.energy_trace
    }
}

/// Inference error carrying the energy trace recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct InferenceFailure {
    #[source]
    pub error: Error,
    pub energy_trace: Vec<TraceEntry>,
}

impl From<Error> for InferenceFailure {
    fn from(error: Error) -> Self {
        InferenceFailure {
            error,
            energy_trace: Vec::new(),
        }
    }
}

/// Local cost of assigning `label` to one pixel: coupling, unary and the
/// temporal terms toward its neighbors.
#[inline]
fn local_cost(
    label: u8,
    y_i: f64,
    p_i: f64,
    neighbors: impl Iterator<Item = (u8, f64)>,
    beta: f64,
    params: &Params,
) -> f64 {
    let d = label as f64 - y_i;
    let temporal: f64 = neighbors
        .filter(|&(xj, _)| xj != label)
        .map(|(_, w)| params.theta_t * w)
        .sum();
    0.5 * beta * d * d + unary_unchecked(label, p_i, params.theta_u) + temporal
}

/// Exact minimizer of the per-pixel fusion objective; ties keep `previous`.
///
/// `neighbors` yields `(x_j, w_ij)` for each temporal neighbor.
pub fn icm_update_pixel(
    previous: u8,
    y_i: f64,
    p_i: f64,
    neighbors: &[(u8, f64)],
    beta: f64,
    params: &Params,
) -> u8 {
    let c0 = local_cost(0, y_i, p_i, neighbors.iter().copied(), beta, params);
    let c1 = local_cost(1, y_i, p_i, neighbors.iter().copied(), beta, params);
    if c0 < c1 {
        0
    } else if c1 < c0 {
        1
    } else {
        previous
    }
}

fn check_object_layout(
    x: &[LabelField],
    y: &[SoftMask],
    likelihoods: &[LikelihoodField],
    graph: &TemporalGraph,
) -> Result<()> {
    let c = graph.frame_count();
    if x.len() != c || y.len() != c || likelihoods.len() != c {
        return Err(Error::validation(format!(
            "expected {c} frames, got {} labels, {} masks, {} likelihoods",
            x.len(),
            y.len(),
            likelihoods.len()
        )));
    }
    let dims = graph.dims();
    for t in 0..c {
        if x[t].dims() != dims || y[t].dims() != dims || likelihoods[t].dims() != dims {
            return Err(Error::Dimension {
                frame: t,
                expected: (dims.width, dims.height),
                found: (x[t].dims().width, x[t].dims().height),
            });
        }
    }
    Ok(())
}

/// Runs up to `params.inner_iterations` Gauss-Seidel sweeps over one
/// object's labels in place (frames ascending, raster order within a frame).
/// Stops early after a sweep that changes nothing. Returns the number of
/// sweeps performed.
pub fn temporal_fusion(
    x: &mut [LabelField],
    y: &[SoftMask],
    graph: &TemporalGraph,
    likelihoods: &[LikelihoodField],
    beta: f64,
    params: &Params,
) -> Result<usize> {
    temporal_fusion_observed(x, y, graph, likelihoods, beta, params, |_, _| {})
}

/// [`temporal_fusion`] calling `observer(sweep, labels)` after every sweep.
pub fn temporal_fusion_observed(
    x: &mut [LabelField],
    y: &[SoftMask],
    graph: &TemporalGraph,
    likelihoods: &[LikelihoodField],
    beta: f64,
    params: &Params,
    mut observer: impl FnMut(usize, &[LabelField]),
) -> Result<usize> {
    check_object_layout(x, y, likelihoods, graph)?;
    let n = graph.dims().len();
    let mut labels: Vec<u8> = x.iter().flat_map(|f| f.labels().iter().copied()).collect();
    let yv: Vec<f64> = y.iter().flat_map(|m| m.values().iter().copied()).collect();
    let pv: Vec<f64> = likelihoods
        .iter()
        .flat_map(|l| l.probs().iter().copied())
        .collect();
    let mut scratch: Vec<(u8, f64)> = Vec::with_capacity(4);
    let mut sweeps = 0;
    for sweep in 1..=params.inner_iterations {
        let mut changed = 0usize;
        for node in 0..labels.len() {
            scratch.clear();
            scratch.extend(
                graph
                    .neighbors(node)
                    .iter()
                    .map(|&(j, w)| (labels[j as usize], w)),
            );
            let next = icm_update_pixel(labels[node], yv[node], pv[node], &scratch, beta, params);
            if next != labels[node] {
                labels[node] = next;
                changed += 1;
            }
        }
        sweeps = sweep;
        for (t, field) in x.iter_mut().enumerate() {
            *field = LabelField::from_raw(
                field.frame_index(),
                field.object_id(),
                field.dims(),
                labels[t * n..(t + 1) * n].to_vec(),
            );
        }
        observer(sweep, x);
        if changed == 0 {
            break;
        }
    }
    Ok(sweeps)
}

/// Refines every frame of one object's labeling: `y_c = g(frame_c, x_c)`.
pub fn mask_refinement(
    x: &[LabelField],
    frames: &[ImageFrame],
    refiner: &dyn Refiner,
) -> Result<Vec<SoftMask>> {
    if x.len() != frames.len() {
        return Err(Error::validation(format!(
            "{} labelings for {} frames",
            x.len(),
            frames.len()
        )));
    }
    x.par_iter()
        .zip(frames.par_iter())
        .map(|(xl, f)| {
            let coarse = xl.to_soft();
            let out = refiner.refine(f, &coarse).map_err(|e| Error::Refinement {
                frame: xl.frame_index(),
                object_id: xl.object_id(),
                source: Box::new(e),
            })?;
            if out.dims() != coarse.dims() {
                return Err(Error::Refinement {
                    frame: xl.frame_index(),
                    object_id: xl.object_id(),
                    source: Box::new(Error::Refiner(format!(
                        "refined mask is {:?}, expected {:?}",
                        out.dims(),
                        coarse.dims()
                    ))),
                });
            }
            Ok(out.with_index(xl.frame_index(), xl.object_id()))
        })
        .collect()
}

/// Cost of one blob under "wholly assigned to `winner`": over every
/// contending object, coupling and unary on the blob pixels plus temporal
/// terms toward the current labels of their neighbors.
#[allow(clippy::too_many_arguments)]
pub fn blob_assignment_cost(
    blob: &[usize],
    frame: usize,
    winner: usize,
    contenders: &[usize],
    x: &[Vec<LabelField>],
    y: &[Vec<SoftMask>],
    likelihoods: &[Vec<LikelihoodField>],
    graph: &TemporalGraph,
    beta: f64,
    params: &Params,
) -> f64 {
    let n = graph.dims().len();
    let mut cost = 0.0;
    for &o in contenders {
        let label = (o == winner) as u8;
        for &i in blob {
            let node = frame * n + i;
            let neighbors = graph.neighbors(node).iter().map(|&(j, w)| {
                let j = j as usize;
                (x[o][j / n].get(j % n), w)
            });
            cost += local_cost(
                label,
                y[o][frame].get(i),
                likelihoods[o][frame].get(i),
                neighbors,
                beta,
                params,
            );
        }
    }
    cost
}

/// Makes object supports disjoint. Each connected blob of pixels claimed by
/// two or more objects goes wholly to the contender with the lowest blob
/// cost (ties to the lowest object id) and is cleared from the others.
/// Frames are processed in ascending order. Returns the number of blobs.
pub fn resolve_overlaps(
    x: &mut [Vec<LabelField>],
    graph: &TemporalGraph,
    likelihoods: &[Vec<LikelihoodField>],
    y: &[Vec<SoftMask>],
    beta: f64,
    params: &Params,
) -> Result<usize> {
    if x.len() != y.len() || x.len() != likelihoods.len() {
        return Err(Error::validation(
            "per-object inputs differ in object count",
        ));
    }
    for o in 0..x.len() {
        check_object_layout(&x[o], &y[o], &likelihoods[o], graph)?;
    }
    if x.len() < 2 {
        return Ok(0);
    }
    let dims = graph.dims();
    let mut blobs_total = 0;
    for t in 0..graph.frame_count() {
        let claims: Vec<u8> = (0..dims.len())
            .map(|i| x.iter().filter(|obj| obj[t].get(i) == 1).count() as u8)
            .collect();
        let (comp, count) = label_components(dims, params.blob_connectivity, |i| claims[i] >= 2);
        if count == 0 {
            continue;
        }
        blobs_total += count;
        let mut blobs: Vec<Vec<usize>> = vec![Vec::new(); count];
        for (i, &c) in comp.iter().enumerate() {
            if c != 0 {
                blobs[c as usize - 1].push(i);
            }
        }
        for blob in &blobs {
            let mut contenders: Vec<usize> = (0..x.len())
                .filter(|&o| blob.iter().any(|&i| x[o][t].get(i) == 1))
                .collect();
            contenders.sort_by_key(|&o| (x[o][t].object_id(), o));
            let mut best: Option<(f64, usize)> = None;
            for &o in &contenders {
                let c = blob_assignment_cost(
                    blob,
                    t,
                    o,
                    &contenders,
                    x,
                    y,
                    likelihoods,
                    graph,
                    beta,
                    params,
                );
                if best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, o));
                }
            }
            let (_, winner) = best.expect("a blob has at least two contenders");
            for &o in &contenders {
                for &i in blob {
                    x[o][t].set(i, o == winner);
                }
            }
        }
    }
    Ok(blobs_total)
}

fn record(
    state: &InferenceState,
    frames: &[ImageFrame],
    graph: &TemporalGraph,
    likelihoods: &[Vec<LikelihoodField>],
    refiner: &dyn Refiner,
    params: &Params,
) -> Result<TraceEntry> {
    let mut total = EnergyBreakdown::default();
    let mut per_object = Vec::with_capacity(state.x.len());
    for ((xo, yo), lik) in state.x.iter().zip(&state.y).zip(likelihoods) {
        let e = decoupled_energy(xo, yo, graph, lik, frames, refiner, params, state.beta)?;
        total = total.combine(&e);
        per_object.push((xo[0].object_id(), e));
    }
    Ok(TraceEntry {
        iteration: state.iteration,
        beta: state.beta,
        total,
        per_object,
    })
}

/// Runs the alternating inference from the initial labeling `init`
/// (`[object][frame]`).
pub fn run_inference(
    init: &[Vec<LabelField>],
    frames: &[ImageFrame],
    graph: &TemporalGraph,
    likelihoods: &[Vec<LikelihoodField>],
    refiner: &dyn Refiner,
    params: &Params,
    mode: AblationMode,
) -> std::result::Result<InferenceOutput, InferenceFailure> {
    run_inference_observed(
        init,
        frames,
        graph,
        likelihoods,
        refiner,
        params,
        mode,
        |_| {},
    )
}

/// [`run_inference`] calling `observer` with the state after every outer
/// iteration (including the initial state, iteration 0).
#[allow(clippy::too_many_arguments)]
pub fn run_inference_observed(
    init: &[Vec<LabelField>],
    frames: &[ImageFrame],
    graph: &TemporalGraph,
    likelihoods: &[Vec<LikelihoodField>],
    refiner: &dyn Refiner,
    params: &Params,
    mode: AblationMode,
    mut observer: impl FnMut(&InferenceState),
) -> std::result::Result<InferenceOutput, InferenceFailure> {
    params.validate()?;
    if init.is_empty() {
        return Err(Error::validation("no objects to segment").into());
    }
    if init.len() != likelihoods.len() {
        return Err(Error::validation(format!(
            "{} initial labelings but {} likelihood sets",
            init.len(),
            likelihoods.len()
        ))
        .into());
    }
    if frames.len() != graph.frame_count() {
        return Err(Error::validation(format!(
            "{} frames but the graph spans {}",
            frames.len(),
            graph.frame_count()
        ))
        .into());
    }
    let mut ids: Vec<u32> = Vec::with_capacity(init.len());
    for obj in init {
        let id = obj.first().map(|f| f.object_id()).unwrap_or(0);
        if obj.iter().any(|f| f.object_id() != id) || ids.contains(&id) {
            return Err(
                Error::validation("each object needs one consistent, unique object id").into(),
            );
        }
        ids.push(id);
    }

    let mut state = InferenceState {
        x: init.to_vec(),
        y: init
            .iter()
            .map(|obj| obj.iter().map(LabelField::to_soft).collect())
            .collect(),
        beta: params.beta_at(1),
        iteration: 0,
        energy_trace: Vec::new(),
    };
    for ((xo, yo), lik) in state.x.iter().zip(&state.y).zip(likelihoods) {
        check_object_layout(xo, yo, lik, graph)?;
    }

    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    return Err(InferenceFailure {
                        error,
                        energy_trace: state.energy_trace,
                    })
                }
            }
        };
    }

    let entry = bail!(record(&state, frames, graph, likelihoods, refiner, params));
    state.energy_trace.push(entry);
    observer(&state);

    let threshold = params.binarize_threshold;
    for k in 1..=params.outer_iterations {
        state.iteration = k;
        state.beta = params.beta_at(k);
        let beta = state.beta;

        if mode.runs_fusion() {
            let y = &state.y;
            bail!(state
                .x
                .par_iter_mut()
                .enumerate()
                .map(|(o, xo)| temporal_fusion(xo, &y[o], graph, &likelihoods[o], beta, params))
                .collect::<Result<Vec<usize>>>());
        } else {
            state.x = state
                .y
                .iter()
                .map(|obj| obj.iter().map(|m| m.binarize(threshold)).collect())
                .collect();
        }

        if mode.runs_refinement() {
            // Objects run in sequence so a failure reports the first object.
            let mut ys = Vec::with_capacity(state.x.len());
            for xo in &state.x {
                ys.push(bail!(mask_refinement(xo, frames, refiner)));
            }
            state.y = ys;
        } else {
            state.y = state
                .x
                .iter()
                .map(|obj| obj.iter().map(LabelField::to_soft).collect())
                .collect();
        }

        if state.x.len() > 1 {
            let n = bail!(resolve_overlaps(
                &mut state.x,
                graph,
                likelihoods,
                &state.y,
                beta,
                params
            ));
            log::debug!("iteration {k}: resolved {n} overlap blob(s)");
        }

        let entry = bail!(record(&state, frames, graph, likelihoods, refiner, params));
        log::info!(
            "iteration {k} ({mode}): beta {beta:.4}, energy {:.6}",
            entry.total.total
        );
        state.energy_trace.push(entry);
        observer(&state);
    }

    let mut masks: Vec<Vec<LabelField>> = state
        .y
        .iter()
        .map(|obj| obj.iter().map(|m| m.binarize(threshold)).collect())
        .collect();
    if masks.len() > 1 {
        bail!(resolve_overlaps(
            &mut masks,
            graph,
            likelihoods,
            &state.y,
            state.beta,
            params
        ));
    }
    Ok(InferenceOutput { masks, state })
}

#[cfg(test)]
#[allow(clippy::type_complexity)]
mod tests {
    use super::*;
    use crate::datamodel::{clamp_likelihood, Dims};
    use crate::energy::fusion_objective;
    use crate::flowgraph::{GraphStats, PixelRef, TemporalEdge};
    use crate::refine::{IdentityRefiner, OracleRefiner};
    use approx::assert_relative_eq;

    fn chain(len: usize, frames: usize) -> TemporalGraph {
        // `len` pixels per frame in a row; pixel i of frame t links to pixel i of t+1.
        let d = Dims::new(len, 1).unwrap();
        let edges = (0..frames - 1)
            .flat_map(|t| {
                (0..len).map(move |i| TemporalEdge {
                    a: PixelRef { frame: t, index: i },
                    b: PixelRef {
                        frame: t + 1,
                        index: i,
                    },
                    weight: 1.0,
                })
            })
            .collect();
        TemporalGraph::from_edges(d, frames, edges, GraphStats::default()).unwrap()
    }

    fn lik(frame: usize, d: Dims, p: &[f64]) -> LikelihoodField {
        clamp_likelihood(frame, 1, d, p).unwrap()
    }

    #[test]
    fn icm_example_costs() {
        let params = Params::default();
        let c1 = local_cost(1, 1.0, 0.7, [(1u8, 1.0)].into_iter(), 1.5, &params);
        let c0 = local_cost(0, 1.0, 0.7, [(1u8, 1.0)].into_iter(), 1.5, &params);
        assert_relative_eq!(c1, 0.3567, epsilon = 1e-4);
        assert_relative_eq!(c0, 2.9540, epsilon = 1e-4);
        assert_eq!(icm_update_pixel(0, 1.0, 0.7, &[(1, 1.0)], 1.5, &params), 1);
    }

    #[test]
    fn icm_unary_dominance_and_ties() {
        let params = Params::default();
        assert_eq!(icm_update_pixel(0, 0.0, 0.99, &[], 0.0, &params), 1);
        let pull = [(0u8, 1.0), (1u8, 1.0)];
        assert_eq!(icm_update_pixel(0, 0.5, 0.5, &pull, 1.5, &params), 0);
        assert_eq!(icm_update_pixel(1, 0.5, 0.5, &pull, 1.5, &params), 1);
    }

    #[test]
    fn no_edges_large_beta_follows_y() {
        let d = Dims::new(6, 1).unwrap();
        let g = TemporalGraph::empty(d, 2);
        let yv = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let y: Vec<SoftMask> = (0..2)
            .map(|t| SoftMask::new(t, 1, d, yv.to_vec()).unwrap())
            .collect();
        let l: Vec<LikelihoodField> = (0..2).map(|t| lik(t, d, &[0.3; 6])).collect();
        let mut x: Vec<LabelField> = (0..2).map(|t| LabelField::zeros(t, 1, d)).collect();
        let sweeps = temporal_fusion(&mut x, &y, &g, &l, 100.0, &Params::default()).unwrap();
        assert_eq!(sweeps, 2);
        for t in 0..2 {
            assert_eq!(x[t], y[t].binarize(0.5));
        }
    }

    #[test]
    fn mr_only_identity_keeps_initialization() {
        let d = Dims::new(4, 4).unwrap();
        let g = chain(16, 3);
        let g = TemporalGraph::from_edges(d, 3, g.edges().to_vec(), GraphStats::default()).unwrap();
        let frames = vec![ImageFrame::filled(d, [0, 0, 0]); 3];
        let init: Vec<LabelField> = (0..3)
            .map(|t| {
                LabelField::new(t, 1, d, (0..16).map(|i| ((i + t) % 3 == 0) as u8).collect())
                    .unwrap()
            })
            .collect();
        let l: Vec<LikelihoodField> = (0..3).map(|t| lik(t, d, &[0.2; 16])).collect();
        let out = run_inference(
            std::slice::from_ref(&init),
            &frames,
            &g,
            &[l],
            &IdentityRefiner,
            &Params::default(),
            AblationMode::MrOnly,
        )
        .unwrap();
        assert_eq!(out.masks[0], init);
        assert_eq!(out.energy_trace().len(), 4);
    }

    #[test]
    fn oracle_output_is_ground_truth() {
        let d = Dims::new(5, 1).unwrap();
        let g = chain(5, 3);
        let frames = vec![ImageFrame::filled(d, [0, 0, 0]); 3];
        let gt: Vec<LabelField> = (0..3)
            .map(|t| LabelField::new(t, 1, d, vec![1, 1, 0, 0, t as u8 % 2]).unwrap())
            .collect();
        let init: Vec<LabelField> = (0..3).map(|t| LabelField::zeros(t, 1, d)).collect();
        let l: Vec<LikelihoodField> = (0..3).map(|t| lik(t, d, &[0.1; 5])).collect();
        let oracle = OracleRefiner::new(gt.clone());
        let out = run_inference(
            &[init],
            &frames,
            &g,
            &[l],
            &oracle,
            &Params::default(),
            AblationMode::TfAndMr,
        )
        .unwrap();
        assert_eq!(out.masks[0], gt);
    }

    #[test]
    fn sweeps_never_increase_fusion_objective() {
        let d = Dims::new(5, 1).unwrap();
        let g = chain(5, 4);
        let params = Params::default();
        let y: Vec<SoftMask> = (0..4)
            .map(|t| SoftMask::new(t, 1, d, vec![0.9, 0.1, 0.6, 0.4, t as f64 / 4.0]).unwrap())
            .collect();
        let l: Vec<LikelihoodField> = (0..4)
            .map(|t| lik(t, d, &[0.2, 0.8, 0.5, 0.45, 0.7 - 0.1 * t as f64]))
            .collect();
        let mut x: Vec<LabelField> = (0..4)
            .map(|t| LabelField::new(t, 1, d, vec![0, 1, 0, 1, (t % 2) as u8]).unwrap())
            .collect();
        let mut last = fusion_objective(&x, &y, &g, &l, &params, 1.5)
            .unwrap()
            .total;
        temporal_fusion_observed(&mut x, &y, &g, &l, 1.5, &params, |_, xs| {
            let e = fusion_objective(xs, &y, &g, &l, &params, 1.5)
                .unwrap()
                .total;
            assert!(e <= last + 1e-12);
            last = e;
        })
        .unwrap();
    }

    fn contention(
        p_a: f64,
        p_b: f64,
    ) -> (
        Vec<Vec<LabelField>>,
        Vec<Vec<SoftMask>>,
        Vec<Vec<LikelihoodField>>,
        TemporalGraph,
    ) {
        let d = Dims::new(4, 1).unwrap();
        let g = TemporalGraph::empty(d, 1);
        let xa = LabelField::new(0, 1, d, vec![1, 1, 1, 0]).unwrap();
        let xb = LabelField::new(0, 2, d, vec![0, 1, 1, 1]).unwrap();
        let ya = xa.to_soft();
        let yb = xb.to_soft();
        let la = clamp_likelihood(0, 1, d, &[0.9, p_a, p_a, 0.1]).unwrap();
        let lb = clamp_likelihood(0, 2, d, &[0.1, p_b, p_b, 0.9]).unwrap();
        (
            vec![vec![xa], vec![xb]],
            vec![vec![ya], vec![yb]],
            vec![vec![la], vec![lb]],
            g,
        )
    }

    #[test]
    fn overlap_goes_to_more_likely_object() {
        let (mut x, y, l, g) = contention(0.9, 0.6);
        let blobs = resolve_overlaps(&mut x, &g, &l, &y, 1.5, &Params::default()).unwrap();
        assert_eq!(blobs, 1);
        assert_eq!(x[0][0].labels(), &[1, 1, 1, 0]);
        assert_eq!(x[1][0].labels(), &[0, 0, 0, 1]);
    }

    #[test]
    fn symmetric_overlap_goes_to_lowest_id() {
        let (mut x, y, l, g) = contention(0.7, 0.7);
        resolve_overlaps(&mut x, &g, &l, &y, 1.5, &Params::default()).unwrap();
        assert_eq!(x[0][0].labels(), &[1, 1, 1, 0]);
        // Same fixture with the object order swapped in memory.
        let (mut x, y, l, g) = contention(0.7, 0.7);
        x.swap(0, 1);
        let y = vec![y[1].clone(), y[0].clone()];
        let l = vec![l[1].clone(), l[0].clone()];
        resolve_overlaps(&mut x, &g, &l, &y, 1.5, &Params::default()).unwrap();
        assert_eq!(x[1][0].labels(), &[1, 1, 1, 0]);
        assert_eq!(x[0][0].labels(), &[0, 0, 0, 1]);
    }

    #[test]
    fn disjoint_objects_untouched() {
        let d = Dims::new(3, 1).unwrap();
        let g = TemporalGraph::empty(d, 1);
        let xa = LabelField::new(0, 1, d, vec![1, 0, 0]).unwrap();
        let xb = LabelField::new(0, 2, d, vec![0, 0, 1]).unwrap();
        let mut x = vec![vec![xa.clone()], vec![xb.clone()]];
        let y = vec![vec![xa.to_soft()], vec![xb.to_soft()]];
        let l = vec![
            vec![LikelihoodField::uniform(0, 1, d, 0.5).unwrap()],
            vec![LikelihoodField::uniform(0, 2, d, 0.5).unwrap()],
        ];
        assert_eq!(
            resolve_overlaps(&mut x, &g, &l, &y, 1.5, &Params::default()).unwrap(),
            0
        );
        assert_eq!(x, vec![vec![xa], vec![xb]]);
    }

    #[test]
    fn refiner_failure_keeps_partial_trace() {
        struct Failing;
        impl Refiner for Failing {
            fn refine(&self, _: &ImageFrame, coarse: &SoftMask) -> Result<SoftMask> {
                if coarse.frame_index() == 1 {
                    Err(Error::Protocol("truncated".into()))
                } else {
                    Ok(coarse.clone())
                }
            }
        }
        let d = Dims::new(2, 1).unwrap();
        let g = chain(2, 2);
        let frames = vec![ImageFrame::filled(d, [0, 0, 0]); 2];
        let init: Vec<LabelField> = (0..2).map(|t| LabelField::zeros(t, 1, d)).collect();
        let l: Vec<LikelihoodField> = (0..2).map(|t| lik(t, d, &[0.5; 2])).collect();
        let err = run_inference(
            &[init],
            &frames,
            &g,
            &[l],
            &Failing,
            &Params::default(),
            AblationMode::TfAndMr,
        )
        .unwrap_err();
        assert!(matches!(err.error, Error::Refinement { frame: 1, .. }));
        assert!(err.energy_trace.is_empty());
    }
}
