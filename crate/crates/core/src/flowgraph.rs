//! Temporal edge set built from dense flow fields.
//!
//! Every pixel may link to at most one pixel in each of the frames
//! `t-2, t-1, t+1, t+2`. A link survives only when the flow vector that
//! discovers it passes the forward-backward consistency check. Edge weights
//! are products of per-frame confidences that decay with the frame number.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::{Dims, FlowField, LabelField, SoftMask};
use crate::error::{Error, Result};

/// Confidence of frame `c` (1-based): `max(0.9^(c-1), 0.3)`.
pub fn frame_confidence(c: usize) -> Result<f64> {
    if c < 1 {
        return Err(Error::Index(
            "frame confidence is defined for c >= 1".into(),
        ));
    }
    Ok(0.9f64.powi((c - 1) as i32).max(0.3))
}

/// Weight of a link between two frames with the given confidences.
pub fn edge_weight(xi_a: f64, xi_b: f64) -> Result<f64> {
    for xi in [xi_a, xi_b] {
        if !(xi > 0.0 && xi <= 1.0) {
            return Err(Error::validation(format!(
                "frame confidence {xi} outside (0, 1]"
            )));
        }
    }
    Ok(xi_a * xi_b)
}

/// Nearest pixel to a displaced position, rounding half away from zero.
#[inline]
pub(crate) fn displaced_index(dims: Dims, index: usize, d: [f32; 2]) -> Option<usize> {
    let (r, c) = dims.unflatten(index);
    let tc = (c as f64 + d[0] as f64).round();
    let tr = (r as f64 + d[1] as f64).round();
    if !(tr.is_finite() && tc.is_finite()) {
        return None;
    }
    let (tr, tc) = (tr as i64, tc as i64);
    dims.contains(tr, tc)
        .then(|| dims.flatten(tr as usize, tc as usize))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Consistency {
    OutOfBounds,
    Inconsistent,
    Valid { target: usize, residual: f64 },
}

fn consistency(fwd: &FlowField, bwd: &FlowField, tau: f64) -> Vec<Consistency> {
    let dims = fwd.dims();
    (0..dims.len())
        .map(|i| {
            let f = fwd.get(i);
            match displaced_index(dims, i, f) {
                None => Consistency::OutOfBounds,
                Some(t) => {
                    let b = bwd.get(t);
                    let du = f[0] as f64 + b[0] as f64;
                    let dv = f[1] as f64 + b[1] as f64;
                    let residual = (du * du + dv * dv).sqrt();
                    if residual <= tau {
                        Consistency::Valid {
                            target: t,
                            residual,
                        }
                    } else {
                        Consistency::Inconsistent
                    }
                }
            }
        })
        .collect()
}

fn check_pair(fwd: &FlowField, bwd: &FlowField) -> Result<()> {
    if fwd.dims() != bwd.dims() {
        return Err(Error::validation(format!(
            "flow dimensions differ: {:?} vs {:?}",
            fwd.dims(),
            bwd.dims()
        )));
    }
    if fwd.step() != -bwd.step() || fwd.target_frame() != bwd.source_frame() {
        return Err(Error::validation(format!(
            "flows are not a forward/backward pair: ({}, {:+}) and ({}, {:+})",
            fwd.source_frame(),
            fwd.step(),
            bwd.source_frame(),
            bwd.step()
        )));
    }
    Ok(())
}

/// Per-pixel validity of `fwd` under the forward-backward check.
///
/// A pixel is valid when its rounded target lies inside the frame and the
/// round-trip residual `|fwd(p) + bwd(target)|` is at most `tau` pixels.
pub fn check_forward_backward(fwd: &FlowField, bwd: &FlowField, tau: f64) -> Result<Vec<bool>> {
    check_pair(fwd, bwd)?;
    Ok(consistency(fwd, bwd, tau)
        .into_iter()
        .map(|c| matches!(c, Consistency::Valid { .. }))
        .collect())
}

/// A pixel in the video volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PixelRef {
    pub frame: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TemporalEdge {
    pub a: PixelRef,
    pub b: PixelRef,
    pub weight: f64,
}

/// A flow vector whose target was in bounds but failed the consistency check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PrunedLink {
    pub source_frame: usize,
    pub step: i32,
    pub index: usize,
}

/// Bookkeeping from graph construction, reported by diagnostics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GraphStats {
    /// Flow vectors examined, keyed by step.
    pub examined: BTreeMap<i32, usize>,
    /// Vectors whose rounded target fell outside the frame.
    pub out_of_bounds: BTreeMap<i32, usize>,
    /// Consistent candidates dropped because an endpoint already had a link
    /// for that step.
    pub conflicts: usize,
    pub pruned: Vec<PrunedLink>,
}

impl GraphStats {
    pub fn pruned_count(&self, step: i32) -> usize {
        self.pruned.iter().filter(|p| p.step == step).count()
    }

    /// Fraction of in-bounds flow vectors rejected by the consistency check.
    pub fn pruned_fraction(&self) -> f64 {
        let in_bounds: usize = self
            .examined
            .iter()
            .map(|(k, n)| n - self.out_of_bounds.get(k).copied().unwrap_or(0))
            .sum();
        if in_bounds == 0 {
            0.0
        } else {
            self.pruned.len() as f64 / in_bounds as f64
        }
    }
}

/// Undirected temporal edges with per-pixel adjacency (CSR layout).
///
/// Nodes are numbered `frame * pixels_per_frame + index`.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    dims: Dims,
    frame_count: usize,
    edges: Vec<TemporalEdge>,
    offsets: Vec<usize>,
    adjacency: Vec<(u32, f64)>,
    stats: GraphStats,
}

impl TemporalGraph {
    /// A graph with no temporal links.
    pub fn empty(dims: Dims, frame_count: usize) -> Self {
        Self::from_edges(dims, frame_count, Vec::new(), GraphStats::default())
            .expect("empty graph is valid")
    }

    /// Builds a graph from an explicit edge list. Edges are deduplicated on
    /// their unordered endpoint pair; the first occurrence wins.
    pub fn from_edges(
        dims: Dims,
        frame_count: usize,
        edges: Vec<TemporalEdge>,
        stats: GraphStats,
    ) -> Result<Self> {
        let n = dims.len();
        let node = |p: PixelRef| p.frame * n + p.index;
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            for p in [e.a, e.b] {
                if p.frame >= frame_count || p.index >= n {
                    return Err(Error::validation(format!(
                        "edge endpoint {p:?} out of range"
                    )));
                }
            }
            if e.a.frame == e.b.frame || e.a.frame.abs_diff(e.b.frame) > 2 {
                return Err(Error::validation(format!(
                    "edge between frames {} and {} is not a temporal link",
                    e.a.frame, e.b.frame
                )));
            }
            if !(e.weight > 0.0 && e.weight <= 1.0) {
                return Err(Error::validation(format!(
                    "edge weight {} outside (0, 1]",
                    e.weight
                )));
            }
            let (a, b) = (node(e.a), node(e.b));
            if seen.insert((a.min(b), a.max(b))) {
                kept.push(e);
            }
        }
        let total = n * frame_count;
        let mut degree = vec![0usize; total + 1];
        for e in &kept {
            degree[node(e.a)] += 1;
            degree[node(e.b)] += 1;
        }
        let mut offsets = Vec::with_capacity(total + 1);
        let mut acc = 0;
        for d in degree.iter().take(total) {
            offsets.push(acc);
            acc += d;
        }
        offsets.push(acc);
        let mut fill = offsets.clone();
        let mut adjacency = vec![(0u32, 0.0f64); acc];
        for e in &kept {
            let (a, b) = (node(e.a), node(e.b));
            adjacency[fill[a]] = (b as u32, e.weight);
            fill[a] += 1;
            adjacency[fill[b]] = (a as u32, e.weight);
            fill[b] += 1;
        }
        for v in 0..total {
            adjacency[offsets[v]..offsets[v + 1]].sort_by_key(|&(u, _)| u);
        }
        Ok(TemporalGraph {
            dims,
            frame_count,
            edges: kept,
            offsets,
            adjacency,
            stats,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn node_count(&self) -> usize {
        self.dims.len() * self.frame_count
    }

    #[inline]
    pub fn node(&self, p: PixelRef) -> usize {
        p.frame * self.dims.len() + p.index
    }

    #[inline]
    pub fn pixel(&self, node: usize) -> PixelRef {
        PixelRef {
            frame: node / self.dims.len(),
            index: node % self.dims.len(),
        }
    }

    /// Neighbors of a node as `(node, weight)` pairs, sorted by node.
    #[inline]
    pub fn neighbors(&self, node: usize) -> &[(u32, f64)] {
        &self.adjacency[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn edges(&self) -> &[TemporalEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn stats(&self) -> &GraphStats {
        &self.stats
    }

    /// Weight of the edge between two pixels, if stored.
    pub fn weight_between(&self, a: PixelRef, b: PixelRef) -> Option<f64> {
        let (na, nb) = (self.node(a), self.node(b));
        let nbrs = self.neighbors(na);
        nbrs.binary_search_by_key(&(nb as u32), |&(u, _)| u)
            .ok()
            .map(|i| nbrs[i].1)
    }

    /// Undirected edge counts keyed by frame distance (1 or 2).
    pub fn edge_counts_by_step(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for e in &self.edges {
            *out.entry(e.a.frame.abs_diff(e.b.frame)).or_insert(0) += 1;
        }
        out
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count())
            .map(|v| self.degree(v))
            .max()
            .unwrap_or(0)
    }
}

struct PairLinks {
    links: Vec<(usize, usize)>,
    pruned: Vec<PrunedLink>,
    /// Out-of-bounds vectors in the forward and backward flow.
    out_of_bounds: [usize; 2],
    conflicts: usize,
}

/// Links between frames `t` and `t + k` (k > 0): consistent candidates from
/// both flow directions, reduced to a matching so no pixel gets two links
/// for the same step. Candidates are taken in order of increasing residual,
/// ties broken by endpoint indices.
fn link_frame_pair(fwd: &FlowField, bwd: &FlowField, tau: f64) -> PairLinks {
    let n = fwd.dims().len();
    let cf = consistency(fwd, bwd, tau);
    let cb = consistency(bwd, fwd, tau);
    let mut pruned = Vec::new();
    let mut oob = [0usize; 2];
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (dir, (flow, cons)) in [(fwd, &cf), (bwd, &cb)].into_iter().enumerate() {
        for (i, c) in cons.iter().enumerate() {
            match *c {
                Consistency::OutOfBounds => oob[dir] += 1,
                Consistency::Inconsistent => pruned.push(PrunedLink {
                    source_frame: flow.source_frame(),
                    step: flow.step(),
                    index: i,
                }),
                Consistency::Valid { target, residual } => {
                    let (p, q) = if dir == 0 { (i, target) } else { (target, i) };
                    cands.push((residual, p, q));
                }
            }
        }
    }
    cands.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    const FREE: usize = usize::MAX;
    let mut partner_of_src = vec![FREE; n];
    let mut used_dst = vec![false; n];
    let mut links = Vec::new();
    let mut conflicts = 0;
    for (_, p, q) in cands {
        if partner_of_src[p] == q {
            // same link found from the other direction
            continue;
        }
        if partner_of_src[p] != FREE || used_dst[q] {
            conflicts += 1;
            continue;
        }
        partner_of_src[p] = q;
        used_dst[q] = true;
        links.push((p, q));
    }
    links.sort_unstable();
    PairLinks {
        links,
        pruned,
        out_of_bounds: oob,
        conflicts,
    }
}

/// Builds the temporal graph for a sequence of `frame_count` frames.
///
/// `flows` may contain any subset of steps in `{-2,-1,1,2}`, but every flow
/// must come with its reverse (`(t, k)` with `(t + k, -k)`).
pub fn build_temporal_graph(
    flows: &[FlowField],
    tau: f64,
    dims: Dims,
    frame_count: usize,
) -> Result<TemporalGraph> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::validation(format!(
            "fb tolerance must be >= 0, got {tau}"
        )));
    }
    let mut by_key: BTreeMap<(usize, i32), &FlowField> = BTreeMap::new();
    for f in flows {
        if f.dims() != dims {
            return Err(Error::validation(format!(
                "flow ({}, {:+}) has dimensions {:?}, expected {:?}",
                f.source_frame(),
                f.step(),
                f.dims(),
                dims
            )));
        }
        if f.target_frame() >= frame_count || f.source_frame() >= frame_count {
            return Err(Error::validation(format!(
                "flow ({}, {:+}) refers to a frame outside the {}-frame sequence",
                f.source_frame(),
                f.step(),
                frame_count
            )));
        }
        if by_key.insert((f.source_frame(), f.step()), f).is_some() {
            return Err(Error::validation(format!(
                "duplicate flow ({}, {:+})",
                f.source_frame(),
                f.step()
            )));
        }
    }
    let mut pairs = Vec::new();
    for (&(t, k), &f) in &by_key {
        let reverse = by_key.get(&(f.target_frame(), -k));
        match reverse {
            None => {
                return Err(Error::config(format!(
                    "flow ({t}, {k:+}) has no matching reverse flow ({}, {:+})",
                    f.target_frame(),
                    -k
                )))
            }
            Some(&r) if k > 0 => pairs.push((f, r)),
            Some(_) => {}
        }
    }

    let per_pair: Vec<_> = pairs
        .par_iter()
        .map(|(fwd, bwd)| link_frame_pair(fwd, bwd, tau))
        .collect();

    let mut stats = GraphStats::default();
    let mut edges = Vec::new();
    for ((fwd, bwd), pair) in pairs.iter().zip(per_pair) {
        let PairLinks {
            links,
            pruned,
            out_of_bounds: oob,
            conflicts,
        } = pair;
        let (t, u) = (fwd.source_frame(), fwd.target_frame());
        let w = edge_weight(frame_confidence(t + 1)?, frame_confidence(u + 1)?)?;
        for (p, q) in links {
            edges.push(TemporalEdge {
                a: PixelRef { frame: t, index: p },
                b: PixelRef { frame: u, index: q },
                weight: w,
            });
        }
        for (flow, o) in [(fwd, oob[0]), (bwd, oob[1])] {
            *stats.examined.entry(flow.step()).or_insert(0) += dims.len();
            *stats.out_of_bounds.entry(flow.step()).or_insert(0) += o;
        }
        stats.conflicts += conflicts;
        stats.pruned.extend(pruned);
    }
    stats.pruned.sort_unstable();
    TemporalGraph::from_edges(dims, frame_count, edges, stats)
}

/// Input to [`warp_mask`]: soft masks are sampled bilinearly, binary masks
/// with nearest-neighbor lookup.
#[derive(Debug, Clone, Copy)]
pub enum MaskInput<'a> {
    Soft(&'a SoftMask),
    Binary(&'a LabelField),
}

impl<'a> From<&'a SoftMask> for MaskInput<'a> {
    fn from(m: &'a SoftMask) -> Self {
        MaskInput::Soft(m)
    }
}

impl<'a> From<&'a LabelField> for MaskInput<'a> {
    fn from(m: &'a LabelField) -> Self {
        MaskInput::Binary(m)
    }
}

/// Warps a mask into the frame `flow.source_frame()` by reverse lookup.
///
/// `flow` is the flow of the target frame pointing back at the mask's frame;
/// output pixel `p` takes the input value at `p + flow(p)`. Samples falling
/// outside the input frame read as 0.
pub fn warp_mask<'a>(mask: impl Into<MaskInput<'a>>, flow: &FlowField) -> Result<SoftMask> {
    let mask = mask.into();
    let (dims, object_id) = match mask {
        MaskInput::Soft(m) => (m.dims(), m.object_id()),
        MaskInput::Binary(m) => (m.dims(), m.object_id()),
    };
    if dims != flow.dims() {
        return Err(Error::validation(format!(
            "mask dimensions {:?} differ from flow dimensions {:?}",
            dims,
            flow.dims()
        )));
    }
    let values: Vec<f64> = (0..dims.len())
        .map(|i| {
            let d = flow.get(i);
            match mask {
                MaskInput::Binary(m) => displaced_index(dims, i, d)
                    .map(|j| m.get(j) as f64)
                    .unwrap_or(0.0),
                MaskInput::Soft(m) => {
                    let (r, c) = dims.unflatten(i);
                    bilinear(m, c as f64 + d[0] as f64, r as f64 + d[1] as f64)
                }
            }
        })
        .collect();
    SoftMask::clamped(flow.source_frame(), object_id, dims, values)
}

fn bilinear(m: &SoftMask, x: f64, y: f64) -> f64 {
    let dims = m.dims();
    let (w, h) = (dims.width as f64, dims.height as f64);
    if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
        return 0.0;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(dims.width - 1), (y0 + 1).min(dims.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |r: usize, c: usize| m.get(dims.flatten(r, c));
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dims(w: usize, h: usize) -> Dims {
        Dims::new(w, h).unwrap()
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(frame_confidence(1).unwrap(), 1.0);
        assert_relative_eq!(frame_confidence(2).unwrap(), 0.9, epsilon = 1e-15);
        assert_eq!(frame_confidence(20).unwrap(), 0.3);
        assert!(frame_confidence(0).is_err());
    }

    #[test]
    fn weight_examples() {
        assert_relative_eq!(edge_weight(1.0, 0.9).unwrap(), 0.9);
        assert_relative_eq!(edge_weight(0.3, 0.3).unwrap(), 0.09, epsilon = 1e-15);
        assert_eq!(edge_weight(1.0, 1.0).unwrap(), 1.0);
        assert!(edge_weight(0.0, 0.5).is_err());
        assert!(edge_weight(1.1, 0.5).is_err());
    }

    #[test]
    fn forward_backward_examples() {
        let d = dims(5, 1);
        let mut fv = vec![[0.0f32, 0.0]; 5];
        let mut bv = vec![[0.0f32, 0.0]; 5];
        // consistent
        fv[0] = [1.0, 0.0];
        bv[1] = [-1.0, 0.0];
        // occluded: target flows nowhere
        fv[1] = [3.0, 0.0];
        // out of frame
        fv[3] = [2.0, 0.0];
        let fwd = FlowField::new(0, 1, d, fv).unwrap();
        let bwd = FlowField::new(1, -1, d, bv).unwrap();
        let v = check_forward_backward(&fwd, &bwd, 1.5).unwrap();
        assert!(v[0]);
        assert!(!v[1]);
        assert!(!v[3]);

        let mut fv = vec![[0.0f32, 0.0]; 5];
        fv[0] = [5.0, 0.0];
        let wide = dims(6, 1);
        let fwd = FlowField::new(0, 1, wide, [fv, vec![[0.0, 0.0]]].concat()).unwrap();
        let bwd = FlowField::zeros(1, -1, wide).unwrap();
        assert!(!check_forward_backward(&fwd, &bwd, 1.5).unwrap()[0]);
    }

    #[test]
    fn forward_backward_rejects_mismatched_pair() {
        let d = dims(3, 3);
        let fwd = FlowField::zeros(0, 1, d).unwrap();
        let bwd = FlowField::zeros(2, -2, d).unwrap();
        assert!(check_forward_backward(&fwd, &bwd, 1.5).is_err());
    }

    fn zero_flows(d: Dims, frames: usize, steps: &[i32]) -> Vec<FlowField> {
        let mut out = Vec::new();
        for t in 0..frames {
            for &k in steps {
                let u = t as i64 + k as i64;
                if u >= 0 && (u as usize) < frames {
                    out.push(FlowField::zeros(t, k, d).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn zero_flow_lattice() {
        let d = dims(4, 3);
        let g = build_temporal_graph(&zero_flows(d, 3, &[1, -1]), 1.5, d, 3).unwrap();
        let mid = g.node(PixelRef { frame: 1, index: 5 });
        assert_eq!(g.degree(mid), 2);
        let first = g.node(PixelRef { frame: 0, index: 5 });
        assert_eq!(g.degree(first), 1);

        let g = build_temporal_graph(&zero_flows(d, 3, &[1, -1, 2, -2]), 1.5, d, 3).unwrap();
        assert_eq!(g.degree(g.node(PixelRef { frame: 0, index: 0 })), 2);
        assert_eq!(g.degree(mid), 2);
        assert_eq!(g.edge_count(), 3 * d.len());
        assert_eq!(g.stats().pruned_fraction(), 0.0);
        let w = g
            .weight_between(
                PixelRef { frame: 0, index: 0 },
                PixelRef { frame: 2, index: 0 },
            )
            .unwrap();
        assert_relative_eq!(w, 0.81, epsilon = 1e-12);
    }

    #[test]
    fn missing_reverse_flow_is_configuration_error() {
        let d = dims(2, 2);
        let flows = vec![FlowField::zeros(0, 1, d).unwrap()];
        assert!(matches!(
            build_temporal_graph(&flows, 1.5, d, 2),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn converging_flow_keeps_one_link_per_step() {
        // Two source pixels round to the same target; only one link survives.
        let d = dims(3, 1);
        let fwd = FlowField::new(0, 1, d, vec![[0.6, 0.0], [-0.4, 0.0], [0.0, 0.0]]).unwrap();
        let bwd = FlowField::new(1, -1, d, vec![[0.0, 0.0], [-0.5, 0.0], [0.0, 0.0]]).unwrap();
        let g = build_temporal_graph(&[fwd, bwd], 1.5, d, 2).unwrap();
        for v in 0..g.node_count() {
            assert!(g.degree(v) <= 1);
        }
        assert!(g.stats().conflicts > 0);
    }

    #[test]
    fn warp_examples() {
        let d = dims(4, 3);
        let mut labels = vec![0u8; 12];
        labels[d.flatten(1, 1)] = 1;
        let m = LabelField::new(0, 1, d, labels).unwrap();
        let zero = FlowField::zeros(1, -1, d).unwrap();
        assert_eq!(warp_mask(&m, &zero).unwrap().values(), m.to_soft().values());

        // backward flow (-1, 0): output(p) = input(p - (1, 0)) shifts right
        let shift = FlowField::uniform(1, -1, d, -1.0, 0.0).unwrap();
        let out = warp_mask(&m, &shift).unwrap();
        assert_eq!(out.get(d.flatten(1, 2)), 1.0);
        assert_eq!(out.sum(), 1.0);
        let soft = warp_mask(&m.to_soft(), &shift).unwrap();
        assert_eq!(soft.get(d.flatten(1, 2)), 1.0);

        let mut edge = vec![0u8; 12];
        edge[d.flatten(1, 0)] = 1;
        let e = LabelField::new(0, 1, d, edge).unwrap();
        let out = warp_mask(&e, &FlowField::uniform(1, -1, d, 1.0, 0.0).unwrap()).unwrap();
        assert!(out.sum() < e.to_soft().sum());
    }

    fn random_flows(d: Dims, frames: usize, seed: &[i8]) -> Vec<FlowField> {
        let mut it = seed.iter().cycle();
        let mut out = Vec::new();
        for t in 0..frames {
            for k in [-2i32, -1, 1, 2] {
                let u = t as i64 + k as i64;
                if u < 0 || u as usize >= frames {
                    continue;
                }
                let v = (0..d.len())
                    .map(|_| {
                        [
                            *it.next().unwrap() as f32 * 0.5,
                            *it.next().unwrap() as f32 * 0.5,
                        ]
                    })
                    .collect();
                out.push(FlowField::new(t, k, d, v).unwrap());
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn graph_invariants(seed in proptest::collection::vec(-3i8..=3, 64..256), tau in 0.0f64..3.0) {
            let d = dims(4, 3);
            let frames = 4;
            let flows = random_flows(d, frames, &seed);
            let g = build_temporal_graph(&flows, tau, d, frames).unwrap();
            for v in 0..g.node_count() {
                let p = g.pixel(v);
                let mut steps = HashSet::new();
                for &(u, w) in g.neighbors(v) {
                    let q = g.pixel(u as usize);
                    let k = q.frame as i64 - p.frame as i64;
                    prop_assert!(steps.insert(k), "two links with step {}", k);
                    prop_assert!(w > 0.0 && w <= 1.0);
                    prop_assert_eq!(g.weight_between(q, p), Some(w));
                    let expect = frame_confidence(p.frame + 1).unwrap() * frame_confidence(q.frame + 1).unwrap();
                    prop_assert!((w - expect).abs() < 1e-12);
                }
                prop_assert!(g.degree(v) <= 4);
            }
            // determinism
            let again = build_temporal_graph(&flows, tau, d, frames).unwrap();
            prop_assert_eq!(g.edges(), again.edges());
            // a tighter tolerance never adds edges
            let tight = build_temporal_graph(&flows, tau / 2.0, d, frames).unwrap();
            prop_assert!(tight.stats().pruned.len() >= g.stats().pruned.len());
            for e in tight.edges() {
                prop_assert_eq!(g.weight_between(e.a, e.b), Some(e.weight));
            }
        }
    }
}
