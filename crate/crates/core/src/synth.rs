//! Synthetic sequences with exact masks and flow, seeded mask corruption and
//! an exhaustive MAP solver for small instances.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    clamp_likelihood, Dims, FlowField, ImageFrame, LabelField, LikelihoodField, Params, SoftMask,
};
use crate::error::{Error, Result};
use crate::flowgraph::{build_temporal_graph, PrunedLink, TemporalGraph};

/// Largest instance [`brute_force_map`] will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    /// Axis-aligned rectangle; `origin` is its top-left pixel.
    Rect { height: usize, width: usize },
    /// Closed disc; `origin` is its center.
    Disc { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    /// Object the shape belongs to; shapes without one are pure occluders.
    #[serde(default)]
    pub object_id: Option<u32>,
    pub geometry: Geometry,
    /// `(row, col)` in frame 0.
    pub origin: (i64, i64),
    /// `(row, col)` displacement per frame.
    #[serde(default)]
    pub velocity: (i64, i64),
    pub color: [u8; 3],
    /// Painting order: higher depth is drawn on top.
    #[serde(default)]
    pub depth: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub color: [u8; 3],
    /// Amplitude of a static checker texture added to the background.
    #[serde(default)]
    pub texture: u8,
    /// Period of the checker texture in pixels.
    #[serde(default = "default_texture_period")]
    pub texture_period: usize,
}

fn default_texture_period() -> usize {
    8
}

impl Default for Background {
    fn default() -> Self {
        Background {
            color: [30, 30, 30],
            texture: 0,
            texture_period: default_texture_period(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub background: Background,
    /// Per-channel amplitude of uniform sensor noise added to every pixel.
    #[serde(default)]
    pub noise: u8,
    pub shapes: Vec<ShapeSpec>,
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<ImageFrame>,
    pub object_ids: Vec<u32>,
    /// Ground truth, `[object][frame]`, objects in `object_ids` order.
    pub gt: Vec<Vec<LabelField>>,
    /// Exact flows for every `(t, k)` with `k` in `{-2, -1, 1, 2}` whose
    /// target frame exists.
    pub flows: Vec<FlowField>,
    /// Links whose source pixel is hidden at the target frame, sorted.
    pub occlusions: Vec<PrunedLink>,
}

impl SyntheticSequence {
    pub fn dims(&self) -> Dims {
        self.frames[0].dims()
    }

    pub fn flows_with_steps(&self, steps: &[i32]) -> Vec<FlowField> {
        self.flows
            .iter()
            .filter(|f| steps.contains(&f.step()))
            .cloned()
            .collect()
    }
}

impl ShapeSpec {
    fn position(&self, t: usize) -> (i64, i64) {
        (
            self.origin.0 + self.velocity.0 * t as i64,
            self.origin.1 + self.velocity.1 * t as i64,
        )
    }

    fn covers(&self, t: usize, r: i64, c: i64) -> bool {
        let (pr, pc) = self.position(t);
        match self.geometry {
            Geometry::Rect { height, width } => {
                r >= pr && r < pr + height as i64 && c >= pc && c < pc + width as i64
            }
            Geometry::Disc { radius } => {
                let (dr, dc) = ((r - pr) as f64, (c - pc) as f64);
                dr * dr + dc * dc <= radius * radius
            }
        }
    }

    /// Inclusive `(r0, c0, r1, c1)` extent at frame `t`.
    fn extent(&self, t: usize) -> (i64, i64, i64, i64) {
        let (pr, pc) = self.position(t);
        match self.geometry {
            Geometry::Rect { height, width } => {
                (pr, pc, pr + height as i64 - 1, pc + width as i64 - 1)
            }
            Geometry::Disc { radius } => {
                let r = radius.floor() as i64;
                (pr - r, pc - r, pr + r, pc + r)
            }
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<Dims> {
        let dims =
            Dims::new(self.width, self.height).map_err(|e| Error::Specification(e.to_string()))?;
        if self.frames < 2 {
            return Err(Error::Specification(format!(
                "need at least 2 frames, got {}",
                self.frames
            )));
        }
        if self.background.texture_period == 0 {
            return Err(Error::Specification("texture_period must be >= 1".into()));
        }
        for (s, shape) in self.shapes.iter().enumerate() {
            match shape.geometry {
                Geometry::Rect { height, width } if height == 0 || width == 0 => {
                    return Err(Error::Specification(format!("shape {s} has zero size")))
                }
                Geometry::Disc { radius } if !(radius >= 0.0 && radius.is_finite()) => {
                    return Err(Error::Specification(format!(
                        "shape {s} has invalid radius"
                    )))
                }
                _ => {}
            }
            for t in 0..self.frames {
                let (r0, c0, r1, c1) = shape.extent(t);
                if r0 < 0 || c0 < 0 || r1 >= self.height as i64 || c1 >= self.width as i64 {
                    return Err(Error::Specification(format!(
                        "shape {s} leaves the {}x{} frame at frame {t} (extent rows {r0}..={r1}, cols {c0}..={c1})",
                        self.width, self.height
                    )));
                }
            }
        }
        Ok(dims)
    }

    fn object_ids(&self) -> Vec<u32> {
        let ids: BTreeSet<u32> = self.shapes.iter().filter_map(|s| s.object_id).collect();
        ids.into_iter().collect()
    }
}

const BACKGROUND: usize = usize::MAX;

/// Topmost shape per pixel of frame `t` (painter's order by depth, then by
/// declaration order).
fn owners(spec: &SceneSpec, order: &[usize], dims: Dims, t: usize) -> Vec<usize> {
    let mut owner = vec![BACKGROUND; dims.len()];
    for &s in order {
        let shape = &spec.shapes[s];
        let (r0, c0, r1, c1) = shape.extent(t);
        for r in r0..=r1 {
            for c in c0..=c1 {
                if shape.covers(t, r, c) {
                    owner[dims.flatten(r as usize, c as usize)] = s;
                }
            }
        }
    }
    owner
}

fn velocity_of(spec: &SceneSpec, owner: usize) -> (i64, i64) {
    if owner == BACKGROUND {
        (0, 0)
    } else {
        spec.shapes[owner].velocity
    }
}

/// Renders a scene. Deterministic in the spec (including its seed).
pub fn generate_sequence(spec: &SceneSpec) -> Result<SyntheticSequence> {
    let dims = spec.validate()?;
    let mut order: Vec<usize> = (0..spec.shapes.len()).collect();
    order.sort_by_key(|&s| (spec.shapes[s].depth, s));
    let owner: Vec<Vec<usize>> = (0..spec.frames)
        .map(|t| owners(spec, &order, dims, t))
        .collect();
    let object_ids = spec.object_ids();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg = &spec.background;
    let frames: Vec<ImageFrame> = owner
        .iter()
        .map(|own| {
            let mut f = ImageFrame::filled(dims, bg.color);
            for (i, &o) in own.iter().enumerate() {
                let (r, c) = dims.unflatten(i);
                let mut color = if o == BACKGROUND {
                    let checker = ((r / bg.texture_period) + (c / bg.texture_period)) % 2 == 1;
                    let lift = if checker { bg.texture } else { 0 };
                    bg.color.map(|v| v.saturating_add(lift))
                } else {
                    spec.shapes[o].color
                };
                if spec.noise > 0 {
                    let a = spec.noise as i16;
                    for v in &mut color {
                        *v = (*v as i16 + rng.gen_range(-a..=a)).clamp(0, 255) as u8;
                    }
                }
                f.set_pixel(i, color);
            }
            f
        })
        .collect();

    let gt: Vec<Vec<LabelField>> = object_ids
        .iter()
        .map(|&id| {
            owner
                .iter()
                .enumerate()
                .map(|(t, own)| {
                    let labels = own
                        .iter()
                        .map(|&o| (o != BACKGROUND && spec.shapes[o].object_id == Some(id)) as u8)
                        .collect();
                    LabelField::from_raw(t, id, dims, labels)
                })
                .collect()
        })
        .collect();

    let mut flows = Vec::new();
    let mut occlusions = Vec::new();
    for t in 0..spec.frames {
        for k in [-2i32, -1, 1, 2] {
            let u = t as i64 + k as i64;
            if u < 0 || u >= spec.frames as i64 {
                continue;
            }
            let u = u as usize;
            let mut vectors = Vec::with_capacity(dims.len());
            for (i, &o) in owner[t].iter().enumerate() {
                let (vr, vc) = velocity_of(spec, o);
                let (dr, dc) = (vr * k as i64, vc * k as i64);
                vectors.push([dc as f32, dr as f32]);
                let (r, c) = dims.unflatten(i);
                let (qr, qc) = (r as i64 + dr, c as i64 + dc);
                let q = dims.flatten(qr as usize, qc as usize);
                if owner[u][q] != o {
                    occlusions.push(PrunedLink {
                        source_frame: t,
                        step: k,
                        index: i,
                    });
                }
            }
            flows.push(FlowField::new(t, k, dims, vectors)?);
        }
    }
    occlusions.sort_unstable();
    Ok(SyntheticSequence {
        frames,
        object_ids,
        gt,
        flows,
        occlusions,
    })
}

/// Derives a per-(object, frame) seed from a base seed.
pub fn derive_seed(seed: u64, object_id: u32, frame: usize) -> u64 {
    let mut z = seed
        ^ (object_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (frame as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Flips each pixel independently with probability `flip_rate`.
pub fn corrupt_mask(mask: &LabelField, flip_rate: f64, seed: u64) -> Result<LabelField> {
    if !(0.0..=0.5).contains(&flip_rate) {
        return Err(Error::validation(format!(
            "flip rate must be in [0, 0.5], got {flip_rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = mask
        .labels()
        .iter()
        .map(|&l| if rng.gen_bool(flip_rate) { 1 - l } else { l })
        .collect();
    Ok(LabelField::from_raw(
        mask.frame_index(),
        mask.object_id(),
        mask.dims(),
        labels,
    ))
}

/// Corrupts every frame of every object, seeding each with [`derive_seed`].
pub fn corrupt_sequence(
    gt: &[Vec<LabelField>],
    flip_rate: f64,
    seed: u64,
) -> Result<Vec<Vec<LabelField>>> {
    gt.iter()
        .map(|obj| {
            obj.iter()
                .map(|m| {
                    corrupt_mask(
                        m,
                        flip_rate,
                        derive_seed(seed, m.object_id(), m.frame_index()),
                    )
                })
                .collect()
        })
        .collect()
}

/// A single-object temporal-fusion problem small enough to enumerate.
#[derive(Debug, Clone)]
pub struct MapInstance {
    pub graph: TemporalGraph,
    pub likelihoods: Vec<LikelihoodField>,
    pub y: Vec<SoftMask>,
    pub beta: f64,
    pub params: Params,
}

impl MapInstance {
    pub fn variable_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Temporal-fusion objective of a flat labeling (node order).
    pub fn objective(&self, labels: &[u8]) -> f64 {
        let n = self.graph.dims().len();
        let mut e = 0.0;
        for (v, &l) in labels.iter().enumerate() {
            let (t, i) = (v / n, v % n);
            let p = self.likelihoods[t].get(i);
            let d = l as f64 - self.y[t].get(i);
            e += 0.5 * self.beta * d * d;
            e -= self.params.theta_u * if l == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        for edge in self.graph.edges() {
            let a = labels[edge.a.frame * n + edge.a.index];
            let b = labels[edge.b.frame * n + edge.b.index];
            if a != b {
                e += self.params.theta_t * edge.weight;
            }
        }
        e
    }

    /// Splits a flat labeling into per-frame fields.
    pub fn fields(&self, labels: &[u8], object_id: u32) -> Vec<LabelField> {
        let n = self.graph.dims().len();
        labels
            .chunks(n)
            .enumerate()
            .map(|(t, chunk)| LabelField::from_raw(t, object_id, self.graph.dims(), chunk.to_vec()))
            .collect()
    }

    pub fn flatten(fields: &[LabelField]) -> Vec<u8> {
        fields
            .iter()
            .flat_map(|f| f.labels().iter().copied())
            .collect()
    }
}

/// Global minimizer of the temporal-fusion objective by enumeration; ties go
/// to the lexicographically smallest labeling.
pub fn brute_force_map(instance: &MapInstance) -> Result<(Vec<u8>, f64)> {
    let n = instance.variable_count();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Size(n, BRUTE_FORCE_LIMIT));
    }
    let mut labels = vec![0u8; n];
    let mut best = (labels.clone(), f64::INFINITY);
    for m in 0u32..(1u32 << n) {
        for (v, l) in labels.iter_mut().enumerate() {
            *l = ((m >> (n - 1 - v)) & 1) as u8;
        }
        let e = instance.objective(&labels);
        if e < best.1 {
            best = (labels.clone(), e);
        }
    }
    Ok(best)
}

/// Random instance over `frames` frames of `width x height` pixels. Flows
/// are a per-pair integer translation with sporadic per-pixel jitter, so
/// some links fail the consistency check.
pub fn random_map_instance(
    seed: u64,
    width: usize,
    height: usize,
    frames: usize,
) -> Result<MapInstance> {
    let dims = Dims::new(width, height)?;
    if frames < 2 {
        return Err(Error::SequenceTooShort(frames));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flows = Vec::new();
    for t in 0..frames {
        for k in [1i32, 2] {
            if t + k as usize >= frames {
                continue;
            }
            let (du, dv) = (rng.gen_range(-1i32..=1) * k, rng.gen_range(-1i32..=1) * k);
            let mut make = |sign: i32| -> Vec<[f32; 2]> {
                (0..dims.len())
                    .map(|_| {
                        let mut v = [(sign * du) as f32, (sign * dv) as f32];
                        if rng.gen_bool(0.15) {
                            v[0] += rng.gen_range(-3i32..=3) as f32;
                            v[1] += rng.gen_range(-3i32..=3) as f32;
                        }
                        v
                    })
                    .collect()
            };
            let fwd = make(1);
            let bwd = make(-1);
            flows.push(FlowField::new(t, k, dims, fwd)?);
            flows.push(FlowField::new(t + k as usize, -k, dims, bwd)?);
        }
    }
    let params = Params {
        theta_u: rng.gen_range(0.2..2.0),
        theta_t: rng.gen_range(0.2..3.0),
        ..Params::default()
    };
    let graph = build_temporal_graph(&flows, params.fb_tolerance, dims, frames)?;
    let binary_y = rng.gen_bool(0.3);
    let mut likelihoods = Vec::with_capacity(frames);
    let mut y = Vec::with_capacity(frames);
    for t in 0..frames {
        let p: Vec<f64> = (0..dims.len()).map(|_| rng.gen_range(0.02..0.98)).collect();
        likelihoods.push(clamp_likelihood(t, 1, dims, &p)?);
        let v: Vec<f64> = (0..dims.len())
            .map(|_| {
                if binary_y {
                    rng.gen_range(0u8..2) as f64
                } else {
                    rng.gen_range(0.0..=1.0)
                }
            })
            .collect();
        y.push(SoftMask::new(t, 1, dims, v)?);
    }
    Ok(MapInstance {
        graph,
        likelihoods,
        y,
        beta: rng.gen_range(0.0..3.0),
        params,
    })
}

/// Two-object scene with a crossing: object 1 (a rectangle) moves right,
/// object 2 (a disc, drawn in front) moves left through the rectangle's
/// middle rows, so the rectangle is mostly hidden mid-sequence.
/// Colors are well separated from each other and the background.
pub fn crossing_scene(seed: u64, size: usize, frames: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as i64;
    let h1 = rng.gen_range(s / 6..=s / 4);
    let w1 = rng.gen_range(s / 6..=s / 4);
    let r2 = rng.gen_range(s / 12..=s / 8) as f64;
    let speed = 2 + rng.gen_range(0..=1i64);
    let travel = speed * (frames as i64 - 1);
    let row1 = rng.gen_range(s / 4..=s / 3);
    let row2 = row1 + h1 / 2 + rng.gen_range(-2..=2);
    let c1 = rng.gen_range(2..=(s - travel - w1 - 2).max(2));
    let c2 = (c1 + w1 / 2 + travel).min(s - r2 as i64 - 1);
    let palette = [
        [220u8, 40, 40],
        [40, 200, 60],
        [240, 200, 30],
        [200, 40, 200],
    ];
    let a = rng.gen_range(0..palette.len());
    let b = (a + 1 + rng.gen_range(0..palette.len() - 1)) % palette.len();
    SceneSpec {
        width: size,
        height: size,
        frames,
        seed,
        background: Background {
            color: [30, 50, 140],
            texture: 40,
            texture_period: 8,
        },
        noise: 6,
        shapes: vec![
            ShapeSpec {
                object_id: Some(1),
                geometry: Geometry::Rect {
                    height: h1 as usize,
                    width: w1 as usize,
                },
                origin: (row1, c1),
                velocity: (0, speed),
                color: palette[a],
                depth: 0,
            },
            ShapeSpec {
                object_id: Some(2),
                geometry: Geometry::Disc { radius: r2 },
                origin: (row2.clamp(r2 as i64, s - r2 as i64 - 1), c2),
                velocity: (0, -speed),
                color: palette[b],
                depth: 1,
            },
        ],
    }
}
