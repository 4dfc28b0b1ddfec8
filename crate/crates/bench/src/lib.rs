//! Fixtures shared by the benchmarks.

use stmrf::init::initialize_sequence;
use stmrf::synth::{corrupt_sequence, crossing_scene, generate_sequence, SyntheticSequence};
use stmrf::{build_temporal_graph, LabelField, LikelihoodField, Params, SoftMask, TemporalGraph};

/// A crossing sequence ready for inference: graph, corrupted initial
/// labeling and likelihoods.
pub struct Scene {
    pub seq: SyntheticSequence,
    pub graph: TemporalGraph,
    pub init: Vec<Vec<LabelField>>,
    pub likelihoods: Vec<Vec<LikelihoodField>>,
    pub params: Params,
}

pub fn crossing(seed: u64, size: usize, frames: usize, flip_rate: f64) -> Scene {
    let params = Params::default();
    let seq = generate_sequence(&crossing_scene(seed, size, frames)).expect("scene");
    let graph =
        build_temporal_graph(&seq.flows, params.fb_tolerance, seq.dims(), frames).expect("graph");
    let noisy = corrupt_sequence(&seq.gt, flip_rate, seed + 1000).expect("corruption");
    let (mut init, mut likelihoods) = (Vec::new(), Vec::new());
    for (noisy, gt) in noisy.iter().zip(&seq.gt) {
        let responses: Vec<SoftMask> = noisy.iter().map(LabelField::to_soft).collect();
        let (x, lik) = initialize_sequence(&responses, &seq.flows, &gt[0], &params).expect("init");
        init.push(x);
        likelihoods.push(lik);
    }
    Scene {
        seq,
        graph,
        init,
        likelihoods,
        params,
    }
}

impl Scene {
    pub fn first_gt(&self) -> Vec<LabelField> {
        self.seq.gt.iter().map(|g| g[0].clone()).collect()
    }
}
