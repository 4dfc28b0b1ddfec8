use std::net::TcpListener;
use std::thread;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stmrf::energy::spatial_energy;
use stmrf::eval::region_j;
use stmrf::morphology::fill_holes;
use stmrf::refine::protocol::{serve, RefineRequest};
use stmrf::refine::{
    Endpoint, ExemplarConfig, ExemplarRefiner, ExternalRefiner, IdentityRefiner, OracleRefiner,
};
use stmrf::synth::{corrupt_mask, crossing_scene, derive_seed, generate_sequence};
use stmrf::{
    build_temporal_graph, run_inference, AblationMode, Dims, Error, ImageFrame, LabelField, Params,
    Refiner, SoftMask,
};

fn spawn_server(handler: fn(&RefineRequest) -> Vec<u8>) -> Endpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            thread::spawn(move || {
                let _ = serve(stream.try_clone().unwrap(), stream, handler);
            });
        }
    });
    Endpoint::Tcp(addr)
}

#[test]
fn exemplar_keeps_ground_truth_and_repairs_flips() {
    let mut fixed_points = 0;
    for seed in 0..4 {
        let seq = generate_sequence(&crossing_scene(seed, 96, 12)).unwrap();
        let first: Vec<LabelField> = seq.gt.iter().map(|g| g[0].clone()).collect();
        let refiner =
            ExemplarRefiner::build(&seq.frames[0], &first, ExemplarConfig::default()).unwrap();
        for gt in seq.gt.iter().flatten() {
            let frame = &seq.frames[gt.frame_index()];
            // Hole filling closes a mask around an occluder it encloses,
            // so only hole-free masks are fixed points.
            let mut filled = gt.labels().to_vec();
            fill_holes(&mut filled, gt.dims());
            if filled == gt.labels() {
                let out = refiner.refine(frame, &gt.to_soft()).unwrap();
                assert_eq!(&out.binarize(0.5), gt, "seed {seed}: ground truth moved");
                fixed_points += 1;
            }
            let noisy =
                corrupt_mask(gt, 0.1, derive_seed(seed, gt.object_id(), gt.frame_index())).unwrap();
            let fixed = refiner
                .refine(frame, &noisy.to_soft())
                .unwrap()
                .binarize(0.5);
            let (before, after) = (region_j(&noisy, gt).unwrap(), region_j(&fixed, gt).unwrap());
            assert!(after > before, "seed {seed}: J {before} -> {after}");
        }
    }
    assert!(fixed_points > 80, "{fixed_points}");
}

#[test]
fn echo_process_matches_identity_on_random_fixtures() {
    let external = ExternalRefiner::connect(&spawn_server(|req| req.mask.clone())).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..20 {
        let d = Dims::new(rng.gen_range(1..40), rng.gen_range(1..40)).unwrap();
        let rgb = (0..d.len() * 3).map(|_| rng.gen()).collect();
        let frame = ImageFrame::new(d.width, d.height, rgb).unwrap();
        let values = (0..d.len())
            .map(|_| rng.gen_range(0u8..=255) as f64 / 255.0)
            .collect();
        let coarse = SoftMask::new(k, 3, d, values).unwrap();
        assert_eq!(
            external.refine(&frame, &coarse).unwrap(),
            IdentityRefiner.refine(&frame, &coarse).unwrap()
        );
    }
}

#[test]
fn truncated_response_aborts_inference_with_frame() {
    let external = ExternalRefiner::connect(&spawn_server(|req| {
        if req.frame_index == 2 {
            req.mask[1..].to_vec()
        } else {
            req.mask.clone()
        }
    }))
    .unwrap();
    let seq = generate_sequence(&crossing_scene(1, 32, 4)).unwrap();
    let params = Params::default();
    let graph = build_temporal_graph(&seq.flows, 1.5, seq.dims(), 4).unwrap();
    let lik: Vec<Vec<_>> = seq
        .gt
        .iter()
        .map(|obj| {
            obj.iter()
                .map(|g| stmrf::init::build_likelihood(g, 20.0, 10.0).unwrap())
                .collect()
        })
        .collect();
    let failure = run_inference(
        &seq.gt,
        &seq.frames,
        &graph,
        &lik,
        &external,
        &params,
        AblationMode::MrOnly,
    )
    .unwrap_err();
    assert!(
        matches!(&failure.error, Error::Refinement { frame: 2, source, .. } if matches!(**source, Error::Protocol(_))),
        "{}",
        failure.error
    );
    assert!(failure.error.to_string().contains("frame 2"));
}

fn mask_and_gt() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (
        proptest::collection::vec(0u8..2, 48),
        proptest::collection::vec(0u8..2, 48),
    )
}

proptest! {
    #[test]
    fn oracle_spatial_energy_is_scaled_hamming((x, g) in mask_and_gt(), theta in 0.0f64..5.0) {
        let d = Dims::new(8, 6).unwrap();
        let x = LabelField::new(0, 1, d, x).unwrap();
        let gt = LabelField::new(0, 1, d, g).unwrap();
        let oracle = OracleRefiner::new([gt.clone()]);
        let e = spatial_energy(&x.to_soft(), &ImageFrame::filled(d, [0; 3]), &oracle, theta).unwrap();
        prop_assert_eq!(e, theta * x.hamming(&gt).unwrap() as f64);
    }

    #[test]
    fn exemplar_output_is_binary_and_deterministic(
        rgb in proptest::collection::vec(any::<u8>(), 300),
        fg in proptest::collection::vec(0u8..2, 100),
        coarse in proptest::collection::vec(0.0f64..=1.0, 100),
    ) {
        let d = Dims::new(10, 10).unwrap();
        prop_assume!(fg.contains(&1));
        let frame = ImageFrame::new(10, 10, rgb).unwrap();
        let gt = LabelField::new(0, 1, d, fg).unwrap();
        let refiner = ExemplarRefiner::build(&frame, &[gt], ExemplarConfig::default()).unwrap();
        let coarse = SoftMask::new(0, 1, d, coarse).unwrap();
        let a = refiner.refine(&frame, &coarse).unwrap();
        prop_assert!(a.values().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(a, refiner.refine(&frame, &coarse).unwrap());
    }
}
