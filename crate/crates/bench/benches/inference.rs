use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use stmrf::infer::temporal_fusion;
use stmrf::refine::{ExemplarConfig, ExemplarRefiner};
use stmrf::synth::random_map_instance;
use stmrf::{build_temporal_graph, run_inference, AblationMode, Params, Refiner};
use stmrf_bench::crossing;

fn graph_build(c: &mut Criterion) {
    let scene = crossing(0, 128, 20, 0.0);
    let dims = scene.seq.dims();
    c.bench_function("graph/128x128x20", |b| {
        b.iter(|| build_temporal_graph(black_box(&scene.seq.flows), 1.5, dims, 20).unwrap())
    });
}

fn icm(c: &mut Criterion) {
    let inst = random_map_instance(7, 64, 64, 5).unwrap();
    let params = Params {
        inner_iterations: 1,
        ..inst.params.clone()
    };
    let start = inst.fields(&vec![0; inst.variable_count()], 1);
    c.bench_function("icm/sweep/64x64x5", |b| {
        b.iter_batched(
            || start.clone(),
            |mut x| {
                temporal_fusion(
                    &mut x,
                    &inst.y,
                    &inst.graph,
                    &inst.likelihoods,
                    inst.beta,
                    &params,
                )
                .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn exemplar(c: &mut Criterion) {
    let scene = crossing(1, 128, 4, 0.15);
    let refiner = ExemplarRefiner::build(
        &scene.seq.frames[0],
        &scene.first_gt(),
        ExemplarConfig::default(),
    )
    .unwrap();
    let coarse = scene.init[0][2].to_soft();
    c.bench_function("exemplar/refine/128x128", |b| {
        b.iter(|| {
            refiner
                .refine(black_box(&scene.seq.frames[2]), black_box(&coarse))
                .unwrap()
        })
    });
}

fn full_run(c: &mut Criterion) {
    let scene = crossing(2, 64, 10, 0.15);
    let refiner = ExemplarRefiner::build(
        &scene.seq.frames[0],
        &scene.first_gt(),
        ExemplarConfig::default(),
    )
    .unwrap();
    let mut group = c.benchmark_group("inference");
    group.sample_size(10);
    group.bench_function("tf-mr/64x64x10", |b| {
        b.iter(|| {
            run_inference(
                &scene.init,
                &scene.seq.frames,
                &scene.graph,
                &scene.likelihoods,
                &refiner,
                &scene.params,
                AblationMode::TfAndMr,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, graph_build, icm, exemplar, full_run);
criterion_main!(benches);
