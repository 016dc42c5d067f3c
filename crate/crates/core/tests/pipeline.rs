use std::sync::Arc;

use gvd_core::compose::CompositionPlan;
use gvd_core::diffusion::{DenoiserSpec, DiffusionSchedule};
use gvd_core::pipeline::{distill, write_traces_csv, DistillConfig, Method};
use gvd_core::world::{build_world, sample_dataset, WorldSpec};

fn setup() -> (gvd_core::dataset::VideoDataset, DenoiserSpec, DiffusionSchedule) {
    let world = Arc::new(build_world(&WorldSpec::default_benchmark(0)).unwrap());
    let train = sample_dataset(&world, 60, 1).unwrap();
    (train, DenoiserSpec::Oracle(world), DiffusionSchedule::linear(1000, 1e-4, 2e-2).unwrap())
}

#[test]
fn single_instance_per_class_is_guided_to_the_class_center() {
    let (train, den, s) = setup();
    let cfg = DistillConfig { ipc: 1, composition: CompositionPlan::identity(16), ..Default::default() };
    let out = distill(&train, &den, &s, &cfg).unwrap();
    assert_eq!(out.distilled.len(), 5);
    let centers = out.centers.unwrap();
    for c in 0..5 {
        assert_eq!(centers.per_class[c].len(), 1);
        assert_eq!(out.distilled.class_videos(c as u32).len(), 1);
    }
    assert_eq!(out.traces.len(), 5);
    assert!(out.traces.iter().all(|t| t.trace.steps.len() == 50));
}

#[test]
fn every_method_emits_ipc_videos_per_class() {
    let (train, den, s) = setup();
    for method in [Method::Gvd, Method::Naive, Method::Knoise, Method::Degenerate] {
        let cfg = DistillConfig { method, ..Default::default() };
        let out = distill(&train, &den, &s, &cfg).unwrap();
        assert_eq!(out.distilled.len(), 25, "{}", method.name());
        for c in 0..5u32 {
            assert_eq!(out.distilled.class_videos(c).len(), 5);
        }
        let expected_raw = if method == Method::Degenerate { 25 } else { 100 };
        assert_eq!(out.raw.len(), expected_raw);
    }
}

#[test]
fn distillation_ignores_thread_count_and_writes_traces() {
    let (train, den, s) = setup();
    let cfg = DistillConfig { ipc: 2, ..Default::default() };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| distill(&train, &den, &s, &cfg).unwrap())
    };
    let (a, b) = (run(1), run(6));
    assert_eq!(a.raw, b.raw);
    assert_eq!(a.distilled, b.distilled);
    assert_eq!(a.provenance, b.provenance);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_traces_csv(&a.traces, &path).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["instance_id", "class_id", "step_t", "g_norm", "x0_dist"]
    );
    assert_eq!(rdr.records().count(), a.traces.len() * 50);
}

#[test]
fn invalid_configs_are_rejected_before_work() {
    let (train, den, s) = setup();
    let bad = DistillConfig { ipc: 0, ..Default::default() };
    assert!(distill(&train, &den, &s, &bad).is_err());
    let bad = DistillConfig { composition: CompositionPlan { pattern: vec![5, 5], ..Default::default() }, ..Default::default() };
    assert!(distill(&train, &den, &s, &bad).is_err());
}
