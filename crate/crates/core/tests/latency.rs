//! Latency benchmark boundaries: staged inputs, run counts and ordering.

use tfn_core::eval::{benchmark_latency, Staged};
use tfn_core::model::{Ablation, Model, ModelConfig, Variant};
use tfn_core::train::{DataBundle, TrainConfig};
use tfn_core::vam::Palette;

fn bundle() -> DataBundle {
    let mut cfg = TrainConfig::smoke(Variant::Small).data;
    cfg.synth.n_tracks = 20;
    DataBundle::synthetic(&cfg, 4).unwrap()
}

fn model(data: &DataBundle, variant: Variant, input_size: usize) -> Model {
    let cfg = ModelConfig::new(variant, Ablation::default(), input_size).unwrap();
    Model::new(cfg, data.stats, Palette::ade20k(), 0).unwrap()
}

#[test]
fn fewer_than_ten_runs_is_rejected() {
    let data = bundle();
    let m = model(&data, Variant::Small, 32);
    let samples: Vec<_> = data.samples.iter().take(2).collect();
    let staged = Staged::load(&samples, data.frames.as_ref()).unwrap();
    let e = benchmark_latency(&m, &staged, data.frames.as_ref(), 0, 9).unwrap_err();
    assert!(e.to_string().contains("at least 10"), "{e}");
    assert!(benchmark_latency(&m, &[], data.frames.as_ref(), 0, 10).is_err());
}

#[test]
fn timed_section_reads_no_frames_and_preprocessing_is_a_segment_of_the_total() {
    let data = bundle();
    let m = model(&data, Variant::Small, 32);
    let samples: Vec<_> = data.samples.iter().take(3).collect();
    let staged = Staged::load(&samples, data.frames.as_ref()).unwrap();
    let reads = data.frames.reads();
    assert_eq!(reads, 6);
    let r = benchmark_latency(&m, &staged, data.frames.as_ref(), 2, 12).unwrap();
    assert_eq!(data.frames.reads(), reads);
    assert_eq!(r.frame_reads_during_timing, 0);
    assert_eq!((r.n_warmup, r.n_runs), (2, 12));
    assert!(r.preprocessing_ms.mean > 0.0);
    assert!(r.preprocessing_ms.mean < r.total_ms.mean);
    assert_eq!(r.params, 5_092_135);
    let table = r.to_table();
    assert!(table.starts_with("variant,M_ms,"), "{table}");
    assert!(table.contains("pose estimation 32.98 ms"));
}

#[test]
fn small_model_is_faster_than_full() {
    let data = bundle();
    let samples: Vec<_> = data.samples.iter().take(2).collect();
    let staged = Staged::load(&samples, data.frames.as_ref()).unwrap();
    let small = benchmark_latency(&model(&data, Variant::Small, 96), &staged, data.frames.as_ref(), 1, 10).unwrap();
    let full = benchmark_latency(&model(&data, Variant::Full, 96), &staged, data.frames.as_ref(), 1, 10).unwrap();
    assert!(
        small.model_ms.median < full.model_ms.median,
        "small {:.2} ms vs full {:.2} ms",
        small.model_ms.median,
        full.model_ms.median
    );
}
