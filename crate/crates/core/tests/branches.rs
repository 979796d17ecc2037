//! Behavioral contracts of the individual branches and the fusion head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfn_core::data::{BBox, Image, NormStats, Sample, Split};
use tfn_core::model::{Ablation, Fusion, Model, ModelConfig, Network, Variant};
use tfn_core::sam::{Sam, SamConfig, EMBED_DIM};
use tfn_core::vam::{Lka, Palette, Vam, VamConfig, VamMode, VanConfig};
use tfn_tensor::{Graph, ParamStore, Tensor};

fn rnd(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn set(store: &mut ParamStore<f32>, id: tfn_tensor::ParamId, data: Vec<f32>) {
    let shape = store.value(id).shape().to_vec();
    *store.value_mut(id) = Tensor::new(&shape, data).unwrap();
}

fn delta(k: usize, ky: usize, kx: usize) -> Vec<f32> {
    let mut d = vec![0.0; k * k];
    d[ky * k + kx] = 1.0;
    d
}

fn lka_store(seed: u64) -> (ParamStore<f32>, Lka) {
    let mut store = ParamStore::new();
    let lka = Lka::new(&mut store, "lka", 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, lka)
}

fn lka_out(store: &ParamStore<f32>, lka: &Lka, x: Tensor<f32>) -> Tensor<f32> {
    let mut g = Graph::no_grad(store);
    let x = g.constant(x);
    let y = lka.forward(&mut g, x).unwrap();
    g.value(y).clone()
}

fn ramp() -> Tensor<f32> {
    Tensor::new(&[1, 1, 8, 8], (0..64).map(|v| v as f32).collect()).unwrap()
}

#[test]
fn lka_of_zero_input_is_zero() {
    let (store, lka) = lka_store(1);
    let y = lka_out(&store, &lka, Tensor::zeros(&[1, 1, 8, 8]));
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lka_with_unit_attention_is_identity() {
    let (mut store, lka) = lka_store(2);
    set(&mut store, lka.local.w, delta(5, 2, 2));
    set(&mut store, lka.local.b, vec![0.0]);
    set(&mut store, lka.long_range.w, delta(7, 3, 3));
    set(&mut store, lka.long_range.b, vec![0.0]);
    set(&mut store, lka.channel.w, vec![0.0]);
    set(&mut store, lka.channel.b, vec![1.0]);
    let x = ramp();
    assert_eq!(lka_out(&store, &lka, x.clone()).data(), x.data());
}

#[test]
fn lka_shifted_local_kernel_hand_computed() {
    // Local delta one column right of center reads x(r, c+1); the dilated
    // kernel is the identity; the pointwise conv maps a to 2a + 0.5.
    let (mut store, lka) = lka_store(3);
    set(&mut store, lka.local.w, delta(5, 2, 3));
    set(&mut store, lka.local.b, vec![0.0]);
    set(&mut store, lka.long_range.w, delta(7, 3, 3));
    set(&mut store, lka.long_range.b, vec![0.0]);
    set(&mut store, lka.channel.w, vec![2.0]);
    set(&mut store, lka.channel.b, vec![0.5]);
    let y = lka_out(&store, &lka, ramp());
    // x(3,4) = 28, a = x(3,5) = 29, gate 58.5
    assert_eq!(y.data()[3 * 8 + 4], 28.0 * 58.5);
    // x(3,7) = 31 and its right neighbor is padding, gate 0.5
    assert_eq!(y.data()[3 * 8 + 7], 31.0 * 0.5);
}

#[test]
fn lka_output_is_input_times_attention_map() {
    for seed in 0..5 {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lka = Lka::new(&mut store, "lka", 3, &mut rng).unwrap();
        let x = rnd(&[2, 3, 9, 9], &mut rng);
        let mut g = Graph::no_grad(&store);
        let xn = g.constant(x.clone());
        let a = lka.attention_map(&mut g, xn).unwrap();
        let y = lka.forward(&mut g, xn).unwrap();
        for ((&yv, &av), &xv) in g.value(y).data().iter().zip(g.value(a).data()).zip(x.data()) {
            assert!((yv - av * xv).abs() <= 1e-6 * (1.0 + yv.abs()));
        }
    }
}

fn sam_embedding(sam: &Sam, store: &ParamStore<f32>, past: &Tensor<f32>, pred: Option<&Tensor<f32>>) -> Vec<f32> {
    let mut g = Graph::no_grad(store);
    let p = g.constant(past.clone());
    let f = pred.map(|t| g.constant(t.clone()));
    let y = sam.forward(&mut g, p, f).unwrap();
    assert_eq!(g.shape(y), &[1, EMBED_DIM]);
    g.value(y).data().to_vec()
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn sam_is_sensitive_to_row_order() {
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sam = Sam::new(&mut store, "sam", SamConfig::small(), &mut rng).unwrap();
        let past = rnd(&[1, 15, 5], &mut rng);
        let pred = rnd(&[1, 60, 5], &mut rng);
        let mut swapped = past.clone();
        let d = swapped.data_mut();
        for c in 0..5 {
            d.swap(2 * 5 + c, 9 * 5 + c);
        }
        let a = sam_embedding(&sam, &store, &past, Some(&pred));
        let b = sam_embedding(&sam, &store, &swapped, Some(&pred));
        assert!(max_diff(&a, &b) > 1e-5, "seed {seed}: swapping observed rows left the embedding unchanged");
    }
}

#[test]
fn sam_uses_the_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let sam = Sam::new(&mut store, "sam", SamConfig::small(), &mut rng).unwrap();
    let past = rnd(&[1, 15, 5], &mut rng);
    let a = sam_embedding(&sam, &store, &past, Some(&rnd(&[1, 60, 5], &mut rng)));
    let b = sam_embedding(&sam, &store, &past, Some(&rnd(&[1, 60, 5], &mut rng)));
    assert!(max_diff(&a, &b) > 1e-5);
}

#[test]
fn sam_without_prediction_reads_observed_rows_only() {
    let cfg = SamConfig { use_prediction: false, ..SamConfig::small() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let sam = Sam::new(&mut store, "sam", cfg, &mut rng).unwrap();
    let past = rnd(&[1, 15, 5], &mut rng);
    let a = sam_embedding(&sam, &store, &past, None);
    let b = sam_embedding(&sam, &store, &past, Some(&rnd(&[1, 60, 5], &mut rng)));
    assert_eq!(a, b);
    assert_eq!(a.len(), EMBED_DIM);
}

fn tiny_vam(mode: VamMode, seed: u64) -> (ParamStore<f32>, Vam) {
    let mut store = ParamStore::new();
    let vam = Vam::new(&mut store, "vam", VamConfig { van: VanConfig::tiny(), mode }, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap();
    (store, vam)
}

fn vam_out(store: &ParamStore<f32>, vam: &Vam, images: &[Tensor<f32>]) -> Vec<f32> {
    let mut g = Graph::no_grad(store);
    let nodes: Vec<_> = images.iter().map(|t| g.constant(t.clone())).collect();
    let y = vam.forward(&mut g, &nodes).unwrap();
    assert_eq!(g.shape(y), &[1, EMBED_DIM]);
    g.value(y).data().to_vec()
}

#[test]
fn vam_embeds_to_forty_in_every_mode() {
    for mode in [VamMode::Dual, VamMode::Combined, VamMode::ObservedOnly] {
        let (store, vam) = tiny_vam(mode, 6);
        let s = vam.config.van.input_size;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let imgs: Vec<_> = (0..mode.n_vans()).map(|_| rnd(&[1, 3, s, s], &mut rng)).collect();
        assert_eq!(vam_out(&store, &vam, &imgs).len(), EMBED_DIM);
    }
}

#[test]
fn dual_vam_distinguishes_observed_and_predicted_roles() {
    for seed in 0..10 {
        let (store, vam) = tiny_vam(VamMode::Dual, seed);
        let s = vam.config.van.input_size;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (a, b) = (rnd(&[1, 3, s, s], &mut rng), rnd(&[1, 3, s, s], &mut rng));
        let x = vam_out(&store, &vam, &[a.clone(), b.clone()]);
        let y = vam_out(&store, &vam, &[b, a]);
        assert!(max_diff(&x, &y) > 1e-5, "seed {seed}");
    }
}

#[test]
fn gradient_reaches_both_backbones() {
    let (store, vam) = tiny_vam(VamMode::Dual, 8);
    let s = vam.config.van.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new(&store).with_training(true);
    let imgs = [g.constant(rnd(&[2, 3, s, s], &mut rng)), g.constant(rnd(&[2, 3, s, s], &mut rng))];
    let y = vam.forward(&mut g, &imgs).unwrap();
    let r = g.constant(rnd(&[2, EMBED_DIM], &mut rng));
    let yr = g.mul(y, r).unwrap();
    let loss = g.sum(yr);
    let grads = g.backward(loss).unwrap();
    for prefix in ["vam.van1.", "vam.van2."] {
        let nonzero = store
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .filter_map(|(id, _)| grads.param(id))
            .any(|t| t.data().iter().any(|&v| v != 0.0));
        assert!(nonzero, "no gradient under {prefix}");
    }
}

fn scene_image(w: usize, h: usize) -> Image {
    Image::filled(w, h, [40, 80, 120])
}

fn boxes(x0: f64, n: usize) -> Vec<BBox> {
    (0..n).map(|_| [x0, 10.0, x0 + 10.0, 30.0]).collect()
}

#[test]
fn combined_frame_carries_both_box_sets_and_keeps_red() {
    let (_, vam) = tiny_vam(VamMode::Combined, 10);
    let palette = Palette::ade20k();
    let im = scene_image(80, 40);
    let out = vam.render(&im, &im, &boxes(5.0, 15), &boxes(50.0, 60), &palette).unwrap();
    assert_eq!(out.len(), 1);
    let a = &out[0];
    let (ob, og) = palette.blue_green(14).unwrap();
    let (pb, pg) = palette.blue_green(74).unwrap();
    assert_eq!(a.pixel(8, 20), [ob, og, 120]);
    assert_eq!(a.pixel(55, 20), [pb, pg, 120]);
    assert_eq!(a.pixel(30, 20), [40, 80, 120]);
    assert_eq!(a.channel(2), im.channel(2));
}

#[test]
fn dual_frames_split_observed_and_predicted_boxes() {
    let (_, vam) = tiny_vam(VamMode::Dual, 11);
    let palette = Palette::ade20k();
    let first = scene_image(80, 40);
    let last = Image::filled(80, 40, [1, 2, 3]);
    let out = vam.render(&first, &last, &boxes(5.0, 15), &boxes(50.0, 60), &palette).unwrap();
    let (ob, og) = palette.blue_green(14).unwrap();
    let (pb, pg) = palette.blue_green(74).unwrap();
    assert_eq!(out[0].pixel(8, 20), [ob, og, 120]);
    assert_eq!(out[0].pixel(55, 20), [40, 80, 120]);
    assert_eq!(out[1].pixel(55, 20), [pb, pg, 3]);
    assert_eq!(out[1].pixel(8, 20), [1, 2, 3]);
}

fn walking_sample() -> Sample {
    let observed = (0..15).map(|t| {
        let x = 100.0 + 2.0 * t as f64;
        [x, 50.0, x + 20.0, 100.0, 10.0]
    });
    Sample {
        ped_id: "p0".into(),
        split: Split::Test,
        t_row: 14,
        observed: observed.collect(),
        first_frame: 0,
        last_frame: 15,
        label: 1,
        tte: 30,
    }
}

fn rendered_for(model: &Model, sample: &Sample) -> Vec<Tensor<f32>> {
    let im = Image::filled(320, 180, [30, 60, 90]);
    let past = model.prepare(sample).unwrap();
    let pred = model.predict_trajectory(&past).unwrap();
    let future = model.future_boxes(&pred, &sample.origin());
    model.render_inputs(&im, &im, &sample.obs_boxes(), &future).unwrap()
}

fn perturb_trajpred(model: &mut Model) {
    let ids: Vec<_> = model.store.iter().filter(|(_, p)| p.name.starts_with("trajpred.")).map(|(id, _)| id).collect();
    for id in ids {
        for v in model.store.value_mut(id).data_mut() {
            *v += 0.3;
        }
    }
}

fn stats() -> NormStats {
    NormStats::new([0.0, 0.0, 0.0, 0.0, 10.0], [20.0, 10.0, 20.0, 10.0, 5.0]).unwrap()
}

#[test]
fn observed_only_image_ignores_the_trajectory_predictor() {
    let sample = walking_sample();
    let cfg = ModelConfig::tiny(Ablation::scenario(6).unwrap()).unwrap();
    let mut model = Model::new(cfg, stats(), Palette::ade20k(), 12).unwrap();
    let before = rendered_for(&model, &sample);
    perturb_trajpred(&mut model);
    assert_eq!(rendered_for(&model, &sample), before);

    // With predictions the same perturbation moves the overlay.
    let cfg = ModelConfig::tiny(Ablation::default()).unwrap();
    let mut model = Model::new(cfg, stats(), Palette::ade20k(), 12).unwrap();
    let before = rendered_for(&model, &sample);
    perturb_trajpred(&mut model);
    assert_ne!(rendered_for(&model, &sample), before);
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn dense(store: &ParamStore<f32>, name: &str, x: &[f64]) -> Vec<f64> {
    let w = store.value(store.require(&format!("{name}.w")).unwrap());
    let b = store.value(store.require(&format!("{name}.b")).unwrap());
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    assert_eq!(din, x.len());
    (0..dout)
        .map(|j| b.data()[j] as f64 + (0..din).map(|i| x[i] * w.data()[i * dout + j] as f64).sum::<f64>())
        .collect()
}

fn fusion_logits(store: &ParamStore<f32>, fusion: &Fusion, s: &Tensor<f32>, v: &Tensor<f32>) -> Vec<f32> {
    let mut g = Graph::no_grad(store);
    let (sn, vn) = (g.constant(s.clone()), g.constant(v.clone()));
    let y = fusion.forward(&mut g, sn, vn).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn zero_embeddings_follow_the_bias_path() {
    for attention in [false, true] {
        let mut store = ParamStore::new();
        let fusion = Fusion::new(&mut store, attention, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let z = Tensor::zeros(&[1, EMBED_DIM]);
        let got = fusion_logits(&store, &fusion, &z, &z);
        let width = if attention { 160 } else { 80 };
        let h = dense(&store, "fusion.fc1", &vec![0.0; width]);
        let h = dense(&store, "fusion.fc2", &h.into_iter().map(gelu).collect::<Vec<_>>());
        let want = dense(&store, "fusion.out", &h.into_iter().map(gelu).collect::<Vec<_>>());
        for (g, w) in got.iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-5, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn modality_context_of_identical_embeddings_equals_the_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let e = rnd(&[3, EMBED_DIM], &mut rng);
    let store = ParamStore::<f32>::new();
    let mut g = Graph::no_grad(&store);
    let (s, v) = (g.constant(e.clone()), g.constant(e));
    let (chi, ctx) = Fusion::context(&mut g, s, v).unwrap();
    assert_eq!(g.shape(chi), &[3, 2, EMBED_DIM]);
    assert_eq!(g.shape(ctx), &[3, 2, EMBED_DIM]);
    assert!(g.value(chi).max_abs_diff(g.value(ctx)) < 1e-6);
}

#[test]
fn fusion_reads_both_modalities() {
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let fusion = Fusion::new(&mut store, true, &mut rng).unwrap();
        let (s, v) = (rnd(&[1, EMBED_DIM], &mut rng), rnd(&[1, EMBED_DIM], &mut rng));
        let base = fusion_logits(&store, &fusion, &s, &v);
        let s2 = rnd(&[1, EMBED_DIM], &mut rng);
        let v2 = rnd(&[1, EMBED_DIM], &mut rng);
        assert!(max_diff(&base, &fusion_logits(&store, &fusion, &s2, &v)) > 1e-6, "seed {seed}: sam ignored");
        assert!(max_diff(&base, &fusion_logits(&store, &fusion, &s, &v2)) > 1e-6, "seed {seed}: vam ignored");
    }
}

fn shapes(config: ModelConfig) -> std::collections::BTreeMap<String, Vec<usize>> {
    let mut store = ParamStore::<f32>::new();
    Network::new(&mut store, config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    store.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect()
}

fn differing(a: &std::collections::BTreeMap<String, Vec<usize>>, b: &std::collections::BTreeMap<String, Vec<usize>>) -> Vec<String> {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k.clone()).collect()
}

#[test]
fn scenario_three_changes_only_the_sam_input_width() {
    let base = shapes(ModelConfig::new(Variant::Small, Ablation::default(), 224).unwrap());
    let s3 = shapes(ModelConfig::new(Variant::Small, Ablation::scenario(3).unwrap(), 224).unwrap());
    assert_eq!(differing(&base, &s3), vec!["sam.embed.proj.w".to_string()]);
    assert_eq!(base["sam.embed.proj.w"][0], 6);
    assert_eq!(s3["sam.embed.proj.w"][0], 5);
}

#[test]
fn scenario_four_drops_speed_everywhere() {
    let base = shapes(ModelConfig::new(Variant::Small, Ablation::default(), 224).unwrap());
    let s4 = shapes(ModelConfig::new(Variant::Small, Ablation::scenario(4).unwrap(), 224).unwrap());
    let diff = differing(&base, &s4);
    assert!(diff.iter().all(|k| k.starts_with("trajpred.") || k.starts_with("sam.")), "{diff:?}");
    assert_eq!(s4["sam.embed.proj.w"][0], 5);
    for (k, v) in s4.iter().filter(|(k, _)| diff.contains(k) && k.starts_with("trajpred.")) {
        assert!(v.contains(&4), "{k}: {v:?}");
    }
}
