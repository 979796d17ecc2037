//! Staged-training mechanics on a minutes-scale synthetic run: freezing,
//! temporary heads, the VAM projection hold, rate traces, manifests and
//! stage ordering; plus trajectory-predictor learnability.

use std::path::PathBuf;
use std::sync::OnceLock;

use tfn_core::data::{NormStats, Split};
use tfn_core::eval::evaluate;
use tfn_core::model::{Model, Stage, Variant};
use tfn_core::train::{
    constant_velocity_windows, fit, stack, train_all, window_tensors, BatchOut, DataBundle, Hooks, Pipeline,
    StageSpec, TrainAllReport, TrainConfig, Validation,
};
use tfn_core::trajpred::{TrajPredictor, TrajPredictorConfig};
use tfn_core::Error;
use tfn_tensor::checkpoint;
use tfn_tensor::optim::LrSchedule;
use tfn_tensor::{Graph, ParamStore};

struct Run {
    cfg: TrainConfig,
    data: DataBundle,
    out: PathBuf,
    report: TrainAllReport,
}

fn smoke_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = TrainConfig::smoke(Variant::Small);
        let data = DataBundle::synthetic(&cfg.data, cfg.seed).unwrap();
        let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("training_smoke");
        let _ = std::fs::remove_dir_all(&out);
        let report = train_all(cfg.clone(), &data, &out).unwrap();
        Run { cfg, data, out, report }
    })
}

#[test]
fn small_variant_runs_four_stages_in_order() {
    let stages: Vec<Stage> = smoke_run().report.records.iter().map(|r| r.stage).collect();
    assert_eq!(stages, vec![Stage::Trajpred, Stage::Sam, Stage::Van1, Stage::Fusion]);
}

#[test]
fn changed_parameters_are_exactly_the_trainable_set() {
    for r in &smoke_run().report.records {
        assert!(r.frozen_checked > 0, "{}: nothing frozen", r.stage);
        assert_eq!(r.changed, r.trainable, "{}: some trainable tensors never moved", r.stage);
    }
}

#[test]
fn checkpoints_hold_only_the_stage_parameters_and_no_heads() {
    let run = smoke_run();
    for r in &run.report.records {
        let entries = checkpoint::read(&run.out.join(&r.checkpoint)).unwrap();
        assert!(!entries.is_empty());
        for (e, _) in entries {
            assert!(!e.name.starts_with("head."), "{} leaked into {}", e.name, r.checkpoint);
            assert!(r.stage.owns(&e.name), "{} saved with stage {}", e.name, r.stage);
        }
    }
}

#[test]
fn vam_projection_held_for_the_configured_epochs() {
    let run = smoke_run();
    let fusion = run.report.records.iter().find(|r| r.stage == Stage::Fusion).unwrap();
    let delay = run.cfg.vam_proj_delay;
    let expected: Vec<bool> = (0..fusion.epochs.len()).map(|e| e >= delay).collect();
    assert_eq!(fusion.vam_proj_changed, expected);
    assert!(fusion.best_epoch.unwrap() >= delay);
}

#[test]
fn rate_trace_matches_the_schedule() {
    for r in &smoke_run().report.records {
        let s = LrSchedule::new(r.spec.peak_lr, r.total_steps, r.spec.warmup_frac);
        assert_eq!(r.lr_trace.len(), r.total_steps);
        for (k, &lr) in r.lr_trace.iter().enumerate() {
            assert_eq!(lr, s.lr_at_step(k), "{} step {k}", r.stage);
        }
    }
}

#[test]
fn epoch_losses_finite_and_logs_written() {
    let run = smoke_run();
    for r in &run.report.records {
        assert!(r.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
        let csv = std::fs::read_to_string(run.out.join("logs").join(format!("{}.csv", r.stage.as_str()))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,split,loss,acc,lr"));
        assert_eq!(lines.count(), 2 * r.epochs.len());
        assert_eq!(r.checkpoint_sha256.len(), 64);
    }
}

#[test]
fn manifest_reload_reproduces_test_metrics() {
    let run = smoke_run();
    let model = Model::load(&run.out.join("model.json")).unwrap();
    let test: Vec<_> = run.data.sample_indices(Split::Test).into_iter().map(|i| &run.data.samples[i]).collect();
    let (m, preds) = evaluate(&model, &test, run.data.frames.as_ref()).unwrap();
    assert_eq!(m, run.report.test);
    assert!(preds.iter().all(|p| (0.0..=1.0).contains(&p.probability) && p.label == u8::from(p.probability >= 0.5)));
}

#[test]
fn missing_stage_checkpoint_is_named() {
    let run = smoke_run();
    let copy = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("training_missing_ckpt");
    let _ = std::fs::remove_dir_all(&copy);
    std::fs::create_dir_all(copy.join("checkpoints")).unwrap();
    std::fs::copy(run.out.join("model.json"), copy.join("model.json")).unwrap();
    for s in ["trajpred", "van1", "fusion"] {
        for ext in ["bin", "json"] {
            let f = format!("{s}.{ext}");
            std::fs::copy(run.out.join("checkpoints").join(&f), copy.join("checkpoints").join(&f)).unwrap();
        }
    }
    match Model::load(&copy.join("model.json")) {
        Err(Error::MissingCheckpoint { stage, .. }) => assert_eq!(stage, "sam"),
        other => panic!("expected a missing sam checkpoint, got {other:?}"),
    }
}

#[test]
fn stage_out_of_order_names_the_order() {
    let cfg = TrainConfig::smoke(Variant::Small);
    let data = &smoke_run().data;
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("training_order");
    let mut p = Pipeline::new(cfg, data, &out).unwrap();
    let err = p.run_stage(Stage::Fusion).unwrap_err().to_string();
    assert!(err.contains("`trajpred` first"), "{err}");
    assert!(err.contains("trajpred -> sam -> van1 -> fusion"), "{err}");
    assert!(p.run_stage(Stage::Van2).is_err(), "small variant has no second VAN");
}

#[test]
fn trajpred_training_loss_strictly_decreases_over_five_epochs() {
    let mut cfg = TrainConfig::desk(Variant::Small);
    cfg.data.synth.n_tracks = 200;
    cfg.stages.get_mut(&Stage::Trajpred).unwrap().epochs = 5;
    let data = DataBundle::synthetic(&cfg.data, 3).unwrap();
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("training_trajpred_decrease");
    let mut p = Pipeline::new(cfg, &data, &out).unwrap();
    let r = p.run_stage(Stage::Trajpred).unwrap();
    let losses: Vec<f64> = r.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

/// Noise-free constant-velocity motion: the predictor's mean absolute
/// error per normalized coordinate goes below 0.1 and is at most half the
/// error of repeating the last observed row.
#[test]
fn trajpred_learns_constant_velocity() {
    let windows = constant_velocity_windows(400, 11);
    let train: Vec<_> = windows.iter().filter(|w| w.split == Split::Train).collect();
    let test: Vec<_> = windows.iter().filter(|w| w.split == Split::Test).collect();
    let stats = NormStats::fit(train.iter().map(|w| w.rows.as_slice())).unwrap();
    let tensors = |ws: &[&tfn_core::data::TrajWindow]| -> Vec<_> { ws.iter().map(|w| window_tensors(w, &stats, 5).unwrap()).collect() };
    let (tr, te) = (tensors(&train), tensors(&test));

    let mut store = ParamStore::<f32>::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let net = TrajPredictor::new(&mut store, "trajpred", TrajPredictorConfig::small(), &mut rng).unwrap();
    let mut spec = StageSpec::paper(Stage::Trajpred);
    spec.peak_lr = 1e-3;
    spec.epochs = 40;
    spec.batch_size = 16;
    fit(
        &mut store,
        &spec,
        tr.len(),
        1,
        &[],
        |s, idx| {
            let past = stack(&idx.iter().map(|&i| &tr[i].0).collect::<Vec<_>>()).unwrap();
            let fut = stack(&idx.iter().map(|&i| &tr[i].1).collect::<Vec<_>>()).unwrap();
            let mut g = Graph::new(s);
            let x = g.constant(past);
            let y = net.forward(&mut g, x)?;
            let l = g.mse(y, &fut)?;
            let loss = g.value(l).item() as f64;
            Ok(BatchOut { loss, correct: None, grads: g.backward(l)?, bn: Vec::new() })
        },
        |_| Ok(Validation { loss: 0.0, accuracy: None }),
        Hooks::default(),
    )
    .unwrap();

    let (mut model_err, mut base_err, mut n) = (0.0, 0.0, 0usize);
    for (past, fut) in &te {
        let pred = net.predict(&store, past).unwrap();
        let last = &past.data()[past.numel() - 5..];
        for (k, (&p, &t)) in pred.data().iter().zip(fut.data()).enumerate() {
            model_err += (p - t).abs() as f64;
            base_err += (last[k % 5] - t).abs() as f64;
            n += 1;
        }
    }
    let (model_err, base_err) = (model_err / n as f64, base_err / n as f64);
    assert!(model_err < 0.1, "model error {model_err}");
    assert!(base_err >= 2.0 * model_err, "model {model_err} vs persistence {base_err}");
}
