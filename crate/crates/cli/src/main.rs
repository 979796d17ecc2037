//! `trajfusion`: generation, staged training, evaluation, latency
//! benchmark, ablations and single-sample prediction.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tfn_core::data::{
    generate_synthetic_dataset, load_tracks, sample_at_row, save_tracks, DirFrames, FrameSource, Split, SynthFrames,
    SynthScene,
};
use tfn_core::eval::{
    ablation_csv, benchmark_latency, evaluate, run_ablation, AblationRow, AblationTable, Staged,
};
use tfn_core::gradcheck::{check_all_blocks, check_all_ops, Precision};
use tfn_core::model::{count_config_parameters, Ablation, Model, ModelConfig, Stage, Variant, DEFAULT_INPUT_SIZE};
use tfn_core::train::{train_all, DataBundle, Pipeline, TrainConfig};
use tfn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "trajfusion", version, about = "Pedestrian crossing-intention prediction from trajectories and scene frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Reduced epochs, 32 pixel inputs, sparse samples: runs on a CPU.
    Desk,
    /// Documented schedule and 224 pixel inputs.
    Paper,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file; CLI flags override it, it overrides defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of data generation, initialization and shuffling
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; every file a command writes goes here
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Model variant
    #[arg(long, value_parser = ["full", "small"])]
    variant: Option<String>,
    /// Default settings the config file and flags are layered on
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Number of synthetic tracks
    #[arg(long)]
    tracks: Option<usize>,
    /// Dataset directory written by gen-data (tracks.tsv plus frames/ or
    /// scene.json); a synthetic scene is generated in memory when absent
    #[arg(long)]
    data: Option<PathBuf>,
    /// Single-threaded, fixed-order execution (recorded in the run manifest)
    #[arg(long)]
    deterministic: bool,
    /// Extra config override KEY=VALUE, repeatable, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print per-epoch progress
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset: tracks.tsv, scene.json and the
    /// PPM frames every classification sample references
    GenData {
        #[command(flatten)]
        common: Common,
        /// Skip writing frames (scene.json renders them on demand)
        #[arg(long)]
        no_frames: bool,
    },
    /// Train every stage in order and evaluate on the test split
    #[command(alias = "train-all")]
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train one stage; earlier stages load from <out>/checkpoints
    TrainStage {
        #[command(flatten)]
        common: Common,
        /// Stage to train
        #[arg(long, value_parser = ["trajpred", "sam", "van1", "van2", "fusion"])]
        stage: String,
    },
    /// Evaluate a trained model on the test split
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model manifest (default <out>/model.json)
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Batch-1 latency: model alone (M) and with preprocessing (M + D)
    Bench {
        #[command(flatten)]
        common: Common,
        /// Model manifest; a randomly initialized model of --variant is
        /// timed when absent
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Timed runs (at least 10)
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Untimed warmup runs
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        /// Input resolution of the timed model
        #[arg(long, default_value_t = DEFAULT_INPUT_SIZE)]
        input_size: usize,
    },
    /// Retrain the stages an ablation scenario changes and compare to the base
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Scenario 1..6; all six when absent
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
        scenario: Option<u8>,
        /// Directory of the base run (default --out)
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Crossing probability and label of one sample
    Predict {
        #[command(flatten)]
        common: Common,
        /// Model manifest (default <out>/model.json)
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// PED_ID:FRAME, the last observed frame of a track in --data
        #[arg(long)]
        sample: String,
    },
    /// Finite-difference checks of every operator and composed block
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Seeds per operator and block
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Parameter count of a variant at the default input size
    CountParams {
        #[command(flatten)]
        common: Common,
        /// Ablation scenario applied before counting
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
        scenario: Option<u8>,
    },
}

fn resolve(c: &Common) -> Result<TrainConfig> {
    let variant: Variant = match &c.variant {
        Some(v) => v.parse()?,
        None => Variant::Small,
    };
    let mut cfg = match c.profile {
        Profile::Desk => TrainConfig::desk(variant),
        Profile::Paper => TrainConfig::paper(variant),
    };
    if let Some(path) = &c.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = &c.variant {
        cfg.set("variant", v)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.tracks {
        cfg.set("data.tracks", &n.to_string())?;
    }
    if c.deterministic {
        cfg.deterministic = true;
    }
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Resolved configuration and seed of the invocation, for reproduction.
fn write_run_manifest(command: &str, c: &Common, cfg: &TrainConfig) -> Result<()> {
    let m = json!({
        "command": command,
        "seed": cfg.seed,
        "profile": match c.profile { Profile::Desk => "desk", Profile::Paper => "paper" },
        "data": c.data.as_ref().map(|d| d.display().to_string()),
        "config": cfg.to_kv(),
    });
    write(&c.out.join(format!("run-{command}.json")), serde_json::to_string_pretty(&m)?)
}

fn load_data(c: &Common, cfg: &TrainConfig) -> Result<DataBundle> {
    let Some(dir) = &c.data else {
        return DataBundle::synthetic(&cfg.data, cfg.seed);
    };
    let tracks = load_tracks(&dir.join("tracks.tsv"))?;
    let frames: Arc<dyn FrameSource> = if dir.join("frames").is_dir() {
        Arc::new(DirFrames::new(dir.join("frames")))
    } else {
        let p = dir.join("scene.json");
        let text = std::fs::read_to_string(&p).map_err(|source| Error::Io { path: p.clone(), source })?;
        let scene: SynthScene = serde_json::from_str(&text)?;
        Arc::new(SynthFrames::new(scene))
    };
    DataBundle::new(tracks, frames, cfg.data.sample_stride, cfg.data.traj_overlap)
}

fn manifest_of(c: &Common, m: &Option<PathBuf>) -> PathBuf {
    m.clone().unwrap_or_else(|| c.out.join("model.json"))
}

fn print_metrics(label: &str, m: &tfn_core::eval::MetricsReport) {
    println!(
        "{label}: acc {:.4} auc {} f1 {:.4} precision {:.4} recall {:.4} (n={}, tp {} fp {} tn {} fn {})",
        m.accuracy,
        m.auc.map_or("n/a".into(), |a| format!("{a:.4}")),
        m.f1,
        m.precision,
        m.recall,
        m.n_samples,
        m.counts.tp,
        m.counts.fp,
        m.counts.tn,
        m.counts.fn_
    );
}

fn gen_data(c: &Common, no_frames: bool) -> Result<()> {
    let cfg = resolve(c)?;
    write_run_manifest("gen-data", c, &cfg)?;
    let scene = generate_synthetic_dataset(&cfg.data.synth, cfg.seed)?;
    let tracks = scene.tracks();
    std::fs::create_dir_all(&c.out).map_err(|source| Error::Io { path: c.out.clone(), source })?;
    save_tracks(&tracks, &c.out.join("tracks.tsv"))?;
    write(&c.out.join("scene.json"), serde_json::to_string_pretty(&scene)?)?;
    let mut n_frames = 0;
    if !no_frames {
        let bundle = DataBundle::from_scene(scene, &cfg.data)?;
        let root = c.out.join("frames");
        let mut wanted: Vec<(&str, i64)> =
            bundle.samples.iter().flat_map(|s| [(s.ped_id.as_str(), s.first_frame), (s.ped_id.as_str(), s.last_frame)]).collect();
        wanted.sort();
        wanted.dedup();
        for (video, frame) in wanted {
            let path = DirFrames::path(&root, video, frame);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
            }
            bundle.frames.frame(video, frame)?.save_ppm(&path)?;
            n_frames += 1;
        }
    }
    println!("{} tracks, {n_frames} frames -> {}", tracks.len(), c.out.display());
    Ok(())
}

fn report_progress(p: &Pipeline<'_>, stage: Stage, verbose: bool) {
    let Some(r) = p.records.iter().rev().find(|r| r.stage == stage) else { return };
    if verbose {
        for e in &r.epochs {
            println!(
                "  {stage} epoch {:>2} train {:.4} val {:.4}{}",
                e.epoch,
                e.train_loss,
                e.val_loss,
                e.val_acc.map_or(String::new(), |a| format!(" val_acc {a:.4}"))
            );
        }
    }
    println!("{stage}: {} steps, best epoch {:?}, checkpoint {}", r.total_steps, r.best_epoch, r.checkpoint);
}

fn train(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    write_run_manifest("train", c, &cfg)?;
    let data = load_data(c, &cfg)?;
    let report = train_all(cfg, &data, &c.out)?;
    for r in &report.records {
        println!("{}: {} steps, best epoch {:?}", r.stage, r.total_steps, r.best_epoch);
    }
    print_metrics("test", &report.test);
    let t = &report.trajectory;
    println!(
        "trajectory: model {:.3} px, persistence {:.3} px ({:.2}x)",
        t.model_px,
        t.persistence_px,
        t.improvement()
    );
    println!("manifest: {}", report.manifest);
    Ok(())
}

fn train_stage(c: &Common, stage: &str) -> Result<()> {
    let cfg = resolve(c)?;
    let stage: Stage = stage.parse()?;
    write_run_manifest("train-stage", c, &cfg)?;
    let data = load_data(c, &cfg)?;
    let mut p = Pipeline::new(cfg, &data, &c.out)?;
    let order = p.stages();
    for s in order.iter().take_while(|&&s| s != stage) {
        let stem = p.checkpoint_stem(*s);
        if stem.with_extension("bin").exists() {
            p.load_stage(*s, &stem)?;
        }
    }
    p.run_stage(stage)?;
    report_progress(&p, stage, c.verbose);
    Ok(())
}

fn eval_cmd(c: &Common, manifest: &Option<PathBuf>) -> Result<()> {
    let cfg = resolve(c)?;
    write_run_manifest("eval", c, &cfg)?;
    let model = Model::load(&manifest_of(c, manifest))?;
    let data = load_data(c, &cfg)?;
    let test: Vec<_> = data.sample_indices(Split::Test).into_iter().map(|i| &data.samples[i]).collect();
    let (metrics, preds) = evaluate(&model, &test, data.frames.as_ref())?;
    print_metrics("test", &metrics);
    let mut csv = String::from("ped_id,last_frame,label,probability,predicted\n");
    for (s, p) in test.iter().zip(&preds) {
        csv += &format!("{},{},{},{:.6},{}\n", s.ped_id, s.last_frame, s.label, p.probability, p.label);
    }
    write(&c.out.join("eval.json"), serde_json::to_string_pretty(&metrics)?)?;
    write(&c.out.join("eval_predictions.csv"), csv)
}

fn bench(c: &Common, manifest: &Option<PathBuf>, runs: usize, warmup: usize, input_size: usize) -> Result<()> {
    let cfg = resolve(c)?;
    write_run_manifest("bench", c, &cfg)?;
    let mut data_cfg = cfg.data.clone();
    data_cfg.synth.n_tracks = data_cfg.synth.n_tracks.min(40);
    let data = match &c.data {
        Some(_) => load_data(c, &cfg)?,
        None => DataBundle::synthetic(&data_cfg, cfg.seed)?,
    };
    let model = match manifest {
        Some(m) => Model::load(m)?,
        None => Model::new(
            ModelConfig::new(cfg.variant, cfg.ablation, input_size)?,
            data.stats,
            tfn_core::vam::Palette::ade20k(),
            cfg.seed,
        )?,
    };
    let samples: Vec<_> = data.samples.iter().take(8).collect();
    let staged = Staged::load(&samples, data.frames.as_ref())?;
    let rep = benchmark_latency(&model, &staged, data.frames.as_ref(), warmup, runs)?;
    print!("{}", rep.to_table());
    let stem = format!("latency_{}", rep.variant);
    write(&c.out.join(format!("{stem}.json")), serde_json::to_string_pretty(&rep)?)?;
    write(&c.out.join(format!("{stem}.csv")), rep.to_table())
}

fn ablate(c: &Common, scenario: Option<u8>, base: &Option<PathBuf>) -> Result<()> {
    let cfg = resolve(c)?;
    write_run_manifest("ablate", c, &cfg)?;
    let base_dir = base.clone().unwrap_or_else(|| c.out.clone());
    let base_model = Model::load(&base_dir.join("model.json"))?;
    let data = load_data(c, &cfg)?;
    let test: Vec<_> = data.sample_indices(Split::Test).into_iter().map(|i| &data.samples[i]).collect();
    let (base_metrics, _) = evaluate(&base_model, &test, data.frames.as_ref())?;
    let mut rows = vec![AblationRow { scenario: 0, description: "Base model".into(), retrained: Vec::new(), metrics: base_metrics }];
    let ids: Vec<u8> = scenario.map_or((1..=6).collect(), |s| vec![s]);
    for id in ids {
        let row = run_ablation(id, &cfg, &data, &base_dir, &c.out.join("ablation").join(format!("scenario_{id}")))?;
        print_metrics(&format!("scenario {id}"), &row.metrics);
        rows.push(row);
    }
    let table = AblationTable { seed: cfg.seed, rows };
    let csv = ablation_csv(&table);
    print!("{csv}");
    write(&c.out.join("ablation.csv"), csv)?;
    write(&c.out.join("ablation.json"), serde_json::to_string_pretty(&table)?)
}

fn predict(c: &Common, manifest: &Option<PathBuf>, sample: &str) -> Result<()> {
    let cfg = resolve(c)?;
    let (ped, frame) = sample
        .rsplit_once(':')
        .and_then(|(p, f)| Some((p, f.parse::<i64>().ok()?)))
        .ok_or_else(|| Error::Config(format!("--sample expects PED_ID:FRAME, got `{sample}`")))?;
    let model = Model::load(&manifest_of(c, manifest))?;
    let data = load_data(c, &cfg)?;
    let track = data
        .tracks
        .tracks
        .iter()
        .find(|t| t.ped_id == ped)
        .ok_or_else(|| Error::Data(format!("no track `{ped}`")))?;
    let row = track
        .frames
        .iter()
        .position(|f| f.frame == frame)
        .ok_or_else(|| Error::Data(format!("track `{ped}` has no frame {frame}")))?;
    let s = sample_at_row(track, row)?;
    let p = model.predict_crossing(&s, data.frames.as_ref())?;
    println!("probability {:.6} label {}", p.probability, p.label);
    write(&c.out.join("prediction.json"), serde_json::to_string_pretty(&json!({ "sample": sample, "prediction": p }))?)
}

fn grad_check(c: &Common, seeds: u64) -> Result<bool> {
    let tag = |p: Precision| match p {
        Precision::F64 => "f64",
        Precision::F32 => "f32",
    };
    let line = |what: String, seed: u64, p: Precision, rep: &tfn_core::gradcheck::GradCheckReport| {
        format!(
            "{what} seed {seed} {}: max_rel {:.3e} tol {:.0e} {}\n",
            tag(p),
            rep.max_rel_err(),
            rep.tol,
            if rep.passed() { "ok" } else { "FAIL" }
        )
    };
    let mut text = String::new();
    let mut results = Vec::new();
    for (op, seed, p, rep) in check_all_ops(seeds)? {
        text += &line(format!("op {op:?}"), seed, p, &rep);
        results.push(rep.passed());
    }
    for k in check_all_blocks(seeds)? {
        text += &line(format!("block {:?}", k.block), k.seed, k.precision, &k.report);
        results.push(k.passed());
    }
    let ok = results.iter().all(|&p| p);
    text += &format!("{} checks, {}\n", results.len(), if ok { "all passed" } else { "FAILURES" });
    print!("{text}");
    write(&c.out.join("gradcheck.txt"), text)?;
    Ok(ok)
}

fn count_params(c: &Common, scenario: Option<u8>) -> Result<()> {
    let variant: Variant = c.variant.as_deref().unwrap_or("full").parse()?;
    let ablation = scenario.map_or(Ok(Ablation::default()), Ablation::scenario)?;
    let n = count_config_parameters(&ModelConfig::new(variant, ablation, DEFAULT_INPUT_SIZE)?)?;
    println!("{n}");
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::GenData { common, no_frames } => gen_data(common, *no_frames)?,
        Command::Train { common } => train(common)?,
        Command::TrainStage { common, stage } => train_stage(common, stage)?,
        Command::Eval { common, manifest } => eval_cmd(common, manifest)?,
        Command::Bench { common, manifest, runs, warmup, input_size } => bench(common, manifest, *runs, *warmup, *input_size)?,
        Command::Ablate { common, scenario, base } => ablate(common, *scenario, base)?,
        Command::Predict { common, manifest, sample } => predict(common, manifest, sample)?,
        Command::GradCheck { common, seeds } => return grad_check(common, *seeds),
        Command::CountParams { common, scenario } => count_params(common, *scenario)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
