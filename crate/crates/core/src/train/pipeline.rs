use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tfn_tensor::{checkpoint, Graph, NodeId, ParamId, ParamStore, Tensor, PROB_CLAMP};

use crate::data::Split;
use crate::error::{io_err, Error, Result};
use crate::eval::{evaluate, trajectory_errors, MetricsReport, TrajectoryErrors};
use crate::model::{Model, ModelManifest, Network, Stage, StageCheckpoint, MANIFEST_FORMAT};
use crate::nn::{crossing_probability, ClassHead};
use crate::vam::Palette;

use super::config::{StageSpec, TrainConfig};
use super::data::{stack, DataBundle};
use super::fit::{fit, BatchOut, EpochRecord, FitOutcome, Hooks, Validation};

/// Logits of a batch of sample indices, built on the given graph.
type LogitsFn<'a> = dyn Fn(&mut Graph<'_, f32>, &[usize]) -> Result<NodeId> + 'a;

/// Batch size of gradient-free passes (caching, validation).
const INFER_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRunRecord {
    pub stage: Stage,
    pub seed: u64,
    pub spec: StageSpec,
    pub epochs: Vec<EpochRecord>,
    pub lr_trace: Vec<f64>,
    pub total_steps: usize,
    pub best_epoch: Option<usize>,
    /// Stem relative to the output directory.
    pub checkpoint: String,
    pub checkpoint_sha256: String,
    /// Frozen tensors verified bitwise unchanged.
    pub frozen_checked: usize,
    /// Trainable tensors of the stage and how many of them changed.
    pub trainable: usize,
    pub changed: usize,
    /// Fusion stage: whether the VAM projection differed from its
    /// stage-start value at the end of each epoch.
    pub vam_proj_changed: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainAllReport {
    pub seed: u64,
    pub records: Vec<TrainingRunRecord>,
    pub test: MetricsReport,
    pub trajectory: TrajectoryErrors,
    pub manifest: String,
}

/// Staged training over one model and one dataset.
pub struct Pipeline<'d> {
    pub cfg: TrainConfig,
    pub data: &'d DataBundle,
    pub model: Model,
    pub out: PathBuf,
    pub records: Vec<TrainingRunRecord>,
    done: BTreeSet<Stage>,
    train_ids: Vec<usize>,
    val_ids: Vec<usize>,
    past: Vec<Tensor<f32>>,
    pred: Option<Vec<Option<Tensor<f32>>>>,
    images: Option<Vec<Option<Vec<Tensor<f32>>>>>,
    vam_proj_changed: Vec<bool>,
}

fn tensor_hash(t: &Tensor<f32>) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(stage as u64 + 1)
}

fn labels_of(data: &DataBundle, ids: &[usize]) -> Vec<f32> {
    ids.iter().map(|&i| data.samples[i].label as f32).collect()
}

/// Weighted cross-entropy over the crossing probability of `[B, 2]` logits;
/// returns the loss node and the number of correct hard labels.
fn classify_loss(g: &mut Graph<'_, f32>, logits: NodeId, labels: &[f32], alpha: f64) -> Result<(NodeId, usize)> {
    let p = crossing_probability(g, logits)?;
    let correct = g
        .value(p)
        .data()
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5))
        .count();
    Ok((g.weighted_ce(p, labels, alpha, PROB_CLAMP)?, correct))
}

impl<'d> Pipeline<'d> {
    pub fn new(cfg: TrainConfig, data: &'d DataBundle, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model_config()?, data.stats, Palette::ade20k(), cfg.seed)?;
        let m = model.config().feature_width();
        let past = data.samples.iter().map(|s| data.sample_past(s, m)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            train_ids: data.sample_indices(Split::Train),
            val_ids: data.sample_indices(Split::Val),
            cfg,
            data,
            model,
            out: out.to_path_buf(),
            records: Vec::new(),
            done: BTreeSet::new(),
            past,
            pred: None,
            images: None,
            vam_proj_changed: Vec::new(),
        })
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.model.config().stages()
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.done.contains(&stage)
    }

    pub fn checkpoint_stem(&self, stage: Stage) -> PathBuf {
        self.out.join("checkpoints").join(stage.as_str())
    }

    fn invalidate(&mut self, stage: Stage) {
        if stage == Stage::Trajpred {
            self.pred = None;
            self.images = None;
        }
    }

    /// Loads a finished stage's weights from `stem` instead of training it.
    pub fn load_stage(&mut self, stage: Stage, stem: &Path) -> Result<()> {
        if !stem.with_extension("bin").exists() {
            return Err(Error::MissingCheckpoint { stage: stage.to_string(), path: stem.to_path_buf() });
        }
        for (e, _) in checkpoint::read(stem)? {
            if !stage.owns(&e.name) {
                return Err(Error::Stage {
                    stage: stage.to_string(),
                    msg: format!("checkpoint {} holds foreign parameter {}", stem.display(), e.name),
                });
            }
        }
        checkpoint::load_into(&mut self.model.store, stem)?;
        self.done.insert(stage);
        self.invalidate(stage);
        Ok(())
    }

    fn check_prerequisites(&self, stage: Stage) -> Result<()> {
        let order = self.stages();
        let pos = order.iter().position(|&s| s == stage).ok_or_else(|| Error::Stage {
            stage: stage.to_string(),
            msg: format!("not part of the {} variant", self.model.config().variant),
        })?;
        if let Some(missing) = order[..pos].iter().find(|s| !self.done.contains(s)) {
            let chain: Vec<&str> = order.iter().map(|s| s.as_str()).collect();
            return Err(Error::Stage {
                stage: stage.to_string(),
                msg: format!("requires stage `{missing}` first (order: {})", chain.join(" -> ")),
            });
        }
        Ok(())
    }

    fn ensure_pred(&mut self) -> Result<()> {
        if self.pred.is_some() {
            return Ok(());
        }
        let mut pred = vec![None; self.data.samples.len()];
        let ids: Vec<usize> = self.train_ids.iter().chain(&self.val_ids).copied().collect();
        let m = self.model.config().feature_width();
        for chunk in ids.chunks(INFER_BATCH) {
            let past = stack(&chunk.iter().map(|&i| &self.past[i]).collect::<Vec<_>>())?;
            let out = self.model.predict_trajectory(&past)?;
            for (k, &i) in chunk.iter().enumerate() {
                let rows = out.data()[k * 60 * m..(k + 1) * 60 * m].to_vec();
                pred[i] = Some(Tensor::new(&[60, m], rows)?);
            }
        }
        self.pred = Some(pred);
        Ok(())
    }

    fn ensure_images(&mut self) -> Result<()> {
        if self.images.is_some() {
            return Ok(());
        }
        self.ensure_pred()?;
        let pred = self.pred.as_ref().expect("filled above");
        let mut images = vec![None; self.data.samples.len()];
        for &i in self.train_ids.iter().chain(&self.val_ids) {
            let s = &self.data.samples[i];
            let first = self.data.frames.frame(&s.ped_id, s.first_frame)?;
            let last = self.data.frames.frame(&s.ped_id, s.last_frame)?;
            let boxes = self.model.future_boxes(pred[i].as_ref().expect("train/val prediction"), &s.origin());
            images[i] = Some(self.model.render_inputs(&first, &last, &s.obs_boxes(), &boxes)?);
        }
        self.images = Some(images);
        Ok(())
    }

    fn pred_of(&self, i: usize) -> &Tensor<f32> {
        self.pred.as_ref().and_then(|p| p[i].as_ref()).expect("prediction cached")
    }

    fn image_of(&self, i: usize, van: usize) -> &Tensor<f32> {
        &self.images.as_ref().and_then(|p| p[i].as_ref()).expect("images cached")[van]
    }

    /// Trains one stage, verifies the freezing contract, saves the stage
    /// checkpoint, the CSV log and the run record.
    pub fn run_stage(&mut self, stage: Stage) -> Result<TrainingRunRecord> {
        self.check_prerequisites(stage)?;
        let spec = self.cfg.stage(stage).clone();
        let store = &mut self.model.store;
        store.freeze_all(true);
        store.set_frozen(&spec.trainable_prefixes(), false);
        let trainable: Vec<ParamId> = store.ids().filter(|&id| !spec.is_frozen(store.name(id))).collect();
        let before: Vec<(ParamId, [u8; 32])> = store.ids().map(|id| (id, tensor_hash(store.value(id)))).collect();
        let n_before = store.len();

        let seed = stage_seed(self.cfg.seed, stage);
        let outcome = match stage {
            Stage::Trajpred => self.fit_trajpred(&spec, seed, &trainable)?,
            Stage::Sam => self.fit_sam(&spec, seed, &trainable)?,
            Stage::Van1 => self.fit_van(&spec, seed, &trainable, 0)?,
            Stage::Van2 => self.fit_van(&spec, seed, &trainable, 1)?,
            Stage::Fusion => self.fit_fusion(&spec, seed, &trainable)?,
        };

        let store = &mut self.model.store;
        store.truncate(n_before);
        store.freeze_all(false);
        let mut frozen_checked = 0;
        let mut changed = 0;
        for (id, h) in &before {
            let now = tensor_hash(store.value(*id));
            if spec.is_frozen(store.name(*id)) {
                if now != *h {
                    return Err(Error::Stage {
                        stage: stage.to_string(),
                        msg: format!("frozen parameter {} changed", store.name(*id)),
                    });
                }
                frozen_checked += 1;
            } else if now != *h {
                changed += 1;
            }
        }

        let stem = self.out.join("checkpoints").join(stage.as_str());
        checkpoint::save_matching(store, &stem, |n| stage.owns(n))?;
        let bin = stem.with_extension("bin");
        let sha = hex(&Sha256::digest(std::fs::read(&bin).map_err(io_err(&bin))?));
        let record = TrainingRunRecord {
            stage,
            seed,
            spec,
            epochs: outcome.epochs,
            lr_trace: outcome.lr_trace,
            total_steps: outcome.total_steps,
            best_epoch: outcome.best_epoch,
            checkpoint: format!("checkpoints/{}", stage.as_str()),
            checkpoint_sha256: sha,
            frozen_checked,
            trainable: trainable.len(),
            changed,
            vam_proj_changed: std::mem::take(&mut self.vam_proj_changed),
        };
        self.write_logs(&record)?;
        self.done.insert(stage);
        self.invalidate(stage);
        self.records.push(record.clone());
        if stage == Stage::Fusion {
            self.write_manifest()?;
        }
        Ok(record)
    }

    fn write_logs(&self, r: &TrainingRunRecord) -> Result<()> {
        let dir = self.out.join("logs");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut csv = String::from("epoch,split,loss,acc,lr\n");
        for e in &r.epochs {
            csv += &format!("{},train,{:.6},{},{:e}\n", e.epoch, e.train_loss, opt(e.train_acc), e.lr);
            csv += &format!("{},val,{:.6},{},{:e}\n", e.epoch, e.val_loss, opt(e.val_acc), e.lr);
        }
        let p = dir.join(format!("{}.csv", r.stage.as_str()));
        std::fs::write(&p, csv).map_err(io_err(&p))?;
        let p = dir.join(format!("{}.json", r.stage.as_str()));
        std::fs::write(&p, serde_json::to_string_pretty(r)?).map_err(io_err(&p))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join("model.json")
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            format: MANIFEST_FORMAT.into(),
            config: self.model.config().clone(),
            norm_stats: self.data.stats,
            palette_sha256: self.model.palette.sha256(),
            class_weight: self.data.alpha,
            seed: self.cfg.seed,
            checkpoints: self
                .stages()
                .into_iter()
                .map(|s| StageCheckpoint { stage: s, stem: format!("checkpoints/{}", s.as_str()) })
                .collect(),
        }
    }

    fn write_manifest(&self) -> Result<()> {
        self.manifest().save(&self.manifest_path())
    }

    fn fit_trajpred(&mut self, spec: &StageSpec, seed: u64, tracked: &[ParamId]) -> Result<FitOutcome> {
        let m = self.model.config().feature_width();
        let prep = |split| -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
            self.data
                .window_indices(split)
                .into_iter()
                .map(|i| self.data.window_tensors(&self.data.windows[i], m))
                .collect()
        };
        let (train, val) = (prep(Split::Train)?, prep(Split::Val)?);
        let Model { net, store, .. } = &mut self.model;
        let net: &Network = net;
        let batch_of = |set: &[(Tensor<f32>, Tensor<f32>)], idx: &[usize]| -> Result<(Tensor<f32>, Tensor<f32>)> {
            Ok((
                stack(&idx.iter().map(|&i| &set[i].0).collect::<Vec<_>>())?,
                stack(&idx.iter().map(|&i| &set[i].1).collect::<Vec<_>>())?,
            ))
        };
        fit(
            store,
            spec,
            train.len(),
            seed,
            tracked,
            |store, idx| {
                let (past, fut) = batch_of(&train, idx)?;
                let mut g = Graph::new(store);
                let p = g.constant(past);
                let y = net.trajpred.forward(&mut g, p)?;
                let l = g.mse(y, &fut)?;
                let loss = g.value(l).item() as f64;
                Ok(BatchOut { loss, correct: None, grads: g.backward(l)?, bn: Vec::new() })
            },
            |store| {
                if val.is_empty() {
                    return Ok(Validation { loss: 0.0, accuracy: None });
                }
                let mut sum = 0.0;
                let all: Vec<usize> = (0..val.len()).collect();
                for idx in all.chunks(INFER_BATCH) {
                    let (past, fut) = batch_of(&val, idx)?;
                    let mut g = Graph::no_grad(store);
                    let p = g.constant(past);
                    let y = net.trajpred.forward(&mut g, p)?;
                    let l = g.mse(y, &fut)?;
                    sum += g.value(l).item() as f64 * idx.len() as f64;
                }
                Ok(Validation { loss: sum / val.len() as f64, accuracy: None })
            },
            Hooks::default(),
        )
    }

    /// Generic classification-stage driver over train/val sample ids.
    /// `logits` builds `[B, 2]` logits for the given sample ids.
    #[allow(clippy::too_many_arguments)]
    fn fit_classifier(
        spec: &StageSpec,
        seed: u64,
        tracked: &[ParamId],
        store: &mut ParamStore<f32>,
        data: &DataBundle,
        train_ids: &[usize],
        val_ids: &[usize],
        training_mode: bool,
        logits: &LogitsFn<'_>,
        hooks: Hooks<'_>,
    ) -> Result<FitOutcome> {
        let alpha = data.alpha;
        fit(
            store,
            spec,
            train_ids.len(),
            seed,
            tracked,
            |store, idx| {
                let ids: Vec<usize> = idx.iter().map(|&k| train_ids[k]).collect();
                let labels = labels_of(data, &ids);
                let mut g = Graph::new(store).with_training(training_mode);
                let z = logits(&mut g, &ids)?;
                let (l, correct) = classify_loss(&mut g, z, &labels, alpha)?;
                let loss = g.value(l).item() as f64;
                let bn = g.take_bn_updates();
                Ok(BatchOut { loss, correct: Some(correct), grads: g.backward(l)?, bn })
            },
            |store| {
                if val_ids.is_empty() {
                    return Ok(Validation { loss: 0.0, accuracy: None });
                }
                let (mut sum, mut correct) = (0.0, 0);
                for ids in val_ids.chunks(INFER_BATCH) {
                    let labels = labels_of(data, ids);
                    let mut g = Graph::no_grad(store);
                    let z = logits(&mut g, ids)?;
                    let (l, c) = classify_loss(&mut g, z, &labels, alpha)?;
                    sum += g.value(l).item() as f64 * ids.len() as f64;
                    correct += c;
                }
                let n = val_ids.len() as f64;
                Ok(Validation { loss: sum / n, accuracy: Some(correct as f64 / n) })
            },
            hooks,
        )
    }

    fn fit_sam(&mut self, spec: &StageSpec, seed: u64, tracked: &[ParamId]) -> Result<FitOutcome> {
        self.ensure_pred()?;
        let d_model = self.model.config().sam.d_model;
        let (mut store, head, tracked) = self.take_store_with_head("head.sam", d_model, seed, tracked)?;
        let this = &*self;
        let logits = |g: &mut Graph<'_, f32>, ids: &[usize]| -> Result<NodeId> {
            let past = g.constant(stack(&ids.iter().map(|&i| &this.past[i]).collect::<Vec<_>>())?);
            let pred = g.constant(stack(&ids.iter().map(|&i| this.pred_of(i)).collect::<Vec<_>>())?);
            let seq = this.model.net.sam.sequence(g, past, Some(pred))?;
            let pooled = this.model.net.sam.pooled(g, seq)?;
            Ok(head.forward(g, pooled)?)
        };
        let r = Self::fit_classifier(spec, seed, &tracked, &mut store, this.data, &this.train_ids, &this.val_ids, false, &logits, Hooks::default());
        self.model.store = store;
        r
    }

    /// Moves the store out of the model after appending a temporary
    /// classification head; the head's ids join the tracked set.
    fn take_store_with_head(
        &mut self,
        name: &str,
        d_in: usize,
        seed: u64,
        tracked: &[ParamId],
    ) -> Result<(ParamStore<f32>, ClassHead, Vec<ParamId>)> {
        let mut store = std::mem::take(&mut self.model.store);
        let n = store.len();
        let head = ClassHead::new(&mut store, name, d_in, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x4ead))?;
        let mut tracked = tracked.to_vec();
        tracked.extend(store.ids().skip(n));
        Ok((store, head, tracked))
    }

    fn fit_van(&mut self, spec: &StageSpec, seed: u64, tracked: &[ParamId], van: usize) -> Result<FitOutcome> {
        self.ensure_images()?;
        let feat = self.model.config().vam.van.feature_dim();
        let (mut store, head, tracked) = self.take_store_with_head(&format!("head.van{}", van + 1), feat, seed, tracked)?;
        let this = &*self;
        let logits = |g: &mut Graph<'_, f32>, ids: &[usize]| -> Result<NodeId> {
            let x = g.constant(stack(&ids.iter().map(|&i| this.image_of(i, van)).collect::<Vec<_>>())?);
            let f = this.model.net.vam.features(g, van, x)?;
            Ok(head.forward(g, f)?)
        };
        let r = Self::fit_classifier(spec, seed, &tracked, &mut store, this.data, &this.train_ids, &this.val_ids, true, &logits, Hooks::default());
        self.model.store = store;
        r
    }

    fn fit_fusion(&mut self, spec: &StageSpec, seed: u64, tracked: &[ParamId]) -> Result<FitOutcome> {
        self.ensure_images()?;
        let n_vans = self.model.net.vam.vans.len();
        let ids: Vec<usize> = self.train_ids.iter().chain(&self.val_ids).copied().collect();
        let mut pooled = vec![None; self.data.samples.len()];
        let mut feats: Vec<Vec<Option<Tensor<f32>>>> = vec![vec![None; self.data.samples.len()]; n_vans];
        {
            let store = &self.model.store;
            let net = &self.model.net;
            for chunk in ids.chunks(INFER_BATCH) {
                let mut g = Graph::no_grad(store);
                let past = g.constant(stack(&chunk.iter().map(|&i| &self.past[i]).collect::<Vec<_>>())?);
                let pred = g.constant(stack(&chunk.iter().map(|&i| self.pred_of(i)).collect::<Vec<_>>())?);
                let seq = net.sam.sequence(&mut g, past, Some(pred))?;
                let p = net.sam.pooled(&mut g, seq)?;
                split_rows(g.value(p), chunk, &mut pooled)?;
                for (v, slot) in feats.iter_mut().enumerate() {
                    let x = g.constant(stack(&chunk.iter().map(|&i| self.image_of(i, v)).collect::<Vec<_>>())?);
                    let f = net.vam.features(&mut g, v, x)?;
                    split_rows(g.value(f), chunk, slot)?;
                }
            }
        }
        let delay = self.cfg.vam_proj_delay;
        let mut store = std::mem::take(&mut self.model.store);
        let proj_ids: Vec<ParamId> = store.ids().filter(|&id| store.name(id).starts_with("vam.proj.")).collect();
        let proj_hash = |s: &ParamStore<f32>| proj_ids.iter().map(|&id| tensor_hash(s.value(id))).collect::<Vec<_>>();
        let proj_start = proj_hash(&store);
        let mut changed = Vec::new();
        let net = &self.model.net;
        let logits = |g: &mut Graph<'_, f32>, ids: &[usize]| -> Result<NodeId> {
            let p = g.constant(stack(&ids.iter().map(|&i| pooled[i].as_ref().expect("pooled")).collect::<Vec<_>>())?);
            let s = net.sam.proj.forward(g, p)?;
            let fs = feats
                .iter()
                .map(|slot| Ok(g.constant(stack(&ids.iter().map(|&i| slot[i].as_ref().expect("feature")).collect::<Vec<_>>())?)))
                .collect::<Result<Vec<_>>>()?;
            let v = net.vam.project(g, &fs)?;
            net.fusion.forward(g, s, v)
        };
        let r = Self::fit_classifier(
            spec,
            seed,
            tracked,
            &mut store,
            self.data,
            &self.train_ids,
            &self.val_ids,
            false,
            &logits,
            Hooks {
                epoch_start: Box::new(|epoch, adam| adam.set_lr_multiplier("vam.proj.", if epoch < delay { 0.0 } else { 1.0 })),
                epoch_end: Box::new(|_, store| changed.push(proj_hash(store) != proj_start)),
                select_from: delay,
            },
        );
        self.model.store = store;
        self.vam_proj_changed = changed;
        r
    }

    /// Runs every stage not yet done, in order.
    pub fn run_remaining(&mut self) -> Result<()> {
        for s in self.stages() {
            if !self.done.contains(&s) {
                self.run_stage(s)?;
            }
        }
        Ok(())
    }

    /// Test-split metrics through the inference path, plus trajectory
    /// errors against the persistence baseline.
    pub fn report(&self) -> Result<TrainAllReport> {
        let test: Vec<_> = self.data.sample_indices(Split::Test).into_iter().map(|i| &self.data.samples[i]).collect();
        let (metrics, _) = evaluate(&self.model, &test, self.data.frames.as_ref())?;
        let windows: Vec<_> = self.data.window_indices(Split::Test).into_iter().map(|i| &self.data.windows[i]).collect();
        let trajectory = trajectory_errors(&self.model, &windows)?;
        Ok(TrainAllReport {
            seed: self.cfg.seed,
            records: self.records.clone(),
            test: metrics,
            trajectory,
            manifest: self.manifest_path().display().to_string(),
        })
    }
}

fn split_rows(t: &Tensor<f32>, ids: &[usize], out: &mut [Option<Tensor<f32>>]) -> Result<()> {
    let w = t.numel() / ids.len();
    for (k, &i) in ids.iter().enumerate() {
        out[i] = Some(Tensor::new(&[w], t.data()[k * w..(k + 1) * w].to_vec())?);
    }
    Ok(())
}

/// Runs every stage of `cfg` on `data` and writes the manifest, logs,
/// records and `report.json` under `out`.
pub fn train_all(cfg: TrainConfig, data: &DataBundle, out: &Path) -> Result<TrainAllReport> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut p = Pipeline::new(cfg, data, out)?;
    p.run_remaining()?;
    let report = p.report()?;
    let path = out.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(io_err(&path))?;
    Ok(report)
}
