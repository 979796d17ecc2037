use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{io_err, Error, Result};
use crate::model::{Ablation, ModelConfig, Stage, Variant, DEFAULT_INPUT_SIZE};

/// Disjoint name prefixes covering every network parameter.
pub const PARAM_GROUPS: [&str; 9] = [
    "trajpred.",
    "sam.embed.",
    "sam.encoder.",
    "sam.norm.",
    "sam.proj.",
    "vam.van1.",
    "vam.van2.",
    "vam.proj.",
    "fusion.",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    WeightedCe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: Stage,
    pub peak_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub loss: Loss,
}

impl StageSpec {
    /// Full-scale schedule of the stage.
    pub fn paper(stage: Stage) -> Self {
        let (peak_lr, epochs, batch_size, loss) = match stage {
            Stage::Trajpred => (5e-5, 40, 64, Loss::Mse),
            Stage::Sam => (5e-6, 60, 16, Loss::WeightedCe),
            Stage::Van1 | Stage::Van2 => (5e-5, 15, 16, Loss::WeightedCe),
            Stage::Fusion => (5e-6, 60, 16, Loss::WeightedCe),
        };
        Self { stage, peak_lr, epochs, batch_size, warmup_frac: 0.1, loss }
    }

    /// Name prefixes of parameters that stay frozen for this stage: every
    /// network parameter the stage does not own.
    pub fn frozen_prefixes(&self) -> Vec<&'static str> {
        PARAM_GROUPS.into_iter().filter(|p| !self.stage.owns(p)).collect()
    }

    /// Prefixes the stage trains.
    pub fn trainable_prefixes(&self) -> Vec<&'static str> {
        PARAM_GROUPS.into_iter().filter(|p| self.stage.owns(p)).collect()
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen_prefixes().iter().any(|p| name.starts_with(p))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) || self.batch_size == 0 || !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("invalid {} stage settings: {self:?}", self.stage)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub synth: SynthConfig,
    /// Keep every n-th valid observation end point per track.
    pub sample_stride: usize,
    /// Overlap between consecutive trajectory-prediction windows.
    pub traj_overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub variant: Variant,
    pub ablation: Ablation,
    pub input_size: usize,
    pub data: DataConfig,
    pub stages: BTreeMap<Stage, StageSpec>,
    /// Fusion epochs during which the VAM projection keeps a zero rate.
    pub vam_proj_delay: usize,
    pub deterministic: bool,
}

impl TrainConfig {
    /// Full-scale defaults: the documented stage schedule, 224 pixel inputs.
    pub fn paper(variant: Variant) -> Self {
        Self {
            seed: 0,
            variant,
            ablation: Ablation::default(),
            input_size: DEFAULT_INPUT_SIZE,
            data: DataConfig { synth: SynthConfig::default(), sample_stride: 1, traj_overlap: 0.6 },
            stages: Stage::ALL.into_iter().map(|s| (s, StageSpec::paper(s))).collect(),
            vam_proj_delay: 15,
            deterministic: false,
        }
    }

    /// Desk scale: same architecture, 32 pixel inputs, fewer epochs, higher
    /// peak rates, sparser samples.
    pub fn desk(variant: Variant) -> Self {
        let mut c = Self::paper(variant);
        c.input_size = 32;
        c.data.sample_stride = 6;
        c.data.traj_overlap = 0.8;
        for (stage, lr, epochs, batch) in [
            (Stage::Trajpred, 1e-3, 15, 32),
            (Stage::Sam, 2e-4, 6, 16),
            (Stage::Van1, 5e-4, 4, 16),
            (Stage::Van2, 5e-4, 4, 16),
            (Stage::Fusion, 1e-3, 25, 16),
        ] {
            let s = c.stages.get_mut(&stage).expect("all stages present");
            s.peak_lr = lr;
            s.epochs = epochs;
            s.batch_size = batch;
        }
        c
    }

    /// Minutes-scale run for checks of the pipeline mechanics: 60 tracks,
    /// one or two epochs per stage, the VAM projection released at fusion
    /// epoch 2.
    pub fn smoke(variant: Variant) -> Self {
        let mut c = Self::desk(variant);
        c.data.synth.n_tracks = 60;
        for (stage, epochs) in [(Stage::Trajpred, 2), (Stage::Sam, 1), (Stage::Van1, 1), (Stage::Van2, 1), (Stage::Fusion, 4)] {
            c.stages.get_mut(&stage).expect("all stages present").epochs = epochs;
        }
        c.vam_proj_delay = 2;
        c
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.variant, self.ablation, self.input_size)
    }

    pub fn stage(&self, s: Stage) -> &StageSpec {
        &self.stages[&s]
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        if self.data.sample_stride == 0 || !(0.0..1.0).contains(&self.data.traj_overlap) {
            return Err(Error::Config("sample stride must be positive and overlap in [0, 1)".into()));
        }
        for s in self.stages.values() {
            s.validate()?;
        }
        self.model_config()?;
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. Later lines win.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { path: "config".into(), line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        self.apply_kv(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse { path: path.display().to_string(), line, msg },
            other => other,
        })
    }

    /// Sets one configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("`{key}`: expected true or false, got {v:?}"))),
            }
        }
        let d = &mut self.data;
        match key {
            "seed" => self.seed = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "input_size" => self.input_size = num(key, value)?,
            "deterministic" => self.deterministic = flag(key, value)?,
            "scenario" => {
                self.ablation = match value {
                    "0" | "base" => Ablation::default(),
                    v => Ablation::scenario(num(key, v)?)?,
                }
            }
            "ablation.attn_fusion" => self.ablation.attn_fusion = flag(key, value)?,
            "ablation.single_van" => self.ablation.single_van = flag(key, value)?,
            "ablation.no_type_ids" => self.ablation.no_type_ids = flag(key, value)?,
            "ablation.no_speed" => self.ablation.no_speed = flag(key, value)?,
            "ablation.no_pred_sam" => self.ablation.no_pred_sam = flag(key, value)?,
            "ablation.no_pred_vam" => self.ablation.no_pred_vam = flag(key, value)?,
            "fusion.vam_proj_delay" => self.vam_proj_delay = num(key, value)?,
            "data.tracks" => d.synth.n_tracks = num(key, value)?,
            "data.sample_stride" => d.sample_stride = num(key, value)?,
            "data.traj_overlap" => d.traj_overlap = num(key, value)?,
            "data.positive_fraction" => d.synth.pos_fraction = num(key, value)?,
            "data.val_fraction" => d.synth.val_fraction = num(key, value)?,
            "data.test_fraction" => d.synth.test_fraction = num(key, value)?,
            "data.jitter" => d.synth.jitter_std = num(key, value)?,
            _ => {
                let (stage, field) = key
                    .split_once('.')
                    .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                let stage: Stage = stage.parse().map_err(|_| Error::Config(format!("unknown key `{key}`")))?;
                let s = self.stages.get_mut(&stage).expect("all stages present");
                match field {
                    "lr" => s.peak_lr = num(key, value)?,
                    "epochs" => s.epochs = num(key, value)?,
                    "batch_size" => s.batch_size = num(key, value)?,
                    "warmup" => s.warmup_frac = num(key, value)?,
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
            }
        }
        Ok(())
    }

    /// Resolved configuration as `key = value` lines.
    pub fn to_kv(&self) -> String {
        let d = &self.data;
        let a = &self.ablation;
        let mut out = format!(
            "seed = {}\nvariant = {}\ninput_size = {}\ndeterministic = {}\n\
             ablation.attn_fusion = {}\nablation.single_van = {}\nablation.no_type_ids = {}\n\
             ablation.no_speed = {}\nablation.no_pred_sam = {}\nablation.no_pred_vam = {}\n\
             fusion.vam_proj_delay = {}\ndata.tracks = {}\ndata.sample_stride = {}\n\
             data.traj_overlap = {}\ndata.positive_fraction = {}\ndata.val_fraction = {}\n\
             data.test_fraction = {}\ndata.jitter = {}\n",
            self.seed,
            self.variant,
            self.input_size,
            self.deterministic,
            a.attn_fusion,
            a.single_van,
            a.no_type_ids,
            a.no_speed,
            a.no_pred_sam,
            a.no_pred_vam,
            self.vam_proj_delay,
            d.synth.n_tracks,
            d.sample_stride,
            d.traj_overlap,
            d.synth.pos_fraction,
            d.synth.val_fraction,
            d.synth.test_fraction,
            d.synth.jitter_std,
        );
        for s in self.stages.values() {
            let n = s.stage.as_str();
            out += &format!(
                "{n}.lr = {}\n{n}.epochs = {}\n{n}.batch_size = {}\n{n}.warmup = {}\n",
                s.peak_lr, s.epochs, s.batch_size, s.warmup_frac
            );
        }
        out
    }
}
