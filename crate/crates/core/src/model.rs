//! Assembly of the trajectory predictor, SAM and VAM into the crossing
//! classifier, with late fusion, the modality-attention fusion variant and
//! the ablation toggles.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tfn_tensor::{checkpoint, Graph, NodeId, ParamStore, Real, Tensor};

use crate::data::{denormalize, offset_and_zscore, BBox, FrameSource, Image, NormStats, Sample, OBS_ROWS, PRED_LEN};
use crate::error::{io_err, Error, Result};
use crate::nn::Linear;
use crate::sam::{Sam, SamConfig, EMBED_DIM};
use crate::trajpred::{TrajPredictor, TrajPredictorConfig};
use crate::vam::{Palette, Vam, VamConfig, VamMode, VanConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    Small,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Small => "small",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "small" => Ok(Variant::Small),
            _ => Err(Error::Config(format!("unknown variant `{s}` (expected full or small)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pathway toggles of the ablation study; all off is the base model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub attn_fusion: bool,
    pub single_van: bool,
    pub no_type_ids: bool,
    pub no_speed: bool,
    pub no_pred_sam: bool,
    pub no_pred_vam: bool,
}

pub const SCENARIOS: [(u8, &str); 6] = [
    (1, "Use self-attention between modalities in the fusion head"),
    (2, "Use a single VAN with combined overlays of past and predicted trajectories"),
    (3, "Remove type IDs in SAM branch"),
    (4, "Remove vehicle speed from input modalities"),
    (5, "Remove trajectory prediction from SAM branch"),
    (6, "Remove trajectory prediction from VAM branch"),
];

impl Ablation {
    pub fn scenario(id: u8) -> Result<Self> {
        let mut a = Self::default();
        match id {
            1 => a.attn_fusion = true,
            2 => a.single_van = true,
            3 => a.no_type_ids = true,
            4 => a.no_speed = true,
            5 => a.no_pred_sam = true,
            6 => a.no_pred_vam = true,
            _ => {
                return Err(Error::Config(format!(
                    "unknown ablation scenario {id} (valid: 1, 2, 3, 4, 5, 6)"
                )))
            }
        }
        Ok(a)
    }

    pub fn feature_width(&self) -> usize {
        if self.no_speed { 4 } else { 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub ablation: Ablation,
    pub trajpred: TrajPredictorConfig,
    pub sam: SamConfig,
    pub vam: VamConfig,
}

/// Default network input resolution.
pub const DEFAULT_INPUT_SIZE: usize = 224;

impl ModelConfig {
    pub fn new(variant: Variant, ablation: Ablation, input_size: usize) -> Result<Self> {
        let (trajpred, sam, van) = match variant {
            Variant::Full => (TrajPredictorConfig::full(), SamConfig::full(), VanConfig::b2(input_size)),
            Variant::Small => (TrajPredictorConfig::small(), SamConfig::small(), VanConfig::b0(input_size)),
        };
        Self::compose(variant, ablation, trajpred, sam, van)
    }

    /// Gradient-check scale with the full variant's wiring.
    pub fn tiny(ablation: Ablation) -> Result<Self> {
        Self::compose(Variant::Full, ablation, TrajPredictorConfig::tiny(), SamConfig::tiny(), VanConfig::tiny())
    }

    fn compose(
        variant: Variant,
        ablation: Ablation,
        mut trajpred: TrajPredictorConfig,
        mut sam: SamConfig,
        van: VanConfig,
    ) -> Result<Self> {
        let m = ablation.feature_width();
        trajpred.m = m;
        sam.m = m;
        sam.type_ids = !ablation.no_type_ids;
        sam.use_prediction = !ablation.no_pred_sam;
        let mode = if ablation.no_pred_vam {
            VamMode::ObservedOnly
        } else if variant == Variant::Small || ablation.single_van {
            VamMode::Combined
        } else {
            VamMode::Dual
        };
        let cfg = Self { variant, ablation, trajpred, sam, vam: VamConfig { van, mode } };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.trajpred.validate()?;
        self.sam.validate()?;
        self.vam.van.validate()?;
        if self.trajpred.m != self.sam.m {
            return Err(Error::Config("trajpred and sam feature widths differ".into()));
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        self.trajpred.m
    }

    pub fn input_size(&self) -> usize {
        self.vam.van.input_size
    }

    /// Training stages in execution order.
    pub fn stages(&self) -> Vec<Stage> {
        let mut s = vec![Stage::Trajpred, Stage::Sam, Stage::Van1];
        if self.vam.mode.n_vans() == 2 {
            s.push(Stage::Van2);
        }
        s.push(Stage::Fusion);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Trajpred,
    Sam,
    Van1,
    Van2,
    Fusion,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Trajpred, Stage::Sam, Stage::Van1, Stage::Van2, Stage::Fusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Trajpred => "trajpred",
            Stage::Sam => "sam",
            Stage::Van1 => "van1",
            Stage::Van2 => "van2",
            Stage::Fusion => "fusion",
        }
    }

    /// Whether a parameter belongs to the weights this stage produces.
    pub fn owns(self, name: &str) -> bool {
        match self {
            Stage::Trajpred => name.starts_with("trajpred."),
            Stage::Sam => name.starts_with("sam.") && !name.starts_with("sam.proj."),
            Stage::Van1 => name.starts_with("vam.van1."),
            Stage::Van2 => name.starts_with("vam.van2."),
            Stage::Fusion => {
                name.starts_with("sam.proj.") || name.starts_with("vam.proj.") || name.starts_with("fusion.")
            }
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s || (s == "sam_encoder" && *st == Stage::Sam))
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}` (expected trajpred, sam, van1, van2 or fusion)")))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense fusion head over the two 40-d branch embeddings.
#[derive(Debug)]
pub struct Fusion {
    pub attention: bool,
    fc1: Linear,
    fc2: Linear,
    out: Linear,
}

impl Fusion {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, attention: bool, rng: &mut R) -> Result<Self> {
        let d_in = if attention { 2 * 2 * EMBED_DIM } else { 2 * EMBED_DIM };
        Ok(Self {
            attention,
            fc1: Linear::new(store, "fusion.fc1", d_in, 80, true, rng)?,
            fc2: Linear::new(store, "fusion.fc2", 80, 40, true, rng)?,
            out: Linear::new(store, "fusion.out", 40, 2, true, rng)?,
        })
    }

    /// `[B, 2, 40]` stack of the two modality embeddings.
    pub fn modality_stack<T: Real>(g: &mut Graph<'_, T>, sam: NodeId, vam: NodeId) -> Result<NodeId> {
        let b = g.shape(sam)[0];
        let s = g.reshape(sam, &[b, 1, EMBED_DIM])?;
        let v = g.reshape(vam, &[b, 1, EMBED_DIM])?;
        Ok(g.concat(&[s, v], 1)?)
    }

    /// Modality stack and its unprojected self-attention context, both `[B, 2, 40]`.
    pub fn context<T: Real>(g: &mut Graph<'_, T>, sam: NodeId, vam: NodeId) -> Result<(NodeId, NodeId)> {
        let chi = Self::modality_stack(g, sam, vam)?;
        let ctx = g.attention(chi, chi, chi, None)?;
        Ok((chi, ctx))
    }

    /// Logits `[B, 2]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, sam: NodeId, vam: NodeId) -> Result<NodeId> {
        for (name, n) in [("sam", sam), ("vam", vam)] {
            let s = g.shape(n);
            if s.len() != 2 || s[1] != EMBED_DIM {
                return Err(Error::Data(format!("{name} embedding must be [B, {EMBED_DIM}], got {s:?}")));
            }
        }
        let b = g.shape(sam)[0];
        let x = if self.attention {
            let (chi, ctx) = Self::context(g, sam, vam)?;
            let cat = g.concat(&[ctx, chi], 2)?;
            g.reshape(cat, &[b, 4 * EMBED_DIM])?
        } else {
            g.concat(&[sam, vam], 1)?
        };
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, h)?;
        let h = g.gelu(h);
        Ok(self.out.forward(g, h)?)
    }
}

/// Module structure without the parameter storage.
#[derive(Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub trajpred: TrajPredictor,
    pub sam: Sam,
    pub vam: Vam,
    pub fusion: Fusion,
}

impl Network {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            trajpred: TrajPredictor::new(store, "trajpred", config.trajpred.clone(), rng)?,
            sam: Sam::new(store, "sam", config.sam.clone(), rng)?,
            vam: Vam::new(store, "vam", config.vam.clone(), rng)?,
            fusion: Fusion::new(store, config.ablation.attn_fusion, rng)?,
            config,
        })
    }

    /// Logits `[B, 2]` from normalized past `[B, 15, m]`, the prediction
    /// `[B, 60, m]` and one image batch per VAN.
    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, past: NodeId, pred: NodeId, images: &[NodeId]) -> Result<NodeId> {
        let s = self.sam.forward(g, past, Some(pred))?;
        let v = self.vam.forward(g, images)?;
        self.fusion.forward(g, s, v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingPrediction {
    pub logits: [f64; 2],
    pub probability: f64,
    pub label: u8,
}

impl CrossingPrediction {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let mx = logits[0].max(logits[1]);
        let (e0, e1) = ((logits[0] - mx).exp(), (logits[1] - mx).exp());
        let probability = e1 / (e0 + e1);
        Self { logits, probability, label: u8::from(probability >= 0.5) }
    }
}

/// Trainable scalar count of a store.
pub fn count_parameters<T: Real>(store: &ParamStore<T>) -> usize {
    store.trainable_count()
}

/// Parameter count of a configuration, built on a throwaway store.
pub fn count_config_parameters(config: &ModelConfig) -> Result<usize> {
    let mut store = ParamStore::<f32>::new();
    Network::new(&mut store, config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(count_parameters(&store))
}

pub const MANIFEST_FORMAT: &str = "tfn-model/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCheckpoint {
    pub stage: Stage,
    /// Path stem relative to the manifest directory (`.bin` / `.json`).
    pub stem: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub config: ModelConfig,
    pub norm_stats: NormStats,
    pub palette_sha256: String,
    pub class_weight: f64,
    pub seed: u64,
    pub checkpoints: Vec<StageCheckpoint>,
}

impl ModelManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates manifest JSON; `origin` names it in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("{origin}: unsupported manifest format `{}`", m.format)));
        }
        m.config.validate()?;
        m.norm_stats.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(io_err(path))
    }
}

/// Network, weights and the preprocessing constants needed for inference.
#[derive(Debug)]
pub struct Model {
    pub net: Network,
    pub store: ParamStore<f32>,
    pub stats: NormStats,
    pub palette: Palette,
}

impl Model {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, stats: NormStats, palette: Palette, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::new(&mut store, config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { net, store, stats, palette })
    }

    /// Rebuilds the model from a manifest and every stage checkpoint it
    /// lists. Each stage the configuration needs must be present.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let m = ModelManifest::load(manifest_path)?;
        let palette = Palette::ade20k();
        if palette.sha256() != m.palette_sha256 {
            return Err(Error::Config(format!(
                "manifest palette hash {} does not match the bundled palette {}",
                m.palette_sha256,
                palette.sha256()
            )));
        }
        let mut model = Self::new(m.config.clone(), m.norm_stats, palette, m.seed)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        for stage in m.config.stages() {
            let entry = m.checkpoints.iter().find(|c| c.stage == stage).ok_or_else(|| Error::MissingCheckpoint {
                stage: stage.to_string(),
                path: manifest_path.to_path_buf(),
            })?;
            let stem: PathBuf = dir.join(&entry.stem);
            if !stem.with_extension("bin").exists() || !stem.with_extension("json").exists() {
                return Err(Error::MissingCheckpoint { stage: stage.to_string(), path: stem });
            }
            checkpoint::load_into(&mut model.store, &stem)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Normalized observed rows `[15, m]`.
    pub fn prepare(&self, sample: &Sample) -> Result<Tensor<f32>> {
        if sample.observed.len() != OBS_ROWS {
            return Err(Error::Data(format!(
                "sample {} has {} observed rows, expected {OBS_ROWS}",
                sample.ped_id,
                sample.observed.len()
            )));
        }
        let rows = offset_and_zscore(&sample.observed, &sample.origin(), &self.stats)?;
        Ok(rows_to_tensor(&rows, self.config().feature_width()))
    }

    /// Predicted `[60, m]` rows mapped back to pixel boxes.
    pub fn future_boxes(&self, pred: &Tensor<f32>, origin: &BBox) -> Vec<BBox> {
        denormalize(&tensor_to_rows(pred), origin, &self.stats)
            .iter()
            .map(|r| [r[0], r[1], r[2], r[3]])
            .collect()
    }

    pub fn predict_trajectory(&self, past: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.net.trajpred.predict(&self.store, past)
    }

    /// Overlay rendering, resize and normalization of the two scene frames.
    pub fn render_inputs(&self, first: &Image, last: &Image, obs: &[BBox], pred: &[BBox]) -> Result<Vec<Tensor<f32>>> {
        let rendered = self.net.vam.render(first, last, obs, pred, &self.palette)?;
        self.net.vam.network_inputs(&rendered)
    }

    /// Branches and fusion for one sample given its prediction and network
    /// images (the model part after trajectory prediction).
    pub fn forward_from_prediction(&self, past: &Tensor<f32>, pred: &Tensor<f32>, images: &[Tensor<f32>]) -> Result<[f64; 2]> {
        let m = self.config().feature_width();
        let mut g = Graph::no_grad(&self.store);
        let p = g.constant(past.clone().reshape(&[1, OBS_ROWS, m])?);
        let f = g.constant(pred.clone().reshape(&[1, PRED_LEN, m])?);
        let imgs = images
            .iter()
            .map(|t| {
                let s = t.shape();
                Ok(g.constant(t.clone().reshape(&[1, s[0], s[1], s[2]])?))
            })
            .collect::<Result<Vec<_>>>()?;
        let y = self.net.logits(&mut g, p, f, &imgs)?;
        let v = g.value(y).data();
        Ok([v[0] as f64, v[1] as f64])
    }

    /// Full inference on decoded frames: normalization, one trajectory
    /// prediction shared by both branches, overlays, fusion.
    pub fn predict_with_images(&self, sample: &Sample, first: &Image, last: &Image) -> Result<CrossingPrediction> {
        let past = self.prepare(sample)?;
        let pred = self.predict_trajectory(&past)?;
        let boxes = self.future_boxes(&pred, &sample.origin());
        let images = self.render_inputs(first, last, &sample.obs_boxes(), &boxes)?;
        Ok(CrossingPrediction::from_logits(self.forward_from_prediction(&past, &pred, &images)?))
    }

    pub fn predict_crossing(&self, sample: &Sample, frames: &dyn FrameSource) -> Result<CrossingPrediction> {
        let first = frames.frame(&sample.ped_id, sample.first_frame)?;
        let last = frames.frame(&sample.ped_id, sample.last_frame)?;
        self.predict_with_images(sample, &first, &last)
    }
}

/// Rows truncated to the model's feature width.
pub fn rows_to_tensor(rows: &[[f64; 5]], m: usize) -> Tensor<f32> {
    let data = rows.iter().flat_map(|r| r[..m].iter().map(|&v| v as f32)).collect();
    Tensor::new(&[rows.len(), m], data).expect("row-major shape")
}

/// `[n, m]` back to five-column rows; a missing speed column reads as 0.
pub fn tensor_to_rows(t: &Tensor<f32>) -> Vec<[f64; 5]> {
    let m = *t.shape().last().unwrap_or(&5);
    t.data()
        .chunks(m)
        .map(|c| std::array::from_fn(|j| c.get(j).map_or(0.0, |&v| v as f64)))
        .collect()
}
