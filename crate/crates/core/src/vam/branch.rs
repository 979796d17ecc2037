use rand::Rng;
use serde::{Deserialize, Serialize};
use tfn_tensor::{Graph, NodeId, ParamStore, Real, Tensor};

use crate::data::{BBox, Image, OBS_ROWS};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::sam::EMBED_DIM;

use super::overlay::draw_overlay;
use super::palette::Palette;
use super::van::{Van, VanConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VamMode {
    /// First frame with observed boxes, last frame with predicted boxes,
    /// one VAN each.
    Dual,
    /// One VAN on the last frame with observed then predicted boxes.
    Combined,
    /// One VAN on the last frame with observed boxes only.
    ObservedOnly,
}

impl VamMode {
    pub fn n_vans(self) -> usize {
        match self {
            VamMode::Dual => 2,
            VamMode::Combined | VamMode::ObservedOnly => 1,
        }
    }

    pub fn uses_prediction(self) -> bool {
        self != VamMode::ObservedOnly
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VamConfig {
    pub van: VanConfig,
    pub mode: VamMode,
}

#[derive(Debug)]
pub struct Vam {
    pub config: VamConfig,
    pub vans: Vec<Van>,
    pub proj: Linear,
}

impl Vam {
    /// Backbones under `{prefix}.van1`, `{prefix}.van2`; projection under
    /// `{prefix}.proj`.
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, config: VamConfig, rng: &mut R) -> Result<Self> {
        let n = config.mode.n_vans();
        let vans = (0..n)
            .map(|i| Van::new(store, &format!("{prefix}.van{}", i + 1), config.van.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        let proj = Linear::new(store, &format!("{prefix}.proj"), n * config.van.feature_dim(), EMBED_DIM, true, rng)?;
        Ok(Self { config, vans, proj })
    }

    /// Overlay-rendered frames, one per VAN, at native resolution. Observed
    /// boxes take palette entries 0..15, predicted boxes 15..75.
    pub fn render(&self, first: &Image, last: &Image, obs: &[BBox], pred: &[BBox], palette: &Palette) -> Result<Vec<Image>> {
        if obs.len() != OBS_ROWS {
            return Err(Error::Data(format!("expected {OBS_ROWS} observed boxes, got {}", obs.len())));
        }
        Ok(match self.config.mode {
            VamMode::Dual => {
                let mut a = first.clone();
                draw_overlay(&mut a, obs, palette, 0)?;
                let mut b = last.clone();
                draw_overlay(&mut b, pred, palette, OBS_ROWS)?;
                vec![a, b]
            }
            VamMode::Combined => {
                let mut a = last.clone();
                draw_overlay(&mut a, obs, palette, 0)?;
                draw_overlay(&mut a, pred, palette, OBS_ROWS)?;
                vec![a]
            }
            VamMode::ObservedOnly => {
                let mut a = last.clone();
                draw_overlay(&mut a, obs, palette, 0)?;
                vec![a]
            }
        })
    }

    /// Resized, normalized `[3, S, S]` inputs for rendered frames.
    pub fn network_inputs(&self, rendered: &[Image]) -> Result<Vec<Tensor<f32>>> {
        let s = self.config.van.input_size;
        rendered
            .iter()
            .map(|im| Ok(Tensor::new(&[3, s, s], im.to_network_input(s))?))
            .collect()
    }

    /// Feature `[B, F]` of backbone `i` on `[B, 3, S, S]`.
    pub fn features<T: Real>(&self, g: &mut Graph<'_, T>, i: usize, x: NodeId) -> Result<NodeId> {
        self.vans
            .get(i)
            .ok_or_else(|| Error::Data(format!("VAM has {} backbones, asked for {}", self.vans.len(), i + 1)))?
            .forward(g, x)
    }

    /// Projection of concatenated backbone features to `[B, 40]`.
    pub fn project<T: Real>(&self, g: &mut Graph<'_, T>, feats: &[NodeId]) -> Result<NodeId> {
        if feats.len() != self.vans.len() {
            return Err(Error::Data(format!("VAM projection needs {} features, got {}", self.vans.len(), feats.len())));
        }
        let x = if feats.len() == 1 { feats[0] } else { g.concat(feats, 1)? };
        Ok(self.proj.forward(g, x)?)
    }

    /// Images `[B, 3, S, S]`, one node per backbone → `[B, 40]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, images: &[NodeId]) -> Result<NodeId> {
        let feats = images
            .iter()
            .enumerate()
            .map(|(i, &x)| self.features(g, i, x))
            .collect::<Result<Vec<_>>>()?;
        self.project(g, &feats)
    }
}
