//! Sequence attention branch: observed and predicted rows tagged with a
//! type id, an encoder-only transformer, mean pooling and a projection to
//! the fusion embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tfn_tensor::{Graph, NodeId, ParamStore, Real, Tensor};

use crate::data::{OBS_ROWS, PRED_LEN};
use crate::error::{Error, Result};
use crate::nn::{EncoderLayer, LayerNorm, Linear, SeqEmbedding};

/// Width of each branch embedding entering fusion.
pub const EMBED_DIM: usize = 40;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    /// Trajectory feature width (5, or 4 without ego speed).
    pub m: usize,
    /// Append the 0/1 sequence type column.
    pub type_ids: bool,
    /// Feed predicted rows; when false only the 15 observed rows are used.
    pub use_prediction: bool,
}

impl SamConfig {
    pub fn full() -> Self {
        Self { layers: 6, heads: 12, d_model: 128, ffn_dim: 1024, m: 5, type_ids: true, use_prediction: true }
    }

    pub fn small() -> Self {
        Self { layers: 2, heads: 2, d_model: 128, ffn_dim: 256, m: 5, type_ids: true, use_prediction: true }
    }

    pub fn tiny() -> Self {
        Self { layers: 1, heads: 2, d_model: 8, ffn_dim: 16, m: 5, type_ids: true, use_prediction: true }
    }

    /// Per-token input width seen by the embedding.
    pub fn input_width(&self) -> usize {
        self.m + usize::from(self.type_ids && self.use_prediction)
    }

    pub fn seq_len(&self) -> usize {
        if self.use_prediction { OBS_ROWS + PRED_LEN } else { OBS_ROWS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model / self.heads == 0 || self.layers == 0 {
            return Err(Error::Config(format!(
                "sam: {} layers, {} heads on width {}",
                self.layers, self.heads, self.d_model
            )));
        }
        if !(4..=5).contains(&self.m) {
            return Err(Error::Config(format!("sam feature width {} (expected 4 or 5)", self.m)));
        }
        Ok(())
    }
}

/// `[15, m]` observed and `[60, m]` predicted rows → `[75, m + 1]` with the
/// last column 0 for observed rows and 1 for predicted rows. Leading batch
/// axes are allowed as long as they agree.
pub fn append_type_ids<T: Real>(past: &Tensor<T>, pred: &Tensor<T>) -> Result<Tensor<T>> {
    let (ps, fs) = (past.shape(), pred.shape());
    let ok = ps.len() >= 2
        && ps.len() == fs.len()
        && ps[ps.len() - 2] == OBS_ROWS
        && fs[fs.len() - 2] == PRED_LEN
        && ps[ps.len() - 1] == fs[fs.len() - 1]
        && ps[..ps.len() - 2] == fs[..fs.len() - 2];
    if !ok {
        return Err(Error::Data(format!(
            "type ids need [.., {OBS_ROWS}, m] and [.., {PRED_LEN}, m], got {ps:?} and {fs:?}"
        )));
    }
    let m = ps[ps.len() - 1];
    let mut out = Vec::with_capacity(past.numel() + pred.numel() + past.numel() / m.max(1) * (OBS_ROWS + PRED_LEN) / OBS_ROWS);
    for (pc, fc) in past.data().chunks(OBS_ROWS * m).zip(pred.data().chunks(PRED_LEN * m)) {
        for row in pc.chunks(m) {
            out.extend_from_slice(row);
            out.push(T::ZERO);
        }
        for row in fc.chunks(m) {
            out.extend_from_slice(row);
            out.push(T::ONE);
        }
    }
    let mut shape = ps.to_vec();
    let n = shape.len();
    shape[n - 2] = OBS_ROWS + PRED_LEN;
    shape[n - 1] = m + 1;
    Ok(Tensor::new(&shape, out)?)
}

#[derive(Debug)]
pub struct Sam {
    pub config: SamConfig,
    embed: SeqEmbedding,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    pub proj: Linear,
}

impl Sam {
    /// Encoder parameters live under `{prefix}.*`, the projection under
    /// `{prefix}.proj.*`.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: SamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let layers = (0..c.layers)
            .map(|i| EncoderLayer::new(store, &format!("{prefix}.encoder.{i}"), c.d_model, c.heads, c.ffn_dim, rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            embed: SeqEmbedding::new(store, &format!("{prefix}.embed"), c.input_width(), c.d_model, rng)?,
            layers,
            norm: LayerNorm::new(store, &format!("{prefix}.norm"), c.d_model)?,
            proj: Linear::new(store, &format!("{prefix}.proj"), c.d_model, EMBED_DIM, true, rng)?,
            config,
        })
    }

    /// Builds the encoder input `[B, n, w]` from observed `[B, 15, m]` and
    /// predicted `[B, 60, m]` nodes per the configuration.
    pub fn sequence<T: Real>(&self, g: &mut Graph<'_, T>, past: NodeId, pred: Option<NodeId>) -> Result<NodeId> {
        let b = g.shape(past)[0];
        if !self.config.use_prediction {
            return Ok(past);
        }
        let pred = pred.ok_or_else(|| Error::Data("sam configured with predictions but none given".into()))?;
        if !self.config.type_ids {
            return Ok(g.concat(&[past, pred], 1)?);
        }
        let zeros = g.constant(Tensor::zeros(&[b, OBS_ROWS, 1]));
        let ones = g.constant(Tensor::full(&[b, PRED_LEN, 1], T::ONE));
        let p = g.concat(&[past, zeros], 2)?;
        let f = g.concat(&[pred, ones], 2)?;
        Ok(g.concat(&[p, f], 1)?)
    }

    /// Mean-pooled encoder output `[B, d_model]` for a prepared sequence.
    pub fn pooled<T: Real>(&self, g: &mut Graph<'_, T>, seq: NodeId) -> Result<NodeId> {
        let s = g.shape(seq).to_vec();
        if s.len() != 3 || s[1] != self.config.seq_len() || s[2] != self.config.input_width() {
            return Err(Error::Data(format!(
                "sam expects [B, {}, {}], got {s:?}",
                self.config.seq_len(),
                self.config.input_width()
            )));
        }
        let mut x = self.embed.forward(g, seq)?;
        for l in &self.layers {
            x = l.forward(g, x)?;
        }
        let x = self.norm.forward(g, x)?;
        Ok(g.mean_axis(x, 1)?)
    }

    /// Full branch: sequence → pooled → projection `[B, 40]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, past: NodeId, pred: Option<NodeId>) -> Result<NodeId> {
        let seq = self.sequence(g, past, pred)?;
        let pooled = self.pooled(g, seq)?;
        Ok(self.proj.forward(g, pooled)?)
    }
}
