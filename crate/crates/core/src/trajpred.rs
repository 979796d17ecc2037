//! Non-autoregressive encoder-decoder transformer: 15 observed rows in,
//! 60 future rows out in a single pass.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tfn_tensor::{Graph, NodeId, ParamStore, Real, Tensor};

use crate::data::{OBS_ROWS, PRED_LEN, SEQ_LEN};
use crate::error::{Error, Result};
use crate::nn::{DecoderLayer, EncoderLayer, LayerNorm, Linear, SeqEmbedding};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajPredictorConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    /// Feature width: 5 with ego speed, 4 without.
    pub m: usize,
}

impl TrajPredictorConfig {
    pub fn full() -> Self {
        Self { enc_layers: 8, dec_layers: 8, heads: 4, d_model: 128, ffn_dim: 512, m: 5 }
    }

    pub fn small() -> Self {
        Self { enc_layers: 2, dec_layers: 2, heads: 2, d_model: 128, ffn_dim: 256, m: 5 }
    }

    /// Gradient-check scale.
    pub fn tiny() -> Self {
        Self { enc_layers: 1, dec_layers: 1, heads: 2, d_model: 8, ffn_dim: 16, m: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "trajpred d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(4..=5).contains(&self.m) {
            return Err(Error::Config(format!("trajpred feature width {} (expected 4 or 5)", self.m)));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::Config("trajpred needs at least one encoder and decoder layer".into()));
        }
        Ok(())
    }
}

/// Counts encoder and decoder passes; used to assert one-shot decoding.
#[derive(Debug, Default)]
pub struct PassCounter {
    encoder: AtomicUsize,
    decoder: AtomicUsize,
}

impl PassCounter {
    pub fn encoder_passes(&self) -> usize {
        self.encoder.load(Ordering::Relaxed)
    }

    pub fn decoder_passes(&self) -> usize {
        self.decoder.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.encoder.store(0, Ordering::Relaxed);
        self.decoder.store(0, Ordering::Relaxed);
    }
}

#[derive(Debug)]
pub struct TrajPredictor {
    pub config: TrajPredictorConfig,
    enc_embed: SeqEmbedding,
    dec_embed: SeqEmbedding,
    encoder: Vec<EncoderLayer>,
    enc_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    out: Linear,
    pub passes: PassCounter,
}

/// Past rows followed by `PRED_LEN` zero rows: `[.., 15, m] -> [.., 75, m]`.
pub fn build_decoder_input<T: Real>(past: &Tensor<T>) -> Result<Tensor<T>> {
    let s = past.shape();
    if s.len() < 2 || s[s.len() - 2] != OBS_ROWS {
        return Err(Error::Data(format!(
            "decoder input expects [.., {OBS_ROWS}, m] past rows, got {s:?}"
        )));
    }
    let m = s[s.len() - 1];
    let batch: usize = s[..s.len() - 2].iter().product();
    let mut data = Vec::with_capacity(batch * SEQ_LEN * m);
    for chunk in past.data().chunks(OBS_ROWS * m) {
        data.extend_from_slice(chunk);
        data.extend(std::iter::repeat_n(T::ZERO, PRED_LEN * m));
    }
    let mut shape = s.to_vec();
    let n = shape.len();
    shape[n - 2] = SEQ_LEN;
    Ok(Tensor::new(&shape, data)?)
}

impl TrajPredictor {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: TrajPredictorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let encoder = (0..c.enc_layers)
            .map(|i| EncoderLayer::new(store, &format!("{prefix}.encoder.{i}"), c.d_model, c.heads, c.ffn_dim, rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let decoder = (0..c.dec_layers)
            .map(|i| DecoderLayer::new(store, &format!("{prefix}.decoder.{i}"), c.d_model, c.heads, c.ffn_dim, rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            enc_embed: SeqEmbedding::new(store, &format!("{prefix}.enc_embed"), c.m, c.d_model, rng)?,
            dec_embed: SeqEmbedding::new(store, &format!("{prefix}.dec_embed"), c.m, c.d_model, rng)?,
            encoder,
            enc_norm: LayerNorm::new(store, &format!("{prefix}.enc_norm"), c.d_model)?,
            decoder,
            dec_norm: LayerNorm::new(store, &format!("{prefix}.dec_norm"), c.d_model)?,
            out: Linear::new(store, &format!("{prefix}.out"), c.d_model, c.m, true, rng)?,
            config,
            passes: PassCounter::default(),
        })
    }

    /// `past: [B, 15, m]` → predicted `[B, 60, m]`; one encoder and one
    /// decoder pass.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, past: NodeId) -> Result<NodeId> {
        let s = g.shape(past).to_vec();
        if s.len() != 3 || s[1] != OBS_ROWS || s[2] != self.config.m {
            return Err(Error::Data(format!(
                "trajpred expects [B, {OBS_ROWS}, {}], got {s:?}",
                self.config.m
            )));
        }
        let b = s[0];
        self.passes.encoder.fetch_add(1, Ordering::Relaxed);
        let mut mem = self.enc_embed.forward(g, past)?;
        for layer in &self.encoder {
            mem = layer.forward(g, mem)?;
        }
        let mem = self.enc_norm.forward(g, mem)?;

        self.passes.decoder.fetch_add(1, Ordering::Relaxed);
        let zeros = g.constant(Tensor::zeros(&[b, PRED_LEN, self.config.m]));
        let dec_in = g.concat(&[past, zeros], 1)?;
        let mut x = self.dec_embed.forward(g, dec_in)?;
        for layer in &self.decoder {
            x = layer.forward(g, x, mem)?;
        }
        let x = self.dec_norm.forward(g, x)?;
        let y = self.out.forward(g, x)?;
        Ok(g.slice(y, 1, OBS_ROWS, PRED_LEN)?)
    }

    /// Inference on normalized past rows `[15, m]` or `[B, 15, m]`.
    pub fn predict(&self, store: &ParamStore<f32>, past: &Tensor<f32>) -> Result<Tensor<f32>> {
        if past.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in observed trajectory".into()));
        }
        let single = past.shape().len() == 2;
        let input = if single {
            past.clone().reshape(&[1, past.shape()[0], past.shape()[1]])?
        } else {
            past.clone()
        };
        let mut g = Graph::no_grad(store);
        let x = g.constant(input);
        let y = self.forward(&mut g, x)?;
        let out = g.value(y).clone();
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("trajectory prediction is not finite".into()));
        }
        Ok(if single { out.reshape(&[PRED_LEN, self.config.m])? } else { out })
    }
}

/// Mean squared error over all `N·T·C` entries.
pub fn traj_mse(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Data(format!(
            "trajectory loss shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.numel();
    if n == 0 {
        return Err(Error::Data("trajectory loss over an empty tensor".into()));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum();
    Ok(s / n as f64)
}

/// Graph form of [`traj_mse`] for training.
pub fn traj_mse_loss<T: Real>(g: &mut Graph<'_, T>, pred: NodeId, target: &Tensor<T>) -> Result<NodeId> {
    Ok(g.mse(pred, target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(b: usize) -> Tensor<f32> {
        let n = b * OBS_ROWS * 5;
        Tensor::new(&[b, OBS_ROWS, 5], (0..n).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn decoder_input_layout() {
        let past = ramp(1);
        let d = build_decoder_input(&past).unwrap();
        assert_eq!(d.shape(), &[1, 75, 5]);
        assert_eq!(&d.data()[14 * 5..15 * 5], &past.data()[14 * 5..15 * 5]);
        assert!(d.data()[15 * 5..].iter().all(|&v| v == 0.0));
        let z = build_decoder_input(&Tensor::<f32>::zeros(&[15, 5])).unwrap();
        assert_eq!(z.shape(), &[75, 5]);
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(build_decoder_input(&Tensor::<f32>::zeros(&[14, 5])).is_err());
    }

    #[test]
    fn one_pass_fixed_shape_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f32>::new();
        let tp = TrajPredictor::new(&mut s, "trajpred", TrajPredictorConfig::small(), &mut rng).unwrap();
        let past = ramp(1).reshape(&[15, 5]).unwrap();
        let a = tp.predict(&s, &past).unwrap();
        assert_eq!(a.shape(), &[60, 5]);
        assert_eq!(tp.passes.encoder_passes(), 1);
        assert_eq!(tp.passes.decoder_passes(), 1);
        let b = tp.predict(&s, &past).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rejects_non_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f32>::new();
        let tp = TrajPredictor::new(&mut s, "t", TrajPredictorConfig::tiny(), &mut rng).unwrap();
        let mut past = Tensor::<f32>::zeros(&[15, 5]);
        past.data_mut()[3] = f32::NAN;
        assert!(tp.predict(&s, &past).is_err());
        assert_eq!(tp.passes.encoder_passes(), 0);
    }

    #[test]
    fn mse_cases() {
        let z = Tensor::<f32>::zeros(&[1, 60, 5]);
        assert_eq!(traj_mse(&z, &z).unwrap(), 0.0);
        let h = Tensor::full(&[1, 60, 5], 0.5f32);
        assert_eq!(traj_mse(&h, &z).unwrap(), 0.25);
        let one = Tensor::new(&[1, 1, 1], vec![2.0f32]).unwrap();
        assert_eq!(traj_mse(&one, &Tensor::zeros(&[1, 1, 1])).unwrap(), 4.0);
        assert!(traj_mse(&z, &Tensor::zeros(&[1, 60, 4])).is_err());
    }

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f32>::new();
        TrajPredictor::new(&mut s, "trajpred", TrajPredictorConfig::full(), &mut rng).unwrap();
        assert_eq!(s.trainable_count(), 3_705_477);
        let mut s = ParamStore::<f32>::new();
        TrajPredictor::new(&mut s, "trajpred", TrajPredictorConfig::small(), &mut rng).unwrap();
        assert_eq!(s.trainable_count(), 665_221);
    }
}
