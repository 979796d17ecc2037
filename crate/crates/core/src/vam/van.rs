//! Visual Attention Network backbone built around large kernel attention.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tfn_tensor::{Conv2dSpec, Graph, NodeId, ParamId, ParamStore, Real};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LAYER_SCALE_INIT: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VanVariant {
    B0,
    B2,
    /// Gradient-check scale.
    Tiny,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VanConfig {
    pub variant: VanVariant,
    pub dims: [usize; 4],
    pub depths: [usize; 4],
    pub mlp_ratios: [usize; 4],
    /// Width of the classification head whose output is the feature.
    pub num_classes: usize,
    /// Square input resolution.
    pub input_size: usize,
}

/// Cumulative stride of the four patch embeddings.
pub const VAN_STRIDE: usize = 32;

impl VanConfig {
    pub fn b0(input_size: usize) -> Self {
        Self {
            variant: VanVariant::B0,
            dims: [32, 64, 160, 256],
            depths: [3, 3, 5, 2],
            mlp_ratios: [8, 8, 4, 4],
            num_classes: 1000,
            input_size,
        }
    }

    pub fn b2(input_size: usize) -> Self {
        Self {
            variant: VanVariant::B2,
            dims: [64, 128, 320, 512],
            depths: [3, 3, 12, 3],
            mlp_ratios: [8, 8, 4, 4],
            num_classes: 1000,
            input_size,
        }
    }

    pub fn tiny() -> Self {
        Self {
            variant: VanVariant::Tiny,
            dims: [2, 2, 2, 2],
            depths: [1, 1, 1, 1],
            mlp_ratios: [2, 2, 2, 2],
            num_classes: 3,
            input_size: 32,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(VAN_STRIDE) {
            return Err(Error::Config(format!(
                "VAN input size {} is not a multiple of the cumulative stride {VAN_STRIDE}",
                self.input_size
            )));
        }
        if self.dims.contains(&0) || self.mlp_ratios.contains(&0) || self.num_classes == 0 {
            return Err(Error::Config(format!("VAN widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: Conv2dSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = cin / spec.groups * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            w: store.add_uniform(&format!("{name}.w"), &[cout, cin / spec.groups, k, k], bound, rng)?,
            b: store.add_uniform(&format!("{name}.b"), &[cout], bound, rng)?,
            spec,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        Ok(g.conv2d(x, w, Some(b), self.spec)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_const(&format!("{name}.gamma"), &[c], 1.0)?,
            beta: store.add_const(&format!("{name}.beta"), &[c], 0.0)?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), &[c], 0.0)?,
            running_var: store.add_buffer(&format!("{name}.running_var"), &[c], 1.0)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        Ok(g.batch_norm_2d(x, ga, be, self.running_mean, self.running_var, BN_EPS, BN_MOMENTUM)?)
    }
}

/// Depthwise 5×5, dilated depthwise 7×7 (dilation 3), pointwise; the result
/// gates the input multiplicatively.
#[derive(Clone, Debug)]
pub struct Lka {
    pub local: Conv2d,
    pub long_range: Conv2d,
    pub channel: Conv2d,
}

impl Lka {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            local: Conv2d::new(store, &format!("{name}.conv0"), c, c, 5, Conv2dSpec::same(5, 1, c), rng)?,
            long_range: Conv2d::new(store, &format!("{name}.conv_spatial"), c, c, 7, Conv2dSpec::same(7, 3, c), rng)?,
            channel: Conv2d::new(store, &format!("{name}.conv1"), c, c, 1, Conv2dSpec::same(1, 1, 1), rng)?,
        })
    }

    /// The attention map before gating.
    pub fn attention_map<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let a = self.local.forward(g, x)?;
        let a = self.long_range.forward(g, a)?;
        self.channel.forward(g, a)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let a = self.attention_map(g, x)?;
        Ok(g.mul(x, a)?)
    }
}

/// Batch norm, gated large kernel attention and a depthwise MLP, each
/// residual with a per-channel layer scale.
#[derive(Clone, Debug)]
pub struct VanBlock {
    norm1: BatchNorm2d,
    proj_1: Conv2d,
    lka: Lka,
    proj_2: Conv2d,
    layer_scale_1: ParamId,
    norm2: BatchNorm2d,
    fc1: Conv2d,
    dw: Conv2d,
    fc2: Conv2d,
    layer_scale_2: ParamId,
}

impl VanBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, ratio: usize, rng: &mut R) -> Result<Self> {
        let hidden = c * ratio;
        let pw = Conv2dSpec::same(1, 1, 1);
        Ok(Self {
            norm1: BatchNorm2d::new(store, &format!("{name}.norm1"), c)?,
            proj_1: Conv2d::new(store, &format!("{name}.attn.proj_1"), c, c, 1, pw, rng)?,
            lka: Lka::new(store, &format!("{name}.attn.lka"), c, rng)?,
            proj_2: Conv2d::new(store, &format!("{name}.attn.proj_2"), c, c, 1, pw, rng)?,
            layer_scale_1: store.add_const(&format!("{name}.layer_scale_1"), &[c, 1, 1], LAYER_SCALE_INIT)?,
            norm2: BatchNorm2d::new(store, &format!("{name}.norm2"), c)?,
            fc1: Conv2d::new(store, &format!("{name}.mlp.fc1"), c, hidden, 1, pw, rng)?,
            dw: Conv2d::new(store, &format!("{name}.mlp.dwconv"), hidden, hidden, 3, Conv2dSpec::same(3, 1, hidden), rng)?,
            fc2: Conv2d::new(store, &format!("{name}.mlp.fc2"), hidden, c, 1, pw, rng)?,
            layer_scale_2: store.add_const(&format!("{name}.layer_scale_2"), &[c, 1, 1], LAYER_SCALE_INIT)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let u = self.norm1.forward(g, x)?;
        let a = self.proj_1.forward(g, u)?;
        let a = g.gelu(a);
        let a = self.lka.forward(g, a)?;
        let a = self.proj_2.forward(g, a)?;
        let a = g.add(a, u)?;
        let ls1 = g.param(self.layer_scale_1);
        let a = g.mul_broadcast(a, ls1)?;
        let x = g.add(x, a)?;

        let m = self.norm2.forward(g, x)?;
        let m = self.fc1.forward(g, m)?;
        let m = self.dw.forward(g, m)?;
        let m = g.gelu(m);
        let m = self.fc2.forward(g, m)?;
        let ls2 = g.param(self.layer_scale_2);
        let m = g.mul_broadcast(m, ls2)?;
        Ok(g.add(x, m)?)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    patch: Conv2d,
    patch_norm: BatchNorm2d,
    blocks: Vec<VanBlock>,
    norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Van {
    pub config: VanConfig,
    stages: Vec<Stage>,
    pub head: Linear,
}

impl Van {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, config: VanConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut cin = 3;
        for s in 0..4 {
            let c = config.dims[s];
            let (k, stride) = if s == 0 { (7, 4) } else { (3, 2) };
            let spec = Conv2dSpec { stride, padding: k / 2, dilation: 1, groups: 1 };
            let name = format!("{prefix}.stage{}", s + 1);
            let patch = Conv2d::new(store, &format!("{name}.patch_embed.proj"), cin, c, k, spec, rng)?;
            let patch_norm = BatchNorm2d::new(store, &format!("{name}.patch_embed.norm"), c)?;
            let blocks = (0..config.depths[s])
                .map(|i| VanBlock::new(store, &format!("{name}.block{i}"), c, config.mlp_ratios[s], rng))
                .collect::<Result<Vec<_>>>()?;
            let norm = LayerNorm::new(store, &format!("{name}.norm"), c)?;
            stages.push(Stage { patch, patch_norm, blocks, norm });
            cin = c;
        }
        let head = Linear::new(store, &format!("{prefix}.head"), config.dims[3], config.num_classes, true, rng)?;
        Ok(Self { config, stages, head })
    }

    /// `[B, 3, S, S]` normalized images → `[B, num_classes]` features.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let s = g.shape(x).to_vec();
        let size = self.config.input_size;
        if s.len() != 4 || s[1] != 3 || s[2] != size || s[3] != size {
            return Err(Error::Data(format!("VAN expects [B, 3, {size}, {size}], got {s:?}")));
        }
        let b = s[0];
        let mut x = x;
        let last = self.stages.len() - 1;
        for (si, st) in self.stages.iter().enumerate() {
            x = st.patch.forward(g, x)?;
            x = st.patch_norm.forward(g, x)?;
            for blk in &st.blocks {
                x = blk.forward(g, x)?;
            }
            let sh = g.shape(x).to_vec();
            let (c, h, w) = (sh[1], sh[2], sh[3]);
            let t = g.reshape(x, &[b, c, h * w])?;
            let t = g.permute(t, &[0, 2, 1])?;
            let t = st.norm.forward(g, t)?;
            if si == last {
                let pooled = g.mean_axis(t, 1)?;
                return Ok(self.head.forward(g, pooled)?);
            }
            let t = g.permute(t, &[0, 2, 1])?;
            x = g.reshape(t, &[b, c, h, w])?;
        }
        unreachable!("VAN has four stages")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tfn_tensor::Tensor;

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f32>::new();
        Van::new(&mut s, "van", VanConfig::b2(224), &mut rng).unwrap();
        assert_eq!(s.trainable_count(), 26_578_472);
        let mut s = ParamStore::<f32>::new();
        Van::new(&mut s, "van", VanConfig::b0(224), &mut rng).unwrap();
        assert_eq!(s.trainable_count(), 4_105_800);
    }

    #[test]
    fn resolution_must_divide() {
        assert!(VanConfig::b0(100).validate().is_err());
        assert!(VanConfig::b0(224).validate().is_ok());
    }

    #[test]
    fn deterministic_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f32>::new();
        let van = Van::new(&mut s, "van", VanConfig::b0(32), &mut rng).unwrap();
        let run = || {
            let mut g = Graph::no_grad(&s);
            let x = g.constant(Tensor::full(&[1, 3, 32, 32], 0.1f32));
            let y = van.forward(&mut g, x).unwrap();
            g.value(y).clone()
        };
        let a = run();
        assert_eq!(a.shape(), &[1, 1000]);
        assert_eq!(a.data(), run().data());
    }
}
