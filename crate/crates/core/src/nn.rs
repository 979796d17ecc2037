//! Parameterized layers shared by the transformer branches and the heads.

use rand::Rng;
use tfn_tensor::{Graph, NodeId, ParamId, ParamStore, Real, Result, Tensor};

/// `y = x W + b` with `W: [d_in, d_out]`, uniform init in `±1/sqrt(d_in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = store.add_uniform(&format!("{name}.w"), &[d_in, d_out], bound, rng)?;
        let b = if bias {
            Some(store.add_uniform(&format!("{name}.b"), &[d_out], bound, rng)?)
        } else {
            None
        };
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_const(&format!("{name}.gamma"), &[d], 1.0)?,
            beta: store.add_const(&format!("{name}.beta"), &[d], 0.0)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, ga, be, LN_EPS)
    }
}

/// Multi-head attention with inner width `heads * (d_model / heads)`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let head_dim = d_model / heads;
        if heads == 0 || head_dim == 0 {
            return Err(tfn_tensor::TensorError::Invalid {
                op: "MultiHeadAttention",
                msg: format!("{heads} heads on width {d_model}"),
            });
        }
        let inner = heads * head_dim;
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d_model, inner, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d_model, inner, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d_model, inner, true, rng)?,
            o: Linear::new(store, &format!("{name}.o"), inner, d_model, true, rng)?,
            heads,
            head_dim,
        })
    }

    /// `[B, n, d] -> [B * heads, n, head_dim]`
    fn split<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let s = g.shape(x).to_vec();
        let (b, n) = (s[0], s[1]);
        let x = g.reshape(x, &[b, n, self.heads, self.head_dim])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[b * self.heads, n, self.head_dim])
    }

    /// `xq: [B, nq, d]`, `xkv: [B, nk, d]` → `[B, nq, d]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, xq: NodeId, xkv: NodeId) -> Result<NodeId> {
        let s = g.shape(xq).to_vec();
        let (b, nq) = (s[0], s[1]);
        let q = self.q.forward(g, xq)?;
        let k = self.k.forward(g, xkv)?;
        let v = self.v.forward(g, xkv)?;
        let (q, k, v) = (self.split(g, q)?, self.split(g, k)?, self.split(g, v)?);
        let a = g.attention(q, k, v, None)?;
        let a = g.reshape(a, &[b, self.heads, nq, self.head_dim])?;
        let a = g.permute(a, &[0, 2, 1, 3])?;
        let a = g.reshape(a, &[b, nq, self.heads * self.head_dim])?;
        self.o.forward(g, a)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d, true, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Post-norm encoder layer: `x = LN(x + MHA(x)); x = LN(x + FFN(x))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        ffn: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let a = self.attn.forward(g, x, x)?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, x)?;
        let f = self.ffn.forward(g, x)?;
        let x = g.add(x, f)?;
        self.norm2.forward(g, x)
    }
}

/// Post-norm decoder layer: unmasked self-attention, cross-attention over
/// the encoder memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        ffn: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, heads, rng)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, heads, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId, memory: NodeId) -> Result<NodeId> {
        let a = self.self_attn.forward(g, x, x)?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, x)?;
        let c = self.cross_attn.forward(g, x, memory)?;
        let x = g.add(x, c)?;
        let x = self.norm2.forward(g, x)?;
        let f = self.ffn.forward(g, x)?;
        let x = g.add(x, f)?;
        self.norm3.forward(g, x)
    }
}

/// Sinusoidal positional encoding `[n, d]`.
pub fn positional_encoding<T: Real>(n: usize, d: usize) -> Tensor<T> {
    let mut pe = vec![T::ZERO; n * d];
    for pos in 0..n {
        for i in 0..d {
            let k = (i / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(k / d as f64);
            pe[pos * d + i] = T::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[n, d], pe).expect("shape matches")
}

/// Token projection plus fixed sinusoidal positions.
#[derive(Clone, Debug)]
pub struct SeqEmbedding {
    pub proj: Linear,
    pub d_model: usize,
}

impl SeqEmbedding {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, m: usize, d_model: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(store, &format!("{name}.proj"), m, d_model, true, rng)?,
            d_model,
        })
    }

    /// `[B, n, m] -> [B, n, d_model]`
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let n = g.shape(x)[1];
        let e = self.proj.forward(g, x)?;
        let pe = g.constant(positional_encoding(n, self.d_model));
        g.add_broadcast(e, pe)
    }
}

/// Temporary training head: `Linear(d -> 40) -> GELU -> Linear(40 -> 2)`.
#[derive(Clone, Debug)]
pub struct ClassHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ClassHead {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d, 40, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), 40, 2, true, rng)?,
        })
    }

    /// Logits `[B, 2]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Probability of class 1 from `[B, 2]` logits, as `[B]`.
pub fn crossing_probability<T: Real>(g: &mut Graph<'_, T>, logits: NodeId) -> Result<NodeId> {
    let b = g.shape(logits)[0];
    let p = g.softmax(logits)?;
    let p1 = g.slice(p, 1, 1, 1)?;
    g.reshape(p1, &[b])
}
