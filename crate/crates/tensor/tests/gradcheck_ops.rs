//! Every differentiable operator against central finite differences,
//! 20 random seeds each, in 64-bit and mixed 32/64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfn_tensor::gradcheck::{grad_check, GradCheckConfig, Objective, Precision};
use tfn_tensor::opcheck::{check_op, OpCase};
use tfn_tensor::{Graph, NodeId, ParamStore, Real, Result, Tensor};

const SEEDS: u64 = 20;

fn p<T: Real>(g: &mut Graph<'_, T>, name: &str) -> Result<NodeId> {
    let s = g.store()?;
    Ok(g.param(s.require(name)?))
}

fn project<T: Real>(g: &mut Graph<'_, T>, y: NodeId) -> Result<NodeId> {
    let r = p(g, "r")?;
    let shape = g.shape(y).to_owned();
    let r = g.reshape(r, &shape)?;
    let yr = g.mul(y, r)?;
    Ok(g.sum(yr))
}

fn check_all(kind: OpCase) {
    for seed in 0..SEEDS {
        for precision in [Precision::F64, Precision::F32] {
            let rep = check_op(kind, seed, precision).unwrap();
            assert!(rep.passed(), "{kind:?} seed {seed} {precision:?}\n{rep}");
        }
    }
}

macro_rules! gradcheck_tests {
    ($($name:ident => $kind:expr),* $(,)?) => {
        $(#[test] fn $name() { check_all($kind); })*
    };
}

gradcheck_tests! {
    linear => OpCase::Linear,
    add_mul_broadcast => OpCase::AddMulBroadcast,
    gelu_scale_softmax => OpCase::Activations,
    layer_norm => OpCase::LayerNorm,
    batch_norm_training => OpCase::BatchNormTrain,
    batch_norm_inference => OpCase::BatchNormEval,
    attention => OpCase::Attention,
    attention_masked => OpCase::AttentionMasked,
    conv_dense_strided => OpCase::ConvDense,
    conv_depthwise => OpCase::ConvDepthwise,
    conv_dilated_depthwise => OpCase::ConvDilated,
    conv_pointwise => OpCase::ConvPointwise,
    conv_grouped_strided => OpCase::ConvGrouped,
    shape_ops => OpCase::Shapes,
    mse => OpCase::Mse,
    weighted_ce => OpCase::WeightedCe,
}

#[test]
fn every_case_is_listed() {
    assert_eq!(OpCase::ALL.len(), 16);
}

/// Two stacked self-attention layers (projections, residual, layer norm,
/// GELU feed-forward) over 8 tokens.
struct AttnBlock;

impl Objective for AttnBlock {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<NodeId> {
        let mut h = p(g, "x")?;
        for l in 0..2 {
            let q = {
                let w = p(g, &format!("l{l}.wq"))?;
                g.linear(h, w, None)?
            };
            let k = {
                let w = p(g, &format!("l{l}.wk"))?;
                g.linear(h, w, None)?
            };
            let v = {
                let w = p(g, &format!("l{l}.wv"))?;
                g.linear(h, w, None)?
            };
            let a = g.attention(q, k, v, None)?;
            let r = g.add(a, h)?;
            let (ga, be) = (p(g, &format!("l{l}.g"))?, p(g, &format!("l{l}.b"))?);
            let n = g.layer_norm(r, ga, be, 1e-5)?;
            let w1 = p(g, &format!("l{l}.w1"))?;
            let f = g.linear(n, w1, None)?;
            let f = g.gelu(f);
            let w2 = p(g, &format!("l{l}.w2"))?;
            let f = g.linear(f, w2, None)?;
            h = g.add(f, n)?;
        }
        project(g, h)
    }
}

#[test]
fn two_layer_attention_block_eight_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = ParamStore::<f64>::new();
    let d = 6;
    s.add_uniform("x", &[1, 8, d], 1.0, &mut rng).unwrap();
    for l in 0..2 {
        for w in ["wq", "wk", "wv"] {
            s.add_uniform(&format!("l{l}.{w}"), &[d, d], 0.5, &mut rng).unwrap();
        }
        s.add_uniform(&format!("l{l}.g"), &[d], 1.0, &mut rng).unwrap();
        s.add_uniform(&format!("l{l}.b"), &[d], 1.0, &mut rng).unwrap();
        s.add_uniform(&format!("l{l}.w1"), &[d, 12], 0.5, &mut rng).unwrap();
        s.add_uniform(&format!("l{l}.w2"), &[12, d], 0.5, &mut rng).unwrap();
    }
    let r: Vec<f64> = (0..8 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    s.add("r", Tensor::new(&[8 * d], r).unwrap(), tfn_tensor::ParamKind::Buffer).unwrap();
    let rep = grad_check(&s, &AttnBlock, &GradCheckConfig::new(1e-4)).unwrap();
    assert!(rep.passed(), "{rep}");
    let mut cfg = GradCheckConfig::new(1e-4);
    cfg.precision = Precision::F32;
    let rep = grad_check(&s, &AttnBlock, &cfg).unwrap();
    assert!(rep.passed(), "{rep}");
}
