//! Randomized finite-difference checks of every differentiable operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Objective, Precision};
use crate::{Conv2dSpec, Graph, NodeId, ParamKind, ParamStore, Real, Result, Tensor, PROB_CLAMP};

pub const TOL_F64: f64 = 1e-6;
pub const TOL_F32: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpCase {
    Linear,
    AddMulBroadcast,
    Activations,
    LayerNorm,
    BatchNormTrain,
    BatchNormEval,
    Attention,
    AttentionMasked,
    ConvDense,
    ConvDepthwise,
    ConvDilated,
    ConvPointwise,
    ConvGrouped,
    Shapes,
    Mse,
    WeightedCe,
}

struct Case {
    kind: OpCase,
    dims: Vec<usize>,
    spec: Option<Conv2dSpec>,
    mask: Vec<bool>,
}

fn p<T: Real>(g: &mut Graph<'_, T>, name: &str) -> Result<NodeId> {
    let s = g.store()?;
    Ok(g.param(s.require(name)?))
}

/// `sum(y * r)` with a fixed random `r` so no output direction is special.
fn project<T: Real>(g: &mut Graph<'_, T>, y: NodeId) -> Result<NodeId> {
    let r = p(g, "r")?;
    let shape = g.shape(y).to_owned();
    let r = g.reshape(r, &shape)?;
    let yr = g.mul(y, r)?;
    Ok(g.sum(yr))
}

impl Objective for Case {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<NodeId> {
        let d = &self.dims;
        let y = match self.kind {
            OpCase::Linear => {
                let (x, w, b) = (p(g, "x")?, p(g, "w")?, p(g, "b")?);
                g.linear(x, w, Some(b))?
            }
            OpCase::AddMulBroadcast => {
                let (x, a, m) = (p(g, "x")?, p(g, "a")?, p(g, "m")?);
                let y = g.add_broadcast(x, a)?;
                let y = g.mul_broadcast(y, m)?;
                let z = g.mul(y, x)?;
                g.add(z, y)?
            }
            OpCase::Activations => {
                let x = p(g, "x")?;
                let y = g.gelu(x);
                let y = g.scale(y, 1.7);
                g.softmax(y)?
            }
            OpCase::LayerNorm => {
                let (x, ga, be) = (p(g, "x")?, p(g, "gamma")?, p(g, "beta")?);
                g.layer_norm(x, ga, be, 1e-5)?
            }
            OpCase::BatchNormTrain | OpCase::BatchNormEval => {
                let (x, ga, be) = (p(g, "x")?, p(g, "gamma")?, p(g, "beta")?);
                let s = g.store()?;
                let (rm, rv) = (s.require("rm")?, s.require("rv")?);
                g.batch_norm_2d(x, ga, be, rm, rv, 1e-5, 0.1)?
            }
            OpCase::Attention | OpCase::AttentionMasked => {
                let (q, k, v) = (p(g, "q")?, p(g, "k")?, p(g, "v")?);
                let mask = matches!(self.kind, OpCase::AttentionMasked).then_some(self.mask.as_slice());
                g.attention(q, k, v, mask)?
            }
            OpCase::ConvDense | OpCase::ConvDepthwise | OpCase::ConvDilated | OpCase::ConvPointwise | OpCase::ConvGrouped => {
                let (x, w, b) = (p(g, "x")?, p(g, "w")?, p(g, "b")?);
                g.conv2d(x, w, Some(b), self.spec.ok_or_else(|| crate::error::invalid("opcheck", "conv case without a spec"))?)?
            }
            OpCase::Shapes => {
                // x: [a, b, c]
                let (x, z) = (p(g, "x")?, p(g, "z")?);
                let t = g.permute(x, &[2, 0, 1])?;
                let c = g.concat(&[t, z], 1)?;
                let s = g.slice(c, 1, 1, d[0])?;
                let m = g.mean_axis(s, 2)?;
                let r = g.reshape(m, &[d[2] * d[0]])?;
                let e = g.gelu(r);
                let mu = g.mean(x);
                let mu = g.reshape(mu, &[1])?;
                g.add_broadcast(e, mu)?
            }
            OpCase::Mse => {
                let x = p(g, "x")?;
                let t = Tensor::new(&[d[0], d[1]], (0..d[0] * d[1]).map(|i| T::from_f64((i as f64 * 0.37).sin())).collect())?;
                return g.mse(x, &t);
            }
            OpCase::WeightedCe => {
                let x = p(g, "x")?;
                let s = g.softmax(x)?;
                let pr = g.slice(s, 1, 1, 1)?;
                let pr = g.reshape(pr, &[d[0]])?;
                let labels: Vec<T> = (0..d[0]).map(|i| T::from_f64((i % 2) as f64)).collect();
                return g.weighted_ce(pr, &labels, 0.3, PROB_CLAMP);
            }
        };
        project(g, y)
    }
}

fn uniform(s: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
    s.add_uniform(name, shape, 1.0, rng)?;
    Ok(())
}

fn build(kind: OpCase, seed: u64) -> Result<(ParamStore<f64>, Case)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed * 1009 + kind as u64);
    let mut s = ParamStore::new();
    let r = |lo: usize, hi: usize, rng: &mut ChaCha8Rng| rng.random_range(lo..=hi);
    let mut case = Case {
        kind,
        dims: vec![],
        spec: None,
        mask: vec![],
    };
    let out: Vec<usize> = match kind {
        OpCase::Linear => {
            let (n, i, o) = (r(1, 4, &mut rng), r(1, 5, &mut rng), r(1, 4, &mut rng));
            uniform(&mut s, "x", &[2, n, i], &mut rng)?;
            uniform(&mut s, "w", &[i, o], &mut rng)?;
            uniform(&mut s, "b", &[o], &mut rng)?;
            vec![2, n, o]
        }
        OpCase::AddMulBroadcast => {
            let (a, b, c) = (r(1, 3, &mut rng), r(1, 4, &mut rng), r(1, 4, &mut rng));
            uniform(&mut s, "x", &[a, b, c], &mut rng)?;
            uniform(&mut s, "a", &[b, 1], &mut rng)?;
            uniform(&mut s, "m", &[c], &mut rng)?;
            vec![a, b, c]
        }
        OpCase::Activations => {
            let (n, d) = (r(1, 4, &mut rng), r(1, 6, &mut rng));
            s.add_uniform("x", &[n, d], 3.0, &mut rng)?;
            vec![n, d]
        }
        OpCase::LayerNorm => {
            let (n, d) = (r(1, 4, &mut rng), r(2, 7, &mut rng));
            s.add_uniform("x", &[n, d], 2.0, &mut rng)?;
            uniform(&mut s, "gamma", &[d], &mut rng)?;
            uniform(&mut s, "beta", &[d], &mut rng)?;
            vec![n, d]
        }
        OpCase::BatchNormTrain | OpCase::BatchNormEval => {
            let (b, c, h, w) = (r(1, 3, &mut rng), r(1, 3, &mut rng), r(2, 4, &mut rng), r(1, 3, &mut rng));
            s.add_uniform("x", &[b, c, h, w], 2.0, &mut rng)?;
            uniform(&mut s, "gamma", &[c], &mut rng)?;
            uniform(&mut s, "beta", &[c], &mut rng)?;
            s.add_buffer("rm", &[c], 0.3)?;
            s.add_buffer("rv", &[c], 1.7)?;
            vec![b, c, h, w]
        }
        OpCase::Attention | OpCase::AttentionMasked => {
            let (g, nq, nk, d, dv) = (r(1, 3, &mut rng), r(1, 5, &mut rng), r(1, 5, &mut rng), r(1, 4, &mut rng), r(1, 4, &mut rng));
            s.add_uniform("q", &[g, nq, d], 1.5, &mut rng)?;
            s.add_uniform("k", &[g, nk, d], 1.5, &mut rng)?;
            uniform(&mut s, "v", &[g, nk, dv], &mut rng)?;
            case.mask = (0..nq * nk).map(|i| i % nk == 0 || rng.random_bool(0.6)).collect();
            vec![g, nq, dv]
        }
        OpCase::ConvDense | OpCase::ConvDepthwise | OpCase::ConvDilated | OpCase::ConvPointwise | OpCase::ConvGrouped => {
            let (b, h, w) = (r(1, 2, &mut rng), r(4, 7, &mut rng), r(4, 7, &mut rng));
            let (cin, cout, k, spec) = match kind {
                OpCase::ConvDense => {
                    let stride = r(1, 2, &mut rng);
                    (r(1, 3, &mut rng), r(1, 3, &mut rng), 3, Conv2dSpec { stride, padding: r(0, 1, &mut rng), dilation: 1, groups: 1 })
                }
                OpCase::ConvDepthwise => {
                    let c = r(1, 3, &mut rng);
                    (c, c, 3, Conv2dSpec::same(3, 1, c))
                }
                OpCase::ConvDilated => {
                    let c = r(1, 3, &mut rng);
                    (c, c, 3, Conv2dSpec::same(3, 2, c))
                }
                OpCase::ConvPointwise => (r(1, 4, &mut rng), r(1, 4, &mut rng), 1, Conv2dSpec::same(1, 1, 1)),
                _ => (4, 2, 3, Conv2dSpec { stride: 2, padding: 1, dilation: 1, groups: 2 }),
            };
            uniform(&mut s, "x", &[b, cin, h, w], &mut rng)?;
            uniform(&mut s, "w", &[cout, cin / spec.groups, k, k], &mut rng)?;
            uniform(&mut s, "b", &[cout], &mut rng)?;
            case.spec = Some(spec);
            let extent = |n: usize| spec.output_extent(n, k).ok_or_else(|| crate::error::invalid("opcheck", "empty conv output"));
            vec![b, cout, extent(h)?, extent(w)?]
        }
        OpCase::Shapes => {
            let (a, b, c) = (r(1, 3, &mut rng), r(1, 3, &mut rng), r(1, 3, &mut rng));
            case.dims = vec![a, b, c];
            uniform(&mut s, "x", &[a, b, c], &mut rng)?;
            uniform(&mut s, "z", &[c, 2, b], &mut rng)?;
            vec![c * a]
        }
        OpCase::Mse => {
            case.dims = vec![r(1, 4, &mut rng), r(1, 5, &mut rng)];
            uniform(&mut s, "x", &case.dims.clone(), &mut rng)?;
            vec![]
        }
        OpCase::WeightedCe => {
            case.dims = vec![r(1, 6, &mut rng)];
            s.add_uniform("x", &[case.dims[0], 2], 2.0, &mut rng)?;
            vec![]
        }
    };
    if !out.is_empty() {
        let n: usize = out.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        s.add("r", Tensor::new(&[n], vals)?, ParamKind::Buffer)?;
    }
    Ok((s, case))
}

impl OpCase {
    pub const ALL: [OpCase; 16] = [
        OpCase::Linear,
        OpCase::AddMulBroadcast,
        OpCase::Activations,
        OpCase::LayerNorm,
        OpCase::BatchNormTrain,
        OpCase::BatchNormEval,
        OpCase::Attention,
        OpCase::AttentionMasked,
        OpCase::ConvDense,
        OpCase::ConvDepthwise,
        OpCase::ConvDilated,
        OpCase::ConvPointwise,
        OpCase::ConvGrouped,
        OpCase::Shapes,
        OpCase::Mse,
        OpCase::WeightedCe,
    ];
}

/// One operator case at one seed. Inputs and the output projection are
/// drawn from the seed; the tolerance follows the precision.
pub fn check_op(kind: OpCase, seed: u64, precision: Precision) -> Result<GradCheckReport> {
    let (store, case) = build(kind, seed)?;
    let mut cfg = GradCheckConfig::new(match precision {
        Precision::F64 => TOL_F64,
        Precision::F32 => TOL_F32,
    });
    cfg.precision = precision;
    cfg.training = kind == OpCase::BatchNormTrain;
    grad_check(&store, &case, &cfg)
}

/// Every operator case, seeds `0..seeds`, both precisions.
pub fn check_all_ops(seeds: u64) -> Result<Vec<(OpCase, u64, Precision, GradCheckReport)>> {
    let mut out = Vec::new();
    for kind in OpCase::ALL {
        for seed in 0..seeds {
            for precision in [Precision::F64, Precision::F32] {
                out.push((kind, seed, precision, check_op(kind, seed, precision)?));
            }
        }
    }
    Ok(out)
}
