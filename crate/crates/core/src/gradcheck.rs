//! Finite-difference checks of the composed blocks at gradient-check scale:
//! trajectory predictor, sequence branch, one VAN block and the fusion head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tfn_tensor::gradcheck::{grad_check, GradCheckConfig, Objective};
pub use tfn_tensor::gradcheck::{GradCheckReport, Precision};
pub use tfn_tensor::opcheck::{check_all_ops, check_op, OpCase};
use tfn_tensor::{Graph, NodeId, ParamKind, ParamStore, Real, Tensor};

use crate::data::{OBS_ROWS, PRED_LEN};
use crate::error::Result;
use crate::model::Fusion;
use crate::sam::{Sam, SamConfig, EMBED_DIM};
use crate::trajpred::{TrajPredictor, TrajPredictorConfig};
use crate::vam::VanBlock;

pub const TOL_F64: f64 = 1e-6;
pub const TOL_F32: f64 = 1e-4;
/// Entries checked per parameter tensor (evenly strided).
const MAX_ENTRIES: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Block {
    Trajpred,
    Sam,
    VanBlockTrain,
    VanBlockEval,
    FusionConcat,
    FusionAttention,
}

impl Block {
    pub const ALL: [Block; 6] =
        [Block::Trajpred, Block::Sam, Block::VanBlockTrain, Block::VanBlockEval, Block::FusionConcat, Block::FusionAttention];
}

enum Net {
    Trajpred(TrajPredictor),
    Sam(Sam),
    Van(VanBlock),
    Fusion(Fusion),
}

struct Case {
    net: Net,
}

fn named<T: Real>(g: &mut Graph<'_, T>, name: &str) -> tfn_tensor::Result<NodeId> {
    let s = g.store()?;
    Ok(g.param(s.require(name)?))
}

impl Objective for Case {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> tfn_tensor::Result<NodeId> {
        let lift = |e: crate::Error| match e {
            crate::Error::Tensor(t) => t,
            other => tfn_tensor::TensorError::Invalid { op: "block", msg: other.to_string() },
        };
        let y = match &self.net {
            Net::Trajpred(t) => {
                let x = named(g, "x")?;
                t.forward(g, x).map_err(lift)?
            }
            Net::Sam(s) => {
                let (x, p) = (named(g, "x")?, named(g, "pred")?);
                s.forward(g, x, Some(p)).map_err(lift)?
            }
            Net::Van(b) => {
                let x = named(g, "x")?;
                b.forward(g, x).map_err(lift)?
            }
            Net::Fusion(f) => {
                let (s, v) = (named(g, "s")?, named(g, "v")?);
                f.forward(g, s, v).map_err(lift)?
            }
        };
        let r = named(g, "r")?;
        let shape = g.shape(y).to_owned();
        let r = g.reshape(r, &shape)?;
        let yr = g.mul(y, r)?;
        Ok(g.sum(yr))
    }
}

fn input(s: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
    s.add_uniform(name, shape, 1.0, rng)?;
    Ok(())
}

fn build(block: Block, seed: u64) -> Result<(ParamStore<f64>, Case, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(block as u64));
    let mut s = ParamStore::new();
    let (net, out) = match block {
        Block::Trajpred => {
            let c = TrajPredictorConfig::tiny();
            let m = c.m;
            let t = TrajPredictor::new(&mut s, "trajpred", c, &mut rng)?;
            input(&mut s, "x", &[1, OBS_ROWS, m], &mut rng)?;
            (Net::Trajpred(t), vec![1, PRED_LEN, m])
        }
        Block::Sam => {
            let c = SamConfig::tiny();
            let m = c.m;
            let t = Sam::new(&mut s, "sam", c, &mut rng)?;
            input(&mut s, "x", &[1, OBS_ROWS, m], &mut rng)?;
            input(&mut s, "pred", &[1, PRED_LEN, m], &mut rng)?;
            (Net::Sam(t), vec![1, EMBED_DIM])
        }
        Block::VanBlockTrain | Block::VanBlockEval => {
            let (b, c, h) = (2, 2, rng.random_range(3..=5));
            let v = VanBlock::new(&mut s, "block", c, 2, &mut rng)?;
            // Perturb the non-parameter defaults so every path carries signal.
            for id in s.ids().collect::<Vec<_>>() {
                let name = s.name(id).to_string();
                if s.param(id).kind == ParamKind::Buffer {
                    let vals = s.value_mut(id).data_mut();
                    for v in vals.iter_mut() {
                        *v = if name.ends_with("running_var") { rng.random_range(0.5..1.5) } else { rng.random_range(-0.3..0.3) };
                    }
                } else if name.contains("layer_scale") {
                    for v in s.value_mut(id).data_mut() {
                        *v = rng.random_range(0.5..1.0);
                    }
                }
            }
            input(&mut s, "x", &[b, c, h, h], &mut rng)?;
            (Net::Van(v), vec![b, c, h, h])
        }
        Block::FusionConcat | Block::FusionAttention => {
            let f = Fusion::new(&mut s, block == Block::FusionAttention, &mut rng)?;
            input(&mut s, "s", &[2, EMBED_DIM], &mut rng)?;
            input(&mut s, "v", &[2, EMBED_DIM], &mut rng)?;
            (Net::Fusion(f), vec![2, 2])
        }
    };
    let n: usize = out.iter().product();
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    s.add("r", Tensor::new(&[n], r)?, ParamKind::Buffer)?;
    Ok((s, Case { net }, out))
}

#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub block: Block,
    pub seed: u64,
    pub precision: Precision,
    pub report: GradCheckReport,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

/// Checks one block at one seed in the given precision.
pub fn check_block(block: Block, seed: u64, precision: Precision) -> Result<BlockCheck> {
    check_block_with_fault(block, seed, precision, None)
}

/// As [`check_block`], with every backward contribution scaled by `fault`
/// when given. A correct checker must reject such a run.
pub fn check_block_with_fault(block: Block, seed: u64, precision: Precision, fault: Option<f64>) -> Result<BlockCheck> {
    let (store, case, _) = build(block, seed)?;
    let mut cfg = GradCheckConfig::new(match precision {
        Precision::F64 => TOL_F64,
        Precision::F32 => TOL_F32,
    });
    cfg.precision = precision;
    cfg.max_entries = Some(MAX_ENTRIES);
    cfg.training = block == Block::VanBlockTrain;
    cfg.fault = fault;
    let report = grad_check(&store, &case, &cfg)?;
    Ok(BlockCheck { block, seed, precision, report })
}

/// Every block, seeds `0..seeds`, both precisions.
pub fn check_all_blocks(seeds: u64) -> Result<Vec<BlockCheck>> {
    let mut out = Vec::new();
    for block in Block::ALL {
        for seed in 0..seeds {
            for precision in [Precision::F64, Precision::F32] {
                out.push(check_block(block, seed, precision)?);
            }
        }
    }
    Ok(out)
}
