use crate::error::{invalid, shape_err, Result, TensorError};
use crate::graph::{GradBuf, Graph, NodeId, Op};
use crate::ops::elementwise::softmax_rows;
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

impl<'a, T: Real> Graph<'a, T> {
    /// Scaled dot-product attention, `softmax(q·kᵀ/√d)·v`, per leading group.
    ///
    /// `q: [g, nq, d]`, `k: [g, nk, d]`, `v: [g, nk, dv]`. `mask`, when given,
    /// is `nq × nk` row-major with `true` marking allowed keys.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 {
            return Err(shape_err("attention", &qs, &ks));
        }
        let (g, nq, d) = (qs[0], qs[1], qs[2]);
        let (nk, dv) = (ks[1], vs[2]);
        if ks[0] != g || ks[2] != d {
            return Err(shape_err("attention(q,k)", &qs, &ks));
        }
        if vs[0] != g || vs[1] != nk {
            return Err(shape_err("attention(k,v)", &ks, &vs));
        }
        if d == 0 || nq == 0 || nk == 0 || dv == 0 || g == 0 {
            return Err(TensorError::Empty("attention"));
        }
        if let Some(m) = mask {
            if m.len() != nq * nk {
                return Err(invalid("attention", format!("mask has {} entries, need {}", m.len(), nq * nk)));
            }
            if m.chunks(nk).any(|r| !r.iter().any(|&b| b)) {
                return Err(invalid("attention", "mask hides every key for some query"));
            }
        }
        let scale = T::ONE / T::from_f64(d as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::ZERO; g * nq * nk];
        let mut out = vec![T::ZERO; g * nq * dv];
        let neg_inf = T::from_f64(f64::NEG_INFINITY);
        for gi in 0..g {
            let p = &mut probs[gi * nq * nk..(gi + 1) * nq * nk];
            gemm(
                false,
                true,
                nq,
                nk,
                d,
                &qv[gi * nq * d..],
                &kv[gi * nk * d..],
                T::ZERO,
                p,
            );
            for (i, s) in p.iter_mut().enumerate() {
                *s *= scale;
                if let Some(m) = mask {
                    if !m[i] {
                        *s = neg_inf;
                    }
                }
            }
            softmax_rows(p, nk);
            gemm(
                false,
                false,
                nq,
                dv,
                nk,
                p,
                &vv[gi * nk * dv..],
                T::ZERO,
                &mut out[gi * nq * dv..(gi + 1) * nq * dv],
            );
        }
        Ok(self.push(
            Tensor::new(&[g, nq, dv], out)?,
            Op::Attention {
                q,
                k,
                v,
                groups: g,
                nq,
                nk,
                d,
                dv,
                scale,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Attention weights of the most recent call that produced `node`
    /// (`[g, nq, nk]`), if it was recorded with gradients.
    pub fn attention_weights(&self, node: NodeId) -> Option<&[T]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }
}

/// Attention weights computed directly, independent of the graph.
pub fn attention_probs<T: Real>(q: &[T], k: &[T], nq: usize, nk: usize, d: usize) -> Vec<T> {
    let scale = T::ONE / T::from_f64(d as f64).sqrt();
    let mut p = vec![T::ZERO; nq * nk];
    gemm(false, true, nq, nk, d, q, k, T::ZERO, &mut p);
    for s in p.iter_mut() {
        *s *= scale;
    }
    softmax_rows(&mut p, nk);
    p
}

pub(crate) fn attention_backward<T: Real>(
    gout: &[T],
    [(q, qv), (k, kv), (v, vv)]: [(NodeId, &[T]); 3],
    (g, nq, nk, d, dv): (usize, usize, usize, usize, usize),
    scale: T,
    probs: &[T],
    buf: &mut GradBuf<T>,
) {
    let mut dp = vec![T::ZERO; nq * nk];
    for gi in 0..g {
        let p = &probs[gi * nq * nk..(gi + 1) * nq * nk];
        let go = &gout[gi * nq * dv..(gi + 1) * nq * dv];
        if let Some(gv) = buf.get(v) {
            gemm(true, false, nk, dv, nq, p, go, T::ONE, &mut gv[gi * nk * dv..(gi + 1) * nk * dv]);
        }
        let need_q = buf.get(q).is_some();
        let need_k = buf.get(k).is_some();
        if !need_q && !need_k {
            continue;
        }
        gemm(false, true, nq, nk, dv, go, &vv[gi * nk * dv..], T::ZERO, &mut dp);
        // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the 1/√d scale
        for (dr, pr) in dp.chunks_mut(nk).zip(p.chunks(nk)) {
            let dot: T = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
            for (x, &pp) in dr.iter_mut().zip(pr) {
                *x = pp * (*x - dot) * scale;
            }
        }
        if let Some(gq) = buf.get(q) {
            gemm(false, false, nq, d, nk, &dp, &kv[gi * nk * d..], T::ONE, &mut gq[gi * nq * d..(gi + 1) * nq * d]);
        }
        if let Some(gk) = buf.get(k) {
            gemm(true, false, nk, d, nq, &dp, &qv[gi * nq * d..], T::ONE, &mut gk[gi * nk * d..(gi + 1) * nk * d]);
        }
    }
}
