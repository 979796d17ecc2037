use crate::error::{shape_err, Result};
use crate::graph::{GradBuf, Graph, NodeId, Op};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

impl<'a, T: Real> Graph<'a, T> {
    /// `y = x·w + b` over the trailing axis of `x`; `w` is `[d_in, d_out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(shape_err("linear", &xs, &ws));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(shape_err("linear(bias)", &ws, self.shape(b)));
            }
        }
        let rows = self.value(x).numel() / din.max(1);
        let mut y = vec![T::ZERO; rows * dout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in y.chunks_mut(dout) {
                r.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { T::ONE } else { T::ZERO };
        gemm(false, false, rows, dout, din, self.value(x).data(), self.value(w).data(), beta, &mut y);
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = dout;
        let parents: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(
            Tensor::new(&shape, y)?,
            Op::Linear {
                x,
                w,
                b,
                rows,
                din,
                dout,
            },
            &parents,
        ))
    }
}

pub(crate) fn linear_backward<T: Real>(
    gy: &[T],
    (x, xv): (NodeId, &[T]),
    (w, wv): (NodeId, &[T]),
    b: Option<NodeId>,
    (rows, din, dout): (usize, usize, usize),
    buf: &mut GradBuf<T>,
) {
    if let Some(gx) = buf.get(x) {
        gemm(false, true, rows, din, dout, gy, wv, T::ONE, gx);
    }
    if let Some(gw) = buf.get(w) {
        gemm(true, false, din, dout, rows, xv, gy, T::ONE, gw);
    }
    if let Some(b) = b {
        if let Some(gb) = buf.get(b) {
            for r in gy.chunks(dout) {
                for (a, &v) in gb.iter_mut().zip(r) {
                    *a += v;
                }
            }
        }
    }
}
