use crate::error::{invalid, shape_err, Result};
use crate::graph::{GradBuf, Graph, NodeId, Op};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index map for broadcasting a right-aligned `b` against `a`.
#[derive(Clone, Debug)]
pub struct Broadcast {
    a_shape: Vec<usize>,
    b_strides: Vec<usize>,
}

impl Broadcast {
    pub fn new(a: &[usize], b: &[usize]) -> Option<Self> {
        if b.len() > a.len() {
            return None;
        }
        let off = a.len() - b.len();
        let mut strides = vec![0; a.len()];
        let mut s = 1;
        for i in (0..b.len()).rev() {
            let (ad, bd) = (a[off + i], b[i]);
            if bd == ad {
                strides[off + i] = s;
            } else if bd != 1 {
                return None;
            }
            s *= bd;
        }
        Some(Self {
            a_shape: a.to_vec(),
            b_strides: strides,
        })
    }

    /// Calls `f(index_in_a, index_in_b)` for every element of `a`.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let rank = self.a_shape.len();
        if rank == 0 {
            f(0, 0);
            return;
        }
        let last = self.a_shape[rank - 1];
        let sl = self.b_strides[rank - 1];
        let total: usize = self.a_shape.iter().product();
        if last == 0 || total == 0 {
            return;
        }
        let mut idx = vec![0usize; rank - 1];
        let mut base = 0usize;
        for o in 0..total / last {
            let ai = o * last;
            for j in 0..last {
                f(ai + j, base + j * sl);
            }
            for d in (0..rank - 1).rev() {
                idx[d] += 1;
                base += self.b_strides[d];
                if idx[d] < self.a_shape[d] {
                    break;
                }
                base -= self.b_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }

    pub(crate) fn reduce_into<T: Real>(&self, ga: &[T], gb: &mut [T]) {
        self.for_each(|i, j| gb[j] += ga[i]);
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output element of the permutation, the flat input offset.
fn permute_offsets(in_shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = out_shape.iter().product();
    if total == 0 {
        return;
    }
    let rank = out_shape.len();
    let last = out_shape[rank - 1];
    let sl = src[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    for o in 0..total / last {
        for j in 0..last {
            f(o * last + j, base + j * sl);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            base += src[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= src[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn permute_scatter<T: Real>(gout: &[T], in_shape: &[usize], perm: &[usize], gx: &mut [T]) {
    permute_offsets(in_shape, perm, |o, i| gx[i] += gout[o]);
}

pub(crate) fn concat_backward<T: Real>(
    gout: &[T],
    inputs: &[NodeId],
    outer: usize,
    inner: usize,
    extents: &[usize],
    buf: &mut GradBuf<T>,
) {
    let total: usize = extents.iter().sum::<usize>() * inner;
    let mut off = 0;
    for (&id, &e) in inputs.iter().zip(extents) {
        let w = e * inner;
        if let Some(gx) = buf.get(id) {
            for o in 0..outer {
                let src = &gout[o * total + off..o * total + off + w];
                for (a, &b) in gx[o * w..(o + 1) * w].iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        off += w;
    }
}

pub(crate) fn slice_scatter<T: Real>(
    gout: &[T],
    outer: usize,
    inner: usize,
    full: usize,
    start: usize,
    len: usize,
    gx: &mut [T],
) {
    let (w, fw) = (len * inner, full * inner);
    for o in 0..outer {
        let dst = &mut gx[o * fw + start * inner..o * fw + start * inner + w];
        for (a, &b) in dst.iter_mut().zip(&gout[o * w..(o + 1) * w]) {
            *a += b;
        }
    }
}

pub(crate) fn mean_axis_scatter<T: Real>(gout: &[T], outer: usize, n: usize, inner: usize, gx: &mut [T]) {
    let s = T::ONE / T::from_f64(n as f64);
    for o in 0..outer {
        for k in 0..n {
            let base = (o * n + k) * inner;
            for i in 0..inner {
                gx[base + i] += gout[o * inner + i] * s;
            }
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape { x }, &[x]))
    }

    /// Axis permutation; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let in_shape = self.shape(x).to_vec();
        let mut seen = vec![false; in_shape.len()];
        if perm.len() != in_shape.len() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("{perm:?} is not a permutation of rank {}", in_shape.len())));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; src.len()];
        permute_offsets(&in_shape, perm, |o, i| out[o] = src[i]);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Permute {
                x,
                in_shape,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {s0:?}")));
        }
        let mut extents = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != s0.len() || s.iter().enumerate().any(|(i, &e)| i != axis && e != s0[i]) {
                return Err(shape_err("concat", &s0, s));
            }
            extents.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&id, &e) in inputs.iter().zip(&extents) {
                let d = self.value(id).data();
                out.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                inner,
                extents,
            },
            inputs,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(invalid(
                "slice",
                format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&s, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Slice {
                x,
                outer,
                inner,
                full,
                start,
                len,
            },
            &[x],
        ))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(invalid("mean_axis", format!("axis {axis} of {s:?}")));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let d = self.value(x).data();
        let inv = T::ONE / T::from_f64(n as f64);
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let mut shape = s;
        shape.remove(axis);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MeanAxis { x, outer, n, inner }, &[x]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let d = self.value(x).data();
        let s: T = d.iter().copied().sum::<T>() / T::from_f64(d.len().max(1) as f64);
        self.push(Tensor::scalar(s), Op::Mean { x }, &[x])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn permute_transposes() {
        let mut g = Graph::<f64>::detached();
        let x = g.constant(ramp(&[2, 3]));
        let y = g.permute(x, &[1, 0]).unwrap();
        assert_eq!(g.shape(y), &[3, 2]);
        assert_eq!(g.value(y).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(g.permute(x, &[0, 0]).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let mut g = Graph::<f64>::detached();
        let a = g.constant(ramp(&[2, 2, 3]));
        let b = g.constant(Tensor::full(&[2, 1, 3], -1.0));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 3]);
        let back = g.slice(c, 1, 0, 2).unwrap();
        assert_eq!(g.value(back).data(), g.value(a).data());
        let tail = g.slice(c, 1, 2, 1).unwrap();
        assert!(g.value(tail).data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn mean_axis_drops_axis() {
        let mut g = Graph::<f64>::detached();
        let x = g.constant(ramp(&[2, 3]));
        let m = g.mean_axis(x, 1).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 4.0]);
        let m0 = g.mean_axis(x, 0).unwrap();
        assert_eq!(g.value(m0).data(), &[1.5, 2.5, 3.5]);
    }
}
