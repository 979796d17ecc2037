use crate::error::{shape_err, Result};
use crate::graph::{GradBuf, Graph, NodeId, Op};
use crate::ops::shape::Broadcast;
use crate::real::Real;
use crate::tensor::Tensor;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    x * half * (T::ONE + (x * T::from_f64(INV_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::from_f64(0.5) * (T::ONE + (x * T::from_f64(INV_SQRT_2)).erf());
    let pdf = T::from_f64(INV_SQRT_2PI) * (-(x * x) * T::from_f64(0.5)).exp();
    cdf + x * pdf
}

/// In-place softmax over consecutive rows of length `d`.
pub fn softmax_rows<T: Real>(data: &mut [T], d: usize) {
    for row in data.chunks_mut(d) {
        let m = row.iter().copied().fold(T::from_f64(f64::NEG_INFINITY), T::max);
        let mut s = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Add { a, b }, &[a, b]))
    }

    /// `a + b` with `b` right-aligned against `a` (extents equal or 1).
    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let map = Broadcast::new(self.shape(a), self.shape(b))
            .ok_or_else(|| shape_err("add_broadcast", self.shape(a), self.shape(b)))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::ZERO; av.len()];
        map.for_each(|i, j| out[i] = av[i] + bv[j]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddBroadcast { a, b, map }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Mul { a, b }, &[a, b]))
    }

    /// `a ⊙ b` with `b` right-aligned against `a` (extents equal or 1).
    pub fn mul_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let map = Broadcast::new(self.shape(a), self.shape(b))
            .ok_or_else(|| shape_err("mul_broadcast", self.shape(a), self.shape(b)))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::ZERO; av.len()];
        map.for_each(|i, j| out[i] = av[i] * bv[j]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::MulBroadcast { a, b, map }, &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let s = T::from_f64(s);
        let v = self.value(x);
        let t = Tensor::new(v.shape(), v.data().iter().map(|&e| e * s).collect())
            .expect("same shape");
        self.push(t, Op::Scale { x, s }, &[x])
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let t = Tensor::new(v.shape(), v.data().iter().map(|&e| gelu(e)).collect())
            .expect("same shape");
        self.push(t, Op::Gelu { x }, &[x])
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.numel() == 0 {
            return Err(crate::TensorError::Empty("softmax"));
        }
        let d = v.last_dim();
        let mut data = v.data().to_vec();
        softmax_rows(&mut data, d);
        let t = Tensor::new(v.shape(), data)?;
        Ok(self.push(t, Op::Softmax { x }, &[x]))
    }
}

pub(crate) fn mul_backward<T: Real>(
    gout: &[T],
    (a, av): (NodeId, &[T]),
    (b, bv): (NodeId, &[T]),
    buf: &mut GradBuf<T>,
) {
    if let Some(ga) = buf.get(a) {
        for ((g, &o), &y) in ga.iter_mut().zip(gout).zip(bv) {
            *g += o * y;
        }
    }
    if let Some(gb) = buf.get(b) {
        for ((g, &o), &x) in gb.iter_mut().zip(gout).zip(av) {
            *g += o * x;
        }
    }
}

pub(crate) fn mul_broadcast_backward<T: Real>(
    gout: &[T],
    (a, av): (NodeId, &[T]),
    (b, bv): (NodeId, &[T]),
    map: &Broadcast,
    buf: &mut GradBuf<T>,
) {
    if let Some(ga) = buf.get(a) {
        map.for_each(|i, j| ga[i] += gout[i] * bv[j]);
    }
    if let Some(gb) = buf.get(b) {
        map.for_each(|i, j| gb[j] += gout[i] * av[i]);
    }
}

pub(crate) fn gelu_backward<T: Real>(gout: &[T], x: NodeId, xv: &[T], buf: &mut GradBuf<T>) {
    if let Some(gx) = buf.get(x) {
        for ((g, &o), &v) in gx.iter_mut().zip(gout).zip(xv) {
            *g += o * gelu_grad(v);
        }
    }
}

pub(crate) fn softmax_backward<T: Real>(
    gout: &[T],
    x: NodeId,
    y: &Tensor<T>,
    buf: &mut GradBuf<T>,
) {
    let d = y.last_dim();
    if let Some(gx) = buf.get(x) {
        for ((gr, yr), or) in gx.chunks_mut(d).zip(y.data().chunks(d)).zip(gout.chunks(d)) {
            let dot: T = yr.iter().zip(or).map(|(&a, &b)| a * b).sum();
            for ((g, &yy), &o) in gr.iter_mut().zip(yr).zip(or) {
                *g += yy * (o - dot);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::detached();
        let x = g.constant(Tensor::new(&[2], vec![0.0, 0.0]).unwrap());
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn gelu_fixed_point_and_tail() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-4);
        assert!(gelu(-10.0f64).abs() < 1e-4);
    }

    #[test]
    fn broadcast_add_over_channels() {
        let mut g = Graph::<f64>::detached();
        let a = g.constant(Tensor::zeros(&[2, 3, 2]));
        let b = g.constant(Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.add_broadcast(a, b).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]
        );
        let bad = g.constant(Tensor::zeros(&[2, 2]));
        assert!(g.add_broadcast(a, bad).is_err());
    }
}
