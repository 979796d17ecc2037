use crate::error::{invalid, shape_err, Result};
use crate::graph::{GradBuf, Graph, NodeId, Op};
use crate::real::Real;
use crate::tensor::Tensor;

/// Probability floor used by [`Graph::weighted_ce`] unless told otherwise.
pub const PROB_CLAMP: f64 = 1e-7;

impl<'a, T: Real> Graph<'a, T> {
    /// Mean of squared differences over every element.
    pub fn mse(&mut self, pred: NodeId, target: &Tensor<T>) -> Result<NodeId> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err("mse", self.shape(pred), target.shape()));
        }
        let n = target.numel();
        if n == 0 {
            return Err(crate::error::TensorError::Empty("mse"));
        }
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = (p - t).to_f64();
                d * d
            })
            .sum();
        let loss = T::from_f64(s / n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
        ))
    }

    /// `-(1/N) Σ [α y ln p + (1-α)(1-y) ln(1-p)]` with `p` clamped to
    /// `[clamp, 1-clamp]`.
    pub fn weighted_ce(&mut self, probs: NodeId, labels: &[T], alpha: f64, clamp: f64) -> Result<NodeId> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("weighted_ce", format!("alpha {alpha} outside (0, 1)")));
        }
        let n = self.value(probs).numel();
        if n != labels.len() {
            return Err(shape_err("weighted_ce", self.shape(probs), &[labels.len()]));
        }
        if n == 0 {
            return Err(crate::error::TensorError::Empty("weighted_ce"));
        }
        let loss = weighted_ce_value(
            self.value(probs).data().iter().map(|p| p.to_f64()),
            labels.iter().map(|y| y.to_f64()),
            alpha,
            clamp,
        );
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::WeightedCe {
                probs,
                labels: labels.to_vec(),
                alpha: T::from_f64(alpha),
                clamp: T::from_f64(clamp),
            },
            &[probs],
        ))
    }
}

fn weighted_ce_value(
    probs: impl Iterator<Item = f64>,
    labels: impl Iterator<Item = f64>,
    alpha: f64,
    clamp: f64,
) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, y) in probs.zip(labels) {
        let p = p.clamp(clamp, 1.0 - clamp);
        s += alpha * y * p.ln() + (1.0 - alpha) * (1.0 - y) * (1.0 - p).ln();
        n += 1;
    }
    -s / n as f64
}

pub(crate) fn mse_backward<T: Real>(g: T, pred: NodeId, pv: &[T], target: &[T], buf: &mut GradBuf<T>) {
    if let Some(gp) = buf.get(pred) {
        let s = g * T::from_f64(2.0 / pv.len() as f64);
        for ((gi, &p), &t) in gp.iter_mut().zip(pv).zip(target) {
            *gi += s * (p - t);
        }
    }
}

pub(crate) fn weighted_ce_backward<T: Real>(
    g: T,
    probs: NodeId,
    pv: &[T],
    labels: &[T],
    alpha: T,
    clamp: T,
    buf: &mut GradBuf<T>,
) {
    if let Some(gp) = buf.get(probs) {
        let s = g / T::from_f64(pv.len() as f64);
        for ((gi, &p), &y) in gp.iter_mut().zip(pv).zip(labels) {
            if p < clamp || p > T::ONE - clamp {
                continue;
            }
            *gi += -s * (alpha * y / p - (T::ONE - alpha) * (T::ONE - y) / (T::ONE - p));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ce(p: &[f64], y: &[f64], alpha: f64) -> f64 {
        let mut g = Graph::<f64>::detached();
        let n = g.constant(Tensor::new(&[p.len()], p.to_vec()).unwrap());
        let l = g.weighted_ce(n, y, alpha, PROB_CLAMP).unwrap();
        g.value(l).item()
    }

    #[test]
    fn single_positive_at_half() {
        assert!((ce(&[0.5], &[1.0], 0.7) - 0.7 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn alpha_outside_open_interval_rejected() {
        let mut g = Graph::<f64>::detached();
        let n = g.constant(Tensor::new(&[1], vec![0.5]).unwrap());
        for a in [0.0, 1.0, -0.1, 1.5] {
            assert!(g.weighted_ce(n, &[1.0], a, PROB_CLAMP).is_err());
        }
    }

    #[test]
    fn perfect_predictions_near_zero() {
        let l = ce(&[1.0, 0.0], &[1.0, 0.0], 0.3);
        assert!((0.0..=1.6e-6).contains(&l));
    }

    #[test]
    fn mse_by_hand() {
        let mut g = Graph::<f64>::detached();
        let p = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let t = Tensor::new(&[2, 2], vec![0.0, 2.0, 5.0, 4.0]).unwrap();
        let l = g.mse(p, &t).unwrap();
        assert_eq!(g.value(l).item(), 5.0 / 4.0);
        let bad = Tensor::zeros(&[4]);
        assert!(g.mse(p, &bad).is_err());
    }
}
