use crate::error::{shape_err, Result};
use crate::graph::{BnUpdate, GradBuf, Graph, NodeId, Op};
use crate::params::ParamId;
use crate::real::Real;
use crate::tensor::Tensor;

impl<'a, T: Real> Graph<'a, T> {
    /// Normalizes each trailing-axis row to zero mean / unit variance, then
    /// applies `gamma`, `beta` (both `[d]`).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().unwrap_or(&0);
        if d == 0 {
            return Err(crate::TensorError::Empty("layer_norm"));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", &xs, self.shape(gamma)));
        }
        let (xv, gv, bv) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rows = xv.len() / d;
        let inv_d = 1.0 / d as f64;
        let mut xhat = vec![T::ZERO; xv.len()];
        let mut rstd = vec![T::ZERO; rows];
        let mut y = vec![T::ZERO; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            // Row statistics in f64: cheap next to the matmuls and keeps
            // 32-bit gradients close to their 64-bit reference.
            let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() * inv_d;
            let var = row.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() * inv_d;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = T::from_f64(rs);
            for j in 0..d {
                let h = T::from_f64((row[j].to_f64() - mean) * rs);
                xhat[r * d + j] = h;
                y[r * d + j] = h * gv[j] + bv[j];
            }
        }
        Ok(self.push(
            Tensor::new(&xs, y)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                d,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Batch normalization over `[B, C, H, W]` (channel axis 1).
    ///
    /// In training mode the batch statistics are used and recorded for the
    /// running buffers (see [`Graph::take_bn_updates`]); otherwise the stored
    /// running statistics are used as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_2d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: ParamId,
        running_var: ParamId,
        eps: f64,
        momentum: f64,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err("batch_norm_2d", &xs, &[0, 0, 0, 0]));
        }
        let (b, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batch_norm_2d", &xs, self.shape(gamma)));
        }
        let n = b * plane;
        if n == 0 {
            return Err(crate::TensorError::Empty("batch_norm_2d"));
        }
        let training = self.is_training();
        let store = self.store()?;
        let (rm, rv) = (store.value(running_mean).data(), store.value(running_var).data());
        let (xv, gv, bv) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let epsv = T::from_f64(eps);
        let mut mean = vec![T::ZERO; c];
        let mut var = vec![T::ZERO; c];
        if training {
            let inv_n = T::ONE / T::from_f64(n as f64);
            for ch in 0..c {
                let mut s = T::ZERO;
                for bi in 0..b {
                    s += xv[(bi * c + ch) * plane..(bi * c + ch + 1) * plane].iter().copied().sum::<T>();
                }
                let m = s * inv_n;
                let mut ss = T::ZERO;
                for bi in 0..b {
                    for &v in &xv[(bi * c + ch) * plane..(bi * c + ch + 1) * plane] {
                        ss += (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = ss * inv_n;
            }
        } else {
            mean.copy_from_slice(rm);
            var.copy_from_slice(rv);
        }
        let rstd: Vec<T> = var.iter().map(|&v| T::ONE / (v + epsv).sqrt()).collect();
        let mut xhat = vec![T::ZERO; xv.len()];
        let mut y = vec![T::ZERO; xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                for i in base..base + plane {
                    let h = (xv[i] - mean[ch]) * rstd[ch];
                    xhat[i] = h;
                    y[i] = h * gv[ch] + bv[ch];
                }
            }
        }
        if training {
            let corr = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            self.push_bn_update(BnUpdate {
                running_mean,
                running_var,
                momentum,
                mean: mean.iter().map(|v| v.to_f64()).collect(),
                var_unbiased: var.iter().map(|v| v.to_f64() * corr).collect(),
            });
        }
        Ok(self.push(
            Tensor::new(&xs, y)?,
            Op::BatchNorm2d {
                x,
                gamma,
                beta,
                batch: b,
                channels: c,
                plane,
                xhat,
                rstd,
                training,
            },
            &[x, gamma, beta],
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Real>(
    gout: &[T],
    x: NodeId,
    (gamma, gv): (NodeId, &[T]),
    beta: NodeId,
    d: usize,
    xhat: &[T],
    rstd: &[T],
    buf: &mut GradBuf<T>,
) {
    if let Some(gg) = buf.get(gamma) {
        for (or, hr) in gout.chunks(d).zip(xhat.chunks(d)) {
            for j in 0..d {
                gg[j] += or[j] * hr[j];
            }
        }
    }
    if let Some(gb) = buf.get(beta) {
        for or in gout.chunks(d) {
            for j in 0..d {
                gb[j] += or[j];
            }
        }
    }
    if let Some(gx) = buf.get(x) {
        let inv_d = 1.0 / d as f64;
        let mut dh = vec![0.0f64; d];
        for (r, ((gr, or), hr)) in gx
            .chunks_mut(d)
            .zip(gout.chunks(d))
            .zip(xhat.chunks(d))
            .enumerate()
        {
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for j in 0..d {
                dh[j] = or[j].to_f64() * gv[j].to_f64();
                m1 += dh[j];
                m2 += dh[j] * hr[j].to_f64();
            }
            m1 *= inv_d;
            m2 *= inv_d;
            let rs = rstd[r].to_f64();
            for j in 0..d {
                gr[j] += T::from_f64(rs * (dh[j] - m1 - hr[j].to_f64() * m2));
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Real>(
    gout: &[T],
    x: NodeId,
    (gamma, gv): (NodeId, &[T]),
    beta: NodeId,
    (b, c, plane): (usize, usize, usize),
    xhat: &[T],
    rstd: &[T],
    training: bool,
    buf: &mut GradBuf<T>,
) {
    let mut sum_g = vec![T::ZERO; c];
    let mut sum_gh = vec![T::ZERO; c];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * plane;
            for i in base..base + plane {
                sum_g[ch] += gout[i];
                sum_gh[ch] += gout[i] * xhat[i];
            }
        }
    }
    if let Some(gg) = buf.get(gamma) {
        for ch in 0..c {
            gg[ch] += sum_gh[ch];
        }
    }
    if let Some(gb) = buf.get(beta) {
        for ch in 0..c {
            gb[ch] += sum_g[ch];
        }
    }
    if let Some(gx) = buf.get(x) {
        let inv_n = T::ONE / T::from_f64((b * plane) as f64);
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                let k = gv[ch] * rstd[ch];
                if training {
                    let m1 = sum_g[ch] * inv_n;
                    let m2 = sum_gh[ch] * inv_n;
                    for i in base..base + plane {
                        gx[i] += k * (gout[i] - m1 - xhat[i] * m2);
                    }
                } else {
                    for i in base..base + plane {
                        gx[i] += k * gout[i];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: &[f64], gamma: f64, beta: f64) -> Vec<f64> {
        let d = x.len();
        let mut g = Graph::<f64>::detached();
        let xn = g.constant(Tensor::new(&[d], x.to_vec()).unwrap());
        let gn = g.constant(Tensor::full(&[d], gamma));
        let bn = g.constant(Tensor::full(&[d], beta));
        let y = g.layer_norm(xn, gn, bn, 1e-5).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn constant_row_maps_to_zero() {
        assert!(ln(&[3.0, 3.0, 3.0], 1.0, 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_variance_row_is_preserved() {
        let y = ln(&[1.0, -1.0], 1.0, 0.0);
        let k = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y[0] - k).abs() < 1e-12 && (y[1] + k).abs() < 1e-12);
        assert!((y[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn beta_shifts_row_mean() {
        let y = ln(&[0.3, -2.0, 7.5, 1.0], 1.0, 5.0);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 5.0).abs() < 1e-12);
    }
}
