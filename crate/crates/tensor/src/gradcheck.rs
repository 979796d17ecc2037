//! Central finite-difference gradient checking.

use std::fmt;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::real::Real;

/// Scalar objective built on a graph; generic so the same objective can be
/// evaluated in 32- and 64-bit precision.
pub trait Objective {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<NodeId>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// Analytic and numeric gradients both in f64.
    F64,
    /// Analytic gradients in f32 against f64 finite differences taken on
    /// the same (f32-rounded) weights.
    F32,
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Relative denominator floor: errors are `|a - n| / max(|a|, |n|, floor * s)`
    /// where `s` is the largest numeric gradient magnitude over every checked
    /// entry. Keeps the verdict independent of the objective's scale.
    pub floor: f64,
    /// Check at most this many entries per parameter (evenly strided).
    pub max_entries: Option<usize>,
    pub precision: Precision,
    /// Scale the analytic gradient (negative control).
    pub fault: Option<f64>,
    /// Training-mode graph (batch statistics in batch norm).
    pub training: bool,
}

impl GradCheckConfig {
    pub fn new(tol: f64) -> Self {
        Self {
            step: 1e-5,
            tol,
            floor: 1e-3,
            max_entries: None,
            precision: Precision::F64,
            fault: None,
            training: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.params.is_empty() && self.params.iter().all(|p| p.max_rel_err < self.tol)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<48} n={:<6} max_rel={:.3e} at {} (analytic {:.6e}, numeric {:.6e}) {}",
                p.name,
                p.checked,
                p.max_rel_err,
                p.worst_index,
                p.analytic,
                p.numeric,
                if p.max_rel_err < self.tol { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "max_rel={:.3e} tol={:.1e} -> {}",
            self.max_rel_err(),
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn loss_value<O: Objective>(store: &ParamStore<f64>, obj: &O, training: bool) -> Result<f64> {
    let mut g = Graph::no_grad(store).with_training(training);
    let l = obj.eval(&mut g)?;
    let v = g.value(l);
    if v.numel() != 1 {
        return Err(crate::error::invalid("grad_check", format!("objective is not scalar: {:?}", v.shape())));
    }
    let x = v.item();
    if !x.is_finite() {
        return Err(TensorError::NonFinite(format!("grad_check: loss evaluated to {x}")));
    }
    Ok(x)
}

fn analytic<T: Real, O: Objective>(store: &ParamStore<T>, obj: &O, cfg: &GradCheckConfig) -> Result<Vec<Option<Vec<f64>>>> {
    let mut g = Graph::new(store).with_training(cfg.training);
    if let Some(f) = cfg.fault {
        g.inject_backward_fault(f);
    }
    let l = obj.eval(&mut g)?;
    let v = g.value(l).item().to_f64();
    if !v.is_finite() {
        return Err(TensorError::NonFinite(format!("grad_check: loss evaluated to {v}")));
    }
    let grads = g.backward(l)?;
    Ok(store
        .ids()
        .map(|id| grads.param(id).map(|t| t.to_f64_vec()))
        .collect())
}

/// Compares analytic gradients of every trainable, unfrozen parameter
/// against central differences with step `cfg.step`.
pub fn grad_check<O: Objective>(store: &ParamStore<f64>, obj: &O, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    // In F32 mode the reference weights are the f32-rounded ones so both
    // sides differentiate the same function.
    let base: ParamStore<f64> = match cfg.precision {
        Precision::F64 => store.clone(),
        Precision::F32 => store.cast::<f32>().cast::<f64>(),
    };
    let grads = match cfg.precision {
        Precision::F64 => analytic(&base, obj, cfg)?,
        Precision::F32 => analytic(&base.cast::<f32>(), obj, cfg)?,
    };
    loss_value(&base, obj, cfg.training)?;
    let mut work = base.clone();
    // (param id, entry, analytic, numeric) for every checked entry.
    let mut entries: Vec<(ParamId, usize, f64, f64)> = Vec::new();
    for (id, p) in base.iter() {
        if p.frozen || p.kind != ParamKind::Trainable {
            continue;
        }
        let n = p.value.numel();
        let a = grads[id.index()].clone().unwrap_or_else(|| vec![0.0; n]);
        let stride = cfg.max_entries.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for i in (0..n).step_by(stride) {
            let orig = p.value.data()[i];
            work.value_mut(id).data_mut()[i] = orig + cfg.step;
            let up = loss_value(&work, obj, cfg.training)?;
            work.value_mut(id).data_mut()[i] = orig - cfg.step;
            let down = loss_value(&work, obj, cfg.training)?;
            work.value_mut(id).data_mut()[i] = orig;
            entries.push((id, i, a[i], (up - down) / (2.0 * cfg.step)));
        }
    }
    let scale = entries.iter().map(|e| e.3.abs()).fold(0.0, f64::max);
    let floor = cfg.floor * scale;
    let mut report = GradCheckReport {
        tol: cfg.tol,
        params: Vec::new(),
    };
    for (id, i, a, num) in entries {
        if report.params.last().is_none_or(|p: &ParamReport| p.name != base.name(id)) {
            report.params.push(ParamReport {
                name: base.name(id).to_string(),
                checked: 0,
                max_rel_err: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
            });
        }
        let pr = report.params.last_mut().expect("pushed above");
        let denom = a.abs().max(num.abs()).max(floor);
        let rel = if denom > 0.0 { (a - num).abs() / denom } else { 0.0 };
        pr.checked += 1;
        if rel > pr.max_rel_err || pr.checked == 1 {
            pr.max_rel_err = rel;
            pr.worst_index = i;
            pr.analytic = a;
            pr.numeric = num;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use rand::SeedableRng;

    struct SumSqLinear;
    impl Objective for SumSqLinear {
        fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<NodeId> {
            let s = g.store()?;
            let x = g.param(s.require("x")?);
            let w = g.param(s.require("w")?);
            let b = g.param(s.require("b")?);
            let y = g.linear(x, w, Some(b))?;
            let y2 = g.mul(y, y)?;
            Ok(g.sum(y2))
        }
    }

    fn store() -> ParamStore<f64> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let mut s = ParamStore::new();
        s.add_uniform("x", &[3, 4], 1.0, &mut rng).unwrap();
        s.add_uniform("w", &[4, 2], 1.0, &mut rng).unwrap();
        s.add_uniform("b", &[2], 1.0, &mut rng).unwrap();
        s
    }

    #[test]
    fn linear_sum_of_squares_passes() {
        let r = grad_check(&store(), &SumSqLinear, &GradCheckConfig::new(1e-6)).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.params.len(), 3);
    }

    #[test]
    fn corrupted_backward_fails() {
        let mut cfg = GradCheckConfig::new(1e-6);
        cfg.fault = Some(1.01);
        let r = grad_check(&store(), &SumSqLinear, &cfg).unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_err() > 5e-3);
    }

    struct Scaled(f64);
    impl Objective for Scaled {
        fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<NodeId> {
            let l = SumSqLinear.eval(g)?;
            Ok(g.scale(l, self.0))
        }
    }

    #[test]
    fn verdict_does_not_depend_on_objective_scale() {
        for k in [1e-6, 1.0, 1e4] {
            let r = grad_check(&store(), &Scaled(k), &GradCheckConfig::new(1e-6)).unwrap();
            assert!(r.passed(), "scale {k}: {r}");
            let mut cfg = GradCheckConfig::new(1e-6);
            cfg.fault = Some(1.01);
            let r = grad_check(&store(), &Scaled(k), &cfg).unwrap();
            assert!(!r.passed() && r.max_rel_err() > 5e-3, "scale {k}: {r}");
        }
    }

    struct LogOfNegative;
    impl Objective for LogOfNegative {
        fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<NodeId> {
            let s = g.store()?;
            let x = g.param(s.require("x")?);
            let inf = g.constant(Tensor::full(&[3, 4], T::from_f64(f64::INFINITY)));
            let y = g.mul(x, inf)?;
            Ok(g.sum(y))
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let e = grad_check(&store(), &LogOfNegative, &GradCheckConfig::new(1e-6)).unwrap_err();
        assert!(matches!(e, TensorError::NonFinite(_)), "{e}");
    }
}
