use crate::error::{invalid, Result};
use crate::graph::{BnUpdate, Gradients};
use crate::params::ParamStore;
use crate::real::Real;

/// Linear warmup from 0 to `peak_lr`, then linear decay back to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    /// Warmup covers `warmup_frac` of `total_steps` (rounded, at most all of them).
    pub fn new(peak_lr: f64, total_steps: usize, warmup_frac: f64) -> Self {
        let warmup = ((total_steps as f64) * warmup_frac).round() as usize;
        Self {
            peak_lr,
            warmup_steps: warmup.min(total_steps),
            total_steps,
        }
    }

    pub fn lr_at_step(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.peak_lr * (step as f64 / self.warmup_steps as f64);
        }
        let decay = self.total_steps - self.warmup_steps;
        self.peak_lr * ((self.total_steps - step) as f64 / decay as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

/// Adam driven by an [`LrSchedule`]. Update `k` (0-based) uses
/// `lr_at_step(k)`, so the very first update happens at zero learning rate.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub schedule: LrSchedule,
    step: usize,
    state: Vec<Option<Moments<T>>>,
    multipliers: Vec<(String, f64)>,
}

impl<T: Real> Adam<T> {
    pub fn new(schedule: LrSchedule) -> Self {
        Self {
            config: AdamConfig::default(),
            schedule,
            step: 0,
            state: Vec::new(),
            multipliers: Vec::new(),
        }
    }

    /// Scale the learning rate of every parameter whose name starts with
    /// `prefix`. The longest matching prefix wins.
    pub fn set_lr_multiplier(&mut self, prefix: &str, factor: f64) {
        self.multipliers.retain(|(p, _)| p != prefix);
        self.multipliers.push((prefix.to_string(), factor));
    }

    fn multiplier(&self, name: &str) -> f64 {
        self.multipliers
            .iter()
            .filter(|(p, _)| name.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map_or(1.0, |&(_, f)| f)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at_step(self.step)
    }

    /// Applies one update and advances the schedule. Frozen parameters,
    /// buffers and parameters whose effective rate is zero are left
    /// bitwise untouched (including their moments).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<f64> {
        let lr = self.schedule.lr_at_step(self.step);
        self.step += 1;
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (i, g) in grads.params() {
            if i >= store.len() {
                return Err(invalid("Adam::step", "gradient for unknown parameter"));
            }
            let id = crate::params::ParamId(i);
            let p = store.param(id);
            if p.frozen || p.kind != crate::params::ParamKind::Trainable {
                continue;
            }
            let eff = lr * self.multiplier(&p.name);
            if eff == 0.0 {
                continue;
            }
            if g.shape() != p.value.shape() {
                return Err(crate::error::shape_err("Adam::step", p.value.shape(), g.shape()));
            }
            let st = self.state[i].get_or_insert_with(|| Moments {
                m: vec![T::ZERO; g.numel()],
                v: vec![T::ZERO; g.numel()],
                t: 0,
            });
            st.t += 1;
            let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            let step_size = T::from_f64(eff / c1);
            let rc2 = T::from_f64(1.0 / c2.sqrt());
            let e = T::from_f64(eps);
            let w = store.value_mut(id).data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                *m = b1 * *m + (T::ONE - b1) * g;
                *v = b2 * *v + (T::ONE - b2) * g * g;
                *w -= step_size * *m / (v.sqrt() * rc2 + e);
            }
        }
        Ok(lr)
    }
}

/// Folds training-mode batch statistics into the running buffers:
/// `running = (1 - momentum) * running + momentum * batch`.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[BnUpdate]) {
    for u in updates {
        for (id, stat) in [(u.running_mean, &u.mean), (u.running_var, &u.var_unbiased)] {
            for (r, &s) in store.value_mut(id).data_mut().iter_mut().zip(stat) {
                *r = T::from_f64((1.0 - u.momentum) * r.to_f64() + u.momentum * s);
            }
        }
    }
}
