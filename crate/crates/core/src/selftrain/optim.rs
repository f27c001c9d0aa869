use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ParamKind, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to convolution kernels only.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| (0.0..1.0).contains(&b);
        if !in_unit(self.beta1) || !in_unit(self.beta2) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid AdamW settings {self:?}")));
        }
        Ok(())
    }
}

/// Moment accumulators, one pair per parameter tensor, kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<T: Real>(config: AdamWConfig, params: &[&Tensor<T>]) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        })
    }
}

/// One AdamW update. `kinds[i]` decides whether tensor `i` is decayed.
pub fn optimizer_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    kinds: &[ParamKind],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || kinds.len() != n || state.first.len() != n {
        return Err(Error::Shape(format!(
            "{n} parameters, {} gradients, {} kinds, {} moment slots",
            grads.len(),
            kinds.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.first[i].len() != p.len() {
            return Err(Error::Shape(format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let decay = if kinds[i] == ParamKind::Kernel { 1.0 - lr * c.weight_decay } else { 1.0 };
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, (w, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gv = gv.as_f64();
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gv;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gv * gv;
            let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
            *w = T::cast(w.as_f64() * decay - lr * update);
        }
    }
    Ok(())
}

/// Learning rate as a function of the optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Linear warm-up from `max_lr / div_factor` over `pct_start` of the run,
    /// then cosine annealing to `max_lr / (div_factor * final_div_factor)`.
    OneCycle {
        max_lr: f64,
        total_steps: usize,
        pct_start: f64,
        div_factor: f64,
        final_div_factor: f64,
    },
    /// `lr * gamma^floor(step / step_size)`.
    Step {
        lr: f64,
        step_size: usize,
        gamma: f64,
    },
}

impl LrSchedule {
    pub fn one_cycle(max_lr: f64, total_steps: usize) -> Self {
        LrSchedule::OneCycle {
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    /// Multiply by `gamma` once, after `fraction` of `total_steps`.
    pub fn step_at_fraction(lr: f64, total_steps: usize, fraction: f64, gamma: f64) -> Self {
        LrSchedule::Step {
            lr,
            step_size: ((total_steps as f64 * fraction).ceil() as usize).max(1),
            gamma,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle {
                max_lr,
                total_steps,
                pct_start,
                div_factor,
                final_div_factor,
            } => {
                let start = max_lr / div_factor;
                let end = start / final_div_factor;
                let warm = ((pct_start * total_steps as f64) as usize).max(1);
                let cos = |a: f64, b: f64, t: f64| b + (a - b) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                if step < warm {
                    start + (max_lr - start) * step as f64 / warm as f64
                } else {
                    let rest = total_steps.saturating_sub(warm).max(1);
                    cos(max_lr, end, ((step - warm) as f64 / rest as f64).min(1.0))
                }
            }
            LrSchedule::Step { lr, step_size, gamma } => lr * gamma.powi((step / step_size.max(1)) as i32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    fn step(p: &mut Tensor<f64>, g: f64, kind: ParamKind, cfg: AdamWConfig, lr: f64, state: Option<&mut OptimizerState>) {
        let mut own = OptimizerState::new(cfg, &[&*p]).unwrap();
        let st = state.unwrap_or(&mut own);
        optimizer_step(&mut [p], &[scalar(g)], &[kind], st, lr).unwrap();
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = scalar(0.37);
        step(&mut p, 0.0, ParamKind::Kernel, cfg, 0.1, None);
        assert_eq!(p.data()[0], 0.37);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = scalar(0.0);
        step(&mut p, 1.0, ParamKind::Kernel, cfg, 0.1, None);
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        assert!((p.data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn decay_shrinks_kernels_only() {
        let cfg = AdamWConfig {
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut k = scalar(2.0);
        step(&mut k, 0.0, ParamKind::Kernel, cfg, 0.1, None);
        assert!((k.data()[0] - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        for kind in [ParamKind::Modulator, ParamKind::Bias] {
            let mut m = scalar(2.0);
            step(&mut m, 0.0, kind, cfg, 0.1, None);
            assert_eq!(m.data()[0], 2.0);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar(1.0);
        let mut st = OptimizerState::new(AdamWConfig::default(), &[&p]).unwrap();
        let r = optimizer_step(&mut [&mut p], &[scalar(f64::NAN)], &[ParamKind::Kernel], &mut st, 0.1);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn repeated_steps_match_scalar_recurrence() {
        let cfg = AdamWConfig::default();
        let mut p = scalar(0.5);
        let mut st = OptimizerState::new(cfg, &[&p]).unwrap();
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 0.3 * t as f64 - 0.7;
            step(&mut p, g, ParamKind::Kernel, cfg, 0.01, Some(&mut st));
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w = w * (1.0 - 0.01 * 1e-4) - 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.data()[0] - w).abs() < 1e-14);
    }

    #[test]
    fn one_cycle_shape() {
        let s = LrSchedule::one_cycle(1e-3, 100);
        assert!((s.lr_at(0) - 4e-5).abs() < 1e-15);
        assert!((s.lr_at(30) - 1e-3).abs() < 1e-15);
        assert!(s.lr_at(99) < 1e-5);
        assert!((s.lr_at(100) - 4e-9).abs() < 1e-18);
        let lrs: Vec<f64> = (30..=100).map(|t| s.lr_at(t)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn step_decay_at_seventy_percent() {
        let s = LrSchedule::step_at_fraction(1e-4, 10, 0.7, 0.1);
        assert_eq!(s.lr_at(6), 1e-4);
        assert!((s.lr_at(7) - 1e-5).abs() < 1e-18);
    }
}
