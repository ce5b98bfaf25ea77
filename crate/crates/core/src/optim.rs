//! Optimizers and the block-size learning-rate heuristic.
//!
//! Coefficient gradients of a block-circulant layer scale with the block
//! size `p`, so a learning rate tuned for dense layers can push training
//! past its stability boundary. The heuristic divides the configured rate
//! by `p` for the coefficient parameters of that layer; other parameter
//! groups keep the base rate by constructing their optimizer with the
//! heuristic disabled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adadelta,
}

/// Optimizer hyperparameters. `rho` and `eps` only apply to Adadelta;
/// `block_size` only matters while the heuristic is enabled. Gradient
/// clipping is off unless `clip_norm` is set, so the gradient-scaling
/// behavior of circulant layers stays observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub heuristic_enabled: bool,
    pub block_size: usize,
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adadelta,
            base_lr: 0.1,
            rho: 0.9,
            eps: 1e-6,
            heuristic_enabled: false,
            block_size: 1,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(base_lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            base_lr,
            ..Self::default()
        }
    }

    pub fn adadelta(base_lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adadelta,
            base_lr,
            ..Self::default()
        }
    }

    /// Returns a copy with the learning-rate heuristic enabled for `p`.
    pub fn with_heuristic(mut self, block_size: usize) -> Self {
        self.heuristic_enabled = true;
        self.block_size = block_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr.is_nan() || self.base_lr <= 0.0 {
            return Err(Error::config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.rho.is_nan() || self.rho <= 0.0 || self.rho >= 1.0 {
            return Err(Error::config(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.block_size == 0 {
            return Err(Error::config("block_size must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config(format!(
                    "clip_norm must be positive when set, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// The rate actually applied: `base_lr / block_size` with the heuristic
/// enabled, `base_lr` otherwise.
pub fn effective_lr(config: &OptimizerConfig) -> Result<f64> {
    if config.block_size == 0 {
        return Err(Error::config("block_size must be at least 1"));
    }
    if config.heuristic_enabled {
        Ok(config.base_lr / config.block_size as f64)
    } else {
        Ok(config.base_lr)
    }
}

/// Per-parameter accumulators. Allocated lazily on the first step so a
/// fresh state can serve any parameter shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub grad_sq_avg: Vec<f64>,
    pub update_sq_avg: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, len: usize, need_accumulators: bool) -> Result<()> {
        if need_accumulators {
            if self.grad_sq_avg.is_empty() {
                self.grad_sq_avg = vec![0.0; len];
                self.update_sq_avg = vec![0.0; len];
            } else if self.grad_sq_avg.len() != len {
                return Err(Error::size(format!(
                    "optimizer state holds {} accumulators, parameters have length {len}",
                    self.grad_sq_avg.len()
                )));
            }
        }
        Ok(())
    }
}

fn check_step_inputs(params: &[f64], grads: &[f64], config: &OptimizerConfig) -> Result<f64> {
    config.validate()?;
    if params.len() != grads.len() {
        return Err(Error::size(format!(
            "optimizer step: {} parameters vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::numeric("gradient contains NaN or infinity"));
    }
    let mut scale = 1.0;
    if let Some(max_norm) = config.clip_norm {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            scale = max_norm / norm;
        }
    }
    Ok(scale)
}

/// Vanilla gradient descent: `theta <- theta - lr * g`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    let scale = check_step_inputs(params, grads, config)?;
    state.ensure(params.len(), false)?;
    let lr = effective_lr(config)? * scale;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    state.step += 1;
    Ok(())
}

/// Adadelta update scaled by the effective learning rate:
/// `E[g^2] <- rho E[g^2] + (1-rho) g^2`,
/// `d = -sqrt(E[d^2]+eps)/sqrt(E[g^2]+eps) * g`,
/// `E[d^2] <- rho E[d^2] + (1-rho) d^2`,
/// `theta <- theta + lr * d`.
pub fn adadelta_step(
    params: &mut [f64],
    grads: &[f64],
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    let scale = check_step_inputs(params, grads, config)?;
    state.ensure(params.len(), true)?;
    let lr = effective_lr(config)?;
    let rho = config.rho;
    let eps = config.eps;
    for (((p, &g_raw), eg), eu) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.grad_sq_avg)
        .zip(&mut state.update_sq_avg)
    {
        let g = g_raw * scale;
        *eg = rho * *eg + (1.0 - rho) * g * g;
        let delta = -((*eu + eps).sqrt() / (*eg + eps).sqrt()) * g;
        *eu = rho * *eu + (1.0 - rho) * delta * delta;
        *p += lr * delta;
    }
    state.step += 1;
    Ok(())
}

/// Config plus owned state, dispatching on the configured kind.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: OptimizerState::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn effective_lr(&self) -> Result<f64> {
        effective_lr(&self.config)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, &self.config, &mut self.state),
            OptimizerKind::Adadelta => adadelta_step(params, grads, &self.config, &mut self.state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_lr_divides_by_block_size() {
        let config = OptimizerConfig::sgd(0.06).with_heuristic(512);
        assert_eq!(effective_lr(&config).unwrap(), 0.0001171875);
    }

    #[test]
    fn effective_lr_block_size_one_is_identity() {
        let config = OptimizerConfig::sgd(0.1).with_heuristic(1);
        assert_eq!(effective_lr(&config).unwrap(), 0.1);
    }

    #[test]
    fn effective_lr_disabled_ignores_block_size() {
        let mut config = OptimizerConfig::sgd(0.1);
        config.block_size = 1024;
        assert_eq!(effective_lr(&config).unwrap(), 0.1);
    }

    #[test]
    fn effective_lr_rejects_zero_block_size() {
        let mut config = OptimizerConfig::sgd(0.1);
        config.block_size = 0;
        assert!(matches!(effective_lr(&config), Err(Error::Config(_))));
    }

    #[test]
    fn heuristic_round_trips_to_base_lr() {
        // effective_lr * p recovers the base rate; exactly for powers of
        // two, within a couple of ulps otherwise.
        for &p in &[1usize, 2, 128, 512, 768, 1024] {
            let base = 0.1;
            let config = OptimizerConfig::sgd(base).with_heuristic(p);
            let eff = effective_lr(&config).unwrap();
            let back = eff * p as f64;
            assert!((back - base).abs() <= 2.0 * f64::EPSILON * base, "p={p}");
        }
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut params = vec![1.0, -2.0, 3.0];
        let before = params.clone();
        let mut state = OptimizerState::new();
        sgd_step(&mut params, &[0.0; 3], &OptimizerConfig::sgd(0.5), &mut state).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut params = vec![1.0];
        let mut state = OptimizerState::new();
        sgd_step(&mut params, &[2.0], &OptimizerConfig::sgd(0.5), &mut state).unwrap();
        assert_eq!(params, vec![0.0]);
    }

    #[test]
    fn sgd_converges_on_quadratic_bowl() {
        // L = theta^2 / 2, g = theta, lr = 0.1: theta shrinks by 0.9 per step.
        let mut params = vec![1.0];
        let config = OptimizerConfig::sgd(0.1);
        let mut state = OptimizerState::new();
        for _ in 0..100 {
            let g = params[0];
            sgd_step(&mut params, &[g], &config, &mut state).unwrap();
        }
        assert!(params[0].abs() < 1e-4);
        assert!((params[0] - 0.9f64.powi(100)).abs() < 1e-12);
    }

    #[test]
    fn sgd_stability_boundary_on_quadratic() {
        // L = lambda theta^2 / 2 converges iff lr < 2 / lambda.
        let lambda = 2.0;
        for (lr, expect_converge) in [(0.99 * 2.0 / lambda, true), (1.01 * 2.0 / lambda, false)] {
            let mut params = vec![1.0];
            let config = OptimizerConfig::sgd(lr);
            let mut state = OptimizerState::new();
            for _ in 0..400 {
                let g = lambda * params[0];
                sgd_step(&mut params, &[g], &config, &mut state).unwrap();
            }
            if expect_converge {
                assert!(params[0].abs() < 1e-3, "lr={lr} should converge");
            } else {
                assert!(params[0].abs() > 1.0, "lr={lr} should diverge");
            }
        }
    }

    #[test]
    fn sgd_rejects_shape_mismatch_and_non_finite() {
        let mut params = vec![1.0, 2.0];
        let mut state = OptimizerState::new();
        let config = OptimizerConfig::sgd(0.1);
        assert!(matches!(
            sgd_step(&mut params, &[1.0], &config, &mut state),
            Err(Error::Size(_))
        ));
        assert!(matches!(
            sgd_step(&mut params, &[f64::NAN, 0.0], &config, &mut state),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn adadelta_zero_gradient_zero_state_is_identity() {
        let mut params = vec![1.0, -1.0];
        let before = params.clone();
        let mut state = OptimizerState::new();
        adadelta_step(
            &mut params,
            &[0.0, 0.0],
            &OptimizerConfig::adadelta(0.1),
            &mut state,
        )
        .unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adadelta_first_step_matches_recurrence() {
        let (lr, rho, eps, g) = (0.1, 0.9, 1e-6, 2.0);
        let mut params = vec![1.0];
        let config = OptimizerConfig {
            kind: OptimizerKind::Adadelta,
            base_lr: lr,
            rho,
            eps,
            ..OptimizerConfig::default()
        };
        let mut state = OptimizerState::new();
        adadelta_step(&mut params, &[g], &config, &mut state).unwrap();
        // hand-evaluated recurrence from zero state
        let eg = (1.0 - rho) * g * g;
        let delta = -(eps.sqrt() / (eg + eps).sqrt()) * g;
        let expected = 1.0 + lr * delta;
        assert!((params[0] - expected).abs() < 1e-15);
        assert!((state.grad_sq_avg[0] - eg).abs() < 1e-15);
        assert!((state.update_sq_avg[0] - (1.0 - rho) * delta * delta).abs() < 1e-15);
    }

    #[test]
    fn adadelta_state_shape_mismatch_is_rejected() {
        let mut params = vec![1.0, 2.0];
        let config = OptimizerConfig::adadelta(0.1);
        let mut state = OptimizerState::new();
        adadelta_step(&mut params, &[0.1, 0.1], &config, &mut state).unwrap();
        let mut short = vec![1.0];
        assert!(matches!(
            adadelta_step(&mut short, &[0.1], &config, &mut state),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn clipping_bounds_the_applied_gradient() {
        let mut config = OptimizerConfig::sgd(1.0);
        config.clip_norm = Some(1.0);
        let mut params = vec![0.0, 0.0];
        let mut state = OptimizerState::new();
        // gradient norm 5, clipped to 1: update moves by lr * g/5
        sgd_step(&mut params, &[3.0, 4.0], &config, &mut state).unwrap();
        assert!((params[0] + 0.6).abs() < 1e-15);
        assert!((params[1] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            OptimizerConfig { base_lr: 0.0, ..OptimizerConfig::default() },
            OptimizerConfig { rho: 1.0, ..OptimizerConfig::default() },
            OptimizerConfig { eps: -1.0, ..OptimizerConfig::default() },
            OptimizerConfig { clip_norm: Some(0.0), ..OptimizerConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?} should be rejected");
        }
    }

    #[test]
    fn optimizer_dispatch_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let mut params = vec![0.5; 64];
            let mut opt = Optimizer::new(OptimizerConfig::adadelta(0.1)).unwrap();
            for _ in 0..50 {
                let grads: Vec<f64> =
                    (0..64).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                opt.step(&mut params, &grads).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
