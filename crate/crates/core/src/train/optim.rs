//! Optimizers (AdamW with decoupled weight decay, plain SGD) restricted to
//! a parameter block, and the non-improvement monitor driving every early
//! stop.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grad::{Block, GradMap, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay (the default).
    AdamW,
    /// Plain stochastic gradient descent (the update rule of the gradient
    /// equations, available for sign-consistency checks).
    Sgd,
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Learning rate α.
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::Usage(format!("invalid optimizer config {self:?}")));
        }
        Ok(())
    }
}

/// Moment estimates and step counters. Because the alternating schedule
/// updates one block at a time, bias correction tracks per-parameter update
/// counts rather than a single global step.
pub struct OptimizerState {
    cfg: OptimizerConfig,
    m: GradMap<f32>,
    v: GradMap<f32>,
    steps: BTreeMap<String, u64>,
    total_steps: u64,
}

impl OptimizerState {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OptimizerState {
            cfg,
            m: GradMap::new(),
            v: GradMap::new(),
            steps: BTreeMap::new(),
            total_steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    /// Number of `step` calls so far.
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Apply one update to every parameter in `restrict_to`; all other
    /// parameters (and their moments) stay bit-identical. Every restricted
    /// parameter must have a gradient of matching shape.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &GradMap<f32>,
        restrict_to: Block,
    ) -> Result<()> {
        let names: Vec<String> = params
            .names()
            .filter(|n| restrict_to.contains(n))
            .map(str::to_string)
            .collect();
        for name in &names {
            if !grads.contains_key(name.as_str()) {
                return Err(Error::Usage(format!(
                    "missing gradient for restricted parameter `{name}`"
                )));
            }
        }
        let cfg = self.cfg;
        for name in &names {
            let g = &grads[name.as_str()];
            let w = params.get_mut(name)?;
            if g.shape() != w.shape() {
                return Err(Error::ShapeMismatch {
                    node: format!("optimizer:{name}"),
                    detail: format!("grad {:?} vs param {:?}", g.shape(), w.shape()),
                });
            }
            match cfg.kind {
                OptimizerKind::Sgd => {
                    let lr = cfg.learning_rate as f64;
                    let wd = cfg.weight_decay as f64;
                    for (wi, &gi) in w.data_mut().iter_mut().zip(g.data().iter()) {
                        let w0 = *wi as f64;
                        *wi = (w0 - lr * (gi as f64 + wd * w0)) as f32;
                    }
                }
                OptimizerKind::AdamW => {
                    let t = self.steps.entry(name.clone()).or_insert(0);
                    *t += 1;
                    let t = *t as i32;
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(w.shape()));
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(w.shape()));
                    let (b1, b2) = (cfg.beta1 as f64, cfg.beta2 as f64);
                    let lr = cfg.learning_rate as f64;
                    let wd = cfg.weight_decay as f64;
                    let eps = cfg.epsilon as f64;
                    let bc1 = 1.0 - b1.powi(t);
                    let bc2 = 1.0 - b2.powi(t);
                    for (((wi, mi), vi), &gi) in w
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                        .zip(g.data().iter())
                    {
                        let g64 = gi as f64;
                        let m64 = b1 * (*mi as f64) + (1.0 - b1) * g64;
                        let v64 = b2 * (*vi as f64) + (1.0 - b2) * g64 * g64;
                        let mhat = m64 / bc1;
                        let vhat = v64 / bc2;
                        let w0 = *wi as f64;
                        *wi = (w0 - lr * mhat / (vhat.sqrt() + eps) - lr * wd * w0) as f32;
                        *mi = m64 as f32;
                        *vi = v64 as f32;
                    }
                }
            }
        }
        self.total_steps += 1;
        Ok(())
    }
}

/// Tracks the best monitor accuracy and how many consecutive evaluations
/// failed to improve on it. Ties count as non-improvement.
#[derive(Clone, Copy, Debug)]
pub struct EarlyStopMonitor {
    best: f64,
    since_improvement: u32,
    patience: u32,
}

impl EarlyStopMonitor {
    pub fn new(patience: u32) -> Self {
        EarlyStopMonitor {
            best: 0.0,
            since_improvement: 0,
            patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feed one evaluation; returns true once the count of consecutive
    /// non-improving evaluations exceeds the patience. A strict improvement
    /// resets the counter and the best.
    pub fn accuracy_decreases(&mut self, accuracy: f64) -> bool {
        if accuracy > self.best {
            self.best = accuracy;
            self.since_improvement = 0;
            false
        } else {
            self.since_improvement += 1;
            self.since_improvement > self.patience
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f32) -> ParamStore {
        let mut p = ParamStore::new(0);
        p.insert("encoder.w", Tensor::scalar(value)).unwrap();
        p
    }

    fn scalar_grads(value: f32) -> GradMap<f32> {
        let mut g = GradMap::new();
        g.insert("encoder.w".to_string(), Tensor::scalar(value));
        g
    }

    #[test]
    fn adamw_matches_hand_computed_recurrence() {
        // Frozen from the scalar recurrence with w₀=0.5, gradients
        // (0.2, −0.1), α=0.01, weight decay 0.01, β=(0.9, 0.999), ε=1e-8:
        //   after step 1: w = 0.489950000500
        //   after step 2: w = 0.487237635272
        let cfg = OptimizerConfig {
            learning_rate: 0.01,
            ..OptimizerConfig::default()
        };
        let mut state = OptimizerState::new(cfg).unwrap();
        let mut params = scalar_store(0.5);
        state
            .step(&mut params, &scalar_grads(0.2), Block::All)
            .unwrap();
        let w1 = params.get("encoder.w").unwrap().data()[0];
        assert!((w1 as f64 - 0.489_950_000_5).abs() < 1e-7, "{w1}");
        state
            .step(&mut params, &scalar_grads(-0.1), Block::All)
            .unwrap();
        let w2 = params.get("encoder.w").unwrap().data()[0];
        assert!((w2 as f64 - 0.487_237_635_272).abs() < 1e-7, "{w2}");
        assert_eq!(state.total_steps(), 2);
    }

    #[test]
    fn sgd_matches_plain_descent() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.05,
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut state = OptimizerState::new(cfg).unwrap();
        let mut params = scalar_store(0.5);
        state
            .step(&mut params, &scalar_grads(0.2), Block::All)
            .unwrap();
        assert!((params.get("encoder.w").unwrap().data()[0] - 0.49).abs() < 1e-7);
        state
            .step(&mut params, &scalar_grads(-0.1), Block::All)
            .unwrap();
        assert!((params.get("encoder.w").unwrap().data()[0] - 0.495).abs() < 1e-7);
    }

    #[test]
    fn restricted_step_leaves_other_block_bit_identical() {
        let mut params = ParamStore::new(0);
        params
            .insert("encoder.w", Tensor::new(vec![2], vec![0.3, -0.2]).unwrap())
            .unwrap();
        params
            .insert("decoder.w", Tensor::new(vec![2], vec![0.7, 0.1]).unwrap())
            .unwrap();
        let mut grads = GradMap::new();
        grads.insert(
            "encoder.w".to_string(),
            Tensor::new(vec![2], vec![1.0, -1.0]).unwrap(),
        );
        grads.insert(
            "decoder.w".to_string(),
            Tensor::new(vec![2], vec![2.0, 2.0]).unwrap(),
        );

        let mut state = OptimizerState::new(OptimizerConfig::default()).unwrap();
        let phi_before = params.block_fingerprint(Block::Phi);
        let theta_before = params.block_fingerprint(Block::Theta);
        state.step(&mut params, &grads, Block::Theta).unwrap();
        assert_eq!(params.block_fingerprint(Block::Phi), phi_before);
        assert_ne!(params.block_fingerprint(Block::Theta), theta_before);

        let theta_mid = params.block_fingerprint(Block::Theta);
        state.step(&mut params, &grads, Block::Phi).unwrap();
        assert_eq!(params.block_fingerprint(Block::Theta), theta_mid);
        assert_ne!(params.block_fingerprint(Block::Phi), phi_before);
    }

    #[test]
    fn zero_gradients_and_zero_decay_change_nothing() {
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut state = OptimizerState::new(cfg).unwrap();
        let mut params = scalar_store(0.25);
        let before = params.block_fingerprint(Block::All);
        state
            .step(&mut params, &scalar_grads(0.0), Block::All)
            .unwrap();
        assert_eq!(params.block_fingerprint(Block::All), before);
    }

    #[test]
    fn missing_gradient_for_restricted_parameter_errors() {
        let mut state = OptimizerState::new(OptimizerConfig::default()).unwrap();
        let mut params = scalar_store(0.5);
        let empty = GradMap::new();
        let err = state.step(&mut params, &empty, Block::Theta).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
        // Gradients covering only the restricted block are fine.
        params
            .insert("decoder.w", Tensor::scalar(0.1))
            .unwrap();
        state
            .step(&mut params, &scalar_grads(0.5), Block::Theta)
            .unwrap();
    }

    #[test]
    fn patience_one_traces_match_hand_derivation() {
        // Improving sequence: never trips.
        let mut m = EarlyStopMonitor::new(1);
        assert!(!m.accuracy_decreases(0.5));
        assert!(!m.accuracy_decreases(0.6));

        // Flat sequence: the second consecutive non-improvement trips.
        let mut m = EarlyStopMonitor::new(1);
        assert!(!m.accuracy_decreases(0.5));
        assert!(!m.accuracy_decreases(0.5));
        assert!(m.accuracy_decreases(0.5));
    }

    #[test]
    fn patience_five_trips_only_at_the_sixth_stall() {
        let mut m = EarlyStopMonitor::new(5);
        assert!(!m.accuracy_decreases(0.4));
        let mut decisions = Vec::new();
        for _ in 0..6 {
            decisions.push(m.accuracy_decreases(0.4));
        }
        assert_eq!(decisions, [false, false, false, false, false, true]);
        // An improvement resets the counter entirely.
        let mut m = EarlyStopMonitor::new(5);
        for _ in 0..5 {
            assert!(!m.accuracy_decreases(0.4));
        }
        assert!(!m.accuracy_decreases(0.9));
        for _ in 0..5 {
            assert!(!m.accuracy_decreases(0.1));
        }
        assert!(m.accuracy_decreases(0.1));
    }
}
