//! Parameter update rules behind a common trait, selectable by name.

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::numerics::{Gradients, ParamSet, Tensor};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

fn check_shapes(params: &ParamSet, grads: &Gradients) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (id, name, t) in params.iter() {
        if grads.get(id).shape() != t.shape() {
            return Err(TrainError::ShapeMismatch(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                grads.get(id).shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) -> Result<(), TrainError> {
    check_shapes(params, grads)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    for (i, (_, name, t)) in params.iter().enumerate() {
        if state.m[i].shape() != t.shape() || state.v[i].shape() != t.shape() {
            return Err(TrainError::ShapeMismatch(format!("optimizer state for {name} has the wrong shape")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        if !params.is_trainable(id) {
            continue;
        }
        let g = grads.get(id).data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.get_mut(id).data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `p ← p − lr·g` for every trainable parameter.
pub fn sgd_step(params: &mut ParamSet, grads: &Gradients, lr: f64) -> Result<(), TrainError> {
    check_shapes(params, grads)?;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if !params.is_trainable(id) {
            continue;
        }
        let g = grads.get(id).data();
        for (p, g) in params.get_mut(id).data_mut().iter_mut().zip(g) {
            *p -= lr * g;
        }
    }
    Ok(())
}

/// Named tensors plus a step counter, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
}

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    fn learning_rate(&self) -> f64;
    fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), TrainError>;
    fn export_state(&self, params: &ParamSet) -> OptimizerState;
    fn import_state(&mut self, state: &OptimizerState, params: &ParamSet) -> Result<(), TrainError>;
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    state: Option<AdamState>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, state: None }
    }

    pub fn state(&self) -> Option<&AdamState> {
        self.state.as_ref()
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn learning_rate(&self) -> f64 {
        self.cfg.lr
    }

    fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), TrainError> {
        let state = self.state.get_or_insert_with(|| AdamState::new(params));
        adam_step(params, grads, state, &self.cfg)
    }

    fn export_state(&self, params: &ParamSet) -> OptimizerState {
        let Some(state) = &self.state else {
            return OptimizerState::default();
        };
        let mut tensors = Vec::with_capacity(2 * params.len());
        for (i, (_, name, _)) in params.iter().enumerate() {
            tensors.push((format!("adam.m/{name}"), state.m[i].clone()));
            tensors.push((format!("adam.v/{name}"), state.v[i].clone()));
        }
        OptimizerState { step: state.t, tensors }
    }

    fn import_state(&mut self, saved: &OptimizerState, params: &ParamSet) -> Result<(), TrainError> {
        if saved.tensors.is_empty() {
            self.state = None;
            return Ok(());
        }
        let lookup = |key: String, shape: &[usize]| {
            saved
                .tensors
                .iter()
                .find(|(n, _)| *n == key)
                .filter(|(_, t)| t.shape() == shape)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| TrainError::ShapeMismatch(format!("optimizer state lacks {key}")))
        };
        let mut state = AdamState::new(params);
        for (i, (_, name, t)) in params.iter().enumerate() {
            state.m[i] = lookup(format!("adam.m/{name}"), t.shape())?;
            state.v[i] = lookup(format!("adam.v/{name}"), t.shape())?;
        }
        state.t = saved.step;
        self.state = Some(state);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    steps: u64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr, steps: 0 }
    }
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), TrainError> {
        sgd_step(params, grads, self.lr)?;
        self.steps += 1;
        Ok(())
    }

    fn export_state(&self, _params: &ParamSet) -> OptimizerState {
        OptimizerState {
            step: self.steps,
            tensors: Vec::new(),
        }
    }

    fn import_state(&mut self, state: &OptimizerState, _params: &ParamSet) -> Result<(), TrainError> {
        self.steps = state.step;
        Ok(())
    }
}

pub type OptimizerFactory = fn(&TrainConfig) -> Box<dyn Optimizer>;

/// Built-in optimizers: `adam` and `sgd`.
pub fn optimizers() -> Registry<OptimizerFactory> {
    let mut r: Registry<OptimizerFactory> = Registry::new("optimizer");
    r.register("adam", |cfg| {
        Box::new(Adam::new(AdamConfig {
            lr: cfg.adam_lr,
            beta1: cfg.betas.0,
            beta2: cfg.betas.1,
            eps: cfg.adam_eps,
        }))
    })
    .register("sgd", |cfg| Box::new(Sgd::new(cfg.sgd_lr)));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(values: &[f64], grad: &[f64]) -> (ParamSet, Gradients) {
        let mut p = ParamSet::new();
        let id = p.insert("w", Tensor::vector(values.to_vec())).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(id).data_mut().copy_from_slice(grad);
        (p, g)
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let (mut p, g) = setup(&[1.0, -2.0, 0.5], &[3.0, -0.01, 250.0]);
        let before = p.iter().next().unwrap().2.clone();
        let mut state = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        let after = p.iter().next().unwrap().2;
        for ((b, a), g) in before.data().iter().zip(after.data()).zip(g.iter().next().unwrap().1.data()) {
            let expected = -cfg.lr * g.signum();
            assert!((a - b - expected).abs() < 1e-9 * cfg.lr.max(1.0), "{a} {b} {g}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let (mut p, g) = setup(&[1.0, 2.0], &[1.0, 1.0]);
        let mut state = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        let params_before = p.clone();
        let m_before = state.m[0].clone();
        let v_before = state.v[0].clone();
        let zero = Gradients::zeros_like(&p);
        let mut fresh = AdamState::new(&p);
        let mut q = p.clone();
        adam_step(&mut q, &zero, &mut fresh, &cfg).unwrap();
        assert_eq!(q, params_before);
        adam_step(&mut p, &zero, &mut state, &cfg).unwrap();
        for j in 0..2 {
            assert_eq!(state.m[0].data()[j], cfg.beta1 * m_before.data()[j]);
            assert_eq!(state.v[0].data()[j], cfg.beta2 * v_before.data()[j]);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let (mut p, g) = setup(&[0.1, 0.2, 0.3], &[0.5, -0.25, 1e-3]);
            let mut s = AdamState::new(&p);
            for _ in 0..10 {
                adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sgd_examples() {
        let (mut p, g) = setup(&[1.0], &[2.0]);
        sgd_step(&mut p, &g, 0.5).unwrap();
        assert_eq!(p.iter().next().unwrap().2.data(), &[0.0]);
        let (mut p, g) = setup(&[1.5], &[0.0]);
        sgd_step(&mut p, &g, 0.5).unwrap();
        assert_eq!(p.iter().next().unwrap().2.data(), &[1.5]);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut p = ParamSet::new();
        let id = p.insert_frozen("gamma", Tensor::scalar(10.0)).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(id).data_mut()[0] = 1.0;
        sgd_step(&mut p, &g, 1.0).unwrap();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p.get(id).item(), 10.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (mut p, _) = setup(&[1.0, 2.0], &[0.0, 0.0]);
        let (_, g) = setup(&[1.0], &[1.0]);
        assert!(matches!(sgd_step(&mut p, &g, 0.1), Err(TrainError::ShapeMismatch(_))));
        let mut s = AdamState::new(&p);
        assert!(matches!(adam_step(&mut p, &g, &mut s, &AdamConfig::default()), Err(TrainError::ShapeMismatch(_))));
    }

    #[test]
    fn registry_builds_both() {
        let reg = optimizers();
        assert_eq!(reg.names(), vec!["adam", "sgd"]);
        let cfg = TrainConfig::default();
        assert_eq!(reg.get("adam").unwrap()(&cfg).learning_rate(), 4e-4);
        assert_eq!(reg.get("sgd").unwrap()(&cfg).learning_rate(), 1e-3);
        assert!(reg.get("rmsprop").is_err());
    }

    #[test]
    fn adam_state_round_trips() {
        let (mut p, g) = setup(&[1.0, 2.0], &[0.3, -0.7]);
        let mut a = Adam::new(AdamConfig::default());
        a.step(&mut p, &g).unwrap();
        a.step(&mut p, &g).unwrap();
        let saved = a.export_state(&p);
        let mut b = Adam::new(AdamConfig::default());
        b.import_state(&saved, &p).unwrap();
        assert_eq!(a.state(), b.state());
        let mut p2 = p.clone();
        a.step(&mut p, &g).unwrap();
        b.step(&mut p2, &g).unwrap();
        assert_eq!(p, p2);
    }
}
