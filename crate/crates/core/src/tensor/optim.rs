//! First-order optimizers, selectable by name.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::registry::{Registry, UnknownStrategy};

use super::{ParamGroup, ParamId, ParamStore, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Updates every parameter of a store from its accumulated gradient.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Applies one update. `lr` gives the learning rate for each parameter
    /// group. A non-finite gradient anywhere rejects the whole step and
    /// leaves parameters and state untouched.
    fn step(&mut self, store: &mut ParamStore, lr: &dyn Fn(ParamGroup) -> f64) -> Result<()>;
}

fn registry() -> &'static Registry<dyn Optimizer, OptimConfig> {
    static REG: OnceLock<Registry<dyn Optimizer, OptimConfig>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Optimizer, OptimConfig> = Registry::new("optimizer");
        r.register("adam", |c| Box::new(Adam::new(*c)))
            .register("radam", |c| Box::new(RAdam::new(*c)))
            .register("sgd", |_| Box::new(Sgd));
        r
    })
}

pub fn optimizer_names() -> Vec<&'static str> {
    registry().names()
}

pub fn optimizer_by_name(
    name: &str,
    config: OptimConfig,
) -> std::result::Result<Box<dyn Optimizer>, UnknownStrategy> {
    registry().create(name, &config)
}

fn check_finite(store: &ParamStore) -> Result<()> {
    for id in store.ids() {
        if let Some(g) = &store.get(id).grad {
            if let Some(position) = g.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient {
                    name: store.name(id).to_string(),
                    position,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len(), state.v.len()],
        });
    }
    if let Some(position) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TensorError::NonFiniteGradient {
            name: "<slice>".into(),
            position,
        });
    }
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: OptimConfig,
    state: HashMap<ParamId, AdamState>,
}

impl Adam {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, store: &mut ParamStore, lr: &dyn Fn(ParamGroup) -> f64) -> Result<()> {
        check_finite(store)?;
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let rate = lr(store.group(id));
            let t = store.get_mut(id);
            let n = t.len();
            let grad = t.grad.clone().unwrap_or_else(|| vec![0.0; n]);
            let state = self.state.entry(id).or_insert_with(|| AdamState::new(n));
            adam_step(
                t.values_mut(),
                &grad,
                state,
                rate,
                (self.config.beta1, self.config.beta2),
                self.config.eps,
            )?;
        }
        Ok(())
    }
}

/// Adam with variance rectification.
#[derive(Debug, Clone)]
pub struct RAdam {
    config: OptimConfig,
    state: HashMap<ParamId, AdamState>,
}

impl RAdam {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }
}

impl Optimizer for RAdam {
    fn name(&self) -> &'static str {
        "radam"
    }

    fn step(&mut self, store: &mut ParamStore, lr: &dyn Fn(ParamGroup) -> f64) -> Result<()> {
        check_finite(store)?;
        let OptimConfig { beta1, beta2, eps } = self.config;
        let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let rate = lr(store.group(id));
            let t = store.get_mut(id);
            let n = t.len();
            let grad = t.grad.clone().unwrap_or_else(|| vec![0.0; n]);
            let st = self.state.entry(id).or_insert_with(|| AdamState::new(n));
            st.t += 1;
            let step = st.t as i32;
            let b2t = beta2.powi(step);
            let c1 = 1.0 - beta1.powi(step);
            let rho = rho_inf - 2.0 * st.t as f64 * b2t / (1.0 - b2t);
            let rect = if rho > 4.0 {
                Some(
                    ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
                        .sqrt(),
                )
            } else {
                None
            };
            let values = t.values_mut();
            for i in 0..n {
                let g = grad[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                let m_hat = st.m[i] / c1;
                values[i] -= match rect {
                    Some(r) => {
                        let v_hat = (st.v[i] / (1.0 - b2t)).sqrt();
                        rate * r * m_hat / (v_hat + eps)
                    }
                    None => rate * m_hat,
                };
            }
        }
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Debug, Clone, Copy)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, store: &mut ParamStore, lr: &dyn Fn(ParamGroup) -> f64) -> Result<()> {
        check_finite(store)?;
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let rate = lr(store.group(id));
            let t = store.get_mut(id);
            if let Some(g) = t.grad.clone() {
                t.values_mut()
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(v, g)| *v -= rate * g);
            }
        }
        Ok(())
    }
}
