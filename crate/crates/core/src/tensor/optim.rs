use std::collections::BTreeMap;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

fn require_grads(params: &ParamSet) -> Result<()> {
    match params.iter().find(|p| p.grad().is_none()) {
        Some(p) => Err(Error::InvalidState(format!("parameter {} has no gradient", p.name()))),
        None => Ok(()),
    }
}

/// Plain stochastic gradient descent.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    steps: u64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        require_grads(params)?;
        for p in params.iter_mut() {
            let g = p.grad().expect("checked above").clone();
            for (w, gi) in p.value_mut().data_mut().iter_mut().zip(g.data()) {
                *w -= self.lr * gi;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam with bias correction. Moments are keyed by parameter name, so the
/// update does not depend on parameter order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    state: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.state.get(name)
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        require_grads(params)?;
        let t = (self.steps + 1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let g = p.grad().expect("checked above").clone();
            let st = self
                .state
                .entry(p.name().to_owned())
                .or_insert_with(|| AdamState {
                    m: Tensor::zeros(g.shape()),
                    v: Tensor::zeros(g.shape()),
                });
            if st.m.shape() != g.shape() {
                return Err(Error::InvalidState(format!(
                    "moment shape {:?} does not match parameter {} {:?}",
                    st.m.shape(),
                    p.name(),
                    g.shape()
                )));
            }
            let m = st.m.data_mut();
            let v = st.v.data_mut();
            for (i, w) in p.value_mut().data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
