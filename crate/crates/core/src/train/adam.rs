//! Adaptive-moment optimizer with decoupled weight decay.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let m: Vec<Array2<f64>> = params.into_iter().map(|p| Array2::zeros(p.dim())).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One update:
/// `θ ← θ(1 - lr·wd) - lr · m̂ / (√v̂ + eps)` with bias-corrected moments.
pub fn adam_step(
    params: &mut [&mut Array2<f64>],
    grads: &[Array2<f64>],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.dim() != g.dim() || p.dim() != m.dim() {
            return Err(Error::shape(
                "adam_step",
                format!("param {:?}, grad {:?}, moment {:?}", p.dim(), g.dim(), m.dim()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        learning_rate: lr,
        weight_decay: wd,
        beta1,
        beta2,
        eps,
    } = *config;
    let correct1 = 1.0 - beta1.powi(t);
    let correct2 = 1.0 - beta2.powi(t);
    let decay = 1.0 - lr * wd;
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}
