//! SGD and Adam with per-weight learning-rate multipliers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::{GammaRole, Parametrization};
use crate::error::{Error, Result};
use crate::net::{lr_multiplier, GradientSet, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "eps")]
        eps: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: beta1(),
            beta2: beta2(),
            eps: eps(),
        }
    }
}

/// Default exponent `e` of the global width factor `N^e` on the learning
/// rate. SP and μP need `√N` and `N` respectively for their first-step
/// hidden updates to be `O(1/√N)`; MFP needs none.
pub fn default_lr_width_exponent(p: Parametrization) -> f64 {
    match p {
        Parametrization::Sp => 0.5,
        Parametrization::MuP => 1.0,
        Parametrization::Mfp => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    multipliers: BTreeMap<String, f64>,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    /// Multipliers are fixed here from the parametrization and widths.
    /// `lr_width_exponent` defaults per parametrization.
    pub fn new(
        kind: OptimizerKind,
        lr: f64,
        net: &Network,
        lr_width_exponent: Option<f64>,
    ) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Param(format!(
                "learning rate {lr} must be finite and >= 0"
            )));
        }
        let arch = net.arch();
        let e =
            lr_width_exponent.unwrap_or_else(|| default_lr_width_exponent(arch.parametrization()));
        let n_max = arch
            .gammas()
            .iter()
            .filter(|g| g.role == GammaRole::Hidden)
            .map(|g| g.width)
            .max()
            .unwrap_or(1) as f64;
        let global = n_max.powf(e);
        let multipliers = arch
            .weights()
            .iter()
            .map(|w| (w.name.clone(), global * lr_multiplier(&w.name, arch)))
            .collect();
        let zeros: BTreeMap<String, Vec<f64>> = net
            .store()
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.data().len()]))
            .collect();
        let adam = matches!(kind, OptimizerKind::Adam { .. });
        Ok(Self {
            kind,
            lr,
            step: 0,
            multipliers,
            m: if adam { zeros.clone() } else { BTreeMap::new() },
            v: if adam { zeros } else { BTreeMap::new() },
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn multiplier(&self, name: &str) -> f64 {
        self.multipliers.get(name).copied().unwrap_or(1.0)
    }

    /// One update `θ ← θ − lr · multiplier · step(grad)`.
    pub fn apply(&mut self, net: &mut Network, grads: &GradientSet) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        for (name, g) in &grads.grads {
            let scale = self.lr * self.multiplier(name);
            let w = net
                .data_mut(name)
                .ok_or_else(|| Error::Structure(format!("gradient for unknown weight {name:?}")))?;
            let g = g.data();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi -= scale * gi;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self.m.get_mut(name).expect("moments allocated per weight");
                    let v = self.v.get_mut(name).expect("moments allocated per weight");
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..w.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        w[i] -= scale * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
