//! Weight initialization: i.i.d. draws and RC-initialization, where a
//! hidden-by-hidden matrix is built as `W[j,k] = φ(R[j], C[k])`.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchGraph, Axis, GammaRole, Parametrization, WeightKind};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::rng::{sample, DistributionSpec, Rng};
use crate::tensor::{Matrix, Tensor, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Iid,
    Rc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    Product,
    Sum,
}

impl Phi {
    pub fn apply(self, r: f64, c: f64) -> f64 {
        match self {
            Phi::Product => r * c,
            Phi::Sum => r + c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub mode: InitMode,
    #[serde(default = "product")]
    pub phi: Phi,
    /// One per slot, or a single entry used for every slot. In rc mode an
    /// eligible matrix takes two slots (R then C), every other weight one.
    pub distributions: Vec<DistributionSpec>,
}

fn product() -> Phi {
    Phi::Product
}

/// Row and column factors that fully determine an rc matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcFactors {
    pub weight: String,
    pub r: Vector,
    pub c: Vector,
    pub phi: Phi,
}

impl RcFactors {
    pub fn matrix(&self) -> Matrix {
        Matrix::from_fn(self.r.len(), self.c.len(), |j, k| {
            self.phi.apply(self.r[j], self.c[k])
        })
    }
}

/// Matrices whose two axes both scale with width.
pub fn rc_eligible(arch: &ArchGraph, weight: &str) -> bool {
    arch.weight(weight).is_some_and(|w| {
        w.kind == WeightKind::Matrix
            && arch.axis_role(weight, Axis::Row) == GammaRole::Hidden
            && arch.axis_role(weight, Axis::Col) == GammaRole::Hidden
    })
}

/// Default i.i.d. spec per parametrization. The forward pass already
/// carries the 1/√fan or 1/fan scalars, so SP and μP draw unit-variance
/// entries.
pub fn nonzero_mean_default(p: Parametrization) -> InitSpec {
    let d = match p {
        Parametrization::Mfp => DistributionSpec::Gaussian {
            mean: 1.0,
            std: 3.0,
        },
        Parametrization::Sp => {
            let b = 3f64.sqrt();
            DistributionSpec::Uniform { low: -b, high: b }
        }
        Parametrization::MuP => DistributionSpec::Gaussian {
            mean: 0.0,
            std: 1.0,
        },
    };
    InitSpec {
        mode: InitMode::Iid,
        phi: Phi::Product,
        distributions: vec![d],
    }
}

pub fn initialize(net: &Network, spec: &InitSpec, rng: &Rng) -> Result<Network> {
    Ok(initialize_with_factors(net, spec, rng)?.0)
}

/// Every weight draws from its own substream keyed by name, so the result
/// does not depend on iteration order.
pub fn initialize_with_factors(
    net: &Network,
    spec: &InitSpec,
    rng: &Rng,
) -> Result<(Network, Vec<RcFactors>)> {
    let arch = net.arch();
    let rc = spec.mode == InitMode::Rc;
    let slots: usize = arch
        .weights()
        .iter()
        .map(|w| {
            if rc && rc_eligible(arch, &w.name) {
                2
            } else {
                1
            }
        })
        .sum();
    let n = spec.distributions.len();
    if n != 1 && n != slots {
        return Err(Error::Config(format!(
            "{:?} init needs {slots} distributions (or 1), got {n}",
            spec.mode
        )));
    }
    let dist = |slot: usize| &spec.distributions[if n == 1 { 0 } else { slot }];

    let mut out = net.clone();
    let mut factors = Vec::new();
    let mut slot = 0;
    for w in arch.weights() {
        let name = &w.name;
        if rc && rc_eligible(arch, name) {
            let r = sample(
                &mut rng.substream(&format!("{name}/R")),
                dist(slot),
                w.shape[0],
            )?;
            let c = sample(
                &mut rng.substream(&format!("{name}/C")),
                dist(slot + 1),
                w.shape[1],
            )?;
            slot += 2;
            let f = RcFactors {
                weight: name.clone(),
                r,
                c,
                phi: spec.phi,
            };
            out.set(name, Tensor::Matrix(f.matrix()))?;
            factors.push(f);
        } else {
            let count: usize = w.shape.iter().product();
            let v = sample(&mut rng.substream(name), dist(slot), count)?;
            slot += 1;
            let t = match w.kind {
                WeightKind::Matrix => {
                    Tensor::Matrix(Matrix::new(w.shape[0], w.shape[1], v.into_inner())?)
                }
                WeightKind::Vector => Tensor::Vector(v),
            };
            out.set(name, t)?;
        }
    }
    Ok((out, factors))
}
