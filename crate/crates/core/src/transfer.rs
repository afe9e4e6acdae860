//! Zero-shot weight transfer: resample every Γ group's empirical measure
//! to a new width and rebuild each weight from the chosen rows/columns.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{Axis, GammaPartition, GammaRole};
use crate::checkpoint::load_checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::measure::{draw_indices, extract_measures, IndexSet, Strategy};
use crate::net::Network;
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng::Rng;
use crate::tensor::{Tensor, Vector};
use crate::train::{train, TrainConfig, TrainingLog};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `ŵ = w·u`.
    Literal,
    /// `ŵ = w·(1 + u)`.
    #[default]
    Perturb,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(NoiseMode::Literal),
            "perturb" => Ok(NoiseMode::Perturb),
            _ => Err(Error::Param(format!("unknown noise mode {s:?}"))),
        }
    }
}

/// `u ~ U(−r1, r1)` applied multiplicatively per `mode`.
pub fn apply_noise(w: f64, r1: f64, mode: NoiseMode, rng: &mut Rng) -> f64 {
    let u = if r1 > 0.0 {
        r1 * (2.0 * rng.uniform01() - 1.0)
    } else {
        0.0
    };
    match mode {
        NoiseMode::Literal => w * u,
        NoiseMode::Perturb => w * (1.0 + u),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPlan {
    pub target: usize,
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferPlan {
    /// One entry per partition group, in partition order.
    pub groups: Vec<GroupPlan>,
    #[serde(default)]
    pub r1: f64,
    #[serde(default)]
    pub r2: f64,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub seed: u64,
}

impl TransferPlan {
    /// Hidden groups get `targets` (one per hidden group, or one for all);
    /// data groups keep their width.
    pub fn for_partition(
        partition: &GammaPartition,
        targets: &[usize],
        strategy: Strategy,
    ) -> Result<Self> {
        let hidden = partition.hidden_groups().count();
        if targets.len() != 1 && targets.len() != hidden {
            return Err(Error::Param(format!(
                "{} target widths for {hidden} hidden groups",
                targets.len()
            )));
        }
        let mut k = 0;
        let groups = partition
            .groups
            .iter()
            .map(|g| {
                let target = match g.role {
                    GammaRole::Data => g.width,
                    GammaRole::Hidden => {
                        let t = targets[if targets.len() == 1 { 0 } else { k }];
                        k += 1;
                        t
                    }
                };
                GroupPlan {
                    target,
                    strategy: strategy.clone(),
                }
            })
            .collect();
        Ok(Self {
            groups,
            r1: 0.0,
            r2: 0.0,
            noise: NoiseMode::Perturb,
            seed: 0,
        })
    }

    /// Every hidden group scaled by `k`.
    pub fn scaled(partition: &GammaPartition, k: usize, strategy: Strategy) -> Result<Self> {
        let mut plan = Self::for_partition(partition, &[1], strategy)?;
        for (p, g) in plan.groups.iter_mut().zip(&partition.groups) {
            if g.role == GammaRole::Hidden {
                p.target = g.width * k;
            }
        }
        Ok(plan)
    }

    pub fn noise(mut self, r1: f64, mode: NoiseMode) -> Self {
        self.r1 = r1;
        self.noise = mode;
        self
    }

    pub fn norm_rate(mut self, r2: f64) -> Self {
        self.r2 = r2;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn tags(&self) -> BTreeMap<String, String> {
        let targets: Vec<String> = self.groups.iter().map(|g| g.target.to_string()).collect();
        let mut strategies: Vec<String> = self
            .groups
            .iter()
            .map(|g| serde_json::to_string(&g.strategy).unwrap_or_default())
            .collect();
        if strategies.windows(2).all(|w| w[0] == w[1]) {
            strategies.truncate(1);
        }
        BTreeMap::from([
            ("r1".to_string(), self.r1.to_string()),
            ("r2".to_string(), self.r2.to_string()),
            (
                "noise".to_string(),
                format!("{:?}", self.noise).to_lowercase(),
            ),
            ("targets".to_string(), targets.join(" ")),
            ("strategy".to_string(), strategies.join(" ")),
            ("transfer_seed".to_string(), self.seed.to_string()),
        ])
    }

    fn validate(&self, partition: &GammaPartition) -> Result<()> {
        if self.groups.len() != partition.groups.len() {
            return Err(Error::Param(format!(
                "plan has {} groups, partition has {}",
                self.groups.len(),
                partition.groups.len()
            )));
        }
        for (i, (p, g)) in self.groups.iter().zip(&partition.groups).enumerate() {
            if p.target == 0 {
                return Err(Error::Param(format!("group {} target width is 0", i + 1)));
            }
            if g.role == GammaRole::Data && p.target != g.width {
                return Err(Error::Param(format!(
                    "group {} is tied to a data dimension; its width {} cannot become {}",
                    i + 1,
                    g.width,
                    p.target
                )));
            }
        }
        if !(self.r1.is_finite() && self.r1 >= 0.0) {
            return Err(Error::Param(format!("r1 = {} must be >= 0", self.r1)));
        }
        if !(0.0..1.0).contains(&self.r2) {
            return Err(Error::Param(format!("r2 = {} must lie in [0, 1)", self.r2)));
        }
        Ok(())
    }
}

pub fn transfer(
    net: &Network,
    partition: &GammaPartition,
    plan: &TransferPlan,
    rng: &Rng,
) -> Result<Network> {
    Ok(transfer_with_indices(net, partition, plan, rng)?.0)
}

/// Transfer that also returns the index set drawn for each group.
pub fn transfer_with_indices(
    net: &Network,
    partition: &GammaPartition,
    plan: &TransferPlan,
    rng: &Rng,
) -> Result<(Network, Vec<IndexSet>)> {
    plan.validate(partition)?;
    let measures = extract_measures(net, partition)?;
    let mut sets = Vec::with_capacity(measures.len());
    for (i, (m, gp)) in measures.iter().zip(&plan.groups).enumerate() {
        let set = if m.role == GammaRole::Data {
            IndexSet::identity(i, m.width)
        } else {
            draw_indices(
                m,
                gp.target,
                &gp.strategy,
                plan.r2,
                &mut rng.substream(&format!("group{i}")),
            )?
        };
        sets.push(set);
    }
    let net = apply_index_sets(net, partition, &sets, plan.r1, plan.noise, rng)?;
    Ok((net, sets))
}

/// Rebuilds every weight from per-group index sets (rows by the row γ's
/// set, columns by the col γ's set), then applies `r1` noise to weights
/// touching a hidden group.
pub fn apply_index_sets(
    net: &Network,
    partition: &GammaPartition,
    sets: &[IndexSet],
    r1: f64,
    noise: NoiseMode,
    rng: &Rng,
) -> Result<Network> {
    if sets.len() != partition.groups.len() {
        return Err(Error::Param(format!(
            "{} index sets for {} groups",
            sets.len(),
            partition.groups.len()
        )));
    }
    for (s, g) in sets.iter().zip(&partition.groups) {
        if let Some(&bad) = s.indices.iter().find(|&&i| i >= g.width) {
            return Err(Error::Param(format!(
                "index {bad} out of range for width {}",
                g.width
            )));
        }
    }
    let targets: Vec<usize> = sets.iter().map(|s| s.indices.len()).collect();
    let arch = net.arch().with_group_widths(partition, &targets)?;

    let indices_for = |weight: &str, axis: Axis| -> &[usize] {
        let gamma = net.arch().axis_gammas(weight, axis)[0];
        let g = partition.group_of(gamma).expect("partition covers every γ");
        &sets[g].indices
    };
    let mut store = BTreeMap::new();
    for w in net.arch().weights() {
        let t = net.get(&w.name).expect("store matches arch");
        let mut new = match t {
            Tensor::Matrix(m) => Tensor::Matrix(m.select(
                indices_for(&w.name, Axis::Row),
                indices_for(&w.name, Axis::Col),
            )),
            Tensor::Vector(v) => Tensor::Vector(Vector::select(v, indices_for(&w.name, Axis::Row))),
        };
        let touches_hidden = w
            .axes()
            .iter()
            .any(|&a| net.arch().axis_role(&w.name, a) == GammaRole::Hidden);
        let identity = r1 == 0.0 && noise == NoiseMode::Perturb;
        if touches_hidden && !identity {
            let mut nr = rng.substream(&format!("noise/{}", w.name));
            for v in new.data_mut() {
                *v = apply_noise(*v, r1, noise, &mut nr);
            }
        }
        store.insert(w.name.clone(), new);
    }
    Network::from_store(arch, store)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResumeConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub lr_width_exponent: Option<f64>,
    pub train: TrainConfig,
}

/// Transfers `small`, then resumes training the result with a fresh
/// optimizer. The log carries the plan's parameters in `meta`.
pub fn grow_then_train(
    small: &Network,
    partition: &GammaPartition,
    plan: &TransferPlan,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &ResumeConfig,
    rng: &mut Rng,
) -> Result<(Network, TrainingLog)> {
    let mut big = transfer(small, partition, plan, &Rng::new(plan.seed))?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, &big, cfg.lr_width_exponent)?;
    let tags = plan.tags();
    let mut log = train(&mut big, data, test, &mut opt, &cfg.train, rng).map_err(|e| match e {
        Error::Divergence {
            step,
            loss,
            context,
        } => {
            let plan_desc: Vec<String> = tags.iter().map(|(k, v)| format!("{k}={v}")).collect();
            Error::Divergence {
                step,
                loss,
                context: format!("{context} (transfer plan: {})", plan_desc.join(", ")),
            }
        }
        e => e,
    })?;
    log.meta.extend(tags);
    Ok((big, log))
}

/// [`grow_then_train`] starting from a checkpoint file.
pub fn grow_then_train_from(
    small_ckpt: &Path,
    plan: &TransferPlan,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &ResumeConfig,
    rng: &mut Rng,
) -> Result<(Network, TrainingLog)> {
    let ck = load_checkpoint(small_ckpt)?;
    let partition = crate::arch::compute_partition(ck.network.arch())?;
    grow_then_train(&ck.network, &partition, plan, data, test, cfg, rng)
}
