//! JSON experiment configuration. Unknown keys are rejected and every
//! field is validated before any compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{build_example3, build_mlp, Activation, ArchGraph, MlpSpec, Parametrization};
use crate::data::{
    load_cifar10, synth_classification, synth_regression, Dataset, Split, SynthKind, CIFAR_CLASSES,
    CIFAR_DIM,
};
use crate::error::{Error, Result};
use crate::init::{initialize, nonzero_mean_default, InitSpec};
use crate::measure::Strategy;
use crate::net::{Loss, Network};
use crate::optim::OptimizerKind;
use crate::rng::Rng;
use crate::transfer::NoiseMode;

pub const CIFAR_ENV: &str = "MFGROW_CIFAR10_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchSource {
    Mlp {
        depth: usize,
        widths: Vec<usize>,
        #[serde(default)]
        bias: bool,
        #[serde(default)]
        skip: bool,
        #[serde(default = "tanh")]
        activation: Activation,
    },
    /// The 4-layer skip-connection net with biases.
    Example3 {
        n: usize,
    },
    File {
        path: PathBuf,
    },
}

fn tanh() -> Activation {
    Activation::Tanh
}

impl ArchSource {
    /// Builds the graph for the given data dimensions. A file keeps its
    /// own dimensions and only takes the parametrization.
    pub fn build(&self, p: Parametrization, d_in: usize, d_out: usize) -> Result<ArchGraph> {
        match self {
            ArchSource::Mlp {
                depth,
                widths,
                bias,
                skip,
                activation,
            } => build_mlp(
                &MlpSpec::new(*depth, widths)
                    .bias(*bias)
                    .skip(*skip)
                    .dims(d_in, d_out)
                    .activation(*activation)
                    .parametrization(p),
            ),
            ArchSource::Example3 { n } => {
                if (d_in, d_out) != (1, 1) {
                    return Err(Error::Config(
                        "example3 is a 1-D network; use scalar data".into(),
                    ));
                }
                Ok(build_example3(*n)?.with_parametrization(p))
            }
            ArchSource::File { path } => {
                let text = std::fs::read_to_string(path)?;
                Ok(ArchGraph::from_json(&text)?.with_parametrization(p))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Cifar10 {
        /// Falls back to the `MFGROW_CIFAR10_DIR` environment variable.
        #[serde(default)]
        dir: Option<PathBuf>,
        /// Use only the first `n` training / test images.
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Synth {
        function: SynthKind,
        n: usize,
        #[serde(default = "n_test")]
        n_test: usize,
        #[serde(default)]
        noise_std: f64,
    },
    SynthClassification {
        n: usize,
        dim: usize,
        #[serde(default = "classes")]
        classes: usize,
        #[serde(default = "cls_noise")]
        noise_std: f64,
    },
}

fn n_test() -> usize {
    200
}
fn classes() -> usize {
    10
}
fn cls_noise() -> f64 {
    1.0
}

/// The CIFAR-10 directory from an explicit path or the environment.
pub fn cifar_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CIFAR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            Error::MissingData(format!(
                "CIFAR-10 not configured: set dataset.dir or {CIFAR_ENV} to a directory holding the \
                 binary batches (data_batch_1.bin … data_batch_5.bin, test_batch.bin) from \
                 https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
            ))
        })
}

impl DatasetSpec {
    /// `(d_in, d_out)` without loading anything.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            DatasetSpec::Cifar10 { .. } => (CIFAR_DIM, CIFAR_CLASSES),
            DatasetSpec::Synth { .. } => (1, 1),
            DatasetSpec::SynthClassification { dim, classes, .. } => (*dim, *classes),
        }
    }

    pub fn default_loss(&self) -> Loss {
        match self {
            DatasetSpec::Synth { .. } => Loss::Square,
            _ => Loss::CrossEntropy,
        }
    }

    pub fn load(&self, rng: &Rng) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Cifar10 {
                dir,
                train_limit,
                test_limit,
            } => {
                let (train, test) = load_cifar10(&cifar_dir(dir.as_deref())?)?;
                let train = train_limit.map_or(train.clone(), |n| train.take(n));
                let test = test_limit.map_or(test.clone(), |n| test.take(n));
                Ok((train, test))
            }
            DatasetSpec::Synth {
                function,
                n,
                n_test,
                noise_std,
            } => {
                let train =
                    synth_regression(*function, *n, *noise_std, &mut rng.substream("train"))?;
                let mut test =
                    synth_regression(*function, *n_test, *noise_std, &mut rng.substream("test"))?;
                test.split = Split::Test;
                Ok((train, test))
            }
            DatasetSpec::SynthClassification {
                n,
                dim,
                classes,
                noise_std,
            } => synth_classification(*n, *dim, *classes, *noise_std, &mut rng.substream("data")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerName,
    pub lr: f64,
    #[serde(default = "batch")]
    pub batch_size: usize,
    /// Global learning-rate factor `N_max^e`; per-parametrization default.
    #[serde(default)]
    pub lr_width_exponent: Option<f64>,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
}

fn batch() -> usize {
    64
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

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerName::Sgd,
            lr,
            batch_size: batch(),
            lr_width_exponent: None,
            beta1: beta1(),
            beta2: beta2(),
            eps: eps(),
        }
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.kind {
            OptimizerName::Sgd => OptimizerKind::Sgd,
            OptimizerName::Adam => OptimizerKind::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
        }
    }
}

/// Transfer applied mid-run: train `at_epoch` epochs, transfer, continue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    /// One width for every hidden group, or one per hidden group.
    pub widths: Vec<usize>,
    pub strategy: Strategy,
    #[serde(default)]
    pub r1: f64,
    #[serde(default)]
    pub r2: f64,
    #[serde(default)]
    pub noise: NoiseMode,
    pub at_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub parametrization: Parametrization,
    pub arch: ArchSource,
    #[serde(default)]
    pub init: Option<InitSpec>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    #[serde(default = "seeds")]
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub loss: Option<Loss>,
    #[serde(default)]
    pub transfer: Option<TransferSpec>,
    #[serde(default = "out_dir")]
    pub output_dir: PathBuf,
}

fn seeds() -> Vec<u64> {
    vec![0]
}
fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let o = &self.optimizer;
        if !(o.lr.is_finite() && o.lr >= 0.0) {
            return bad(format!("optimizer.lr {} must be finite and >= 0", o.lr));
        }
        if o.batch_size == 0 {
            return bad("optimizer.batch_size must be >= 1".into());
        }
        if let Some(init) = &self.init {
            for d in &init.distributions {
                d.validate()
                    .map_err(|e| Error::Config(format!("init: {e}")))?;
            }
            if init.distributions.is_empty() {
                return bad("init.distributions must not be empty".into());
            }
        }
        match &self.dataset {
            DatasetSpec::Synth {
                n,
                n_test,
                noise_std,
                ..
            } if *n == 0 || *n_test == 0 || !(*noise_std >= 0.0) => {
                return bad("dataset: synth needs n, n_test >= 1 and noise_std >= 0".into());
            }
            DatasetSpec::SynthClassification {
                n, dim, classes, ..
            } if *n == 0 || *dim == 0 || *classes < 2 => {
                return bad(
                    "dataset: synth_classification needs n, dim >= 1 and classes >= 2".into(),
                );
            }
            _ => {}
        }
        if let Some(t) = &self.transfer {
            if t.widths.is_empty() || t.widths.contains(&0) {
                return bad("transfer.widths must be non-empty and positive".into());
            }
            if !(t.r1 >= 0.0) || !(0.0..1.0).contains(&t.r2) {
                return bad(format!(
                    "transfer: need r1 >= 0 and 0 <= r2 < 1 (got {}, {})",
                    t.r1, t.r2
                ));
            }
            if t.at_epoch > self.epochs {
                return bad(format!(
                    "transfer.at_epoch {} exceeds epochs {}",
                    t.at_epoch, self.epochs
                ));
            }
        }
        // Catches inconsistent widths/depth before any data is loaded.
        if !matches!(self.arch, ArchSource::File { .. }) {
            let (d_in, d_out) = self.dataset.dims();
            self.arch
                .build(self.parametrization, d_in, d_out)
                .map_err(|e| Error::Config(format!("arch: {e}")))?;
        }
        Ok(())
    }

    pub fn loss(&self) -> Loss {
        self.loss.unwrap_or_else(|| self.dataset.default_loss())
    }

    pub fn init_spec(&self) -> InitSpec {
        self.init
            .clone()
            .unwrap_or_else(|| nonzero_mean_default(self.parametrization))
    }

    /// Initialized network for `seed`.
    pub fn build_network(&self, seed: u64) -> Result<Network> {
        let (d_in, d_out) = self.dataset.dims();
        let arch = self.arch.build(self.parametrization, d_in, d_out)?;
        initialize(
            &Network::zeros(arch)?,
            &self.init_spec(),
            &Rng::new(seed).substream("init"),
        )
    }
}
