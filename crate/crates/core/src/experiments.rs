//! Scripted experiments with pass/fail checks against fixed thresholds.
//! Each returns a [`Summary`]; the CLI writes them out and the acceptance
//! suite asserts on them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{build_example3, build_mlp, compute_partition, MlpSpec, Parametrization};
use crate::data::{synth_regression, Dataset, Split, SynthKind};
use crate::diagnostics::{
    heatmap_export, layer_correlations, median, update_scaling_ratio, CorrelationReport, Heatmap,
    Normalize, ProbeTarget, FIRST_LAYER, LAST_LAYER, M_COL, M_ROW,
};
use crate::error::{Error, Result};
use crate::init::{initialize, nonzero_mean_default};
use crate::measure::{coupling_contrast, Strategy, TestFunctionSpec};
use crate::net::{Loss, Network};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng::{sample, DistributionSpec, Rng};
use crate::train::{evaluate, train, TrainConfig, TrainingLog};
use crate::transfer::{transfer, NoiseMode, TransferPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub requirement: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            requirement: format!("<= {bound}"),
            pass: measured <= bound,
        }
    }

    pub fn at_least(name: &str, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            requirement: format!(">= {bound}"),
            pass: measured >= bound,
        }
    }

    pub fn within(name: &str, measured: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            requirement: format!("in [{lo}, {hi}]"),
            pass: (lo..=hi).contains(&measured),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub checks: Vec<Check>,
    /// Extra measured values that carry no threshold.
    pub notes: Vec<(String, f64)>,
}

impl Summary {
    pub const HEADER: &'static str = "experiment,check,measured,requirement,pass";

    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.into(),
            ..Default::default()
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.experiment, c.name, c.measured, c.requirement, c.pass
            );
        }
        for (k, v) in &self.notes {
            let _ = writeln!(s, "{},{k},{v},,", self.experiment);
        }
        s
    }
}

/// Max over inputs of `|f_new − f_old| / (1 + |f_old|)` after growing every
/// hidden group by `k` with the duplicate strategy, `r1 = 0`, `r2 = 0`.
pub fn duplication_deviation(net: &Network, k: usize, inputs: &[f64]) -> Result<f64> {
    let p = compute_partition(net.arch())?;
    let plan = TransferPlan::scaled(&p, k, Strategy::Duplicate)?;
    let big = transfer(net, &p, &plan, &Rng::new(0))?;
    let d_in = net.io_dims().0;
    let mut worst = 0f64;
    for x in inputs.chunks(d_in) {
        let a = net.forward(x)?;
        let b = big.forward(x)?;
        for (fa, fb) in a.iter().zip(b.iter()) {
            worst = worst.max((fb - fa).abs() / (1.0 + fa.abs()));
        }
    }
    Ok(worst)
}

/// Duplication growth on MFP nets of depth 2–5 (with and without biases)
/// and the skip-connection net.
pub fn function_preservation(ks: &[usize], n_inputs: usize, seed: u64) -> Result<Summary> {
    let mut s = Summary::new("function_preservation");
    let rng = Rng::new(seed);
    let xs = sample(
        &mut rng.substream("inputs"),
        &DistributionSpec::Gaussian {
            mean: 0.0,
            std: 2.0,
        },
        n_inputs,
    )?;
    let mut archs = Vec::new();
    for depth in 2..=5 {
        let widths: Vec<usize> = (0..depth - 1).map(|i| 5 + i).collect();
        for bias in [false, true] {
            archs.push((
                format!("depth{depth}{}", if bias { "_bias" } else { "" }),
                build_mlp(&MlpSpec::new(depth, &widths).bias(bias))?,
            ));
        }
    }
    archs.push(("skip".to_string(), build_example3(6)?));
    for (name, arch) in archs {
        let net = initialize(
            &Network::zeros(arch)?,
            &nonzero_mean_default(Parametrization::Mfp),
            &rng.substream(&name),
        )?;
        for &k in ks {
            let d = duplication_deviation(&net, k, &xs)?;
            s.checks
                .push(Check::at_most(&format!("{name}_k{k}"), d, 1e-9));
        }
    }
    Ok(s)
}

/// `⟨uv, μ^N⟩ − ⟨uv, ν^N⟩` for `u = v ~ N(0, 1)`, which tends to 1.
pub fn coupling_experiment(n: usize, seed: u64) -> Result<Summary> {
    let u = sample(
        &mut Rng::new(seed),
        &DistributionSpec::Gaussian {
            mean: 0.0,
            std: 1.0,
        },
        n,
    )?;
    let (joint, product) = coupling_contrast(&u, &u)?;
    let mut s = Summary::new("coupling");
    let tol = 3.0 / (n as f64).sqrt();
    s.checks.push(Check::within(
        "joint_minus_product",
        joint - product,
        1.0 - tol,
        1.0 + tol,
    ));
    s.notes.push(("joint".into(), joint));
    s.notes.push(("product".into(), product));
    Ok(s)
}

/// First-step middle-layer update ratio between two widths, median over
/// seeds, under unit-residual targets. The sine-target medians are kept
/// as notes.
pub fn update_scaling(n_small: usize, n_large: usize, seeds: &[u64], lr: f64) -> Result<Summary> {
    let mut s = Summary::new("update_scaling");
    for (p, lo, hi) in [
        (Parametrization::Mfp, 0.7, 1.5),
        (Parametrization::Sp, 1.5, 3.0),
    ] {
        let r = update_scaling_ratio(p, n_small, n_large, seeds, lr, ProbeTarget::UnitResidual)?;
        s.checks
            .push(Check::within(&format!("{p}_ratio"), r, lo, hi));
    }
    for p in Parametrization::ALL {
        let r = update_scaling_ratio(p, n_small, n_large, seeds, lr, ProbeTarget::Sine)?;
        s.notes.push((format!("{p}_ratio_sine_targets"), r));
        if p == Parametrization::MuP {
            let r =
                update_scaling_ratio(p, n_small, n_large, seeds, lr, ProbeTarget::UnitResidual)?;
            s.notes.push((format!("{p}_ratio"), r));
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegenConfig {
    pub n: usize,
    pub target: usize,
    pub n_candidates: usize,
    pub moments: u32,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_std: f64,
    pub max_ratio: f64,
}

impl Default for RegenConfig {
    fn default() -> Self {
        Self {
            n: 500,
            target: 2000,
            n_candidates: 64,
            moments: 4,
            epochs: 100,
            lr: 0.05,
            batch_size: 16,
            n_train: 1000,
            n_test: 500,
            noise_std: 0.0,
            max_ratio: 1.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegenOutcome {
    pub source: Network,
    pub regenerated: Network,
    pub source_mse: f64,
    pub regen_mse: f64,
    pub log: TrainingLog,
}

/// Trains a 2-layer MFP net on sine regression, then draws a wider net
/// from its empirical measure by function-based moment matching. The new
/// net is evaluated as is.
pub fn twolayer_regen_run(cfg: &RegenConfig, seed: u64) -> Result<RegenOutcome> {
    let rng = Rng::new(seed);
    let data = synth_regression(
        SynthKind::Sine,
        cfg.n_train,
        cfg.noise_std,
        &mut rng.substream("train"),
    )?;
    let mut test = synth_regression(
        SynthKind::Sine,
        cfg.n_test,
        cfg.noise_std,
        &mut rng.substream("test"),
    )?;
    test.split = Split::Test;
    let arch = build_mlp(&MlpSpec::new(2, &[cfg.n]))?;
    let mut net = initialize(
        &Network::zeros(arch)?,
        &nonzero_mean_default(Parametrization::Mfp),
        &rng.substream("init"),
    )?;
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, cfg.lr, &net, None)?;
    let tc = TrainConfig::new(cfg.epochs, cfg.batch_size, Loss::Square);
    let log = train(
        &mut net,
        &data,
        None,
        &mut opt,
        &tc,
        &mut rng.substream("shuffle"),
    )?;
    let p = compute_partition(net.arch())?;
    let strategy = Strategy::FunctionBased {
        n_candidates: cfg.n_candidates,
        specs: TestFunctionSpec::moments_up_to(cfg.moments),
    };
    let plan = TransferPlan::for_partition(&p, &[cfg.target], strategy)?;
    let regenerated = transfer(&net, &p, &plan, &rng.substream("regen"))?;
    // Mean loss is ½·MSE under the square loss.
    let source_mse = 2.0 * evaluate(&net, &test, Loss::Square)?.0;
    let regen_mse = 2.0 * evaluate(&regenerated, &test, Loss::Square)?.0;
    Ok(RegenOutcome {
        source: net,
        regenerated,
        source_mse,
        regen_mse,
        log,
    })
}

/// Median over seeds of the regenerated-to-source test MSE ratio.
pub fn twolayer_regen(cfg: &RegenConfig, seeds: &[u64]) -> Result<Summary> {
    let mut s = Summary::new("twolayer_regen");
    let mut ratios = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let o = twolayer_regen_run(cfg, seed)?;
        ratios.push(o.regen_mse / o.source_mse);
        s.notes
            .push((format!("seed{seed}_source_mse"), o.source_mse));
        s.notes.push((format!("seed{seed}_regen_mse"), o.regen_mse));
        s.notes
            .push((format!("seed{seed}_ratio"), o.regen_mse / o.source_mse));
    }
    s.checks.push(Check::at_most(
        "median_mse_ratio",
        median(&mut ratios),
        cfg.max_ratio,
    ));
    Ok(s)
}

/// Learning rates per parametrization for classification runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParLr {
    #[serde(rename = "SP")]
    pub sp: f64,
    #[serde(rename = "muP")]
    pub mup: f64,
    #[serde(rename = "MFP")]
    pub mfp: f64,
}

impl ParLr {
    pub fn get(&self, p: Parametrization) -> f64 {
        match p {
            Parametrization::Sp => self.sp,
            Parametrization::MuP => self.mup,
            Parametrization::Mfp => self.mfp,
        }
    }
}

impl Default for ParLr {
    fn default() -> Self {
        Self {
            sp: 0.02,
            mup: 0.02,
            mfp: 0.1,
        }
    }
}

/// Protocol shared by the classification experiments: a bias-free 3-layer
/// tanh net `u → w1 → v`, softmax cross-entropy, plain SGD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub n: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: ParLr,
    /// Rows of the output matrix summed for the last-layer profile.
    pub last_rows: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            n: 300,
            epochs: 10,
            batch_size: 64,
            lr: ParLr::default(),
            last_rows: 4,
        }
    }
}

pub struct ClassifyRun {
    pub init: Network,
    pub trained: Network,
    pub log: TrainingLog,
    pub test_acc: f64,
}

fn fresh_classifier(p: Parametrization, n: usize, data: &Dataset, rng: &Rng) -> Result<Network> {
    let arch = build_mlp(
        &MlpSpec::new(3, &[n])
            .dims(data.input_dim(), data.target_dim())
            .parametrization(p),
    )?;
    initialize(
        &Network::zeros(arch)?,
        &nonzero_mean_default(p),
        &rng.substream("init"),
    )
}

pub fn classify_run(
    p: Parametrization,
    cfg: &ClassifyConfig,
    train_set: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<ClassifyRun> {
    if train_set.label(0).is_none() {
        return Err(Error::Config(
            "classification needs a labelled dataset".into(),
        ));
    }
    let rng = Rng::new(seed);
    let init = fresh_classifier(p, cfg.n, train_set, &rng)?;
    let mut net = init.clone();
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, cfg.lr.get(p), &net, None)?;
    let tc = TrainConfig::new(cfg.epochs, cfg.batch_size, Loss::CrossEntropy);
    let log = train(
        &mut net,
        train_set,
        Some(test),
        &mut opt,
        &tc,
        &mut rng.substream("shuffle"),
    )?;
    let test_acc = log.last().and_then(|r| r.test_acc).unwrap_or(f64::NAN);
    Ok(ClassifyRun {
        init,
        trained: net,
        log,
        test_acc,
    })
}

/// Test accuracy per parametrization, median over seeds.
pub fn accuracy_experiment(
    cfg: &ClassifyConfig,
    train_set: &Dataset,
    test: &Dataset,
    seeds: &[u64],
    min_acc: f64,
) -> Result<(Summary, Vec<(Parametrization, ClassifyRun)>)> {
    let mut s = Summary::new("accuracy");
    let mut first = Vec::new();
    for p in Parametrization::ALL {
        let mut accs = Vec::new();
        for (k, &seed) in seeds.iter().enumerate() {
            let run = classify_run(p, cfg, train_set, test, seed)?;
            accs.push(run.test_acc);
            s.notes.push((format!("{p}_seed{seed}_acc"), run.test_acc));
            if k == 0 {
                first.push((p, run));
            }
        }
        s.checks.push(Check::at_least(
            &format!("{p}_median_acc"),
            median(&mut accs),
            min_acc,
        ));
    }
    Ok((s, first))
}

/// Middle-layer heatmaps at initialization and after training.
pub fn fig1_heatmaps(
    runs: &[(Parametrization, ClassifyRun)],
    normalize: Normalize,
) -> Result<Vec<(String, Heatmap)>> {
    let mut out = Vec::new();
    for (p, run) in runs {
        out.push((
            format!("{p}_init"),
            heatmap_export(&run.init, "w1", normalize)?,
        ));
        out.push((
            format!("{p}_trained"),
            heatmap_export(&run.trained, "w1", normalize)?,
        ));
    }
    Ok(out)
}

/// Layer correlations at initialization and after training.
pub fn correlation_experiment(
    p: Parametrization,
    cfg: &ClassifyConfig,
    train_set: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<(CorrelationReport, CorrelationReport, ClassifyRun)> {
    let run = classify_run(p, cfg, train_set, test, seed)?;
    let init = layer_correlations(&run.init, cfg.last_rows, 0, seed)?;
    let steps = run.log.last().map_or(0, |r| r.step);
    let trained = layer_correlations(&run.trained, cfg.last_rows, steps, seed)?;
    Ok((init, trained, run))
}

/// Medians over seeds of the four layer pairs, checked against the
/// qualitative thresholds.
pub fn table1(
    cfg: &ClassifyConfig,
    train_set: &Dataset,
    test: &Dataset,
    seeds: &[u64],
) -> Result<(Summary, Vec<CorrelationReport>)> {
    let mut s = Summary::new("table1");
    let mut reports = Vec::new();
    let pairs = [
        (FIRST_LAYER, M_ROW),
        (FIRST_LAYER, M_COL),
        (LAST_LAYER, M_ROW),
        (LAST_LAYER, M_COL),
    ];
    let mut trained_med = std::collections::BTreeMap::new();
    let mut init_max = 0f64;
    for p in Parametrization::ALL {
        let mut init_vals = vec![Vec::new(); 4];
        let mut trained_vals = vec![Vec::new(); 4];
        for &seed in seeds {
            let (i, t, _) = correlation_experiment(p, cfg, train_set, test, seed)?;
            for (k, (a, b)) in pairs.iter().enumerate() {
                init_vals[k].push(i.get(a, b).unwrap_or(f64::NAN));
                trained_vals[k].push(t.get(a, b).unwrap_or(f64::NAN));
            }
            reports.push(i);
            reports.push(t);
        }
        for (k, (a, b)) in pairs.iter().enumerate() {
            let mi = median(&mut init_vals[k]);
            let mt = median(&mut trained_vals[k]);
            init_max = init_max.max(mi);
            s.notes.push((format!("{p}_initial_{a}_{b}"), mi));
            s.notes.push((format!("{p}_trained_{a}_{b}"), mt));
            trained_med.insert((p, *a, *b), mt);
        }
    }
    s.checks
        .push(Check::at_most("a_initial_max", init_max, 0.1));
    let mfp_first = trained_med[&(Parametrization::Mfp, FIRST_LAYER, M_COL)];
    let sp_first = trained_med[&(Parametrization::Sp, FIRST_LAYER, M_COL)];
    s.checks
        .push(Check::at_least("b_mfp_first_mcol", mfp_first, 0.3));
    s.checks.push(Check::at_least(
        "b_mfp_over_sp_first_mcol",
        mfp_first / sp_first,
        3.0,
    ));
    s.checks.push(Check::at_least(
        "c_mfp_last_mrow",
        trained_med[&(Parametrization::Mfp, LAST_LAYER, M_ROW)],
        0.1,
    ));
    Ok((s, reports))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig2Config {
    pub parametrization: Parametrization,
    pub n_small: usize,
    pub n_large: usize,
    pub transfer_epoch: usize,
    pub post_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub noise: NoiseMode,
    /// `(r1, r2)` settings to try.
    pub settings: Vec<(f64, f64)>,
    /// Accuracy gap to the benchmark allowed at some post-transfer epoch.
    pub tolerance: f64,
}

impl Fig2Config {
    pub fn grow() -> Self {
        Self {
            parametrization: Parametrization::Mfp,
            n_small: 100,
            n_large: 1000,
            transfer_epoch: 4,
            post_epochs: 3,
            lr: 0.1,
            batch_size: 64,
            strategy: Strategy::Random,
            noise: NoiseMode::Perturb,
            settings: vec![(0.0, 0.0), (1.0, 0.4), (4.0, 0.8)],
            tolerance: 0.02,
        }
    }

    pub fn prune() -> Self {
        Self {
            n_small: 1000,
            n_large: 100,
            settings: vec![(0.0, 0.0), (0.5, 0.9)],
            ..Self::grow()
        }
    }
}

/// Transfer from `n_small` to `n_large` (growth when larger, pruning when
/// smaller) after `transfer_epoch` epochs, then `post_epochs` more epochs,
/// against a net of the target width trained from scratch for the same
/// total number of epochs.
pub fn fig2(
    name: &str,
    cfg: &Fig2Config,
    train_set: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<(Summary, Vec<TrainingLog>)> {
    let p = cfg.parametrization;
    let rng = Rng::new(seed);
    let tc = |epochs, start| TrainConfig {
        start_epoch: start,
        ..TrainConfig::new(epochs, cfg.batch_size, Loss::CrossEntropy)
    };
    let mut logs = Vec::new();

    let mut bench = fresh_classifier(p, cfg.n_large, train_set, &rng.substream("bench"))?;
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, cfg.lr, &bench, None)?;
    let mut blog = train(
        &mut bench,
        train_set,
        Some(test),
        &mut opt,
        &tc(cfg.transfer_epoch + cfg.post_epochs, 0),
        &mut rng.substream("bench/shuffle"),
    )?;
    blog.meta
        .insert("run".into(), format!("benchmark_n{}", cfg.n_large));
    let bench_acc: Vec<f64> = blog
        .rows
        .iter()
        .map(|r| r.test_acc.unwrap_or(f64::NAN))
        .collect();
    logs.push(blog);

    let mut src = fresh_classifier(p, cfg.n_small, train_set, &rng.substream("source"))?;
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, cfg.lr, &src, None)?;
    let mut slog = train(
        &mut src,
        train_set,
        Some(test),
        &mut opt,
        &tc(cfg.transfer_epoch, 0),
        &mut rng.substream("source/shuffle"),
    )?;
    slog.meta
        .insert("run".into(), format!("source_n{}", cfg.n_small));
    let src_loss = evaluate(&src, train_set, Loss::CrossEntropy)?.0;
    logs.push(slog);

    let partition = compute_partition(src.arch())?;
    let mut s = Summary::new(name);
    for (k, &(r1, r2)) in cfg.settings.iter().enumerate() {
        let plan = TransferPlan::for_partition(&partition, &[cfg.n_large], cfg.strategy.clone())?
            .noise(r1, cfg.noise)
            .norm_rate(r2)
            .seed(seed);
        let mut big = transfer(
            &src,
            &partition,
            &plan,
            &rng.substream(&format!("transfer{k}")),
        )?;
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, cfg.lr, &big, None)?;
        let mut log = train(
            &mut big,
            train_set,
            Some(test),
            &mut opt,
            &tc(cfg.post_epochs, cfg.transfer_epoch),
            &mut rng.substream(&format!("transfer{k}/shuffle")),
        )
        .map_err(|e| match e {
            Error::Divergence {
                step,
                loss,
                context,
            } => Error::Divergence {
                step,
                loss,
                context: format!("{context} (r1={r1}, r2={r2})"),
            },
            e => e,
        })?;
        log.meta.extend(plan.tags());
        log.meta
            .insert("run".into(), format!("transfer_r1_{r1}_r2_{r2}"));
        // Best gap over the post-transfer epochs 1..=post_epochs.
        let gap = log.rows[1..]
            .iter()
            .map(|r| bench_acc[r.epoch] - r.test_acc.unwrap_or(f64::NAN))
            .fold(f64::INFINITY, f64::min);
        s.checks.push(Check::at_most(
            &format!("gap_r1_{r1}_r2_{r2}"),
            gap,
            cfg.tolerance,
        ));
        s.notes.push((
            format!("acc_after_transfer_r1_{r1}_r2_{r2}"),
            log.rows[0].test_acc.unwrap_or(f64::NAN),
        ));
        logs.push(log);
    }
    // Growth by an integer factor with duplication preserves the function.
    if cfg.n_large > cfg.n_small && cfg.n_large.is_multiple_of(cfg.n_small) {
        let plan =
            TransferPlan::scaled(&partition, cfg.n_large / cfg.n_small, Strategy::Duplicate)?;
        let dup = transfer(&src, &partition, &plan, &Rng::new(seed))?;
        let dup_loss = evaluate(&dup, train_set, Loss::CrossEntropy)?.0;
        s.checks.push(Check::at_most(
            "duplicate_loss_change",
            (dup_loss - src_loss).abs(),
            1e-9,
        ));
    }
    s.notes.push((
        "benchmark_final_acc".into(),
        *bench_acc.last().unwrap_or(&f64::NAN),
    ));
    Ok((s, logs))
}

/// Row-mean profile of `w1` across training snapshots of a small MFP
/// regression net, one snapshot per epoch.
pub fn snapshots(n: usize, epochs: usize, lr: f64, seed: u64) -> Result<Vec<Network>> {
    let rng = Rng::new(seed);
    let data = synth_regression(SynthKind::Sine, 256, 0.0, &mut rng.substream("train"))?;
    let arch = build_mlp(&MlpSpec::new(3, &[n]))?;
    let mut net = initialize(
        &Network::zeros(arch)?,
        &nonzero_mean_default(Parametrization::Mfp),
        &rng.substream("init"),
    )?;
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, lr, &net, None)?;
    let mut out = vec![net.clone()];
    let mut shuffle = rng.substream("shuffle");
    for e in 0..epochs {
        let tc = TrainConfig {
            start_epoch: e,
            ..TrainConfig::new(1, 32, Loss::Square)
        };
        train(&mut net, &data, None, &mut opt, &tc, &mut shuffle)?;
        out.push(net.clone());
    }
    Ok(out)
}
