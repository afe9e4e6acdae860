//! `mfgrow`: γ analysis, training, transfer, diagnostics, sampling and the
//! scripted experiments.
//!
//! Exit codes: 0 success, 1 acceptance failure (or divergence), 2 input
//! error, 3 missing data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mfgrow::arch::{
    build_attention_block, build_example3, build_mlp, build_skip_block, compute_partition,
    Activation, ArchGraph, Axis, GammaRole, MlpSpec, Parametrization,
};
use mfgrow::checkpoint::{load_checkpoint, save_checkpoint, Dtype};
use mfgrow::config::{cifar_dir, ExperimentConfig};
use mfgrow::data::{load_cifar10, synth_classification, Dataset};
use mfgrow::diagnostics::{
    correlation_matrix, heatmap_export, histogram_trajectory, layer_correlations, profile,
    Normalize, Reducer,
};
use mfgrow::experiments::{
    accuracy_experiment, coupling_experiment, fig1_heatmaps, fig2, function_preservation, table1,
    twolayer_regen, update_scaling, ClassifyConfig, Fig2Config, RegenConfig, Summary,
};
use mfgrow::init::{initialize, nonzero_mean_default, InitMode, InitSpec, Phi};
use mfgrow::measure::{draw_indices, extract_measures, Strategy, TestFunctionSpec};
use mfgrow::net::Network;
use mfgrow::optim::OptimizerState;
use mfgrow::rng::{DistributionSpec, Rng};
use mfgrow::train::{train, LogRow, TrainConfig};
use mfgrow::transfer::{grow_then_train, transfer, NoiseMode, ResumeConfig, TransferPlan};

#[derive(Parser)]
#[command(
    name = "mfgrow",
    version,
    about = "Width growth and pruning by resampling weight measures"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory, or the output checkpoint for `init` and `transfer`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the Γ partition of an architecture.
    Gamma(GammaArgs),
    /// Write a freshly initialized checkpoint.
    Init(InitArgs),
    /// Train per the experiment config, once per seed.
    Train,
    /// Grow or prune a checkpoint.
    Transfer(TransferArgs),
    /// Correlation reports, heatmaps and histograms from checkpoints.
    Diagnose(DiagnoseArgs),
    /// Draw an index set from one Γ group's empirical measure.
    Sample(SampleArgs),
    /// Run a scripted experiment and check it against its thresholds.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Clone)]
struct ArchArgs {
    /// Architecture JSON file.
    arch: Option<PathBuf>,
    /// Plain MLP of this depth.
    #[arg(long)]
    mlp: Option<usize>,
    /// Hidden widths for `--mlp` (one for all, or one per hidden layer).
    #[arg(long, value_delimiter = ',', default_value = "8")]
    widths: Vec<usize>,
    #[arg(long)]
    bias: bool,
    #[arg(long)]
    skip: bool,
    #[arg(long, default_value_t = 1)]
    d_in: usize,
    #[arg(long, default_value_t = 1)]
    d_out: usize,
    #[arg(long, default_value = "tanh")]
    activation: Activation,
    /// The 4-layer skip-connection net of width N.
    #[arg(long, value_name = "N")]
    example3: Option<usize>,
    /// The skip-connection block of width N.
    #[arg(long, value_name = "N")]
    skip_block: Option<usize>,
    /// The attention block, `N,D_X`.
    #[arg(long, value_name = "N,D_X", value_delimiter = ',')]
    attention: Option<Vec<usize>>,
    #[arg(long, default_value = "MFP")]
    parametrization: Parametrization,
}

impl ArchArgs {
    fn build(&self) -> Result<ArchGraph> {
        let p = self.parametrization;
        let chosen = [
            self.arch.is_some(),
            self.mlp.is_some(),
            self.example3.is_some(),
            self.skip_block.is_some(),
            self.attention.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if chosen != 1 {
            bail!(mfgrow::Error::Param(
                "give exactly one of: an arch file, --mlp, --example3, --skip-block, --attention"
                    .into()
            ));
        }
        let g = if let Some(path) = &self.arch {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return ArchGraph::from_json(&text).with_context(|| format!("in {}", path.display()));
        } else if let Some(depth) = self.mlp {
            build_mlp(
                &MlpSpec::new(depth, &self.widths)
                    .bias(self.bias)
                    .skip(self.skip)
                    .dims(self.d_in, self.d_out)
                    .activation(self.activation),
            )?
        } else if let Some(n) = self.example3 {
            build_example3(n)?
        } else if let Some(n) = self.skip_block {
            build_skip_block(n)?
        } else {
            match self.attention.as_deref() {
                Some(&[n, d_x]) => build_attention_block(n, d_x)?,
                _ => bail!(mfgrow::Error::Param("--attention takes N,D_X".into())),
            }
        };
        Ok(g.with_parametrization(p))
    }
}

#[derive(Args)]
struct GammaArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Also print each group's role (hidden or data).
    #[arg(long)]
    roles: bool,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, value_enum, default_value = "iid")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "product")]
    phi: PhiArg,
    /// Distribution JSON, repeatable (one per slot, or one for all).
    /// Defaults to the parametrization's default.
    #[arg(long = "dist")]
    dists: Vec<String>,
    #[arg(long, default_value = "f64")]
    dtype: Dtype,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Iid,
    Rc,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhiArg {
    Product,
    Sum,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Duplicate,
    Group,
    FunctionBased,
}

#[derive(Args, Clone)]
struct StrategyArgs {
    #[arg(long, value_enum, default_value = "random")]
    strategy: StrategyArg,
    /// Groups for `--strategy group`.
    #[arg(long, default_value_t = 4)]
    n_groups: usize,
    /// Candidates for `--strategy function-based`.
    #[arg(long, default_value_t = 64)]
    candidates: usize,
    /// Highest moment order for `--strategy function-based`.
    #[arg(long, default_value_t = 4)]
    moments: u32,
}

impl StrategyArgs {
    fn strategy(&self) -> Strategy {
        match self.strategy {
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Duplicate => Strategy::Duplicate,
            StrategyArg::Group => Strategy::Group {
                n_groups: self.n_groups,
            },
            StrategyArg::FunctionBased => Strategy::FunctionBased {
                n_candidates: self.candidates,
                specs: TestFunctionSpec::moments_up_to(self.moments),
            },
        }
    }
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    from: PathBuf,
    /// Target width for every hidden group, or one per hidden group.
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long, default_value_t = 0.0)]
    r1: f64,
    #[arg(long, default_value_t = 0.0)]
    r2: f64,
    #[arg(long, default_value = "perturb")]
    noise: NoiseMode,
    #[arg(long, default_value = "f64")]
    dtype: Dtype,
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Corr,
    Heatmap,
    Hist,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Checkpoint(s); `hist` takes one per snapshot.
    #[arg(long = "ckpt", required = true)]
    ckpts: Vec<PathBuf>,
    #[arg(long, value_enum)]
    report: Report,
    #[arg(long, default_value = "w1")]
    weight: String,
    #[arg(long, default_value = "row")]
    axis: Axis,
    #[arg(long, default_value = "minmax")]
    normalize: Normalize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Output rows summed for the last-layer profile.
    #[arg(long, default_value_t = 4)]
    last_rows: usize,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// 1-based Γ group.
    #[arg(long, default_value_t = 1)]
    group: usize,
    #[arg(long)]
    target: usize,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long, default_value_t = 0.0)]
    r2: f64,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Experiment {
    Table1,
    Fig1,
    Fig2Grow,
    Fig2Prune,
    TwolayerRegen,
    FunctionPreservation,
    UpdateScaling,
    Coupling,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(value_enum)]
    name: Experiment,
    /// Number of seeds, starting at `--seed`.
    #[arg(long)]
    seeds: Option<usize>,
    /// CIFAR-10 directory (falls back to MFGROW_CIFAR10_DIR).
    #[arg(long)]
    cifar: Option<PathBuf>,
    /// Run on a synthetic 10-class stand-in instead of CIFAR-10.
    #[arg(long)]
    synthetic: bool,
    /// Hidden width override.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    /// Restrict fig2 to one `(r1, r2)` setting.
    #[arg(long, requires = "r2")]
    r1: Option<f64>,
    #[arg(long, requires = "r1")]
    r2: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The context chain, skipping causes already spelled out by the message
/// that wraps them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<mfgrow::Error>() {
            return match err {
                mfgrow::Error::MissingData(_) => 3,
                mfgrow::Error::Divergence { .. } => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return 2;
        }
    }
    2
}

fn run(cli: Cli) -> Result<u8> {
    match &cli.cmd {
        Cmd::Gamma(a) => cmd_gamma(a),
        Cmd::Init(a) => cmd_init(&cli, a),
        Cmd::Train => cmd_train(&cli),
        Cmd::Transfer(a) => cmd_transfer(&cli, a),
        Cmd::Diagnose(a) => cmd_diagnose(&cli, a),
        Cmd::Sample(a) => cmd_sample(&cli, a),
        Cmd::Reproduce(a) => cmd_reproduce(&cli, a),
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let d = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

/// `--out` as a checkpoint file: used as is when it ends in `.ckpt`,
/// otherwise `<dir>/<default>`.
fn out_file(cli: &Cli, default: &str) -> Result<PathBuf> {
    match &cli.out {
        Some(p) if p.extension().is_some_and(|e| e == "ckpt") => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Ok(p.clone())
        }
        _ => Ok(out_dir(cli)?.join(default)),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gamma(a: &GammaArgs) -> Result<u8> {
    let g = a.arch.build()?;
    let p = compute_partition(&g)?;
    if a.roles {
        for (i, grp) in p.groups.iter().enumerate() {
            let members: Vec<String> = grp.members.iter().map(|m| format!("γ{m}")).collect();
            let role = match grp.role {
                GammaRole::Hidden => "hidden",
                GammaRole::Data => "data",
            };
            println!(
                "Γ_{}: {{{}}} width={} role={role}",
                i + 1,
                members.join(", "),
                grp.width
            );
        }
    } else {
        print!("{p}");
    }
    Ok(0)
}

fn cmd_init(cli: &Cli, a: &InitArgs) -> Result<u8> {
    let arch = a.arch.build()?;
    let p = arch.parametrization();
    let spec = if a.dists.is_empty() && matches!(a.mode, ModeArg::Iid) {
        nonzero_mean_default(p)
    } else {
        let distributions = if a.dists.is_empty() {
            nonzero_mean_default(p).distributions
        } else {
            a.dists
                .iter()
                .map(|d| {
                    serde_json::from_str::<DistributionSpec>(d)
                        .with_context(|| format!("--dist {d}"))
                })
                .collect::<Result<Vec<_>>>()?
        };
        InitSpec {
            mode: match a.mode {
                ModeArg::Iid => InitMode::Iid,
                ModeArg::Rc => InitMode::Rc,
            },
            phi: match a.phi {
                PhiArg::Product => Phi::Product,
                PhiArg::Sum => Phi::Sum,
            },
            distributions,
        }
    };
    let net = initialize(
        &Network::zeros(arch)?,
        &spec,
        &Rng::new(cli.seed).substream("init"),
    )?;
    let path = out_file(cli, &format!("init_seed{}.ckpt", cli.seed))?;
    save_checkpoint(&net, cli.seed, &path, a.dtype)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_train(cli: &Cli) -> Result<u8> {
    let Some(path) = &cli.config else {
        bail!(mfgrow::Error::Config("train needs --config <file>".into()));
    };
    let cfg = ExperimentConfig::load(path).with_context(|| format!("in {}", path.display()))?;
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir)?;
    let loss = cfg.loss();
    for &seed in &cfg.seeds {
        let rng = Rng::new(seed);
        let (data, test) = cfg.dataset.load(&rng.substream("dataset"))?;
        let mut net = cfg.build_network(seed)?;
        let mut shuffle = rng.substream("shuffle");
        let o = &cfg.optimizer;
        let first = cfg.transfer.as_ref().map_or(cfg.epochs, |t| t.at_epoch);
        let mut opt = OptimizerState::new(o.optimizer_kind(), o.lr, &net, o.lr_width_exponent)?;
        let mut log = train(
            &mut net,
            &data,
            Some(&test),
            &mut opt,
            &TrainConfig::new(first, o.batch_size, loss),
            &mut shuffle,
        )?;
        if let Some(t) = &cfg.transfer {
            let p = compute_partition(net.arch())?;
            let plan = TransferPlan::for_partition(&p, &t.widths, t.strategy.clone())?
                .noise(t.r1, t.noise)
                .norm_rate(t.r2)
                .seed(seed);
            let resume = ResumeConfig {
                optimizer: o.optimizer_kind(),
                lr: o.lr,
                lr_width_exponent: o.lr_width_exponent,
                train: TrainConfig {
                    start_epoch: t.at_epoch,
                    ..TrainConfig::new(cfg.epochs - t.at_epoch, o.batch_size, loss)
                },
            };
            let (grown, rest) =
                grow_then_train(&net, &p, &plan, &data, Some(&test), &resume, &mut shuffle)?;
            net = grown;
            let offset = log.last().map_or(0, |r| r.step);
            log.rows.extend(rest.rows.into_iter().map(|r| LogRow {
                step: r.step + offset,
                ..r
            }));
            log.meta.extend(rest.meta);
        }
        write(&dir.join(format!("train_seed{seed}.csv")), &log.to_csv())?;
        if !log.meta.is_empty() {
            write(
                &dir.join(format!("train_seed{seed}.meta.json")),
                &serde_json::to_string_pretty(&log.meta)?,
            )?;
        }
        save_checkpoint(
            &net,
            seed,
            &dir.join(format!("model_seed{seed}.ckpt")),
            Dtype::F64,
        )?;
        if let Some(last) = log.last() {
            println!(
                "seed {seed}: epoch {} train_loss {} test_loss {} test_acc {}",
                last.epoch,
                last.train_loss,
                last.test_loss.map_or("-".into(), |v| v.to_string()),
                last.test_acc.map_or("-".into(), |v| v.to_string())
            );
        }
    }
    Ok(0)
}

fn cmd_transfer(cli: &Cli, a: &TransferArgs) -> Result<u8> {
    let ck = load_checkpoint(&a.from).with_context(|| format!("loading {}", a.from.display()))?;
    let p = compute_partition(ck.network.arch())?;
    let plan = TransferPlan::for_partition(&p, &a.widths, a.strategy.strategy())?
        .noise(a.r1, a.noise)
        .norm_rate(a.r2)
        .seed(cli.seed);
    let big = transfer(&ck.network, &p, &plan, &Rng::new(cli.seed))?;
    let path = out_file(cli, &format!("transfer_seed{}.ckpt", cli.seed))?;
    save_checkpoint(&big, cli.seed, &path, a.dtype)?;
    print!("{}", compute_partition(big.arch())?);
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_diagnose(cli: &Cli, a: &DiagnoseArgs) -> Result<u8> {
    let nets = a
        .ckpts
        .iter()
        .map(|p| {
            load_checkpoint(p)
                .map(|c| (c.seed, c.network))
                .with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = out_dir(cli)?;
    let (seed, net) = &nets[0];
    match a.report {
        Report::Corr => {
            let rep = match layer_correlations(net, a.last_rows, 0, *seed) {
                Ok(r) => r,
                // Not a 3-layer net: all same-group profile pairs instead.
                Err(mfgrow::Error::Structure(_)) => {
                    let p = compute_partition(net.arch())?;
                    let mut profiles = Vec::new();
                    for w in net.arch().weights() {
                        for &axis in w.axes() {
                            profiles.push(profile(net, &p, &w.name, axis, Reducer::Mean)?);
                        }
                    }
                    correlation_matrix(&profiles, net.parametrization(), 0, *seed)?
                }
                Err(e) => return Err(e.into()),
            };
            let csv = rep.to_csv();
            write(&dir.join("correlation.csv"), &csv)?;
            print!("{csv}");
        }
        Report::Heatmap => {
            let h = heatmap_export(net, &a.weight, a.normalize)?;
            let grid = format!("heatmap_{}.txt", a.weight);
            write(&dir.join(&grid), &h.to_grid())?;
            write(
                &dir.join(format!("heatmap_{}.gp", a.weight)),
                &h.gnuplot_script(&grid, &a.weight),
            )?;
            println!("wrote {}", dir.join(&grid).display());
        }
        Report::Hist => {
            let snaps: Vec<Network> = nets.iter().map(|(_, n)| n.clone()).collect();
            let h = histogram_trajectory(&snaps, &a.weight, a.axis, a.bins)?;
            let csv = h.to_csv();
            write(&dir.join(format!("hist_{}_{}.csv", a.weight, a.axis)), &csv)?;
            for (k, m) in h.means.iter().enumerate() {
                println!("snapshot {k}: mean {m}");
            }
        }
    }
    Ok(0)
}

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> Result<u8> {
    let ck = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let p = compute_partition(ck.network.arch())?;
    let measures = extract_measures(&ck.network, &p)?;
    let Some(m) = a.group.checked_sub(1).and_then(|g| measures.get(g)) else {
        bail!(mfgrow::Error::Param(format!(
            "group {} out of range 1..={}",
            a.group,
            measures.len()
        )));
    };
    let set = draw_indices(
        m,
        a.target,
        &a.strategy.strategy(),
        a.r2,
        &mut Rng::new(cli.seed).substream("sample"),
    )?;
    let dir = out_dir(cli)?;
    write(
        &dir.join(format!("measure_group{}.csv", a.group)),
        &m.to_csv(),
    )?;
    write(
        &dir.join(format!("sampled_group{}.csv", a.group)),
        &m.select(&set.indices).to_csv(),
    )?;
    println!("{}", serde_json::to_string(&set.indices)?);
    Ok(0)
}

fn classification_data(cli: &Cli, a: &ReproduceArgs) -> Result<(Dataset, Dataset, &'static str)> {
    if a.synthetic {
        let (tr, te) = synth_classification(
            a.train_limit.unwrap_or(2000),
            64,
            10,
            1.0,
            &mut Rng::new(cli.seed).substream("synthetic"),
        )?;
        let te = a.test_limit.map_or(te.clone(), |n| te.take(n));
        return Ok((tr, te, "synthetic"));
    }
    let dir = cifar_dir(a.cifar.as_deref())?;
    let (tr, te) = load_cifar10(&dir)?;
    let tr = a.train_limit.map_or(tr.clone(), |n| tr.take(n));
    let te = a.test_limit.map_or(te.clone(), |n| te.take(n));
    Ok((tr, te, "cifar10"))
}

fn report(dir: &Path, s: &Summary) -> Result<u8> {
    let csv = s.to_csv();
    write(&dir.join(format!("{}_summary.csv", s.experiment)), &csv)?;
    print!("{csv}");
    Ok(if s.all_pass() { 0 } else { 1 })
}

fn cmd_reproduce(cli: &Cli, a: &ReproduceArgs) -> Result<u8> {
    let dir = out_dir(cli)?;
    let seeds = |default: usize| -> Vec<u64> {
        (0..a.seeds.unwrap_or(default) as u64)
            .map(|k| cli.seed + k)
            .collect()
    };
    let classify = || {
        let mut c = ClassifyConfig::default();
        if let Some(n) = a.n {
            c.n = n;
        }
        if let Some(e) = a.epochs {
            c.epochs = e;
        }
        c
    };
    match a.name {
        Experiment::FunctionPreservation => {
            report(&dir, &function_preservation(&[2, 3], 1000, cli.seed)?)
        }
        Experiment::Coupling => report(
            &dir,
            &coupling_experiment(a.n.unwrap_or(100_000), cli.seed)?,
        ),
        Experiment::UpdateScaling => {
            let n = a.n.unwrap_or(256);
            report(&dir, &update_scaling(n, 4 * n, &seeds(5), 0.1)?)
        }
        Experiment::TwolayerRegen => {
            let mut cfg = RegenConfig::default();
            if let Some(n) = a.n {
                cfg.n = n;
                cfg.target = 4 * n;
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            report(&dir, &twolayer_regen(&cfg, &seeds(5))?)
        }
        Experiment::Fig1 => {
            let (tr, te, tag) = classification_data(cli, a)?;
            let cfg = classify();
            let (mut s, runs) = accuracy_experiment(&cfg, &tr, &te, &seeds(3), 0.43)?;
            s.experiment = format!("fig1_{tag}");
            for (name, h) in fig1_heatmaps(&runs, Normalize::MinMax)? {
                let grid = format!("fig1_{name}.txt");
                write(&dir.join(&grid), &h.to_grid())?;
                write(
                    &dir.join(format!("fig1_{name}.gp")),
                    &h.gnuplot_script(&grid, &name),
                )?;
            }
            for (p, run) in &runs {
                write(
                    &dir.join(format!("fig1_{p}_seed{}.csv", cli.seed)),
                    &run.log.to_csv(),
                )?;
            }
            report(&dir, &s)
        }
        Experiment::Table1 => {
            let (tr, te, tag) = classification_data(cli, a)?;
            let mut cfg = classify();
            if a.n.is_none() {
                cfg.n = 1000;
            }
            let (mut s, reports) = table1(&cfg, &tr, &te, &seeds(3))?;
            s.experiment = format!("table1_{tag}");
            let mut csv = String::new();
            for (k, r) in reports.iter().enumerate() {
                let body = r.to_csv();
                csv.push_str(if k == 0 {
                    &body
                } else {
                    body.split_once('\n').map_or("", |x| x.1)
                });
            }
            write(&dir.join("table1_correlations.csv"), &csv)?;
            report(&dir, &s)
        }
        Experiment::Fig2Grow | Experiment::Fig2Prune => {
            let (tr, te, tag) = classification_data(cli, a)?;
            let grow = a.name == Experiment::Fig2Grow;
            let mut cfg = if grow {
                Fig2Config::grow()
            } else {
                Fig2Config::prune()
            };
            if let (Some(r1), Some(r2)) = (a.r1, a.r2) {
                cfg.settings = vec![(r1, r2)];
            }
            if let Some(n) = a.n {
                // `--n` sets the smaller width; the larger is 10×.
                if grow {
                    (cfg.n_small, cfg.n_large) = (n, 10 * n);
                } else {
                    (cfg.n_small, cfg.n_large) = (10 * n, n);
                }
            }
            let name = format!("{}_{tag}", if grow { "fig2_grow" } else { "fig2_prune" });
            let mut all = Vec::new();
            let mut last = 0;
            for seed in seeds(1) {
                let (s, logs) = fig2(&name, &cfg, &tr, &te, seed)?;
                for l in &logs {
                    let run = l.meta.get("run").cloned().unwrap_or_default();
                    write(
                        &dir.join(format!("{name}_{run}_seed{seed}.csv")),
                        &l.to_csv(),
                    )?;
                }
                last = last.max(report(&dir, &s)?);
                all.push(s);
            }
            Ok(last)
        }
    }
}
