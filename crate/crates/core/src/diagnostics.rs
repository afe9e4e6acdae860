//! Read-only diagnostics over network snapshots: weight profiles and their
//! cross-layer correlations, sorted heatmaps, profile histograms over
//! training, and the first-step update-size probe.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{build_mlp, compute_partition, Axis, GammaPartition, MlpSpec, Parametrization};
use crate::data::{synth_regression, Dataset, SynthKind};
use crate::error::{Error, Result};
use crate::init::{initialize, nonzero_mean_default};
use crate::net::{Loss, Network};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng::Rng;
use crate::tensor::{Matrix, Tensor, Vector};
use crate::train::batch_gradient;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Mean,
    /// Sum of the first `k` slices of the opposing axis.
    PartialSum(usize),
}

impl std::fmt::Display for Reducer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reducer::Mean => write!(f, "mean"),
            Reducer::PartialSum(k) => write!(f, "sum{k}"),
        }
    }
}

/// A per-index summary of one weight along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub weight: String,
    pub axis: Axis,
    pub reducer: Reducer,
    pub values: Vector,
    /// Partition group of the axis's γ.
    pub group: usize,
}

impl Profile {
    pub fn label(&self) -> String {
        format!("{}.{}.{}", self.weight, self.axis, self.reducer)
    }
}

/// Values indexed by `axis`, reduced over the opposing axis. Vectors are
/// returned as is.
pub fn reduce(t: &Tensor, axis: Axis, reducer: Reducer) -> Result<Vector> {
    match t {
        Tensor::Vector(v) => {
            if axis == Axis::Col {
                return Err(Error::Param("a vector weight has no column axis".into()));
            }
            Ok(v.clone())
        }
        Tensor::Matrix(m) => {
            let (len, other) = match axis {
                Axis::Row => (m.rows(), m.cols()),
                Axis::Col => (m.cols(), m.rows()),
            };
            let at = |i: usize, k: usize| match axis {
                Axis::Row => m.get(i, k),
                Axis::Col => m.get(k, i),
            };
            let take = match reducer {
                Reducer::Mean => other,
                Reducer::PartialSum(k) => {
                    if k == 0 || k > other {
                        return Err(Error::Param(format!(
                            "partial sum over {k} slices but the opposing axis has {other}"
                        )));
                    }
                    k
                }
            };
            Ok(Vector::from_fn(len, |i| {
                let s: f64 = (0..take).map(|k| at(i, k)).sum();
                match reducer {
                    Reducer::Mean => s / other as f64,
                    Reducer::PartialSum(_) => s,
                }
            }))
        }
    }
}

pub fn profile(
    net: &Network,
    partition: &GammaPartition,
    weight: &str,
    axis: Axis,
    reducer: Reducer,
) -> Result<Profile> {
    let t = net
        .get(weight)
        .ok_or_else(|| Error::Param(format!("unknown weight {weight:?}")))?;
    let values = reduce(t, axis, reducer)?;
    let gamma = net.arch().axis_gammas(weight, axis)[0];
    let group = partition
        .group_of(gamma)
        .ok_or_else(|| Error::Structure(format!("γ{gamma} missing from partition")))?;
    Ok(Profile {
        weight: weight.to_string(),
        axis,
        reducer,
        values,
        group,
    })
}

/// |Pearson r|; 0 when either side is constant.
pub fn pearson_abs(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("pearson", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).abs().min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrPair {
    pub a: String,
    pub b: String,
    pub r: f64,
    /// Whether both profiles are indexed by the same Γ group.
    pub same_group: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pairs: Vec<CorrPair>,
    pub parametrization: Parametrization,
    pub step: usize,
    pub seed: u64,
}

impl CorrelationReport {
    pub const HEADER: &'static str = "parametrization,step,seed,a,b,abs_r,same_group";

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.r)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.parametrization, self.step, self.seed, p.a, p.b, p.r, p.same_group
            );
        }
        s
    }
}

/// |r| for every pair of profiles sharing a Γ group.
pub fn correlation_matrix(
    profiles: &[Profile],
    parametrization: Parametrization,
    step: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    let mut pairs = Vec::new();
    for (i, a) in profiles.iter().enumerate() {
        for b in &profiles[i + 1..] {
            if a.group != b.group {
                continue;
            }
            pairs.push(CorrPair {
                a: a.label(),
                b: b.label(),
                r: pearson_abs(&a.values, &b.values)?,
                same_group: true,
            });
        }
    }
    Ok(CorrelationReport {
        pairs,
        parametrization,
        step,
        seed,
    })
}

/// Row labels of the layer-profile table.
pub const FIRST_LAYER: &str = "first";
pub const LAST_LAYER: &str = "last";
/// Column labels: per-row and per-column profiles of the middle matrix.
pub const M_ROW: &str = "M.row";
pub const M_COL: &str = "M.column";

/// The four layer-vs-middle-matrix pairs of a 3-layer net: the first
/// layer's row means (indexed like the middle matrix's columns) and the
/// last layer's per-column sum of its first `last_rows` rows (indexed like
/// the middle matrix's rows), each against both middle profiles. Pairs
/// whose indices belong to different Γ groups are index-aligned only by
/// position and serve as controls.
pub fn layer_correlations(
    net: &Network,
    last_rows: usize,
    step: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    let arch = net.arch();
    let names: Vec<&str> = arch.weights().iter().map(|w| w.name.as_str()).collect();
    if !(names.contains(&"u")
        && names.contains(&"w1")
        && names.contains(&"v")
        && !names.contains(&"w2"))
    {
        return Err(Error::Structure(
            "layer correlations need a 3-layer u → w1 → v network".into(),
        ));
    }
    let partition = compute_partition(arch)?;
    let first = profile(net, &partition, "u", Axis::Row, Reducer::Mean)?;
    let last_reducer = match net.get("v") {
        Some(Tensor::Matrix(m)) => Reducer::PartialSum(last_rows.min(m.rows())),
        _ => Reducer::Mean,
    };
    let last_axis = if matches!(net.get("v"), Some(Tensor::Matrix(_))) {
        Axis::Col
    } else {
        Axis::Row
    };
    let last = profile(net, &partition, "v", last_axis, last_reducer)?;
    let m_row = profile(net, &partition, "w1", Axis::Row, Reducer::Mean)?;
    let m_col = profile(net, &partition, "w1", Axis::Col, Reducer::Mean)?;
    let mut pairs = Vec::new();
    for (ln, lp) in [(FIRST_LAYER, &first), (LAST_LAYER, &last)] {
        for (mn, mp) in [(M_ROW, &m_row), (M_COL, &m_col)] {
            // Unequal widths leave a cross-group pair undefined.
            let r = if lp.values.len() == mp.values.len() {
                pearson_abs(&lp.values, &mp.values)?
            } else {
                f64::NAN
            };
            pairs.push(CorrPair {
                a: ln.to_string(),
                b: mn.to_string(),
                r,
                same_group: lp.group == mp.group,
            });
        }
    }
    Ok(CorrelationReport {
        pairs,
        parametrization: net.parametrization(),
        step,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    MinMax,
    ZScore,
}

impl std::str::FromStr for Normalize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Normalize::MinMax),
            "zscore" => Ok(Normalize::ZScore),
            _ => Err(Error::Param(format!("unknown normalization {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Normalized values, rows and columns already permuted.
    pub values: Matrix,
    /// Source row of each displayed row.
    pub row_order: Vec<usize>,
    pub col_order: Vec<usize>,
}

fn sort_by_profile(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    idx
}

/// Rows and columns sorted ascending by their mean so that row/column
/// structure shows up as banding.
pub fn heatmap(m: &Matrix, normalize: Normalize) -> Heatmap {
    let t = Tensor::Matrix(m.clone());
    let row_order = sort_by_profile(&reduce(&t, Axis::Row, Reducer::Mean).expect("matrix"));
    let col_order = sort_by_profile(&reduce(&t, Axis::Col, Reducer::Mean).expect("matrix"));
    let mut values = m.select(&row_order, &col_order);
    let d = values.data_mut();
    let n = d.len() as f64;
    match normalize {
        Normalize::MinMax => {
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in d.iter_mut() {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.5 };
            }
        }
        Normalize::ZScore => {
            let mean = d.iter().sum::<f64>() / n;
            let sd = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            for v in d.iter_mut() {
                *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
            }
        }
    }
    Heatmap {
        values,
        row_order,
        col_order,
    }
}

pub fn heatmap_export(net: &Network, weight: &str, normalize: Normalize) -> Result<Heatmap> {
    match net.get(weight) {
        Some(Tensor::Matrix(m)) => Ok(heatmap(m, normalize)),
        Some(Tensor::Vector(_)) => Err(Error::Param(format!(
            "{weight:?} is a vector, not a matrix"
        ))),
        None => Err(Error::Param(format!("unknown weight {weight:?}"))),
    }
}

impl Heatmap {
    /// Whitespace-separated grid, one matrix row per line.
    pub fn to_grid(&self) -> String {
        let mut s = String::new();
        for i in 0..self.values.rows() {
            let row: Vec<String> = self
                .values
                .row(i)
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn gnuplot_script(&self, grid_file: &str, title: &str) -> String {
        format!(
            "set title \"{title}\"\nset xlabel \"column (sorted)\"\nset ylabel \"row (sorted)\"\n\
             set yrange [] reverse\nset palette grey\nplot \"{grid_file}\" matrix with image notitle\n"
        )
    }
}

/// Histograms of one profile across snapshots, on bins shared by all.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramTrajectory {
    pub edges: Vec<f64>,
    /// `counts[s][b]` for snapshot `s`, bin `b`.
    pub counts: Vec<Vec<usize>>,
    pub means: Vec<f64>,
}

impl HistogramTrajectory {
    pub const HEADER: &'static str = "snapshot,bin_low,bin_high,count";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for (k, c) in self.counts.iter().enumerate() {
            for (b, n) in c.iter().enumerate() {
                let _ = writeln!(s, "{k},{},{},{n}", self.edges[b], self.edges[b + 1]);
            }
        }
        s
    }
}

pub fn histogram_trajectory(
    nets: &[Network],
    weight: &str,
    axis: Axis,
    bins: usize,
) -> Result<HistogramTrajectory> {
    if nets.is_empty() || bins == 0 {
        return Err(Error::Param(
            "need at least one snapshot and one bin".into(),
        ));
    }
    let shape = nets[0]
        .get(weight)
        .ok_or_else(|| Error::Param(format!("unknown weight {weight:?}")))?
        .shape();
    let mut profiles = Vec::with_capacity(nets.len());
    for (k, n) in nets.iter().enumerate() {
        let t = n
            .get(weight)
            .ok_or_else(|| Error::Param(format!("snapshot {k} lacks {weight:?}")))?;
        if t.shape() != shape {
            return Err(Error::Structure(format!(
                "snapshot {k}: {weight} has shape {:?}, snapshot 0 has {shape:?}",
                t.shape()
            )));
        }
        profiles.push(reduce(t, axis, Reducer::Mean)?);
    }
    let lo = profiles
        .iter()
        .flat_map(|p| p.iter())
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = profiles
        .iter()
        .flat_map(|p| p.iter())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let counts = profiles
        .iter()
        .map(|p| {
            let mut c = vec![0usize; bins];
            for &v in p.iter() {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                c[b] += 1;
            }
            c
        })
        .collect();
    let means = profiles.iter().map(|p| p.mean()).collect();
    Ok(HistogramTrajectory {
        edges,
        counts,
        means,
    })
}

/// Targets for the update-scaling probe's batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    /// `y = sin(x)`. The residual `f − y` is then a width-dependent random
    /// O(1) factor that dominates the spread of per-seed ratios under SP.
    Sine,
    /// `y = f(x) − 1` at initialization, so every residual is exactly 1 at
    /// every width and only the parametrization's scaling remains.
    UnitResidual,
}

/// Mean |Δw1| of the middle matrix of a fresh 3-layer tanh net of width
/// `n` after one SGD step on a 64-point batch with `x ~ U(−π, π)`.
/// Everything except the width is fixed by `seed`.
pub fn update_scaling_probe(
    p: Parametrization,
    n: usize,
    seed: u64,
    lr: f64,
    target: ProbeTarget,
) -> Result<f64> {
    let arch = build_mlp(&MlpSpec::new(3, &[n]).parametrization(p))?;
    let rng = Rng::new(seed);
    let net = initialize(
        &Network::zeros(arch)?,
        &nonzero_mean_default(p),
        &rng.substream("init"),
    )?;
    let mut data = synth_regression(SynthKind::Sine, 64, 0.0, &mut rng.substream("data"))?;
    if target == ProbeTarget::UnitResidual {
        let xs: Vec<f64> = (0..data.len()).map(|i| data.input(i)[0]).collect();
        let ys = xs
            .iter()
            .map(|&x| Ok(net.forward(&[x])?[0] - 1.0))
            .collect::<Result<Vec<f64>>>()?;
        data = Dataset::regression(xs, ys, data.split)?;
    }
    let batch: Vec<usize> = (0..data.len()).collect();
    let mut grads = crate::net::GradientSet::zeros_like(&net);
    batch_gradient(&net, &data, &batch, Loss::Square, &mut grads)?;
    let mut after = net.clone();
    OptimizerState::new(OptimizerKind::Sgd, lr, &net, None)?.apply(&mut after, &grads)?;
    let (a, b) = (
        net.matrix("w1").expect("w1"),
        after.matrix("w1").expect("w1"),
    );
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (y - x).abs())
        .sum();
    Ok(total / a.data().len() as f64)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over seeds of `probe(n_small) / probe(n_large)`.
pub fn update_scaling_ratio(
    p: Parametrization,
    n_small: usize,
    n_large: usize,
    seeds: &[u64],
    lr: f64,
    target: ProbeTarget,
) -> Result<f64> {
    let mut ratios = Vec::with_capacity(seeds.len());
    for &s in seeds {
        ratios.push(
            update_scaling_probe(p, n_small, s, lr, target)?
                / update_scaling_probe(p, n_large, s, lr, target)?,
        );
    }
    Ok(median(&mut ratios))
}
