//! Empirical measures over Γ groups: one sample per index value of the
//! group, carrying every weight slice indexed by it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{Axis, GammaPartition, GammaRole, WeightKind};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::rng::Rng;
use crate::tensor::{Matrix, Tensor, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    /// `v`, `b1`, `R(w1)` or `C(w2)`.
    pub name: String,
    pub weight: String,
    pub axis: Axis,
    /// One scalar per sample: the value itself for vectors, the mean over
    /// the opposing axis for matrix slices.
    pub profile: Vector,
    /// Full matrix slices, sample `i` in row `i`.
    pub slices: Option<Matrix>,
}

impl Feature {
    /// Squared Euclidean norm of sample `i`'s full slice.
    fn norm_sq(&self, i: usize) -> f64 {
        match &self.slices {
            Some(m) => m.row(i).iter().map(|v| v * v).sum(),
            None => self.profile[i] * self.profile[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupMeasure {
    /// Position of the group in the partition.
    pub group: usize,
    pub width: usize,
    pub role: GammaRole,
    pub features: Vec<Feature>,
}

impl GroupMeasure {
    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Euclidean norm of each sample's concatenated features.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.width)
            .map(|i| {
                self.features
                    .iter()
                    .map(|f| f.norm_sq(i))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// The measure restricted to (or resampled at) `indices`; profiles only.
    pub fn select(&self, indices: &[usize]) -> GroupMeasure {
        GroupMeasure {
            group: self.group,
            width: indices.len(),
            role: self.role,
            features: self
                .features
                .iter()
                .map(|f| Feature {
                    name: f.name.clone(),
                    weight: f.weight.clone(),
                    axis: f.axis,
                    profile: f.profile.select(indices),
                    slices: None,
                })
                .collect(),
        }
    }

    /// One row per sample, one column per feature profile.
    pub fn to_csv(&self) -> String {
        let names: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        let mut s = format!("index,{}\n", names.join(","));
        for i in 0..self.width {
            let _ = write!(s, "{i}");
            for f in &self.features {
                let _ = write!(s, ",{}", f.profile[i]);
            }
            s.push('\n');
        }
        s
    }
}

fn feature_name(weight: &str, kind: WeightKind, axis: Axis) -> String {
    match (kind, axis) {
        (WeightKind::Vector, _) => weight.to_string(),
        (WeightKind::Matrix, Axis::Row) => format!("R({weight})"),
        (WeightKind::Matrix, Axis::Col) => format!("C({weight})"),
    }
}

/// One measure per Γ group, with `width` joint samples each.
pub fn extract_measures(net: &Network, partition: &GammaPartition) -> Result<Vec<GroupMeasure>> {
    let arch = net.arch();
    let mut out: Vec<GroupMeasure> = partition
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| GroupMeasure {
            group: i,
            width: g.width,
            role: g.role,
            features: Vec::new(),
        })
        .collect();
    for w in arch.weights() {
        for &axis in w.axes() {
            let gammas = arch.axis_gammas(&w.name, axis);
            let gi = partition.group_of(gammas[0]).ok_or_else(|| {
                Error::Structure(format!("γ{} missing from partition", gammas[0]))
            })?;
            if gammas.iter().any(|&g| partition.group_of(g) != Some(gi)) {
                return Err(Error::Structure(format!(
                    "partition splits weight {:?} axis {axis}",
                    w.name
                )));
            }
            let t = net
                .get(&w.name)
                .ok_or_else(|| Error::Structure(format!("network lacks weight {:?}", w.name)))?;
            let (profile, slices) = match (t, axis) {
                (Tensor::Vector(v), _) => (v.clone(), None),
                (Tensor::Matrix(m), Axis::Row) => (row_means(m), Some(m.clone())),
                (Tensor::Matrix(m), Axis::Col) => {
                    let mt = m.transpose();
                    (row_means(&mt), Some(mt))
                }
            };
            out[gi].features.push(Feature {
                name: feature_name(&w.name, w.kind, axis),
                weight: w.name.clone(),
                axis,
                profile,
                slices,
            });
        }
    }
    Ok(out)
}

fn row_means(m: &Matrix) -> Vector {
    Vector::from_fn(m.rows(), |i| m.row(i).iter().sum::<f64>() / m.cols() as f64)
}

/// Rebuilds the weights of `template` from the measures' full slices.
pub fn reassemble(template: &Network, measures: &[GroupMeasure]) -> Result<Network> {
    let mut net = template.clone();
    let mut done = BTreeSet::new();
    for m in measures {
        for f in &m.features {
            if !done.insert(f.weight.clone()) {
                continue;
            }
            let t = match (&f.slices, f.axis) {
                (None, _) => Tensor::Vector(f.profile.clone()),
                (Some(s), Axis::Row) => Tensor::Matrix(s.clone()),
                (Some(s), Axis::Col) => Tensor::Matrix(s.transpose()),
            };
            net.set(&f.weight, t)?;
        }
    }
    Ok(net)
}

/// `Σ_{q=1..p} | mean|a|^q − mean|b|^q |`.
pub fn moment_loss(a: &[f64], b: &[f64], p: u32) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Param("moment loss of an empty feature".into()));
    }
    if p == 0 {
        return Err(Error::Param("moment order p must be >= 1".into()));
    }
    Ok((1..=p)
        .map(|q| (abs_moment(a, q as f64) - abs_moment(b, q as f64)).abs())
        .sum())
}

fn abs_moment(a: &[f64], q: f64) -> f64 {
    a.iter().map(|x| x.abs().powf(q)).sum::<f64>() / a.len() as f64
}

fn indicator_mean(a: &[f64], p: f64, q: f64) -> f64 {
    a.iter().filter(|x| x.abs().powf(p) >= q).count() as f64 / a.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `|mean|x|^p − mean|y|^p|`.
    Moment { p: f64 },
    /// `|mean 1{|x|^p ≥ q} − mean 1{|y|^p ≥ q}|`.
    Indicator { p: f64, q: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    #[serde(flatten)]
    pub kind: TestFunction,
    pub weight: f64,
}

impl TestFunctionSpec {
    pub fn moment(p: f64, weight: f64) -> Self {
        Self {
            kind: TestFunction::Moment { p },
            weight,
        }
    }

    pub fn indicator(p: f64, q: f64, weight: f64) -> Self {
        Self {
            kind: TestFunction::Indicator { p, q },
            weight,
        }
    }

    /// Moments of order `1..=p`, each with weight 1.
    pub fn moments_up_to(p: u32) -> Vec<Self> {
        (1..=p).map(|q| Self::moment(q as f64, 1.0)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.weight > 0.0
            && match self.kind {
                TestFunction::Moment { p } => p >= 1.0,
                TestFunction::Indicator { p, q } => p >= 1.0 && q > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("invalid test function {self:?}")))
        }
    }

    fn discrepancy(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            TestFunction::Moment { p } => (abs_moment(a, p) - abs_moment(b, p)).abs(),
            TestFunction::Indicator { p, q } => {
                (indicator_mean(a, p, q) - indicator_mean(b, p, q)).abs()
            }
        }
    }
}

/// `Σ_j w_j Σ_f φ_j(x_f, y_f)` over the features of `x`, which must all be
/// present in `y`.
pub fn weighted_measure_loss(
    x: &GroupMeasure,
    y: &GroupMeasure,
    specs: &[TestFunctionSpec],
) -> Result<f64> {
    if x.features.len() != y.features.len() {
        return Err(Error::Param(format!(
            "feature sets differ: {} vs {} features",
            x.features.len(),
            y.features.len()
        )));
    }
    let mut total = 0.0;
    for s in specs {
        s.validate()?;
    }
    for fx in &x.features {
        let fy = y
            .feature(&fx.name)
            .ok_or_else(|| Error::Param(format!("unknown feature {:?}", fx.name)))?;
        if fx.profile.is_empty() || fy.profile.is_empty() {
            return Err(Error::Param(format!("feature {:?} is empty", fx.name)));
        }
        for s in specs {
            total += s.weight * s.discrepancy(&fx.profile, &fy.profile);
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Index `i` maps to `pool[i mod |pool|]`: tiling, so growth by an
    /// integer factor repeats every sample equally often.
    Duplicate,
    Random,
    /// Norm-sorted groups; pick a group, then a sample inside it.
    Group {
        n_groups: usize,
    },
    /// Best of `n_candidates` random draws under the weighted measure loss.
    FunctionBased {
        n_candidates: usize,
        specs: Vec<TestFunctionSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    pub group: usize,
    pub indices: Vec<usize>,
}

impl IndexSet {
    pub fn identity(group: usize, width: usize) -> Self {
        Self {
            group,
            indices: (0..width).collect(),
        }
    }
}

/// Samples surviving the norm filter: the `⌈(1−r2)·width⌉` largest norms,
/// ties broken towards the lower index, returned in ascending index order.
pub fn norm_pool(m: &GroupMeasure, r2: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&r2) {
        return Err(Error::Param(format!("r2 = {r2} must lie in [0, 1)")));
    }
    if r2 == 0.0 {
        return Ok((0..m.width).collect());
    }
    let keep = ((1.0 - r2) * m.width as f64 - 1e-9).ceil().max(0.0) as usize;
    if keep == 0 {
        return Err(Error::Param(format!(
            "r2 = {r2} leaves no samples out of {}",
            m.width
        )));
    }
    let norms = m.norms();
    let mut order: Vec<usize> = (0..m.width).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut pool = order[..keep].to_vec();
    pool.sort_unstable();
    Ok(pool)
}

fn random_draw(pool: &[usize], target: usize, rng: &mut Rng) -> Vec<usize> {
    if target > pool.len() {
        (0..target).map(|_| pool[rng.below(pool.len())]).collect()
    } else {
        let mut p = pool.to_vec();
        for i in 0..target {
            let j = i + rng.below(p.len() - i);
            p.swap(i, j);
        }
        p.truncate(target);
        p.sort_unstable();
        p
    }
}

/// Splits `n` into `k` near-equal contiguous chunk sizes.
fn chunk_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

fn group_draw(
    m: &GroupMeasure,
    pool: &[usize],
    target: usize,
    n_groups: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if n_groups == 0 {
        return Err(Error::Param("n_groups must be >= 1".into()));
    }
    let norms = m.norms();
    let mut sorted = pool.to_vec();
    sorted.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    let k = n_groups.min(sorted.len());
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for size in chunk_sizes(sorted.len(), k) {
        groups.push(&sorted[start..start + size]);
        start += size;
    }
    if target > pool.len() {
        // Group chosen with probability proportional to its size.
        let mut out = Vec::with_capacity(target);
        for _ in 0..target {
            let mut r = rng.below(sorted.len());
            let g = groups
                .iter()
                .find(|g| {
                    if r < g.len() {
                        true
                    } else {
                        r -= g.len();
                        false
                    }
                })
                .expect("r < total size");
            out.push(g[rng.below(g.len())]);
        }
        Ok(out)
    } else {
        // Stratified: each group keeps its share, without replacement.
        let mut out = Vec::with_capacity(target);
        let quotas = largest_remainder(&groups.iter().map(|g| g.len()).collect::<Vec<_>>(), target);
        for (g, q) in groups.iter().zip(quotas) {
            out.extend(random_draw(g, q, rng));
        }
        out.sort_unstable();
        Ok(out)
    }
}

fn largest_remainder(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut q: Vec<usize> = sizes.iter().map(|s| s * target / total).collect();
    let mut rem: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, s)| ((s * target) % total, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = target - q.iter().sum::<usize>();
    for (_, i) in rem {
        if left == 0 {
            break;
        }
        q[i] += 1;
        left -= 1;
    }
    q
}

/// Every candidate drawn by function-based sampling with its loss against
/// the source measure, in draw order.
pub fn function_based_candidates(
    m: &GroupMeasure,
    pool: &[usize],
    target: usize,
    n_candidates: usize,
    specs: &[TestFunctionSpec],
    rng: &mut Rng,
) -> Result<Vec<(Vec<usize>, f64)>> {
    if n_candidates == 0 {
        return Err(Error::Param("n_candidates must be >= 1".into()));
    }
    (0..n_candidates)
        .map(|_| {
            let idx = random_draw(pool, target, rng);
            let loss = weighted_measure_loss(m, &m.select(&idx), specs)?;
            Ok((idx, loss))
        })
        .collect()
}

pub fn draw_indices(
    m: &GroupMeasure,
    target: usize,
    strategy: &Strategy,
    r2: f64,
    rng: &mut Rng,
) -> Result<IndexSet> {
    if target == 0 {
        return Err(Error::Param("target width must be >= 1".into()));
    }
    let pool = norm_pool(m, r2)?;
    let indices = match strategy {
        Strategy::Duplicate => (0..target).map(|i| pool[i % pool.len()]).collect(),
        Strategy::Random => random_draw(&pool, target, rng),
        Strategy::Group { n_groups } => group_draw(m, &pool, target, *n_groups, rng)?,
        Strategy::FunctionBased {
            n_candidates,
            specs,
        } => {
            let cands = function_based_candidates(m, &pool, target, *n_candidates, specs, rng)?;
            let mut best = 0;
            for (i, c) in cands.iter().enumerate() {
                if c.1 < cands[best].1 {
                    best = i;
                }
            }
            cands.into_iter().nth(best).unwrap().0
        }
    };
    Ok(IndexSet {
        group: m.group,
        indices,
    })
}

/// `(mean(u·v), mean(u)·mean(v))`: the pair integrated against the joint
/// empirical measure versus the product of its marginals.
pub fn coupling_contrast(u: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    if u.len() != v.len() {
        return Err(Error::shape("coupling_contrast", u.len(), v.len()));
    }
    if u.len() < 2 {
        return Err(Error::Param("coupling contrast needs N >= 2".into()));
    }
    let n = u.len() as f64;
    let joint = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / n;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    Ok((joint, mu * mv))
}
