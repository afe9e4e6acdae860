//! Symbolic architectures: weights, the γ index variable carried by each
//! axis usage, and the Γ partition of those variables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::union_find::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Parametrization {
    #[serde(rename = "SP", alias = "sp")]
    Sp,
    #[serde(rename = "muP", alias = "mup")]
    MuP,
    #[serde(rename = "MFP", alias = "mfp")]
    Mfp,
}

impl Parametrization {
    pub const ALL: [Parametrization; 3] = [
        Parametrization::Sp,
        Parametrization::MuP,
        Parametrization::Mfp,
    ];

    pub fn code(self) -> u8 {
        match self {
            Parametrization::Sp => 0,
            Parametrization::MuP => 1,
            Parametrization::Mfp => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Parametrization::Sp),
            1 => Some(Parametrization::MuP),
            2 => Some(Parametrization::Mfp),
            _ => None,
        }
    }

    /// Forward scalar for a sum over an axis of width `fan`.
    pub fn scale(self, fan: usize, output_layer: bool) -> f64 {
        let n = fan as f64;
        match (self, output_layer) {
            (Parametrization::Mfp, _) | (Parametrization::MuP, true) => 1.0 / n,
            _ => 1.0 / n.sqrt(),
        }
    }
}

impl fmt::Display for Parametrization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parametrization::Sp => "SP",
            Parametrization::MuP => "muP",
            Parametrization::Mfp => "MFP",
        })
    }
}

impl std::str::FromStr for Parametrization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sp" => Ok(Parametrization::Sp),
            "mup" | "μp" => Ok(Parametrization::MuP),
            "mfp" | "mf" => Ok(Parametrization::Mfp),
            _ => Err(Error::Param(format!("unknown parametrization {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Matrix,
    Vector,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDecl {
    pub name: String,
    pub kind: WeightKind,
    pub shape: Vec<usize>,
}

impl WeightDecl {
    pub fn matrix(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: WeightKind::Matrix,
            shape: vec![rows, cols],
        }
    }

    pub fn vector(name: &str, len: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: WeightKind::Vector,
            shape: vec![len],
        }
    }

    pub fn axis_len(&self, axis: Axis) -> usize {
        match axis {
            Axis::Row => self.shape[0],
            Axis::Col => self.shape[1],
        }
    }

    pub fn axes(&self) -> &'static [Axis] {
        match self.kind {
            WeightKind::Matrix => &[Axis::Row, Axis::Col],
            WeightKind::Vector => &[Axis::Row],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Col,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Row => "row",
            Axis::Col => "col",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(Axis::Row),
            "col" | "column" => Ok(Axis::Col),
            _ => Err(Error::Param(format!("unknown axis '{s}' (row|col)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisUsage {
    pub weight: String,
    pub axis: Axis,
    pub gamma: usize,
}

impl AxisUsage {
    pub fn new(weight: &str, axis: Axis, gamma: usize) -> Self {
        Self {
            weight: weight.to_string(),
            axis,
            gamma,
        }
    }
}

/// Hidden γ variables scale with width; data γ variables are pinned to the
/// input/output dimension and are never resized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRole {
    #[default]
    Hidden,
    Data,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaVar {
    pub id: usize,
    pub width: usize,
    #[serde(default)]
    pub role: GammaRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }
}

/// One step of a forward program. Node 0 is the network input; op `i`
/// produces node `i + 1`; the last node is the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    /// `scale · W h`, summed over the column axis.
    Dense {
        weight: String,
        input: usize,
    },
    /// `u · x` for a scalar input.
    Embed {
        weight: String,
        input: usize,
    },
    /// `scale · Σ v_i h_i`, a scalar output.
    Readout {
        weight: String,
        input: usize,
    },
    Bias {
        weight: String,
        input: usize,
    },
    Act {
        input: usize,
        act: Activation,
    },
    Add {
        inputs: Vec<usize>,
    },
}

impl Op {
    pub fn weight(&self) -> Option<&str> {
        match self {
            Op::Dense { weight, .. }
            | Op::Embed { weight, .. }
            | Op::Readout { weight, .. }
            | Op::Bias { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Dense { input, .. }
            | Op::Embed { input, .. }
            | Op::Readout { input, .. }
            | Op::Bias { input, .. }
            | Op::Act { input, .. } => vec![*input],
            Op::Add { inputs } => inputs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchFile {
    weights: Vec<WeightDecl>,
    usages: Vec<AxisUsage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gammas: Option<Vec<GammaVar>>,
    parametrization: Parametrization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    forward: Option<Vec<Op>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArchFile", into = "ArchFile")]
pub struct ArchGraph {
    weights: Vec<WeightDecl>,
    usages: Vec<AxisUsage>,
    gammas: Vec<GammaVar>,
    parametrization: Parametrization,
    forward: Option<Vec<Op>>,
}

impl TryFrom<ArchFile> for ArchGraph {
    type Error = Error;
    fn try_from(f: ArchFile) -> Result<Self> {
        let gammas = match f.gammas {
            Some(g) => g,
            None => infer_gammas(&f.weights, &f.usages)?,
        };
        ArchGraph::new(f.weights, f.usages, gammas, f.parametrization, f.forward)
    }
}

impl From<ArchGraph> for ArchFile {
    fn from(g: ArchGraph) -> Self {
        ArchFile {
            weights: g.weights,
            usages: g.usages,
            gammas: Some(g.gammas),
            parametrization: g.parametrization,
            forward: g.forward,
        }
    }
}

// Width from the axis a γ first indexes; width-1 γs default to data.
fn infer_gammas(weights: &[WeightDecl], usages: &[AxisUsage]) -> Result<Vec<GammaVar>> {
    let mut out: BTreeMap<usize, usize> = BTreeMap::new();
    for u in usages {
        let w = weights.iter().find(|w| w.name == u.weight).ok_or_else(|| {
            Error::Structure(format!("usage refers to unknown weight {:?}", u.weight))
        })?;
        if u.axis == Axis::Col && w.kind == WeightKind::Vector {
            return Err(Error::Structure(format!(
                "vector weight {:?} has no col axis",
                w.name
            )));
        }
        out.entry(u.gamma).or_insert(w.axis_len(u.axis));
    }
    Ok(out
        .into_iter()
        .map(|(id, width)| GammaVar {
            id,
            width,
            role: if width == 1 {
                GammaRole::Data
            } else {
                GammaRole::Hidden
            },
        })
        .collect())
}

impl ArchGraph {
    pub fn new(
        weights: Vec<WeightDecl>,
        usages: Vec<AxisUsage>,
        gammas: Vec<GammaVar>,
        parametrization: Parametrization,
        forward: Option<Vec<Op>>,
    ) -> Result<Self> {
        let g = Self {
            weights,
            usages,
            gammas,
            parametrization,
            forward,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serialises")
    }

    pub fn weights(&self) -> &[WeightDecl] {
        &self.weights
    }

    pub fn usages(&self) -> &[AxisUsage] {
        &self.usages
    }

    pub fn gammas(&self) -> &[GammaVar] {
        &self.gammas
    }

    pub fn parametrization(&self) -> Parametrization {
        self.parametrization
    }

    pub fn forward(&self) -> Option<&[Op]> {
        self.forward.as_deref()
    }

    pub fn with_parametrization(&self, p: Parametrization) -> ArchGraph {
        ArchGraph {
            parametrization: p,
            ..self.clone()
        }
    }

    /// Same graph with usages in a different order.
    pub fn with_usages(&self, usages: Vec<AxisUsage>) -> Result<ArchGraph> {
        ArchGraph::new(
            self.weights.clone(),
            usages,
            self.gammas.clone(),
            self.parametrization,
            self.forward.clone(),
        )
    }

    pub fn weight(&self, name: &str) -> Option<&WeightDecl> {
        self.weights.iter().find(|w| w.name == name)
    }

    pub fn gamma(&self, id: usize) -> Option<&GammaVar> {
        self.gammas.iter().find(|g| g.id == id)
    }

    /// Distinct γ ids used at `(weight, axis)`, ascending.
    pub fn axis_gammas(&self, weight: &str, axis: Axis) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .usages
            .iter()
            .filter(|u| u.weight == weight && u.axis == axis)
            .map(|u| u.gamma)
            .collect();
        set.into_iter().collect()
    }

    pub fn axis_role(&self, weight: &str, axis: Axis) -> GammaRole {
        let any_data = self
            .axis_gammas(weight, axis)
            .iter()
            .any(|&id| self.gamma(id).map(|g| g.role) == Some(GammaRole::Data));
        if any_data {
            GammaRole::Data
        } else {
            GammaRole::Hidden
        }
    }

    /// Widths of the hidden axes of `weight`.
    pub fn hidden_axis_widths(&self, weight: &str) -> Vec<usize> {
        let Some(w) = self.weight(weight) else {
            return Vec::new();
        };
        w.axes()
            .iter()
            .filter(|&&a| self.axis_role(weight, a) == GammaRole::Hidden)
            .map(|&a| w.axis_len(a))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for w in &self.weights {
            if !names.insert(w.name.as_str()) {
                return Err(Error::Structure(format!("duplicate weight {:?}", w.name)));
            }
            let ndim = match w.kind {
                WeightKind::Matrix => 2,
                WeightKind::Vector => 1,
            };
            if w.shape.len() != ndim || w.shape.contains(&0) {
                return Err(Error::Structure(format!(
                    "weight {:?}: shape {:?} invalid for a {:?}",
                    w.name, w.shape, w.kind
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for g in &self.gammas {
            if !ids.insert(g.id) {
                return Err(Error::Structure(format!("duplicate γ id {}", g.id)));
            }
            if g.width == 0 {
                return Err(Error::Structure(format!("γ{} has width 0", g.id)));
            }
        }
        let mut covered = BTreeSet::new();
        let mut used_gammas = BTreeSet::new();
        for u in &self.usages {
            let w = self.weight(&u.weight).ok_or_else(|| {
                Error::Structure(format!("usage refers to unknown weight {:?}", u.weight))
            })?;
            if u.axis == Axis::Col && w.kind == WeightKind::Vector {
                return Err(Error::Structure(format!(
                    "vector weight {:?} has no col axis",
                    w.name
                )));
            }
            let g = self
                .gamma(u.gamma)
                .ok_or_else(|| Error::Structure(format!("usage refers to unknown γ{}", u.gamma)))?;
            let len = w.axis_len(u.axis);
            if g.width != len {
                return Err(Error::Structure(format!(
                    "width conflict at weight {:?} axis {}: γ{} has width {} but the axis has {}",
                    w.name, u.axis, g.id, g.width, len
                )));
            }
            covered.insert((u.weight.as_str(), u.axis));
            used_gammas.insert(u.gamma);
        }
        for w in &self.weights {
            for &a in w.axes() {
                if !covered.contains(&(w.name.as_str(), a)) {
                    return Err(Error::Structure(format!(
                        "weight {:?} axis {} has no usage",
                        w.name, a
                    )));
                }
            }
        }
        if let Some(g) = self.gammas.iter().find(|g| !used_gammas.contains(&g.id)) {
            return Err(Error::Structure(format!("γ{} appears in no usage", g.id)));
        }
        if let Some(ops) = &self.forward {
            self.check_forward(ops)?;
        }
        Ok(())
    }

    fn check_forward(&self, ops: &[Op]) -> Result<()> {
        if ops.is_empty() {
            return Err(Error::Structure("empty forward program".into()));
        }
        let mut sizes: Vec<Option<usize>> = vec![None];
        for (i, op) in ops.iter().enumerate() {
            for &inp in &op.inputs() {
                if inp > i {
                    return Err(Error::Structure(format!(
                        "op {i} reads node {inp}, which is not computed yet"
                    )));
                }
            }
            let weight = match op.weight() {
                Some(name) => Some(self.weight(name).ok_or_else(|| {
                    Error::Structure(format!("op {i} uses unknown weight {name:?}"))
                })?),
                None => None,
            };
            let kind_err = |want: &str| {
                Error::Structure(format!(
                    "op {i} needs a {want} weight, got {:?}",
                    op.weight()
                ))
            };
            let need = |node: usize, len: usize, sizes: &mut Vec<Option<usize>>| -> Result<()> {
                match sizes[node] {
                    None if node == 0 => {
                        sizes[0] = Some(len);
                        Ok(())
                    }
                    Some(s) if s == len => Ok(()),
                    s => Err(Error::Structure(format!(
                        "op {i}: node {node} has size {s:?}, expected {len}"
                    ))),
                }
            };
            let out = match op {
                Op::Dense { input, .. } => {
                    let w = weight.unwrap();
                    if w.kind != WeightKind::Matrix {
                        return Err(kind_err("matrix"));
                    }
                    need(*input, w.shape[1], &mut sizes)?;
                    w.shape[0]
                }
                Op::Embed { input, .. } => {
                    let w = weight.unwrap();
                    if w.kind != WeightKind::Vector {
                        return Err(kind_err("vector"));
                    }
                    need(*input, 1, &mut sizes)?;
                    w.shape[0]
                }
                Op::Readout { input, .. } => {
                    let w = weight.unwrap();
                    if w.kind != WeightKind::Vector {
                        return Err(kind_err("vector"));
                    }
                    need(*input, w.shape[0], &mut sizes)?;
                    1
                }
                Op::Bias { input, .. } => {
                    let w = weight.unwrap();
                    if w.kind != WeightKind::Vector {
                        return Err(kind_err("vector"));
                    }
                    need(*input, w.shape[0], &mut sizes)?;
                    w.shape[0]
                }
                Op::Act { input, .. } => sizes[*input]
                    .ok_or_else(|| Error::Structure(format!("op {i}: input size unknown")))?,
                Op::Add { inputs } => {
                    let first = *inputs
                        .first()
                        .ok_or_else(|| Error::Structure(format!("op {i}: add without inputs")))?;
                    let s = sizes[first]
                        .ok_or_else(|| Error::Structure(format!("op {i}: input size unknown")))?;
                    for &inp in inputs {
                        need(inp, s, &mut sizes)?;
                    }
                    s
                }
            };
            sizes.push(Some(out));
        }
        if sizes[0].is_none() {
            return Err(Error::Structure(
                "forward program never reads the input".into(),
            ));
        }
        Ok(())
    }

    /// Input and output dimension of the forward program.
    pub fn io_dims(&self) -> Option<(usize, usize)> {
        let ops = self.forward.as_ref()?;
        let mut sizes = vec![0usize];
        for op in ops {
            let s = match op {
                Op::Dense { weight, input } => {
                    let w = self.weight(weight)?;
                    if *input == 0 {
                        sizes[0] = w.shape[1];
                    }
                    w.shape[0]
                }
                Op::Embed { weight, input } => {
                    if *input == 0 {
                        sizes[0] = 1;
                    }
                    self.weight(weight)?.shape[0]
                }
                Op::Readout { .. } => 1,
                Op::Bias { input, .. } | Op::Act { input, .. } => sizes[*input],
                Op::Add { inputs } => sizes[inputs[0]],
            };
            sizes.push(s);
        }
        Some((sizes[0], *sizes.last().unwrap()))
    }

    /// The forward scalar applied by `op`.
    pub fn op_scale(&self, op: &Op) -> f64 {
        let p = self.parametrization;
        match op {
            Op::Dense { weight, .. } => {
                let w = self.weight(weight).expect("validated");
                let output = self.axis_role(weight, Axis::Row) == GammaRole::Data;
                p.scale(w.shape[1], output)
            }
            Op::Readout { weight, .. } => {
                let w = self.weight(weight).expect("validated");
                p.scale(w.shape[0], true)
            }
            _ => 1.0,
        }
    }

    /// Rebuilds the graph with every γ in partition group `i` resized to
    /// `widths[i]`.
    pub fn with_group_widths(
        &self,
        partition: &GammaPartition,
        widths: &[usize],
    ) -> Result<ArchGraph> {
        if widths.len() != partition.groups.len() {
            return Err(Error::Param(format!(
                "{} target widths for {} groups",
                widths.len(),
                partition.groups.len()
            )));
        }
        let mut gammas = self.gammas.clone();
        for g in &mut gammas {
            let gi = partition
                .group_of(g.id)
                .ok_or_else(|| Error::Structure(format!("γ{} missing from partition", g.id)))?;
            g.width = widths[gi];
        }
        let width_of = |id: usize| gammas.iter().find(|g| g.id == id).map(|g| g.width);
        let mut weights = self.weights.clone();
        for w in &mut weights {
            for (k, &a) in w.axes().iter().enumerate() {
                let id = self
                    .usages
                    .iter()
                    .find(|u| u.weight == w.name && u.axis == a)
                    .map(|u| u.gamma)
                    .expect("validated");
                w.shape[k] = width_of(id).expect("validated");
            }
        }
        ArchGraph::new(
            weights,
            self.usages.clone(),
            gammas,
            self.parametrization,
            self.forward.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaGroup {
    pub members: Vec<usize>,
    pub width: usize,
    pub role: GammaRole,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaPartition {
    pub groups: Vec<GammaGroup>,
}

impl GammaPartition {
    pub fn group_of(&self, gamma: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.members.contains(&gamma))
    }

    /// Member sets only, for structural comparison.
    pub fn sets(&self) -> Vec<Vec<usize>> {
        self.groups.iter().map(|g| g.members.clone()).collect()
    }

    pub fn hidden_groups(&self) -> impl Iterator<Item = (usize, &GammaGroup)> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.role == GammaRole::Hidden)
    }
}

impl fmt::Display for GammaPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.groups.iter().enumerate() {
            let members: Vec<String> = g.members.iter().map(|m| format!("γ{m}")).collect();
            writeln!(
                f,
                "Γ_{}: {{{}}} width={}",
                i + 1,
                members.join(", "),
                g.width
            )?;
        }
        Ok(())
    }
}

/// Finest partition of the γ ids in which every `(weight, axis)` position
/// has all of its γ ids in one group.
pub fn compute_partition(g: &ArchGraph) -> Result<GammaPartition> {
    let ids: Vec<usize> = {
        let mut v: Vec<usize> = g.gammas.iter().map(|x| x.id).collect();
        v.sort_unstable();
        v
    };
    let slot = |id: usize| ids.binary_search(&id).expect("validated γ id");
    let width = |id: usize| g.gamma(id).expect("validated γ id").width;

    let mut uf = UnionFind::new(ids.len());
    let mut first_at: BTreeMap<(&str, Axis), usize> = BTreeMap::new();
    for u in &g.usages {
        let key = (u.weight.as_str(), u.axis);
        match first_at.get(&key) {
            None => {
                first_at.insert(key, u.gamma);
            }
            Some(&rep) => {
                if width(rep) != width(u.gamma) {
                    return Err(Error::Structure(format!(
                        "width conflict at weight {:?} axis {}: γ{} (width {}) vs γ{} (width {})",
                        u.weight,
                        u.axis,
                        rep,
                        width(rep),
                        u.gamma,
                        width(u.gamma)
                    )));
                }
                uf.union(slot(rep), slot(u.gamma));
            }
        }
    }

    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &id in &ids {
        by_root.entry(uf.find(slot(id))).or_default().push(id);
    }
    let mut groups: Vec<GammaGroup> = by_root
        .into_values()
        .map(|members| {
            let role = if members
                .iter()
                .any(|&m| g.gamma(m).map(|x| x.role) == Some(GammaRole::Data))
            {
                GammaRole::Data
            } else {
                GammaRole::Hidden
            };
            GammaGroup {
                width: width(members[0]),
                members,
                role,
            }
        })
        .collect();
    groups.sort_by_key(|grp| grp.members[0]);
    Ok(GammaPartition { groups })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Number of weight layers; 2 gives `u, v`.
    pub depth: usize,
    /// One width per hidden layer, or a single width for all.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub with_bias: bool,
    #[serde(default)]
    pub with_skip: bool,
    #[serde(default = "one")]
    pub d_in: usize,
    #[serde(default = "one")]
    pub d_out: usize,
    #[serde(default = "tanh")]
    pub activation: Activation,
    #[serde(default = "mfp")]
    pub parametrization: Parametrization,
}

fn one() -> usize {
    1
}
fn tanh() -> Activation {
    Activation::Tanh
}
fn mfp() -> Parametrization {
    Parametrization::Mfp
}

impl MlpSpec {
    pub fn new(depth: usize, widths: &[usize]) -> Self {
        Self {
            depth,
            widths: widths.to_vec(),
            with_bias: false,
            with_skip: false,
            d_in: 1,
            d_out: 1,
            activation: Activation::Tanh,
            parametrization: Parametrization::Mfp,
        }
    }

    pub fn bias(mut self, on: bool) -> Self {
        self.with_bias = on;
        self
    }

    pub fn skip(mut self, on: bool) -> Self {
        self.with_skip = on;
        self
    }

    pub fn dims(mut self, d_in: usize, d_out: usize) -> Self {
        self.d_in = d_in;
        self.d_out = d_out;
        self
    }

    pub fn activation(mut self, act: Activation) -> Self {
        self.activation = act;
        self
    }

    pub fn parametrization(mut self, p: Parametrization) -> Self {
        self.parametrization = p;
        self
    }

    fn hidden_widths(&self) -> Result<Vec<usize>> {
        let h = self.depth - 1;
        let w = match self.widths.len() {
            1 => vec![self.widths[0]; h],
            n if n == h => self.widths.clone(),
            n => {
                return Err(Error::Param(format!(
                    "depth {} needs {h} hidden widths (or one), got {n}",
                    self.depth
                )))
            }
        };
        if w.contains(&0) || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Param("widths and dims must be positive".into()));
        }
        Ok(w)
    }
}

/// Name of the `k`-th hidden matrix (1-based).
pub fn hidden_name(k: usize) -> String {
    format!("w{k}")
}

/// Chain `u → w1 → … → v`. Hidden γ ids are `1..=depth-1`; the output γ
/// follows, then the input γ when `d_in > 1`.
pub fn build_mlp(spec: &MlpSpec) -> Result<ArchGraph> {
    if spec.depth < 2 {
        return Err(Error::Param(format!(
            "depth must be >= 2, got {}",
            spec.depth
        )));
    }
    let hw = spec.hidden_widths()?;
    let h = hw.len();
    if spec.with_skip {
        if spec.depth != 4 {
            return Err(Error::Param(
                "skip connection is only defined for depth 4".into(),
            ));
        }
        if hw[1] != hw[2] {
            return Err(Error::Structure(format!(
                "skip connection ties γ2 and γ3 but their widths differ ({} vs {})",
                hw[1], hw[2]
            )));
        }
    }

    let mut gammas: Vec<GammaVar> = hw
        .iter()
        .enumerate()
        .map(|(i, &width)| GammaVar {
            id: i + 1,
            width,
            role: GammaRole::Hidden,
        })
        .collect();
    let out_gamma = h + 1;
    let needs_out = spec.with_bias || spec.d_out > 1;
    if needs_out {
        gammas.push(GammaVar {
            id: out_gamma,
            width: spec.d_out,
            role: GammaRole::Data,
        });
    }
    let in_gamma = h + 2;
    if spec.d_in > 1 {
        gammas.push(GammaVar {
            id: in_gamma,
            width: spec.d_in,
            role: GammaRole::Data,
        });
    }

    let mut weights = Vec::new();
    let mut usages = Vec::new();
    let mut ops = Vec::new();
    let act = spec.activation;
    let mut node = 0usize;
    let push = |ops: &mut Vec<Op>, op: Op| {
        ops.push(op);
        ops.len()
    };

    // Input layer.
    if spec.d_in == 1 {
        weights.push(WeightDecl::vector("u", hw[0]));
        usages.push(AxisUsage::new("u", Axis::Row, 1));
        node = push(
            &mut ops,
            Op::Embed {
                weight: "u".into(),
                input: node,
            },
        );
    } else {
        weights.push(WeightDecl::matrix("u", hw[0], spec.d_in));
        usages.push(AxisUsage::new("u", Axis::Row, 1));
        usages.push(AxisUsage::new("u", Axis::Col, in_gamma));
        node = push(
            &mut ops,
            Op::Dense {
                weight: "u".into(),
                input: node,
            },
        );
    }
    if spec.with_bias {
        weights.push(WeightDecl::vector("bu", hw[0]));
        usages.push(AxisUsage::new("bu", Axis::Row, 1));
        node = push(
            &mut ops,
            Op::Bias {
                weight: "bu".into(),
                input: node,
            },
        );
    }
    node = push(&mut ops, Op::Act { input: node, act });

    // Hidden matrices: w_k maps γ_k to γ_{k+1}.
    let mut skip_pre = None;
    for k in 1..h {
        let name = hidden_name(k);
        weights.push(WeightDecl::matrix(&name, hw[k], hw[k - 1]));
        usages.push(AxisUsage::new(&name, Axis::Row, k + 1));
        usages.push(AxisUsage::new(&name, Axis::Col, k));
        node = push(
            &mut ops,
            Op::Dense {
                weight: name.clone(),
                input: node,
            },
        );
        let bname = format!("b{k}");
        if spec.with_bias {
            weights.push(WeightDecl::vector(&bname, hw[k]));
            // The skip graph adds b2 on γ3-indexed values but labels it γ2.
            let row = if spec.with_skip && k == 2 { 2 } else { k + 1 };
            usages.push(AxisUsage::new(&bname, Axis::Row, row));
            node = push(
                &mut ops,
                Op::Bias {
                    weight: bname.clone(),
                    input: node,
                },
            );
        }
        if spec.with_skip && k == 1 {
            // The pre-activation of layer 1 is reused, re-indexed by γ3.
            skip_pre = Some(node);
            usages.push(AxisUsage::new(&name, Axis::Row, 3));
            usages.push(AxisUsage::new(&name, Axis::Col, 1));
            if spec.with_bias {
                usages.push(AxisUsage::new(&bname, Axis::Row, 3));
            }
        }
        if spec.with_skip && k == 2 {
            node = push(
                &mut ops,
                Op::Add {
                    inputs: vec![node, skip_pre.unwrap()],
                },
            );
        }
        node = push(&mut ops, Op::Act { input: node, act });
    }

    // Output layer.
    if spec.d_out == 1 {
        weights.push(WeightDecl::vector("v", hw[h - 1]));
        usages.push(AxisUsage::new("v", Axis::Row, h));
        node = push(
            &mut ops,
            Op::Readout {
                weight: "v".into(),
                input: node,
            },
        );
    } else {
        weights.push(WeightDecl::matrix("v", spec.d_out, hw[h - 1]));
        usages.push(AxisUsage::new("v", Axis::Row, out_gamma));
        usages.push(AxisUsage::new("v", Axis::Col, h));
        node = push(
            &mut ops,
            Op::Dense {
                weight: "v".into(),
                input: node,
            },
        );
    }
    if spec.with_bias {
        weights.push(WeightDecl::vector("bv", spec.d_out));
        usages.push(AxisUsage::new("bv", Axis::Row, out_gamma));
        push(
            &mut ops,
            Op::Bias {
                weight: "bv".into(),
                input: node,
            },
        );
    }

    ArchGraph::new(weights, usages, gammas, spec.parametrization, Some(ops))
}

/// The 4-layer skip-connection network with biases, width `n`.
pub fn build_example3(n: usize) -> Result<ArchGraph> {
    build_mlp(&MlpSpec::new(4, &[n]).bias(true).skip(true))
}

/// Index structure of a residual block; usages only, no forward program.
pub fn build_skip_block(n: usize) -> Result<ArchGraph> {
    if n == 0 {
        return Err(Error::Param("n must be >= 1".into()));
    }
    let mut weights = Vec::new();
    for k in 1..=4 {
        weights.push(WeightDecl::matrix(&format!("W{k}"), n, n));
        weights.push(WeightDecl::vector(&format!("B{k}"), n));
    }
    let mat = |name: &str, r: usize, c: usize| {
        [
            AxisUsage::new(name, Axis::Row, r),
            AxisUsage::new(name, Axis::Col, c),
        ]
    };
    let mut usages = vec![AxisUsage::new("B4", Axis::Row, 6)];
    usages.extend(mat("W4", 6, 5));
    usages.push(AxisUsage::new("B3", Axis::Row, 5));
    usages.extend(mat("W3", 5, 4));
    usages.push(AxisUsage::new("B2", Axis::Row, 3));
    usages.extend(mat("W2", 3, 2));
    usages.push(AxisUsage::new("B1", Axis::Row, 2));
    usages.extend(mat("W1", 2, 1));
    usages.push(AxisUsage::new("B1", Axis::Row, 5));
    usages.extend(mat("W1", 5, 1));
    let gammas = (1..=6)
        .map(|id| GammaVar {
            id,
            width: n,
            role: GammaRole::Hidden,
        })
        .collect();
    ArchGraph::new(weights, usages, gammas, Parametrization::Mfp, None)
}

/// Index structure of an attention block; usages only. `d_x` is the token
/// axis, which no weight is indexed by, so it only gets validated.
pub fn build_attention_block(n: usize, d_x: usize) -> Result<ArchGraph> {
    if n == 0 || d_x == 0 {
        return Err(Error::Param("n and d_x must be >= 1".into()));
    }
    let weights = vec![
        WeightDecl::vector("B2", n),
        WeightDecl::matrix("W2", n, n),
        WeightDecl::matrix("WV", n, n),
        WeightDecl::matrix("WK", n, n),
        WeightDecl::matrix("WQ", n, n),
        WeightDecl::vector("B1", n),
        WeightDecl::matrix("W1", n, n),
    ];
    let mat = |name: &str, r: usize, c: usize| {
        [
            AxisUsage::new(name, Axis::Row, r),
            AxisUsage::new(name, Axis::Col, c),
        ]
    };
    let mut usages = vec![AxisUsage::new("B2", Axis::Row, 7)];
    usages.extend(mat("W2", 7, 6));
    usages.extend(mat("WV", 6, 4));
    usages.extend(mat("WK", 5, 3));
    usages.extend(mat("WQ", 5, 2));
    for r in [2, 3, 4] {
        usages.push(AxisUsage::new("B1", Axis::Row, r));
        usages.extend(mat("W1", r, 1));
    }
    let gammas = (1..=7)
        .map(|id| GammaVar {
            id,
            width: n,
            role: GammaRole::Hidden,
        })
        .collect();
    ArchGraph::new(weights, usages, gammas, Parametrization::Mfp, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sets(g: &ArchGraph) -> Vec<Vec<usize>> {
        compute_partition(g).unwrap().sets()
    }

    #[test]
    fn example3_partition() {
        let g = build_example3(6).unwrap();
        assert_eq!(sets(&g), vec![vec![1], vec![2, 3], vec![4]]);
        let p = compute_partition(&g).unwrap();
        assert_eq!(p.groups[2].width, 1);
        assert_eq!(p.groups[2].role, GammaRole::Data);
    }

    #[test]
    fn example3_usages_follow_the_formula() {
        let g = build_example3(4).unwrap();
        assert_eq!(g.axis_gammas("w1", Axis::Row), vec![2, 3]);
        assert_eq!(g.axis_gammas("w2", Axis::Row), vec![3]);
        assert_eq!(g.axis_gammas("w2", Axis::Col), vec![2]);
        assert_eq!(g.axis_gammas("b1", Axis::Row), vec![2, 3]);
        assert_eq!(g.axis_gammas("b2", Axis::Row), vec![2]);
        assert_eq!(g.axis_gammas("v", Axis::Row), vec![3]);
        assert_eq!(g.axis_gammas("bv", Axis::Row), vec![4]);
    }

    #[test]
    fn skip_block_contains_quoted_partition() {
        let g = build_skip_block(5).unwrap();
        let s = sets(&g);
        let restricted: Vec<Vec<usize>> = s
            .iter()
            .map(|grp| grp.iter().copied().filter(|&m| m <= 5).collect::<Vec<_>>())
            .filter(|grp| !grp.is_empty())
            .collect();
        assert_eq!(restricted, vec![vec![1], vec![2, 5], vec![3], vec![4]]);
        assert!(s.contains(&vec![6]));
    }

    #[test]
    fn attention_partition() {
        for (n, dx) in [(8, 3), (1, 1)] {
            let g = build_attention_block(n, dx).unwrap();
            assert_eq!(
                sets(&g),
                vec![vec![1], vec![2, 3, 4], vec![5], vec![6], vec![7]]
            );
        }
    }

    #[test]
    fn plain_chain_is_all_singletons() {
        let g = build_mlp(&MlpSpec::new(5, &[3, 4, 5, 6])).unwrap();
        assert_eq!(g.weights().len(), 5);
        assert_eq!(sets(&g), vec![vec![1], vec![2], vec![3], vec![4]]);
    }

    #[test]
    fn two_layer_has_one_group() {
        let g = build_mlp(&MlpSpec::new(2, &[7])).unwrap();
        let names: Vec<&str> = g.weights().iter().map(|w| w.name.as_str()).collect();
        assert_eq!(names, vec!["u", "v"]);
        assert_eq!(sets(&g), vec![vec![1]]);
    }

    #[test]
    fn depth_below_two_is_rejected() {
        assert!(matches!(
            build_mlp(&MlpSpec::new(1, &[3])),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn width_conflict_names_weight_and_axis() {
        let weights = vec![WeightDecl::matrix("a", 2, 3), WeightDecl::vector("b", 2)];
        let usages = vec![
            AxisUsage::new("a", Axis::Row, 1),
            AxisUsage::new("a", Axis::Col, 2),
            AxisUsage::new("b", Axis::Row, 1),
            AxisUsage::new("b", Axis::Row, 2),
        ];
        let gammas = vec![
            GammaVar {
                id: 1,
                width: 2,
                role: GammaRole::Hidden,
            },
            GammaVar {
                id: 2,
                width: 3,
                role: GammaRole::Hidden,
            },
        ];
        let err = ArchGraph::new(weights, usages, gammas, Parametrization::Mfp, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"b\"") && msg.contains("row"), "{msg}");
    }

    #[test]
    fn partition_display() {
        let p = compute_partition(&build_example3(5).unwrap()).unwrap();
        let text = p.to_string();
        assert_eq!(
            text,
            "Γ_1: {γ1} width=5\nΓ_2: {γ2, γ3} width=5\nΓ_3: {γ4} width=1\n"
        );
    }

    #[test]
    fn json_round_trip_and_inferred_gammas() {
        let g = build_example3(3).unwrap();
        let back = ArchGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);

        let text = r#"{
            "weights": [{"name":"u","kind":"vector","shape":[4]},
                        {"name":"v","kind":"vector","shape":[4]}],
            "usages": [{"weight":"u","axis":"row","gamma":1},
                       {"weight":"v","axis":"row","gamma":1}],
            "parametrization": "MFP"
        }"#;
        let g = ArchGraph::from_json(text).unwrap();
        assert_eq!(
            g.gammas(),
            &[GammaVar {
                id: 1,
                width: 4,
                role: GammaRole::Hidden
            }]
        );
    }

    #[test]
    fn unknown_keys_and_missing_usages_fail() {
        let extra = r#"{"weights":[],"usages":[],"parametrization":"SP","bogus":1}"#;
        assert!(ArchGraph::from_json(extra).is_err());
        let uncovered = r#"{
            "weights": [{"name":"w","kind":"matrix","shape":[2,2]}],
            "usages": [{"weight":"w","axis":"row","gamma":1}],
            "parametrization": "SP"
        }"#;
        assert!(ArchGraph::from_json(uncovered).is_err());
    }

    #[test]
    fn with_group_widths_resizes_shapes() {
        let g = build_mlp(&MlpSpec::new(3, &[4]).bias(true).dims(5, 2)).unwrap();
        let p = compute_partition(&g).unwrap();
        let widths: Vec<usize> = p
            .groups
            .iter()
            .map(|grp| {
                if grp.role == GammaRole::Hidden {
                    grp.width * 2
                } else {
                    grp.width
                }
            })
            .collect();
        let big = g.with_group_widths(&p, &widths).unwrap();
        assert_eq!(big.weight("u").unwrap().shape, vec![8, 5]);
        assert_eq!(big.weight("w1").unwrap().shape, vec![8, 8]);
        assert_eq!(big.weight("v").unwrap().shape, vec![2, 8]);
        assert_eq!(big.weight("bv").unwrap().shape, vec![2]);
    }

    #[test]
    fn forward_scales_follow_parametrization() {
        let n = 16;
        for (p, hidden, out) in [
            (Parametrization::Sp, 0.25, 0.25),
            (Parametrization::MuP, 0.25, 1.0 / 16.0),
            (Parametrization::Mfp, 1.0 / 16.0, 1.0 / 16.0),
        ] {
            let g = build_mlp(&MlpSpec::new(3, &[n]).parametrization(p)).unwrap();
            let ops = g.forward().unwrap();
            let dense = ops.iter().find(|o| matches!(o, Op::Dense { .. })).unwrap();
            let read = ops
                .iter()
                .find(|o| matches!(o, Op::Readout { .. }))
                .unwrap();
            let emb = ops.iter().find(|o| matches!(o, Op::Embed { .. })).unwrap();
            assert_eq!(g.op_scale(dense), hidden);
            assert_eq!(g.op_scale(read), out);
            assert_eq!(g.op_scale(emb), 1.0);
        }
    }

    fn arb_graph() -> impl Strategy<Value = ArchGraph> {
        // Square weights over a pool of equal-width γ ids with random reuse.
        (2usize..6, 1usize..6).prop_flat_map(|(n_gamma, n_weights)| {
            let usage = (0..n_weights, any::<bool>(), 1..=n_gamma);
            (
                Just(n_gamma),
                Just(n_weights),
                prop::collection::vec(usage, 0..12),
            )
                .prop_map(|(n_gamma, n_weights, extra)| {
                    let weights: Vec<WeightDecl> = (0..n_weights)
                        .map(|i| WeightDecl::matrix(&format!("m{i}"), 3, 3))
                        .collect();
                    let mut usages = Vec::new();
                    for i in 0..n_weights {
                        usages.push(AxisUsage::new(
                            &format!("m{i}"),
                            Axis::Row,
                            1 + (i % n_gamma),
                        ));
                        usages.push(AxisUsage::new(
                            &format!("m{i}"),
                            Axis::Col,
                            1 + ((i + 1) % n_gamma),
                        ));
                    }
                    for (w, row, gid) in extra {
                        let axis = if row { Axis::Row } else { Axis::Col };
                        usages.push(AxisUsage::new(&format!("m{w}"), axis, gid));
                    }
                    let used: BTreeSet<usize> = usages.iter().map(|u| u.gamma).collect();
                    let gammas = used
                        .into_iter()
                        .map(|id| GammaVar {
                            id,
                            width: 3,
                            role: GammaRole::Hidden,
                        })
                        .collect();
                    ArchGraph::new(weights, usages, gammas, Parametrization::Mfp, None).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn partition_is_permutation_invariant(g in arb_graph(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut usages = g.usages().to_vec();
            usages.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let h = g.with_usages(usages).unwrap();
            prop_assert_eq!(compute_partition(&g).unwrap(), compute_partition(&h).unwrap());
        }

        #[test]
        fn partition_is_idempotent(g in arb_graph()) {
            let a = compute_partition(&g).unwrap();
            prop_assert_eq!(&a, &compute_partition(&g).unwrap());
            let covered: BTreeSet<usize> = a.groups.iter().flat_map(|x| x.members.clone()).collect();
            let all: BTreeSet<usize> = g.gammas().iter().map(|x| x.id).collect();
            prop_assert_eq!(covered, all);
        }

        #[test]
        fn adding_a_usage_only_coarsens(g in arb_graph(), w in 0usize..6, row in any::<bool>(), pick in 0usize..6) {
            let n_w = g.weights().len();
            let ids: Vec<usize> = g.gammas().iter().map(|x| x.id).collect();
            let mut usages = g.usages().to_vec();
            let axis = if row { Axis::Row } else { Axis::Col };
            usages.push(AxisUsage::new(&format!("m{}", w % n_w), axis, ids[pick % ids.len()]));
            let h = g.with_usages(usages).unwrap();
            let fine = compute_partition(&g).unwrap();
            let coarse = compute_partition(&h).unwrap();
            for grp in &fine.groups {
                let target = coarse.group_of(grp.members[0]).unwrap();
                for m in &grp.members {
                    prop_assert_eq!(coarse.group_of(*m), Some(target));
                }
            }
            prop_assert!(coarse.groups.len() <= fine.groups.len());
        }
    }
}
