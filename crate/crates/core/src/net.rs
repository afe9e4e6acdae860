//! Concrete networks: weight store, forward evaluation and reverse-mode
//! gradients over the architecture's forward program.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchGraph, Op, Parametrization, WeightKind};
use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix, Tensor, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `½ Σ (f − y)²`.
    Square,
    /// Softmax cross-entropy against a probability (usually one-hot) target.
    CrossEntropy,
}

impl Loss {
    pub fn value(self, out: &[f64], y: &[f64]) -> f64 {
        match self {
            Loss::Square => {
                let mut acc = 0.0;
                for (f, t) in out.iter().zip(y) {
                    acc += 0.5 * (f - t) * (f - t);
                }
                acc
            }
            Loss::CrossEntropy => {
                let lse = log_sum_exp(out);
                let mut acc = 0.0;
                for (f, t) in out.iter().zip(y) {
                    if *t != 0.0 {
                        acc -= t * (f - lse);
                    }
                }
                acc
            }
        }
    }

    /// `∂L/∂out`.
    pub fn gradient(self, out: &[f64], y: &[f64]) -> Vec<f64> {
        match self {
            Loss::Square => out.iter().zip(y).map(|(f, t)| f - t).collect(),
            Loss::CrossEntropy => {
                let lse = log_sum_exp(out);
                let total: f64 = y.iter().sum();
                out.iter()
                    .zip(y)
                    .map(|(f, t)| total * (f - lse).exp() - t)
                    .collect()
            }
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// Same-shaped gradient tensors keyed by weight name.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub grads: BTreeMap<String, Tensor>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            grads: net
                .store
                .iter()
                .map(|(k, t)| (k.clone(), t.zeros_like()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.grads.values_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.grads.values_mut() {
            t.data_mut().fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: ArchGraph,
    store: BTreeMap<String, Tensor>,
}

impl Network {
    /// All-zero weights. Fails if the architecture has no forward program.
    pub fn zeros(arch: ArchGraph) -> Result<Self> {
        if arch.forward().is_none() {
            return Err(Error::Structure(
                "architecture has no forward program and cannot be evaluated".into(),
            ));
        }
        let store = arch
            .weights()
            .iter()
            .map(|w| {
                let t = match w.kind {
                    WeightKind::Matrix => Tensor::Matrix(Matrix::zeros(w.shape[0], w.shape[1])),
                    WeightKind::Vector => Tensor::Vector(Vector::zeros(w.shape[0])),
                };
                (w.name.clone(), t)
            })
            .collect();
        Ok(Self { arch, store })
    }

    pub fn from_store(arch: ArchGraph, store: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        if store.len() != net.store.len() {
            return Err(Error::Structure(format!(
                "store has {} weights, architecture declares {}",
                store.len(),
                net.store.len()
            )));
        }
        for (name, t) in store {
            net.set(&name, t)?;
        }
        Ok(net)
    }

    pub fn arch(&self) -> &ArchGraph {
        &self.arch
    }

    pub fn parametrization(&self) -> Parametrization {
        self.arch.parametrization()
    }

    pub fn store(&self) -> &BTreeMap<String, Tensor> {
        &self.store
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.store.get(name)
    }

    pub fn matrix(&self, name: &str) -> Option<&Matrix> {
        self.store.get(name).and_then(Tensor::as_matrix)
    }

    pub fn vector(&self, name: &str) -> Option<&Vector> {
        self.store.get(name).and_then(Tensor::as_vector)
    }

    /// Mutable access to the raw values of one weight.
    pub fn data_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.store.get_mut(name).map(Tensor::data_mut)
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self
            .store
            .get_mut(name)
            .ok_or_else(|| Error::Structure(format!("unknown weight {name:?}")))?;
        let same_kind = matches!(
            (&*slot, &t),
            (Tensor::Matrix(_), Tensor::Matrix(_)) | (Tensor::Vector(_), Tensor::Vector(_))
        );
        if !same_kind || slot.shape() != t.shape() {
            return Err(Error::shape(
                "set",
                format!("{name} {:?}", slot.shape()),
                format!("{:?}", t.shape()),
            ));
        }
        *slot = t;
        Ok(())
    }

    /// Same architecture under a different parametrization.
    pub fn with_parametrization(&self, p: Parametrization) -> Network {
        Network {
            arch: self.arch.with_parametrization(p),
            store: self.store.clone(),
        }
    }

    pub fn io_dims(&self) -> (usize, usize) {
        self.arch
            .io_dims()
            .expect("networks always have a forward program")
    }

    fn ops(&self) -> &[Op] {
        self.arch
            .forward()
            .expect("networks always have a forward program")
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        let trace = self.forward_trace(x)?;
        Ok(Vector::new(trace.into_iter().last().unwrap()))
    }

    /// Values of every node of the forward program, input first.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (d_in, _) = self.io_dims();
        if x.len() != d_in {
            return Err(Error::shape(
                "forward",
                format!("input dim {d_in}"),
                format!("x of length {}", x.len()),
            ));
        }
        let ops = self.ops();
        let mut nodes: Vec<Vec<f64>> = Vec::with_capacity(ops.len() + 1);
        nodes.push(x.to_vec());
        for op in ops {
            let scale = self.arch.op_scale(op);
            let out = match op {
                Op::Dense { weight, input } => {
                    let w = self.matrix(weight).expect("validated");
                    let mut y = w.matvec(&nodes[*input])?.into_inner();
                    for v in &mut y {
                        *v *= scale;
                    }
                    y
                }
                Op::Embed { weight, input } => {
                    let u = self.vector(weight).expect("validated");
                    let x0 = nodes[*input][0];
                    u.iter().map(|ui| ui * x0).collect()
                }
                Op::Readout { weight, input } => {
                    let v = self.vector(weight).expect("validated");
                    vec![scale * dot(v, &nodes[*input])]
                }
                Op::Bias { weight, input } => {
                    let b = self.vector(weight).expect("validated");
                    nodes[*input]
                        .iter()
                        .zip(b.iter())
                        .map(|(h, b)| h + b)
                        .collect()
                }
                Op::Act { input, act } => nodes[*input].iter().map(|&h| act.apply(h)).collect(),
                Op::Add { inputs } => {
                    let mut acc = nodes[inputs[0]].clone();
                    for &i in &inputs[1..] {
                        for (a, b) in acc.iter_mut().zip(&nodes[i]) {
                            *a += b;
                        }
                    }
                    acc
                }
            };
            nodes.push(out);
        }
        Ok(nodes)
    }

    /// Gradient of `loss(f(x), y)` with respect to every weight.
    pub fn backward(&self, x: &[f64], y: &[f64], loss: Loss) -> Result<GradientSet> {
        let mut g = GradientSet::zeros_like(self);
        self.backward_into(x, y, loss, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `weight · ∂loss/∂θ` into `acc`; returns the loss and output.
    pub fn backward_into(
        &self,
        x: &[f64],
        y: &[f64],
        loss: Loss,
        weight: f64,
        acc: &mut GradientSet,
    ) -> Result<(f64, Vec<f64>)> {
        let nodes = self.forward_trace(x)?;
        let out = nodes.last().unwrap();
        if y.len() != out.len() {
            return Err(Error::shape(
                "backward",
                format!("output dim {}", out.len()),
                format!("y of length {}", y.len()),
            ));
        }
        let value = loss.value(out, y);
        let mut adj: Vec<Vec<f64>> = nodes.iter().map(|n| vec![0.0; n.len()]).collect();
        let last = adj.len() - 1;
        for (a, g) in adj[last].iter_mut().zip(loss.gradient(out, y)) {
            *a = weight * g;
        }

        let ops = self.ops();
        for (i, op) in ops.iter().enumerate().rev() {
            let g = std::mem::take(&mut adj[i + 1]);
            let scale = self.arch.op_scale(op);
            match op {
                Op::Dense {
                    weight: name,
                    input,
                } => {
                    let w = self.matrix(name).expect("validated");
                    if let Some(Tensor::Matrix(dw)) = acc.grads.get_mut(name) {
                        dw.add_outer(scale, &g, &nodes[*input]);
                    }
                    if *input > 0 {
                        let back = w.matvec_transposed(&g)?;
                        for (a, b) in adj[*input].iter_mut().zip(back.iter()) {
                            *a += scale * b;
                        }
                    }
                }
                Op::Embed {
                    weight: name,
                    input,
                } => {
                    let x0 = nodes[*input][0];
                    if let Some(Tensor::Vector(du)) = acc.grads.get_mut(name) {
                        for (d, gi) in du.iter_mut().zip(&g) {
                            *d += gi * x0;
                        }
                    }
                    if *input > 0 {
                        let u = self.vector(name).expect("validated");
                        adj[*input][0] += dot(u, &g);
                    }
                }
                Op::Readout {
                    weight: name,
                    input,
                } => {
                    let v = self.vector(name).expect("validated");
                    let s = scale * g[0];
                    if let Some(Tensor::Vector(dv)) = acc.grads.get_mut(name) {
                        for (d, h) in dv.iter_mut().zip(&nodes[*input]) {
                            *d += s * h;
                        }
                    }
                    for (a, vi) in adj[*input].iter_mut().zip(v.iter()) {
                        *a += s * vi;
                    }
                }
                Op::Bias {
                    weight: name,
                    input,
                } => {
                    if let Some(Tensor::Vector(db)) = acc.grads.get_mut(name) {
                        for (d, gi) in db.iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                    for (a, gi) in adj[*input].iter_mut().zip(&g) {
                        *a += gi;
                    }
                }
                Op::Act { input, act } => {
                    for ((a, gi), h) in adj[*input].iter_mut().zip(&g).zip(&nodes[*input]) {
                        *a += gi * act.derivative(*h);
                    }
                }
                Op::Add { inputs } => {
                    for &inp in inputs {
                        for (a, gi) in adj[inp].iter_mut().zip(&g) {
                            *a += gi;
                        }
                    }
                }
            }
        }
        Ok((value, out.clone()))
    }
}

/// Learning-rate scalar of one weight: the product of its hidden axis
/// widths under MFP, 1 otherwise.
pub fn lr_multiplier(weight: &str, arch: &ArchGraph) -> f64 {
    match arch.parametrization() {
        Parametrization::Mfp => arch
            .hidden_axis_widths(weight)
            .iter()
            .map(|&w| w as f64)
            .product(),
        Parametrization::Sp | Parametrization::MuP => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_mlp, Activation, MlpSpec};

    fn two_layer(n: usize, act: Activation, p: Parametrization) -> Network {
        Network::zeros(
            build_mlp(&MlpSpec::new(2, &[n]).activation(act).parametrization(p)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_two_layer_averages() {
        let mut net = two_layer(5, Activation::Identity, Parametrization::Mfp);
        net.data_mut("u").unwrap().fill(1.0);
        net.data_mut("v").unwrap().fill(1.0);
        assert_eq!(net.forward(&[2.0]).unwrap().as_slice(), &[2.0]);
    }

    #[test]
    fn identity_two_layer_matches_loop() {
        let mut net = two_layer(4, Activation::Identity, Parametrization::Mfp);
        net.data_mut("u")
            .unwrap()
            .copy_from_slice(&[0.5, -1.0, 2.0, 3.0]);
        net.data_mut("v")
            .unwrap()
            .copy_from_slice(&[1.0, 4.0, -2.0, 0.25]);
        let x = 1.5;
        let mut acc = 0.0;
        for i in 0..4 {
            acc += net.vector("v").unwrap()[i] * net.vector("u").unwrap()[i] * x;
        }
        let f = net.forward(&[x]).unwrap()[0];
        assert!((f - acc / 4.0).abs() < 1e-15);
    }

    #[test]
    fn sp_exceeds_mfp_by_sqrt_n_per_layer() {
        let n = 9;
        let arch = build_mlp(&MlpSpec::new(3, &[n]).activation(Activation::Identity)).unwrap();
        let mut net = Network::zeros(arch).unwrap();
        for (i, v) in net.data_mut("u").unwrap().iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.3;
        }
        for (i, v) in net.data_mut("w1").unwrap().iter_mut().enumerate() {
            *v = ((i * 7) % 11) as f64 / 5.0 - 1.0;
        }
        for (i, v) in net.data_mut("v").unwrap().iter_mut().enumerate() {
            *v = 1.0 - 0.2 * i as f64;
        }
        let mf = net.forward(&[0.7]).unwrap()[0];
        let sp = net
            .with_parametrization(Parametrization::Sp)
            .forward(&[0.7])
            .unwrap()[0];
        // Two summed layers, each √N larger under SP.
        assert!(
            (sp - mf * n as f64).abs() < 1e-12 * sp.abs().max(1.0),
            "{sp} vs {mf}"
        );
    }

    #[test]
    fn zero_weights_give_zero_tanh_gradient() {
        let net = two_layer(3, Activation::Tanh, Parametrization::Mfp);
        let g = net.backward(&[1.0], &[1.0], Loss::Square).unwrap();
        for t in g.grads.values() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_layer_closed_form() {
        let n = 6;
        let mut net = two_layer(n, Activation::Tanh, Parametrization::Mfp);
        let us = [0.3, -0.8, 1.2, 0.05, -1.5, 0.9];
        let vs = [1.1, -0.4, 0.7, 2.0, -1.3, 0.2];
        net.data_mut("u").unwrap().copy_from_slice(&us);
        net.data_mut("v").unwrap().copy_from_slice(&vs);
        let (x, y) = (0.8, 0.25);
        let f: f64 = us
            .iter()
            .zip(&vs)
            .map(|(u, v)| v * (u * x).tanh())
            .sum::<f64>()
            / n as f64;
        let g = net.backward(&[x], &[y], Loss::Square).unwrap();
        for i in 0..n {
            let dv = -(y - f) * (us[i] * x).tanh() / n as f64;
            let t = (us[i] * x).tanh();
            let du = -(y - f) * vs[i] * (1.0 - t * t) * x / n as f64;
            assert!((g.get("v").unwrap().data()[i] - dv).abs() < 1e-12);
            assert!((g.get("u").unwrap().data()[i] - du).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_target() {
        let out = [1.0, 2.0, 0.5];
        let y = [0.0, 1.0, 0.0];
        let g = Loss::CrossEntropy.gradient(&out, &y);
        let z: f64 = out.iter().map(|v: &f64| v.exp()).sum();
        for k in 0..3 {
            assert!((g[k] - (out[k].exp() / z - y[k])).abs() < 1e-15);
        }
        let l = Loss::CrossEntropy.value(&out, &y);
        assert!((l - (z.ln() - 2.0)).abs() < 1e-14);
    }

    #[test]
    fn lr_multipliers_for_five_layers() {
        let arch = build_mlp(&MlpSpec::new(5, &[2, 3, 5, 7])).unwrap();
        assert_eq!(lr_multiplier("u", &arch), 2.0);
        assert_eq!(lr_multiplier("w1", &arch), 6.0);
        assert_eq!(lr_multiplier("w2", &arch), 15.0);
        assert_eq!(lr_multiplier("w3", &arch), 35.0);
        assert_eq!(lr_multiplier("v", &arch), 7.0);
        let sp = arch.with_parametrization(Parametrization::Sp);
        for w in ["u", "w1", "w2", "w3", "v"] {
            assert_eq!(lr_multiplier(w, &sp), 1.0);
        }
    }

    #[test]
    fn wrong_input_length_is_a_shape_error() {
        let net = two_layer(3, Activation::Tanh, Parametrization::Mfp);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            net.backward(&[1.0], &[1.0, 2.0], Loss::Square),
            Err(Error::Shape { .. })
        ));
    }
}
