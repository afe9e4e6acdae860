//! Test oracles: double-double arithmetic and a reference forward pass
//! written against the op program, not the library's kernels.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

use mfgrow::arch::{Activation, Axis, GammaRole, Op, Parametrization};
use mfgrow::net::{Loss, Network};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`; about 32 digits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

// Dekker split; `mul_add` is a libm call on targets built without FMA.
fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

fn inv_factorials() -> &'static [Dd; 13] {
    static TABLE: OnceLock<[Dd; 13]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [Dd::ONE; 13];
        for n in 1..13 {
            t[n] = t[n - 1] / Dd::new(n as f64);
        }
        t
    })
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn recip(self) -> Dd {
        Dd::ONE / self
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        // One Newton step on the f64 root doubles the digits.
        let y = Dd::new(self.hi.sqrt());
        y + (self - y * y) / (Dd::new(2.0) * y)
    }

    fn mul_pow2(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    /// `(k, e^r − 1)` with `x = k ln2 + r`.
    fn reduce(self) -> (i32, Dd) {
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::new(k)).mul_pow2(-10);
        // Taylor series of e^r − 1 in Horner form, |r| < 4e-4.
        let c = inv_factorials();
        let mut sum = c[12];
        for n in (1..12).rev() {
            sum = sum * r + c[n];
        }
        let mut sum = sum * r;
        // (1 + s)² − 1 = s(2 + s), ten times.
        for _ in 0..10 {
            sum = sum * (sum + Dd::new(2.0));
        }
        (k as i32, sum)
    }

    pub fn exp(self) -> Dd {
        let (k, s) = self.reduce();
        (s + Dd::ONE).mul_pow2(k)
    }

    /// `e^x − 1`, accurate near zero.
    pub fn exp_m1(self) -> Dd {
        match self.reduce() {
            (0, s) => s,
            _ => self.exp() - Dd::ONE,
        }
    }

    pub fn ln(self) -> Dd {
        let mut y = Dd::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    pub fn tanh(self) -> Dd {
        if self.hi.abs() > 40.0 {
            return Dd::new(self.hi.signum());
        }
        let m = (self + self).exp_m1();
        m / (m + Dd::new(2.0))
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::new(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

/// Network weights held in double-double, evaluated by walking the op
/// program directly.
pub struct Reference {
    pub net: Network,
    pub weights: BTreeMap<String, Vec<Dd>>,
}

impl Reference {
    pub fn new(net: &Network) -> Self {
        let weights = net
            .store()
            .iter()
            .map(|(k, t)| (k.clone(), t.data().iter().map(|&x| Dd::new(x)).collect()))
            .collect();
        Reference {
            net: net.clone(),
            weights,
        }
    }

    /// Forward scalar computed from the parametrization's definition:
    /// 1/fan for MFP, 1/√fan for SP, and for μP 1/fan on the layer that
    /// produces the output, 1/√fan elsewhere.
    fn scale(&self, fan: usize, output: bool) -> Dd {
        let n = Dd::new(fan as f64);
        match (self.net.parametrization(), output) {
            (Parametrization::Mfp, _) | (Parametrization::MuP, true) => n.recip(),
            _ => n.sqrt().recip(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<Dd> {
        let mut nodes: Vec<Vec<Dd>> = vec![x.iter().map(|&v| Dd::new(v)).collect()];
        self.run_from(0, &mut nodes);
        nodes.pop().unwrap()
    }

    /// Evaluates ops `from..` given nodes `0..=from`.
    fn run_from(&self, from: usize, nodes: &mut Vec<Vec<Dd>>) {
        let ops = self.net.arch().forward().expect("forward program");
        nodes.truncate(from + 1);
        for op in &ops[from..] {
            let out = match op {
                Op::Dense { weight, input } => {
                    let decl = self.net.arch().weight(weight).unwrap();
                    let (rows, cols) = (decl.shape[0], decl.shape[1]);
                    let output = self.net.arch().axis_role(weight, Axis::Row) == GammaRole::Data;
                    let s = self.scale(cols, output);
                    let w = &self.weights[weight];
                    let h = &nodes[*input];
                    (0..rows)
                        .map(|i| {
                            let mut acc = Dd::ZERO;
                            for j in 0..cols {
                                acc = acc + w[i * cols + j] * h[j];
                            }
                            s * acc
                        })
                        .collect()
                }
                Op::Embed { weight, input } => {
                    let x0 = nodes[*input][0];
                    self.weights[weight].iter().map(|&u| u * x0).collect()
                }
                Op::Readout { weight, input } => {
                    let v = &self.weights[weight];
                    let s = self.scale(v.len(), true);
                    let mut acc = Dd::ZERO;
                    for (a, b) in v.iter().zip(&nodes[*input]) {
                        acc = acc + *a * *b;
                    }
                    vec![s * acc]
                }
                Op::Bias { weight, input } => nodes[*input]
                    .iter()
                    .zip(&self.weights[weight])
                    .map(|(&h, &b)| h + b)
                    .collect(),
                Op::Act { input, act } => nodes[*input]
                    .iter()
                    .map(|&h| match act {
                        Activation::Tanh => h.tanh(),
                        Activation::Relu => {
                            if h.hi > 0.0 {
                                h
                            } else {
                                Dd::ZERO
                            }
                        }
                        Activation::Identity => h,
                    })
                    .collect(),
                Op::Add { inputs } => {
                    let mut acc = nodes[inputs[0]].clone();
                    for &i in &inputs[1..] {
                        for (a, b) in acc.iter_mut().zip(&nodes[i]) {
                            *a = *a + *b;
                        }
                    }
                    acc
                }
            };
            nodes.push(out);
        }
    }

    pub fn loss(&self, x: &[f64], y: &[f64], loss: Loss) -> Dd {
        self.loss_of(&self.forward(x), y, loss)
    }

    fn loss_of(&self, out: &[Dd], y: &[f64], loss: Loss) -> Dd {
        match loss {
            Loss::Square => {
                let mut acc = Dd::ZERO;
                for (f, &t) in out.iter().zip(y) {
                    let d = *f - Dd::new(t);
                    acc = acc + d * d;
                }
                acc * Dd::new(0.5)
            }
            Loss::CrossEntropy => {
                let m = out.iter().map(|d| d.hi).fold(f64::NEG_INFINITY, f64::max);
                let mut s = Dd::ZERO;
                for f in out {
                    s = s + (*f - Dd::new(m)).exp();
                }
                let lse = Dd::new(m) + s.ln();
                let mut acc = Dd::ZERO;
                for (f, &t) in out.iter().zip(y) {
                    acc = acc - Dd::new(t) * (*f - lse);
                }
                acc
            }
        }
    }

    /// Five-point central difference of the loss in one coordinate. The
    /// shifted weights `θ ± kh` are exact in double-double, so the only
    /// error left is the O(h⁴) truncation.
    pub fn fd(
        &mut self,
        weight: &str,
        idx: usize,
        h: f64,
        x: &[f64],
        y: &[f64],
        loss: Loss,
    ) -> f64 {
        let mut base = vec![x.iter().map(|&v| Dd::new(v)).collect()];
        self.run_from(0, &mut base);
        let orig = self.weights[weight][idx];
        let mut at = |k: f64| {
            self.weights.get_mut(weight).unwrap()[idx] = orig + Dd::new(k * h);
            let out = self.perturbed_output(&base, weight, idx);
            self.loss_of(&out, y, loss)
        };
        let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
        self.weights.get_mut(weight).unwrap()[idx] = orig;
        let num = (m2 - p2) + Dd::new(8.0) * (p1 - m1);
        (num / Dd::new(12.0 * h)).to_f64()
    }

    /// Output with entry `idx` of `weight` changed, recomputing only the
    /// node entries that can differ from the unperturbed trace `base`.
    fn perturbed_output(&self, base: &[Vec<Dd>], weight: &str, idx: usize) -> Vec<Dd> {
        let ops = self.net.arch().forward().expect("forward program");
        let mut vals: Vec<Vec<Dd>> = vec![base[0].clone()];
        // Entries that may differ from `base`; `None` means all of them.
        let mut changed: Vec<Option<Vec<usize>>> = vec![Some(Vec::new())];
        let full = |set: &Option<Vec<usize>>, len: usize| -> Vec<usize> {
            set.clone().unwrap_or_else(|| (0..len).collect())
        };
        for (o, op) in ops.iter().enumerate() {
            let hit = op.weight() == Some(weight);
            let mut out = base[o + 1].clone();
            let set = match op {
                Op::Dense { weight: w, input } => {
                    let decl = self.net.arch().weight(w).unwrap();
                    let (rows, cols) = (decl.shape[0], decl.shape[1]);
                    let output = self.net.arch().axis_role(w, Axis::Row) == GammaRole::Data;
                    let s = self.scale(cols, output);
                    let m = &self.weights[w];
                    let h = &vals[*input];
                    let row = |i: usize| {
                        let mut acc = Dd::ZERO;
                        for j in 0..cols {
                            acc = acc + m[i * cols + j] * h[j];
                        }
                        s * acc
                    };
                    match &changed[*input] {
                        None => {
                            out = (0..rows).map(row).collect();
                            None
                        }
                        Some(js) if js.is_empty() => {
                            if hit {
                                out[idx / cols] = row(idx / cols);
                                Some(vec![idx / cols])
                            } else {
                                Some(Vec::new())
                            }
                        }
                        Some(js) => {
                            for (i, v) in out.iter_mut().enumerate() {
                                let mut d = Dd::ZERO;
                                for &j in js {
                                    d = d + m[i * cols + j] * (h[j] - base[*input][j]);
                                }
                                *v = *v + s * d;
                            }
                            if hit {
                                out[idx / cols] = row(idx / cols);
                            }
                            None
                        }
                    }
                }
                Op::Embed { weight: w, input } => {
                    let u = &self.weights[w];
                    let x0 = vals[*input][0];
                    if changed[*input] != Some(Vec::new()) {
                        out = u.iter().map(|&ui| ui * x0).collect();
                        None
                    } else if hit {
                        out[idx] = u[idx] * x0;
                        Some(vec![idx])
                    } else {
                        Some(Vec::new())
                    }
                }
                Op::Readout { weight: w, input } => {
                    if hit || changed[*input] != Some(Vec::new()) {
                        let v = &self.weights[w];
                        let mut acc = Dd::ZERO;
                        for (a, b) in v.iter().zip(&vals[*input]) {
                            acc = acc + *a * *b;
                        }
                        out[0] = self.scale(v.len(), true) * acc;
                        Some(vec![0])
                    } else {
                        Some(Vec::new())
                    }
                }
                Op::Bias { weight: w, input } => {
                    let b = &self.weights[w];
                    let mut js = full(&changed[*input], out.len());
                    if hit && !js.contains(&idx) {
                        js.push(idx);
                    }
                    for &j in &js {
                        out[j] = vals[*input][j] + b[j];
                    }
                    changed[*input].as_ref().map(|_| js)
                }
                Op::Act { input, act } => {
                    let js = full(&changed[*input], out.len());
                    for &j in &js {
                        let h = vals[*input][j];
                        out[j] = match act {
                            Activation::Tanh => h.tanh(),
                            Activation::Relu => {
                                if h.hi > 0.0 {
                                    h
                                } else {
                                    Dd::ZERO
                                }
                            }
                            Activation::Identity => h,
                        };
                    }
                    changed[*input].as_ref().map(|_| js)
                }
                Op::Add { inputs } => {
                    let any_full = inputs.iter().any(|&i| changed[i].is_none());
                    let mut js: Vec<usize> = if any_full {
                        (0..out.len()).collect()
                    } else {
                        inputs
                            .iter()
                            .flat_map(|&i| changed[i].clone().unwrap())
                            .collect()
                    };
                    js.sort_unstable();
                    js.dedup();
                    for &j in &js {
                        let mut acc = vals[inputs[0]][j];
                        for &i in &inputs[1..] {
                            acc = acc + vals[i][j];
                        }
                        out[j] = acc;
                    }
                    if any_full {
                        None
                    } else {
                        Some(js)
                    }
                }
            };
            vals.push(out);
            changed.push(set);
        }
        vals.pop().unwrap()
    }
}

/// Worst elementwise relative error of `net.backward` against the
/// reference finite differences, over entries with `|grad| > floor`.
/// Entries at or below the floor must agree to `floor · tol` absolutely.
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    pub small_violations: usize,
}

pub fn gradcheck(
    net: &Network,
    x: &[f64],
    y: &[f64],
    loss: Loss,
    h: f64,
    floor: f64,
    tol: f64,
) -> GradCheck {
    let grads = net.backward(x, y, loss).expect("backward");
    let mut reference = Reference::new(net);
    let mut out = GradCheck {
        max_rel: 0.0,
        checked: 0,
        small_violations: 0,
    };
    let names: Vec<String> = net.store().keys().cloned().collect();
    for name in names {
        let g = grads.get(&name).unwrap().data().to_vec();
        for (i, &gi) in g.iter().enumerate() {
            let fd = reference.fd(&name, i, h, x, y, loss);
            if gi.abs() > floor || fd.abs() > floor {
                let rel = (gi - fd).abs() / gi.abs().max(fd.abs());
                out.max_rel = out.max_rel.max(rel);
                out.checked += 1;
            } else if (gi - fd).abs() > floor * tol {
                out.small_violations += 1;
            }
        }
    }
    out
}
