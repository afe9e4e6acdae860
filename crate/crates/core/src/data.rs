//! Datasets: the CIFAR-10 binary format and 1-D synthetic regression.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_DIM: usize = 3072;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Raw pixels are kept as bytes and scaled on access, which keeps the
/// 50 000-image training split at 150 MB instead of 1.2 GB.
#[derive(Clone, Debug, PartialEq)]
pub enum Inputs {
    F64 { dim: usize, data: Vec<f64> },
    Bytes { dim: usize, data: Vec<u8> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels { classes: usize, labels: Vec<u8> },
    Values { dim: usize, data: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Inputs,
    pub targets: Targets,
    pub split: Split,
}

impl Dataset {
    pub fn regression(xs: Vec<f64>, ys: Vec<f64>, split: Split) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::shape("Dataset", xs.len(), ys.len()));
        }
        Ok(Self {
            inputs: Inputs::F64 { dim: 1, data: xs },
            targets: Targets::Values { dim: 1, data: ys },
            split,
        })
    }

    pub fn len(&self) -> usize {
        match &self.inputs {
            Inputs::F64 { dim, data } => data.len() / dim,
            Inputs::Bytes { dim, data } => data.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        match &self.inputs {
            Inputs::F64 { dim, .. } | Inputs::Bytes { dim, .. } => *dim,
        }
    }

    pub fn target_dim(&self) -> usize {
        match &self.targets {
            Targets::Labels { classes, .. } => *classes,
            Targets::Values { dim, .. } => *dim,
        }
    }

    /// Writes input `i` into `buf`, resizing it.
    pub fn input_into(&self, i: usize, buf: &mut Vec<f64>) {
        buf.clear();
        match &self.inputs {
            Inputs::F64 { dim, data } => buf.extend_from_slice(&data[i * dim..(i + 1) * dim]),
            Inputs::Bytes { dim, data } => buf.extend(
                data[i * dim..(i + 1) * dim]
                    .iter()
                    .map(|&b| b as f64 / 255.0),
            ),
        }
    }

    pub fn input(&self, i: usize) -> Vec<f64> {
        let mut v = Vec::new();
        self.input_into(i, &mut v);
        v
    }

    /// Target as a vector: one-hot for labels.
    pub fn target_into(&self, i: usize, buf: &mut Vec<f64>) {
        buf.clear();
        match &self.targets {
            Targets::Labels { classes, labels } => {
                buf.resize(*classes, 0.0);
                buf[labels[i] as usize] = 1.0;
            }
            Targets::Values { dim, data } => buf.extend_from_slice(&data[i * dim..(i + 1) * dim]),
        }
    }

    pub fn target(&self, i: usize) -> Vec<f64> {
        let mut v = Vec::new();
        self.target_into(i, &mut v);
        v
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels[i] as usize),
            Targets::Values { .. } => None,
        }
    }

    /// The first `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let inputs = match &self.inputs {
            Inputs::F64 { dim, data } => Inputs::F64 {
                dim: *dim,
                data: data[..n * dim].to_vec(),
            },
            Inputs::Bytes { dim, data } => Inputs::Bytes {
                dim: *dim,
                data: data[..n * dim].to_vec(),
            },
        };
        let targets = match &self.targets {
            Targets::Labels { classes, labels } => Targets::Labels {
                classes: *classes,
                labels: labels[..n].to_vec(),
            },
            Targets::Values { dim, data } => Targets::Values {
                dim: *dim,
                data: data[..n * dim].to_vec(),
            },
        };
        Dataset {
            inputs,
            targets,
            split: self.split,
        }
    }
}

/// Parses one CIFAR-10 batch file.
pub fn parse_cifar_batch(
    path: &Path,
    bytes: &[u8],
    pixels: &mut Vec<u8>,
    labels: &mut Vec<u8>,
) -> Result<()> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: whole as u64,
            msg: format!(
                "file size {} is not a multiple of {CIFAR_RECORD}; trailing record truncated",
                bytes.len()
            ),
        });
    }
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: (r * CIFAR_RECORD) as u64,
                msg: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

fn load_batches(paths: &[PathBuf], split: Split) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = fs::read(p)?;
        parse_cifar_batch(p, &bytes, &mut pixels, &mut labels)?;
    }
    Ok(Dataset {
        inputs: Inputs::Bytes {
            dim: CIFAR_DIM,
            data: pixels,
        },
        targets: Targets::Labels {
            classes: CIFAR_CLASSES,
            labels,
        },
        split,
    })
}

/// Loads `data_batch_*.bin` (sorted by name) and `test_batch.bin` from
/// `dir`, or from its `cifar-10-batches-bin` subdirectory.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    };
    if !dir.is_dir() {
        return Err(Error::MissingData(format!(
            "CIFAR-10 directory {} does not exist",
            dir.display()
        )));
    }
    let mut train: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
        .collect();
    train.sort();
    let test = dir.join("test_batch.bin");
    if train.is_empty() || !test.is_file() {
        return Err(Error::MissingData(format!(
            "{} lacks data_batch_*.bin / test_batch.bin",
            dir.display()
        )));
    }
    Ok((
        load_batches(&train, Split::Train)?,
        load_batches(&[test], Split::Test)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Sine,
    /// `(x/π)³`, bounded by 1 on the sampling interval.
    Cubic,
}

impl SynthKind {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            SynthKind::Sine => x.sin(),
            SynthKind::Cubic => (x / std::f64::consts::PI).powi(3),
        }
    }
}

/// `n` pairs with `x ~ U(−π, π)` and `y = g(x) + N(0, noise_std²)`.
pub fn synth_regression(
    kind: SynthKind,
    n: usize,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Param("n must be >= 1".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Param(format!("noise_std {noise_std} must be >= 0")));
    }
    let pi = std::f64::consts::PI;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = -pi + 2.0 * pi * rng.uniform01();
        let noise = if noise_std > 0.0 {
            rng.gaussian(0.0, noise_std)
        } else {
            0.0
        };
        xs.push(x);
        ys.push(kind.eval(x) + noise);
    }
    Dataset::regression(xs, ys, Split::Train)
}

/// Gaussian clusters around `classes` random unit-scale prototypes in
/// `dim` dimensions: `x = proto[y] + N(0, noise_std²)`, labels uniform.
/// A desk-scale stand-in for image classification.
pub fn synth_classification(
    n: usize,
    dim: usize,
    classes: usize,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset)> {
    if n == 0 || dim == 0 || !(2..=256).contains(&classes) {
        return Err(Error::Param(format!(
            "need n >= 1, dim >= 1 and 2 <= classes <= 256 (got {n}, {dim}, {classes})"
        )));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Param(format!("noise_std {noise_std} must be >= 0")));
    }
    let protos: Vec<f64> = (0..classes * dim).map(|_| rng.gaussian(0.0, 1.0)).collect();
    let mut make = |count: usize, split: Split| {
        let mut data = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let y = rng.below(classes);
            labels.push(y as u8);
            data.extend((0..dim).map(|k| protos[y * dim + k] + rng.gaussian(0.0, noise_std)));
        }
        Dataset {
            inputs: Inputs::F64 { dim, data },
            targets: Targets::Labels { classes, labels },
            split,
        }
    };
    let train = make(n, Split::Train);
    let test = make(n.div_ceil(5), Split::Test);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..CIFAR_DIM).map(fill));
        r
    }

    #[test]
    fn parses_known_record() {
        let mut bytes = record(3, |i| (i % 256) as u8);
        bytes.extend(record(9, |_| 255));
        let (mut px, mut lb) = (Vec::new(), Vec::new());
        parse_cifar_batch(Path::new("f.bin"), &bytes, &mut px, &mut lb).unwrap();
        let ds = Dataset {
            inputs: Inputs::Bytes {
                dim: CIFAR_DIM,
                data: px,
            },
            targets: Targets::Labels {
                classes: 10,
                labels: lb,
            },
            split: Split::Train,
        };
        assert_eq!(ds.len(), 2);
        let x = ds.input(0);
        assert_eq!(x.len(), 3072);
        for (i, v) in x.iter().enumerate() {
            assert_eq!(*v, (i % 256) as f64 / 255.0);
        }
        assert_eq!(ds.input(1), vec![1.0; 3072]);
        assert_eq!(ds.label(0), Some(3));
        let t = ds.target(1);
        assert_eq!(t[9], 1.0);
        assert_eq!(t.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut bytes = record(1, |_| 0);
        bytes.extend(&record(2, |_| 0)[..100]);
        let err = parse_cifar_batch(Path::new("t.bin"), &bytes, &mut Vec::new(), &mut Vec::new())
            .unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 3073),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_label_reports_offset() {
        let mut bytes = record(1, |_| 0);
        bytes.extend(record(10, |_| 0));
        let err = parse_cifar_batch(Path::new("t.bin"), &bytes, &mut Vec::new(), &mut Vec::new())
            .unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 3073, .. }), "{err}");
    }

    #[test]
    fn missing_dir_is_missing_data() {
        let err = load_cifar10(Path::new("/nonexistent/cifar")).unwrap_err();
        assert!(matches!(err, Error::MissingData(_)));
    }

    #[test]
    fn loader_sorts_batches() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data_batch_2.bin"), record(2, |_| 2)).unwrap();
        fs::write(dir.path().join("data_batch_1.bin"), record(1, |_| 1)).unwrap();
        fs::write(dir.path().join("test_batch.bin"), record(7, |_| 7)).unwrap();
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(train.label(0), Some(1));
        assert_eq!(train.label(1), Some(2));
        assert_eq!(test.label(0), Some(7));
    }

    #[test]
    fn synthetic_classes_are_labelled_and_seeded() {
        let (a, t) = synth_classification(100, 5, 3, 0.1, &mut Rng::new(4)).unwrap();
        let (b, _) = synth_classification(100, 5, 3, 0.1, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            (a.len(), t.len(), a.input_dim(), a.target_dim()),
            (100, 20, 5, 3)
        );
        assert!((0..100).all(|i| a.label(i).unwrap() < 3));
    }

    #[test]
    fn noiseless_sine_is_exact() {
        let ds = synth_regression(SynthKind::Sine, 200, 0.0, &mut Rng::new(3)).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.target(i)[0], ds.input(i)[0].sin());
        }
        assert_eq!(SynthKind::Sine.eval(std::f64::consts::FRAC_PI_2), 1.0);
    }

    #[test]
    fn synthetic_data_is_seeded() {
        let a = synth_regression(SynthKind::Cubic, 1000, 0.1, &mut Rng::new(4)).unwrap();
        let b = synth_regression(SynthKind::Cubic, 1000, 0.1, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn residual_std_matches_noise() {
        let ds = synth_regression(SynthKind::Sine, 100_000, 0.1, &mut Rng::new(5)).unwrap();
        let r: Vec<f64> = (0..ds.len())
            .map(|i| ds.target(i)[0] - ds.input(i)[0].sin())
            .collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let s = (r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / r.len() as f64).sqrt();
        assert!((s - 0.1).abs() < 0.01, "{s}");
    }
}
