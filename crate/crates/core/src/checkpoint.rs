//! Binary checkpoint format `MFW1`, little-endian throughout:
//!
//! ```text
//! magic "MFW1" | version u32 | seed u64 | parametrization u8
//! arch_len u32 | arch JSON (UTF-8)
//! weight_count u32
//! per weight: name_len u16 | name | dtype u8 (0=f32, 1=f64) | ndim u8 | dims u32… | values row-major
//! ```

use std::fs;
use std::path::Path;

use crate::arch::{ArchGraph, Parametrization};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::{Matrix, Tensor, Vector};

pub const MAGIC: &[u8; 4] = b"MFW1";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            _ => Err(Error::Param(format!("unknown dtype {s:?} (f32 or f64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub network: Network,
}

fn par_code(p: Parametrization) -> u8 {
    match p {
        Parametrization::Sp => 0,
        Parametrization::MuP => 1,
        Parametrization::Mfp => 2,
    }
}

pub fn encode(net: &Network, seed: u64, dtype: Dtype) -> Result<Vec<u8>> {
    let arch = net.arch().to_json();
    let mut out = Vec::with_capacity(64 + arch.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    out.push(par_code(net.parametrization()));
    out.extend_from_slice(&u32_len(arch.len(), "arch JSON length")?.to_le_bytes());
    out.extend_from_slice(arch.as_bytes());
    let store = net.store();
    out.extend_from_slice(&u32_len(store.len(), "weight count")?.to_le_bytes());
    for (name, t) in store {
        let n = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("weight name {name:?} too long")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype.code());
        let shape = t.shape();
        out.push(shape.len() as u8);
        for d in &shape {
            out.extend_from_slice(&u32_len(*d, "dimension")?.to_le_bytes());
        }
        for &v in t.data() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} {n} overflows u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated reading {what} at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(Error::NotCheckpoint("missing MFW1 magic".into()));
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = r.u64("seed")?;
    let pcode = r.u8("parametrization")?;
    let alen = r.u32("arch length")? as usize;
    let json = std::str::from_utf8(r.take(alen, "arch JSON")?)
        .map_err(|e| Error::Checkpoint(format!("arch JSON is not UTF-8: {e}")))?;
    let arch = ArchGraph::from_json(json)?;
    if par_code(arch.parametrization()) != pcode {
        return Err(Error::Checkpoint(format!(
            "parametrization byte {pcode} disagrees with arch ({})",
            arch.parametrization()
        )));
    }
    let count = r.u32("weight count")? as usize;
    let mut store = std::collections::BTreeMap::new();
    for _ in 0..count {
        let nlen = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|e| Error::Checkpoint(format!("weight name is not UTF-8: {e}")))?
            .to_string();
        let dtype = match r.u8("dtype")? {
            0 => Dtype::F32,
            1 => Dtype::F64,
            d => return Err(Error::Checkpoint(format!("unknown dtype {d} for {name:?}"))),
        };
        let ndim = r.u8("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("dimension")? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("dimensions of {name:?} overflow")))?;
        let width = match dtype {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        };
        let raw = r.take(
            len.checked_mul(width)
                .ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?,
            "values",
        )?;
        let values: Vec<f64> = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        let t = match dims.as_slice() {
            [rows, cols] => Tensor::Matrix(Matrix::new(*rows, *cols, values)?),
            [_] => Tensor::Vector(Vector::new(values)),
            _ => return Err(Error::Checkpoint(format!("{name:?} has {ndim} dimensions"))),
        };
        if store.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate weight {name:?}")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    let network = Network::from_store(arch, store)?;
    Ok(Checkpoint { seed, network })
}

pub fn save_checkpoint(net: &Network, seed: u64, path: &Path, dtype: Dtype) -> Result<()> {
    fs::write(path, encode(net, seed, dtype)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_example3, build_mlp, MlpSpec};
    use crate::init::{initialize, nonzero_mean_default};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn net(p: Parametrization, seed: u64) -> Network {
        let n = Network::zeros(
            build_mlp(&MlpSpec::new(4, &[3, 5, 4]).bias(true).parametrization(p)).unwrap(),
        )
        .unwrap();
        initialize(&n, &nonzero_mean_default(p), &Rng::new(seed)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_and_idempotent() {
        let a = net(Parametrization::Mfp, 1);
        let bytes = encode(&a, 42, Dtype::F64).unwrap();
        let ck = decode(&bytes).unwrap();
        assert_eq!(ck.seed, 42);
        assert_eq!(ck.network, a);
        assert_eq!(encode(&ck.network, 42, Dtype::F64).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let b = encode(&net(Parametrization::MuP, 1), 7, Dtype::F64).unwrap();
        assert_eq!(&b[..4], b"MFW1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 7);
        assert_eq!(b[16], 1);
    }

    #[test]
    fn bad_magic_is_not_a_checkpoint() {
        let mut b = encode(&net(Parametrization::Sp, 1), 0, Dtype::F64).unwrap();
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::NotCheckpoint(_))));
        assert!(matches!(decode(b"MF"), Err(Error::NotCheckpoint(_))));
    }

    #[test]
    fn truncation_and_version_are_reported() {
        let b = encode(&net(Parametrization::Sp, 1), 0, Dtype::F64).unwrap();
        assert!(matches!(
            decode(&b[..b.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut v = b.clone();
        v[4] = 2;
        assert!(matches!(decode(&v), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn f32_error_is_within_single_precision() {
        let a = net(Parametrization::Mfp, 3);
        let ck = decode(&encode(&a, 0, Dtype::F32).unwrap()).unwrap();
        for (name, t) in a.store() {
            let max = t.data().iter().fold(0f64, |m, v| m.max(v.abs()));
            for (x, y) in t.data().iter().zip(ck.network.get(name).unwrap().data()) {
                assert!((x - y).abs() <= 2f64.powi(-23) * max);
            }
        }
    }

    #[test]
    fn forward_outputs_survive_round_trip() {
        let a = initialize(
            &Network::zeros(build_example3(6).unwrap()).unwrap(),
            &nonzero_mean_default(Parametrization::Mfp),
            &Rng::new(5),
        )
        .unwrap();
        let b = decode(&encode(&a, 0, Dtype::F64).unwrap()).unwrap().network;
        let mut r = Rng::new(9);
        for _ in 0..100 {
            let x = [r.gaussian(0.0, 2.0)];
            assert_eq!(
                a.forward(&x).unwrap()[0].to_bits(),
                b.forward(&x).unwrap()[0].to_bits()
            );
        }
    }

    #[test]
    fn shape_mismatch_with_arch_is_rejected() {
        let a = net(Parametrization::Mfp, 1);
        let mut b = encode(&a, 0, Dtype::F64).unwrap();
        // Locate the first weight's first dim and change it.
        let alen = u32::from_le_bytes(b[17..21].try_into().unwrap()) as usize;
        let mut p = 21 + alen + 4;
        let nlen = u16::from_le_bytes(b[p..p + 2].try_into().unwrap()) as usize;
        p += 2 + nlen + 2;
        b[p] = b[p].wrapping_add(1);
        assert!(decode(&b).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn arbitrary_values_round_trip(vals in prop::collection::vec(prop::num::f64::ANY, 15..=15)) {
            let mut n = Network::zeros(build_mlp(&MlpSpec::new(3, &[3])).unwrap()).unwrap();
            // u: 3, w1: 3×3, v: 3.
            let mut it = vals.into_iter();
            for name in ["u", "w1", "v"] {
                for x in n.data_mut(name).unwrap() {
                    *x = it.next().unwrap();
                }
            }
            let back = decode(&encode(&n, 1, Dtype::F64).unwrap()).unwrap().network;
            for (name, t) in n.store() {
                let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = back.get(name).unwrap().data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
