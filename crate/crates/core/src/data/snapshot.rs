//! Binary snapshot containers for datasets and network parameters.
//!
//! All integers are little-endian `u64` unless noted and all reals are
//! little-endian IEEE-754 `f64`, so a snapshot restores bit-identical values.
//!
//! Dataset (`CPDS`):
//!
//! ```text
//! magic "CPDS" | version u32 | n | d | C | δ f64
//! features n·d f64 (row-major) | labels n u32 | truth n u32 | mask n u8
//! ```
//!
//! Parameters (`CPNP`):
//!
//! ```text
//! magic "CPNP" | version u32 | step | input_dim | L | widths L×u64
//! activation u8 (0 linear, 1 relu) | head u8 (0 sigmoid, 1 softmax)
//! num_logits | output_scale f64 | P | params P f64
//! ```

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::network::{Activation, Head, NetworkConfig, NetworkState};
use crate::numcore::Matrix;

const DATASET_MAGIC: &[u8; 4] = b"CPDS";
const PARAMS_MAGIC: &[u8; 4] = b"CPNP";
const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Snapshot("count overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Snapshot("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Snapshot(format!(
                "expected magic {:?}",
                std::str::from_utf8(magic).unwrap_or("?")
            )));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Snapshot(format!(
                "{} trailing bytes",
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let (n, d) = (ds.len(), ds.dim());
    let mut out = Vec::with_capacity(40 + n * (8 * d + 9));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut out, n);
    put_u64(&mut out, d);
    put_u64(&mut out, ds.num_classes());
    put_f64(&mut out, ds.noise_level());
    for &v in ds.features().data() {
        put_f64(&mut out, v);
    }
    for &l in ds.labels().iter().chain(ds.truth()) {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out.extend(ds.noise_mask().iter().map(|&m| u8::from(m)));
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader { bytes, at: 0 };
    r.header(DATASET_MAGIC)?;
    let n = r.count()?;
    let d = r.count()?;
    let classes = r.count()?;
    let delta = r.f64()?;
    let features = r.f64s(n.checked_mul(d).ok_or_else(|| Error::Snapshot("size overflow".into()))?)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u32()? as usize);
    }
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        truth.push(r.u32()? as usize);
    }
    let mask = r.take(n)?.to_vec();
    r.finish()?;
    let ds = LabeledDataset::new(Matrix::new(n, d, features)?, labels, truth, classes, delta)?;
    if ds.noise_mask().iter().zip(&mask).any(|(&a, &b)| u8::from(a) != b) {
        return Err(Error::Snapshot("noise mask disagrees with labels".into()));
    }
    Ok(ds)
}

/// Network parameters at a given training step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    pub step: u64,
    pub config: NetworkConfig,
    pub params: Vec<f64>,
}

impl ParamSnapshot {
    pub fn of(state: &NetworkState, step: u64) -> Self {
        Self {
            step,
            config: state.config().clone(),
            params: state.params().to_vec(),
        }
    }

    pub fn restore(&self) -> Result<NetworkState> {
        NetworkState::from_params(self.config.clone(), self.params.clone())
    }
}

pub fn encode_params(snap: &ParamSnapshot) -> Vec<u8> {
    let cfg = &snap.config;
    let mut out = Vec::with_capacity(64 + 8 * snap.params.len());
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&snap.step.to_le_bytes());
    put_u64(&mut out, cfg.input_dim);
    put_u64(&mut out, cfg.hidden_widths.len());
    for &w in &cfg.hidden_widths {
        put_u64(&mut out, w);
    }
    out.push(match cfg.activation {
        Activation::Linear => 0,
        Activation::Relu => 1,
    });
    out.push(match cfg.head {
        Head::Sigmoid => 0,
        Head::Softmax => 1,
    });
    put_u64(&mut out, cfg.num_logits);
    put_f64(&mut out, cfg.output_scale);
    put_u64(&mut out, snap.params.len());
    for &p in &snap.params {
        put_f64(&mut out, p);
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamSnapshot> {
    let mut r = Reader { bytes, at: 0 };
    r.header(PARAMS_MAGIC)?;
    let step = r.u64()?;
    let input_dim = r.count()?;
    let depth = r.count()?;
    if depth > bytes.len() {
        return Err(Error::Snapshot("layer count exceeds file size".into()));
    }
    let hidden_widths = (0..depth).map(|_| r.count()).collect::<Result<Vec<_>>>()?;
    let activation = match r.u8()? {
        0 => Activation::Linear,
        1 => Activation::Relu,
        t => return Err(Error::Snapshot(format!("unknown activation tag {t}"))),
    };
    let head = match r.u8()? {
        0 => Head::Sigmoid,
        1 => Head::Softmax,
        t => return Err(Error::Snapshot(format!("unknown head tag {t}"))),
    };
    let num_logits = r.count()?;
    let output_scale = r.f64()?;
    let p = r.count()?;
    let params = r.f64s(p)?;
    r.finish()?;
    let config = NetworkConfig {
        input_dim,
        hidden_widths,
        activation,
        head,
        num_logits,
        output_scale,
    };
    config.validate()?;
    if config.param_count() != p {
        return Err(Error::Snapshot(format!(
            "parameter count {p} does not match layout ({})",
            config.param_count()
        )));
    }
    Ok(ParamSnapshot { step, config, params })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dataset(ds))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    decode_dataset(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_params(snap: &ParamSnapshot, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_params(snap))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ParamSnapshot> {
    let path = path.as_ref();
    decode_params(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{corrupt_labels, gen_two_clusters};
    use crate::network::init_ntk;
    use crate::numcore::SeededRng;

    fn noisy() -> LabeledDataset {
        let mut rng = SeededRng::new(4);
        let ds = gen_two_clusters(20, [1.0, 0.5], [-1.0, 0.0], 0.7, &mut rng).unwrap();
        corrupt_labels(&ds, 0.3, &mut rng).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let ds = noisy();
        let bytes = encode_dataset(&ds);
        assert_eq!(&bytes[..4], b"CPDS");
        assert_eq!(bytes.len(), 4 + 4 + 32 + 20 * (16 + 8) + 20);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_dataset(&back), bytes);
    }

    #[test]
    fn dataset_rejects_damage() {
        let bytes = encode_dataset(&noisy());
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1]), Err(Error::Snapshot(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_dataset(&extra), Err(Error::Snapshot(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_dataset(&magic), Err(Error::Snapshot(_))));
        let mut mask = bytes;
        let last = mask.len() - 1;
        mask[last] ^= 1;
        assert!(matches!(decode_dataset(&mask), Err(Error::Snapshot(_))));
    }

    #[test]
    fn params_round_trip_through_files() {
        let cfg = NetworkConfig::multiclass(3, vec![5, 4], Activation::Relu, 3).with_output_scale(0.25);
        let state = init_ntk(cfg, &mut SeededRng::new(9)).unwrap();
        let snap = ParamSnapshot::of(&state, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        write_params(&snap, &path).unwrap();
        let back = read_params(&path).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.restore().unwrap().params(), state.params());

        let ds_path = dir.path().join("d.bin");
        let ds = noisy();
        write_dataset(&ds, &ds_path).unwrap();
        assert_eq!(read_dataset(&ds_path).unwrap(), ds);
    }

    #[test]
    fn params_reject_bad_layout() {
        let cfg = NetworkConfig::binary(2, vec![3], Activation::Linear);
        let state = init_ntk(cfg, &mut SeededRng::new(1)).unwrap();
        let mut bytes = encode_params(&ParamSnapshot::of(&state, 0));
        // input_dim field sits right after magic, version and step
        bytes[16] = 5;
        assert!(matches!(decode_params(&bytes), Err(Error::Snapshot(_))));
    }
}
