//! Binary checkpoints of parameters, optimizer state and epoch.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DRWT" | version u32 | epoch u64 | d_in u32 | embed_dim u32 | lstm_hidden u32
//! | array count u32 | per array: name_len u32, name, rows u32, cols u32, f64 data
//! ```
//!
//! Parameter arrays use their parameter names; velocity arrays carry a
//! `velocity/` prefix.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nets::{Architecture, ParameterSet};
use crate::optim::OptimizerState;
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 4] = b"DRWT";
pub const VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_array(out: &mut Vec<u8>, name: &str, a: &Array2<f64>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, a.nrows())?;
    put_u32(out, a.ncols())?;
    for x in a.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let arch = state.params.arch;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    for d in [arch.d_in, arch.embed_dim, arch.lstm_hidden] {
        put_u32(&mut out, d)?;
    }
    let params = state.params.named();
    let velocity = state.optimizer.velocity.named();
    put_u32(&mut out, params.len() + velocity.len())?;
    for (name, a) in params {
        put_array(&mut out, name, a)?;
    }
    for (name, a) in velocity {
        put_array(&mut out, &format!("{VELOCITY_PREFIX}{name}"), a)?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let epoch = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("epoch out of range".into()))?;
    let arch = Architecture { d_in: r.u32()?, embed_dim: r.u32()?, lstm_hidden: r.u32()? };
    let mut params = ParameterSet::zeros(arch);
    let mut velocity = ParameterSet::zeros(arch);
    let count = r.u32()?;
    let expected = 2 * params.named().len();
    if count != expected {
        return Err(Error::Checkpoint(format!("expected {expected} arrays, found {count}")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let data = r.take(rows * cols * 8)?;
        let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (set, short) = match name.strip_prefix(VELOCITY_PREFIX) {
            Some(rest) => (&mut velocity, rest.to_string()),
            None => (&mut params, name.clone()),
        };
        let mut slots = set.named_mut();
        let slot = slots
            .iter_mut()
            .find(|(n, _)| *n == short)
            .ok_or_else(|| Error::Checkpoint(format!("unknown array {name}")))?;
        if slot.1.dim() != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "array {name} is {rows}x{cols}, expected {:?}",
                slot.1.dim()
            )));
        }
        *slot.1 = Array2::from_shape_vec((rows, cols), values).unwrap();
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("duplicate array {name}")));
        }
    }
    if !r.bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.bytes.len())));
    }
    Ok(TrainState { params, optimizer: OptimizerState { velocity }, epoch })
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(state)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainConfig;

    fn state() -> TrainState {
        let cfg = TrainConfig { embed_dim: 5, lstm_hidden: 3, seed: 4, ..Default::default() };
        let mut s = TrainState::initial(&cfg, 7).unwrap();
        for (i, (_, v)) in s.optimizer.velocity.named_mut().into_iter().enumerate() {
            v.mapv_inplace(|_| -(i as f64) * 0.1 - 1e-300);
        }
        s.epoch = 12;
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save(&s, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, s);
        for ((_, a), (_, b)) in back.params.named().into_iter().zip(s.params.named()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode(&back).unwrap(), encode(&s).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&state()).unwrap();
        assert_eq!(&bytes[..4], b"DRWT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 12);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 24);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let good = encode(&state()).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::Checkpoint(_))));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(decode(&bad_version), Err(Error::Checkpoint(_))));
        for cut in [0, 3, 10, 40, good.len() - 1] {
            assert!(matches!(decode(&good[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(load(&dir.path().join("missing.bin")).is_err());
    }

    proptest::proptest! {
        #[test]
        fn prop_round_trip(
            d_in in 1usize..6,
            embed in 1usize..6,
            hidden in 1usize..4,
            seed in 0u64..100,
            epoch in 0usize..1_000_000,
            scale in -1e200f64..1e200,
        ) {
            let cfg = TrainConfig { embed_dim: embed, lstm_hidden: hidden, seed, ..Default::default() };
            let mut s = TrainState::initial(&cfg, d_in).unwrap();
            for (_, v) in s.optimizer.velocity.named_mut() {
                v.mapv_inplace(|_| scale);
            }
            s.epoch = epoch;
            let bytes = encode(&s).unwrap();
            let back = decode(&bytes).unwrap();
            proptest::prop_assert_eq!(&back, &s);
            proptest::prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
