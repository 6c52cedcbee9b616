//! Bit-exact network serialization.
//!
//! Layout (all integers little-endian):
//! magic `VALNET01`, scalar tag byte (4 = f32, 8 = f64), three u64 config
//! dims (input, hidden, outputs), then every tensor in [`Network::tensors`]
//! order as `name_len u8, name bytes, elem_count u64, raw scalar bytes`.
//! Loading verifies each field and fails rather than guessing, so a restored
//! network is byte-for-byte the one that was saved.

use std::io::{Read, Write};

use super::{NetConfig, Network, Scalar};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"VALNET01";

impl<F: Scalar> Network<F> {
    pub fn save(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(F::TAG);
        let cfg = self.config();
        for dim in [cfg.input, cfg.hidden, cfg.outputs] {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for (name, data) in self.tensors() {
            buf.push(name.len() as u8);
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for &v in data {
                v.write_le(&mut buf);
            }
        }
        w.write_all(&buf)
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
            let end = *at + n;
            let s = bytes
                .get(*at..end)
                .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
            *at = end;
            Ok(s)
        };

        if take(&mut at, 8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a network checkpoint".into()));
        }
        let tag = take(&mut at, 1)?[0];
        if tag != F::TAG {
            return Err(Error::Checkpoint(format!(
                "scalar width mismatch: file has {tag}-byte values, loader expects {}",
                F::TAG
            )));
        }
        let dim = |at: &mut usize| -> Result<usize> {
            Ok(u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize)
        };
        let cfg = NetConfig::new(dim(&mut at)?, dim(&mut at)?, dim(&mut at)?);

        let mut net = Network::<F>::zeros(cfg);
        for (name, data) in net.tensors_mut() {
            let name_len = take(&mut at, 1)?[0] as usize;
            let found = take(&mut at, name_len)?;
            if found != name.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "tensor order mismatch: expected {name}, found {}",
                    String::from_utf8_lossy(found)
                )));
            }
            let count = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
            if count != data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected {} values, file has {count}",
                    data.len()
                )));
            }
            let width = F::TAG as usize;
            let raw = take(&mut at, count * width)?;
            for (i, v) in data.iter_mut().enumerate() {
                *v = F::read_le(&raw[i * width..(i + 1) * width]);
            }
        }
        if at != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_net() -> Network<f32> {
        Network::init(NetConfig::new(13, 16, 6), &mut ChaCha8Rng::seed_from_u64(42))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = sample_net();
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        let loaded = Network::<f32>::load(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, net);
        // Bit-for-bit: saving again yields identical bytes.
        let mut buf2 = Vec::new();
        loaded.save(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_wrong_scalar_width() {
        let net = sample_net();
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        let err = Network::<f64>::load(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("scalar width"));
    }

    #[test]
    fn rejects_corruption() {
        let net = sample_net();
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] ^= 0xff;
        assert!(Network::<f32>::load(&mut bad.as_slice()).is_err());
        let mut short = buf.clone();
        short.truncate(short.len() - 3);
        assert!(Network::<f32>::load(&mut short.as_slice()).is_err());
        let mut long = buf;
        long.push(0);
        assert!(Network::<f32>::load(&mut long.as_slice()).is_err());
    }
}
