//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `FDGANCKP`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header naming every tensor and
//! its shape, then the tensor data as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FDGANCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    net: NetConfig,
    step: u64,
    entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    buffer: bool,
}

/// Network weights and running statistics plus the configuration they fit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub step: u64,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn new(net: NetConfig, step: u64, store: ParamStore) -> Self {
        Self { net, step, store }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut entries = Vec::new();
        let tensors = self
            .store
            .params()
            .iter()
            .map(|(k, t)| (k, t, false))
            .chain(self.store.buffers().iter().map(|(k, t)| (k, t, true)));
        let mut ordered = Vec::new();
        for (name, t, buffer) in tensors {
            entries.push(Entry { name: name.clone(), shape: t.shape().to_vec(), buffer });
            ordered.push(t);
        }
        let header = serde_json::to_vec(&Header {
            format_version: FORMAT_VERSION,
            net: self.net,
            step: self.step,
            entries,
        })?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for t in ordered {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 30 {
            return Err(Error::Format("checkpoint header too large".into()));
        }
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header).map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        let header: Header =
            serde_json::from_slice(&header).map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        if header.format_version != version {
            return Err(Error::Format("checkpoint header version mismatch".into()));
        }
        header.net.validate().map_err(|e| Error::Format(format!("bad network config: {e}")))?;
        let mut store = ParamStore::new();
        let mut buf = [0u8; 8];
        for e in header.entries {
            let n: usize = e.shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Format(format!("truncated data for {}", e.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            let t = Tensor::new(e.shape, data)?;
            if e.buffer {
                store.insert_buffer(e.name, t);
            } else {
                store.insert_param(e.name, t);
            }
        }
        Ok(Self { net: header.net, step: header.step, store })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_networks;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetConfig::new(16, 16).unwrap();
        let mut store = init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        store.insert_param("odd", Tensor::new(vec![3], vec![f64::MIN_POSITIVE, -0.0, 1e300]).unwrap());
        let ck = Checkpoint::new(cfg, 42, store);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.net, cfg);
        for (k, t) in ck.store.params().iter().chain(ck.store.buffers()) {
            let u = back.store.param(k).or_else(|_| back.store.buffer(k)).unwrap();
            assert_eq!(t.shape(), u.shape());
            for (a, b) in t.data().iter().zip(u.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{k}");
            }
        }
        assert_eq!(back.store.buffers().len(), ck.store.buffers().len());
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(matches!(Checkpoint::read_from(&b"NOTACKPT"[..]), Err(Error::Format(_))));
        let cfg = NetConfig::new(16, 16).unwrap();
        let ck = Checkpoint::new(cfg, 0, ParamStore::new());
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        bytes[8] = 7;
        assert!(matches!(Checkpoint::read_from(bytes.as_slice()), Err(Error::Format(_))));
        let mut full = Vec::new();
        Checkpoint::new(cfg, 0, init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap())
            .write_to(&mut full)
            .unwrap();
        full.truncate(full.len() - 5);
        assert!(matches!(Checkpoint::read_from(full.as_slice()), Err(Error::Format(_))));
    }
}
