//! Binary checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | content                                             |
//! |------------------|-----------------------------------------------------|
//! | 4                | magic `NRMC`                                        |
//! | 4                | format version (`u32`)                              |
//! | 4                | header length `n` (`u32`)                           |
//! | n                | header: compact JSON `{"spec": .., "meta": ..}`     |
//! | 8 per parameter  | `f64` parameter blocks in declaration order         |
//! | 4                | CRC32 of every preceding byte                       |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NRMC";
pub const CHECKPOINT_VERSION: u32 = 1;

const PREAMBLE: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub lambda_recon: f64,
    pub lambda_neg: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta { epoch: 0, seed: 0, lambda_recon: 0.0, lambda_neg: 0.0 }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(network: Network, meta: TrainingMeta) -> Self {
        Checkpoint { network, meta }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header { spec: self.network.spec().clone(), meta: self.meta.clone() })?;
        let n_params = self.network.params.count();
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + 8 * n_params + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.network.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("checkpoint is only {} bytes", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Version(format!("missing NRMC magic (found {:02x?})", &bytes[..4])));
        }
        if bytes.len() < PREAMBLE + 4 {
            return Err(Error::Truncated(format!("checkpoint is only {} bytes", bytes.len())));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version(format!("version {version}, this build reads {CHECKPOINT_VERSION}")));
        }
        let checksum_ok = || {
            let body = &bytes[..bytes.len() - 4];
            let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
            let computed = crc32fast::hash(body);
            if stored == computed {
                Ok(())
            } else {
                Err(Error::Checksum { stored, computed })
            }
        };

        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let params_start = PREAMBLE + header_len;
        if params_start + 4 > bytes.len() {
            return Err(Error::Truncated(format!("header claims {header_len} bytes, file has {}", bytes.len())));
        }
        let header: Header = match serde_json::from_slice(&bytes[PREAMBLE..params_start]) {
            Ok(h) => h,
            Err(e) => {
                checksum_ok()?;
                return Err(e.into());
            }
        };
        let template = match Network::build(header.spec.clone(), 0) {
            Ok(net) => net,
            Err(e) => {
                checksum_ok()?;
                return Err(e);
            }
        };
        let n_params = template.params.count();
        let expected = params_start + 8 * n_params + 4;
        if bytes.len() < expected {
            return Err(Error::Truncated(format!("expected {expected} bytes, file has {}", bytes.len())));
        }
        checksum_ok()?;
        if bytes.len() > expected {
            return Err(Error::Malformed(format!("{} trailing bytes after the checksum", bytes.len() - expected)));
        }

        let mut params = template.params;
        let mut chunks = bytes[params_start..expected - 4].chunks_exact(8);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = f64::from_le_bytes(chunks.next().expect("sized above").try_into().expect("8 bytes"));
            }
        }
        Ok(Checkpoint { network: Network::from_parts(header.spec, params)?, meta: header.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let net = Network::build(NetworkSpec::reference([1, 8, 8], 3).with_sigma(0.7), 9).unwrap();
        Checkpoint::new(net, TrainingMeta { epoch: 4, seed: 9, lambda_recon: 0.01, lambda_neg: 0.1 })
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.network.params.tensors().iter().zip(ck.network.params.tensors()) {
            let bits = |t: &crate::tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn corrupted_parameter_byte_is_a_checksum_error() {
        let mut bytes = sample().to_bytes().unwrap();
        let pos = bytes.len() - 100;
        bytes[pos] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn corrupted_header_byte_is_a_checksum_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[PREAMBLE + 3] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn wrong_magic_is_a_version_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version(_))));
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version(_))));
    }

    #[test]
    fn truncation_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [2, 10, 40, bytes.len() - 9] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }
    }
}
