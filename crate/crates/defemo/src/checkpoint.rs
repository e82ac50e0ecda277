//! Bit-exact checkpoint format.
//!
//! Layout: magic `DEFEMO1\0`, a UTF-8 header of `key=value` lines ending
//! with a blank line (configs plus one `param=<name> <shape> <offset>`
//! manifest line per tensor), a little-endian IEEE-754 32-bit payload, and
//! a trailing 8-byte FNV-1a-64 checksum of the payload.
//!
//! ```
//! use defemo::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
//! use defemo::model::{self, EncoderConfig};
//! use defemo::trainer::TrainConfig;
//!
//! let config = EncoderConfig::tiny(20, 3);
//! let params = model::init_parameters::<f32>(&config).unwrap();
//! let ckpt = Checkpoint::new(config, TrainConfig::default(), params);
//!
//! let mut bytes = Vec::new();
//! write_checkpoint(&mut bytes, &ckpt).unwrap();
//! assert_eq!(&bytes[..8], b"DEFEMO1\0");
//!
//! // the round trip is bitwise identity
//! let loaded = read_checkpoint(bytes.as_slice()).unwrap();
//! let mut again = Vec::new();
//! write_checkpoint(&mut again, &loaded).unwrap();
//! assert_eq!(bytes, again);
//!
//! // a single flipped payload bit is caught by the checksum
//! let mut corrupt = bytes.clone();
//! let mid = corrupt.len() / 2;
//! corrupt[mid] ^= 1;
//! assert!(read_checkpoint(corrupt.as_slice()).is_err());
//! ```

use crate::error::{Error, Result};
use crate::model::EncoderConfig;
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"DEFEMO1\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub encoder_config: EncoderConfig,
    pub train_config: TrainConfig,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn new(
        encoder_config: EncoderConfig,
        train_config: TrainConfig,
        params: ParamSet<f32>,
    ) -> Self {
        Checkpoint { format_version: FORMAT_VERSION, encoder_config, train_config, params }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_checkpoint(&mut file, ckpt)
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    let mut header = String::new();
    header.push_str(&format!("format_version={}\n", ckpt.format_version));
    header.push_str(&format!(
        "encoder_config={}\n",
        serde_json::to_string(&ckpt.encoder_config).map_err(|e| Error::Checkpoint(e.to_string()))?
    ));
    header.push_str(&format!(
        "train_config={}\n",
        serde_json::to_string(&ckpt.train_config).map_err(|e| Error::Checkpoint(e.to_string()))?
    ));

    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize; // in floats
    for (name, tensor) in ckpt.params.iter() {
        let shape = tensor
            .shape()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x");
        let shape = if shape.is_empty() { "scalar".to_string() } else { shape };
        header.push_str(&format!("param={name} {shape} {offset}\n"));
        for &v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += tensor.len();
    }
    header.push('\n');

    w.write_all(MAGIC)?;
    w.write_all(header.as_bytes())?;
    w.write_all(&payload)?;
    w.write_all(&fnv1a64(&payload).to_le_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&bytes[..])
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    // header ends at the first blank line
    let header_end = rest
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Checkpoint("truncated file: unterminated header".into()))?;
    let header = std::str::from_utf8(&rest[..header_end])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let body = &rest[header_end + 2..];

    let mut format_version = None;
    let mut encoder_config: Option<EncoderConfig> = None;
    let mut train_config: Option<TrainConfig> = None;
    let mut manifest: Vec<(String, Vec<usize>, usize)> = Vec::new();
    for line in header.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line {line:?}")))?;
        match key {
            "format_version" => {
                format_version = Some(value.parse::<u32>().map_err(|_| {
                    Error::Checkpoint(format!("bad format version {value:?}"))
                })?)
            }
            "encoder_config" => {
                encoder_config = Some(
                    serde_json::from_str(value).map_err(|e| Error::Checkpoint(e.to_string()))?,
                )
            }
            "train_config" => {
                train_config = Some(
                    serde_json::from_str(value).map_err(|e| Error::Checkpoint(e.to_string()))?,
                )
            }
            "param" => {
                let mut parts = value.split(' ');
                let (name, shape, offset) = match (parts.next(), parts.next(), parts.next()) {
                    (Some(n), Some(s), Some(o)) => (n, s, o),
                    _ => return Err(Error::Checkpoint(format!("malformed manifest {value:?}"))),
                };
                let dims: Vec<usize> = if shape == "scalar" {
                    vec![]
                } else {
                    shape
                        .split('x')
                        .map(|d| {
                            d.parse().map_err(|_| {
                                Error::Checkpoint(format!("bad shape {shape:?} for {name:?}"))
                            })
                        })
                        .collect::<Result<_>>()?
                };
                let offset: usize = offset
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad offset for {name:?}")))?;
                manifest.push((name.to_string(), dims, offset));
            }
            other => return Err(Error::Checkpoint(format!("unknown header key {other:?}"))),
        }
    }

    let format_version =
        format_version.ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
    if format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {format_version} (expected {FORMAT_VERSION})"
        )));
    }
    let encoder_config =
        encoder_config.ok_or_else(|| Error::Checkpoint("missing encoder_config".into()))?;
    let train_config =
        train_config.ok_or_else(|| Error::Checkpoint("missing train_config".into()))?;

    let total_floats: usize = manifest.iter().map(|(_, dims, _)| dims.iter().product::<usize>()).sum();
    let expected = total_floats * 4 + 8;
    if body.len() < expected {
        return Err(Error::Checkpoint(format!(
            "truncated file: payload+checksum needs {expected} bytes, found {}",
            body.len()
        )));
    }
    if body.len() > expected {
        return Err(Error::Checkpoint("trailing bytes after checksum".into()));
    }
    let (payload, checksum_bytes) = body.split_at(total_floats * 4);
    let stored = u64::from_le_bytes(checksum_bytes.try_into().unwrap());
    let actual = fnv1a64(payload);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:#018x}, computed {actual:#018x}"
        )));
    }

    let mut params = ParamSet::new();
    for (name, dims, offset) in manifest {
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let at = (offset + i) * 4;
            data.push(f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()));
        }
        params.insert(
            name,
            Tensor::new(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
    }
    Ok(Checkpoint { format_version, encoder_config, train_config, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;
    use crate::trainer::TrainConfig;

    fn sample() -> Checkpoint {
        let cfg = EncoderConfig::tiny(20, 3);
        let params = init_parameters::<f32>(&cfg).unwrap();
        Checkpoint::new(cfg, TrainConfig::default(), params)
    }

    #[test]
    fn round_trip_is_bitwise_identity() {
        let ckpt = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let loaded = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(ckpt, loaded);
        // a second save produces identical bytes
        let mut buf2 = Vec::new();
        write_checkpoint(&mut buf2, &loaded).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn payload_corruption_detected() {
        let ckpt = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let flip = buf.len() - 100; // inside the payload
        buf[flip] ^= 0x01;
        let err = read_checkpoint(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn truncation_detected() {
        let ckpt = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        buf.truncate(buf.len() - 16);
        let err = read_checkpoint(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn version_mismatch_detected() {
        let ckpt = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let needle = b"format_version=1";
        let pos = buf.windows(needle.len()).position(|w| w == needle).unwrap();
        buf[pos + needle.len() - 1] = b'9';
        let err = read_checkpoint(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn bad_magic_detected() {
        let err = read_checkpoint(&b"NOTACKPT"[..]).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
