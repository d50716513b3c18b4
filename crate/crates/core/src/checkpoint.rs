//! Binary checkpoint format.
//!
//! ```text
//! "SSLP" | u32 version
//! u64 len | config text
//! u64 len | stats text (label statistics, best validation loss, epoch)
//! u64 count | per parameter: u64 len | name | u64 rank | u64 dims.. | f32 data..
//! ```
//!
//! All integers and floats are little-endian. Texts are `key = value` lines
//! with shortest round-trip float formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::audio::LabelStats;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelParams, Tensor};
use crate::seed::stream;

pub const MAGIC: &[u8; 4] = b"SSLP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub stats: LabelStats,
    pub params: ModelParams<f32>,
    pub best_val_loss: f64,
    /// 1-based epoch the parameters were taken from.
    pub epoch: usize,
}

fn stats_text(c: &Checkpoint) -> String {
    let s = &c.stats;
    let mut out = String::new();
    for (k, v) in [
        ("height_mean", s.height_mean),
        ("height_std", s.height_std),
        ("age_mean", s.age_mean),
        ("age_std", s.age_std),
        ("best_val_loss", c.best_val_loss),
    ] {
        writeln!(out, "{k} = {v}").expect("write to string");
    }
    writeln!(out, "epoch = {}", c.epoch).expect("write to string");
    out
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for text in [c.config.training_text(), stats_text(c)] {
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
    }
    let named = c.params.named();
    out.extend_from_slice(&(named.len() as u64).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(c)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CheckpointTruncated { what: what() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &dyn Fn() -> String) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &dyn Fn() -> String) -> Result<usize> {
        let n = self.u64(what)?;
        let left = (self.buf.len() - self.pos) as u64;
        if n > left {
            return Err(Error::CheckpointTruncated { what: what() });
        }
        Ok(n as usize)
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let label = || what.to_string();
        let n = self.len(&label)?;
        std::str::from_utf8(self.take(n, &label)?)
            .map_err(|_| Error::NotACheckpoint(format!("{what} is not UTF-8")))
    }
}

fn parse_stats(text: &str) -> Result<(LabelStats, f64, usize)> {
    let mut map = std::collections::HashMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::NotACheckpoint(format!("bad stats line `{line}`")))?;
        map.insert(k, v);
    }
    let num = |k: &str| -> Result<f64> {
        map.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::NotACheckpoint(format!("stats field `{k}` missing or malformed")))
    };
    let stats = LabelStats {
        height_mean: num("height_mean")?,
        height_std: num("height_std")?,
        age_mean: num("age_mean")?,
        age_std: num("age_std")?,
    };
    let epoch = map
        .get("epoch")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::NotACheckpoint("stats field `epoch` missing or malformed".into()))?;
    Ok((stats, num("best_val_loss")?, epoch))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotACheckpoint("bad magic bytes".into()));
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let version = u32::from_le_bytes(cur.take(4, &|| "version".into())?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let config = TrainConfig::from_text(cur.text("config")?)?;
    config.model.validate()?;
    let (stats, best_val_loss, epoch) = parse_stats(cur.text("stats")?)?;

    let mut params: ModelParams<f32> = init_params(&config.model, &mut stream(0, "shape")).zeros_like();
    let expected: Vec<(String, Vec<usize>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    let count = cur.u64(&|| "parameter count".into())? as usize;
    if count != expected.len() {
        return Err(Error::CheckpointShape {
            name: "<count>".into(),
            reason: format!("{count} arrays stored, config implies {}", expected.len()),
        });
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let ctx = |part: &str| format!("{part} of parameter `{name}`");
        let name_len = cur.len(&|| ctx("name"))?;
        let stored = std::str::from_utf8(cur.take(name_len, &|| ctx("name"))?)
            .map_err(|_| Error::NotACheckpoint(ctx("non-UTF-8 name")))?;
        if stored != name {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                reason: format!("found `{stored}` in its place"),
            });
        }
        let rank = cur.u64(&|| ctx("rank"))? as usize;
        if rank > 8 {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                reason: format!("rank {rank}"),
            });
        }
        let dims = (0..rank)
            .map(|_| cur.u64(&|| ctx("dims")).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                reason: format!("stored shape {dims:?}, config implies {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4, &|| ctx("data"))?;
        *slot = Tensor {
            shape: shape.clone(),
            data: raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        };
    }
    if cur.pos != bytes.len() {
        return Err(Error::NotACheckpoint(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - cur.pos
        )));
    }
    Ok(Checkpoint {
        config,
        stats,
        params,
        best_val_loss,
        epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn sample() -> Checkpoint {
        let mut config = TrainConfig::default();
        config.model = ModelConfig {
            conv_channels: 8,
            latent_dim: 4,
            regressor_hidden: vec![6, 5],
            discriminator_hidden: vec![7, 3],
            groupnorm_groups: 4,
            ..ModelConfig::default()
        };
        config.optim.lr = 0.1 + 0.2;
        Checkpoint {
            params: init_params(&config.model, &mut stream(3, "init")),
            config,
            stats: LabelStats {
                height_mean: 170.123456789,
                height_std: 9.87,
                age_mean: 33.3,
                age_std: 1.0 / 3.0,
            },
            best_val_loss: 0.123456789012345,
            epoch: 7,
        }
    }

    fn bits(p: &ModelParams<f32>) -> Vec<u32> {
        p.named()
            .iter()
            .flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let back = decode_checkpoint(&encode_checkpoint(&c)).unwrap();
        assert_eq!(bits(&back.params), bits(&c.params));
        assert_eq!(back.stats, c.stats);
        assert_eq!(back.best_val_loss.to_bits(), c.best_val_loss.to_bits());
        assert_eq!(back.epoch, 7);
        assert_eq!(back.config.training_text(), c.config.training_text());
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("not a checkpoint"));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::CheckpointVersion { found: 2, .. })));

        let cut = &bytes[..bytes.len() - 2];
        let msg = decode_checkpoint(cut).unwrap_err().to_string();
        assert!(msg.contains("discriminator.fc2.bias"), "{msg}");

        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }

    #[test]
    fn shape_mismatch_names_the_parameter() {
        let mut c = sample();
        let good = encode_checkpoint(&c);
        c.config.model.latent_dim = 5;
        let text_old = c.config.training_text().replace("latent_dim = 5", "latent_dim = 4");
        let text_new = c.config.training_text();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&good[..8]);
        bytes.extend_from_slice(&(text_new.len() as u64).to_le_bytes());
        bytes.extend_from_slice(text_new.as_bytes());
        bytes.extend_from_slice(&good[16 + text_old.len()..]);
        let msg = decode_checkpoint(&bytes).unwrap_err().to_string();
        assert!(msg.contains("encoder.lstm.w_ih"), "{msg}");
    }
}
