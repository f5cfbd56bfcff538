//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "URGBDLCK" | u32 version | u32 header length | header (UTF-8 key=value lines)
//! u32 parameter count
//! per parameter: u32 name length | name | u32 ndim | u64 dims.. | f64 values (row-major)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::encoder::HyperParams;
use crate::error::{Error, Result};
use crate::mcd::McdConfig;
use crate::model::{Model, ModelSpec};
use crate::vi::ViConfig;

pub const MAGIC: &[u8; 8] = b"URGBDLCK";
pub const FORMAT_VERSION: u32 = 1;

fn header_text(model: &Model) -> String {
    let s = &model.spec;
    let pairs: Vec<(&str, String)> = vec![
        ("model_kind", s.kind.to_string()),
        ("vocab_size", model.vocab_size().to_string()),
        ("max_len", s.hp.max_len.to_string()),
        ("embed_dim", s.hp.embed_dim.to_string()),
        ("hidden", s.hp.hidden.to_string()),
        ("z_dim", s.hp.z_dim.to_string()),
        ("attention", s.hp.attention.to_string()),
        ("dropout_rate", s.mcd.dropout_rate.to_string()),
        ("mcd_samples", s.mcd.num_samples.to_string()),
        ("vi_train_samples", s.vi.train_samples.to_string()),
        ("vi_test_samples", s.vi.test_samples.to_string()),
        ("kl_weight", s.vi.kl_weight.to_string()),
        ("kl_warmup_epochs", s.vi.kl_warmup_epochs.to_string()),
        ("log_sigma_min", s.vi.log_sigma_min.to_string()),
        ("log_sigma_max", s.vi.log_sigma_max.to_string()),
    ];
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_header(text: &str) -> Result<(ModelSpec, usize)> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
        let raw = map
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("header is missing {key}")))?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("header value {key}={raw} is invalid")))
    }
    let spec = ModelSpec {
        kind: get(&map, "model_kind")?,
        hp: HyperParams {
            max_len: get(&map, "max_len")?,
            embed_dim: get(&map, "embed_dim")?,
            hidden: get(&map, "hidden")?,
            z_dim: get(&map, "z_dim")?,
            attention: get(&map, "attention")?,
        },
        mcd: McdConfig {
            dropout_rate: get(&map, "dropout_rate")?,
            num_samples: get(&map, "mcd_samples")?,
        },
        vi: ViConfig {
            train_samples: get(&map, "vi_train_samples")?,
            test_samples: get(&map, "vi_test_samples")?,
            kl_weight: get(&map, "kl_weight")?,
            kl_warmup_epochs: get(&map, "kl_warmup_epochs")?,
            log_sigma_min: get(&map, "log_sigma_min")?,
            log_sigma_max: get(&map, "log_sigma_max")?,
        },
    };
    Ok((spec, get(&map, "vocab_size")?))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let header = header_text(model);
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(header.as_bytes());
    put_u32(&mut out, model.store.len() as u32);
    for (_, p) in model.store.iter() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, 2);
        for d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated checkpoint: needed {n} bytes at offset {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8 in checkpoint".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let (spec, vocab_size) = parse_header(r.text()?)?;
    let mut model = Model::new(spec, vocab_size, None, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} parameters, model layout needs {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let name = r.text()?.to_string();
        let ndim = r.u32()? as usize;
        if ndim != 2 {
            return Err(Error::Checkpoint(format!("parameter {name}: unsupported rank {ndim}")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name}: shape overflow")))?;
        let raw = r.take(n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(rows, cols, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        model.store.load_value(&name, tensor)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
