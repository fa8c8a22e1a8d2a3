//! `SRNM` model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SRNM"  u32 blob_len  blob (UTF-8 key=value lines)
//! repeated per parameter, in declared order:
//!     u16 name_len  name  u32 count  count x f32
//! ```

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{format_err, Error, Result};
use crate::tensor::Real;

pub const MODEL_MAGIC: &[u8; 4] = b"SRNM";

impl ModelConfig {
    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let fields: [(&str, String); 12] = [
            ("stem_width", self.stem_width.to_string()),
            ("rdab_convs", self.rdab_convs.to_string()),
            ("rdab_growth", self.rdab_growth.to_string()),
            ("scales", self.scales.to_string()),
            ("dense_branch_layers", self.dense_branch_layers.to_string()),
            ("dense_branch_growth", self.dense_branch_growth.to_string()),
            ("attention_reduction", self.attention_reduction.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("out_bands", self.out_bands.to_string()),
            ("use_coordconv", self.use_coordconv.to_string()),
            ("use_cbam", self.use_cbam.to_string()),
            ("seed", self.seed.to_string()),
        ];
        fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses [`ModelConfig::to_text`] output. Missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line without '=': {line:?}")))?;
            let bad = || Error::Config(format!("bad value for {key}: {value:?}"));
            let uint = || value.parse::<usize>().map_err(|_| bad());
            let flag = || value.parse::<bool>().map_err(|_| bad());
            match key {
                "stem_width" => cfg.stem_width = uint()?,
                "rdab_convs" => cfg.rdab_convs = uint()?,
                "rdab_growth" => cfg.rdab_growth = uint()?,
                "scales" => cfg.scales = uint()?,
                "dense_branch_layers" => cfg.dense_branch_layers = uint()?,
                "dense_branch_growth" => cfg.dense_branch_growth = uint()?,
                "attention_reduction" => cfg.attention_reduction = uint()?,
                "in_channels" => cfg.in_channels = uint()?,
                "out_bands" => cfg.out_bands = uint()?,
                "use_coordconv" => cfg.use_coordconv = flag()?,
                "use_cbam" => cfg.use_cbam = flag()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}

impl<T: Real> Model<T> {
    /// Serializes to `SRNM` bytes; values are stored as 32-bit floats.
    pub fn to_bytes(&self) -> Vec<u8> {
        let blob = self.config.to_text();
        let mut out =
            Vec::with_capacity(8 + blob.len() + 4 * self.count_params() + 64 * self.params.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.tensor.numel() as u32).to_le_bytes());
            for v in p.tensor.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parses `SRNM` bytes into a 32-bit model.
pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MODEL_MAGIC {
        return Err(format_err(0, "bad magic, expected \"SRNM\""));
    }
    let blob_len = cur.u32("config length")? as usize;
    let blob_at = cur.pos as u64;
    let blob = std::str::from_utf8(cur.take(blob_len, "config blob")?)
        .map_err(|e| format_err(blob_at, format!("config blob is not UTF-8: {e}")))?;
    let config = ModelConfig::from_text(blob).map_err(|e| format_err(blob_at, e.to_string()))?;

    let params_at = cur.pos as u64;
    let mut values = Vec::new();
    while !cur.at_end() {
        let name_len = cur.u16("parameter name length")? as usize;
        let name_at = cur.pos as u64;
        let name = std::str::from_utf8(cur.take(name_len, "parameter name")?)
            .map_err(|e| format_err(name_at, format!("parameter name is not UTF-8: {e}")))?
            .to_string();
        let count = cur.u32("element count")? as usize;
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| format_err(cur.pos as u64, "element count overflows"))?;
        let raw = cur.take(bytes, &format!("data of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push((name, data));
    }
    Model::from_parts(&config, values).map_err(|e| format_err(params_at, e.to_string()))
}

pub fn write_model<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model<f32>> {
    decode_model(&fs::read(path)?)
}
