//! Model file: `SFM1`, u64 LE header length, UTF-8 `key=value` header lines,
//! then every parameter as little-endian f64 in declared layer order.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{build_classifier, ClassifierConfig, SentimentClassifier, StageTag};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFM1";
const FORMAT_VERSION: &str = "1";

fn escape(value: &str) -> String {
    value.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl SentimentClassifier {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut header = String::new();
        let mut line = |k: &str, v: &str| {
            header.push_str(k);
            header.push('=');
            header.push_str(v);
            header.push('\n');
        };
        line("format_version", FORMAT_VERSION);
        line("front", c.front.as_str());
        line("input_dim", &c.input_dim.to_string());
        line("fc_dim", &c.fc_dim.to_string());
        line("blstm_hidden", &c.blstm_hidden.to_string());
        line("blstm_layers", &c.blstm_layers.to_string());
        line("attention_dim", &c.attention_dim.to_string());
        line("num_classes", &c.num_classes.to_string());
        line("seed", &c.seed.to_string());
        line("stage", self.stage.as_str());
        for (i, p) in self.params().iter().enumerate() {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            line(&format!("param.{i}"), &format!("{}:{}", p.name, dims.join("x")));
        }
        for (k, v) in &self.meta {
            line(&format!("meta.{k}"), &escape(v));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for p in self.params() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<SentimentClassifier> {
        let corrupt = |reason: &str| Error::corrupt(origin, reason);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing SFM1 magic"));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header = std::str::from_utf8(&bytes[12..header_end])
            .map_err(|_| corrupt("header is not UTF-8"))?;

        let mut fields = std::collections::BTreeMap::new();
        let mut meta = std::collections::BTreeMap::new();
        let mut declared = Vec::new();
        for l in header.lines() {
            let (k, v) = l.split_once('=').ok_or_else(|| corrupt("header line without `=`"))?;
            if let Some(key) = k.strip_prefix("meta.") {
                meta.insert(key.to_string(), unescape(v));
            } else if k.starts_with("param.") {
                declared.push(v.to_string());
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| Error::corrupt(origin, format!("missing header key `{k}`")))
        };
        let version = get("format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                path: origin.to_path_buf(),
                found: version,
                expected: FORMAT_VERSION.into(),
            });
        }
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse::<u64>()
                .map_err(|_| Error::corrupt(origin, format!("header key `{k}` is not an integer")))
        };
        let config = ClassifierConfig {
            front: get("front")?.parse()?,
            input_dim: num("input_dim")? as usize,
            fc_dim: num("fc_dim")? as usize,
            blstm_hidden: num("blstm_hidden")? as usize,
            blstm_layers: num("blstm_layers")? as usize,
            attention_dim: num("attention_dim")? as usize,
            num_classes: num("num_classes")? as usize,
            seed: num("seed")?,
        };
        let stage: StageTag = get("stage")?.parse()?;

        let mut model = build_classifier(config)?;
        model.stage = stage;
        model.meta = meta;
        {
            let params = model.params_mut();
            if params.len() != declared.len() {
                return Err(Error::Dimension(format!(
                    "file declares {} parameters, config implies {}",
                    declared.len(),
                    params.len()
                )));
            }
            for (p, decl) in params.iter().zip(&declared) {
                let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
                let expected = format!("{}:{}", p.name, dims.join("x"));
                if &expected != decl {
                    return Err(Error::Dimension(format!(
                        "parameter `{decl}` does not match config-implied `{expected}`"
                    )));
                }
            }
        }
        let total: usize = model.params().iter().map(|p| p.value.len()).sum();
        let body = &bytes[header_end..];
        if body.len() != total * 8 {
            return Err(corrupt(&format!(
                "expected {} parameter bytes, found {}",
                total * 8,
                body.len()
            )));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for p in model.params_mut() {
            for v in p.value.data_mut() {
                *v = values.next().expect("length checked");
            }
        }
        Ok(model)
    }
}

pub fn save_model(model: &SentimentClassifier, path: &Path) -> Result<()> {
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_model(path: &Path) -> Result<SentimentClassifier> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    SentimentClassifier::from_bytes(&bytes, path)
}
