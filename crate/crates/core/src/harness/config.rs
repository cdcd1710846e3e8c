//! Line-oriented `key=value` config with `[section]` headers. Keys are
//! addressed as `section.key`; every key has a built-in default and unknown
//! keys are rejected so typos surface early.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// `(key, default, description)` for every recognized key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run.seed", "0", "seed for initialization, shuffling and subsetting"),
    ("run.out", "out", "output directory"),
    ("run.overwrite", "false", "allow a non-empty output directory"),
    ("run.stages", "baseline,semisup", "any of baseline, semisup, text, contextual"),
    ("data.train", "", "labeled training manifest"),
    ("data.val", "", "validation manifest"),
    ("data.eval", "", "evaluation manifest (never trained on)"),
    ("data.pretrain", "", "comma-separated manifests for pseudo-label pretraining"),
    ("data.text_corpus", "", "binary text corpus for the built-in labeler"),
    ("data.pseudo_labels", "", "external id,label,confidence CSV"),
    ("data.train_embeddings", "", "SFE1 contextual embeddings for train"),
    ("data.val_embeddings", "", "SFE1 contextual embeddings for val"),
    ("data.eval_embeddings", "", "SFE1 contextual embeddings for eval"),
    ("model.fc_dim", "64", "FC layer width"),
    ("model.blstm_hidden", "64", "BLSTM hidden size per direction"),
    ("model.attention_dim", "32", "attention projection width"),
    ("labeler.source", "builtin", "builtin or external"),
    ("labeler.tokens", "gt", "transcript used for pseudo labels: gt or asr"),
    ("labeler.epochs", "10", "labeler SGD epochs"),
    ("labeler.lr", "0.1", "labeler learning rate"),
    ("labeler.l2", "0.0001", "labeler L2 penalty"),
    ("baseline.epochs", "60", ""),
    ("baseline.lr", "0.02", ""),
    ("baseline.lr_decay", "0.5", ""),
    ("baseline.lr_patience", "3", ""),
    ("baseline.early_stop_patience", "10", ""),
    ("baseline.clip", "5", ""),
    ("baseline.class_weights", "uniform", "uniform, inverse_frequency or comma-separated values"),
    ("baseline.budget", "1", "fraction of training hours used"),
    ("pretrain.epochs", "2", ""),
    ("pretrain.lr", "0.02", ""),
    ("pretrain.lr_decay", "0.5", ""),
    ("pretrain.lr_patience", "3", ""),
    ("pretrain.early_stop_patience", "10", ""),
    ("pretrain.clip", "5", ""),
    ("finetune.epochs", "60", ""),
    ("finetune.lr", "0.02", ""),
    ("finetune.lr_decay", "0.5", ""),
    ("finetune.lr_patience", "3", ""),
    ("finetune.early_stop_patience", "10", ""),
    ("finetune.clip", "5", ""),
    ("finetune.class_weights", "uniform", ""),
    ("finetune.budget", "1", "fraction of training hours used"),
    ("text.tokens", "gt", "transcript for the 2-step models: gt or asr"),
    ("text.embedding_dim", "200", ""),
    ("text.blstm_hidden", "128", ""),
    ("text.blstm_layers", "2", ""),
    ("text.attention_dim", "32", ""),
    ("text.epochs", "30", ""),
    ("text.lr", "0.05", ""),
    ("text.class_weights", "inverse_frequency", ""),
    ("contextual.blstm_hidden", "128", ""),
    ("contextual.blstm_layers", "3", ""),
    ("contextual.attention_dim", "32", ""),
    ("contextual.epochs", "30", ""),
    ("contextual.lr", "0.05", ""),
    ("contextual.class_weights", "uniform", ""),
    ("sweep.budgets", "0.05,0.1,0.2,0.3,0.4,0.5,0.75,1", "strictly increasing fractions of training hours"),
    ("synth.n_train", "2000", ""),
    ("synth.n_val", "400", ""),
    ("synth.n_eval", "400", ""),
    ("synth.n_unlabeled", "6000", ""),
    ("synth.n_text", "2000", ""),
    ("synth.feature_dim", "16", ""),
    ("synth.frames_min", "20", ""),
    ("synth.frames_max", "60", ""),
    ("synth.separation", "1", ""),
    ("synth.token_noise", "0.15", ""),
    ("synth.asr_noise", "0.1", ""),
    ("synth.annotator_noise", "0.1", ""),
    ("synth.embedding_dim", "16", ""),
    ("synth.speaker_std", "0.5", ""),
    ("synth.salience", "1", ""),
];

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    base: PathBuf,
}

impl Config {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let err = |msg: String| Error::parse(origin, i + 1, msg);
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(format!("unterminated section `{line}`")))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            if default_of(&key).is_none() {
                return Err(err(format!("unknown key `{key}`")));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(err(format!("key `{key}` set twice")));
            }
        }
        Ok(Config { values, base: origin.parent().map(Path::to_path_buf).unwrap_or_default() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if default_of(key).is_none() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some(v) => v,
            None => default_of(key).unwrap_or_else(|| panic!("key `{key}` missing from KEYS")),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("cannot parse `{key}` = `{raw}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Config(format!("cannot parse `{key}` item `{s}`"))))
            .collect()
    }

    /// Empty values mean "not set".
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| self.base.join(raw))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::Config(format!("`{key}` must be set")))
    }

    pub fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.list::<String>(key)
            .unwrap_or_default()
            .into_iter()
            .map(|p| self.base.join(p))
            .collect()
    }

    /// Effective values of every key, as a config file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, _, _) in KEYS {
            let (section, name) = key.split_once('.').expect("dotted key");
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{name} = {}", self.raw(key));
        }
        out
    }
}

/// Pulls `--section.key value` and `--section.key=value` overrides out of an
/// argument list, returning the remaining arguments.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !name.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| Error::Config(format!("flag `--{name}` needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_defaults_and_paths() {
        let c = Config::parse("# c\n[run]\nseed = 7\n[data]\ntrain = a/train.jsonl\n", Path::new("/x/exp.conf")).unwrap();
        assert_eq!(c.get::<u64>("run.seed").unwrap(), 7);
        assert_eq!(c.get::<usize>("baseline.epochs").unwrap(), 60);
        assert_eq!(c.path("data.train"), Some(PathBuf::from("/x/a/train.jsonl")));
        assert_eq!(c.path("data.val"), None);
        assert_eq!(c.list::<f64>("sweep.budgets").unwrap().len(), 8);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let e = Config::parse("[run]\nsed = 1\n", Path::new("c")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(Config::parse("[run]\nseed=1\nseed=2\n", Path::new("c")).is_err());
        assert!(Config::parse("[run\n", Path::new("c")).is_err());
        assert!(Config::default().clone().set("nope.x", "1").is_err());
    }

    #[test]
    fn overrides_split_from_args() {
        let args = ["run", "--baseline.lr", "0.1", "--seed", "3", "--pretrain.epochs=2"].map(String::from).to_vec();
        let (rest, ov) = split_overrides(args).unwrap();
        assert_eq!(rest, ["run", "--seed", "3"].map(String::from).to_vec());
        assert_eq!(
            ov,
            vec![("baseline.lr".to_string(), "0.1".to_string()), ("pretrain.epochs".to_string(), "2".to_string())]
        );
        assert!(split_overrides(vec!["--baseline.lr".into()]).is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut c = Config::default();
        c.set("model.fc_dim", "8").unwrap();
        let again = Config::parse(&c.render(), Path::new("r.conf")).unwrap();
        assert_eq!(again.raw("model.fc_dim"), "8");
        assert_eq!(again.raw("sweep.budgets"), c.raw("sweep.budgets"));
    }
}
