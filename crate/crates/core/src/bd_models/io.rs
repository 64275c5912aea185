//! Model definition files: `key=value` lines, `#` comments.
//!
//! ```text
//! kind=logistic
//! b=2
//! d=1
//! e=1
//! A=20
//! N=200
//! ```
//!
//! `kind=sis` takes `lambda`, `mu`, `N`; `kind=custom` takes comma-separated
//! `bvec` and `dvec`. Logistic models are hard-truncated at `N` unless
//! `truncation=certified` is given.

use std::collections::BTreeMap;

use super::{make_logistic, make_sis, BirthDeathModel, LogisticParams, ModelError, SisParams, Truncation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Logistic(LogisticParams),
    Sis(SisParams),
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub model: BirthDeathModel,
}

fn parse_err(line: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Parse {
        line,
        msg: msg.into(),
    }
}

struct Fields {
    map: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn raw(&self, key: &str) -> Result<(usize, &str), ModelError> {
        self.map
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| parse_err(0, format!("missing key `{key}`")))
    }

    fn real(&self, key: &str) -> Result<f64, ModelError> {
        let (line, v) = self.raw(key)?;
        v.parse()
            .map_err(|_| parse_err(line, format!("invalid number `{v}` for `{key}`")))
    }

    fn count(&self, key: &str) -> Result<usize, ModelError> {
        let (line, v) = self.raw(key)?;
        v.parse()
            .map_err(|_| parse_err(line, format!("invalid integer `{v}` for `{key}`")))
    }

    fn vector(&self, key: &str) -> Result<Vec<f64>, ModelError> {
        let (line, v) = self.raw(key)?;
        v.split(',')
            .map(|x| {
                let x = x.trim();
                x.parse()
                    .map_err(|_| parse_err(line, format!("invalid number `{x}` in `{key}`")))
            })
            .collect()
    }
}

pub fn parse_model(text: &str) -> Result<ModelSpec, ModelError> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("expected `key=value`, got `{line}`")))?;
        let key = key.trim().to_string();
        if map.contains_key(&key) {
            return Err(parse_err(line_no, format!("duplicate key `{key}`")));
        }
        map.insert(key, (line_no, value.trim().to_string()));
    }
    let fields = Fields { map };
    let (kind_line, kind) = fields.raw("kind")?;
    let hard = match fields.map.get("truncation") {
        None => true,
        Some((_, v)) if v == "hard" => true,
        Some((_, v)) if v == "certified" => false,
        Some((l, v)) => return Err(parse_err(*l, format!("unknown truncation `{v}`"))),
    };
    match kind {
        "logistic" => {
            let p = LogisticParams {
                b: fields.real("b")?,
                d: fields.real("d")?,
                e: fields.real("e")?,
                area: fields.real("A")?,
                n: fields.count("N")?,
                hard_truncation: hard,
            };
            Ok(ModelSpec {
                kind: ModelKind::Logistic(p),
                model: make_logistic(&p)?,
            })
        }
        "sis" => {
            let p = SisParams {
                lambda: fields.real("lambda")?,
                mu: fields.real("mu")?,
                n: fields.count("N")?,
            };
            Ok(ModelSpec {
                kind: ModelKind::Sis(p),
                model: make_sis(&p)?,
            })
        }
        "custom" => {
            let b = fields.vector("bvec")?;
            let d = fields.vector("dvec")?;
            Ok(ModelSpec {
                kind: ModelKind::Custom,
                model: BirthDeathModel::new(b, d, Truncation::ExactFinite)?,
            })
        }
        other => Err(parse_err(kind_line, format!("unknown kind `{other}`"))),
    }
}
